// Shared root sets used across the test suites.
#pragma once

#include "natlas/newtonmap.hpp"

namespace fixtures {

using natlas::Cx;
using natlas::RootList;

// Cube roots of unity.
inline RootList p3() {
    return {Cx{1, 0}, Cx{-0.5, std::sqrt(3.0) / 2.0}, Cx{-0.5, -std::sqrt(3.0) / 2.0}};
}

// Degree-4 map with two free critical points near +-0.408i, both on
// period-4 orbits.
inline RootList d4a() {
    return {Cx{0.593, 0.130}, Cx{-0.593, -0.130}, Cx{-0.0665, 1.157},
            Cx{0.0665, -1.157}};
}

// Degree-4 map with real free critical points near 0.3740835220 and
// -0.3835508102 on a 2-cycle and a 4-cycle.
inline RootList d4b() {
    return {Cx{1, 0}, Cx{-1, 0}, Cx{-0.0094672882, 0.3728674604},
            Cx{-0.0094672882, -0.3728674604}};
}

}  // namespace fixtures
