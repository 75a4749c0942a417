// Riemann-sphere utilities shared by all modules.
#pragma once

#include <cmath>
#include <complex>
#include <limits>
#include <optional>
#include <vector>

namespace natlas {

using Cx = std::complex<double>;

constexpr double kPi = 3.14159265358979323846;

// A point on the Riemann sphere: finite value or the point at infinity.
struct SpherePoint {
    Cx z{0.0, 0.0};
    bool at_inf = false;

    static SpherePoint infinity() { return SpherePoint{Cx{0, 0}, true}; }
    static SpherePoint finite(Cx v) { return SpherePoint{v, false}; }
};

// Chordal metric on the sphere, normalized so that diam = 2.
inline double chordal(Cx a, Cx b) {
    return 2.0 * std::abs(a - b) /
           (std::sqrt(1.0 + std::norm(a)) * std::sqrt(1.0 + std::norm(b)));
}

inline double chordal_to_inf(Cx a) { return 2.0 / std::sqrt(1.0 + std::norm(a)); }

inline double chordal(const SpherePoint& a, const SpherePoint& b) {
    if (a.at_inf && b.at_inf) return 0.0;
    if (a.at_inf) return chordal_to_inf(b.z);
    if (b.at_inf) return chordal_to_inf(a.z);
    return chordal(a.z, b.z);
}

// Wrap an angle into [0, 2*pi).
inline double wrap_angle(double t) {
    t = std::fmod(t, 2.0 * kPi);
    if (t < 0) t += 2.0 * kPi;
    return t;
}

inline bool close(Cx a, Cx b, double tol) { return std::abs(a - b) <= tol; }

}  // namespace natlas
