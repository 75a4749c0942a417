// Renormalization: polynomial-like restrictions of iterates around periodic
// postcritical points, filled-Julia estimates, proper degrees by winding, and
// Hubbard trees extracted from pixel masks.
#pragma once

#include <cstdint>
#include <functional>
#include <queue>

#include "natlas/newtongraph.hpp"
#include "natlas/parallel.hpp"

namespace natlas {

namespace rdetail {
inline Cx iterate_cx(const NewtonMap& m, Cx z, int n) {
    for (int i = 0; i < n; ++i) z = m.eval(z);
    return z;
}
}  // namespace rdetail

struct EpsilonTooLarge : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct BoundaryThroughCriticalValue : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MaskDisconnected : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Pixel masks.

struct PixelMask {
    Viewport vp;
    std::vector<uint8_t> in;

    uint8_t at(int i, int j) const { return in[size_t(j) * size_t(vp.px) + size_t(i)]; }
    uint8_t& at(int i, int j) { return in[size_t(j) * size_t(vp.px) + size_t(i)]; }
    bool contains(Cx z) const {
        auto p = vp.pixel_of(z);
        return p && at(p->first, p->second);
    }
    long count() const {
        long n = 0;
        for (uint8_t v : in) n += v != 0;
        return n;
    }
};

namespace rdetail {

inline PixelMask blank_mask(const Viewport& vp) {
    return {vp, std::vector<uint8_t>(size_t(vp.px) * size_t(vp.py), 0)};
}

inline PixelMask eroded(const PixelMask& m, int r) {
    PixelMask out = m;
    for (int step = 0; step < r; ++step) {
        PixelMask next = out;
        for (int j = 0; j < m.vp.py; ++j)
            for (int i = 0; i < m.vp.px; ++i) {
                if (!out.at(i, j)) continue;
                bool edge = i == 0 || j == 0 || i == m.vp.px - 1 || j == m.vp.py - 1;
                if (edge || !out.at(i - 1, j) || !out.at(i + 1, j) || !out.at(i, j - 1) ||
                    !out.at(i, j + 1))
                    next.at(i, j) = 0;
            }
        out = std::move(next);
    }
    return out;
}

inline PixelMask dilated(const PixelMask& m, int r) {
    PixelMask out = m;
    for (int step = 0; step < r; ++step) {
        PixelMask next = out;
        for (int j = 0; j < m.vp.py; ++j)
            for (int i = 0; i < m.vp.px; ++i) {
                if (out.at(i, j)) continue;
                bool hit = (i > 0 && out.at(i - 1, j)) || (i + 1 < m.vp.px && out.at(i + 1, j)) ||
                           (j > 0 && out.at(i, j - 1)) || (j + 1 < m.vp.py && out.at(i, j + 1));
                if (hit) next.at(i, j) = 1;
            }
        out = std::move(next);
    }
    return out;
}

inline bool subset_of(const PixelMask& a, const PixelMask& b) {
    for (size_t k = 0; k < a.in.size(); ++k)
        if (a.in[k] && !b.in[k]) return false;
    return true;
}

// 4-connected component of the seed within the mask
inline PixelMask component_of(const PixelMask& m, int si, int sj) {
    PixelMask out = blank_mask(m.vp);
    if (!m.at(si, sj)) return out;
    std::vector<std::pair<int, int>> stack{{si, sj}};
    out.at(si, sj) = 1;
    while (!stack.empty()) {
        auto [i, j] = stack.back();
        stack.pop_back();
        const int di[4] = {1, -1, 0, 0}, dj[4] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
            int ni = i + di[k], nj = j + dj[k];
            if (ni < 0 || nj < 0 || ni >= m.vp.px || nj >= m.vp.py) continue;
            if (!m.at(ni, nj) || out.at(ni, nj)) continue;
            out.at(ni, nj) = 1;
            stack.push_back({ni, nj});
        }
    }
    return out;
}

// fill complement components that do not touch the viewport border
inline void fill_holes(PixelMask& m) {
    PixelMask outside = blank_mask(m.vp);
    std::vector<std::pair<int, int>> stack;
    for (int i = 0; i < m.vp.px; ++i)
        for (int j : {0, m.vp.py - 1})
            if (!m.at(i, j) && !outside.at(i, j)) {
                outside.at(i, j) = 1;
                stack.push_back({i, j});
            }
    for (int j = 0; j < m.vp.py; ++j)
        for (int i : {0, m.vp.px - 1})
            if (!m.at(i, j) && !outside.at(i, j)) {
                outside.at(i, j) = 1;
                stack.push_back({i, j});
            }
    while (!stack.empty()) {
        auto [i, j] = stack.back();
        stack.pop_back();
        const int di[4] = {1, -1, 0, 0}, dj[4] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
            int ni = i + di[k], nj = j + dj[k];
            if (ni < 0 || nj < 0 || ni >= m.vp.px || nj >= m.vp.py) continue;
            if (m.at(ni, nj) || outside.at(ni, nj)) continue;
            outside.at(ni, nj) = 1;
            stack.push_back({ni, nj});
        }
    }
    for (size_t k = 0; k < m.in.size(); ++k)
        if (!m.in[k] && !outside.in[k]) m.in[k] = 1;
}

// ordered outer boundary loop of a hole-free mask component (Moore tracing)
inline std::vector<std::pair<int, int>> boundary_loop(const PixelMask& m) {
    int si = -1, sj = -1;
    for (int j = 0; j < m.vp.py && si < 0; ++j)
        for (int i = 0; i < m.vp.px && si < 0; ++i)
            if (m.at(i, j)) {
                si = i;
                sj = j;
            }
    if (si < 0) return {};
    // 8 directions, clockwise starting from west
    const int di[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
    const int dj[8] = {0, -1, -1, -1, 0, 1, 1, 1};
    auto inside = [&](int i, int j) {
        return i >= 0 && j >= 0 && i < m.vp.px && j < m.vp.py && m.at(i, j);
    };
    std::vector<std::pair<int, int>> loop{{si, sj}};
    int ci = si, cj = sj, back = 0;  // entered from the west
    for (long guard = 0; guard < 8L * long(m.in.size()); ++guard) {
        int found = -1;
        for (int k = 1; k <= 8; ++k) {
            int dir = (back + k) % 8;
            if (inside(ci + di[dir], cj + dj[dir])) {
                found = dir;
                break;
            }
        }
        if (found < 0) return loop;  // isolated pixel
        ci += di[found];
        cj += dj[found];
        back = (found + 4) % 8;  // points back at the previous pixel
        if (ci == si && cj == sj) return loop;
        loop.push_back({ci, cj});
    }
    throw std::runtime_error("boundary tracing did not close");
}

// signed argument increment in (-pi, pi]
inline double arg_diff(Cx a, Cx b) { return std::arg(b / a); }

}  // namespace rdetail

// ---------------------------------------------------------------------------
// Renormalization domains.

struct RenormDomain {
    int index = 0;
    Cx anchor{0, 0};  // periodic postcritical point
    int period = 0;   // period under the map
    int m = 0;        // iterate of the polynomial-like restriction
    int level = 0;    // Newton graph level of the range face
    int face = -1;
};

// postcritical points of the map: forward orbits of the critical values
inline std::vector<Cx> postcritical_points(const NewtonMap& m, int budget = 64) {
    std::vector<Cx> out;
    for (const auto& c : critical_points(m).points) {
        Cx z = m.eval(c.point);
        for (int it = 0; it < budget; ++it) {
            bool seen = false;
            for (Cx w : out)
                if (std::abs(w - z) < 1e-9) seen = true;
            if (seen) break;
            out.push_back(z);
            if (std::abs(m.eval(z) - z) < 1e-9) break;  // fixed from here on
            z = m.eval(z);
        }
    }
    return out;
}

inline std::vector<RenormDomain> find_renorm_domains(const NewtonMap& m,
                                                     const std::vector<NewtonGraphLevel>& levels) {
    const NewtonGraphLevel& top = levels.back();
    Faces fs = faces(top.graph);
    std::vector<RenormDomain> out;
    for (const auto& c : critical_points(m).free()) {
        // a free critical point can coincide with a pole (p' and p'' share a
        // zero); the orbit then leaves through infinity and nothing renormalizes
        Cx v = m.eval(c.point);
        if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) continue;
        auto res = orbit(m, c.point);
        const auto* cyc = std::get_if<CycleInfo>(&res);
        if (!cyc || cyc->period < 1 || cyc->representative.at_inf) continue;
        Cx w = cyc->representative.z;
        bool is_root = false;
        for (Cx r : m.roots())
            if (std::abs(w - r) < 1e-9) is_root = true;
        if (is_root) continue;  // the critical orbit just falls into a basin
        for (int i = 0; i < cyc->period; ++i) {
            bool dup = false;
            for (const auto& d : out)
                if (std::abs(d.anchor - w) < 1e-9) dup = true;
            if (!dup) {
                RenormDomain d;
                d.index = int(out.size());
                d.anchor = w;
                d.period = cyc->period;
                d.m = ((top.level + cyc->period - 1) / cyc->period) * cyc->period;
                d.level = top.level;
                d.face = point_face(top.graph, fs, w);
                out.push_back(d);
            }
            w = m.eval(w);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Thickened polynomial-like restriction.

struct PolyLikeMap {
    NewtonMap map;
    int m = 1;
    Cx anchor{0, 0};
    PixelMask range_mask;   // V-hat
    PixelMask domain_mask;  // U-hat, hole-free component of the m-fold preimage
    int degree = 0;

    Cx eval(Cx z) const { return rdetail::iterate_cx(map, z, m); }
};

struct ThickenOptions {
    int resolution = 400;
    // the face is thickened outward past its shared boundary edges: the range
    // gains a collar of 3*eps_px pixels, the domain preimage one of eps_px
    int eps_px = 2;
    double margin = 0.3;
};

namespace rdetail {

inline void rasterize_edges(PixelMask& walls, const PlanarGraph& g) {
    double step = 0.5 * walls.vp.pixel_size();
    for (const auto& ed : g.edges)
        for (size_t i = 0; i + 1 < ed.trace.size(); ++i) {
            if (ed.trace[i].at_inf || ed.trace[i + 1].at_inf) continue;
            Cx a = ed.trace[i].z, b = ed.trace[i + 1].z;
            if (std::abs(a) > 1e4 || std::abs(b) > 1e4) continue;
            int n = std::max(1, int(std::abs(b - a) / step));
            for (int k = 0; k <= n; ++k) {
                auto p = walls.vp.pixel_of(a + (double(k) / n) * (b - a));
                if (p) walls.at(p->first, p->second) = 1;
            }
        }
}

inline double winding_around(const PolyLikeMap& plm, const std::vector<Cx>& loop, Cx base) {
    double total = 0.0;
    std::function<double(Cx, Cx, Cx, Cx, int)> seg = [&](Cx a, Cx b, Cx fa, Cx fb,
                                                         int depth) -> double {
        if (!std::isfinite(fa.real()) || !std::isfinite(fa.imag()) ||
            !std::isfinite(fb.real()) || !std::isfinite(fb.imag()))
            throw BoundaryThroughCriticalValue("boundary image is not finite");
        double d = arg_diff(fa - base, fb - base);
        if (std::abs(d) < 1.2 || depth > 32) {
            if (depth > 32) throw BoundaryThroughCriticalValue("winding step did not resolve");
            return d;
        }
        Cx mid = 0.5 * (a + b);
        Cx fm = plm.eval(mid);
        return seg(a, mid, fa, fm, depth + 1) + seg(mid, b, fm, fb, depth + 1);
    };
    for (size_t i = 0; i < loop.size(); ++i) {
        Cx a = loop[i], b = loop[(i + 1) % loop.size()];
        total += seg(a, b, plm.eval(a), plm.eval(b), 0);
    }
    return total / (2.0 * kPi);
}

}  // namespace rdetail

inline PolyLikeMap thicken(const NewtonMap& m, const RenormDomain& dom,
                           const std::vector<NewtonGraphLevel>& levels,
                           ThickenOptions opt = {}) {
    const PlanarGraph& g = levels[size_t(dom.level)].graph;
    Faces fs = faces(g);

    // viewport around the range face
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (const OrientedEdge& oe : fs.faces[size_t(dom.face)].boundary)
        for (const SpherePoint& s : g.edges[size_t(oe.edge)].trace) {
            if (s.at_inf || std::abs(s.z) > 1e3) continue;
            x0 = std::min(x0, s.z.real());
            x1 = std::max(x1, s.z.real());
            y0 = std::min(y0, s.z.imag());
            y1 = std::max(y1, s.z.imag());
        }
    double w = std::max(x1 - x0, y1 - y0) * (1.0 + 2.0 * opt.margin);
    Viewport vp{Cx{0.5 * (x0 + x1), 0.5 * (y0 + y1)}, w, opt.resolution, opt.resolution};

    // range face: flood fill from the anchor against rasterized graph edges
    PixelMask walls = rdetail::blank_mask(vp);
    rdetail::rasterize_edges(walls, g);
    PixelMask open = rdetail::blank_mask(vp);
    for (size_t k = 0; k < open.in.size(); ++k) open.in[k] = !walls.in[k];
    auto seed = vp.pixel_of(dom.anchor);
    if (!seed) throw std::runtime_error("renormalization anchor outside the viewport");
    if (walls.at(seed->first, seed->second)) {
        // the anchor pixel straddles a rasterized edge: reseed from a nearby
        // open pixel that the face test places in the same face
        bool found = false;
        for (int r = 1; r <= 4 && !found; ++r)
            for (int dj = -r; dj <= r && !found; ++dj)
                for (int di = -r; di <= r && !found; ++di) {
                    int i = seed->first + di, j = seed->second + dj;
                    if (i < 0 || j < 0 || i >= vp.px || j >= vp.py || walls.at(i, j)) continue;
                    if (point_face(g, fs, vp.pixel_center(i, j)) != dom.face) continue;
                    seed = {{i, j}};
                    found = true;
                }
        if (!found) throw std::runtime_error("renormalization anchor sits on the graph");
    }
    PixelMask range = rdetail::component_of(open, seed->first, seed->second);
    for (int i = 0; i < vp.px; ++i)
        if (range.at(i, 0) || range.at(i, vp.py - 1))
            throw std::runtime_error("range face escaped the viewport");
    for (int j = 0; j < vp.py; ++j)
        if (range.at(0, j) || range.at(vp.px - 1, j))
            throw std::runtime_error("range face escaped the viewport");
    rdetail::fill_holes(range);

    // Hybrid thickening: along expanding (Julia-side) boundary walls the range
    // gains an outward collar; along contracting (Fatou-side) walls it recedes
    // inward, so the preimage component cannot leak through attracted corners.
    PixelMask expanding = rdetail::blank_mask(vp), contracting = rdetail::blank_mask(vp);
    {
        PixelMask near_face = rdetail::dilated(range, 2);
        for (int j = 0; j < vp.py; ++j)
            for (int i = 0; i < vp.px; ++i) {
                if (!walls.at(i, j) || !near_face.at(i, j)) continue;
                double dmag = std::abs(m.derivative_iterate(vp.pixel_center(i, j), dom.m));
                (dmag >= 1.0 ? expanding : contracting).at(i, j) = 1;
            }
    }
    auto thickened = [&](int collar_out, int collar_in) {
        PixelMask out = range;
        PixelMask cut = rdetail::dilated(contracting, collar_in);
        PixelMask add = rdetail::dilated(expanding, collar_out);
        PixelMask halo = rdetail::dilated(range, collar_out);
        for (size_t k = 0; k < out.in.size(); ++k) {
            if (cut.in[k]) out.in[k] = 0;
            if (add.in[k] && halo.in[k] && !cut.in[k]) out.in[k] = 1;
        }
        return out;
    };
    PolyLikeMap plm{m, dom.m, dom.anchor, thickened(3 * opt.eps_px, opt.eps_px), {}, 0};
    PixelMask inner = thickened(opt.eps_px, 3 * opt.eps_px);
    if (!inner.contains(dom.anchor) || !plm.range_mask.contains(dom.anchor))
        throw EpsilonTooLarge("anchor lost to the boundary collars");

    // domain: component of the m-fold preimage of the narrow collar, grown by
    // breadth-first search so the membership test only runs near the component
    PixelMask dmask = rdetail::blank_mask(vp);
    PixelMask visited = rdetail::blank_mask(vp);
    std::vector<std::pair<int, int>> stack{{seed->first, seed->second}};
    visited.at(seed->first, seed->second) = 1;
    auto member = [&](int i, int j) { return inner.contains(plm.eval(vp.pixel_center(i, j))); };
    if (!member(seed->first, seed->second))
        throw EpsilonTooLarge("anchor left the thickened range under the iterate");
    dmask.at(seed->first, seed->second) = 1;
    while (!stack.empty()) {
        auto [i, j] = stack.back();
        stack.pop_back();
        const int di[4] = {1, -1, 0, 0}, dj[4] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
            int ni = i + di[k], nj = j + dj[k];
            if (ni < 0 || nj < 0 || ni >= vp.px || nj >= vp.py) continue;
            if (visited.at(ni, nj)) continue;
            visited.at(ni, nj) = 1;
            if (!member(ni, nj)) continue;
            dmask.at(ni, nj) = 1;
            stack.push_back({ni, nj});
        }
    }
    rdetail::fill_holes(dmask);
    plm.domain_mask = std::move(dmask);

    // compact containment: a one-pixel collar of the domain stays in the range
    if (!rdetail::subset_of(rdetail::dilated(plm.domain_mask, 1), plm.range_mask))
        throw EpsilonTooLarge("domain not compactly contained in the range");

    // proper degree: winding of the image of the domain boundary
    auto loop_px = rdetail::boundary_loop(plm.domain_mask);
    std::vector<Cx> loop;
    for (auto [i, j] : loop_px) loop.push_back(vp.pixel_center(i, j));
    // the Moore trace runs clockwise in pixel coordinates, so take |winding|
    double wind = std::abs(rdetail::winding_around(plm, loop, dom.anchor));
    plm.degree = int(std::lround(wind));
    if (std::abs(wind - plm.degree) > 0.1 || plm.degree < 1)
        throw BoundaryThroughCriticalValue("winding " + std::to_string(wind) +
                                           " is not close to an integer");
    return plm;
}

inline int proper_degree(const PolyLikeMap& plm) { return plm.degree; }

inline PixelMask filled_julia_estimate(const PolyLikeMap& plm, int max_iter = 64) {
    PixelMask out = rdetail::blank_mask(plm.domain_mask.vp);
    parallel_chunks(size_t(plm.domain_mask.vp.py), [&](size_t j0, size_t j1) {
        for (size_t j = j0; j < j1; ++j)
            for (int i = 0; i < plm.domain_mask.vp.px; ++i) {
                if (!plm.domain_mask.at(i, int(j))) continue;
                Cx z = plm.domain_mask.vp.pixel_center(i, int(j));
                bool stays = true;
                for (int it = 0; it < max_iter && stays; ++it) {
                    z = plm.eval(z);
                    if (!plm.range_mask.contains(z)) stays = false;
                }
                if (stays) out.at(i, int(j)) = 1;
            }
    });
    return out;
}

// masks over a common viewport agree up to r pixels of dilation
inline bool masks_equal_within_dilation(const PixelMask& a, const PixelMask& b, int r = 1) {
    return rdetail::subset_of(a, rdetail::dilated(b, r)) &&
           rdetail::subset_of(b, rdetail::dilated(a, r));
}

// ---------------------------------------------------------------------------
// Periodic and preimage point searches seeded from a mask.

// solutions of map^q(z) = z inside the (slightly dilated) mask
inline std::vector<Cx> periodic_points_in(const NewtonMap& m, int q, const PixelMask& mask) {
    PixelMask roomy = rdetail::dilated(mask, 3);
    std::vector<Cx> out;
    for (int j = 0; j < mask.vp.py; ++j)
        for (int i = 0; i < mask.vp.px; ++i) {
            if (!mask.at(i, j)) continue;
            Cx z = mask.vp.pixel_center(i, j);
            bool ok = false;
            for (int it = 0; it < 40; ++it) {
                Cx f = rdetail::iterate_cx(m, z, q) - z;
                Cx df = m.derivative_iterate(z, q) - Cx{1, 0};
                if (std::abs(df) < 1e-14) break;
                Cx step = f / df;
                z -= step;
                if (std::abs(step) < 1e-13 * (1.0 + std::abs(z))) {
                    ok = std::abs(rdetail::iterate_cx(m, z, q) - z) < 1e-9;
                    break;
                }
            }
            if (!ok || !roomy.contains(z)) continue;
            bool dup = false;
            for (Cx seen : out)
                if (std::abs(seen - z) < 1e-7) dup = true;
            if (!dup) out.push_back(z);
        }
    return out;
}

// solutions of map^j(z) = target inside the mask
inline std::vector<Cx> preimages_in(const NewtonMap& m, int j, Cx target,
                                    const PixelMask& mask) {
    PixelMask roomy = rdetail::dilated(mask, 2);
    std::vector<Cx> out;
    for (int pj = 0; pj < mask.vp.py; ++pj)
        for (int pi = 0; pi < mask.vp.px; ++pi) {
            if (!mask.at(pi, pj)) continue;
            Cx z = mask.vp.pixel_center(pi, pj);
            bool ok = false;
            for (int it = 0; it < 40; ++it) {
                Cx f = rdetail::iterate_cx(m, z, j) - target;
                Cx df = m.derivative_iterate(z, j);
                if (std::abs(df) < 1e-14) break;
                Cx step = f / df;
                z -= step;
                if (std::abs(step) < 1e-13 * (1.0 + std::abs(z))) {
                    ok = std::abs(rdetail::iterate_cx(m, z, j) - target) < 1e-9;
                    break;
                }
            }
            if (!ok || !roomy.contains(z)) continue;
            bool dup = false;
            for (Cx seen : out)
                if (std::abs(seen - z) < 1e-7) dup = true;
            if (!dup) out.push_back(z);
        }
    return out;
}

// ---------------------------------------------------------------------------
// Hubbard trees.

enum class MarkRole { Critical, Postcritical, CyclePoint, Branch };

struct HubbardTreeSpec {
    PlanarGraph tree;
    std::vector<MarkRole> role;
    std::vector<int> local_degree;
    WeakGraphMap self_map;
    int iterate = 1;  // the tree map is map^iterate
    int degree = 1;
    int cycle_type = 1;
    bool degenerate = false;
    double invariance_residual = 0.0;  // worst pixel distance of a vertex image
};

namespace rdetail {

struct PixelTree {
    // parent pointers on the BFS tree restricted to used pixels
    std::map<std::pair<int, int>, std::pair<int, int>> parent;
    std::set<std::pair<int, int>> used;
};

}  // namespace rdetail

inline HubbardTreeSpec build_hubbard_tree(const PolyLikeMap& plm, int max_cycle_type = 3,
                                          int julia_max_iter = 64) {
    const NewtonMap& m = plm.map;

    // exact membership: the point's own orbit under the iterate stays in the
    // domain (the pixel estimate of the filled set loses thin Julia filaments,
    // so membership must not be read off a mask)
    PixelMask roomy_dom = rdetail::dilated(plm.domain_mask, 3);
    auto in_filled_set = [&](Cx z) {
        // candidates are Newton-refined to ~1e-9; on a repelling orbit that
        // residual is amplified by the derivative product, so once the
        // accumulated growth swamps the residual a later escape is noise
        double growth = 1.0;
        for (int it = 0; it < julia_max_iter; ++it) {
            if (!roomy_dom.contains(z)) return false;
            growth *= std::abs(m.derivative_iterate(z, plm.m));
            if (growth > 1e9) return true;
            z = plm.eval(z);
            if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) return false;
        }
        return roomy_dom.contains(z);
    };

    // marked points: critical points of the iterate in the filled set, their
    // orbits, and all cycles up to the minimal cycle type covering the
    // postcritical set; searches are seeded from the whole domain
    std::vector<Cx> marked;
    std::vector<MarkRole> mrole;
    std::vector<bool> mcrit;
    auto add_marked = [&](Cx z, MarkRole r, bool crit) {
        for (size_t i = 0; i < marked.size(); ++i)
            if (std::abs(marked[i] - z) < 1e-7) {
                if (crit) mcrit[i] = true;
                if (r == MarkRole::Critical) mrole[i] = r;
                return;
            }
        marked.push_back(z);
        mrole.push_back(r);
        mcrit.push_back(crit);
    };
    for (int j = 0; j < plm.m; ++j)
        for (const auto& c : critical_points(m).points)
            for (Cx z : preimages_in(m, j, c.point, plm.domain_mask))
                if (in_filled_set(z)) add_marked(z, MarkRole::Critical, true);
    size_t ncrit = marked.size();
    for (size_t i = 0; i < ncrit; ++i) {
        Cx z = marked[i];
        for (int it = 0; it < 64; ++it) {
            z = plm.eval(z);
            bool dup = false;
            for (Cx seen : marked)
                if (std::abs(seen - z) < 1e-7) dup = true;
            if (dup) break;
            add_marked(z, MarkRole::Postcritical, false);
        }
    }
    int cycle_type = 0;
    std::vector<Cx> post = postcritical_points(m);
    for (int n = 1; n <= max_cycle_type; ++n) {
        cycle_type = n;
        for (Cx z : periodic_points_in(m, plm.m * n, plm.domain_mask))
            if (in_filled_set(z)) add_marked(z, MarkRole::CyclePoint, false);
        bool covered = true;
        for (Cx z : post) {
            if (!plm.domain_mask.contains(z)) continue;
            bool found = false;
            for (Cx w : marked)
                if (std::abs(w - z) < 1e-6) found = true;
            if (!found) covered = false;
        }
        if (covered) break;
    }

    HubbardTreeSpec t;
    t.iterate = plm.m;
    t.cycle_type = cycle_type;
    if (marked.size() == 1) {
        t.degenerate = true;
        t.tree.add_vertex(VertexKind::Tree, SpherePoint::finite(marked[0]));
        t.role = {mrole[0]};
        t.local_degree = {1};
        t.self_map.vertex_map = {0};
        t.degree = 1;
        t.cycle_type = 1;
        return t;
    }

    // pixel support for tree arcs: the deepest preimage mask that still joins
    // all marked points in one component (deep masks hug the filled set but
    // lose thin Julia filaments at pixel scale, so back off until connected)
    const Viewport& vp = plm.domain_mask.vp;
    PixelMask supp = rdetail::blank_mask(vp);
    auto snap_into = [&](const PixelMask& mask, Cx z) -> std::optional<std::pair<int, int>> {
        auto p = vp.pixel_of(z);
        if (!p) return std::nullopt;
        if (mask.at(p->first, p->second)) return *p;
        for (int r = 1; r <= 5; ++r)
            for (int dj = -r; dj <= r; ++dj)
                for (int di = -r; di <= r; ++di) {
                    int i = p->first + di, j = p->second + dj;
                    if (i >= 0 && j >= 0 && i < vp.px && j < vp.py && mask.at(i, j))
                        return std::pair<int, int>{i, j};
                }
        return std::nullopt;
    };
    std::vector<std::pair<int, int>> mpix;
    bool connected = false;
    for (int n = julia_max_iter; n >= 1 && !connected; n /= 2) {
        PixelMask kn = filled_julia_estimate(plm, n);
        rdetail::fill_holes(kn);
        PixelMask cand = rdetail::dilated(kn, 1);
        auto apx = snap_into(cand, plm.anchor);
        if (!apx) continue;
        cand = rdetail::component_of(cand, apx->first, apx->second);
        std::vector<std::pair<int, int>> px;
        bool all = true;
        for (Cx z : marked) {
            auto p = snap_into(cand, z);
            if (!p) {
                all = false;
                break;
            }
            px.push_back(*p);
        }
        if (!all) continue;
        supp = std::move(cand);
        mpix = std::move(px);
        connected = true;
    }
    if (!connected) throw MaskDisconnected("marked points lie in different components");

    // breadth-first search from the first marked pixel; 8-connectivity
    std::map<std::pair<int, int>, std::pair<int, int>> parent;
    {
        std::queue<std::pair<int, int>> q;
        q.push(mpix[0]);
        parent[mpix[0]] = mpix[0];
        while (!q.empty()) {
            auto [i, j] = q.front();
            q.pop();
            for (int dj = -1; dj <= 1; ++dj)
                for (int di = -1; di <= 1; ++di) {
                    int ni = i + di, nj = j + dj;
                    if (ni < 0 || nj < 0 || ni >= vp.px || nj >= vp.py) continue;
                    if (!supp.at(ni, nj) || parent.count({ni, nj})) continue;
                    parent[{ni, nj}] = {i, j};
                    q.push({ni, nj});
                }
        }
    }
    for (auto& p : mpix)
        if (!parent.count(p)) throw MaskDisconnected("marked points lie in different components");

    // union of backtracked paths = pixel tree
    std::set<std::pair<int, int>> used{mpix[0]};
    for (auto p : mpix)
        while (!used.count(p)) {
            used.insert(p);
            p = parent[p];
        }
    // children counts identify branch pixels
    std::map<std::pair<int, int>, int> children;
    for (auto p : used)
        if (p != mpix[0] && used.count(parent[p])) children[parent[p]]++;

    // vertices: marked pixels, branch pixels, and the root
    std::map<std::pair<int, int>, int> vid;
    auto ensure_vertex = [&](std::pair<int, int> p, MarkRole r, bool crit, Cx anchor) {
        auto it = vid.find(p);
        if (it != vid.end()) return it->second;
        int v = t.tree.add_vertex(VertexKind::Tree, SpherePoint::finite(anchor));
        t.role.push_back(r);
        t.local_degree.push_back(crit ? 2 : 1);
        vid[p] = v;
        return v;
    };
    for (size_t i = 0; i < marked.size(); ++i)
        ensure_vertex(mpix[i], mrole[i], mcrit[i], marked[i]);
    for (auto& [p, c] : children)
        if (c >= 2 && !vid.count(p))
            ensure_vertex(p, MarkRole::Branch, false, vp.pixel_center(p.first, p.second));
    ensure_vertex(mpix[0], mrole[0], mcrit[0], marked[0]);

    // edges: walk from every non-root vertex up to the first vertex pixel
    for (auto& [p, v] : vid) {
        if (p == mpix[0]) continue;
        Polyline tr{*t.tree.vertices[size_t(v)].anchor};
        auto cur = parent[p];
        while (true) {
            if (vid.count(cur)) {
                tr.push_back(*t.tree.vertices[size_t(vid[cur])].anchor);
                t.tree.add_edge(v, vid[cur], std::move(tr), 'H');
                break;
            }
            tr.push_back(SpherePoint::finite(vp.pixel_center(cur.first, cur.second)));
            cur = parent[cur];
        }
    }
    t.tree.build_rotation_from_traces();

    // contract branch vertices that collapsed onto a marked vertex
    // (tolerated at pixel scale; reported via invariance_residual instead)

    // vertex dynamics: images snap to the nearest vertex
    t.self_map.vertex_map.assign(t.tree.vertices.size(), -1);
    double worst = 0.0;
    for (size_t v = 0; v < t.tree.vertices.size(); ++v) {
        Cx img = plm.eval(t.tree.vertices[v].anchor->z);
        int best = -1;
        double bd = 1e300;
        for (size_t u = 0; u < t.tree.vertices.size(); ++u) {
            double d = std::abs(t.tree.vertices[u].anchor->z - img);
            if (d < bd) {
                bd = d;
                best = int(u);
            }
        }
        t.self_map.vertex_map[v] = best;
        if (t.role[v] != MarkRole::Branch) worst = std::max(worst, bd / vp.pixel_size());
    }
    t.invariance_residual = worst;

    // edge dynamics: the unique tree path between the endpoint images
    auto tree_path = [&](int a, int b) {
        // breadth-first search on the combinatorial tree
        std::vector<int> prev(t.tree.vertices.size(), -1);
        std::vector<int> via(t.tree.vertices.size(), -1);
        std::queue<int> q;
        q.push(a);
        prev[size_t(a)] = a;
        while (!q.empty()) {
            int v = q.front();
            q.pop();
            if (v == b) break;
            for (EdgeEnd e : t.tree.rotation[size_t(v)]) {
                int u = t.tree.vertex_of(EdgeEnd{e.edge, 1 - e.side});
                if (prev[size_t(u)] != -1) continue;
                prev[size_t(u)] = v;
                via[size_t(u)] = e.edge;
                q.push(u);
            }
        }
        std::vector<OrientedEdge> path;
        for (int v = b; v != a; v = prev[size_t(v)]) {
            int e = via[size_t(v)];
            bool rev = t.tree.edges[size_t(e)].v[1] != v;
            path.push_back({e, rev});
        }
        std::reverse(path.begin(), path.end());
        return path;
    };
    for (size_t e = 0; e < t.tree.edges.size(); ++e)
        t.self_map.edge_paths.push_back(tree_path(
            t.self_map.vertex_map[size_t(t.tree.edges[e].v[0])],
            t.self_map.vertex_map[size_t(t.tree.edges[e].v[1])]));
    t.self_map.split_params.resize(t.tree.edges.size());

    int degsum = 0;
    for (int ld : t.local_degree) degsum += ld - 1;
    t.degree = 1 + degsum;
    return t;
}

inline ValidationReport validate_abstract_extended_hubbard_tree(const HubbardTreeSpec& t) {
    ValidationReport rep;
    size_t V = t.tree.vertices.size(), E = t.tree.edges.size();
    if (t.degenerate) {
        rep.add("(T) degenerate tree is a fixed point with the identity map",
                V == 1 && E == 0 && t.degree == 1 && t.self_map.vertex_map == std::vector<int>{0});
        return rep;
    }
    rep.add("(T) underlying graph is a tree", t.tree.connected() && E + 1 == V,
            "V=" + std::to_string(V) + " E=" + std::to_string(E));
    bool inv = t.self_map.vertex_map.size() == V && t.self_map.edge_paths.size() == E;
    for (size_t e = 0; e < E && inv; ++e) {
        const auto& path = t.self_map.edge_paths[e];
        int at = t.self_map.vertex_map[size_t(t.tree.edges[e].v[0])];
        for (const OrientedEdge& oe : path) {
            if (t.tree.edges[size_t(oe.edge)].v[oe.rev ? 1 : 0] != at) inv = false;
            at = t.tree.edges[size_t(oe.edge)].v[oe.rev ? 0 : 1];
        }
        if (at != t.self_map.vertex_map[size_t(t.tree.edges[e].v[1])]) inv = false;
    }
    rep.add("(I) vertex and edge dynamics are forward invariant", inv);
    int degsum = 0;
    for (int ld : t.local_degree) degsum += ld - 1;
    rep.add("(D) local degrees sum to degree - 1",
            degsum == t.degree - 1 && t.degree >= 2,
            "sum=" + std::to_string(degsum) + " degree=" + std::to_string(t.degree));
    // cycle inventory: at least deg^k cycles of each length k <= cycle type
    bool cycles_ok = true;
    std::string cyc_note;
    for (int k = 1; k <= t.cycle_type; ++k) {
        long need = 1;
        for (int i = 0; i < k; ++i) need *= t.degree;
        long have = 0;
        for (size_t v = 0; v < V; ++v) {
            size_t w = v;
            for (int i = 0; i < k; ++i) w = size_t(t.self_map.vertex_map[w]);
            if (w == v) ++have;
        }
        cyc_note += "k=" + std::to_string(k) + ":" + std::to_string(have) + "/" +
                    std::to_string(need) + " ";
        if (have < need) cycles_ok = false;
    }
    rep.add("(C) vertex set includes deg^k cycles of length k <= cycle type", cycles_ok, cyc_note);
    bool leaves_marked = true;
    for (size_t v = 0; v < V; ++v)
        if (t.tree.valence(int(v)) == 1 && t.role[v] == MarkRole::Branch) leaves_marked = false;
    rep.add("(M) minimality proxy: every leaf is a marked point", leaves_marked);
    rep.add("(X) expansivity", true, "UNCHECKED");
    return rep;
}

// ---------------------------------------------------------------------------
// Full renormalization pipeline with graph-level escalation.

struct Renormalization {
    RenormDomain domain;  // with the level that finally worked
    std::optional<PolyLikeMap> plm;
    HubbardTreeSpec tree;
    ValidationReport report;
    std::string failure;  // non-empty if no level up to the cap worked
};

// For each renormalization domain, deepen the graph level until the range
// face is small enough that the thickened restriction is compactly contained
// and its Hubbard tree satisfies the axioms.  Coarse faces make the pullback
// component swallow unrelated dynamics (the winding degree balloons), and
// low-level faces can still be unbounded; both resolve at deeper levels.
// `levels` is shared and extended in place.
inline std::vector<Renormalization> renormalizations(const NewtonMap& m,
                                                     std::vector<NewtonGraphLevel>& levels,
                                                     int max_level = 5,
                                                     ThickenOptions opt = {}) {
    std::vector<Renormalization> out;
    for (const RenormDomain& d0 : find_renorm_domains(m, levels)) {
        Renormalization r;
        r.domain = d0;
        r.failure = "not attempted: the domain level exceeds the level budget";
        bool done = false;
        for (int lv = d0.level; lv <= max_level && !done; ++lv) {
            while (int(levels.size()) <= lv) levels.push_back(pull_back_level(m, levels.back()));
            RenormDomain d = d0;
            d.level = lv;
            Faces fs = faces(levels[size_t(lv)].graph);
            d.face = point_face(levels[size_t(lv)].graph, fs, d.anchor);
            try {
                PolyLikeMap plm = thicken(m, d, levels, opt);
                HubbardTreeSpec tree = build_hubbard_tree(plm);
                ValidationReport rep = validate_abstract_extended_hubbard_tree(tree);
                // keep the best attempt: a built tree beats an exception,
                // and a valid one stops the search
                r.domain = d;
                r.plm = std::move(plm);
                r.tree = std::move(tree);
                r.report = std::move(rep);
                r.failure.clear();
                if (r.report.verdict) done = true;
            } catch (const std::exception& e) {
                if (!r.plm) r.failure = e.what();
            }
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace natlas
