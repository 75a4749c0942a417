// Basin classification, bubble (Fatou component) identification, fixed
// internal rays, and the channel diagram as an embedded graph.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <queue>

#include "natlas/newtonmap.hpp"
#include "natlas/parallel.hpp"
#include "natlas/planargraph.hpp"

namespace natlas {

// ---------------------------------------------------------------------------
// Viewport and basin grid.

struct Viewport {
    Cx center{0, 0};
    double width = 4.0;
    int px = 512, py = 512;

    double height() const { return width * py / px; }
    double pixel_size() const { return width / px; }
    Cx pixel_center(int i, int j) const {  // row 0 at the top
        double x = center.real() + ((i + 0.5) / px - 0.5) * width;
        double y = center.imag() + (0.5 - (j + 0.5) / py) * height();
        return {x, y};
    }
    // pixel containing z, or nullopt outside the viewport
    std::optional<std::pair<int, int>> pixel_of(Cx z) const {
        int i = static_cast<int>(std::floor((z.real() - center.real()) / width * px + px / 2.0));
        int j = static_cast<int>(std::floor((center.imag() - z.imag()) / height() * py + py / 2.0));
        if (i < 0 || i >= px || j < 0 || j >= py) return std::nullopt;
        return std::make_pair(i, j);
    }
};

constexpr int16_t kNoBasin = -1;

struct BasinGrid {
    Viewport vp;
    std::vector<int16_t> label;   // root index or kNoBasin
    std::vector<uint16_t> iters;  // iterations to convergence (max_iter if none)
    int16_t at(int i, int j) const { return label[size_t(j) * vp.px + i]; }
};

namespace bdetail {

inline int converge_label(const NewtonMap& m, Cx z, int max_iter, double tol, int* steps) {
    const RootList& roots = m.roots();
    for (int it = 0; it < max_iter; ++it) {
        for (size_t r = 0; r < roots.size(); ++r)
            if (std::abs(z - roots[r]) < tol) {
                if (steps) *steps = it;
                return static_cast<int>(r);
            }
        Cx pv = m.p().eval(z);
        Cx dv = m.dp().eval(z);
        if (!(std::abs(dv) > 0.0)) break;  // exact pole: orbit reaches infinity
        Cx next = z - pv / dv;
        if (!std::isfinite(next.real()) || !std::isfinite(next.imag())) break;
        z = next;
    }
    if (steps) *steps = max_iter;
    return kNoBasin;
}

}  // namespace bdetail

inline BasinGrid render_basins(const NewtonMap& m, const Viewport& vp, int max_iter = 200,
                               double tol = 1e-6) {
    BasinGrid g;
    g.vp = vp;
    g.label.assign(size_t(vp.px) * vp.py, kNoBasin);
    g.iters.assign(size_t(vp.px) * vp.py, 0);
    parallel_chunks(vp.py, [&](int lo, int hi) {
        for (int j = lo; j < hi; ++j)
            for (int i = 0; i < vp.px; ++i) {
                int steps = 0;
                int lab = bdetail::converge_label(m, vp.pixel_center(i, j), max_iter, tol, &steps);
                g.label[size_t(j) * vp.px + i] = static_cast<int16_t>(lab);
                g.iters[size_t(j) * vp.px + i] =
                    static_cast<uint16_t>(std::min(steps, 65535));
            }
    });
    return g;
}

// ---------------------------------------------------------------------------
// Bubbles: connected pixel components of a basin, with dynamical centers.

struct Bubble {
    int id = -1;
    int basin = -1;       // root index
    int generation = -1;  // center reaches the root in exactly this many steps
    Cx center{0, 0};
    long pixel_count = 0;
    std::vector<Cx> boundary;  // sampled boundary pixel centers
};

struct ResolutionTooCoarse : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Pixel component decomposition of the basin-labeled grid.
struct ComponentIndex {
    std::vector<int32_t> comp;  // per pixel, -1 for non-converging
    int count = 0;
    int component_at(const BasinGrid& g, Cx z) const {
        auto px = g.vp.pixel_of(z);
        if (!px) return -1;
        return comp[size_t(px->second) * g.vp.px + px->first];
    }
};

inline ComponentIndex label_components(const BasinGrid& g) {
    ComponentIndex ci;
    const int W = g.vp.px, H = g.vp.py;
    ci.comp.assign(size_t(W) * H, -1);
    for (int j = 0; j < H; ++j)
        for (int i = 0; i < W; ++i) {
            size_t at = size_t(j) * W + i;
            if (g.label[at] == kNoBasin || ci.comp[at] != -1) continue;
            int id = ci.count++;
            std::queue<std::pair<int, int>> q;
            q.push({i, j});
            ci.comp[at] = id;
            while (!q.empty()) {
                auto [x, y] = q.front();
                q.pop();
                const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
                for (int k = 0; k < 4; ++k) {
                    int nx = x + dx[k], ny = y + dy[k];
                    if (nx < 0 || nx >= W || ny < 0 || ny >= H) continue;
                    size_t nat = size_t(ny) * W + nx;
                    if (ci.comp[nat] != -1 || g.label[nat] != g.label[size_t(y) * W + x])
                        continue;
                    ci.comp[nat] = id;
                    q.push({nx, ny});
                }
            }
        }
    return ci;
}

namespace bdetail {

// Pull `target` back along the recorded forward orbit, choosing at each step
// the preimage closest to the orbit sample (branch continuity at grid scale).
inline Cx pull_back_along(const NewtonMap& m, const std::vector<Cx>& orbit, Cx target) {
    Cx w = target;
    for (int k = static_cast<int>(orbit.size()) - 2; k >= 0; --k) {
        auto cands = m.preimages(w);
        Cx best = cands.front();
        for (Cx c : cands)
            if (std::abs(c - orbit[size_t(k)]) < std::abs(best - orbit[size_t(k)])) best = c;
        // snap to roots: pulling a root back through itself spreads the
        // root-finder residual by a square root per step otherwise
        for (Cx r : m.roots())
            if (std::abs(best - r) < 1e-6) best = r;
        w = best;
    }
    return w;
}

}  // namespace bdetail

inline std::vector<Bubble> identify_bubbles(const NewtonMap& m, const BasinGrid& g,
                                            int max_generation, int min_pixels = 4) {
    ComponentIndex ci = label_components(g);
    const int W = g.vp.px, H = g.vp.py;

    struct Acc {
        long count = 0;
        int basin = -1;
        int best_i = -1, best_j = -1;
        uint16_t best_iters = 65535;
        std::vector<Cx> boundary;
    };
    std::vector<Acc> acc(size_t(ci.count));
    for (int j = 0; j < H; ++j)
        for (int i = 0; i < W; ++i) {
            size_t at = size_t(j) * W + i;
            int32_t c = ci.comp[at];
            if (c < 0) continue;
            Acc& a = acc[size_t(c)];
            a.count++;
            a.basin = g.label[at];
            if (g.iters[at] < a.best_iters) {
                a.best_iters = g.iters[at];
                a.best_i = i;
                a.best_j = j;
            }
            bool on_boundary = i == 0 || i == W - 1 || j == 0 || j == H - 1;
            if (!on_boundary) {
                const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
                for (int k = 0; k < 4 && !on_boundary; ++k)
                    if (ci.comp[size_t(j + dy[k]) * W + (i + dx[k])] != c) on_boundary = true;
            }
            if (on_boundary) a.boundary.push_back(g.vp.pixel_center(i, j));
        }

    std::vector<Bubble> out;
    std::vector<int> small_components;
    for (int c = 0; c < ci.count; ++c) {
        const Acc& a = acc[size_t(c)];
        if (a.count < min_pixels) {
            small_components.push_back(c);
            continue;
        }
        Cx root = m.roots()[size_t(a.basin)];
        // forward orbit of the sample until it closes in on the root
        std::vector<Cx> orbit{g.vp.pixel_center(a.best_i, a.best_j)};
        bool reached = false;
        for (int it = 0; it < 2000; ++it) {
            if (std::abs(orbit.back() - root) < 1e-9) {
                reached = true;
                break;
            }
            orbit.push_back(m.eval(orbit.back()));
            if (!std::isfinite(orbit.back().real())) break;
        }
        if (!reached) continue;
        orbit.back() = root;
        Cx center = bdetail::pull_back_along(m, orbit, root);
        int gen = -1;
        Cx z = center;
        for (int it = 0; it < static_cast<int>(orbit.size()); ++it) {
            if (std::abs(z - root) < 1e-7) {
                gen = it;
                break;
            }
            z = m.eval(z);
        }
        if (gen < 0 || gen > max_generation) continue;
        Bubble b;
        b.basin = a.basin;
        b.generation = gen;
        b.center = center;
        b.pixel_count = a.count;
        b.boundary = a.boundary;
        out.push_back(std::move(b));
    }

    // dedupe clipped components that resolved to the same center
    std::sort(out.begin(), out.end(), [](const Bubble& x, const Bubble& y) {
        return x.pixel_count > y.pixel_count;
    });
    std::vector<Bubble> dedup;
    for (auto& b : out) {
        bool dup = false;
        for (const auto& kept : dedup)
            if (kept.basin == b.basin && std::abs(kept.center - b.center) < 1e-8) dup = true;
        if (!dup) dedup.push_back(std::move(b));
    }
    for (size_t i = 0; i < dedup.size(); ++i) dedup[i].id = static_cast<int>(i);

    // generations must be contiguous at grid scale; a gap means components of
    // the requested generation fell below the pixel threshold
    std::vector<bool> present(size_t(max_generation) + 1, false);
    int max_seen = -1;
    for (const auto& b : dedup) {
        present[size_t(b.generation)] = true;
        max_seen = std::max(max_seen, b.generation);
    }
    for (int gen = 0; gen < max_seen; ++gen)
        if (!present[size_t(gen)])
            throw ResolutionTooCoarse("no component of generation " + std::to_string(gen) +
                                      " resolved at this grid size");
    (void)small_components;
    return dedup;
}

// Shared-prepole adjacency witness: bubbles in a Newton graph chain touch at
// iterated preimages of infinity.
inline std::optional<Cx> adjacency_witness(const NewtonMap& m, const BasinGrid& g,
                                           const Bubble& b1, const Bubble& b2,
                                           int max_depth = 40) {
    if (b1.boundary.empty() || b2.boundary.empty()) return std::nullopt;
    double best = 1e300;
    Cx p1{}, p2{};
    for (Cx u : b1.boundary)
        for (Cx v : b2.boundary)
            if (std::abs(u - v) < best) {
                best = std::abs(u - v);
                p1 = u;
                p2 = v;
            }
    double diag = g.vp.pixel_size() * std::sqrt(2.0);
    if (best > 3.0 * diag) return std::nullopt;
    Cx touch = 0.5 * (p1 + p2);
    std::vector<Cx> poles = m.poles();
    auto near_boundary = [&](Cx w, const std::vector<Cx>& bnd) {
        for (Cx u : bnd)
            if (std::abs(w - u) < 2.5 * diag) return true;
        return false;
    };
    std::vector<Cx> orbit{touch};
    for (int k = 0; k <= max_depth; ++k) {
        for (Cx pole : poles)
            if (std::abs(orbit.back() - pole) < 0.6) {
                std::vector<Cx> chain(orbit.begin(), orbit.end());
                chain.back() = pole;
                Cx w = bdetail::pull_back_along(m, chain, pole);
                // a genuine witness is a prepole on both boundaries
                if (near_boundary(w, b1.boundary) && near_boundary(w, b2.boundary)) return w;
            }
        orbit.push_back(m.eval(orbit.back()));
        if (!std::isfinite(orbit.back().real())) break;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Accesses to infinity: number of critical points in the immediate basin,
// counted with multiplicity.

inline Viewport default_viewport(const NewtonMap& m, int res = 600) {
    Cx mean{0, 0};
    for (Cx r : m.roots()) mean += r;
    mean /= double(m.degree());
    double spread = 1.0;
    for (Cx r : m.roots()) spread = std::max(spread, std::abs(r - mean));
    for (const auto& c : critical_points(m).points)
        spread = std::max(spread, std::abs(c.point - mean));
    return Viewport{mean, 3.0 * spread, res, res};
}

inline int accesses_count(const NewtonMap& m, int root_index, const BasinGrid* grid = nullptr) {
    BasinGrid local;
    if (!grid) {
        local = render_basins(m, default_viewport(m), 400);
        grid = &local;
    }
    ComponentIndex ci = label_components(*grid);
    int root_comp = ci.component_at(*grid, m.roots()[size_t(root_index)]);
    int total = 0;
    for (const auto& c : critical_points(m).points)
        if (ci.component_at(*grid, c.point) == root_comp) total += c.multiplicity;
    return std::max(total, 1);
}

// ---------------------------------------------------------------------------
// Fixed internal rays.

struct InternalRay {
    int basin = -1;           // root index
    int angle_num = 0;        // rational turn angle_num / angle_den
    int angle_den = 1;
    std::vector<Cx> trace;    // from the root outward
    bool lands_at_infinity = false;
};

struct TraceStalled : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace bdetail {

// One fixed internal ray of a simple root, by inverse iteration through the
// linearizing coordinate chain: samples z(s) with phi(z(s)) = s and
// N(z(s)) = z(s^2); the target of each pullback is the sample one level down.
inline std::vector<Cx> trace_simple_root_ray(const NewtonMap& m, int root_index,
                                             double escape_radius = 1e7) {
    Cx a = m.roots()[size_t(root_index)];
    Cx dpa = m.dp().eval(a);
    Cx ddpa = m.dp().derivative().eval(a);
    if (std::abs(dpa) < 1e-12)
        throw TraceStalled("root is not simple; ray seeding unavailable");
    Cx lambda = ddpa / (2.0 * dpa);  // N(z) - a ~ lambda (z-a)^2
    if (std::abs(lambda) < 1e-12) throw TraceStalled("degenerate quadratic coefficient");

    const int J = 8;                       // samples per doubling level
    const double L = -std::log(1e-12);     // base: s in [1e-12, 1e-6)
    std::vector<Cx> pts;
    auto s_of = [&](int u) { return std::exp(-L * std::pow(2.0, -double(u) / J)); };
    for (int u = 0;; ++u) {
        double s = s_of(u);
        Cx z;
        if (u < J) {
            z = a + s / lambda;  // linearized seed, relative error O(s)
        } else {
            Cx target = pts[size_t(u - J)];
            z = pts[size_t(u - 1)];  // continuity guess
            bool ok = false;
            for (int it = 0; it < 60; ++it) {
                Cx fv = m.eval(z) - target;
                if (std::abs(fv) < 1e-13 * (1.0 + std::abs(target))) {
                    ok = true;
                    break;
                }
                Cx nd = m.derivative(z);
                if (std::abs(nd) < 1e-300) throw TraceStalled("vanishing derivative on ray");
                z -= fv / nd;
                if (!std::isfinite(z.real()) || !std::isfinite(z.imag()))
                    throw TraceStalled("ray continuation diverged");
            }
            if (!ok) throw TraceStalled("ray pullback failed to converge");
            // branch guard: stay close to the continuation guess
            if (std::abs(z - pts[size_t(u - 1)]) > 0.95 * std::abs(z - a) + 1e-9)
                throw TraceStalled("branch jump detected on ray");
        }
        pts.push_back(z);
        if (std::abs(z - a) > escape_radius) break;
        if (u > 5000) throw TraceStalled("ray did not reach the escape radius");
    }
    std::vector<Cx> trace{a};
    for (Cx z : pts) trace.push_back(z);
    return trace;
}

}  // namespace bdetail

inline std::vector<InternalRay> trace_fixed_internal_rays(const NewtonMap& m, int root_index) {
    // local degree at a simple root is 2: exactly one fixed internal ray
    InternalRay r;
    r.basin = root_index;
    r.angle_num = 0;
    r.angle_den = 1;
    r.trace = bdetail::trace_simple_root_ray(m, root_index);
    r.lands_at_infinity = true;
    return {r};
}

// ---------------------------------------------------------------------------
// Channel diagram.

struct ChannelDiagramGeo {
    PlanarGraph graph;
    int v_inf = -1;
    std::vector<int> root_vertex;  // root index -> vertex id
    std::vector<int> ray_edge;     // edge ids in root order (one per access)
};

inline ChannelDiagramGeo channel_diagram(const NewtonMap& m) {
    ChannelDiagramGeo out;
    out.v_inf = out.graph.add_vertex(VertexKind::Infinity, SpherePoint::infinity());
    for (int i = 0; i < m.degree(); ++i)
        out.root_vertex.push_back(
            out.graph.add_vertex(VertexKind::Fatou, SpherePoint::finite(m.roots()[size_t(i)])));
    for (int i = 0; i < m.degree(); ++i) {
        for (const InternalRay& r : trace_fixed_internal_rays(m, i)) {
            Polyline trace;
            for (Cx z : r.trace) trace.push_back(SpherePoint::finite(z));
            trace.push_back(SpherePoint::infinity());
            out.ray_edge.push_back(
                out.graph.add_edge(out.root_vertex[size_t(i)], out.v_inf, std::move(trace)));
        }
    }
    out.graph.build_rotation_from_traces();
    return out;
}

}  // namespace natlas
