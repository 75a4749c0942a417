// Newton graph levels: numerical pullback of channel-diagram edges through
// all inverse branches, pole coverage, level selection, and cross-level
// consistency checks.
#pragma once

#include <map>
#include <set>

#include "natlas/basins.hpp"
#include "natlas/newtonmap.hpp"
#include "natlas/planargraph.hpp"

namespace natlas {

struct BranchJumpDetected : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NotCoveredWithinBudget : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NewtonGraphLevel {
    int level = 0;
    PlanarGraph graph;
    int v_inf = -1;
    std::vector<int> root_vertex;  // root index -> vertex id
    GraphMap down;                 // maps this graph onto the previous level
    std::vector<int> embed_vertex;          // previous vertex id -> id here
    std::vector<OrientedEdge> embed_edge;   // previous edge id -> edge here
};

namespace ngdetail {

constexpr double kStepCap = 1e-3;       // chordal continuation step cap
constexpr double kEndGuard = 1e-5;      // stop short of critical endpoints
constexpr double kFarSource = 1e5;      // treat source values beyond as near infinity

// Continue the preimage w of v0 to a preimage of v1 along the inverse branch,
// bisecting until steps are below the cap and unambiguous.
inline Cx continue_preimage(const NewtonMap& m, Cx w, Cx v0, Cx v1, int depth = 0) {
    auto cands = m.preimages(v1);
    size_t bi = 0;
    double bd = 1e300, sd = 1e300;
    for (size_t i = 0; i < cands.size(); ++i) {
        double d = chordal(cands[i], w);
        if (d < bd) {
            sd = bd;
            bd = d;
            bi = i;
        } else if (d < sd) {
            sd = d;
        }
    }
    bool unambiguous = bd < 1e-9 || sd > 3.0 * bd;
    if (bd <= kStepCap && unambiguous) return cands[bi];
    if (depth > 30)
        throw BranchJumpDetected("inverse branch continuation stalled near a critical value");
    Cx mid = 0.5 * (v0 + v1);
    Cx wm = continue_preimage(m, w, v0, mid, depth + 1);
    return continue_preimage(m, wm, mid, v1, depth + 1);
}

struct VertexPreimage {
    Cx anchor{0, 0};
    bool at_inf = false;
    int source_vertex = -1;
    int new_id = -1;  // assigned lazily during assembly
};

struct Arc {
    int source_edge = -1;
    int lo_pre = -1;  // VertexPreimage index over source edge v[0]
    int hi_pre = -1;  // over source edge v[1]
    std::vector<Cx> pts;  // interior trace, ordered v[0]-side to v[1]-side
};

}  // namespace ngdetail

// Build level 0 from the channel diagram.
inline NewtonGraphLevel newton_graph_base(const NewtonMap& m) {
    ChannelDiagramGeo cd = channel_diagram(m);
    NewtonGraphLevel lv;
    lv.level = 0;
    lv.graph = cd.graph;
    lv.v_inf = cd.v_inf;
    lv.root_vertex = cd.root_vertex;
    lv.down.vertex_map.resize(lv.graph.vertices.size());
    for (size_t v = 0; v < lv.graph.vertices.size(); ++v) lv.down.vertex_map[v] = int(v);
    lv.down.edge_map.resize(lv.graph.edges.size());
    for (size_t e = 0; e < lv.graph.edges.size(); ++e) lv.down.edge_map[e] = {int(e), false};
    return lv;
}

inline NewtonGraphLevel pull_back_level(const NewtonMap& m, const NewtonGraphLevel& g) {
    using namespace ngdetail;
    const PlanarGraph& src = g.graph;

    // vertex preimages, grouped by source vertex
    std::vector<std::vector<VertexPreimage>> pre(src.vertices.size());
    for (size_t v = 0; v < src.vertices.size(); ++v) {
        const auto& vv = src.vertices[v];
        if (!vv.anchor) continue;
        if (vv.anchor->at_inf) {
            for (const auto& [pole, mult] : m.poles_with_multiplicity())
                pre[v].push_back({pole, false, int(v), -1});
            pre[v].push_back({Cx{0, 0}, true, int(v), -1});
        } else {
            for (const auto& [rep, mult] : cluster_roots(m.preimages(vv.anchor->z), 1e-6)) {
                Cx anchor = rep;
                // exact fixed points stay exact
                for (Cx r : m.roots())
                    if (std::abs(anchor - r) < 1e-6) anchor = r;
                pre[v].push_back({anchor, false, int(v), -1});
            }
        }
    }

    // pull every edge trace back through all branches
    std::vector<Arc> arcs;
    for (size_t e = 0; e < src.edges.size(); ++e) {
        const GraphEdge& ed = src.edges[e];
        if (ed.trace.size() < 3) throw BranchJumpDetected("source edge has no usable trace");
        // usable interior samples: finite, away from endpoint critical values;
        // the guard scales down for short edges deep in the graph
        Cx lo_anchor{}, hi_anchor{};
        bool lo_inf = src.vertices[size_t(ed.v[0])].anchor->at_inf;
        bool hi_inf = src.vertices[size_t(ed.v[1])].anchor->at_inf;
        if (!lo_inf) lo_anchor = src.vertices[size_t(ed.v[0])].anchor->z;
        if (!hi_inf) hi_anchor = src.vertices[size_t(ed.v[1])].anchor->z;
        double extent = 0.0;
        for (size_t i = 0; i + 1 < ed.trace.size(); ++i)
            if (!ed.trace[i].at_inf && !ed.trace[i + 1].at_inf &&
                std::abs(ed.trace[i].z) < kFarSource && std::abs(ed.trace[i + 1].z) < kFarSource)
                extent += std::abs(ed.trace[i + 1].z - ed.trace[i].z);
        double guard = std::min(kEndGuard, 0.05 * extent);
        std::vector<Cx> T;
        for (const SpherePoint& s : ed.trace) {
            if (s.at_inf) continue;
            if (std::abs(s.z) > kFarSource) continue;
            if (!lo_inf && std::abs(s.z - lo_anchor) < guard) continue;
            if (!hi_inf && std::abs(s.z - hi_anchor) < guard) continue;
            T.push_back(s.z);
        }
        if (T.size() < 2) throw BranchJumpDetected("edge trace too short after end guards");
        size_t base = T.size() / 2;
        std::vector<Cx> base_pre = m.preimages(T[base]);
        // base must be a regular value; nudge if branches collide there
        for (int tries = 0; tries < 8; ++tries) {
            double minsep = 1e300;
            for (size_t i = 0; i < base_pre.size(); ++i)
                for (size_t j = i + 1; j < base_pre.size(); ++j)
                    minsep = std::min(minsep, std::abs(base_pre[i] - base_pre[j]));
            if (minsep > 1e-5) break;
            base = (base + T.size() / 3 + 1) % T.size();
            base_pre = m.preimages(T[base]);
        }

        for (Cx w0 : base_pre) {
            Arc arc;
            arc.source_edge = int(e);
            // continue toward the low end, collecting in reverse
            std::vector<Cx> lo_part;
            Cx w = w0;
            for (size_t i = base; i-- > 0;) {
                w = continue_preimage(m, w, T[i + 1], T[i]);
                lo_part.push_back(w);
            }
            // match the low endpoint among preimages of the source vertex
            {
                const auto& cand = pre[size_t(ed.v[0])];
                int best = -1;
                double bd = 1e300;
                for (size_t c = 0; c < cand.size(); ++c) {
                    double d = cand[c].at_inf ? chordal_to_inf(w) : chordal(cand[c].anchor, w);
                    if (d < bd) {
                        bd = d;
                        best = int(c);
                    }
                }
                arc.lo_pre = best;
            }
            std::reverse(lo_part.begin(), lo_part.end());
            arc.pts = std::move(lo_part);
            arc.pts.push_back(w0);
            w = w0;
            for (size_t i = base + 1; i < T.size(); ++i) {
                w = continue_preimage(m, w, T[i - 1], T[i]);
                arc.pts.push_back(w);
            }
            {
                const auto& cand = pre[size_t(ed.v[1])];
                int best = -1;
                double bd = 1e300;
                for (size_t c = 0; c < cand.size(); ++c) {
                    double d = cand[c].at_inf ? chordal_to_inf(w) : chordal(cand[c].anchor, w);
                    if (d < bd) {
                        bd = d;
                        best = int(c);
                    }
                }
                arc.hi_pre = best;
            }
            arcs.push_back(std::move(arc));
        }
    }

    // connected component containing the infinity preimage of v_inf
    auto key = [&](int source_vertex, int pre_idx) {
        return std::pair<int, int>{source_vertex, pre_idx};
    };
    std::map<std::pair<int, int>, std::vector<size_t>> incident;
    for (size_t a = 0; a < arcs.size(); ++a) {
        incident[key(src.edges[size_t(arcs[a].source_edge)].v[0], arcs[a].lo_pre)].push_back(a);
        incident[key(src.edges[size_t(arcs[a].source_edge)].v[1], arcs[a].hi_pre)].push_back(a);
    }
    int inf_pre = -1;
    for (size_t c = 0; c < pre[size_t(g.v_inf)].size(); ++c)
        if (pre[size_t(g.v_inf)][c].at_inf) inf_pre = int(c);
    std::set<std::pair<int, int>> live_vertices;
    std::set<size_t> live_arcs;
    std::vector<std::pair<int, int>> stack{key(g.v_inf, inf_pre)};
    live_vertices.insert(stack.back());
    while (!stack.empty()) {
        auto k = stack.back();
        stack.pop_back();
        for (size_t a : incident[k]) {
            if (live_arcs.count(a)) continue;
            live_arcs.insert(a);
            for (auto nk : {key(src.edges[size_t(arcs[a].source_edge)].v[0], arcs[a].lo_pre),
                            key(src.edges[size_t(arcs[a].source_edge)].v[1], arcs[a].hi_pre)}) {
                if (!live_vertices.count(nk)) {
                    live_vertices.insert(nk);
                    stack.push_back(nk);
                }
            }
        }
    }

    // assemble the new graph
    NewtonGraphLevel out;
    out.level = g.level + 1;
    for (auto [sv, pi] : live_vertices) {
        VertexPreimage& vp = pre[size_t(sv)][size_t(pi)];
        VertexKind kind = vp.at_inf ? VertexKind::Infinity
                          : src.vertices[size_t(sv)].kind == VertexKind::Fatou
                              ? VertexKind::Fatou
                              : VertexKind::Julia;
        // preimages of the infinity vertex that are finite are prepoles
        if (!vp.at_inf && src.vertices[size_t(sv)].anchor->at_inf) kind = VertexKind::Julia;
        vp.new_id = out.graph.add_vertex(
            kind, vp.at_inf ? SpherePoint::infinity() : SpherePoint::finite(vp.anchor));
        out.down.vertex_map.push_back(sv);
        if (vp.at_inf) out.v_inf = vp.new_id;
    }
    for (size_t a = 0; a < arcs.size(); ++a) {
        if (!live_arcs.count(a)) continue;
        const Arc& arc = arcs[a];
        const VertexPreimage& lo = pre[size_t(src.edges[size_t(arc.source_edge)].v[0])][size_t(arc.lo_pre)];
        const VertexPreimage& hi = pre[size_t(src.edges[size_t(arc.source_edge)].v[1])][size_t(arc.hi_pre)];
        Polyline trace;
        trace.push_back(lo.at_inf ? SpherePoint::infinity() : SpherePoint::finite(lo.anchor));
        for (Cx z : arc.pts) trace.push_back(SpherePoint::finite(z));
        trace.push_back(hi.at_inf ? SpherePoint::infinity() : SpherePoint::finite(hi.anchor));
        out.graph.add_edge(lo.new_id, hi.new_id, std::move(trace), 'N', out.level);
        out.down.edge_map.push_back({arc.source_edge, false});
    }
    out.graph.build_rotation_from_traces();

    // root vertices persist (they are among the preimages of themselves)
    out.root_vertex.assign(m.roots().size(), -1);
    for (size_t v = 0; v < out.graph.vertices.size(); ++v) {
        const auto& an = out.graph.vertices[v].anchor;
        if (!an || an->at_inf) continue;
        for (size_t r = 0; r < m.roots().size(); ++r)
            if (std::abs(an->z - m.roots()[r]) < 1e-9) out.root_vertex[r] = int(v);
    }

    // embedding of the previous level: vertices by anchor, edges by trace
    out.embed_vertex.assign(src.vertices.size(), -1);
    for (size_t ov = 0; ov < src.vertices.size(); ++ov) {
        const auto& oa = src.vertices[ov].anchor;
        for (size_t nv = 0; nv < out.graph.vertices.size(); ++nv) {
            const auto& na = out.graph.vertices[nv].anchor;
            if (oa->at_inf != na->at_inf) continue;
            if (oa->at_inf || std::abs(oa->z - na->z) < 1e-6) {
                out.embed_vertex[ov] = int(nv);
                break;
            }
        }
    }
    out.embed_edge.assign(src.edges.size(), OrientedEdge{-1, false});
    for (size_t oe = 0; oe < src.edges.size(); ++oe) {
        int a = out.embed_vertex[size_t(src.edges[oe].v[0])];
        int b = out.embed_vertex[size_t(src.edges[oe].v[1])];
        if (a < 0 || b < 0) continue;
        // representative interior point of the old edge
        Cx probe{0, 0};
        bool have_probe = false;
        for (const SpherePoint& s : src.edges[oe].trace)
            if (!s.at_inf && std::abs(s.z) < 100.0 && std::abs(s.z) > 1e-3) {
                probe = s.z;
                have_probe = true;
            }
        int best = -1;
        bool best_rev = false;
        double bd = 1e300;
        for (size_t ne = 0; ne < out.graph.edges.size(); ++ne) {
            const auto& ned = out.graph.edges[ne];
            bool fwd = ned.v[0] == a && ned.v[1] == b;
            bool rev = ned.v[0] == b && ned.v[1] == a;
            if (!fwd && !rev) continue;
            double d = 0.0;
            if (have_probe) {
                d = 1e300;
                for (const SpherePoint& s : ned.trace)
                    if (!s.at_inf) d = std::min(d, std::abs(s.z - probe));
            }
            if (d < bd) {
                bd = d;
                best = int(ne);
                best_rev = rev && !fwd;
            }
        }
        out.embed_edge[oe] = {best, best_rev};
    }
    return out;
}

inline std::vector<NewtonGraphLevel> build_newton_graph_levels(const NewtonMap& m, int up_to) {
    std::vector<NewtonGraphLevel> out;
    out.push_back(newton_graph_base(m));
    for (int n = 0; n < up_to; ++n) out.push_back(pull_back_level(m, out.back()));
    return out;
}

// The self graph map of level k (edges of Delta_k map onto edges of
// Delta_{k-1} which embed back into Delta_k).
inline GraphMap newton_graph_self_map(const std::vector<NewtonGraphLevel>& levels, size_t k) {
    const NewtonGraphLevel& lv = levels[k];
    GraphMap f;
    if (k == 0) return lv.down;  // identity on the channel diagram
    f.vertex_map.resize(lv.graph.vertices.size());
    for (size_t v = 0; v < lv.graph.vertices.size(); ++v)
        f.vertex_map[v] = lv.embed_vertex[size_t(lv.down.vertex_map[v])];
    f.edge_map.resize(lv.graph.edges.size());
    for (size_t e = 0; e < lv.graph.edges.size(); ++e) {
        OrientedEdge de = lv.down.edge_map[e];
        OrientedEdge em = lv.embed_edge[size_t(de.edge)];
        f.edge_map[e] = {em.edge, bool(de.rev ^ em.rev)};
    }
    return f;
}

// Channel-diagram edges of level k, chased through the embeddings.
inline std::vector<bool> delta_edges_at_level(const std::vector<NewtonGraphLevel>& levels,
                                              size_t k) {
    std::vector<int> ids;
    for (size_t e = 0; e < levels[0].graph.edges.size(); ++e) ids.push_back(int(e));
    for (size_t lv = 1; lv <= k; ++lv)
        for (int& id : ids) id = levels[lv].embed_edge[size_t(id)].edge;
    std::vector<bool> out(levels[k].graph.edges.size(), false);
    for (int id : ids) out[size_t(id)] = true;
    return out;
}

// ---------------------------------------------------------------------------
// Pole coverage.

struct PoleCoverage {
    std::vector<Cx> poles;
    std::vector<int> first_level;
    int overall = -1;
};

inline PoleCoverage poles_covered_level(const NewtonMap& m, int max_level) {
    if (max_level < 1) throw NotCoveredWithinBudget("max_level must be at least 1");
    PoleCoverage pc;
    pc.poles = m.poles();
    pc.first_level.assign(pc.poles.size(), -1);
    auto levels = build_newton_graph_levels(m, max_level);
    for (int n = 1; n <= max_level; ++n) {
        const PlanarGraph& gr = levels[size_t(n)].graph;
        for (size_t p = 0; p < pc.poles.size(); ++p) {
            if (pc.first_level[p] != -1) continue;
            for (const auto& v : gr.vertices)
                if (v.anchor && !v.anchor->at_inf && std::abs(v.anchor->z - pc.poles[p]) < 1e-6)
                    pc.first_level[p] = n;
        }
        bool all = true;
        for (int f : pc.first_level)
            if (f == -1) all = false;
        if (all) {
            pc.overall = n;
            return pc;
        }
    }
    throw NotCoveredWithinBudget("poles not covered within the level budget");
}

// ---------------------------------------------------------------------------
// Geometric face membership.

// Face of the point z: side test against the globally nearest trace segment.
inline int point_face(const PlanarGraph& g, const Faces& fs, Cx z) {
    double bd = 1e300;
    int be = -1;
    int bseg = -1;
    for (size_t e = 0; e < g.edges.size(); ++e) {
        const Polyline& tr = g.edges[e].trace;
        for (size_t i = 0; i + 1 < tr.size(); ++i) {
            if (tr[i].at_inf || tr[i + 1].at_inf) continue;
            Cx a = tr[i].z, b = tr[i + 1].z;
            Cx ab = b - a;
            double len2 = std::norm(ab);
            if (len2 < 1e-30) continue;
            double t = std::clamp(((z - a) * std::conj(ab)).real() / len2, 0.0, 1.0);
            double d = std::abs(z - (a + t * ab));
            if (d < bd) {
                bd = d;
                be = int(e);
                bseg = int(i);
            }
        }
    }
    if (be < 0) throw std::runtime_error("no finite trace segment for face test");
    const Polyline& tr = g.edges[size_t(be)].trace;
    Cx a = tr[size_t(bseg)].z, b = tr[size_t(bseg) + 1].z;
    double cross = ((b - a).real() * (z - a).imag() - (b - a).imag() * (z - a).real());
    // faces are traced with the face on the left of the forward orientation
    return cross >= 0 ? fs.face_of[size_t(be)][0] : fs.face_of[size_t(be)][1];
}

// ---------------------------------------------------------------------------
// Level selection: the smallest level whose graph passes the abstract Newton
// graph axioms, carries every eventually-fixed critical point, and separates
// the periodic-tree anchors into distinct faces.

inline int select_level(const NewtonMap& m, const std::vector<Cx>& tree_anchors,
                        int max_level = 6) {
    std::vector<NewtonGraphLevel> levels;
    levels.push_back(newton_graph_base(m));
    // eventually-fixed critical points: forward orbit hits a root or infinity
    std::vector<SpherePoint> must_lie;
    for (const auto& c : critical_points(m).points) {
        SpherePoint z = SpherePoint::finite(c.point);
        for (int it = 0; it < 64; ++it) {
            bool fixed = z.at_inf;
            for (Cx r : m.roots())
                if (!z.at_inf && std::abs(z.z - r) < 1e-9) fixed = true;
            if (fixed) {
                must_lie.push_back(SpherePoint::finite(c.point));
                break;
            }
            z = m.eval(z);
        }
    }
    for (int n = 1; n <= max_level; ++n) {
        levels.push_back(pull_back_level(m, levels.back()));
        const PlanarGraph& gr = levels[size_t(n)].graph;
        bool ok = validate_abstract_newton_graph(gr, newton_graph_self_map(levels, size_t(n)),
                                                 n, delta_edges_at_level(levels, size_t(n)),
                                                 levels[size_t(n)].v_inf, m.degree())
                      .verdict;
        for (const SpherePoint& s : must_lie) {
            bool on_graph = false;
            for (const auto& v : gr.vertices)
                if (v.anchor && v.anchor->at_inf == s.at_inf &&
                    (s.at_inf || std::abs(v.anchor->z - s.z) < 1e-6))
                    on_graph = true;
            if (!on_graph) ok = false;
        }
        if (ok && tree_anchors.size() > 1) {
            Faces fs = faces(gr);
            std::set<int> seen;
            for (Cx a : tree_anchors) {
                int f = point_face(gr, fs, a);
                if (seen.count(f)) ok = false;
                seen.insert(f);
            }
        }
        if (ok) return n;
    }
    throw NotCoveredWithinBudget("no level separates the trees within the budget");
}

// ---------------------------------------------------------------------------
// Graph isomorphism respecting geometric anchors (for pullback consistency).

inline bool iso_respecting_anchors(const PlanarGraph& g1, const PlanarGraph& g2,
                                   double vertex_tol = 1e-5, double trace_tol = 1e-3) {
    if (g1.vertices.size() != g2.vertices.size() || g1.edges.size() != g2.edges.size())
        return false;
    std::vector<int> vmap(g1.vertices.size(), -1);
    std::vector<bool> used(g2.vertices.size(), false);
    for (size_t v = 0; v < g1.vertices.size(); ++v) {
        const auto& a1 = g1.vertices[v].anchor;
        for (size_t w = 0; w < g2.vertices.size(); ++w) {
            if (used[w]) continue;
            const auto& a2 = g2.vertices[w].anchor;
            if (!a1 || !a2 || a1->at_inf != a2->at_inf) continue;
            if (a1->at_inf || std::abs(a1->z - a2->z) < vertex_tol) {
                vmap[v] = int(w);
                used[w] = true;
                break;
            }
        }
        if (vmap[v] == -1) return false;
    }
    // edges: endpoints + trace proximity
    std::vector<int> emap(g1.edges.size(), -1);
    std::vector<bool> eused(g2.edges.size(), false);
    for (size_t e = 0; e < g1.edges.size(); ++e) {
        int a = vmap[size_t(g1.edges[e].v[0])], b = vmap[size_t(g1.edges[e].v[1])];
        // probe: interior finite point of the trace
        Cx probe{0, 0};
        bool have = false;
        for (const SpherePoint& s : g1.edges[e].trace)
            if (!s.at_inf && std::abs(s.z) < 100.0) {
                probe = s.z;
                have = true;
                if (std::abs(s.z) > 0.05) break;
            }
        int best = -1;
        double bd = 1e300;
        for (size_t f = 0; f < g2.edges.size(); ++f) {
            if (eused[f]) continue;
            bool fwd = g2.edges[f].v[0] == a && g2.edges[f].v[1] == b;
            bool rev = g2.edges[f].v[0] == b && g2.edges[f].v[1] == a;
            if (!fwd && !rev) continue;
            double d = have ? 1e300 : 0.0;
            for (const SpherePoint& s : g2.edges[f].trace)
                if (!s.at_inf) d = std::min(d, std::abs(s.z - probe));
            if (d < bd) {
                bd = d;
                best = int(f);
            }
        }
        if (best < 0 || (have && bd > trace_tol)) return false;
        emap[e] = best;
        eused[size_t(best)] = true;
    }
    // rotation systems must agree under the correspondence
    for (size_t v = 0; v < g1.vertices.size(); ++v) {
        const auto& r1 = g1.rotation[v];
        const auto& r2 = g2.rotation[size_t(vmap[v])];
        if (r1.size() != r2.size()) return false;
        if (r1.empty()) continue;
        auto image_end = [&](EdgeEnd e) -> EdgeEnd {
            int f = emap[size_t(e.edge)];
            int side = e.side;
            // orientation: side matches by endpoint vertex
            int target = vmap[size_t(g1.vertex_of(e))];
            if (g2.edges[size_t(f)].v[size_t(side)] != target) side = 1 - side;
            return {f, side};
        };
        // find the offset aligning the cyclic orders
        EdgeEnd first = image_end(r1[0]);
        int offset = -1;
        for (size_t i = 0; i < r2.size(); ++i)
            if (r2[i] == first) offset = int(i);
        if (offset < 0) return false;
        for (size_t i = 0; i < r1.size(); ++i)
            if (!(r2[(size_t(offset) + i) % r2.size()] == image_end(r1[i]))) return false;
    }
    return true;
}

}  // namespace natlas
