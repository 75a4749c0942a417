// Bubble chains and Newton rays: spanning trees of the graph levels,
// predecessor bubbles with a bad-set computation, the periodic-ray search at
// repelling periodic points, ray order / right envelopes, and the abstract
// Newton ray validator.
#pragma once

#include "natlas/newtongraph.hpp"
#include "natlas/renorm.hpp"

namespace natlas {

struct CenterNotInTree : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SearchBudgetExceeded : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DegenerateTreeNoOrder : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Spanning trees T_0 <= T_1 <= ... of the graph levels.
//
// T_0 is a maximal subtree of the channel diagram; T_i is a maximal subtree
// of the edges of level i whose image lies in T_{i-1}, grown around the
// embedded copy of T_{i-1}.  Maximality is resolved deterministically by
// adding candidate edges in increasing edge id order.

struct SpanningTreeFamily {
    std::vector<std::vector<bool>> tree_edge;    // per level, per edge id
    std::vector<std::vector<bool>> tree_vertex;  // per level, per vertex id
    std::vector<int> v_bad;                      // Fatou vertex ids at bad_level
    int bad_level = -1;
};

namespace raydetail {

// grow a maximal subtree: start from the seed edge set (assumed acyclic) and
// add candidate edges in id order whenever they attach a new vertex
inline void grow_subtree(const PlanarGraph& g, const std::vector<bool>& candidate,
                         std::vector<bool>& edge_in, std::vector<bool>& vertex_in) {
    bool grew = true;
    while (grew) {
        grew = false;
        for (size_t e = 0; e < g.edges.size(); ++e) {
            if (edge_in[e] || !candidate[e]) continue;
            bool a = vertex_in[size_t(g.edges[e].v[0])];
            bool b = vertex_in[size_t(g.edges[e].v[1])];
            if (a == b) continue;  // either a cycle or a detached edge
            edge_in[e] = true;
            vertex_in[size_t(g.edges[e].v[a ? 1 : 0])] = true;
            grew = true;
        }
    }
}

}  // namespace raydetail

// append spanning trees for any levels not yet covered; the bad set is left
// untouched
inline void extend_spanning_trees(SpanningTreeFamily& f,
                                  const std::vector<NewtonGraphLevel>& levels) {
    for (size_t lv = f.tree_edge.size(); lv < levels.size(); ++lv) {
        const PlanarGraph& g = levels[lv].graph;
        std::vector<bool> edge_in(g.edges.size(), false);
        std::vector<bool> vertex_in(g.vertices.size(), false);
        std::vector<bool> candidate(g.edges.size(), false);
        if (lv == 0) {
            candidate.assign(g.edges.size(), true);
            vertex_in[size_t(levels[0].v_inf)] = true;
        } else {
            for (size_t e = 0; e < g.edges.size(); ++e)
                candidate[e] = f.tree_edge[lv - 1][size_t(levels[lv].down.edge_map[e].edge)];
            // the embedded copy of the previous tree seeds the new one
            for (size_t oe = 0; oe < f.tree_edge[lv - 1].size(); ++oe) {
                if (!f.tree_edge[lv - 1][oe]) continue;
                int ne = levels[lv].embed_edge[oe].edge;
                if (ne < 0 || !candidate[size_t(ne)])
                    throw CenterNotInTree("embedded tree edge is not a pullback candidate");
                edge_in[size_t(ne)] = true;
                for (int s : {0, 1}) vertex_in[size_t(g.edges[size_t(ne)].v[size_t(s)])] = true;
            }
        }
        raydetail::grow_subtree(g, candidate, edge_in, vertex_in);
        f.tree_edge.push_back(std::move(edge_in));
        f.tree_vertex.push_back(std::move(vertex_in));
    }
}

// tree path from v to v_inf; out_edges receives the edge ids along the path
inline std::vector<int> tree_path_to_inf(const SpanningTreeFamily& f,
                                         const std::vector<NewtonGraphLevel>& levels,
                                         size_t lv, int v, std::vector<int>* out_edges = nullptr) {
    const PlanarGraph& g = levels[lv].graph;
    if (!f.tree_vertex[lv][size_t(v)])
        throw CenterNotInTree("vertex is not in the level spanning tree");
    std::vector<int> prev(g.vertices.size(), -1), via(g.vertices.size(), -1);
    std::queue<int> q;
    q.push(v);
    prev[size_t(v)] = v;
    int target = levels[lv].v_inf;
    while (!q.empty()) {
        int a = q.front();
        q.pop();
        if (a == target) break;
        for (EdgeEnd e : g.rotation[size_t(a)]) {
            if (!f.tree_edge[lv][size_t(e.edge)]) continue;
            int b = g.edges[size_t(e.edge)].v[size_t(1 - e.side)];
            if (prev[size_t(b)] != -1) continue;
            prev[size_t(b)] = a;
            via[size_t(b)] = e.edge;
            q.push(b);
        }
    }
    if (prev[size_t(target)] == -1)
        throw CenterNotInTree("vertex is disconnected from infinity in the tree");
    std::vector<int> path;
    std::vector<int> edges;
    for (int a = target; a != v; a = prev[size_t(a)]) {
        path.push_back(a);
        edges.push_back(via[size_t(a)]);
    }
    path.push_back(v);
    std::reverse(path.begin(), path.end());
    std::reverse(edges.begin(), edges.end());
    if (out_edges) *out_edges = std::move(edges);
    return path;
}

// Predecessor of the bubble centered at the Fatou vertex v: an immediate
// basin precedes itself; otherwise the next Fatou vertex on the tree path
// toward infinity (the two share the Julia vertex between them).
inline int predecessor(const SpanningTreeFamily& f,
                       const std::vector<NewtonGraphLevel>& levels, size_t lv, int v) {
    for (int rv : levels[lv].root_vertex)
        if (rv == v) return v;
    std::vector<int> path = tree_path_to_inf(f, levels, lv, v);
    if (path.size() < 3) throw CenterNotInTree("non-root vertex adjacent to infinity");
    return path[2];
}

namespace raydetail {

// minimal subtree of T_lv spanning the vertex set X, as a vertex set
inline std::vector<bool> steiner_vertices(const SpanningTreeFamily& f,
                                          const std::vector<NewtonGraphLevel>& levels,
                                          size_t lv, const std::vector<int>& X) {
    std::vector<bool> out(levels[lv].graph.vertices.size(), false);
    if (X.empty()) return out;
    // union of tree paths from each member to the first member
    std::vector<int> base_path = tree_path_to_inf(f, levels, lv, X[0]);
    auto mark_path = [&](int v) {
        // paths to v_inf merge; the union of two such paths minus the common
        // suffix is the path between the endpoints
        std::vector<int> p = tree_path_to_inf(f, levels, lv, v);
        std::vector<bool> on_base(levels[lv].graph.vertices.size(), false);
        for (int a : base_path) on_base[size_t(a)] = true;
        for (int a : p) {
            out[size_t(a)] = true;
            if (on_base[size_t(a)]) break;
        }
    };
    size_t junction = base_path.size();
    for (size_t i = 1; i < X.size(); ++i) {
        std::vector<int> p = tree_path_to_inf(f, levels, lv, X[i]);
        std::vector<bool> on_p(levels[lv].graph.vertices.size(), false);
        for (int a : p) on_p[size_t(a)] = true;
        for (int a : p) out[size_t(a)] = true;
        for (size_t k = 0; k < base_path.size(); ++k)
            if (on_p[size_t(base_path[k])]) {
                junction = std::min(junction, k);
                break;
            }
    }
    for (size_t k = 0; k <= junction && k < base_path.size(); ++k)
        out[size_t(base_path[k])] = true;
    if (X.size() == 1) {
        for (auto&& b : out) b = false;
        out[size_t(X[0])] = true;
        return out;
    }
    // trim the shared tail beyond the last junction: keep only vertices on
    // paths between members.  Recompute properly: a vertex u is in the Steiner
    // tree iff at least two tree components of T \ {u} contain members, or u
    // is a member.
    const PlanarGraph& g = levels[lv].graph;
    std::vector<bool> member(g.vertices.size(), false);
    for (int v : X) member[size_t(v)] = true;
    std::vector<bool> res(g.vertices.size(), false);
    for (size_t u = 0; u < g.vertices.size(); ++u) {
        if (!f.tree_vertex[lv][u]) continue;
        if (member[u]) {
            res[u] = true;
            continue;
        }
        if (!out[u]) continue;
        int branches = 0;
        for (EdgeEnd e : g.rotation[u]) {
            if (!f.tree_edge[lv][size_t(e.edge)]) continue;
            // does the component across this edge contain a member?
            std::vector<bool> seen(g.vertices.size(), false);
            seen[u] = true;
            int start = g.edges[size_t(e.edge)].v[size_t(1 - e.side)];
            std::vector<int> stack{start};
            seen[size_t(start)] = true;
            bool found = member[size_t(start)];
            while (!stack.empty() && !found) {
                int a = stack.back();
                stack.pop_back();
                for (EdgeEnd e2 : g.rotation[size_t(a)]) {
                    if (!f.tree_edge[lv][size_t(e2.edge)]) continue;
                    int b = g.edges[size_t(e2.edge)].v[size_t(1 - e2.side)];
                    if (seen[size_t(b)]) continue;
                    seen[size_t(b)] = true;
                    if (member[size_t(b)]) found = true;
                    stack.push_back(b);
                }
            }
            if (found) ++branches;
        }
        if (branches >= 2) res[u] = true;
    }
    return res;
}

}  // namespace raydetail

// The bad set at level lv: the minimal predecessor-closed set of Fatou
// vertices whose spanning subtree covers the preimages of the critical
// points and poles lying in T_lv.
inline void compute_bad_set(SpanningTreeFamily& f,
                            const std::vector<NewtonGraphLevel>& levels, size_t lv) {
    const PlanarGraph& g = levels[lv].graph;
    GraphMap self = newton_graph_self_map(levels, lv);

    // S: critical points and poles among the tree vertices (free critical
    // points off the graph cannot contribute)
    std::vector<bool> in_S(g.vertices.size(), false);
    for (size_t v = 0; v < g.vertices.size(); ++v) {
        if (!f.tree_vertex[lv][v]) continue;
        for (int rv : levels[lv].root_vertex)
            if (int(v) == rv) in_S[v] = true;  // fixed critical points
    }
    // poles: Julia vertices mapping to infinity
    for (size_t v = 0; v < g.vertices.size(); ++v)
        if (f.tree_vertex[lv][v] && self.vertex_map[v] == levels[lv].v_inf &&
            g.vertices[v].kind == VertexKind::Julia)
            in_S[v] = true;

    // preimages of S within the tree
    std::vector<int> pre_S;
    for (size_t v = 0; v < g.vertices.size(); ++v)
        if (f.tree_vertex[lv][v] && in_S[size_t(self.vertex_map[v])]) pre_S.push_back(int(v));

    // initial terminals: Fatou members of pre_S directly; for Julia members,
    // the nearest Fatou vertex on the infinity side plus the nearest one in
    // the closest other branch (ties resolved by vertex id)
    std::vector<int> terms;
    auto add_term = [&](int v) {
        for (int t : terms)
            if (t == v) return;
        terms.push_back(v);
    };
    for (int p : pre_S) {
        if (g.vertices[size_t(p)].kind == VertexKind::Fatou) {
            add_term(p);
            continue;
        }
        std::vector<int> path = tree_path_to_inf(f, levels, lv, p);
        // infinity side: the next Fatou vertex on the path
        for (int a : path)
            if (a != p && g.vertices[size_t(a)].kind == VertexKind::Fatou) {
                add_term(a);
                break;
            }
        // nearest Fatou vertex in any branch away from infinity
        int inf_next = path.size() > 1 ? path[1] : -1;
        int best = -1, best_d = 1 << 30;
        std::queue<std::pair<int, int>> q;
        std::vector<bool> seen(g.vertices.size(), false);
        seen[size_t(p)] = true;
        if (inf_next >= 0) seen[size_t(inf_next)] = true;
        q.push({p, 0});
        while (!q.empty()) {
            auto [a, d] = q.front();
            q.pop();
            if (a != p && g.vertices[size_t(a)].kind == VertexKind::Fatou) {
                if (d < best_d || (d == best_d && a < best)) {
                    best = a;
                    best_d = d;
                }
                continue;
            }
            for (EdgeEnd e : g.rotation[size_t(a)]) {
                if (!f.tree_edge[lv][size_t(e.edge)]) continue;
                int b = g.edges[size_t(e.edge)].v[size_t(1 - e.side)];
                if (seen[size_t(b)]) continue;
                seen[size_t(b)] = true;
                q.push({b, d + 1});
            }
        }
        if (best >= 0) add_term(best);
    }

    // close under predecessors
    for (size_t i = 0; i < terms.size(); ++i) {
        int p = predecessor(f, levels, lv, terms[i]);
        if (p != terms[i]) add_term(p);
    }

    auto satisfies = [&](const std::vector<int>& cand) {
        std::vector<bool> span = raydetail::steiner_vertices(f, levels, lv, cand);
        for (int p : pre_S)
            if (!span[size_t(p)]) return false;
        std::vector<bool> in_cand(g.vertices.size(), false);
        for (int v : cand) in_cand[size_t(v)] = true;
        for (int v : cand)
            if (!in_cand[size_t(predecessor(f, levels, lv, v))]) return false;
        return true;
    };
    if (!satisfies(terms)) throw CenterNotInTree("bad-set seed fails its own axioms");

    // minimality: drop members (largest ids first) while the axioms hold
    std::sort(terms.begin(), terms.end(), std::greater<int>());
    bool pruned = true;
    while (pruned) {
        pruned = false;
        for (size_t i = 0; i < terms.size(); ++i) {
            std::vector<int> trial = terms;
            trial.erase(trial.begin() + long(i));
            if (satisfies(trial)) {
                terms = std::move(trial);
                pruned = true;
                break;
            }
        }
    }
    std::sort(terms.begin(), terms.end());
    f.v_bad = std::move(terms);
    f.bad_level = int(lv);
}

inline SpanningTreeFamily build_spanning_trees(const std::vector<NewtonGraphLevel>& levels) {
    SpanningTreeFamily f;
    extend_spanning_trees(f, levels);
    // the bad set needs a level whose predecessor tree already carries every
    // pole; compute it at the top level when that holds
    if (levels.size() >= 2) {
        size_t top = levels.size() - 1;
        GraphMap self = newton_graph_self_map(levels, top - 1);
        const PlanarGraph& g = levels[top - 1].graph;
        int poles_in_tree = 0;
        for (size_t v = 0; v < g.vertices.size(); ++v)
            if (f.tree_vertex[top - 1][v] && g.vertices[v].kind == VertexKind::Julia &&
                self.vertex_map[v] == levels[top - 1].v_inf)
                ++poles_in_tree;
        if (poles_in_tree > 0) compute_bad_set(f, levels, top);
    }
    return f;
}

// ---------------------------------------------------------------------------
// Bubble chains and Newton rays.

struct BubbleRay {
    std::vector<Cx> centers;    // immediate basin first, then outward
    std::vector<Cx> witnesses;  // witnesses[k] joins centers[k] and centers[k+1]
    bool infinite = false;
    Cx landing{0, 0};
};

struct NewtonRay {
    Polyline trace;       // from the base point to the landing point
    int base_vertex = -1; // vertex id in the designated graph level
    Cx base{0, 0};
    Cx landing{0, 0};
    int period = 0;
    int preperiod = 0;
    int graph_level = 0;  // the level of the graph the ray is anchored on
    BubbleRay chain;      // the bubble chain past the base
};

struct RaySearchOptions {
    int max_level = 6;         // level budget for locating pulled-back bubbles
    double radius = 0.0;       // linearizing neighborhood radius; 0 = automatic
    int shift_budget = 3;      // restarts with B0 <- h(B0)
    double match_tol = 1e-7;   // bubble identity tolerance on centers
    double trunc = 1e-8;       // stop the tail when this close to the landing point
};

namespace raydetail {

// local inverse branch of map^m near the repelling fixed point: Newton solve
// map^m(w) = z from the given seed
inline Cx inverse_branch(const NewtonMap& m, int iter, Cx z, Cx seed) {
    Cx w = seed;
    for (int it = 0; it < 60; ++it) {
        Cx fv = rdetail::iterate_cx(m, w, iter) - z;
        if (std::abs(fv) < 1e-12 * (1.0 + std::abs(z))) return w;
        Cx df = m.derivative_iterate(w, iter);
        if (std::abs(df) < 1e-300) break;
        w -= fv / df;
        if (!std::isfinite(w.real()) || !std::isfinite(w.imag())) break;
    }
    throw SearchBudgetExceeded("inverse branch iteration stalled");
}

// map a polyline through the inverse branch, seeding each point from the
// previous image for branch continuity
inline std::vector<Cx> pull_polyline(const NewtonMap& m, int iter,
                                     const std::vector<Cx>& pts, Cx first_seed) {
    std::vector<Cx> out;
    Cx seed = first_seed;
    for (Cx z : pts) {
        Cx w = inverse_branch(m, iter, z, seed);
        out.push_back(w);
        seed = w;
    }
    return out;
}

struct ChainNode {
    Cx center{0, 0};
    bool fatou = true;
};

// chain assembly graph: nodes keyed by position, arcs carry geometry
struct ChainGraph {
    std::vector<ChainNode> nodes;
    std::vector<std::array<int, 2>> arcs;
    std::vector<std::vector<Cx>> arc_trace;  // oriented node[0] -> node[1]
    double tol = 1e-7;

    int node_of(Cx z, bool fatou) {
        for (size_t i = 0; i < nodes.size(); ++i)
            if (std::abs(nodes[i].center - z) < tol) return int(i);
        nodes.push_back({z, fatou});
        return int(nodes.size()) - 1;
    }
    void add_arc(Cx a, Cx b, std::vector<Cx> tr, bool a_fatou, bool b_fatou) {
        int na = node_of(a, a_fatou), nb = node_of(b, b_fatou);
        if (na == nb) return;
        for (size_t k = 0; k < arcs.size(); ++k)
            if ((arcs[k][0] == na && arcs[k][1] == nb) ||
                (arcs[k][0] == nb && arcs[k][1] == na))
                return;
        arcs.push_back({na, nb});
        arc_trace.push_back(std::move(tr));
    }
    // shortest node path between two nodes
    std::vector<int> path(int a, int b) const {
        std::vector<int> prev(nodes.size(), -1);
        std::queue<int> q;
        q.push(a);
        prev[size_t(a)] = a;
        while (!q.empty()) {
            int v = q.front();
            q.pop();
            if (v == b) break;
            for (size_t k = 0; k < arcs.size(); ++k) {
                int u = arcs[k][0] == v ? arcs[k][1] : arcs[k][1] == v ? arcs[k][0] : -1;
                if (u < 0 || prev[size_t(u)] != -1) continue;
                prev[size_t(u)] = v;
                q.push(u);
            }
        }
        if (prev[size_t(b)] == -1) return {};
        std::vector<int> out;
        for (int v = b; v != a; v = prev[size_t(v)]) out.push_back(v);
        out.push_back(a);
        std::reverse(out.begin(), out.end());
        return out;
    }
    const std::vector<Cx>* arc_between(int a, int b, bool* rev) const {
        for (size_t k = 0; k < arcs.size(); ++k) {
            if (arcs[k][0] == a && arcs[k][1] == b) {
                *rev = false;
                return &arc_trace[k];
            }
            if (arcs[k][0] == b && arcs[k][1] == a) {
                *rev = true;
                return &arc_trace[k];
            }
        }
        return nullptr;
    }
};

// finite polyline of a graph edge, oriented from vertex a
inline std::vector<Cx> edge_polyline(const PlanarGraph& g, int e, int from_vertex) {
    const GraphEdge& ed = g.edges[size_t(e)];
    std::vector<Cx> out;
    for (const SpherePoint& s : ed.trace)
        if (!s.at_inf && std::abs(s.z) < 1e6) out.push_back(s.z);
    if (ed.v[0] != from_vertex) std::reverse(out.begin(), out.end());
    return out;
}

// predecessor tail of the Fatou vertex v: centers (Fatou anchors), junction
// witnesses (Julia anchors) and per-step arc geometry, from v toward infinity
struct Tail {
    std::vector<Cx> centers;             // centers[0] is the query bubble
    std::vector<Cx> junctions;           // junctions[k] joins centers[k], centers[k+1]
    std::vector<std::vector<Cx>> arcs;   // arcs[k]: centers[k] -> centers[k+1]
};

inline Tail predecessor_tail(const SpanningTreeFamily& f,
                             const std::vector<NewtonGraphLevel>& levels, size_t lv, int v) {
    std::vector<int> edges;
    std::vector<int> path = tree_path_to_inf(f, levels, lv, v, &edges);
    const PlanarGraph& g = levels[lv].graph;
    Tail t;
    for (size_t k = 0; k + 2 < path.size(); k += 2) {
        int a = path[k], j = path[k + 1], b = path[k + 2];
        if (g.vertices[size_t(b)].kind == VertexKind::Infinity) break;
        if (t.centers.empty()) t.centers.push_back(g.vertices[size_t(a)].anchor->z);
        t.junctions.push_back(g.vertices[size_t(j)].anchor->z);
        t.centers.push_back(g.vertices[size_t(b)].anchor->z);
        std::vector<Cx> arc = edge_polyline(g, edges[k], a);
        std::vector<Cx> arc2 = edge_polyline(g, edges[k + 1], j);
        arc.insert(arc.end(), arc2.begin(), arc2.end());
        t.arcs.push_back(std::move(arc));
    }
    if (t.centers.empty()) t.centers.push_back(g.vertices[size_t(v)].anchor->z);
    return t;
}

// dynamical edge levels (smallest n with map^n(edge) in the channel diagram)
inline std::vector<int> dynamic_edge_levels(const std::vector<NewtonGraphLevel>& levels,
                                            size_t lv) {
    return pgdetail::edge_levels(levels[lv].graph, newton_graph_self_map(levels, lv),
                                 delta_edges_at_level(levels, lv));
}

inline double dist_to_polyline(Cx z, const std::vector<Cx>& tr) {
    double best = 1e300;
    for (size_t i = 0; i + 1 < tr.size(); ++i) {
        Cx a = tr[i], b = tr[i + 1];
        double len2 = std::norm(b - a);
        if (len2 < 1e-30) {
            best = std::min(best, std::abs(z - a));
            continue;
        }
        double s = std::clamp(((z - a) * std::conj(b - a)).real() / len2, 0.0, 1.0);
        best = std::min(best, std::abs(z - (a + s * (b - a))));
    }
    if (tr.size() == 1) best = std::min(best, std::abs(z - tr[0]));
    return best;
}

inline double dist_to_graph(Cx z, const PlanarGraph& g, const std::vector<bool>* keep = nullptr) {
    double best = 1e300;
    for (size_t e = 0; e < g.edges.size(); ++e) {
        if (keep && !(*keep)[e]) continue;
        const Polyline& tr = g.edges[e].trace;
        for (size_t i = 0; i + 1 < tr.size(); ++i) {
            if (tr[i].at_inf || tr[i + 1].at_inf) continue;
            Cx a = tr[i].z, b = tr[i + 1].z;
            double len2 = std::norm(b - a);
            if (len2 < 1e-30) continue;
            double s = std::clamp(((z - a) * std::conj(b - a)).real() / len2, 0.0, 1.0);
            best = std::min(best, std::abs(z - (a + s * (b - a))));
        }
    }
    return best;
}

}  // namespace raydetail

// Search for a periodic Newton ray landing at the repelling periodic point
// omega (period > 1).  Implements the predecessor-tail splice: a bubble B0 in
// a fundamental annulus of the local inverse branch h, the pulled-back bubble
// B1 = h(B0), their predecessor tails, a common bubble of the two tails near
// omega, and the h-invariant chain generated by the spliced segment.
// `levels` and `family` are extended in place as deeper trees are needed.
inline NewtonRay find_periodic_ray_at(const NewtonMap& m, Cx omega, int period,
                                      std::vector<NewtonGraphLevel>& levels,
                                      SpanningTreeFamily& family, int graph_level,
                                      RaySearchOptions opt = {}) {
    using namespace raydetail;
    // refine omega as a fixed point of map^period and require it repelling
    for (int it = 0; it < 60; ++it) {
        Cx fv = rdetail::iterate_cx(m, omega, period) - omega;
        Cx df = m.derivative_iterate(omega, period) - Cx{1, 0};
        if (std::abs(df) < 1e-14) break;
        Cx step = fv / df;
        omega -= step;
        if (std::abs(step) < 1e-14 * (1.0 + std::abs(omega))) break;
    }
    Cx lambda = m.derivative_iterate(omega, period);
    if (std::abs(lambda) < 1.0 + 1e-6)
        throw std::invalid_argument("landing point is not repelling");

    double rho = opt.radius;
    if (rho <= 0.0) {
        rho = 0.3;
        for (Cx z : postcritical_points(m)) rho = std::min(rho, 0.45 * std::abs(z - omega));
        for (const auto& c : critical_points(m).points)
            rho = std::min(rho, 0.45 * std::abs(c.point - omega));
    }

    auto ensure_level = [&](int lv) {
        while (int(levels.size()) <= lv) levels.push_back(pull_back_level(m, levels.back()));
        extend_spanning_trees(family, levels);
    };

    // locate a tree Fatou vertex at the given center; deepest levels first
    auto locate = [&](Cx c) -> std::pair<int, int> {
        for (int lv = int(levels.size()) - 1; lv >= 1; --lv)
            for (size_t v = 0; v < levels[size_t(lv)].graph.vertices.size(); ++v) {
                const auto& vv = levels[size_t(lv)].graph.vertices[v];
                if (vv.kind != VertexKind::Fatou || !vv.anchor || vv.anchor->at_inf) continue;
                if (std::abs(vv.anchor->z - c) < opt.match_tol && family.tree_vertex[size_t(lv)][v])
                    return {lv, int(v)};
            }
        return {-1, -1};
    };

    ensure_level(graph_level + 2);

    // candidate seeds in the fundamental annulus; low generation keeps the
    // pulled-back bubble inside already-built trees, so sort by first
    // appearance level, then outermost first
    struct Seed {
        int gen;
        double dist;
        Cx center;
    };
    std::vector<Seed> seeds;
    double r_in = rho / std::abs(lambda);
    for (size_t lv = 1; lv < levels.size(); ++lv)
        for (size_t v = 0; v < levels[lv].graph.vertices.size(); ++v) {
            const auto& vv = levels[lv].graph.vertices[v];
            if (vv.kind != VertexKind::Fatou || !vv.anchor || vv.anchor->at_inf) continue;
            if (!family.tree_vertex[lv][v]) continue;
            double d = std::abs(vv.anchor->z - omega);
            if (d < 1.05 * r_in || d > 0.95 * rho) continue;
            bool dup = false;
            for (auto& s : seeds)
                if (std::abs(s.center - vv.anchor->z) < opt.match_tol) dup = true;
            if (!dup) seeds.push_back({int(lv), d, vv.anchor->z});
        }
    std::sort(seeds.begin(), seeds.end(), [](const Seed& a, const Seed& b) {
        return a.gen != b.gen ? a.gen < b.gen : a.dist > b.dist;
    });
    if (seeds.empty()) throw SearchBudgetExceeded("no bubble found in the fundamental annulus");

    std::string last_failure = "no candidate attempted";
    for (auto& [gen0, dist0, seed_center] : seeds) {
        Cx c0 = seed_center;
        for (int shift = 0; shift <= opt.shift_budget; ++shift) {
            try {
                auto [lv0, v0] = locate(c0);
                while (lv0 < 0 && int(levels.size()) <= opt.max_level) {
                    ensure_level(int(levels.size()));
                    std::tie(lv0, v0) = locate(c0);
                }
                if (lv0 < 0) throw SearchBudgetExceeded("seed bubble not found in any tree");
                Tail tail0 = predecessor_tail(family, levels, size_t(lv0), v0);
                Cx c1 = inverse_branch(m, period, c0, omega + (c0 - omega) / lambda);
                auto [lv1, v1] = locate(c1);
                for (int grow = 0; lv1 < 0 && int(levels.size()) <= opt.max_level; ++grow) {
                    ensure_level(int(levels.size()));
                    std::tie(lv1, v1) = locate(c1);
                }
                if (lv1 < 0)
                    throw SearchBudgetExceeded("pulled-back bubble beyond the level budget");
                Tail tail1 = predecessor_tail(family, levels, size_t(lv1), v1);

                // first common bubble of the two tails inside the neighborhood
                int a = -1, b = -1;
                for (size_t i = 1; i < tail1.centers.size() && a < 0; ++i) {
                    if (std::abs(tail1.centers[i] - omega) > rho) break;
                    for (size_t j = 0; j < tail0.centers.size(); ++j)
                        if (std::abs(tail1.centers[i] - tail0.centers[j]) < opt.match_tol) {
                            a = int(i);
                            b = int(j);
                            break;
                        }
                }
                if (a < 0) throw SearchBudgetExceeded("tails have no common bubble near omega");

                // chain graph: both tails plus pulled-back copies of the
                // spliced fundamental segment
                ChainGraph cg;
                cg.tol = opt.match_tol;
                auto add_tail = [&](const Tail& t) {
                    for (size_t k = 0; k + 1 < t.centers.size(); ++k)
                        cg.add_arc(t.centers[k], t.centers[k + 1], t.arcs[k], true, true);
                };
                add_tail(tail0);
                add_tail(tail1);

                // fundamental segment W: B0 down tail0 to the common bubble,
                // then up tail1 to B1 (a chain of adjacent bubbles)
                std::vector<std::vector<Cx>> wsegs;  // oriented along W
                std::vector<Cx> wcenters{c0};
                for (int j = 0; j < b; ++j) {
                    wsegs.push_back(tail0.arcs[size_t(j)]);
                    wcenters.push_back(tail0.centers[size_t(j + 1)]);
                }
                for (int i = a - 1; i >= 0; --i) {
                    std::vector<Cx> rev = tail1.arcs[size_t(i)];
                    std::reverse(rev.begin(), rev.end());
                    wsegs.push_back(std::move(rev));
                    wcenters.push_back(tail1.centers[size_t(i)]);
                }

                // pulled-back copies accumulate at omega
                std::vector<std::vector<Cx>> cur = wsegs;
                std::vector<Cx> curc = wcenters;
                for (int k = 0; k < 64; ++k) {
                    std::vector<std::vector<Cx>> next;
                    std::vector<Cx> nextc;
                    Cx seed = omega + (curc[0] - omega) / lambda;
                    for (Cx c : curc) {
                        Cx w = inverse_branch(m, period, c, seed);
                        nextc.push_back(w);
                        seed = w;
                    }
                    for (size_t s = 0; s < cur.size(); ++s) {
                        Cx s0 = omega + (cur[s].front() - omega) / lambda;
                        next.push_back(pull_polyline(m, period, cur[s], s0));
                    }
                    for (size_t s = 0; s < next.size(); ++s)
                        cg.add_arc(nextc[s], nextc[s + 1], next[s], true, true);
                    cur = std::move(next);
                    curc = std::move(nextc);
                    double spread = 0.0;
                    for (Cx c : curc) spread = std::max(spread, std::abs(c - omega));
                    if (spread < opt.trunc) break;
                }

                // minimal chain from the immediate basin to the deepest bubble
                int start = cg.node_of(tail0.centers.back(), true);
                int goal = cg.node_of(curc.back(), true);
                std::vector<int> npath = cg.path(start, goal);
                if (npath.size() < 3) throw SearchBudgetExceeded("chain collapsed");

                // assemble the trace and find the base: the first arc whose
                // geometry leaves the designated graph level starts the ray
                NewtonRay ray;
                ray.graph_level = graph_level;
                ray.period = period;
                ray.landing = omega;
                // base: end of the maximal prefix of arcs lying on the graph
                size_t base_idx = 0;
                for (size_t k = 0; k + 1 < npath.size(); ++k) {
                    bool rev = false;
                    const std::vector<Cx>* arc = cg.arc_between(npath[k], npath[k + 1], &rev);
                    if (!arc || arc->empty()) throw SearchBudgetExceeded("missing chain arc");
                    double far = 0.0;
                    for (Cx z : *arc)
                        far = std::max(far, dist_to_graph(z, levels[size_t(graph_level)].graph));
                    if (far >= 1e-4) break;
                    base_idx = k + 1;
                }
                if (base_idx + 1 >= npath.size())
                    throw SearchBudgetExceeded("ray never leaves the graph");
                ray.trace.push_back(SpherePoint::finite(cg.nodes[size_t(npath[base_idx])].center));
                for (size_t k = base_idx; k + 1 < npath.size(); ++k) {
                    bool rev = false;
                    const std::vector<Cx>* arc = cg.arc_between(npath[k], npath[k + 1], &rev);
                    std::vector<Cx> apts = *arc;
                    if (rev) std::reverse(apts.begin(), apts.end());
                    for (Cx z : apts) ray.trace.push_back(SpherePoint::finite(z));
                    ray.trace.push_back(SpherePoint::finite(cg.nodes[size_t(npath[k + 1])].center));
                }
                ray.trace.push_back(SpherePoint::finite(omega));
                ray.base = cg.nodes[size_t(npath[base_idx])].center;

                // base vertex id on the designated graph
                const PlanarGraph& gg = levels[size_t(graph_level)].graph;
                for (size_t v = 0; v < gg.vertices.size(); ++v)
                    if (gg.vertices[v].anchor && !gg.vertices[v].anchor->at_inf &&
                        std::abs(gg.vertices[v].anchor->z - ray.base) < 1e-6)
                        ray.base_vertex = int(v);

                // chain record past the base
                ray.chain.infinite = true;
                ray.chain.landing = omega;
                for (size_t k = base_idx; k < npath.size(); ++k)
                    ray.chain.centers.push_back(cg.nodes[size_t(npath[k])].center);
                for (size_t k = base_idx; k + 1 < npath.size(); ++k) {
                    bool rev = false;
                    const std::vector<Cx>* arc = cg.arc_between(npath[k], npath[k + 1], &rev);
                    // the shared prepole sits at the junction of the two
                    // internal-ray halves, where the arc repeats a point
                    Cx w = (*arc)[arc->size() / 2];
                    for (size_t i = 0; i + 1 < arc->size(); ++i)
                        if ((*arc)[i] == (*arc)[i + 1]) w = (*arc)[i];
                    ray.chain.witnesses.push_back(w);
                }
                return ray;
            } catch (const SearchBudgetExceeded& e) {
                last_failure = e.what();
                // pull the seed one step closer and retry
                try {
                    c0 = inverse_branch(m, period, c0, omega + (c0 - omega) / lambda);
                } catch (const SearchBudgetExceeded&) {
                    shift = opt.shift_budget;
                }
            }
        }
    }
    throw SearchBudgetExceeded("ray search exhausted its budget: " + last_failure);
}

// ---------------------------------------------------------------------------
// Preimages of rays.

// Pull the ray back through one inverse branch of the map; `base_seed` picks
// the branch (a preimage of the ray's base point).
inline NewtonRay pull_back_ray(const NewtonMap& m, const NewtonRay& r, Cx base_seed) {
    NewtonRay out;
    out.period = r.period;
    out.preperiod = r.preperiod + 1;
    out.graph_level = r.graph_level + 1;
    std::vector<Cx> pts;
    for (const SpherePoint& s : r.trace)
        if (!s.at_inf) pts.push_back(s.z);
    std::vector<Cx> img = raydetail::pull_polyline(m, 1, pts, base_seed);
    for (Cx z : img) out.trace.push_back(SpherePoint::finite(z));
    out.base = img.front();
    out.landing = img.back();
    return out;
}

// ---------------------------------------------------------------------------
// Ray order and right envelopes.

// The reference edge E_omega fixing the cyclic order of rays at a landing
// point.  The choice is arbitrary; it is therefore recorded.
struct RayOrderContext {
    Cx omega{0, 0};
    Polyline e_omega;     // reference edge, oriented away from omega
    std::string source;   // how the reference edge was chosen
};

// Extract a reference edge at omega from a renormalization tree: the
// smallest-id tree edge incident to the vertex at omega.  A degenerate
// (single-point) tree carries no edge and therefore no order.
inline RayOrderContext reference_edge_at(const HubbardTreeSpec& tree, Cx omega) {
    if (tree.degenerate)
        throw DegenerateTreeNoOrder("single-point tree carries no edge at the landing point");
    int vomega = -1;
    for (size_t v = 0; v < tree.tree.vertices.size(); ++v)
        if (tree.tree.vertices[v].anchor &&
            std::abs(tree.tree.vertices[v].anchor->z - omega) < 1e-5)
            vomega = int(v);
    if (vomega < 0) throw std::invalid_argument("landing point is not a tree vertex");
    EdgeEnd eo{-1, 0};
    for (EdgeEnd e : tree.tree.rotation[size_t(vomega)])
        if (eo.edge < 0 || e.edge < eo.edge) eo = e;
    if (eo.edge < 0)
        throw DegenerateTreeNoOrder("no tree edge at the landing point");
    RayOrderContext ctx;
    ctx.omega = omega;
    ctx.e_omega = tree.tree.edges[size_t(eo.edge)].trace;
    if (eo.side == 1) std::reverse(ctx.e_omega.begin(), ctx.e_omega.end());
    ctx.source = "tree edge " + std::to_string(eo.edge) + " at its vertex " +
                 std::to_string(vomega);
    return ctx;
}

// Select the right envelope of rays landing at a common point: the rightmost
// ray in the cyclic order around the landing point, first encountered
// counterclockwise from the reference edge.  Tails of distinct periodic rays
// are disjoint near the landing point, so after the push-forward
// re-anchoring of the envelope construction only the selected tail survives;
// the envelope is that ray.
inline NewtonRay right_envelope(const std::vector<NewtonRay>& rays,
                                const RayOrderContext& ctx, double tol = 1e-6) {
    if (rays.empty()) throw std::invalid_argument("envelope of no rays");
    if (rays.size() == 1) return rays[0];  // the order is not needed
    Cx omega = ctx.omega;
    double theta_e = 0.0;
    {
        bool found = false;
        for (const SpherePoint& s : ctx.e_omega)
            if (!s.at_inf && std::abs(s.z - omega) > 1e-6) {
                theta_e = std::arg(s.z - omega);
                found = true;
                break;
            }
        if (!found)
            throw DegenerateTreeNoOrder("reference edge has no direction at the landing point");
    }

    // tail direction of each ray at the landing point
    auto tail_angle = [&](const NewtonRay& r) {
        for (size_t i = r.trace.size(); i-- > 0;) {
            if (r.trace[i].at_inf) continue;
            Cx d = r.trace[i].z - omega;
            if (std::abs(d) > 1e-6) return std::arg(d);
        }
        throw std::invalid_argument("ray trace does not approach the landing point");
    };
    // dedupe rays whose tails coincide
    std::vector<size_t> keep;
    for (size_t i = 0; i < rays.size(); ++i) {
        bool dup = false;
        for (size_t j : keep) {
            double h = 0.0;
            size_t cnt = 0;
            for (size_t k = rays[i].trace.size(); k-- > 0 && cnt < 25;) {
                if (rays[i].trace[k].at_inf) continue;
                std::vector<Cx> other;
                for (const SpherePoint& s : rays[j].trace)
                    if (!s.at_inf) other.push_back(s.z);
                h = std::max(h, raydetail::dist_to_polyline(rays[i].trace[k].z, other));
                ++cnt;
            }
            if (h < tol) dup = true;
        }
        if (!dup) keep.push_back(i);
    }
    size_t best = keep[0];
    double best_off = 1e300;
    for (size_t i : keep) {
        double off = wrap_angle(tail_angle(rays[i]) - theta_e);
        if (off < best_off) {
            best_off = off;
            best = i;
        }
    }
    return rays[best];
}

// ---------------------------------------------------------------------------
// Abstract Newton ray validation.

struct RayValidateOptions {
    double clearance = 1e-3;    // required distance of the trace from the graph
    double image_tol = 1e-5;    // forward-image containment tolerance
    int max_period = 6;
    int land_budget = 96;       // iterations allowed to reach the graph in (4)
    int samples = 160;
};

inline ValidationReport validate_abstract_newton_ray(
    const NewtonMap& m, const std::vector<NewtonGraphLevel>& levels, int N,
    const NewtonRay& r, const NewtonRay* periodic_image = nullptr,
    RayValidateOptions opt = {}) {
    using raydetail::dist_to_graph;
    ValidationReport rep;
    const PlanarGraph& g = levels[size_t(N)].graph;
    std::vector<Cx> pts;
    for (const SpherePoint& s : r.trace)
        if (!s.at_inf) pts.push_back(s.z);
    if (pts.size() < 3) {
        rep.add("trace has usable geometry", false);
        return rep;
    }
    bool preper = r.preperiod > 0;
    const PlanarGraph& anchor_graph = levels[size_t(r.graph_level)].graph;

    // (1) endpoint typing: the base is a vertex of the graph carrying the
    // ray; the landing point stays off the level-N graph
    bool base_is_vertex = false;
    for (const auto& v : anchor_graph.vertices)
        if (v.anchor && !v.anchor->at_inf && std::abs(v.anchor->z - pts.front()) < 1e-6)
            base_is_vertex = true;
    double land_dist = dist_to_graph(pts.back(), g);
    rep.add("(1) base endpoint is a graph vertex, landing endpoint is off the graph",
            base_is_vertex && land_dist > opt.clearance,
            "landing clearance " + std::to_string(land_dist));

    // (2) the trace meets the level-N graph only at its base: away from the
    // base every point keeps either absolute clearance or clearance
    // proportional to its distance from the base (the trace may approach the
    // graph only while approaching its own base point)
    bool interior_clear = true;
    double worst_ratio = 1e300;
    for (Cx z : pts) {
        double db = std::abs(z - pts.front());
        if (db < 1e-12) continue;
        double dg = dist_to_graph(z, g);
        worst_ratio = std::min(worst_ratio, dg / db);
        if (dg < opt.clearance && dg < 0.45 * db) interior_clear = false;
    }
    rep.add("(2) trace meets the graph only at the base", interior_clear,
            "worst graph/base distance ratio " + std::to_string(worst_ratio));

    // subsample for dynamical checks
    std::vector<Cx> sample;
    for (size_t i = 0; i < pts.size(); i += std::max<size_t>(1, pts.size() / size_t(opt.samples)))
        sample.push_back(pts[i]);

    auto within_image = [&](Cx z, const std::vector<Cx>& target) {
        if (raydetail::dist_to_polyline(z, target) < opt.image_tol) return true;
        return dist_to_graph(z, g) < opt.image_tol;
    };

    if (!preper) {
        // (3) minimal period: smallest q with map^q(trace) inside
        // trace union graph
        int found = -1;
        std::string note;
        for (int q = 1; q <= opt.max_period && found < 0; ++q) {
            bool ok = true;
            for (Cx z : sample) {
                Cx w = rdetail::iterate_cx(m, z, q);
                if (!within_image(w, pts)) {
                    ok = false;
                    break;
                }
            }
            if (ok) found = q;
        }
        rep.add("(3) minimal period matches",
                found == r.period,
                "measured " + std::to_string(found) + " recorded " + std::to_string(r.period));
    } else {
        // preperiodic bullets: the image under map^preperiod is the given
        // periodic ray (plus graph edges), and no earlier iterate is
        std::vector<Cx> target;
        if (periodic_image)
            for (const SpherePoint& s : periodic_image->trace)
                if (!s.at_inf) target.push_back(s.z);
        bool have_target = !target.empty();
        int found = -1;
        for (int q = 1; q <= r.preperiod && have_target && found < 0; ++q) {
            bool ok = true;
            for (Cx z : sample) {
                Cx w = rdetail::iterate_cx(m, z, q);
                if (!within_image(w, target)) {
                    ok = false;
                    break;
                }
            }
            if (ok) found = q;
        }
        rep.add("(3) minimal preperiod reaches the periodic ray",
                have_target && found == r.preperiod,
                "measured " + std::to_string(found) + " recorded " +
                    std::to_string(r.preperiod));
        rep.add("(5) preperiod-1 rule recorded", true,
                "preperiod " + std::to_string(r.preperiod));
    }

    // (4) every non-landing point is eventually mapped onto the graph
    bool all_reach = true;
    for (Cx z : sample) {
        if (std::abs(z - pts.back()) < 1e-7) continue;
        bool reached = false;
        Cx w = z;
        for (int it = 0; it < opt.land_budget && !reached; ++it) {
            if (dist_to_graph(w, g) < 10.0 * opt.image_tol) reached = true;
            w = m.eval(w);
            if (!std::isfinite(w.real()) || !std::isfinite(w.imag())) break;
        }
        if (!reached) all_reach = false;
    }
    rep.add("(4) interior points eventually reach the graph", all_reach);
    return rep;
}

// ---------------------------------------------------------------------------
// Serialization: embed a ray as an 'R'-typed edge of a planar graph.

inline int add_ray_edge(PlanarGraph& g, const NewtonRay& r, int base_vertex,
                        int landing_vertex) {
    return g.add_edge(base_vertex, landing_vertex, r.trace, 'R',
                      r.graph_level + r.preperiod);
}

}  // namespace natlas
