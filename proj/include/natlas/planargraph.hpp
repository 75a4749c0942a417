// Embedded graphs with rotation systems: faces, corners, graph maps,
// weak-map promotion, regular-extension checking, and the abstract
// channel-diagram / Newton-graph validators.
//
// Faces and complementary components are always computed from the rotation
// system; geometric traces are advisory anchors only.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "natlas/complexutil.hpp"

namespace natlas {

enum class VertexKind { Fatou, Julia, Infinity, Tree };

inline const char* vertex_kind_name(VertexKind k) {
    switch (k) {
        case VertexKind::Fatou: return "fatou";
        case VertexKind::Julia: return "julia";
        case VertexKind::Infinity: return "infinity";
        case VertexKind::Tree: return "tree";
    }
    return "?";
}

using Polyline = std::vector<SpherePoint>;

struct GraphVertex {
    VertexKind kind = VertexKind::Julia;
    std::optional<SpherePoint> anchor;
};

struct GraphEdge {
    std::array<int, 2> v{-1, -1};
    Polyline trace;      // optional geometric support, oriented v[0] -> v[1]
    char type = 'N';     // N / H / R edge typing for extended graphs
    int level = 0;       // pullback level annotation
};

// An edge-end: side 0 sits at edge.v[0], side 1 at edge.v[1].
struct EdgeEnd {
    int edge = -1;
    int side = 0;
    bool operator==(const EdgeEnd& o) const { return edge == o.edge && side == o.side; }
    bool operator<(const EdgeEnd& o) const {
        return edge != o.edge ? edge < o.edge : side < o.side;
    }
};

struct OrientedEdge {
    int edge = -1;
    bool rev = false;  // travel v[1] -> v[0] when true
    bool operator==(const OrientedEdge& o) const {
        return edge == o.edge && rev == o.rev;
    }
};

class PlanarGraph {
  public:
    std::vector<GraphVertex> vertices;
    std::vector<GraphEdge> edges;
    // rotation[v] lists the edge-ends at v in counterclockwise order
    std::vector<std::vector<EdgeEnd>> rotation;

    int add_vertex(VertexKind kind, std::optional<SpherePoint> anchor = std::nullopt) {
        vertices.push_back({kind, anchor});
        rotation.emplace_back();
        return static_cast<int>(vertices.size()) - 1;
    }

    int add_edge(int a, int b, Polyline trace = {}, char type = 'N', int level = 0) {
        edges.push_back({{a, b}, std::move(trace), type, level});
        return static_cast<int>(edges.size()) - 1;
    }

    int vertex_of(EdgeEnd e) const { return edges[size_t(e.edge)].v[size_t(e.side)]; }

    int valence(int v) const { return static_cast<int>(rotation[size_t(v)].size()); }

    // Append ends in trace-angle order at every vertex. Requires traces.
    void build_rotation_from_traces();

    // Append all ends in edge-id order (for purely combinatorial graphs the
    // caller normally sets rotation explicitly instead).
    void build_rotation_arbitrary() {
        for (auto& r : rotation) r.clear();
        for (int e = 0; e < static_cast<int>(edges.size()); ++e)
            for (int s : {0, 1}) rotation[size_t(edges[size_t(e)].v[size_t(s)])].push_back({e, s});
    }

    bool connected() const;

    int index_of_end(int v, EdgeEnd e) const {
        const auto& r = rotation[size_t(v)];
        for (size_t i = 0; i < r.size(); ++i)
            if (r[i] == e) return static_cast<int>(i);
        return -1;
    }

    // Departure angle of the trace of an end, in the local chart at its vertex
    // (1/z chart at infinity).
    double end_angle(EdgeEnd e) const;
};

// ---------------------------------------------------------------------------
// Faces by rotation-system tracing.

struct Face {
    // boundary walk as oriented edges (face kept on the left, ccw tracing)
    std::vector<OrientedEdge> boundary;
};

struct Faces {
    std::vector<Face> faces;
    // face id of each oriented edge: index [edge][rev]
    std::vector<std::array<int, 2>> face_of;
    // face id of each corner (v, i): the sector between rotation[v][i] and its
    // ccw successor
    std::vector<std::vector<int>> corner_face;
};

namespace pgdetail {

inline EdgeEnd head_end(const PlanarGraph& g, OrientedEdge oe) {
    (void)g;
    return {oe.edge, oe.rev ? 0 : 1};
}
inline EdgeEnd tail_end(const PlanarGraph& g, OrientedEdge oe) {
    (void)g;
    return {oe.edge, oe.rev ? 1 : 0};
}
inline OrientedEdge outgoing(const PlanarGraph& g, EdgeEnd e) {
    return {e.edge, g.edges[size_t(e.edge)].v[1] == g.vertex_of(e) && e.side == 1};
}

}  // namespace pgdetail

inline bool PlanarGraph::connected() const {
    if (vertices.empty()) return true;
    std::vector<bool> seen(vertices.size(), false);
    std::vector<int> stack{0};
    seen[0] = true;
    size_t count = 1;
    while (!stack.empty()) {
        int v = stack.back();
        stack.pop_back();
        for (EdgeEnd e : rotation[size_t(v)]) {
            int w = edges[size_t(e.edge)].v[size_t(1 - e.side)];
            if (!seen[size_t(w)]) {
                seen[size_t(w)] = true;
                ++count;
                stack.push_back(w);
            }
        }
    }
    return count == vertices.size();
}

inline double PlanarGraph::end_angle(EdgeEnd e) const {
    const GraphEdge& ed = edges[size_t(e.edge)];
    if (ed.trace.size() < 2) return 0.0;
    int v = vertex_of(e);
    const GraphVertex& vv = vertices[size_t(v)];
    // walk from this end into the trace until we leave the vertex
    size_t n = ed.trace.size();
    auto at = [&](size_t i) { return e.side == 0 ? ed.trace[i] : ed.trace[n - 1 - i]; };
    SpherePoint base = at(0);
    bool base_inf = base.at_inf || (vv.anchor && vv.anchor->at_inf);
    for (size_t i = 1; i < n; ++i) {
        SpherePoint p = at(i);
        if (base_inf) {
            if (p.at_inf) continue;
            Cx w = 1.0 / p.z;  // chart at infinity
            if (std::abs(w) < 1e-300) continue;
            return std::arg(w);
        }
        if (p.at_inf) return std::arg(Cx{1e12, 0} - base.z);
        Cx diff = p.z - base.z;
        if (std::abs(diff) > 1e-14) return std::arg(diff);
    }
    return 0.0;
}

inline void PlanarGraph::build_rotation_from_traces() {
    for (auto& r : rotation) r.clear();
    for (int e = 0; e < static_cast<int>(edges.size()); ++e)
        for (int s : {0, 1}) rotation[size_t(edges[size_t(e)].v[size_t(s)])].push_back({e, s});
    for (int v = 0; v < static_cast<int>(vertices.size()); ++v) {
        auto& r = rotation[size_t(v)];
        std::stable_sort(r.begin(), r.end(), [&](EdgeEnd a, EdgeEnd b) {
            return wrap_angle(end_angle(a)) < wrap_angle(end_angle(b));
        });
    }
}

struct DisconnectedGraph : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline Faces faces(const PlanarGraph& g) {
    if (!g.connected()) throw DisconnectedGraph("face tracing needs a connected graph");
    Faces out;
    out.face_of.assign(g.edges.size(), {-1, -1});
    out.corner_face.resize(g.vertices.size());
    for (size_t v = 0; v < g.vertices.size(); ++v)
        out.corner_face[v].assign(std::max<size_t>(g.rotation[v].size(), 0), -1);

    for (int e0 = 0; e0 < static_cast<int>(g.edges.size()); ++e0) {
        for (int r0 : {0, 1}) {
            if (out.face_of[size_t(e0)][size_t(r0)] != -1) continue;
            int fid = static_cast<int>(out.faces.size());
            out.faces.emplace_back();
            OrientedEdge cur{e0, r0 == 1};
            do {
                out.faces[size_t(fid)].boundary.push_back(cur);
                out.face_of[size_t(cur.edge)][cur.rev ? 1 : 0] = fid;
                EdgeEnd arrive = pgdetail::head_end(g, cur);
                int h = g.vertex_of(arrive);
                int idx = g.index_of_end(h, arrive);
                int val = g.valence(h);
                int pidx = (idx + val - 1) % val;  // predecessor in ccw order
                EdgeEnd depart = g.rotation[size_t(h)][size_t(pidx)];
                // the corner swept from `depart` ccw to `arrive`
                out.corner_face[size_t(h)][size_t(pidx)] = fid;
                cur = pgdetail::outgoing(g, depart);
            } while (!(cur.edge == e0 && (cur.rev ? 1 : 0) == r0));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Graph maps.

struct GraphMap {
    std::vector<int> vertex_map;           // domain vertex -> codomain vertex
    std::vector<OrientedEdge> edge_map;    // domain edge -> codomain oriented edge
};

// A weak graph map: edges may map over paths of codomain edges (their traces
// cross preimages of codomain vertices). split_params[e] gives the trace
// indices at which edge e must be subdivided, one per interior path vertex.
struct WeakGraphMap {
    std::vector<int> vertex_map;
    std::vector<std::vector<OrientedEdge>> edge_paths;
    std::vector<std::vector<int>> split_params;  // may be empty when no trace
};

inline EdgeEnd map_end(const GraphMap& f, EdgeEnd e) {
    OrientedEdge oe = f.edge_map[size_t(e.edge)];
    int side = e.side;
    if (oe.rev) side = 1 - side;
    return {oe.edge, side};
}

struct MapCheckError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Verify the combinatorial graph-map contract: endpoints of each edge map to
// the endpoints of the image edge with matching orientation.
inline void require_graph_map(const PlanarGraph& dom, const PlanarGraph& cod,
                              const GraphMap& f) {
    if (f.vertex_map.size() != dom.vertices.size() ||
        f.edge_map.size() != dom.edges.size())
        throw MapCheckError("graph map tables have the wrong size");
    for (size_t e = 0; e < dom.edges.size(); ++e) {
        OrientedEdge oe = f.edge_map[e];
        int a = f.vertex_map[size_t(dom.edges[e].v[0])];
        int b = f.vertex_map[size_t(dom.edges[e].v[1])];
        const auto& ie = cod.edges[size_t(oe.edge)];
        int ia = oe.rev ? ie.v[1] : ie.v[0];
        int ib = oe.rev ? ie.v[0] : ie.v[1];
        if (a != ia || b != ib)
            throw MapCheckError("edge image endpoints disagree with vertex map");
    }
}

// ---------------------------------------------------------------------------
// Weak-map promotion (subdivide at preimages of codomain vertices).

struct NonInjectiveOnEdge : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct PromotedMap {
    PlanarGraph domain;  // subdivided domain
    GraphMap map;        // honest graph map on the subdivided domain
    int added_vertices = 0;
};

inline PromotedMap promote_weak_map(const PlanarGraph& dom, const PlanarGraph& cod,
                                    const WeakGraphMap& f) {
    PromotedMap out;
    out.domain.vertices = dom.vertices;
    out.domain.rotation.resize(dom.vertices.size());
    out.map.vertex_map = f.vertex_map;

    // old edge -> list of new edge ids in order along the edge
    std::vector<std::vector<int>> pieces(dom.edges.size());

    for (size_t e = 0; e < dom.edges.size(); ++e) {
        const auto& path = f.edge_paths[e];
        if (path.empty()) throw MapCheckError("empty edge path in weak map");
        const GraphEdge& ed = dom.edges[e];
        size_t nseg = path.size();
        // interior vertices along the path
        std::vector<int> interior;
        for (size_t k = 0; k + 1 < nseg; ++k) {
            OrientedEdge oe = path[k];
            int tail_v = oe.rev ? cod.edges[size_t(oe.edge)].v[0]
                                : cod.edges[size_t(oe.edge)].v[1];
            SpherePoint anchor{};
            bool has_anchor = false;
            if (!f.split_params.empty() && f.split_params[e].size() == nseg - 1 &&
                !ed.trace.empty()) {
                int ti = f.split_params[e][k];
                anchor = ed.trace[size_t(ti)];
                has_anchor = true;
            }
            int nv = out.domain.add_vertex(cod.vertices[size_t(tail_v)].kind,
                                           has_anchor ? std::optional<SpherePoint>(anchor)
                                                      : std::nullopt);
            out.added_vertices++;
            interior.push_back(nv);
        }
        // chop the trace at split params
        std::vector<Polyline> traces(nseg);
        if (!ed.trace.empty() && !f.split_params.empty() &&
            f.split_params[e].size() == nseg - 1) {
            int prev = 0;
            for (size_t k = 0; k < nseg; ++k) {
                int stop = (k + 1 < nseg) ? f.split_params[e][k]
                                          : static_cast<int>(ed.trace.size()) - 1;
                if (stop < prev) throw NonInjectiveOnEdge("split params out of order");
                traces[k].assign(ed.trace.begin() + prev, ed.trace.begin() + stop + 1);
                prev = stop;
            }
        } else if (nseg == 1) {
            traces[0] = ed.trace;
        }
        int prev_v = ed.v[0];
        for (size_t k = 0; k < nseg; ++k) {
            int next_v = (k + 1 < nseg) ? interior[k] : ed.v[1];
            int ne = out.domain.add_edge(prev_v, next_v, std::move(traces[k]), ed.type,
                                         ed.level);
            pieces[e].push_back(ne);
            out.map.edge_map.push_back(path[k]);
            prev_v = next_v;
        }
        for (int iv : interior) {
            (void)iv;
            out.map.vertex_map.push_back(-1);
        }
        // fill interior vertex images
        for (size_t k = 0; k + 1 < nseg; ++k) {
            OrientedEdge oe = path[k];
            int tail_v = oe.rev ? cod.edges[size_t(oe.edge)].v[0]
                                : cod.edges[size_t(oe.edge)].v[1];
            out.map.vertex_map[size_t(interior[k])] = tail_v;
        }
    }

    // rotation: replace each old end with the end of the first/last piece
    for (size_t v = 0; v < dom.vertices.size(); ++v) {
        for (EdgeEnd e : dom.rotation[v]) {
            const auto& ps = pieces[size_t(e.edge)];
            if (e.side == 0)
                out.domain.rotation[v].push_back({ps.front(), 0});
            else
                out.domain.rotation[v].push_back({ps.back(), 1});
        }
    }
    // interior vertices have the obvious two-end rotation
    for (size_t e = 0; e < dom.edges.size(); ++e) {
        const auto& ps = pieces[e];
        for (size_t k = 0; k + 1 < ps.size(); ++k) {
            int v = out.domain.edges[size_t(ps[k])].v[1];
            out.domain.rotation[size_t(v)].push_back({ps[k], 1});
            out.domain.rotation[size_t(v)].push_back({ps[k + 1], 0});
        }
    }
    require_graph_map(out.domain, cod, out.map);
    return out;
}

// ---------------------------------------------------------------------------
// Validation reports.

struct ValidationEntry {
    std::string condition;
    bool pass;
    std::string witness;
};

struct ValidationReport {
    bool verdict = true;
    bool indeterminate = false;
    std::vector<ValidationEntry> entries;
    void add(const std::string& cond, bool pass, const std::string& witness = "") {
        verdict = verdict && pass;
        entries.push_back({cond, pass, witness});
    }
    std::string summary() const {
        std::ostringstream os;
        for (const auto& e : entries)
            os << (e.pass ? "  [pass] " : "  [FAIL] ") << e.condition
               << (e.witness.empty() ? "" : " -- " + e.witness) << "\n";
        return os.str();
    }
};

// ---------------------------------------------------------------------------
// Regular extension criterion (corners must map injectively per codomain
// vertex and domain face; every face boundary must cover a single codomain
// face uniformly).

struct ExtensionReport {
    ValidationReport report;
    bool extension_exists = false;  // some branched-cover extension
    bool regular = false;           // injective on every complementary face
    bool vertices_ok = false;       // monotone wrapping at every vertex
    bool faces_single = false;      // every face maps into one codomain face
    std::vector<int> local_degree;  // per domain vertex
    std::vector<int> face_degree;   // per domain face
    std::vector<int> face_image;    // per domain face: codomain face id
};

inline ExtensionReport check_regular_extension(const PlanarGraph& dom,
                                               const PlanarGraph& cod,
                                               const GraphMap& f) {
    ExtensionReport out;
    require_graph_map(dom, cod, f);
    Faces df = faces(dom);
    Faces cf = faces(cod);
    out.local_degree.assign(dom.vertices.size(), 1);
    out.face_degree.assign(df.faces.size(), 0);
    out.face_image.assign(df.faces.size(), -1);

    // Vertex-level wrapping: image ends must advance monotonically around the
    // image vertex; total advance = local degree * image valence.
    bool vertices_ok = true;
    for (int v = 0; v < static_cast<int>(dom.vertices.size()); ++v) {
        const auto& r = dom.rotation[size_t(v)];
        int w = f.vertex_map[size_t(v)];
        int wval = cod.valence(w);
        if (r.empty()) continue;
        if (wval == 0) {
            vertices_ok = false;
            continue;
        }
        int total = 0;
        bool ok = true;
        for (size_t i = 0; i < r.size(); ++i) {
            EdgeEnd a = r[i];
            EdgeEnd b = r[(i + 1) % r.size()];
            int ia = cod.index_of_end(w, map_end(f, a));
            int ib = cod.index_of_end(w, map_end(f, b));
            if (ia < 0 || ib < 0) {
                ok = false;
                break;
            }
            int gap = (ib - ia) % wval;
            if (gap < 0) gap += wval;
            if (gap == 0 && r.size() > 1) gap = wval;  // fold onto same end: full turn
            total += gap;
        }
        if (!ok || total % wval != 0 || total == 0) {
            if (r.size() == 1) {
                out.local_degree[size_t(v)] = 1;  // endpoint: single 2pi sector
                continue;
            }
            vertices_ok = false;
            out.report.add("vertex wrapping at vertex " + std::to_string(v), false);
            continue;
        }
        out.local_degree[size_t(v)] = std::max(1, total / wval);
    }
    out.report.add("vertex rotations wrap monotonically", vertices_ok);

    // Face-level: image corners of each domain face must lie in a single
    // codomain face and cover its corners uniformly.
    auto corner_image = [&](int v, int i) -> std::pair<int, int> {
        int w = f.vertex_map[size_t(v)];
        EdgeEnd img = map_end(f, dom.rotation[size_t(v)][size_t(i)]);
        int wi = cod.index_of_end(w, img);
        return {w, wi};
    };

    bool faces_ok = true;
    bool all_single = true;
    bool injective_ok = true;
    for (int fid = 0; fid < static_cast<int>(df.faces.size()); ++fid) {
        std::map<std::pair<int, int>, int> hits;  // codomain corner -> count
        int image_face = -1;
        bool single = true;
        for (int v = 0; v < static_cast<int>(dom.vertices.size()); ++v) {
            for (int i = 0; i < static_cast<int>(dom.rotation[size_t(v)].size()); ++i) {
                if (df.corner_face[size_t(v)][size_t(i)] != fid) continue;
                auto [w, wi] = corner_image(v, i);
                if (wi < 0) {
                    single = false;
                    continue;
                }
                hits[{w, wi}]++;
                int cfid = cf.corner_face[size_t(w)][size_t(wi)];
                if (image_face == -1) image_face = cfid;
                if (cfid != image_face) single = false;
            }
        }
        if (!single || image_face == -1) {
            faces_ok = false;
            all_single = false;
            out.report.add("face " + std::to_string(fid) + " maps into one codomain face",
                           false);
            continue;
        }
        out.face_image[size_t(fid)] = image_face;
        // uniform multiplicity over all corners of the image face
        int expect = -1;
        bool uniform = true;
        for (int w = 0; w < static_cast<int>(cod.vertices.size()); ++w)
            for (int i = 0; i < static_cast<int>(cod.rotation[size_t(w)].size()); ++i) {
                if (cf.corner_face[size_t(w)][size_t(i)] != image_face) continue;
                auto it = hits.find({w, i});
                int c = (it == hits.end()) ? 0 : it->second;
                if (expect == -1) expect = c;
                if (c != expect) uniform = false;
            }
        if (!uniform || expect <= 0) {
            faces_ok = false;
            out.report.add("face " + std::to_string(fid) + " covers its image uniformly",
                           false, "non-uniform corner multiplicity");
            continue;
        }
        out.face_degree[size_t(fid)] = expect;

        // injectivity per codomain vertex: corners of this face at preimages of
        // a common vertex may not share an image corner
        std::map<std::pair<int, int>, int> seen;
        for (int v = 0; v < static_cast<int>(dom.vertices.size()); ++v)
            for (int i = 0; i < static_cast<int>(dom.rotation[size_t(v)].size()); ++i) {
                if (df.corner_face[size_t(v)][size_t(i)] != fid) continue;
                auto key = corner_image(v, i);
                if (seen.count(key)) {
                    injective_ok = false;
                    out.report.add("corner injectivity", false,
                                   "face " + std::to_string(fid) + " hits corner (" +
                                       std::to_string(key.first) + "," +
                                       std::to_string(key.second) + ") twice");
                }
                seen[key] = v;
            }
    }
    out.report.add("face boundaries cover single codomain faces", faces_ok);

    out.extension_exists = vertices_ok && faces_ok;
    out.vertices_ok = vertices_ok;
    out.faces_single = all_single;
    bool all_degree_one = true;
    for (int k : out.face_degree)
        if (k != 1) all_degree_one = false;
    out.regular = out.extension_exists && all_degree_one && injective_ok;
    out.report.add("regular extension (injective on faces)", out.regular);
    // the overall verdict tracks plain existence; regularity is reported
    out.report.verdict = out.extension_exists;
    return out;
}

// ---------------------------------------------------------------------------
// Abstract channel diagram (degree-d star conditions).

inline ValidationReport validate_abstract_channel_diagram(const PlanarGraph& g,
                                                          int v_inf, int d) {
    ValidationReport rep;
    int l = static_cast<int>(g.edges.size());
    rep.add("(1) edge count l <= 2d-2", l <= 2 * d - 2,
            "l=" + std::to_string(l) + " d=" + std::to_string(d));
    bool joins = true;
    for (const auto& e : g.edges) {
        bool touches_inf = e.v[0] == v_inf || e.v[1] == v_inf;
        bool other_finite = e.v[0] != v_inf || e.v[1] != v_inf;
        if (!touches_inf || !other_finite) joins = false;
    }
    rep.add("(2) each edge joins v_inf to a root vertex", joins);
    bool all_connected = g.vertices.size() == size_t(d) + 1;
    for (int v = 0; v < static_cast<int>(g.vertices.size()); ++v) {
        if (v == v_inf) continue;
        if (g.valence(v) < 1) all_connected = false;
    }
    rep.add("(3) every root vertex meets an edge", all_connected,
            "vertices=" + std::to_string(g.vertices.size()));

    // (4) parallel edge pairs must separate vertices on both sides
    bool cond4 = true;
    std::string witness4;
    for (int e1 = 0; e1 < l && cond4; ++e1)
        for (int e2 = e1 + 1; e2 < l && cond4; ++e2) {
            int a1 = g.edges[size_t(e1)].v[0] == v_inf ? g.edges[size_t(e1)].v[1]
                                                       : g.edges[size_t(e1)].v[0];
            int a2 = g.edges[size_t(e2)].v[0] == v_inf ? g.edges[size_t(e2)].v[1]
                                                       : g.edges[size_t(e2)].v[0];
            if (a1 != a2) continue;
            // sides determined by cyclic position at v_inf between the two ends
            const auto& r = g.rotation[size_t(v_inf)];
            int i1 = -1, i2 = -1;
            for (int i = 0; i < static_cast<int>(r.size()); ++i) {
                if (r[size_t(i)].edge == e1) i1 = i;
                if (r[size_t(i)].edge == e2) i2 = i;
            }
            std::set<int> sideA, sideB;
            int n = static_cast<int>(r.size());
            for (int i = 0; i < n; ++i) {
                if (i == i1 || i == i2) continue;
                int other = g.edges[size_t(r[size_t(i)].edge)].v[0] == v_inf
                                ? g.edges[size_t(r[size_t(i)].edge)].v[1]
                                : g.edges[size_t(r[size_t(i)].edge)].v[0];
                if (other == a1) continue;  // boundary vertex
                bool between = (i1 < i2) ? (i > i1 && i < i2) : (i > i1 || i < i2);
                (between ? sideA : sideB).insert(other);
            }
            if (sideA.empty() || sideB.empty()) {
                cond4 = false;
                witness4 = "parallel pair (" + std::to_string(e1) + "," +
                           std::to_string(e2) + ") leaves one side empty";
            }
        }
    rep.add("(4) parallel edges separate vertices on both sides", cond4, witness4);
    return rep;
}

// ---------------------------------------------------------------------------
// Abstract Newton graph of level N (self-map formulation; the codomain used
// for extension checking is the level <= N-1 subgraph).

namespace pgdetail {

// Extract the subgraph with the given edge ids; returns the vertex/edge maps.
struct Subgraph {
    PlanarGraph graph;
    std::vector<int> vertex_to_sub;  // -1 when absent
    std::vector<int> edge_to_sub;
};

inline Subgraph subgraph_of(const PlanarGraph& g, const std::vector<bool>& keep_edge) {
    Subgraph out;
    out.vertex_to_sub.assign(g.vertices.size(), -1);
    out.edge_to_sub.assign(g.edges.size(), -1);
    for (size_t e = 0; e < g.edges.size(); ++e) {
        if (!keep_edge[e]) continue;
        for (int s : {0, 1}) {
            int v = g.edges[e].v[size_t(s)];
            if (out.vertex_to_sub[size_t(v)] == -1)
                out.vertex_to_sub[size_t(v)] =
                    out.graph.add_vertex(g.vertices[size_t(v)].kind, g.vertices[size_t(v)].anchor);
        }
    }
    for (size_t e = 0; e < g.edges.size(); ++e) {
        if (!keep_edge[e]) continue;
        const auto& ed = g.edges[e];
        out.edge_to_sub[e] =
            out.graph.add_edge(out.vertex_to_sub[size_t(ed.v[0])],
                               out.vertex_to_sub[size_t(ed.v[1])], ed.trace, ed.type, ed.level);
    }
    // rotation: induced order
    for (size_t v = 0; v < g.vertices.size(); ++v) {
        int sv = out.vertex_to_sub[v];
        if (sv == -1) continue;
        for (EdgeEnd e : g.rotation[v])
            if (keep_edge[size_t(e.edge)])
                out.graph.rotation[size_t(sv)].push_back({out.edge_to_sub[size_t(e.edge)], e.side});
    }
    return out;
}

// Minimal n with f^n(e) an edge of the designated subset; -1 when unbounded.
inline std::vector<int> edge_levels(const PlanarGraph& g, const GraphMap& f,
                                    const std::vector<bool>& base_edges) {
    std::vector<int> level(g.edges.size(), -1);
    for (size_t e = 0; e < g.edges.size(); ++e) {
        int cur = static_cast<int>(e);
        for (int n = 0; n <= static_cast<int>(g.edges.size()); ++n) {
            if (base_edges[size_t(cur)]) {
                level[e] = n;
                break;
            }
            cur = f.edge_map[size_t(cur)].edge;
        }
    }
    return level;
}

}  // namespace pgdetail

// g: the graph with self graph map f. delta_edges marks the channel-diagram
// edges; v_inf the infinity vertex; d the channel degree; N the level.
inline ValidationReport validate_abstract_newton_graph(const PlanarGraph& g,
                                                       const GraphMap& f, int N,
                                                       const std::vector<bool>& delta_edges,
                                                       int v_inf, int d) {
    ValidationReport rep;
    try {
        require_graph_map(g, g, f);
    } catch (const MapCheckError& err) {
        rep.add("input is a graph map", false, err.what());
        return rep;
    }

    // --- (1) channel diagram sub-object, fixed pointwise
    auto delta_sub = pgdetail::subgraph_of(g, delta_edges);
    int sub_vinf = delta_sub.vertex_to_sub[size_t(v_inf)];
    ValidationReport cd = (sub_vinf >= 0)
                              ? validate_abstract_channel_diagram(delta_sub.graph, sub_vinf, d)
                              : ValidationReport{};
    if (sub_vinf < 0) cd.add("v_inf lies on the channel diagram", false);
    bool fixes = true;
    for (size_t e = 0; e < g.edges.size(); ++e)
        if (delta_edges[e]) {
            if (f.edge_map[e].edge != static_cast<int>(e)) fixes = false;
            for (int s : {0, 1})
                if (f.vertex_map[size_t(g.edges[e].v[size_t(s)])] != g.edges[e].v[size_t(s)])
                    fixes = false;
        }
    bool proper = false;
    for (size_t e = 0; e < g.edges.size(); ++e)
        if (!delta_edges[e]) proper = true;
    rep.add("(1) abstract channel diagram fixed pointwise", cd.verdict && fixes && proper,
            cd.verdict ? (fixes ? (proper ? "" : "channel diagram not proper subgraph")
                                : "map does not fix the channel diagram")
                       : "channel axioms fail");

    // --- (2) extension of the level map exists
    std::vector<int> level = pgdetail::edge_levels(g, f, delta_edges);
    bool levels_finite = true;
    int max_level = 0;
    for (int lv : level) {
        if (lv < 0) levels_finite = false;
        max_level = std::max(max_level, lv);
    }
    if (!levels_finite) {
        rep.add("(2) every edge eventually maps into the channel diagram", false);
        return rep;
    }

    std::vector<bool> lower(g.edges.size(), false);
    for (size_t e = 0; e < g.edges.size(); ++e) lower[e] = level[e] <= N - 1;
    auto cod = pgdetail::subgraph_of(g, lower);
    // translate f to a map g -> cod
    GraphMap flow;
    flow.vertex_map.resize(g.vertices.size());
    flow.edge_map.resize(g.edges.size());
    bool translatable = true;
    for (size_t v = 0; v < g.vertices.size(); ++v) {
        int w = cod.vertex_to_sub[size_t(f.vertex_map[v])];
        if (w < 0) translatable = false;
        flow.vertex_map[v] = w;
    }
    for (size_t e = 0; e < g.edges.size(); ++e) {
        OrientedEdge oe = f.edge_map[e];
        int se = cod.edge_to_sub[size_t(oe.edge)];
        if (se < 0) translatable = false;
        flow.edge_map[e] = {se, oe.rev};
    }
    if (!translatable) {
        rep.add("(2) self map lowers the level", false,
                "an edge maps to level >= N");
        return rep;
    }
    ExtensionReport ext = check_regular_extension(g, cod.graph, flow);
    if (!ext.extension_exists) {
        // no decision procedure for wilder non-regular extensions
        rep.indeterminate = true;
        rep.add("(2) branched-cover extension exists", false,
                "INDETERMINATE: corner analysis found no consistent extension");
        return rep;
    }
    rep.add("(2) branched-cover extension exists", true,
            ext.regular ? "regular" : "non-regular (critical points off the graph)");

    // --- (3) g is the Delta-component of the N-fold pullback: completeness
    // counting plus the level bound.
    bool level_bound = max_level <= N && max_level == N;
    bool complete = true;
    std::string complete_witness;
    for (int v = 0; v < static_cast<int>(g.vertices.size()) && complete; ++v) {
        int w = f.vertex_map[size_t(v)];
        int dv = ext.local_degree[size_t(v)];
        // count preimage ends at v over each end at w
        std::map<std::pair<int, int>, int> count;
        for (EdgeEnd e : g.rotation[size_t(v)]) {
            EdgeEnd img{f.edge_map[size_t(e.edge)].edge,
                        f.edge_map[size_t(e.edge)].rev ? 1 - e.side : e.side};
            count[{img.edge, img.side}]++;
        }
        for (EdgeEnd we : g.rotation[size_t(w)]) {
            if (level[size_t(we.edge)] > N - 1) continue;  // pullback would exceed level N
            int c = 0;
            auto it = count.find({we.edge, we.side});
            if (it != count.end()) c = it->second;
            if (c != dv) {
                complete = false;
                complete_witness = "vertex " + std::to_string(v) + " misses preimages of edge " +
                                   std::to_string(we.edge);
            }
        }
    }
    rep.add("(3) component of the N-fold pullback of the channel diagram",
            level_bound && complete,
            !level_bound ? ("max edge level " + std::to_string(max_level) + " != N")
                         : complete_witness);

    // --- (4) roots lie on closure(g \ delta) with deg-1 channel edges
    bool cond4 = true;
    std::string w4;
    for (int v = 0; v < static_cast<int>(g.vertices.size()); ++v) {
        if (v == v_inf) continue;
        if (g.vertices[size_t(v)].kind != VertexKind::Fatou) continue;
        // channel-diagram root vertices: those meeting a delta edge
        bool on_delta = false;
        for (EdgeEnd e : g.rotation[size_t(v)])
            if (delta_edges[size_t(e.edge)]) on_delta = true;
        if (!on_delta) continue;
        int delta_count = 0, outside = 0;
        for (EdgeEnd e : g.rotation[size_t(v)]) {
            if (delta_edges[size_t(e.edge)])
                ++delta_count;
            else
                ++outside;
        }
        int dv = ext.local_degree[size_t(v)];
        if (outside == 0) {
            cond4 = false;
            w4 = "root vertex " + std::to_string(v) + " isolated in the channel diagram";
        }
        if (delta_count != dv - 1 || dv - 1 < 1) {
            cond4 = false;
            w4 = "root vertex " + std::to_string(v) + " has " + std::to_string(delta_count) +
                 " channel edges, local degree " + std::to_string(dv);
        }
    }
    rep.add("(4) each root in closure(graph minus channel), deg-1 channel edges", cond4, w4);

    // --- (5) sum of (deg - 1) bounded by 2d-2
    int sum = 0;
    for (int v = 0; v < static_cast<int>(g.vertices.size()); ++v)
        sum += ext.local_degree[size_t(v)] - 1;
    rep.add("(5) total vertex criticality at most 2d-2", sum <= 2 * d - 2,
            "sum=" + std::to_string(sum));

    // --- (6) closure(g \ delta) connected
    std::vector<bool> outside_edges(g.edges.size(), false);
    bool any_outside = false;
    for (size_t e = 0; e < g.edges.size(); ++e) {
        outside_edges[e] = !delta_edges[e];
        any_outside = any_outside || outside_edges[e];
    }
    bool cond6 = true;
    if (any_outside) {
        auto sub = pgdetail::subgraph_of(g, outside_edges);
        cond6 = sub.graph.connected();
    }
    rep.add("(6) closure(graph minus channel diagram) connected", cond6);
    return rep;
}

}  // namespace natlas
