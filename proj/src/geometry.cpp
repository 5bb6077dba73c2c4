#include "perfhom/geometry.hpp"

#include "perfhom/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_map>

namespace perfhom {

namespace {

constexpr double kPi = 3.14159265358979323846;

double dist(const Vec2& a, const Vec2& b) { return std::hypot(a.x - b.x, a.y - b.y); }

double signed_area(const Vec2& a, const Vec2& b, const Vec2& c) {
    return 0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y));
}

} // namespace

double Hole::area() const {
    switch (kind) {
        case Kind::None: return 0.0;
        case Kind::Disk: return kPi * radius * radius;
        case Kind::Polygon: {
            double s = 0.0;
            const std::size_t n = vertices.size();
            for (std::size_t i = 0; i < n; ++i) {
                const Vec2& p = vertices[i];
                const Vec2& q = vertices[(i + 1) % n];
                s += p.x * q.y - q.x * p.y;
            }
            return 0.5 * std::fabs(s);
        }
    }
    return 0.0;
}

bool Hole::contains(double x, double y) const {
    switch (kind) {
        case Kind::None: return false;
        case Kind::Disk: return std::hypot(x - center.x, y - center.y) < radius;
        case Kind::Polygon: {
            // ray casting
            bool in = false;
            const std::size_t n = vertices.size();
            for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
                const Vec2& a = vertices[i];
                const Vec2& b = vertices[j];
                if ((a.y > y) != (b.y > y) &&
                    x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x)
                    in = !in;
            }
            return in;
        }
    }
    return false;
}

double PeriodicCell::hole_clearance() const {
    if (hole.empty()) return std::numeric_limits<double>::infinity();
    double cl = std::numeric_limits<double>::infinity();
    if (hole.kind == Hole::Kind::Disk) {
        cl = std::min({hole.center.x - hole.radius, l1 - hole.center.x - hole.radius,
                       hole.center.y - hole.radius, l2 - hole.center.y - hole.radius});
    } else {
        for (const Vec2& v : hole.vertices)
            cl = std::min({cl, v.x, l1 - v.x, v.y, l2 - v.y});
    }
    return cl;
}

void PeriodicCell::validate() const {
    if (l1 <= 0.0 || l2 <= 0.0) throw GeometryError("cell lengths must be positive");
    if (hole.empty()) return;
    if (hole.kind == Hole::Kind::Disk && hole.radius <= 0.0)
        throw GeometryError("disk hole radius must be positive");
    if (hole.kind == Hole::Kind::Polygon && hole.vertices.size() < 3)
        throw GeometryError("polygon hole needs at least 3 vertices");
    if (hole_clearance() <= 0.0)
        throw GeometryError("hole closure must lie strictly inside the open cell");
}

Mat2 PeriodicCell::eval(double y1, double y2) const {
    double u = std::fmod(y1, l1);
    if (u < 0.0) u += l1;
    double v = std::fmod(y2, l2);
    if (v < 0.0) v += l2;
    return coefficient(u, v);
}

CoefficientFn micro_coefficient(const PeriodicCell& cell, double eps) {
    const PeriodicCell c = cell; // value capture; meshes/coefficients are immutable
    return [c, eps](double x, double y) { return c.eval(x / eps, y / eps); };
}

const char* edge_tag_name(EdgeTag tag) {
    switch (tag) {
        case EdgeTag::DirichletOuter: return "DIRICHLET_OUTER";
        case EdgeTag::NeumannHole: return "NEUMANN_HOLE";
        case EdgeTag::PeriodicX: return "PERIODIC_X";
        case EdgeTag::PeriodicY: return "PERIODIC_Y";
    }
    return "?";
}

double TriMesh::tri_area(int t) const {
    const auto& tr = tris[static_cast<std::size_t>(t)];
    return signed_area(nodes[tr[0]], nodes[tr[1]], nodes[tr[2]]);
}

double TriMesh::area() const {
    double s = 0.0;
    for (int t = 0; t < n_tris(); ++t) s += tri_area(t);
    return s;
}

double TriMesh::max_tri_diameter() const {
    double d = 0.0;
    for (const auto& tr : tris) {
        d = std::max({d, dist(nodes[tr[0]], nodes[tr[1]]), dist(nodes[tr[1]], nodes[tr[2]]),
                      dist(nodes[tr[2]], nodes[tr[0]])});
    }
    return d;
}

int CellMesh::n_hole_edges() const {
    int n = 0;
    for (const auto& e : mesh.edges)
        if (e.tag == EdgeTag::NeumannHole) ++n;
    return n;
}

int CellMesh::n_periodic_dofs() const {
    int n = 0;
    for (int i = 0; i < mesh.n_nodes(); ++i)
        if (periodic_master[i] == i) ++n;
    return n;
}

// ---------------------------------------------------------------------------
// mesh construction
// ---------------------------------------------------------------------------

namespace {

// Builder accumulating nodes/triangles across cell blocks.  Lattice nodes are
// shared between blocks through exact integer keys; ring and hole nodes are
// block-local.
struct Builder {
    std::vector<Vec2> nodes;
    std::vector<int> lattice_i, lattice_j; // global lattice coords, -1 off lattice
    std::vector<std::array<int, 3>> tris;
    std::vector<int> tri_hole; // hole id or -1
    std::unordered_map<std::int64_t, int> lattice;
    std::vector<std::vector<std::pair<int, int>>> hole_loops; // CCW boundary edges per hole

    int lattice_node(std::int64_t gi, std::int64_t gj, double x, double y) {
        const std::int64_t key = gi * 0x40000000ll + gj;
        auto it = lattice.find(key);
        if (it != lattice.end()) return it->second;
        const int id = static_cast<int>(nodes.size());
        nodes.push_back({x, y});
        lattice_i.push_back(static_cast<int>(gi));
        lattice_j.push_back(static_cast<int>(gj));
        lattice.emplace(key, id);
        return id;
    }

    int free_node(double x, double y) {
        const int id = static_cast<int>(nodes.size());
        nodes.push_back({x, y});
        lattice_i.push_back(-1);
        lattice_j.push_back(-1);
        return id;
    }

    void tri(int a, int b, int c, int hole_id = -1) {
        tris.push_back({a, b, c});
        tri_hole.push_back(hole_id);
    }

    // split quad (a,b,c,d) given in CCW order along its shorter diagonal;
    // ties fall back to the parity bit so symmetric meshes stay symmetric
    void quad(int a, int b, int c, int d, int parity, int hole_id = -1) {
        const double dac = dist(nodes[a], nodes[c]);
        const double dbd = dist(nodes[b], nodes[d]);
        const double scale = std::max(dac, dbd);
        bool use_ac;
        if (std::fabs(dac - dbd) > 1e-9 * scale)
            use_ac = dac < dbd;
        else
            use_ac = (parity % 2) == 0;
        if (use_ac) {
            tri(a, b, c, hole_id);
            tri(a, c, d, hole_id);
        } else {
            tri(a, b, d, hole_id);
            tri(b, c, d, hole_id);
        }
    }
};

struct MeshFitError {};

// one cell block in world coordinates
struct Block {
    double ox = 0.0, oy = 0.0; // domain origin
    double sx = 1.0, sy = 1.0; // full-cell world extents
    int kx = 0, ky = 0;        // cell index
    int nx = 1, ny = 1;        // subdivisions of this block
    std::int64_t gi0 = 0, gj0 = 0; // global lattice offsets of the block corner
    bool partial_x = false, partial_y = false;
    double wx = 0.0, wy = 0.0; // block extents when partial

    double node_x(int i) const {
        if (!partial_x) return ox + sx * (kx + static_cast<double>(i) / nx);
        if (i == 0) return ox + sx * static_cast<double>(kx);
        return ox + sx * static_cast<double>(kx) + wx * (static_cast<double>(i) / nx);
    }
    double node_y(int j) const {
        if (!partial_y) return oy + sy * (ky + static_cast<double>(j) / ny);
        if (j == 0) return oy + sy * static_cast<double>(ky);
        return oy + sy * static_cast<double>(ky) + wy * (static_cast<double>(j) / ny);
    }
    std::int64_t gi(int i) const { return gi0 + i; }
    std::int64_t gj(int j) const { return gj0 + j; }
};

struct HoleWorld {
    Hole::Kind kind = Hole::Kind::Disk;
    Vec2 center;
    double radius = 0.0;
    std::vector<Vec2> vertices;
};

// boundary point of the hole along the ray center -> p
Vec2 ray_to_hole(const HoleWorld& hw, const Vec2& p) {
    const double dx = p.x - hw.center.x, dy = p.y - hw.center.y;
    const double len = std::hypot(dx, dy);
    if (len <= 0.0) throw MeshFitError{};
    if (hw.kind == Hole::Kind::Disk)
        return {hw.center.x + hw.radius * dx / len, hw.center.y + hw.radius * dy / len};
    // polygon: farthest intersection of the ray with the boundary (star-shaped)
    double best = -1.0;
    const std::size_t n = hw.vertices.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Vec2& a = hw.vertices[i];
        const Vec2& b = hw.vertices[(i + 1) % n];
        const double ex = b.x - a.x, ey = b.y - a.y;
        const double det = dx * ey - dy * ex;
        if (std::fabs(det) < 1e-30) continue;
        const double t = ((a.x - hw.center.x) * ey - (a.y - hw.center.y) * ex) / det;
        const double s = (dx * (a.y - hw.center.y) - dy * (a.x - hw.center.x)) / (-det);
        if (t > 0.0 && s >= -1e-12 && s <= 1.0 + 1e-12) best = std::max(best, t);
    }
    if (best <= 0.0 || best >= 1.0) throw MeshFitError{};
    return {hw.center.x + best * dx, hw.center.y + best * dy};
}

// Emit one cell block: structured checkerboard squares, plus a boundary-fitted
// ring around the hole and (optionally) a filled hole interior.
void emit_block(Builder& b, const Block& blk, const HoleWorld* hole, bool fill_hole,
                int hole_id, double target_h) {
    int ia = 0, ib = 0, ja = 0, jb = 0; // ring box in local grid indices, [ia,ib) x [ja,jb)
    const bool with_hole = hole != nullptr;
    const double hx = blk.partial_x ? blk.wx / blk.nx : blk.sx / blk.nx;
    const double hy = blk.partial_y ? blk.wy / blk.ny : blk.sy / blk.ny;

    if (with_hole) {
        // hole bounding box in local grid units
        double bx0, bx1, by0, by1;
        if (hole->kind == Hole::Kind::Disk) {
            bx0 = hole->center.x - hole->radius;
            bx1 = hole->center.x + hole->radius;
            by0 = hole->center.y - hole->radius;
            by1 = hole->center.y + hole->radius;
        } else {
            bx0 = by0 = std::numeric_limits<double>::infinity();
            bx1 = by1 = -bx0;
            for (const Vec2& v : hole->vertices) {
                bx0 = std::min(bx0, v.x);
                bx1 = std::max(bx1, v.x);
                by0 = std::min(by0, v.y);
                by1 = std::max(by1, v.y);
            }
        }
        const double x_cell = blk.node_x(0), y_cell = blk.node_y(0);
        auto lo_index = [](double v, double origin, double step) {
            int k = static_cast<int>(std::floor((v - origin) / step));
            if (v - (origin + k * step) < 0.3 * step) --k; // keep a positive gap
            return k;
        };
        auto hi_index = [](double v, double origin, double step) {
            int k = static_cast<int>(std::ceil((v - origin) / step));
            if ((origin + k * step) - v < 0.3 * step) ++k;
            return k;
        };
        ia = lo_index(bx0, x_cell, hx);
        ib = hi_index(bx1, x_cell, hx);
        ja = lo_index(by0, y_cell, hy);
        jb = hi_index(by1, y_cell, hy);
        if ((ib - ia) % 2 != 0) { // keep side counts even for symmetry
            if (ia > 1) --ia;
            else ++ib;
        }
        if ((jb - ja) % 2 != 0) {
            if (ja > 1) --ja;
            else ++jb;
        }
        if (ia < 1 || ja < 1 || ib > blk.nx - 1 || jb > blk.ny - 1) throw MeshFitError{};
    }

    // structured squares outside the ring box
    for (int j = 0; j < blk.ny; ++j) {
        for (int i = 0; i < blk.nx; ++i) {
            if (with_hole && i >= ia && i < ib && j >= ja && j < jb) continue;
            const int n00 = b.lattice_node(blk.gi(i), blk.gj(j), blk.node_x(i), blk.node_y(j));
            const int n10 =
                b.lattice_node(blk.gi(i + 1), blk.gj(j), blk.node_x(i + 1), blk.node_y(j));
            const int n11 = b.lattice_node(blk.gi(i + 1), blk.gj(j + 1), blk.node_x(i + 1),
                                           blk.node_y(j + 1));
            const int n01 =
                b.lattice_node(blk.gi(i), blk.gj(j + 1), blk.node_x(i), blk.node_y(j + 1));
            if ((blk.gi(i) + blk.gj(j)) % 2 == 0) {
                b.tri(n00, n10, n11);
                b.tri(n00, n11, n01);
            } else {
                b.tri(n00, n10, n01);
                b.tri(n10, n11, n01);
            }
        }
    }
    if (!with_hole) return;

    // outer loop: box boundary lattice nodes, CCW from the (ib, ja) corner
    std::vector<int> outer;
    std::vector<Vec2> outer_pos;
    auto push_outer = [&](int i, int j) {
        outer.push_back(b.lattice_node(blk.gi(i), blk.gj(j), blk.node_x(i), blk.node_y(j)));
        outer_pos.push_back({blk.node_x(i), blk.node_y(j)});
    };
    for (int j = ja; j < jb; ++j) push_outer(ib, j);
    for (int i = ib; i > ia; --i) push_outer(i, jb);
    for (int j = jb; j > ja; --j) push_outer(ia, j);
    for (int i = ia; i < ib; ++i) push_outer(i, ja);
    const int K = static_cast<int>(outer.size());

    // inner loop: radial projection onto the hole boundary
    std::vector<int> inner(K);
    std::vector<Vec2> inner_pos(K);
    for (int k = 0; k < K; ++k) inner_pos[k] = ray_to_hole(*hole, outer_pos[k]);
    if (hole->kind == Hole::Kind::Disk) {
        // place the polygon vertices at the radius that preserves the disk
        // area exactly; an inscribed polygon would bias the volume fraction
        // of every tiled mesh by O(K^-2), independently of eps
        double sinsum = 0.0;
        for (int k = 0; k < K; ++k) {
            const Vec2& a = inner_pos[k];
            const Vec2& c = inner_pos[(k + 1) % K];
            const double t0 = std::atan2(a.y - hole->center.y, a.x - hole->center.x);
            const double t1 = std::atan2(c.y - hole->center.y, c.x - hole->center.x);
            double dt = t1 - t0;
            while (dt < 0) dt += 2.0 * 3.14159265358979323846;
            while (dt >= 2.0 * 3.14159265358979323846) dt -= 2.0 * 3.14159265358979323846;
            sinsum += std::sin(dt);
        }
        if (sinsum <= 0.0) throw MeshFitError{};
        const double rho =
            hole->radius * std::sqrt(2.0 * 3.14159265358979323846 / sinsum);
        for (int k = 0; k < K; ++k) {
            const double dx = inner_pos[k].x - hole->center.x;
            const double dy = inner_pos[k].y - hole->center.y;
            const double len = std::hypot(dx, dy);
            inner_pos[k] = {hole->center.x + rho * dx / len, hole->center.y + rho * dy / len};
        }
    }
    double gap_sum = 0.0;
    for (int k = 0; k < K; ++k) {
        const double g = dist(inner_pos[k], outer_pos[k]);
        if (g < 1e-12) throw MeshFitError{};
        gap_sum += g;
        inner[k] = b.free_node(inner_pos[k].x, inner_pos[k].y);
    }
    (void)target_h;
    const double h_avg = 0.5 * (hx + hy);
    const double gap_avg = gap_sum / K;
    const int L =
        std::max(1, static_cast<int>(std::lround(gap_avg / std::max(h_avg, 1e-300))));

    // layered ring between hole boundary (t=0) and box (t=L)
    std::vector<int> prev = inner;
    for (int t = 1; t <= L; ++t) {
        std::vector<int> cur(K);
        for (int k = 0; k < K; ++k) {
            if (t == L) {
                cur[k] = outer[k];
            } else {
                const double s = static_cast<double>(t) / L;
                cur[k] = b.free_node(inner_pos[k].x + s * (outer_pos[k].x - inner_pos[k].x),
                                     inner_pos[k].y + s * (outer_pos[k].y - inner_pos[k].y));
            }
        }
        for (int k = 0; k < K; ++k) {
            const int kn = (k + 1) % K;
            b.quad(prev[k], cur[k], cur[kn], prev[kn], k + t);
        }
        prev = cur;
    }

    // record the hole boundary loop (CCW)
    if (hole_id >= 0) {
        if (static_cast<int>(b.hole_loops.size()) <= hole_id)
            b.hole_loops.resize(hole_id + 1);
        for (int k = 0; k < K; ++k)
            b.hole_loops[hole_id].push_back({inner[k], inner[(k + 1) % K]});
    }

    if (!fill_hole) return;

    // hole interior, only present in the background (filled) mesh
    if (hole->kind == Hole::Kind::Disk) {
        const int Lr = std::max(1, static_cast<int>(std::lround(hole->radius / h_avg)));
        const int center = b.free_node(hole->center.x, hole->center.y);
        std::vector<int> ring_out = inner; // radius r
        for (int m = Lr - 1; m >= 1; --m) {
            const double s = static_cast<double>(m) / Lr;
            std::vector<int> ring_in(K);
            for (int k = 0; k < K; ++k)
                ring_in[k] = b.free_node(hole->center.x + s * (inner_pos[k].x - hole->center.x),
                                         hole->center.y + s * (inner_pos[k].y - hole->center.y));
            for (int k = 0; k < K; ++k) {
                const int kn = (k + 1) % K;
                b.quad(ring_in[k], ring_out[k], ring_out[kn], ring_in[kn], k + m, hole_id);
            }
            ring_out = ring_in;
        }
        for (int k = 0; k < K; ++k)
            b.tri(center, ring_out[k], ring_out[(k + 1) % K], hole_id);
    } else {
        const int center = b.free_node(hole->center.x, hole->center.y);
        for (int k = 0; k < K; ++k)
            b.tri(center, inner[k], inner[(k + 1) % K], hole_id);
    }
}

// sort nodes lexicographically by coordinates (ties keep insertion order) and
// remap triangle/edge indices; returns old->new permutation
std::vector<int> sort_nodes(TriMesh& mesh) {
    const int n = mesh.n_nodes();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (mesh.nodes[a].x != mesh.nodes[b].x) return mesh.nodes[a].x < mesh.nodes[b].x;
        return mesh.nodes[a].y < mesh.nodes[b].y;
    });
    std::vector<int> perm(n);
    for (int r = 0; r < n; ++r) perm[order[r]] = r;
    std::vector<Vec2> sorted(n);
    for (int i = 0; i < n; ++i) sorted[perm[i]] = mesh.nodes[i];
    mesh.nodes = std::move(sorted);
    for (auto& t : mesh.tris)
        for (int& v : t) v = perm[v];
    for (auto& e : mesh.edges) {
        e.a = perm[e.a];
        e.b = perm[e.b];
    }
    return perm;
}

void check_positive_areas(const TriMesh& mesh) {
    for (int t = 0; t < mesh.n_tris(); ++t) {
        if (mesh.tri_area(t) <= 0.0) {
#ifdef PERFHOM_MESH_DEBUG
            const auto& tr = mesh.tris[t];
            std::fprintf(stderr, "tri %d area %.3e: (%.4f,%.4f) (%.4f,%.4f) (%.4f,%.4f)\n", t,
                         mesh.tri_area(t), mesh.nodes[tr[0]].x, mesh.nodes[tr[0]].y,
                         mesh.nodes[tr[1]].x, mesh.nodes[tr[1]].y, mesh.nodes[tr[2]].x,
                         mesh.nodes[tr[2]].y);
            continue;
#endif
            throw MeshError("degenerate or inverted triangle " + std::to_string(t));
        }
    }
}

// boundary edges = edges incident to exactly one triangle, keyed canonically
std::map<std::pair<int, int>, int> boundary_edge_set(const TriMesh& mesh) {
    std::map<std::pair<int, int>, int> count;
    for (const auto& t : mesh.tris) {
        for (int e = 0; e < 3; ++e) {
            int a = t[e], bb = t[(e + 1) % 3];
            if (a > bb) std::swap(a, bb);
            ++count[{a, bb}];
        }
    }
    std::map<std::pair<int, int>, int> boundary;
    for (const auto& [k, c] : count)
        if (c == 1) boundary[k] = 1;
    return boundary;
}

int pick_subdivisions(double length, double h, int minimum) {
    int n = std::max(minimum, static_cast<int>(std::lround(length / h)));
    if (n % 2 != 0) ++n;
    return n;
}

} // namespace

CellMesh build_cell_mesh(const PeriodicCell& cell, double h) {
    cell.validate();
    if (h <= 0.0) throw MeshError("mesh size h must be positive");
    if (h > std::min(cell.l1, cell.l2) / 4.0 * (1.0 + 1e-12))
        throw MeshError("mesh size h must not exceed min(l1,l2)/4");
    if (!cell.hole.empty() && h >= cell.hole_clearance())
        throw MeshError("mesh size h must resolve the hole clearance");

    const HoleWorld* hw_ptr = nullptr;
    HoleWorld hw;
    if (!cell.hole.empty()) {
        hw.kind = cell.hole.kind;
        hw.center = cell.hole.kind == Hole::Kind::Disk ? cell.hole.center : Vec2{};
        if (cell.hole.kind == Hole::Kind::Polygon) {
            double cx = 0.0, cy = 0.0;
            for (const Vec2& v : cell.hole.vertices) {
                cx += v.x;
                cy += v.y;
            }
            hw.center = {cx / cell.hole.vertices.size(), cy / cell.hole.vertices.size()};
            hw.vertices = cell.hole.vertices;
        }
        hw.radius = cell.hole.radius;
        hw_ptr = &hw;
    }

    int nx = pick_subdivisions(cell.l1, h, 4);
    int ny = pick_subdivisions(cell.l2, h, 4);
    for (int attempt = 0;; ++attempt) {
        Builder b;
        Block blk;
        blk.sx = cell.l1;
        blk.sy = cell.l2;
        blk.nx = nx;
        blk.ny = ny;
        try {
            emit_block(b, blk, hw_ptr, /*fill_hole=*/false, /*hole_id=*/0, h);
        } catch (const MeshFitError&) {
            if (attempt >= 16) throw MeshError("could not fit a boundary ring at any h <= target");
            nx += 2;
            ny += 2;
            continue;
        }

        CellMesh cm;
        cm.mesh.nodes = std::move(b.nodes);
        cm.mesh.tris = std::move(b.tris);
        cm.l1 = cell.l1;
        cm.l2 = cell.l2;
        cm.h = h;

        // tag boundary edges before sorting (lattice coords are build-indexed)
        auto boundary = boundary_edge_set(cm.mesh);
        std::vector<std::pair<int, int>> hole_edges;
        if (!b.hole_loops.empty())
            hole_edges = b.hole_loops[0];
        auto is_hole_edge = [&](int a, int bb) {
            for (const auto& [p, q] : hole_edges)
                if ((p == a && q == bb) || (p == bb && q == a)) return true;
            return false;
        };
        for (const auto& [edge, unused] : boundary) {
            (void)unused;
            const auto [a, bb] = edge;
            TaggedEdge te{a, bb, EdgeTag::NeumannHole};
            const int ia = b.lattice_i[a], ja = b.lattice_j[a];
            const int ib2 = b.lattice_i[bb], jb2 = b.lattice_j[bb];
            if (ia >= 0 && ib2 >= 0 &&
                ((ia == 0 && ib2 == 0) || (ia == nx && ib2 == nx)))
                te.tag = EdgeTag::PeriodicX;
            else if (ja >= 0 && jb2 >= 0 &&
                     ((ja == 0 && jb2 == 0) || (ja == ny && jb2 == ny)))
                te.tag = EdgeTag::PeriodicY;
            else if (!is_hole_edge(a, bb))
                throw MeshError("untaggable boundary edge in cell mesh");
            cm.mesh.edges.push_back(te);
        }

        // periodic representatives: wrap lattice coordinates
        std::vector<int> master(cm.mesh.n_nodes());
        std::unordered_map<std::int64_t, int> rep;
        for (int v = 0; v < cm.mesh.n_nodes(); ++v) {
            if (b.lattice_i[v] < 0) {
                master[v] = v;
                continue;
            }
            const std::int64_t wi = b.lattice_i[v] % nx;
            const std::int64_t wj = b.lattice_j[v] % ny;
            const std::int64_t key = wi * 0x40000000ll + wj;
            auto it = rep.find(key);
            if (it == rep.end()) {
                rep.emplace(key, v);
                master[v] = v;
            } else {
                master[v] = it->second;
            }
        }
        cm.periodic_master = std::move(master);

        const auto perm = sort_nodes(cm.mesh);
        std::vector<int> pm(cm.mesh.n_nodes());
        for (int v = 0; v < cm.mesh.n_nodes(); ++v)
            pm[perm[v]] = perm[cm.periodic_master[v]];
        cm.periodic_master = std::move(pm);

        check_positive_areas(cm.mesh);
        return cm;
    }
}

PerforatedMesh build_perforated_mesh(const Rect& domain, const PeriodicCell& cell, double eps,
                                     double h) {
    cell.validate();
    if (eps <= 0.0) throw MeshError("eps must be positive");
    if (domain.width() <= 0.0 || domain.height() <= 0.0)
        throw GeometryError("domain rectangle is empty");
    const double sx = eps * cell.l1, sy = eps * cell.l2;
    if (sx > domain.width() + 1e-12 || sy > domain.height() + 1e-12)
        throw MeshError("eps exceeds the domain extent");
    if (h <= 0.0) throw MeshError("mesh size h must be positive");

    int ncx = static_cast<int>(std::floor(domain.width() / sx + 1e-9));
    int ncy = static_cast<int>(std::floor(domain.height() / sy + 1e-9));
    double wx = domain.width() - ncx * sx;
    double wy = domain.height() - ncy * sy;
    if (wx < 1e-9 * sx) wx = 0.0;
    if (wy < 1e-9 * sy) wy = 0.0;

    HoleWorld hw_template;
    const bool with_holes = !cell.hole.empty();

    int nx = pick_subdivisions(sx, h, 2);
    int ny = pick_subdivisions(sy, h, 2);

    for (int attempt = 0;; ++attempt) {
        Builder b;
        bool fit_failed = false;
        int hole_id = 0;
        const int npx = wx > 0.0 ? std::max(1, static_cast<int>(std::lround(wx / (sx / nx)))) : 0;
        const int npy = wy > 0.0 ? std::max(1, static_cast<int>(std::lround(wy / (sy / ny)))) : 0;

        const int bx_count = ncx + (wx > 0.0 ? 1 : 0);
        const int by_count = ncy + (wy > 0.0 ? 1 : 0);
        try {
            for (int ky = 0; ky < by_count; ++ky) {
                for (int kx = 0; kx < bx_count; ++kx) {
                    Block blk;
                    blk.ox = domain.x0;
                    blk.oy = domain.y0;
                    blk.sx = sx;
                    blk.sy = sy;
                    blk.kx = kx;
                    blk.ky = ky;
                    blk.partial_x = (wx > 0.0 && kx == ncx);
                    blk.partial_y = (wy > 0.0 && ky == ncy);
                    blk.nx = blk.partial_x ? npx : nx;
                    blk.ny = blk.partial_y ? npy : ny;
                    // partial strips continue the global lattice of the full cells
                    blk.gi0 = static_cast<std::int64_t>(kx) * nx;
                    blk.gj0 = static_cast<std::int64_t>(ky) * ny;
                    blk.wx = wx;
                    blk.wy = wy;
                    const bool full_cell = !blk.partial_x && !blk.partial_y;
                    // only cells entirely inside the closed domain are
                    // perforated, so no hole can meet the outer boundary
                    if (with_holes && full_cell) {
                        HoleWorld hw = hw_template;
                        hw.kind = cell.hole.kind;
                        hw.radius = eps * cell.hole.radius;
                        const auto map_pt = [&](const Vec2& p) {
                            return Vec2{domain.x0 + sx * (kx + p.x / cell.l1),
                                        domain.y0 + sy * (ky + p.y / cell.l2)};
                        };
                        if (cell.hole.kind == Hole::Kind::Disk) {
                            hw.center = map_pt(cell.hole.center);
                        } else {
                            hw.vertices.clear();
                            double cx = 0.0, cy = 0.0;
                            for (const Vec2& v : cell.hole.vertices) {
                                hw.vertices.push_back(map_pt(v));
                                cx += hw.vertices.back().x;
                                cy += hw.vertices.back().y;
                            }
                            hw.center = {cx / hw.vertices.size(), cy / hw.vertices.size()};
                        }
                        emit_block(b, blk, &hw, /*fill_hole=*/true, hole_id++, h);
                    } else {
                        emit_block(b, blk, nullptr, false, -1, h);
                    }
                }
            }
        } catch (const MeshFitError&) {
            fit_failed = true;
        }
        if (fit_failed) {
            if (attempt >= 16)
                throw MeshError("could not fit hole boundary rings at any h <= target");
            nx += 2;
            ny += 2;
            continue;
        }

        PerforatedMesh pm;
        pm.eps = eps;
        pm.domain = domain;
        pm.n_holes = hole_id;

        FilledMesh& bg = pm.background;
        bg.mesh.nodes = std::move(b.nodes);
        bg.mesh.tris = std::move(b.tris);
        bg.tri_hole = std::move(b.tri_hole);
        bg.n_holes = hole_id;

        // outer boundary of the background = boundary of D
        auto boundary = boundary_edge_set(bg.mesh);
        for (const auto& [edge, unused] : boundary) {
            (void)unused;
            bg.mesh.edges.push_back({edge.first, edge.second, EdgeTag::DirichletOuter});
        }

        const auto perm = sort_nodes(bg.mesh);
        check_positive_areas(bg.mesh);
        for (auto& loop : b.hole_loops)
            for (auto& [p, q] : loop) {
                p = perm[p];
                q = perm[q];
            }

        // nodes appearing in no non-hole triangle are interior to a hole
        bg.node_hole.assign(bg.mesh.n_nodes(), -2);
        for (int t = 0; t < bg.mesh.n_tris(); ++t) {
            for (int v : bg.mesh.tris[t]) {
                if (bg.tri_hole[t] < 0)
                    bg.node_hole[v] = -1;
                else if (bg.node_hole[v] == -2)
                    bg.node_hole[v] = bg.tri_hole[t];
            }
        }

        // extract the perforated mesh
        std::vector<int> bg_to_pm(bg.mesh.n_nodes(), -1);
        for (int v = 0; v < bg.mesh.n_nodes(); ++v) {
            if (bg.node_hole[v] == -1) {
                const int id = static_cast<int>(pm.to_background.size());
                bg_to_pm[v] = id;
                pm.to_background.push_back(v);
                pm.mesh.nodes.push_back(bg.mesh.nodes[v]);
            }
        }
        for (int t = 0; t < bg.mesh.n_tris(); ++t) {
            if (bg.tri_hole[t] >= 0) continue;
            const auto& tr = bg.mesh.tris[t];
            pm.mesh.tris.push_back({bg_to_pm[tr[0]], bg_to_pm[tr[1]], bg_to_pm[tr[2]]});
        }
        for (const auto& e : bg.mesh.edges)
            pm.mesh.edges.push_back({bg_to_pm[e.a], bg_to_pm[e.b], EdgeTag::DirichletOuter});
        for (const auto& loop : b.hole_loops)
            for (const auto& [p, q] : loop)
                pm.mesh.edges.push_back({bg_to_pm[p], bg_to_pm[q], EdgeTag::NeumannHole});

        pm.volume_ratio = pm.mesh.area() / domain.area();
        return pm;
    }
}

std::vector<double> zero_extend(const PerforatedMesh& pm, const std::vector<double>& field) {
    if (field.size() != pm.to_background.size())
        throw DimensionError("zero_extend: field has " + std::to_string(field.size()) +
                             " values, mesh has " + std::to_string(pm.to_background.size()) +
                             " nodes");
    std::vector<double> out(pm.background.mesh.n_nodes(), 0.0);
    for (std::size_t i = 0; i < field.size(); ++i)
        out[pm.to_background[i]] = field[i];
    return out;
}

std::vector<double> restrict_to_perforated(const PerforatedMesh& pm,
                                           const std::vector<double>& bg_field) {
    if (bg_field.size() != static_cast<std::size_t>(pm.background.mesh.n_nodes()))
        throw DimensionError("restrict_to_perforated: size mismatch");
    std::vector<double> out(pm.to_background.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = bg_field[pm.to_background[i]];
    return out;
}

// ---------------------------------------------------------------------------
// harmonic fill
// ---------------------------------------------------------------------------

struct HarmonicFiller::Impl {
    struct HoleSystem {
        std::vector<int> interior; // background node ids
        // dense Cholesky factor of the interior Laplacian, row-major lower
        std::vector<double> chol;
        // boundary coupling: rhs_i -= coeff * values[bnd_node]
        struct Coupling {
            int local_i;
            int bnd_node;
            double coeff;
        };
        std::vector<Coupling> coupling;
    };
    const PerforatedMesh* pm = nullptr;
    std::vector<HoleSystem> holes;
};

HarmonicFiller::HarmonicFiller(const PerforatedMesh& pm) {
    auto impl = std::make_shared<Impl>();
    impl->pm = &pm;
    impl->holes.resize(pm.n_holes);
    const FilledMesh& bg = pm.background;
    std::vector<std::vector<std::array<int, 3>>> hole_tris(pm.n_holes);
    for (int t = 0; t < bg.mesh.n_tris(); ++t) {
        const int hid = bg.tri_hole[t];
        if (hid >= 0) hole_tris[hid].push_back(bg.mesh.tris[t]);
    }
    for (int v = 0; v < bg.mesh.n_nodes(); ++v)
        if (bg.node_hole[v] >= 0) impl->holes[bg.node_hole[v]].interior.push_back(v);

    for (int hid = 0; hid < pm.n_holes; ++hid) {
        Impl::HoleSystem& hs = impl->holes[hid];
        const int n = static_cast<int>(hs.interior.size());
        if (n == 0) continue;
        std::unordered_map<int, int> local;
        local.reserve(hs.interior.size());
        for (int i = 0; i < n; ++i) local.emplace(hs.interior[i], i);

        std::vector<double> a(static_cast<std::size_t>(n) * n, 0.0);
        for (const auto& tr : hole_tris[hid]) {
            const Vec2& p0 = bg.mesh.nodes[tr[0]];
            const Vec2& p1 = bg.mesh.nodes[tr[1]];
            const Vec2& p2 = bg.mesh.nodes[tr[2]];
            const double area = signed_area(p0, p1, p2);
            const double gx[3] = {(p1.y - p2.y) / (2 * area), (p2.y - p0.y) / (2 * area),
                                  (p0.y - p1.y) / (2 * area)};
            const double gy[3] = {(p2.x - p1.x) / (2 * area), (p0.x - p2.x) / (2 * area),
                                  (p1.x - p0.x) / (2 * area)};
            for (int r = 0; r < 3; ++r) {
                auto it = local.find(tr[r]);
                if (it == local.end()) continue;
                for (int c = 0; c < 3; ++c) {
                    const double k = area * (gx[r] * gx[c] + gy[r] * gy[c]);
                    auto jt = local.find(tr[c]);
                    if (jt != local.end())
                        a[static_cast<std::size_t>(it->second) * n + jt->second] += k;
                    else
                        hs.coupling.push_back({it->second, tr[c], k});
                }
            }
        }
        // in-place dense Cholesky
        for (int j = 0; j < n; ++j) {
            double d = a[static_cast<std::size_t>(j) * n + j];
            for (int p = 0; p < j; ++p) {
                const double l = a[static_cast<std::size_t>(j) * n + p];
                d -= l * l;
            }
            if (!(d > 0.0)) throw SolverError("harmonic fill: hole system not positive definite");
            const double dj = std::sqrt(d);
            a[static_cast<std::size_t>(j) * n + j] = dj;
            for (int i = j + 1; i < n; ++i) {
                double s = a[static_cast<std::size_t>(i) * n + j];
                for (int p = 0; p < j; ++p)
                    s -= a[static_cast<std::size_t>(i) * n + p] *
                         a[static_cast<std::size_t>(j) * n + p];
                a[static_cast<std::size_t>(i) * n + j] = s / dj;
            }
        }
        hs.chol = std::move(a);
    }
    impl_ = std::move(impl);
}

std::vector<double> HarmonicFiller::apply(const std::vector<double>& field) const {
    const PerforatedMesh& pm = *impl_->pm;
    std::vector<double> out = zero_extend(pm, field);
    std::vector<double> rhs;
    for (const auto& hs : impl_->holes) {
        const int n = static_cast<int>(hs.interior.size());
        if (n == 0) continue;
        rhs.assign(static_cast<std::size_t>(n), 0.0);
        for (const auto& c : hs.coupling) rhs[c.local_i] -= c.coeff * out[c.bnd_node];
        // forward then backward substitution with the dense factor
        const std::vector<double>& L = hs.chol;
        for (int i = 0; i < n; ++i) {
            double s = rhs[i];
            const double* row = &L[static_cast<std::size_t>(i) * n];
            for (int j = 0; j < i; ++j) s -= row[j] * rhs[j];
            rhs[i] = s / row[i];
        }
        for (int i = n - 1; i >= 0; --i) {
            double s = rhs[i];
            for (int j = i + 1; j < n; ++j) s -= L[static_cast<std::size_t>(j) * n + i] * rhs[j];
            rhs[i] = s / L[static_cast<std::size_t>(i) * n + i];
        }
        for (int i = 0; i < n; ++i) out[hs.interior[i]] = rhs[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// point location / interpolation
// ---------------------------------------------------------------------------

struct TriLocator::Impl {
    const TriMesh* mesh = nullptr;
    double x0 = 0, y0 = 0, dx = 1, dy = 1;
    int nx = 1, ny = 1;
    std::vector<std::vector<int>> bins;
};

TriLocator::TriLocator(const TriMesh& mesh) {
    auto impl = std::make_shared<Impl>();
    impl->mesh = &mesh;
    double x0 = std::numeric_limits<double>::infinity(), y0 = x0;
    double x1 = -x0, y1 = -y0;
    for (const Vec2& p : mesh.nodes) {
        x0 = std::min(x0, p.x);
        x1 = std::max(x1, p.x);
        y0 = std::min(y0, p.y);
        y1 = std::max(y1, p.y);
    }
    const int grid = std::max(1, static_cast<int>(std::sqrt(static_cast<double>(mesh.n_tris()))));
    impl->x0 = x0;
    impl->y0 = y0;
    impl->nx = grid;
    impl->ny = grid;
    impl->dx = std::max((x1 - x0) / grid, 1e-300);
    impl->dy = std::max((y1 - y0) / grid, 1e-300);
    impl->bins.resize(static_cast<std::size_t>(grid) * grid);
    for (int t = 0; t < mesh.n_tris(); ++t) {
        const auto& tr = mesh.tris[t];
        double tx0 = std::min({mesh.nodes[tr[0]].x, mesh.nodes[tr[1]].x, mesh.nodes[tr[2]].x});
        double tx1 = std::max({mesh.nodes[tr[0]].x, mesh.nodes[tr[1]].x, mesh.nodes[tr[2]].x});
        double ty0 = std::min({mesh.nodes[tr[0]].y, mesh.nodes[tr[1]].y, mesh.nodes[tr[2]].y});
        double ty1 = std::max({mesh.nodes[tr[0]].y, mesh.nodes[tr[1]].y, mesh.nodes[tr[2]].y});
        const int ia = std::clamp(static_cast<int>((tx0 - x0) / impl->dx), 0, grid - 1);
        const int ib = std::clamp(static_cast<int>((tx1 - x0) / impl->dx), 0, grid - 1);
        const int ja = std::clamp(static_cast<int>((ty0 - y0) / impl->dy), 0, grid - 1);
        const int jb = std::clamp(static_cast<int>((ty1 - y0) / impl->dy), 0, grid - 1);
        for (int j = ja; j <= jb; ++j)
            for (int i = ia; i <= ib; ++i)
                impl->bins[static_cast<std::size_t>(j) * grid + i].push_back(t);
    }
    impl_ = std::move(impl);
}

int TriLocator::locate(double x, double y, std::array<double, 3>& bary) const {
    const Impl& im = *impl_;
    const TriMesh& mesh = *im.mesh;
    const int ci = std::clamp(static_cast<int>((x - im.x0) / im.dx), 0, im.nx - 1);
    const int cj = std::clamp(static_cast<int>((y - im.y0) / im.dy), 0, im.ny - 1);
    int best_tri = -1;
    double best_min = -std::numeric_limits<double>::infinity();
    std::array<double, 3> best_bary{};
    for (int ring = 0; ring < std::max(im.nx, im.ny); ++ring) {
        for (int j = std::max(0, cj - ring); j <= std::min(im.ny - 1, cj + ring); ++j) {
            for (int i = std::max(0, ci - ring); i <= std::min(im.nx - 1, ci + ring); ++i) {
                if (ring > 0 && std::abs(i - ci) != ring && std::abs(j - cj) != ring) continue;
                for (int t : im.bins[static_cast<std::size_t>(j) * im.nx + i]) {
                    const auto& tr = mesh.tris[t];
                    const Vec2& p0 = mesh.nodes[tr[0]];
                    const Vec2& p1 = mesh.nodes[tr[1]];
                    const Vec2& p2 = mesh.nodes[tr[2]];
                    const double a = signed_area(p0, p1, p2);
                    const std::array<double, 3> w = {
                        signed_area({x, y}, p1, p2) / a,
                        signed_area(p0, {x, y}, p2) / a,
                        signed_area(p0, p1, {x, y}) / a,
                    };
                    const double mn = std::min({w[0], w[1], w[2]});
                    if (mn > best_min) {
                        best_min = mn;
                        best_tri = t;
                        best_bary = w;
                    }
                }
            }
        }
        if (best_min >= -1e-12) break;
    }
    if (best_tri < 0 || best_min < -1e-6)
        throw DimensionError("point (" + std::to_string(x) + "," + std::to_string(y) +
                             ") lies outside the mesh");
    bary = best_bary;
    return best_tri;
}

InterpolationMap build_interpolation(const TriMesh& src, const std::vector<Vec2>& targets) {
    TriLocator loc(src);
    InterpolationMap map;
    map.node_index.resize(targets.size());
    map.weight.resize(targets.size());
    for (std::size_t k = 0; k < targets.size(); ++k) {
        std::array<double, 3> w{};
        const int t = loc.locate(targets[k].x, targets[k].y, w);
        map.node_index[k] = src.tris[t];
        // clip tiny negative weights from boundary roundoff
        for (double& v : w) v = std::max(v, 0.0);
        const double s = w[0] + w[1] + w[2];
        for (double& v : w) v /= s;
        map.weight[k] = w;
    }
    return map;
}

std::vector<double> InterpolationMap::apply(const std::vector<double>& src_field) const {
    std::vector<double> out(node_index.size());
    for (std::size_t k = 0; k < node_index.size(); ++k) {
        out[k] = weight[k][0] * src_field[node_index[k][0]] +
                 weight[k][1] * src_field[node_index[k][1]] +
                 weight[k][2] * src_field[node_index[k][2]];
    }
    return out;
}

// ---------------------------------------------------------------------------
// text exchange format
// ---------------------------------------------------------------------------

void write_mesh(std::ostream& os, const TriMesh& mesh) {
    os << "nodes " << mesh.n_nodes() << " triangles " << mesh.n_tris() << " edges "
       << mesh.edges.size() << "\n";
    char buf[96];
    for (const Vec2& p : mesh.nodes) {
        std::snprintf(buf, sizeof buf, "%.17g %.17g\n", p.x, p.y);
        os << buf;
    }
    for (const auto& t : mesh.tris) os << t[0] << ' ' << t[1] << ' ' << t[2] << "\n";
    for (const auto& e : mesh.edges)
        os << e.a << ' ' << e.b << ' ' << edge_tag_name(e.tag) << "\n";
}

TriMesh read_mesh(std::istream& is) {
    std::string kw1, kw2, kw3;
    int nn = 0, nt = 0, ne = 0;
    if (!(is >> kw1 >> nn >> kw2 >> nt >> kw3 >> ne) || kw1 != "nodes" || kw2 != "triangles" ||
        kw3 != "edges")
        throw MeshError("bad mesh header");
    TriMesh mesh;
    mesh.nodes.resize(nn);
    for (auto& p : mesh.nodes)
        if (!(is >> p.x >> p.y)) throw MeshError("bad node line");
    mesh.tris.resize(nt);
    for (auto& t : mesh.tris)
        if (!(is >> t[0] >> t[1] >> t[2])) throw MeshError("bad triangle line");
    mesh.edges.resize(ne);
    for (auto& e : mesh.edges) {
        std::string tag;
        if (!(is >> e.a >> e.b >> tag)) throw MeshError("bad edge line");
        if (tag == "DIRICHLET_OUTER") e.tag = EdgeTag::DirichletOuter;
        else if (tag == "NEUMANN_HOLE") e.tag = EdgeTag::NeumannHole;
        else if (tag == "PERIODIC_X") e.tag = EdgeTag::PeriodicX;
        else if (tag == "PERIODIC_Y") e.tag = EdgeTag::PeriodicY;
        else throw MeshError("unknown edge tag '" + tag + "'");
    }
    return mesh;
}

void write_field(std::ostream& os, const std::string& name, const std::vector<double>& values) {
    os << "field " << name << ' ' << values.size() << "\n";
    char buf[48];
    for (double v : values) {
        std::snprintf(buf, sizeof buf, "%.17g\n", v);
        os << buf;
    }
}

} // namespace perfhom
