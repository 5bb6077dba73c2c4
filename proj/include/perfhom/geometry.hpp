#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace perfhom {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

struct Rect {
    double x0 = 0.0, y0 = 0.0, x1 = 1.0, y1 = 1.0;
    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    double area() const { return width() * height(); }
};

// 2x2 coefficient matrix, row-major: {a11, a12, a21, a22}
using Mat2 = std::array<double, 4>;
using CoefficientFn = std::function<Mat2(double, double)>;

struct Hole {
    enum class Kind { None, Disk, Polygon };
    Kind kind = Kind::None;
    Vec2 center{0.5, 0.5};
    double radius = 0.0;
    std::vector<Vec2> vertices; // CCW, for Kind::Polygon

    bool empty() const { return kind == Kind::None; }
    double area() const;
    // signed distance-ish containment test (strict interior)
    bool contains(double x, double y) const;
};

// The representative cell Y = [0,l1) x [0,l2) with hole S and coefficient a(y).
struct PeriodicCell {
    double l1 = 1.0;
    double l2 = 1.0;
    Hole hole;
    CoefficientFn coefficient; // a(y), evaluated with y wrapped into the cell
    double alpha = 1.0;        // declared ellipticity constant
    double linf_bound = 1.0;   // declared bound on |a_ij|

    // distance from the hole closure to the cell boundary; +inf when no hole
    double hole_clearance() const;
    // throws GeometryError if the hole closure is not strictly inside the cell
    void validate() const;
    Mat2 eval(double y1, double y2) const; // wraps into [0,l1) x [0,l2)
};

// coefficient on D for the microscopic problem: x -> a(x/eps), Y-periodic
CoefficientFn micro_coefficient(const PeriodicCell& cell, double eps);

enum class EdgeTag { DirichletOuter, NeumannHole, PeriodicX, PeriodicY };

const char* edge_tag_name(EdgeTag tag);

struct TaggedEdge {
    int a = -1;
    int b = -1;
    EdgeTag tag = EdgeTag::DirichletOuter;
};

struct TriMesh {
    std::vector<Vec2> nodes;
    std::vector<std::array<int, 3>> tris; // CCW
    std::vector<TaggedEdge> edges;        // tagged boundary edges

    int n_nodes() const { return static_cast<int>(nodes.size()); }
    int n_tris() const { return static_cast<int>(tris.size()); }
    double tri_area(int t) const;
    double area() const;
    double max_tri_diameter() const;
};

// Conforming triangulation of Y* = Y \ closure(S) with periodic node pairing.
struct CellMesh {
    TriMesh mesh;
    double l1 = 1.0, l2 = 1.0;
    double h = 0.0; // requested target size
    // per node: index of its periodic representative (self for masters/interior)
    std::vector<int> periodic_master;

    int n_hole_edges() const;
    int n_periodic_dofs() const; // independent DOFs under identification
};

// Background mesh of D in which every hole is meshed as well.
struct FilledMesh {
    TriMesh mesh;
    std::vector<int> tri_hole;  // per triangle: hole index, or -1 outside holes
    std::vector<int> node_hole; // per node: hole index if interior to a hole, else -1
    int n_holes = 0;
};

struct PerforatedMesh {
    TriMesh mesh; // mesh of D_eps
    double eps = 0.0;
    Rect domain;
    FilledMesh background;          // same construction, holes filled
    std::vector<int> to_background; // D_eps node -> background node (injection)
    int n_holes = 0;
    double volume_ratio = 0.0; // measured |D_eps| / |D|
};

// Mesh generation.  h is a target size; the generator may refine below it
// (never above) to keep the hole ring well formed.  Subdivision counts are
// kept even so structured regions carry the full dihedral symmetry.
CellMesh build_cell_mesh(const PeriodicCell& cell, double h);
PerforatedMesh build_perforated_mesh(const Rect& domain, const PeriodicCell& cell,
                                     double eps, double h);

// Zero extension to the background mesh: copied on shared nodes, 0 inside holes.
std::vector<double> zero_extend(const PerforatedMesh& pm, const std::vector<double>& field);
// restriction back to D_eps (left inverse of zero_extend)
std::vector<double> restrict_to_perforated(const PerforatedMesh& pm,
                                           const std::vector<double>& bg_field);

// Discrete harmonic extension: hole interiors filled by local Laplace solves
// with the trace of the field as Dirichlet data.  Factor-free, reusable.
class HarmonicFiller {
public:
    explicit HarmonicFiller(const PerforatedMesh& pm);
    std::vector<double> apply(const std::vector<double>& field) const;

private:
    struct Impl;
    std::shared_ptr<const Impl> impl_;
};

// Point location with uniform binning, for P1 interpolation between meshes.
class TriLocator {
public:
    explicit TriLocator(const TriMesh& mesh);
    // triangle containing (x,y) and barycentric weights; throws DimensionError
    // if the point lies outside the mesh by more than a tolerance
    int locate(double x, double y, std::array<double, 3>& bary) const;

private:
    struct Impl;
    std::shared_ptr<const Impl> impl_;
};

// Sparse P1 interpolation rows: for each target point, the source triangle's
// three node indices and weights.
struct InterpolationMap {
    std::vector<std::array<int, 3>> node_index;
    std::vector<std::array<double, 3>> weight;
    std::vector<double> apply(const std::vector<double>& src_field) const;
};

InterpolationMap build_interpolation(const TriMesh& src, const std::vector<Vec2>& targets);

// Plain-text mesh exchange format:
//   nodes <N> triangles <T> edges <E>
//   x y                (N lines)
//   i j k              (T lines)
//   i j TAG            (E lines)
void write_mesh(std::ostream& os, const TriMesh& mesh);
TriMesh read_mesh(std::istream& is);

// nodal field block: "field <name> <N>" followed by N values
void write_field(std::ostream& os, const std::string& name, const std::vector<double>& values);

} // namespace perfhom
