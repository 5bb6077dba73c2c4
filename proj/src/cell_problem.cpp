#include "perfhom/cell_problem.hpp"

#include "perfhom/errors.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>

namespace perfhom {

namespace {

// the cell problems are stated with the derivative index contracted on the
// first coefficient index, i.e. for div(a^T grad .); transpose here so a
// nonsymmetric coefficient is handled exactly as written
CoefficientFn transposed(const PeriodicCell& cell) {
    const PeriodicCell c = cell;
    return [c](double x, double y) {
        const Mat2 a = c.eval(x, y);
        return Mat2{a[0], a[2], a[1], a[3]};
    };
}

struct QuadPoint {
    double x, y, w;
};

// degree-2 interior rule, matching the assembly quadrature
void quad_points(const TriMesh& mesh, int t, QuadPoint out[3]) {
    const auto& tr = mesh.tris[t];
    const Vec2& p0 = mesh.nodes[tr[0]];
    const Vec2& p1 = mesh.nodes[tr[1]];
    const Vec2& p2 = mesh.nodes[tr[2]];
    const double w = mesh.tri_area(t) / 3.0;
    const double a = 2.0 / 3.0, b = 1.0 / 6.0;
    out[0] = {a * p0.x + b * p1.x + b * p2.x, a * p0.y + b * p1.y + b * p2.y, w};
    out[1] = {b * p0.x + a * p1.x + b * p2.x, b * p0.y + a * p1.y + b * p2.y, w};
    out[2] = {b * p0.x + b * p1.x + a * p2.x, b * p0.y + b * p1.y + a * p2.y, w};
}

void gradients(const TriMesh& mesh, int t, double gx[3], double gy[3]) {
    const auto& tr = mesh.tris[t];
    const Vec2& p0 = mesh.nodes[tr[0]];
    const Vec2& p1 = mesh.nodes[tr[1]];
    const Vec2& p2 = mesh.nodes[tr[2]];
    const double inv = 1.0 / (2.0 * mesh.tri_area(t));
    gx[0] = (p1.y - p2.y) * inv;
    gx[1] = (p2.y - p0.y) * inv;
    gx[2] = (p0.y - p1.y) * inv;
    gy[0] = (p2.x - p1.x) * inv;
    gy[1] = (p0.x - p2.x) * inv;
    gy[2] = (p1.x - p0.x) * inv;
}

// mean over Y* of a nodal field (exact P1 integration)
double mesh_mean(const TriMesh& mesh, const std::vector<double>& v) {
    double s = 0.0;
    for (int t = 0; t < mesh.n_tris(); ++t) {
        const auto& tr = mesh.tris[t];
        s += mesh.tri_area(t) / 3.0 * (v[tr[0]] + v[tr[1]] + v[tr[2]]);
    }
    return s / mesh.area();
}

} // namespace

std::vector<double> solve_corrector(const CellMesh& cell_mesh, const PeriodicCell& cell,
                                    int direction, double* residual) {
    if (direction != 0 && direction != 1)
        throw DimensionError("corrector direction must be 0 or 1");
    const TriMesh& mesh = cell_mesh.mesh;
    const DofMap dofmap = DofMap::periodic(cell_mesh);
    const SparseOperator K = assemble_stiffness(mesh, transposed(cell), dofmap);

    // rhs_v = int_{Y*} sum_l a_{il} d(phi_v)/dy_l  (from the y_i term)
    std::vector<double> rhs(static_cast<std::size_t>(dofmap.n_dofs), 0.0);
    for (int t = 0; t < mesh.n_tris(); ++t) {
        QuadPoint qp[3];
        quad_points(mesh, t, qp);
        double gx[3], gy[3];
        gradients(mesh, t, gx, gy);
        double a_i1 = 0.0, a_i2 = 0.0;
        for (const QuadPoint& q : qp) {
            const Mat2 a = cell.eval(q.x, q.y);
            a_i1 += q.w * (direction == 0 ? a[0] : a[2]);
            a_i2 += q.w * (direction == 0 ? a[1] : a[3]);
        }
        const auto& tr = mesh.tris[t];
        for (int v = 0; v < 3; ++v) {
            const int d = dofmap.dof_of_node[tr[v]];
            rhs[d] += a_i1 * gx[v] + a_i2 * gy[v];
        }
    }

    // project the (consistent) rhs onto the complement of the constant kernel
    const std::vector<double> ones(static_cast<std::size_t>(dofmap.n_dofs), 1.0);
    SolveOptions opts;
    opts.tol = 1e-11;
    opts.deflate = &ones;
    SolveReport rep;
    std::vector<double> chi_dofs;
    try {
        chi_dofs = solve_spd(K, rhs, opts, &rep);
    } catch (const SingularSystemError&) {
        throw SingularSystemError(
            "corrector solve: periodic kernel not handled (mesh lacks periodic pairing?)");
    }
    if (residual) *residual = rep.relative_residual;

    std::vector<double> chi = dofmap.to_nodes(chi_dofs);
    const double mean = mesh_mean(mesh, chi);
    for (double& v : chi) v -= mean;
    return chi;
}

std::pair<Mat2, double> homogenized_matrix(const CellMesh& cell_mesh, const PeriodicCell& cell,
                                           const std::vector<double>& chi1,
                                           const std::vector<double>& chi2) {
    const TriMesh& mesh = cell_mesh.mesh;
    if (chi1.size() != mesh.nodes.size() || chi2.size() != mesh.nodes.size())
        throw DimensionError("homogenized_matrix: corrector fields do not match the mesh");
    const std::vector<double>* chi[2] = {&chi1, &chi2};
    Mat2 B{0.0, 0.0, 0.0, 0.0};
    for (int t = 0; t < mesh.n_tris(); ++t) {
        QuadPoint qp[3];
        quad_points(mesh, t, qp);
        double gx[3], gy[3];
        gradients(mesh, t, gx, gy);
        Mat2 ai{0.0, 0.0, 0.0, 0.0}; // int_e a
        for (const QuadPoint& q : qp) {
            const Mat2 a = cell.eval(q.x, q.y);
            for (int k = 0; k < 4; ++k) ai[k] += q.w * a[k];
        }
        const auto& tr = mesh.tris[t];
        for (int i = 0; i < 2; ++i) {
            double cx = 0.0, cy = 0.0; // element gradient of chi^i
            for (int v = 0; v < 3; ++v) {
                cx += (*chi[i])[tr[v]] * gx[v];
                cy += (*chi[i])[tr[v]] * gy[v];
            }
            for (int j = 0; j < 2; ++j) {
                // beta_ij += int a_ij - int sum_k a_kj d(chi^i)/dy_k
                B[2 * i + j] += ai[2 * i + j] - (ai[0 + j] * cx + ai[2 + j] * cy);
            }
        }
    }
    const double cell_measure = cell.l1 * cell.l2;
    for (double& v : B) v /= cell_measure;
    const double theta = mesh.area() / cell_measure;
    return {B, theta};
}

double ellipticity_constant(const Mat2& B) {
    const double tr2 = 0.5 * (B[0] + B[3]);
    const double off = 0.5 * (B[1] + B[2]);
    return tr2 - std::sqrt(0.25 * (B[0] - B[3]) * (B[0] - B[3]) + off * off);
}

CellSolution solve_cell_problem(const PeriodicCell& cell, double h) {
    const CellMesh cm = build_cell_mesh(cell, h);
    CellSolution sol;
    sol.h = h;
    sol.chi1 = solve_corrector(cm, cell, 0, &sol.residual1);
    sol.chi2 = solve_corrector(cm, cell, 1, &sol.residual2);
    auto [B, theta] = homogenized_matrix(cm, cell, sol.chi1, sol.chi2);
    sol.B = B;
    sol.theta = theta;
    return sol;
}

std::vector<CellRefinementRow> cell_refinement_study(const PeriodicCell& cell,
                                                     const std::vector<double>& hs) {
    std::vector<CellRefinementRow> rows;
    for (double h : hs) {
        const CellMesh cm = build_cell_mesh(cell, h);
        CellRefinementRow row;
        row.h = h;
        row.h_effective = cm.mesh.max_tri_diameter();
        std::vector<double> chi1 = solve_corrector(cm, cell, 0, &row.residual1);
        std::vector<double> chi2 = solve_corrector(cm, cell, 1, &row.residual2);
        auto [B, theta] = homogenized_matrix(cm, cell, chi1, chi2);
        row.B = B;
        row.theta = theta;
        rows.push_back(row);
    }
    return rows;
}

double estimated_order(double h1, double h2, double h3, double q1, double q2, double q3) {
    // q(h) = q* + C h^p: match (q1-q2)/(q2-q3) = (h1^p - h2^p)/(h2^p - h3^p)
    const double target = (q1 - q2) / (q2 - q3);
    auto ratio = [&](double p) {
        return (std::pow(h1, p) - std::pow(h2, p)) / (std::pow(h2, p) - std::pow(h3, p));
    };
    double lo = 0.05, hi = 8.0;
    double flo = ratio(lo) - target, fhi = ratio(hi) - target;
    if (flo * fhi > 0.0) {
        // no sign change: fall back to the equal-ratio estimate on the fine pair
        return std::log(std::fabs((q1 - q2) / (q2 - q3))) / std::log(h1 / h2);
    }
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double fm = ratio(mid) - target;
        if (flo * fm <= 0.0) {
            hi = mid;
            fhi = fm;
        } else {
            lo = mid;
            flo = fm;
        }
    }
    return 0.5 * (lo + hi);
}

void write_cell_solution(std::ostream& os, const CellSolution& sol) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "theta %.17g\n", sol.theta);
    os << buf;
    std::snprintf(buf, sizeof buf, "B %.17g %.17g %.17g %.17g\n", sol.B[0], sol.B[1], sol.B[2],
                  sol.B[3]);
    os << buf;
    std::snprintf(buf, sizeof buf, "residuals %.17g %.17g\n", sol.residual1, sol.residual2);
    os << buf;
    std::snprintf(buf, sizeof buf, "h %.17g\n", sol.h);
    os << buf;
}

CellSolutionSummary read_cell_solution(std::istream& is) {
    CellSolutionSummary sum;
    std::string kw;
    if (!(is >> kw >> sum.theta) || kw != "theta")
        throw MissingArtifactError("cell solution: missing 'theta' line");
    if (!(is >> kw >> sum.B[0] >> sum.B[1] >> sum.B[2] >> sum.B[3]) || kw != "B")
        throw MissingArtifactError("cell solution: missing 'B' line");
    if (!(is >> kw >> sum.residual1 >> sum.residual2) || kw != "residuals")
        throw MissingArtifactError("cell solution: missing 'residuals' line");
    if (!(is >> kw >> sum.h) || kw != "h")
        throw MissingArtifactError("cell solution: missing 'h' line");
    return sum;
}

} // namespace perfhom
