#include "perfhom/fem.hpp"

#include "perfhom/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <tuple>

namespace perfhom {

namespace {

struct Triplet {
    int i, j;
    double v;
};

// Triplets are sorted by (i, j, value) before accumulation so the assembled
// operator does not depend on element traversal order.
SparseOperator compress(int n, std::vector<Triplet>& trips, bool symmetric) {
    std::sort(trips.begin(), trips.end(), [](const Triplet& a, const Triplet& b) {
        return std::tie(a.i, a.j, a.v) < std::tie(b.i, b.j, b.v);
    });
    SparseOperator op;
    op.n = n;
    op.symmetric = symmetric;
    op.row_ptr.assign(n + 1, 0);
    std::size_t k = 0;
    while (k < trips.size()) {
        std::size_t e = k;
        double s = 0.0;
        while (e < trips.size() && trips[e].i == trips[k].i && trips[e].j == trips[k].j) {
            s += trips[e].v;
            ++e;
        }
        op.col.push_back(trips[k].j);
        op.val.push_back(s);
        ++op.row_ptr[trips[k].i + 1];
        k = e;
    }
    for (int r = 0; r < n; ++r) op.row_ptr[r + 1] += op.row_ptr[r];
    return op;
}

struct ElementGeometry {
    double area;
    double gx[3];
    double gy[3];
    // degree-2 interior rule (barycentric 2/3,1/6,1/6): strictly inside the
    // element, so piecewise coefficients aligned with mesh lines are never
    // sampled on their discontinuity
    Vec2 mid[3];
};

ElementGeometry element_geometry(const TriMesh& mesh, int t) {
    const auto& tr = mesh.tris[t];
    const Vec2& p0 = mesh.nodes[tr[0]];
    const Vec2& p1 = mesh.nodes[tr[1]];
    const Vec2& p2 = mesh.nodes[tr[2]];
    ElementGeometry g;
    g.area = 0.5 * ((p1.x - p0.x) * (p2.y - p0.y) - (p2.x - p0.x) * (p1.y - p0.y));
    if (!(g.area > 0.0) || !std::isfinite(g.area))
        throw AssemblyError("degenerate element " + std::to_string(t));
    const double inv = 1.0 / (2.0 * g.area);
    g.gx[0] = (p1.y - p2.y) * inv;
    g.gx[1] = (p2.y - p0.y) * inv;
    g.gx[2] = (p0.y - p1.y) * inv;
    g.gy[0] = (p2.x - p1.x) * inv;
    g.gy[1] = (p0.x - p2.x) * inv;
    g.gy[2] = (p1.x - p0.x) * inv;
    const double a = 2.0 / 3.0, b = 1.0 / 6.0;
    g.mid[0] = {a * p0.x + b * p1.x + b * p2.x, a * p0.y + b * p1.y + b * p2.y};
    g.mid[1] = {b * p0.x + a * p1.x + b * p2.x, b * p0.y + a * p1.y + b * p2.y};
    g.mid[2] = {b * p0.x + b * p1.x + a * p2.x, b * p0.y + b * p1.y + a * p2.y};
    return g;
}

} // namespace

void SparseOperator::matvec(const std::vector<double>& x, std::vector<double>& y) const {
    y.resize(static_cast<std::size_t>(n));
    for (int r = 0; r < n; ++r) {
        double s = 0.0;
        for (int k = row_ptr[r]; k < row_ptr[r + 1]; ++k) s += val[k] * x[col[k]];
        y[r] = s;
    }
}

std::vector<double> SparseOperator::apply(const std::vector<double>& x) const {
    std::vector<double> y;
    matvec(x, y);
    return y;
}

double SparseOperator::quadratic_form(const std::vector<double>& x) const {
    double s = 0.0;
    for (int r = 0; r < n; ++r) {
        double row = 0.0;
        for (int k = row_ptr[r]; k < row_ptr[r + 1]; ++k) row += val[k] * x[col[k]];
        s += x[r] * row;
    }
    return s;
}

double SparseOperator::inner(const std::vector<double>& x, const std::vector<double>& y) const {
    double s = 0.0;
    for (int r = 0; r < n; ++r) {
        double row = 0.0;
        for (int k = row_ptr[r]; k < row_ptr[r + 1]; ++k) row += val[k] * y[col[k]];
        s += x[r] * row;
    }
    return s;
}

std::vector<double> SparseOperator::diagonal() const {
    std::vector<double> d(static_cast<std::size_t>(n), 0.0);
    for (int r = 0; r < n; ++r)
        for (int k = row_ptr[r]; k < row_ptr[r + 1]; ++k)
            if (col[k] == r) d[r] = val[k];
    return d;
}

void SparseOperator::write_coordinate(std::ostream& os) const {
    char buf[80];
    for (int r = 0; r < n; ++r) {
        for (int k = row_ptr[r]; k < row_ptr[r + 1]; ++k) {
            std::snprintf(buf, sizeof buf, "%d %d %.17g\n", r, col[k], val[k]);
            os << buf;
        }
    }
}

DofMap DofMap::all_nodes(const TriMesh& mesh) {
    DofMap dm;
    dm.dof_of_node.resize(mesh.nodes.size());
    std::iota(dm.dof_of_node.begin(), dm.dof_of_node.end(), 0);
    dm.n_dofs = mesh.n_nodes();
    return dm;
}

DofMap DofMap::dirichlet(const TriMesh& mesh) {
    DofMap dm;
    dm.dof_of_node.assign(mesh.nodes.size(), 0);
    for (const auto& e : mesh.edges) {
        if (e.tag == EdgeTag::DirichletOuter) {
            dm.dof_of_node[e.a] = -1;
            dm.dof_of_node[e.b] = -1;
        }
    }
    int next = 0;
    for (auto& d : dm.dof_of_node)
        d = (d == -1) ? -1 : next++;
    dm.n_dofs = next;
    return dm;
}

DofMap DofMap::periodic(const CellMesh& cell_mesh) {
    DofMap dm;
    const int n = cell_mesh.mesh.n_nodes();
    dm.dof_of_node.assign(n, -1);
    int next = 0;
    for (int v = 0; v < n; ++v)
        if (cell_mesh.periodic_master[v] == v) dm.dof_of_node[v] = next++;
    for (int v = 0; v < n; ++v)
        if (dm.dof_of_node[v] < 0) dm.dof_of_node[v] = dm.dof_of_node[cell_mesh.periodic_master[v]];
    dm.n_dofs = next;
    return dm;
}

std::vector<double> DofMap::to_dofs(const std::vector<double>& nodal) const {
    if (nodal.size() != dof_of_node.size()) throw DimensionError("to_dofs: size mismatch");
    std::vector<double> out(static_cast<std::size_t>(n_dofs), 0.0);
    for (std::size_t v = 0; v < nodal.size(); ++v)
        if (dof_of_node[v] >= 0) out[dof_of_node[v]] = nodal[v];
    return out;
}

std::vector<double> DofMap::to_nodes(const std::vector<double>& dofs) const {
    if (dofs.size() != static_cast<std::size_t>(n_dofs))
        throw DimensionError("to_nodes: size mismatch");
    std::vector<double> out(dof_of_node.size(), 0.0);
    for (std::size_t v = 0; v < dof_of_node.size(); ++v)
        if (dof_of_node[v] >= 0) out[v] = dofs[dof_of_node[v]];
    return out;
}

std::vector<double> DofMap::sample(const TriMesh& mesh,
                                   const std::function<double(double, double)>& f) const {
    std::vector<double> nodal(mesh.nodes.size());
    for (std::size_t v = 0; v < nodal.size(); ++v)
        nodal[v] = f(mesh.nodes[v].x, mesh.nodes[v].y);
    return to_dofs(nodal);
}

SparseOperator assemble_stiffness(const TriMesh& mesh, const CoefficientFn& coefficient,
                                  const DofMap& dofmap) {
    std::vector<Triplet> trips;
    trips.reserve(static_cast<std::size_t>(mesh.n_tris()) * 9);
    double max_asym = 0.0, max_entry = 0.0;
    for (int t = 0; t < mesh.n_tris(); ++t) {
        const ElementGeometry g = element_geometry(mesh, t);
        // int_e a dx with the midpoint rule (exact for linear a)
        double a11 = 0, a12 = 0, a21 = 0, a22 = 0;
        for (int q = 0; q < 3; ++q) {
            const Mat2 a = coefficient(g.mid[q].x, g.mid[q].y);
            a11 += a[0];
            a12 += a[1];
            a21 += a[2];
            a22 += a[3];
            max_asym = std::max(max_asym, std::fabs(a[1] - a[2]));
            max_entry = std::max({max_entry, std::fabs(a[0]), std::fabs(a[1]), std::fabs(a[2]),
                                  std::fabs(a[3])});
        }
        const double w = g.area / 3.0;
        a11 *= w;
        a12 *= w;
        a21 *= w;
        a22 *= w;
        const auto& tr = mesh.tris[t];
        for (int r = 0; r < 3; ++r) {
            const int dr = dofmap.dof_of_node[tr[r]];
            if (dr < 0) continue;
            for (int c = 0; c < 3; ++c) {
                const int dc = dofmap.dof_of_node[tr[c]];
                if (dc < 0) continue;
                // grad(phi_c)^T is contracted against a^T grad(phi_r):
                // K[r][c] = int (a11 cx rx + a12 cy rx... ) laid out explicitly
                const double v = g.gx[r] * (a11 * g.gx[c] + a12 * g.gy[c]) +
                                 g.gy[r] * (a21 * g.gx[c] + a22 * g.gy[c]);
                trips.push_back({dr, dc, v});
            }
        }
    }
    SparseOperator op = compress(dofmap.n_dofs, trips,
                                 max_asym <= 1e-14 * std::max(max_entry, 1.0));
    for (std::size_t v = 0; v < dofmap.dof_of_node.size(); ++v)
        if (dofmap.dof_of_node[v] < 0)
            op.eliminated_nodes.push_back(static_cast<int>(v));
    return op;
}

SparseOperator assemble_mass(const TriMesh& mesh, const DofMap& dofmap) {
    std::vector<Triplet> trips;
    trips.reserve(static_cast<std::size_t>(mesh.n_tris()) * 9);
    for (int t = 0; t < mesh.n_tris(); ++t) {
        const double area = mesh.tri_area(t);
        if (!(area > 0.0)) throw AssemblyError("degenerate element " + std::to_string(t));
        const auto& tr = mesh.tris[t];
        for (int r = 0; r < 3; ++r) {
            const int dr = dofmap.dof_of_node[tr[r]];
            if (dr < 0) continue;
            for (int c = 0; c < 3; ++c) {
                const int dc = dofmap.dof_of_node[tr[c]];
                if (dc < 0) continue;
                trips.push_back({dr, dc, area / 12.0 * (r == c ? 2.0 : 1.0)});
            }
        }
    }
    SparseOperator op = compress(dofmap.n_dofs, trips, true);
    for (std::size_t v = 0; v < dofmap.dof_of_node.size(); ++v)
        if (dofmap.dof_of_node[v] < 0)
            op.eliminated_nodes.push_back(static_cast<int>(v));
    return op;
}

IncompleteCholesky IncompleteCholesky::build(const SparseOperator& A) {
    const int n = A.n;
    IncompleteCholesky ic;
    ic.n_ = n;
    ic.diag_.assign(static_cast<std::size_t>(n), 0.0);
    ic.lrow_.assign(static_cast<std::size_t>(n) + 1, 0);
    // pattern: strictly lower triangle of A
    for (int i = 0; i < n; ++i)
        for (int k = A.row_ptr[i]; k < A.row_ptr[i + 1]; ++k)
            if (A.col[k] < i) ++ic.lrow_[i + 1];
    for (int i = 0; i < n; ++i) ic.lrow_[i + 1] += ic.lrow_[i];
    ic.lcol_.resize(static_cast<std::size_t>(ic.lrow_[n]));
    ic.lval_.assign(ic.lcol_.size(), 0.0);
    std::vector<double> avals(ic.lcol_.size());
    std::vector<double> adiag(static_cast<std::size_t>(n), 0.0);
    {
        std::vector<int> fill(static_cast<std::size_t>(n), 0);
        for (int i = 0; i < n; ++i) {
            for (int k = A.row_ptr[i]; k < A.row_ptr[i + 1]; ++k) {
                if (A.col[k] < i) {
                    const int pos = ic.lrow_[i] + fill[i]++;
                    ic.lcol_[pos] = A.col[k]; // CSR column order is ascending
                    avals[pos] = A.val[k];
                } else if (A.col[k] == i) {
                    adiag[i] = A.val[k];
                }
            }
        }
    }
    // factorization with a diagonal shift retried on breakdown
    double shift = 0.0;
    for (int attempt = 0; attempt < 8; ++attempt) {
        bool ok = true;
        for (int i = 0; i < n && ok; ++i) {
            // scatter row i of L computed so far
            for (int k = ic.lrow_[i]; k < ic.lrow_[i + 1]; ++k) {
                const int j = ic.lcol_[k];
                // l_ij = (a_ij - sum_p l_ip l_jp) / d_j, p < j
                double s = avals[k];
                // merge rows i and j of the current factor
                int pi = ic.lrow_[i], pj = ic.lrow_[j];
                while (pi < k && pj < ic.lrow_[j + 1]) {
                    if (ic.lcol_[pi] == ic.lcol_[pj]) {
                        s -= ic.lval_[pi] * ic.lval_[pj];
                        ++pi;
                        ++pj;
                    } else if (ic.lcol_[pi] < ic.lcol_[pj]) {
                        ++pi;
                    } else {
                        ++pj;
                    }
                }
                ic.lval_[k] = s / ic.diag_[j];
            }
            double d = adiag[i] * (1.0 + shift);
            for (int k = ic.lrow_[i]; k < ic.lrow_[i + 1]; ++k)
                d -= ic.lval_[k] * ic.lval_[k];
            if (!(d > 0.0)) {
                ok = false;
                break;
            }
            ic.diag_[i] = std::sqrt(d);
        }
        if (ok) break;
        shift = shift == 0.0 ? 1e-8 : shift * 100.0;
        std::fill(ic.lval_.begin(), ic.lval_.end(), 0.0);
        if (attempt == 7) throw SolverError("incomplete Cholesky breakdown");
    }
    // strictly upper transpose for the backward sweep
    ic.urow_.assign(static_cast<std::size_t>(n) + 1, 0);
    for (std::size_t k = 0; k < ic.lcol_.size(); ++k) ++ic.urow_[ic.lcol_[k] + 1];
    for (int i = 0; i < n; ++i) ic.urow_[i + 1] += ic.urow_[i];
    ic.ucol_.resize(ic.lcol_.size());
    ic.uval_.resize(ic.lcol_.size());
    {
        std::vector<int> fill(static_cast<std::size_t>(n), 0);
        for (int i = 0; i < n; ++i) {
            for (int k = ic.lrow_[i]; k < ic.lrow_[i + 1]; ++k) {
                const int j = ic.lcol_[k];
                const int pos = ic.urow_[j] + fill[j]++;
                ic.ucol_[pos] = i;
                ic.uval_[pos] = ic.lval_[k];
            }
        }
    }
    return ic;
}

void IncompleteCholesky::apply(const std::vector<double>& r, std::vector<double>& z) const {
    const int n = n_;
    z.resize(r.size());
    // forward: L y = r
    for (int i = 0; i < n; ++i) {
        double s = r[i];
        for (int k = lrow_[i]; k < lrow_[i + 1]; ++k) s -= lval_[k] * z[lcol_[k]];
        z[i] = s / diag_[i];
    }
    // backward: L^T z = y
    for (int i = n - 1; i >= 0; --i) {
        double s = z[i];
        for (int k = urow_[i]; k < urow_[i + 1]; ++k) s -= uval_[k] * z[ucol_[k]];
        z[i] = s / diag_[i];
    }
}

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

void project_out(std::vector<double>& v, const std::vector<double>& dir, double dir_norm2) {
    const double c = dot(v, dir) / dir_norm2;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * dir[i];
}

} // namespace

std::vector<double> solve_spd(const SparseOperator& op, const std::vector<double>& rhs,
                              const SolveOptions& opts, SolveReport* report) {
    const int n = op.n;
    if (rhs.size() != static_cast<std::size_t>(n)) throw DimensionError("solve_spd: rhs size");
    const int max_iter = opts.max_iter > 0 ? opts.max_iter : 10 * std::max(n, 1);

    std::vector<double> diag_storage;
    const std::vector<double>* diag_ptr = opts.jacobi;
    if (!diag_ptr) {
        diag_storage = op.diagonal();
        for (double& d : diag_storage)
            if (d <= 0.0) d = 1.0;
        diag_ptr = &diag_storage;
    }
    const std::vector<double>& diag = *diag_ptr;

    double deflate_norm2 = 0.0;
    if (opts.deflate) deflate_norm2 = dot(*opts.deflate, *opts.deflate);

    std::vector<double> x(rhs.size(), 0.0);
    if (opts.x0) {
        if (opts.x0->size() != rhs.size()) throw DimensionError("solve_spd: x0 size");
        x = *opts.x0;
    }
    std::vector<double> b = rhs;
    if (opts.deflate) {
        project_out(b, *opts.deflate, deflate_norm2);
        project_out(x, *opts.deflate, deflate_norm2);
    }

    const double b_norm = std::sqrt(dot(b, b));
    if (b_norm == 0.0) {
        if (report) *report = {0, 0.0};
        return std::vector<double>(rhs.size(), 0.0);
    }

    std::vector<double> r(rhs.size()), z(rhs.size()), p(rhs.size()), Ap(rhs.size());
    if (opts.x0) {
        op.matvec(x, Ap);
        for (int i = 0; i < n; ++i) r[i] = b[i] - Ap[i];
    } else {
        r = b;
    }
    if (opts.deflate) project_out(r, *opts.deflate, deflate_norm2);

    auto precondition = [&]() {
        if (opts.ic) {
            opts.ic->apply(r, z);
        } else {
            for (int i = 0; i < n; ++i) z[i] = r[i] / diag[i];
        }
    };
    precondition();
    p = z;
    double rz = dot(r, z);
    double rn = std::sqrt(dot(r, r));
    int it = 0;
    while (rn > opts.tol * b_norm) {
        if (it >= max_iter)
            throw ConvergenceError("solve_spd: CG exceeded " + std::to_string(max_iter) +
                                       " iterations",
                                   rn / b_norm);
        op.matvec(p, Ap);
        const double pAp = dot(p, Ap);
        if (!(pAp > 0.0))
            throw SingularSystemError("solve_spd: operator not positive definite on this space");
        const double alpha = rz / pAp;
        for (int i = 0; i < n; ++i) {
            x[i] += alpha * p[i];
            r[i] -= alpha * Ap[i];
        }
        if (opts.deflate && (it % 32) == 31) project_out(r, *opts.deflate, deflate_norm2);
        precondition();
        const double rz_new = dot(r, z);
        const double beta = rz_new / rz;
        rz = rz_new;
        for (int i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
        rn = std::sqrt(dot(r, r));
        ++it;
    }
    if (opts.deflate) project_out(x, *opts.deflate, deflate_norm2);
    if (report) *report = {it, rn / b_norm};
    return x;
}

double l2_pairing(const TriMesh& mesh, const std::vector<double>& u,
                  const std::function<double(double, double)>& phi) {
    if (u.size() != mesh.nodes.size()) throw DimensionError("l2_pairing: field size");
    double s = 0.0;
    for (int t = 0; t < mesh.n_tris(); ++t) {
        const double area = mesh.tri_area(t);
        const auto& tr = mesh.tris[t];
        double uv[3], pv[3];
        for (int k = 0; k < 3; ++k) {
            uv[k] = u[tr[k]];
            pv[k] = phi(mesh.nodes[tr[k]].x, mesh.nodes[tr[k]].y);
        }
        // u^T (mass element) phi
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                s += uv[r] * (area / 12.0 * (r == c ? 2.0 : 1.0)) * pv[c];
    }
    return s;
}

std::vector<double> assemble_load(const TriMesh& mesh, const DofMap& dofmap,
                                  const std::function<double(double, double)>& f) {
    std::vector<double> w_nodes(mesh.nodes.size(), 0.0);
    std::vector<double> f_nodes(mesh.nodes.size());
    for (std::size_t v = 0; v < f_nodes.size(); ++v)
        f_nodes[v] = f(mesh.nodes[v].x, mesh.nodes[v].y);
    for (int t = 0; t < mesh.n_tris(); ++t) {
        const double area = mesh.tri_area(t);
        const auto& tr = mesh.tris[t];
        for (int r = 0; r < 3; ++r) {
            double s = 0.0;
            for (int c = 0; c < 3; ++c)
                s += area / 12.0 * (r == c ? 2.0 : 1.0) * f_nodes[tr[c]];
            w_nodes[tr[r]] += s;
        }
    }
    std::vector<double> w(static_cast<std::size_t>(dofmap.n_dofs), 0.0);
    for (std::size_t v = 0; v < w_nodes.size(); ++v)
        if (dofmap.dof_of_node[v] >= 0) w[dofmap.dof_of_node[v]] += w_nodes[v];
    return w;
}

double nodal_l2_norm2(const TriMesh& mesh, const std::vector<double>& nodal) {
    if (nodal.size() != mesh.nodes.size()) throw DimensionError("nodal_l2_norm2: field size");
    double s = 0.0;
    for (int t = 0; t < mesh.n_tris(); ++t) {
        const double area = mesh.tri_area(t);
        const auto& tr = mesh.tris[t];
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                s += nodal[tr[r]] * (area / 12.0 * (r == c ? 2.0 : 1.0)) * nodal[tr[c]];
    }
    return s;
}

double smallest_generalized_eigenvalue(const SparseOperator& K, const SparseOperator& M,
                                       int iterations) {
    const int n = K.n;
    std::vector<double> x(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) x[i] = 1.0 + 0.37 * ((i * 2654435761u) % 97) / 97.0;
    double lambda = 0.0;
    SolveOptions opts;
    opts.tol = 1e-8;
    std::vector<double> Mx;
    for (int it = 0; it < iterations; ++it) {
        M.matvec(x, Mx);
        opts.x0 = &x;
        std::vector<double> y = solve_spd(K, Mx, opts);
        const double norm = std::sqrt(M.quadratic_form(y));
        for (double& v : y) v /= norm;
        x = std::move(y);
        lambda = K.quadratic_form(x) / M.quadratic_form(x);
    }
    return lambda;
}

double measured_ellipticity(const TriMesh& mesh, const CoefficientFn& coefficient) {
    double worst = std::numeric_limits<double>::infinity();
    for (int t = 0; t < mesh.n_tris(); ++t) {
        const ElementGeometry g = element_geometry(mesh, t);
        for (int q = 0; q < 3; ++q) {
            const Mat2 a = coefficient(g.mid[q].x, g.mid[q].y);
            const double tr2 = 0.5 * (a[0] + a[3]);
            const double off = 0.5 * (a[1] + a[2]);
            const double rad = std::sqrt(0.25 * (a[0] - a[3]) * (a[0] - a[3]) + off * off);
            worst = std::min(worst, tr2 - rad);
        }
    }
    return worst;
}

} // namespace perfhom
