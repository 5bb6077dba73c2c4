#pragma once

#include "perfhom/geometry.hpp"

#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

namespace perfhom {

// Compressed-sparse-row operator on free DOFs with the boundary-condition
// record of whatever was eliminated or identified to produce it.
struct SparseOperator {
    int n = 0;
    std::vector<int> row_ptr;
    std::vector<int> col;
    std::vector<double> val;
    bool symmetric = true;
    std::vector<int> eliminated_nodes; // Dirichlet nodes (held at value 0)

    void matvec(const std::vector<double>& x, std::vector<double>& y) const;
    std::vector<double> apply(const std::vector<double>& x) const;
    double quadratic_form(const std::vector<double>& x) const; // x^T A x
    double inner(const std::vector<double>& x, const std::vector<double>& y) const; // x^T A y
    std::vector<double> diagonal() const;
    // coordinate text dump "i j value" for debugging
    void write_coordinate(std::ostream& os) const;
};

// node -> global DOF index; -1 marks an eliminated Dirichlet node.
struct DofMap {
    std::vector<int> dof_of_node;
    int n_dofs = 0;

    int n_nodes() const { return static_cast<int>(dof_of_node.size()); }

    // every node is a DOF (pure Neumann / diagnostic assemblies)
    static DofMap all_nodes(const TriMesh& mesh);
    // eliminate nodes on DIRICHLET_OUTER edges
    static DofMap dirichlet(const TriMesh& mesh);
    // periodic identification: slave nodes share their master's DOF
    static DofMap periodic(const CellMesh& cell_mesh);

    std::vector<double> to_dofs(const std::vector<double>& nodal) const;
    std::vector<double> to_nodes(const std::vector<double>& dofs) const;
    // sample a function at nodes and map to DOFs
    std::vector<double> sample(const TriMesh& mesh,
                               const std::function<double(double, double)>& f) const;
};

// Stiffness K[i][j] = sum_elements int a grad(phi_j) . grad(phi_i); the
// coefficient is evaluated at a 3-point (edge midpoint) quadrature rule.
SparseOperator assemble_stiffness(const TriMesh& mesh, const CoefficientFn& coefficient,
                                  const DofMap& dofmap);

// Mass M[i][j] = int phi_i phi_j (consistent P1).
SparseOperator assemble_mass(const TriMesh& mesh, const DofMap& dofmap);

// Zero-fill incomplete Cholesky factors of an SPD operator, for CG systems
// that are solved many times (the time stepper's theta M + dt K).
class IncompleteCholesky {
public:
    static IncompleteCholesky build(const SparseOperator& A);
    // z = (L L^T)^{-1} r
    void apply(const std::vector<double>& r, std::vector<double>& z) const;
    bool empty() const { return n_ == 0; }

private:
    int n_ = 0;
    std::vector<int> lrow_, lcol_; // strictly lower part of L, row CSR
    std::vector<double> lval_;
    std::vector<int> urow_, ucol_; // strictly upper part of L^T, row CSR
    std::vector<double> uval_;
    std::vector<double> diag_;
};

struct SolveOptions {
    double tol = 1e-10;             // relative residual
    int max_iter = 0;               // 0 -> 10 * n
    const std::vector<double>* x0 = nullptr;
    // vector spanning a known kernel to project out (e.g. constants for
    // periodic Neumann problems); rhs must be consistent
    const std::vector<double>* deflate = nullptr;
    // cached Jacobi diagonal for repeated solves with one operator
    const std::vector<double>* jacobi = nullptr;
    // stronger preconditioner; wins over jacobi when set
    const IncompleteCholesky* ic = nullptr;
};

struct SolveReport {
    int iterations = 0;
    double relative_residual = 0.0;
};

// Jacobi-preconditioned conjugate gradients; deterministic (fixed iteration
// order, sequential reductions). Throws ConvergenceError past max_iter.
std::vector<double> solve_spd(const SparseOperator& op, const std::vector<double>& rhs,
                              const SolveOptions& opts = {}, SolveReport* report = nullptr);

// int_D u phi dx with phi sampled at nodes (u^T M phi).
double l2_pairing(const TriMesh& mesh, const std::vector<double>& u,
                  const std::function<double(double, double)>& phi);

// load vector b_v = int f phi_v for free DOFs v, with f interpolated at all
// nodes (boundary values of f are kept in the integral)
std::vector<double> assemble_load(const TriMesh& mesh, const DofMap& dofmap,
                                  const std::function<double(double, double)>& f);

// squared L2 norm of a P1 nodal field (all nodes)
double nodal_l2_norm2(const TriMesh& mesh, const std::vector<double>& nodal);

// smallest eigenvalue of K x = lambda M x by inverse power iteration;
// used for discrete Poincare constants in the well-posedness bound
double smallest_generalized_eigenvalue(const SparseOperator& K, const SparseOperator& M,
                                       int iterations = 60);

// minimum (symmetric-part) ellipticity of the coefficient over the mesh's
// quadrature points
double measured_ellipticity(const TriMesh& mesh, const CoefficientFn& coefficient);

} // namespace perfhom
