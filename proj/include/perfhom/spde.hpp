#pragma once

#include "perfhom/fem.hpp"
#include "perfhom/geometry.hpp"
#include "perfhom/rng.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace perfhom {

// Truncated l2-Wiener noise: W(t) enters through m spatial modes g^i, each
// driven by an independent scalar Brownian motion.  Increment streams are
// counter-based, keyed by (path seed, step, mode).
struct NoiseModel {
    int m = 0;
    std::vector<std::function<double(double, double)>> modes; // g^i(x, y)
    double declared_trace_bound = 0.0;    // C_T: sum_i ||g^i||^2_{L2} (0 = unchecked)
    double declared_gradient_bound = 0.0; // C*:  sum_i ||grad g^i||^2   (0 = unchecked)
};

// modes sigma * i^{-p} * phi_i with phi_i the L2-normalized Dirichlet sine
// eigenfunctions of the rectangle, ordered by eigenvalue
NoiseModel make_sine_noise(int m, double sigma, double decay_p, const Rect& domain);
NoiseModel single_mode_noise(double sigma, const Rect& domain);
NoiseModel scale_noise(NoiseModel noise, double factor);

// m independent N(0, dt) draws for one step of one path
std::vector<double> wiener_increments(const NoiseModel& noise, double dt, int step,
                                      std::uint64_t path_seed);

enum class EquationKind { Micro, Macro };

// Time-stepping problem: theta_w * du = (div(a grad u) + f) dt + g dW with
// homogeneous Dirichlet data on the outer boundary and natural (Neumann)
// conditions on hole boundaries.  theta_w = 1 for the microscopic equation,
// theta (the cell volume fraction) for the homogenized one.
struct ProblemSpec {
    EquationKind kind = EquationKind::Micro;
    double theta_weight = 1.0;
    std::function<double(double, double, double)> forcing; // f(x, y, t); null = 0
    bool forcing_autonomous = true;
    std::function<double(double, double)> initial; // u0(x, y); null = 0
    NoiseModel noise;
    double T = 1.0;
    double dt = 1e-3;
    double solver_tol = 1e-10;

    int n_steps() const;
    void validate() const; // positive dt, dt divides T
};

struct SamplePath {
    std::vector<double> times;
    std::vector<std::vector<double>> states; // DOF vectors, every `stride` steps
    int stride = 1;
    std::uint64_t path_seed = 0;
    std::vector<double> step_residuals;
};

// Assembled, immutable context for one equation on one mesh.  Steps solve
//   (theta M + dt K) u' = theta M u + dt M f(t_n) + sum_i M g^i dW_i
// (drift-implicit, noise-explicit Euler-Maruyama).
class Evolution {
public:
    Evolution(const TriMesh& mesh, DofMap dofmap, const CoefficientFn& coefficient,
              ProblemSpec spec);

    const ProblemSpec& spec() const { return spec_; }
    const TriMesh& mesh() const { return *mesh_; }
    const DofMap& dofmap() const { return dofmap_; }
    const SparseOperator& stiffness() const { return K_; }
    const SparseOperator& mass() const { return M_; }
    int n_steps() const { return n_steps_; }
    double dt() const { return spec_.dt; }
    double theta_weight() const { return spec_.theta_weight; }

    std::vector<double> initial_dofs() const { return u0_; }
    double noise_trace() const { return noise_trace_; }          // sum_i g_i^T M g_i
    double noise_gradient_trace() const { return noise_grad_trace_; } // sum_i g_i^T K g_i
    double forcing_norm2() const { return forcing_norm2_; }      // f^T M f (autonomous f)

    // one Euler-Maruyama step from (u, Mu) at step index `step`
    void step(std::vector<double>& u, std::vector<double>& Mu, int step,
              const std::vector<double>& dW, SolveReport* report = nullptr) const;

    SamplePath simulate_path(std::uint64_t path_seed, int record_stride = 1) const;

    // pairing/load helpers in DOF space
    double mass_norm2(const std::vector<double>& u) const { return M_.quadratic_form(u); }
    double dirichlet_form(const std::vector<double>& u) const { return K_.quadratic_form(u); }
    double load_pairing(const std::vector<double>& u, double t) const; // (f(t), u)_M
    const std::vector<double>& mass_times_mode(int i) const { return Mg_[i]; }

private:
    friend class PathWalker;
    const TriMesh* mesh_;
    DofMap dofmap_;
    ProblemSpec spec_;
    SparseOperator K_, M_, A_; // A = theta M + dt K
    IncompleteCholesky icA_;   // preconditioner for the fixed stepping operator
    std::vector<double> jacobi_;
    std::vector<double> u0_;
    std::vector<double> Mf_; // autonomous load vector (dt-free)
    std::vector<std::vector<double>> Mg_;
    double noise_trace_ = 0.0;
    double noise_grad_trace_ = 0.0;
    double forcing_norm2_ = 0.0;
    int n_steps_ = 0;

    std::vector<double> load_vector(double t) const; // M f(t) at nodes->dofs
};

// convenience single-step form (assembles a fresh context; for small cases)
std::vector<double> step(const std::vector<double>& state, const ProblemSpec& spec,
                         const TriMesh& mesh, const DofMap& dofmap,
                         const CoefficientFn& coefficient, const std::vector<double>& dW);

// One path in flight; keeps (u, Mu) and exposes the per-step scalars the
// ensemble statistics need without extra matvecs.
class PathWalker {
public:
    PathWalker(const Evolution& ev, std::uint64_t path_seed);
    void advance();
    bool done() const { return step_ >= ev_->n_steps(); }
    int step_index() const { return step_; }
    double time() const { return step_ * ev_->dt(); }
    const std::vector<double>& state() const { return u_; }
    double mass_norm2() const { return mass_norm2_; }
    double dirichlet_form() const { return dirichlet_; }
    double last_residual() const { return residual_; }
    double max_residual() const { return max_residual_; }
    std::uint64_t path_seed() const { return seed_; }

private:
    const Evolution* ev_;
    std::uint64_t seed_;
    int step_ = 0;
    std::vector<double> u_, Mu_, b_, dW_;
    double mass_norm2_ = 0.0;
    double dirichlet_ = 0.0;
    double residual_ = 0.0;
    double max_residual_ = 0.0;
};

struct EnergyDiagnostics {
    std::vector<double> times;
    std::vector<double> mass_norm2;            // ||u(t)||^2_M
    std::vector<double> cumulative_dirichlet;  // int_0^t u^T K u (trapezoid)
    std::vector<double> step_residuals;
};

EnergyDiagnostics energy_diagnostics(const SamplePath& path, const Evolution& ev);

} // namespace perfhom
