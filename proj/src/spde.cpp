#include "perfhom/spde.hpp"

#include "perfhom/errors.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

namespace perfhom {

namespace {

constexpr double kPi = 3.14159265358979323846;

// CSR linear combination c1*A + c2*B for operators with compatible dimension
SparseOperator combine(double c1, const SparseOperator& A, double c2, const SparseOperator& B) {
    if (A.n != B.n) throw DimensionError("combine: operator dimensions differ");
    struct T {
        int i, j;
        double v;
    };
    std::vector<T> trips;
    trips.reserve(A.val.size() + B.val.size());
    for (int r = 0; r < A.n; ++r) {
        for (int k = A.row_ptr[r]; k < A.row_ptr[r + 1]; ++k)
            trips.push_back({r, A.col[k], c1 * A.val[k]});
        for (int k = B.row_ptr[r]; k < B.row_ptr[r + 1]; ++k)
            trips.push_back({r, B.col[k], c2 * B.val[k]});
    }
    std::sort(trips.begin(), trips.end(),
              [](const T& a, const T& b) { return std::tie(a.i, a.j) < std::tie(b.i, b.j); });
    SparseOperator out;
    out.n = A.n;
    out.symmetric = A.symmetric && B.symmetric;
    out.eliminated_nodes = A.eliminated_nodes;
    out.row_ptr.assign(A.n + 1, 0);
    std::size_t k = 0;
    while (k < trips.size()) {
        std::size_t e = k;
        double s = 0.0;
        while (e < trips.size() && trips[e].i == trips[k].i && trips[e].j == trips[k].j) {
            s += trips[e].v;
            ++e;
        }
        out.col.push_back(trips[k].j);
        out.val.push_back(s);
        ++out.row_ptr[trips[k].i + 1];
        k = e;
    }
    for (int r = 0; r < A.n; ++r) out.row_ptr[r + 1] += out.row_ptr[r];
    return out;
}

} // namespace

NoiseModel make_sine_noise(int m, double sigma, double decay_p, const Rect& domain) {
    if (m < 0) throw ConfigError("noise mode count must be nonnegative");
    // enumerate (k,l) ordered by eigenvalue (k/Lx)^2 + (l/Ly)^2, ties by k
    const double Lx = domain.width(), Ly = domain.height();
    std::vector<std::tuple<double, int, int>> order;
    const int span = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(m)))) + 2;
    for (int k = 1; k <= m + span; ++k)
        for (int l = 1; l <= m + span; ++l)
            order.emplace_back((k / Lx) * (k / Lx) + (l / Ly) * (l / Ly), k, l);
    std::sort(order.begin(), order.end());

    NoiseModel noise;
    noise.m = m;
    const double norm = 2.0 / std::sqrt(Lx * Ly); // makes ||phi_kl||_{L2(D)} = 1
    double trace = 0.0, grad = 0.0;
    for (int i = 0; i < m; ++i) {
        const auto [ev, k, l] = order[static_cast<std::size_t>(i)];
        const double amp = sigma * std::pow(static_cast<double>(i + 1), -decay_p);
        const double kx = k * kPi / Lx, ky = l * kPi / Ly;
        const double x0 = domain.x0, y0 = domain.y0;
        noise.modes.push_back([amp, norm, kx, ky, x0, y0](double x, double y) {
            return amp * norm * std::sin(kx * (x - x0)) * std::sin(ky * (y - y0));
        });
        trace += amp * amp;
        grad += amp * amp * (kx * kx + ky * ky);
    }
    noise.declared_trace_bound = trace * (1.0 + 1e-9);
    noise.declared_gradient_bound = grad * (1.0 + 1e-9);
    return noise;
}

NoiseModel single_mode_noise(double sigma, const Rect& domain) {
    return make_sine_noise(1, sigma, 0.0, domain);
}

NoiseModel scale_noise(NoiseModel noise, double factor) {
    for (auto& g : noise.modes) {
        auto base = g;
        g = [base, factor](double x, double y) { return factor * base(x, y); };
    }
    noise.declared_trace_bound *= factor * factor;
    noise.declared_gradient_bound *= factor * factor;
    return noise;
}

std::vector<double> wiener_increments(const NoiseModel& noise, double dt, int step,
                                      std::uint64_t path_seed) {
    if (dt <= 0.0) throw ConfigError("wiener_increments: dt must be positive");
    std::vector<double> dW(static_cast<std::size_t>(noise.m));
    const double s = std::sqrt(dt);
    for (int i = 0; i < noise.m; ++i)
        dW[static_cast<std::size_t>(i)] =
            s * rng::normal(rng::key(path_seed, static_cast<std::uint64_t>(step),
                                     static_cast<std::uint64_t>(i), 0x57494E45ull));
    return dW;
}

int ProblemSpec::n_steps() const { return static_cast<int>(std::lround(T / dt)); }

void ProblemSpec::validate() const {
    if (dt <= 0.0 || T < 0.0) throw ConfigError("time grid: need dt > 0 and T >= 0");
    const int n = n_steps();
    if (std::fabs(n * dt - T) > 1e-9 * std::max(1.0, T))
        throw ConfigError("time step dt must divide the final time T");
    if (theta_weight <= 0.0) throw ConfigError("theta weight must be positive");
}

Evolution::Evolution(const TriMesh& mesh, DofMap dofmap, const CoefficientFn& coefficient,
                     ProblemSpec spec)
    : mesh_(&mesh), dofmap_(std::move(dofmap)), spec_(std::move(spec)) {
    spec_.validate();
    n_steps_ = spec_.n_steps();
    K_ = assemble_stiffness(mesh, coefficient, dofmap_);
    M_ = assemble_mass(mesh, dofmap_);
    A_ = combine(spec_.theta_weight, M_, spec_.dt, K_);
    icA_ = IncompleteCholesky::build(A_);
    jacobi_ = A_.diagonal();
    for (double& d : jacobi_)
        if (d <= 0.0) d = 1.0;

    u0_.assign(static_cast<std::size_t>(M_.n), 0.0);
    if (spec_.initial) u0_ = dofmap_.sample(mesh, spec_.initial);

    if (spec_.forcing && spec_.forcing_autonomous) {
        Mf_ = load_vector(0.0);
        std::vector<double> f_nodes(mesh.nodes.size());
        for (std::size_t v = 0; v < f_nodes.size(); ++v)
            f_nodes[v] = spec_.forcing(mesh.nodes[v].x, mesh.nodes[v].y, 0.0);
        forcing_norm2_ = nodal_l2_norm2(mesh, f_nodes);
    }

    Mg_.reserve(spec_.noise.modes.size());
    for (const auto& g : spec_.noise.modes) {
        std::vector<double> gd = dofmap_.sample(mesh, g);
        noise_trace_ += M_.quadratic_form(gd);
        noise_grad_trace_ += K_.quadratic_form(gd);
        Mg_.push_back(M_.apply(gd));
    }
    // declared Hilbert-Schmidt bounds, checked on the assembled modes
    const double tol = 1.05;
    if (spec_.noise.declared_trace_bound > 0.0 &&
        noise_trace_ > tol * spec_.noise.declared_trace_bound)
        throw ConfigError("noise violates its declared trace bound C_T");
    if (spec_.noise.declared_gradient_bound > 0.0 &&
        noise_grad_trace_ > tol * spec_.noise.declared_gradient_bound *
                                std::max(1.0, spec_.theta_weight))
        throw ConfigError("noise violates its declared gradient bound C*");
}

std::vector<double> Evolution::load_vector(double t) const {
    const auto& f = spec_.forcing;
    return assemble_load(*mesh_, dofmap_,
                         [&f, t](double x, double y) { return f(x, y, t); });
}

double Evolution::load_pairing(const std::vector<double>& u, double t) const {
    if (!spec_.forcing) return 0.0;
    const std::vector<double>* Mf = &Mf_;
    std::vector<double> tmp;
    if (!spec_.forcing_autonomous) {
        tmp = load_vector(t);
        Mf = &tmp;
    }
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) s += (*Mf)[i] * u[i];
    return s;
}

void Evolution::step(std::vector<double>& u, std::vector<double>& Mu, int step,
                     const std::vector<double>& dW, SolveReport* report) const {
    if (dW.size() != Mg_.size()) throw DimensionError("step: increment count != mode count");
    const double th = spec_.theta_weight;
    std::vector<double> b(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) b[i] = th * Mu[i];
    if (spec_.forcing) {
        if (spec_.forcing_autonomous) {
            for (std::size_t i = 0; i < u.size(); ++i) b[i] += spec_.dt * Mf_[i];
        } else {
            const std::vector<double> Mf = load_vector(step * spec_.dt);
            for (std::size_t i = 0; i < u.size(); ++i) b[i] += spec_.dt * Mf[i];
        }
    }
    for (std::size_t m = 0; m < Mg_.size(); ++m) {
        const double w = dW[m];
        const std::vector<double>& Mg = Mg_[m];
        for (std::size_t i = 0; i < u.size(); ++i) b[i] += w * Mg[i];
    }
    SolveOptions opts;
    opts.tol = spec_.solver_tol;
    opts.x0 = &u;
    opts.jacobi = &jacobi_;
    opts.ic = &icA_;
    u = solve_spd(A_, b, opts, report);
    M_.matvec(u, Mu);
}

SamplePath Evolution::simulate_path(std::uint64_t path_seed, int record_stride) const {
    SamplePath path;
    path.path_seed = path_seed;
    path.stride = std::max(1, record_stride);
    std::vector<double> u = u0_;
    std::vector<double> Mu = M_.apply(u);
    path.times.push_back(0.0);
    path.states.push_back(u);
    for (int s = 0; s < n_steps_; ++s) {
        const std::vector<double> dW = wiener_increments(spec_.noise, spec_.dt, s, path_seed);
        SolveReport rep;
        step(u, Mu, s, dW, &rep);
        path.step_residuals.push_back(rep.relative_residual);
        if ((s + 1) % path.stride == 0 || s + 1 == n_steps_) {
            path.times.push_back((s + 1) * spec_.dt);
            path.states.push_back(u);
        }
    }
    return path;
}

std::vector<double> step(const std::vector<double>& state, const ProblemSpec& spec,
                         const TriMesh& mesh, const DofMap& dofmap,
                         const CoefficientFn& coefficient, const std::vector<double>& dW) {
    Evolution ev(mesh, dofmap, coefficient, spec);
    std::vector<double> u = state;
    std::vector<double> Mu = ev.mass().apply(u);
    ev.step(u, Mu, 0, dW);
    return u;
}

PathWalker::PathWalker(const Evolution& ev, std::uint64_t path_seed)
    : ev_(&ev), seed_(path_seed), u_(ev.initial_dofs()) {
    Mu_ = ev.mass().apply(u_);
    double s = 0.0;
    for (std::size_t i = 0; i < u_.size(); ++i) s += u_[i] * Mu_[i];
    mass_norm2_ = s;
    dirichlet_ = ev.stiffness().quadratic_form(u_);
}

void PathWalker::advance() {
    const Evolution& ev = *ev_;
    dW_ = wiener_increments(ev.spec().noise, ev.dt(), step_, seed_);
    // keep b to recover u^T K u from the solve identity:
    //   (theta M + dt K) u' = b  =>  u'^T K u' = (u'^T b - theta u'^T M u') / dt
    const double th = ev.theta_weight();
    b_.resize(u_.size());
    for (std::size_t i = 0; i < u_.size(); ++i) b_[i] = th * Mu_[i];
    if (ev.spec().forcing) {
        if (ev.spec().forcing_autonomous) {
            const std::vector<double>& Mf = ev.Mf_;
            for (std::size_t i = 0; i < u_.size(); ++i) b_[i] += ev.dt() * Mf[i];
        } else {
            const std::vector<double> Mf = ev.load_vector(step_ * ev.dt());
            for (std::size_t i = 0; i < u_.size(); ++i) b_[i] += ev.dt() * Mf[i];
        }
    }
    for (std::size_t m = 0; m < dW_.size(); ++m) {
        const double w = dW_[m];
        const std::vector<double>& Mg = ev.mass_times_mode(static_cast<int>(m));
        for (std::size_t i = 0; i < u_.size(); ++i) b_[i] += w * Mg[i];
    }
    SolveOptions opts;
    opts.tol = ev.spec().solver_tol;
    opts.x0 = &u_;
    opts.jacobi = &ev.jacobi_;
    opts.ic = &ev.icA_;
    SolveReport rep;
    u_ = solve_spd(ev.A_, b_, opts, &rep);
    ev.mass().matvec(u_, Mu_);
    double ub = 0.0, um = 0.0;
    for (std::size_t i = 0; i < u_.size(); ++i) {
        ub += u_[i] * b_[i];
        um += u_[i] * Mu_[i];
    }
    mass_norm2_ = um;
    dirichlet_ = (ub - th * um) / ev.dt();
    residual_ = rep.relative_residual;
    max_residual_ = std::max(max_residual_, residual_);
    ++step_;
}

EnergyDiagnostics energy_diagnostics(const SamplePath& path, const Evolution& ev) {
    EnergyDiagnostics out;
    out.times = path.times;
    out.step_residuals = path.step_residuals;
    out.mass_norm2.reserve(path.states.size());
    out.cumulative_dirichlet.reserve(path.states.size());
    double acc = 0.0;
    double prev_form = 0.0;
    for (std::size_t k = 0; k < path.states.size(); ++k) {
        out.mass_norm2.push_back(ev.mass_norm2(path.states[k]));
        const double form = ev.dirichlet_form(path.states[k]);
        if (k > 0) acc += 0.5 * (form + prev_form) * (path.times[k] - path.times[k - 1]);
        prev_form = form;
        out.cumulative_dirichlet.push_back(acc);
    }
    return out;
}

} // namespace perfhom
