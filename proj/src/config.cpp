#include "perfhom/config.hpp"

#include "perfhom/errors.hpp"
#include "perfhom/expr.hpp"
#include "perfhom/version.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace perfhom {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    std::size_t b = s.find_last_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

std::vector<std::string> tokens(const std::string& s) {
    std::istringstream iss(s);
    std::vector<std::string> out;
    std::string tok;
    while (iss >> tok) out.push_back(tok);
    return out;
}

double to_double(const std::string& s, const std::string& where) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("bad numeric value '" + s + "' for " + where);
    }
}

long long to_int(const std::string& s, const std::string& where) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("bad integer value '" + s + "' for " + where);
    }
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

RunConfig parse_config(std::istream& is) {
    RunConfig cfg;
    std::string line, section;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("line " + std::to_string(line_no) + ": unterminated section");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const std::string where = section + "." + key + " (line " + std::to_string(line_no) + ")";
        const std::vector<std::string> vals = tokens(value);
        auto need = [&](std::size_t n) {
            if (vals.size() != n)
                throw ConfigError(where + ": expected " + std::to_string(n) + " value(s)");
        };

        if (section == "geometry") {
            if (key == "domain") {
                need(4);
                cfg.domain = {to_double(vals[0], where), to_double(vals[1], where),
                              to_double(vals[2], where), to_double(vals[3], where)};
            } else if (key == "cell") {
                need(2);
                cfg.cell_l1 = to_double(vals[0], where);
                cfg.cell_l2 = to_double(vals[1], where);
            } else if (key == "hole") {
                if (vals.empty()) throw ConfigError(where + ": empty hole spec");
                if (vals[0] == "none") {
                    cfg.hole = Hole{};
                } else if (vals[0] == "disk") {
                    need(4);
                    cfg.hole.kind = Hole::Kind::Disk;
                    cfg.hole.center = {to_double(vals[1], where), to_double(vals[2], where)};
                    cfg.hole.radius = to_double(vals[3], where);
                } else if (vals[0] == "poly") {
                    if (vals.size() < 7 || (vals.size() - 1) % 2 != 0)
                        throw ConfigError(where + ": poly needs >= 3 x y pairs");
                    cfg.hole.kind = Hole::Kind::Polygon;
                    cfg.hole.vertices.clear();
                    for (std::size_t i = 1; i + 1 < vals.size(); i += 2)
                        cfg.hole.vertices.push_back(
                            {to_double(vals[i], where), to_double(vals[i + 1], where)});
                } else {
                    throw ConfigError(where + ": unknown hole kind '" + vals[0] + "'");
                }
            } else if (key == "eps") {
                cfg.eps_list.clear();
                for (const auto& v : vals) cfg.eps_list.push_back(to_double(v, where));
            } else if (key == "h") {
                need(1);
                cfg.h = to_double(vals[0], where);
            } else if (key == "cell_h") {
                need(1);
                cfg.cell_h = to_double(vals[0], where);
            } else {
                throw ConfigError(where + ": unknown key");
            }
        } else if (section == "coefficient") {
            if (key == "preset") {
                if (vals.empty()) throw ConfigError(where + ": empty preset");
                cfg.coefficient.preset = vals[0];
                if (vals[0] == "diag" || vals[0] == "checker") {
                    need(3);
                    cfg.coefficient.a1 = to_double(vals[1], where);
                    cfg.coefficient.a2 = to_double(vals[2], where);
                } else if (vals[0] == "identity" || vals[0] == "expr") {
                    need(1);
                } else {
                    throw ConfigError(where + ": unknown coefficient preset '" + vals[0] + "'");
                }
            } else if (key == "a11") cfg.coefficient.e11 = value;
            else if (key == "a12") cfg.coefficient.e12 = value;
            else if (key == "a21") cfg.coefficient.e21 = value;
            else if (key == "a22") cfg.coefficient.e22 = value;
            else if (key == "alpha") {
                need(1);
                cfg.coefficient.alpha = to_double(vals[0], where);
            } else if (key == "bound") {
                need(1);
                cfg.coefficient.linf_bound = to_double(vals[0], where);
            } else {
                throw ConfigError(where + ": unknown key");
            }
        } else if (section == "noise") {
            if (key == "m") {
                need(1);
                cfg.noise_m = static_cast<int>(to_int(vals[0], where));
            } else if (key == "sigma") {
                need(1);
                cfg.noise_sigma = to_double(vals[0], where);
            } else if (key == "p") {
                need(1);
                cfg.noise_p = to_double(vals[0], where);
            } else if (key == "preset") {
                need(1);
                cfg.noise_preset = vals[0];
            } else if (key == "seed") {
                need(1);
                cfg.seed = static_cast<std::uint64_t>(to_int(vals[0], where));
            } else {
                throw ConfigError(where + ": unknown key");
            }
        } else if (section == "problem") {
            if (key == "f") {
                if (vals.empty()) throw ConfigError(where + ": empty forcing spec");
                cfg.f_preset = vals[0];
                cfg.f_amp = vals.size() > 1 ? to_double(vals[1], where) : 0.0;
            } else if (key == "u0") {
                if (vals.empty()) throw ConfigError(where + ": empty initial spec");
                cfg.u0_preset = vals[0];
                cfg.u0_amp = vals.size() > 1 ? to_double(vals[1], where) : 0.0;
            } else if (key == "T") {
                need(1);
                cfg.T = to_double(vals[0], where);
            } else if (key == "dt") {
                need(1);
                cfg.dt = to_double(vals[0], where);
            } else if (key == "T_long") {
                need(1);
                cfg.T_long = to_double(vals[0], where);
            } else if (key == "burn_in") {
                need(1);
                cfg.burn_in = to_double(vals[0], where);
            } else if (key == "solver_tol") {
                need(1);
                cfg.solver_tol = to_double(vals[0], where);
            } else {
                throw ConfigError(where + ": unknown key");
            }
        } else if (section == "experiment") {
            if (key == "paths") {
                need(1);
                cfg.paths = static_cast<int>(to_int(vals[0], where));
            } else if (key == "oracle_paths") {
                need(1);
                cfg.oracle_paths = static_cast<int>(to_int(vals[0], where));
            } else if (key == "test_functions") {
                need(1);
                cfg.test_functions = static_cast<int>(to_int(vals[0], where));
            } else if (key == "metrics") {
                cfg.metrics = vals;
            } else if (key == "threads") {
                need(1);
                cfg.threads = static_cast<int>(to_int(vals[0], where));
            } else if (key == "stationary_paths") {
                need(1);
                cfg.stationary_paths = static_cast<int>(to_int(vals[0], where));
            } else if (key == "stationary_dt") {
                need(1);
                cfg.stationary_dt = to_double(vals[0], where);
            } else if (key == "stationary_stride") {
                need(1);
                cfg.stationary_stride = static_cast<int>(to_int(vals[0], where));
            } else if (key == "stationary_eps") {
                need(1);
                cfg.stationary_eps = to_double(vals[0], where);
            } else if (key == "cell_refine") {
                need(1);
                cfg.cell_refine = static_cast<int>(to_int(vals[0], where));
            } else {
                throw ConfigError(where + ": unknown key");
            }
        } else if (section == "acceptance") {
            if (key == "energy_se_factor") {
                need(1);
                cfg.energy_se_factor = to_double(vals[0], where);
            } else if (key == "pairing_se_factor") {
                need(1);
                cfg.pairing_se_factor = to_double(vals[0], where);
            } else if (key == "stationary_se_factor") {
                need(1);
                cfg.stationary_se_factor = to_double(vals[0], where);
            } else if (key == "ito_dt_factor") {
                need(1);
                cfg.ito_dt_factor = to_double(vals[0], where);
            } else {
                throw ConfigError(where + ": unknown key");
            }
        } else if (section == "output") {
            if (key == "dir") {
                need(1);
                cfg.out_dir = vals[0];
            } else {
                throw ConfigError(where + ": unknown key");
            }
        } else {
            throw ConfigError("line " + std::to_string(line_no) + ": unknown section [" +
                              section + "]");
        }
    }
    cfg.validate();
    return cfg;
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream ifs(path);
    if (!ifs) throw ConfigError("cannot open config file '" + path + "'");
    return parse_config(ifs);
}

void RunConfig::validate() const {
    if (domain.width() <= 0.0 || domain.height() <= 0.0)
        throw ConfigError("geometry.domain: empty rectangle");
    if (cell_l1 <= 0.0 || cell_l2 <= 0.0) throw ConfigError("geometry.cell: lengths must be > 0");
    if (eps_list.empty()) throw ConfigError("geometry.eps: need at least one value");
    for (std::size_t i = 0; i < eps_list.size(); ++i) {
        if (eps_list[i] <= 0.0) throw ConfigError("geometry.eps: values must be positive");
        if (i > 0 && eps_list[i] >= eps_list[i - 1])
            throw ConfigError("geometry.eps: list must be sorted descending");
    }
    if (h <= 0.0 || cell_h <= 0.0) throw ConfigError("geometry: h and cell_h must be positive");
    if (coefficient.alpha <= 0.0) throw ConfigError("coefficient.alpha must be positive");
    if (coefficient.linf_bound <= 0.0) throw ConfigError("coefficient.bound must be positive");
    if (noise_m < 0) throw ConfigError("noise.m must be nonnegative");
    if (noise_sigma < 0.0) throw ConfigError("noise.sigma must be nonnegative");
    if (noise_sigma > 0.0 && noise_m > 0 && noise_p <= 0.5)
        throw ConfigError("noise.p must exceed 1/2 for a finite trace bound");
    if (T <= 0.0 || dt <= 0.0) throw ConfigError("problem: T and dt must be positive");
    const double steps = T / dt;
    if (std::fabs(steps - std::lround(steps)) > 1e-9 * std::max(1.0, steps))
        throw ConfigError("problem.dt must divide T");
    if (T_long > 0.0 && stationary_dt > 0.0) {
        const double ls = T_long / stationary_dt;
        if (std::fabs(ls - std::lround(ls)) > 1e-9 * std::max(1.0, ls))
            throw ConfigError("experiment.stationary_dt must divide T_long");
    }
    if (burn_in < 0.0 || burn_in >= T_long)
        throw ConfigError("problem.burn_in must lie in [0, T_long)");
    if (paths <= 0 || oracle_paths <= 0 || stationary_paths <= 0)
        throw ConfigError("experiment: path counts must be positive");
    if (test_functions <= 0) throw ConfigError("experiment.test_functions must be positive");
    if (threads <= 0) throw ConfigError("experiment.threads must be positive");
    if (stationary_stride <= 0) throw ConfigError("experiment.stationary_stride must be positive");
    if (solver_tol <= 0.0) throw ConfigError("problem.solver_tol must be positive");
    const std::vector<std::string> known{"energy", "pairing", "strong", "stationary"};
    for (const auto& m : metrics)
        if (std::find(known.begin(), known.end(), m) == known.end())
            throw ConfigError("experiment.metrics: unknown metric '" + m + "'");
    if (stationary_eps > 0.0) {
        bool found = false;
        for (double e : eps_list)
            if (std::fabs(e - stationary_eps) < 1e-12) found = true;
        if (!found) throw ConfigError("experiment.stationary_eps must be one of geometry.eps");
    }
    // the coefficient must be constructible and elliptic where sampled
    const PeriodicCell cell = make_cell();
    cell.validate();
    double worst = std::numeric_limits<double>::infinity();
    const int n_probe = 17;
    for (int i = 0; i < n_probe; ++i) {
        for (int j = 0; j < n_probe; ++j) {
            const Mat2 a = cell.eval((i + 0.5) * cell_l1 / n_probe, (j + 0.5) * cell_l2 / n_probe);
            const double tr2 = 0.5 * (a[0] + a[3]);
            const double off = 0.5 * (a[1] + a[2]);
            worst = std::min(worst,
                             tr2 - std::sqrt(0.25 * (a[0] - a[3]) * (a[0] - a[3]) + off * off));
            for (double v : a)
                if (std::fabs(v) > coefficient.linf_bound * (1.0 + 1e-9))
                    throw ConfigError("coefficient exceeds its declared bound");
        }
    }
    if (worst <= 0.0) throw ConfigError("coefficient is not elliptic on sampled points");
    if (worst < coefficient.alpha * (1.0 - 1e-9))
        throw ConfigError("coefficient violates its declared ellipticity constant alpha");
}

bool RunConfig::has_metric(const std::string& name) const {
    return std::find(metrics.begin(), metrics.end(), name) != metrics.end();
}

double RunConfig::resolved_stationary_eps() const {
    if (stationary_eps > 0.0) return stationary_eps;
    return eps_list[eps_list.size() / 2];
}

PeriodicCell RunConfig::make_cell() const {
    PeriodicCell cell;
    cell.l1 = cell_l1;
    cell.l2 = cell_l2;
    cell.hole = hole;
    cell.alpha = coefficient.alpha;
    cell.linf_bound = coefficient.linf_bound;
    const CoefficientConfig& cc = coefficient;
    if (cc.preset == "identity") {
        cell.coefficient = [](double, double) { return Mat2{1.0, 0.0, 0.0, 1.0}; };
    } else if (cc.preset == "diag") {
        const double a1 = cc.a1, a2 = cc.a2;
        cell.coefficient = [a1, a2](double, double) { return Mat2{a1, 0.0, 0.0, a2}; };
    } else if (cc.preset == "checker") {
        const double a1 = cc.a1, a2 = cc.a2, half = cell_l1 / 2.0;
        cell.coefficient = [a1, a2, half](double y1, double) {
            const double v = y1 < half ? a1 : a2;
            return Mat2{v, 0.0, 0.0, v};
        };
    } else if (cc.preset == "expr") {
        const Expr e11 = Expr::parse(cc.e11);
        const Expr e12 = Expr::parse(cc.e12);
        const Expr e21 = Expr::parse(cc.e21);
        const Expr e22 = Expr::parse(cc.e22);
        cell.coefficient = [e11, e12, e21, e22](double y1, double y2) {
            return Mat2{e11.eval(y1, y2), e12.eval(y1, y2), e21.eval(y1, y2), e22.eval(y1, y2)};
        };
    } else {
        throw ConfigError("unknown coefficient preset '" + cc.preset + "'");
    }
    return cell;
}

namespace {

// superposition of the first six tensor sine modes; breaks every reflection
// symmetry so all pairing functionals are exercised
double mode_mix(const Rect& d, double x, double y) {
    const double s = kPi * (x - d.x0) / d.width();
    const double t = kPi * (y - d.y0) / d.height();
    return std::sin(s) * std::sin(t) + 0.65 * std::sin(2 * s) * std::sin(t) +
           0.5 * std::sin(s) * std::sin(2 * t) + 0.4 * std::sin(2 * s) * std::sin(2 * t) +
           0.3 * std::sin(3 * s) * std::sin(t) + 0.25 * std::sin(s) * std::sin(3 * t);
}

} // namespace

std::function<double(double, double, double)> RunConfig::make_forcing() const {
    if (f_preset == "zero") return nullptr;
    const Rect d = domain;
    if (f_preset == "const") {
        const double c = f_amp;
        return [c](double, double, double) { return c; };
    }
    if (f_preset == "sine") {
        const double c = f_amp;
        return [c, d](double x, double y, double) {
            return c * std::sin(kPi * (x - d.x0) / d.width()) *
                   std::sin(kPi * (y - d.y0) / d.height());
        };
    }
    if (f_preset == "mix") {
        const double c = f_amp;
        return [c, d](double x, double y, double) { return c * mode_mix(d, x, y); };
    }
    throw ConfigError("unknown forcing preset '" + f_preset + "'");
}

std::function<double(double, double)> RunConfig::make_initial() const {
    if (u0_preset == "zero") return nullptr;
    const Rect d = domain;
    if (u0_preset == "sine") {
        const double c = u0_amp;
        return [c, d](double x, double y) {
            return c * std::sin(kPi * (x - d.x0) / d.width()) *
                   std::sin(kPi * (y - d.y0) / d.height());
        };
    }
    if (u0_preset == "bump") {
        const double c = u0_amp;
        return [c, d](double x, double y) {
            const double s = (x - d.x0) / d.width();
            const double t = (y - d.y0) / d.height();
            const double bx = 4.0 * s * (1.0 - s);
            const double by = 4.0 * t * (1.0 - t);
            return c * bx * bx * by * by;
        };
    }
    if (u0_preset == "mix") {
        const double c = u0_amp;
        return [c, d](double x, double y) { return c * mode_mix(d, x, y); };
    }
    throw ConfigError("unknown initial preset '" + u0_preset + "'");
}

NoiseModel RunConfig::make_noise() const {
    if (noise_sigma == 0.0 || noise_m == 0) return NoiseModel{};
    if (noise_preset == "single_mode") return single_mode_noise(noise_sigma, domain);
    if (noise_preset == "sine_decay")
        return make_sine_noise(noise_m, noise_sigma, noise_p, domain);
    throw ConfigError("unknown noise preset '" + noise_preset + "'");
}

std::string canonical_config_text(const RunConfig& c) {
    std::ostringstream os;
    os << "[geometry]\n";
    os << "domain = " << fmt(c.domain.x0) << ' ' << fmt(c.domain.y0) << ' ' << fmt(c.domain.x1)
       << ' ' << fmt(c.domain.y1) << "\n";
    os << "cell = " << fmt(c.cell_l1) << ' ' << fmt(c.cell_l2) << "\n";
    if (c.hole.kind == Hole::Kind::None) {
        os << "hole = none\n";
    } else if (c.hole.kind == Hole::Kind::Disk) {
        os << "hole = disk " << fmt(c.hole.center.x) << ' ' << fmt(c.hole.center.y) << ' '
           << fmt(c.hole.radius) << "\n";
    } else {
        os << "hole = poly";
        for (const Vec2& v : c.hole.vertices) os << ' ' << fmt(v.x) << ' ' << fmt(v.y);
        os << "\n";
    }
    os << "eps =";
    for (double e : c.eps_list) os << ' ' << fmt(e);
    os << "\n";
    os << "h = " << fmt(c.h) << "\n";
    os << "cell_h = " << fmt(c.cell_h) << "\n";
    os << "[coefficient]\n";
    if (c.coefficient.preset == "diag" || c.coefficient.preset == "checker")
        os << "preset = " << c.coefficient.preset << ' ' << fmt(c.coefficient.a1) << ' '
           << fmt(c.coefficient.a2) << "\n";
    else
        os << "preset = " << c.coefficient.preset << "\n";
    if (c.coefficient.preset == "expr") {
        os << "a11 = " << c.coefficient.e11 << "\n";
        os << "a12 = " << c.coefficient.e12 << "\n";
        os << "a21 = " << c.coefficient.e21 << "\n";
        os << "a22 = " << c.coefficient.e22 << "\n";
    }
    os << "alpha = " << fmt(c.coefficient.alpha) << "\n";
    os << "bound = " << fmt(c.coefficient.linf_bound) << "\n";
    os << "[noise]\n";
    os << "m = " << c.noise_m << "\n";
    os << "sigma = " << fmt(c.noise_sigma) << "\n";
    os << "p = " << fmt(c.noise_p) << "\n";
    os << "preset = " << c.noise_preset << "\n";
    os << "seed = " << c.seed << "\n";
    os << "[problem]\n";
    os << "f = " << c.f_preset;
    if (c.f_preset != "zero") os << ' ' << fmt(c.f_amp);
    os << "\n";
    os << "u0 = " << c.u0_preset;
    if (c.u0_preset != "zero") os << ' ' << fmt(c.u0_amp);
    os << "\n";
    os << "T = " << fmt(c.T) << "\n";
    os << "dt = " << fmt(c.dt) << "\n";
    os << "T_long = " << fmt(c.T_long) << "\n";
    os << "burn_in = " << fmt(c.burn_in) << "\n";
    os << "solver_tol = " << fmt(c.solver_tol) << "\n";
    os << "[experiment]\n";
    os << "paths = " << c.paths << "\n";
    os << "oracle_paths = " << c.oracle_paths << "\n";
    os << "test_functions = " << c.test_functions << "\n";
    os << "metrics =";
    for (const auto& m : c.metrics) os << ' ' << m;
    os << "\n";
    os << "threads = " << c.threads << "\n";
    os << "stationary_paths = " << c.stationary_paths << "\n";
    os << "stationary_dt = " << fmt(c.stationary_dt) << "\n";
    os << "stationary_stride = " << c.stationary_stride << "\n";
    if (c.stationary_eps > 0.0) os << "stationary_eps = " << fmt(c.stationary_eps) << "\n";
    os << "cell_refine = " << c.cell_refine << "\n";
    os << "[acceptance]\n";
    os << "energy_se_factor = " << fmt(c.energy_se_factor) << "\n";
    os << "pairing_se_factor = " << fmt(c.pairing_se_factor) << "\n";
    os << "stationary_se_factor = " << fmt(c.stationary_se_factor) << "\n";
    os << "ito_dt_factor = " << fmt(c.ito_dt_factor) << "\n";
    os << "[output]\n";
    os << "dir = " << c.out_dir << "\n";
    return os.str();
}

std::uint64_t config_hash(const std::string& canonical_text) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : canonical_text) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

void write_manifest(std::ostream& os, const RunConfig& config, const std::string& command) {
    const std::string text = canonical_config_text(config);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(config_hash(text)));
    os << "perfhom_version " << kVersion << "\n";
    os << "command " << command << "\n";
    os << "master_seed " << config.seed << "\n";
    os << "config_hash " << buf << "\n";
    os << "threads " << config.threads << "\n";
    os << "--- resolved config ---\n";
    os << text;
}

} // namespace perfhom
