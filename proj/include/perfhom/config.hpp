#pragma once

#include "perfhom/geometry.hpp"
#include "perfhom/spde.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace perfhom {

struct CoefficientConfig {
    std::string preset = "identity"; // identity | diag | checker | expr
    double a1 = 1.0, a2 = 1.0;
    std::string e11 = "1", e12 = "0", e21 = "0", e22 = "1"; // expr preset
    double alpha = 1.0;      // declared ellipticity constant
    double linf_bound = 1.0; // declared bound on |a_ij|
};

struct RunConfig {
    // [geometry]
    Rect domain{0.0, 0.0, 1.0, 1.0};
    double cell_l1 = 1.0, cell_l2 = 1.0;
    Hole hole;
    std::vector<double> eps_list{0.25, 0.125, 0.0625}; // sorted descending
    double h = 1.0 / 64.0;
    double cell_h = 0.02;
    // [coefficient]
    CoefficientConfig coefficient;
    // [noise]
    int noise_m = 16;
    double noise_sigma = 0.05;
    double noise_p = 1.5;
    std::string noise_preset = "sine_decay"; // | single_mode
    std::uint64_t seed = 12345;
    // [problem]
    std::string f_preset = "zero"; // zero | const | sine
    double f_amp = 0.0;
    std::string u0_preset = "zero"; // zero | sine | bump
    double u0_amp = 0.0;
    double T = 1.0;
    double dt = 1e-3;
    double T_long = 20.0;
    double burn_in = 2.0;
    double solver_tol = 1e-10;
    // [experiment]
    int paths = 200;
    int oracle_paths = 2000;
    int test_functions = 6;
    std::vector<std::string> metrics{"energy", "pairing", "strong", "stationary"};
    int threads = 1;
    int stationary_paths = 160;
    double stationary_dt = 0.01;
    int stationary_stride = 10;
    double stationary_eps = 0.0; // 0 -> middle entry of eps_list
    int cell_refine = 0;
    // [acceptance]
    double energy_se_factor = 2.0;
    double pairing_se_factor = 2.0;
    double stationary_se_factor = 3.0;
    double ito_dt_factor = 3.0;
    // [output]
    std::string out_dir = "out";

    void validate() const; // throws ConfigError
    bool has_metric(const std::string& name) const;
    double resolved_stationary_eps() const;

    PeriodicCell make_cell() const;
    std::function<double(double, double, double)> make_forcing() const; // null for zero
    std::function<double(double, double)> make_initial() const;         // null for zero
    NoiseModel make_noise() const;
};

RunConfig parse_config(std::istream& is);
RunConfig parse_config_file(const std::string& path);

// deterministic resolved form; parse(canonical(x)) == x and the text is the
// hashed manifest payload
std::string canonical_config_text(const RunConfig& config);
std::uint64_t config_hash(const std::string& canonical_text);

void write_manifest(std::ostream& os, const RunConfig& config, const std::string& command);

} // namespace perfhom
