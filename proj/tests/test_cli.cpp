// End-to-end checks of the perfhom binary: exit codes, artifacts, and
// byte-level reproducibility of the emitted CSVs.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

int failures = 0;

void expect(bool ok, const std::string& what) {
    if (ok) {
        std::printf("ok: %s\n", what.c_str());
    } else {
        std::printf("FAILED: %s\n", what.c_str());
        ++failures;
    }
}

int run(const std::string& cmd) {
    const int rc = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
    std::ifstream ifs(p, std::ios::binary);
    std::ostringstream os;
    os << ifs.rdbuf();
    return os.str();
}

void write(const fs::path& p, const std::string& text) {
    std::ofstream ofs(p, std::ios::binary);
    ofs << text;
}

const char* kCellConfig = R"(
[geometry]
hole = none
eps = 0.25
cell_h = 0.05
[coefficient]
preset = diag 2 3
alpha = 2
bound = 3
[output]
dir = OUTDIR
)";

const char* kCompareConfig = R"(
[geometry]
hole = disk 0.5 0.5 0.25
eps = 0.25
cell_h = 0.1
h = 0.0625
[coefficient]
preset = identity
[noise]
m = 4
sigma = 0.15
seed = 55
[problem]
f = mix 0.5
u0 = mix 1.0
T = 0.05
dt = 0.005
T_long = 0.4
burn_in = 0.1
[experiment]
paths = 4
stationary_paths = 8
stationary_dt = 0.005
stationary_stride = 4
threads = 1
metrics = energy pairing strong
[output]
dir = OUTDIR
)";

std::string with_dir(std::string text, const std::string& dir) {
    const std::string key = "OUTDIR";
    const auto pos = text.find(key);
    return text.replace(pos, key.size(), dir);
}

} // namespace

int main() {
    const std::string bin = PERFHOM_BIN_PATH;
    const fs::path work = fs::temp_directory_path() / "perfhom_cli_test";
    fs::remove_all(work);
    fs::create_directories(work);

    // --- cell: success path and artifact contents
    const fs::path cell_cfg = work / "cell.cfg";
    write(cell_cfg, with_dir(kCellConfig, (work / "out_cell").string()));
    expect(run(bin + " cell --config " + cell_cfg.string()) == 0, "cell exits 0");
    expect(fs::exists(work / "out_cell/cell_solution.txt"), "cell artifact written");
    {
        std::ifstream ifs(work / "out_cell/cell_solution.txt");
        std::string kw;
        double theta, b11, b12, b21, b22;
        ifs >> kw >> theta >> kw >> b11 >> b12 >> b21 >> b22;
        expect(std::abs(theta - 1.0) < 1e-12, "no-hole theta is 1");
        expect(std::abs(b11 - 2.0) < 1e-10 && std::abs(b22 - 3.0) < 1e-10,
               "constant-coefficient B is exact");
    }

    // --- validation failures exit with code 2
    const fs::path bad_cfg = work / "bad.cfg";
    write(bad_cfg, "[coefficient]\npreset = expr\na11 = 0\na12 = 0\na21 = 0\na22 = 0\n");
    expect(run(bin + " cell --config " + bad_cfg.string()) == 2,
           "non-elliptic coefficient exits 2");
    expect(run(bin + " cell --config " + (work / "missing.cfg").string()) == 2,
           "missing config exits 2");
    expect(run(bin + " nonsense") != 0, "unknown subcommand rejected");

    // --- simulate: determinism byte-for-byte, macro needs the cell artifact
    const fs::path sim_cfg = work / "sim.cfg";
    write(sim_cfg, with_dir(kCompareConfig, (work / "out_sim").string()));
    expect(run(bin + " simulate --config " + sim_cfg.string() +
               " --which macro") == 2,
           "macro before cell solve exits 2 (missing artifact)");
    expect(run(bin + " simulate --config " + sim_cfg.string() + " --eps 0.25") == 0,
           "micro simulate exits 0");
    const std::string first = slurp(work / "out_sim/energy_micro_eps0.25.csv");
    expect(!first.empty(), "micro energy CSV written");
    expect(run(bin + " simulate --config " + sim_cfg.string() + " --eps 0.25") == 0,
           "micro simulate re-run exits 0");
    expect(slurp(work / "out_sim/energy_micro_eps0.25.csv") == first,
           "identical seeds give identical CSV bytes");
    expect(run(bin + " simulate --config " + sim_cfg.string() + " --eps 0.3") == 2,
           "unknown eps exits 2");

    // --- compare on a single-eps family: table emitted, PASS (monotonicity
    //     checks are vacuous with one eps)
    expect(run(bin + " cell --config " + sim_cfg.string()) == 0, "cell for compare");
    expect(run(bin + " compare --config " + sim_cfg.string()) == 0,
           "single-eps compare passes");
    expect(fs::exists(work / "out_sim/convergence.csv"), "convergence.csv written");
    expect(fs::exists(work / "out_sim/manifest_compare.txt"), "manifest written");
    const std::string conv = slurp(work / "out_sim/convergence.csv");
    expect(conv.find("energy_sup_gap") != std::string::npos, "table has energy rows");
    expect(conv.find("strong_l2_gap") != std::string::npos, "table has strong rows");

    // --- manifest replay: running from the resolved config reproduces bytes
    const fs::path resolved = work / "out_sim/resolved_config.cfg";
    expect(fs::exists(resolved), "resolved config written");
    std::string replay_text = slurp(resolved);
    const std::string out_b = (work / "out_replay").string();
    const std::string marker = "dir = ";
    const auto pos = replay_text.find(marker);
    replay_text = replay_text.substr(0, pos) + "dir = " + out_b + "\n";
    const fs::path replay_cfg = work / "replay.cfg";
    write(replay_cfg, replay_text);
    expect(run(bin + " cell --config " + replay_cfg.string()) == 0, "replay cell");
    expect(run(bin + " compare --config " + replay_cfg.string()) == 0, "replay compare");
    expect(slurp(fs::path(out_b) / "convergence.csv") == conv,
           "replayed compare reproduces convergence.csv byte-identically");

    std::printf(failures == 0 ? "all cli checks passed\n" : "%d cli checks FAILED\n",
                failures);
    return failures == 0 ? 0 : 1;
}
