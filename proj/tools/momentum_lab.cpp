#include "momentum_lab.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

using namespace momentum_lab;

namespace {

Json load_config(const std::string& path, const std::vector<std::string>& extras) {
    Json cfg = default_config();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open config " + path);
        const Json file = Json::parse(in);
        for (auto it = file.begin(); it != file.end(); ++it) cfg[it.key()] = it.value();
    }
    // Leftover flags are dotted config keys: --kernel.gamma 0.2 or --kernel.gamma=0.2
    for (std::size_t i = 0; i < extras.size(); ++i) {
        std::string flag = extras[i];
        if (flag.rfind("--", 0) != 0) throw std::invalid_argument("unexpected argument '" + flag + "'");
        flag = flag.substr(2);
        std::string value;
        if (const auto eq = flag.find('='); eq != std::string::npos) {
            value = flag.substr(eq + 1);
            flag = flag.substr(0, eq);
        } else {
            if (i + 1 >= extras.size()) throw std::invalid_argument("missing value for --" + flag);
            value = extras[++i];
        }
        // A synth/path switch replaces the whole dataset object.
        if (flag.rfind("dataset.path", 0) == 0) cfg["dataset"].erase("synth");
        if (flag.rfind("dataset.synth", 0) == 0) cfg["dataset"].erase("path");
        apply_override(cfg, flag, parse_override_value(value));
    }
    return cfg;
}

std::string manifest_path(const std::string& csv) {
    std::filesystem::path p(csv);
    p.replace_extension(".manifest.json");
    return p.string();
}

int cmd_solve(const Json& cfg) {
    RunConfig rc = parse_config(cfg);
    const auto loaded = load_problem(rc);
    SweepOptions opt = rc.sweep;
    opt.variants.resize(1);
    opt.m_grid.resize(1);
    opt.k_grid.resize(1);
    opt.seeds.resize(1);
    const auto rec = run_cell(loaded.problem, opt.variants[0], opt.m_grid[0], opt.k_grid[0], opt.seeds[0], opt);
    write_records(std::cout, {rec});
    return rec.converged ? 0 : 3;
}

int cmd_sweep(const Json& cfg) {
    RunConfig rc = parse_config(cfg);
    std::vector<LoadedProblem> loaded{load_problem(rc)};
    const auto records = run_sweep({loaded[0].problem}, rc.sweep);
    if (!rc.sweep.output_path.empty()) {
        std::ofstream os(manifest_path(rc.sweep.output_path));
        os << run_manifest(cfg, loaded).dump(2) << '\n';
        std::cerr << records.size() << " records -> " << rc.sweep.output_path << '\n';
    } else {
        write_records(std::cout, records);
    }
    return 0;
}

int cmd_adaptive(const Json& cfg, long warmup, long check, bool stop_early) {
    RunConfig rc = parse_config(cfg);
    const auto loaded = load_problem(rc);
    AdaptiveConfig ac;
    ac.minibatch = rc.sweep.m_grid.at(0);
    ac.max_iters = rc.sweep.max_iters;
    ac.warmup = warmup;
    ac.stop_during_adaptation = stop_early;
    ac.check_interval = check;
    RandomStream rng(rc.sweep.seeds.at(0), 0x616461, 0);
    const auto res = adaptive_solve(loaded.problem.problem, BlockScheme::uniform(static_cast<std::size_t>(rc.sweep.k_grid.at(0))), ac,
                                    rc.sweep.tolerance, rng);
    Json out{{"dataset_id", loaded.problem.id},
             {"m", ac.minibatch},
             {"k", rc.sweep.k_grid.at(0)},
             {"selected_beta", res.selected_beta},
             {"bracket_closed", res.bracket_closed},
             {"close_iteration", res.close_iteration},
             {"iterations", res.iterations},
             {"rows_sampled", res.rows_sampled},
             {"final_residual", res.final_residual},
             {"converged", res.converged},
             {"flags",
              {{"converged_during_adaptation", res.converged_during_adaptation},
               {"exhausted_before_close", res.exhausted_before_close},
               {"minus_chain_solved", res.minus_chain_solved},
               {"plain_fallback", res.plain_fallback},
               {"absolute_probe", res.absolute_probe}}}};
    Json trace = Json::array();
    for (const auto& e : res.trace)
        trace.push_back({{"iteration", e.iteration}, {"beta_plus", e.beta_plus}, {"beta_minus", e.beta_minus},
                         {"ratio", std::isfinite(e.ratio) ? Json(e.ratio) : Json(nullptr)}, {"action", to_string(e.action)}});
    out["trace"] = trace;
    std::cout << out.dump(2) << '\n';
    return res.converged ? 0 : 3;
}

int cmd_verify(const std::string& suite, std::size_t count, std::uint64_t seed, bool summary_only) {
    std::vector<CheckRecord> records;
    auto want = [&](const char* name) { return suite == "all" || suite == name; };
    const auto grid = admissible_triples(count, seed);
    if (want("eigen")) {
        auto r = suite_eigenvalue_law(grid);
        records.insert(records.end(), r.begin(), r.end());
    }
    if (want("schur")) {
        auto r = suite_schur(grid);
        records.insert(records.end(), r.begin(), r.end());
    }
    if (want("norms")) {
        auto r = suite_norm_bounds(grid);
        records.insert(records.end(), r.begin(), r.end());
    }
    if (want("rho")) {
        auto r = suite_rho(admissible_bound_inputs(std::max<std::size_t>(1, count / 10), 1000, seed));
        records.insert(records.end(), r.begin(), r.end());
    }
    if (want("blockdiag")) {
        auto r = suite_block_diagonalization(std::max<std::size_t>(1, count / 100), seed);
        records.insert(records.end(), r.begin(), r.end());
    }
    if (want("helper")) {
        auto r = suite_helper();
        records.insert(records.end(), r.begin(), r.end());
    }
    if (records.empty()) throw std::invalid_argument("unknown suite '" + suite + "'");

    std::size_t failures = 0;
    for (const auto& r : records) failures += r.passed() ? 0 : 1;
    if (summary_only) {
        std::cout << "check\tcount\tfailures\tworst_margin\tworst_params\n";
        for (const auto& s : summarize(records)) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.17g", s.worst_margin);
            std::cout << s.check << '\t' << s.count << '\t' << s.failures << '\t' << buf << '\t' << s.worst_params << '\n';
        }
    } else {
        write_check_header(std::cout);
        for (const auto& r : records) write_check(std::cout, r);
    }
    return failures == 0 ? 0 : 1;
}

int cmd_mc_variance(Index n, const std::vector<int>& ms, std::size_t draws, std::uint64_t seed, double sigmas) {
    RandomStream rng(seed, 0, 0x6d63);
    Matrix b(n, n);
    for (Index j = 0; j < n; ++j)
        for (Index i = 0; i < n; ++i) b(i, j) = rng.normal();
    const Matrix k = b * b.transpose() / static_cast<double>(n) + 0.1 * Matrix::Identity(n, n);
    const auto sampler = DiscreteRate::coordinates(k);
    std::cout << "m\tdraws\texcess\tmatrix_std_error\tsigmas\tstatus\n";
    bool ok = true;
    for (int m : ms) {
        const auto rep = estimate_minibatch_variance(sampler, m, draws, seed);
        char buf[160];
        std::snprintf(buf, sizeof buf, "%d\t%zu\t%.17g\t%.17g\t%g\t%s", m, draws, rep.excess, rep.matrix_std_error, sigmas,
                      rep.passes(sigmas) ? "pass" : "FAIL");
        std::cout << buf << '\n';
        ok = ok && rep.passes(sigmas);
    }
    return ok ? 0 : 1;
}

int cmd_synth(Index n, double kappa, std::uint64_t seed, const std::string& out_path) {
    const auto s = synth_problem(n, kappa, seed);
    Json j{{"n", n}, {"kappa_target", kappa}, {"kappa_cd", s.kappa_cd}, {"seed", seed}};
    if (s.target_below_dimension) j["kappa_note"] = "kappa_cd >= n for any SPD matrix; target not reachable";
    std::vector<double> k(s.problem.matrix.data(), s.problem.matrix.data() + s.problem.matrix.size());
    j["matrix"] = k;  // symmetric, so storage order does not matter
    j["rhs"] = std::vector<double>(s.problem.rhs.data(), s.problem.rhs.data() + n);
    j["solution"] = std::vector<double>(s.problem.solution->data(), s.problem.solution->data() + n);
    if (out_path.empty() || out_path == "-") {
        std::cout << j.dump() << '\n';
    } else {
        std::ofstream os(out_path);
        if (!os) throw std::runtime_error("cannot write " + out_path);
        os << j.dump() << '\n';
        std::cerr << "kappa_cd = " << s.kappa_cd << " -> " << out_path << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mini-batch Kaczmarz / coordinate descent with momentum, and checks of its spectral bounds"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    std::string config_path;
    auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config; other --a.b flags override its keys");
        sub->allow_extras();
    };
    auto* solve = app.add_subcommand("solve", "Run one (variant, m, k, seed) cell");
    add_config(solve);
    auto* sweep = app.add_subcommand("sweep", "Run the full grid and write the CSV table and manifest");
    add_config(sweep);
    auto* adaptive = app.add_subcommand("adaptive", "Adaptive momentum tuning on one problem");
    add_config(adaptive);
    long warmup = 50, check = 10;
    adaptive->add_option("--warmup", warmup, "Warm-up iterations")->capture_default_str();
    adaptive->add_option("--check-interval", check, "Iterations between ratio checks")->capture_default_str();
    bool stop_early = false;
    adaptive->add_flag("--stop-early", stop_early, "Stop once the tolerance is met, even mid-search");

    auto* verify = app.add_subcommand("verify-theory", "Check the transition-block bounds; TSV on stdout");
    std::string suite = "all";
    std::size_t count = 10000;
    std::uint64_t seed = 1;
    bool summary_only = false;
    verify->add_option("--suite", suite, "all | eigen | schur | norms | rho | blockdiag | helper")->capture_default_str();
    verify->add_option("--count", count, "Grid size")->capture_default_str();
    verify->add_option("--seed", seed, "Grid seed")->capture_default_str();
    verify->add_flag("--summary-only", summary_only, "One line per check name");

    auto* mcv = app.add_subcommand("mc-variance", "Mini-batch variance check on a random SPD coordinate sampler");
    Index mc_n = 16;
    std::vector<int> mc_m{1, 2, 4, 8};
    std::size_t draws = 100000;
    std::uint64_t mc_seed = 0;
    double sigmas = 5.0;
    mcv->add_option("--n", mc_n, "Dimension")->capture_default_str();
    mcv->add_option("--m", mc_m, "Mini-batch sizes")->delimiter(',');
    mcv->add_option("--draws", draws, "Draws per m")->capture_default_str();
    mcv->add_option("--seed", mc_seed, "Master seed")->capture_default_str();
    mcv->add_option("--sigmas", sigmas, "Allowed standard errors")->capture_default_str();

    auto* synth = app.add_subcommand("synth", "Write a synthetic SPD problem as JSON");
    Index s_n = 512;
    double s_kappa = 1e4;
    std::uint64_t s_seed = 0;
    std::string s_out;
    synth->add_option("--n", s_n, "Dimension")->capture_default_str();
    synth->add_option("--kappa", s_kappa, "Target kappa_CD")->capture_default_str();
    synth->add_option("--seed", s_seed, "Seed")->capture_default_str();
    synth->add_option("--out", s_out, "Output path (default stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (solve->parsed()) return cmd_solve(load_config(config_path, solve->remaining()));
        if (sweep->parsed()) return cmd_sweep(load_config(config_path, sweep->remaining()));
        if (adaptive->parsed()) return cmd_adaptive(load_config(config_path, adaptive->remaining()), warmup, check, stop_early);
        if (verify->parsed()) return cmd_verify(suite, count, seed, summary_only);
        if (mcv->parsed()) return cmd_mc_variance(mc_n, mc_m, draws, mc_seed, sigmas);
        if (synth->parsed()) return cmd_synth(s_n, s_kappa, s_seed, s_out);
    } catch (const std::exception& e) {
        std::cerr << "momentum-lab: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
