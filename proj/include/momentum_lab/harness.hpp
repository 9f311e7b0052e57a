#pragma once

// Datasets, kernels, synthetic problems, sweeps and their on-disk records.

#include "momentum_lab/adaptive.hpp"
#include "momentum_lab/solvers.hpp"

#include <json.hpp>

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace momentum_lab {

inline constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Data

struct DatasetSpec {
    std::string path;
    /// Column name, or a 0-based index written as a number; empty = last column.
    std::string target_column;
    std::size_t n_subsample = 2048;
    bool standardize = true;
    std::uint64_t seed = 0;
};

struct KernelSpec {
    double gamma = 0.1;
    double lambda = 0.0;
    double tolerance = 1e-6;

    void validate() const {
        if (!(gamma > 0.0)) throw std::invalid_argument("KernelSpec: gamma must be positive");
        if (!(lambda >= 0.0)) throw std::invalid_argument("KernelSpec: lambda must be >= 0");
    }
};

struct Dataset {
    Matrix features;
    Vector target;
    std::vector<std::string> feature_names;
    std::size_t rows_read = 0;
    std::size_t rows_dropped = 0;
    /// Fewer valid rows than requested; all of them were used.
    bool short_of_rows = false;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    std::string out = s.substr(b, e - b + 1);
    if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
    return out;
}

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    bool quoted = false;
    for (char c : line) {
        if (c == '"') quoted = !quoted;
        if (c == ',' && !quoted) {
            out.push_back(trim(cell));
            cell.clear();
        } else {
            cell.push_back(c);
        }
    }
    out.push_back(trim(cell));
    return out;
}

inline std::optional<double> parse_number(const std::string& s) {
    if (s.empty()) return std::nullopt;
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size() || errno == ERANGE || !std::isfinite(v)) return std::nullopt;
    return v;
}

}  // namespace detail

/// Numeric CSV with a header row. Rows with a missing or non-numeric cell are
/// dropped; n rows are then drawn without replacement, kept in file order.
inline Dataset ingest_csv(const std::string& path, const DatasetSpec& spec, RandomStream& rng) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("ingest_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("ingest_csv: empty file " + path);
    const auto header = detail::split_csv(line);
    const std::size_t cols = header.size();
    if (cols < 2) throw std::runtime_error("ingest_csv: need at least one feature and one target column");

    std::size_t target = cols - 1;
    if (!spec.target_column.empty()) {
        const auto it = std::find(header.begin(), header.end(), spec.target_column);
        if (it != header.end()) {
            target = static_cast<std::size_t>(it - header.begin());
        } else if (const auto idx = detail::parse_number(spec.target_column); idx && *idx >= 0 && *idx < double(cols) && *idx == std::floor(*idx)) {
            target = static_cast<std::size_t>(*idx);
        } else {
            throw std::invalid_argument("ingest_csv: no column named '" + spec.target_column + "'");
        }
    }

    Dataset ds;
    for (std::size_t j = 0; j < cols; ++j)
        if (j != target) ds.feature_names.push_back(header[j]);
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) continue;
        ++ds.rows_read;
        const auto cells = detail::split_csv(line);
        std::vector<double> row;
        bool ok = cells.size() == cols;
        for (std::size_t j = 0; ok && j < cols; ++j) {
            const auto v = detail::parse_number(cells[j]);
            if (!v) ok = false; else row.push_back(*v);
        }
        if (ok) rows.push_back(std::move(row)); else ++ds.rows_dropped;
    }
    if (rows.empty()) throw std::runtime_error("ingest_csv: no valid rows in " + path);

    std::vector<std::size_t> keep;
    if (spec.n_subsample >= rows.size()) {
        ds.short_of_rows = spec.n_subsample > rows.size();
        keep.resize(rows.size());
        for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = i;
    } else {
        std::vector<std::size_t> scratch;
        keep = sample_subset(rows.size(), spec.n_subsample, rng, scratch);
    }

    ds.features.resize(static_cast<Index>(keep.size()), static_cast<Index>(cols - 1));
    ds.target.resize(static_cast<Index>(keep.size()));
    for (std::size_t i = 0; i < keep.size(); ++i) {
        const auto& row = rows[keep[i]];
        Index c = 0;
        for (std::size_t j = 0; j < cols; ++j) {
            if (j == target) ds.target(static_cast<Index>(i)) = row[j];
            else ds.features(static_cast<Index>(i), c++) = row[j];
        }
    }
    return ds;
}

struct Standardized {
    Matrix features;
    std::vector<Index> zero_variance_columns;
};

/// Column-wise (x - mean) / population std. Constant columns become zeros.
inline Standardized standardize(const Matrix& x) {
    Standardized out{x, {}};
    const double n = static_cast<double>(x.rows());
    for (Index j = 0; j < x.cols(); ++j) {
        auto col = out.features.col(j);
        const double mean = col.sum() / n;
        col.array() -= mean;
        const double sd = std::sqrt(col.squaredNorm() / n);
        if (sd > 0.0 && sd > 1e-14 * std::max(1.0, std::abs(mean))) {
            col /= sd;
        } else {
            col.setZero();
            out.zero_variance_columns.push_back(j);
        }
    }
    return out;
}

/// RBF kernel exp(-gamma |x_i - x_j|^2) plus lambda I. Exactly symmetric, unit diagonal before the ridge.
inline Matrix build_kernel(const Matrix& x, const KernelSpec& spec) {
    spec.validate();
    const Index n = x.rows();
    Matrix k(n, n);
    for (Index i = 0; i < n; ++i) {
        k(i, i) = 1.0 + spec.lambda;
        for (Index j = i + 1; j < n; ++j) {
            const double v = std::exp(-spec.gamma * (x.row(i) - x.row(j)).squaredNorm());
            k(i, j) = v;
            k(j, i) = v;
        }
    }
    return k;
}

inline bool cholesky_succeeds(const Matrix& k) {
    Eigen::LLT<Matrix> llt(k);
    return llt.info() == Eigen::Success;
}

// ---------------------------------------------------------------------------
// Synthetic problems

struct SynthProblem {
    LinearProblem problem;
    double kappa_cd = 0.0;
    double kappa_target = 0.0;
    /// kappa_CD >= n always; smaller targets fall back to the identity.
    bool target_below_dimension = false;
};

/// Spectrum L^{i/(n-1)}, i = 0..n-1, with L chosen by bisection so that
/// tr(K)/lambda_min hits the target; K = Q diag Q^T with Haar Q.
inline SynthProblem synth_problem(Index n, double kappa_target, std::uint64_t seed) {
    if (n < 2) throw std::invalid_argument("synth_problem: n must be >= 2");
    if (!(kappa_target >= 1.0)) throw std::invalid_argument("synth_problem: kappa must be >= 1");
    SynthProblem out;
    out.kappa_target = kappa_target;
    const double dn = static_cast<double>(n);
    auto trace_for = [&](double log_l) {
        double s = 0.0;
        for (Index i = 0; i < n; ++i) s += std::exp(log_l * static_cast<double>(i) / (dn - 1.0));
        return s;
    };
    double log_l = 0.0;
    if (kappa_target <= dn) {
        out.target_below_dimension = kappa_target < dn;
    } else {
        double lo = 0.0, hi = std::log(kappa_target);
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (trace_for(mid) < kappa_target) lo = mid; else hi = mid;
        }
        log_l = 0.5 * (lo + hi);
    }
    Vector spectrum(n);
    for (Index i = 0; i < n; ++i) spectrum(i) = std::exp(log_l * static_cast<double>(i) / (dn - 1.0));

    RandomStream rng(seed, 0, 0x73796e74);
    Matrix g(n, n);
    for (Index j = 0; j < n; ++j)
        for (Index i = 0; i < n; ++i) g(i, j) = rng.normal();
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ();
    const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Index j = 0; j < n; ++j)
        if (r(j, j) < 0.0) q.col(j) = -q.col(j);
    Matrix k = q * spectrum.asDiagonal() * q.transpose();
    k = 0.5 * (k + k.transpose()).eval();

    Vector w(n);
    for (Index i = 0; i < n; ++i) w(i) = rng.normal();
    w /= w.norm();
    out.problem = LinearProblem::positive_definite(k, k * w, w);
    out.kappa_cd = kappa_cd(k);
    return out;
}

// ---------------------------------------------------------------------------
// Sweeps

struct Variant {
    /// cd | cd-nag | cd-hbm | cdm-omega | cd-nag-adaptive
    std::string tag;
    double omega = 0.0;
};

inline Variant make_variant(const std::string& tag, std::optional<double> omega = std::nullopt) {
    if (tag == "cd") return {tag, 0.0};
    if (tag == "cd-nag" || tag == "cd-nag-adaptive") return {tag, 1.0};
    if (tag == "cd-hbm") return {tag, 0.0};
    if (tag == "cdm-omega") {
        if (!omega || !(*omega >= 0.0 && *omega <= 1.0)) throw std::invalid_argument("cdm-omega needs omega in [0, 1]");
        return {tag, *omega};
    }
    throw std::invalid_argument("unknown solver tag '" + tag + "'");
}

struct BetaMode {
    enum class Kind { practical, schedule, fixed, adaptive } kind = Kind::practical;
    double c1 = 1.0;
    double c2 = 1.0;
    double value = 0.0;
};

struct SweepProblem {
    std::string id;
    LinearProblem problem;
    /// Needed by the schedule mode; computed lazily per block size otherwise.
    std::optional<double> kappa;
};

struct SweepRecord {
    std::string dataset_id;
    std::string solver;
    double omega = 0.0;
    int m = 1;
    long k = 1;
    double beta = 0.0;
    long iterations = 0;
    long total_rows_sampled = 0;
    double final_residual = 0.0;
    bool converged = false;
    std::uint64_t master_seed = 0;
    double wall_clock_ms = 0.0;
};

inline constexpr const char* kSweepHeader =
    "dataset_id,solver,omega,m,k,beta,iterations,total_rows_sampled,final_residual,converged,master_seed,wall_clock_ms";

/// One CSV line; `with_wall_clock = false` blanks the timing column for comparisons.
inline std::string format_record(const SweepRecord& r, bool with_wall_clock = true) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%s,%s,%.17g,%d,%ld,%.17g,%ld,%ld,%.17g,%d,%llu,", r.dataset_id.c_str(), r.solver.c_str(),
                  r.omega, r.m, r.k, r.beta, r.iterations, r.total_rows_sampled, r.final_residual, r.converged ? 1 : 0,
                  static_cast<unsigned long long>(r.master_seed));
    std::string out = buf;
    if (with_wall_clock) {
        std::snprintf(buf, sizeof buf, "%.3f", r.wall_clock_ms);
        out += buf;
    }
    return out;
}

inline void write_records(std::ostream& os, const std::vector<SweepRecord>& records, bool with_wall_clock = true) {
    os << kSweepHeader << '\n';
    for (const auto& r : records) os << format_record(r, with_wall_clock) << '\n';
}

inline std::vector<SweepRecord> read_records(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || detail::trim(line) != kSweepHeader) throw std::runtime_error("read_records: header mismatch");
    std::vector<SweepRecord> out;
    while (std::getline(is, line)) {
        if (detail::trim(line).empty()) continue;
        const auto c = detail::split_csv(line);
        if (c.size() != 12) throw std::runtime_error("read_records: expected 12 columns");
        SweepRecord r;
        r.dataset_id = c[0];
        r.solver = c[1];
        r.omega = std::stod(c[2]);
        r.m = std::stoi(c[3]);
        r.k = std::stol(c[4]);
        r.beta = std::stod(c[5]);
        r.iterations = std::stol(c[6]);
        r.total_rows_sampled = std::stol(c[7]);
        r.final_residual = std::stod(c[8]);
        r.converged = c[9] == "1";
        r.master_seed = std::stoull(c[10]);
        r.wall_clock_ms = c[11].empty() ? 0.0 : std::stod(c[11]);
        out.push_back(r);
    }
    return out;
}

struct SweepOptions {
    std::vector<Variant> variants;
    std::vector<int> m_grid;
    std::vector<long> k_grid;
    std::vector<std::uint64_t> seeds;
    BetaMode beta_mode;
    double tolerance = 1e-6;
    long max_iters = 100000;
    /// Empty: don't write.
    std::string output_path;
    unsigned threads = 0;
};

namespace detail {

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline double sweep_beta(const BetaMode& mode, int m, std::optional<double> kappa) {
    switch (mode.kind) {
        case BetaMode::Kind::fixed: return mode.value;
        case BetaMode::Kind::schedule:
            if (!kappa) throw std::logic_error("sweep_beta: schedule mode needs kappa");
            return beta_schedule(static_cast<double>(m), *kappa, mode.c1, mode.c2);
        default: return practical_beta(static_cast<double>(m));
    }
}

}  // namespace detail

/// Runs a single cell. The RNG key depends only on the cell's coordinates.
inline SweepRecord run_cell(const SweepProblem& p, const Variant& v, int m, long k, std::uint64_t seed, const SweepOptions& opt) {
    SweepRecord rec{p.id, v.tag, v.omega, m, k};
    rec.master_seed = seed;
    char key[256];
    std::snprintf(key, sizeof key, "%s|%s|%.17g|%d|%ld", p.id.c_str(), v.tag.c_str(), v.omega, m, k);
    RandomStream rng(seed, detail::fnv1a(key), 0);
    const BlockScheme scheme = BlockScheme::uniform(static_cast<std::size_t>(k));

    const bool adaptive = v.tag == "cd-nag-adaptive" || (v.tag == "cd-nag" && opt.beta_mode.kind == BetaMode::Kind::adaptive);
    if (adaptive) {
        AdaptiveConfig cfg;
        cfg.minibatch = m;
        cfg.max_iters = opt.max_iters;
        cfg.warmup = std::min<long>(cfg.warmup, opt.max_iters - 1);
        const auto res = adaptive_solve(p.problem, scheme, cfg, opt.tolerance, rng);
        rec.beta = res.selected_beta;
        rec.iterations = res.iterations;
        rec.final_residual = res.final_residual;
        rec.converged = res.converged;
        rec.wall_clock_ms = res.wall_ms;
    } else {
        if (v.tag != "cd" && opt.beta_mode.kind == BetaMode::Kind::adaptive)
            throw std::invalid_argument("adaptive beta mode only applies to cd-nag");
        std::optional<double> kappa = p.kappa;
        if (opt.beta_mode.kind == BetaMode::Kind::schedule && !kappa) kappa = condition_number(p.problem, scheme, seed).kappa;
        const double beta = v.tag == "cd" ? 0.0 : detail::sweep_beta(opt.beta_mode, m, kappa);
        const auto res = momentum_solve(p.problem, scheme, MomentumConfig{1.0, beta, v.omega, m}, opt.tolerance, opt.max_iters, rng);
        rec.beta = beta;
        rec.iterations = res.iterations;
        rec.final_residual = res.final_residual;
        rec.converged = res.converged;
        rec.wall_clock_ms = res.wall_ms;
    }
    rec.total_rows_sampled = rec.iterations * static_cast<long>(m) * k;
    return rec;
}

/// Every (problem, variant, m, k, seed) cell, in that nesting order. Cells run
/// in parallel; the table is written once, in cell order, via a rename.
inline std::vector<SweepRecord> run_sweep(const std::vector<SweepProblem>& problems, const SweepOptions& opt) {
    if (problems.empty() || opt.variants.empty() || opt.m_grid.empty() || opt.k_grid.empty() || opt.seeds.empty())
        throw std::invalid_argument("run_sweep: every grid must be nonempty");
    struct Cell {
        std::size_t p, v;
        int m;
        long k;
        std::uint64_t seed;
    };
    std::vector<Cell> cells;
    for (std::size_t p = 0; p < problems.size(); ++p)
        for (std::size_t v = 0; v < opt.variants.size(); ++v)
            for (int m : opt.m_grid)
                for (long k : opt.k_grid)
                    for (auto s : opt.seeds) cells.push_back({p, v, m, k, s});
    std::vector<SweepRecord> out(cells.size());
    parallel_for(
        cells.size(),
        [&](std::size_t i) {
            const Cell& c = cells[i];
            out[i] = run_cell(problems[c.p], opt.variants[c.v], c.m, c.k, c.seed, opt);
        },
        opt.threads ? opt.threads : worker_count());

    if (!opt.output_path.empty()) {
        const std::filesystem::path path(opt.output_path);
        if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
        const std::filesystem::path tmp = path.string() + ".tmp";
        {
            std::ofstream os(tmp);
            if (!os) throw std::runtime_error("run_sweep: cannot write " + tmp.string());
            write_records(os, out);
        }
        std::filesystem::rename(tmp, path);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Configuration

using Json = nlohmann::json;

inline Json default_config() {
    return Json{
        {"dataset", {{"synth", {{"n", 256}, {"kappa", 1000.0}, {"seed", 0}}}}},
        {"target_column", ""},
        {"n_subsample", 2048},
        {"standardize", true},
        {"kernel", {{"gamma", 0.1}, {"lambda", 0.0}}},
        {"tolerance", 1e-6},
        {"variants", Json::array({{{"tag", "cd"}}, {{"tag", "cd-nag"}}})},
        {"m_grid", {1, 2, 4, 8}},
        {"k_grid", {16}},
        {"beta_mode", "practical"},
        {"seeds", {0}},
        {"max_iters", 100000},
        {"output_path", "sweep.csv"},
    };
}

/// Parses a flag value: JSON if it parses, otherwise a plain string.
inline Json parse_override_value(const std::string& text) {
    try {
        return Json::parse(text);
    } catch (const Json::parse_error&) {
        return Json(text);
    }
}

/// Sets `a.b.c` in `config`, creating objects on the way.
inline void apply_override(Json& config, const std::string& dotted, const Json& value) {
    if (dotted.empty()) throw std::invalid_argument("apply_override: empty key");
    Json* node = &config;
    std::size_t pos = 0;
    for (;;) {
        const auto dot = dotted.find('.', pos);
        const std::string key = dotted.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
        if (key.empty()) throw std::invalid_argument("apply_override: malformed key '" + dotted + "'");
        if (!node->is_object()) *node = Json::object();
        if (dot == std::string::npos) {
            (*node)[key] = value;
            return;
        }
        node = &(*node)[key];
        pos = dot + 1;
    }
}

inline BetaMode parse_beta_mode(const Json& j) {
    BetaMode mode;
    if (j.is_string()) {
        const std::string s = j.get<std::string>();
        if (s == "practical") mode.kind = BetaMode::Kind::practical;
        else if (s == "adaptive") mode.kind = BetaMode::Kind::adaptive;
        else throw std::invalid_argument("beta_mode: unknown mode '" + s + "'");
        return mode;
    }
    if (j.is_object() && j.contains("schedule")) {
        mode.kind = BetaMode::Kind::schedule;
        mode.c1 = j["schedule"].value("c1", 1.0);
        mode.c2 = j["schedule"].value("c2", 1.0);
        return mode;
    }
    if (j.is_object() && j.contains("fixed")) {
        mode.kind = BetaMode::Kind::fixed;
        const Json& f = j["fixed"];
        mode.value = f.is_number() ? f.get<double>() : f.at("value").get<double>();
        if (!(mode.value >= 0.0)) throw std::invalid_argument("beta_mode: fixed value must be >= 0");
        return mode;
    }
    throw std::invalid_argument("beta_mode: expected practical | adaptive | {schedule: {c1, c2}} | {fixed: {value}}");
}

struct RunConfig {
    DatasetSpec dataset;
    std::optional<Index> synth_n;
    double synth_kappa = 0.0;
    std::uint64_t synth_seed = 0;
    KernelSpec kernel;
    SweepOptions sweep;
};

inline RunConfig parse_config(const Json& j) {
    RunConfig c;
    const Json& ds = j.at("dataset");
    if (ds.contains("path")) {
        c.dataset.path = ds["path"].get<std::string>();
        c.dataset.seed = ds.value("seed", std::uint64_t{0});
    } else if (ds.contains("synth")) {
        const Json& s = ds["synth"];
        c.synth_n = s.at("n").get<Index>();
        c.synth_kappa = s.at("kappa").get<double>();
        c.synth_seed = s.value("seed", std::uint64_t{0});
    } else {
        throw std::invalid_argument("config: dataset needs 'path' or 'synth'");
    }
    c.dataset.target_column = j.value("target_column", std::string{});
    c.dataset.n_subsample = j.value("n_subsample", std::size_t{2048});
    c.dataset.standardize = j.value("standardize", true);
    if (j.contains("kernel")) {
        c.kernel.gamma = j["kernel"].value("gamma", 0.1);
        c.kernel.lambda = j["kernel"].value("lambda", 0.0);
    }
    c.kernel.tolerance = j.value("tolerance", 1e-6);
    c.kernel.validate();
    c.sweep.tolerance = c.kernel.tolerance;
    for (const auto& v : j.at("variants")) {
        std::optional<double> omega;
        if (v.contains("omega")) omega = v["omega"].get<double>();
        c.sweep.variants.push_back(make_variant(v.at("tag").get<std::string>(), omega));
    }
    c.sweep.m_grid = j.at("m_grid").get<std::vector<int>>();
    c.sweep.k_grid = j.at("k_grid").get<std::vector<long>>();
    c.sweep.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    c.sweep.beta_mode = parse_beta_mode(j.value("beta_mode", Json("practical")));
    c.sweep.max_iters = j.value("max_iters", 100000L);
    c.sweep.output_path = j.value("output_path", std::string{});
    for (int m : c.sweep.m_grid)
        if (m < 1) throw std::invalid_argument("config: m_grid entries must be >= 1");
    for (long k : c.sweep.k_grid)
        if (k < 1) throw std::invalid_argument("config: k_grid entries must be >= 1");
    return c;
}

/// Loads the configured problem: a synthetic system or a kernel system from CSV.
struct LoadedProblem {
    SweepProblem problem;
    double kappa_cd = 0.0;
    Json notes = Json::object();
};

inline LoadedProblem load_problem(const RunConfig& c) {
    LoadedProblem out;
    if (c.synth_n) {
        auto s = synth_problem(*c.synth_n, c.synth_kappa, c.synth_seed);
        char id[128];
        std::snprintf(id, sizeof id, "synth-n%ld-kappa%g-seed%llu", static_cast<long>(*c.synth_n), c.synth_kappa,
                      static_cast<unsigned long long>(c.synth_seed));
        out.problem = {id, std::move(s.problem), std::nullopt};
        out.kappa_cd = s.kappa_cd;
        out.notes["kappa_target"] = s.kappa_target;
        if (s.target_below_dimension) out.notes["kappa_note"] = "kappa_cd >= n for any SPD matrix; target not reachable";
        return out;
    }
    RandomStream rng(c.dataset.seed, 0, 0x696e6765);
    const Dataset ds = ingest_csv(c.dataset.path, c.dataset, rng);
    Matrix x = ds.features;
    if (c.dataset.standardize) {
        auto st = standardize(x);
        x = std::move(st.features);
        if (!st.zero_variance_columns.empty()) out.notes["zero_variance_columns"] = st.zero_variance_columns;
    }
    const Matrix k = build_kernel(x, c.kernel);
    out.notes["rows_read"] = ds.rows_read;
    out.notes["rows_dropped"] = ds.rows_dropped;
    out.notes["rows_used"] = ds.target.size();
    if (ds.short_of_rows) out.notes["short_of_rows"] = true;
    out.problem = {std::filesystem::path(c.dataset.path).stem().string(), LinearProblem::positive_definite(k, ds.target), std::nullopt};
    out.kappa_cd = kappa_cd(k);
    return out;
}

inline Json run_manifest(const Json& config, const std::vector<LoadedProblem>& problems) {
    Json m;
    m["config"] = config;
    m["version"] = kVersion;
    Json ds = Json::array();
    for (const auto& p : problems) {
        Json e{{"dataset_id", p.problem.id}, {"kappa_cd", p.kappa_cd}, {"n", p.problem.problem.matrix.rows()}};
        if (!p.notes.empty()) e["notes"] = p.notes;
        ds.push_back(e);
    }
    m["datasets"] = ds;
    return m;
}

}  // namespace momentum_lab
