#pragma once

// Experiment orchestration: random models -> samples -> ICA -> alignment ->
// recovery -> metrics, over a sweep of sample sizes and thresholds, with a
// deterministic report regardless of the worker count.

#include "lingcrel/error.hpp"
#include "lingcrel/ica.hpp"
#include "lingcrel/io.hpp"
#include "lingcrel/metrics.hpp"
#include "lingcrel/recovery.hpp"
#include "lingcrel/rng.hpp"
#include "lingcrel/scm.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace lingcrel {

struct BenchmarkConfig {
    int d = 5;
    int n = 0;  ///< 0 means n = d
    int K = 0;  ///< 0 means K = d
    double p = 0.5;
    std::vector<Index> N_list{20000};
    std::vector<double> tl;  ///< empty means {default_tl(d)}
    int num_graphs = 10;
    std::uint64_t master_seed = 0;
    Mode mode = Mode::finite_sample;
    std::string output_dir = "results";
    int workers = 1;
    double budget_seconds = 0;  ///< per-graph wall-clock budget, 0 for none
    std::optional<AlignStrategy> align;  ///< unset: chosen from d
    WeightScheme scheme = WeightScheme::unit_diagonal;
    int ica_max_iter = 500;
    int ica_restarts = 3;
    bool ica_adaptive = true;
    bool timing = false;  ///< fill the seconds column (breaks byte-stability)

    int resolved_n() const { return n > 0 ? n : d; }
    int resolved_K() const { return K > 0 ? K : d; }
    std::vector<double> resolved_tl() const { return tl.empty() ? std::vector<double>{default_tl(d)} : tl; }
    /// Psi sorting resolves the noise shapes up to d = 6; beyond that the
    /// largest shapes differ by less than sampling noise and the pooled
    /// histogram matching is used instead.
    AlignStrategy resolved_align() const { return align ? *align : (d <= 6 ? AlignStrategy::psi_sort : AlignStrategy::pooled_matching); }
    ModelSpec model_spec() const { return {d, resolved_n(), resolved_K(), p, scheme}; }
    IcaOptions ica_options(std::optional<Clock::time_point> deadline = {}) const {
        IcaOptions o;
        o.max_iter = ica_max_iter;
        o.restarts = ica_restarts;
        o.adaptive = ica_adaptive;
        o.deadline = deadline;
        return o;
    }

    void validate() const {
        if (d < 1) throw InvalidArgument("config: d must be >= 1");
        if (resolved_n() < d) throw InvalidArgument("config: n must be >= d");
        if (resolved_K() < d) throw InvalidArgument("config: K must be >= d");
        if (!(p > 0 && p <= 1)) throw InvalidArgument("config: p must lie in (0, 1]");
        if (num_graphs < 1) throw InvalidArgument("config: num_graphs must be >= 1");
        if (workers < 1) throw InvalidArgument("config: workers must be >= 1");
        if (budget_seconds < 0) throw InvalidArgument("config: budget must be nonnegative");
        if (mode == Mode::finite_sample) {
            if (N_list.empty()) throw InvalidArgument("config: N_list must be nonempty");
            for (std::size_t i = 0; i < N_list.size(); ++i) {
                if (N_list[i] < 2) throw InvalidArgument("config: sample sizes must be >= 2");
                if (i > 0 && N_list[i] <= N_list[i - 1]) throw InvalidArgument("config: N_list must be strictly ascending");
            }
            for (double t : resolved_tl())
                if (!(t > 0)) throw InvalidArgument("config: tl values must be positive");
        }
    }
};

inline const char* mode_name(Mode m) { return m == Mode::population ? "population" : "finite_sample"; }

inline Mode parse_mode(const std::string& s) {
    if (s == "population") return Mode::population;
    if (s == "finite_sample" || s == "finite") return Mode::finite_sample;
    throw InvalidArgument("unknown mode '" + s + "' (expected population or finite_sample)");
}

inline const char* align_name(AlignStrategy a) {
    switch (a) {
        case AlignStrategy::psi_sort: return "psi";
        case AlignStrategy::ks_matching: return "ks";
        case AlignStrategy::pooled_matching: return "pooled";
    }
    return "?";
}

inline AlignStrategy parse_align(const std::string& s) {
    if (s == "psi") return AlignStrategy::psi_sort;
    if (s == "ks") return AlignStrategy::ks_matching;
    if (s == "pooled") return AlignStrategy::pooled_matching;
    throw InvalidArgument("unknown alignment '" + s + "' (expected psi, ks or pooled)");
}

inline nlohmann::json to_json(const BenchmarkConfig& c) {
    nlohmann::json j = {{"d", c.d},
                        {"n", c.resolved_n()},
                        {"K", c.resolved_K()},
                        {"p", c.p},
                        {"N_list", c.N_list},
                        {"tl", c.resolved_tl()},
                        {"num_graphs", c.num_graphs},
                        {"master_seed", c.master_seed},
                        {"mode", mode_name(c.mode)},
                        {"align", align_name(c.resolved_align())},
                        {"scheme", scheme_name(c.scheme)},
                        {"ica_max_iter", c.ica_max_iter},
                        {"ica_restarts", c.ica_restarts},
                        {"ica_adaptive", c.ica_adaptive},
                        {"budget", c.budget_seconds}};
    return j;
}

/// Applies the keys present in `j` on top of `c`; unknown keys are errors.
inline void apply_json(BenchmarkConfig& c, const nlohmann::json& j) {
    if (!j.is_object()) throw InvalidArgument("config: expected a JSON object");
    for (const auto& [key, v] : j.items()) {
        if (key == "d") c.d = v.get<int>();
        else if (key == "n") c.n = v.get<int>();
        else if (key == "K") c.K = v.get<int>();
        else if (key == "p") c.p = v.get<double>();
        else if (key == "N_list") c.N_list = v.get<std::vector<Index>>();
        else if (key == "tl") c.tl = v.is_array() ? v.get<std::vector<double>>() : std::vector<double>{v.get<double>()};
        else if (key == "num_graphs") c.num_graphs = v.get<int>();
        else if (key == "master_seed" || key == "seed") c.master_seed = v.get<std::uint64_t>();
        else if (key == "mode") c.mode = parse_mode(v.get<std::string>());
        else if (key == "output_dir") c.output_dir = v.get<std::string>();
        else if (key == "workers") c.workers = v.get<int>();
        else if (key == "budget") c.budget_seconds = v.get<double>();
        else if (key == "align") c.align = parse_align(v.get<std::string>());
        else if (key == "scheme") c.scheme = parse_scheme(v.get<std::string>());
        else if (key == "ica_max_iter") c.ica_max_iter = v.get<int>();
        else if (key == "ica_restarts") c.ica_restarts = v.get<int>();
        else if (key == "ica_adaptive") c.ica_adaptive = v.get<bool>();
        else if (key == "timing") c.timing = v.get<bool>();
        else throw InvalidArgument("config: unknown key '" + key + "'");
    }
}

// ---------------------------------------------------------------------------
// Pipeline pieces

/// ICA per environment, then cross-environment alignment. Environment k
/// seeds its restarts from (seed, ica, k); `ica.seed` is ignored.
inline MixingEstimate estimate_mixing(std::span<const MatrixXd> datasets, int d, std::uint64_t seed, const AlignOptions& align,
                                      const IcaOptions& ica = {}) {
    std::vector<MatrixXd> raw;
    for (std::size_t k = 0; k < datasets.size(); ++k) {
        IcaOptions o = ica;
        o.seed = derive_seed(seed, {stream_tag::kIca, static_cast<std::uint64_t>(k)});
        raw.push_back(fast_ica(datasets[k], d, o).unmixing);
    }
    return align_environments(raw, datasets, align);
}

struct RunResult {
    int graph_id = 0;  ///< 0-based
    Index N = 0;       ///< 0 in population mode
    double tl = 0;
    std::string status = "ok";
    std::string message;
    std::optional<ErrorReport> report;
    std::optional<RecoveredModel> recovered;
    double seconds = 0;
};

struct GraphOutcome {
    int graph_id = 0;
    std::optional<LinearScm> model;
    std::vector<std::pair<Index, MixingEstimate>> estimates;
    std::vector<RunResult> runs;
};

inline std::string status_of(const std::exception& e) {
    if (dynamic_cast<const TimeoutError*>(&e)) return "timeout";
    if (dynamic_cast<const AlignmentError*>(&e)) return "alignment_error";
    if (dynamic_cast<const RecoveryError*>(&e)) return "recovery_error";
    if (dynamic_cast<const NumericalError*>(&e)) return "numerical_error";
    return "error";
}

inline std::uint64_t graph_seed(const BenchmarkConfig& c, int graph) {
    return derive_seed(c.master_seed, {stream_tag::kModel, static_cast<std::uint64_t>(graph)});
}

inline LinearScm benchmark_model(const BenchmarkConfig& c, int graph) {
    const std::uint64_t seed = graph_seed(c, graph);
    Rng rng = make_stream(seed);
    return random_model(c.model_spec(), rng, seed);
}

/// Samples for graph `graph` at size N come from their own sub-stream, so
/// every N in a sweep sees fresh data.
inline std::uint64_t sample_seed(const BenchmarkConfig& c, int graph, Index N) {
    return derive_seed(c.master_seed, {stream_tag::kSamples, static_cast<std::uint64_t>(graph), static_cast<std::uint64_t>(N)});
}

/// One random model evaluated at every (N, tl) of the sweep. Failures are
/// recorded per run; nothing escapes except configuration errors.
inline GraphOutcome run_trial(const BenchmarkConfig& c, int graph) {
    c.validate();
    GraphOutcome out;
    out.graph_id = graph;
    const auto start = Clock::now();
    std::optional<Clock::time_point> deadline;
    if (c.budget_seconds > 0) deadline = start + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(c.budget_seconds));
    auto elapsed = [](Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); };
    auto fail_all = [&](Index N, const std::vector<double>& tls, const std::exception& e, double secs) {
        for (double t : tls) out.runs.push_back({graph, N, t, status_of(e), e.what(), {}, {}, secs});
    };

    try {
        out.model = benchmark_model(c, graph);
    } catch (const Error& e) {
        fail_all(0, c.mode == Mode::population ? std::vector<double>{1e-8} : c.resolved_tl(), e, elapsed(start));
        return out;
    }
    const LinearScm& truth = *out.model;

    if (c.mode == Mode::population) {
        const auto t0 = Clock::now();
        const auto opts = RecoveryOptions::population();
        try {
            const auto M = canonical_population_mixing(truth);
            RecoveredModel rm = learn_causal_model(std::span<const MatrixXd>(M), opts);
            ErrorReport rep = evaluate(truth, rm, M);
            out.runs.push_back({graph, 0, opts.tl, "ok", "", std::move(rep), std::move(rm), elapsed(t0)});
        } catch (const Error& e) {
            fail_all(0, {opts.tl}, e, elapsed(t0));
        }
        return out;
    }

    AlignOptions align;
    align.strategy = c.resolved_align();
    for (Index N : c.N_list) {
        const auto t0 = Clock::now();
        MixingEstimate est;
        try {
            const std::uint64_t seed = sample_seed(c, graph, N);
            const EnvDataset ds = generate_dataset(truth, N, seed);
            est = estimate_mixing(ds.blocks, truth.d(), seed, align, c.ica_options(deadline));
        } catch (const Error& e) {
            fail_all(N, c.resolved_tl(), e, elapsed(t0));
            continue;
        }
        const double ica_secs = elapsed(t0);
        for (double t : c.resolved_tl()) {
            const auto t1 = Clock::now();
            try {
                RecoveredModel rm = learn_causal_model(est, RecoveryOptions::finite_sample(t));
                ErrorReport rep = evaluate(truth, rm, est.M);
                out.runs.push_back({graph, N, t, "ok", "", std::move(rep), std::move(rm), ica_secs + elapsed(t1)});
            } catch (const Error& e) {
                fail_all(N, {t}, e, ica_secs + elapsed(t1));
            }
        }
        out.estimates.emplace_back(N, std::move(est));
    }
    return out;
}

/// Runs every graph on up to `workers` threads; results are ordered by graph
/// index so the outcome does not depend on scheduling.
inline std::vector<GraphOutcome> run_batch(const BenchmarkConfig& c, const std::function<void(const GraphOutcome&)>& progress = {}) {
    c.validate();
    std::vector<GraphOutcome> results(static_cast<std::size_t>(c.num_graphs));
    std::atomic<int> next{0};
    std::mutex progress_mutex;
    auto worker = [&] {
        for (int g = next++; g < c.num_graphs; g = next++) {
            results[static_cast<std::size_t>(g)] = run_trial(c, g);
            if (progress) {
                std::lock_guard lock(progress_mutex);
                progress(results[static_cast<std::size_t>(g)]);
            }
        }
    };
    const int threads = std::min(c.workers, c.num_graphs);
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    }
    return results;
}

/// Smallest multiple of `step` up to `N_max` at which the graph is recovered
/// exactly, drawing fresh samples at every probe. Population mode succeeds
/// at the first probe.
inline std::optional<Index> minimal_sample_size(const BenchmarkConfig& c, const LinearScm& model, Index step, Index N_max,
                                                std::uint64_t seed, double tl) {
    if (step < 1) throw InvalidArgument("minimal_sample_size: step must be >= 1");
    if (c.mode == Mode::population) return step;
    AlignOptions align;
    align.strategy = c.resolved_align();
    for (Index N = step; N <= N_max; N += step) {
        const std::uint64_t s = derive_seed(seed, {stream_tag::kSamples, static_cast<std::uint64_t>(N)});
        try {
            const EnvDataset ds = generate_dataset(model, N, s);
            const MixingEstimate est = estimate_mixing(ds.blocks, model.d(), s, align, c.ica_options());
            const RecoveredModel rm = learn_causal_model(est, RecoveryOptions::finite_sample(tl));
            if (graph_match(model.g, relabel(rm, canonical_order(model)).g_hat)) return N;
        } catch (const Error&) {
            // A failed probe counts as not recovered.
        }
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Reports

inline std::string results_header(int d) {
    std::string h = "trial,graph_id,recovered,status";
    for (int i = 1; i <= d; ++i) h += ",eda_" + std::to_string(i);
    for (int i = 1; i <= d; ++i) h += ",true_" + std::to_string(i);
    return h + ",signal_min,noise_max,seconds\n";
}

inline std::vector<const RunResult*> flatten(const std::vector<GraphOutcome>& batch) {
    std::vector<const RunResult*> rows;
    for (const auto& g : batch)
        for (const auto& r : g.runs) rows.push_back(&r);
    return rows;
}

/// One row per run; rows are numbered from 1 in graph, N, tl order.
inline std::string results_csv(const std::vector<GraphOutcome>& batch, int d, bool timing) {
    std::string out = results_header(d);
    auto num = [](double v) { return std::isfinite(v) ? io::format_double(v) : std::string(); };
    int row = 0;
    for (const RunResult* r : flatten(batch)) {
        out += std::to_string(++row) + "," + std::to_string(r->graph_id + 1) + ",";
        if (r->report) {
            const ErrorReport& e = *r->report;
            out += std::string(e.graph_recovered ? "1" : "0") + "," + r->status;
            for (Index i = 0; i < e.eda_errors.size(); ++i) out += "," + num(e.eda_errors(i));
            for (Index i = 0; i < e.true_errors.size(); ++i) out += "," + num(e.true_errors(i));
            out += "," + num(e.signal_min) + "," + num(e.noise_max);
        } else {
            out += "0," + r->status + std::string(static_cast<std::size_t>(2 * d + 2), ',');
        }
        out += "," + (timing ? io::format_double(r->seconds) : std::string()) + "\n";
    }
    return out;
}

/// Setting of each results.csv row.
inline std::string sweep_csv(const std::vector<GraphOutcome>& batch) {
    std::string out = "trial,graph_id,N,tl\n";
    int row = 0;
    for (const RunResult* r : flatten(batch))
        out += std::to_string(++row) + "," + std::to_string(r->graph_id + 1) + "," + std::to_string(r->N) + "," + io::format_double(r->tl) + "\n";
    return out;
}

inline double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

struct SettingSummary {
    Index N = 0;
    double tl = 0;
    int runs = 0;
    int recovered = 0;
    int failures = 0;
    double median_eda = 0;       ///< over all nodes of recovered graphs
    double median_true = 0;
    double median_noise_max = 0;
};

inline std::vector<SettingSummary> summarize(const std::vector<GraphOutcome>& batch) {
    std::vector<SettingSummary> out;
    std::vector<std::vector<double>> eda, tru, noise;
    for (const RunResult* r : flatten(batch)) {
        auto it = std::find_if(out.begin(), out.end(), [&](const SettingSummary& s) { return s.N == r->N && s.tl == r->tl; });
        if (it == out.end()) {
            out.push_back({r->N, r->tl});
            eda.emplace_back();
            tru.emplace_back();
            noise.emplace_back();
            it = out.end() - 1;
        }
        const std::size_t idx = static_cast<std::size_t>(it - out.begin());
        ++it->runs;
        if (!r->report) {
            ++it->failures;
            continue;
        }
        if (std::isfinite(r->report->noise_max)) noise[idx].push_back(r->report->noise_max);
        if (!r->report->graph_recovered) continue;
        ++it->recovered;
        for (Index i = 0; i < r->report->eda_errors.size(); ++i) {
            eda[idx].push_back(r->report->eda_errors(i));
            tru[idx].push_back(r->report->true_errors(i));
        }
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i].median_eda = median(eda[i]);
        out[i].median_true = median(tru[i]);
        out[i].median_noise_max = median(noise[i]);
    }
    return out;
}

inline nlohmann::json summary_json(const BenchmarkConfig& c, const std::vector<GraphOutcome>& batch) {
    nlohmann::json settings = nlohmann::json::array();
    auto num = [](double v) -> nlohmann::json { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    for (const auto& s : summarize(batch))
        settings.push_back({{"N", s.N},
                            {"tl", s.tl},
                            {"runs", s.runs},
                            {"recovered", s.recovered},
                            {"failures", s.failures},
                            {"median_eda_recovered", num(s.median_eda)},
                            {"median_true_recovered", num(s.median_true)},
                            {"median_noise_max", num(s.median_noise_max)}});
    return {{"config", to_json(c)}, {"settings", std::move(settings)}};
}

inline bool any_failure(const std::vector<GraphOutcome>& batch) {
    for (const RunResult* r : flatten(batch))
        if (!r->report) return true;
    return false;
}

/// results.csv, sweep.csv, summary.json and trials/graph_XXX/ with the model,
/// the mixing estimates and every run.
inline void emit_report(const BenchmarkConfig& c, const std::vector<GraphOutcome>& batch, const std::filesystem::path& dir) {
    io::write_text(dir / "results.csv", results_csv(batch, c.d, c.timing));
    io::write_text(dir / "sweep.csv", sweep_csv(batch));
    io::write_json(dir / "summary.json", summary_json(c, batch));
    for (const auto& g : batch) {
        char name[32];
        std::snprintf(name, sizeof name, "graph_%03d", g.graph_id + 1);
        const auto gdir = dir / "trials" / name;
        if (g.model) io::write_json(gdir / "model.json", to_json(*g.model));
        for (const auto& [N, est] : g.estimates) io::write_json(gdir / ("mixing_N" + std::to_string(N) + ".json"), to_json(est));
        for (const auto& r : g.runs) {
            nlohmann::json j = {{"graph_id", r.graph_id + 1}, {"N", r.N}, {"tl", r.tl}, {"status", r.status}};
            if (!r.message.empty()) j["message"] = r.message;
            if (r.report) j["report"] = to_json(*r.report);
            if (r.recovered) j["recovered_model"] = to_json(*r.recovered);
            io::write_json(gdir / ("run_N" + std::to_string(r.N) + "_tl" + io::format_double(r.tl) + ".json"), j);
        }
    }
}

}  // namespace lingcrel
