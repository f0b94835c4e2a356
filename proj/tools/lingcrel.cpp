// Command-line front end: data generation, recovery, evaluation, population
// oracle, ambiguity demonstrations and benchmark sweeps.
//
// Exit codes: 0 success, 1 usage error, 2 failed trials or recovery, 3 I/O.

#include "lingcrel/lingcrel.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace lingcrel;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitFailure = 2;
constexpr int kExitIo = 3;

// Flags shared by every verb that builds a BenchmarkConfig. Only flags given
// on the command line override the config file.
struct ConfigFlags {
    std::string config_file;
    int d = 0, n = 0, K = 0, num_graphs = 0, workers = 0, ica_max_iter = 0, ica_restarts = 0;
    double p = 0, budget = 0;
    std::vector<Index> N_list;
    std::vector<double> tl;
    std::uint64_t seed = 0;
    std::string mode, align, out, scheme;
    bool timing = false, ica_plain = false;

    CLI::Option *o_d{}, *o_n{}, *o_K{}, *o_p{}, *o_N{}, *o_tl{}, *o_graphs{}, *o_seed{}, *o_mode{}, *o_out{}, *o_workers{},
        *o_budget{}, *o_align{}, *o_scheme{}, *o_iter{}, *o_restarts{}, *o_plain{}, *o_timing{};

    void add_to(CLI::App* app, bool sweep) {
        app->add_option("--config", config_file, "JSON config file; flags override its keys")->check(CLI::ExistingFile);
        o_d = app->add_option("-d,--d", d, "number of latent variables");
        o_n = app->add_option("-n,--n", n, "observed dimension (default d)");
        o_K = app->add_option("-K,--K", K, "number of environments (default d)");
        o_p = app->add_option("-p,--p", p, "edge probability");
        o_seed = app->add_option("--seed", seed, "master seed");
        o_align = app->add_option("--align", align, "environment alignment: psi, ks or pooled");
        o_scheme = app->add_option("--scheme", scheme, "weight scheme: unit_diagonal, gaussian_b or gaussian_a_omega");
        o_iter = app->add_option("--ica-max-iter", ica_max_iter, "FastICA iteration cap");
        o_restarts = app->add_option("--ica-restarts", ica_restarts, "FastICA restarts");
        o_plain = app->add_flag("--ica-plain", ica_plain, "skip the adaptive-nonlinearity refinement of FastICA");
        o_mode = app->add_option("--mode", mode, "population or finite_sample");
        o_tl = app->add_option("--tl", tl, "singular-value threshold(s)");
        if (sweep) {
            o_N = app->add_option("-N,--N", N_list, "sample sizes (ascending)");
            o_graphs = app->add_option("--graphs", num_graphs, "number of random models");
            o_out = app->add_option("-o,--out", out, "output directory");
            o_workers = app->add_option("-j,--workers", workers, "concurrent trials");
            o_budget = app->add_option("--budget", budget, "per-model wall-clock budget in seconds");
            o_timing = app->add_flag("--timing", timing, "fill the seconds column (output no longer byte-stable)");
        }
    }

    static bool given(const CLI::Option* o) { return o && o->count() > 0; }

    BenchmarkConfig build() const {
        BenchmarkConfig c;
        if (!config_file.empty()) apply_json(c, io::read_json(config_file));
        if (given(o_d)) c.d = d;
        if (given(o_n)) c.n = n;
        if (given(o_K)) c.K = K;
        if (given(o_p)) c.p = p;
        if (given(o_N)) c.N_list = N_list;
        if (given(o_tl)) c.tl = tl;
        if (given(o_graphs)) c.num_graphs = num_graphs;
        if (given(o_seed)) c.master_seed = seed;
        if (given(o_mode)) c.mode = parse_mode(mode);
        if (given(o_out)) c.output_dir = out;
        if (given(o_workers)) c.workers = workers;
        if (given(o_budget)) c.budget_seconds = budget;
        if (given(o_align)) c.align = parse_align(align);
        if (given(o_scheme)) c.scheme = parse_scheme(scheme);
        if (given(o_iter)) c.ica_max_iter = ica_max_iter;
        if (given(o_restarts)) c.ica_restarts = ica_restarts;
        if (given(o_plain)) c.ica_adaptive = !ica_plain;
        if (given(o_timing)) c.timing = timing;
        c.validate();
        return c;
    }
};

void print_json(const nlohmann::json& j) { std::cout << j.dump(2) << "\n"; }

void write_or_print(const std::string& path, const nlohmann::json& j) {
    if (path.empty()) print_json(j);
    else io::write_json(path, j);
}

LinearScm load_or_draw(const std::string& model_path, const BenchmarkConfig& c, bool interventions) {
    if (!model_path.empty()) return model_from_json(io::read_json(model_path));
    Rng rng = make_stream(c.master_seed, {stream_tag::kModel});
    return interventions ? random_intervention_model(c.model_spec(), rng, c.master_seed) : random_model(c.model_spec(), rng, c.master_seed);
}

std::string summary_line(const SettingSummary& s) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "N=%-8ld tl=%-8s recovered %d/%d  failures %d  median EDA %s  median noise_max %s", static_cast<long>(s.N),
                  io::format_double(s.tl).c_str(), s.recovered, s.runs, s.failures, io::format_double(s.median_eda).c_str(),
                  io::format_double(s.median_noise_max).c_str());
    return buf;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Latent linear causal model recovery from multiple environments"};
    app.require_subcommand(1);

    // generate
    ConfigFlags gen_flags;
    Index gen_N = 20000;
    std::string gen_out = "data";
    bool gen_interventions = false;
    auto* gen = app.add_subcommand("generate", "draw a random model and sample every environment");
    gen_flags.add_to(gen, false);
    gen->add_option("-N,--N", gen_N, "samples per environment (0: model only)");
    gen->add_option("-o,--out", gen_out, "output directory");
    gen->add_flag("--interventions", gen_interventions, "grouped single-node interventions instead of general environments");

    // recover
    ConfigFlags rec_flags;
    std::string rec_data, rec_out, rec_mixing_out;
    auto* rec = app.add_subcommand("recover", "ICA, alignment and graph recovery on a generated dataset");
    rec_flags.add_to(rec, false);
    rec->add_option("--data", rec_data, "dataset directory written by generate")->required()->check(CLI::ExistingDirectory);
    rec->add_option("-o,--out", rec_out, "recovered model JSON (default stdout)");
    rec->add_option("--mixing-out", rec_mixing_out, "aligned mixing estimate JSON");

    // evaluate
    std::string ev_model, ev_recovered, ev_mixing, ev_out;
    auto* ev = app.add_subcommand("evaluate", "score a recovered model against its ground truth");
    ev->add_option("--model", ev_model, "ground-truth model JSON")->required()->check(CLI::ExistingFile);
    ev->add_option("--recovered", ev_recovered, "recovered model JSON")->required()->check(CLI::ExistingFile);
    ev->add_option("--mixing", ev_mixing, "aligned mixing estimate JSON, enables signal/noise diagnostics")->check(CLI::ExistingFile);
    ev->add_option("-o,--out", ev_out, "report JSON (default stdout)");

    // oracle
    ConfigFlags or_flags;
    std::string or_model, or_out;
    auto* orc = app.add_subcommand("oracle", "population-mode recovery from exact M_k = B_k H");
    or_flags.add_to(orc, false);
    orc->add_option("--model", or_model, "model JSON (default: draw one from the flags)")->check(CLI::ExistingFile);
    orc->add_option("-o,--out", or_out, "report JSON (default stdout)");

    // ambiguity
    ConfigFlags amb_flags;
    std::string amb_model, amb_out;
    double amb_scale = 0.5;
    bool amb_interventions = false;
    auto* amb = app.add_subcommand("ambiguity", "build an observationally identical model from an effect-respecting M");
    amb_flags.add_to(amb, false);
    amb->add_option("--model", amb_model, "model JSON (default: draw one from the flags)")->check(CLI::ExistingFile);
    amb->add_option("--scale", amb_scale, "standard deviation of the free entries of M");
    amb->add_flag("--interventions", amb_interventions, "draw a grouped single-node intervention model");
    amb->add_option("-o,--out", amb_out, "report JSON");

    // benchmark
    ConfigFlags bench_flags;
    bool bench_quiet = false;
    auto* bench = app.add_subcommand("benchmark", "sweep random models over sample sizes and thresholds");
    bench_flags.add_to(bench, true);
    bench->add_flag("-q,--quiet", bench_quiet, "no per-model progress");

    // min-samples
    ConfigFlags ms_flags;
    std::string ms_model;
    Index ms_step = 500, ms_max = 20000;
    int ms_graph = 1;
    auto* ms = app.add_subcommand("min-samples", "smallest multiple of a step at which the graph is recovered");
    ms_flags.add_to(ms, false);
    ms->add_option("--model", ms_model, "model JSON (default: graph --graph of the benchmark sweep)")->check(CLI::ExistingFile);
    ms->add_option("--graph", ms_graph, "1-based model index within the sweep");
    ms->add_option("--step", ms_step, "sample size step");
    ms->add_option("--max", ms_max, "largest sample size probed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (gen->parsed()) {
            const BenchmarkConfig c = gen_flags.build();
            const LinearScm m = load_or_draw("", c, gen_interventions);
            io::write_json(fs::path(gen_out) / "model.json", to_json(m));
            if (gen_N > 0) {
                const EnvDataset ds = generate_dataset(m, gen_N, derive_seed(c.master_seed, {stream_tag::kSamples}));
                write_dataset(ds, gen_out);
            }
            std::cout << "model " << model_hash(m) << " with " << m.g.edge_count() << " edges written to " << gen_out << "\n";
        } else if (rec->parsed()) {
            BenchmarkConfig c = rec_flags.build();
            const EnvDataset ds = read_dataset(rec_data);
            const fs::path model_path = fs::path(rec_data) / "model.json";
            if (!ConfigFlags::given(rec_flags.o_d)) {
                if (!fs::exists(model_path)) throw InvalidArgument("pass -d: no model.json next to the dataset");
                c.d = model_from_json(io::read_json(model_path)).d();
            }
            const int d = c.d;
            AlignOptions align;
            align.strategy = c.resolved_align();
            const MixingEstimate est = estimate_mixing(ds.blocks, d, ds.manifest.seed, align, c.ica_options());
            const double tl = c.tl.empty() ? default_tl(d) : c.tl.front();
            const RecoveredModel rm = learn_causal_model(est, RecoveryOptions::finite_sample(tl));
            if (!rec_mixing_out.empty()) io::write_json(rec_mixing_out, to_json(est));
            write_or_print(rec_out, to_json(rm));
        } else if (ev->parsed()) {
            const LinearScm truth = model_from_json(io::read_json(ev_model));
            const RecoveredModel rm = recovered_from_json(io::read_json(ev_recovered));
            std::vector<MatrixXd> M;
            if (!ev_mixing.empty()) M = mixing_from_json(io::read_json(ev_mixing)).M;
            write_or_print(ev_out, to_json(evaluate(truth, rm, M)));
        } else if (orc->parsed()) {
            const BenchmarkConfig c = or_flags.build();
            const LinearScm truth = load_or_draw(or_model, c, false);
            const auto M = canonical_population_mixing(truth);
            const RecoveredModel rm = learn_causal_model(std::span<const MatrixXd>(M), RecoveryOptions::population());
            const ErrorReport rep = evaluate(truth, rm, M);
            write_or_print(or_out, {{"report", to_json(rep)}, {"recovered_model", to_json(relabel(rm, canonical_order(truth)))}});
            if (!rep.graph_recovered) return kExitFailure;
        } else if (amb->parsed()) {
            const BenchmarkConfig c = amb_flags.build();
            const LinearScm truth = load_or_draw(amb_model, c, amb_interventions);
            Rng rng = make_stream(c.master_seed, {stream_tag::kAmbiguity});
            const AmbiguityDemo demo = demonstrate_ambiguity(truth, amb_scale, rng);
            const auto& r = demo.report;
            auto line = [](const char* name, const CheckResult& cr) {
                std::cout << "  " << name << ": " << (!cr.applicable ? "n/a" : cr.passed ? "pass" : "FAIL") << "  (" << cr.detail << ")\n";
            };
            std::cout << "effect-respecting M on " << truth.d() << " nodes, " << truth.K() << " environments, " << r.resamples
                      << " resample(s)\n";
            line("observational invariance", r.obs_invariance);
            line("sparsity", r.sparsity);
            line("non-degeneracy", r.nondegeneracy);
            line("intervention structure", r.intervention_structure);
            if (!amb_out.empty()) {
                nlohmann::json j = to_json(r);
                j["hypothetical"] = to_json(demo.hypo);
                io::write_json(amb_out, j);
            }
            if (!r.all_passed()) return kExitFailure;
        } else if (bench->parsed()) {
            const BenchmarkConfig c = bench_flags.build();
            const auto batch = run_batch(c, [&](const GraphOutcome& g) {
                if (bench_quiet) return;
                int ok = 0;
                for (const auto& r : g.runs) ok += r.report && r.report->graph_recovered;
                std::cerr << "model " << g.graph_id + 1 << ": recovered in " << ok << "/" << g.runs.size() << " runs\n";
            });
            emit_report(c, batch, c.output_dir);
            for (const auto& s : summarize(batch)) std::cout << summary_line(s) << "\n";
            if (any_failure(batch)) return kExitFailure;
        } else if (ms->parsed()) {
            const BenchmarkConfig c = ms_flags.build();
            if (ms_graph < 1) throw InvalidArgument("--graph must be >= 1");
            const LinearScm m = ms_model.empty() ? benchmark_model(c, ms_graph - 1) : model_from_json(io::read_json(ms_model));
            const double tl = c.tl.empty() ? default_tl(m.d()) : c.tl.front();
            const auto N = minimal_sample_size(c, m, ms_step, ms_max, derive_seed(c.master_seed, {stream_tag::kSamples, 0xfeedULL}), tl);
            print_json({{"min_samples", N ? nlohmann::json(*N) : nlohmann::json(nullptr)}, {"step", ms_step}, {"max", ms_max}, {"tl", tl}});
            if (!N) return kExitFailure;
        }
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const InvalidArgument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "usage error: malformed JSON input: " << e.what() << "\n";
        return kExitUsage;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitOk;
}
