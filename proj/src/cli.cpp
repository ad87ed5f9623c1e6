#include "iseg/cli.hpp"

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "iseg/config.hpp"
#include "iseg/errors.hpp"
#include "iseg/gradcheck.hpp"
#include "iseg/graph_prop.hpp"
#include "iseg/session_service.hpp"

namespace iseg {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Flags shared by every subcommand.
struct Common {
    std::optional<std::uint64_t> seed;
    std::string config_path;
    std::string out = ".";
    std::optional<int> threads;
    bool deterministic = false;
    std::vector<std::string> overrides;

    Config config;

    void attach(CLI::App* cmd) {
        cmd->add_option("--seed", seed, "Master seed for every stochastic step");
        cmd->add_option("--config", config_path, "Config file (key = value with [section] headers)")
            ->check(CLI::ExistingFile);
        cmd->add_option("--out", out, "Output directory for reports and artifacts")->capture_default_str();
        cmd->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
        cmd->add_flag("--deterministic", deterministic, "Serialize all parallel work");
        cmd->add_option("--set", overrides, "Config override key=value (repeatable)");
    }

    // File values, then --set overrides, then dedicated flags.
    void resolve() {
        if (!config_path.empty()) config = Config::load(config_path);
        for (const auto& o : overrides) config.set_assignment(o);
        if (seed) config.set("seed", std::to_string(*seed));
        if (threads) config.set("threads", std::to_string(*threads));
        if (deterministic) config.set("deterministic", "true");
        config.require_known();
        fs::create_directories(out);
    }

    std::uint64_t master_seed() const { return config.get_u64("seed", 0); }
    int worker_threads() const {
        if (config.get_bool("deterministic", false)) return 1;
        return std::max(1, config.get_int("threads", 1));
    }
    fs::path path(const std::string& name) const { return fs::path(out) / name; }
};

SceneConfig scene_config(const Config& c) {
    SceneConfig s;
    apply_config(c, s);
    s.validate();
    return s;
}

Dataset dataset_for(const Common& g, const std::string& manifest, const std::string& split) {
    if (!manifest.empty()) return load_split(manifest, split);
    const int n = split == "train" ? g.config.get_int("data.n_train", 200) : g.config.get_int("data.n_eval", 50);
    return generate_split(n, g.master_seed(), split, scene_config(g.config));
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

TrainConfig train_config(const Common& g) {
    TrainConfig t;
    apply_config(g.config, t);
    t.validate();
    return t;
}

CascadeConfig cascade_config(const Common& g, const CascadeModel& model) {
    CascadeConfig z;
    apply_config(g.config, z);
    if (!g.config.has("zoom.strategy") && !model.fine) z.strategy = Strategy::coarse_only;
    z.validate();
    return z;
}

int cmd_gen_data(const Common& g, int n_train, int n_eval) {
    const auto n_tr = n_train >= 0 ? n_train : g.config.get_int("data.n_train", 200);
    const auto n_ev = n_eval >= 0 ? n_eval : g.config.get_int("data.n_eval", 50);
    const auto m = build_dataset(n_tr, n_ev, g.master_seed(), g.out, scene_config(g.config));
    std::cout << "wrote " << m.entries.size() << " scenes, manifest hash " << m.hash() << '\n';
    return kExitOk;
}

int cmd_train(const Common& g, const std::string& data) {
    auto cfg = train_config(g);
    cfg.log_path = g.path("train_log.jsonl");
    const auto train = dataset_for(g, data, "train");
    std::cout << "training " << to_string(cfg.ablation) << " (fpm " << to_string(cfg.model.fpm) << ") on "
              << train.size() << " scenes\n";
    const auto progress = [](const StepLog& s, const ModelParams&) {
        if (s.step % 100 == 0) std::cout << "step " << s.step << " epoch " << s.epoch << " loss " << s.loss << '\n';
        return true;
    };
    CascadeModel model{train_coarse(train, cfg, progress).params, std::nullopt};
    if (uses_iaf(cfg.ablation)) {
        auto fine_cfg = cfg;
        fine_cfg.log_path = g.path("train_fine_log.jsonl");
        model.fine = train_fine(model.coarse, train, fine_cfg, progress).params;
    }
    save_cascade(g.path("model.ckpt"), model);
    std::cout << "saved " << g.path("model.ckpt").string() << '\n';
    return kExitOk;
}

int cmd_eval(const Common& g, const std::string& checkpoint, const std::string& data) {
    const auto model = load_cascade(checkpoint);
    EvalConfig ec;
    apply_config(g.config, ec);
    ec.validate();
    const auto cc = cascade_config(g, model);
    const auto eval = dataset_for(g, data, "eval");
    const auto records = evaluate(model.coarse_predictor(), model.fine_predictor(), eval, ec, cc, g.worker_threads());
    write_eval_report(records, ec, g.path("eval"));
    std::cout << "NoC@" << static_cast<int>(ec.tau * 100 + 0.5) << ' ' << noc(records, ec) << "  NoF " << nof(records)
              << "  strategy " << to_string(cc.strategy) << '\n';
    return kExitOk;
}

int cmd_ablate(const Common& g, const std::vector<std::string>& grids, const std::vector<std::uint64_t>& seeds,
               const std::vector<std::string>& variants, const std::string& data) {
    auto base = train_config(g);
    EvalConfig ec;
    apply_config(g.config, ec);
    AblationOptions opt;
    opt.grids.clear();
    for (const auto& name : grids) opt.grids.push_back(ablation_grid_from_string(name));
    if (!seeds.empty()) opt.seeds = seeds;
    opt.variants = variants;
    opt.threads = g.worker_threads();
    opt.work_dir = g.path("runs");
    const auto train = dataset_for(g, data, "train");
    const auto eval = dataset_for(g, data, "eval");
    const auto report = run_ablation(train, eval, base, ec, opt);
    write_ablation_csv(report, g.path("ablation.csv"));
    for (const auto& [variant, mean] : report.mean_noc()) std::cout << variant << " mean NoC " << mean << '\n';
    return kExitOk;
}

std::vector<std::size_t> parse_sizes(const std::string& s) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');) {
        try {
            out.push_back(std::stoul(item));
        } catch (const std::exception&) {
            throw ArgumentError("bench.sizes: '" + item + "' is not a size");
        }
    }
    if (out.empty()) throw ArgumentError("bench.sizes is empty");
    return out;
}

int cmd_bench_graph(const Common& g) {
    ScalingOptions opt;
    opt.runs = g.config.get_int("bench.runs", 10);
    opt.warmup = g.config.get_int("bench.warmup", 2);
    opt.min_run_ms = g.config.get_double("bench.min_run_ms", opt.min_run_ms);
    opt.seed = g.master_seed();
    const auto m = static_cast<std::size_t>(g.config.get_int("bench.m", 5));
    const auto c = static_cast<std::size_t>(g.config.get_int("bench.c", 32));
    const auto sizes = parse_sizes(g.config.get_string("bench.sizes", "512,1024,2048"));
    const auto report = benchmark_scaling(c, m, sizes, opt);
    write_scaling_report(report, g.path("scaling"));
    for (const auto& r : report.rows)
        std::cout << "N " << r.n << "  sparse " << r.sparse_ms << " ms  dense " << r.dense_ms << " ms\n";
    std::cout << "log-log slopes: sparse " << report.sparse_slope << ", dense " << report.dense_slope << '\n';
    return kExitOk;
}

int cmd_bench_spc(const Common& g, const std::string& checkpoint, int clicks) {
    CascadeModel model;
    if (!checkpoint.empty()) {
        model = load_cascade(checkpoint);
    } else {
        ModelConfig mc;
        apply_config(g.config, mc);
        mc.fpm = g.config.has("model.fpm") ? mc.fpm : FpmMode::sgm_hsgm;
        model.coarse = ModelParams::init(mc);
        model.fine = model.coarse.clone();
    }
    CascadeConfig cc;
    apply_config(g.config, cc);
    cc.validate();
    const auto data = generate_split(g.config.get_int("data.n_eval", 50), g.master_seed(), "eval",
                                     scene_config(g.config));
    const auto stats = spc_benchmark(model.coarse_predictor(), model.fine_predictor(), data, cc, clicks);
    write_json(g.path("spc.json"), {{"median_s", stats.median_s},
                                    {"mean_s", stats.mean_s},
                                    {"steps", stats.steps},
                                    {"machine", stats.machine},
                                    {"strategy", to_string(cc.strategy)},
                                    {"reference_s", kReferenceSpcSeconds}});
    std::cout << "median " << stats.median_s << " s per click over " << stats.steps << " steps (" << stats.machine
              << ")\n";
    return kExitOk;
}

int cmd_gradcheck(const Common& g, const std::vector<std::string>& ops, int instances) {
    GradCheckOptions opt;
    opt.seed = g.master_seed();
    if (instances > 0) opt.instances = instances;
    const auto results = run_gradcheck(ops, opt);
    json rows = json::array();
    bool ok = true;
    for (const auto& r : results) {
        ok = ok && r.passed;
        rows.push_back({{"op", r.op},
                        {"instances", r.instances},
                        {"coords_checked", r.coords_checked},
                        {"coords_skipped", r.coords_skipped},
                        {"max_rel_error", r.max_rel_error},
                        {"passed", r.passed}});
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.op << "  max rel err " << r.max_rel_error << "  coords "
                  << r.coords_checked << '\n';
    }
    write_json(g.path("gradcheck.json"), {{"tolerance", opt.tolerance}, {"step", opt.step}, {"ops", rows}});
    return ok ? kExitOk : kExitDomainError;
}

SessionServer* g_server = nullptr;

void on_signal(int) {
    if (g_server) g_server->stop();
}

int cmd_serve(const Common& g, const std::string& checkpoint, std::optional<int> port, std::optional<double> ttl,
              const std::string& static_dir) {
    const auto model = load_cascade(checkpoint);
    ServiceConfig sc;
    sc.port = port.value_or(g.config.get_int("service.port", sc.port));
    sc.session_ttl = ttl.value_or(g.config.get_double("service.session_ttl", sc.session_ttl));
    sc.max_sessions = g.config.get_int("service.max_sessions", sc.max_sessions);
    sc.static_dir = static_dir.empty() ? g.config.get_string("service.static_dir", "") : static_dir;
    SessionServer server(model, cascade_config(g, model), sc);
    const int bound = server.bind();
    std::cout << "listening on http://" << sc.host << ':' << bound << std::endl;
    g_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    server.run();
    g_server = nullptr;
    return kExitOk;
}

} // namespace

int dispatch(int argc, const char* const* argv) {
    CLI::App app{"Interactive segmentation toolkit: data, training, evaluation, benchmarks and the session server"};
    app.require_subcommand(1);

    Common g;
    std::string data, checkpoint, static_dir;
    int n_train = -1, n_eval = -1, spc_clicks = 5, gc_instances = 0;
    std::vector<std::string> grids{"components"}, ops{"all"}, variants;
    std::vector<std::uint64_t> seeds;
    std::optional<int> port;
    std::optional<double> ttl;

    auto* gen = app.add_subcommand("gen-data", "Generate synthetic train/eval scenes and a manifest");
    gen->add_option("--n-train", n_train, "Training scenes (default data.n_train)");
    gen->add_option("--n-eval", n_eval, "Evaluation scenes (default data.n_eval)");

    auto* train = app.add_subcommand("train", "Train the coarse network and, for IAF variants, the fine network");
    train->add_option("--data", data, "Dataset manifest (default: generate in memory)");

    auto* eval = app.add_subcommand("eval", "Robot-user evaluation of a checkpoint");
    eval->add_option("--checkpoint", checkpoint, "Cascade checkpoint")->required();
    eval->add_option("--data", data, "Dataset manifest (default: generate in memory)");

    auto* ablate = app.add_subcommand("ablate", "Train and evaluate an ablation grid");
    ablate->add_option("--grid", grids, "components, fpm or iaf (repeatable)")->capture_default_str();
    ablate->add_option("--seeds", seeds, "Training seeds (default 0 1 2)")->delimiter(',');
    ablate->add_option("--variant", variants, "Keep only these variants (repeatable, default all)");
    ablate->add_option("--data", data, "Dataset manifest (default: generate in memory)");

    auto* bench_graph = app.add_subcommand("bench-graph", "Sparse graph versus dense non-local timing");

    auto* bench_spc = app.add_subcommand("bench-spc", "Seconds per click of the interactive step");
    bench_spc->add_option("--checkpoint", checkpoint, "Cascade checkpoint (default: untrained weights)");
    bench_spc->add_option("--clicks", spc_clicks, "Clicks per sample")->check(CLI::PositiveNumber);

    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
    gradcheck->add_option("--ops", ops, "Ops to check, or 'all'")->delimiter(',')->capture_default_str();
    gradcheck->add_option("--instances", gc_instances, "Random instances per op (default 20)");

    auto* serve = app.add_subcommand("serve", "HTTP session server for interactive annotation");
    serve->add_option("--checkpoint", checkpoint, "Cascade checkpoint")->required();
    serve->add_option("--port", port, "Listening port (default service.port)");
    serve->add_option("--session-ttl", ttl, "Idle seconds before a session expires");
    serve->add_option("--static-dir", static_dir, "Directory served under /");

    for (auto* cmd : {gen, train, eval, ablate, bench_graph, bench_spc, gradcheck, serve}) g.attach(cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << app.help();
        return kExitUsage;
    }

    try {
        g.resolve();
        if (gen->parsed()) return cmd_gen_data(g, n_train, n_eval);
        if (train->parsed()) return cmd_train(g, data);
        if (eval->parsed()) return cmd_eval(g, checkpoint, data);
        if (ablate->parsed()) return cmd_ablate(g, grids, seeds, variants, data);
        if (bench_graph->parsed()) return cmd_bench_graph(g);
        if (bench_spc->parsed()) return cmd_bench_spc(g, checkpoint, spc_clicks);
        if (gradcheck->parsed()) return cmd_gradcheck(g, ops, gc_instances);
        if (serve->parsed()) return cmd_serve(g, checkpoint, port, ttl, static_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitDomainError;
    }
    return kExitUsage;
}

} // namespace iseg
