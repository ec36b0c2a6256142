#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <pthread.h>
#include <CLI11.hpp>
#include <spdlog/cfg/env.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "labelclean/cleaning.hpp"
#include "labelclean/data.hpp"
#include "labelclean/errors.hpp"
#include "labelclean/evalx.hpp"
#include "labelclean/random.hpp"
#include "labelclean/service.hpp"

namespace fs = std::filesystem;
using namespace labelclean;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

evalx::ExperimentConfig load_config(const std::string& path) {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path);
    return evalx::ExperimentConfig::load(path);
}

int cmd_experiment(const std::string& config_path, const std::string& output_dir) {
    auto cfg = load_config(config_path);
    if (!output_dir.empty()) cfg.output_dir = output_dir;
    spdlog::info("running {} with {} seed(s)", cfg.experiment, cfg.seeds.size());
    if (cfg.experiment == "q2") {
        const auto table = evalx::run_q2(cfg);
        for (const auto& n : table.notices) spdlog::warn("{}", n);
        evalx::report(table, cfg, cfg.output_dir);
    } else {
        const auto table = evalx::run_strategies(cfg, cfg.effective_strategies());
        for (const auto& f : table.failures) spdlog::error("run failed: {}", f);
        evalx::report(table, cfg.output_dir);
        if (!table.failures.empty()) return kRuntimeError;
    }
    spdlog::info("reports written to {}", cfg.output_dir.string());
    return kOk;
}

int cmd_clean(const std::string& config_path, const std::string& annotator, std::string strategy_name,
              std::optional<std::uint64_t> seed_override, const std::string& output_dir) {
    if (annotator != "oracle") throw ConfigError("unsupported annotator '" + annotator + "'");
    auto cfg = load_config(config_path);
    if (!output_dir.empty()) cfg.output_dir = output_dir;
    if (strategy_name.empty()) {
        const auto names = cfg.effective_strategies();
        strategy_name = names.empty() ? "cincer" : names.front();
    }
    const auto seed = seed_override.value_or(cfg.seeds.front());
    cfg.strategies = {strategy_name};
    cfg.seeds = {seed};
    cfg.experiment = "custom";
    cfg.validate();

    const auto raw = evalx::load_dataset(cfg.dataset);
    auto run = evalx::prepare_run(raw, cfg, seed);
    const auto arch = evalx::make_arch(cfg, run.bootstrap, derive_seed(seed, {0xa7u}));
    cleaning::Session session(run.bootstrap, run.stream,
                              {arch, cfg.model.train, cleaning::Strategy::parse(strategy_name, cfg.tau), seed},
                              run.test);
    const double f1_0 = session.current_f1().value_or(0.0);
    cleaning::OracleAnnotator oracle;
    session.run(oracle);

    fs::create_directories(cfg.output_dir);
    std::ofstream(cfg.output_dir / "trace.jsonl", std::ios::binary) << session.trace().to_jsonl();
    evalx::MetricsTable table;
    table.experiment = "custom";
    table.rows = evalx::rows_from_trace(session.trace(), f1_0, strategy_name, seed);
    evalx::report(table, cfg.output_dir);
    const auto& c = session.counters();
    spdlog::info("cleaned {} ({} suspicious, {} counter-examples) with {} queries", c.cleaned(),
                 c.cleaned_suspicious, c.cleaned_ce, c.queries);
    return kOk;
}

int cmd_serve(const std::string& addr, const std::vector<std::string>& manifests) {
    const auto [host, port] = service::parse_address(addr);
    service::Service svc;
    for (const auto& m : manifests) svc.add_manifest(m);

    // SIGTERM and SIGINT are blocked in every thread and collected by a waiter.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGTERM);
    sigaddset(&signals, SIGINT);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    service::HttpServer server(svc);
    const int bound = server.bind(host, port);
    std::thread waiter([&] {
        int sig = 0;
        sigwait(&signals, &sig);
        spdlog::info("signal {} received, shutting down", sig);
        server.stop();
    });
    spdlog::info("listening on {}:{}", host, bound);
    std::cout << "listening on " << host << ":" << bound << std::endl;
    server.listen();
    if (waiter.joinable()) {
        pthread_kill(waiter.native_handle(), SIGTERM);
        waiter.join();
    }
    return kOk;
}

int cmd_corrupt(const std::string& csv, double rate, std::uint64_t seed, const std::string& label_column,
                std::string out) {
    if (!fs::exists(csv)) throw ConfigError("csv file not found: " + csv);
    data::CsvSchema schema;
    schema.label_column = label_column;
    schema.standardize = false;
    const auto set = data::load_csv(csv, schema);
    const auto noisy = data::corrupt(set, {rate, seed});
    if (out.empty()) {
        fs::path p = csv;
        out = (p.parent_path() / (p.stem().string() + ".corrupted.csv")).string();
    }
    data::write_csv(noisy, out);
    spdlog::info("{} of {} labels flipped, written to {}", noisy.count_corrupted(), noisy.size(), out);
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Label cleaning with counter-examples"};
    app.require_subcommand(0, 1);

    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")->envname("LABELCLEAN_LOG_LEVEL");
    std::string serve_shortcut;
    app.add_option("--serve", serve_shortcut, "Serve the HTTP API on host:port");

    std::string config_path, output_dir;
    auto* experiment = app.add_subcommand("experiment", "Run the experiment described by a config file");
    experiment->add_option("config", config_path, "Config JSON")->required();
    experiment->add_option("--output-dir", output_dir, "Override the configured output directory");

    std::string annotator = "oracle", strategy;
    std::optional<std::uint64_t> seed_override;
    auto* clean = app.add_subcommand("clean", "Single cleaning run with trace export");
    clean->add_option("config", config_path, "Config JSON")->required();
    clean->add_option("--annotator", annotator, "Annotator (oracle)");
    clean->add_option("--strategy", strategy, "Strategy name; default is the first configured one");
    clean->add_option("--seed", seed_override, "Seed; default is the first configured one");
    clean->add_option("--output-dir", output_dir, "Override the configured output directory");

    std::string addr = "127.0.0.1:8080";
    std::vector<std::string> manifests;
    auto* serve = app.add_subcommand("serve", "Serve the session HTTP API");
    serve->add_option("--addr", addr, "host:port")->envname("LABELCLEAN_ADDR");
    serve->add_option("--data", manifests, "Dataset manifest (repeatable)");

    std::string csv, label_column = "label", out;
    double rate = 0.2;
    std::uint64_t seed = 0;
    auto* corrupt = app.add_subcommand("corrupt", "Write a label-corrupted copy of a CSV file");
    corrupt->add_option("csv", csv, "Input CSV")->required();
    corrupt->add_option("--rate", rate, "Fraction of labels to flip");
    corrupt->add_option("--seed", seed, "Seed");
    corrupt->add_option("--label-column", label_column, "Label column name");
    corrupt->add_option("--out", out, "Output path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    auto sink = std::make_shared<spdlog::sinks::stderr_color_sink_mt>();
    spdlog::set_default_logger(std::make_shared<spdlog::logger>("labelclean", sink));
    spdlog::set_level(spdlog::level::from_str(log_level));
    spdlog::cfg::load_env_levels();

    try {
        if (*experiment) return cmd_experiment(config_path, output_dir);
        if (*clean) return cmd_clean(config_path, annotator, strategy, seed_override, output_dir);
        if (*serve) return cmd_serve(addr, manifests);
        if (*corrupt) return cmd_corrupt(csv, rate, seed, label_column, out);
        if (!serve_shortcut.empty()) return cmd_serve(serve_shortcut, manifests);
        std::cout << app.help();
        return kConfigError;
    } catch (const ConfigError& e) {
        spdlog::error("{}", e.what());
        return kConfigError;
    } catch (const ParseError& e) {
        spdlog::error("{}", e.what());
        return kConfigError;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kRuntimeError;
    }
}
