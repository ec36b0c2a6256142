#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "labelclean/cleaning.hpp"
#include "labelclean/data.hpp"
#include "labelclean/metrics.hpp"
#include "labelclean/nnet.hpp"

namespace labelclean::evalx {

inline constexpr int kSchemaVersion = 1;

/// Either a CSV manifest or a named synthetic generator.
struct DatasetRef {
    std::optional<std::filesystem::path> manifest;
    std::string synthetic;
    int synthetic_n = 400;
    double synthetic_noise = 0.2;
    std::uint64_t synthetic_seed = 0;
};

struct ModelConfig {
    nnet::ModelKind kind = nnet::ModelKind::Mlp;
    std::vector<int> hidden_dims{16, 16};
    double dropout = 0.2;
    nnet::TrainConfig train = nnet::TrainConfig::defaults_for(nnet::ModelKind::Mlp);

    /// Keys: kind, hidden_dims, dropout, epochs, batch_size, early_stop, learning_rate, l2.
    static ModelConfig from_json(const nlohmann::json& j);
};

struct ExperimentConfig {
    std::string experiment = "q1";  // q1 | q2 | q3 | custom
    DatasetRef dataset;
    ModelConfig model;
    std::vector<std::string> strategies;  // empty: the experiment's default set
    double corruption_rate = 0.2;
    int bootstrap_size = 100;
    int stream_length = 300;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    double tau = 0.2;
    double train_fraction = 0.8;
    std::vector<int> k_values{5, 10};
    int q2_queries = 100;
    std::vector<std::string> q2_backends{"lissa-hessian", "full-fisher", "diagonal-fisher", "identity", "top-fisher"};
    std::filesystem::path output_dir = "out";

    /// Relative manifest paths resolve against `base_dir`.
    static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
    static ExperimentConfig load(const std::filesystem::path& path);
    nlohmann::json to_json() const;
    void validate() const;
    std::vector<std::string> effective_strategies() const;
};

/// Loads the referenced dataset without standardization.
data::ExampleSet load_dataset(const DatasetRef& ref);

/// One seeded replicate: split, standardize on the train split, corrupt the
/// train split, then carve bootstrap and stream from it. The test split stays clean.
struct RunData {
    data::ExampleSet bootstrap;
    std::vector<data::Example> stream;
    data::ExampleSet test;
};

RunData prepare_run(const data::ExampleSet& raw, const ExperimentConfig& cfg, std::uint64_t seed);
nnet::ArchitectureSpec make_arch(const ExperimentConfig& cfg, const data::ExampleSet& set, std::uint64_t seed);

struct MetricsRow {
    int iteration = 0;
    std::string strategy;
    std::uint64_t seed = 0;
    double f1 = 0.0;
    int cleaned = 0;
    int cleaned_suspicious = 0;
    int cleaned_ce = 0;
    int queries = 0;
    int useless_queries = 0;
};

struct MetricsTable {
    std::string experiment;
    std::vector<MetricsRow> rows;
    std::vector<std::string> failures;  // one line per run that raised
};

/// Rows for iteration 0 (bootstrap model) and every stream step.
std::vector<MetricsRow> rows_from_trace(const cleaning::LoopTrace& trace, double initial_f1,
                                        const std::string& strategy, std::uint64_t seed);

MetricsTable run_strategies(const ExperimentConfig& cfg, const std::vector<std::string>& strategies);
/// cincer+top-fisher vs drop-ce vs no-ce.
MetricsTable run_q1(const ExperimentConfig& cfg);
/// cincer+top-fisher vs cincer+identity vs nn.
MetricsTable run_q3(const ExperimentConfig& cfg);

struct PrecisionRow {
    std::string backend;
    int k = 0;
    std::uint64_t seed = 0;
    std::optional<double> precision;  // empty when there is nothing to find
    std::string reason;
};

struct PrecisionTable {
    std::vector<PrecisionRow> rows;
    std::vector<std::string> notices;

    /// Mean over seeds of the per-seed precision, ignoring null entries.
    std::optional<double> mean(const std::string& backend, int k) const;
};

/// Fits on the noisy bootstrap set, scores pertinent counter-examples for
/// the first q2_queries stream examples and measures precision@k.
PrecisionTable run_q2(const ExperimentConfig& cfg);

struct Stat {
    double mean = 0.0;
    double se = 0.0;
    bool operator==(const Stat&) const = default;
};

struct AggregatePoint {
    int iteration = 0;
    int n = 0;
    Stat f1, cleaned, cleaned_ce, queries, useless_queries;
    bool operator==(const AggregatePoint&) const = default;
};

struct AggregateTable {
    int schema_version = kSchemaVersion;
    std::string experiment;
    std::map<std::string, std::vector<AggregatePoint>> strategies;

    nlohmann::json to_json() const;
    static AggregateTable from_json(const nlohmann::json& j);
    bool operator==(const AggregateTable&) const = default;
};

/// Sample standard deviation divided by sqrt(number of values); 0 for one value.
Stat mean_and_se(const std::vector<double>& values);

AggregateTable aggregate(const MetricsTable& table);
std::string to_csv(const MetricsTable& table);
std::string to_csv(const PrecisionTable& table);
nlohmann::json to_json(const PrecisionTable& table, const ExperimentConfig& cfg);

/// Writes metrics.csv and aggregate.json under `dir`.
void report(const MetricsTable& table, const std::filesystem::path& dir);
/// Writes precision.csv and precision.json under `dir`.
void report(const PrecisionTable& table, const ExperimentConfig& cfg, const std::filesystem::path& dir);

/// Runs the experiment named in `cfg` and writes its reports to cfg.output_dir.
void run_experiment(const ExperimentConfig& cfg);

}  // namespace labelclean::evalx
