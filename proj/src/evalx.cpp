#include "labelclean/evalx.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "labelclean/errors.hpp"
#include "labelclean/influence.hpp"
#include "labelclean/random.hpp"

namespace labelclean::evalx {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

json stat_json(const Stat& s) { return json{{"mean", s.mean}, {"se", s.se}}; }
Stat stat_from(const json& j) { return {j.at("mean").get<double>(), j.at("se").get<double>()}; }

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << content;
}

}  // namespace

ModelConfig ModelConfig::from_json(const json& m) {
    ModelConfig c;
    try {
        c.kind = nnet::parse_model_kind(m.value("kind", std::string("mlp")));
        c.train = nnet::TrainConfig::defaults_for(c.kind);
        c.hidden_dims = m.value("hidden_dims", c.kind == nnet::ModelKind::Mlp
                                                         ? std::vector<int>{16, 16}
                                                         : std::vector<int>{});
        c.dropout = m.value("dropout", c.kind == nnet::ModelKind::Mlp ? 0.2 : 0.0);
        auto& t = c.train;
        t.epochs = m.value("epochs", t.epochs);
        t.batch_size = m.value("batch_size", t.batch_size);
        if (m.contains("early_stop")) {
            if (m.at("early_stop").is_null()) t.early_stop_train_accuracy.reset();
            else t.early_stop_train_accuracy = m.at("early_stop").get<double>();
        }
        t.learning_rate = m.value("learning_rate", t.learning_rate);
        t.l2 = m.value("l2", t.l2);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    c.train.validate();
    return c;
}

ExperimentConfig ExperimentConfig::from_json(const json& j, const fs::path& base_dir) {
    ExperimentConfig c;
    try {
        c.experiment = j.value("experiment", std::string("q1"));

        const auto& d = j.at("dataset");
        auto set_manifest = [&](const std::string& p) {
            fs::path mp = p;
            c.dataset.manifest = mp.is_relative() && !base_dir.empty() ? base_dir / mp : mp;
        };
        if (d.is_string()) {
            const auto name = d.get<std::string>();
            if (name == "moons" || name == "two-gaussians") c.dataset.synthetic = name;
            else set_manifest(name);
        } else {
            if (d.contains("manifest")) set_manifest(d.at("manifest").get<std::string>());
            c.dataset.synthetic = d.value("synthetic", std::string());
            c.dataset.synthetic_n = d.value("n", c.dataset.synthetic_n);
            c.dataset.synthetic_noise = d.value("noise", c.dataset.synthetic_noise);
            c.dataset.synthetic_seed = d.value("seed", c.dataset.synthetic_seed);
        }

        if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));

        c.strategies = j.value("strategies", std::vector<std::string>{});
        if (j.contains("corruption")) {
            const auto& cr = j.at("corruption");
            c.corruption_rate = cr.is_number() ? cr.get<double>() : cr.value("rate", c.corruption_rate);
        }
        c.bootstrap_size = j.value("bootstrap_size", c.bootstrap_size);
        c.stream_length = j.value("stream_length", c.stream_length);
        c.seeds = j.value("seeds", c.seeds);
        c.tau = j.value("tau", c.tau);
        c.train_fraction = j.value("train_fraction", c.train_fraction);
        c.k_values = j.value("k_values", c.k_values);
        c.q2_queries = j.value("q2_queries", c.q2_queries);
        c.q2_backends = j.value("backends", c.q2_backends);
        if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("experiment config: ") + e.what());
    }
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config file " + path.string() + ": " + e.what());
    }
    return from_json(j, path.parent_path());
}

json ExperimentConfig::to_json() const {
    json d;
    if (dataset.manifest) d["manifest"] = dataset.manifest->string();
    if (!dataset.synthetic.empty()) {
        d["synthetic"] = dataset.synthetic;
        d["n"] = dataset.synthetic_n;
        d["noise"] = dataset.synthetic_noise;
        d["seed"] = dataset.synthetic_seed;
    }
    json m{{"kind", nnet::to_string(model.kind)},
           {"hidden_dims", model.hidden_dims},
           {"dropout", model.dropout},
           {"epochs", model.train.epochs},
           {"batch_size", model.train.batch_size},
           {"learning_rate", model.train.learning_rate},
           {"l2", model.train.l2}};
    m["early_stop"] = model.train.early_stop_train_accuracy ? json(*model.train.early_stop_train_accuracy) : json();
    return json{{"schema_version", kSchemaVersion},
                {"experiment", experiment},
                {"dataset", d},
                {"model", m},
                {"strategies", effective_strategies()},
                {"corruption", {{"rate", corruption_rate}}},
                {"bootstrap_size", bootstrap_size},
                {"stream_length", stream_length},
                {"seeds", seeds},
                {"tau", tau},
                {"train_fraction", train_fraction},
                {"k_values", k_values},
                {"q2_queries", q2_queries},
                {"backends", q2_backends},
                {"output_dir", output_dir.string()}};
}

void ExperimentConfig::validate() const {
    static const std::set<std::string> kinds{"q1", "q2", "q3", "custom"};
    if (!kinds.count(experiment)) throw ConfigError("unknown experiment '" + experiment + "'");
    if (!dataset.manifest && dataset.synthetic.empty()) throw ConfigError("config names no dataset");
    if (!dataset.synthetic.empty()) data::parse_synthetic_kind(dataset.synthetic);
    if (seeds.empty()) throw ConfigError("seeds must be non-empty");
    if (bootstrap_size < 1) throw ConfigError("bootstrap_size must be positive");
    if (stream_length < 0) throw ConfigError("stream_length must be nonnegative");
    if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in [0, 1]");
    if (!(corruption_rate >= 0.0 && corruption_rate < 1.0)) throw ConfigError("corruption rate must lie in [0, 1)");
    if (experiment == "custom" && strategies.empty()) throw ConfigError("custom experiments must list strategies");
    for (const auto& s : effective_strategies()) cleaning::Strategy::parse(s, tau);
    for (const auto& b : q2_backends) influence::parse_curvature_kind(b);
    for (int k : k_values)
        if (k < 1) throw ConfigError("k values must be positive");
    model.train.validate();
}

std::vector<std::string> ExperimentConfig::effective_strategies() const {
    if (!strategies.empty()) return strategies;
    if (experiment == "q1") return {"cincer+top-fisher", "drop-ce", "no-ce"};
    if (experiment == "q3") return {"cincer+top-fisher", "cincer+identity", "nn"};
    return {};
}

data::ExampleSet load_dataset(const DatasetRef& ref) {
    if (!ref.synthetic.empty())
        return data::make_synthetic(data::parse_synthetic_kind(ref.synthetic), ref.synthetic_n, ref.synthetic_noise,
                                    ref.synthetic_seed);
    if (!ref.manifest) throw ConfigError("dataset reference is empty");
    return data::load_manifest(data::DatasetManifest::load(*ref.manifest), false);
}

RunData prepare_run(const data::ExampleSet& raw, const ExperimentConfig& cfg, std::uint64_t seed) {
    auto [train, test] = data::split(raw, cfg.train_fraction, derive_seed(seed, {0x5b1u}));
    data::standardize(train, test);
    const auto needed = static_cast<std::size_t>(cfg.bootstrap_size) + static_cast<std::size_t>(cfg.stream_length);
    if (needed > train.size())
        throw ConfigError("bootstrap_size + stream_length = " + std::to_string(needed) +
                          " exceeds the training split of " + std::to_string(train.size()));
    train = data::corrupt(train, {cfg.corruption_rate, derive_seed(seed, {0xc0u})});

    RunData run;
    const auto boot = static_cast<std::ptrdiff_t>(cfg.bootstrap_size);
    run.bootstrap = train.with_examples({train.examples.begin(), train.examples.begin() + boot});
    run.stream.assign(train.examples.begin() + boot,
                      train.examples.begin() + boot + static_cast<std::ptrdiff_t>(cfg.stream_length));
    run.test = std::move(test);
    return run;
}

nnet::ArchitectureSpec make_arch(const ExperimentConfig& cfg, const data::ExampleSet& set, std::uint64_t seed) {
    if (cfg.model.kind == nnet::ModelKind::LinearSoftmax)
        return nnet::ArchitectureSpec::linear(set.feature_dim, set.num_classes, seed);
    return nnet::ArchitectureSpec::mlp(set.feature_dim, cfg.model.hidden_dims, set.num_classes, cfg.model.dropout,
                                       seed);
}

std::vector<MetricsRow> rows_from_trace(const cleaning::LoopTrace& trace, double initial_f1,
                                        const std::string& strategy, std::uint64_t seed) {
    std::vector<MetricsRow> rows;
    rows.reserve(trace.records.size() + 1);
    MetricsRow first;
    first.strategy = strategy;
    first.seed = seed;
    first.f1 = initial_f1;
    rows.push_back(first);
    for (const auto& r : trace.records) {
        MetricsRow row;
        row.iteration = r.iteration;
        row.strategy = strategy;
        row.seed = seed;
        row.f1 = r.f1.value_or(0.0);
        row.cleaned = r.cleaned();
        row.cleaned_suspicious = r.cleaned_suspicious;
        row.cleaned_ce = r.cleaned_ce;
        row.queries = r.queries;
        row.useless_queries = r.useless_queries;
        rows.push_back(row);
    }
    return rows;
}

MetricsTable run_strategies(const ExperimentConfig& cfg, const std::vector<std::string>& strategies) {
    cfg.validate();
    MetricsTable table;
    table.experiment = cfg.experiment;
    const auto raw = load_dataset(cfg.dataset);
    for (auto seed : cfg.seeds) {
        const RunData run = prepare_run(raw, cfg, seed);
        const auto arch = make_arch(cfg, run.bootstrap, derive_seed(seed, {0xa7u}));
        // every strategy sees the same bootstrap, stream order and refit seeds
        for (const auto& name : strategies) {
            try {
                const auto strategy = cleaning::Strategy::parse(name, cfg.tau);
                cleaning::Session session(run.bootstrap, run.stream, {arch, cfg.model.train, strategy, seed}, run.test);
                const double f1_0 = session.current_f1().value_or(0.0);
                cleaning::OracleAnnotator oracle;
                session.run(oracle);
                auto rows = rows_from_trace(session.trace(), f1_0, name, seed);
                table.rows.insert(table.rows.end(), rows.begin(), rows.end());
            } catch (const Error& e) {
                table.failures.push_back(name + " seed " + std::to_string(seed) + ": " + e.what());
            }
        }
    }
    return table;
}

MetricsTable run_q1(const ExperimentConfig& cfg) {
    auto c = cfg;
    c.experiment = "q1";
    return run_strategies(c, c.effective_strategies());
}

MetricsTable run_q3(const ExperimentConfig& cfg) {
    auto c = cfg;
    c.experiment = "q3";
    return run_strategies(c, c.effective_strategies());
}

std::optional<double> PrecisionTable::mean(const std::string& backend, int k) const {
    double sum = 0.0;
    int n = 0;
    for (const auto& r : rows)
        if (r.backend == backend && r.k == k && r.precision) {
            sum += *r.precision;
            ++n;
        }
    if (n == 0) return std::nullopt;
    return sum / n;
}

PrecisionTable run_q2(const ExperimentConfig& cfg) {
    cfg.validate();
    PrecisionTable table;
    const auto raw = load_dataset(cfg.dataset);
    std::set<std::string> noticed;
    for (auto seed : cfg.seeds) {
        const RunData run = prepare_run(raw, cfg, seed);
        const auto arch = make_arch(cfg, run.bootstrap, derive_seed(seed, {0xa7u}));
        nnet::TrainConfig train = cfg.model.train;
        train.seed = derive_seed(seed, {0xf17u, 0u});
        const auto params = nnet::fit(run.bootstrap.view(), arch, train);
        const bool has_noise = run.bootstrap.count_corrupted() > 0;
        const auto n_queries = std::min<std::size_t>(static_cast<std::size_t>(cfg.q2_queries), run.stream.size());

        for (const auto& backend_name : cfg.q2_backends) {
            auto backend = influence::CurvatureBackend::make(influence::parse_curvature_kind(backend_name));
            backend.seed = derive_seed(seed, {0x115au});
            auto emit_null = [&](const std::string& reason) {
                for (int k : cfg.k_values) table.rows.push_back({backend_name, k, seed, std::nullopt, reason});
            };
            if (!has_noise) {
                emit_null("no corrupted examples in the bootstrap set");
                continue;
            }
            if (backend.kind == influence::CurvatureKind::FullFisher &&
                params.size() > backend.max_dense_parameters) {
                const auto msg = "full-fisher skipped: " + std::to_string(params.size()) +
                                 " parameters exceed the cap of " + std::to_string(backend.max_dense_parameters);
                if (noticed.insert(msg).second) table.notices.push_back(msg);
                emit_null(msg);
                continue;
            }
            try {
                const auto inverse = influence::InverseCurvature::prepare(backend, params, run.bootstrap.view());
                std::map<int, double> hits;
                std::map<int, int> counted;
                for (std::size_t q = 0; q < n_queries; ++q) {
                    const auto& z = run.stream[q];
                    const int pred = nnet::predict(params, z.x);
                    auto candidates = influence::filter_candidates(run.bootstrap.view(), z, pred, {true, {}});
                    if (candidates.empty()) candidates = run.bootstrap.examples;
                    const auto scores = influence::score_counterexamples(params, z, candidates, inverse);
                    std::map<int, bool> corrupted;
                    for (const auto& e : candidates) corrupted[e.id] = e.corrupted();
                    for (int k : cfg.k_values) {
                        const auto top = std::min<std::size_t>(static_cast<std::size_t>(k), scores.size());
                        int bad = 0;
                        for (std::size_t i = 0; i < top; ++i) bad += corrupted[scores[i].candidate_id];
                        hits[k] += static_cast<double>(bad) / static_cast<double>(top);
                        ++counted[k];
                    }
                }
                for (int k : cfg.k_values) {
                    if (counted[k] == 0) table.rows.push_back({backend_name, k, seed, std::nullopt, "no queries"});
                    else table.rows.push_back({backend_name, k, seed, hits[k] / counted[k], ""});
                }
            } catch (const Error& e) {
                table.notices.push_back(backend_name + " seed " + std::to_string(seed) + ": " + e.what());
                emit_null(e.what());
            }
        }
    }
    return table;
}

Stat mean_and_se(const std::vector<double>& values) {
    Stat s;
    if (values.empty()) return s;
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
        s.se = sd / std::sqrt(static_cast<double>(values.size()));
    }
    return s;
}

AggregateTable aggregate(const MetricsTable& table) {
    AggregateTable agg;
    agg.experiment = table.experiment;
    // strategy -> iteration -> rows
    std::map<std::string, std::map<int, std::vector<const MetricsRow*>>> groups;
    for (const auto& r : table.rows) groups[r.strategy][r.iteration].push_back(&r);
    for (const auto& [strategy, by_iter] : groups) {
        auto& points = agg.strategies[strategy];
        for (const auto& [iter, rows] : by_iter) {
            auto collect = [&rows](auto field) {
                std::vector<double> v;
                for (const auto* r : rows) v.push_back(static_cast<double>(field(*r)));
                return mean_and_se(v);
            };
            AggregatePoint p;
            p.iteration = iter;
            p.n = static_cast<int>(rows.size());
            p.f1 = collect([](const MetricsRow& r) { return r.f1; });
            p.cleaned = collect([](const MetricsRow& r) { return r.cleaned; });
            p.cleaned_ce = collect([](const MetricsRow& r) { return r.cleaned_ce; });
            p.queries = collect([](const MetricsRow& r) { return r.queries; });
            p.useless_queries = collect([](const MetricsRow& r) { return r.useless_queries; });
            points.push_back(p);
        }
    }
    return agg;
}

json AggregateTable::to_json() const {
    json strategies_json = json::object();
    for (const auto& [name, points] : strategies) {
        json arr = json::array();
        for (const auto& p : points)
            arr.push_back({{"iter", p.iteration},
                           {"n", p.n},
                           {"f1", stat_json(p.f1)},
                           {"cleaned", stat_json(p.cleaned)},
                           {"cleaned_ce", stat_json(p.cleaned_ce)},
                           {"queries", stat_json(p.queries)},
                           {"useless_queries", stat_json(p.useless_queries)}});
        strategies_json[name] = std::move(arr);
    }
    return json{{"schema_version", schema_version}, {"experiment", experiment}, {"strategies", strategies_json}};
}

AggregateTable AggregateTable::from_json(const json& j) {
    AggregateTable t;
    try {
        t.schema_version = j.at("schema_version").get<int>();
        if (t.schema_version != kSchemaVersion)
            throw ParseError("unsupported aggregate schema version " + std::to_string(t.schema_version), 0, "");
        t.experiment = j.at("experiment").get<std::string>();
        for (const auto& [name, arr] : j.at("strategies").items()) {
            auto& points = t.strategies[name];
            for (const auto& e : arr) {
                AggregatePoint p;
                p.iteration = e.at("iter").get<int>();
                p.n = e.at("n").get<int>();
                p.f1 = stat_from(e.at("f1"));
                p.cleaned = stat_from(e.at("cleaned"));
                p.cleaned_ce = stat_from(e.at("cleaned_ce"));
                p.queries = stat_from(e.at("queries"));
                p.useless_queries = stat_from(e.at("useless_queries"));
                points.push_back(p);
            }
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("aggregate JSON: ") + e.what(), 0, "");
    }
    return t;
}

std::string to_csv(const MetricsTable& table) {
    std::string out = "iter,strategy,seed,f1,cleaned,cleaned_ce,queries,useless_queries\n";
    for (const auto& r : table.rows) {
        out += std::to_string(r.iteration) + ',' + r.strategy + ',' + std::to_string(r.seed) + ',' +
               format_double(r.f1) + ',' + std::to_string(r.cleaned) + ',' + std::to_string(r.cleaned_ce) + ',' +
               std::to_string(r.queries) + ',' + std::to_string(r.useless_queries) + '\n';
    }
    return out;
}

std::string to_csv(const PrecisionTable& table) {
    std::string out = "backend,k,seed,precision\n";
    for (const auto& r : table.rows)
        out += r.backend + ',' + std::to_string(r.k) + ',' + std::to_string(r.seed) + ',' +
               (r.precision ? format_double(*r.precision) : std::string()) + '\n';
    return out;
}

json to_json(const PrecisionTable& table, const ExperimentConfig& cfg) {
    json backends = json::object();
    std::vector<std::string> names = cfg.q2_backends;
    for (const auto& name : names) {
        json per_k = json::object();
        for (int k : cfg.k_values) {
            std::vector<double> vals;
            std::string reason;
            for (const auto& r : table.rows) {
                if (r.backend != name || r.k != k) continue;
                if (r.precision) vals.push_back(*r.precision);
                else if (reason.empty()) reason = r.reason;
            }
            if (vals.empty()) {
                per_k["pr@" + std::to_string(k)] = {{"mean", nullptr}, {"se", nullptr}, {"reason", reason}};
            } else {
                auto s = mean_and_se(vals);
                per_k["pr@" + std::to_string(k)] = {{"mean", s.mean}, {"se", s.se}, {"n", vals.size()}};
            }
        }
        backends[name] = per_k;
    }
    return json{{"schema_version", kSchemaVersion},
                {"experiment", "q2"},
                {"backends", backends},
                {"notices", table.notices}};
}

void report(const MetricsTable& table, const fs::path& dir) {
    fs::create_directories(dir);
    write_file(dir / "metrics.csv", to_csv(table));
    json agg = aggregate(table).to_json();
    agg["failures"] = table.failures;
    write_file(dir / "aggregate.json", agg.dump(2) + "\n");
}

void report(const PrecisionTable& table, const ExperimentConfig& cfg, const fs::path& dir) {
    fs::create_directories(dir);
    write_file(dir / "precision.csv", to_csv(table));
    write_file(dir / "precision.json", to_json(table, cfg).dump(2) + "\n");
}

void run_experiment(const ExperimentConfig& cfg) {
    if (cfg.experiment == "q2") {
        report(run_q2(cfg), cfg, cfg.output_dir);
        return;
    }
    report(run_strategies(cfg, cfg.effective_strategies()), cfg.output_dir);
}

}  // namespace labelclean::evalx
