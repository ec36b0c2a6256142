#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "labelclean/errors.hpp"
#include "labelclean/evalx.hpp"
#include "support/oracles.hpp"

using namespace labelclean;
using namespace labelclean::evalx;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ExperimentConfig small_config(const std::string& experiment) {
    auto cfg = ExperimentConfig::from_json(json{
        {"experiment", experiment},
        {"dataset", {{"synthetic", "moons"}, {"n", 200}, {"noise", 0.2}, {"seed", 3}}},
        {"model", {{"kind", "linear"}}},
        {"corruption", 0.2},
        {"bootstrap_size", 30},
        {"stream_length", 30},
        {"seeds", {0, 1}},
        {"k_values", {5, 10}},
        {"q2_queries", 20},
        {"backends", {"identity", "top-fisher"}},
    });
    cfg.validate();
    return cfg;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

TEST_CASE("config parsing and validation") {
    const auto cfg = small_config("q1");
    CHECK(cfg.dataset.synthetic == "moons");
    CHECK(cfg.dataset.synthetic_n == 200);
    CHECK(cfg.model.kind == nnet::ModelKind::LinearSoftmax);
    CHECK(cfg.corruption_rate == 0.2);
    CHECK(cfg.effective_strategies() == std::vector<std::string>{"cincer+top-fisher", "drop-ce", "no-ce"});
    CHECK(small_config("q3").effective_strategies() ==
          std::vector<std::string>{"cincer+top-fisher", "cincer+identity", "nn"});

    const auto round = ExperimentConfig::from_json(cfg.to_json());
    CHECK(round.to_json() == cfg.to_json());

    auto bad = cfg;
    bad.experiment = "q9";
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.tau = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.seeds.clear();
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.strategies = {"cincer+unknown"};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.experiment = "custom";
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    CHECK_THROWS_AS(ExperimentConfig::from_json(json{{"experiment", "q1"}}), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json(json{{"dataset", "moons"}, {"tau", "high"}}), ConfigError);
}

TEST_CASE("missing config file names the path") {
    const fs::path p = fs::temp_directory_path() / "labelclean_no_such_config.json";
    try {
        ExperimentConfig::load(p);
        FAIL("expected a config error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find(p.string()) != std::string::npos);
    }
}

TEST_CASE("manifest paths resolve against the config directory") {
    const fs::path dir = fs::temp_directory_path() / "labelclean_cfgdir";
    fs::create_directories(dir);
    std::ofstream(dir / "exp.json") << R"({"experiment": "q1", "dataset": "sub/set.json"})";
    const auto cfg = ExperimentConfig::load(dir / "exp.json");
    REQUIRE(cfg.dataset.manifest);
    CHECK(fs::weakly_canonical(*cfg.dataset.manifest) == fs::weakly_canonical(dir / "sub" / "set.json"));

    const auto breast = ExperimentConfig::load(fs::path(LABELCLEAN_REPO_DATA) / ".." / "configs" / "q1_breast.json");
    CHECK(load_dataset(breast.dataset).size() == 569);
}

TEST_CASE("prepare_run sizes and isolation") {
    auto cfg = small_config("q1");
    const auto raw = load_dataset(cfg.dataset);
    const auto run = prepare_run(raw, cfg, 0);
    CHECK(run.bootstrap.size() == 30);
    CHECK(run.stream.size() == 30);
    CHECK(run.test.size() == 40);
    CHECK(run.test.count_corrupted() == 0);

    std::set<int> ids;
    for (const auto& e : run.bootstrap.examples) ids.insert(e.id);
    for (const auto& e : run.stream) CHECK(ids.insert(e.id).second);
    for (const auto& e : run.test.examples) CHECK(ids.insert(e.id).second);

    const auto again = prepare_run(raw, cfg, 0);
    for (std::size_t i = 0; i < run.stream.size(); ++i) {
        CHECK(again.stream[i].id == run.stream[i].id);
        CHECK(again.stream[i].label == run.stream[i].label);
    }

    cfg.stream_length = 200;
    CHECK_THROWS_AS(prepare_run(raw, cfg, 0), ConfigError);
}

TEST_CASE("macro F1 closed forms") {
    const std::vector<int> truth{0, 1, 0, 1, 0, 1};
    CHECK(f1_macro(truth, truth, 2) == 1.0);
    const std::vector<int> constant(6, 0);
    CHECK(f1_macro(constant, truth, 2) == doctest::Approx(1.0 / 3.0));

    std::mt19937_64 rng(17);
    std::uniform_int_distribution<int> cls(0, 2);
    for (int rep = 0; rep < 10; ++rep) {
        std::vector<int> p(50), t(50);
        for (int i = 0; i < 50; ++i) {
            p[static_cast<std::size_t>(i)] = cls(rng);
            t[static_cast<std::size_t>(i)] = cls(rng);
        }
        CHECK(f1_macro(p, t, 3) == doctest::Approx(oracles::confusion_f1(p, t, 3)).epsilon(1e-12));
    }
}

TEST_CASE("mean and standard error") {
    const auto one = mean_and_se({4.0});
    CHECK(one.mean == 4.0);
    CHECK(one.se == 0.0);
    // sample sd of {1,2,3,4} is sqrt(5/3)
    const auto s = mean_and_se({1.0, 2.0, 3.0, 4.0});
    CHECK(s.mean == 2.5);
    CHECK(s.se == doctest::Approx(std::sqrt(5.0 / 3.0) / 2.0));
}

TEST_CASE("aggregation, CSV layout and JSON round trip") {
    MetricsTable t;
    t.experiment = "q1";
    t.rows = {{0, "a", 0, 0.5, 0, 0, 0, 0, 0}, {0, "a", 1, 0.7, 0, 0, 0, 0, 0},
              {1, "a", 0, 0.6, 1, 1, 0, 1, 0}, {1, "a", 1, 0.8, 3, 2, 1, 1, 1}};
    const auto agg = aggregate(t);
    REQUIRE(agg.strategies.at("a").size() == 2);
    const auto& p1 = agg.strategies.at("a")[1];
    CHECK(p1.n == 2);
    CHECK(p1.f1.mean == doctest::Approx(0.7));
    CHECK(p1.cleaned.mean == 2.0);
    CHECK(p1.cleaned.se == doctest::Approx(1.0));
    CHECK(AggregateTable::from_json(agg.to_json()) == agg);

    auto wrong = agg.to_json();
    wrong["schema_version"] = 99;
    CHECK_THROWS_AS(AggregateTable::from_json(wrong), ParseError);

    const auto csv = to_csv(t);
    CHECK(csv.substr(0, csv.find('\n')) == "iter,strategy,seed,f1,cleaned,cleaned_ce,queries,useless_queries");
    CHECK(csv.find("1,a,1,0.800000,3,1,1,1\n") != std::string::npos);
}

TEST_CASE("iteration-zero rows and trace bookkeeping") {
    const auto cfg = small_config("q1");
    const auto table = run_q1(cfg);
    CHECK(table.failures.empty());
    const std::size_t per_run = static_cast<std::size_t>(cfg.stream_length) + 1;
    CHECK(table.rows.size() == per_run * 3 * cfg.seeds.size());
    for (const auto& r : table.rows) {
        CHECK(r.f1 >= 0.0);
        CHECK(r.f1 <= 1.0);
        CHECK(r.queries <= r.iteration);
        CHECK(r.cleaned == r.cleaned_suspicious + r.cleaned_ce);
        if (r.strategy == "no-ce") CHECK(r.cleaned_ce == 0);
    }
    // every strategy starts from the same bootstrap model
    std::map<std::uint64_t, std::set<double>> initial;
    for (const auto& r : table.rows)
        if (r.iteration == 0) initial[r.seed].insert(r.f1);
    for (const auto& [seed, values] : initial) CHECK(values.size() == 1);
}

TEST_CASE("precision@k on a noiseless bootstrap is null") {
    auto cfg = small_config("q2");
    cfg.corruption_rate = 0.0;
    const auto table = run_q2(cfg);
    REQUIRE_FALSE(table.rows.empty());
    for (const auto& r : table.rows) {
        CHECK_FALSE(r.precision.has_value());
        CHECK_FALSE(r.reason.empty());
    }
    const auto j = to_json(table, cfg);
    CHECK(j.dump().find("null") != std::string::npos);
}

TEST_CASE("precision@k values are proportions") {
    const auto cfg = small_config("q2");
    const auto table = run_q2(cfg);
    CHECK(table.rows.size() == 2 * 2 * cfg.seeds.size());
    for (const auto& r : table.rows) {
        REQUIRE(r.precision.has_value());
        CHECK(*r.precision >= 0.0);
        CHECK(*r.precision <= 1.0);
    }
    CHECK(table.mean("identity", 5).has_value());
    CHECK_FALSE(table.mean("full-fisher", 5).has_value());
    const auto csv = to_csv(table);
    CHECK(csv.substr(0, csv.find('\n')) == "backend,k,seed,precision");
}

TEST_CASE("reports are byte-identical across runs") {
    auto cfg = small_config("q3");
    const fs::path a = fs::temp_directory_path() / "labelclean_det_a";
    const fs::path b = fs::temp_directory_path() / "labelclean_det_b";
    fs::remove_all(a);
    fs::remove_all(b);
    cfg.output_dir = a;
    run_experiment(cfg);
    cfg.output_dir = b;
    run_experiment(cfg);
    CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
    CHECK(slurp(a / "aggregate.json") == slurp(b / "aggregate.json"));
    CHECK_FALSE(slurp(a / "metrics.csv").empty());
    const auto agg = AggregateTable::from_json(json::parse(slurp(a / "aggregate.json")));
    CHECK(agg.strategies.size() == 3);
}

TEST_CASE("separable gaussians are learned by the linear model") {
    auto cfg = ExperimentConfig::from_json(json{
        {"dataset", {{"synthetic", "two-gaussians"}, {"n", 400}, {"noise", 0.5}, {"seed", 1}}},
        {"model", {{"kind", "linear"}, {"early_stop", nullptr}, {"epochs", 300}, {"batch_size", 32}}},
        {"corruption", 0.0},
        {"bootstrap_size", 100},
        {"stream_length", 0},
    });
    const auto run = prepare_run(load_dataset(cfg.dataset), cfg, 0);
    auto train = cfg.model.train;
    train.seed = 5;
    const auto params = nnet::fit(run.bootstrap.view(), make_arch(cfg, run.bootstrap, 0), train);
    CHECK(f1_macro(params, run.test.examples) > 0.99);
}
