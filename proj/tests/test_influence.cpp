#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "labelclean/errors.hpp"
#include "labelclean/influence.hpp"
#include "support/oracles.hpp"

using namespace labelclean;
using namespace labelclean::influence;
using nnet::ArchitectureSpec;

namespace {

Example at(Eigen::VectorXd x, int y, int id) {
    Example e;
    e.id = id;
    e.x = std::move(x);
    e.label = e.hidden.true_label = y;
    return e;
}

nnet::TrainConfig convex_cfg() {
    auto cfg = nnet::TrainConfig::defaults_for(nnet::ModelKind::LinearSoftmax);
    cfg.optimizer = nnet::Optimizer::Newton;
    cfg.l2 = 0.01;
    cfg.early_stop_train_accuracy.reset();
    return cfg;
}

double rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return (a - b).norm() / b.norm(); }

}  // namespace

TEST_CASE("backend names and validation") {
    for (auto k : {CurvatureKind::Identity, CurvatureKind::DiagonalFisher, CurvatureKind::FullFisher,
                   CurvatureKind::TopFisher, CurvatureKind::LissaHessian, CurvatureKind::ExactHessian})
        CHECK(parse_curvature_kind(to_string(k)) == k);
    CHECK(parse_curvature_kind("practical-fisher") == CurvatureKind::Identity);
    CHECK_THROWS_AS(parse_curvature_kind("kfac"), ConfigError);

    auto b = CurvatureBackend::make(CurvatureKind::TopFisher);
    CHECK(b.scope == Scope::TopLayer);
    b.scope = Scope::AllParameters;
    CHECK_THROWS_AS(b.validate(), ConfigError);
    auto full = CurvatureBackend::make(CurvatureKind::FullFisher);
    full.damping = 0.0;
    CHECK_THROWS_AS(full.validate(), ConfigError);
}

TEST_CASE("Fisher matrix structure") {
    std::mt19937_64 rng(1);
    const auto set = oracles::random_set(30, 3, 2, rng);
    const auto params = oracles::random_params(ArchitectureSpec::linear(3, 2), rng);

    const std::vector<Example> one{set.examples[0]};
    const Eigen::MatrixXd F1 = fisher_matrix(params, one, Scope::AllParameters);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(F1);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-10);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(F1);
    lu.setThreshold(1e-10);
    CHECK(lu.rank() <= (2 - 1) * (3 + 1));

    std::vector<Example> doubled = set.examples;
    doubled.insert(doubled.end(), set.examples.begin(), set.examples.end());
    CHECK((fisher_matrix(params, doubled, Scope::AllParameters) - fisher_matrix(params, set.view(), Scope::AllParameters))
              .cwiseAbs()
              .maxCoeff() < 1e-14);

    const Eigen::MatrixXd F = fisher_matrix(params, set.view(), Scope::AllParameters);
    CHECK((F.diagonal() - fisher_diagonal(params, set.view(), Scope::AllParameters)).cwiseAbs().maxCoeff() < 1e-14);

    const auto mlp = oracles::random_params(ArchitectureSpec::mlp(3, {4}, 3), rng);
    const Eigen::MatrixXd Ft = fisher_matrix(mlp, set.view(), Scope::TopLayer);
    CHECK(Ft.rows() == 4 * 3 + 3);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig2(Ft);
    CHECK(eig2.eigenvalues().minCoeff() >= -1e-9);

    const auto big = oracles::random_params(ArchitectureSpec::mlp(3, {80, 80}, 2), rng);
    CHECK_THROWS_AS(fisher_matrix(big, set.view(), Scope::AllParameters), SizeError);
    CHECK_NOTHROW(fisher_matrix(big, set.view(), Scope::TopLayer));
}

TEST_CASE("Fisher equals the Hessian for the linear softmax model") {
    std::mt19937_64 rng(2);
    const auto set = oracles::random_set(50, 5, 3, rng);
    const auto params = oracles::random_params(ArchitectureSpec::linear(5, 3), rng);
    const Eigen::MatrixXd F = fisher_matrix(params, set.view(), Scope::AllParameters);
    const Eigen::MatrixXd H = oracles::linear_softmax_hessian(params, set.examples);
    CHECK((F - H).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((hessian_matrix(params, set.view(), Scope::AllParameters) - H).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("inverse curvature products") {
    std::mt19937_64 rng(3);
    const auto set = oracles::random_set(40, 3, 2, rng);
    const auto params = oracles::random_params(ArchitectureSpec::linear(3, 2), rng);
    const Eigen::Index n = params.values.size();
    const Eigen::VectorXd v = Eigen::VectorXd::Random(n);

    auto identity = CurvatureBackend::make(CurvatureKind::Identity);
    CHECK(inverse_curvature_vector_product(identity, params, set.view(), v) == v);

    // near-zero damping against a dense solve of the closed-form Hessian plus a tiny ridge
    auto full = CurvatureBackend::make(CurvatureKind::FullFisher);
    full.damping = 1e-6;
    Eigen::MatrixXd H = oracles::linear_softmax_hessian(params, set.examples);
    H.diagonal().array() += 1e-6;
    const Eigen::VectorXd expected = H.ldlt().solve(v);
    CHECK(rel_err(inverse_curvature_vector_product(full, params, set.view(), v), expected) < 1e-4);

    auto diag = CurvatureBackend::make(CurvatureKind::DiagonalFisher);
    const Eigen::VectorXd d = fisher_diagonal(params, set.view(), Scope::AllParameters);
    const Eigen::VectorXd expected_diag = v.array() / (d.array() + diag.damping);
    CHECK(rel_err(inverse_curvature_vector_product(diag, params, set.view(), v), expected_diag) < 1e-14);

    auto exact = CurvatureBackend::make(CurvatureKind::ExactHessian);
    Eigen::MatrixXd Hd = oracles::linear_softmax_hessian(params, set.examples);
    Hd.diagonal().array() += exact.damping;
    CHECK(rel_err(inverse_curvature_vector_product(exact, params, set.view(), v), Hd.ldlt().solve(v)) < 1e-10);
}

TEST_CASE("LISSA approaches the dense solve as iterations grow") {
    std::mt19937_64 rng(4);
    const auto set = oracles::random_set(60, 2, 2, rng, 0.5);
    auto cfg = convex_cfg();
    const auto params = nnet::fit(set.view(), ArchitectureSpec::linear(2, 2), cfg);
    const Eigen::Index n = params.values.size();
    const Eigen::VectorXd v = Eigen::VectorXd::Random(n);

    auto lissa = CurvatureBackend::make(CurvatureKind::LissaHessian);
    lissa.damping = 0.05;
    Eigen::MatrixXd H = oracles::linear_softmax_hessian(params, set.examples);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(H);
    REQUIRE(eig.eigenvalues().maxCoeff() + lissa.damping < 1.0);  // the recursion contracts
    H.diagonal().array() += lissa.damping;
    const Eigen::VectorXd expected = H.ldlt().solve(v);

    lissa.lissa_iterations = 10;
    const double err10 = rel_err(inverse_curvature_vector_product(lissa, params, set.view(), v), expected);
    lissa.lissa_iterations = 200;
    const double err200 = rel_err(inverse_curvature_vector_product(lissa, params, set.view(), v), expected);
    CHECK(err200 < 0.05);
    CHECK(err200 < err10);
}

TEST_CASE("LISSA divergence is retried once and then surfaced") {
    std::mt19937_64 rng(5);
    auto set = oracles::random_set(20, 2, 2, rng);
    for (auto& e : set.examples) e.x *= 1e3;  // curvature far above 1
    const auto params = oracles::random_params(ArchitectureSpec::linear(2, 2), rng, 0.0);
    auto lissa = CurvatureBackend::make(CurvatureKind::LissaHessian);
    lissa.lissa_iterations = 400;
    try {
        inverse_curvature_vector_product(lissa, params, set.view(), Eigen::VectorXd::Ones(params.values.size()));
        FAIL("expected divergence");
    } catch (const LissaDiverged& e) {
        CHECK(e.iteration() >= 1);
    }
}

TEST_CASE("scores: identity reduces to a dot product, caching, ties") {
    std::mt19937_64 rng(6);
    const auto set = oracles::random_set(25, 3, 3, rng);
    const auto params = oracles::random_params(ArchitectureSpec::mlp(3, {5}, 3, 0.0), rng);
    const Example z = at(oracles::random_input(3, rng), 1, 999);

    auto identity = CurvatureBackend::make(CurvatureKind::Identity);
    const auto scores = score_counterexamples(params, z, set.view(), identity, set.view());
    REQUIRE(scores.size() == set.size());
    const Eigen::VectorXd gt = nnet::loss_and_gradient(params, z).gradient;
    for (const auto& s : scores) {
        const auto& e = set.examples[static_cast<std::size_t>(s.candidate_id)];
        CHECK(s.score == -gt.dot(nnet::loss_and_gradient(params, e).gradient));
    }
    for (std::size_t i = 1; i < scores.size(); ++i) CHECK(scores[i - 1].score >= scores[i].score);

    auto top = CurvatureBackend::make(CurvatureKind::TopFisher);
    const auto inv = InverseCurvature::prepare(top, params, set.view());
    const auto cached = score_counterexamples(params, z, set.view(), inv);
    CHECK(inv.applications() == 1);
    const Eigen::VectorXd gz = scoped_gradient(params, z.x, z.label, Scope::TopLayer);
    for (const auto& s : cached) {
        const auto& e = set.examples[static_cast<std::size_t>(s.candidate_id)];
        const Eigen::VectorXd gk = scoped_gradient(params, e.x, e.label, Scope::TopLayer);
        const double direct = -gz.dot(inverse_curvature_vector_product(top, params, set.view(), gk));
        CHECK(std::abs(direct - s.score) <= 1e-12 * std::max(1.0, std::abs(direct)));
    }

    std::vector<Example> twins{set.examples[3], set.examples[3]};
    twins[0].id = 7;
    twins[1].id = 2;
    const auto tied = score_counterexamples(params, z, twins, inv);
    CHECK(tied[0].candidate_id == 2);
    CHECK(tied[1].candidate_id == 7);

    CHECK_THROWS_AS(score_counterexamples(params, z, std::vector<Example>{}, inv), NoCandidates);
}

TEST_CASE("probability-gradient scores are P times loss-gradient scores") {
    std::mt19937_64 rng(7);
    const auto set = oracles::random_set(30, 4, 2, rng);
    const auto params = oracles::random_params(ArchitectureSpec::mlp(4, {6, 6}, 2, 0.0), rng);
    for (auto kind : {CurvatureKind::TopFisher, CurvatureKind::DiagonalFisher, CurvatureKind::Identity}) {
        const auto inv = InverseCurvature::prepare(CurvatureBackend::make(kind), params, set.view());
        const Example z = at(oracles::random_input(4, rng), static_cast<int>(rng() % 2), 500);
        const double P = nnet::predict_proba(params, z.x).probs(z.label);
        const auto koh = score_counterexamples(params, z, set.view(), inv);
        const auto prob = score_counterexamples_prob_form(params, z, set.view(), inv);
        REQUIRE(koh.size() == prob.size());
        for (std::size_t i = 0; i < koh.size(); ++i) {
            CHECK(koh[i].candidate_id == prob[i].candidate_id);
            CHECK(std::abs(prob[i].score - P * koh[i].score) <= 1e-8 * std::abs(P * koh[i].score) + 1e-300);
        }
    }
}

TEST_CASE("scaling the suspicious gradient keeps the ranking") {
    std::mt19937_64 rng(8);
    const auto set = oracles::random_set(20, 2, 2, rng);
    const auto params = oracles::random_params(ArchitectureSpec::linear(2, 2), rng);
    const Example z = at(oracles::random_input(2, rng), 0, 99);
    const auto inv = InverseCurvature::prepare(CurvatureBackend::make(CurvatureKind::FullFisher), params, set.view());
    const Eigen::VectorXd u = inv.apply(nnet::loss_and_gradient(params, z).gradient);
    std::vector<std::pair<double, int>> a, b;
    for (const auto& e : set.examples) {
        const double s = -u.dot(nnet::loss_and_gradient(params, e).gradient);
        a.emplace_back(-s, e.id);
        b.emplace_back(-3.7 * s, e.id);
    }
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].second == b[i].second);
    const auto scores = score_counterexamples(params, z, set.view(), inv);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(scores[i].candidate_id == a[i].second);
}

TEST_CASE("candidate filtering") {
    std::vector<Example> data;
    for (int i = 0; i < 6; ++i) data.push_back(at(Eigen::VectorXd::Constant(1, i), i % 2, i));
    const Example z = at(Eigen::VectorXd::Constant(1, 3.9), 0, 100);

    const auto pertinent = filter_candidates(data, z, 1, {true, {}});
    REQUIRE(pertinent.size() == 3);
    CHECK(pertinent[0].id == 1);
    CHECK(pertinent[1].id == 3);
    CHECK(pertinent[2].id == 5);

    CHECK(filter_candidates(data, z, 2, {true, {}}).empty());

    const auto nearest = filter_candidates(data, z, 1, {true, 1});
    REQUIRE(nearest.size() == 1);
    CHECK(nearest[0].id == 3);

    const auto two = filter_candidates(data, z, 0, {true, 2});
    REQUIRE(two.size() == 2);
    CHECK(two[0].id == 2);  // dataset order, not distance order
    CHECK(two[1].id == 4);

    CHECK(filter_candidates(data, z, 1, {true, 10}).size() == 3);
    CHECK(filter_candidates(data, z, 1, {false, {}}).size() == 6);
}

TEST_CASE("leave-one-out oracle") {
    // the same point twice: removing either copy is the same retraining problem
    std::vector<Example> data{at(Eigen::Vector2d(1.0, 0.5), 1, 0), at(Eigen::Vector2d(1.0, 0.5), 1, 1),
                              at(Eigen::Vector2d(-1.0, 0.2), 0, 2), at(Eigen::Vector2d(-0.5, -1.0), 0, 3),
                              at(Eigen::Vector2d(0.3, 1.2), 1, 4), at(Eigen::Vector2d(-1.4, 0.1), 0, 5)};
    const auto arch = ArchitectureSpec::linear(2, 2, 1);
    const Example z = at(Eigen::Vector2d(0.9, 0.6), 0, 50);
    const auto deltas = brute_force_contrastive(data, z, arch, convex_cfg());
    std::map<int, double> by_id;
    for (const auto& d : deltas) by_id[d.id] = d.delta;
    CHECK(by_id[0] == by_id[1]);

    // a same-label point sitting on x_t supports the suspicious label: removing it lowers P
    std::vector<Example> with_support = data;
    with_support.push_back(at(z.x, 0, 6));
    const auto support = brute_force_contrastive(with_support, z, arch, convex_cfg());
    for (const auto& d : support)
        if (d.id == 6) CHECK(d.delta < 0.0);
    CHECK(support.front().id != 6);

    std::vector<Example> many;
    for (int i = 0; i < 201; ++i) many.push_back(at(Eigen::Vector2d(i, 0), i % 2, i));
    CHECK_THROWS_AS(brute_force_contrastive(many, z, arch, convex_cfg()), SizeError);
}

TEST_CASE("leave-one-out oracle matches the independent reference and exact-hessian picks its top-1") {
    std::ifstream in(std::filesystem::path(LABELCLEAN_TEST_DATA) / "loo_golden.json");
    REQUIRE(in);
    const auto golden = nlohmann::json::parse(in);
    auto cfg = convex_cfg();
    cfg.l2 = golden.at("l2").get<double>();
    int agree = 0, total = 0;
    for (const auto& prob : golden.at("problems")) {
        std::vector<Example> data;
        const auto xs = prob.at("x").get<std::vector<std::vector<double>>>();
        const auto ys = prob.at("y").get<std::vector<int>>();
        for (std::size_t i = 0; i < xs.size(); ++i)
            data.push_back(at(Eigen::Vector2d(xs[i][0], xs[i][1]), ys[i], static_cast<int>(i)));
        const auto xt = prob.at("x_t").get<std::vector<double>>();
        const Example z = at(Eigen::Vector2d(xt[0], xt[1]), prob.at("y_t").get<int>(), 100);

        const auto expected = prob.at("deltas").get<std::vector<double>>();
        const auto deltas = brute_force_contrastive(data, z, ArchitectureSpec::linear(2, 2), cfg);
        for (const auto& d : deltas) CHECK(d.delta == doctest::Approx(expected[static_cast<std::size_t>(d.id)]).epsilon(1e-6));
        const auto ranking = prob.at("ranking").get<std::vector<int>>();
        CHECK(deltas.front().id == ranking.front());

        const auto params = nnet::fit(data, ArchitectureSpec::linear(2, 2), cfg);
        auto exact = CurvatureBackend::make(CurvatureKind::ExactHessian);
        exact.damping = cfg.l2;
        const auto scores = score_counterexamples(params, z, data, exact, data);
        agree += scores.front().candidate_id == ranking.front();
        ++total;
    }
    CHECK(agree == total);
}
