#include "labelclean/influence.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include "labelclean/errors.hpp"
#include "labelclean/random.hpp"

namespace labelclean::influence {

namespace {

Eigen::VectorXd embed(const ParameterVector& params, const Eigen::VectorXd& scoped, Scope scope) {
    if (scope == Scope::AllParameters) return scoped;
    Eigen::VectorXd full = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params.size()));
    const auto& seg = params.top_segment();
    full.segment(static_cast<Eigen::Index>(seg.offset), static_cast<Eigen::Index>(seg.length)) = scoped;
    return full;
}

void check_dense_size(std::size_t n, std::size_t cap, const char* what) {
    if (n > cap)
        throw SizeError(std::string(what) + " over " + std::to_string(n) + " parameters exceeds the cap of " +
                        std::to_string(cap));
}

}  // namespace

std::string to_string(CurvatureKind kind) {
    switch (kind) {
        case CurvatureKind::Identity: return "identity";
        case CurvatureKind::DiagonalFisher: return "diagonal-fisher";
        case CurvatureKind::FullFisher: return "full-fisher";
        case CurvatureKind::TopFisher: return "top-fisher";
        case CurvatureKind::LissaHessian: return "lissa-hessian";
        case CurvatureKind::ExactHessian: return "exact-hessian";
    }
    return "unknown";
}

CurvatureKind parse_curvature_kind(const std::string& name) {
    for (auto k : {CurvatureKind::Identity, CurvatureKind::DiagonalFisher, CurvatureKind::FullFisher,
                   CurvatureKind::TopFisher, CurvatureKind::LissaHessian, CurvatureKind::ExactHessian})
        if (to_string(k) == name) return k;
    if (name == "practical-fisher") return CurvatureKind::Identity;
    throw ConfigError("unknown curvature backend '" + name + "'");
}

CurvatureBackend CurvatureBackend::make(CurvatureKind kind) {
    CurvatureBackend b;
    b.kind = kind;
    b.scope = kind == CurvatureKind::TopFisher ? Scope::TopLayer : Scope::AllParameters;
    return b;
}

void CurvatureBackend::validate() const {
    if (kind == CurvatureKind::TopFisher && scope != Scope::TopLayer)
        throw ConfigError("top-fisher backend requires top-layer scope");
    if (damping < 0.0) throw ConfigError("damping must be nonnegative");
    const bool inverts = kind == CurvatureKind::DiagonalFisher || kind == CurvatureKind::FullFisher ||
                         kind == CurvatureKind::TopFisher || kind == CurvatureKind::ExactHessian;
    if (inverts && !(damping > 0.0)) throw ConfigError(to_string(kind) + " backend requires damping > 0");
    if (lissa_iterations < 1 || lissa_samples < 1 || lissa_batch_size < 1)
        throw ConfigError("LISSA iterations, samples and batch size must be positive");
    if (!(lissa_scale > 0.0)) throw ConfigError("LISSA scale must be positive");
}

std::size_t scope_size(const ParameterVector& params, Scope scope) {
    return scope == Scope::TopLayer ? params.top_segment().length : params.size();
}

Eigen::VectorXd restrict_to_scope(const ParameterVector& params, const Eigen::VectorXd& full, Scope scope) {
    if (scope == Scope::AllParameters) return full;
    const auto& seg = params.top_segment();
    return full.segment(static_cast<Eigen::Index>(seg.offset), static_cast<Eigen::Index>(seg.length));
}

Eigen::VectorXd scoped_gradient(const ParameterVector& params, const Eigen::VectorXd& x, int y, Scope scope) {
    return restrict_to_scope(params, nnet::loss_and_gradient(params, x, y).gradient, scope);
}

Eigen::MatrixXd fisher_matrix(const ParameterVector& params, std::span<const Example> dataset, Scope scope,
                              std::size_t max_parameters) {
    if (dataset.empty()) throw ConfigError("Fisher matrix of an empty dataset");
    const auto dim = scope_size(params, scope);
    if (scope == Scope::AllParameters) check_dense_size(dim, max_parameters, "full Fisher matrix");
    const int c = params.arch().num_classes;
    Eigen::MatrixXd fim = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
    for (const auto& e : dataset) {
        const Eigen::VectorXd pr = nnet::predict_proba(params, e.x).probs;
        for (int y = 0; y < c; ++y) {
            if (pr[y] == 0.0) continue;
            // grad log P(y|x) = -grad l((x, y)); the sign cancels in the outer product
            const Eigen::VectorXd g = scoped_gradient(params, e.x, y, scope);
            fim.selfadjointView<Eigen::Lower>().rankUpdate(g, pr[y]);
        }
    }
    fim.triangularView<Eigen::StrictlyUpper>() = fim.transpose();
    return fim / static_cast<double>(dataset.size());
}

Eigen::VectorXd fisher_diagonal(const ParameterVector& params, std::span<const Example> dataset, Scope scope) {
    if (dataset.empty()) throw ConfigError("Fisher diagonal of an empty dataset");
    const int c = params.arch().num_classes;
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(scope_size(params, scope)));
    for (const auto& e : dataset) {
        const Eigen::VectorXd pr = nnet::predict_proba(params, e.x).probs;
        for (int y = 0; y < c; ++y) {
            if (pr[y] == 0.0) continue;
            diag += pr[y] * scoped_gradient(params, e.x, y, scope).array().square().matrix();
        }
    }
    return diag / static_cast<double>(dataset.size());
}

Eigen::MatrixXd hessian_matrix(const ParameterVector& params, std::span<const Example> dataset, Scope scope,
                               std::size_t max_parameters) {
    if (dataset.empty()) throw ConfigError("Hessian of an empty dataset");
    const auto dim = static_cast<Eigen::Index>(scope_size(params, scope));
    check_dense_size(static_cast<std::size_t>(dim), max_parameters, "dense Hessian");
    Eigen::MatrixXd h(dim, dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
        Eigen::VectorXd unit = Eigen::VectorXd::Zero(dim);
        unit[i] = 1.0;
        h.col(i) = restrict_to_scope(params, nnet::hvp(params, dataset, embed(params, unit, scope)), scope);
    }
    return 0.5 * (h + h.transpose());
}

struct InverseCurvature::Dense {
    Eigen::LLT<Eigen::MatrixXd> llt;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu;
    bool use_lu = false;
};

InverseCurvature InverseCurvature::prepare(const CurvatureBackend& backend, const ParameterVector& params,
                                           std::span<const Example> dataset) {
    backend.validate();
    InverseCurvature inv;
    inv.backend_ = backend;
    inv.dim_ = scope_size(params, backend.scope);

    switch (backend.kind) {
        case CurvatureKind::Identity:
            break;
        case CurvatureKind::DiagonalFisher:
            inv.diagonal_ = fisher_diagonal(params, dataset, backend.scope).array() + backend.damping;
            break;
        case CurvatureKind::FullFisher:
        case CurvatureKind::TopFisher: {
            Eigen::MatrixXd f = fisher_matrix(params, dataset, backend.scope, backend.max_dense_parameters);
            f.diagonal().array() += backend.damping;
            auto dense = std::make_shared<Dense>();
            dense->llt.compute(f);
            if (dense->llt.info() != Eigen::Success) throw Error("damped Fisher matrix is not positive definite");
            inv.dense_ = std::move(dense);
            break;
        }
        case CurvatureKind::ExactHessian: {
            Eigen::MatrixXd h = hessian_matrix(params, dataset, backend.scope, backend.max_dense_parameters);
            h.diagonal().array() += backend.damping;
            auto dense = std::make_shared<Dense>();
            dense->lu.compute(h);
            dense->use_lu = true;
            inv.dense_ = std::move(dense);
            break;
        }
        case CurvatureKind::LissaHessian:
            if (dataset.empty()) throw ConfigError("LISSA needs a non-empty dataset");
            inv.params_ = std::make_shared<const ParameterVector>(params);
            inv.dataset_ = std::make_shared<const std::vector<Example>>(dataset.begin(), dataset.end());
            break;
    }
    return inv;
}

Eigen::VectorXd InverseCurvature::lissa(const Eigen::VectorXd& v, double scale) const {
    const auto& data = *dataset_;
    const std::size_t n = data.size();
    const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(backend_.lissa_batch_size), n);
    Eigen::VectorXd total = Eigen::VectorXd::Zero(v.size());
    std::vector<std::size_t> order(n);
    std::vector<Example> minibatch;
    minibatch.reserve(batch);
    for (int s = 0; s < backend_.lissa_samples; ++s) {
        Rng rng(derive_seed(backend_.seed, {0x1155au, static_cast<std::uint64_t>(s)}));
        Eigen::VectorXd cur = v;
        for (int j = 1; j <= backend_.lissa_iterations; ++j) {
            std::span<const Example> sample = data;
            if (batch < n) {
                std::iota(order.begin(), order.end(), 0);
                std::shuffle(order.begin(), order.end(), rng);
                minibatch.clear();
                for (std::size_t i = 0; i < batch; ++i) minibatch.push_back(data[order[i]]);
                sample = minibatch;
            }
            const Eigen::VectorXd hv = restrict_to_scope(
                *params_, nnet::hvp(*params_, sample, embed(*params_, cur, backend_.scope)), backend_.scope);
            cur = v + cur - (hv + backend_.damping * cur) / scale;
            if (!cur.allFinite())
                throw LissaDiverged("LISSA recursion diverged at iteration " + std::to_string(j), j);
        }
        total += cur / scale;
    }
    return total / static_cast<double>(backend_.lissa_samples);
}

Eigen::VectorXd InverseCurvature::apply(const Eigen::VectorXd& v) const {
    if (static_cast<std::size_t>(v.size()) != dim_)
        throw ConfigError("vector length " + std::to_string(v.size()) + " does not match backend scope size " +
                          std::to_string(dim_));
    ++*applications_;
    switch (backend_.kind) {
        case CurvatureKind::Identity:
            return v;
        case CurvatureKind::DiagonalFisher:
            return v.cwiseQuotient(diagonal_);
        case CurvatureKind::FullFisher:
        case CurvatureKind::TopFisher:
        case CurvatureKind::ExactHessian:
            return dense_->use_lu ? Eigen::VectorXd(dense_->lu.solve(v)) : Eigen::VectorXd(dense_->llt.solve(v));
        case CurvatureKind::LissaHessian: {
            // one retry at half the step size before giving up
            try {
                *lissa_scale_used_ = backend_.lissa_scale;
                return lissa(v, backend_.lissa_scale);
            } catch (const LissaDiverged&) {
                *lissa_scale_used_ = 2.0 * backend_.lissa_scale;
                return lissa(v, 2.0 * backend_.lissa_scale);
            }
        }
    }
    return v;
}

Eigen::VectorXd inverse_curvature_vector_product(const CurvatureBackend& backend, const ParameterVector& params,
                                                 std::span<const Example> dataset, const Eigen::VectorXd& v) {
    return InverseCurvature::prepare(backend, params, dataset).apply(v);
}

void sort_scores(std::vector<CEScore>& scores) {
    std::sort(scores.begin(), scores.end(), [](const CEScore& a, const CEScore& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.candidate_id < b.candidate_id;
    });
}

namespace {

std::vector<CEScore> score_with(const ParameterVector& params, std::span<const Example> candidates,
                                const InverseCurvature& inverse, const Eigen::VectorXd& cached, double sign) {
    if (candidates.empty()) throw NoCandidates("no candidate counter-examples to score");
    const Scope scope = inverse.backend().scope;
    std::vector<CEScore> scores;
    scores.reserve(candidates.size());
    for (const auto& z : candidates) {
        const double s = sign * cached.dot(scoped_gradient(params, z.x, z.label, scope));
        if (!std::isfinite(s)) throw Error("non-finite counter-example score for example " + std::to_string(z.id));
        scores.push_back({z.id, s, inverse.backend().kind});
    }
    sort_scores(scores);
    return scores;
}

}  // namespace

std::vector<CEScore> score_counterexamples(const ParameterVector& params, const Example& suspicious,
                                           std::span<const Example> candidates, const InverseCurvature& inverse) {
    if (candidates.empty()) throw NoCandidates("no candidate counter-examples to score");
    const Scope scope = inverse.backend().scope;
    const Eigen::VectorXd cached = inverse.apply(scoped_gradient(params, suspicious.x, suspicious.label, scope));
    return score_with(params, candidates, inverse, cached, -1.0);
}

std::vector<CEScore> score_counterexamples(const ParameterVector& params, const Example& suspicious,
                                           std::span<const Example> candidates, const CurvatureBackend& backend,
                                           std::span<const Example> training_set) {
    if (candidates.empty()) throw NoCandidates("no candidate counter-examples to score");
    return score_counterexamples(params, suspicious, candidates,
                                 InverseCurvature::prepare(backend, params, training_set));
}

std::vector<CEScore> score_counterexamples_prob_form(const ParameterVector& params, const Example& suspicious,
                                                     std::span<const Example> candidates,
                                                     const InverseCurvature& inverse) {
    if (candidates.empty()) throw NoCandidates("no candidate counter-examples to score");
    const Scope scope = inverse.backend().scope;
    const Eigen::VectorXd grad_p =
        restrict_to_scope(params, nnet::prob_gradient(params, suspicious.x, suspicious.label), scope);
    const Eigen::VectorXd cached = inverse.apply(grad_p);
    return score_with(params, candidates, inverse, cached, 1.0);
}

std::vector<LooDelta> brute_force_contrastive(std::span<const Example> dataset, const Example& suspicious,
                                              const nnet::ArchitectureSpec& arch, const nnet::TrainConfig& cfg,
                                              std::size_t max_examples) {
    if (dataset.size() > max_examples)
        throw SizeError("leave-one-out oracle refuses " + std::to_string(dataset.size()) + " examples (cap " +
                        std::to_string(max_examples) + ")");
    if (dataset.size() < 2) throw ConfigError("leave-one-out oracle needs at least 2 examples");
    const auto base = nnet::fit(dataset, arch, cfg);
    const double p0 = nnet::predict_proba(base, suspicious.x).probs[suspicious.label];

    std::vector<LooDelta> out;
    out.reserve(dataset.size());
    std::vector<Example> reduced;
    reduced.reserve(dataset.size() - 1);
    for (std::size_t k = 0; k < dataset.size(); ++k) {
        reduced.clear();
        for (std::size_t j = 0; j < dataset.size(); ++j)
            if (j != k) reduced.push_back(dataset[j]);
        const auto params = nnet::fit(reduced, arch, cfg);
        out.push_back({dataset[k].id, nnet::predict_proba(params, suspicious.x).probs[suspicious.label] - p0});
    }
    std::sort(out.begin(), out.end(), [](const LooDelta& a, const LooDelta& b) {
        if (a.delta != b.delta) return a.delta > b.delta;
        return a.id < b.id;
    });
    return out;
}

std::vector<Example> filter_candidates(std::span<const Example> dataset, const Example& suspicious, int prediction,
                                       const CandidateFilter& filter) {
    if (filter.perceptual_k && *filter.perceptual_k < 1) throw ConfigError("perceptual_k must be >= 1");
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < dataset.size(); ++i)
        if (!filter.pertinence_enabled || dataset[i].label == prediction) keep.push_back(i);

    if (filter.perceptual_k && keep.size() > static_cast<std::size_t>(*filter.perceptual_k)) {
        std::vector<std::pair<double, std::size_t>> dist;
        dist.reserve(keep.size());
        for (auto i : keep) dist.emplace_back((dataset[i].x - suspicious.x).squaredNorm(), i);
        std::stable_sort(dist.begin(), dist.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        dist.resize(static_cast<std::size_t>(*filter.perceptual_k));
        keep.clear();
        for (const auto& [d, i] : dist) keep.push_back(i);
        std::sort(keep.begin(), keep.end());
    }
    std::vector<Example> out;
    out.reserve(keep.size());
    for (auto i : keep) out.push_back(dataset[i]);
    return out;
}

}  // namespace labelclean::influence
