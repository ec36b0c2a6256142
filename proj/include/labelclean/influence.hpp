#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "labelclean/data.hpp"
#include "labelclean/nnet.hpp"

namespace labelclean::influence {

using data::Example;
using nnet::ParameterVector;

enum class CurvatureKind { Identity, DiagonalFisher, FullFisher, TopFisher, LissaHessian, ExactHessian };
enum class Scope { AllParameters, TopLayer };

std::string to_string(CurvatureKind kind);
CurvatureKind parse_curvature_kind(const std::string& name);

struct CurvatureBackend {
    CurvatureKind kind = CurvatureKind::TopFisher;
    double damping = 0.01;
    Scope scope = Scope::TopLayer;
    int lissa_iterations = 10;
    int lissa_samples = 1;
    int lissa_batch_size = 1024;
    double lissa_scale = 1.0;
    std::uint64_t seed = 0;
    std::size_t max_dense_parameters = 5000;

    /// Backend with the default scope for `kind` (top-layer for top-fisher,
    /// all parameters otherwise).
    static CurvatureBackend make(CurvatureKind kind);
    void validate() const;
};

struct CEScore {
    int candidate_id = 0;
    double score = 0.0;
    CurvatureKind backend = CurvatureKind::TopFisher;
};

struct CandidateFilter {
    bool pertinence_enabled = true;
    std::optional<int> perceptual_k;
};

/// Loss gradient restricted to the coordinates of `scope`.
Eigen::VectorXd scoped_gradient(const ParameterVector& params, const Eigen::VectorXd& x, int y, Scope scope);
Eigen::VectorXd restrict_to_scope(const ParameterVector& params, const Eigen::VectorXd& full, Scope scope);
std::size_t scope_size(const ParameterVector& params, Scope scope);

/// Exact-expectation Fisher information matrix averaged over `dataset`.
Eigen::MatrixXd fisher_matrix(const ParameterVector& params, std::span<const Example> dataset, Scope scope,
                              std::size_t max_parameters = 5000);
Eigen::VectorXd fisher_diagonal(const ParameterVector& params, std::span<const Example> dataset, Scope scope);

/// Dense mean cross-entropy Hessian assembled column by column from hvp probes.
Eigen::MatrixXd hessian_matrix(const ParameterVector& params, std::span<const Example> dataset, Scope scope,
                               std::size_t max_parameters = 5000);

/// Prepared (C + damping I)^-1 operator. Factorizations happen once in
/// prepare(); apply() is then cheap and counts its invocations.
class InverseCurvature {
public:
    static InverseCurvature prepare(const CurvatureBackend& backend, const ParameterVector& params,
                                    std::span<const Example> dataset);

    Eigen::VectorXd apply(const Eigen::VectorXd& v) const;

    const CurvatureBackend& backend() const noexcept { return backend_; }
    std::size_t dimension() const noexcept { return dim_; }
    std::size_t applications() const noexcept { return *applications_; }
    /// LISSA only: the scale that produced the last result (doubles after a divergence retry).
    double last_lissa_scale() const noexcept { return *lissa_scale_used_; }

private:
    struct Dense;
    Eigen::VectorXd lissa(const Eigen::VectorXd& v, double scale) const;

    CurvatureBackend backend_;
    std::size_t dim_ = 0;
    std::shared_ptr<const Dense> dense_;
    Eigen::VectorXd diagonal_;
    std::shared_ptr<const ParameterVector> params_;
    std::shared_ptr<const std::vector<Example>> dataset_;
    std::shared_ptr<std::size_t> applications_ = std::make_shared<std::size_t>(0);
    std::shared_ptr<double> lissa_scale_used_ = std::make_shared<double>(1.0);
};

Eigen::VectorXd inverse_curvature_vector_product(const CurvatureBackend& backend, const ParameterVector& params,
                                                 std::span<const Example> dataset, const Eigen::VectorXd& v);

/// score(z_k) = -grad l(z_t)^T (C + damping I)^-1 grad l(z_k), sorted by
/// descending score with ties broken by ascending id. The suspicious-side
/// product is computed once.
std::vector<CEScore> score_counterexamples(const ParameterVector& params, const Example& suspicious,
                                           std::span<const Example> candidates, const InverseCurvature& inverse);
std::vector<CEScore> score_counterexamples(const ParameterVector& params, const Example& suspicious,
                                           std::span<const Example> candidates, const CurvatureBackend& backend,
                                           std::span<const Example> training_set);

/// Probability-gradient form: grad P(y_t|x_t)^T (C + damping I)^-1 grad l(z_k).
std::vector<CEScore> score_counterexamples_prob_form(const ParameterVector& params, const Example& suspicious,
                                                     std::span<const Example> candidates,
                                                     const InverseCurvature& inverse);

void sort_scores(std::vector<CEScore>& scores);

struct LooDelta {
    int id = 0;
    double delta = 0.0;
};

/// Leave-one-out retraining oracle: for each example, refit without it and
/// record P(y_t|x_t; theta^-k) - P(y_t|x_t; theta). Sorted descending, ties by id.
std::vector<LooDelta> brute_force_contrastive(std::span<const Example> dataset, const Example& suspicious,
                                              const nnet::ArchitectureSpec& arch, const nnet::TrainConfig& cfg,
                                              std::size_t max_examples = 200);

/// Keeps examples labelled `prediction` (when pertinence is on), then the
/// perceptual_k nearest to the suspicious input. Survivors keep dataset order.
std::vector<Example> filter_candidates(std::span<const Example> dataset, const Example& suspicious, int prediction,
                                       const CandidateFilter& filter);

}  // namespace labelclean::influence
