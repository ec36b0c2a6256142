#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "labelclean/data.hpp"

namespace labelclean::nnet {

using data::Example;

enum class ModelKind { LinearSoftmax, Mlp };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

struct ArchitectureSpec {
    ModelKind kind = ModelKind::LinearSoftmax;
    int input_dim = 1;
    std::vector<int> hidden_dims;
    int num_classes = 2;
    double dropout_rate = 0.0;  // applied after each hidden layer, training only
    std::uint64_t seed = 0;

    static ArchitectureSpec linear(int input_dim, int num_classes, std::uint64_t seed = 0);
    static ArchitectureSpec mlp(int input_dim, std::vector<int> hidden_dims, int num_classes,
                                double dropout_rate = 0.2, std::uint64_t seed = 0);

    void validate() const;
    /// Layer widths from input to output, e.g. {30, 16, 16, 2}.
    std::vector<int> widths() const;
    std::size_t num_parameters() const;
};

/// Contiguous slice of the flat parameter vector owned by one affine layer.
/// Each layer stores its weight matrix (out x in, row-major) then its bias.
struct Segment {
    int layer_id = 0;
    std::size_t offset = 0;
    std::size_t length = 0;
};

class ParameterVector {
public:
    ParameterVector() = default;
    /// Zero-valued parameters laid out for `arch`.
    explicit ParameterVector(ArchitectureSpec arch);

    const ArchitectureSpec& arch() const noexcept { return arch_; }
    const std::vector<Segment>& layout() const noexcept { return layout_; }
    int top_layer_id() const noexcept { return static_cast<int>(layout_.size()) - 1; }
    const Segment& top_segment() const { return layout_.back(); }
    std::size_t size() const noexcept { return static_cast<std::size_t>(values.size()); }

    Eigen::VectorXd slice(int layer_id) const;
    Eigen::VectorXd top_slice() const { return slice(top_layer_id()); }

    Eigen::VectorXd values;

private:
    ArchitectureSpec arch_;
    std::vector<Segment> layout_;
};

enum class Optimizer {
    Adam,
    Newton  // full-batch damped Newton; linear-softmax only, used by the leave-one-out oracle
};

struct TrainConfig {
    int epochs = 100;
    int batch_size = 1024;
    std::optional<double> early_stop_train_accuracy = 0.9;
    Optimizer optimizer = Optimizer::Adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double l2 = 0.0;  // adds (l2 / 2) * |theta|^2 to the mean training loss
    std::uint64_t seed = 0;

    /// Defaults for the architecture: early stop at 0.9 for MLPs, 0.7 for linear models.
    static TrainConfig defaults_for(ModelKind kind);
    void validate() const;
};

struct PredictiveDistribution {
    Eigen::VectorXd probs;
    int argmax() const;
};

struct FitReport {
    ParameterVector params;
    int epochs_run = 0;
    double train_accuracy = 0.0;
};

/// Glorot-uniform weights, zero biases, drawn from `seed`.
ParameterVector initialize(const ArchitectureSpec& arch, std::uint64_t seed);

/// Trains from scratch by minimizing mean cross-entropy. Deterministic in
/// (dataset order, arch.seed, cfg.seed).
FitReport fit_detailed(std::span<const Example> dataset, const ArchitectureSpec& arch, const TrainConfig& cfg);
ParameterVector fit(std::span<const Example> dataset, const ArchitectureSpec& arch, const TrainConfig& cfg);

PredictiveDistribution predict_proba(const ParameterVector& params, const Eigen::VectorXd& x);
/// Rows are examples.
Eigen::MatrixXd predict_proba_batch(const ParameterVector& params, std::span<const Example> dataset);
int predict(const ParameterVector& params, const Eigen::VectorXd& x);
Eigen::VectorXd logits(const ParameterVector& params, const Eigen::VectorXd& x);
/// Activations feeding the final affine layer (x itself for the linear model).
Eigen::VectorXd penultimate(const ParameterVector& params, const Eigen::VectorXd& x);

double accuracy(const ParameterVector& params, std::span<const Example> dataset);

struct LossGradient {
    double loss = 0.0;
    Eigen::VectorXd gradient;
};

/// Cross-entropy -log P(y|x) and its gradient.
LossGradient loss_and_gradient(const ParameterVector& params, const Eigen::VectorXd& x, int y);
LossGradient loss_and_gradient(const ParameterVector& params, const Example& example);

/// Gradient of P(y|x) itself, backpropagated from dP_y/dz.
Eigen::VectorXd prob_gradient(const ParameterVector& params, const Eigen::VectorXd& x, int y);

/// Mean per-example cross-entropy gradient over `dataset`.
Eigen::VectorXd mean_gradient(const ParameterVector& params, std::span<const Example> dataset);
double mean_loss(const ParameterVector& params, std::span<const Example> dataset);

/// H v with H the mean per-example cross-entropy Hessian. Exact for the
/// linear model, symmetric gradient differences otherwise.
Eigen::VectorXd hvp(const ParameterVector& params, std::span<const Example> dataset, const Eigen::VectorXd& v);
Eigen::VectorXd hvp_finite_difference(const ParameterVector& params, std::span<const Example> dataset,
                                      const Eigen::VectorXd& v);
Eigen::VectorXd hvp_linear_exact(const ParameterVector& params, std::span<const Example> dataset,
                                 const Eigen::VectorXd& v);

}  // namespace labelclean::nnet
