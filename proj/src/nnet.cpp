#include "labelclean/nnet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Cholesky>

#include "labelclean/errors.hpp"
#include "labelclean/random.hpp"

namespace labelclean::nnet {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Layer {
    Eigen::Map<const RowMat> weights;
    Eigen::Map<const Eigen::VectorXd> bias;
};

Layer layer_view(const ParameterVector& p, std::size_t l) {
    const auto widths = p.arch().widths();
    const int in = widths[l], out = widths[l + 1];
    const double* base = p.values.data() + p.layout()[l].offset;
    return {Eigen::Map<const RowMat>(base, out, in), Eigen::Map<const Eigen::VectorXd>(base + out * in, out)};
}

struct Forward {
    std::vector<Eigen::MatrixXd> acts;   // acts[0] = inputs, acts[l] = output of layer l (masked)
    std::vector<Eigen::MatrixXd> pre;    // pre[l-1] = pre-activation of layer l
    std::vector<Eigen::MatrixXd> masks;  // dropout scale per hidden layer (empty when inactive)
    Eigen::MatrixXd probs;               // classes x batch
};

void softmax_columns(Eigen::MatrixXd& z) {
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
        auto col = z.col(j);
        col.array() -= col.maxCoeff();
        col = col.array().exp().matrix();
        col /= col.sum();
    }
}

// Columns of `inputs` are examples.
Forward forward(const ParameterVector& p, Eigen::MatrixXd inputs, Rng* dropout_rng) {
    const std::size_t num_layers = p.layout().size();
    const double rate = p.arch().dropout_rate;
    Forward f;
    f.acts.reserve(num_layers + 1);
    f.acts.push_back(std::move(inputs));
    for (std::size_t l = 0; l < num_layers; ++l) {
        auto [w, b] = layer_view(p, l);
        Eigen::MatrixXd z = w * f.acts.back();
        z.colwise() += b;
        if (l + 1 == num_layers) {
            f.pre.push_back(z);
            softmax_columns(z);
            f.probs = std::move(z);
            break;
        }
        Eigen::MatrixXd a = z.cwiseMax(0.0);
        if (dropout_rng != nullptr && rate > 0.0) {
            std::uniform_real_distribution<double> unif(0.0, 1.0);
            Eigen::MatrixXd mask(a.rows(), a.cols());
            const double keep = 1.0 - rate;
            for (Eigen::Index j = 0; j < mask.cols(); ++j)
                for (Eigen::Index i = 0; i < mask.rows(); ++i) mask(i, j) = unif(*dropout_rng) < keep ? 1.0 / keep : 0.0;
            a = a.cwiseProduct(mask);
            f.masks.push_back(std::move(mask));
        } else {
            f.masks.emplace_back();
        }
        f.pre.push_back(std::move(z));
        f.acts.push_back(std::move(a));
    }
    return f;
}

// `delta` is dL/dz of the output layer (classes x batch); the gradient is summed over the batch.
Eigen::VectorXd backward(const ParameterVector& p, const Forward& f, Eigen::MatrixXd delta) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.size()));
    const auto widths = p.arch().widths();
    for (std::size_t l = p.layout().size(); l-- > 0;) {
        const int in = widths[l], out = widths[l + 1];
        double* base = grad.data() + p.layout()[l].offset;
        Eigen::Map<RowMat>(base, out, in) = delta * f.acts[l].transpose();
        Eigen::Map<Eigen::VectorXd>(base + out * in, out) = delta.rowwise().sum();
        if (l == 0) break;
        auto [w, b] = layer_view(p, l);
        Eigen::MatrixXd back = w.transpose() * delta;
        const auto& z = f.pre[l - 1];
        const auto& mask = f.masks[l - 1];
        for (Eigen::Index j = 0; j < back.cols(); ++j)
            for (Eigen::Index i = 0; i < back.rows(); ++i) {
                double d = z(i, j) > 0.0 ? back(i, j) : 0.0;
                if (mask.size() != 0) d *= mask(i, j);
                back(i, j) = d;
            }
        delta = std::move(back);
    }
    return grad;
}

Eigen::MatrixXd gather(std::span<const Example> dataset, std::span<const std::size_t> idx, int dim) {
    Eigen::MatrixXd x(dim, static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) x.col(static_cast<Eigen::Index>(j)) = dataset[idx[j]].x;
    return x;
}

Eigen::MatrixXd gather_all(std::span<const Example> dataset, int dim) {
    Eigen::MatrixXd x(dim, static_cast<Eigen::Index>(dataset.size()));
    for (std::size_t j = 0; j < dataset.size(); ++j) x.col(static_cast<Eigen::Index>(j)) = dataset[j].x;
    return x;
}

void check_input(const ParameterVector& p, const Eigen::VectorXd& x) {
    if (x.size() != p.arch().input_dim)
        throw ConfigError("input has " + std::to_string(x.size()) + " features, model expects " +
                          std::to_string(p.arch().input_dim));
}

void check_label(const ParameterVector& p, int y) {
    if (y < 0 || y >= p.arch().num_classes)
        throw ConfigError("label " + std::to_string(y) + " outside [0, " + std::to_string(p.arch().num_classes) + ")");
}

void check_dataset(const ArchitectureSpec& arch, std::span<const Example> dataset) {
    for (const auto& e : dataset) {
        if (e.x.size() != arch.input_dim)
            throw ConfigError("example " + std::to_string(e.id) + " has " + std::to_string(e.x.size()) +
                              " features, model expects " + std::to_string(arch.input_dim));
        if (e.label < 0 || e.label >= arch.num_classes)
            throw ConfigError("example " + std::to_string(e.id) + " has label outside the model's classes");
    }
}

// Cross-entropy from output probabilities, clamped away from log(0).
double cross_entropy(const Eigen::MatrixXd& probs, std::span<const Example> dataset,
                     std::span<const std::size_t> idx) {
    double total = 0.0;
    for (std::size_t j = 0; j < idx.size(); ++j) {
        double p = probs(dataset[idx[j]].label, static_cast<Eigen::Index>(j));
        total -= std::log(std::max(p, std::numeric_limits<double>::min()));
    }
    return total;
}

// d z / d theta for the linear model: column k has x in the rows of W_k and 1 at b_k.
Eigen::MatrixXd linear_jacobian(int d, int c, const Eigen::VectorXd& x) {
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(c) * (d + 1), c);
    for (int k = 0; k < c; ++k) {
        jac.block(static_cast<Eigen::Index>(k) * d, k, d, 1) = x;
        jac(static_cast<Eigen::Index>(c) * d + k, k) = 1.0;
    }
    return jac;
}

Eigen::MatrixXd linear_hessian(const ParameterVector& p, std::span<const Example> dataset) {
    const int d = p.arch().input_dim, c = p.arch().num_classes;
    const auto n_params = static_cast<Eigen::Index>(p.size());
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n_params, n_params);
    for (const auto& e : dataset) {
        Eigen::VectorXd pr = predict_proba(p, e.x).probs;
        Eigen::MatrixXd a = Eigen::MatrixXd(pr.asDiagonal()) - pr * pr.transpose();
        Eigen::MatrixXd jac = linear_jacobian(d, c, e.x);
        h.noalias() += jac * a * jac.transpose();
    }
    return h / static_cast<double>(dataset.size());
}

FitReport fit_newton(std::span<const Example> dataset, const ArchitectureSpec& arch, const TrainConfig& cfg) {
    if (arch.kind != ModelKind::LinearSoftmax) throw ConfigError("Newton optimizer requires the linear-softmax model");
    FitReport report;
    report.params = initialize(arch, derive_seed(arch.seed, {cfg.seed}));
    auto& p = report.params;
    auto objective = [&](const ParameterVector& q) { return mean_loss(q, dataset) + 0.5 * cfg.l2 * q.values.squaredNorm(); };
    double f = objective(p);
    const double ridge = cfg.l2 > 0.0 ? cfg.l2 : 1e-10;
    for (int it = 1; it <= cfg.epochs; ++it) {
        report.epochs_run = it;
        Eigen::VectorXd g = mean_gradient(p, dataset) + cfg.l2 * p.values;
        if (!g.allFinite()) throw NumericDivergence("non-finite gradient in Newton iteration", it);
        if (g.norm() < 1e-13) break;
        Eigen::MatrixXd h = linear_hessian(p, dataset);
        h.diagonal().array() += ridge;
        Eigen::VectorXd step = h.ldlt().solve(g);
        double alpha = 1.0;
        ParameterVector trial = p;
        bool accepted = false;
        for (int ls = 0; ls < 50; ++ls) {
            trial.values = p.values - alpha * step;
            double ft = objective(trial);
            // near the optimum the loss change drowns in rounding; a shrinking gradient decides instead
            const bool armijo = ft <= f - 1e-4 * alpha * g.dot(step);
            const bool flat = ls == 0 && std::abs(ft - f) <= 1e-12 * std::max(1.0, std::abs(f)) &&
                              (mean_gradient(trial, dataset) + cfg.l2 * trial.values).norm() < 0.5 * g.norm();
            if (std::isfinite(ft) && (armijo || flat)) {
                accepted = true;
                f = ft;
                break;
            }
            alpha *= 0.5;
        }
        if (!std::isfinite(f)) throw NumericDivergence("non-finite loss in Newton iteration", it);
        if (!accepted) break;  // at machine precision
        p.values = trial.values;
    }
    report.train_accuracy = accuracy(p, dataset);
    return report;
}

}  // namespace

std::string to_string(ModelKind kind) {
    return kind == ModelKind::LinearSoftmax ? "linear-softmax" : "mlp";
}

ModelKind parse_model_kind(const std::string& name) {
    if (name == "linear-softmax" || name == "linear" || name == "lr") return ModelKind::LinearSoftmax;
    if (name == "mlp" || name == "fc") return ModelKind::Mlp;
    throw ConfigError("unknown model kind '" + name + "'");
}

ArchitectureSpec ArchitectureSpec::linear(int input_dim, int num_classes, std::uint64_t seed) {
    ArchitectureSpec a;
    a.kind = ModelKind::LinearSoftmax;
    a.input_dim = input_dim;
    a.num_classes = num_classes;
    a.seed = seed;
    return a;
}

ArchitectureSpec ArchitectureSpec::mlp(int input_dim, std::vector<int> hidden_dims, int num_classes,
                                       double dropout_rate, std::uint64_t seed) {
    ArchitectureSpec a;
    a.kind = ModelKind::Mlp;
    a.input_dim = input_dim;
    a.hidden_dims = std::move(hidden_dims);
    a.num_classes = num_classes;
    a.dropout_rate = dropout_rate;
    a.seed = seed;
    return a;
}

void ArchitectureSpec::validate() const {
    if (input_dim < 1) throw ConfigError("input_dim must be positive");
    if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0, 1)");
    if (kind == ModelKind::LinearSoftmax && !hidden_dims.empty())
        throw ConfigError("linear-softmax model takes no hidden layers");
    if (kind == ModelKind::Mlp && hidden_dims.empty()) throw ConfigError("mlp needs at least one hidden layer");
    for (int h : hidden_dims)
        if (h < 1) throw ConfigError("hidden layer widths must be positive");
}

std::vector<int> ArchitectureSpec::widths() const {
    std::vector<int> w{input_dim};
    w.insert(w.end(), hidden_dims.begin(), hidden_dims.end());
    w.push_back(num_classes);
    return w;
}

std::size_t ArchitectureSpec::num_parameters() const {
    auto w = widths();
    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < w.size(); ++l) total += static_cast<std::size_t>(w[l + 1]) * (w[l] + 1);
    return total;
}

ParameterVector::ParameterVector(ArchitectureSpec arch) : arch_(std::move(arch)) {
    arch_.validate();
    auto w = arch_.widths();
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
        std::size_t len = static_cast<std::size_t>(w[l + 1]) * (w[l] + 1);
        layout_.push_back({static_cast<int>(l), offset, len});
        offset += len;
    }
    values = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(offset));
}

Eigen::VectorXd ParameterVector::slice(int layer_id) const {
    if (layer_id < 0 || layer_id >= static_cast<int>(layout_.size()))
        throw ConfigError("no layer " + std::to_string(layer_id));
    const auto& s = layout_[static_cast<std::size_t>(layer_id)];
    return values.segment(static_cast<Eigen::Index>(s.offset), static_cast<Eigen::Index>(s.length));
}

TrainConfig TrainConfig::defaults_for(ModelKind kind) {
    TrainConfig c;
    c.early_stop_train_accuracy = kind == ModelKind::Mlp ? 0.9 : 0.7;
    return c;
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (early_stop_train_accuracy &&
        !(*early_stop_train_accuracy > 0.0 && *early_stop_train_accuracy <= 1.0))
        throw ConfigError("early_stop_train_accuracy must lie in (0, 1]");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (l2 < 0.0) throw ConfigError("l2 must be nonnegative");
}

int PredictiveDistribution::argmax() const {
    Eigen::Index i = 0;
    probs.maxCoeff(&i);
    return static_cast<int>(i);
}

ParameterVector initialize(const ArchitectureSpec& arch, std::uint64_t seed) {
    ParameterVector p(arch);
    Rng rng(seed);
    const auto w = arch.widths();
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
        const int in = w[l], out = w[l + 1];
        const double limit = std::sqrt(6.0 / (in + out));
        std::uniform_real_distribution<double> unif(-limit, limit);
        double* base = p.values.data() + p.layout()[l].offset;
        for (int i = 0; i < out * in; ++i) base[i] = unif(rng);
    }
    return p;
}

FitReport fit_detailed(std::span<const Example> dataset, const ArchitectureSpec& arch, const TrainConfig& cfg) {
    arch.validate();
    cfg.validate();
    if (dataset.empty()) throw ConfigError("cannot fit on an empty dataset");
    check_dataset(arch, dataset);
    if (cfg.optimizer == Optimizer::Newton) return fit_newton(dataset, arch, cfg);

    FitReport report;
    report.params = initialize(arch, derive_seed(arch.seed, {cfg.seed}));
    auto& p = report.params;
    Rng rng(derive_seed(cfg.seed, {arch.seed, 0xada3u}));

    const auto n = dataset.size();
    const auto batch = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    const Eigen::MatrixXd all_inputs = gather_all(dataset, arch.input_dim);

    Eigen::VectorXd m = Eigen::VectorXd::Zero(p.values.size());
    Eigen::VectorXd v = Eigen::VectorXd::Zero(p.values.size());
    long step = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        report.epochs_run = epoch;
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t len = std::min(batch, n - start);
            std::span<const std::size_t> idx(order.data() + start, len);
            Forward f = forward(p, gather(dataset, idx, arch.input_dim), &rng);
            double loss = cross_entropy(f.probs, dataset, idx) / static_cast<double>(len) +
                          0.5 * cfg.l2 * p.values.squaredNorm();
            if (!std::isfinite(loss))
                throw NumericDivergence("non-finite training loss at epoch " + std::to_string(epoch), epoch);
            Eigen::MatrixXd delta = f.probs;
            for (std::size_t j = 0; j < len; ++j) delta(dataset[idx[j]].label, static_cast<Eigen::Index>(j)) -= 1.0;
            delta /= static_cast<double>(len);
            Eigen::VectorXd g = backward(p, f, std::move(delta));
            if (cfg.l2 > 0.0) g += cfg.l2 * p.values;

            ++step;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
            const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
            p.values.array() -= cfg.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.epsilon);
        }
        if (!p.values.allFinite())
            throw NumericDivergence("non-finite parameters at epoch " + std::to_string(epoch), epoch);

        Forward full = forward(p, all_inputs, nullptr);
        std::size_t correct = 0;
        for (std::size_t j = 0; j < n; ++j) {
            Eigen::Index arg = 0;
            full.probs.col(static_cast<Eigen::Index>(j)).maxCoeff(&arg);
            correct += static_cast<int>(arg) == dataset[j].label;
        }
        report.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
        if (cfg.early_stop_train_accuracy && report.train_accuracy >= *cfg.early_stop_train_accuracy) break;
    }
    return report;
}

ParameterVector fit(std::span<const Example> dataset, const ArchitectureSpec& arch, const TrainConfig& cfg) {
    return fit_detailed(dataset, arch, cfg).params;
}

PredictiveDistribution predict_proba(const ParameterVector& params, const Eigen::VectorXd& x) {
    check_input(params, x);
    Forward f = forward(params, x, nullptr);
    return {f.probs.col(0)};
}

Eigen::MatrixXd predict_proba_batch(const ParameterVector& params, std::span<const Example> dataset) {
    if (dataset.empty()) return Eigen::MatrixXd(0, params.arch().num_classes);
    check_dataset(params.arch(), dataset);
    Forward f = forward(params, gather_all(dataset, params.arch().input_dim), nullptr);
    return f.probs.transpose();
}

int predict(const ParameterVector& params, const Eigen::VectorXd& x) { return predict_proba(params, x).argmax(); }

Eigen::VectorXd logits(const ParameterVector& params, const Eigen::VectorXd& x) {
    check_input(params, x);
    return forward(params, x, nullptr).pre.back().col(0);
}

Eigen::VectorXd penultimate(const ParameterVector& params, const Eigen::VectorXd& x) {
    check_input(params, x);
    Forward f = forward(params, x, nullptr);
    return f.acts.back().col(0);
}

double accuracy(const ParameterVector& params, std::span<const Example> dataset) {
    if (dataset.empty()) return 0.0;
    Eigen::MatrixXd probs = predict_proba_batch(params, dataset);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        Eigen::Index arg = 0;
        probs.row(static_cast<Eigen::Index>(i)).maxCoeff(&arg);
        correct += static_cast<int>(arg) == dataset[i].label;
    }
    return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

LossGradient loss_and_gradient(const ParameterVector& params, const Eigen::VectorXd& x, int y) {
    check_input(params, x);
    check_label(params, y);
    Forward f = forward(params, x, nullptr);
    // log-sum-exp form stays finite when the softmax saturates
    const Eigen::VectorXd z = f.pre.back().col(0);
    const double zmax = z.maxCoeff();
    const double lse = zmax + std::log((z.array() - zmax).exp().sum());
    Eigen::MatrixXd delta = f.probs;
    delta(y, 0) -= 1.0;
    return {lse - z[y], backward(params, f, std::move(delta))};
}

LossGradient loss_and_gradient(const ParameterVector& params, const Example& example) {
    return loss_and_gradient(params, example.x, example.label);
}

Eigen::VectorXd prob_gradient(const ParameterVector& params, const Eigen::VectorXd& x, int y) {
    check_input(params, x);
    check_label(params, y);
    Forward f = forward(params, x, nullptr);
    const Eigen::VectorXd pr = f.probs.col(0);
    // dP_y / dz_j = P_y (1[j = y] - P_j)
    Eigen::MatrixXd delta = -pr[y] * pr;
    delta(y, 0) += pr[y];
    return backward(params, f, std::move(delta));
}

Eigen::VectorXd mean_gradient(const ParameterVector& params, std::span<const Example> dataset) {
    if (dataset.empty()) throw ConfigError("mean gradient of an empty dataset");
    check_dataset(params.arch(), dataset);
    Forward f = forward(params, gather_all(dataset, params.arch().input_dim), nullptr);
    Eigen::MatrixXd delta = f.probs;
    for (std::size_t j = 0; j < dataset.size(); ++j) delta(dataset[j].label, static_cast<Eigen::Index>(j)) -= 1.0;
    delta /= static_cast<double>(dataset.size());
    return backward(params, f, std::move(delta));
}

double mean_loss(const ParameterVector& params, std::span<const Example> dataset) {
    if (dataset.empty()) throw ConfigError("mean loss of an empty dataset");
    check_dataset(params.arch(), dataset);
    Forward f = forward(params, gather_all(dataset, params.arch().input_dim), nullptr);
    double total = 0.0;
    for (std::size_t j = 0; j < dataset.size(); ++j) {
        const Eigen::VectorXd z = f.pre.back().col(static_cast<Eigen::Index>(j));
        const double zmax = z.maxCoeff();
        total += zmax + std::log((z.array() - zmax).exp().sum()) - z[dataset[j].label];
    }
    return total / static_cast<double>(dataset.size());
}

Eigen::VectorXd hvp_finite_difference(const ParameterVector& params, std::span<const Example> dataset,
                                      const Eigen::VectorXd& v) {
    if (v.size() == 0) throw ConfigError("hvp needs a non-empty vector");
    if (static_cast<std::size_t>(v.size()) != params.size())
        throw ConfigError("hvp vector length does not match the parameter count");
    const double norm = v.norm();
    if (norm == 0.0) return Eigen::VectorXd::Zero(v.size());
    const double eps = 1e-4 / norm;
    ParameterVector plus = params, minus = params;
    plus.values += eps * v;
    minus.values -= eps * v;
    return (mean_gradient(plus, dataset) - mean_gradient(minus, dataset)) / (2.0 * eps);
}

Eigen::VectorXd hvp_linear_exact(const ParameterVector& params, std::span<const Example> dataset,
                                 const Eigen::VectorXd& v) {
    if (params.arch().kind != ModelKind::LinearSoftmax)
        throw ConfigError("exact hvp pass is only available for the linear-softmax model");
    if (v.size() == 0) throw ConfigError("hvp needs a non-empty vector");
    if (static_cast<std::size_t>(v.size()) != params.size())
        throw ConfigError("hvp vector length does not match the parameter count");
    if (dataset.empty()) throw ConfigError("hvp over an empty dataset");
    const int d = params.arch().input_dim, c = params.arch().num_classes;
    Eigen::Map<const RowMat> vw(v.data(), c, d);
    Eigen::Map<const Eigen::VectorXd> vb(v.data() + static_cast<Eigen::Index>(c) * d, c);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(v.size());
    Eigen::Map<RowMat> ow(out.data(), c, d);
    Eigen::Map<Eigen::VectorXd> ob(out.data() + static_cast<Eigen::Index>(c) * d, c);
    for (const auto& e : dataset) {
        const Eigen::VectorXd pr = predict_proba(params, e.x).probs;
        const Eigen::VectorXd u = vw * e.x + vb;
        const Eigen::VectorXd au = pr.cwiseProduct(u) - pr * pr.dot(u);
        ow += au * e.x.transpose();
        ob += au;
    }
    return out / static_cast<double>(dataset.size());
}

Eigen::VectorXd hvp(const ParameterVector& params, std::span<const Example> dataset, const Eigen::VectorXd& v) {
    if (params.arch().kind == ModelKind::LinearSoftmax) return hvp_linear_exact(params, dataset, v);
    return hvp_finite_difference(params, dataset, v);
}

}  // namespace labelclean::nnet
