#pragma once

// Reference computations shared by the unit tests and the acceptance binary.
// They deliberately avoid the library's own gradient code paths.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "labelclean/data.hpp"
#include "labelclean/nnet.hpp"

namespace oracles {

using labelclean::data::Example;
using labelclean::data::ExampleSet;
using labelclean::nnet::ArchitectureSpec;
using labelclean::nnet::ParameterVector;

inline double loss_at(const ParameterVector& params, const Eigen::VectorXd& x, int y) {
    return -std::log(labelclean::nnet::predict_proba(params, x).probs(y));
}

inline double prob_at(const ParameterVector& params, const Eigen::VectorXd& x, int y) {
    return labelclean::nnet::predict_proba(params, x).probs(y);
}

struct FiniteDifference {
    Eigen::VectorXd central;
    bool kink = false;  // one-sided slopes disagree: a ReLU switched inside the stencil
};

/// Central differences of f(theta) at params.values, step h.
template <class F>
FiniteDifference finite_difference(const ParameterVector& params, F f, double h) {
    FiniteDifference out;
    out.central.resize(params.values.size());
    ParameterVector p = params;
    const double f0 = f(p);
    for (Eigen::Index i = 0; i < p.values.size(); ++i) {
        const double saved = p.values(i);
        p.values(i) = saved + h;
        const double fp = f(p);
        p.values(i) = saved - h;
        const double fm = f(p);
        p.values(i) = saved;
        out.central(i) = (fp - fm) / (2.0 * h);
        const double fwd = (fp - f0) / h, bwd = (f0 - fm) / h;
        if (std::abs(fwd - bwd) > 1e-3 * std::max(1.0, std::abs(out.central(i)))) out.kink = true;
    }
    return out;
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
inline double max_relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double floor = 1e-4) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::abs(a(i)), std::abs(b(i)), floor});
        worst = std::max(worst, std::abs(a(i) - b(i)) / denom);
    }
    return worst;
}

/// Parameters with Glorot weights and small random biases.
inline ParameterVector random_params(const ArchitectureSpec& arch, std::mt19937_64& rng, double bias_scale = 0.1) {
    ParameterVector p = labelclean::nnet::initialize(arch, rng());
    std::normal_distribution<double> n(0.0, bias_scale);
    for (const auto& seg : p.layout()) {
        const auto in = arch.widths()[static_cast<std::size_t>(seg.layer_id)];
        const auto weights = static_cast<std::size_t>(in) * (seg.length / static_cast<std::size_t>(in + 1));
        for (std::size_t i = seg.offset + weights; i < seg.offset + seg.length; ++i)
            p.values(static_cast<Eigen::Index>(i)) = n(rng);
    }
    return p;
}

inline Eigen::VectorXd random_input(int d, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::VectorXd x(d);
    for (int i = 0; i < d; ++i) x(i) = n(rng);
    return x;
}

/// Random labelled set drawn around per-class means.
inline ExampleSet random_set(int n, int d, int c, std::mt19937_64& rng, double spread = 1.0) {
    ExampleSet s;
    s.name = "random";
    s.num_classes = c;
    s.feature_dim = d;
    for (int k = 0; k < c; ++k) s.class_names.push_back("c" + std::to_string(k));
    for (int j = 0; j < d; ++j) s.feature_names.push_back("x" + std::to_string(j));
    std::vector<Eigen::VectorXd> means;
    for (int k = 0; k < c; ++k) means.push_back(random_input(d, rng) * 1.5);
    std::uniform_int_distribution<int> label(0, c - 1);
    for (int i = 0; i < n; ++i) {
        Example e;
        e.id = i;
        e.label = e.hidden.true_label = label(rng);
        e.x = means[static_cast<std::size_t>(e.label)] + spread * random_input(d, rng);
        s.examples.push_back(e);
    }
    return s;
}

/// Dense Hessian of the mean loss of a linear-softmax model, built from the
/// closed form (diag(p) - p p^T) kron [x;1][x;1]^T in the W-then-b layout.
inline Eigen::MatrixXd linear_softmax_hessian(const ParameterVector& params, const std::vector<Example>& data) {
    const int c = params.arch().num_classes;
    const int d = params.arch().input_dim;
    const Eigen::Index n = params.values.size();
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n, n);
    // index of W(i, j) is i*d + j; index of b(i) is c*d + i
    auto idx = [c, d](int cls, int feat) { return feat < d ? cls * d + feat : c * d + cls; };
    for (const auto& e : data) {
        const Eigen::VectorXd p = labelclean::nnet::predict_proba(params, e.x).probs;
        Eigen::VectorXd a(d + 1);
        a << e.x, 1.0;
        for (int i = 0; i < c; ++i)
            for (int k = 0; k < c; ++k) {
                const double s = (i == k ? p(i) : 0.0) - p(i) * p(k);
                for (int j = 0; j <= d; ++j)
                    for (int l = 0; l <= d; ++l) H(idx(i, j), idx(k, l)) += s * a(j) * a(l);
            }
    }
    return H / static_cast<double>(data.size());
}

/// Macro-F1 from an explicit confusion matrix.
inline double confusion_f1(const std::vector<int>& pred, const std::vector<int>& truth, int c) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(c, c);  // rows: truth, cols: prediction
    for (std::size_t i = 0; i < pred.size(); ++i) m(truth[i], pred[i]) += 1.0;
    double total = 0.0;
    for (int k = 0; k < c; ++k) {
        const double tp = m(k, k);
        const double precision_den = m.col(k).sum();
        const double recall_den = m.row(k).sum();
        const double precision = precision_den > 0 ? tp / precision_den : 0.0;
        const double recall = recall_den > 0 ? tp / recall_den : 0.0;
        total += precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    }
    return total / c;
}

}  // namespace oracles
