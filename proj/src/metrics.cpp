#include "labelclean/metrics.hpp"

#include "labelclean/errors.hpp"

namespace labelclean::evalx {

double f1_macro(std::span<const int> predicted, std::span<const int> truth, int num_classes) {
    if (predicted.size() != truth.size()) throw ConfigError("prediction and truth lengths differ");
    if (truth.empty()) throw ConfigError("F1 of an empty set");
    if (num_classes < 1) throw ConfigError("num_classes must be positive");
    std::vector<long> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const int p = predicted[i], t = truth[i];
        if (p < 0 || p >= num_classes || t < 0 || t >= num_classes) throw ConfigError("label outside class range");
        if (p == t) {
            ++tp[p];
        } else {
            ++fp[p];
            ++fn[t];
        }
    }
    double sum = 0.0;
    for (int k = 0; k < num_classes; ++k) {
        const long denom = 2 * tp[k] + fp[k] + fn[k];
        sum += denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp[k]) / static_cast<double>(denom);
    }
    return sum / num_classes;
}

double f1_macro(const nnet::ParameterVector& params, std::span<const data::Example> test) {
    if (test.empty()) throw ConfigError("F1 of an empty test set");
    const Eigen::MatrixXd probs = nnet::predict_proba_batch(params, test);
    std::vector<int> predicted(test.size()), truth(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
        Eigen::Index arg = 0;
        probs.row(static_cast<Eigen::Index>(i)).maxCoeff(&arg);
        predicted[i] = static_cast<int>(arg);
        truth[i] = test[i].hidden.true_label;
    }
    return f1_macro(predicted, truth, params.arch().num_classes);
}

}  // namespace labelclean::evalx
