#pragma once

#include <span>
#include <vector>

#include "labelclean/data.hpp"
#include "labelclean/nnet.hpp"

namespace labelclean::evalx {

/// Unweighted mean of per-class F1 over all `num_classes` classes. A class
/// absent from both predictions and truth contributes 0.
double f1_macro(std::span<const int> predicted, std::span<const int> truth, int num_classes);

/// Macro-F1 of the model's predictions against the ground-truth labels of `test`.
double f1_macro(const nnet::ParameterVector& params, std::span<const data::Example> test);

}  // namespace labelclean::evalx
