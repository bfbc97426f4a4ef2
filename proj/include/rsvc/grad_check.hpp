#pragma once

#include <algorithm>
#include <functional>
#include <limits>
#include <string>

#include "rsvc/ops.hpp"

namespace rsvc {

template <typename S>
struct GradCheckResult {
  S max_rel_err = S(0);
  std::string worst_coordinate;
};

template <typename S>
constexpr S grad_check_default_eps() {
  if constexpr (std::is_same_v<S, float>) return S(1e-3);
  return S(1e-6);
}

/// Compares reverse-mode gradients of a scalar-valued function against central
/// differences. Relative error per coordinate is
///   |analytic - numeric| / max(|analytic|, |numeric|, 1e-8),
/// except that differences below the difference-quotient noise bound — a few
/// ulps of the loss magnitude divided by 2*eps — are indistinguishable from
/// exact agreement and never flagged. Without that floor, coordinates whose
/// true gradient is structurally zero (an attention key bias, say) would fail
/// on rounding noise alone.
template <typename S, typename Fn>
GradCheckResult<S> grad_check(Fn&& fn, std::vector<Tensor<S>> inputs,
                              S eps = grad_check_default_eps<S>()) {
  for (auto& t : inputs) t.requires_grad = true;
  std::vector<VecX<S>> analytic;
  S loss_value = S(0);
  {
    Tape<S> tape;
    TapeScope<S> scope(tape);
    Tensor<S> loss = fn(inputs);
    loss_value = loss.item();
    tape.backward(loss);
    for (auto& t : inputs) analytic.push_back(tape.gradient(t));
  }
  const S noise_floor = S(4) * std::numeric_limits<S>::epsilon() *
                        std::max(S(1), std::abs(loss_value)) / eps;
  GradCheckResult<S> res;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (Eigen::Index j = 0; j < inputs[i].numel(); ++j) {
      S& cell = (*inputs[i].values)[j];
      const S orig = cell;
      cell = orig + eps;
      const S f_plus = fn(inputs).item();
      cell = orig - eps;
      const S f_minus = fn(inputs).item();
      cell = orig;
      const S numeric = (f_plus - f_minus) / (S(2) * eps);
      const S a = analytic[i][j];
      if (std::abs(a - numeric) <= noise_floor) continue;
      const S denom = std::max({std::abs(a), std::abs(numeric), S(1e-8)});
      const S rel = std::abs(a - numeric) / denom;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_coordinate = "input " + std::to_string(i) + " [" + std::to_string(j) +
                               "] analytic=" + std::to_string(double(a)) +
                               " numeric=" + std::to_string(double(numeric));
      }
    }
  }
  return res;
}

}  // namespace rsvc
