#pragma once

#include <map>
#include <string>

#include "rsvc/tensor.hpp"

namespace rsvc {

template <typename S>
struct AdamConfig {
  S lr = S(2e-4);
  S beta1 = S(0.9);
  S beta2 = S(0.98);
  S eps = S(1e-8);
};

/// Adam with bias correction. Moment estimates are keyed by parameter name so
/// a parameter keeps its state across steps regardless of registration order.
/// A non-finite gradient anywhere rejects the whole step (no parameter moves,
/// no moment updates) and the error names the offending parameter.
template <typename S>
class Adam {
 public:
  explicit Adam(AdamConfig<S> cfg = {}) : cfg_(cfg) {}

  const AdamConfig<S>& config() const { return cfg_; }

  void step(NamedTensors<S>& params, Tape<S>& tape) {
    std::vector<VecX<S>> grads;
    grads.reserve(params.size());
    for (auto& [name, p] : params) {
      VecX<S> g = tape.gradient(p);
      if (!g.allFinite())
        throw std::runtime_error("adam: non-finite gradient for parameter '" + name +
                                 "', step rejected");
      grads.push_back(std::move(g));
    }
    for (std::size_t i = 0; i < params.size(); ++i) apply(params[i].first, params[i].second, grads[i]);
  }

  /// Update a single parameter from an explicit gradient vector.
  void apply(const std::string& name, Tensor<S>& param, const VecX<S>& grad) {
    if (grad.size() != param.numel())
      throw std::invalid_argument("adam: gradient size mismatch for parameter '" + name + "'");
    if (!grad.allFinite())
      throw std::runtime_error("adam: non-finite gradient for parameter '" + name +
                               "', step rejected");
    State& st = states_.try_emplace(name, State{VecX<S>::Zero(grad.size()),
                                                VecX<S>::Zero(grad.size()), 0}).first->second;
    ++st.t;
    st.m = cfg_.beta1 * st.m + (S(1) - cfg_.beta1) * grad;
    st.v = cfg_.beta2 * st.v + (S(1) - cfg_.beta2) * grad.cwiseProduct(grad);
    const S c1 = S(1) - std::pow(cfg_.beta1, S(st.t));
    const S c2 = S(1) - std::pow(cfg_.beta2, S(st.t));
    VecX<S> m_hat = st.m / c1;
    VecX<S> v_hat = st.v / c2;
    param.vec() -= cfg_.lr * m_hat.cwiseQuotient(
                                 (v_hat.cwiseSqrt().array() + cfg_.eps).matrix());
  }

  void reset() { states_.clear(); }

 private:
  struct State {
    VecX<S> m, v;
    long t = 0;
  };
  AdamConfig<S> cfg_;
  std::map<std::string, State> states_;
};

}  // namespace rsvc
