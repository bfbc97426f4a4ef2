#pragma once

#include "rsvc/ops.hpp"

namespace rsvc {

template <typename S>
void copy_values(Tensor<S>& dst, const Tensor<S>& src) {
  if (dst.shape != src.shape)
    throw std::invalid_argument("copy_values: shape mismatch " + shape_str(dst.shape) + " vs " +
                                shape_str(src.shape));
  *dst.values = *src.values;
}

/// FNV-1a over the raw little-endian bytes of all parameters, in order.
/// Used by the freeze contracts to prove parameter sets did not move.
template <typename S>
std::uint64_t param_hash(const NamedTensors<S>& params) {
  std::uint64_t h = 14695981039346656037ull;
  auto eat = [&h](const void* p, std::size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& [name, t] : params) {
    eat(name.data(), name.size());
    eat(t.data(), sizeof(S) * std::size_t(t.numel()));
  }
  return h;
}

template <typename S>
struct Linear {
  Tensor<S> w, b;  // w: [in, out]

  Linear() = default;
  Linear(Eigen::Index in, Eigen::Index out, std::mt19937& rng) {
    const S bound = std::sqrt(S(6) / S(in + out));
    w = Tensor<S>::uniform({in, out}, rng, -bound, bound, true);
    b = Tensor<S>::zeros({out}, true);
  }

  Tensor<S> operator()(const Tensor<S>& x) const { return add(matmul(x, w), b); }

  void collect(const std::string& prefix, NamedTensors<S>& out) const {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
  }
};

template <typename S>
struct LayerNormLayer {
  Tensor<S> gamma, beta;

  LayerNormLayer() = default;
  explicit LayerNormLayer(Eigen::Index d) {
    gamma = Tensor<S>::ones({d}, true);
    beta = Tensor<S>::zeros({d}, true);
  }

  Tensor<S> operator()(const Tensor<S>& x) const { return layer_norm(x, gamma, beta); }

  void collect(const std::string& prefix, NamedTensors<S>& out) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
  }
};

template <typename S>
struct Conv1dLayer {
  Eigen::Index c_out = 0, kernel = 0;
  Tensor<S> w, b;  // w flat [c_out, c_in*kernel]

  Conv1dLayer() = default;
  Conv1dLayer(Eigen::Index c_in, Eigen::Index c_out_, Eigen::Index kernel_, std::mt19937& rng)
      : c_out(c_out_), kernel(kernel_) {
    const S bound = std::sqrt(S(1) / S(c_in * kernel));
    w = Tensor<S>::uniform({c_out, c_in * kernel}, rng, -bound, bound, true);
    b = Tensor<S>::zeros({c_out}, true);
  }

  Tensor<S> operator()(const Tensor<S>& x) const { return add(conv1d(x, w, c_out, kernel), b); }

  void collect(const std::string& prefix, NamedTensors<S>& out) const {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
  }
};

/// Standard sinusoidal position table, [T, d]. Constant (never trained).
template <typename S>
Tensor<S> sinusoidal_positions(Eigen::Index T, Eigen::Index d) {
  VecX<S> v(T * d);
  for (Eigen::Index t = 0; t < T; ++t) {
    for (Eigen::Index i = 0; i < d; ++i) {
      const double angle = double(t) / std::pow(10000.0, double(2 * (i / 2)) / double(d));
      v[t * d + i] = S(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return Tensor<S>({T, d}, std::move(v));
}

template <typename S>
struct MultiHeadAttention {
  Eigen::Index d_model = 0, heads = 0, d_head = 0;
  Linear<S> wq, wk, wv, wo;

  MultiHeadAttention() = default;
  MultiHeadAttention(Eigen::Index d_model_, Eigen::Index heads_, std::mt19937& rng)
      : d_model(d_model_), heads(heads_), d_head(d_model_ / heads_) {
    if (d_model % heads != 0)
      throw std::invalid_argument("attention: d_model " + std::to_string(d_model) +
                                  " not divisible by heads " + std::to_string(heads));
    wq = Linear<S>(d_model, d_model, rng);
    wk = Linear<S>(d_model, d_model, rng);
    wv = Linear<S>(d_model, d_model, rng);
    wo = Linear<S>(d_model, d_model, rng);
  }

  Tensor<S> operator()(const Tensor<S>& x) const {
    Tensor<S> q = wq(x), k = wk(x), v = wv(x);
    const S inv_sqrt = S(1) / std::sqrt(S(d_head));
    std::vector<Tensor<S>> head_outs;
    head_outs.reserve(std::size_t(heads));
    for (Eigen::Index h = 0; h < heads; ++h) {
      Tensor<S> qh = slice_cols(q, h * d_head, (h + 1) * d_head);
      Tensor<S> kh = slice_cols(k, h * d_head, (h + 1) * d_head);
      Tensor<S> vh = slice_cols(v, h * d_head, (h + 1) * d_head);
      Tensor<S> attn = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt));
      head_outs.push_back(matmul(attn, vh));
    }
    return wo(concat(head_outs, 1));
  }

  void collect(const std::string& prefix, NamedTensors<S>& out) const {
    wq.collect(prefix + ".wq", out);
    wk.collect(prefix + ".wk", out);
    wv.collect(prefix + ".wv", out);
    wo.collect(prefix + ".wo", out);
  }
};

/// Feed-forward transformer block: self-attention and a two-layer 1-d
/// convolutional feed-forward (kernel 3, relu), each wrapped with a residual
/// connection and layer normalization.
template <typename S>
struct FFTBlock {
  MultiHeadAttention<S> attention;
  Conv1dLayer<S> ff1, ff2;
  LayerNormLayer<S> norm1, norm2;

  FFTBlock() = default;
  FFTBlock(Eigen::Index d_model, Eigen::Index heads, Eigen::Index d_ff, std::mt19937& rng)
      : attention(d_model, heads, rng),
        ff1(d_model, d_ff, 3, rng),
        ff2(d_ff, d_model, 3, rng),
        norm1(d_model),
        norm2(d_model) {}

  Tensor<S> operator()(const Tensor<S>& x) const {
    Tensor<S> a = norm1(add(x, attention(x)));
    Tensor<S> f = ff2(relu(ff1(a)));
    return norm2(add(a, f));
  }

  void collect(const std::string& prefix, NamedTensors<S>& out) const {
    attention.collect(prefix + ".attn", out);
    ff1.collect(prefix + ".ff1", out);
    ff2.collect(prefix + ".ff2", out);
    norm1.collect(prefix + ".norm1", out);
    norm2.collect(prefix + ".norm2", out);
  }
};

/// A stack of FFT blocks with sinusoidal positions added at the input.
template <typename S>
struct FFTStack {
  std::vector<FFTBlock<S>> blocks;

  FFTStack() = default;
  FFTStack(int n_blocks, Eigen::Index d_model, Eigen::Index heads, Eigen::Index d_ff,
           std::mt19937& rng) {
    blocks.reserve(std::size_t(n_blocks));
    for (int i = 0; i < n_blocks; ++i) blocks.emplace_back(d_model, heads, d_ff, rng);
  }

  Tensor<S> operator()(Tensor<S> x) const {
    if (!blocks.empty()) {
      const Eigen::Index d = x.shape[1];
      x = add(x, sinusoidal_positions<S>(x.shape[0], d));
    }
    for (const auto& b : blocks) x = b(x);
    return x;
  }

  void collect(const std::string& prefix, NamedTensors<S>& out) const {
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect(prefix + ".block" + std::to_string(i), out);
  }
};

/// Copies checkpoint tensors into an existing parameter set by name.
/// Every parameter must be present; unknown checkpoint names are rejected to
/// catch config/checkpoint drift early.
template <typename S>
void load_parameters(NamedTensors<S>& params, const NamedTensors<S>& stored) {
  std::unordered_map<std::string, const Tensor<S>*> index;
  for (const auto& [name, t] : stored) index[name] = &t;
  if (index.size() != stored.size())
    throw std::invalid_argument("load_parameters: duplicate tensor names in checkpoint");
  for (auto& [name, t] : params) {
    auto it = index.find(name);
    if (it == index.end())
      throw std::invalid_argument("load_parameters: checkpoint is missing tensor '" + name + "'");
    copy_values(t, *it->second);
    index.erase(it);
  }
  if (!index.empty())
    throw std::invalid_argument("load_parameters: checkpoint has unknown tensor '" +
                                index.begin()->first + "'");
}

}  // namespace rsvc
