#pragma once

#include <cmath>
#include <initializer_list>

#include "rsvc/tensor.hpp"

namespace rsvc {

namespace detail {

template <typename S>
VecX<S> flatten(const MatX<S>& m) {
  return Eigen::Map<const VecX<S>>(m.data(), m.size());
}

// 0 = same shape, 1 = b broadcast as row vector over a, 2 = a over b.
template <typename S>
int broadcast_kind(const Tensor<S>& a, const Tensor<S>& b, const char* op, bool allow_swap = true) {
  if (a.shape == b.shape) return 0;
  if (a.rank() == 2 && b.rank() == 1 && b.shape[0] == a.shape[1]) return 1;
  if (allow_swap && b.rank() == 2 && a.rank() == 1 && a.shape[0] == b.shape[1]) return 2;
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a.shape) +
                              " vs " + shape_str(b.shape));
}

template <typename S, typename MakeBackward>
void maybe_record(Primitive kind, std::initializer_list<const Tensor<S>*> inputs, Tensor<S>& out,
                  MakeBackward&& make_backward) {
  Tape<S>* tape = active_tape<S>();
  if (!tape) return;
  bool any_grad = false;
  for (const Tensor<S>* t : inputs) any_grad = any_grad || t->requires_grad;
  if (!any_grad) return;
  std::vector<int> ids;
  ids.reserve(inputs.size());
  for (const Tensor<S>* t : inputs) ids.push_back(tape->ensure_slot(*t));
  out.requires_grad = true;
  const int oid = tape->add_slot(out);
  out.node_id = oid;
  out.tape_id = tape->id();
  tape->record(kind, ids, oid, make_backward(ids, oid));
}

template <typename S>
void maybe_record_vec(Primitive kind, const std::vector<const Tensor<S>*>& inputs, Tensor<S>& out,
                      const std::function<std::function<void(Tape<S>&)>(const std::vector<int>&, int)>&
                          make_backward) {
  Tape<S>* tape = active_tape<S>();
  if (!tape) return;
  bool any_grad = false;
  for (const Tensor<S>* t : inputs) any_grad = any_grad || t->requires_grad;
  if (!any_grad) return;
  std::vector<int> ids;
  ids.reserve(inputs.size());
  for (const Tensor<S>* t : inputs) ids.push_back(tape->ensure_slot(*t));
  out.requires_grad = true;
  const int oid = tape->add_slot(out);
  out.node_id = oid;
  out.tape_id = tape->id();
  tape->record(kind, ids, oid, make_backward(ids, oid));
}

template <typename S>
Eigen::Map<const MatX<S>> as_mat(const VecX<S>& v, Eigen::Index r, Eigen::Index c) {
  return Eigen::Map<const MatX<S>>(v.data(), r, c);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic. add/sub/mul accept equal shapes, or a rank-1 vector
// broadcast across the rows of a rank-2 partner (sub broadcasts only its
// second argument).
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  const int bc = detail::broadcast_kind(a, b, "add");
  Tensor<S> out;
  if (bc == 0) {
    out = Tensor<S>(a.shape, a.vec() + b.vec());
  } else {
    const Tensor<S>& m2 = bc == 1 ? a : b;
    const Tensor<S>& v1 = bc == 1 ? b : a;
    MatX<S> m = m2.mat();
    m.rowwise() += v1.vec().transpose();
    out = Tensor<S>(m2.shape, detail::flatten<S>(m));
  }
  detail::maybe_record<S>(Primitive::Add, {&a, &b}, out, [bc](const std::vector<int>& in, int io) {
    return [bc, in, io](Tape<S>& t) {
      const VecX<S>& g = t.adjoint(io);
      const int mat_in = bc == 2 ? in[1] : in[0];
      const int vec_in = bc == 2 ? in[0] : in[1];
      if (bc == 0) {
        t.accumulate(in[0], g);
        t.accumulate(in[1], g);
      } else {
        t.accumulate(mat_in, g);
        const Shape& ms = t.slot_shape(mat_in);
        auto G = detail::as_mat<S>(g, ms[0], ms[1]);
        VecX<S> gv = G.colwise().sum().transpose();
        t.accumulate(vec_in, gv);
      }
    };
  });
  return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  const int bc = detail::broadcast_kind(a, b, "sub", /*allow_swap=*/false);
  Tensor<S> out;
  if (bc == 0) {
    out = Tensor<S>(a.shape, a.vec() - b.vec());
  } else {
    MatX<S> m = a.mat();
    m.rowwise() -= b.vec().transpose();
    out = Tensor<S>(a.shape, detail::flatten<S>(m));
  }
  detail::maybe_record<S>(Primitive::Sub, {&a, &b}, out, [bc](const std::vector<int>& in, int io) {
    return [bc, in, io](Tape<S>& t) {
      const VecX<S>& g = t.adjoint(io);
      t.accumulate(in[0], g);
      if (bc == 0) {
        t.accumulate(in[1], -g);
      } else {
        const Shape& ms = t.slot_shape(in[0]);
        auto G = detail::as_mat<S>(g, ms[0], ms[1]);
        VecX<S> gv = -G.colwise().sum().transpose();
        t.accumulate(in[1], gv);
      }
    };
  });
  return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  const int bc = detail::broadcast_kind(a, b, "mul");
  Tensor<S> out;
  if (bc == 0) {
    out = Tensor<S>(a.shape, a.vec().cwiseProduct(b.vec()));
  } else {
    const Tensor<S>& m2 = bc == 1 ? a : b;
    const Tensor<S>& v1 = bc == 1 ? b : a;
    MatX<S> m = m2.mat();
    m.array().rowwise() *= v1.vec().transpose().array();
    out = Tensor<S>(m2.shape, detail::flatten<S>(m));
  }
  detail::maybe_record<S>(Primitive::Mul, {&a, &b}, out, [bc](const std::vector<int>& in, int io) {
    return [bc, in, io](Tape<S>& t) {
      const VecX<S>& g = t.adjoint(io);
      if (bc == 0) {
        t.accumulate(in[0], g.cwiseProduct(t.slot_values(in[1])));
        t.accumulate(in[1], g.cwiseProduct(t.slot_values(in[0])));
      } else {
        const int mat_in = bc == 2 ? in[1] : in[0];
        const int vec_in = bc == 2 ? in[0] : in[1];
        const Shape& ms = t.slot_shape(mat_in);
        auto G = detail::as_mat<S>(g, ms[0], ms[1]);
        MatX<S> gm = G;
        gm.array().rowwise() *= t.slot_values(vec_in).transpose().array();
        t.accumulate(mat_in, detail::flatten<S>(gm));
        auto A = detail::as_mat<S>(t.slot_values(mat_in), ms[0], ms[1]);
        MatX<S> prod = G.cwiseProduct(A);
        VecX<S> gv = prod.colwise().sum().transpose();
        t.accumulate(vec_in, gv);
      }
    };
  });
  return out;
}

/// Multiply by a plain (non-differentiated) constant.
template <typename S>
Tensor<S> scale(const Tensor<S>& x, S c) {
  Tensor<S> out(x.shape, (x.vec() * c).eval());
  detail::maybe_record<S>(Primitive::Scale, {&x}, out, [c](const std::vector<int>& in, int io) {
    return [c, in, io](Tape<S>& t) { t.accumulate(in[0], t.adjoint(io) * c); };
  });
  return out;
}

template <typename S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <typename S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <typename S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0])
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape) + " vs " +
                                shape_str(b.shape));
  MatX<S> c = a.mat() * b.mat();
  Tensor<S> out({a.shape[0], b.shape[1]}, detail::flatten<S>(c));
  detail::maybe_record<S>(Primitive::MatMul, {&a, &b}, out, [](const std::vector<int>& in, int io) {
    return [in, io](Tape<S>& t) {
      const Shape& sa = t.slot_shape(in[0]);
      const Shape& sb = t.slot_shape(in[1]);
      auto G = detail::as_mat<S>(t.adjoint(io), sa[0], sb[1]);
      auto A = detail::as_mat<S>(t.slot_values(in[0]), sa[0], sa[1]);
      auto B = detail::as_mat<S>(t.slot_values(in[1]), sb[0], sb[1]);
      MatX<S> da = G * B.transpose();
      MatX<S> db = A.transpose() * G;
      t.accumulate(in[0], detail::flatten<S>(da));
      t.accumulate(in[1], detail::flatten<S>(db));
    };
  });
  return out;
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& x) {
  if (x.rank() != 2)
    throw std::invalid_argument("transpose: needs rank-2, got " + shape_str(x.shape));
  MatX<S> y = x.mat().transpose();
  Tensor<S> out({x.shape[1], x.shape[0]}, detail::flatten<S>(y));
  detail::maybe_record<S>(Primitive::Transpose, {&x}, out, [](const std::vector<int>& in, int io) {
    return [in, io](Tape<S>& t) {
      const Shape& sx = t.slot_shape(in[0]);
      auto G = detail::as_mat<S>(t.adjoint(io), sx[1], sx[0]);
      MatX<S> gt = G.transpose();
      t.accumulate(in[0], detail::flatten<S>(gt));
    };
  });
  return out;
}

// ---------------------------------------------------------------------------
// 1-d convolution over time. x is [T, C_in], w is [C_out, C_in, K] stored
// flat; stride 1, zero padding keeps T. Bias is composed via add().
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
MatX<S> im2col(const Eigen::Map<const MatX<S>>& x, Eigen::Index k) {
  const Eigen::Index T = x.rows(), c_in = x.cols(), pad = (k - 1) / 2;
  MatX<S> cols = MatX<S>::Zero(T, c_in * k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const Eigen::Index shift = j - pad;
    const Eigen::Index t0 = std::max<Eigen::Index>(0, -shift);
    const Eigen::Index t1 = std::min<Eigen::Index>(T, T - shift);
    for (Eigen::Index c = 0; c < c_in; ++c)
      for (Eigen::Index t = t0; t < t1; ++t) cols(t, c * k + j) = x(t + shift, c);
  }
  return cols;
}

}  // namespace detail

template <typename S>
Tensor<S> conv1d(const Tensor<S>& x, const Tensor<S>& w, Eigen::Index c_out, Eigen::Index kernel) {
  if (x.rank() != 2)
    throw std::invalid_argument("conv1d: input needs rank-2 [T,C], got " + shape_str(x.shape));
  if (kernel % 2 != 1) throw std::invalid_argument("conv1d: kernel size must be odd");
  const Eigen::Index c_in = x.shape[1];
  if (w.numel() != c_out * c_in * kernel)
    throw std::invalid_argument("conv1d: weight numel " + std::to_string(w.numel()) +
                                " does not match [" + std::to_string(c_out) + "x" +
                                std::to_string(c_in) + "x" + std::to_string(kernel) + "]");
  auto xm = x.mat();
  MatX<S> cols = detail::im2col<S>(xm, kernel);
  auto wm = detail::as_mat<S>(w.vec(), c_out, c_in * kernel);  // rows = out channel
  MatX<S> y = cols * wm.transpose();                           // [T, C_out]
  Tensor<S> out({x.shape[0], c_out}, detail::flatten<S>(y));
  detail::maybe_record<S>(Primitive::Conv1d, {&x, &w}, out,
                          [c_out, kernel](const std::vector<int>& in, int io) {
    return [c_out, kernel, in, io](Tape<S>& t) {
      const Shape& sx = t.slot_shape(in[0]);
      const Eigen::Index T = sx[0], c_in = sx[1], pad = (kernel - 1) / 2;
      auto G = detail::as_mat<S>(t.adjoint(io), T, c_out);
      auto X = detail::as_mat<S>(t.slot_values(in[0]), T, c_in);
      auto W = detail::as_mat<S>(t.slot_values(in[1]), c_out, c_in * kernel);
      MatX<S> cols = detail::im2col<S>(X, kernel);
      MatX<S> dw = G.transpose() * cols;  // [C_out, C_in*K]
      t.accumulate(in[1], detail::flatten<S>(dw));
      MatX<S> dcols = G * W;  // [T, C_in*K]
      MatX<S> dx = MatX<S>::Zero(T, c_in);
      for (Eigen::Index j = 0; j < kernel; ++j) {
        const Eigen::Index shift = j - pad;
        const Eigen::Index t0 = std::max<Eigen::Index>(0, -shift);
        const Eigen::Index t1 = std::min<Eigen::Index>(T, T - shift);
        for (Eigen::Index c = 0; c < c_in; ++c)
          for (Eigen::Index tt = t0; tt < t1; ++tt) dx(tt + shift, c) += dcols(tt, c * kernel + j);
      }
      t.accumulate(in[0], detail::flatten<S>(dx));
    };
  });
  return out;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Per-row normalization to zero mean / unit variance followed by a learned
/// elementwise affine.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     S eps = S(1e-5)) {
  if (x.rank() != 2)
    throw std::invalid_argument("layer_norm: needs rank-2, got " + shape_str(x.shape));
  if (gamma.numel() != x.shape[1] || beta.numel() != x.shape[1])
    throw std::invalid_argument("layer_norm: gamma/beta size must equal feature dim " +
                                std::to_string(x.shape[1]));
  const Eigen::Index T = x.shape[0], d = x.shape[1];
  auto xm = x.mat();
  MatX<S> y(T, d);
  for (Eigen::Index r = 0; r < T; ++r) {
    const S mu = xm.row(r).mean();
    const S var = (xm.row(r).array() - mu).square().mean();
    const S inv = S(1) / std::sqrt(var + eps);
    y.row(r) = (((xm.row(r).array() - mu) * inv) * gamma.vec().transpose().array() +
                beta.vec().transpose().array())
                   .matrix();
  }
  Tensor<S> out(x.shape, detail::flatten<S>(y));
  detail::maybe_record<S>(Primitive::LayerNorm, {&x, &gamma, &beta}, out,
                          [eps](const std::vector<int>& in, int io) {
    return [eps, in, io](Tape<S>& t) {
      const Shape& sx = t.slot_shape(in[0]);
      const Eigen::Index T = sx[0], d = sx[1];
      auto G = detail::as_mat<S>(t.adjoint(io), T, d);
      auto X = detail::as_mat<S>(t.slot_values(in[0]), T, d);
      const VecX<S>& gam = t.slot_values(in[1]);
      MatX<S> dx(T, d);
      VecX<S> dgamma = VecX<S>::Zero(d), dbeta = VecX<S>::Zero(d);
      for (Eigen::Index r = 0; r < T; ++r) {
        const S mu = X.row(r).mean();
        const S var = (X.row(r).array() - mu).square().mean();
        const S inv = S(1) / std::sqrt(var + eps);
        Eigen::Array<S, Eigen::Dynamic, 1> xhat = ((X.row(r).array() - mu) * inv).transpose();
        Eigen::Array<S, Eigen::Dynamic, 1> gr = G.row(r).transpose().array();
        dbeta += gr.matrix();
        dgamma += (gr * xhat).matrix();
        Eigen::Array<S, Eigen::Dynamic, 1> dxhat = gr * gam.array();
        const S m1 = dxhat.mean();
        const S m2 = (dxhat * xhat).mean();
        dx.row(r) = ((dxhat - m1 - xhat * m2) * inv).transpose().matrix();
      }
      t.accumulate(in[0], detail::flatten<S>(dx));
      t.accumulate(in[1], dgamma);
      t.accumulate(in[2], dbeta);
    };
  });
  return out;
}

/// Per-channel (column) normalization over the time axis.
template <typename S>
Tensor<S> instance_norm(const Tensor<S>& x, S eps = S(1e-5)) {
  if (x.rank() != 2)
    throw std::invalid_argument("instance_norm: needs rank-2 [T,C], got " + shape_str(x.shape));
  if (x.shape[0] < 2)
    throw std::invalid_argument("instance_norm: needs T >= 2 time frames, got " +
                                std::to_string(x.shape[0]));
  const Eigen::Index T = x.shape[0], d = x.shape[1];
  auto xm = x.mat();
  MatX<S> y(T, d);
  for (Eigen::Index c = 0; c < d; ++c) {
    const S mu = xm.col(c).mean();
    const S var = (xm.col(c).array() - mu).square().mean();
    const S inv = S(1) / std::sqrt(var + eps);
    y.col(c) = ((xm.col(c).array() - mu) * inv).matrix();
  }
  Tensor<S> out(x.shape, detail::flatten<S>(y));
  detail::maybe_record<S>(Primitive::InstanceNorm, {&x}, out,
                          [eps](const std::vector<int>& in, int io) {
    return [eps, in, io](Tape<S>& t) {
      const Shape& sx = t.slot_shape(in[0]);
      const Eigen::Index T = sx[0], d = sx[1];
      auto G = detail::as_mat<S>(t.adjoint(io), T, d);
      auto X = detail::as_mat<S>(t.slot_values(in[0]), T, d);
      MatX<S> dx(T, d);
      for (Eigen::Index c = 0; c < d; ++c) {
        const S mu = X.col(c).mean();
        const S var = (X.col(c).array() - mu).square().mean();
        const S inv = S(1) / std::sqrt(var + eps);
        Eigen::Array<S, Eigen::Dynamic, 1> xhat = (X.col(c).array() - mu) * inv;
        Eigen::Array<S, Eigen::Dynamic, 1> gc = G.col(c).array();
        const S m1 = gc.mean();
        const S m2 = (gc * xhat).mean();
        dx.col(c) = ((gc - m1 - xhat * m2) * inv).matrix();
      }
      t.accumulate(in[0], detail::flatten<S>(dx));
    };
  });
  return out;
}

// ---------------------------------------------------------------------------
// Nonlinearities. softmax/log_softmax act per row (rank-1 input is a row).
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
std::pair<Eigen::Index, Eigen::Index> row_view(const Shape& s, const char* op) {
  if (s.size() == 1) return {1, s[0]};
  if (s.size() == 2) return {s[0], s[1]};
  throw std::invalid_argument(std::string(op) + ": needs rank-1 or rank-2, got " + shape_str(s));
}

}  // namespace detail

template <typename S>
Tensor<S> softmax(const Tensor<S>& x) {
  auto [r, c] = detail::row_view<S>(x.shape, "softmax");
  auto xm = detail::as_mat<S>(x.vec(), r, c);
  MatX<S> y(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    Eigen::Array<S, 1, Eigen::Dynamic> e = (xm.row(i).array() - xm.row(i).maxCoeff()).exp();
    y.row(i) = (e / e.sum()).matrix();
  }
  Tensor<S> out(x.shape, detail::flatten<S>(y));
  detail::maybe_record<S>(Primitive::Softmax, {&x}, out, [r = r, c = c](const std::vector<int>& in, int io) {
    return [r, c, in, io](Tape<S>& t) {
      auto G = detail::as_mat<S>(t.adjoint(io), r, c);
      auto Y = detail::as_mat<S>(t.slot_values(io), r, c);
      MatX<S> dx(r, c);
      for (Eigen::Index i = 0; i < r; ++i) {
        const S dot = G.row(i).dot(Y.row(i));
        dx.row(i) = (Y.row(i).array() * (G.row(i).array() - dot)).matrix();
      }
      t.accumulate(in[0], detail::flatten<S>(dx));
    };
  });
  return out;
}

template <typename S>
Tensor<S> log_softmax(const Tensor<S>& x) {
  auto [r, c] = detail::row_view<S>(x.shape, "log_softmax");
  auto xm = detail::as_mat<S>(x.vec(), r, c);
  MatX<S> y(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    const S mx = xm.row(i).maxCoeff();
    const S lse = mx + std::log((xm.row(i).array() - mx).exp().sum());
    y.row(i) = (xm.row(i).array() - lse).matrix();
  }
  Tensor<S> out(x.shape, detail::flatten<S>(y));
  detail::maybe_record<S>(Primitive::LogSoftmax, {&x}, out, [r = r, c = c](const std::vector<int>& in, int io) {
    return [r, c, in, io](Tape<S>& t) {
      auto G = detail::as_mat<S>(t.adjoint(io), r, c);
      auto Y = detail::as_mat<S>(t.slot_values(io), r, c);
      MatX<S> dx(r, c);
      for (Eigen::Index i = 0; i < r; ++i) {
        const S gsum = G.row(i).sum();
        dx.row(i) = (G.row(i).array() - Y.row(i).array().exp() * gsum).matrix();
      }
      t.accumulate(in[0], detail::flatten<S>(dx));
    };
  });
  return out;
}

template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
  const S inv_sqrt2 = S(0.7071067811865475);
  VecX<S> y(x.numel());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const S v = x.vec()[i];
    y[i] = S(0.5) * v * (S(1) + std::erf(v * inv_sqrt2));
  }
  Tensor<S> out(x.shape, std::move(y));
  detail::maybe_record<S>(Primitive::Gelu, {&x}, out, [](const std::vector<int>& in, int io) {
    return [in, io](Tape<S>& t) {
      const VecX<S>& g = t.adjoint(io);
      const VecX<S>& xv = t.slot_values(in[0]);
      const S inv_sqrt2 = S(0.7071067811865475);
      const S inv_sqrt2pi = S(0.3989422804014327);
      VecX<S> dx(xv.size());
      for (Eigen::Index i = 0; i < xv.size(); ++i) {
        const S v = xv[i];
        const S cdf = S(0.5) * (S(1) + std::erf(v * inv_sqrt2));
        const S pdf = inv_sqrt2pi * std::exp(S(-0.5) * v * v);
        dx[i] = g[i] * (cdf + v * pdf);
      }
      t.accumulate(in[0], dx);
    };
  });
  return out;
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  Tensor<S> out(x.shape, x.vec().cwiseMax(S(0)).eval());
  detail::maybe_record<S>(Primitive::Relu, {&x}, out, [](const std::vector<int>& in, int io) {
    return [in, io](Tape<S>& t) {
      const VecX<S>& xv = t.slot_values(in[0]);
      VecX<S> dx = t.adjoint(io);
      for (Eigen::Index i = 0; i < dx.size(); ++i)
        if (xv[i] <= S(0)) dx[i] = S(0);
      t.accumulate(in[0], dx);
    };
  });
  return out;
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  VecX<S> y(x.numel());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const S v = x.vec()[i];
    if (v >= S(0)) {
      y[i] = S(1) / (S(1) + std::exp(-v));
    } else {
      const S e = std::exp(v);
      y[i] = e / (S(1) + e);
    }
  }
  Tensor<S> out(x.shape, std::move(y));
  detail::maybe_record<S>(Primitive::Sigmoid, {&x}, out, [](const std::vector<int>& in, int io) {
    return [in, io](Tape<S>& t) {
      const VecX<S>& yv = t.slot_values(io);
      VecX<S> dx = t.adjoint(io).cwiseProduct(
          yv.cwiseProduct((VecX<S>::Ones(yv.size()) - yv).eval()));
      t.accumulate(in[0], dx);
    };
  });
  return out;
}

/// Elementwise log(exp(a) + exp(b)), stable for large negative inputs.
template <typename S>
Tensor<S> logaddexp(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape != b.shape)
    throw std::invalid_argument("logaddexp: shapes differ " + shape_str(a.shape) + " vs " +
                                shape_str(b.shape));
  VecX<S> y(a.numel());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const S hi = std::max(a.vec()[i], b.vec()[i]);
    const S lo = std::min(a.vec()[i], b.vec()[i]);
    y[i] = hi + std::log1p(std::exp(lo - hi));
  }
  Tensor<S> out(a.shape, std::move(y));
  detail::maybe_record<S>(Primitive::LogAddExp, {&a, &b}, out, [](const std::vector<int>& in, int io) {
    return [in, io](Tape<S>& t) {
      const VecX<S>& g = t.adjoint(io);
      const VecX<S>& av = t.slot_values(in[0]);
      const VecX<S>& bv = t.slot_values(in[1]);
      const VecX<S>& yv = t.slot_values(io);
      VecX<S> da(g.size()), db(g.size());
      for (Eigen::Index i = 0; i < g.size(); ++i) {
        da[i] = g[i] * std::exp(av[i] - yv[i]);
        db[i] = g[i] * std::exp(bv[i] - yv[i]);
      }
      t.accumulate(in[0], da);
      t.accumulate(in[1], db);
    };
  });
  return out;
}

// ---------------------------------------------------------------------------
// Shape surgery
// ---------------------------------------------------------------------------

/// Concatenate along axis 0 (rows) or 1 (columns). Rank-1 inputs concatenate
/// along axis 0 only.
template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: empty input list");
  const Eigen::Index rank = parts[0].rank();
  for (const auto& p : parts)
    if (p.rank() != rank)
      throw std::invalid_argument("concat: mixed ranks " + shape_str(parts[0].shape) + " vs " +
                                  shape_str(p.shape));
  Tensor<S> out;
  std::vector<Eigen::Index> offsets(parts.size());
  if (rank == 1) {
    if (axis != 0) throw std::invalid_argument("concat: rank-1 tensors concatenate on axis 0");
    Eigen::Index n = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      offsets[i] = n;
      n += parts[i].numel();
    }
    VecX<S> v(n);
    for (std::size_t i = 0; i < parts.size(); ++i) v.segment(offsets[i], parts[i].numel()) = parts[i].vec();
    out = Tensor<S>({n}, std::move(v));
  } else if (rank == 2 && (axis == 0 || axis == 1)) {
    const Eigen::Index fixed = axis == 0 ? parts[0].shape[1] : parts[0].shape[0];
    Eigen::Index total = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const Eigen::Index f = axis == 0 ? parts[i].shape[1] : parts[i].shape[0];
      if (f != fixed)
        throw std::invalid_argument("concat: shape mismatch " + shape_str(parts[0].shape) + " vs " +
                                    shape_str(parts[i].shape));
      offsets[i] = total;
      total += axis == 0 ? parts[i].shape[0] : parts[i].shape[1];
    }
    MatX<S> m = axis == 0 ? MatX<S>(total, fixed) : MatX<S>(fixed, total);
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (axis == 0)
        m.middleRows(offsets[i], parts[i].shape[0]) = parts[i].mat();
      else
        m.middleCols(offsets[i], parts[i].shape[1]) = parts[i].mat();
    }
    Shape s = axis == 0 ? Shape{total, fixed} : Shape{fixed, total};
    out = Tensor<S>(std::move(s), detail::flatten<S>(m));
  } else {
    throw std::invalid_argument("concat: unsupported rank/axis");
  }
  std::vector<const Tensor<S>*> ins;
  for (const auto& p : parts) ins.push_back(&p);
  detail::maybe_record_vec<S>(Primitive::Concat, ins, out,
                              [axis, offsets, rank](const std::vector<int>& in, int io) {
    return std::function<void(Tape<S>&)>([axis, offsets, rank, in, io](Tape<S>& t) {
      const Shape& so = t.slot_shape(io);
      for (std::size_t i = 0; i < in.size(); ++i) {
        const Shape& si = t.slot_shape(in[i]);
        if (rank == 1) {
          t.accumulate(in[i], t.adjoint(io).segment(offsets[i], shape_numel(si)));
        } else {
          auto G = detail::as_mat<S>(t.adjoint(io), so[0], so[1]);
          MatX<S> gi = axis == 0 ? MatX<S>(G.middleRows(offsets[i], si[0]))
                                 : MatX<S>(G.middleCols(offsets[i], si[1]));
          t.accumulate(in[i], detail::flatten<S>(gi));
        }
      }
    });
  });
  return out;
}

template <typename S>
Tensor<S> concat_cols(const Tensor<S>& a, const Tensor<S>& b) {
  return concat<S>({a, b}, 1);
}
template <typename S>
Tensor<S> concat_rows(const Tensor<S>& a, const Tensor<S>& b) {
  return concat<S>({a, b}, 0);
}

/// Rank-2 block slice: rows [r0,r1) and columns [c0,c1).
template <typename S>
Tensor<S> slice(const Tensor<S>& x, Eigen::Index r0, Eigen::Index r1, Eigen::Index c0,
                Eigen::Index c1) {
  if (x.rank() != 2)
    throw std::invalid_argument("slice: needs rank-2, got " + shape_str(x.shape));
  if (r0 < 0 || r1 > x.shape[0] || c0 < 0 || c1 > x.shape[1] || r0 >= r1 || c0 >= c1)
    throw std::invalid_argument("slice: block [" + std::to_string(r0) + "," + std::to_string(r1) +
                                ")x[" + std::to_string(c0) + "," + std::to_string(c1) +
                                ") out of range for " + shape_str(x.shape));
  MatX<S> y = x.mat().block(r0, c0, r1 - r0, c1 - c0);
  Tensor<S> out({r1 - r0, c1 - c0}, detail::flatten<S>(y));
  detail::maybe_record<S>(Primitive::Slice, {&x}, out,
                          [r0, r1, c0, c1](const std::vector<int>& in, int io) {
    return [r0, r1, c0, c1, in, io](Tape<S>& t) {
      const Shape& sx = t.slot_shape(in[0]);
      auto G = detail::as_mat<S>(t.adjoint(io), r1 - r0, c1 - c0);
      MatX<S> dx = MatX<S>::Zero(sx[0], sx[1]);
      dx.block(r0, c0, r1 - r0, c1 - c0) = G;
      t.accumulate(in[0], detail::flatten<S>(dx));
    };
  });
  return out;
}

template <typename S>
Tensor<S> slice_rows(const Tensor<S>& x, Eigen::Index r0, Eigen::Index r1) {
  return slice(x, r0, r1, 0, x.shape[1]);
}
template <typename S>
Tensor<S> slice_cols(const Tensor<S>& x, Eigen::Index c0, Eigen::Index c1) {
  return slice(x, 0, x.shape[0], c0, c1);
}
/// Single element of a rank-2 tensor as a scalar tensor.
template <typename S>
Tensor<S> element(const Tensor<S>& x, Eigen::Index r, Eigen::Index c) {
  Tensor<S> e = slice(x, r, r + 1, c, c + 1);
  e.shape = {1};
  return e;
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel())
    throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape) + " as " +
                                shape_str(new_shape));
  Tensor<S> out(new_shape, VecX<S>(x.vec()));
  detail::maybe_record<S>(Primitive::Reshape, {&x}, out, [](const std::vector<int>& in, int io) {
    return [in, io](Tape<S>& t) { t.accumulate(in[0], t.adjoint(io)); };
  });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and distances (means over elements, so magnitudes do not depend
// on sequence length or channel count)
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  Tensor<S> out = Tensor<S>::scalar(x.vec().mean());
  detail::maybe_record<S>(Primitive::Mean, {&x}, out, [](const std::vector<int>& in, int io) {
    return [in, io](Tape<S>& t) {
      const Shape& sx = t.slot_shape(in[0]);
      const S g = t.adjoint(io)[0] / S(shape_numel(sx));
      t.accumulate(in[0], VecX<S>::Constant(shape_numel(sx), g));
    };
  });
  return out;
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  Tensor<S> out = Tensor<S>::scalar(x.vec().sum());
  detail::maybe_record<S>(Primitive::Sum, {&x}, out, [](const std::vector<int>& in, int io) {
    return [in, io](Tape<S>& t) {
      const Shape& sx = t.slot_shape(in[0]);
      t.accumulate(in[0], VecX<S>::Constant(shape_numel(sx), t.adjoint(io)[0]));
    };
  });
  return out;
}

/// Mean over the time axis of a [T, d] tensor, yielding a rank-1 [d] tensor.
template <typename S>
Tensor<S> mean_rows(const Tensor<S>& x) {
  if (x.rank() != 2)
    throw std::invalid_argument("mean_rows: needs rank-2, got " + shape_str(x.shape));
  VecX<S> y = x.mat().colwise().mean().transpose();
  Tensor<S> out({x.shape[1]}, std::move(y));
  detail::maybe_record<S>(Primitive::MeanRows, {&x}, out, [](const std::vector<int>& in, int io) {
    return [in, io](Tape<S>& t) {
      const Shape& sx = t.slot_shape(in[0]);
      const VecX<S>& g = t.adjoint(io);
      MatX<S> dx = (g.transpose() / S(sx[0])).replicate(sx[0], 1);
      t.accumulate(in[0], detail::flatten<S>(dx));
    };
  });
  return out;
}

template <typename S>
Tensor<S> l1_distance(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape != b.shape)
    throw std::invalid_argument("l1_distance: shapes differ " + shape_str(a.shape) + " vs " +
                                shape_str(b.shape));
  Tensor<S> out = Tensor<S>::scalar((a.vec() - b.vec()).cwiseAbs().mean());
  detail::maybe_record<S>(Primitive::L1Distance, {&a, &b}, out, [](const std::vector<int>& in, int io) {
    return [in, io](Tape<S>& t) {
      const VecX<S>& av = t.slot_values(in[0]);
      const VecX<S>& bv = t.slot_values(in[1]);
      const S g = t.adjoint(io)[0] / S(av.size());
      VecX<S> da(av.size());
      for (Eigen::Index i = 0; i < av.size(); ++i) {
        const S d = av[i] - bv[i];
        da[i] = d > S(0) ? g : (d < S(0) ? -g : S(0));
      }
      t.accumulate(in[0], da);
      t.accumulate(in[1], -da);
    };
  });
  return out;
}

template <typename S>
Tensor<S> squared_distance(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape != b.shape)
    throw std::invalid_argument("squared_distance: shapes differ " + shape_str(a.shape) + " vs " +
                                shape_str(b.shape));
  Tensor<S> out = Tensor<S>::scalar((a.vec() - b.vec()).squaredNorm() / S(a.numel()));
  detail::maybe_record<S>(Primitive::SquaredDistance, {&a, &b}, out,
                          [](const std::vector<int>& in, int io) {
    return [in, io](Tape<S>& t) {
      const VecX<S>& av = t.slot_values(in[0]);
      const VecX<S>& bv = t.slot_values(in[1]);
      const S g = S(2) * t.adjoint(io)[0] / S(av.size());
      VecX<S> da = g * (av - bv);
      t.accumulate(in[0], da);
      t.accumulate(in[1], -da);
    };
  });
  return out;
}

// ---------------------------------------------------------------------------
// Generic dispatcher, mainly for introspection and the primitive test sweep.
// ---------------------------------------------------------------------------

struct PrimitiveAttrs {
  double scalar = 1.0;                // Scale factor
  int axis = 1;                       // Concat axis
  std::vector<Eigen::Index> dims;     // Slice bounds / Reshape shape / Conv1d [c_out, k]
  double epsilon = 1e-5;              // normalization epsilon
};

template <typename S>
Tensor<S> apply_primitive(Primitive kind, const std::vector<Tensor<S>>& inputs,
                          const PrimitiveAttrs& attrs = {}) {
  auto need = [&](std::size_t n) {
    if (inputs.size() != n)
      throw std::invalid_argument(std::string("primitive '") + primitive_name(kind) + "' expects " +
                                  std::to_string(n) + " inputs, got " +
                                  std::to_string(inputs.size()));
  };
  switch (kind) {
    case Primitive::Add: need(2); return add(inputs[0], inputs[1]);
    case Primitive::Sub: need(2); return sub(inputs[0], inputs[1]);
    case Primitive::Mul: need(2); return mul(inputs[0], inputs[1]);
    case Primitive::Scale: need(1); return scale(inputs[0], S(attrs.scalar));
    case Primitive::MatMul: need(2); return matmul(inputs[0], inputs[1]);
    case Primitive::Transpose: need(1); return transpose(inputs[0]);
    case Primitive::Conv1d:
      need(2);
      if (attrs.dims.size() != 2) throw std::invalid_argument("conv1d: attrs.dims must be [c_out, k]");
      return conv1d(inputs[0], inputs[1], attrs.dims[0], attrs.dims[1]);
    case Primitive::LayerNorm: need(3); return layer_norm(inputs[0], inputs[1], inputs[2], S(attrs.epsilon));
    case Primitive::InstanceNorm: need(1); return instance_norm(inputs[0], S(attrs.epsilon));
    case Primitive::Softmax: need(1); return softmax(inputs[0]);
    case Primitive::LogSoftmax: need(1); return log_softmax(inputs[0]);
    case Primitive::Gelu: need(1); return gelu(inputs[0]);
    case Primitive::Relu: need(1); return relu(inputs[0]);
    case Primitive::Sigmoid: need(1); return sigmoid(inputs[0]);
    case Primitive::LogAddExp: need(2); return logaddexp(inputs[0], inputs[1]);
    case Primitive::Concat: return concat(inputs, attrs.axis);
    case Primitive::Slice:
      need(1);
      if (attrs.dims.size() != 4) throw std::invalid_argument("slice: attrs.dims must be [r0,r1,c0,c1]");
      return slice(inputs[0], attrs.dims[0], attrs.dims[1], attrs.dims[2], attrs.dims[3]);
    case Primitive::Reshape: need(1); return reshape(inputs[0], Shape(attrs.dims));
    case Primitive::Mean: need(1); return mean(inputs[0]);
    case Primitive::Sum: need(1); return sum(inputs[0]);
    case Primitive::MeanRows: need(1); return mean_rows(inputs[0]);
    case Primitive::L1Distance: need(2); return l1_distance(inputs[0], inputs[1]);
    case Primitive::SquaredDistance: need(2); return squared_distance(inputs[0], inputs[1]);
  }
  throw std::invalid_argument("unknown primitive id " + std::to_string(int(kind)));
}

}  // namespace rsvc
