#pragma once

#include <functional>
#include <utility>

#include "rsvc/grad_check.hpp"
#include "rsvc/ops.hpp"

namespace rsvc {

/// Aggregated gradient-check result for one named function family.
struct GradCase {
  std::string name;
  double max_rel_err = 0.0;
  std::string worst;
  int cases = 0;
};

namespace detail {

inline Eigen::Index rnd_dim(std::mt19937& rng, int lo, int hi) {
  return Eigen::Index(std::uniform_int_distribution<int>(lo, hi)(rng));
}

// Values bounded away from zero, for ops with a kink or sign there.
template <typename S>
Tensor<S> away_from_zero(Shape s, std::mt19937& rng) {
  std::uniform_real_distribution<double> u(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  const Eigen::Index n = shape_numel(s);
  VecX<S> v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = S(sign(rng) ? u(rng) : -u(rng));
  return Tensor<S>(std::move(s), std::move(v));
}

// Uniform values plus a ramp along the given axis so normalization variances
// stay well away from zero (keeps finite-difference curvature bounded).
template <typename S>
Tensor<S> with_spread(Eigen::Index rows, Eigen::Index cols, int axis, std::mt19937& rng) {
  Tensor<S> t = Tensor<S>::uniform({rows, cols}, rng, S(-0.5), S(0.5));
  auto m = t.mat();
  const Eigen::Index n = axis == 0 ? rows : cols;
  for (Eigen::Index i = 0; i < n; ++i) {
    const S ramp = S(-1) + S(2) * S(i) / S(std::max<Eigen::Index>(1, n - 1));
    if (axis == 0)
      m.row(i).array() += ramp;
    else
      m.col(i).array() += ramp;
  }
  return t;
}

template <typename S>
using CaseFn = std::function<Tensor<S>(const std::vector<Tensor<S>>&)>;

/// A scalar-valued test function plus the inputs it differentiates.
template <typename S>
struct PrimitiveCase {
  CaseFn<S> fn;
  std::vector<Tensor<S>> inputs;
};

// Random scalarization weights break symmetries (softmax rows summing to one
// would otherwise make the loss constant).
template <typename S>
CaseFn<S> weighted_mean_of(CaseFn<S> op, const Tensor<S>& like_output, std::mt19937& rng) {
  Tensor<S> w = Tensor<S>::uniform(like_output.shape, rng, S(0.5), S(1.5));
  return [op = std::move(op), w](const std::vector<Tensor<S>>& in) {
    return mean(mul(op(in), w));
  };
}

template <typename S>
PrimitiveCase<S> make_primitive_case(Primitive kind, int variant, std::mt19937& rng) {
  using V = std::vector<Tensor<S>>;
  const Eigen::Index r = rnd_dim(rng, 2, 5), c = rnd_dim(rng, 2, 5);
  switch (kind) {
    case Primitive::Add:
    case Primitive::Sub:
    case Primitive::Mul: {
      auto bin = [kind](const Tensor<S>& a, const Tensor<S>& b) {
        return apply_primitive<S>(kind, {a, b});
      };
      const int bc = kind == Primitive::Sub ? variant % 2 : variant % 3;
      Tensor<S> a, b;
      if (bc == 0) {
        a = Tensor<S>::uniform({r, c}, rng);
        b = Tensor<S>::uniform({r, c}, rng);
      } else if (bc == 1) {
        a = Tensor<S>::uniform({r, c}, rng);
        b = Tensor<S>::uniform({c}, rng);
      } else {
        a = Tensor<S>::uniform({c}, rng);
        b = Tensor<S>::uniform({r, c}, rng);
      }
      CaseFn<S> op = [bin](const V& in) { return bin(in[0], in[1]); };
      Tensor<S> sample = bin(a, b);
      return {weighted_mean_of<S>(op, sample, rng), {a, b}};
    }
    case Primitive::Scale: {
      const double k = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
      Tensor<S> x = Tensor<S>::uniform({r, c}, rng);
      PrimitiveAttrs at;
      at.scalar = k;
      CaseFn<S> op = [at](const V& in) { return apply_primitive<S>(Primitive::Scale, {in[0]}, at); };
      return {weighted_mean_of<S>(op, x, rng), {x}};
    }
    case Primitive::MatMul: {
      const Eigen::Index k = rnd_dim(rng, 2, 5);
      Tensor<S> a = Tensor<S>::uniform({r, k}, rng);
      Tensor<S> b = Tensor<S>::uniform({k, c}, rng);
      CaseFn<S> op = [](const V& in) { return matmul(in[0], in[1]); };
      Tensor<S> sample = matmul(a, b);
      return {weighted_mean_of<S>(op, sample, rng), {a, b}};
    }
    case Primitive::Transpose: {
      Tensor<S> x = Tensor<S>::uniform({r, c}, rng);
      CaseFn<S> op = [](const V& in) { return transpose(in[0]); };
      return {weighted_mean_of<S>(op, transpose(x), rng), {x}};
    }
    case Primitive::Conv1d: {
      const Eigen::Index T = rnd_dim(rng, 3, 7), c_in = rnd_dim(rng, 1, 3),
                         c_out = rnd_dim(rng, 1, 3);
      const Eigen::Index k = 2 * rnd_dim(rng, 0, 2) + 1;  // 1, 3 or 5
      Tensor<S> x = Tensor<S>::uniform({T, c_in}, rng);
      Tensor<S> w = Tensor<S>::uniform({c_out, c_in * k}, rng);
      CaseFn<S> op = [c_out, k](const V& in) { return conv1d(in[0], in[1], c_out, k); };
      return {weighted_mean_of<S>(op, Tensor<S>::zeros({T, c_out}), rng), {x, w}};
    }
    case Primitive::LayerNorm: {
      Tensor<S> x = with_spread<S>(r, std::max<Eigen::Index>(c, 3), 1, rng);
      Tensor<S> gamma = Tensor<S>::uniform({x.shape[1]}, rng, S(0.5), S(1.5));
      Tensor<S> beta = Tensor<S>::uniform({x.shape[1]}, rng, S(-0.5), S(0.5));
      CaseFn<S> op = [](const V& in) { return layer_norm(in[0], in[1], in[2]); };
      return {weighted_mean_of<S>(op, x, rng), {x, gamma, beta}};
    }
    case Primitive::InstanceNorm: {
      Tensor<S> x = with_spread<S>(std::max<Eigen::Index>(r, 3), c, 0, rng);
      CaseFn<S> op = [](const V& in) { return instance_norm(in[0]); };
      return {weighted_mean_of<S>(op, x, rng), {x}};
    }
    case Primitive::Softmax:
    case Primitive::LogSoftmax: {
      Tensor<S> x = variant % 2 == 0 ? Tensor<S>::uniform({r, c}, rng, S(-2), S(2))
                                     : Tensor<S>::uniform({c}, rng, S(-2), S(2));
      CaseFn<S> op = [kind](const V& in) { return apply_primitive<S>(kind, {in[0]}); };
      return {weighted_mean_of<S>(op, x, rng), {x}};
    }
    case Primitive::Gelu:
    case Primitive::Sigmoid: {
      Tensor<S> x = Tensor<S>::uniform({r, c}, rng, S(-2), S(2));
      CaseFn<S> op = [kind](const V& in) { return apply_primitive<S>(kind, {in[0]}); };
      return {weighted_mean_of<S>(op, x, rng), {x}};
    }
    case Primitive::Relu: {
      Tensor<S> x = away_from_zero<S>({r, c}, rng);
      CaseFn<S> op = [](const V& in) { return relu(in[0]); };
      return {weighted_mean_of<S>(op, x, rng), {x}};
    }
    case Primitive::LogAddExp: {
      Tensor<S> a = Tensor<S>::uniform({r, c}, rng, S(-3), S(3));
      Tensor<S> b = Tensor<S>::uniform({r, c}, rng, S(-3), S(3));
      CaseFn<S> op = [](const V& in) { return logaddexp(in[0], in[1]); };
      return {weighted_mean_of<S>(op, a, rng), {a, b}};
    }
    case Primitive::Concat: {
      const int axis = variant % 2;
      const Eigen::Index r2 = rnd_dim(rng, 1, 4), c2 = rnd_dim(rng, 1, 4);
      Tensor<S> a, b;
      if (axis == 0) {
        a = Tensor<S>::uniform({r, c}, rng);
        b = Tensor<S>::uniform({r2, c}, rng);
      } else {
        a = Tensor<S>::uniform({r, c}, rng);
        b = Tensor<S>::uniform({r, c2}, rng);
      }
      CaseFn<S> op = [axis](const V& in) { return concat<S>({in[0], in[1]}, axis); };
      Tensor<S> sample = concat<S>({a, b}, axis);
      return {weighted_mean_of<S>(op, sample, rng), {a, b}};
    }
    case Primitive::Slice: {
      const Eigen::Index rr = rnd_dim(rng, 2, 6), cc = rnd_dim(rng, 2, 6);
      Tensor<S> x = Tensor<S>::uniform({rr, cc}, rng);
      const Eigen::Index r0 = rnd_dim(rng, 0, int(rr) - 1), c0 = rnd_dim(rng, 0, int(cc) - 1);
      const Eigen::Index r1 = rnd_dim(rng, int(r0) + 1, int(rr)),
                         c1 = rnd_dim(rng, int(c0) + 1, int(cc));
      CaseFn<S> op = [r0, r1, c0, c1](const V& in) { return slice(in[0], r0, r1, c0, c1); };
      Tensor<S> sample = Tensor<S>::zeros({r1 - r0, c1 - c0});
      return {weighted_mean_of<S>(op, sample, rng), {x}};
    }
    case Primitive::Reshape: {
      Tensor<S> x = Tensor<S>::uniform({r, c}, rng);
      Shape target = variant % 2 == 0 ? Shape{c, r} : Shape{r * c};
      CaseFn<S> op = [target](const V& in) { return reshape(in[0], target); };
      Tensor<S> sample = Tensor<S>::zeros(target);
      return {weighted_mean_of<S>(op, sample, rng), {x}};
    }
    case Primitive::Mean: {
      Tensor<S> x = Tensor<S>::uniform({r, c}, rng);
      return {[](const V& in) { return mean(in[0]); }, {x}};
    }
    case Primitive::Sum: {
      Tensor<S> x = Tensor<S>::uniform({r, c}, rng);
      return {[](const V& in) { return sum(in[0]); }, {x}};
    }
    case Primitive::MeanRows: {
      Tensor<S> x = Tensor<S>::uniform({r, c}, rng);
      CaseFn<S> op = [](const V& in) { return mean_rows(in[0]); };
      return {weighted_mean_of<S>(op, Tensor<S>::zeros({c}), rng), {x}};
    }
    case Primitive::L1Distance:
    case Primitive::SquaredDistance: {
      Tensor<S> a = Tensor<S>::uniform({r, c}, rng);
      Tensor<S> offset = away_from_zero<S>({r, c}, rng);
      Tensor<S> b(a.shape, (a.vec() + offset.vec()).eval());
      CaseFn<S> op = [kind](const V& in) { return apply_primitive<S>(kind, {in[0], in[1]}); };
      return {op, {a, b}};
    }
  }
  throw std::logic_error("make_primitive_case: unhandled primitive");
}

/// Central-difference oracle in double precision (1e-6 step). The analytic
/// gradients of the engine under scalar S are compared against it; a
/// same-precision float32 difference oracle would drown gradients that are
/// small relative to the loss in cancellation noise.
template <typename S>
void sweep_case_compare(Primitive kind, int variant, std::mt19937& rng, GradCase& gc) {
  std::mt19937 twin = rng;
  PrimitiveCase<double> cd = make_primitive_case<double>(kind, variant, rng);
  const double eps = 1e-6;
  std::vector<VecX<double>> numeric;
  for (auto& inp : cd.inputs) {
    VecX<double> n(inp.numel());
    for (Eigen::Index j = 0; j < inp.numel(); ++j) {
      double& cell = (*inp.values)[j];
      const double orig = cell;
      cell = orig + eps;
      const double f_plus = cd.fn(cd.inputs).item();
      cell = orig - eps;
      const double f_minus = cd.fn(cd.inputs).item();
      cell = orig;
      n[j] = (f_plus - f_minus) / (2 * eps);
    }
    numeric.push_back(std::move(n));
  }
  PrimitiveCase<S> cs;
  if constexpr (std::is_same_v<S, double>) {
    cs = cd;
  } else {
    // identical RNG stream, so the case mirrors cd exactly up to rounding
    cs = make_primitive_case<S>(kind, variant, twin);
  }
  for (auto& t : cs.inputs) t.requires_grad = true;
  std::vector<VecX<S>> analytic;
  {
    Tape<S> tape;
    TapeScope<S> scope(tape);
    Tensor<S> loss = cs.fn(cs.inputs);
    tape.backward(loss);
    for (auto& t : cs.inputs) analytic.push_back(tape.gradient(t));
  }
  ++gc.cases;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    for (Eigen::Index j = 0; j < analytic[i].size(); ++j) {
      const double a = double(analytic[i][j]);
      const double n = numeric[i][j];
      const double rel = std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
      if (rel > gc.max_rel_err) {
        gc.max_rel_err = rel;
        gc.worst = "variant " + std::to_string(variant) + " input " + std::to_string(i) + " [" +
                   std::to_string(j) + "] analytic=" + std::to_string(a) +
                   " numeric=" + std::to_string(n);
      }
    }
  }
}

}  // namespace detail

inline const std::vector<Primitive>& all_primitives() {
  static const std::vector<Primitive> ps = {
      Primitive::Add,         Primitive::Sub,        Primitive::Mul,
      Primitive::Scale,       Primitive::MatMul,     Primitive::Transpose,
      Primitive::Conv1d,      Primitive::LayerNorm,  Primitive::InstanceNorm,
      Primitive::Softmax,     Primitive::LogSoftmax, Primitive::Gelu,
      Primitive::Relu,        Primitive::Sigmoid,    Primitive::LogAddExp,
      Primitive::Concat,      Primitive::Slice,      Primitive::Reshape,
      Primitive::Mean,        Primitive::Sum,        Primitive::MeanRows,
      Primitive::L1Distance,  Primitive::SquaredDistance,
  };
  return ps;
}

/// Gradient-checks every primitive on random small shapes. One aggregated
/// entry per primitive: max relative error across shapes_per_primitive cases
/// under each of num_seeds seeds.
template <typename S>
std::vector<GradCase> primitive_grad_sweep(int shapes_per_primitive, int num_seeds) {
  std::vector<GradCase> out;
  for (Primitive kind : all_primitives()) {
    GradCase gc;
    gc.name = primitive_name(kind);
    for (int seed = 0; seed < num_seeds; ++seed) {
      std::mt19937 rng(0x5eedu + 977u * unsigned(seed));
      for (int v = 0; v < shapes_per_primitive; ++v)
        detail::sweep_case_compare<S>(kind, v, rng, gc);
    }
    out.push_back(std::move(gc));
  }
  return out;
}

template <typename S>
constexpr double primitive_sweep_tolerance() {
  if constexpr (std::is_same_v<S, float>) return 1e-3;
  return 1e-5;
}

}  // namespace rsvc
