#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace rsvc {

template <typename Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Shape = std::vector<Eigen::Index>;

inline Eigen::Index shape_numel(const Shape& shape) {
  Eigen::Index n = 1;
  for (Eigen::Index d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Identifiers for the differentiable primitives the tape can record.
enum class Primitive {
  Add,
  Sub,
  Mul,
  Scale,
  MatMul,
  Transpose,
  Conv1d,
  LayerNorm,
  InstanceNorm,
  Softmax,
  LogSoftmax,
  Gelu,
  Relu,
  Sigmoid,
  LogAddExp,
  Concat,
  Slice,
  Reshape,
  Mean,
  Sum,
  MeanRows,
  L1Distance,
  SquaredDistance,
};

inline const char* primitive_name(Primitive p) {
  switch (p) {
    case Primitive::Add: return "add";
    case Primitive::Sub: return "sub";
    case Primitive::Mul: return "mul";
    case Primitive::Scale: return "scale";
    case Primitive::MatMul: return "matmul";
    case Primitive::Transpose: return "transpose";
    case Primitive::Conv1d: return "conv1d";
    case Primitive::LayerNorm: return "layer_norm";
    case Primitive::InstanceNorm: return "instance_norm";
    case Primitive::Softmax: return "softmax";
    case Primitive::LogSoftmax: return "log_softmax";
    case Primitive::Gelu: return "gelu";
    case Primitive::Relu: return "relu";
    case Primitive::Sigmoid: return "sigmoid";
    case Primitive::LogAddExp: return "logaddexp";
    case Primitive::Concat: return "concat";
    case Primitive::Slice: return "slice";
    case Primitive::Reshape: return "reshape";
    case Primitive::Mean: return "mean";
    case Primitive::Sum: return "sum";
    case Primitive::MeanRows: return "mean_rows";
    case Primitive::L1Distance: return "l1_distance";
    case Primitive::SquaredDistance: return "squared_distance";
  }
  return "unknown";
}

template <typename Scalar>
class Tape;

/// Dense n-d array participating in a differentiable computation graph.
///
/// Copies are shallow: they share the value buffer, so a parameter and its
/// copies are updated together. Data is flat row-major; rank-2 tensors map
/// onto Eigen matrices via mat().
template <typename Scalar>
struct Tensor {
  Shape shape;
  std::shared_ptr<VecX<Scalar>> values;
  bool requires_grad = false;
  int node_id = -1;          // slot on the tape identified by tape_id
  std::uint64_t tape_id = 0; // 0 = not recorded anywhere

  Tensor() = default;
  Tensor(Shape s, VecX<Scalar> v, bool rg = false)
      : shape(std::move(s)),
        values(std::make_shared<VecX<Scalar>>(std::move(v))),
        requires_grad(rg) {
    if (values->size() != shape_numel(shape))
      throw std::invalid_argument("tensor value count " + std::to_string(values->size()) +
                                  " does not match shape " + shape_str(shape));
  }

  static Tensor zeros(Shape s, bool rg = false) {
    const Eigen::Index n = shape_numel(s);
    return Tensor(std::move(s), VecX<Scalar>::Zero(n), rg);
  }
  static Tensor full(Shape s, Scalar v, bool rg = false) {
    const Eigen::Index n = shape_numel(s);
    return Tensor(std::move(s), VecX<Scalar>::Constant(n, v), rg);
  }
  static Tensor ones(Shape s, bool rg = false) { return full(std::move(s), Scalar(1), rg); }
  static Tensor scalar(Scalar v, bool rg = false) { return full({1}, v, rg); }
  static Tensor from(Shape s, const std::vector<Scalar>& v, bool rg = false) {
    return Tensor(std::move(s), Eigen::Map<const VecX<Scalar>>(v.data(), Eigen::Index(v.size())), rg);
  }
  static Tensor uniform(Shape s, std::mt19937& rng, Scalar lo = Scalar(-1), Scalar hi = Scalar(1),
                        bool rg = false) {
    std::uniform_real_distribution<double> dist{double(lo), double(hi)};
    VecX<Scalar> v(shape_numel(s));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = Scalar(dist(rng));
    return Tensor(std::move(s), std::move(v), rg);
  }
  static Tensor normal(Shape s, std::mt19937& rng, Scalar mean = Scalar(0), Scalar stddev = Scalar(1),
                       bool rg = false) {
    std::normal_distribution<double> dist{double(mean), double(stddev)};
    VecX<Scalar> v(shape_numel(s));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = Scalar(dist(rng));
    return Tensor(std::move(s), std::move(v), rg);
  }

  Eigen::Index numel() const { return values ? values->size() : 0; }
  Eigen::Index rank() const { return Eigen::Index(shape.size()); }
  bool is_scalar() const { return numel() == 1; }
  Eigen::Index rows() const { return shape.size() == 2 ? shape[0] : (shape.empty() ? 0 : 1); }
  Eigen::Index cols() const { return shape.size() == 2 ? shape[1] : (shape.empty() ? 0 : shape.back()); }

  Scalar* data() { return values->data(); }
  const Scalar* data() const { return values->data(); }
  Scalar item() const {
    if (!is_scalar()) throw std::invalid_argument("item() on non-scalar tensor " + shape_str(shape));
    return (*values)[0];
  }
  const VecX<Scalar>& vec() const { return *values; }
  VecX<Scalar>& vec() { return *values; }

  Eigen::Map<const MatX<Scalar>> mat() const {
    if (shape.size() != 2)
      throw std::invalid_argument("mat() needs a rank-2 tensor, got " + shape_str(shape));
    return Eigen::Map<const MatX<Scalar>>(values->data(), shape[0], shape[1]);
  }
  Eigen::Map<MatX<Scalar>> mat() {
    if (shape.size() != 2)
      throw std::invalid_argument("mat() needs a rank-2 tensor, got " + shape_str(shape));
    return Eigen::Map<MatX<Scalar>>(values->data(), shape[0], shape[1]);
  }

  /// Value-only copy with its own buffer; gradients never flow through it.
  Tensor detach() const {
    Tensor t;
    t.shape = shape;
    t.values = std::make_shared<VecX<Scalar>>(*values);
    t.requires_grad = false;
    return t;
  }

  bool all_finite() const { return values->allFinite(); }
};

template <typename Scalar>
using NamedTensors = std::vector<std::pair<std::string, Tensor<Scalar>>>;

/// Define-by-run record of primitive applications. A fresh tape is opened per
/// training step; backward replays the record in exact reverse order.
template <typename Scalar>
class Tape {
 public:
  Tape() : id_(next_id()++) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t id() const { return id_; }
  std::size_t num_applications() const { return nodes_.size(); }
  std::size_t num_slots() const { return slots_.size(); }
  void set_check_finite(bool on) { check_finite_ = on; }

  /// Slot id for a tensor already known to this tape, registering it as a
  /// leaf otherwise. Buffer identity ties parameter copies to one slot.
  int ensure_slot(const Tensor<Scalar>& t) {
    if (t.tape_id == id_ && t.node_id >= 0) return t.node_id;
    auto it = by_buffer_.find(static_cast<const void*>(t.values.get()));
    if (it != by_buffer_.end()) return it->second;
    return add_slot(t);
  }

  int add_slot(const Tensor<Scalar>& t) {
    int id = int(slots_.size());
    slots_.push_back(Slot{t.shape, t.values, t.requires_grad});
    by_buffer_[static_cast<const void*>(t.values.get())] = id;
    return id;
  }

  void record(Primitive kind, std::vector<int> inputs, int output,
              std::function<void(Tape&)> backward) {
    if (check_finite_ && !slots_[std::size_t(output)].values->allFinite())
      throw std::runtime_error(std::string("non-finite value produced by primitive '") +
                               primitive_name(kind) + "' at tape node " +
                               std::to_string(nodes_.size()));
    nodes_.push_back(Node{kind, std::move(inputs), output, std::move(backward)});
  }

  /// Reverse sweep from a scalar loss. Every requires_grad leaf reachable
  /// from the loss receives a gradient; unreachable leaves read back as zero.
  void backward(const Tensor<Scalar>& loss) {
    if (!loss.is_scalar())
      throw std::invalid_argument("backward() needs a scalar loss, got " + shape_str(loss.shape));
    if (loss.tape_id != id_ || loss.node_id < 0)
      throw std::invalid_argument("backward() loss is not connected to the active tape");
    adjoints_.assign(slots_.size(), VecX<Scalar>());
    adjoints_[std::size_t(loss.node_id)] = VecX<Scalar>::Ones(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (adjoints_[std::size_t(it->output)].size() == 0) continue;  // not on the loss path
      it->backward(*this);
      if (check_finite_) {
        for (int in : it->inputs) {
          const auto& a = adjoints_[std::size_t(in)];
          if (a.size() != 0 && !a.allFinite())
            throw std::runtime_error(std::string("non-finite gradient from primitive '") +
                                     primitive_name(it->kind) + "' into tape node " +
                                     std::to_string(in));
        }
      }
    }
  }

  const VecX<Scalar>& adjoint(int id) const { return adjoints_[std::size_t(id)]; }

  template <typename Expr>
  void accumulate(int id, const Expr& delta) {
    Slot& s = slots_[std::size_t(id)];
    if (!s.requires_grad) return;  // requires_grad=false leaves never accumulate
    VecX<Scalar>& a = adjoints_[std::size_t(id)];
    if (a.size() == 0) a = VecX<Scalar>::Zero(shape_numel(s.shape));
    a += delta;
  }

  /// Gradient of the last backward() w.r.t. a tensor; zeros when the tensor
  /// is unknown to the tape or unreachable from the loss.
  VecX<Scalar> gradient(const Tensor<Scalar>& t) const {
    int id = -1;
    if (t.tape_id == id_ && t.node_id >= 0) {
      id = t.node_id;
    } else {
      auto it = by_buffer_.find(static_cast<const void*>(t.values.get()));
      if (it != by_buffer_.end()) id = it->second;
    }
    if (id < 0 || std::size_t(id) >= adjoints_.size() || adjoints_[std::size_t(id)].size() == 0)
      return VecX<Scalar>::Zero(t.numel());
    return adjoints_[std::size_t(id)];
  }

  const Shape& slot_shape(int id) const { return slots_[std::size_t(id)].shape; }
  const VecX<Scalar>& slot_values(int id) const { return *slots_[std::size_t(id)].values; }

 private:
  struct Slot {
    Shape shape;
    std::shared_ptr<VecX<Scalar>> values;  // saved activation
    bool requires_grad = false;
  };
  struct Node {
    Primitive kind;
    std::vector<int> inputs;
    int output;
    std::function<void(Tape&)> backward;
  };

  static std::uint64_t& next_id() {
    static std::uint64_t n = 1;
    return n;
  }

  std::uint64_t id_;
  bool check_finite_ = false;
  std::vector<Slot> slots_;
  std::vector<Node> nodes_;
  std::vector<VecX<Scalar>> adjoints_;
  std::unordered_map<const void*, int> by_buffer_;
};

template <typename Scalar>
inline Tape<Scalar>*& active_tape() {
  thread_local Tape<Scalar>* tape = nullptr;
  return tape;
}

/// RAII scope making a tape the recording target for the current thread.
template <typename Scalar>
class TapeScope {
 public:
  explicit TapeScope(Tape<Scalar>& tape) : prev_(active_tape<Scalar>()) {
    active_tape<Scalar>() = &tape;
  }
  ~TapeScope() { active_tape<Scalar>() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<Scalar>* prev_;
};

}  // namespace rsvc
