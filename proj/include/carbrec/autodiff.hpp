#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Rows are batch entries throughout the model code.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "carbrec/kernels.hpp"

namespace carbrec::ad {

using Rng = std::mt19937_64;

/// Uniform double in [0, 1) built from the top 53 bits of one draw.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const noexcept { return rows * cols; }
  friend bool operator==(const Shape&, const Shape&) = default;
};
std::string to_string(Shape s);

/// A value matrix with an optional gradient of the same shape.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0) : shape(s), data(s.size(), fill) {}
  Tensor(Shape s, std::vector<double> values);

  double& at(std::size_t r, std::size_t c) { return data[r * shape.cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * shape.cols + c]; }
  void zero_grad() { grad.assign(data.size(), 0.0); }
};

struct ParamId {
  std::uint32_t index = 0;
  friend bool operator==(const ParamId&, const ParamId&) = default;
};

struct ParamSlot {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
};

/// Named parameter matrices packed into one flat buffer, so the optimizer,
/// gradient buffers and checkpoints all work on contiguous memory.
class ParameterStore {
 public:
  ParamId add(std::string name, Shape shape);

  std::size_t size() const noexcept { return values_.size(); }
  std::size_t count() const noexcept { return slots_.size(); }
  const std::vector<ParamSlot>& slots() const noexcept { return slots_; }
  const ParamSlot& slot(ParamId id) const { return slots_.at(id.index); }
  ParamId find(std::string_view name) const;  // throws ContractError when absent

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values(ParamId id);
  std::span<const double> values(ParamId id) const;

 private:
  std::vector<ParamSlot> slots_;
  std::vector<double> values_;
  std::unordered_map<std::string, std::uint32_t> by_name_;
};

struct Var {
  std::uint32_t id = 0;
  friend bool operator==(const Var&, const Var&) = default;
};

/// Records operations in topological order and replays them backwards.
///
/// Spans returned by value()/grad() are invalidated by the next recorded op.
/// A Graph is single-threaded; the kernels it calls may use OpenMP.
class Graph {
 public:
  explicit Graph(kernels::Policy policy = kernels::Policy::parallel) : policy_(policy) {}

  void clear();
  kernels::Policy policy() const noexcept { return policy_; }

  Var constant(Shape shape, std::span<const double> values);
  Var constant(const Tensor& t) { return constant(t.shape, t.data); }
  Var zeros(Shape shape);
  /// Leaf bound to a parameter. Repeated calls for the same parameter return
  /// the same node so its gradient accumulates once.
  Var parameter(const ParameterStore& store, ParamId id);

  Var matmul(Var a, Var b);
  /// Elementwise add; `b` may also be a 1 x cols row broadcast over rows.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  /// Concatenation along columns; all parts share the row count.
  Var concat(std::span<const Var> parts);
  Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }
  /// Columns [begin, end).
  Var slice(Var a, std::size_t begin, std::size_t end);
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var relu(Var a);
  /// x * w + b with b a 1 x out row.
  Var linear(Var x, Var w, Var b);
  /// Inverted dropout: zero with probability `rate`, survivors scaled by
  /// 1 / (1 - rate). Returns `x` itself in eval mode or when rate == 0.
  Var dropout(Var x, double rate, bool train, Rng& rng);
  /// Mean over all elements of (pred - target)^2, as a 1 x 1 node.
  Var mse_loss(Var pred, Var target);
  /// Sum of all elements, as a 1 x 1 node.
  Var sum(Var a);

  Shape shape(Var v) const { return nodes_.at(v.id).shape; }
  std::span<const double> value(Var v) const;
  std::span<const double> grad(Var v) const;
  double scalar(Var v) const;
  Tensor tensor(Var v) const;
  std::size_t node_count() const noexcept { return nodes_.size(); }

  /// Back-propagates from a 1 x 1 node. Parameter gradients are added into
  /// `param_grads`, which must have the size of the parameter store(s) used.
  /// Throws ContractError for a non-scalar loss.
  void backward(Var loss, std::span<double> param_grads);

 private:
  enum class Op : std::uint8_t {
    constant, parameter, matmul, add, add_row, sub, mul, scale, concat, slice,
    sigmoid, tanh, relu, linear, dropout, mse, sum
  };
  struct Node {
    Op op;
    Shape shape;
    std::size_t offset;        // into values_/grads_
    std::uint32_t a = 0, b = 0, c = 0;
    std::size_t aux = 0;       // slice begin / mask offset / param offset / concat list start
    std::size_t aux2 = 0;      // concat list length
    double scalar = 0.0;
  };

  Var push(Op op, Shape shape);
  double* data(std::uint32_t id) { return values_.data() + nodes_[id].offset; }
  const double* data(std::uint32_t id) const { return values_.data() + nodes_[id].offset; }
  double* gdata(std::uint32_t id) { return grads_.data() + nodes_[id].offset; }
  void check_same(const char* op, Var a, Var b) const;

  kernels::Policy policy_;
  std::vector<Node> nodes_;
  std::vector<double> values_;
  std::vector<double> grads_;
  std::vector<double> masks_;
  std::vector<std::uint32_t> lists_;
  std::unordered_map<std::uint64_t, Var> param_nodes_;
};

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment estimates for every scalar of a ParameterStore.
struct AdamState {
  AdamConfig config;
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;

  AdamState() = default;
  AdamState(AdamConfig cfg, std::size_t n) : config(cfg), m(n, 0.0), v(n, 0.0) {}
};

/// Applies one Adam update in place and zeroes `grads`.
void adam_step(std::span<double> params, std::span<double> grads, AdamState& state,
               kernels::Policy policy = kernels::Policy::parallel);

}  // namespace carbrec::ad
