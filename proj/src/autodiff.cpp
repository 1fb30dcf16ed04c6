#include "carbrec/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "carbrec/error.hpp"

namespace carbrec::ad {

using kernels::for_each_index;

std::string to_string(Shape s) {
  std::ostringstream os;
  os << "(" << s.rows << "x" << s.cols << ")";
  return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(s), data(std::move(values)) {
  if (data.size() != shape.size()) {
    throw ShapeError("tensor: " + std::to_string(data.size()) + " values for shape " + to_string(shape));
  }
}

ParamId ParameterStore::add(std::string name, Shape shape) {
  if (by_name_.contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
  const auto index = static_cast<std::uint32_t>(slots_.size());
  by_name_.emplace(name, index);
  slots_.push_back({std::move(name), shape, values_.size()});
  values_.resize(values_.size() + shape.size(), 0.0);
  return ParamId{index};
}

ParamId ParameterStore::find(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) throw ContractError("unknown parameter '" + std::string(name) + "'");
  return ParamId{it->second};
}

std::span<double> ParameterStore::values(ParamId id) {
  const auto& s = slots_.at(id.index);
  return std::span<double>(values_).subspan(s.offset, s.shape.size());
}

std::span<const double> ParameterStore::values(ParamId id) const {
  const auto& s = slots_.at(id.index);
  return std::span<const double>(values_).subspan(s.offset, s.shape.size());
}

void Graph::clear() {
  nodes_.clear();
  values_.clear();
  grads_.clear();
  masks_.clear();
  lists_.clear();
  param_nodes_.clear();
}

Var Graph::push(Op op, Shape shape) {
  Node n{};
  n.op = op;
  n.shape = shape;
  n.offset = values_.size();
  values_.resize(values_.size() + shape.size());
  nodes_.push_back(n);
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Graph::check_same(const char* op, Var a, Var b) const {
  if (shape(a) != shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(shape(a)) + " vs " + to_string(shape(b)));
  }
}

Var Graph::constant(Shape s, std::span<const double> values) {
  if (values.size() != s.size()) {
    throw ShapeError("constant: " + std::to_string(values.size()) + " values for shape " + to_string(s));
  }
  Var v = push(Op::constant, s);
  std::copy(values.begin(), values.end(), data(v.id));
  return v;
}

Var Graph::zeros(Shape s) {
  Var v = push(Op::constant, s);
  std::fill_n(data(v.id), s.size(), 0.0);
  return v;
}

Var Graph::parameter(const ParameterStore& store, ParamId id) {
  const std::uint64_t key = (reinterpret_cast<std::uintptr_t>(&store) << 20) ^ id.index;
  if (auto it = param_nodes_.find(key); it != param_nodes_.end()) return it->second;
  const auto& slot = store.slot(id);
  Var v = push(Op::parameter, slot.shape);
  nodes_[v.id].aux = slot.offset;
  auto src = store.values(id);
  std::copy(src.begin(), src.end(), data(v.id));
  param_nodes_.emplace(key, v);
  return v;
}

Var Graph::matmul(Var a, Var b) {
  const Shape sa = shape(a), sb = shape(b);
  if (sa.cols != sb.rows) {
    throw ShapeError("matmul: inner dimensions differ " + to_string(sa) + " * " + to_string(sb));
  }
  Var v = push(Op::matmul, {sa.rows, sb.cols});
  nodes_[v.id].a = a.id;
  nodes_[v.id].b = b.id;
  kernels::gemm(policy_, data(a.id), data(b.id), data(v.id), sa.rows, sa.cols, sb.cols, false);
  return v;
}

Var Graph::add(Var a, Var b) {
  const Shape sa = shape(a), sb = shape(b);
  if (sb.rows == 1 && sa.rows != 1 && sb.cols == sa.cols) {
    Var v = push(Op::add_row, sa);
    nodes_[v.id].a = a.id;
    nodes_[v.id].b = b.id;
    const double* x = data(a.id);
    const double* r = data(b.id);
    double* y = data(v.id);
    const std::size_t cols = sa.cols;
    for_each_index(policy_, sa.size(), [=](std::size_t i) { y[i] = x[i] + r[i % cols]; });
    return v;
  }
  check_same("add", a, b);
  Var v = push(Op::add, sa);
  nodes_[v.id].a = a.id;
  nodes_[v.id].b = b.id;
  const double* x = data(a.id);
  const double* z = data(b.id);
  double* y = data(v.id);
  for_each_index(policy_, sa.size(), [=](std::size_t i) { y[i] = x[i] + z[i]; });
  return v;
}

Var Graph::sub(Var a, Var b) {
  check_same("sub", a, b);
  Var v = push(Op::sub, shape(a));
  nodes_[v.id].a = a.id;
  nodes_[v.id].b = b.id;
  const double* x = data(a.id);
  const double* z = data(b.id);
  double* y = data(v.id);
  for_each_index(policy_, shape(a).size(), [=](std::size_t i) { y[i] = x[i] - z[i]; });
  return v;
}

Var Graph::mul(Var a, Var b) {
  check_same("mul", a, b);
  Var v = push(Op::mul, shape(a));
  nodes_[v.id].a = a.id;
  nodes_[v.id].b = b.id;
  const double* x = data(a.id);
  const double* z = data(b.id);
  double* y = data(v.id);
  for_each_index(policy_, shape(a).size(), [=](std::size_t i) { y[i] = x[i] * z[i]; });
  return v;
}

Var Graph::scale(Var a, double factor) {
  Var v = push(Op::scale, shape(a));
  nodes_[v.id].a = a.id;
  nodes_[v.id].scalar = factor;
  const double* x = data(a.id);
  double* y = data(v.id);
  for_each_index(policy_, shape(a).size(), [=](std::size_t i) { y[i] = factor * x[i]; });
  return v;
}

Var Graph::concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const std::size_t rows = shape(parts[0]).rows;
  std::size_t cols = 0;
  for (Var p : parts) {
    if (shape(p).rows != rows) {
      throw ShapeError("concat: row mismatch " + to_string(shape(parts[0])) + " vs " + to_string(shape(p)));
    }
    cols += shape(p).cols;
  }
  const std::size_t list_start = lists_.size();
  for (Var p : parts) lists_.push_back(p.id);
  Var v = push(Op::concat, {rows, cols});
  nodes_[v.id].aux = list_start;
  nodes_[v.id].aux2 = parts.size();
  double* y = data(v.id);
  std::size_t col0 = 0;
  for (Var p : parts) {
    const std::size_t pc = shape(p).cols;
    const double* x = data(p.id);
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(x + r * pc, pc, y + r * cols + col0);
    col0 += pc;
  }
  return v;
}

Var Graph::slice(Var a, std::size_t begin, std::size_t end) {
  const Shape sa = shape(a);
  if (begin >= end || end > sa.cols) {
    throw ShapeError("slice: columns [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of " +
                     to_string(sa));
  }
  const std::size_t w = end - begin;
  Var v = push(Op::slice, {sa.rows, w});
  nodes_[v.id].a = a.id;
  nodes_[v.id].aux = begin;
  const double* x = data(a.id);
  double* y = data(v.id);
  for (std::size_t r = 0; r < sa.rows; ++r) std::copy_n(x + r * sa.cols + begin, w, y + r * w);
  return v;
}

Var Graph::sigmoid(Var a) {
  Var v = push(Op::sigmoid, shape(a));
  nodes_[v.id].a = a.id;
  const double* x = data(a.id);
  double* y = data(v.id);
  for_each_index(policy_, shape(a).size(), [=](std::size_t i) { y[i] = 1.0 / (1.0 + std::exp(-x[i])); });
  return v;
}

Var Graph::tanh(Var a) {
  Var v = push(Op::tanh, shape(a));
  nodes_[v.id].a = a.id;
  const double* x = data(a.id);
  double* y = data(v.id);
  for_each_index(policy_, shape(a).size(), [=](std::size_t i) { y[i] = std::tanh(x[i]); });
  return v;
}

Var Graph::relu(Var a) {
  Var v = push(Op::relu, shape(a));
  nodes_[v.id].a = a.id;
  const double* x = data(a.id);
  double* y = data(v.id);
  for_each_index(policy_, shape(a).size(), [=](std::size_t i) { y[i] = x[i] > 0.0 ? x[i] : 0.0; });
  return v;
}

Var Graph::linear(Var x, Var w, Var b) {
  const Shape sx = shape(x), sw = shape(w), sb = shape(b);
  if (sx.cols != sw.rows || sb.rows != 1 || sb.cols != sw.cols) {
    throw ShapeError("linear: incompatible shapes x" + to_string(sx) + " w" + to_string(sw) + " b" +
                     to_string(sb));
  }
  Var v = push(Op::linear, {sx.rows, sw.cols});
  nodes_[v.id].a = x.id;
  nodes_[v.id].b = w.id;
  nodes_[v.id].c = b.id;
  double* y = data(v.id);
  const double* bias = data(b.id);
  for (std::size_t r = 0; r < sx.rows; ++r) std::copy_n(bias, sw.cols, y + r * sw.cols);
  kernels::gemm(policy_, data(x.id), data(w.id), y, sx.rows, sx.cols, sw.cols, true);
  return v;
}

Var Graph::dropout(Var x, double rate, bool train, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout: rate must be in [0, 1)");
  if (!train || rate == 0.0) return x;
  const std::size_t n = shape(x).size();
  Var v = push(Op::dropout, shape(x));
  nodes_[v.id].a = x.id;
  nodes_[v.id].aux = masks_.size();
  const double keep_scale = 1.0 / (1.0 - rate);
  masks_.resize(masks_.size() + n);
  double* mask = masks_.data() + nodes_[v.id].aux;
  for (std::size_t i = 0; i < n; ++i) mask[i] = uniform01(rng) < rate ? 0.0 : keep_scale;
  const double* xs = data(x.id);
  double* y = data(v.id);
  for (std::size_t i = 0; i < n; ++i) y[i] = xs[i] * mask[i];
  return v;
}

Var Graph::mse_loss(Var pred, Var target) {
  check_same("mse_loss", pred, target);
  Var v = push(Op::mse, {1, 1});
  nodes_[v.id].a = pred.id;
  nodes_[v.id].b = target.id;
  const double* p = data(pred.id);
  const double* t = data(target.id);
  const std::size_t n = shape(pred).size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = p[i] - t[i];
    s += d * d;
  }
  data(v.id)[0] = n == 0 ? 0.0 : s / static_cast<double>(n);
  return v;
}

Var Graph::sum(Var a) {
  Var v = push(Op::sum, {1, 1});
  nodes_[v.id].a = a.id;
  const double* x = data(a.id);
  double s = 0.0;
  for (std::size_t i = 0; i < shape(a).size(); ++i) s += x[i];
  data(v.id)[0] = s;
  return v;
}

std::span<const double> Graph::value(Var v) const {
  return {values_.data() + nodes_.at(v.id).offset, nodes_[v.id].shape.size()};
}

std::span<const double> Graph::grad(Var v) const {
  if (grads_.size() != values_.size()) throw ContractError("grad: backward has not run");
  return {grads_.data() + nodes_.at(v.id).offset, nodes_[v.id].shape.size()};
}

double Graph::scalar(Var v) const {
  if (shape(v) != Shape{1, 1}) throw ContractError("scalar: node is " + to_string(shape(v)));
  return value(v)[0];
}

Tensor Graph::tensor(Var v) const {
  auto s = value(v);
  return Tensor(shape(v), std::vector<double>(s.begin(), s.end()));
}

void Graph::backward(Var loss, std::span<double> param_grads) {
  if (shape(loss) != Shape{1, 1}) {
    throw ContractError("backward: loss must be a scalar node, got " + to_string(shape(loss)));
  }
  grads_.assign(values_.size(), 0.0);
  gdata(loss.id)[0] = 1.0;
  const auto pol = policy_;

  for (std::size_t idx = loss.id + 1; idx-- > 0;) {
    const Node& n = nodes_[idx];
    const std::size_t size = n.shape.size();
    const double* gy = grads_.data() + n.offset;
    const double* y = values_.data() + n.offset;
    switch (n.op) {
      case Op::constant:
        break;
      case Op::parameter: {
        if (n.aux + size > param_grads.size()) {
          throw ContractError("backward: parameter gradient buffer too small");
        }
        double* dst = param_grads.data() + n.aux;
        for (std::size_t i = 0; i < size; ++i) dst[i] += gy[i];
        break;
      }
      case Op::matmul: {
        const Shape sa = nodes_[n.a].shape, sb = nodes_[n.b].shape;
        kernels::gemm_nt(pol, gy, data(n.b), gdata(n.a), sa.rows, sb.cols, sb.rows);
        kernels::gemm_tn(pol, data(n.a), gy, gdata(n.b), sa.rows, sa.cols, sb.cols);
        break;
      }
      case Op::linear: {
        const Shape sx = nodes_[n.a].shape, sw = nodes_[n.b].shape;
        kernels::gemm_nt(pol, gy, data(n.b), gdata(n.a), sx.rows, sw.cols, sw.rows);
        kernels::gemm_tn(pol, data(n.a), gy, gdata(n.b), sx.rows, sx.cols, sw.cols);
        double* gb = gdata(n.c);
        for (std::size_t r = 0; r < sx.rows; ++r) {
          for (std::size_t c = 0; c < sw.cols; ++c) gb[c] += gy[r * sw.cols + c];
        }
        break;
      }
      case Op::add: {
        double* ga = gdata(n.a);
        double* gb = gdata(n.b);
        for_each_index(pol, size, [=](std::size_t i) {
          ga[i] += gy[i];
          gb[i] += gy[i];
        });
        break;
      }
      case Op::add_row: {
        double* ga = gdata(n.a);
        double* gb = gdata(n.b);
        for_each_index(pol, size, [=](std::size_t i) { ga[i] += gy[i]; });
        const std::size_t cols = n.shape.cols;
        for (std::size_t r = 0; r < n.shape.rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) gb[c] += gy[r * cols + c];
        }
        break;
      }
      case Op::sub: {
        double* ga = gdata(n.a);
        double* gb = gdata(n.b);
        for_each_index(pol, size, [=](std::size_t i) {
          ga[i] += gy[i];
          gb[i] -= gy[i];
        });
        break;
      }
      case Op::mul: {
        double* ga = gdata(n.a);
        double* gb = gdata(n.b);
        const double* xa = data(n.a);
        const double* xb = data(n.b);
        if (n.a == n.b) {
          for_each_index(pol, size, [=](std::size_t i) { ga[i] += 2.0 * gy[i] * xa[i]; });
        } else {
          for_each_index(pol, size, [=](std::size_t i) {
            ga[i] += gy[i] * xb[i];
            gb[i] += gy[i] * xa[i];
          });
        }
        break;
      }
      case Op::scale: {
        double* ga = gdata(n.a);
        const double f = n.scalar;
        for_each_index(pol, size, [=](std::size_t i) { ga[i] += f * gy[i]; });
        break;
      }
      case Op::concat: {
        const std::size_t cols = n.shape.cols;
        std::size_t col0 = 0;
        for (std::size_t k = 0; k < n.aux2; ++k) {
          const std::uint32_t part = lists_[n.aux + k];
          const std::size_t pc = nodes_[part].shape.cols;
          double* gp = gdata(part);
          for (std::size_t r = 0; r < n.shape.rows; ++r) {
            for (std::size_t c = 0; c < pc; ++c) gp[r * pc + c] += gy[r * cols + col0 + c];
          }
          col0 += pc;
        }
        break;
      }
      case Op::slice: {
        const std::size_t src_cols = nodes_[n.a].shape.cols;
        const std::size_t w = n.shape.cols;
        double* ga = gdata(n.a);
        for (std::size_t r = 0; r < n.shape.rows; ++r) {
          for (std::size_t c = 0; c < w; ++c) ga[r * src_cols + n.aux + c] += gy[r * w + c];
        }
        break;
      }
      case Op::sigmoid: {
        double* ga = gdata(n.a);
        for_each_index(pol, size, [=](std::size_t i) { ga[i] += gy[i] * y[i] * (1.0 - y[i]); });
        break;
      }
      case Op::tanh: {
        double* ga = gdata(n.a);
        for_each_index(pol, size, [=](std::size_t i) { ga[i] += gy[i] * (1.0 - y[i] * y[i]); });
        break;
      }
      case Op::relu: {
        double* ga = gdata(n.a);
        const double* x = data(n.a);
        for_each_index(pol, size, [=](std::size_t i) { ga[i] += x[i] > 0.0 ? gy[i] : 0.0; });
        break;
      }
      case Op::dropout: {
        double* ga = gdata(n.a);
        const double* mask = masks_.data() + n.aux;
        for_each_index(pol, size, [=](std::size_t i) { ga[i] += gy[i] * mask[i]; });
        break;
      }
      case Op::mse: {
        const std::size_t m = nodes_[n.a].shape.size();
        if (m == 0) break;
        double* gp = gdata(n.a);
        double* gt = gdata(n.b);
        const double* p = data(n.a);
        const double* t = data(n.b);
        const double f = 2.0 * gy[0] / static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i) {
          const double d = f * (p[i] - t[i]);
          gp[i] += d;
          gt[i] -= d;
        }
        break;
      }
      case Op::sum: {
        double* ga = gdata(n.a);
        const std::size_t m = nodes_[n.a].shape.size();
        for (std::size_t i = 0; i < m; ++i) ga[i] += gy[0];
        break;
      }
    }
  }
}

void adam_step(std::span<double> params, std::span<double> grads, AdamState& state, kernels::Policy policy) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: parameter, gradient and moment sizes differ");
  }
  state.step += 1;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const kernels::AdamCoefficients coef{c.lr, c.beta1, c.beta2, c.eps, 1.0 - std::pow(c.beta1, t),
                                       1.0 - std::pow(c.beta2, t)};
  kernels::adam_update(policy, params, grads, state.m, state.v, coef);
  std::fill(grads.begin(), grads.end(), 0.0);
}

}  // namespace carbrec::ad
