#include "kvmn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kvmn/error.hpp"

namespace kvmn {

std::string_view op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Param: return "param";
    case Op::MatMul: return "matmul";
    case Op::Add: return "add";
    case Op::Mul: return "mul";
    case Op::Tanh: return "tanh";
    case Op::Sigmoid: return "sigmoid";
    case Op::Softmax: return "softmax";
    case Op::LogSoftmax: return "log_softmax";
    case Op::Concat: return "concat";
    case Op::WeightedSum: return "weighted_sum";
    case Op::Mean: return "mean";
    case Op::Log: return "log";
    case Op::Negate: return "negate";
    case Op::Sum: return "sum";
    case Op::Scale: return "scale";
    case Op::Gather: return "gather";
    case Op::Stack: return "stack";
    case Op::Transpose: return "transpose";
  }
  return "unknown";
}

namespace {

std::size_t last_dim(const Tensor& t) { return t.dims().back(); }

[[noreturn]] void shape_fail(Op op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op_name(op)) + ": incompatible shapes " + shape_string(a.dims()) + " and " +
                   shape_string(b.dims()));
}

[[noreturn]] void shape_fail(Op op, const Tensor& a) {
  throw ShapeError(std::string(op_name(op)) + ": unsupported shape " + shape_string(a.dims()));
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Numerically stable softmax / log-softmax of each contiguous row of width n.
void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t n, bool log_space) {
  for (std::size_t off = 0; off < x.size(); off += n) {
    double mx = x[off];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[off + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(x[off + j] - mx);
    if (log_space) {
      const double lz = std::log(z);
      for (std::size_t j = 0; j < n; ++j) y[off + j] = x[off + j] - mx - lz;
    } else {
      for (std::size_t j = 0; j < n; ++j) y[off + j] = std::exp(x[off + j] - mx) / z;
    }
  }
}

}  // namespace

const Graph::Node& Graph::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw ContractError("invalid graph variable");
  return nodes_[v.id];
}

const Tensor& Graph::value_of(std::uint32_t id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.value;
}

const Tensor& Graph::value(Var v) const {
  node(v);
  return value_of(v.id);
}

std::span<const double> Graph::grad(Var v) const { return node(v).grad; }

Var Graph::push(Op op, std::vector<std::uint32_t> inputs, Tensor value, std::size_t aux, double scalar) {
  const auto id = static_cast<std::uint32_t>(nodes_.size());
  if (!value.all_finite()) {
    throw NumericError("non-finite output at node " + std::to_string(id) + " (" + std::string(op_name(op)) + ")");
  }
  Node n;
  n.op = op;
  n.needs_grad = std::any_of(inputs.begin(), inputs.end(), [&](std::uint32_t i) { return nodes_[i].needs_grad; });
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  n.aux = aux;
  n.scalar = scalar;
  nodes_.push_back(std::move(n));
  return Var{id};
}

Var Graph::input(Tensor value, bool requires_grad) {
  if (value.empty()) throw ShapeError("input: empty tensor");
  Var v = push(Op::Input, {}, std::move(value));
  nodes_[v.id].needs_grad = requires_grad;
  return v;
}

Var Graph::param(const Tensor& tensor) {
  if (auto it = param_index_.find(&tensor); it != param_index_.end()) return Var{it->second};
  if (tensor.empty()) throw ShapeError("param: empty tensor");
  if (!tensor.all_finite()) throw NumericError("param: non-finite parameter value");
  const auto id = static_cast<std::uint32_t>(nodes_.size());
  Node n;
  n.op = Op::Param;
  n.external = &tensor;
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  param_index_.emplace(&tensor, id);
  return Var{id};
}

Var Graph::matmul(Var av, Var bv) {
  const Tensor& a = value(av);
  const Tensor& b = value(bv);
  if (a.rank() == 2 && b.rank() == 2) {
    const std::size_t m = a.dims()[0], k = a.dims()[1], n = b.dims()[1];
    if (b.dims()[0] != k) shape_fail(Op::MatMul, a, b);
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = a[i * k + p];
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * b[p * n + j];
      }
    }
    return push(Op::MatMul, {av.id, bv.id}, std::move(out));
  }
  if (a.rank() == 2 && b.rank() == 1) {
    const std::size_t m = a.dims()[0], k = a.dims()[1];
    if (b.size() != k) shape_fail(Op::MatMul, a, b);
    Tensor out({m});
    for (std::size_t i = 0; i < m; ++i) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p];
      out[i] = acc;
    }
    return push(Op::MatMul, {av.id, bv.id}, std::move(out));
  }
  if (a.rank() == 1 && b.rank() == 2) {
    const std::size_t k = a.size(), n = b.dims()[1];
    if (b.dims()[0] != k) shape_fail(Op::MatMul, a, b);
    Tensor out({n});
    for (std::size_t p = 0; p < k; ++p) {
      for (std::size_t j = 0; j < n; ++j) out[j] += a[p] * b[p * n + j];
    }
    return push(Op::MatMul, {av.id, bv.id}, std::move(out));
  }
  shape_fail(Op::MatMul, a, b);
}

Var Graph::add(Var av, Var bv) {
  const Tensor& a = value(av);
  const Tensor& b = value(bv);
  Tensor out = a;
  out.drop_grad();
  if (a.same_shape(b)) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  } else if (a.rank() == 2 && b.rank() == 1 && b.size() == a.dims()[1]) {
    const std::size_t c = b.size();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % c];
  } else {
    shape_fail(Op::Add, a, b);
  }
  return push(Op::Add, {av.id, bv.id}, std::move(out));
}

Var Graph::mul(Var av, Var bv) {
  const Tensor& a = value(av);
  const Tensor& b = value(bv);
  if (!a.same_shape(b)) shape_fail(Op::Mul, a, b);
  Tensor out(a.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return push(Op::Mul, {av.id, bv.id}, std::move(out));
}

Var Graph::tanh(Var av) {
  const Tensor& a = value(av);
  Tensor out(a.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a[i]);
  return push(Op::Tanh, {av.id}, std::move(out));
}

Var Graph::sigmoid(Var av) {
  const Tensor& a = value(av);
  Tensor out(a.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(a[i]);
  return push(Op::Sigmoid, {av.id}, std::move(out));
}

Var Graph::softmax(Var av) {
  const Tensor& a = value(av);
  Tensor out(a.dims());
  softmax_rows(a.data(), out.data(), last_dim(a), false);
  return push(Op::Softmax, {av.id}, std::move(out));
}

Var Graph::log_softmax(Var av) {
  const Tensor& a = value(av);
  Tensor out(a.dims());
  softmax_rows(a.data(), out.data(), last_dim(a), true);
  return push(Op::LogSoftmax, {av.id}, std::move(out));
}

Var Graph::concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Tensor& first = value(parts[0]);
  const std::size_t rank = first.rank();
  if (rank > 2) shape_fail(Op::Concat, first);
  const std::size_t rows = rank == 2 ? first.dims()[0] : 1;
  std::size_t width = 0;
  std::vector<std::uint32_t> ids;
  for (Var p : parts) {
    const Tensor& t = value(p);
    if (t.rank() != rank || (rank == 2 && t.dims()[0] != rows)) shape_fail(Op::Concat, first, t);
    width += last_dim(t);
    ids.push_back(p.id);
  }
  Tensor out(rank == 2 ? Shape{rows, width} : Shape{width});
  std::size_t offset = 0;
  for (Var p : parts) {
    const Tensor& t = value(p);
    const std::size_t w = last_dim(t);
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(t.data().begin() + r * w, w, out.data().begin() + r * width + offset);
    }
    offset += w;
  }
  return push(Op::Concat, std::move(ids), std::move(out));
}

Var Graph::weighted_sum(Var wv, Var mv) {
  const Tensor& w = value(wv);
  const Tensor& m = value(mv);
  if (w.rank() != 1 || m.rank() != 2 || m.dims()[0] != w.size()) shape_fail(Op::WeightedSum, w, m);
  const std::size_t t = m.dims()[0], d = m.dims()[1];
  Tensor out({d});
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < d; ++j) out[j] += w[i] * m[i * d + j];
  }
  return push(Op::WeightedSum, {wv.id, mv.id}, std::move(out));
}

Var Graph::mean(Var av) {
  const Tensor& a = value(av);
  if (a.rank() == 1) {
    double acc = 0.0;
    for (double v : a.data()) acc += v;
    return push(Op::Mean, {av.id}, Tensor::scalar(acc / static_cast<double>(a.size())));
  }
  if (a.rank() != 2) shape_fail(Op::Mean, a);
  const std::size_t t = a.dims()[0], d = a.dims()[1];
  Tensor out({d});
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < d; ++j) out[j] += a[i * d + j];
  }
  for (std::size_t j = 0; j < d; ++j) out[j] /= static_cast<double>(t);
  return push(Op::Mean, {av.id}, std::move(out));
}

Var Graph::log(Var av) {
  const Tensor& a = value(av);
  Tensor out(a.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(a[i]);
  return push(Op::Log, {av.id}, std::move(out));
}

Var Graph::negate(Var av) { return scale(av, -1.0); }

Var Graph::sum(Var av) {
  const Tensor& a = value(av);
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return push(Op::Sum, {av.id}, Tensor::scalar(acc));
}

Var Graph::scale(Var av, double factor) {
  const Tensor& a = value(av);
  Tensor out(a.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * a[i];
  return push(factor == -1.0 ? Op::Negate : Op::Scale, {av.id}, std::move(out), 0, factor);
}

Var Graph::gather(Var av, std::size_t index) {
  const Tensor& a = value(av);
  if (a.rank() == 1) {
    if (index >= a.size()) throw ContractError("gather: index " + std::to_string(index) + " out of range");
    return push(Op::Gather, {av.id}, Tensor::scalar(a[index]), index);
  }
  if (a.rank() != 2) shape_fail(Op::Gather, a);
  if (index >= a.dims()[0]) throw ContractError("gather: row " + std::to_string(index) + " out of range");
  auto r = a.row(index);
  return push(Op::Gather, {av.id}, Tensor({r.size()}, std::vector<double>(r.begin(), r.end())), index);
}

Var Graph::stack(std::span<const Var> rows) {
  if (rows.empty()) throw ShapeError("stack: no inputs");
  const Tensor& first = value(rows[0]);
  if (first.rank() != 1) shape_fail(Op::Stack, first);
  const std::size_t d = first.size();
  Tensor out({rows.size(), d});
  std::vector<std::uint32_t> ids;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Tensor& t = value(rows[i]);
    if (t.rank() != 1 || t.size() != d) shape_fail(Op::Stack, first, t);
    std::copy(t.data().begin(), t.data().end(), out.data().begin() + i * d);
    ids.push_back(rows[i].id);
  }
  return push(Op::Stack, std::move(ids), std::move(out));
}

Var Graph::transpose(Var av) {
  const Tensor& a = value(av);
  if (a.rank() != 2) shape_fail(Op::Transpose, a);
  const std::size_t r = a.dims()[0], c = a.dims()[1];
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  }
  return push(Op::Transpose, {av.id}, std::move(out));
}

std::vector<double>& Graph::grad_buffer(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(value_of(id).size(), 0.0);
  return n.grad;
}

void Graph::backward(Var loss, bool flush_params) {
  if (backward_done_) throw StateError("backward called twice without reset_grads()");
  const Tensor& l = value(loss);
  if (l.size() != 1) throw ContractError("backward: loss must be scalar, got " + shape_string(l.dims()));
  backward_done_ = true;
  if (!nodes_[loss.id].needs_grad) return;
  grad_buffer(loss.id)[0] = 1.0;
  for (std::uint32_t id = loss.id + 1; id-- > 0;) {
    if (nodes_[id].needs_grad && !nodes_[id].grad.empty()) backprop_node(id);
  }
  if (flush_params) flush_param_grads();
}

void Graph::flush_param_grads() const {
  for (const Node& n : nodes_) {
    if (n.op != Op::Param || n.grad.empty()) continue;
    auto* target = const_cast<Tensor*>(n.external);
    auto g = target->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  }
}

void Graph::reset_grads() {
  for (Node& n : nodes_) n.grad.clear();
  backward_done_ = false;
}

void Graph::backprop_node(std::uint32_t id) {
  // grad_buffer() only touches input nodes, so `n` and `dy` stay valid.
  const Node& n = nodes_[id];
  const std::vector<double>& dy = n.grad;
  const Tensor& y = value_of(id);
  auto needs = [&](std::size_t k) { return nodes_[n.inputs[k]].needs_grad; };
  auto in = [&](std::size_t k) -> const Tensor& { return value_of(n.inputs[k]); };
  auto gin = [&](std::size_t k) -> std::vector<double>& { return grad_buffer(n.inputs[k]); };

  switch (n.op) {
    case Op::Input:
    case Op::Param:
      return;
    case Op::MatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.rank() == 2 && b.rank() == 2) {
        const std::size_t m = a.dims()[0], k = a.dims()[1], nn = b.dims()[1];
        if (needs(0)) {
          auto& ga = gin(0);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              for (std::size_t j = 0; j < nn; ++j) acc += dy[i * nn + j] * b[p * nn + j];
              ga[i * k + p] += acc;
            }
        }
        if (needs(1)) {
          auto& gb = gin(1);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = a[i * k + p];
              for (std::size_t j = 0; j < nn; ++j) gb[p * nn + j] += aip * dy[i * nn + j];
            }
        }
      } else if (a.rank() == 2) {
        const std::size_t m = a.dims()[0], k = a.dims()[1];
        if (needs(0)) {
          auto& ga = gin(0);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += dy[i] * b[p];
        }
        if (needs(1)) {
          auto& gb = gin(1);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) gb[p] += a[i * k + p] * dy[i];
        }
      } else {
        const std::size_t k = a.size(), nn = b.dims()[1];
        if (needs(0)) {
          auto& ga = gin(0);
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < nn; ++j) acc += b[p * nn + j] * dy[j];
            ga[p] += acc;
          }
        }
        if (needs(1)) {
          auto& gb = gin(1);
          for (std::size_t p = 0; p < k; ++p)
            for (std::size_t j = 0; j < nn; ++j) gb[p * nn + j] += a[p] * dy[j];
        }
      }
      return;
    }
    case Op::Add: {
      if (needs(0)) {
        auto& ga = gin(0);
        for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i];
      }
      if (needs(1)) {
        auto& gb = gin(1);
        const std::size_t c = gb.size();
        for (std::size_t i = 0; i < dy.size(); ++i) gb[i % c] += dy[i];
      }
      return;
    }
    case Op::Mul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (needs(0)) {
        auto& ga = gin(0);
        for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i] * b[i];
      }
      if (needs(1)) {
        auto& gb = gin(1);
        for (std::size_t i = 0; i < dy.size(); ++i) gb[i] += dy[i] * a[i];
      }
      return;
    }
    case Op::Tanh: {
      auto& ga = gin(0);
      for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i] * (1.0 - y[i] * y[i]);
      return;
    }
    case Op::Sigmoid: {
      auto& ga = gin(0);
      for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i] * y[i] * (1.0 - y[i]);
      return;
    }
    case Op::Softmax: {
      auto& ga = gin(0);
      const std::size_t w = last_dim(y);
      for (std::size_t off = 0; off < y.size(); off += w) {
        double dot = 0.0;
        for (std::size_t j = 0; j < w; ++j) dot += dy[off + j] * y[off + j];
        for (std::size_t j = 0; j < w; ++j) ga[off + j] += y[off + j] * (dy[off + j] - dot);
      }
      return;
    }
    case Op::LogSoftmax: {
      auto& ga = gin(0);
      const std::size_t w = last_dim(y);
      for (std::size_t off = 0; off < y.size(); off += w) {
        double total = 0.0;
        for (std::size_t j = 0; j < w; ++j) total += dy[off + j];
        for (std::size_t j = 0; j < w; ++j) ga[off + j] += dy[off + j] - std::exp(y[off + j]) * total;
      }
      return;
    }
    case Op::Concat: {
      const std::size_t width = last_dim(y);
      const std::size_t rows = y.size() / width;
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const std::size_t w = last_dim(in(k));
        if (needs(k)) {
          auto& g = gin(k);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < w; ++j) g[r * w + j] += dy[r * width + offset + j];
        }
        offset += w;
      }
      return;
    }
    case Op::WeightedSum: {
      const Tensor& w = in(0);
      const Tensor& m = in(1);
      const std::size_t t = m.dims()[0], d = m.dims()[1];
      if (needs(0)) {
        auto& gw = gin(0);
        for (std::size_t i = 0; i < t; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < d; ++j) acc += dy[j] * m[i * d + j];
          gw[i] += acc;
        }
      }
      if (needs(1)) {
        auto& gm = gin(1);
        for (std::size_t i = 0; i < t; ++i)
          for (std::size_t j = 0; j < d; ++j) gm[i * d + j] += w[i] * dy[j];
      }
      return;
    }
    case Op::Mean: {
      const Tensor& a = in(0);
      auto& ga = gin(0);
      if (a.rank() == 1) {
        const double g = dy[0] / static_cast<double>(a.size());
        for (double& v : ga) v += g;
      } else {
        const std::size_t t = a.dims()[0], d = a.dims()[1];
        for (std::size_t i = 0; i < t; ++i)
          for (std::size_t j = 0; j < d; ++j) ga[i * d + j] += dy[j] / static_cast<double>(t);
      }
      return;
    }
    case Op::Log: {
      const Tensor& a = in(0);
      auto& ga = gin(0);
      for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i] / a[i];
      return;
    }
    case Op::Negate:
    case Op::Scale: {
      auto& ga = gin(0);
      for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += n.scalar * dy[i];
      return;
    }
    case Op::Sum: {
      auto& ga = gin(0);
      for (double& v : ga) v += dy[0];
      return;
    }
    case Op::Gather: {
      const Tensor& a = in(0);
      auto& ga = gin(0);
      if (a.rank() == 1) {
        ga[n.aux] += dy[0];
      } else {
        const std::size_t c = a.dims()[1];
        for (std::size_t j = 0; j < c; ++j) ga[n.aux * c + j] += dy[j];
      }
      return;
    }
    case Op::Stack: {
      const std::size_t d = y.dims()[1];
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        if (!needs(k)) continue;
        auto& g = gin(k);
        for (std::size_t j = 0; j < d; ++j) g[j] += dy[k * d + j];
      }
      return;
    }
    case Op::Transpose: {
      const std::size_t r = y.dims()[1], c = y.dims()[0];  // input is r x c
      auto& ga = gin(0);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += dy[j * r + i];
      return;
    }
  }
}

double grad_check(const std::function<Var(Graph&)>& build, std::span<Tensor* const> params, double eps) {
  if (!(eps > 0.0) || !std::isfinite(eps)) throw ContractError("grad_check: eps must be positive");

  std::vector<std::vector<double>> analytic;
  {
    std::vector<std::vector<double>> saved;
    for (Tensor* p : params) {
      saved.emplace_back(p->grad().begin(), p->grad().end());
      p->drop_grad();
    }
    Graph g;
    Var loss = build(g);
    g.backward(loss);
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor* p = params[k];
      if (p->has_grad()) {
        analytic.emplace_back(p->grad().begin(), p->grad().end());
      } else {
        analytic.emplace_back(p->size(), 0.0);
      }
      p->drop_grad();
      if (!saved[k].empty()) {
        auto dst = p->ensure_grad();
        std::copy(saved[k].begin(), saved[k].end(), dst.begin());
      }
    }
  }

  auto evaluate = [&]() {
    Graph g;
    Var loss = build(g);
    const double v = g.value(loss).item();
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss at perturbed point");
    return v;
  };

  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double orig = p[i];
      p[i] = orig + eps;
      double plus, minus;
      try {
        plus = evaluate();
        p[i] = orig - eps;
        minus = evaluate();
      } catch (...) {
        p[i] = orig;
        throw;
      }
      p[i] = orig;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[k][i];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace kvmn
