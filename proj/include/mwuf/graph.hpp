#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mwuf/errors.hpp"
#include "mwuf/tensor.hpp"

namespace mwuf {

// A named leaf tensor with a persistent gradient buffer. Parameters outlive
// the graphs that use them; gradients accumulate until zero_grad().
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = true;
  // Rows hit by gather/lookup since the last zero_grad. Lets the optimizer
  // run sparse updates that leave untouched embedding rows alone.
  std::vector<uint32_t> touched;

  Parameter(std::string n, Tensor<T> v, bool rg = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape(), T(0)), requires_grad(rg) {}

  void zero_grad() {
    grad.fill(T(0));
    touched.clear();
  }
};

template <class T>
using ParamPtr = std::shared_ptr<Parameter<T>>;

template <class T>
ParamPtr<T> make_param(std::string name, Tensor<T> value, bool requires_grad = true) {
  return std::make_shared<Parameter<T>>(std::move(name), std::move(value), requires_grad);
}

// One row reference inside a batched embedding lookup.
struct LookupEntry {
  uint32_t row;
  double weight;
};
using LookupList = std::vector<LookupEntry>;

// Tape-based reverse-mode autodiff over whole tensors. Ops append nodes in
// execution order, which is already topological; backward() replays the tape
// in reverse and visits every node exactly once. One graph serves one
// forward/backward episode and is not shared across threads. Nodes live in a
// deque so value() references stay valid while the tape keeps growing.
template <class T>
class Graph {
 public:
  struct Var {
    uint32_t id = 0;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // --- leaves ---

  Var parameter(const ParamPtr<T>& p) {
    Node n;
    n.param = p;
    n.needs_grad = p->requires_grad;
    return push(std::move(n), /*check=*/false);
  }

  Var constant(Tensor<T> v) {
    Node n;
    n.value = std::move(v);
    return push(std::move(n));
  }

  // --- elementwise and structural ops ---

  // add supports equal shapes, or broadcasting a rank-1 [n] bias over the
  // rows of a rank-2 [m x n] tensor.
  Var add(Var a, Var b) {
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    bool bias = av.rank() == 2 && bv.rank() == 1 && av.cols() == bv.size();
    if (!bias && !av.same_shape(bv))
      throw DimensionError("add: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    Tensor<T> out = av;
    if (bias) {
      for (size_t i = 0; i < out.rows(); ++i)
        for (size_t j = 0; j < out.cols(); ++j) out.at(i, j) += bv[j];
    } else {
      for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    }
    Node n = op_node(std::move(out), {a, b});
    n.backprop = [this, a, b, bias](const Node& self) {
      accumulate(a, self.out_grad->values());
      if (!bias) {
        accumulate(b, self.out_grad->values());
      } else if (node(b).needs_grad) {
        Tensor<T>& gb = grad_buffer(b);
        const Tensor<T>& g = *self.out_grad;
        for (size_t i = 0; i < g.rows(); ++i)
          for (size_t j = 0; j < g.cols(); ++j) gb[j] += g.at(i, j);
      }
    };
    return push(std::move(n));
  }

  Var mul(Var a, Var b) {
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    if (!av.same_shape(bv))
      throw DimensionError("mul: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    Tensor<T> out = av;
    for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    Node n = op_node(std::move(out), {a, b});
    n.backprop = [this, a, b](const Node& self) {
      const Tensor<T>& g = *self.out_grad;
      if (node(a).needs_grad) {
        Tensor<T>& ga = grad_buffer(a);
        const Tensor<T>& bv = value(b);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
      }
      if (node(b).needs_grad) {
        Tensor<T>& gb = grad_buffer(b);
        const Tensor<T>& av = value(a);
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
      }
    };
    return push(std::move(n));
  }

  Var scale(Var a, T c) {
    Tensor<T> out = value(a);
    for (size_t i = 0; i < out.size(); ++i) out[i] *= c;
    Node n = op_node(std::move(out), {a});
    n.backprop = [this, a, c](const Node& self) {
      if (!node(a).needs_grad) return;
      Tensor<T>& ga = grad_buffer(a);
      const Tensor<T>& g = *self.out_grad;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    };
    return push(std::move(n));
  }

  Var relu(Var a) {
    Tensor<T> out = value(a);
    for (size_t i = 0; i < out.size(); ++i)
      if (out[i] < T(0)) out[i] = T(0);
    Node n = op_node(std::move(out), {a});
    n.backprop = [this, a](const Node& self) {
      if (!node(a).needs_grad) return;
      Tensor<T>& ga = grad_buffer(a);
      const Tensor<T>& av = value(a);
      const Tensor<T>& g = *self.out_grad;
      for (size_t i = 0; i < g.size(); ++i)
        if (av[i] > T(0)) ga[i] += g[i];
    };
    return push(std::move(n));
  }

  Var sigmoid(Var a) {
    const Tensor<T>& av = value(a);
    Tensor<T> out(av.shape());
    for (size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(av[i]);
    Node n = op_node(std::move(out), {a});
    uint32_t self_id = next_id();
    n.backprop = [this, a, self_id](const Node& self) {
      if (!node(a).needs_grad) return;
      Tensor<T>& ga = grad_buffer(a);
      const Tensor<T>& s = value(Var{self_id});
      const Tensor<T>& g = *self.out_grad;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s[i] * (T(1) - s[i]);
    };
    return push(std::move(n));
  }

  // Pins probabilities into [eps, 1-eps]: float sigmoids round to exact 0/1
  // under saturation, which downstream log-losses cannot take. Gradient
  // passes through unclamped entries only.
  Var clamp_unit(Var a, T eps = T(1e-7)) {
    const Tensor<T>& av = value(a);
    Tensor<T> out = av;
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], eps, T(1) - eps);
    Node n = op_node(std::move(out), {a});
    n.backprop = [this, a, eps](const Node& self) {
      if (!node(a).needs_grad) return;
      Tensor<T>& ga = grad_buffer(a);
      const Tensor<T>& av = value(a);
      const Tensor<T>& g = *self.out_grad;
      for (size_t i = 0; i < g.size(); ++i)
        if (av[i] > eps && av[i] < T(1) - eps) ga[i] += g[i];
    };
    return push(std::move(n));
  }

  // Concatenates rank-1 vectors end to end, or rank-2 blocks column-wise
  // (all blocks sharing the same number of rows).
  Var concat(std::span<const Var> parts) {
    if (parts.empty()) throw UsageError("concat: no inputs");
    size_t rank = value(parts[0]).rank();
    size_t rows = value(parts[0]).rows();
    size_t cols = 0;
    for (Var p : parts) {
      const Tensor<T>& v = value(p);
      if (v.rank() != rank || v.rows() != rows)
        throw DimensionError("concat: incompatible block " + shape_str(v.shape()));
      cols += v.cols();
    }
    Tensor<T> out(rank == 2 ? std::vector<size_t>{rows, cols} : std::vector<size_t>{cols});
    size_t off = 0;
    for (Var p : parts) {
      const Tensor<T>& v = value(p);
      for (size_t i = 0; i < rows; ++i)
        for (size_t j = 0; j < v.cols(); ++j) out[i * cols + off + j] = v.at(i, j);
      off += v.cols();
    }
    std::vector<Var> ins(parts.begin(), parts.end());
    Node n = op_node(std::move(out), ins);
    n.backprop = [this, ins, rows, cols](const Node& self) {
      const Tensor<T>& g = *self.out_grad;
      size_t off = 0;
      for (Var p : ins) {
        size_t c = value(p).cols();
        if (node(p).needs_grad) {
          Tensor<T>& gp = grad_buffer(p);
          for (size_t i = 0; i < rows; ++i)
            for (size_t j = 0; j < c; ++j) gp[i * c + j] += g[i * cols + off + j];
        }
        off += c;
      }
    };
    return push(std::move(n));
  }

  Var concat(std::initializer_list<Var> parts) {
    return concat(std::span<const Var>(parts.begin(), parts.size()));
  }

  // Column-wise mean over rows: [r x c] -> [c].
  Var mean_rows(Var a) {
    const Tensor<T>& av = value(a);
    if (av.rank() != 2) throw DimensionError("mean_rows: rank-2 input required");
    size_t r = av.rows(), c = av.cols();
    Tensor<T> out({c});
    for (size_t i = 0; i < r; ++i)
      for (size_t j = 0; j < c; ++j) out[j] += av.at(i, j);
    for (size_t j = 0; j < c; ++j) out[j] /= T(r);
    Node n = op_node(std::move(out), {a});
    n.backprop = [this, a, r, c](const Node& self) {
      if (!node(a).needs_grad) return;
      Tensor<T>& ga = grad_buffer(a);
      const Tensor<T>& g = *self.out_grad;
      for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) ga[i * c + j] += g[j] / T(r);
    };
    return push(std::move(n));
  }

  // Row sums: [r x c] -> [r x 1].
  Var sum_cols(Var a) {
    const Tensor<T>& av = value(a);
    if (av.rank() != 2) throw DimensionError("sum_cols: rank-2 input required");
    size_t r = av.rows(), c = av.cols();
    Tensor<T> out({r, 1});
    for (size_t i = 0; i < r; ++i)
      for (size_t j = 0; j < c; ++j) out[i] += av.at(i, j);
    Node n = op_node(std::move(out), {a});
    n.backprop = [this, a, r, c](const Node& self) {
      if (!node(a).needs_grad) return;
      Tensor<T>& ga = grad_buffer(a);
      const Tensor<T>& g = *self.out_grad;
      for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) ga[i * c + j] += g[i];
    };
    return push(std::move(n));
  }

  Var sum_all(Var a) {
    const Tensor<T>& av = value(a);
    Tensor<T> out({1});
    for (size_t i = 0; i < av.size(); ++i) out[0] += av[i];
    Node n = op_node(std::move(out), {a});
    n.backprop = [this, a](const Node& self) {
      if (!node(a).needs_grad) return;
      Tensor<T>& ga = grad_buffer(a);
      T g = (*self.out_grad)[0];
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    };
    return push(std::move(n));
  }

  Var reshape(Var a, std::vector<size_t> shape) {
    Tensor<T> out = value(a).reshaped(shape);
    Node n = op_node(std::move(out), {a});
    n.backprop = [this, a](const Node& self) {
      accumulate(a, self.out_grad->values());
    };
    return push(std::move(n), /*check=*/false);
  }

  // --- linear algebra ---

  Var matmul(Var a, Var b) {
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows())
      throw DimensionError("matmul: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    size_t m = av.rows(), p = av.cols(), q = bv.cols();
    Tensor<T> out({m, q});
    matmul_into(out.data(), av.data(), bv.data(), m, p, q);
    Node n = op_node(std::move(out), {a, b});
    n.backprop = [this, a, b, m, p, q](const Node& self) {
      const T* g = self.out_grad->data();
      if (node(a).needs_grad) {
        // ga += g . b^T
        T* ga = grad_buffer(a).data();
        const T* bd = value(b).data();
        for (size_t i = 0; i < m; ++i)
          for (size_t k = 0; k < p; ++k) {
            T acc = T(0);
            const T* gr = g + i * q;
            const T* br = bd + k * q;
            for (size_t j = 0; j < q; ++j) acc += gr[j] * br[j];
            ga[i * p + k] += acc;
          }
      }
      if (node(b).needs_grad) {
        // gb += a^T . g
        T* gb = grad_buffer(b).data();
        const T* ad = value(a).data();
        for (size_t i = 0; i < m; ++i)
          for (size_t k = 0; k < p; ++k) {
            T av_ik = ad[i * p + k];
            if (av_ik == T(0)) continue;
            const T* gr = g + i * q;
            T* gbr = gb + k * q;
            for (size_t j = 0; j < q; ++j) gbr[j] += av_ik * gr[j];
          }
      }
    };
    return push(std::move(n));
  }

  // --- embedding access ---

  // Single-row gather: [V x k] -> [k]. Backward scatters into just that row.
  Var gather(Var table, size_t row) {
    const Tensor<T>& tv = value(table);
    if (tv.rank() != 2) throw DimensionError("gather: rank-2 table required");
    if (row >= tv.rows())
      throw LookupError("gather: row " + std::to_string(row) + " out of range [0, " +
                        std::to_string(tv.rows()) + ")");
    size_t k = tv.cols();
    Tensor<T> out({k});
    for (size_t j = 0; j < k; ++j) out[j] = tv.at(row, j);
    touch(table, static_cast<uint32_t>(row));
    Node n = op_node(std::move(out), {table});
    n.backprop = [this, table, row, k](const Node& self) {
      if (!node(table).needs_grad) return;
      Tensor<T>& gt = grad_buffer(table);
      const Tensor<T>& g = *self.out_grad;
      for (size_t j = 0; j < k; ++j) gt[row * k + j] += g[j];
    };
    return push(std::move(n));
  }

  // Batched weighted row lookup: one output row per entry list. An empty
  // list yields a zero row. Covers plain ID gathers (one entry, weight 1),
  // continuous fields (row 0, weight = input value) and multi-valued
  // pooling (s entries, weight 1/s).
  Var lookup(Var table, std::vector<LookupList> batch) {
    const Tensor<T>& tv = value(table);
    if (tv.rank() != 2) throw DimensionError("lookup: rank-2 table required");
    size_t k = tv.cols();
    size_t b = batch.size();
    if (b == 0) throw UsageError("lookup: empty batch");
    Tensor<T> out({b, k});
    for (size_t i = 0; i < b; ++i) {
      for (const LookupEntry& e : batch[i]) {
        if (e.row >= tv.rows())
          throw LookupError("lookup: row " + std::to_string(e.row) + " out of range [0, " +
                            std::to_string(tv.rows()) + ")");
        touch(table, e.row);
        const T w = static_cast<T>(e.weight);
        for (size_t j = 0; j < k; ++j) out.at(i, j) += w * tv.at(e.row, j);
      }
    }
    auto shared = std::make_shared<std::vector<LookupList>>(std::move(batch));
    Node n = op_node(std::move(out), {table});
    n.backprop = [this, table, shared, k](const Node& self) {
      if (!node(table).needs_grad) return;
      Tensor<T>& gt = grad_buffer(table);
      const Tensor<T>& g = *self.out_grad;
      for (size_t i = 0; i < shared->size(); ++i)
        for (const LookupEntry& e : (*shared)[i]) {
          const T w = static_cast<T>(e.weight);
          for (size_t j = 0; j < k; ++j) gt[e.row * k + j] += w * g.at(i, j);
        }
    };
    return push(std::move(n));
  }

  // Identity forward, no gradient flow backward.
  Var stop_gradient(Var a) {
    Node n;
    n.value = value(a);
    return push(std::move(n), /*check=*/false);
  }

  // --- loss ---

  // Mean binary cross-entropy over a batch of probabilities shaped [b] or
  // [b x 1]. Probabilities are clamped to [eps, 1-eps] before the logs.
  Var bce_mean(Var probs, const std::vector<T>& labels) {
    static constexpr T kClip = T(1e-7);
    const Tensor<T>& pv = value(probs);
    if (pv.size() != labels.size())
      throw DimensionError("bce_mean: " + std::to_string(pv.size()) + " predictions vs " +
                           std::to_string(labels.size()) + " labels");
    size_t b = pv.size();
    if (b == 0) throw UsageError("bce_mean: empty batch");
    for (T y : labels)
      if (y != T(0) && y != T(1)) throw LabelError("bce_mean: label outside {0,1}");
    Tensor<T> out({1});
    T acc = T(0);
    for (size_t i = 0; i < b; ++i) {
      T p = std::clamp(pv[i], kClip, T(1) - kClip);
      acc += labels[i] == T(1) ? -std::log(p) : -std::log(T(1) - p);
    }
    out[0] = acc / T(b);
    auto shared = std::make_shared<std::vector<T>>(labels);
    Node n = op_node(std::move(out), {probs});
    n.backprop = [this, probs, shared, b](const Node& self) {
      if (!node(probs).needs_grad) return;
      Tensor<T>& gp = grad_buffer(probs);
      const Tensor<T>& pv = value(probs);
      T g = (*self.out_grad)[0] / T(b);
      for (size_t i = 0; i < b; ++i) {
        T p = pv[i];
        if (p <= kClip || p >= T(1) - kClip) continue;  // flat in the clamped region
        gp[i] += g * (p - (*shared)[i]) / (p * (T(1) - p));
      }
    };
    return push(std::move(n));
  }

  // --- access and backward ---

  const Tensor<T>& value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.param ? n.param->value : n.value;
  }

  // Reverse pass from a scalar loss. Parameter gradients accumulate into
  // their persistent buffers; intermediate gradients are per-call scratch.
  void backward(Var loss) {
    if (value(loss).size() != 1)
      throw UsageError("backward: loss must be scalar, got " + shape_str(value(loss).shape()));
    for (Node& n : nodes_) n.out_grad.reset();
    Node& ln = nodes_[loss.id];
    ln.out_grad = std::make_unique<Tensor<T>>(value(loss).shape(), T(0));
    (*ln.out_grad)[0] = T(1);
    for (size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needs_grad || !n.backprop || !n.out_grad) continue;
      n.backprop(n);
    }
    for (const Node& n : nodes_) {
      if (n.param && n.param->requires_grad && !all_finite(n.param->grad))
        throw NumericError("backward: non-finite gradient for " + n.param->name);
      if (n.out_grad && !all_finite(*n.out_grad))
        throw NumericError("backward: non-finite intermediate gradient");
    }
  }

  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;                        // intermediates and constants
    ParamPtr<T> param;                      // set for parameter leaves
    std::unique_ptr<Tensor<T>> out_grad;    // dL/d(this node), scratch per backward
    bool needs_grad = false;
    std::function<void(const Node&)> backprop;
  };

  Node& node(Var v) { return nodes_[v.id]; }
  uint32_t next_id() const { return static_cast<uint32_t>(nodes_.size()); }

  Node op_node(Tensor<T> out, std::span<const Var> inputs) {
    Node n;
    n.value = std::move(out);
    for (Var in : inputs) n.needs_grad = n.needs_grad || nodes_[in.id].needs_grad;
    return n;
  }
  Node op_node(Tensor<T> out, std::initializer_list<Var> inputs) {
    return op_node(std::move(out), std::span<const Var>(inputs.begin(), inputs.size()));
  }

  Var push(Node n, bool check = true) {
    if (check && !all_finite(n.param ? n.param->value : n.value))
      throw NumericError("forward: non-finite value produced");
    nodes_.push_back(std::move(n));
    return Var{static_cast<uint32_t>(nodes_.size() - 1)};
  }

  // Gradient destination for a node: the parameter buffer for leaves, the
  // scratch out_grad for intermediates (created on demand).
  Tensor<T>& grad_buffer(Var v) {
    Node& n = node(v);
    if (n.param) return n.param->grad;
    if (!n.out_grad) n.out_grad = std::make_unique<Tensor<T>>(n.value.shape(), T(0));
    return *n.out_grad;
  }

  void accumulate(Var v, const std::vector<T>& g) {
    if (!node(v).needs_grad) return;
    Tensor<T>& dst = grad_buffer(v);
    for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }

  void touch(Var table, uint32_t row) {
    Node& n = node(table);
    if (n.param && n.param->requires_grad) n.param->touched.push_back(row);
  }

  static T stable_sigmoid(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    T e = std::exp(x);
    return e / (T(1) + e);
  }

  static void matmul_into(T* c, const T* a, const T* b, size_t m, size_t p, size_t q) {
    for (size_t i = 0; i < m; ++i) {
      T* crow = c + i * q;
      for (size_t k = 0; k < p; ++k) {
        const T aik = a[i * p + k];
        if (aik == T(0)) continue;
        const T* brow = b + k * q;
        for (size_t j = 0; j < q; ++j) crow[j] += aik * brow[j];
      }
    }
  }

  std::deque<Node> nodes_;
};

template <class T>
using Var = typename Graph<T>::Var;

}  // namespace mwuf
