#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mwuf/errors.hpp"
#include "mwuf/graph.hpp"

namespace mwuf {

template <class T>
struct AdamConfig {
  T lr = T(0.001);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
};

template <class T>
struct AdamState {
  Tensor<T> m;
  Tensor<T> v;
  int64_t t = 0;               // dense parameters: one counter
  std::vector<int64_t> row_t;  // sparse tables: one counter per row
};

// Bias-corrected Adam over a set of registered parameters. Parameters
// registered as sparse are embedding tables: only rows recorded in
// Parameter::touched since the last zero_grad get moment and value updates,
// the way embedding rows behave in production trainers. Bias correction for
// such rows follows the row's own update count, so a row first touched late
// in training warms up exactly like a freshly registered one.
template <class T>
class Adam {
 public:
  explicit Adam(AdamConfig<T> cfg = {}) : cfg_(cfg) {}

  void add(ParamPtr<T> p, bool sparse_rows = false) {
    Slot s;
    s.state.m = Tensor<T>(p->value.shape());
    s.state.v = Tensor<T>(p->value.shape());
    s.sparse = sparse_rows;
    if (sparse_rows) s.state.row_t.assign(p->value.rows(), 0);
    s.p = std::move(p);
    slots_.push_back(std::move(s));
  }

  void add(const std::vector<ParamPtr<T>>& ps, bool sparse_rows = false) {
    for (const auto& p : ps) add(p, sparse_rows);
  }

  void step() {
    for (Slot& s : slots_) {
      Parameter<T>& p = *s.p;
      if (!p.grad.same_shape(p.value) || !s.state.m.same_shape(p.value))
        throw StateError("adam: state shape does not match parameter " + p.name);
      if (s.sparse) {
        std::vector<uint32_t> rows = p.touched;
        std::sort(rows.begin(), rows.end());
        rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
        const size_t k = p.value.cols();
        for (uint32_t r : rows) {
          int64_t t = ++s.state.row_t[r];
          update_span(s, r * k, k, T(1) - std::pow(cfg_.beta1, T(t)),
                      T(1) - std::pow(cfg_.beta2, T(t)));
        }
      } else {
        s.state.t += 1;
        update_span(s, 0, p.value.size(), T(1) - std::pow(cfg_.beta1, T(s.state.t)),
                    T(1) - std::pow(cfg_.beta2, T(s.state.t)));
      }
    }
  }

  void zero_grad() {
    for (Slot& s : slots_) s.p->zero_grad();
  }

  AdamConfig<T>& config() { return cfg_; }

 private:
  struct Slot {
    ParamPtr<T> p;
    AdamState<T> state;
    bool sparse = false;
  };

  void update_span(Slot& s, size_t off, size_t n, T bc1, T bc2) {
    Parameter<T>& p = *s.p;
    T* theta = p.value.data() + off;
    const T* g = p.grad.data() + off;
    T* m = s.state.m.data() + off;
    T* v = s.state.v.data() + off;
    for (size_t i = 0; i < n; ++i) {
      m[i] = cfg_.beta1 * m[i] + (T(1) - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (T(1) - cfg_.beta2) * g[i] * g[i];
      const T mhat = m[i] / bc1;
      const T vhat = v[i] / bc2;
      theta[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      if (!std::isfinite(theta[i]))
        throw NumericError("adam: non-finite parameter value in " + p.name);
    }
  }

  std::vector<Slot> slots_;
  AdamConfig<T> cfg_;
};

}  // namespace mwuf
