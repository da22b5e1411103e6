#pragma once

#include <memory>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mwuf/adam.hpp"
#include "mwuf/model.hpp"

namespace mwuf {

// Coordinate-wise mean of the given table rows (all rows when none are
// named): the shared starting point for every not-yet-trained item.
template <class T>
Tensor<T> common_init(const Tensor<T>& item_table, std::span<const uint32_t> rows = {}) {
  if (item_table.rows() == 0 || item_table.size() == 0)
    throw UsageError("common_init: empty table");
  size_t k = item_table.cols();
  Tensor<T> out({k});
  auto add_row = [&](size_t r) {
    for (size_t j = 0; j < k; ++j) out[j] += item_table.at(r, j);
  };
  size_t count = rows.empty() ? item_table.rows() : rows.size();
  if (rows.empty())
    for (size_t r = 0; r < item_table.rows(); ++r) add_row(r);
  else
    for (uint32_t r : rows) {
      if (r >= item_table.rows()) throw LookupError("common_init: row out of range");
      add_row(r);
    }
  for (size_t j = 0; j < k; ++j) out[j] /= T(count);
  return out;
}

// The replacement item-ID table: storage disjoint from the pretrained one,
// every row starting at the common initial vector.
template <class T>
struct ColdEmbeddingLayer {
  ParamPtr<T> table;

  static ColdEmbeddingLayer create(size_t items, const Tensor<T>& init_vec) {
    if (items == 0) throw UsageError("cold layer: no items");
    Tensor<T> t({items, init_vec.size()});
    for (size_t r = 0; r < items; ++r)
      for (size_t j = 0; j < init_vec.size(); ++j) t.at(r, j) = init_vec[j];
    return {make_param<T>("cold.item_id", std::move(t))};
  }
};

// Per-item record of which users interacted with it, kept unique and in
// insertion (timestamp) order.
class InteractionLog {
 public:
  void record(uint32_t item, uint32_t user, int64_t t) {
    Entry& e = items_[item];
    for (auto& [u, _] : e.users)
      if (u == user) return;
    e.users.emplace_back(user, t);
  }

  size_t count(uint32_t item) const {
    auto it = items_.find(item);
    return it == items_.end() ? 0 : it->second.users.size();
  }

  // The most recent `cap` interacted users, oldest first; cap 0 means all.
  std::vector<uint32_t> recent_users(uint32_t item, size_t cap) const {
    std::vector<uint32_t> out;
    auto it = items_.find(item);
    if (it == items_.end()) return out;
    const auto& us = it->second.users;
    size_t start = (cap > 0 && us.size() > cap) ? us.size() - cap : 0;
    for (size_t i = start; i < us.size(); ++i) out.push_back(us[i].first);
    return out;
  }

 private:
  struct Entry {
    std::vector<std::pair<uint32_t, int64_t>> users;
  };
  std::unordered_map<uint32_t, Entry> items_;
};

template <class T>
struct Aggregated {
  Tensor<T> mean;
  bool empty = false;
};

// Unweighted mean of the pretrained embeddings of the (at most cap most
// recent) interacted users. An item nobody touched yet gets the zero vector
// with the empty flag raised.
template <class T>
Aggregated<T> aggregate_users(std::span<const uint32_t> users, const Tensor<T>& user_table,
                              size_t cap) {
  Aggregated<T> out;
  out.mean = Tensor<T>({user_table.cols()});
  if (users.empty()) {
    out.empty = true;
    return out;
  }
  size_t start = (cap > 0 && users.size() > cap) ? users.size() - cap : 0;
  size_t used = users.size() - start;
  for (size_t i = start; i < users.size(); ++i) {
    if (users[i] >= user_table.rows()) throw LookupError("aggregate_users: row out of range");
    for (size_t j = 0; j < user_table.cols(); ++j) out.mean[j] += user_table.at(users[i], j);
  }
  for (size_t j = 0; j < user_table.cols(); ++j) out.mean[j] /= T(used);
  return out;
}

// The two conditioning networks. Scaling eats the concatenated item feature
// embeddings (ID excluded) and carries a +1 output offset, so zero weights
// mean an identity transform. Shifting eats the aggregated user embedding.
template <class T>
struct MetaNets {
  Dense<T> scale1, scale2;  // n*k -> hidden -> k
  Dense<T> shift1, shift2;  // k -> hidden -> k
  size_t k = 0, n = 0;

  static MetaNets init(size_t k, size_t n, size_t hidden, std::mt19937_64& rng) {
    if (n == 0) throw UsageError("meta nets: no item features to condition on");
    MetaNets m;
    m.k = k;
    m.n = n;
    m.scale1 = Dense<T>::init("meta.scale.1", n * k, hidden, rng);
    m.scale2 = Dense<T>::init("meta.scale.2", hidden, k, rng);
    m.shift1 = Dense<T>::init("meta.shift.1", k, hidden, rng);
    m.shift2 = Dense<T>::init("meta.shift.2", hidden, k, rng);
    return m;
  }

  std::vector<ParamPtr<T>> params() const {
    return {scale1.w, scale1.b, scale2.w, scale2.b, shift1.w, shift1.b, shift2.w, shift2.b};
  }

  MetaNets clone() const {
    MetaNets m;
    m.k = k;
    m.n = n;
    m.scale1 = scale1.clone();
    m.scale2 = scale2.clone();
    m.shift1 = shift1.clone();
    m.shift2 = shift2.clone();
    return m;
  }

  // [B x n*k] -> [B x k], plus one.
  typename Graph<T>::Var scale_forward(Graph<T>& g, typename Graph<T>::Var feats) const {
    if (g.value(feats).cols() != n * k)
      throw DimensionError("scale: input width " + std::to_string(g.value(feats).cols()) +
                           ", expected " + std::to_string(n * k));
    auto h = scale2.apply(g, g.relu(scale1.apply(g, feats)));
    return g.add(h, g.constant(Tensor<T>({k}, T(1))));
  }

  // [B x k] -> [B x k].
  typename Graph<T>::Var shift_forward(Graph<T>& g, typename Graph<T>::Var agg) const {
    if (g.value(agg).cols() != k)
      throw DimensionError("shift: input width " + std::to_string(g.value(agg).cols()) +
                           ", expected " + std::to_string(k));
    return shift2.apply(g, g.relu(shift1.apply(g, agg)));
  }

  // Single-vector shift that honors the empty flag without running the net.
  Tensor<T> shift_vector(const Aggregated<T>& agg) const {
    if (agg.empty) return Tensor<T>({k});
    Graph<T> g;
    auto out = shift_forward(g, g.constant(agg.mean.reshaped({size_t(1), k})));
    return g.value(out).reshaped({k});
  }
};

// v_cold (*) tau_scale + tau_shift, elementwise, any matching shapes.
template <class T>
typename Graph<T>::Var warm_embedding(Graph<T>& g, typename Graph<T>::Var v_cold,
                                      typename Graph<T>::Var tau_scale,
                                      typename Graph<T>::Var tau_shift) {
  return g.add(g.mul(v_cold, tau_scale), tau_shift);
}

enum class WarmVariant { full, scale_only, shift_only, init_only };

inline const char* to_string(WarmVariant v) {
  switch (v) {
    case WarmVariant::full: return "full";
    case WarmVariant::scale_only: return "scale_only";
    case WarmVariant::shift_only: return "shift_only";
    case WarmVariant::init_only: return "init_only";
  }
  return "?";
}

template <class T>
struct WarmupConfig {
  size_t meta_hidden = 16;
  size_t user_cap = 100;
  WarmVariant variant = WarmVariant::full;
  // false keeps the pretrained ID rows as the starting point (the plain
  // fine-tuning baseline); true replaces them with the shared mean vector.
  bool common_initialization = true;
  // Online mode: the base model keeps training on the cold loss alongside
  // the new ID rows instead of staying frozen after pretraining.
  bool online_base = false;
  AdamConfig<T> cold_opt{};
  AdamConfig<T> meta_opt{};
  AdamConfig<T> base_opt{};  // only read in online mode
};

// The warm-up stage around a frozen pipeline: a fresh item-ID layer starting
// at the common initial vector, the two conditioning nets, and the dual
// optimizer step that trains them without ever writing the base parameters.
template <class T>
class Warmup {
 public:
  Warmup(std::shared_ptr<const Pipeline<T>> base, WarmupConfig<T> cfg, uint64_t seed,
         std::span<const uint32_t> old_item_rows)
      : base_(std::move(base)), cfg_(cfg) {
    if (!cfg_.online_base && !base_->frozen)
      throw ContractError("warmup: base pipeline must be frozen");
    if (cfg_.online_base && base_->frozen)
      throw ContractError("warmup: online mode needs a trainable base pipeline");
    common_ = common_init(base_->embeddings.item_id->value, old_item_rows);
    size_t items = base_->embeddings.item_id->value.rows();
    if (cfg_.common_initialization)
      cold_ = ColdEmbeddingLayer<T>::create(items, common_);
    else
      cold_ = {make_param<T>("cold.item_id", base_->embeddings.item_id->value)};
    hot_.assign(items, 0);
    for (uint32_t r : old_item_rows) hot_[r] = 1;
    if (cfg_.variant != WarmVariant::init_only) {
      auto rng = make_rng(seed, "meta-init");
      nets_ = std::make_unique<MetaNets<T>>(MetaNets<T>::init(
          base_->schema->schema().k(), base_->schema->schema().n(), cfg_.meta_hidden, rng));
      opt_meta_ = std::make_unique<Adam<T>>(cfg_.meta_opt);
      opt_meta_->add(nets_->params());
    }
    opt_cold_ = std::make_unique<Adam<T>>(cfg_.cold_opt);
    opt_cold_->add(cold_.table, /*sparse_rows=*/true);
    if (cfg_.online_base) {
      opt_base_ = std::make_unique<Adam<T>>(cfg_.base_opt);
      for (auto& p : base_->model->params()) opt_base_->add(p);
      opt_base_->add(base_->embeddings.user_id, /*sparse_rows=*/true);
      for (auto& p : base_->embeddings.item_features) opt_base_->add(p, true);
      for (auto& p : base_->embeddings.user_features) opt_base_->add(p, true);
    }
  }

  // One dual-loss step per the training loop: the cold loss updates only the
  // new ID table, the warm loss updates only the conditioning nets, and the
  // warm composition reads the cold rows as they were when the step began.
  // The interaction log must reflect strictly earlier batches only.
  std::pair<double, double> train_step(std::span<const EncodedSample> batch) {
    if (batch.empty()) throw UsageError("train_step: empty batch");
    opt_cold_->zero_grad();
    if (opt_meta_) opt_meta_->zero_grad();
    if (opt_base_) opt_base_->zero_grad();

    Graph<T> g;
    std::vector<LookupList> ids(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) ids[i] = {{batch[i].item_id, 1.0}};
    auto vc = g.lookup(g.parameter(cold_.table), std::move(ids));

    auto eb = embed_batch<T>(g, base_->embeddings, batch, vc);
    auto cold_loss = g.bce_mean(base_->model->forward(g, eb), eb.labels);

    double warm_value;
    typename Graph<T>::Var warm_loss{};
    if (cfg_.variant == WarmVariant::init_only) {
      warm_value = double(g.value(cold_loss)[0]);
    } else {
      auto vwarm = compose_warm(g, batch, g.stop_gradient(vc), eb);
      EmbeddedBatch<T> wb = eb;
      wb.item_id = vwarm;
      warm_loss = g.bce_mean(base_->model->forward(g, wb), wb.labels);
      warm_value = double(g.value(warm_loss)[0]);
    }

    double cold_value = double(g.value(cold_loss)[0]);
    g.backward(cold_loss);
    opt_cold_->step();
    opt_cold_->zero_grad();
    if (opt_base_) {
      opt_base_->step();
      opt_base_->zero_grad();
    }
    if (cfg_.variant != WarmVariant::init_only) {
      g.backward(warm_loss);
      opt_meta_->step();
      opt_meta_->zero_grad();
    }
    return {cold_value, warm_value};
  }

  // The warm loss alone, built exactly like the training step's warm branch,
  // with no optimizer motion. With with_backward the gradients are left in
  // the parameter buffers for inspection against finite differences.
  double warm_loss(std::span<const EncodedSample> batch, bool with_backward = false) {
    if (batch.empty()) throw UsageError("warm_loss: empty batch");
    if (with_backward) {
      opt_cold_->zero_grad();
      if (opt_meta_) opt_meta_->zero_grad();
      if (opt_base_) opt_base_->zero_grad();
    }
    Graph<T> g;
    std::vector<LookupList> ids(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) ids[i] = {{batch[i].item_id, 1.0}};
    auto vc = g.lookup(g.parameter(cold_.table), std::move(ids));
    auto eb = embed_batch<T>(g, base_->embeddings, batch, vc);
    EmbeddedBatch<T> wb = eb;
    if (cfg_.variant != WarmVariant::init_only)
      wb.item_id = compose_warm(g, batch, g.stop_gradient(vc), eb);
    else
      wb.item_id = g.stop_gradient(vc);
    auto loss = g.bce_mean(base_->model->forward(g, wb), wb.labels);
    if (with_backward) g.backward(loss);
    return double(g.value(loss)[0]);
  }

  // Scores a mixed batch: items past the hot threshold flow through the
  // plain pretrained pipeline, everything else through the warm composition.
  std::vector<double> predict(std::span<const EncodedSample> samples) const {
    std::vector<double> out(samples.size());
    std::vector<size_t> hot_idx, cold_idx;
    for (size_t i = 0; i < samples.size(); ++i)
      (hot_[samples[i].item_id] ? hot_idx : cold_idx).push_back(i);

    auto fill = [&](const std::vector<size_t>& idx, bool warm_path) {
      constexpr size_t kChunk = 4096;
      for (size_t off = 0; off < idx.size(); off += kChunk) {
        std::vector<EncodedSample> part;
        for (size_t i = off; i < std::min(off + kChunk, idx.size()); ++i)
          part.push_back(samples[idx[i]]);
        std::vector<double> scores = warm_path ? predict_cold(part) : base_->predict(part);
        for (size_t i = 0; i < scores.size(); ++i) out[idx[off + i]] = scores[i];
      }
    };
    fill(hot_idx, false);
    fill(cold_idx, true);
    return out;
  }

  // Folds a trained-on batch into the interaction history.
  void observe(std::span<const EncodedSample> batch) {
    for (const EncodedSample& s : batch) log_.record(s.item_id, s.user_id, s.timestamp);
  }

  const Tensor<T>& common_initial() const { return common_; }
  ColdEmbeddingLayer<T>& cold_layer() { return cold_; }
  MetaNets<T>* nets() { return nets_.get(); }
  const InteractionLog& log() const { return log_; }
  InteractionLog& log() { return log_; }
  const Pipeline<T>& base() const { return *base_; }

 private:
  // tau_scale from the already-embedded item features; tau_shift from the
  // aggregated interacted users; composed per the active variant.
  typename Graph<T>::Var compose_warm(Graph<T>& g, std::span<const EncodedSample> batch,
                                      typename Graph<T>::Var v_cold,
                                      const EmbeddedBatch<T>& eb) const {
    const size_t k = base_->schema->schema().k();
    const bool scaling = cfg_.variant != WarmVariant::shift_only;
    const bool shifting = cfg_.variant != WarmVariant::scale_only;

    typename Graph<T>::Var tau_scale{};
    if (scaling) {
      auto feats = g.concat(std::span<const typename Graph<T>::Var>(eb.item_feats));
      tau_scale = nets_->scale_forward(g, feats);
    }
    typename Graph<T>::Var tau_shift{};
    if (shifting) {
      Tensor<T> agg({batch.size(), k});
      Tensor<T> mask({batch.size(), k});
      const Tensor<T>& users = base_->embeddings.user_id->value;
      for (size_t i = 0; i < batch.size(); ++i) {
        auto u = log_.recent_users(batch[i].item_id, cfg_.user_cap);
        Aggregated<T> a = aggregate_users<T>(u, users, cfg_.user_cap);
        for (size_t j = 0; j < k; ++j) {
          agg.at(i, j) = a.mean[j];
          mask.at(i, j) = a.empty ? T(0) : T(1);
        }
      }
      // the mask silences rows with no history, matching the no-evaluation rule
      tau_shift = g.mul(nets_->shift_forward(g, g.constant(std::move(agg))),
                        g.constant(std::move(mask)));
    }

    if (scaling && shifting) return warm_embedding(g, v_cold, tau_scale, tau_shift);
    if (scaling) return g.mul(v_cold, tau_scale);
    return g.add(v_cold, tau_shift);
  }

  std::vector<double> predict_cold(std::span<const EncodedSample> part) const {
    Graph<T> g;
    std::vector<LookupList> ids(part.size());
    for (size_t i = 0; i < part.size(); ++i) ids[i] = {{part[i].item_id, 1.0}};
    auto vc = g.lookup(g.parameter(cold_.table), std::move(ids));
    auto eb = embed_batch<T>(g, base_->embeddings, part, vc);
    if (cfg_.variant != WarmVariant::init_only) {
      EmbeddedBatch<T> wb = eb;
      wb.item_id = compose_warm(g, part, g.stop_gradient(vc), eb);
      eb = wb;
    }
    auto probs = base_->model->forward(g, eb);
    const Tensor<T>& pv = g.value(probs);
    return std::vector<double>(pv.values().begin(), pv.values().end());
  }

  std::shared_ptr<const Pipeline<T>> base_;
  WarmupConfig<T> cfg_;
  Tensor<T> common_;
  ColdEmbeddingLayer<T> cold_;
  std::vector<uint8_t> hot_;
  std::unique_ptr<MetaNets<T>> nets_;
  std::unique_ptr<Adam<T>> opt_cold_, opt_meta_, opt_base_;
  InteractionLog log_;
};

}  // namespace mwuf
