#pragma once

#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mwuf/graph.hpp"
#include "mwuf/schema.hpp"
#include "mwuf/tensor.hpp"

namespace mwuf {

// Embedding tables for every schema field: one row per vocabulary entry for
// categorical fields, a single base vector for continuous fields (scaled by
// the input value at lookup time).
template <class T>
struct EmbeddingSet {
  ParamPtr<T> item_id;
  ParamPtr<T> user_id;
  std::vector<ParamPtr<T>> item_features;  // schema order, ID excluded
  std::vector<ParamPtr<T>> user_features;
  std::vector<uint8_t> item_continuous;  // aligned with item_features
  std::vector<uint8_t> user_continuous;
  size_t k = 0;

  static EmbeddingSet init(const FittedSchema& fitted, std::mt19937_64& rng, T scale = T(0.05)) {
    const FeatureSchema& s = fitted.schema();
    std::uniform_real_distribution<double> u(-double(scale), double(scale));
    auto table = [&](const FeatureField& f) {
      size_t rows = f.kind == FieldKind::categorical ? fitted.vocab(f.name).size() : 1;
      Tensor<T> t({rows, s.k()});
      for (size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(u(rng));
      return make_param<T>("emb." + f.name, std::move(t));
    };
    EmbeddingSet e;
    e.k = s.k();
    e.item_id = table(s.item_id_field());
    e.user_id = table(s.user_id_field());
    for (size_t i : s.item_feature_fields()) {
      e.item_features.push_back(table(s.fields()[i]));
      e.item_continuous.push_back(s.fields()[i].kind == FieldKind::continuous);
    }
    for (size_t i : s.user_feature_fields()) {
      e.user_features.push_back(table(s.fields()[i]));
      e.user_continuous.push_back(s.fields()[i].kind == FieldKind::continuous);
    }
    return e;
  }

  std::vector<ParamPtr<T>> all() const {
    std::vector<ParamPtr<T>> ps = {item_id, user_id};
    ps.insert(ps.end(), item_features.begin(), item_features.end());
    ps.insert(ps.end(), user_features.begin(), user_features.end());
    return ps;
  }

  void set_trainable(bool on) {
    for (auto& p : all()) p->requires_grad = on;
  }
};

// One embedded minibatch: every component is a [B x k] graph variable, so a
// caller can swap in a different item-ID block (the warm-up substitution
// point) while features stay identical.
template <class T>
struct EmbeddedBatch {
  typename Graph<T>::Var item_id;
  std::vector<typename Graph<T>::Var> item_feats;
  typename Graph<T>::Var user_id;
  std::vector<typename Graph<T>::Var> user_feats;
  std::vector<T> labels;
  size_t size = 0;
};

namespace detail {

inline LookupList entry_lookups(const EncodedEntry& e, bool continuous) {
  LookupList l;
  if (continuous) {
    l.push_back({0, e.value});
    return l;
  }
  if (e.indices.empty()) return l;  // empty token list -> zero row
  double w = 1.0 / double(e.indices.size());
  for (uint32_t idx : e.indices) l.push_back({idx, w});
  return l;
}

}  // namespace detail

// Records lookups for a whole minibatch. item_override, when given, must be a
// [B x k] variable used in place of the item-ID table rows.
template <class T>
EmbeddedBatch<T> embed_batch(Graph<T>& g, const EmbeddingSet<T>& emb,
                             std::span<const EncodedSample> samples,
                             std::optional<typename Graph<T>::Var> item_override = {}) {
  if (samples.empty()) throw UsageError("embed_batch: empty batch");
  const size_t b = samples.size();
  EmbeddedBatch<T> out;
  out.size = b;

  if (item_override) {
    const Tensor<T>& v = g.value(*item_override);
    if (v.rows() != b || v.cols() != emb.k)
      throw DimensionError("embed_batch: item override is " + shape_str(v.shape()));
    out.item_id = *item_override;
  } else {
    std::vector<LookupList> ids(b);
    for (size_t i = 0; i < b; ++i) ids[i] = {{samples[i].item_id, 1.0}};
    out.item_id = g.lookup(g.parameter(emb.item_id), std::move(ids));
  }

  {
    std::vector<LookupList> ids(b);
    for (size_t i = 0; i < b; ++i) ids[i] = {{samples[i].user_id, 1.0}};
    out.user_id = g.lookup(g.parameter(emb.user_id), std::move(ids));
  }

  auto side = [&](const std::vector<ParamPtr<T>>& tables, bool item) {
    const auto& cont = item ? emb.item_continuous : emb.user_continuous;
    std::vector<typename Graph<T>::Var> vars;
    for (size_t f = 0; f < tables.size(); ++f) {
      bool continuous = cont[f] != 0;
      std::vector<LookupList> lists(b);
      for (size_t i = 0; i < b; ++i) {
        const auto& feats = item ? samples[i].item_features : samples[i].user_features;
        if (feats.size() != tables.size())
          throw DimensionError("embed_batch: sample has " + std::to_string(feats.size()) +
                               " features, schema has " + std::to_string(tables.size()));
        lists[i] = detail::entry_lookups(feats[f], continuous);
      }
      vars.push_back(g.lookup(g.parameter(tables[f]), std::move(lists)));
    }
    return vars;
  };
  out.item_feats = side(emb.item_features, true);
  out.user_feats = side(emb.user_features, false);

  for (const EncodedSample& s : samples) out.labels.push_back(static_cast<T>(s.label));
  return out;
}

// Unweighted mean of the given table rows; empty input yields the zero vector.
template <class T>
Tensor<T> multi_valued_pool(std::span<const uint32_t> indices, const Tensor<T>& table) {
  Tensor<T> out({table.cols()});
  if (indices.empty()) return out;
  for (uint32_t idx : indices) {
    if (idx >= table.rows())
      throw LookupError("pool: row " + std::to_string(idx) + " out of range");
    for (size_t j = 0; j < table.cols(); ++j) out[j] += table.at(idx, j);
  }
  for (size_t j = 0; j < table.cols(); ++j) out[j] /= T(indices.size());
  return out;
}

// Plain (graph-free) embedding of one sample, ordered per schema.
template <class T>
struct SampleEmbedding {
  Tensor<T> item;                    // the item-ID vector
  std::vector<Tensor<T>> item_feats;
  Tensor<T> user;
  std::vector<Tensor<T>> user_feats;
};

template <class T>
SampleEmbedding<T> embed_sample(const EncodedSample& s, const EmbeddingSet<T>& emb) {
  auto one_row = [&](const ParamPtr<T>& p, uint32_t row) {
    if (row >= p->value.rows())
      throw LookupError("embed: row " + std::to_string(row) + " out of range in " + p->name);
    Tensor<T> t({emb.k});
    for (size_t j = 0; j < emb.k; ++j) t[j] = p->value.at(row, j);
    return t;
  };
  auto entry = [&](const ParamPtr<T>& p, const EncodedEntry& e, bool continuous) {
    if (continuous) {  // value scales the base vector
      Tensor<T> t = one_row(p, 0);
      for (size_t j = 0; j < emb.k; ++j) t[j] *= static_cast<T>(e.value);
      return t;
    }
    return multi_valued_pool<T>(e.indices, p->value);
  };

  SampleEmbedding<T> out;
  out.item = one_row(emb.item_id, s.item_id);
  out.user = one_row(emb.user_id, s.user_id);
  for (size_t f = 0; f < emb.item_features.size(); ++f)
    out.item_feats.push_back(
        entry(emb.item_features[f], s.item_features.at(f), emb.item_continuous[f] != 0));
  for (size_t f = 0; f < emb.user_features.size(); ++f)
    out.user_feats.push_back(
        entry(emb.user_features[f], s.user_features.at(f), emb.user_continuous[f] != 0));
  return out;
}

}  // namespace mwuf
