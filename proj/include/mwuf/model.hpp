#pragma once

#include <cmath>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mwuf/adam.hpp"
#include "mwuf/embedding.hpp"
#include "mwuf/graph.hpp"
#include "mwuf/rng.hpp"

namespace mwuf {

// Fully connected layer. Weights start uniform in +/- sqrt(6/(fan_in+fan_out)),
// biases at zero.
template <class T>
struct Dense {
  ParamPtr<T> w, b;

  static Dense init(const std::string& name, size_t in, size_t out, std::mt19937_64& rng) {
    double bound = std::sqrt(6.0 / double(in + out));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor<T> wt({in, out});
    for (size_t i = 0; i < wt.size(); ++i) wt[i] = static_cast<T>(u(rng));
    return {make_param<T>(name + ".w", std::move(wt)),
            make_param<T>(name + ".b", Tensor<T>({out}))};
  }

  typename Graph<T>::Var apply(Graph<T>& g, typename Graph<T>::Var x) const {
    return g.add(g.matmul(x, g.parameter(w)), g.parameter(b));
  }

  Dense clone() const {
    return {make_param<T>(w->name, w->value, w->requires_grad),
            make_param<T>(b->name, b->value, b->requires_grad)};
  }
};

// A scoring network over one embedded minibatch. Embedding tables live
// outside the model; only the dense parameters belong to it.
template <class T>
class BaseModel {
 public:
  virtual ~BaseModel() = default;
  virtual std::string kind() const = 0;
  // Returns click probabilities shaped [B x 1], recorded on the graph.
  virtual typename Graph<T>::Var forward(Graph<T>& g, const EmbeddedBatch<T>& batch) const = 0;
  virtual std::vector<ParamPtr<T>> params() const = 0;
  virtual std::unique_ptr<BaseModel<T>> clone() const = 0;
};

namespace detail {

template <class T>
std::vector<typename Graph<T>::Var> all_blocks(const EmbeddedBatch<T>& b) {
  std::vector<typename Graph<T>::Var> blocks = {b.item_id};
  blocks.insert(blocks.end(), b.item_feats.begin(), b.item_feats.end());
  blocks.push_back(b.user_id);
  blocks.insert(blocks.end(), b.user_feats.begin(), b.user_feats.end());
  return blocks;
}

}  // namespace detail

// Deep channel: concatenated embeddings through three ReLU layers and a
// scalar head. Wide channel: a linear map over the same concatenation. The
// two logits add before the sigmoid, so an item-embedding substitution
// reaches both channels.
template <class T>
class WideDeepModel : public BaseModel<T> {
 public:
  WideDeepModel(size_t field_count, size_t k, std::mt19937_64& rng, size_t hidden = 64)
      : input_(field_count * k) {
    d1_ = Dense<T>::init("deep.1", input_, hidden, rng);
    d2_ = Dense<T>::init("deep.2", hidden, hidden, rng);
    d3_ = Dense<T>::init("deep.3", hidden, hidden, rng);
    head_ = Dense<T>::init("deep.head", hidden, 1, rng);
    wide_ = Dense<T>::init("wide", input_, 1, rng);
  }

  std::string kind() const override { return "wide_deep"; }

  typename Graph<T>::Var forward(Graph<T>& g, const EmbeddedBatch<T>& batch) const override {
    auto blocks = detail::all_blocks(batch);
    auto x = g.concat(std::span<const typename Graph<T>::Var>(blocks));
    if (g.value(x).cols() != input_)
      throw DimensionError("forward: input width " + std::to_string(g.value(x).cols()) +
                           ", model expects " + std::to_string(input_));
    auto h = g.relu(d1_.apply(g, x));
    h = g.relu(d2_.apply(g, h));
    h = g.relu(d3_.apply(g, h));
    auto logit = g.add(head_.apply(g, h), wide_.apply(g, x));
    return g.clamp_unit(g.sigmoid(logit));
  }

  std::vector<ParamPtr<T>> params() const override {
    return {d1_.w, d1_.b, d2_.w, d2_.b, d3_.w, d3_.b, head_.w, head_.b, wide_.w, wide_.b};
  }

  std::unique_ptr<BaseModel<T>> clone() const override {
    auto c = std::make_unique<WideDeepModel>(*this);
    c->d1_ = d1_.clone();
    c->d2_ = d2_.clone();
    c->d3_ = d3_.clone();
    c->head_ = head_.clone();
    c->wide_ = wide_.clone();
    return c;
  }

 private:
  size_t input_;
  Dense<T> d1_, d2_, d3_, head_, wide_;
};

// Factorization machine sharing each field's embedding between the linear
// term (projected by a per-field weight vector) and the pairwise term
// 0.5 * [(sum e)^2 - sum e^2].
template <class T>
class FMModel : public BaseModel<T> {
 public:
  FMModel(size_t field_count, size_t k, std::mt19937_64& rng) {
    double bound = std::sqrt(6.0 / double(k + 1));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (size_t f = 0; f < field_count; ++f) {
      Tensor<T> w({k, 1});
      for (size_t i = 0; i < k; ++i) w[i] = static_cast<T>(u(rng));
      linear_.push_back(make_param<T>("fm.linear." + std::to_string(f), std::move(w)));
    }
    bias_ = make_param<T>("fm.bias", Tensor<T>({1}));
  }

  std::string kind() const override { return "fm"; }

  typename Graph<T>::Var forward(Graph<T>& g, const EmbeddedBatch<T>& batch) const override {
    auto blocks = detail::all_blocks(batch);
    if (blocks.size() != linear_.size())
      throw DimensionError("forward: " + std::to_string(blocks.size()) + " fields, model has " +
                           std::to_string(linear_.size()));
    auto first = g.matmul(blocks[0], g.parameter(linear_[0]));
    auto sum_e = blocks[0];
    auto sum_sq = g.mul(blocks[0], blocks[0]);
    for (size_t f = 1; f < blocks.size(); ++f) {
      first = g.add(first, g.matmul(blocks[f], g.parameter(linear_[f])));
      sum_e = g.add(sum_e, blocks[f]);
      sum_sq = g.add(sum_sq, g.mul(blocks[f], blocks[f]));
    }
    auto pair = g.scale(g.add(g.mul(sum_e, sum_e), g.scale(sum_sq, T(-1))), T(0.5));
    auto logit = g.add(g.add(first, g.sum_cols(pair)), g.parameter(bias_));
    return g.clamp_unit(g.sigmoid(logit));
  }

  std::vector<ParamPtr<T>> params() const override {
    std::vector<ParamPtr<T>> ps(linear_.begin(), linear_.end());
    ps.push_back(bias_);
    return ps;
  }

  std::unique_ptr<BaseModel<T>> clone() const override {
    auto c = std::make_unique<FMModel>(*this);
    c->linear_.clear();
    for (auto& p : linear_) c->linear_.push_back(make_param<T>(p->name, p->value, p->requires_grad));
    c->bias_ = make_param<T>(bias_->name, bias_->value, bias_->requires_grad);
    return c;
  }

 private:
  std::vector<ParamPtr<T>> linear_;
  ParamPtr<T> bias_;
};

template <class T>
std::unique_ptr<BaseModel<T>> make_model(const std::string& kind, const FeatureSchema& s,
                                         std::mt19937_64& rng, size_t hidden = 64) {
  size_t fields = 2 + s.n() + s.m();
  if (kind == "wide_deep") return std::make_unique<WideDeepModel<T>>(fields, s.k(), rng, hidden);
  if (kind == "fm") return std::make_unique<FMModel<T>>(fields, s.k(), rng);
  throw UsageError("unknown model kind " + kind);
}

// Schema + embeddings + scoring model, the unit that pretraining produces
// and the warm-up stage wraps without modifying.
template <class T>
struct Pipeline {
  std::shared_ptr<const FittedSchema> schema;
  EmbeddingSet<T> embeddings;
  std::shared_ptr<BaseModel<T>> model;
  bool frozen = false;

  std::vector<ParamPtr<T>> parameters() const {
    auto ps = model->params();
    auto emb = embeddings.all();
    ps.insert(ps.end(), emb.begin(), emb.end());
    return ps;
  }

  void freeze() {
    frozen = true;
    for (auto& p : parameters()) p->requires_grad = false;
  }

  void unfreeze() {
    frozen = false;
    for (auto& p : parameters()) p->requires_grad = true;
  }

  Pipeline clone() const {
    Pipeline c;
    c.schema = schema;
    c.model = std::shared_ptr<BaseModel<T>>(model->clone());
    c.embeddings.k = embeddings.k;
    c.embeddings.item_continuous = embeddings.item_continuous;
    c.embeddings.user_continuous = embeddings.user_continuous;
    auto copy = [](const ParamPtr<T>& p) { return make_param<T>(p->name, p->value, p->requires_grad); };
    c.embeddings.item_id = copy(embeddings.item_id);
    c.embeddings.user_id = copy(embeddings.user_id);
    for (auto& p : embeddings.item_features) c.embeddings.item_features.push_back(copy(p));
    for (auto& p : embeddings.user_features) c.embeddings.user_features.push_back(copy(p));
    c.frozen = frozen;
    return c;
  }

  // Plain scoring pass; no gradients, no mutation.
  std::vector<double> predict(std::span<const EncodedSample> samples) const {
    Graph<T> g;
    auto batch = embed_batch<T>(g, embeddings, samples);
    auto probs = model->forward(g, batch);
    const Tensor<T>& pv = g.value(probs);
    return std::vector<double>(pv.values().begin(), pv.values().end());
  }
};

template <class T>
Pipeline<T> make_pipeline(std::shared_ptr<const FittedSchema> fitted, const std::string& kind,
                          uint64_t root_seed, size_t hidden = 64) {
  auto emb_rng = make_rng(root_seed, "embedding-init");
  auto model_rng = make_rng(root_seed, "model-init");
  Pipeline<T> p;
  p.embeddings = EmbeddingSet<T>::init(*fitted, emb_rng);
  p.model = make_model<T>(kind, fitted->schema(), model_rng, hidden);
  p.schema = std::move(fitted);
  return p;
}

struct TrainLog {
  std::vector<double> epoch_loss;
};

// Supervised training of the whole pipeline (dense parameters and embedding
// tables) with mini-batch Adam on the log loss.
template <class T>
TrainLog pretrain(Pipeline<T>& pipe, std::span<const EncodedSample> data, size_t epochs,
                  size_t batch_size, const AdamConfig<T>& cfg, std::mt19937_64& rng) {
  if (data.empty()) throw UsageError("pretrain: empty dataset");
  if (pipe.frozen) throw ContractError("pretrain: pipeline is frozen");
  if (batch_size == 0) throw UsageError("pretrain: zero batch size");

  Adam<T> opt(cfg);
  for (auto& p : pipe.model->params()) opt.add(p);
  for (auto& p : pipe.embeddings.all()) opt.add(p, /*sparse_rows=*/true);

  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), size_t(0));

  TrainLog log;
  std::vector<EncodedSample> batch;
  for (size_t e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    size_t seen = 0;
    for (size_t off = 0; off < order.size(); off += batch_size) {
      batch.clear();
      for (size_t i = off; i < std::min(off + batch_size, order.size()); ++i)
        batch.push_back(data[order[i]]);
      Graph<T> g;
      auto eb = embed_batch<T>(g, pipe.embeddings, batch);
      auto loss = g.bce_mean(pipe.model->forward(g, eb), eb.labels);
      g.backward(loss);
      opt.step();
      opt.zero_grad();
      total += double(g.value(loss)[0]) * double(batch.size());
      seen += batch.size();
    }
    log.epoch_loss.push_back(total / double(seen));
  }
  return log;
}

}  // namespace mwuf
