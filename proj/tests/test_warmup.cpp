#include <doctest.h>

#include <cstring>
#include <random>

#include "mwuf/warmup.hpp"
#include "testutil.hpp"

using namespace mwuf;
using testutil::finite_diff;
using testutil::max_rel_err;

namespace {

template <class T>
bool same_bytes(const Tensor<T>& a, const Tensor<T>& b) {
  return a.same_shape(b) &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

FeatureSchema planted_schema(size_t k) {
  return FeatureSchema(
      {
          {.name = "item", .side = Side::item, .is_id = true},
          {.name = "category", .side = Side::item},
          {.name = "user", .side = Side::user, .is_id = true},
          {.name = "group", .side = Side::user},
      },
      k);
}

// Labels follow "user group matches item category", lightly flipped; the
// category/group tables carry real signal for the base model to learn.
template <class T>
struct Planted {
  std::shared_ptr<const FittedSchema> fitted;
  std::vector<EncodedSample> data;
  std::vector<uint32_t> old_rows;
  std::shared_ptr<const Pipeline<T>> base;

  Planted(size_t k, size_t samples, uint64_t seed, size_t hidden = 16,
          size_t pretrain_epochs = 6) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> item(0, 29), user(0, 39);
    std::bernoulli_distribution flip(0.1);
    std::vector<RawRow> rows;
    for (size_t t = 0; t < samples; ++t) {
      int i = item(rng), u = user(rng);
      RawRow r;
      r.columns["item"] = "i" + std::to_string(i);
      r.columns["category"] = "c" + std::to_string(i % 2);
      r.columns["user"] = "u" + std::to_string(u);
      r.columns["group"] = "g" + std::to_string(u % 2);
      bool y = (i % 2) == (u % 2);
      r.label = (y != flip(rng)) ? 1 : 0;
      r.timestamp = int64_t(t);
      rows.push_back(std::move(r));
    }
    fitted = std::make_shared<FittedSchema>(FittedSchema::fit(planted_schema(k), rows));
    for (auto& r : rows) data.push_back(fitted->encode(r));
    for (uint32_t r = 0; r < fitted->vocab("item").size(); ++r) old_rows.push_back(r);

    auto pipe = make_pipeline<T>(fitted, "wide_deep", seed, hidden);
    AdamConfig<T> cfg;
    cfg.lr = T(0.01);
    auto prng = make_rng(seed, "pretrain");
    pretrain(pipe, data, pretrain_epochs, 64, cfg, prng);
    pipe.freeze();
    base = std::make_shared<const Pipeline<T>>(std::move(pipe));
  }
};

}  // namespace

TEST_CASE("common initial vector is the row mean") {
  Tensor<float> t2 = Tensor<float>::from({2, 2}, {1, 3, 3, 1});
  CHECK(common_init(t2) == Tensor<float>::row_vector({2, 2}));

  Tensor<float> t1 = Tensor<float>::from({1, 3}, {4, 5, 6});
  CHECK(common_init(t1) == Tensor<float>::row_vector({4, 5, 6}));

  std::vector<uint32_t> sub = {0};
  CHECK(common_init(t2, sub) == Tensor<float>::row_vector({1, 3}));
  std::vector<uint32_t> bad = {9};
  CHECK_THROWS_AS(common_init(t2, bad), LookupError);

  // large table against an independent streaming mean
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-1, 1);
  Tensor<float> big({1000, 8});
  for (size_t i = 0; i < big.size(); ++i) big[i] = float(u(rng));
  std::vector<double> stream(8, 0.0);
  for (size_t r = 0; r < 1000; ++r)
    for (size_t j = 0; j < 8; ++j) stream[j] += (double(big.at(r, j)) - stream[j]) / double(r + 1);
  Tensor<float> got = common_init(big);
  for (size_t j = 0; j < 8; ++j) CHECK(double(got[j]) == doctest::Approx(stream[j]).epsilon(1e-6));
}

TEST_CASE("replacement ID layer starts uniform and owns its storage") {
  Tensor<float> init = Tensor<float>::row_vector({0.5f, -0.5f});
  auto cold = ColdEmbeddingLayer<float>::create(4, init);
  for (size_t r = 0; r < 4; ++r) {
    CHECK(cold.table->value.at(r, 0) == 0.5f);
    CHECK(cold.table->value.at(r, 1) == -0.5f);
  }
  cold.table->value.at(2, 0) = 9.f;
  CHECK(init[0] == 0.5f);
  CHECK_THROWS_AS(ColdEmbeddingLayer<float>::create(0, init), UsageError);
}

TEST_CASE("interaction log keeps users unique in arrival order") {
  InteractionLog log;
  log.record(7, 1, 10);
  log.record(7, 2, 11);
  log.record(7, 1, 12);  // duplicate user, ignored
  log.record(7, 3, 13);
  CHECK(log.count(7) == 3);
  CHECK(log.recent_users(7, 0) == std::vector<uint32_t>{1, 2, 3});
  CHECK(log.recent_users(7, 2) == std::vector<uint32_t>{2, 3});
  CHECK(log.count(8) == 0);
  CHECK(log.recent_users(8, 5).empty());
}

TEST_CASE("user aggregation is a capped mean with an empty flag") {
  Tensor<float> users = Tensor<float>::from({3, 2}, {1, 3, 3, 1, 10, 10});
  std::vector<uint32_t> one = {1};
  auto a = aggregate_users<float>(one, users, 100);
  CHECK_FALSE(a.empty);
  CHECK(a.mean == Tensor<float>::row_vector({3, 1}));

  std::vector<uint32_t> two = {0, 1}, rev = {1, 0};
  CHECK(aggregate_users<float>(two, users, 100).mean == Tensor<float>::row_vector({2, 2}));
  CHECK(aggregate_users<float>(two, users, 100).mean ==
        aggregate_users<float>(rev, users, 100).mean);

  // cap keeps the most recent entries (the suffix)
  std::vector<uint32_t> three = {2, 0, 1};
  CHECK(aggregate_users<float>(three, users, 2).mean == Tensor<float>::row_vector({2, 2}));

  std::vector<uint32_t> none;
  auto e = aggregate_users<float>(none, users, 100);
  CHECK(e.empty);
  CHECK(e.mean == Tensor<float>(std::vector<size_t>{2}));
}

TEST_CASE("zeroed conditioning nets compose to the identity transform") {
  auto rng = make_rng(3, "meta-init");
  auto nets = MetaNets<float>::init(/*k=*/3, /*n=*/2, /*hidden=*/4, rng);
  for (auto& p : nets.params()) p->value.fill(0.f);

  Graph<float> g;
  auto feats = g.constant(Tensor<float>::from({1, 6}, {1, 2, 3, 4, 5, 6}));
  auto ts = nets.scale_forward(g, feats);
  CHECK(g.value(ts) == Tensor<float>::from({1, 3}, {1, 1, 1}));

  auto agg = g.constant(Tensor<float>::from({1, 3}, {0.3f, -0.2f, 0.9f}));
  auto tt = nets.shift_forward(g, agg);
  CHECK(g.value(tt) == Tensor<float>(std::vector<size_t>{1, 3}));

  auto cold = g.constant(Tensor<float>::from({1, 3}, {0.4f, -0.6f, 2.f}));
  auto warm = warm_embedding(g, cold, ts, tt);
  CHECK(g.value(warm) == g.value(cold));

  CHECK_THROWS_AS(nets.scale_forward(g, agg), DimensionError);
  CHECK_THROWS_AS(nets.shift_forward(g, feats), DimensionError);
  CHECK_THROWS_AS(MetaNets<float>::init(3, 0, 4, rng), UsageError);
}

TEST_CASE("conditioning nets match hand matrix arithmetic") {
  auto rng = make_rng(4, "meta-init");
  auto nets = MetaNets<double>::init(/*k=*/2, /*n=*/1, /*hidden=*/1, rng);
  // scale: x[2] -> hidden 1 -> out 2, then +1
  nets.scale1.w->value = Tensor<double>::from({2, 1}, {0.5, -1.0});
  nets.scale1.b->value = Tensor<double>::row_vector({0.25});
  nets.scale2.w->value = Tensor<double>::from({1, 2}, {2.0, -3.0});
  nets.scale2.b->value = Tensor<double>::row_vector({0.1, 0.2});

  Graph<double> g;
  auto x = g.constant(Tensor<double>::from({1, 2}, {1.0, 0.5}));
  // hidden = relu(1*0.5 + 0.5*(-1) + 0.25) = 0.25
  // out = 0.25*[2,-3] + [0.1,0.2] + 1 = [1.6, 0.45]
  auto ts = g.value(nets.scale_forward(g, x));
  CHECK(ts.at(0, 0) == doctest::Approx(1.6));
  CHECK(ts.at(0, 1) == doctest::Approx(0.45));

  nets.shift1.w->value = Tensor<double>::from({2, 1}, {1.0, 1.0});
  nets.shift1.b->value = Tensor<double>::row_vector({-0.5});
  nets.shift2.w->value = Tensor<double>::from({1, 2}, {4.0, 0.5});
  nets.shift2.b->value = Tensor<double>::row_vector({0.0, -1.0});
  // hidden = relu(0.2 + 0.4 - 0.5) = 0.1 ; out = [0.4, 0.05] + [0, -1]
  Aggregated<double> agg{Tensor<double>::row_vector({0.2, 0.4}), false};
  Tensor<double> tt = nets.shift_vector(agg);
  CHECK(tt[0] == doctest::Approx(0.4));
  CHECK(tt[1] == doctest::Approx(-0.95));

  // the empty flag skips the net entirely
  Aggregated<double> hollow{Tensor<double>(std::vector<size_t>{2}), true};
  CHECK(nets.shift_vector(hollow) == Tensor<double>(std::vector<size_t>{2}));
}

TEST_CASE("warm composition algebra") {
  Graph<float> g;
  auto v = g.constant(Tensor<float>::from({1, 2}, {1, 2}));
  auto s = g.constant(Tensor<float>::from({1, 2}, {0.5f, 2}));
  auto t = g.constant(Tensor<float>::from({1, 2}, {0.1f, -1}));
  auto w = g.value(warm_embedding(g, v, s, t));
  CHECK(w.at(0, 0) == doctest::Approx(0.6));
  CHECK(w.at(0, 1) == doctest::Approx(3.0));

  std::mt19937_64 rng(6);
  std::uniform_real_distribution<float> u(-3, 3);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor<float> vec({1, 5});
    for (size_t i = 0; i < 5; ++i) vec[i] = u(rng);
    Graph<float> gg;
    auto vv = gg.constant(vec);
    auto ones = gg.constant(Tensor<float>({1, 5}, 1.f));
    auto zeros = gg.constant(Tensor<float>({1, 5}, 0.f));
    CHECK(gg.value(warm_embedding(gg, vv, ones, zeros)) == vec);
    auto shift = gg.constant(Tensor<float>({1, 5}, 0.75f));
    auto from_zero = gg.value(warm_embedding(gg, zeros, vv, shift));
    for (size_t i = 0; i < 5; ++i) CHECK(from_zero[i] == 0.75f);
  }
}

TEST_CASE("dual-loss step touches nothing it should not") {
  Planted<float> fx(4, 400, 77);
  WarmupConfig<float> cfg;
  cfg.meta_hidden = 8;
  Warmup<float> w(fx.base, cfg, 123, fx.old_rows);

  std::vector<std::vector<float>> base_before;
  for (auto& p : fx.base->parameters()) base_before.push_back(p->value.values());
  auto nets_before = w.nets()->params()[0]->value;
  auto cold_before = w.cold_layer().table->value;

  for (size_t off = 0; off + 16 <= 320; off += 16) {
    std::span<const EncodedSample> batch(fx.data.data() + off, 16);
    w.train_step(batch);
    w.observe(batch);
  }

  size_t i = 0;
  for (auto& p : fx.base->parameters()) {
    CHECK(p->value.values() == base_before[i]);
    CHECK(std::memcmp(p->value.data(), base_before[i].data(), 4 * p->value.size()) == 0);
    ++i;
  }
  CHECK_FALSE(same_bytes(w.nets()->params()[0]->value, nets_before));
  CHECK_FALSE(same_bytes(w.cold_layer().table->value, cold_before));
}

TEST_CASE("warm-only training leaves the replacement ID table byte-identical") {
  Planted<float> fx(4, 300, 78);
  WarmupConfig<float> cfg;
  cfg.meta_hidden = 8;
  cfg.cold_opt.lr = 0.f;  // disables the cold half: only the warm loss moves anything
  Warmup<float> w(fx.base, cfg, 5, fx.old_rows);

  auto cold_before = w.cold_layer().table->value;
  auto net_before = w.nets()->params()[2]->value;
  for (size_t off = 0; off + 16 <= 160; off += 16) {
    std::span<const EncodedSample> batch(fx.data.data() + off, 16);
    w.train_step(batch);
    w.observe(batch);
  }
  CHECK(same_bytes(w.cold_layer().table->value, cold_before));
  CHECK_FALSE(same_bytes(w.nets()->params()[2]->value, net_before));
}

TEST_CASE("warm gradients stay inside the conditioning nets") {
  Planted<float> fx(4, 300, 79);
  WarmupConfig<float> cfg;
  cfg.meta_hidden = 8;
  Warmup<float> w(fx.base, cfg, 9, fx.old_rows);
  std::span<const EncodedSample> batch(fx.data.data(), 32);
  w.observe(batch);  // some history so the shift path is live

  w.warm_loss(std::span<const EncodedSample>(fx.data.data() + 32, 32), /*with_backward=*/true);

  for (float gv : w.cold_layer().table->grad.values()) CHECK(gv == 0.f);
  for (auto& p : fx.base->parameters())
    for (float gv : p->grad.values()) CHECK(gv == 0.f);
  double net_norm = 0;
  for (auto& p : w.nets()->params())
    for (float gv : p->grad.values()) net_norm += double(gv) * double(gv);
  CHECK(net_norm > 0.0);
}

TEST_CASE("warm-loss gradients match finite differences at 64-bit") {
  Planted<double> fx(4, 200, 80, /*hidden=*/6, /*pretrain_epochs=*/2);
  WarmupConfig<double> cfg;
  cfg.meta_hidden = 3;
  Warmup<double> w(fx.base, cfg, 11, fx.old_rows);
  w.observe(std::span<const EncodedSample>(fx.data.data(), 64));

  std::span<const EncodedSample> batch(fx.data.data() + 64, 8);
  auto loss = [&] { return w.warm_loss(batch); };
  w.warm_loss(batch, /*with_backward=*/true);
  for (auto& p : w.nets()->params()) {
    auto fd = finite_diff(*p, loss);
    CHECK(max_rel_err(p->grad, fd) < 1e-4);
  }
}

TEST_CASE("hot items bypass the warm path entirely") {
  Planted<float> fx(4, 400, 81);
  WarmupConfig<float> cfg;
  cfg.meta_hidden = 8;
  Warmup<float> w(fx.base, cfg, 13, fx.old_rows);  // every item is old here
  for (size_t off = 0; off + 16 <= 160; off += 16) {
    std::span<const EncodedSample> b(fx.data.data() + off, 16);
    w.train_step(b);
    w.observe(b);
  }
  std::span<const EncodedSample> eval(fx.data.data() + 300, 50);
  CHECK(w.predict(eval) == fx.base->predict(eval));
}

TEST_CASE("identity nets predict exactly like the plain replacement table") {
  Planted<float> fx(4, 300, 82);
  WarmupConfig<float> cfg;
  cfg.meta_hidden = 8;
  std::vector<uint32_t> no_old;  // treat every item as new so the warm path runs
  Warmup<float> with_nets(fx.base, cfg, 17,
                          std::span<const uint32_t>(no_old.data(), no_old.size()));
  for (auto& p : with_nets.nets()->params()) p->value.fill(0.f);

  WarmupConfig<float> icfg = cfg;
  icfg.variant = WarmVariant::init_only;
  Warmup<float> plain(fx.base, icfg, 17, std::span<const uint32_t>(no_old.data(), no_old.size()));

  std::span<const EncodedSample> some(fx.data.data(), 40);
  with_nets.observe(some);
  plain.observe(some);
  std::span<const EncodedSample> eval(fx.data.data() + 100, 60);
  auto a = with_nets.predict(eval);
  auto b = plain.predict(eval);
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-6));
}

TEST_CASE("warm prediction equals the composition assembled by hand") {
  Planted<float> fx(3, 300, 83);
  std::vector<uint32_t> no_old;
  for (WarmVariant variant : {WarmVariant::full, WarmVariant::scale_only,
                              WarmVariant::shift_only, WarmVariant::init_only}) {
    WarmupConfig<float> cfg;
    cfg.meta_hidden = 5;
    cfg.variant = variant;
    Warmup<float> w(fx.base, cfg, 19, std::span<const uint32_t>(no_old.data(), no_old.size()));
    std::span<const EncodedSample> history(fx.data.data(), 80);
    w.observe(history);

    const EncodedSample& s = fx.data[120];
    double got = w.predict(std::span<const EncodedSample>(&s, 1))[0];

    // rebuild tau-scale, tau-shift, and the composed embedding by hand
    const size_t k = 3;
    auto se = embed_sample(s, fx.base->embeddings);
    Tensor<float> vcold({1, k});
    for (size_t j = 0; j < k; ++j) vcold.at(0, j) = w.cold_layer().table->value.at(s.item_id, j);

    Tensor<float> warm = vcold;
    if (variant != WarmVariant::init_only) {
      Graph<float> g;
      Tensor<float> scale({1, k}, 1.f), shift({1, k}, 0.f);
      if (variant != WarmVariant::shift_only) {
        Tensor<float> feats({1, se.item_feats.size() * k});
        size_t off = 0;
        for (auto& t : se.item_feats)
          for (size_t j = 0; j < k; ++j) feats[off++] = t[j];
        scale = g.value(w.nets()->scale_forward(g, g.constant(feats)));
      }
      if (variant != WarmVariant::scale_only) {
        auto users = w.log().recent_users(s.item_id, 100);
        auto agg = aggregate_users<float>(users, fx.base->embeddings.user_id->value, 100);
        Tensor<float> sv = w.nets()->shift_vector(agg);
        for (size_t j = 0; j < k; ++j) shift.at(0, j) = sv[j];
      }
      for (size_t j = 0; j < k; ++j)
        warm.at(0, j) = vcold.at(0, j) * scale.at(0, j) + shift.at(0, j);
    }

    Graph<float> g2;
    auto eb = embed_batch<float>(g2, fx.base->embeddings,
                                 std::span<const EncodedSample>(&s, 1), g2.constant(warm));
    double want = double(g2.value(fx.base->model->forward(g2, eb))[0]);
    CHECK(got == doctest::Approx(want).epsilon(1e-6));
  }
}

TEST_CASE("training lowers the warm loss on planted structure") {
  double early_total = 0, late_total = 0;
  for (uint64_t seed = 0; seed < 5; ++seed) {
    Planted<float> fx(8, 6400, 900 + seed);
    WarmupConfig<float> cfg;
    Warmup<float> w(fx.base, cfg, seed, fx.old_rows);
    std::vector<double> warm_losses;
    for (size_t off = 0; off + 32 <= 6400; off += 32) {  // 200 steps
      std::span<const EncodedSample> batch(fx.data.data() + off, 32);
      warm_losses.push_back(w.train_step(batch).second);
      w.observe(batch);
    }
    size_t tail = warm_losses.size() - 5;
    for (size_t i = 0; i < 5; ++i) {
      early_total += warm_losses[i];
      late_total += warm_losses[tail + i];
    }
  }
  CHECK(late_total < early_total);
}

TEST_CASE("stage preconditions") {
  Planted<float> fx(4, 200, 84);
  Pipeline<float> loose = fx.base->clone();
  loose.frozen = false;
  auto loose_ptr = std::make_shared<const Pipeline<float>>(std::move(loose));
  WarmupConfig<float> cfg;
  CHECK_THROWS_AS(Warmup<float>(loose_ptr, cfg, 1, fx.old_rows), ContractError);

  Warmup<float> w(fx.base, cfg, 1, fx.old_rows);
  std::vector<EncodedSample> none;
  CHECK_THROWS_AS(w.train_step(none), UsageError);
}

TEST_CASE("online mode keeps training the base on the cold loss") {
  Planted<float> fx(4, 300, 21);
  WarmupConfig<float> cfg;
  cfg.online_base = true;
  CHECK_THROWS_AS(Warmup<float>(fx.base, cfg, 1, fx.old_rows), ContractError);

  Pipeline<float> live = fx.base->clone();
  live.unfreeze();
  auto live_ptr = std::make_shared<const Pipeline<float>>(std::move(live));
  Warmup<float> w(live_ptr, cfg, 1, fx.old_rows);

  std::vector<Tensor<float>> dense_before;
  for (auto& p : live_ptr->model->params()) dense_before.push_back(p->value);
  Tensor<float> ids_before = live_ptr->embeddings.item_id->value;

  std::span<const EncodedSample> batch(fx.data.data(), 64);
  for (int s = 0; s < 5; ++s) w.train_step(batch);

  auto dense_after = live_ptr->model->params();
  bool moved = false;
  for (size_t i = 0; i < dense_after.size(); ++i)
    if (!(dense_after[i]->value == dense_before[i])) moved = true;
  CHECK(moved);
  // the superseded ID table receives no gradient even online
  CHECK(live_ptr->embeddings.item_id->value == ids_before);
}
