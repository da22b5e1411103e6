#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "mwuf/dataio.hpp"
#include "mwuf/metrics.hpp"
#include "mwuf/protocol.hpp"

using namespace mwuf;

namespace {

double pair_counting_auc(const std::vector<double>& s, const std::vector<uint8_t>& y) {
  double won = 0, pairs = 0;
  for (size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      pairs += 1;
      if (s[i] > s[j])
        won += 1;
      else if (s[i] == s[j])
        won += 0.5;
    }
  }
  return won / pairs;
}

EncodedSample sample(uint32_t item, uint32_t user, uint8_t label, int64_t t) {
  EncodedSample s;
  s.item_id = item;
  s.user_id = user;
  s.label = label;
  s.timestamp = t;
  return s;
}

// A small planted dataset encoded and split, shared by the end-to-end tests.
struct Fixture {
  std::shared_ptr<const FittedSchema> schema;
  PhaseDatasets phases;

  explicit Fixture(uint64_t seed = 1, size_t items = 300, size_t interactions = 8000) {
    SyntheticSpec spec;
    spec.items = items;
    spec.users = 150;
    spec.interactions = interactions;
    spec.noise = 0.1;
    spec.seed = seed;
    SyntheticData data = generate_synthetic(spec);
    auto fitted = std::make_shared<FittedSchema>(FittedSchema::fit(synthetic_schema(8), data.rows));
    std::vector<EncodedSample> enc;
    for (const RawRow& r : data.rows) enc.push_back(fitted->encode(r));
    schema = fitted;
    phases = split_items(enc, {.old_threshold = 30, .phase_size = 3});
  }

  ProtocolConfig config(uint64_t seed = 7) const {
    ProtocolConfig cfg;
    cfg.seed = seed;
    cfg.hidden = 32;
    cfg.meta_hidden = 8;
    cfg.pretrain_epochs = 3;
    return cfg;
  }
};

}  // namespace

TEST_CASE("ranking metric matches hand-counted examples") {
  CHECK(auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<uint8_t>{0, 0, 1, 1}) ==
        doctest::Approx(0.75).epsilon(1e-12));
  CHECK(auc(std::vector<double>{0.1, 0.2, 0.9, 0.95}, std::vector<uint8_t>{0, 0, 1, 1}) == 1.0);
  CHECK(auc(std::vector<double>{0.3, 0.3, 0.3}, std::vector<uint8_t>{0, 1, 0}) == 0.5);
  CHECK_THROWS_AS(auc(std::vector<double>{0.3, 0.4}, std::vector<uint8_t>{1, 1}), MetricError);

  // pooled ranking equals exhaustive pair counting, ties included
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> level(0, 9);
  std::bernoulli_distribution coin(0.4);
  std::vector<double> s;
  std::vector<uint8_t> y;
  for (int i = 0; i < 500; ++i) {
    s.push_back(level(rng) / 10.0);
    y.push_back(coin(rng) ? 1 : 0);
  }
  y[0] = 0;
  y[1] = 1;
  CHECK(std::abs(auc(s, y) - pair_counting_auc(s, y)) < 1e-12);

  // invariant under strictly monotone transforms
  std::vector<double> warped;
  for (double v : s) warped.push_back(std::exp(3.0 * v - 1.0));
  CHECK(auc(s, y) == auc(warped, y));
}

TEST_CASE("relative improvement is affine in the measured value") {
  CHECK(relaimpr(0.62, 0.58) == doctest::Approx(50.0));
  CHECK(relaimpr(0.58, 0.58) == 0.0);
  CHECK_THROWS_AS(relaimpr(0.6, 0.5), MetricError);
  const double base = 0.61;
  double slope = (relaimpr(0.68, base) - relaimpr(0.63, base)) / (0.68 - 0.63);
  CHECK(slope == doctest::Approx(100.0 / (base - 0.5)));
}

TEST_CASE("items land in old, new or dropped by their sample counts") {
  std::vector<EncodedSample> rows;
  for (int t = 0; t < 6; ++t) rows.push_back(sample(0, uint32_t(t), 1, 100 + t));  // old: 6 > 5
  for (int t = 4; t >= 1; --t) rows.push_back(sample(1, uint32_t(t), t % 2, t));   // new: 4
  for (int t = 0; t < 3; ++t) rows.push_back(sample(2, uint32_t(t), 0, t));        // dropped: 3K
  for (int t = 0; t < 5; ++t) rows.push_back(sample(3, uint32_t(t), 0, t));        // dropped: == N

  PhaseDatasets p = split_items(rows, {.old_threshold = 5, .phase_size = 1});
  CHECK(p.old_item_rows == std::vector<uint32_t>{0});
  CHECK(p.old_train.size() == 6);
  CHECK(p.dropped_items == 2);
  REQUIRE(p.new_items.size() == 1);
  const ItemPhases& ip = p.new_items[0];
  CHECK(ip.item_row == 1);
  REQUIRE(ip.warm_a.size() == 1);
  CHECK(ip.warm_a[0].timestamp == 1);  // sorted even though rows arrived reversed
  CHECK(ip.warm_b[0].timestamp == 2);
  CHECK(ip.warm_c[0].timestamp == 3);
  REQUIRE(ip.test.size() == 1);
  CHECK(ip.test[0].timestamp == 4);

  CHECK_THROWS_AS(split_items(rows, SplitSpec{.old_threshold = 3, .phase_size = 1}), UsageError);
  std::vector<EncodedSample> only_old(rows.begin(), rows.begin() + 6);
  CHECK_THROWS_AS(split_items(only_old, SplitSpec{.old_threshold = 5, .phase_size = 1}),
                  ProtocolError);
}

TEST_CASE("random datasets keep every split invariant") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<uint32_t> item(0, 40), user(0, 30);
    std::uniform_int_distribution<int64_t> time(0, 500);
    std::vector<EncodedSample> rows;
    for (int i = 0; i < 900; ++i)
      rows.push_back(sample(item(rng), user(rng), uint8_t(i % 2), time(rng)));
    SplitSpec spec{.old_threshold = 25, .phase_size = 4};

    PhaseDatasets p;
    try {
      p = split_items(rows, spec);
    } catch (const ProtocolError&) {
      continue;
    }

    std::map<uint32_t, size_t> counts;
    for (const EncodedSample& s : rows) counts[s.item_id]++;
    size_t old_n = 0, new_n = 0, dropped = 0;
    for (auto& [it, c] : counts) {
      if (c > spec.old_threshold)
        ++old_n;
      else if (c > 3 * spec.phase_size && c < spec.old_threshold)
        ++new_n;
      else
        ++dropped;
    }
    CHECK(p.old_item_rows.size() == old_n);
    CHECK(p.new_items.size() == new_n);
    CHECK(p.dropped_items == dropped);

    for (const ItemPhases& ip : p.new_items) {
      CHECK(ip.warm_a.size() == spec.phase_size);
      CHECK(ip.warm_b.size() == spec.phase_size);
      CHECK(ip.warm_c.size() == spec.phase_size);
      CHECK(ip.test.size() == counts[ip.item_row] - 3 * spec.phase_size);
      CHECK(ip.test.size() >= 1);
      std::vector<const std::vector<EncodedSample>*> slices = {&ip.warm_a, &ip.warm_b, &ip.warm_c,
                                                               &ip.test};
      int64_t last = std::numeric_limits<int64_t>::min();
      for (auto* sl : slices)
        for (const EncodedSample& s : *sl) {
          CHECK(s.item_id == ip.item_row);
          CHECK(s.timestamp >= last);
          last = s.timestamp;
        }
    }
  }
}

TEST_CASE("method names round-trip and bad ones are rejected") {
  for (Method m : {Method::base, Method::mwuf, Method::mwuf_init, Method::mwuf_scale,
                   Method::mwuf_shift})
    CHECK(parse_method(to_string(m)) == m);
  CHECK_THROWS_WITH_AS(parse_method("dropout"), doctest::Contains("dropout"), UsageError);
}

TEST_CASE("zero learning rates reduce every phase to the cold model") {
  Fixture f;
  ProtocolConfig cfg = f.config();
  cfg.cold_lr = 0.0;
  cfg.meta_lr = 0.0;
  MetricReport rep = run_protocol(f.schema, "wide_deep", Method::base, f.phases, cfg);

  // the same frozen model scored directly on each pool
  PipelinePtr pre = pretrain_base(f.schema, "wide_deep", f.phases, cfg);
  std::array<Slice, 4> slices = {Slice::warm_a, Slice::warm_b, Slice::warm_c, Slice::test};
  for (size_t i = 0; i < 4; ++i) {
    std::vector<EncodedSample> pool = pooled_slice(f.phases, slices[i]);
    std::vector<uint8_t> labels;
    for (const EncodedSample& s : pool) labels.push_back(s.label);
    CHECK(rep.auc[i] == auc(pre->predict(pool), labels));
  }
}

TEST_CASE("a fixed seed reproduces the full run bit for bit") {
  Fixture f;
  ProtocolConfig cfg = f.config();
  cfg.pretrain_epochs = 2;
  MetricReport a = run_protocol(f.schema, "wide_deep", Method::mwuf, f.phases, cfg);
  MetricReport b = run_protocol(f.schema, "wide_deep", Method::mwuf, f.phases, cfg);
  CHECK(a.auc == b.auc);
  CHECK(a.relaimpr == b.relaimpr);
  cfg.seed = 8;
  MetricReport c = run_protocol(f.schema, "wide_deep", Method::mwuf, f.phases, cfg);
  CHECK(a.auc != c.auc);
}

TEST_CASE("degenerate conditioning nets reproduce the shared-init method") {
  Fixture f;
  ProtocolConfig cfg = f.config();
  cfg.meta_lr = 0.0;
  cfg.pretrain_epochs = 2;
  PipelinePtr pre = pretrain_base(f.schema, "wide_deep", f.phases, cfg);

  MetricReport with_nets =
      evaluate_method(pre, Method::mwuf, f.phases, cfg, [](Warmup<float>& w) {
        for (auto& p : w.nets()->params())
          for (size_t i = 0; i < p->value.size(); ++i) p->value[i] = 0.0f;
      });
  MetricReport without = evaluate_method(pre, Method::mwuf_init, f.phases, cfg);
  CHECK(with_nets.auc == without.auc);
}

TEST_CASE("fine-tuning the baseline does not hurt later phases") {
  double cold = 0, warm_c = 0;
  const int seeds = 10;
  for (int s = 0; s < seeds; ++s) {
    Fixture f(uint64_t(s + 1));
    ProtocolConfig cfg = f.config(uint64_t(100 + s));
    cfg.pretrain_epochs = 3;
    MetricReport rep = run_protocol(f.schema, "wide_deep", Method::base, f.phases, cfg);
    cold += rep.auc[0];
    warm_c += rep.auc[3];
  }
  CHECK(warm_c / seeds >= cold / seeds - 0.01);
}

TEST_CASE("the ablation block shares one baseline per seed") {
  Fixture f;
  ProtocolConfig cfg = f.config();
  cfg.pretrain_epochs = 2;
  std::vector<uint64_t> seeds = {3, 4};
  std::vector<MetricReport> reps = ablation_suite(f.schema, "wide_deep", f.phases, cfg, seeds);
  REQUIRE(reps.size() == 10);
  const char* order[5] = {"base", "mwuf_init", "mwuf_scale", "mwuf_shift", "mwuf"};
  for (size_t i = 0; i < reps.size(); ++i) {
    CHECK(reps[i].method == order[i % 5]);
    CHECK(reps[i].seed == seeds[i / 5]);
    CHECK(reps[i].baseline == "base");
    for (double a : reps[i].auc) {
      CHECK(a >= 0.0);
      CHECK(a <= 1.0);
    }
  }
  for (size_t block = 0; block < 2; ++block) {
    const MetricReport& base = reps[block * 5];
    for (double r : base.relaimpr) CHECK(r == 0.0);
    for (size_t m = 1; m < 5; ++m)
      for (size_t i = 0; i < 4; ++i) {
        double expect = relaimpr(reps[block * 5 + m].auc[i], base.auc[i]);
        CHECK(reps[block * 5 + m].relaimpr[i] == doctest::Approx(expect));
      }
  }

  std::string csv = reports_csv(reps);
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  CHECK(line == "method,seed,phase,auc,relaimpr_vs_base");
  size_t rows = 0;
  while (std::getline(is, line)) ++rows;
  CHECK(rows == 40);
  CHECK(csv.find("base,3,cold,") != std::string::npos);
  CHECK(csv.find(",warm_b,") != std::string::npos);
}

TEST_CASE("online updates leave the shared pretrained model untouched") {
  Fixture f;
  ProtocolConfig cfg = f.config();
  cfg.pretrain_epochs = 2;
  cfg.online_base_update = true;
  PipelinePtr pre = pretrain_base(f.schema, "wide_deep", f.phases, cfg);
  CHECK_FALSE(pre->frozen);

  std::vector<Tensor<float>> before;
  for (auto& p : pre->parameters()) before.push_back(p->value);
  MetricReport rep = evaluate_method(pre, Method::mwuf, f.phases, cfg);
  auto params = pre->parameters();
  for (size_t i = 0; i < params.size(); ++i) CHECK(params[i]->value == before[i]);
  for (double a : rep.auc) CHECK(std::isfinite(a));
}
