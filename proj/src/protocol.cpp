#include "mwuf/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "mwuf/metrics.hpp"
#include "mwuf/rng.hpp"

namespace mwuf {

namespace {

std::vector<uint8_t> labels_of(std::span<const EncodedSample> samples) {
  std::vector<uint8_t> out(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) out[i] = samples[i].label;
  return out;
}

void sort_by_time(std::vector<EncodedSample>& rows) {
  std::stable_sort(rows.begin(), rows.end(),
                   [](const EncodedSample& a, const EncodedSample& b) {
                     return a.timestamp < b.timestamp;
                   });
}

}  // namespace

PhaseDatasets split_items(std::span<const EncodedSample> dataset, SplitSpec spec) {
  if (spec.phase_size == 0) throw UsageError("split: phase size must be positive");
  if (spec.old_threshold <= 3 * spec.phase_size)
    throw UsageError("split: threshold " + std::to_string(spec.old_threshold) +
                     " leaves no room for new items (need > " +
                     std::to_string(3 * spec.phase_size) + ")");
  if (dataset.empty()) throw UsageError("split: empty dataset");

  // Per-item sample indices in first-appearance order.
  std::vector<uint32_t> items;
  std::unordered_map<uint32_t, std::vector<size_t>> by_item;
  for (size_t i = 0; i < dataset.size(); ++i) {
    auto [it, fresh] = by_item.try_emplace(dataset[i].item_id);
    if (fresh) items.push_back(dataset[i].item_id);
    it->second.push_back(i);
  }

  PhaseDatasets out;
  out.spec = spec;
  const size_t k = spec.phase_size;
  std::unordered_map<uint32_t, bool> old_flag;
  for (uint32_t item : items) {
    std::vector<size_t>& idx = by_item[item];
    size_t count = idx.size();
    if (count > spec.old_threshold) {
      out.old_item_rows.push_back(item);
      old_flag[item] = true;
      continue;
    }
    if (count <= 3 * k || count >= spec.old_threshold) {
      ++out.dropped_items;
      continue;
    }
    std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
      return dataset[a].timestamp < dataset[b].timestamp;
    });
    ItemPhases ip;
    ip.item_row = item;
    for (size_t i = 0; i < count; ++i) {
      const EncodedSample& s = dataset[idx[i]];
      if (i < k)
        ip.warm_a.push_back(s);
      else if (i < 2 * k)
        ip.warm_b.push_back(s);
      else if (i < 3 * k)
        ip.warm_c.push_back(s);
      else
        ip.test.push_back(s);
    }
    out.new_items.push_back(std::move(ip));
  }
  if (out.new_items.empty())
    throw ProtocolError("split: no item falls inside the new-item band");

  for (const EncodedSample& s : dataset)
    if (auto it = old_flag.find(s.item_id); it != old_flag.end() && it->second)
      out.old_train.push_back(s);
  std::sort(out.old_item_rows.begin(), out.old_item_rows.end());
  return out;
}

std::vector<EncodedSample> pooled_slice(const PhaseDatasets& phases, Slice s) {
  std::vector<EncodedSample> out;
  for (const ItemPhases& ip : phases.new_items) {
    const std::vector<EncodedSample>* src = nullptr;
    switch (s) {
      case Slice::warm_a: src = &ip.warm_a; break;
      case Slice::warm_b: src = &ip.warm_b; break;
      case Slice::warm_c: src = &ip.warm_c; break;
      case Slice::test: src = &ip.test; break;
    }
    out.insert(out.end(), src->begin(), src->end());
  }
  sort_by_time(out);
  return out;
}

const char* to_string(Method m) {
  switch (m) {
    case Method::base: return "base";
    case Method::mwuf: return "mwuf";
    case Method::mwuf_init: return "mwuf_init";
    case Method::mwuf_scale: return "mwuf_scale";
    case Method::mwuf_shift: return "mwuf_shift";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  for (Method m : {Method::base, Method::mwuf, Method::mwuf_init, Method::mwuf_scale,
                   Method::mwuf_shift})
    if (name == to_string(m)) return m;
  throw UsageError("unknown method '" + name +
                   "' (expected base, mwuf, mwuf_init, mwuf_scale or mwuf_shift)");
}

PipelinePtr pretrain_base(std::shared_ptr<const FittedSchema> schema, const std::string& kind,
                          const PhaseDatasets& phases, const ProtocolConfig& cfg) {
  auto pipe = std::make_shared<Pipeline<float>>(
      make_pipeline<float>(std::move(schema), kind, cfg.seed, cfg.hidden));
  AdamConfig<float> opt;
  opt.lr = float(cfg.pretrain_lr);
  auto rng = make_rng(cfg.seed, "pretrain-shuffle");
  pretrain(*pipe, phases.old_train, cfg.pretrain_epochs, cfg.pretrain_batch, opt, rng);
  if (!cfg.online_base_update) pipe->freeze();
  return pipe;
}

void train_warmup_modules(Warmup<float>& warm, const PhaseDatasets& phases,
                          const ProtocolConfig& cfg) {
  std::vector<EncodedSample> old_sorted(phases.old_train.begin(), phases.old_train.end());
  sort_by_time(old_sorted);
  if (old_sorted.empty()) return;
  size_t bs = std::min(cfg.batch_cap, old_sorted.size());
  for (size_t e = 0; e < cfg.meta_epochs; ++e) {
    for (size_t off = 0; off < old_sorted.size(); off += bs) {
      std::span<const EncodedSample> b(old_sorted.data() + off,
                                       std::min(bs, old_sorted.size() - off));
      warm.train_step(b);
      warm.observe(b);
    }
  }
}

MetricReport evaluate_method(const PipelinePtr& pretrained, Method method,
                             const PhaseDatasets& phases, const ProtocolConfig& cfg,
                             const std::function<void(Warmup<float>&)>& prepare) {
  // Online mode mutates the base model, so each method works on its own copy.
  std::shared_ptr<const Pipeline<float>> base =
      cfg.online_base_update ? std::make_shared<Pipeline<float>>(pretrained->clone())
                             : std::shared_ptr<const Pipeline<float>>(pretrained);

  WarmupConfig<float> wc;
  wc.meta_hidden = cfg.meta_hidden;
  wc.user_cap = cfg.user_cap;
  wc.cold_opt.lr = float(cfg.cold_lr);
  wc.meta_opt.lr = float(cfg.meta_lr);
  wc.online_base = cfg.online_base_update;
  wc.base_opt.lr = float(cfg.pretrain_lr);
  switch (method) {
    case Method::base:
      wc.variant = WarmVariant::init_only;
      wc.common_initialization = false;
      break;
    case Method::mwuf_init: wc.variant = WarmVariant::init_only; break;
    case Method::mwuf_scale: wc.variant = WarmVariant::scale_only; break;
    case Method::mwuf_shift: wc.variant = WarmVariant::shift_only; break;
    case Method::mwuf: wc.variant = WarmVariant::full; break;
  }

  Warmup<float> warm(base, wc, derive_seed(cfg.seed, "warmup"), phases.old_item_rows);
  if (prepare) prepare(warm);
  if (wc.variant != WarmVariant::init_only) train_warmup_modules(warm, phases, cfg);

  MetricReport rep;
  rep.method = to_string(method);
  rep.model_kind = base->model->kind();
  rep.seed = cfg.seed;
  rep.relaimpr.fill(std::numeric_limits<double>::quiet_NaN());
  rep.old_items = phases.old_item_rows.size();
  rep.new_items = phases.new_items.size();
  rep.dropped_items = phases.dropped_items;

  auto score = [&](const std::vector<EncodedSample>& pool) {
    return auc(warm.predict(pool), labels_of(pool));
  };

  std::array<std::vector<EncodedSample>, 4> pools = {
      pooled_slice(phases, Slice::warm_a), pooled_slice(phases, Slice::warm_b),
      pooled_slice(phases, Slice::warm_c), pooled_slice(phases, Slice::test)};

  rep.auc[0] = score(pools[0]);  // cold: nothing about the new items is known
  for (size_t phase = 0; phase < 3; ++phase) {
    const std::vector<EncodedSample>& pool = pools[phase];
    size_t bs = std::min(cfg.batch_cap, pool.size());
    for (size_t off = 0; off < pool.size(); off += bs) {
      std::span<const EncodedSample> b(pool.data() + off, std::min(bs, pool.size() - off));
      warm.train_step(b);
      warm.observe(b);
    }
    rep.auc[phase + 1] = score(pools[phase + 1]);
  }
  return rep;
}

void attach_baseline(MetricReport& rep, const MetricReport& base_rep) {
  rep.baseline = base_rep.method;
  for (size_t i = 0; i < rep.auc.size(); ++i) {
    if (base_rep.auc[i] == 0.5) {
      rep.relaimpr[i] = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    rep.relaimpr[i] = relaimpr(rep.auc[i], base_rep.auc[i]);
  }
}

MetricReport run_protocol(std::shared_ptr<const FittedSchema> schema, const std::string& kind,
                          Method method, const PhaseDatasets& phases, const ProtocolConfig& cfg) {
  PipelinePtr pre = pretrain_base(std::move(schema), kind, phases, cfg);
  MetricReport rep = evaluate_method(pre, method, phases, cfg);
  if (method == Method::base) {
    attach_baseline(rep, rep);
  } else {
    MetricReport base_rep = evaluate_method(pre, Method::base, phases, cfg);
    attach_baseline(rep, base_rep);
  }
  return rep;
}

std::vector<MetricReport> ablation_suite(std::shared_ptr<const FittedSchema> schema,
                                         const std::string& kind, const PhaseDatasets& phases,
                                         const ProtocolConfig& cfg,
                                         std::span<const uint64_t> seeds) {
  if (seeds.empty()) throw UsageError("ablation: no seeds given");
  std::vector<MetricReport> out;
  for (uint64_t seed : seeds) {
    ProtocolConfig run = cfg;
    run.seed = seed;
    PipelinePtr pre = pretrain_base(schema, kind, phases, run);
    std::vector<MetricReport> block;
    for (Method m : {Method::base, Method::mwuf_init, Method::mwuf_scale, Method::mwuf_shift,
                     Method::mwuf})
      block.push_back(evaluate_method(pre, m, phases, run));
    for (MetricReport& rep : block) attach_baseline(rep, block[0]);
    out.insert(out.end(), std::make_move_iterator(block.begin()),
               std::make_move_iterator(block.end()));
  }
  return out;
}

void write_reports_csv(std::span<const MetricReport> reports, std::ostream& os) {
  os << "method,seed,phase,auc,relaimpr_vs_base\n";
  char buf[64];
  for (const MetricReport& rep : reports) {
    for (size_t i = 0; i < rep.auc.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.10g", rep.auc[i]);
      os << rep.method << ',' << rep.seed << ',' << kPhaseNames[i] << ',' << buf << ',';
      if (!rep.baseline.empty() && !std::isnan(rep.relaimpr[i])) {
        std::snprintf(buf, sizeof buf, "%.10g", rep.relaimpr[i]);
        os << buf;
      }
      os << '\n';
    }
  }
}

std::string reports_csv(std::span<const MetricReport> reports) {
  std::ostringstream os;
  write_reports_csv(reports, os);
  return os.str();
}

}  // namespace mwuf
