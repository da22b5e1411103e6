#pragma once

#include <array>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mwuf/warmup.hpp"

namespace mwuf {

// Item grouping thresholds: an item is "old" past old_threshold labeled
// samples, "new" when it has more than 3*phase_size but fewer than
// old_threshold, and is excluded otherwise.
struct SplitSpec {
  size_t old_threshold = 200;  // N
  size_t phase_size = 20;      // K
};

// One new item's samples in timestamp order: three warm-up slices of exactly
// phase_size each, then whatever remains as its test share.
struct ItemPhases {
  uint32_t item_row = 0;
  std::vector<EncodedSample> warm_a, warm_b, warm_c, test;
};

struct PhaseDatasets {
  SplitSpec spec;
  std::vector<EncodedSample> old_train;   // original dataset order
  std::vector<uint32_t> old_item_rows;    // sorted, unique
  std::vector<ItemPhases> new_items;      // first-appearance order
  size_t dropped_items = 0;
};

enum class Slice { warm_a, warm_b, warm_c, test };

PhaseDatasets split_items(std::span<const EncodedSample> dataset, SplitSpec spec);

// All new items' samples for one slice, sorted by timestamp (stable across
// the per-item order).
std::vector<EncodedSample> pooled_slice(const PhaseDatasets& phases, Slice s);

enum class Method { base, mwuf, mwuf_init, mwuf_scale, mwuf_shift };

const char* to_string(Method m);
Method parse_method(const std::string& name);  // usage error on unknown

inline constexpr std::array<const char*, 4> kPhaseNames = {"cold", "warm_a", "warm_b", "warm_c"};

// Four ordered evaluations: cold scores on the warm-a pool before any
// new-item updates, then one score after each warm-up phase on the next
// pool (warm-b, warm-c, test).
struct MetricReport {
  std::string method;
  std::string model_kind;
  std::string baseline;  // method name the relaimpr column compares against
  uint64_t seed = 0;
  std::array<double, 4> auc{};
  std::array<double, 4> relaimpr{};
  size_t old_items = 0, new_items = 0, dropped_items = 0;
};

struct ProtocolConfig {
  uint64_t seed = 1;
  size_t hidden = 64;       // base model layer width
  size_t meta_hidden = 16;  // conditioning net layer width
  size_t user_cap = 100;
  size_t pretrain_epochs = 5;
  size_t pretrain_batch = 256;
  size_t meta_epochs = 1;  // passes over old-item data for the nets
  size_t batch_cap = 256;  // warm phases use min(batch_cap, phase size)
  double pretrain_lr = 0.001;
  double cold_lr = 0.001;
  double meta_lr = 0.001;
  bool online_base_update = false;  // keep training the base on cold loss
};

using PipelinePtr = std::shared_ptr<Pipeline<float>>;

// Stage one: fit the base model on old-item data and freeze it (unless the
// online flag keeps it trainable). Shared across methods for a fixed seed.
PipelinePtr pretrain_base(std::shared_ptr<const FittedSchema> schema, const std::string& kind,
                          const PhaseDatasets& phases, const ProtocolConfig& cfg);

// The extra-module pass: old-item data replayed in time order for
// cfg.meta_epochs epochs, each batch training before it joins the
// interaction history.
void train_warmup_modules(Warmup<float>& warm, const PhaseDatasets& phases,
                          const ProtocolConfig& cfg);

// Stages two through six for one method on an already-pretrained base: train
// the extra modules on old items where applicable, then walk the warm-up
// phases, updating for one epoch per phase and scoring on the next pool.
// The relaimpr column is left unset (baseline empty). `prepare` runs right
// after construction, before any training, e.g. to pin the net weights.
MetricReport evaluate_method(const PipelinePtr& pretrained, Method method,
                             const PhaseDatasets& phases, const ProtocolConfig& cfg,
                             const std::function<void(Warmup<float>&)>& prepare = {});

// Fills the relaimpr column of `rep` against the baseline's AUCs (skipping
// phases where the baseline sits at exactly 0.5).
void attach_baseline(MetricReport& rep, const MetricReport& base_rep);

// Full pipeline for a single method. Methods other than the plain baseline
// also run the baseline on the same pretrained model so the report carries
// relative improvements.
MetricReport run_protocol(std::shared_ptr<const FittedSchema> schema, const std::string& kind,
                          Method method, const PhaseDatasets& phases, const ProtocolConfig& cfg);

// Every method on a shared pretrained base, once per seed; relaimpr is
// filled against the plain baseline of the same seed. Report order is
// seed-major with methods ordered base, mwuf_init, mwuf_scale, mwuf_shift,
// mwuf.
std::vector<MetricReport> ablation_suite(std::shared_ptr<const FittedSchema> schema,
                                         const std::string& kind, const PhaseDatasets& phases,
                                         const ProtocolConfig& cfg,
                                         std::span<const uint64_t> seeds);

// One row per (report, phase): method, seed, phase, auc, relaimpr_vs_base.
// The relaimpr cell is empty when no baseline was attached.
void write_reports_csv(std::span<const MetricReport> reports, std::ostream& os);
std::string reports_csv(std::span<const MetricReport> reports);

}  // namespace mwuf
