#pragma once

#include "mwuf/config.hpp"
#include "mwuf/dataio.hpp"
#include "mwuf/protocol.hpp"

namespace mwuf {

// Dataset rows per the config (generated or loaded from disk).
std::vector<RawRow> load_rows(const ExperimentConfig& cfg);

FeatureSchema schema_for(const ExperimentConfig& cfg);

struct Prepared {
  std::shared_ptr<const FittedSchema> schema;
  PhaseDatasets phases;
};

// Rows -> fitted schema -> encoded samples -> old/new/dropped split.
Prepared prepare_experiment(const ExperimentConfig& cfg);

ProtocolConfig protocol_config(const ExperimentConfig& cfg, uint64_t seed);

// Checkpoint bridging: every pipeline parameter under its unique name.
NamedTensors pipeline_tensors(const Pipeline<float>& pipe);
void apply_tensors(Pipeline<float>& pipe, const NamedTensors& tensors);

// Warm-up artifacts: the replacement ID table plus net weights when present.
NamedTensors warmup_tensors(Warmup<float>& warm);
void apply_warmup_tensors(Warmup<float>& warm, const NamedTensors& tensors);

}  // namespace mwuf
