#include "mwuf/experiment.hpp"

#include <map>

namespace mwuf {

std::vector<RawRow> load_rows(const ExperimentConfig& cfg) {
  validate(cfg);
  if (cfg.dataset == "movielens") return load_movielens(cfg.data_dir, cfg.include_titles).rows;
  SyntheticSpec spec;
  spec.users = cfg.synthetic_users;
  spec.items = cfg.synthetic_items;
  spec.interactions = cfg.synthetic_interactions;
  spec.categories = cfg.synthetic_categories;
  spec.groups = cfg.synthetic_groups;
  spec.latent_dim = cfg.synthetic_latent_dim;
  spec.noise = cfg.synthetic_noise;
  spec.skew = cfg.synthetic_skew;
  spec.seed = cfg.seed;
  return generate_synthetic(spec).rows;
}

FeatureSchema schema_for(const ExperimentConfig& cfg) {
  validate(cfg);
  return cfg.dataset == "movielens" ? movielens_schema(cfg.k, cfg.include_titles)
                                    : synthetic_schema(cfg.k);
}

Prepared prepare_experiment(const ExperimentConfig& cfg) {
  std::vector<RawRow> rows = load_rows(cfg);
  auto fitted = std::make_shared<FittedSchema>(FittedSchema::fit(schema_for(cfg), rows));
  std::vector<EncodedSample> enc;
  enc.reserve(rows.size());
  for (const RawRow& r : rows) enc.push_back(fitted->encode(r));
  Prepared p;
  p.phases = split_items(enc, {.old_threshold = cfg.split_n, .phase_size = cfg.split_k});
  p.schema = std::move(fitted);
  return p;
}

ProtocolConfig protocol_config(const ExperimentConfig& cfg, uint64_t seed) {
  ProtocolConfig p;
  p.seed = seed;
  p.hidden = cfg.hidden;
  p.meta_hidden = cfg.meta_hidden;
  p.user_cap = cfg.user_cap;
  p.pretrain_epochs = cfg.pretrain_epochs;
  p.pretrain_batch = cfg.batch;
  p.meta_epochs = cfg.meta_epochs;
  p.batch_cap = cfg.batch;
  p.pretrain_lr = cfg.lr;
  p.cold_lr = cfg.lr;
  p.meta_lr = cfg.lr;
  p.online_base_update = cfg.online_base_update;
  return p;
}

NamedTensors pipeline_tensors(const Pipeline<float>& pipe) {
  NamedTensors out;
  for (const auto& p : pipe.parameters()) out.emplace_back(p->name, p->value);
  return out;
}

namespace {

void assign_by_name(const std::vector<ParamPtr<float>>& params, const NamedTensors& tensors,
                    const char* what) {
  std::map<std::string, const Tensor<float>*> by_name;
  for (const auto& [name, t] : tensors) by_name[name] = &t;
  for (const auto& p : params) {
    auto it = by_name.find(p->name);
    if (it == by_name.end())
      throw StateError(std::string(what) + ": checkpoint is missing tensor '" + p->name + "'");
    if (!(it->second->shape() == p->value.shape()))
      throw StateError(std::string(what) + ": tensor '" + p->name + "' has mismatched shape");
    p->value = *it->second;
  }
}

}  // namespace

void apply_tensors(Pipeline<float>& pipe, const NamedTensors& tensors) {
  assign_by_name(pipe.parameters(), tensors, "base checkpoint");
}

NamedTensors warmup_tensors(Warmup<float>& warm) {
  NamedTensors out;
  out.emplace_back(warm.cold_layer().table->name, warm.cold_layer().table->value);
  if (warm.nets())
    for (const auto& p : warm.nets()->params()) out.emplace_back(p->name, p->value);
  return out;
}

void apply_warmup_tensors(Warmup<float>& warm, const NamedTensors& tensors) {
  std::vector<ParamPtr<float>> params = {warm.cold_layer().table};
  if (warm.nets())
    for (const auto& p : warm.nets()->params()) params.push_back(p);
  assign_by_name(params, tensors, "warmup checkpoint");
}

}  // namespace mwuf
