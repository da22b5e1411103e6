#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mwuf/errors.hpp"

namespace mwuf {

// Everything an experiment needs, with defaults matching the reference
// setup: 16-dim embeddings, 64/16 layer widths, lr 0.001, batch 256.
struct ExperimentConfig {
  // data source
  std::string dataset = "synthetic";  // synthetic | movielens
  std::string data_dir;               // movielens directory
  bool include_titles = false;
  size_t synthetic_users = 800;
  size_t synthetic_items = 2000;
  size_t synthetic_interactions = 60000;
  size_t synthetic_categories = 16;
  size_t synthetic_groups = 8;
  size_t synthetic_latent_dim = 8;
  double synthetic_noise = 0.1;
  double synthetic_skew = 1.0;

  // model
  std::string model = "wide_deep";  // wide_deep | fm
  size_t k = 16;
  size_t hidden = 64;
  size_t meta_hidden = 16;

  // optimization
  double lr = 0.001;
  size_t batch = 256;
  size_t pretrain_epochs = 5;
  size_t meta_epochs = 1;
  size_t user_cap = 100;
  bool online_base_update = false;

  // split and run
  size_t split_n = 200;
  size_t split_k = 20;
  uint64_t seed = 1;
  size_t seeds = 1;
  std::string method = "mwuf";
};

struct ConfigKey {
  std::string name;
  std::string fallback;  // rendering of the default value
  std::string doc;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

// One entry per accepted key, in documentation order.
const std::vector<ConfigKey>& config_keys();

// Applies one key=value pair; unknown keys and unparsable values raise
// ConfigError naming the key.
void apply_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);

// Reads a key=value file ('#' comments, blank lines ignored) over `cfg`.
void load_config_file(ExperimentConfig& cfg, const std::string& path);

// The key reference included in --help.
std::string config_help();

// Cross-field checks (dataset kind known, model kind known, split sane...).
void validate(const ExperimentConfig& cfg);

}  // namespace mwuf
