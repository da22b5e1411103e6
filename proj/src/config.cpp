#include "mwuf/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace mwuf {

namespace {

template <class F>
auto key_error(const std::string& key, const std::string& value, const char* want, F parse) {
  try {
    return parse();
  } catch (...) {
    throw ConfigError("config key '" + key + "': expected " + want + ", got '" + value + "'");
  }
}

size_t to_count(const std::string& key, const std::string& v) {
  return key_error(key, v, "a non-negative integer", [&] {
    size_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("");
    return out;
  });
}

uint64_t to_seed(const std::string& key, const std::string& v) {
  return key_error(key, v, "a non-negative integer", [&] {
    uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("");
    return out;
  });
}

double to_real(const std::string& key, const std::string& v) {
  return key_error(key, v, "a number", [&] {
    size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) throw ConfigError("");
    return out;
  });
}

bool to_flag(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<ConfigKey> build_keys() {
  using C = ExperimentConfig;
  std::vector<ConfigKey> keys;
  auto str = [&](const char* n, std::string C::* f, const char* doc) {
    keys.push_back({n, C{}.*f, doc, [f](C& c, const std::string& v) { c.*f = v; }});
  };
  auto count = [&](const char* n, size_t C::* f, const char* doc) {
    keys.push_back({n, std::to_string(C{}.*f), doc,
                    [f, n = std::string(n)](C& c, const std::string& v) { c.*f = to_count(n, v); }});
  };
  auto real = [&](const char* n, double C::* f, const char* doc) {
    std::ostringstream def;
    def << C{}.*f;
    keys.push_back({n, def.str(), doc,
                    [f, n = std::string(n)](C& c, const std::string& v) { c.*f = to_real(n, v); }});
  };
  auto flag = [&](const char* n, bool C::* f, const char* doc) {
    keys.push_back({n, C{}.*f ? "true" : "false", doc,
                    [f, n = std::string(n)](C& c, const std::string& v) { c.*f = to_flag(n, v); }});
  };

  str("dataset", &C::dataset, "data source: synthetic or movielens");
  str("data_dir", &C::data_dir, "directory holding ratings.dat/movies.dat/users.dat");
  flag("include_titles", &C::include_titles, "tokenize movie titles as a multi-valued field");
  count("synthetic_users", &C::synthetic_users, "synthetic generator: user count");
  count("synthetic_items", &C::synthetic_items, "synthetic generator: item count");
  count("synthetic_interactions", &C::synthetic_interactions, "synthetic generator: sample count");
  count("synthetic_categories", &C::synthetic_categories, "synthetic generator: item categories");
  count("synthetic_groups", &C::synthetic_groups, "synthetic generator: user groups");
  count("synthetic_latent_dim", &C::synthetic_latent_dim, "synthetic generator: latent size");
  real("synthetic_noise", &C::synthetic_noise, "synthetic generator: label flip rate");
  real("synthetic_skew", &C::synthetic_skew, "synthetic generator: popularity skew exponent");
  str("model", &C::model, "base model kind: wide_deep or fm");
  count("k", &C::k, "embedding size per field");
  count("hidden", &C::hidden, "base model hidden layer width");
  count("meta_hidden", &C::meta_hidden, "scaling/shifting net hidden width");
  real("lr", &C::lr, "learning rate for every optimizer");
  count("batch", &C::batch, "mini-batch size");
  count("pretrain_epochs", &C::pretrain_epochs, "epochs over old-item data for the base model");
  count("meta_epochs", &C::meta_epochs, "epochs over old-item data for the nets");
  count("user_cap", &C::user_cap, "most recent interacted users fed to the shifting net");
  flag("online_base_update", &C::online_base_update,
       "keep training the base model on the cold loss after pretraining");
  count("split_n", &C::split_n, "old-item threshold N");
  count("split_k", &C::split_k, "warm-up phase size K");
  keys.push_back({"seed", std::to_string(C{}.seed), "root random seed",
                  [](C& c, const std::string& v) { c.seed = to_seed("seed", v); }});
  count("seeds", &C::seeds, "number of consecutive seeds to run");
  str("method", &C::method, "base, mwuf, mwuf_init, mwuf_scale or mwuf_shift");
  return keys;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = build_keys();
  return keys;
}

void apply_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (const ConfigKey& k : config_keys()) {
    if (k.name == key) {
      k.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void load_config_file(ExperimentConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("config: cannot open " + path);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (size_t hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected key=value");
    apply_config_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

std::string config_help() {
  std::ostringstream os;
  os << "Config keys (key=value file via --config; flags override):\n";
  for (const ConfigKey& k : config_keys()) {
    os << "  " << k.name;
    for (size_t i = k.name.size(); i < 24; ++i) os << ' ';
    os << k.doc << " [default: " << (k.fallback.empty() ? "none" : k.fallback) << "]\n";
  }
  return os.str();
}

void validate(const ExperimentConfig& cfg) {
  if (cfg.dataset != "synthetic" && cfg.dataset != "movielens")
    throw ConfigError("config key 'dataset': expected synthetic or movielens, got '" +
                      cfg.dataset + "'");
  if (cfg.dataset == "movielens" && cfg.data_dir.empty())
    throw ConfigError("config key 'data_dir': required when dataset=movielens");
  if (cfg.model != "wide_deep" && cfg.model != "fm")
    throw ConfigError("config key 'model': expected wide_deep or fm, got '" + cfg.model + "'");
  if (cfg.k == 0) throw ConfigError("config key 'k': must be positive");
  if (cfg.hidden == 0) throw ConfigError("config key 'hidden': must be positive");
  if (cfg.meta_hidden == 0) throw ConfigError("config key 'meta_hidden': must be positive");
  if (cfg.batch == 0) throw ConfigError("config key 'batch': must be positive");
  if (cfg.seeds == 0) throw ConfigError("config key 'seeds': must be positive");
  if (cfg.split_k == 0) throw ConfigError("config key 'split_k': must be positive");
  if (cfg.split_n <= 3 * cfg.split_k)
    throw ConfigError("config key 'split_n': must exceed 3*split_k (" +
                      std::to_string(3 * cfg.split_k) + ")");
}

}  // namespace mwuf
