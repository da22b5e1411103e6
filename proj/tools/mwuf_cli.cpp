#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "mwuf/experiment.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace mwuf;

namespace {

// Flag values shared by every subcommand; only explicitly passed ones
// override the config file.
struct Flags {
  std::string config, method, out = ".", data;
  uint64_t seed = 0;
  size_t seeds = 0;
  CLI::Option *seed_opt = nullptr, *seeds_opt = nullptr, *method_opt = nullptr,
              *data_opt = nullptr;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config, "key=value config file");
    seed_opt = cmd->add_option("--seed", seed, "root random seed");
    seeds_opt = cmd->add_option("--seeds", seeds, "number of consecutive seeds");
    method_opt = cmd->add_option("--method", method,
                                 "base, mwuf, mwuf_init, mwuf_scale or mwuf_shift");
    cmd->add_option("--out", out, "output directory");
    data_opt = cmd->add_option("--data", data, "dataset directory (movielens)");
  }

  ExperimentConfig resolve() const {
    ExperimentConfig cfg;
    if (!config.empty()) load_config_file(cfg, config);
    if (*seed_opt) cfg.seed = seed;
    if (*seeds_opt) cfg.seeds = seeds;
    if (*method_opt) cfg.method = method;
    if (*data_opt) {
      cfg.data_dir = data;
      cfg.dataset = "movielens";
    }
    validate(cfg);
    return cfg;
  }
};

size_t thread_cap(size_t jobs) {
  size_t cap = std::thread::hardware_concurrency();
  if (cap == 0) cap = 1;
  if (const char* env = std::getenv("MWUF_THREADS")) {
    char* end = nullptr;
    unsigned long v = std::strtoul(env, &end, 10);
    if (end == env || *end != '\0' || v == 0)
      throw ConfigError("MWUF_THREADS: expected a positive integer, got '" + std::string(env) +
                        "'");
    cap = v;
  }
  return std::max<size_t>(1, std::min(jobs, cap));
}

// Runs fn(0..n-1) on up to MWUF_THREADS workers; results must go into
// caller-owned per-index slots.
template <class F>
void fan_out(size_t n, F fn) {
  size_t workers = thread_cap(n);
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  auto drain = [&] {
    for (size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (size_t w = 0; w < workers; ++w) pool.emplace_back(drain);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::string base_ckpt(const std::string& out, uint64_t seed) {
  return out + "/base-" + std::to_string(seed) + ".ckpt";
}
std::string base_manifest(const std::string& out, uint64_t seed) {
  return out + "/base-" + std::to_string(seed) + ".json";
}
std::string warmup_ckpt(const std::string& out, const std::string& method, uint64_t seed) {
  return out + "/warmup-" + method + "-" + std::to_string(seed) + ".ckpt";
}

void write_manifest(const ExperimentConfig& cfg, uint64_t seed, const std::string& path) {
  json j;
  j["model"] = cfg.model;
  j["dataset"] = cfg.dataset;
  j["k"] = cfg.k;
  j["hidden"] = cfg.hidden;
  j["meta_hidden"] = cfg.meta_hidden;
  j["split_n"] = cfg.split_n;
  j["split_k"] = cfg.split_k;
  j["seed"] = seed;
  std::ofstream(path) << j.dump(2) << "\n";
}

void check_manifest(const ExperimentConfig& cfg, uint64_t seed, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw StageError("missing manifest " + path + "; run pretrain first");
  json j = json::parse(in, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw CorruptionError("manifest " + path + " is not valid JSON");
  auto expect = [&](const char* key, const json& want) {
    if (!j.contains(key) || j[key] != want)
      throw StageError("checkpoint " + path + " was built with " + key + "=" +
                       (j.contains(key) ? j[key].dump() : "<absent>") +
                       " but the current config says " + want.dump());
  };
  expect("model", cfg.model);
  expect("dataset", cfg.dataset);
  expect("k", cfg.k);
  expect("hidden", cfg.hidden);
  expect("split_n", cfg.split_n);
  expect("split_k", cfg.split_k);
  expect("seed", seed);
}

// Rebuilds the pipeline skeleton for `seed` and loads the pretrained bytes.
PipelinePtr load_base(const ExperimentConfig& cfg, const Prepared& prep, uint64_t seed,
                      const std::string& out) {
  std::string path = base_ckpt(out, seed);
  if (!fs::exists(path))
    throw StageError("missing checkpoint " + path + "; run pretrain --seed " +
                     std::to_string(seed) + " first");
  check_manifest(cfg, seed, base_manifest(out, seed));
  auto pipe = std::make_shared<Pipeline<float>>(
      make_pipeline<float>(prep.schema, cfg.model, seed, cfg.hidden));
  apply_tensors(*pipe, load_checkpoint(path));
  if (!cfg.online_base_update) pipe->freeze();
  return pipe;
}

std::vector<uint64_t> run_seeds(const ExperimentConfig& cfg) {
  std::vector<uint64_t> out;
  for (size_t i = 0; i < cfg.seeds; ++i) out.push_back(cfg.seed + i);
  return out;
}

int cmd_gen_data(const Flags& flags) {
  ExperimentConfig cfg = flags.resolve();
  if (cfg.dataset != "synthetic")
    throw UsageError("gen-data: only the synthetic dataset is generated; movielens is read from "
                     "its directory");
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
  SyntheticData data = generate_synthetic(spec);

  fs::create_directories(flags.out);
  std::string rows_path = flags.out + "/synthetic.dat";
  std::ofstream rows(rows_path, std::ios::binary);
  rows << "item\tcategory\tuser\tgroup\tlabel\ttimestamp\n";
  for (const RawRow& r : data.rows) {
    rows << std::get<std::string>(r.columns.at("item")) << '\t'
         << std::get<std::string>(r.columns.at("category")) << '\t'
         << std::get<std::string>(r.columns.at("user")) << '\t'
         << std::get<std::string>(r.columns.at("group")) << '\t' << int(r.label) << '\t'
         << r.timestamp << '\n';
  }
  std::string oracle_path = flags.out + "/synthetic-oracle.dat";
  std::ofstream oracle(oracle_path, std::ios::binary);
  oracle << "true_prob\n";
  char buf[40];
  for (double p : data.true_prob) {
    std::snprintf(buf, sizeof buf, "%.17g\n", p);
    oracle << buf;
  }
  std::cout << "wrote " << data.rows.size() << " interactions (" << cfg.synthetic_items
            << " items, " << cfg.synthetic_users << " users) to " << rows_path << "\n"
            << "wrote planted probabilities to " << oracle_path << "\n";
  return 0;
}

int cmd_pretrain(const Flags& flags) {
  ExperimentConfig cfg = flags.resolve();
  Prepared prep = prepare_experiment(cfg);
  fs::create_directories(flags.out);
  for (uint64_t seed : run_seeds(cfg)) {
    PipelinePtr pipe = pretrain_base(prep.schema, cfg.model, prep.phases,
                                     protocol_config(cfg, seed));
    save_checkpoint(pipeline_tensors(*pipe), base_ckpt(flags.out, seed));
    write_manifest(cfg, seed, base_manifest(flags.out, seed));
    std::cout << "seed " << seed << ": pretrained " << cfg.model << " on "
              << prep.phases.old_train.size() << " old-item samples -> "
              << base_ckpt(flags.out, seed) << "\n";
  }
  return 0;
}

WarmupConfig<float> warmup_config(const ExperimentConfig& cfg, Method method) {
  WarmupConfig<float> wc;
  wc.meta_hidden = cfg.meta_hidden;
  wc.user_cap = cfg.user_cap;
  wc.cold_opt.lr = float(cfg.lr);
  wc.meta_opt.lr = float(cfg.lr);
  wc.online_base = cfg.online_base_update;
  wc.base_opt.lr = float(cfg.lr);
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
  return wc;
}

int cmd_warmup(const Flags& flags) {
  ExperimentConfig cfg = flags.resolve();
  Method method = parse_method(cfg.method);
  if (method == Method::base)
    throw UsageError("warmup: method base fine-tunes in place and has no warm-up artifacts");
  Prepared prep = prepare_experiment(cfg);
  fs::create_directories(flags.out);
  for (uint64_t seed : run_seeds(cfg)) {
    PipelinePtr pipe = load_base(cfg, prep, seed, flags.out);
    std::shared_ptr<const Pipeline<float>> frozen = pipe;
    Warmup<float> warm(frozen, warmup_config(cfg, method), derive_seed(seed, "warmup"),
                       prep.phases.old_item_rows);
    ProtocolConfig pc = protocol_config(cfg, seed);
    if (warm.nets()) train_warmup_modules(warm, prep.phases, pc);
    save_checkpoint(warmup_tensors(warm), warmup_ckpt(flags.out, cfg.method, seed));
    std::cout << "seed " << seed << ": trained " << cfg.method << " modules -> "
              << warmup_ckpt(flags.out, cfg.method, seed) << "\n";
  }
  return 0;
}

int cmd_evaluate(const Flags& flags) {
  ExperimentConfig cfg = flags.resolve();
  Method method = parse_method(cfg.method);
  Prepared prep = prepare_experiment(cfg);
  fs::create_directories(flags.out);

  std::vector<uint64_t> seeds = run_seeds(cfg);
  std::vector<MetricReport> reports(seeds.size());
  fan_out(seeds.size(), [&](size_t i) {
    uint64_t seed = seeds[i];
    PipelinePtr pipe = load_base(cfg, prep, seed, flags.out);
    ProtocolConfig pc = protocol_config(cfg, seed);
    MetricReport rep;
    if (method == Method::base) {
      rep = evaluate_method(pipe, method, prep.phases, pc);
      attach_baseline(rep, rep);
    } else {
      std::string wpath = warmup_ckpt(flags.out, cfg.method, seed);
      if (!fs::exists(wpath))
        throw StageError("missing checkpoint " + wpath + "; run warmup --method " + cfg.method +
                         " --seed " + std::to_string(seed) + " first");
      NamedTensors wt = load_checkpoint(wpath);
      pc.meta_epochs = 0;  // the trained modules come from the artifact
      rep = evaluate_method(pipe, method, prep.phases, pc,
                            [&](Warmup<float>& w) { apply_warmup_tensors(w, wt); });
      MetricReport base_rep = evaluate_method(pipe, Method::base, prep.phases, pc);
      attach_baseline(rep, base_rep);
    }
    reports[i] = std::move(rep);
  });

  std::string csv_path = flags.out + "/metrics-" + cfg.method + ".csv";
  std::ofstream csv(csv_path, std::ios::binary);
  write_reports_csv(reports, csv);
  std::array<double, 4> mean{};
  for (const MetricReport& r : reports)
    for (size_t i = 0; i < 4; ++i) mean[i] += r.auc[i] / double(reports.size());
  std::cout << cfg.method << " over " << seeds.size() << " seed(s):";
  for (size_t i = 0; i < 4; ++i) std::cout << " " << kPhaseNames[i] << "=" << mean[i];
  std::cout << "\nwrote " << csv_path << "\n";
  return 0;
}

int cmd_ablate(const Flags& flags) {
  ExperimentConfig cfg = flags.resolve();
  Prepared prep = prepare_experiment(cfg);
  fs::create_directories(flags.out);

  std::vector<uint64_t> seeds = run_seeds(cfg);
  std::vector<std::vector<MetricReport>> blocks(seeds.size());
  fan_out(seeds.size(), [&](size_t i) {
    uint64_t one[1] = {seeds[i]};
    blocks[i] = ablation_suite(prep.schema, cfg.model, prep.phases, protocol_config(cfg, seeds[i]),
                               one);
  });

  std::vector<MetricReport> reports;
  for (auto& b : blocks)
    reports.insert(reports.end(), std::make_move_iterator(b.begin()),
                   std::make_move_iterator(b.end()));
  std::string csv_path = flags.out + "/ablation.csv";
  std::ofstream csv(csv_path, std::ios::binary);
  write_reports_csv(reports, csv);
  std::cout << "5 methods x " << seeds.size() << " seed(s) -> " << csv_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-network warm-up for cold item embeddings"};
  app.require_subcommand(1);
  app.footer(config_help());

  CLI::App* gen = app.add_subcommand("gen-data", "write the synthetic dataset and its oracle");
  CLI::App* pre = app.add_subcommand("pretrain", "train the base model on old items");
  CLI::App* wup = app.add_subcommand("warmup", "train scaling/shifting nets on old items");
  CLI::App* eva = app.add_subcommand("evaluate", "run the phased evaluation for one method");
  CLI::App* abl = app.add_subcommand("ablate", "run every method over shared seeds");

  std::array<CLI::App*, 5> cmds = {gen, pre, wup, eva, abl};
  std::array<Flags, 5> flags;
  for (size_t i = 0; i < cmds.size(); ++i) flags[i].attach(cmds[i]);

  CLI11_PARSE(app, argc, argv);
  try {
    if (gen->parsed()) return cmd_gen_data(flags[0]);
    if (pre->parsed()) return cmd_pretrain(flags[1]);
    if (wup->parsed()) return cmd_warmup(flags[2]);
    if (eva->parsed()) return cmd_evaluate(flags[3]);
    if (abl->parsed()) return cmd_ablate(flags[4]);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
