#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mwuf/experiment.hpp"

using namespace mwuf;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code;
  std::string output;
};

RunResult run(const std::string& args) {
  std::string cmd = std::string(MWUF_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string out;
  char buf[4096];
  while (size_t n = fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
  int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// One scratch directory with a small config, reused across the cases below
// in stage order.
struct Workspace {
  fs::path dir = fs::temp_directory_path() / "mwuf-cli-test";
  std::string cfg, out;

  Workspace() {
    cfg = (dir / "exp.cfg").string();
    out = (dir / "run").string();
    if (!fs::exists(cfg)) {
      fs::create_directories(dir);
      std::ofstream(cfg) << "synthetic_items = 250\n"
                            "synthetic_users = 120\n"
                            "synthetic_interactions = 6000\n"
                            "split_n = 25\n"
                            "split_k = 3\n"
                            "hidden = 24\n"
                            "meta_hidden = 8\n"
                            "pretrain_epochs = 2\n";
    }
  }

  ExperimentConfig config() const {
    ExperimentConfig c;
    load_config_file(c, cfg);
    return c;
  }
};

}  // namespace

TEST_CASE("help lists commands and every config key") {
  RunResult r = run("--help");
  CHECK(r.exit_code == 0);
  for (const char* cmd : {"gen-data", "pretrain", "warmup", "evaluate", "ablate"})
    CHECK(r.output.find(cmd) != std::string::npos);
  for (const ConfigKey& k : config_keys()) CHECK(r.output.find(k.name) != std::string::npos);
  CHECK(r.output.find("[default: 16]") != std::string::npos);
}

TEST_CASE("later stages demand their checkpoints by name") {
  Workspace ws;
  fs::remove_all(ws.out);
  RunResult r = run("evaluate --config " + ws.cfg + " --method mwuf --out " + ws.out);
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("base-1.ckpt") != std::string::npos);
  CHECK(r.output.find("pretrain") != std::string::npos);

  r = run("warmup --config " + ws.cfg + " --method base --out " + ws.out);
  CHECK(r.exit_code == 1);

  r = run("pretrain --config missing.cfg --out " + ws.out);
  CHECK(r.exit_code == 1);
}

TEST_CASE("the staged pipeline runs end to end and reproduces itself") {
  Workspace ws;
  fs::remove_all(ws.out);

  CHECK(run("gen-data --config " + ws.cfg + " --out " + ws.out).exit_code == 0);
  CHECK(fs::exists(ws.out + "/synthetic.dat"));
  CHECK(fs::exists(ws.out + "/synthetic-oracle.dat"));

  CHECK(run("pretrain --config " + ws.cfg + " --seeds 3 --out " + ws.out).exit_code == 0);
  for (int s = 1; s <= 3; ++s) CHECK(fs::exists(ws.out + "/base-" + std::to_string(s) + ".ckpt"));

  // evaluate --method base over three seeds: header + 3x4 phase rows
  CHECK(run("evaluate --config " + ws.cfg + " --method base --seeds 3 --out " + ws.out)
            .exit_code == 0);
  std::string csv = slurp(ws.out + "/metrics-base.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 13);
  CHECK(csv.starts_with("method,seed,phase,auc,relaimpr_vs_base\n"));

  // missing warmup artifact is a stage error even with the base in place
  RunResult r = run("evaluate --config " + ws.cfg + " --method mwuf --out " + ws.out);
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("warmup-mwuf-1.ckpt") != std::string::npos);

  CHECK(run("warmup --config " + ws.cfg + " --method mwuf --seeds 2 --out " + ws.out).exit_code ==
        0);
  CHECK(run("evaluate --config " + ws.cfg + " --method mwuf --seeds 2 --out " + ws.out)
            .exit_code == 0);
  std::string warm_csv = slurp(ws.out + "/metrics-mwuf.csv");
  CHECK(std::count(warm_csv.begin(), warm_csv.end(), '\n') == 9);

  // same command, same bytes
  CHECK(run("evaluate --config " + ws.cfg + " --method mwuf --seeds 2 --out " + ws.out)
            .exit_code == 0);
  CHECK(slurp(ws.out + "/metrics-mwuf.csv") == warm_csv);

  // gen-data twice: identical dataset files
  std::string rows = slurp(ws.out + "/synthetic.dat");
  CHECK(run("gen-data --config " + ws.cfg + " --out " + ws.out).exit_code == 0);
  CHECK(slurp(ws.out + "/synthetic.dat") == rows);
}

TEST_CASE("staged evaluation equals the in-process protocol") {
  Workspace ws;
  // relies on the checkpoints written by the previous case
  ExperimentConfig cfg = ws.config();
  Prepared prep = prepare_experiment(cfg);
  MetricReport direct =
      run_protocol(prep.schema, cfg.model, Method::base, prep.phases, protocol_config(cfg, 1));

  std::string csv = slurp(ws.out + "/metrics-base.csv");
  char want[64];
  std::snprintf(want, sizeof want, "base,1,cold,%.10g,0\n", direct.auc[0]);
  CHECK(csv.find(want) != std::string::npos);
  std::snprintf(want, sizeof want, "base,1,warm_c,%.10g,0\n", direct.auc[3]);
  CHECK(csv.find(want) != std::string::npos);
}

TEST_CASE("seed fan-out width does not change the ablation output") {
  Workspace ws;
  std::string a = "MWUF_THREADS=1 " + std::string(MWUF_CLI_PATH) + " ablate --config " + ws.cfg +
                  " --seeds 2 --out " + ws.out + " >/dev/null 2>&1";
  std::string b = "MWUF_THREADS=4 " + std::string(MWUF_CLI_PATH) + " ablate --config " + ws.cfg +
                  " --seeds 2 --out " + ws.out + " >/dev/null 2>&1";
  REQUIRE(std::system(a.c_str()) == 0);
  std::string serial = slurp(ws.out + "/ablation.csv");
  REQUIRE(std::system(b.c_str()) == 0);
  CHECK(slurp(ws.out + "/ablation.csv") == serial);
  CHECK(std::count(serial.begin(), serial.end(), '\n') == 41);  // header + 5 methods x 2 x 4
}
