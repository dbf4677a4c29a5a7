#define DOCTEST_CONFIG_IMPLEMENT
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "gridvlm/common.hpp"
#include "gridvlm/pipeline.hpp"
#include <json.hpp>

using namespace gridvlm;
namespace fs = std::filesystem;

namespace {

std::string g_lab_binary;

const char* kTinyConfig = R"([world]
sft_tasks = 24
rl_tasks = 16
eval_groups = 3
variants_per_group = 3

[anchoring]
epochs = 1
batch_size = 8

[reinforcing]
steps = 2
prompts_per_step = 2
group_size = 4
max_new = 24

[eval]
max_new = 24
heatmap_top_n = 2
)";

fs::path fresh_dir(const std::string& name) {
  fs::path d = fs::temp_directory_path() / ("gridvlm_pipe_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  fs::path p = dir / "run.ini";
  std::ofstream(p) << text;
  return p;
}

int run_lab(const std::string& args) {
  std::string cmd = g_lab_binary + " " + args + " > /dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("gen, sft, rl, eval chain produces complete, reloadable artifacts") {
  fs::path dir = fresh_dir("chain");
  fs::path cfg_path = write_config(dir, kTinyConfig);
  pipeline::Options opts;
  opts.config_path = cfg_path;
  opts.out_dir = dir / "run";

  pipeline::cmd_gen(opts);
  CHECK(fs::exists(opts.out_dir / "corpus_sft.jsonl"));
  CHECK(fs::exists(opts.out_dir / "corpus_rl.jsonl"));
  CHECK(fs::exists(opts.out_dir / "corpus_eval.jsonl"));
  CHECK(fs::exists(opts.out_dir / "manifest.json"));

  nlohmann::json manifest;
  std::ifstream(opts.out_dir / "manifest.json") >> manifest;
  CHECK(manifest.at("disjoint").get<bool>());
  CHECK(manifest.at("code_version").get<std::string>() == kCodeVersion);

  pipeline::cmd_sft(opts);
  CHECK(fs::exists(opts.out_dir / "anchored.ckpt"));
  CHECK(fs::exists(opts.out_dir / "sft_metrics.jsonl"));

  pipeline::cmd_rl(opts);
  CHECK(fs::exists(opts.out_dir / "reinforced.ckpt"));
  CHECK(fs::exists(opts.out_dir / "rollouts.jsonl"));

  pipeline::cmd_eval(opts);
  fs::path report = opts.out_dir / "report.json";
  REQUIRE(fs::exists(report));

  nlohmann::json rep;
  std::ifstream(report) >> rep;
  CHECK(rep.contains("accuracy"));
  CHECK(rep.contains("perception_coverage"));
  CHECK(rep.contains("faithful_use"));
  CHECK(rep.contains("worst_case_accuracy"));
  CHECK(rep.contains("reasoning_robustness"));
  CHECK(rep.at("groups").get<int>() == 3);
  CHECK(rep.at("variants_per_group").get<int>() == 3);
  CHECK(rep.at("tasks").size() == 9);
  CHECK(rep.at("checkpoint").at("stage").get<std::string>() == "reinforced");

  // Heatmaps for the first two tasks.
  CHECK(fs::exists(opts.out_dir / "images"));

  // A second run into a separate directory reproduces the report byte for byte.
  pipeline::Options again = opts;
  again.out_dir = dir / "run2";
  pipeline::cmd_gen(again);
  pipeline::cmd_sft(again);
  pipeline::cmd_rl(again);
  pipeline::cmd_eval(again);
  CHECK(read_text_file(report) == read_text_file(again.out_dir / "report.json"));
}

TEST_CASE("stages refuse artifacts from a different configuration unless forced") {
  fs::path dir = fresh_dir("gate");
  fs::path cfg_path = write_config(dir, kTinyConfig);
  pipeline::Options opts;
  opts.config_path = cfg_path;
  opts.out_dir = dir / "run";

  pipeline::cmd_gen(opts);
  pipeline::cmd_sft(opts);

  // Upstream-affecting edit: the anchored checkpoint no longer matches.
  std::string changed = std::string(kTinyConfig) + "\n[anchoring]\nlambda_focus = 0.05\n";
  fs::path changed_path = dir / "changed.ini";
  std::ofstream(changed_path) << changed;
  pipeline::Options stale = opts;
  stale.config_path = changed_path;
  CHECK_THROWS_AS(pipeline::cmd_rl(stale), ArtifactError);

  stale.force = true;
  pipeline::cmd_rl(stale);
  CHECK(fs::exists(opts.out_dir / "reinforced.ckpt"));

  // Downstream-only edit: existing upstream artifacts stay valid.
  std::string eval_only = std::string(kTinyConfig) + "\n[eval]\nmax_new = 20\n";
  fs::path eval_path = dir / "eval_only.ini";
  std::ofstream(eval_path) << eval_only;
  pipeline::Options downstream = opts;
  downstream.config_path = eval_path;
  pipeline::cmd_sft(downstream);
}

TEST_CASE("rl in full mode cannot skip anchoring") {
  fs::path dir = fresh_dir("skip");
  fs::path cfg_path = write_config(dir, kTinyConfig);
  pipeline::Options opts;
  opts.config_path = cfg_path;
  opts.out_dir = dir / "run";
  opts.skip_anchoring = true;
  pipeline::cmd_gen(opts);
  CHECK_THROWS_AS(pipeline::cmd_rl(opts), ConfigError);
}

TEST_CASE("missing upstream artifacts raise artifact errors naming the producer") {
  fs::path dir = fresh_dir("missing");
  fs::path cfg_path = write_config(dir, kTinyConfig);
  pipeline::Options opts;
  opts.config_path = cfg_path;
  opts.out_dir = dir / "run";
  try {
    pipeline::cmd_sft(opts);
    FAIL("expected ArtifactError");
  } catch (const ArtifactError& e) {
    CHECK(std::string(e.what()).find("lab gen") != std::string::npos);
  }
  CHECK_THROWS_AS(pipeline::cmd_eval(opts), ArtifactError);
}

TEST_CASE("the command line maps failures to documented exit codes") {
  fs::path dir = fresh_dir("cli");
  fs::path cfg_path = write_config(dir, kTinyConfig);
  fs::path out = dir / "run";

  CHECK(run_lab("gen") == 2);
  CHECK(run_lab("gen --config " + (dir / "nope.ini").string()) == 2);
  CHECK(run_lab("frobnicate --config " + cfg_path.string()) == 2);

  std::ofstream(dir / "bad.ini") << "[anchoring]\ntau = 2\n";
  CHECK(run_lab("gen --config " + (dir / "bad.ini").string() + " --out " + out.string()) == 2);

  // rl before gen/sft: artifacts missing.
  CHECK(run_lab("rl --config " + cfg_path.string() + " --out " + out.string()) == 3);

  CHECK(run_lab("gen --config " + cfg_path.string() + " --out " + out.string()) == 0);
  CHECK(run_lab("sft --config " + cfg_path.string() + " --out " + out.string()) == 0);
  CHECK(run_lab("eval --config " + cfg_path.string() + " --out " + out.string()) == 0);
  CHECK(fs::exists(out / "report.json"));
}

int main(int argc, char** argv) {
  doctest::Context ctx;
  ctx.applyCommandLine(argc, argv);
  for (int i = 1; i < argc; ++i) {
    std::string arg = argv[i];
    if (!arg.empty() && arg[0] != '-' && arg.find("lab") != std::string::npos) g_lab_binary = arg;
  }
  if (g_lab_binary.empty()) {
    std::fprintf(stderr, "usage: gridvlm_pipeline_test <path-to-lab-binary>\n");
    return 1;
  }
  return ctx.run();
}
