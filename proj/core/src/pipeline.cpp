#include "gridvlm/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <unordered_set>

#include "gridvlm/anchoring.hpp"
#include "gridvlm/reinforcing.hpp"

namespace gridvlm::pipeline {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

ordered_json artifact_header(const RunConfig& cfg, const std::string& stage_hash) {
  ordered_json h;
  h["config_hash"] = cfg.hash();
  h["stage_hash"] = stage_hash;
  h["code_version"] = kCodeVersion;
  h["seed"] = cfg.seed;
  return h;
}

void write_stamped(const fs::path& path, const RunConfig& cfg, const std::string& stage_hash,
                   const std::string& body) {
  write_file_atomic(path, artifact_header(cfg, stage_hash).dump() + "\n" + body);
}

// Splits off and verifies the header line of a stamped artifact.
std::string read_stamped_body(const fs::path& path, const std::string& expected_stage_hash,
                              bool force, const std::string& producer) {
  if (!fs::exists(path))
    throw ArtifactError(path.string() + " is missing; run `lab " + producer + "` first");
  std::string text = read_text_file(path);
  size_t nl = text.find('\n');
  if (nl == std::string::npos) throw ArtifactError("truncated artifact: " + path.string());
  ordered_json h = ordered_json::parse(text.substr(0, nl), nullptr, false);
  if (h.is_discarded() || !h.contains("stage_hash") || !h["stage_hash"].is_string())
    throw ArtifactError("malformed artifact header in " + path.string());
  if (!force && h["stage_hash"].get<std::string>() != expected_stage_hash)
    throw ArtifactError(path.string() +
                        " was produced under a different configuration; rerun `lab " + producer +
                        "` or pass --force");
  return text.substr(nl + 1);
}

std::vector<world::Task> read_corpus_stamped(const fs::path& path, const RunConfig& cfg,
                                             bool force) {
  return world::corpus_from_jsonl(read_stamped_body(path, cfg.gen_hash(), force, "gen"));
}

std::string with_stage_hash(const std::string& provenance, const std::string& h) {
  return provenance + ";stage_hash=" + h;
}

std::string last_stage_hash(const std::string& provenance) {
  const std::string key = "stage_hash=";
  size_t pos = provenance.rfind(key);
  if (pos == std::string::npos) return "";
  size_t begin = pos + key.size();
  size_t end = provenance.find(';', begin);
  return provenance.substr(begin, end == std::string::npos ? std::string::npos : end - begin);
}

vlm::Checkpoint stamped_init(const RunConfig& cfg) {
  vlm::Checkpoint ckpt = vlm::init_checkpoint(cfg.model, mix_seed(cfg.seed, "init"));
  ckpt.provenance = std::string(kCodeVersion) + ";config=" + cfg.hash() +
                    ";seed=" + std::to_string(cfg.seed);
  return ckpt;
}

std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

std::string fmt3(const std::optional<double>& v) { return v ? fmt3(*v) : "n/a"; }

void print_report_row(const std::string& tag, const prd::PRDReport& r) {
  std::cout << tag << "  acc=" << fmt3(r.accuracy) << "  pc=" << fmt3(r.perception)
            << "  fu=" << fmt3(r.faithful) << "  wca=" << fmt3(r.wca)
            << "  rr=" << fmt3(r.robustness) << "\n";
}

std::string sft_metrics_jsonl(const std::vector<anchor::StepMetrics>& metrics) {
  std::string body;
  for (const anchor::StepMetrics& m : metrics) {
    ordered_json j;
    j["step"] = m.step;
    j["ce"] = m.ce;
    j["focus_loss"] = m.focus_loss;
    j["mean_s"] = m.mean_s;
    j["lambda"] = m.lambda;
    j["tau"] = m.tau;
    body += j.dump() + "\n";
  }
  return body;
}

std::string rl_metrics_jsonl(const std::vector<rl::StepMetrics>& metrics) {
  std::string body;
  for (const rl::StepMetrics& m : metrics) {
    ordered_json j;
    j["step"] = m.step;
    j["reward_acc"] = m.reward_acc;
    j["reward_format"] = m.reward_format;
    j["mean_g"] = m.mean_g;
    j["attn_rate"] = m.attn_rate;
    j["objective"] = m.objective;
    body += j.dump() + "\n";
  }
  return body;
}

}  // namespace

RunConfig effective_config(const Options& opts) {
  if (opts.config_path.empty()) throw ConfigError("--config is required");
  if (!fs::exists(opts.config_path))
    throw ConfigError("config file not found: " + opts.config_path.string());
  RunConfig cfg = load_run_config(opts.config_path);
  if (opts.seed) cfg.seed = *opts.seed;
  return cfg;
}

void run_gen(const RunConfig& cfg, const fs::path& out) {
  fs::create_directories(out);
  write_file_atomic(out / "config_canonical.ini", cfg.canonical());

  std::vector<world::Task> sft, rl_tasks, eval_tasks;
  sft.reserve(static_cast<size_t>(cfg.world.sft_tasks));
  for (int i = 0; i < cfg.world.sft_tasks; ++i)
    sft.push_back(world::generate_task(mix_seed(cfg.seed, "sft", static_cast<uint64_t>(i)),
                                       cfg.world.family_at(i)));
  rl_tasks.reserve(static_cast<size_t>(cfg.world.rl_tasks));
  for (int i = 0; i < cfg.world.rl_tasks; ++i)
    rl_tasks.push_back(world::generate_task(mix_seed(cfg.seed, "rl", static_cast<uint64_t>(i)),
                                            cfg.world.family_at(i)));
  for (int g = 0; g < cfg.world.eval_groups; ++g) {
    world::Task base = world::generate_task(mix_seed(cfg.seed, "eval", static_cast<uint64_t>(g)),
                                            cfg.world.family_at(g));
    std::vector<world::Task> vars = world::make_variants(
        base, cfg.world.variants_per_group, mix_seed(cfg.seed, "evalvar", static_cast<uint64_t>(g)));
    eval_tasks.insert(eval_tasks.end(), vars.begin(), vars.end());
  }

  std::unordered_set<std::string> seen;
  auto audit = [&seen](const std::vector<world::Task>& tasks) {
    for (const world::Task& t : tasks)
      if (!seen.insert(t.task_id).second) throw InputError("task id collision: " + t.task_id);
  };
  audit(sft);
  audit(rl_tasks);
  audit(eval_tasks);

  std::string gen_hash = cfg.gen_hash();
  std::string sft_body = world::corpus_to_jsonl(sft);
  std::string rl_body = world::corpus_to_jsonl(rl_tasks);
  std::string eval_body = world::corpus_to_jsonl(eval_tasks);
  write_stamped(out / "corpus_sft.jsonl", cfg, gen_hash, sft_body);
  write_stamped(out / "corpus_rl.jsonl", cfg, gen_hash, rl_body);
  write_stamped(out / "corpus_eval.jsonl", cfg, gen_hash, eval_body);

  ordered_json manifest = artifact_header(cfg, gen_hash);
  manifest["counts"] = {{"sft", cfg.world.sft_tasks},
                        {"rl", cfg.world.rl_tasks},
                        {"eval", static_cast<int>(eval_tasks.size())},
                        {"eval_groups", cfg.world.eval_groups},
                        {"variants_per_group", cfg.world.variants_per_group}};
  manifest["corpus_sha256"] = {{"corpus_sft.jsonl", sha256_hex(sft_body)},
                               {"corpus_rl.jsonl", sha256_hex(rl_body)},
                               {"corpus_eval.jsonl", sha256_hex(eval_body)}};
  ordered_json splits;
  auto ids_of = [](const std::vector<world::Task>& tasks) {
    ordered_json a = ordered_json::array();
    for (const world::Task& t : tasks) a.push_back(t.task_id);
    return a;
  };
  splits["sft"] = ids_of(sft);
  splits["rl"] = ids_of(rl_tasks);
  splits["eval"] = ids_of(eval_tasks);
  manifest["splits"] = splits;
  manifest["disjoint"] = true;
  write_file_atomic(out / "manifest.json", manifest.dump(2) + "\n");
}

void run_sft(const RunConfig& cfg, const fs::path& out, bool force) {
  std::vector<world::Task> corpus = read_corpus_stamped(out / "corpus_sft.jsonl", cfg, force);
  vlm::Checkpoint init = stamped_init(cfg);
  anchor::AnchorConfig acfg = cfg.anchoring;
  acfg.seed = cfg.seed;
  anchor::TrainResult res = anchor::train_anchoring(init, corpus, acfg);
  if (res.diverged)
    std::cerr << "warning: anchoring diverged; keeping the last finite checkpoint\n";
  res.checkpoint.provenance = with_stage_hash(res.checkpoint.provenance, cfg.sft_hash());
  vlm::save_checkpoint(out / "anchored.ckpt", res.checkpoint);
  write_stamped(out / "sft_metrics.jsonl", cfg, cfg.sft_hash(), sft_metrics_jsonl(res.metrics));
}

void run_rl(const RunConfig& cfg, const fs::path& out, bool skip_anchoring, bool force) {
  std::vector<world::Task> corpus = read_corpus_stamped(out / "corpus_rl.jsonl", cfg, force);
  rl::ReinforceConfig rcfg = cfg.reinforcing;
  rcfg.seed = cfg.seed;

  vlm::Checkpoint start;
  if (skip_anchoring) {
    if (cfg.rl_mode == "full")
      throw ConfigError("mode=full needs an anchored checkpoint; --skip-anchoring only works "
                        "with mode=vanilla");
    start = stamped_init(cfg);
  } else {
    fs::path p = out / "anchored.ckpt";
    if (!fs::exists(p))
      throw ArtifactError(p.string() +
                          " is missing; run `lab sft` first or pass --skip-anchoring");
    start = vlm::load_checkpoint(p);
    if (!(start.config == cfg.model))
      throw ArtifactError("checkpoint model shape differs from the config: " + p.string());
    if (!force && last_stage_hash(start.provenance) != cfg.sft_hash())
      throw ArtifactError(p.string() +
                          " was produced under a different configuration; rerun `lab sft` or "
                          "pass --force");
  }

  rl::TrainResult res = cfg.rl_mode == "full" ? rl::train_reinforcing(start, corpus, rcfg)
                                              : rl::train_vanilla_grpo(start, corpus, rcfg);
  res.checkpoint.provenance = with_stage_hash(res.checkpoint.provenance, cfg.rl_hash());
  vlm::save_checkpoint(out / "reinforced.ckpt", res.checkpoint);
  write_stamped(out / "rl_metrics.jsonl", cfg, cfg.rl_hash(), rl_metrics_jsonl(res.metrics));
  std::string rollouts;
  for (const std::string& line : res.rollout_log) rollouts += line + "\n";
  write_stamped(out / "rollouts.jsonl", cfg, cfg.rl_hash(), rollouts);
}

prd::PRDReport run_eval(const RunConfig& cfg, const fs::path& out, const fs::path& ckpt_path,
                        int workers, bool force) {
  std::vector<world::Task> tasks = read_corpus_stamped(out / "corpus_eval.jsonl", cfg, force);

  fs::path cp = ckpt_path;
  if (cp.empty()) {
    if (fs::exists(out / "reinforced.ckpt"))
      cp = out / "reinforced.ckpt";
    else if (fs::exists(out / "anchored.ckpt"))
      cp = out / "anchored.ckpt";
    else
      throw ArtifactError("no checkpoint in " + out.string() +
                          "; run `lab sft` or `lab rl` first");
  }
  if (!fs::exists(cp)) throw ArtifactError("checkpoint not found: " + cp.string());
  vlm::Checkpoint ckpt = vlm::load_checkpoint(cp);
  if (!(ckpt.config == cfg.model))
    throw ArtifactError("checkpoint model shape differs from the config: " + cp.string());
  if (!force) {
    std::string want = ckpt.stage == "reinforced"  ? cfg.rl_hash()
                       : ckpt.stage == "anchored" ? cfg.sft_hash()
                                                  : "";
    if (last_stage_hash(ckpt.provenance) != want)
      throw ArtifactError("checkpoint " + cp.string() +
                          " does not match the current configuration; rerun upstream stages or "
                          "pass --force");
  }

  prd::EvalConfig ecfg;
  ecfg.max_new = cfg.eval.max_new;
  ecfg.heatmap_top_n = cfg.eval.heatmap_top_n;
  ecfg.image_dir = out / "images";
  ecfg.workers = workers;
  if (ecfg.heatmap_top_n > 0) fs::create_directories(ecfg.image_dir);
  prd::PRDReport report = prd::evaluate_checkpoint(ckpt, tasks, ecfg);
  write_file_atomic(out / "report.json", prd::report_to_json(report, cfg.hash(), ckpt));
  return report;
}

void cmd_gen(const Options& opts) {
  RunConfig cfg = effective_config(opts);
  run_gen(cfg, opts.out_dir);
  std::cout << "gen: " << (opts.out_dir / "manifest.json").string() << "\n";
}

void cmd_sft(const Options& opts) {
  RunConfig cfg = effective_config(opts);
  run_sft(cfg, opts.out_dir, opts.force);
  std::cout << "sft: " << (opts.out_dir / "anchored.ckpt").string() << "\n";
}

void cmd_rl(const Options& opts) {
  RunConfig cfg = effective_config(opts);
  run_rl(cfg, opts.out_dir, opts.skip_anchoring, opts.force);
  std::cout << "rl: " << (opts.out_dir / "reinforced.ckpt").string() << "\n";
}

void cmd_eval(const Options& opts) {
  RunConfig cfg = effective_config(opts);
  prd::PRDReport r = run_eval(cfg, opts.out_dir, opts.ckpt, opts.workers, opts.force);
  print_report_row("eval", r);
  std::cout << "eval: " << (opts.out_dir / "report.json").string() << "\n";
}

namespace {

struct SweepCell {
  double value = 0;
  uint64_t seed = 0;
  prd::PRDReport report;
};

struct SweepMean {
  double value = 0;
  double accuracy = 0;
  double perception = 0;
  std::optional<double> faithful;
  double wca = 0;
  std::optional<double> robustness;
};

SweepMean mean_over_seeds(double value, const std::vector<const prd::PRDReport*>& reports) {
  SweepMean m;
  m.value = value;
  double fu = 0, rr = 0;
  int fu_n = 0, rr_n = 0;
  for (const prd::PRDReport* r : reports) {
    m.accuracy += r->accuracy;
    m.perception += r->perception;
    m.wca += r->wca;
    if (r->faithful) {
      fu += *r->faithful;
      ++fu_n;
    }
    if (r->robustness) {
      rr += *r->robustness;
      ++rr_n;
    }
  }
  double n = static_cast<double>(reports.size());
  m.accuracy /= n;
  m.perception /= n;
  m.wca /= n;
  if (fu_n) m.faithful = fu / fu_n;
  if (rr_n) m.robustness = rr / rr_n;
  return m;
}

// Minimal line chart: one series per metric over the sweep values.
std::string render_sweep_svg(const std::string& param, const std::vector<SweepMean>& means) {
  const int w = 560, h = 360, x0 = 64, x1 = 536, y0 = 40, y1 = 312;
  double ymax = 1.0;
  for (const SweepMean& m : means) {
    ymax = std::max(ymax, m.accuracy);
    ymax = std::max(ymax, m.wca);
    if (m.robustness) ymax = std::max(ymax, *m.robustness);
  }
  ymax *= 1.08;
  auto xpos = [&](size_t i) {
    return x0 + (x1 - x0) * (static_cast<double>(i) + 0.5) / static_cast<double>(means.size());
  };
  auto ypos = [&](double v) { return y1 - (y1 - y0) * (v / ymax); };

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) + "\" height=\"" +
       std::to_string(h) + "\" viewBox=\"0 0 " + std::to_string(w) + " " + std::to_string(h) +
       "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    double v = ymax * i / 4.0;
    double y = ypos(v);
    s += "<line x1=\"" + fmt3(x0) + "\" y1=\"" + fmt3(y) + "\" x2=\"" + fmt3(x1) + "\" y2=\"" +
         fmt3(y) + "\" stroke=\"#dddddd\"/>\n";
    s += "<text x=\"" + fmt3(x0 - 8) + "\" y=\"" + fmt3(y + 4) +
         "\" font-size=\"11\" text-anchor=\"end\" fill=\"#444444\">" + fmt3(v) + "</text>\n";
  }
  for (size_t i = 0; i < means.size(); ++i)
    s += "<text x=\"" + fmt3(xpos(i)) + "\" y=\"" + fmt3(y1 + 18) +
         "\" font-size=\"11\" text-anchor=\"middle\" fill=\"#444444\">" + fmt3(means[i].value) +
         "</text>\n";
  s += "<text x=\"" + fmt3((x0 + x1) / 2.0) + "\" y=\"" + fmt3(h - 10) +
       "\" font-size=\"12\" text-anchor=\"middle\" fill=\"#222222\">" + param + "</text>\n";

  struct Series {
    const char* name;
    const char* color;
    std::vector<std::optional<double>> pts;
  };
  std::vector<Series> series = {{"accuracy", "#1f77b4", {}},
                                {"worst-case accuracy", "#2ca02c", {}},
                                {"reasoning robustness", "#d62728", {}}};
  for (const SweepMean& m : means) {
    series[0].pts.push_back(m.accuracy);
    series[1].pts.push_back(m.wca);
    series[2].pts.push_back(m.robustness);
  }
  double lx = x0 + 10;
  for (const Series& sr : series) {
    std::string seg;
    for (size_t i = 0; i < sr.pts.size(); ++i) {
      if (!sr.pts[i]) {
        seg.clear();
        continue;
      }
      s += "<circle cx=\"" + fmt3(xpos(i)) + "\" cy=\"" + fmt3(ypos(*sr.pts[i])) +
           "\" r=\"3\" fill=\"" + sr.color + "\"/>\n";
      seg += (seg.empty() ? "" : " ") + fmt3(xpos(i)) + "," + fmt3(ypos(*sr.pts[i]));
      if (i + 1 == sr.pts.size() || !sr.pts[i + 1]) {
        if (seg.find(' ') != std::string::npos)
          s += "<polyline points=\"" + seg + "\" fill=\"none\" stroke=\"" + sr.color +
               "\" stroke-width=\"1.5\"/>\n";
        seg.clear();
      }
    }
    s += "<rect x=\"" + fmt3(lx) + "\" y=\"" + fmt3(y0 - 24) +
         "\" width=\"10\" height=\"10\" fill=\"" + std::string(sr.color) + "\"/>\n";
    s += "<text x=\"" + fmt3(lx + 14) + "\" y=\"" + fmt3(y0 - 15) +
         "\" font-size=\"11\" fill=\"#222222\">" + sr.name + "</text>\n";
    lx += 14 + 8.0 * static_cast<double>(std::string(sr.name).size()) + 24;
  }
  s += "</svg>\n";
  return s;
}

}  // namespace

void cmd_sweep(const Options& opts) {
  RunConfig cfg = effective_config(opts);
  const std::string& param = cfg.sweep.param;
  fs::path root = opts.out_dir / "sweep";

  std::vector<SweepCell> cells;
  for (uint64_t seed : cfg.sweep.seeds) {
    fs::path seed_dir = root / ("seed-" + std::to_string(seed));
    fs::path shared = seed_dir / "shared";
    if (param == "lambda_attn") {
      RunConfig base = cfg;
      base.seed = seed;
      run_gen(base, shared);
      run_sft(base, shared, opts.force);
    }
    for (double value : cfg.sweep.values) {
      RunConfig cell = cfg;
      cell.seed = seed;
      if (param == "lambda_attn")
        cell.reinforcing.lambda_attn = value;
      else
        cell.anchoring.lambda_focus = value;
      fs::path dir = seed_dir / (param + "-" + format_double(value));
      run_gen(cell, dir);
      if (param == "lambda_attn")
        fs::copy_file(shared / "anchored.ckpt", dir / "anchored.ckpt",
                      fs::copy_options::overwrite_existing);
      else
        run_sft(cell, dir, opts.force);
      run_rl(cell, dir, false, opts.force);
      SweepCell sc;
      sc.value = value;
      sc.seed = seed;
      sc.report = run_eval(cell, dir, {}, opts.workers, opts.force);
      print_report_row("sweep " + param + "=" + format_double(value) + " seed=" +
                           std::to_string(seed),
                       sc.report);
      cells.push_back(std::move(sc));
    }
  }

  std::vector<SweepMean> means;
  for (double value : cfg.sweep.values) {
    std::vector<const prd::PRDReport*> rs;
    for (const SweepCell& c : cells)
      if (c.value == value) rs.push_back(&c.report);
    means.push_back(mean_over_seeds(value, rs));
  }

  ordered_json j = artifact_header(cfg, cfg.hash());
  j["param"] = param;
  j["values"] = cfg.sweep.values;
  j["seeds"] = cfg.sweep.seeds;
  ordered_json jc = ordered_json::array();
  for (const SweepCell& c : cells) {
    ordered_json e;
    e["value"] = c.value;
    e["seed"] = c.seed;
    e["accuracy"] = c.report.accuracy;
    e["perception_coverage"] = c.report.perception;
    e["faithful_use"] = c.report.faithful ? ordered_json(*c.report.faithful) : nullptr;
    e["worst_case_accuracy"] = c.report.wca;
    e["reasoning_robustness"] = c.report.robustness ? ordered_json(*c.report.robustness) : nullptr;
    jc.push_back(e);
  }
  j["cells"] = jc;
  ordered_json jm = ordered_json::array();
  for (const SweepMean& m : means) {
    ordered_json e;
    e["value"] = m.value;
    e["accuracy"] = m.accuracy;
    e["perception_coverage"] = m.perception;
    e["faithful_use"] = m.faithful ? ordered_json(*m.faithful) : nullptr;
    e["worst_case_accuracy"] = m.wca;
    e["reasoning_robustness"] = m.robustness ? ordered_json(*m.robustness) : nullptr;
    jm.push_back(e);
  }
  j["means"] = jm;
  write_file_atomic(opts.out_dir / "sweep.json", j.dump(2) + "\n");
  write_file_atomic(opts.out_dir / "sweep.svg", render_sweep_svg(param, means));

  std::cout << param << "  acc    pc     fu     wca    rr\n";
  for (const SweepMean& m : means)
    std::cout << fmt3(m.value) << "  " << fmt3(m.accuracy) << "  " << fmt3(m.perception) << "  "
              << fmt3(m.faithful) << "  " << fmt3(m.wca) << "  " << fmt3(m.robustness) << "\n";
  std::cout << "sweep: " << (opts.out_dir / "sweep.json").string() << "\n";
}

void cmd_ablate(const Options& opts) {
  RunConfig cfg = effective_config(opts);
  fs::path dir = opts.out_dir / "ablate";
  run_gen(cfg, dir);
  std::vector<world::Task> sft_corpus = read_corpus_stamped(dir / "corpus_sft.jsonl", cfg, false);
  std::vector<world::Task> rl_corpus = read_corpus_stamped(dir / "corpus_rl.jsonl", cfg, false);
  std::vector<world::Task> eval_corpus =
      read_corpus_stamped(dir / "corpus_eval.jsonl", cfg, false);

  anchor::AnchorConfig acfg = cfg.anchoring;
  acfg.seed = cfg.seed;
  rl::ReinforceConfig rcfg = cfg.reinforcing;
  rcfg.seed = cfg.seed;
  prd::EvalConfig ecfg;
  ecfg.max_new = cfg.eval.max_new;
  ecfg.workers = opts.workers;

  vlm::Checkpoint init = stamped_init(cfg);
  vlm::Checkpoint vanilla_sft = anchor::train_vanilla_sft(init, sft_corpus, acfg).checkpoint;
  vlm::Checkpoint anchored = anchor::train_anchoring(init, sft_corpus, acfg).checkpoint;

  struct Row {
    int id;
    std::string name;
    vlm::Checkpoint ckpt;
  };
  std::vector<Row> rows;
  rows.push_back({1, "base", init});
  rows.push_back({2, "base+vanilla-grpo", rl::train_vanilla_grpo(init, rl_corpus, rcfg).checkpoint});
  rows.push_back({3, "vanilla-sft+vanilla-grpo",
                  rl::train_vanilla_grpo(vanilla_sft, rl_corpus, rcfg).checkpoint});
  rows.push_back({4, "anchoring+vanilla-grpo",
                  rl::train_vanilla_grpo(anchored, rl_corpus, rcfg).checkpoint});
  rows.push_back({5, "full", rl::train_reinforcing(anchored, rl_corpus, rcfg).checkpoint});

  ordered_json j = artifact_header(cfg, cfg.hash());
  ordered_json jr = ordered_json::array();
  std::cout << "row  config                     acc    pc     fu     wca    rr\n";
  for (const Row& row : rows) {
    prd::PRDReport r = prd::evaluate_checkpoint(row.ckpt, eval_corpus, ecfg);
    fs::path row_dir = dir / ("row" + std::to_string(row.id) + "-" + row.name);
    fs::create_directories(row_dir);
    write_file_atomic(row_dir / "report.json", prd::report_to_json(r, cfg.hash(), row.ckpt));
    ordered_json e;
    e["row"] = row.id;
    e["name"] = row.name;
    e["accuracy"] = r.accuracy;
    e["perception_coverage"] = r.perception;
    e["faithful_use"] = r.faithful ? ordered_json(*r.faithful) : nullptr;
    e["worst_case_accuracy"] = r.wca;
    e["reasoning_robustness"] = r.robustness ? ordered_json(*r.robustness) : nullptr;
    jr.push_back(e);
    char line[128];
    std::snprintf(line, sizeof(line), "(%d)  %-25s", row.id, row.name.c_str());
    std::cout << line << "  " << fmt3(r.accuracy) << "  " << fmt3(r.perception) << "  "
              << fmt3(r.faithful) << "  " << fmt3(r.wca) << "  " << fmt3(r.robustness) << "\n";
  }
  j["rows"] = jr;
  write_file_atomic(dir / "ablate.json", j.dump(2) + "\n");
  std::cout << "ablate: " << (dir / "ablate.json").string() << "\n";
}

}  // namespace gridvlm::pipeline
