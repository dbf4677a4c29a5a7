#include "gridvlm/runconfig.hpp"

#include <charconv>
#include <sstream>

namespace gridvlm {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void fail(int line, const std::string& what) {
  throw ConfigError("config line " + std::to_string(line) + ": " + what);
}

double parse_double(const std::string& v, int line) {
  try {
    size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) fail(line, "trailing characters in number '" + v + "'");
    return d;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    fail(line, "expected a number, got '" + v + "'");
  }
}

int64_t parse_int(const std::string& v, int line) {
  int64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size())
    fail(line, "expected an integer, got '" + v + "'");
  return out;
}

uint64_t parse_uint(const std::string& v, int line) {
  uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size())
    fail(line, "expected a non-negative integer, got '" + v + "'");
  return out;
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(v);
  while (std::getline(ss, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::string section;
  std::stringstream ss(text);
  std::string raw;
  int line = 0;
  while (std::getline(ss, raw)) {
    ++line;
    size_t cut = raw.find_first_of("#;");
    std::string s = trim(cut == std::string::npos ? raw : raw.substr(0, cut));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') fail(line, "unterminated section header");
      section = trim(s.substr(1, s.size() - 2));
      if (section != "world" && section != "model" && section != "anchoring" &&
          section != "reinforcing" && section != "eval" && section != "sweep")
        fail(line, "unknown section [" + section + "]");
      continue;
    }
    size_t eq = s.find('=');
    if (eq == std::string::npos) fail(line, "expected key = value");
    std::string key = trim(s.substr(0, eq));
    std::string val = trim(s.substr(eq + 1));
    if (key.empty()) fail(line, "empty key");
    if (val.empty()) fail(line, "empty value for '" + key + "'");

    if (section.empty()) {
      if (key == "seed")
        cfg.seed = parse_uint(val, line);
      else
        fail(line, "unknown key '" + key + "' outside any section");
    } else if (section == "world") {
      if (key == "sft_tasks")
        cfg.world.sft_tasks = static_cast<int>(parse_int(val, line));
      else if (key == "rl_tasks")
        cfg.world.rl_tasks = static_cast<int>(parse_int(val, line));
      else if (key == "eval_groups")
        cfg.world.eval_groups = static_cast<int>(parse_int(val, line));
      else if (key == "variants_per_group")
        cfg.world.variants_per_group = static_cast<int>(parse_int(val, line));
      else if (key == "families") {
        cfg.world.families.clear();
        for (const std::string& v : split_list(val)) {
          try {
            cfg.world.families.push_back(world::family_from_name(v));
          } catch (const std::exception&) {
            fail(line, "unknown task family '" + v + "'");
          }
        }
        if (cfg.world.families.empty()) fail(line, "families list must not be empty");
      } else
        fail(line, "unknown key '" + key + "' in [world]");
    } else if (section == "model") {
      if (key == "dim")
        cfg.model.dim = static_cast<int>(parse_int(val, line));
      else if (key == "layers")
        cfg.model.layers = static_cast<int>(parse_int(val, line));
      else if (key == "heads")
        cfg.model.heads = static_cast<int>(parse_int(val, line));
      else if (key == "ffn_dim")
        cfg.model.ffn_dim = static_cast<int>(parse_int(val, line));
      else if (key == "max_seq")
        cfg.model.max_seq = static_cast<int>(parse_int(val, line));
      else
        fail(line, "unknown key '" + key + "' in [model]");
    } else if (section == "anchoring") {
      if (key == "tau")
        cfg.anchoring.tau = parse_double(val, line);
      else if (key == "lambda_focus")
        cfg.anchoring.lambda_focus = parse_double(val, line);
      else if (key == "learning_rate")
        cfg.anchoring.learning_rate = parse_double(val, line);
      else if (key == "epochs")
        cfg.anchoring.epochs = static_cast<int>(parse_int(val, line));
      else if (key == "batch_size")
        cfg.anchoring.batch_size = static_cast<int>(parse_int(val, line));
      else
        fail(line, "unknown key '" + key + "' in [anchoring]");
    } else if (section == "reinforcing") {
      if (key == "group_size")
        cfg.reinforcing.group_size = static_cast<int>(parse_int(val, line));
      else if (key == "temperature")
        cfg.reinforcing.temperature = parse_double(val, line);
      else if (key == "tau_g")
        cfg.reinforcing.tau_g = parse_double(val, line);
      else if (key == "lambda_attn")
        cfg.reinforcing.lambda_attn = parse_double(val, line);
      else if (key == "clip_eps")
        cfg.reinforcing.clip_eps = parse_double(val, line);
      else if (key == "kl_beta")
        cfg.reinforcing.kl_beta = parse_double(val, line);
      else if (key == "attn_eps")
        cfg.reinforcing.attn_eps = parse_double(val, line);
      else if (key == "learning_rate")
        cfg.reinforcing.learning_rate = parse_double(val, line);
      else if (key == "steps")
        cfg.reinforcing.steps = static_cast<int>(parse_int(val, line));
      else if (key == "prompts_per_step")
        cfg.reinforcing.prompts_per_step = static_cast<int>(parse_int(val, line));
      else if (key == "max_new")
        cfg.reinforcing.max_new = static_cast<int>(parse_int(val, line));
      else if (key == "vd_rule") {
        if (val == "mean_std")
          cfg.reinforcing.vd_selection.kind = rl::VdRule::Kind::kMeanStd;
        else if (val == "quantile")
          cfg.reinforcing.vd_selection.kind = rl::VdRule::Kind::kQuantile;
        else if (val == "fixed")
          cfg.reinforcing.vd_selection.kind = rl::VdRule::Kind::kFixed;
        else
          fail(line, "vd_rule must be mean_std, quantile or fixed");
      } else if (key == "vd_k_std")
        cfg.reinforcing.vd_selection.k_std = parse_double(val, line);
      else if (key == "vd_floor")
        cfg.reinforcing.vd_selection.floor_nats = parse_double(val, line);
      else if (key == "vd_quantile")
        cfg.reinforcing.vd_selection.quantile = parse_double(val, line);
      else if (key == "vd_threshold")
        cfg.reinforcing.vd_selection.threshold = parse_double(val, line);
      else if (key == "mode") {
        if (val != "full" && val != "vanilla") fail(line, "mode must be full or vanilla");
        cfg.rl_mode = val;
      } else
        fail(line, "unknown key '" + key + "' in [reinforcing]");
    } else if (section == "eval") {
      if (key == "max_new")
        cfg.eval.max_new = static_cast<int>(parse_int(val, line));
      else if (key == "heatmap_top_n")
        cfg.eval.heatmap_top_n = static_cast<int>(parse_int(val, line));
      else
        fail(line, "unknown key '" + key + "' in [eval]");
    } else if (section == "sweep") {
      if (key == "param") {
        if (val != "lambda_attn" && val != "lambda_focus")
          fail(line, "sweep param must be lambda_attn or lambda_focus");
        cfg.sweep.param = val;
      } else if (key == "values") {
        cfg.sweep.values.clear();
        for (const std::string& v : split_list(val))
          cfg.sweep.values.push_back(parse_double(v, line));
      } else if (key == "seeds") {
        cfg.sweep.seeds.clear();
        for (const std::string& v : split_list(val))
          cfg.sweep.seeds.push_back(parse_uint(v, line));
      } else
        fail(line, "unknown key '" + key + "' in [sweep]");
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  RunConfig cfg = parse_run_config(read_text_file(path));
  cfg.validate();
  return cfg;
}

void RunConfig::validate() const {
  if (world.sft_tasks <= 0 || world.rl_tasks <= 0 || world.eval_groups <= 0 ||
      world.variants_per_group <= 0)
    throw ConfigError("world task counts must be positive");
  if (world.families.empty()) throw ConfigError("world families must not be empty");
  model.validate();
  anchoring.validate(model);
  reinforcing.validate(model);
  if (rl_mode != "full" && rl_mode != "vanilla")
    throw ConfigError("reinforcing mode must be full or vanilla");
  if (eval.max_new <= 0) throw ConfigError("eval max_new must be positive");
  if (eval.heatmap_top_n < 0) throw ConfigError("heatmap_top_n must be >= 0");
  if (sweep.values.empty()) throw ConfigError("sweep values must not be empty");
  if (sweep.seeds.empty()) throw ConfigError("sweep seeds must not be empty");
}

namespace {

void append_kv(std::string& s, const std::string& k, const std::string& v) {
  s += k + " = " + v + "\n";
}

std::string canonical_gen(const RunConfig& c) {
  std::string s;
  append_kv(s, "seed", std::to_string(c.seed));
  s += "[world]\n";
  append_kv(s, "sft_tasks", std::to_string(c.world.sft_tasks));
  append_kv(s, "rl_tasks", std::to_string(c.world.rl_tasks));
  append_kv(s, "eval_groups", std::to_string(c.world.eval_groups));
  append_kv(s, "variants_per_group", std::to_string(c.world.variants_per_group));
  std::string fams;
  for (size_t i = 0; i < c.world.families.size(); ++i)
    fams += (i ? "," : "") + world::family_name(c.world.families[i]);
  append_kv(s, "families", fams);
  return s;
}

std::string canonical_sft(const RunConfig& c) {
  std::string s = canonical_gen(c);
  s += "[model]\n";
  append_kv(s, "dim", std::to_string(c.model.dim));
  append_kv(s, "layers", std::to_string(c.model.layers));
  append_kv(s, "heads", std::to_string(c.model.heads));
  append_kv(s, "ffn_dim", std::to_string(c.model.ffn_dim));
  append_kv(s, "max_seq", std::to_string(c.model.max_seq));
  s += "[anchoring]\n";
  append_kv(s, "tau", format_double(c.anchoring.tau));
  append_kv(s, "lambda_focus", format_double(c.anchoring.lambda_focus));
  append_kv(s, "learning_rate", format_double(c.anchoring.learning_rate));
  append_kv(s, "epochs", std::to_string(c.anchoring.epochs));
  append_kv(s, "batch_size", std::to_string(c.anchoring.batch_size));
  return s;
}

std::string canonical_rl(const RunConfig& c) {
  std::string s = canonical_sft(c);
  s += "[reinforcing]\n";
  append_kv(s, "group_size", std::to_string(c.reinforcing.group_size));
  append_kv(s, "temperature", format_double(c.reinforcing.temperature));
  append_kv(s, "tau_g", format_double(c.reinforcing.tau_g));
  append_kv(s, "lambda_attn", format_double(c.reinforcing.lambda_attn));
  append_kv(s, "clip_eps", format_double(c.reinforcing.clip_eps));
  append_kv(s, "kl_beta", format_double(c.reinforcing.kl_beta));
  append_kv(s, "attn_eps", format_double(c.reinforcing.attn_eps));
  append_kv(s, "learning_rate", format_double(c.reinforcing.learning_rate));
  append_kv(s, "steps", std::to_string(c.reinforcing.steps));
  append_kv(s, "prompts_per_step", std::to_string(c.reinforcing.prompts_per_step));
  append_kv(s, "max_new", std::to_string(c.reinforcing.max_new));
  switch (c.reinforcing.vd_selection.kind) {
    case rl::VdRule::Kind::kMeanStd:
      append_kv(s, "vd_rule", "mean_std");
      break;
    case rl::VdRule::Kind::kQuantile:
      append_kv(s, "vd_rule", "quantile");
      break;
    case rl::VdRule::Kind::kFixed:
      append_kv(s, "vd_rule", "fixed");
      break;
  }
  append_kv(s, "vd_k_std", format_double(c.reinforcing.vd_selection.k_std));
  append_kv(s, "vd_floor", format_double(c.reinforcing.vd_selection.floor_nats));
  append_kv(s, "vd_quantile", format_double(c.reinforcing.vd_selection.quantile));
  append_kv(s, "vd_threshold", format_double(c.reinforcing.vd_selection.threshold));
  append_kv(s, "mode", c.rl_mode);
  return s;
}

std::string canonical_eval(const RunConfig& c) {
  std::string s = canonical_rl(c);
  s += "[eval]\n";
  append_kv(s, "max_new", std::to_string(c.eval.max_new));
  append_kv(s, "heatmap_top_n", std::to_string(c.eval.heatmap_top_n));
  return s;
}

}  // namespace

std::string RunConfig::canonical() const {
  std::string s = canonical_eval(*this);
  s += "[sweep]\n";
  append_kv(s, "param", sweep.param);
  std::string vals;
  for (size_t i = 0; i < sweep.values.size(); ++i)
    vals += (i ? "," : "") + format_double(sweep.values[i]);
  append_kv(s, "values", vals);
  std::string seed_list;
  for (size_t i = 0; i < sweep.seeds.size(); ++i)
    seed_list += (i ? "," : "") + std::to_string(sweep.seeds[i]);
  append_kv(s, "seeds", seed_list);
  return s;
}

std::string RunConfig::hash() const { return sha256_hex(canonical()); }
std::string RunConfig::gen_hash() const { return sha256_hex(canonical_gen(*this)); }
std::string RunConfig::sft_hash() const { return sha256_hex(canonical_sft(*this)); }
std::string RunConfig::rl_hash() const { return sha256_hex(canonical_rl(*this)); }
std::string RunConfig::eval_hash() const { return sha256_hex(canonical_eval(*this)); }

}  // namespace gridvlm
