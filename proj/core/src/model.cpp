#include "gridvlm/model.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "gridvlm/vocab.hpp"

namespace gridvlm::vlm {

using ordered_json = nlohmann::ordered_json;

namespace {

// Patches form a square grid addressed by the coordinate token vocabulary.
int patch_grid_side(const ModelConfig& cfg) {
  int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(cfg.patch_count))));
  if (side * side != cfg.patch_count) throw ConfigError("patch_count must be a perfect square");
  if (side > vocab::kColBase - vocab::kRowBase)
    throw ConfigError("patch grid exceeds the coordinate token range");
  return side;
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size <= 0 || dim <= 0 || layers <= 0 || heads <= 0 || ffn_dim <= 0 || max_seq <= 0 ||
      patch_count <= 0 || patch_dim <= 0)
    throw ConfigError("model dimensions must be positive");
  if (dim % heads != 0) throw ConfigError("dim must be divisible by heads");
  if (max_seq <= patch_count) throw ConfigError("max_seq must exceed patch_count");
  if (rms_eps <= 0) throw ConfigError("rms_eps must be positive");
  patch_grid_side(*this);
}

const Mat& Checkpoint::param(const std::string& name) const {
  for (const auto& [n, m] : params)
    if (n == name) return m;
  throw InputError("unknown parameter: " + name);
}

Mat& Checkpoint::param(const std::string& name) {
  for (auto& [n, m] : params)
    if (n == name) return m;
  throw InputError("unknown parameter: " + name);
}

std::vector<std::pair<std::string, std::pair<int, int>>> param_shapes(const ModelConfig& cfg) {
  std::vector<std::pair<std::string, std::pair<int, int>>> s;
  s.emplace_back("patch_proj", std::pair{cfg.patch_dim, cfg.dim});
  s.emplace_back("tok_emb", std::pair{cfg.vocab_size, cfg.dim});
  s.emplace_back("pos_emb", std::pair{cfg.max_seq, cfg.dim});
  for (int i = 0; i < cfg.layers; ++i) {
    std::string p = "layer" + std::to_string(i) + ".";
    s.emplace_back(p + "wq", std::pair{cfg.dim, cfg.dim});
    s.emplace_back(p + "wk", std::pair{cfg.dim, cfg.dim});
    s.emplace_back(p + "wv", std::pair{cfg.dim, cfg.dim});
    s.emplace_back(p + "wo", std::pair{cfg.dim, cfg.dim});
    s.emplace_back(p + "attn_norm", std::pair{1, cfg.dim});
    s.emplace_back(p + "ffn_norm", std::pair{1, cfg.dim});
    s.emplace_back(p + "w1", std::pair{cfg.dim, cfg.ffn_dim});
    s.emplace_back(p + "w2", std::pair{cfg.ffn_dim, cfg.dim});
  }
  s.emplace_back("final_norm", std::pair{1, cfg.dim});
  s.emplace_back("unembed", std::pair{cfg.dim, cfg.vocab_size});
  return s;
}

namespace {

// Box-Muller over explicit mt19937_64 bits; avoids the library-defined
// normal_distribution so initialization is reproducible everywhere.
double next_normal(std::mt19937_64& rng) {
  double u1 = static_cast<double>(rng() >> 11) * 0x1p-53;
  double u2 = static_cast<double>(rng() >> 11) * 0x1p-53;
  double r = std::sqrt(-2.0 * std::log(1.0 - u1));
  return r * std::cos(2.0 * M_PI * u2);
}

}  // namespace

Checkpoint init_checkpoint(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Checkpoint ckpt;
  ckpt.config = cfg;
  ckpt.stage = "init";
  ckpt.provenance = "init;seed:" + std::to_string(seed);
  std::mt19937_64 rng(mix_seed(seed, "init"));
  for (const auto& [name, shape] : param_shapes(cfg)) {
    Mat m(shape.first, shape.second);
    bool is_norm = name.find("norm") != std::string::npos;
    bool is_emb = name == "tok_emb" || name == "pos_emb";
    if (is_norm) {
      m.setOnes();
    } else {
      // Fan-in scaling for projections, fixed scale for embedding tables.
      double sigma = is_emb ? 0.1 : 1.0 / std::sqrt(static_cast<double>(shape.first));
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = sigma * next_normal(rng);
    }
    ckpt.params.emplace_back(name, std::move(m));
  }
  return ckpt;
}

namespace {

constexpr char kMagic[8] = {'G', 'V', 'L', 'M', 'C', 'K', 'P', '1'};

ordered_json config_to_json(const ModelConfig& c) {
  ordered_json j;
  j["vocab_size"] = c.vocab_size;
  j["dim"] = c.dim;
  j["layers"] = c.layers;
  j["heads"] = c.heads;
  j["ffn_dim"] = c.ffn_dim;
  j["max_seq"] = c.max_seq;
  j["patch_count"] = c.patch_count;
  j["patch_dim"] = c.patch_dim;
  j["rms_eps"] = c.rms_eps;
  return j;
}

ModelConfig config_from_json(const ordered_json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.dim = j.at("dim").get<int>();
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ffn_dim = j.at("ffn_dim").get<int>();
  c.max_seq = j.at("max_seq").get<int>();
  c.patch_count = j.at("patch_count").get<int>();
  c.patch_dim = j.at("patch_dim").get<int>();
  c.rms_eps = j.at("rms_eps").get<double>();
  return c;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  ckpt.config.validate();
  ordered_json header;
  header["config"] = config_to_json(ckpt.config);
  header["stage"] = ckpt.stage;
  header["provenance"] = ckpt.provenance;
  ordered_json plist = ordered_json::array();
  for (const auto& [name, m] : ckpt.params) {
    ordered_json pj;
    pj["name"] = name;
    pj["rows"] = static_cast<int>(m.rows());
    pj["cols"] = static_cast<int>(m.cols());
    plist.push_back(pj);
  }
  header["params"] = plist;
  std::string hs = header.dump();

  std::string out;
  out.append(kMagic, sizeof(kMagic));
  uint64_t hlen = hs.size();
  out.append(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out += hs;
  for (const auto& [name, m] : ckpt.params)
    out.append(reinterpret_cast<const char*>(m.data()),
               static_cast<size_t>(m.size()) * sizeof(double));
  write_file_atomic(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::string bytes = read_text_file(path);
  size_t off = 0;
  auto need = [&](size_t n, const char* what) {
    if (bytes.size() - off < n)
      throw InputError("checkpoint " + path.string() + ": truncated " + what);
  };
  need(sizeof(kMagic), "magic");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw InputError("checkpoint " + path.string() + ": bad magic");
  off += sizeof(kMagic);
  need(sizeof(uint64_t), "header length");
  uint64_t hlen = 0;
  std::memcpy(&hlen, bytes.data() + off, sizeof(hlen));
  off += sizeof(hlen);
  need(hlen, "header");
  ordered_json header;
  try {
    header = ordered_json::parse(bytes.substr(off, hlen));
  } catch (const std::exception& e) {
    throw InputError("checkpoint " + path.string() + ": header parse: " + e.what());
  }
  off += hlen;

  Checkpoint ckpt;
  ckpt.config = config_from_json(header.at("config"));
  ckpt.config.validate();
  ckpt.stage = header.at("stage").get<std::string>();
  ckpt.provenance = header.at("provenance").get<std::string>();
  auto expected = param_shapes(ckpt.config);
  const auto& plist = header.at("params");
  if (plist.size() != expected.size())
    throw InputError("checkpoint " + path.string() + ": wrong parameter count");
  for (size_t i = 0; i < expected.size(); ++i) {
    const auto& pj = plist.at(i);
    std::string name = pj.at("name").get<std::string>();
    int rows = pj.at("rows").get<int>();
    int cols = pj.at("cols").get<int>();
    if (name != expected[i].first || rows != expected[i].second.first ||
        cols != expected[i].second.second)
      throw InputError("checkpoint " + path.string() + ": parameter mismatch at " + name);
    Mat m(rows, cols);
    size_t nbytes = static_cast<size_t>(m.size()) * sizeof(double);
    need(nbytes, name.c_str());
    std::memcpy(m.data(), bytes.data() + off, nbytes);
    off += nbytes;
    ckpt.params.emplace_back(std::move(name), std::move(m));
  }
  if (off != bytes.size())
    throw InputError("checkpoint " + path.string() + ": trailing bytes");
  return ckpt;
}

std::vector<std::pair<int, int>> response_cells(const TokenLayout& layout,
                                                const std::vector<int>& response) {
  if (static_cast<int>(response.size()) != layout.response_len)
    throw InputError("response length does not match layout");
  std::vector<std::pair<int, int>> cells;
  cells.reserve(response.size());
  for (size_t j = 0; j < response.size(); ++j)
    cells.emplace_back(layout.response_begin() + static_cast<int>(j) - 1, response[j]);
  return cells;
}

double ForwardTrace::response_logprob(int j) const {
  if (j < 0 || j >= layout.response_len) throw InputError("response index out of range");
  return logprobs(layout.response_begin() + j - 1, response[static_cast<size_t>(j)]);
}

double ForwardTrace::total_response_logprob() const {
  double s = 0;
  for (int j = 0; j < layout.response_len; ++j) s += response_logprob(j);
  return s;
}

const Mat& ForwardTrace::attn(int layer, int head) const {
  if (layer < 0 || layer >= layers || head < 0 || head >= heads)
    throw InputError("attention index out of range");
  return attention[static_cast<size_t>(layer * heads + head)];
}

namespace {

constexpr int kMixWindow = 12;
constexpr double kMixGamma = 0.3;

// The two engines run the same expression graph; the tape engine records it.
struct PlainEngine {
  using V = Mat;
  V constant(Mat m) { return m; }
  V matmul(const V& a, const V& b) { return a * b; }
  V transpose(const V& a) { return a.transpose(); }
  V add(const V& a, const V& b) { return a + b; }
  V scale(const V& a, double c) { return a * c; }
  V gather_rows(const V& a, const std::vector<int>& rows) {
    Mat out(static_cast<Eigen::Index>(rows.size()), a.cols());
    for (size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] < 0 || rows[i] >= a.rows()) throw InputError("gather_rows index out of range");
      out.row(static_cast<Eigen::Index>(i)) = a.row(rows[i]);
    }
    return out;
  }
  V concat_rows(const std::vector<V>& parts) {
    Eigen::Index rows = 0;
    for (const V& p : parts) rows += p.rows();
    Mat out(rows, parts.at(0).cols());
    Eigen::Index r = 0;
    for (const V& p : parts) {
      out.middleRows(r, p.rows()) = p;
      r += p.rows();
    }
    return out;
  }
  V concat_cols(const std::vector<V>& parts) {
    Eigen::Index cols = 0;
    for (const V& p : parts) cols += p.cols();
    Mat out(parts.at(0).rows(), cols);
    Eigen::Index c = 0;
    for (const V& p : parts) {
      out.middleCols(c, p.cols()) = p;
      c += p.cols();
    }
    return out;
  }
  V slice_rows(const V& a, int r0, int n) { return a.middleRows(r0, n); }
  V slice_cols(const V& a, int c0, int n) { return a.middleCols(c0, n); }
  V softmax_causal_rows(const V& a) { return ad::kernels::softmax_causal_rows(a); }
  V rmsnorm_rows(const V& x, const V& g, double eps) {
    return ad::kernels::rmsnorm_rows(x, g, eps);
  }
  V gelu(const V& a) { return ad::kernels::gelu(a); }
  V log_softmax_rows(const V& a) { return ad::kernels::log_softmax_rows(a); }
};

struct TapeEngine {
  ad::Tape& t;
  using V = ad::Var;
  V constant(Mat m) { return t.leaf(std::move(m)); }
  V matmul(V a, V b) { return t.matmul(a, b); }
  V transpose(V a) { return t.transpose(a); }
  V add(V a, V b) { return t.add(a, b); }
  V scale(V a, double c) { return t.scale(a, c); }
  V gather_rows(V a, const std::vector<int>& rows) { return t.gather_rows(a, rows); }
  V concat_rows(const std::vector<V>& parts) { return t.concat_rows(parts); }
  V concat_cols(const std::vector<V>& parts) { return t.concat_cols(parts); }
  V slice_rows(V a, int r0, int n) { return t.slice_rows(a, r0, n); }
  V slice_cols(V a, int c0, int n) { return t.slice_cols(a, c0, n); }
  V softmax_causal_rows(V a) { return t.softmax_causal_rows(a); }
  V rmsnorm_rows(V x, V g, double eps) { return t.rmsnorm_rows(x, g, eps); }
  V gelu(V a) { return t.gelu(a); }
  V log_softmax_rows(V a) { return t.log_softmax_rows(a); }
};

template <class E>
struct CoreOutput {
  typename E::V logprobs;
  std::vector<typename E::V> attention;
};

// params must follow param_shapes() order.
template <class E>
CoreOutput<E> transformer_core(E& eng, const std::vector<typename E::V>& params,
                               const ModelConfig& cfg, const Mat& patch_px,
                               const std::vector<int>& text) {
  using V = typename E::V;
  int P = cfg.patch_count;
  int T = P + static_cast<int>(text.size());
  if (patch_px.rows() != P || patch_px.cols() != cfg.patch_dim)
    throw InputError("patch pixel matrix has wrong shape");
  if (T > cfg.max_seq) throw InputError("sequence too long for model");
  for (int id : text)
    if (id < 0 || id >= cfg.vocab_size) throw InputError("token id out of vocabulary");

  size_t pi = 0;
  const V& patch_proj = params[pi++];
  const V& tok_emb = params[pi++];
  const V& pos_emb = params[pi++];

  // Patch positions reuse the coordinate token embeddings, so the question's
  // row/col tokens and the patch grid share one positional code.
  int side = patch_grid_side(cfg);
  std::vector<int> row_ids(static_cast<size_t>(P)), col_ids(static_cast<size_t>(P));
  for (int p = 0; p < P; ++p) {
    row_ids[static_cast<size_t>(p)] = vocab::row_token(p / side);
    col_ids[static_cast<size_t>(p)] = vocab::col_token(p % side);
  }
  V patch_e = eng.add(eng.matmul(eng.constant(patch_px), patch_proj),
                      eng.add(eng.gather_rows(tok_emb, row_ids), eng.gather_rows(tok_emb, col_ids)));
  V text_e = eng.gather_rows(tok_emb, text);
  // Input-level local mixing over text positions: each text row also sums the
  // previous kMixWindow text embeddings, giving shallow layers direct access
  // to nearby question tokens. Patch rows are left unmixed so each patch key
  // stays local to its own cell.
  int n_text = static_cast<int>(text.size());
  Mat band = Mat::Identity(n_text, n_text);
  for (int i = 0; i < n_text; ++i)
    for (int j = std::max(0, i - kMixWindow); j < i; ++j) band(i, j) = kMixGamma;
  V mixed_text = eng.matmul(eng.constant(band), text_e);
  V x = eng.add(eng.concat_rows({patch_e, mixed_text}), eng.slice_rows(pos_emb, 0, T));

  CoreOutput<E> out;
  double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
  for (int l = 0; l < cfg.layers; ++l) {
    const V& wq = params[pi++];
    const V& wk = params[pi++];
    const V& wv = params[pi++];
    const V& wo = params[pi++];
    const V& attn_norm = params[pi++];
    const V& ffn_norm = params[pi++];
    const V& w1 = params[pi++];
    const V& w2 = params[pi++];

    V h = eng.rmsnorm_rows(x, attn_norm, cfg.rms_eps);
    V q = eng.matmul(h, wq);
    V k = eng.matmul(h, wk);
    V v = eng.matmul(h, wv);
    std::vector<V> ctx;
    ctx.reserve(static_cast<size_t>(cfg.heads));
    for (int hd = 0; hd < cfg.heads; ++hd) {
      int c0 = hd * cfg.head_dim();
      V qh = eng.slice_cols(q, c0, cfg.head_dim());
      V kh = eng.slice_cols(k, c0, cfg.head_dim());
      V vh = eng.slice_cols(v, c0, cfg.head_dim());
      V scores = eng.scale(eng.matmul(qh, eng.transpose(kh)), inv_sqrt_dh);
      V attn = eng.softmax_causal_rows(scores);
      out.attention.push_back(attn);
      ctx.push_back(eng.matmul(attn, vh));
    }
    x = eng.add(x, eng.matmul(eng.concat_cols(ctx), wo));
    V h2 = eng.rmsnorm_rows(x, ffn_norm, cfg.rms_eps);
    x = eng.add(x, eng.matmul(eng.gelu(eng.matmul(h2, w1)), w2));
  }
  const V& final_norm = params[pi++];
  const V& unembed = params[pi++];
  V hf = eng.rmsnorm_rows(x, final_norm, cfg.rms_eps);
  out.logprobs = eng.log_softmax_rows(eng.matmul(hf, unembed));
  return out;
}

TokenLayout make_layout(const ModelConfig& cfg, const std::vector<int>& prompt,
                        const std::vector<int>& response) {
  TokenLayout lay;
  lay.patch_count = cfg.patch_count;
  lay.prompt_len = static_cast<int>(prompt.size());
  lay.response_len = static_cast<int>(response.size());
  for (size_t i = 0; i < prompt.size(); ++i)
    if (prompt[i] == vocab::kFocus) lay.focus_pos = cfg.patch_count + static_cast<int>(i);
  if (lay.prompt_len == 0) throw InputError("prompt must not be empty");
  return lay;
}

std::vector<int> concat_text(const std::vector<int>& prompt, const std::vector<int>& response) {
  std::vector<int> text = prompt;
  text.insert(text.end(), response.begin(), response.end());
  return text;
}

}  // namespace

ForwardTrace forward(const Checkpoint& ckpt, const Mat& patch_px, const std::vector<int>& prompt,
                     const std::vector<int>& response) {
  PlainEngine eng;
  std::vector<Mat> params;
  params.reserve(ckpt.params.size());
  for (const auto& [name, m] : ckpt.params) params.push_back(m);
  auto core = transformer_core(eng, params, ckpt.config, patch_px, concat_text(prompt, response));
  ForwardTrace tr;
  tr.layout = make_layout(ckpt.config, prompt, response);
  tr.layers = ckpt.config.layers;
  tr.heads = ckpt.config.heads;
  tr.prompt = prompt;
  tr.response = response;
  tr.logprobs = std::move(core.logprobs);
  tr.attention = std::move(core.attention);
  return tr;
}

namespace {

// Forward without keeping attention, for the sampling loop.
Mat plain_logprobs(const Checkpoint& ckpt, const Mat& patch_px, const std::vector<int>& text) {
  PlainEngine eng;
  std::vector<Mat> params;
  params.reserve(ckpt.params.size());
  for (const auto& [name, m] : ckpt.params) params.push_back(m);
  return transformer_core(eng, params, ckpt.config, patch_px, text).logprobs;
}

int sample_from_logprob_row(const Eigen::RowVectorXd& lp, double temperature,
                            std::mt19937_64& rng) {
  Eigen::RowVectorXd q = lp / temperature;
  double m = q.maxCoeff();
  Eigen::RowVectorXd p = (q.array() - m).exp();
  p /= p.sum();
  double u = static_cast<double>(rng() >> 11) * 0x1p-53;
  double cum = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    cum += p(i);
    if (u < cum) return static_cast<int>(i);
  }
  return static_cast<int>(p.size()) - 1;
}

int argmax_row(const Eigen::RowVectorXd& lp) {
  int best = 0;
  for (Eigen::Index i = 1; i < lp.size(); ++i)
    if (lp(i) > lp(best)) best = static_cast<int>(i);
  return best;
}

}  // namespace

Sampled sample_rollout(const Checkpoint& ckpt, const Mat& patch_px,
                       const std::vector<int>& prompt, const SampleConfig& cfg) {
  if (cfg.temperature <= 0) throw ConfigError("sampling temperature must be positive");
  if (cfg.max_new <= 0) throw ConfigError("max_new must be positive");
  std::mt19937_64 rng(cfg.seed);
  std::vector<int> text = prompt;
  std::vector<int> response;
  for (int step = 0; step < cfg.max_new; ++step) {
    Mat lp = plain_logprobs(ckpt, patch_px, text);
    int tok = sample_from_logprob_row(lp.row(lp.rows() - 1), cfg.temperature, rng);
    response.push_back(tok);
    text.push_back(tok);
    if (tok == vocab::kEos) break;
  }
  Sampled s;
  s.trace = forward(ckpt, patch_px, prompt, response);
  s.response = std::move(response);
  s.logprobs.reserve(s.response.size());
  for (int j = 0; j < static_cast<int>(s.response.size()); ++j)
    s.logprobs.push_back(s.trace.response_logprob(j));
  return s;
}

std::vector<int> greedy_decode(const Checkpoint& ckpt, const Mat& patch_px,
                               const std::vector<int>& prompt, int max_new) {
  if (max_new <= 0) throw ConfigError("max_new must be positive");
  std::vector<int> text = prompt;
  std::vector<int> response;
  for (int step = 0; step < max_new; ++step) {
    Mat lp = plain_logprobs(ckpt, patch_px, text);
    int tok = argmax_row(lp.row(lp.rows() - 1));
    response.push_back(tok);
    text.push_back(tok);
    if (tok == vocab::kEos) break;
  }
  return response;
}

std::vector<double> response_logprobs(const Checkpoint& ckpt, const Mat& patch_px,
                                      const std::vector<int>& prompt,
                                      const std::vector<int>& response) {
  if (response.empty()) return {};
  ForwardTrace tr = forward(ckpt, patch_px, prompt, response);
  std::vector<double> out;
  out.reserve(response.size());
  for (int j = 0; j < static_cast<int>(response.size()); ++j)
    out.push_back(tr.response_logprob(j));
  return out;
}

GradResult model_grad(const Checkpoint& ckpt, const Mat& patch_px,
                      const std::vector<int>& prompt, const std::vector<int>& response,
                      const LossBuilder& build) {
  ad::Tape tape;
  TapeEngine eng{tape};
  std::vector<ad::Var> params;
  params.reserve(ckpt.params.size());
  for (const auto& [name, m] : ckpt.params) params.push_back(tape.leaf(m));
  auto core = transformer_core(eng, params, ckpt.config, patch_px, concat_text(prompt, response));
  TapedTrace tr;
  tr.layout = make_layout(ckpt.config, prompt, response);
  tr.layers = ckpt.config.layers;
  tr.heads = ckpt.config.heads;
  tr.logprobs = core.logprobs;
  tr.attention = std::move(core.attention);
  ad::Var root = build(tape, tr);
  tape.backward(root);
  GradResult res;
  res.value = tape.val(root)(0, 0);
  res.grads.reserve(ckpt.params.size());
  for (size_t i = 0; i < ckpt.params.size(); ++i)
    res.grads.emplace_back(ckpt.params[i].first, tape.grad(params[i]));
  return res;
}

}  // namespace gridvlm::vlm
