#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "gridvlm/autodiff.hpp"
#include "gridvlm/common.hpp"

namespace gridvlm::vlm {

using Mat = Eigen::MatrixXd;

struct ModelConfig {
  int vocab_size = 96;
  int dim = 64;
  int layers = 4;
  int heads = 4;
  int ffn_dim = 256;
  int max_seq = 80;
  int patch_count = 16;
  int patch_dim = 256;  // flattened pixels per patch
  double rms_eps = 1e-6;

  int head_dim() const { return dim / heads; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Named parameter list in a fixed order; the order is part of the on-disk
// format and of every gradient result.
struct Checkpoint {
  ModelConfig config;
  std::string stage = "init";  // init | anchored | reinforced
  std::string provenance;
  std::vector<std::pair<std::string, Mat>> params;

  const Mat& param(const std::string& name) const;
  Mat& param(const std::string& name);
};

std::vector<std::pair<std::string, std::pair<int, int>>> param_shapes(const ModelConfig& cfg);
Checkpoint init_checkpoint(const ModelConfig& cfg, uint64_t seed);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Position layout of one packed sequence: image patches, then the text
// prompt, then the response.
struct TokenLayout {
  int patch_count = 0;
  int prompt_len = 0;
  int response_len = 0;
  int focus_pos = -1;  // absolute position of the <focus> prompt token, -1 if absent

  int total() const { return patch_count + prompt_len + response_len; }
  int response_begin() const { return patch_count + prompt_len; }
};

// Cells (row, col) into the logprob matrix scoring each response token.
std::vector<std::pair<int, int>> response_cells(const TokenLayout& layout,
                                                const std::vector<int>& response);

struct ForwardTrace {
  TokenLayout layout;
  int layers = 0;
  int heads = 0;
  std::vector<int> prompt;
  std::vector<int> response;
  Mat logprobs;                // total() x vocab; row t scores the token at t+1
  std::vector<Mat> attention;  // layers*heads entries, each total() x total()

  double response_logprob(int j) const;
  double total_response_logprob() const;
  const Mat& attn(int layer, int head) const;
};

ForwardTrace forward(const Checkpoint& ckpt, const Mat& patch_px, const std::vector<int>& prompt,
                     const std::vector<int>& response);

struct SampleConfig {
  int max_new = 32;
  double temperature = 1.0;  // must be > 0
  uint64_t seed = 0;
};

struct Sampled {
  std::vector<int> response;
  std::vector<double> logprobs;  // per response token, taken from `trace`
  ForwardTrace trace;
};

// Temperature sampling; stops at <eos> or max_new. The returned trace and
// logprobs come from one full forward over the final sequence, so they match
// response_logprobs() of the same checkpoint exactly.
Sampled sample_rollout(const Checkpoint& ckpt, const Mat& patch_px,
                       const std::vector<int>& prompt, const SampleConfig& cfg);

std::vector<int> greedy_decode(const Checkpoint& ckpt, const Mat& patch_px,
                               const std::vector<int>& prompt, int max_new);

std::vector<double> response_logprobs(const Checkpoint& ckpt, const Mat& patch_px,
                                      const std::vector<int>& prompt,
                                      const std::vector<int>& response);

// Taped twin of ForwardTrace handed to loss builders.
struct TapedTrace {
  TokenLayout layout;
  int layers = 0;
  int heads = 0;
  ad::Var logprobs;
  std::vector<ad::Var> attention;

  ad::Var attn(int layer, int head) const {
    if (layer < 0 || layer >= layers || head < 0 || head >= heads)
      throw InputError("attention index out of range");
    return attention[static_cast<size_t>(layer * heads + head)];
  }
};

struct GradResult {
  double value = 0.0;
  std::vector<std::pair<std::string, Mat>> grads;  // parameter order
};

using LossBuilder = std::function<ad::Var(ad::Tape&, const TapedTrace&)>;

// Records one forward on a tape, lets `build` define a scalar root, and
// returns d(root)/d(params). The taped forward reuses the plain kernels, so
// values agree bit for bit with forward().
GradResult model_grad(const Checkpoint& ckpt, const Mat& patch_px,
                      const std::vector<int>& prompt, const std::vector<int>& response,
                      const LossBuilder& build);

}  // namespace gridvlm::vlm
