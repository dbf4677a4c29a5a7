#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace gridvlm {

// Stamped into every artifact next to the config hash and seed.
inline constexpr const char* kCodeVersion = "gridvlm-0.1.0";

// Bad or inconsistent configuration, caught before any work starts.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input data (corpus lines, checkpoints, CLI values).
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A required artifact is missing or stale.
struct ArtifactError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite numbers or divergence detected mid-run.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// splitmix64 step; the standard finalizer, good avalanche for seed derivation.
uint64_t splitmix64(uint64_t x);

// Mixes a base seed with a stream of tags so that every consumer of
// randomness draws from its own independent stream.
uint64_t mix_seed(uint64_t seed, std::initializer_list<uint64_t> tags);
uint64_t mix_seed(uint64_t seed, const std::string& tag);
uint64_t mix_seed(uint64_t seed, const std::string& tag, uint64_t a);
uint64_t mix_seed(uint64_t seed, const std::string& tag, uint64_t a, uint64_t b);
uint64_t mix_seed(uint64_t seed, const std::string& tag, uint64_t a, uint64_t b, uint64_t c);

std::string sha256_hex(const std::string& bytes);

std::string read_text_file(const std::filesystem::path& path);
// Writes to a sibling temp file, then renames over the target.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

std::vector<std::string> read_lines(const std::filesystem::path& path);

// Runs fn(i) for i in [0, n). workers <= 1 runs inline; otherwise indices are
// striped across threads. fn must only touch per-index state.
void parallel_for(int n, int workers, const std::function<void(int)>& fn);

std::string format_double(double v);

}  // namespace gridvlm
