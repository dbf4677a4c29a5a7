#include "gridvlm/common.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

namespace gridvlm {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

uint64_t mix_seed(uint64_t seed, std::initializer_list<uint64_t> tags) {
  uint64_t h = splitmix64(seed);
  for (uint64_t t : tags) h = splitmix64(h ^ t);
  return h;
}

namespace {
uint64_t hash_tag(const std::string& tag) {
  // FNV-1a, enough to separate short ASCII tags.
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}
}  // namespace

uint64_t mix_seed(uint64_t seed, const std::string& tag) {
  return mix_seed(seed, {hash_tag(tag)});
}
uint64_t mix_seed(uint64_t seed, const std::string& tag, uint64_t a) {
  return mix_seed(seed, {hash_tag(tag), a});
}
uint64_t mix_seed(uint64_t seed, const std::string& tag, uint64_t a, uint64_t b) {
  return mix_seed(seed, {hash_tag(tag), a, b});
}
uint64_t mix_seed(uint64_t seed, const std::string& tag, uint64_t a, uint64_t b, uint64_t c) {
  return mix_seed(seed, {hash_tag(tag), a, b, c});
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  auto parent = path.parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ArtifactError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ArtifactError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  if (workers <= 1 || n == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  int k = std::min(workers, n);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(k));
  std::vector<std::exception_ptr> errs(static_cast<size_t>(k));
  for (int w = 0; w < k; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += k) fn(i);
      } catch (...) {
        errs[static_cast<size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errs) {
    if (e) std::rethrow_exception(e);
  }
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace gridvlm
