#pragma once

// Shared plumbing: error types, seeded RNG helpers, UTF-8 codepoint
// splitting, hashing and small file utilities.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cloze {

// ---------------------------------------------------------------------------
// Errors

struct UnknownCharError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NoConfusionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptyTextError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TooWideError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeMismatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct AllMaskedRowError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingGradError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TargetTooLongError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct AnswerTooLongError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct LengthMismatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InconsistentScriptError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct GeometryMismatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CheckpointCorruptError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// RNG. All randomness flows through mt19937_64 engines seeded via splitmix64
// mixing so that independent streams can be derived from (seed, purpose, id).

using Rng = std::mt19937_64;

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t hash_bytes(std::string_view s, uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;  // FNV-1a 64
  }
  return h;
}

inline uint64_t mix_seed(uint64_t seed, uint64_t salt) {
  return splitmix64(seed ^ splitmix64(salt));
}

inline uint64_t mix_seed(uint64_t seed, std::string_view tag, uint64_t salt = 0) {
  return splitmix64(mix_seed(seed, hash_bytes(tag)) ^ splitmix64(salt + 0x51ed2701));
}

inline Rng make_rng(uint64_t seed, std::string_view tag, uint64_t salt = 0) {
  return Rng(mix_seed(seed, tag, salt));
}

// Uniform helpers with explicit, library-independent draw logic.
inline int rand_int(Rng& rng, int lo, int hi) {  // inclusive range
  if (hi < lo) throw std::invalid_argument("rand_int: empty range");
  uint64_t span = uint64_t(hi) - uint64_t(lo) + 1;
  uint64_t limit = std::numeric_limits<uint64_t>::max() / span * span;
  uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return int(lo + int64_t(v % span));
}

inline double rand_uniform(Rng& rng, double lo = 0.0, double hi = 1.0) {
  double u = double(rng() >> 11) * 0x1.0p-53;  // [0,1)
  return lo + u * (hi - lo);
}

inline float rand_normal(Rng& rng) {
  // Box-Muller, stateless per call pair.
  double u1 = std::max(rand_uniform(rng), 1e-12);
  double u2 = rand_uniform(rng);
  return float(std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2));
}

// ---------------------------------------------------------------------------
// UTF-8

inline std::vector<std::string> utf8_split(std::string_view text) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < text.size()) {
    unsigned char c = text[i];
    size_t n = 1;
    if (c >= 0xF0)
      n = 4;
    else if (c >= 0xE0)
      n = 3;
    else if (c >= 0xC0)
      n = 2;
    else if (c >= 0x80)
      throw IoError("utf8_split: stray continuation byte at offset " + std::to_string(i));
    if (i + n > text.size()) throw IoError("utf8_split: truncated sequence at offset " + std::to_string(i));
    for (size_t k = 1; k < n; ++k)
      if ((text[i + k] & 0xC0) != 0x80)
        throw IoError("utf8_split: malformed sequence at offset " + std::to_string(i));
    out.emplace_back(text.substr(i, n));
    i += n;
  }
  return out;
}

inline std::string utf8_join(const std::vector<std::string>& cps) {
  std::string out;
  for (const auto& c : cps) out += c;
  return out;
}

// ---------------------------------------------------------------------------
// Files

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for read: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for write: " + path.string());
  out.write(content.data(), std::streamsize(content.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::string to_hex(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace cloze
