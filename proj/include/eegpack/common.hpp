#pragma once
// Shared plumbing: error types, deterministic RNG, content hashing, CSV helpers.

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace eegpack {

// Error taxonomy used by the CLI to map failures to distinct exit codes.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};
struct DataError : std::runtime_error {
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// ---------------------------------------------------------------------------
// Deterministic RNG.
//
// std::mt19937_64 is fully specified by the standard; the distribution
// classes are not. All sampling goes through the transforms below so a fixed
// seed yields identical streams on every platform.
// ---------------------------------------------------------------------------
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * (1.0 / 9007199254740992.0);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Rejection sampling, no modulo bias.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = engine_();
    while (v >= limit) v = engine_();
    return v % n;
  }

  // Standard normal via Box-Muller (polar form avoided to keep the
  // consumption of engine values data-independent).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // Fisher-Yates; deterministic unlike std::shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derive an independent child stream (used for per-restart / per-worker
  // seeding so parallel order cannot change results).
  std::uint64_t fork(std::uint64_t stream_id) {
    std::uint64_t x = base_mix_ + 0x9E3779B97F4A7C15ULL * (stream_id + 1);
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBULL;
    x ^= x >> 31;
    return x;
  }

  void set_base_mix(std::uint64_t seed) { base_mix_ = seed; }

 private:
  std::mt19937_64 engine_;
  std::uint64_t base_mix_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

inline Rng make_rng(std::uint64_t seed) {
  Rng r(seed);
  r.set_base_mix(seed);
  return r;
}

// ---------------------------------------------------------------------------
// Content hashing (FNV-1a 64). Used for checkpoint integrity, dataset audit
// trails and report provenance fields.
// ---------------------------------------------------------------------------
class Fnv1a64 {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001B3ULL;
    }
  }
  void update(const std::string& s) { update(s.data(), s.size()); }
  std::uint64_t digest() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xCBF29CE484222325ULL;
};

std::string hash_bytes_hex(const void* data, std::size_t n);
std::string hash_file_hex(const std::filesystem::path& path);
// Hash of a whole dataset container: manifest.json plus every split blob and
// label file, in sorted name order.
std::string hash_container_hex(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// CSV helpers. Quoting is not needed for any file this toolkit emits; fields
// are validated to be comma-free on write.
// ---------------------------------------------------------------------------
std::vector<std::string> split_csv_line(const std::string& line);
std::string csv_escape_check(const std::string& field);

// Doubles formatted so that parse(format(x)) == x.
std::string format_double(double v);

// Filesystem helpers.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& content);
void write_binary_file(const std::filesystem::path& path, const void* data, std::size_t n);
std::vector<unsigned char> read_binary_file(const std::filesystem::path& path);

}  // namespace eegpack
