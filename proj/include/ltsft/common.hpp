// Shared plumbing: error taxonomy, stable hashing, counter-based RNG, little-endian byte I/O.
#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ltsft {

// ---------------------------------------------------------------- errors ---

// Error categories map 1:1 onto CLI exit codes (see tools/).
enum class Errc : int {
  internal = 1,
  usage = 2,        // bad flags / unknown command
  io = 3,           // missing or unreadable/unwritable file
  fingerprint = 4,  // artifact does not match the target architecture
  format = 5,       // corrupt or malformed artifact / data file
  config = 6,       // invalid configuration or budget
  numeric = 7,      // divergence / non-finite values
};

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  Errc code() const { return code_; }
  const char* code_name() const {
    switch (code_) {
      case Errc::usage: return "usage";
      case Errc::io: return "io";
      case Errc::fingerprint: return "fingerprint-mismatch";
      case Errc::format: return "format";
      case Errc::config: return "config";
      case Errc::numeric: return "numeric";
      default: return "internal";
    }
  }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& msg) { throw Error(code, msg); }

// ---------------------------------------------------------------- hashing ---

// FNV-1a 64-bit: the stable digest used for architecture fingerprints and
// payload integrity. Deterministic across platforms, trivially re-derivable.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const uint8_t*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), h);
}

inline std::string hex16(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf, 16);
}

inline bool parse_hex16(std::string_view s, uint64_t& out) {
  if (s.size() != 16) return false;
  uint64_t v = 0;
  for (char c : s) {
    int d;
    if (c >= '0' && c <= '9') d = c - '0';
    else if (c >= 'a' && c <= 'f') d = c - 'a' + 10;
    else return false;
    v = (v << 4) | static_cast<uint64_t>(d);
  }
  out = v;
  return true;
}

// ------------------------------------------------------------------- rng ---

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Order-free key derivation: fold integers and strings into a 64-bit key.
// Used to key dropout noise, data shuffles, init streams, etc. by
// (seed, step, site-name) style tuples.
inline uint64_t mix_key(uint64_t h, uint64_t v) { return splitmix64(h ^ v); }
inline uint64_t mix_key(uint64_t h, std::string_view s) { return splitmix64(h ^ fnv1a64(s)); }

template <typename... Parts>
uint64_t derive_key(uint64_t seed, Parts... parts) {
  uint64_t h = splitmix64(seed);
  ((h = mix_key(h, parts)), ...);
  return h;
}

// Counter-based element hash: value for element i under a derived key.
// Stateless, so noise is replayable and independent of evaluation order.
inline uint64_t element_hash(uint64_t key, uint64_t i) {
  return splitmix64(key ^ (i * 0xff51afd7ed558ccdull + 0x2545f4914f6cdd1dull));
}

inline double unit_from_bits(uint64_t bits) {
  // 53 high bits -> [0, 1)
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

inline double element_unit(uint64_t key, uint64_t i) { return unit_from_bits(element_hash(key, i)); }

// Sequential deterministic generator (splitmix64 stream). Self-contained so
// results do not depend on the standard library's distribution internals.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() { return splitmix64(state_++); }
  double next_unit() { return unit_from_bits(next_u64()); }

  // Unbiased integer in [0, n) via rejection.
  uint64_t next_below(uint64_t n) {
    if (n == 0) fail(Errc::internal, "next_below(0)");
    uint64_t mask = ~0ull >> std::countl_zero(n | 1);
    for (;;) {
      uint64_t v = next_u64() & mask;
      if (v < n) return v;
    }
  }

  // Standard normal via Box-Muller (no cached spare: keeps draws per call
  // count deterministic and position-independent).
  double next_normal() {
    double u1 = next_unit();
    double u2 = next_unit();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
};

// --------------------------------------------------------------- byte io ---

class ByteWriter {
 public:
  void put_u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void put_f32(float v) { put_u32(std::bit_cast<uint32_t>(v)); }
  void put_u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void put_f64(double v) { put_u64(std::bit_cast<uint64_t>(v)); }
  void put_bytes(const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void put_str(std::string_view s) { put_bytes(s.data(), s.size()); }
  const std::vector<uint8_t>& bytes() const { return buf_; }
  std::vector<uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const uint8_t* data, size_t n) : p_(data), n_(n) {}
  explicit ByteReader(const std::vector<uint8_t>& b) : ByteReader(b.data(), b.size()) {}

  uint32_t get_u32() {
    require(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p_[pos_ + static_cast<size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float get_f32() { return std::bit_cast<float>(get_u32()); }
  uint64_t get_u64() {
    require(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p_[pos_ + static_cast<size_t>(i)]) << (8 * i);
    pos_ += 8;
    return v;
  }
  double get_f64() { return std::bit_cast<double>(get_u64()); }
  std::string get_str(size_t n) {
    require(n);
    std::string s(reinterpret_cast<const char*>(p_ + pos_), n);
    pos_ += n;
    return s;
  }
  size_t remaining() const { return n_ - pos_; }
  bool at_end() const { return pos_ == n_; }

 private:
  void require(size_t n) {
    if (n_ - pos_ < n) fail(Errc::format, "truncated payload");
  }
  const uint8_t* p_;
  size_t n_;
  size_t pos_ = 0;
};

}  // namespace ltsft
