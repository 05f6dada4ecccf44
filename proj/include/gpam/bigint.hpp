#pragma once

#include <gmpxx.h>

#include <cstdint>
#include <string>
#include <vector>

#include "gpam/errors.hpp"
#include "gpam/rng.hpp"

namespace gpam {

using BigInt = mpz_class;

// Canonical residue in [0, m).
inline BigInt mod(const BigInt& x, const BigInt& m) {
  BigInt r;
  mpz_mod(r.get_mpz_t(), x.get_mpz_t(), m.get_mpz_t());
  return r;
}

// Modular inverse; throws NonInvertible when gcd(x, m) != 1.
inline BigInt mod_inv(const BigInt& x, const BigInt& m) {
  if (m < 2) throw NonInvertible("mod_inv: modulus must be >= 2");
  BigInt r;
  if (mpz_invert(r.get_mpz_t(), x.get_mpz_t(), m.get_mpz_t()) == 0)
    throw NonInvertible("mod_inv: gcd(x, m) != 1");
  return r;
}

inline size_t bit_length(const BigInt& x) {
  if (x == 0) return 0;
  return mpz_sizeinbase(x.get_mpz_t(), 2);
}

// Fixed-width big-endian serialization; byte 0 is the most significant byte.
inline std::vector<uint8_t> to_bytes_be(const BigInt& x, size_t width) {
  std::vector<uint8_t> out(width, 0);
  BigInt v = x;
  for (size_t i = 0; i < width && v != 0; ++i) {
    out[width - 1 - i] = uint8_t(mpz_get_ui(v.get_mpz_t()) & 0xff);
    v >>= 8;
  }
  return out;
}

inline BigInt from_bytes_be(const uint8_t* data, size_t len) {
  BigInt v = 0;
  for (size_t i = 0; i < len; ++i) {
    v <<= 8;
    v += data[i];
  }
  return v;
}

inline BigInt from_bytes_be(const std::vector<uint8_t>& bytes) {
  return from_bytes_be(bytes.data(), bytes.size());
}

namespace detail {
inline BigInt from_u64(uint64_t x) {
  BigInt hi(uint32_t(x >> 32));
  hi <<= 32;
  return hi + BigInt(uint32_t(x & 0xffffffffu));
}
}  // namespace detail

// Integer in [0, 2^bits), each bit i.i.d. uniform, deterministic per rng state.
inline BigInt random_bits(size_t bits, Rng& rng) {
  BigInt v = 0;
  size_t remaining = bits;
  while (remaining >= 64) {
    v <<= 64;
    v += detail::from_u64(rng.next_u64());
    remaining -= 64;
  }
  if (remaining > 0) {
    const uint64_t x = rng.next_u64() & ((1ULL << remaining) - 1);
    v <<= remaining;
    v += detail::from_u64(x);
  }
  return v;
}

// Uniform in [0, bound) by rejection over random_bits.
inline BigInt random_below(const BigInt& bound, Rng& rng) {
  const size_t bits = bit_length(bound);
  BigInt v;
  do {
    v = random_bits(bits, rng);
  } while (v >= bound);
  return v;
}

// Parses decimal or 0x-prefixed hex, with optional leading '-'.
inline BigInt parse_bigint(const std::string& s) {
  std::string t = s;
  bool neg = false;
  if (!t.empty() && t[0] == '-') {
    neg = true;
    t = t.substr(1);
  }
  BigInt v;
  int rc;
  if (t.rfind("0x", 0) == 0 || t.rfind("0X", 0) == 0)
    rc = mpz_set_str(v.get_mpz_t(), t.substr(2).c_str(), 16);
  else
    rc = mpz_set_str(v.get_mpz_t(), t.c_str(), 10);
  if (rc != 0) throw ConfigError("cannot parse integer: " + s);
  return neg ? BigInt(-v) : v;
}

inline std::string to_hex(const BigInt& x) {
  return "0x" + x.get_str(16);
}

}  // namespace gpam
