#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "gpam/bigint.hpp"
#include "gpam/ec.hpp"
#include "gpam/errors.hpp"
#include "gpam/gf256.hpp"
#include "gpam/rng.hpp"

namespace gpam::masking {

enum class Scheme { CM0, CM1, CM2, CM3, AscadV2Sim };

inline const char* scheme_name(Scheme s) {
  switch (s) {
    case Scheme::CM0: return "cm0";
    case Scheme::CM1: return "cm1";
    case Scheme::CM2: return "cm2";
    case Scheme::CM3: return "cm3";
    case Scheme::AscadV2Sim: return "ascadv2-sim";
  }
  return "?";
}

inline Scheme parse_scheme(const std::string& s) {
  if (s == "cm0") return Scheme::CM0;
  if (s == "cm1") return Scheme::CM1;
  if (s == "cm2") return Scheme::CM2;
  if (s == "cm3") return Scheme::CM3;
  if (s == "ascadv2-sim") return Scheme::AscadV2Sim;
  throw ConfigError("unknown scheme: " + s);
}

// k <- delta_L(bits): integer in [0, 2^bits) with i.i.d. uniform bits.
inline BigInt random_scalar(size_t bits, Rng& rng) {
  if (bits == 0) throw ConfigError("random_scalar: bits must be > 0");
  return random_bits(bits, rng);
}

// One masked scalar-multiplication schedule: the named intermediate values
// (masks included) plus their fixed-width big-endian byte views. Byte 0 of a
// view is the most significant byte.
struct EccMaskTrace {
  Scheme scheme = Scheme::CM0;
  BigInt k;
  std::map<std::string, BigInt> masks;
  std::vector<std::pair<std::string, BigInt>> intermediates;  // ordered
  std::map<std::string, std::vector<uint8_t>> byte_views;

  const BigInt& value(const std::string& name) const {
    for (const auto& [n, v] : intermediates)
      if (n == name) return v;
    throw ConfigError("no intermediate named " + name);
  }
};

namespace detail {
inline void add_view(EccMaskTrace& t, const std::string& name, const BigInt& v,
                     size_t width) {
  t.intermediates.emplace_back(name, v);
  t.byte_views[name] = to_bytes_be(v, width);
}
}  // namespace detail

// CM0: constant-time execution only, the secret scalar itself is the on-chip
// operand.
inline EccMaskTrace cm0_schedule(const BigInt& k, size_t scalar_bytes) {
  EccMaskTrace t;
  t.scheme = Scheme::CM0;
  t.k = k;
  detail::add_view(t, "k", k, scalar_bytes);
  return t;
}

// CM1 additive masking: km = (k - r) mod n.
inline EccMaskTrace cm1_schedule(const BigInt& k, const BigInt& r, const BigInt& n,
                                 size_t scalar_bytes) {
  EccMaskTrace t;
  t.scheme = Scheme::CM1;
  t.k = k;
  t.masks["r"] = r;
  detail::add_view(t, "k", k, scalar_bytes);
  detail::add_view(t, "km", mod(k - r, n), scalar_bytes);
  detail::add_view(t, "r", r, scalar_bytes);
  return t;
}

inline EccMaskTrace cm1_schedule(const BigInt& k, const BigInt& r,
                                 const ec::CurveParams& curve) {
  return cm1_schedule(k, r, curve.n, curve.scalar_bytes());
}

// CM2 multiplicative (Euclidean) masking: km = floor(k / r), rem = k mod r.
inline EccMaskTrace cm2_schedule(const BigInt& k, const BigInt& r, size_t scalar_bytes) {
  if (r == 0) throw ZeroMask("cm2: r = 0");
  EccMaskTrace t;
  t.scheme = Scheme::CM2;
  t.k = k;
  t.masks["r"] = r;
  const size_t half = scalar_bytes / 2;
  detail::add_view(t, "k", k, scalar_bytes);
  detail::add_view(t, "km", k / r, scalar_bytes);
  detail::add_view(t, "rem", k % r, half);
  detail::add_view(t, "r", r, half);
  return t;
}

// CM3 = CM1 with both shares split again by CM2:
//   km1 = (k - r1) mod n, km2 = floor(km1/r2), rem2 = km1 mod r2,
//   km3 = floor(r1/r3),   rem3 = r1 mod r3.
inline EccMaskTrace cm3_schedule(const BigInt& k, const BigInt& r1, const BigInt& r2,
                                 const BigInt& r3, const BigInt& n, size_t scalar_bytes) {
  if (r2 == 0 || r3 == 0) throw ZeroMask("cm3: inner mask = 0");
  EccMaskTrace t;
  t.scheme = Scheme::CM3;
  t.k = k;
  t.masks["r1"] = r1;
  t.masks["r2"] = r2;
  t.masks["r3"] = r3;
  const size_t half = scalar_bytes / 2;
  const BigInt km1 = mod(k - r1, n);
  detail::add_view(t, "k", k, scalar_bytes);
  detail::add_view(t, "km1", km1, scalar_bytes);
  detail::add_view(t, "km2", km1 / r2, scalar_bytes);
  detail::add_view(t, "rem2", km1 % r2, half);
  detail::add_view(t, "km3", r1 / r3, scalar_bytes);
  detail::add_view(t, "rem3", r1 % r3, half);
  detail::add_view(t, "r1", r1, scalar_bytes);
  detail::add_view(t, "r2", r2, half);
  detail::add_view(t, "r3", r3, half);
  return t;
}

inline EccMaskTrace cm3_schedule(const BigInt& k, const BigInt& r1, const BigInt& r2,
                                 const BigInt& r3, const ec::CurveParams& curve) {
  return cm3_schedule(k, r1, r2, r3, curve.n, curve.scalar_bytes());
}

// Affine-masked, shuffled AES S-box state:
//   c[i] = r_m * Sbox[pt[p[i]] ^ k[p[i]]] ^ r_out   (GF(2^8) arithmetic)
struct AesMaskState {
  std::array<uint8_t, 16> key{};
  std::array<uint8_t, 16> pt{};
  uint8_t r_m = 1;    // multiplicative mask, never 0
  uint8_t r_out = 0;  // additive output mask
  std::array<uint8_t, 16> perm{};  // bijection on 0..15
  std::array<uint8_t, 16> c{};     // filled by ascadv2_intermediates
};

inline std::array<uint8_t, 16> ascadv2_intermediates(AesMaskState& state) {
  if (state.r_m == 0) throw InvalidMask("ascadv2: r_m = 0");
  {
    std::array<bool, 16> seen{};
    for (uint8_t p : state.perm) {
      if (p >= 16 || seen[p]) throw InvalidMask("ascadv2: perm is not a bijection");
      seen[p] = true;
    }
  }
  for (int i = 0; i < 16; ++i) {
    const int j = state.perm[i];
    const uint8_t sb = gf256::sbox(uint8_t(state.pt[j] ^ state.key[j]));
    state.c[i] = uint8_t(gf256::mul(state.r_m, sb) ^ state.r_out);
  }
  return state.c;
}

inline AesMaskState sample_aes_state(Rng& rng, bool shuffle) {
  AesMaskState st;
  for (auto& b : st.key) b = rng.byte();
  for (auto& b : st.pt) b = rng.byte();
  st.r_m = uint8_t(1 + rng.below(255));  // uniform over 1..255
  st.r_out = rng.byte();
  for (int i = 0; i < 16; ++i) st.perm[i] = uint8_t(i);
  if (shuffle) rng.shuffle(st.perm);
  ascadv2_intermediates(st);
  return st;
}

// Largest prime below 2^bits; the scalar-arithmetic modulus for desk-scale
// runs where scalar_bytes is smaller than any built-in curve.
inline BigInt largest_prime_below_pow2(size_t bits) {
  BigInt c = (BigInt(1) << bits) - 1;
  while (mpz_probab_prime_p(c.get_mpz_t(), 40) == 0) c -= 2;
  return c;
}

}  // namespace gpam::masking
