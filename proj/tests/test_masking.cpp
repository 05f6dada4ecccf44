#include "gpam/masking.hpp"

#include <gtest/gtest.h>

#include "gpam/gf256.hpp"

using namespace gpam;
using namespace gpam::masking;

namespace {

// Peasant (shift-and-xor) GF(2^8) multiplication: the independent oracle for
// the table-based implementation.
uint8_t peasant_mul(uint8_t a, uint8_t b) {
  uint8_t p = 0;
  for (int i = 0; i < 8; ++i) {
    if (b & 1) p ^= a;
    const bool hi = a & 0x80;
    a = uint8_t(a << 1);
    if (hi) a ^= 0x1B;
    b >>= 1;
  }
  return p;
}

uint8_t gf_inv_scan(uint8_t x) {
  if (x == 0) return 0;
  for (int y = 1; y < 256; ++y)
    if (peasant_mul(x, uint8_t(y)) == 1) return uint8_t(y);
  return 0;
}

uint8_t rotl8(uint8_t x, int n) { return uint8_t((x << n) | (x >> (8 - n))); }

// S-box oracle: GF inverse followed by the affine transform.
uint8_t sbox_oracle(uint8_t x) {
  const uint8_t s = gf_inv_scan(x);
  return uint8_t(s ^ rotl8(s, 1) ^ rotl8(s, 2) ^ rotl8(s, 3) ^ rotl8(s, 4) ^ 0x63);
}

const BigInt kMod = largest_prime_below_pow2(32);

}  // namespace

TEST(RandomScalar, UniformBit) {
  Rng rng(42);
  int64_t ones = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) ones += int(random_scalar(1, rng).get_ui());
  EXPECT_NEAR(double(ones) / n, 0.5, 0.02);
}

TEST(RandomScalar, RangeAndReproducibility) {
  Rng a(7), b(7);
  const BigInt x = random_scalar(256, a);
  EXPECT_LT(x, BigInt(1) << 256);
  EXPECT_GE(x, 0);
  EXPECT_EQ(x, random_scalar(256, b));
  Rng c(8);
  EXPECT_NE(x, random_scalar(256, c));
}

TEST(Cm1, EdgeCases) {
  const BigInt k = parse_bigint("0xdeadbeef");
  EXPECT_EQ(cm1_schedule(k, 0, kMod, 4).value("km"), k);
  EXPECT_EQ(cm1_schedule(k, k, kMod, 4).value("km"), 0);
}

TEST(Cm1, AdditiveIdentity) {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const BigInt k = random_scalar(32, rng);
    const BigInt r = random_scalar(32, rng);
    const auto t = cm1_schedule(k, r, kMod, 4);
    EXPECT_EQ(mod(t.value("km") + r, kMod), mod(k, kMod));
  }
}

TEST(Cm2, EdgeCases) {
  const BigInt k = parse_bigint("0x01020304");
  const auto t1 = cm2_schedule(k, 1, 4);
  EXPECT_EQ(t1.value("km"), k);
  EXPECT_EQ(t1.value("rem"), 0);
  const auto t2 = cm2_schedule(5, 1000, 4);
  EXPECT_EQ(t2.value("km"), 0);
  EXPECT_EQ(t2.value("rem"), 5);
  EXPECT_THROW(cm2_schedule(k, 0, 4), ZeroMask);
}

TEST(Cm2, EuclideanIdentity) {
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const BigInt k = random_scalar(32, rng);
    BigInt r;
    do {
      r = random_scalar(16, rng);
    } while (r == 0);
    const auto t = cm2_schedule(k, r, 4);
    EXPECT_EQ(t.value("km") * r + t.value("rem"), k);
    EXPECT_GE(t.value("rem"), 0);
    EXPECT_LT(t.value("rem"), r);
  }
}

TEST(Cm3, EdgeCases) {
  const BigInt k = parse_bigint("0x0badcafe");
  const auto t = cm3_schedule(k, 0, 1, 1, kMod, 4);
  EXPECT_EQ(t.value("km1"), k);
  EXPECT_EQ(t.value("km2"), k);
  EXPECT_EQ(t.value("rem2"), 0);
  EXPECT_EQ(t.value("km3"), 0);
  EXPECT_EQ(t.value("rem3"), 0);
  EXPECT_THROW(cm3_schedule(k, 0, 0, 1, kMod, 4), ZeroMask);
}

TEST(Cm3, ReconstructionIdentities) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const BigInt k = random_scalar(32, rng);
    const BigInt r1 = random_scalar(32, rng);
    BigInt r2, r3;
    do {
      r2 = random_scalar(16, rng);
    } while (r2 == 0);
    do {
      r3 = random_scalar(16, rng);
    } while (r3 == 0);
    const auto t = cm3_schedule(k, r1, r2, r3, kMod, 4);
    EXPECT_EQ(t.value("km2") * r2 + t.value("rem2"), t.value("km1"));
    EXPECT_EQ(t.value("km3") * r3 + t.value("rem3"), r1);
    EXPECT_EQ(mod(t.value("km1") + r1, kMod), mod(k, kMod));
    // full reconstruction from the leaking shares only
    const BigInt rebuilt =
        t.value("km2") * r2 + t.value("rem2") + t.value("km3") * r3 + t.value("rem3");
    EXPECT_EQ(mod(rebuilt, kMod), mod(k, kMod));
  }
}

TEST(ByteViews, RoundTripToIntegers) {
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const BigInt k = random_scalar(32, rng);
    const BigInt r1 = random_scalar(32, rng);
    const auto t = cm3_schedule(k, r1, 7, 9, kMod, 4);
    for (const auto& [name, value] : t.intermediates)
      EXPECT_EQ(from_bytes_be(t.byte_views.at(name)), value) << name;
  }
  // byte 0 is the most significant byte
  const auto t = cm0_schedule(parse_bigint("0x01020304"), 4);
  EXPECT_EQ(t.byte_views.at("k")[0], 0x01);
  EXPECT_EQ(t.byte_views.at("k")[3], 0x04);
}

TEST(Gf256, MulBasics) {
  for (int a = 0; a < 256; ++a) {
    EXPECT_EQ(gf256::mul(uint8_t(a), 0x01), a);
    EXPECT_EQ(gf256::mul(uint8_t(a), 0x00), 0);
  }
  EXPECT_EQ(peasant_mul(0x53, 0xCA), 0x01);  // oracle confirms inverse pair
  EXPECT_EQ(gf256::mul(0x53, 0xCA), 0x01);
}

TEST(Gf256, MatchesPeasantOracle) {
  for (int a = 0; a < 256; a += 3)
    for (int b = 0; b < 256; b += 5)
      EXPECT_EQ(gf256::mul(uint8_t(a), uint8_t(b)), peasant_mul(uint8_t(a), uint8_t(b)));
}

TEST(Gf256, FieldProperties) {
  Rng rng(5);
  for (int i = 0; i < 500; ++i) {
    const uint8_t a = rng.byte(), b = rng.byte(), c = rng.byte();
    EXPECT_EQ(gf256::mul(a, b), gf256::mul(b, a));
    EXPECT_EQ(gf256::mul(a, gf256::mul(b, c)), gf256::mul(gf256::mul(a, b), c));
    EXPECT_EQ(gf256::mul(a, uint8_t(b ^ c)),
              uint8_t(gf256::mul(a, b) ^ gf256::mul(a, c)));
  }
  for (int a = 1; a < 256; ++a)
    EXPECT_EQ(gf256::mul(uint8_t(a), gf256::inv(uint8_t(a))), 1);
}

TEST(AesSbox, MatchesInverseAffineOracle) {
  EXPECT_EQ(sbox_oracle(0x00), 0x63);
  EXPECT_EQ(gf256::sbox(0x00), 0x63);
  for (int x = 0; x < 256; ++x) EXPECT_EQ(gf256::sbox(uint8_t(x)), sbox_oracle(uint8_t(x)));
}

TEST(AesSbox, BijectiveAndInvertible) {
  std::array<bool, 256> seen{};
  for (int x = 0; x < 256; ++x) {
    const uint8_t y = gf256::sbox(uint8_t(x));
    EXPECT_FALSE(seen[y]);
    seen[y] = true;
    EXPECT_EQ(gf256::sbox(gf256::sbox_inv(y)), y);
  }
}

TEST(Ascadv2, IdentityMasks) {
  AesMaskState st;
  Rng rng(6);
  for (auto& b : st.key) b = rng.byte();
  for (auto& b : st.pt) b = rng.byte();
  st.r_m = 1;
  st.r_out = 0;
  for (int i = 0; i < 16; ++i) st.perm[i] = uint8_t(i);
  ascadv2_intermediates(st);
  for (int i = 0; i < 16; ++i)
    EXPECT_EQ(st.c[i], gf256::sbox(uint8_t(st.pt[i] ^ st.key[i])));
}

TEST(Ascadv2, AdditiveMaskInverts) {
  Rng rng(7);
  auto st = sample_aes_state(rng, true);
  AesMaskState bare = st;
  bare.r_out = 0;
  ascadv2_intermediates(bare);
  for (int i = 0; i < 16; ++i) EXPECT_EQ(uint8_t(st.c[i] ^ st.r_out), bare.c[i]);
}

TEST(Ascadv2, UnmaskingRecoversSboxOutput) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const auto st = sample_aes_state(rng, true);
    for (int i = 0; i < 16; ++i) {
      const uint8_t recovered =
          gf256::mul(uint8_t(st.c[i] ^ st.r_out), gf256::inv(st.r_m));
      EXPECT_EQ(recovered, gf256::sbox(uint8_t(st.pt[st.perm[i]] ^ st.key[st.perm[i]])));
    }
  }
}

TEST(Ascadv2, RejectsBadState) {
  Rng rng(9);
  auto st = sample_aes_state(rng, false);
  st.r_m = 0;
  EXPECT_THROW(ascadv2_intermediates(st), InvalidMask);
  st.r_m = 1;
  st.perm[0] = st.perm[1];
  EXPECT_THROW(ascadv2_intermediates(st), InvalidMask);
}

TEST(Ascadv2, SampledMasksValid) {
  Rng rng(10);
  for (int i = 0; i < 300; ++i) {
    const auto st = sample_aes_state(rng, true);
    EXPECT_NE(st.r_m, 0);
    std::array<bool, 16> seen{};
    for (uint8_t p : st.perm) {
      EXPECT_LT(p, 16);
      EXPECT_FALSE(seen[p]);
      seen[p] = true;
    }
  }
}

TEST(DeskModulus, LargestPrimeBelow32Bits) {
  EXPECT_EQ(largest_prime_below_pow2(32), BigInt("4294967291"));
}
