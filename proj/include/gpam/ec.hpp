#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "gpam/bigint.hpp"
#include "gpam/errors.hpp"

namespace gpam::ec {

// Affine point on a short Weierstrass curve. The identity is an explicit
// tagged value, never a magic coordinate.
struct Point {
  bool infinity = true;
  BigInt x, y;

  static Point identity() { return Point{}; }
  static Point affine(BigInt px, BigInt py) { return Point{false, std::move(px), std::move(py)}; }

  bool operator==(const Point& o) const {
    if (infinity || o.infinity) return infinity == o.infinity;
    return x == o.x && y == o.y;
  }
};

struct CurveParams {
  BigInt p;  // field prime
  BigInt a, b;
  Point g;   // base point
  BigInt n;  // order of g
  std::string name;

  size_t scalar_bytes() const { return (bit_length(n) + 7) / 8; }
};

inline bool on_curve(const Point& pt, const CurveParams& c) {
  if (pt.infinity) return true;
  const BigInt lhs = mod(pt.y * pt.y, c.p);
  const BigInt rhs = mod(pt.x * pt.x * pt.x + c.a * pt.x + c.b, c.p);
  return lhs == rhs;
}

inline Point point_neg(const Point& p, const CurveParams& c) {
  if (p.infinity) return p;
  return Point::affine(p.x, mod(-p.y, c.p));
}

inline Point point_add(const Point& p, const Point& q, const CurveParams& c) {
  if (p.infinity) return q;
  if (q.infinity) return p;
  if (p.x == q.x) {
    if (mod(p.y + q.y, c.p) == 0) return Point::identity();
    // doubling
    if (p.y == 0) return Point::identity();
    const BigInt lam = mod((3 * p.x * p.x + c.a) * mod_inv(2 * p.y, c.p), c.p);
    const BigInt x3 = mod(lam * lam - 2 * p.x, c.p);
    const BigInt y3 = mod(lam * (p.x - x3) - p.y, c.p);
    return Point::affine(x3, y3);
  }
  const BigInt lam = mod((q.y - p.y) * mod_inv(q.x - p.x, c.p), c.p);
  const BigInt x3 = mod(lam * lam - p.x - q.x, c.p);
  const BigInt y3 = mod(lam * (p.x - x3) - p.y, c.p);
  return Point::affine(x3, y3);
}

// Double-and-add; not constant time (leakage is simulated elsewhere, the
// arithmetic itself is not a side-channel target).
inline Point scalar_mul(const BigInt& k, const Point& pt, const CurveParams& c) {
  if (!on_curve(pt, c)) throw PointNotOnCurve();
  if (k < 0) throw ConfigError("scalar_mul: negative scalar");
  Point acc = Point::identity();
  Point base = pt;
  BigInt e = k;
  while (e > 0) {
    if (mpz_odd_p(e.get_mpz_t())) acc = point_add(acc, base, c);
    base = point_add(base, base, c);
    e >>= 1;
  }
  return acc;
}

struct Signature {
  BigInt r, s, h;
};

struct KeyPair {
  BigInt d;
  Point q;
};

inline KeyPair make_keypair(const BigInt& d, const CurveParams& c) {
  return KeyPair{d, scalar_mul(d, c.g, c)};
}

// (r, s) from nonce k: r = (k*G).x mod n, s = k^-1 (h + r d) mod n.
// Throws DegenerateNonce when r or s is zero; callers resample k.
inline Signature ecdsa_sign(const BigInt& h, const BigInt& d, const BigInt& k,
                            const CurveParams& c) {
  if (k < 1 || k >= c.n) throw ConfigError("ecdsa_sign: nonce out of range");
  const Point kg = scalar_mul(k, c.g, c);
  const BigInt r = mod(kg.x, c.n);
  if (r == 0) throw DegenerateNonce("ecdsa_sign: r = 0");
  const BigInt s = mod(mod_inv(k, c.n) * (h + r * d), c.n);
  if (s == 0) throw DegenerateNonce("ecdsa_sign: s = 0");
  return Signature{r, s, mod(h, c.n)};
}

inline bool ecdsa_verify(const Signature& sig, const Point& q, const CurveParams& c) {
  if (!on_curve(q, c) || q.infinity) return false;
  if (sig.r < 1 || sig.r >= c.n || sig.s < 1 || sig.s >= c.n) return false;
  BigInt w;
  try {
    w = mod_inv(sig.s, c.n);
  } catch (const NonInvertible&) {
    return false;
  }
  const BigInt u1 = mod(sig.h * w, c.n);
  const BigInt u2 = mod(sig.r * w, c.n);
  const Point pt = point_add(scalar_mul(u1, c.g, c), scalar_mul(u2, q, c), c);
  if (pt.infinity) return false;
  return mod(pt.x, c.n) == sig.r;
}

// d = r^-1 (s k - h) mod n.
inline BigInt recover_priv_from_nonce(const Signature& sig, const BigInt& k,
                                      const CurveParams& c) {
  return mod(mod_inv(sig.r, c.n) * (sig.s * k - sig.h), c.n);
}

// Built-in curves ------------------------------------------------------------

// Tiny curve y^2 = x^3 + 2x + 2 over F_17, G = (5,1), |G| = 19. Small enough
// to enumerate the whole group in tests.
inline CurveParams toy_curve() {
  CurveParams c;
  c.p = 17;
  c.a = 2;
  c.b = 2;
  c.g = Point::affine(5, 1);
  c.n = 19;
  c.name = "toy17";
  return c;
}

inline CurveParams p256_curve() {
  CurveParams c;
  c.p = parse_bigint("0xffffffff00000001000000000000000000000000ffffffffffffffffffffffff");
  c.a = parse_bigint("0xffffffff00000001000000000000000000000000fffffffffffffffffffffffc");
  c.b = parse_bigint("0x5ac635d8aa3a93e7b3ebbd55769886bc651d06b0cc53b0f63bce3c3e27d2604b");
  c.g = Point::affine(
      parse_bigint("0x6b17d1f2e12c4247f8bce6e563a440f277037d812deb33a0f4a13945d898c296"),
      parse_bigint("0x4fe342e2fe1a7f9b8ee7eb4a7c0f9e162bce33576b315ececbb6406837bf51f5"));
  c.n = parse_bigint("0xffffffff00000000ffffffffffffffffbce6faada7179e84f3b9cac2fc632551");
  c.name = "p256";
  return c;
}

inline void validate_curve(const CurveParams& c) {
  if (mod(4 * c.a * c.a * c.a + 27 * c.b * c.b, c.p) == 0)
    throw ConfigError("curve is singular: 4a^3 + 27b^2 = 0 mod p");
  if (!on_curve(c.g, c)) throw ConfigError("base point not on curve");
  if (!scalar_mul(c.n, c.g, c).infinity)
    throw ConfigError("n * G is not the identity");
}

// key=value text config with decimal or 0x-hex fields p,a,b,gx,gy,n.
// '#' starts a comment.
inline CurveParams load_curve_config(std::istream& in, const std::string& name = "custom") {
  std::map<std::string, BigInt> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (!key.empty() && !val.empty()) kv[key] = parse_bigint(val);
  }
  for (const char* field : {"p", "a", "b", "gx", "gy", "n"})
    if (!kv.count(field)) throw ConfigError(std::string("curve config missing field: ") + field);
  CurveParams c;
  c.p = kv["p"];
  c.a = mod(kv["a"], c.p);
  c.b = mod(kv["b"], c.p);
  c.g = Point::affine(kv["gx"], kv["gy"]);
  c.n = kv["n"];
  c.name = name;
  validate_curve(c);
  return c;
}

inline CurveParams load_curve_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open curve config: " + path);
  return load_curve_config(in, path);
}

// Resolves "toy17", "p256", or a path to a curve config file.
inline CurveParams resolve_curve(const std::string& spec) {
  if (spec == "toy17") return toy_curve();
  if (spec == "p256") return p256_curve();
  return load_curve_file(spec);
}

}  // namespace gpam::ec
