#pragma once

#include <gmpxx.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <vector>

#include "gpam/bigint.hpp"
#include "gpam/ec.hpp"
#include "gpam/errors.hpp"
#include "gpam/metrics.hpp"
#include "gpam/rng.hpp"

namespace gpam::lattice {

struct IntMatrix {
  int rows = 0, cols = 0;
  std::vector<BigInt> a;

  IntMatrix() = default;
  IntMatrix(int r, int c) : rows(r), cols(c), a(size_t(r) * size_t(c)) {}

  BigInt& at(int r, int c) { return a[size_t(r) * size_t(cols) + size_t(c)]; }
  const BigInt& at(int r, int c) const { return a[size_t(r) * size_t(cols) + size_t(c)]; }

  static IntMatrix identity(int n) {
    IntMatrix m(n, n);
    for (int i = 0; i < n; ++i) m.at(i, i) = 1;
    return m;
  }
};

// Exact determinant by Bareiss fraction-free elimination.
inline BigInt det_bareiss(IntMatrix m) {
  if (m.rows != m.cols) throw ShapeMismatch("det of non-square matrix");
  const int n = m.rows;
  if (n == 0) return 1;
  BigInt prev = 1;
  int sign = 1;
  for (int k = 0; k < n - 1; ++k) {
    if (m.at(k, k) == 0) {
      int piv = -1;
      for (int i = k + 1; i < n; ++i)
        if (m.at(i, k) != 0) {
          piv = i;
          break;
        }
      if (piv < 0) return 0;
      for (int j = 0; j < n; ++j) std::swap(m.at(k, j), m.at(piv, j));
      sign = -sign;
    }
    for (int i = k + 1; i < n; ++i)
      for (int j = k + 1; j < n; ++j) {
        BigInt t = m.at(i, j) * m.at(k, k) - m.at(i, k) * m.at(k, j);
        mpz_divexact(t.get_mpz_t(), t.get_mpz_t(), prev.get_mpz_t());
        m.at(i, j) = t;
      }
    prev = m.at(k, k);
  }
  return sign > 0 ? m.at(n - 1, n - 1) : BigInt(-m.at(n - 1, n - 1));
}

namespace detail {

// delta as an exact fraction; 0.99 -> 99/100.
inline std::pair<long, long> delta_fraction(double delta) {
  if (!(delta > 0.25 && delta < 1.0)) throw ConfigError("LLL delta must be in (1/4, 1)");
  const long den = 1000000;
  const long num = std::lround(delta * double(den));
  const long g = std::gcd(num, den);
  return {num / g, den / g};
}

}  // namespace detail

namespace detail {

// x as m * 2^e with m in [0.5, 1); exact enough to steer deep insertions.
inline long double scaled_to_ld(const BigInt& x, long bias_exp) {
  long e = 0;
  const double m = mpz_get_d_2exp(&e, x.get_mpz_t());
  return ldexpl((long double)m, e + bias_exp);
}

}  // namespace detail

// Integral LLL (de Weger variant): exact integer arithmetic throughout, no
// floating point in the basis updates. Input rows must be linearly
// independent. Returns a basis of the same lattice that is size-reduced and
// delta-Lovasz reduced. `deep` > 0 additionally applies depth-limited deep
// insertions (quality of the reduction improves; the output still satisfies
// the plain LLL conditions). Insertions are cascades of exact adjacent swaps,
// steered by extended-precision estimates of the projected norms.
inline IntMatrix lll_reduce(const IntMatrix& basis, double delta = 0.99, int deep = 0) {
  const int n = basis.rows;
  const int cols = basis.cols;
  if (n == 0) return basis;
  const auto [dp, dq] = detail::delta_fraction(delta);
  IntMatrix b = basis;

  std::vector<BigInt> D(size_t(n) + 1);
  D[0] = 1;
  std::vector<std::vector<BigInt>> lam(static_cast<size_t>(n));
  for (auto& row : lam) row.resize(static_cast<size_t>(n));

  BigInt t1, t2;  // scratch
  auto row_dot = [&](int r1, int r2) {
    BigInt acc = 0;
    for (int c = 0; c < cols; ++c)
      mpz_addmul(acc.get_mpz_t(), b.at(r1, c).get_mpz_t(), b.at(r2, c).get_mpz_t());
    return acc;
  };

  // Incremental Gram-Schmidt bookkeeping for row k.
  auto gs_row = [&](int k) {
    for (int j = 0; j <= k; ++j) {
      BigInt u = row_dot(k, j);
      for (int i = 0; i < j; ++i) {
        // u = (D[i+1]*u - lam[k][i]*lam[j][i]) / D[i]
        mpz_mul(t1.get_mpz_t(), D[size_t(i) + 1].get_mpz_t(), u.get_mpz_t());
        mpz_mul(t2.get_mpz_t(), lam[size_t(k)][size_t(i)].get_mpz_t(),
                lam[size_t(j)][size_t(i)].get_mpz_t());
        mpz_sub(t1.get_mpz_t(), t1.get_mpz_t(), t2.get_mpz_t());
        mpz_divexact(u.get_mpz_t(), t1.get_mpz_t(), D[size_t(i)].get_mpz_t());
      }
      if (j < k)
        lam[size_t(k)][size_t(j)] = u;
      else {
        if (u <= 0) throw RankDeficient("lll_reduce: rows are linearly dependent");
        D[size_t(k) + 1] = u;
      }
    }
  };

  // RED(k, l): make |lam[k][l]| <= D[l+1]/2.
  auto red = [&](int k, int l) {
    // q = nearest integer to lam[k][l] / D[l+1]
    mpz_mul_2exp(t1.get_mpz_t(), lam[size_t(k)][size_t(l)].get_mpz_t(), 1);
    mpz_abs(t2.get_mpz_t(), t1.get_mpz_t());
    if (mpz_cmp(t2.get_mpz_t(), D[size_t(l) + 1].get_mpz_t()) <= 0) return;
    mpz_add(t1.get_mpz_t(), t1.get_mpz_t(), D[size_t(l) + 1].get_mpz_t());
    BigInt q;
    mpz_mul_2exp(t2.get_mpz_t(), D[size_t(l) + 1].get_mpz_t(), 1);
    mpz_fdiv_q(q.get_mpz_t(), t1.get_mpz_t(), t2.get_mpz_t());
    for (int c = 0; c < cols; ++c)
      mpz_submul(b.at(k, c).get_mpz_t(), q.get_mpz_t(), b.at(l, c).get_mpz_t());
    mpz_submul(lam[size_t(k)][size_t(l)].get_mpz_t(), q.get_mpz_t(),
               D[size_t(l) + 1].get_mpz_t());
    for (int i = 0; i < l; ++i)
      mpz_submul(lam[size_t(k)][size_t(i)].get_mpz_t(), q.get_mpz_t(),
                 lam[size_t(l)][size_t(i)].get_mpz_t());
  };

  // SWAP(k): exchange rows k and k-1, updating the integral GS bookkeeping.
  auto do_swap = [&](int k, int kmax) {
    for (int c = 0; c < cols; ++c) std::swap(b.at(k, c), b.at(k - 1, c));
    for (int j = 0; j < k - 1; ++j)
      std::swap(lam[size_t(k)][size_t(j)], lam[size_t(k) - 1][size_t(j)]);
    const BigInt lambda = lam[size_t(k)][size_t(k) - 1];
    // Bnew = (D[k-1]*D[k+1] + lambda^2) / D[k]
    BigInt Bnew;
    mpz_mul(t1.get_mpz_t(), D[size_t(k) - 1].get_mpz_t(), D[size_t(k) + 1].get_mpz_t());
    mpz_addmul(t1.get_mpz_t(), lambda.get_mpz_t(), lambda.get_mpz_t());
    mpz_divexact(Bnew.get_mpz_t(), t1.get_mpz_t(), D[size_t(k)].get_mpz_t());
    for (int i = k + 1; i <= kmax; ++i) {
      BigInt& lik = lam[size_t(i)][size_t(k)];
      BigInt& likm1 = lam[size_t(i)][size_t(k) - 1];
      const BigInt t = lik;
      // lam[i][k] = (D[k+1]*lam[i][k-1] - lambda*t) / D[k]
      mpz_mul(t1.get_mpz_t(), D[size_t(k) + 1].get_mpz_t(), likm1.get_mpz_t());
      mpz_submul(t1.get_mpz_t(), lambda.get_mpz_t(), t.get_mpz_t());
      mpz_divexact(lik.get_mpz_t(), t1.get_mpz_t(), D[size_t(k)].get_mpz_t());
      // lam[i][k-1] = (Bnew*t + lambda*lam[i][k]) / D[k+1]
      mpz_mul(t1.get_mpz_t(), Bnew.get_mpz_t(), t.get_mpz_t());
      mpz_addmul(t1.get_mpz_t(), lambda.get_mpz_t(), lik.get_mpz_t());
      mpz_divexact(likm1.get_mpz_t(), t1.get_mpz_t(), D[size_t(k) + 1].get_mpz_t());
    }
    D[size_t(k)] = Bnew;
  };

  // Lovasz test at position k: dq*D[k+1]*D[k-1] >= dp*D[k]^2 - dq*lam[k][k-1]^2
  auto lovasz_ok = [&](int k) {
    mpz_mul(t1.get_mpz_t(), D[size_t(k) + 1].get_mpz_t(), D[size_t(k) - 1].get_mpz_t());
    mpz_mul_si(t1.get_mpz_t(), t1.get_mpz_t(), dq);
    mpz_mul(t2.get_mpz_t(), lam[size_t(k)][size_t(k) - 1].get_mpz_t(),
            lam[size_t(k)][size_t(k) - 1].get_mpz_t());
    mpz_mul_si(t2.get_mpz_t(), t2.get_mpz_t(), dq);
    mpz_add(t1.get_mpz_t(), t1.get_mpz_t(), t2.get_mpz_t());
    mpz_mul(t2.get_mpz_t(), D[size_t(k)].get_mpz_t(), D[size_t(k)].get_mpz_t());
    mpz_mul_si(t2.get_mpz_t(), t2.get_mpz_t(), dp);
    return mpz_cmp(t1.get_mpz_t(), t2.get_mpz_t()) >= 0;
  };

  int kmax = 0;
  gs_row(0);
  int k = 1;
  if (deep <= 0) {
    while (k < n) {
      if (k > kmax) {
        kmax = k;
        gs_row(k);
      }
      red(k, k - 1);
      if (!lovasz_ok(k)) {
        do_swap(k, kmax);
        k = std::max(1, k - 1);
      } else {
        for (int l = k - 2; l >= 0; --l) red(k, l);
        ++k;
      }
    }
    return b;
  }

  // Deep-insertion variant.
  const long double delta_ld = (long double)dp / (long double)dq;
  while (k < n) {
    if (k > kmax) {
      kmax = k;
      gs_row(k);
    }
    for (int l = k - 1; l >= 0; --l) red(k, l);
    // ||b_k||^2, then walk i upward subtracting mu_{k,i}^2 ||b*_i||^2; insert
    // at the first i (within `deep` of k) where the remaining projection beats
    // delta * ||b*_i||^2.
    long double proj = detail::scaled_to_ld(row_dot(k, k), 0);
    int insert_at = -1;
    for (int i = 0; i < k; ++i) {
      long de = 0, d1e = 0, d0e = 0;
      const double dm = mpz_get_d_2exp(&d1e, D[size_t(i) + 1].get_mpz_t());
      const double d0 = mpz_get_d_2exp(&d0e, D[size_t(i)].get_mpz_t());
      const long double bstar_i = ldexpl((long double)(dm / d0), d1e - d0e);
      if (i >= k - deep && proj < delta_ld * bstar_i) {
        insert_at = i;
        break;
      }
      const double lm = mpz_get_d_2exp(&de, lam[size_t(k)][size_t(i)].get_mpz_t());
      const long double mu_term =
          ldexpl((long double)(lm * lm / (dm * d0)), 2 * de - d1e - d0e);
      proj -= mu_term;
    }
    if (insert_at >= 0) {
      for (int j = k; j > insert_at; --j) do_swap(j, kmax);
      k = std::max(1, insert_at);
    } else {
      ++k;
    }
  }
  // A deep pass can leave earlier rows unreduced against later insertions;
  // finish with the plain pass (cheap, already near-reduced).
  for (k = 1; k < n; ++k)
    for (int l = k - 1; l >= 0; --l) red(k, l);
  for (k = 1; k < n;) {
    if (!lovasz_ok(k)) {
      do_swap(k, kmax);
      k = std::max(1, k - 1);
    } else {
      for (int l = k - 2; l >= 0; --l) red(k, l);
      ++k;
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Exact a-posteriori verification (independent of the reduction bookkeeping):
// recomputes Gram-Schmidt with rationals from scratch.

struct GramSchmidt {
  std::vector<std::vector<mpq_class>> mu;     // mu[i][j], j < i
  std::vector<mpq_class> norm2;               // ||b*_i||^2
};

inline GramSchmidt exact_gram_schmidt(const IntMatrix& b) {
  const int n = b.rows, cols = b.cols;
  GramSchmidt gs;
  gs.mu.assign(size_t(n), std::vector<mpq_class>(size_t(n), 0));
  gs.norm2.assign(size_t(n), 0);
  std::vector<std::vector<mpq_class>> bstar(static_cast<size_t>(n), std::vector<mpq_class>(static_cast<size_t>(cols)));
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < cols; ++c) bstar[size_t(i)][size_t(c)] = mpq_class(b.at(i, c));
    for (int j = 0; j < i; ++j) {
      mpq_class dot = 0;
      for (int c = 0; c < cols; ++c) dot += mpq_class(b.at(i, c)) * bstar[size_t(j)][size_t(c)];
      if (gs.norm2[size_t(j)] == 0) throw RankDeficient("exact_gram_schmidt: dependent rows");
      gs.mu[size_t(i)][size_t(j)] = dot / gs.norm2[size_t(j)];
      for (int c = 0; c < cols; ++c)
        bstar[size_t(i)][size_t(c)] -= gs.mu[size_t(i)][size_t(j)] * bstar[size_t(j)][size_t(c)];
    }
    mpq_class nn = 0;
    for (int c = 0; c < cols; ++c) nn += bstar[size_t(i)][size_t(c)] * bstar[size_t(i)][size_t(c)];
    gs.norm2[size_t(i)] = nn;
  }
  return gs;
}

inline bool is_size_reduced(const IntMatrix& b) {
  const auto gs = exact_gram_schmidt(b);
  const mpq_class half(1, 2);
  for (int i = 0; i < b.rows; ++i)
    for (int j = 0; j < i; ++j)
      if (abs(gs.mu[size_t(i)][size_t(j)]) > half) return false;
  return true;
}

inline bool is_lll_reduced(const IntMatrix& b, double delta = 0.99) {
  const auto [dp, dq] = detail::delta_fraction(delta);
  const mpq_class d(dp, dq);
  const auto gs = exact_gram_schmidt(b);
  const mpq_class half(1, 2);
  for (int i = 0; i < b.rows; ++i)
    for (int j = 0; j < i; ++j)
      if (abs(gs.mu[size_t(i)][size_t(j)]) > half) return false;
  for (int i = 1; i < b.rows; ++i) {
    const mpq_class lhs = gs.norm2[size_t(i)];
    const mpq_class rhs =
        (d - gs.mu[size_t(i)][size_t(i) - 1] * gs.mu[size_t(i)][size_t(i) - 1]) *
        gs.norm2[size_t(i) - 1];
    if (lhs < rhs) return false;
  }
  return true;
}

// True when square bases A and B generate the same lattice: B = U*A with U
// integral and |det U| = 1. Exact rational solve; intended for small dims.
inline bool spans_same_lattice(const IntMatrix& A, const IntMatrix& B) {
  if (A.rows != B.rows || A.cols != B.cols || A.rows != A.cols) return false;
  const int n = A.rows;
  // Solve X * A = B  =>  A^T X^T = B^T; Gaussian elimination over mpq.
  std::vector<std::vector<mpq_class>> m(static_cast<size_t>(n), std::vector<mpq_class>(static_cast<size_t>(2 * n)));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) m[size_t(i)][size_t(j)] = mpq_class(A.at(j, i));  // A^T
    for (int j = 0; j < n; ++j) m[size_t(i)][size_t(n + j)] = mpq_class(B.at(j, i));  // B^T
  }
  for (int col = 0; col < n; ++col) {
    int piv = -1;
    for (int r = col; r < n; ++r)
      if (m[size_t(r)][size_t(col)] != 0) {
        piv = r;
        break;
      }
    if (piv < 0) return false;
    std::swap(m[size_t(col)], m[size_t(piv)]);
    const mpq_class inv = 1 / m[size_t(col)][size_t(col)];
    for (int c = col; c < 2 * n; ++c) m[size_t(col)][size_t(c)] *= inv;
    for (int r = 0; r < n; ++r) {
      if (r == col || m[size_t(r)][size_t(col)] == 0) continue;
      const mpq_class f = m[size_t(r)][size_t(col)];
      for (int c = col; c < 2 * n; ++c)
        m[size_t(r)][size_t(c)] -= f * m[size_t(col)][size_t(c)];
    }
  }
  IntMatrix U(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      mpq_class v = m[size_t(i)][size_t(n + j)];  // X^T[i][j] = U[j][i]
      v.canonicalize();
      if (v.get_den() != 1) return false;
      U.at(j, i) = v.get_num();
    }
  const BigInt det = det_bareiss(U);
  return det == 1 || det == -1;
}

// ---------------------------------------------------------------------------
// Hidden number problem from ECDSA signatures with known nonce MSBs.

struct SignatureRecord {
  BigInt h, r, s;
  // Simulation-only ground truth; never read by the attack itself.
  BigInt true_k;
  // Model output: 256-way distribution over the most significant nonce byte.
  std::vector<double> msb_probs;
};

struct HnpInstance {
  BigInt n;
  std::vector<std::pair<BigInt, BigInt>> tu;  // e_i = t_i*d + u_i (mod n), |e_i| <= bound
  BigInt bound;                               // 2^(lambda-1) after recentering
  int known_msb_bits = 4;
};

// k_i = a_i*2^lambda + e_i with lambda = ||n|| - l. Recentering by 2^(lambda-1)
// halves the bound: t_i = s^-1 r, u_i = s^-1 h - a_i 2^lambda - 2^(lambda-1).
inline HnpInstance hnp_from_signatures(const std::vector<SignatureRecord>& sigs,
                                       const std::vector<uint32_t>& msb_guess,
                                       const BigInt& n, int known_bits = 4) {
  if (sigs.size() != msb_guess.size())
    throw ConfigError("hnp_from_signatures: guess count mismatch");
  const int lambda = int(bit_length(n)) - known_bits;
  HnpInstance inst;
  inst.n = n;
  inst.known_msb_bits = known_bits;
  inst.bound = BigInt(1) << (lambda - 1);
  const BigInt shift = BigInt(1) << lambda;
  for (size_t i = 0; i < sigs.size(); ++i) {
    const auto& sig = sigs[i];
    const BigInt sinv = mod_inv(sig.s, n);  // throws NonInvertible
    const BigInt t = mod(sinv * sig.r, n);
    const BigInt u = mod(sinv * sig.h - msb_guess[i] * shift - inst.bound, n);
    inst.tu.emplace_back(t, u);
  }
  return inst;
}

// (m+2) x (m+2) basis, rows: [2B*n*e_i] for i<m; (2B*t_0..t_{m-1}, 1, 0);
// (2B*u_0..u_{m-1}, 0, 2B*n). A correct guess makes (2B*e_0', ..., d, 2B*n)
// a short lattice vector whose coordinate m is the private key.
inline IntMatrix hnp_lattice(const HnpInstance& inst) {
  const int m = int(inst.tu.size());
  if (m < 2) throw TooFewPairs("hnp_lattice needs at least 2 pairs");
  const BigInt twoB = inst.bound * 2;
  IntMatrix L(m + 2, m + 2);
  for (int i = 0; i < m; ++i) L.at(i, i) = twoB * inst.n;
  for (int i = 0; i < m; ++i) L.at(m, i) = twoB * inst.tu[size_t(i)].first;
  L.at(m, m) = 1;
  for (int i = 0; i < m; ++i) L.at(m + 1, i) = twoB * inst.tu[size_t(i)].second;
  L.at(m + 1, m + 1) = twoB * inst.n;
  return L;
}

using ReduceFn = std::function<IntMatrix(const IntMatrix&)>;

// Candidate private keys read from coordinate m of every reduced row, both
// signs (the short vector's sign is arbitrary).
inline std::vector<BigInt> hnp_candidates(const IntMatrix& reduced, const BigInt& n) {
  const int m = reduced.rows - 2;
  std::vector<BigInt> out;
  for (int r = 0; r < reduced.rows; ++r) {
    const BigInt c = mod(reduced.at(r, m), n);
    if (c != 0) {
      out.push_back(c);
      out.push_back(n - c);
    }
  }
  return out;
}

struct AttackParams {
  int m = 80;                     // signatures per lattice
  double weight_exp = 1.0;        // confidence weighting exponent
  std::optional<double> max_conf; // discard records more confident than this
  int max_retries = 100;
  uint64_t seed = 1;
  double delta = 0.99;
  int known_bits = 4;
};

struct AttackResult {
  bool success = false;
  BigInt d;
  int retries_used = 0;
  std::vector<double> sampled_confidence_mean;  // one entry per retry
};

using Verifier = std::function<bool(const BigInt&)>;

// Checks a candidate against a signature: recompute the nonce it implies and
// confirm the signed point's x-coordinate reproduces r.
inline bool ecdsa_candidate_ok(const BigInt& cand, const SignatureRecord& sig,
                               const ec::CurveParams& curve) {
  if (cand <= 1 || cand >= curve.n - 1) return false;
  const BigInt k = mod(mod_inv(sig.s, curve.n) * (sig.h + sig.r * cand), curve.n);
  if (k == 0) return false;
  const auto pt = ec::scalar_mul(k, curve.g, curve);
  return !pt.infinity && mod(pt.x, curve.n) == sig.r;
}

// Weighted sampling without replacement by sequential renormalization.
inline std::vector<size_t> weighted_sample(const std::vector<double>& weights, int m,
                                           Rng& rng) {
  std::vector<size_t> chosen;
  std::vector<double> w = weights;
  double total = 0;
  for (double x : w) total += x;
  for (int pick = 0; pick < m; ++pick) {
    size_t idx = 0;
    if (total <= 0) {
      // all remaining weights zero: fall back to uniform over the unchosen
      std::vector<size_t> left;
      for (size_t i = 0; i < w.size(); ++i)
        if (w[i] >= 0) left.push_back(i);
      idx = left[size_t(rng.below(left.size()))];
    } else {
      double x = rng.uniform01() * total;
      idx = w.size() - 1;
      for (size_t i = 0; i < w.size(); ++i) {
        if (w[i] < 0) continue;
        if (x < w[i]) {
          idx = i;
          break;
        }
        x -= w[i];
      }
      while (w[idx] < 0) --idx;  // numeric tail guard
    }
    chosen.push_back(idx);
    total -= std::max(w[idx], 0.0);
    w[idx] = -1;  // mark taken
  }
  return chosen;
}

// Full prediction-to-key pipeline: 4-MSB aggregation, confidence filtering,
// confidence-weighted sampling, lattice reduction, candidate verification,
// retry loop.
inline AttackResult attack_ecdsa(const std::vector<SignatureRecord>& records,
                                 const ec::CurveParams& curve, const AttackParams& params,
                                 Verifier verifier = {}, ReduceFn reduce = {}) {
  if (int(records.size()) < params.m)
    throw TooFewRecords("attack needs at least m records");
  if (!verifier)
    verifier = [&records, &curve](const BigInt& cand) {
      return ecdsa_candidate_ok(cand, records[0], curve) &&
             ecdsa_candidate_ok(cand, records[records.size() / 2], curve);
    };
  if (!reduce)
    reduce = [&params](const IntMatrix& m) { return lll_reduce(m, params.delta); };

  // Aggregate byte predictions into 4-MSB guesses with confidences.
  struct Guess {
    uint32_t msb;
    double conf;
  };
  std::vector<Guess> guesses(records.size());
  std::vector<size_t> usable;
  for (size_t i = 0; i < records.size(); ++i) {
    const auto agg = metrics::msb4_aggregate(records[i].msb_probs);
    size_t best = 0, second = 1;
    if (agg[1] > agg[0]) std::swap(best, second);
    for (size_t c = 2; c < agg.size(); ++c) {
      if (agg[c] > agg[best]) {
        second = best;
        best = c;
      } else if (agg[c] > agg[second]) {
        second = c;
      }
    }
    guesses[i] = {uint32_t(best), agg[best] - agg[second]};
    if (!params.max_conf || guesses[i].conf <= *params.max_conf) usable.push_back(i);
  }
  if (int(usable.size()) < params.m)
    throw TooFewRecords("confidence filter left fewer than m records");

  std::vector<double> weights(usable.size());
  for (size_t j = 0; j < usable.size(); ++j)
    weights[j] = std::pow(guesses[usable[j]].conf, params.weight_exp);

  AttackResult result;
  for (int retry = 0; retry < params.max_retries; ++retry) {
    Rng rng(mix_seed(params.seed, uint64_t(retry)));
    const auto picks = weighted_sample(weights, params.m, rng);
    std::vector<SignatureRecord> sample;
    std::vector<uint32_t> msbs;
    double conf_sum = 0;
    for (size_t j : picks) {
      sample.push_back(records[usable[j]]);
      msbs.push_back(guesses[usable[j]].msb);
      conf_sum += guesses[usable[j]].conf;
    }
    result.sampled_confidence_mean.push_back(conf_sum / double(params.m));
    result.retries_used = retry + 1;

    const auto inst = hnp_from_signatures(sample, msbs, curve.n, params.known_bits);
    const auto reduced = reduce(hnp_lattice(inst));
    for (const auto& cand : hnp_candidates(reduced, curve.n)) {
      if (verifier(cand)) {
        result.success = true;
        result.d = cand;
        return result;
      }
    }
  }
  return result;
}

}  // namespace gpam::lattice
