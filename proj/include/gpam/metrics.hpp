#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gpam/errors.hpp"
#include "gpam/gf256.hpp"
#include "gpam/parallel.hpp"
#include "gpam/rng.hpp"

namespace gpam::metrics {

// Softmax output for one byte-valued attack point: non-negative, sums to 1.
using ProbVector = std::vector<double>;

// Rank with deterministic tie-breaking: candidates with strictly greater
// probability, plus equal-probability candidates of lower byte value.
inline int rank_strict(const ProbVector& probs, int true_value) {
  const double p = probs[size_t(true_value)];
  int rank = 0;
  for (size_t c = 0; c < probs.size(); ++c) {
    if (probs[c] > p) ++rank;
    else if (probs[c] == p && int(c) < true_value) ++rank;
  }
  return rank;
}

// Tie-midpoint rank: greater + equal/2. A uniform predictor scores 127.5.
inline double rank_midpoint(const ProbVector& probs, int true_value) {
  const double p = probs[size_t(true_value)];
  int greater = 0, equal = 0;
  for (size_t c = 0; c < probs.size(); ++c) {
    if (probs[c] > p) ++greater;
    else if (probs[c] == p && int(c) != true_value) ++equal;
  }
  return double(greater) + double(equal) / 2.0;
}

// Margin confidence: highest minus second-highest probability.
inline double confidence(const ProbVector& probs) {
  double best = -1, second = -1;
  for (double p : probs) {
    if (p > best) {
      second = best;
      best = p;
    } else if (p > second) {
      second = p;
    }
  }
  return best - second;
}

struct PredictionSet {
  // per example: head name -> ProbVector, head name -> true byte
  std::vector<std::map<std::string, ProbVector>> probs;
  std::vector<std::map<std::string, uint8_t>> labels;
};

struct MetricsSummary {
  double accuracy = 0;
  double mean_rank = 0;  // tie-midpoint
  double max_rank = 0;   // tie-midpoint
};

inline MetricsSummary metrics_summary(const PredictionSet& preds, const std::string& head) {
  if (preds.probs.empty()) throw EmptySet("metrics_summary on empty prediction set");
  MetricsSummary out;
  double sum = 0;
  for (size_t i = 0; i < preds.probs.size(); ++i) {
    const auto& p = preds.probs[i].at(head);
    const int label = preds.labels[i].at(head);
    if (rank_strict(p, label) == 0) out.accuracy += 1;
    const double r = rank_midpoint(p, label);
    sum += r;
    out.max_rank = std::max(out.max_rank, r);
  }
  out.accuracy /= double(preds.probs.size());
  out.mean_rank = sum / double(preds.probs.size());
  return out;
}

// Sums probabilities of the 16 byte values sharing the same 4 MSBs.
inline ProbVector msb4_aggregate(const ProbVector& probs) {
  if (probs.size() != 256) throw ShapeMismatch("msb4_aggregate expects 256 entries");
  ProbVector out(16, 0.0);
  for (int m = 0; m < 16; ++m)
    for (int l = 0; l < 16; ++l) out[size_t(m)] += probs[size_t(16 * m + l)];
  return out;
}

// XOR-convolution of two share distributions: P[s=b] = sum_i P[x=b^i] P[y=i].
inline ProbVector combine_shares_xor(const ProbVector& px, const ProbVector& py) {
  const size_t n = px.size();
  if (py.size() != n || n == 0 || (n & (n - 1)) != 0)
    throw ShapeMismatch("combine_shares_xor needs equal power-of-two lengths");
  ProbVector out(n, 0.0);
  for (size_t b = 0; b < n; ++b) {
    double acc = 0;
    for (size_t i = 0; i < n; ++i) acc += px[b ^ i] * py[i];
    out[b] = acc;
  }
  return out;
}

// Maximum-likelihood score vector: summed logs, probabilities clamped to
// >= 1e-40 so a single zero cannot veto a candidate.
inline std::vector<double> ml_accumulate(const std::vector<ProbVector>& prob_list,
                                         double clamp = 1e-40) {
  if (prob_list.empty()) throw EmptyList("ml_accumulate of empty list");
  std::vector<double> score(prob_list[0].size(), 0.0);
  for (const auto& p : prob_list) {
    if (p.size() != score.size()) throw ShapeMismatch("ml_accumulate size mismatch");
    for (size_t c = 0; c < p.size(); ++c) score[c] += std::log(std::max(p[c], clamp));
  }
  return score;
}

inline int score_rank(const std::vector<double>& score, int true_value) {
  int rank = 0;
  for (size_t c = 0; c < score.size(); ++c)
    if (score[c] > score[size_t(true_value)]) ++rank;
  return rank;
}

struct GeCurve {
  std::vector<int> counts;
  std::vector<double> ge;
};

namespace detail {

template <class Fn>
inline void for_each_subset(int n, int c, Fn&& fn) {
  std::vector<int> idx(static_cast<size_t>(c));
  for (int i = 0; i < c; ++i) idx[size_t(i)] = i;
  for (;;) {
    fn(idx);
    int i = c - 1;
    while (i >= 0 && idx[size_t(i)] == n - c + i) --i;
    if (i < 0) break;
    ++idx[size_t(i)];
    for (int j = i + 1; j < c; ++j) idx[size_t(j)] = idx[size_t(j - 1)] + 1;
  }
}

}  // namespace detail

// Guessing entropy: expected rank of the true value after maximum-likelihood
// accumulation over subsets of attack traces. n_samples random subsets per
// count (n_samples == 0 enumerates every subset exactly).
inline GeCurve guessing_entropy(const std::vector<ProbVector>& pool, int true_value,
                                const std::vector<int>& counts, int n_samples,
                                uint64_t seed = 1) {
  GeCurve out;
  out.counts = counts;
  out.ge.assign(counts.size(), 0.0);
  const int n = int(pool.size());
  for (size_t ci = 0; ci < counts.size(); ++ci) {
    const int c = counts[ci];
    if (c < 1 || c > n) throw PoolTooSmall("guessing_entropy: count exceeds pool");
    if (n_samples == 0) {
      int64_t total = 0;
      double sum = 0;
      detail::for_each_subset(n, c, [&](const std::vector<int>& idx) {
        std::vector<ProbVector> subset;
        subset.reserve(size_t(c));
        for (int i : idx) subset.push_back(pool[size_t(i)]);
        sum += double(score_rank(ml_accumulate(subset), true_value));
        ++total;
      });
      out.ge[ci] = sum / double(total);
    } else {
      std::vector<double> ranks(static_cast<size_t>(n_samples));
      parallel_for(n_samples, [&](int64_t lo, int64_t hi) {
        for (int64_t s = lo; s < hi; ++s) {
          Rng rng(mix_seed(seed, uint64_t(ci), uint64_t(s)));
          // partial Fisher-Yates draw of c distinct indices
          std::vector<int> idx(static_cast<size_t>(n));
          for (int i = 0; i < n; ++i) idx[size_t(i)] = i;
          std::vector<ProbVector> subset;
          subset.reserve(size_t(c));
          for (int i = 0; i < c; ++i) {
            const int j = i + int(rng.below(uint64_t(n - i)));
            std::swap(idx[size_t(i)], idx[size_t(j)]);
            subset.push_back(pool[size_t(idx[size_t(i)])]);
          }
          ranks[size_t(s)] = double(score_rank(ml_accumulate(subset), true_value));
        }
      });
      double sum = 0;
      for (double r : ranks) sum += r;
      out.ge[ci] = sum / double(n_samples);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Affine-masked S-box share combination (the per-trace attack step feeding
// guessing_entropy for the AES scenario).

// P[sbox_out] from the predicted c and r_out distributions and a concrete
// multiplicative mask value (used directly since its head saturates).
inline ProbVector sbox_output_distribution(const ProbVector& pc, const ProbVector& prout,
                                           uint8_t rm) {
  if (rm == 0) throw InvalidMask("sbox_output_distribution: rm = 0");
  const ProbVector q = combine_shares_xor(pc, prout);  // distribution of c ^ rout
  ProbVector out(256);
  for (int b = 0; b < 256; ++b) out[size_t(b)] = q[gf256::mul(rm, uint8_t(b))];
  return out;
}

// P[key byte] via sout = Sbox(pt ^ key).
inline ProbVector key_byte_distribution(const ProbVector& sout_probs, uint8_t pt_byte) {
  ProbVector out(256);
  for (int kappa = 0; kappa < 256; ++kappa)
    out[size_t(kappa)] = sout_probs[gf256::sbox(uint8_t(pt_byte ^ kappa))];
  return out;
}

// 32-bin histogram over [0,1] for confidence reporting.
inline std::vector<int64_t> histogram32(const std::vector<double>& values) {
  std::vector<int64_t> bins(32, 0);
  for (double v : values) {
    int b = int(v * 32.0);
    b = std::clamp(b, 0, 31);
    ++bins[size_t(b)];
  }
  return bins;
}

}  // namespace gpam::metrics
