#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "gpam/parallel.hpp"
#include "gpam/rng.hpp"
#include "gpam/tensor.hpp"

namespace gpam::ad {

// Reverse-mode tape. Ops build Node graphs on the fly; backward() walks the
// reverse topological order exactly once per node and sums gradients into
// shared inputs.
template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated by backward()
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> inputs;
  std::function<void(Node<T>&)> backward_fn;
  std::string name;  // parameters only
};

template <class T>
using Var = std::shared_ptr<Node<T>>;

template <class T>
inline Var<T> leaf(Tensor<T> value, bool requires_grad = false, std::string name = {}) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->name = std::move(name);
  return n;
}

namespace detail {

template <class T>
inline bool any_requires(const std::vector<Var<T>>& ins) {
  for (const auto& v : ins)
    if (v->requires_grad) return true;
  return false;
}

template <class T>
inline Var<T> make_node(Tensor<T> value, std::vector<Var<T>> inputs,
                        std::function<void(Node<T>&)> backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = any_requires(inputs);
  if (n->requires_grad) {
    n->inputs = std::move(inputs);
    n->backward_fn = std::move(backward_fn);
  }
  return n;
}

template <class T>
inline void ensure_grad(Node<T>& n) {
  if (n.grad.data.empty()) {
    n.grad.shape = n.value.shape;
    n.grad.data.assign(n.value.data.size(), T(0));
  }
}

// True when `small` equals the trailing dims of `big` (broadcast over the
// leading ones).
inline bool is_suffix_shape(const std::vector<int>& small, const std::vector<int>& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

}  // namespace detail

template <class T>
inline void backward(const Var<T>& root) {
  if (root->value.numel() != 1) throw ShapeMismatch("backward needs a scalar root");
  // Topological order via iterative DFS over grad-requiring nodes.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  if (!root->requires_grad) return;
  stack.push_back({root.get(), 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* in = node->inputs[next++].get();
      if (in->requires_grad && !seen.count(in)) {
        seen.insert(in);
        stack.push_back({in, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node<T>* n : order) {
    n->grad.shape = n->value.shape;
    n->grad.data.assign(n->value.data.size(), T(0));
  }
  root->grad.data[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn) {
      for (auto& in : n->inputs) detail::ensure_grad(*in);
      n->backward_fn(*n);
    }
  }
}

// ---------------------------------------------------------------------------
// matmul

namespace detail {

// C[M,N] (+)= A[M,K] x B[K,N]
template <class T>
inline void mm_nn(const T* a, const T* b, T* c, int M, int K, int N) {
  for (int i = 0; i < M; ++i) {
    T* crow = c + int64_t(i) * N;
    const T* arow = a + int64_t(i) * K;
    for (int k = 0; k < K; ++k) {
      const T av = arow[k];
      if (av == T(0)) continue;
      const T* brow = b + int64_t(k) * N;
      for (int j = 0; j < N; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M,N] (+)= A[M,K] x B^T where B is [N,K]
template <class T>
inline void mm_nt(const T* a, const T* b, T* c, int M, int K, int N) {
  for (int i = 0; i < M; ++i) {
    const T* arow = a + int64_t(i) * K;
    T* crow = c + int64_t(i) * N;
    for (int j = 0; j < N; ++j) {
      const T* brow = b + int64_t(j) * K;
      T acc = T(0);
      for (int k = 0; k < K; ++k) acc += arow[k] * brow[k];
      crow[j] += acc;
    }
  }
}

// C[M,N] (+)= A^T x B where A is [K,M], B is [K,N]
template <class T>
inline void mm_tn(const T* a, const T* b, T* c, int M, int K, int N) {
  for (int k = 0; k < K; ++k) {
    const T* arow = a + int64_t(k) * M;
    const T* brow = b + int64_t(k) * N;
    for (int i = 0; i < M; ++i) {
      const T av = arow[i];
      if (av == T(0)) continue;
      T* crow = c + int64_t(i) * N;
      for (int j = 0; j < N; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

// a: [..., M, K]; b: [K, N] or matching-batch [..., K, N].
template <class T>
inline Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const auto& as = a->value.shape;
  const auto& bs = b->value.shape;
  if (as.size() < 2 || bs.size() < 2) throw ShapeMismatch("matmul needs rank >= 2");
  const int M = as[as.size() - 2], K = as.back();
  const int Kb = bs[bs.size() - 2], N = bs.back();
  const bool b_batched = bs.size() > 2;
  if (K != Kb) throw ShapeMismatch("matmul inner dims differ");
  if (b_batched && !std::equal(as.begin(), as.end() - 2, bs.begin(), bs.end() - 2))
    throw ShapeMismatch("matmul batch dims differ");
  std::vector<int> out_shape(as.begin(), as.end() - 2);
  const int64_t batch = Tensor<T>::numel_of(out_shape);
  out_shape.push_back(M);
  out_shape.push_back(N);

  Tensor<T> out(out_shape);
  const T* pa = a->value.data.data();
  const T* pb = b->value.data.data();
  T* pc = out.data.data();
  parallel_for(batch, [&](int64_t lo, int64_t hi) {
    for (int64_t g = lo; g < hi; ++g)
      detail::mm_nn(pa + g * M * K, b_batched ? pb + g * K * N : pb, pc + g * M * N, M, K, N);
  });

  return detail::make_node<T>(
      std::move(out), {a, b}, [M, K, N, batch, b_batched](Node<T>& n) {
        const Var<T>& a = n.inputs[0];
        const Var<T>& b = n.inputs[1];
        const T* dc = n.grad.data.data();
        const T* pa = a->value.data.data();
        const T* pb = b->value.data.data();
        if (a->requires_grad) {
          T* da = a->grad.data.data();
          parallel_for(batch, [&](int64_t lo, int64_t hi) {
            for (int64_t g = lo; g < hi; ++g)
              detail::mm_nt(dc + g * M * N, b_batched ? pb + g * K * N : pb,
                            da + g * M * K, M, N, K);
          });
        }
        if (b->requires_grad) {
          T* db = b->grad.data.data();
          if (b_batched) {
            parallel_for(batch, [&](int64_t lo, int64_t hi) {
              for (int64_t g = lo; g < hi; ++g)
                detail::mm_tn(pa + g * M * K, dc + g * M * N, db + g * K * N, K, M, N);
            });
          } else {
            // flatten the batch: dB = A_flat^T x dC_flat, single thread to
            // keep accumulation deterministic
            detail::mm_tn(pa, dc, db, K, int(batch * M), N);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// elementwise with suffix broadcast

namespace detail {

template <class T, class FwdFn, class BwdA, class BwdB>
inline Var<T> binary_broadcast(const Var<T>& a, const Var<T>& b, FwdFn fwd, BwdA bwd_a,
                               BwdB bwd_b, const char* opname) {
  if (!is_suffix_shape(b->value.shape, a->value.shape))
    throw ShapeMismatch(std::string(opname) + ": rhs shape " + b->value.shape_str() +
                        " is not a suffix of " + a->value.shape_str());
  const int64_t bn = b->value.numel();
  Tensor<T> out(a->value.shape);
  const int64_t n = out.numel();
  const T* pa = a->value.data.data();
  const T* pb = b->value.data.data();
  T* pc = out.data.data();
  for (int64_t i = 0; i < n; ++i) pc[i] = fwd(pa[i], pb[i % bn]);
  return make_node<T>(std::move(out), {a, b}, [bn, bwd_a, bwd_b](Node<T>& node) {
    const Var<T>& a = node.inputs[0];
    const Var<T>& b = node.inputs[1];
    const int64_t n = node.grad.numel();
    const T* dc = node.grad.data.data();
    const T* pa = a->value.data.data();
    const T* pb = b->value.data.data();
    if (a->requires_grad) {
      T* da = a->grad.data.data();
      for (int64_t i = 0; i < n; ++i) da[i] += bwd_a(dc[i], pa[i], pb[i % bn]);
    }
    if (b->requires_grad) {
      T* db = b->grad.data.data();
      for (int64_t i = 0; i < n; ++i) db[i % bn] += bwd_b(dc[i], pa[i], pb[i % bn]);
    }
  });
}

}  // namespace detail

template <class T>
inline Var<T> add(const Var<T>& a, const Var<T>& b) {
  return detail::binary_broadcast<T>(
      a, b, [](T x, T y) { return x + y; }, [](T d, T, T) { return d; },
      [](T d, T, T) { return d; }, "add");
}

template <class T>
inline Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return detail::binary_broadcast<T>(
      a, b, [](T x, T y) { return x * y; }, [](T d, T, T y) { return d * y; },
      [](T d, T x, T) { return d * x; }, "mul");
}

template <class T>
inline Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return detail::binary_broadcast<T>(
      a, b, [](T x, T y) { return x - y; }, [](T d, T, T) { return d; },
      [](T d, T, T) { return -d; }, "sub");
}

template <class T>
inline Var<T> scale(const Var<T>& a, double c) {
  Tensor<T> out(a->value.shape);
  for (int64_t i = 0; i < out.numel(); ++i) out.data[size_t(i)] = T(c) * a->value.data[size_t(i)];
  return detail::make_node<T>(std::move(out), {a}, [c](Node<T>& n) {
    const Var<T>& a = n.inputs[0];
    if (!a->requires_grad) return;
    for (int64_t i = 0; i < n.grad.numel(); ++i)
      a->grad.data[size_t(i)] += T(c) * n.grad.data[size_t(i)];
  });
}

// ---------------------------------------------------------------------------
// shape ops

template <class T>
inline Var<T> reshape(const Var<T>& a, std::vector<int> shape) {
  if (Tensor<T>::numel_of(shape) != a->value.numel())
    throw ShapeMismatch("reshape changes element count");
  Tensor<T> out(std::move(shape), a->value.data);
  return detail::make_node<T>(std::move(out), {a}, [](Node<T>& n) {
    const Var<T>& a = n.inputs[0];
    if (!a->requires_grad) return;
    for (int64_t i = 0; i < n.grad.numel(); ++i)
      a->grad.data[size_t(i)] += n.grad.data[size_t(i)];
  });
}

template <class T>
inline Var<T> transpose_last2(const Var<T>& a) {
  const auto& s = a->value.shape;
  if (s.size() < 2) throw ShapeMismatch("transpose needs rank >= 2");
  const int R = s[s.size() - 2], C = s.back();
  std::vector<int> out_shape = s;
  std::swap(out_shape[out_shape.size() - 2], out_shape.back());
  const int64_t batch = a->value.numel() / (int64_t(R) * C);
  Tensor<T> out(out_shape);
  const T* pa = a->value.data.data();
  T* pc = out.data.data();
  for (int64_t g = 0; g < batch; ++g)
    for (int i = 0; i < R; ++i)
      for (int j = 0; j < C; ++j)
        pc[g * R * C + int64_t(j) * R + i] = pa[g * R * C + int64_t(i) * C + j];
  return detail::make_node<T>(std::move(out), {a}, [R, C, batch](Node<T>& n) {
    const Var<T>& a = n.inputs[0];
    if (!a->requires_grad) return;
    const T* dc = n.grad.data.data();
    T* da = a->grad.data.data();
    for (int64_t g = 0; g < batch; ++g)
      for (int j = 0; j < C; ++j)
        for (int i = 0; i < R; ++i)
          da[g * R * C + int64_t(i) * C + j] += dc[g * R * C + int64_t(j) * R + i];
  });
}

// Concatenates along `axis`; all other dims must match.
template <class T>
inline Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeMismatch("concat of nothing");
  const auto& s0 = parts[0]->value.shape;
  const int rank = int(s0.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeMismatch("concat axis out of range");
  std::vector<int> out_shape = s0;
  out_shape[size_t(axis)] = 0;
  for (const auto& p : parts) {
    const auto& s = p->value.shape;
    if (int(s.size()) != rank) throw ShapeMismatch("concat rank mismatch");
    for (int d = 0; d < rank; ++d)
      if (d != axis && s[size_t(d)] != s0[size_t(d)])
        throw ShapeMismatch("concat non-axis dims differ");
    out_shape[size_t(axis)] += s[size_t(axis)];
  }
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s0[size_t(d)];
  for (int d = axis + 1; d < rank; ++d) inner *= s0[size_t(d)];
  Tensor<T> out(out_shape);
  const int64_t out_axis = out_shape[size_t(axis)];
  int64_t off = 0;
  for (const auto& p : parts) {
    const int64_t ax = p->value.shape[size_t(axis)];
    const T* src = p->value.data.data();
    for (int64_t o = 0; o < outer; ++o)
      std::copy(src + o * ax * inner, src + (o + 1) * ax * inner,
                out.data.data() + (o * out_axis + off) * inner);
    off += ax;
  }
  return detail::make_node<T>(std::move(out), parts,
                              [axis, outer, inner, out_axis](Node<T>& n) {
                                int64_t off = 0;
                                for (auto& p : n.inputs) {
                                  const int64_t ax = p->value.shape[size_t(axis)];
                                  if (p->requires_grad) {
                                    T* dst = p->grad.data.data();
                                    const T* src = n.grad.data.data();
                                    for (int64_t o = 0; o < outer; ++o) {
                                      const T* s = src + (o * out_axis + off) * inner;
                                      T* d = dst + o * ax * inner;
                                      for (int64_t i = 0; i < ax * inner; ++i) d[i] += s[i];
                                    }
                                  }
                                  off += ax;
                                }
                              });
}

template <class T>
inline Var<T> slice(const Var<T>& a, int axis, int start, int len) {
  const auto& s = a->value.shape;
  const int rank = int(s.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeMismatch("slice axis out of range");
  if (start < 0 || len < 0 || start + len > s[size_t(axis)])
    throw ShapeMismatch("slice range out of bounds");
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s[size_t(d)];
  for (int d = axis + 1; d < rank; ++d) inner *= s[size_t(d)];
  std::vector<int> out_shape = s;
  out_shape[size_t(axis)] = len;
  Tensor<T> out(out_shape);
  const int64_t ax = s[size_t(axis)];
  for (int64_t o = 0; o < outer; ++o)
    std::copy(a->value.data.data() + (o * ax + start) * inner,
              a->value.data.data() + (o * ax + start + len) * inner,
              out.data.data() + o * len * inner);
  return detail::make_node<T>(std::move(out), {a}, [axis, start, len, outer, inner, ax](Node<T>& n) {
    const Var<T>& a = n.inputs[0];
    if (!a->requires_grad) return;
    for (int64_t o = 0; o < outer; ++o) {
      const T* src = n.grad.data.data() + o * len * inner;
      T* dst = a->grad.data.data() + (o * ax + start) * inner;
      for (int64_t i = 0; i < int64_t(len) * inner; ++i) dst[i] += src[i];
    }
  });
}

// ---------------------------------------------------------------------------
// nonlinearities

namespace detail {
template <class T, class FwdFn, class GradFn>
inline Var<T> unary(const Var<T>& a, FwdFn f, GradFn g) {
  Tensor<T> out(a->value.shape);
  for (int64_t i = 0; i < out.numel(); ++i) out.data[size_t(i)] = f(a->value.data[size_t(i)]);
  return make_node<T>(std::move(out), {a}, [g](Node<T>& n) {
    const Var<T>& a = n.inputs[0];
    if (!a->requires_grad) return;
    for (int64_t i = 0; i < n.grad.numel(); ++i)
      a->grad.data[size_t(i)] += n.grad.data[size_t(i)] * g(a->value.data[size_t(i)]);
  });
}
template <class T>
inline T sigmoid_scalar(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}
}  // namespace detail

template <class T>
inline Var<T> relu(const Var<T>& a) {
  return detail::unary<T>(
      a, [](T x) { return x > T(0) ? x : T(0); }, [](T x) { return x > T(0) ? T(1) : T(0); });
}

template <class T>
inline Var<T> squared_relu(const Var<T>& a) {
  return detail::unary<T>(
      a, [](T x) { return x > T(0) ? x * x : T(0); },
      [](T x) { return x > T(0) ? T(2) * x : T(0); });
}

template <class T>
inline Var<T> swish(const Var<T>& a) {
  return detail::unary<T>(
      a, [](T x) { return x * detail::sigmoid_scalar(x); },
      [](T x) {
        const T s = detail::sigmoid_scalar(x);
        return s * (T(1) + x * (T(1) - s));
      });
}

// softmax over the last axis; rows sum to 1.
template <class T>
inline Var<T> softmax(const Var<T>& a) {
  const int d = a->value.last_dim();
  if (d == 0) throw ShapeMismatch("softmax over empty axis");
  const int64_t rows = a->value.rows();
  Tensor<T> out(a->value.shape);
  for (int64_t r = 0; r < rows; ++r) {
    const T* x = a->value.data.data() + r * d;
    T* y = out.data.data() + r * d;
    T mx = x[0];
    for (int i = 1; i < d; ++i) mx = std::max(mx, x[i]);
    T sum = T(0);
    for (int i = 0; i < d; ++i) sum += (y[i] = std::exp(x[i] - mx));
    for (int i = 0; i < d; ++i) y[i] /= sum;
  }
  return detail::make_node<T>(std::move(out), {a}, [d, rows](Node<T>& n) {
    const Var<T>& a = n.inputs[0];
    if (!a->requires_grad) return;
    for (int64_t r = 0; r < rows; ++r) {
      const T* y = n.value.data.data() + r * d;
      const T* dy = n.grad.data.data() + r * d;
      T* dx = a->grad.data.data() + r * d;
      T dot = T(0);
      for (int i = 0; i < d; ++i) dot += dy[i] * y[i];
      for (int i = 0; i < d; ++i) dx[i] += y[i] * (dy[i] - dot);
    }
  });
}

template <class T>
inline Var<T> log_softmax(const Var<T>& a) {
  const int d = a->value.last_dim();
  if (d == 0) throw ShapeMismatch("log_softmax over empty axis");
  const int64_t rows = a->value.rows();
  Tensor<T> out(a->value.shape);
  for (int64_t r = 0; r < rows; ++r) {
    const T* x = a->value.data.data() + r * d;
    T* y = out.data.data() + r * d;
    T mx = x[0];
    for (int i = 1; i < d; ++i) mx = std::max(mx, x[i]);
    T sum = T(0);
    for (int i = 0; i < d; ++i) sum += std::exp(x[i] - mx);
    const T lse = mx + std::log(sum);
    for (int i = 0; i < d; ++i) y[i] = x[i] - lse;
  }
  return detail::make_node<T>(std::move(out), {a}, [d, rows](Node<T>& n) {
    const Var<T>& a = n.inputs[0];
    if (!a->requires_grad) return;
    for (int64_t r = 0; r < rows; ++r) {
      const T* y = n.value.data.data() + r * d;
      const T* dy = n.grad.data.data() + r * d;
      T* dx = a->grad.data.data() + r * d;
      T sum = T(0);
      for (int i = 0; i < d; ++i) sum += dy[i];
      for (int i = 0; i < d; ++i) dx[i] += dy[i] - std::exp(y[i]) * sum;
    }
  });
}

// layer norm over the last axis with learned scale/offset, eps = 1e-5.
template <class T>
inline Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                         double eps = 1e-5) {
  const int d = x->value.last_dim();
  if (gamma->value.numel() != d || beta->value.numel() != d)
    throw ShapeMismatch("layer_norm scale/offset must have last-axis length");
  const int64_t rows = x->value.rows();
  Tensor<T> out(x->value.shape);
  Tensor<T> xhat(x->value.shape);       // saved for backward
  std::vector<T> inv_sigma(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const T* px = x->value.data.data() + r * d;
    T mean = T(0);
    for (int i = 0; i < d; ++i) mean += px[i];
    mean /= T(d);
    T var = T(0);
    for (int i = 0; i < d; ++i) var += (px[i] - mean) * (px[i] - mean);
    var /= T(d);
    const T is = T(1) / std::sqrt(var + T(eps));
    inv_sigma[size_t(r)] = is;
    T* ph = xhat.data.data() + r * d;
    T* po = out.data.data() + r * d;
    for (int i = 0; i < d; ++i) {
      ph[i] = (px[i] - mean) * is;
      po[i] = ph[i] * gamma->value.data[size_t(i)] + beta->value.data[size_t(i)];
    }
  }
  return detail::make_node<T>(
      std::move(out), {x, gamma, beta},
      [d, rows, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](Node<T>& n) {
        const Var<T>& x = n.inputs[0];
        const Var<T>& gamma = n.inputs[1];
        const Var<T>& beta = n.inputs[2];
        for (int64_t r = 0; r < rows; ++r) {
          const T* dy = n.grad.data.data() + r * d;
          const T* ph = xhat.data.data() + r * d;
          if (gamma->requires_grad)
            for (int i = 0; i < d; ++i) gamma->grad.data[size_t(i)] += dy[i] * ph[i];
          if (beta->requires_grad)
            for (int i = 0; i < d; ++i) beta->grad.data[size_t(i)] += dy[i];
          if (x->requires_grad) {
            T* dx = x->grad.data.data() + r * d;
            T mean_dxhat = T(0), mean_dxhat_xhat = T(0);
            for (int i = 0; i < d; ++i) {
              const T dxh = dy[i] * gamma->value.data[size_t(i)];
              mean_dxhat += dxh;
              mean_dxhat_xhat += dxh * ph[i];
            }
            mean_dxhat /= T(d);
            mean_dxhat_xhat /= T(d);
            const T is = inv_sigma[size_t(r)];
            for (int i = 0; i < d; ++i) {
              const T dxh = dy[i] * gamma->value.data[size_t(i)];
              dx[i] += is * (dxh - mean_dxhat - ph[i] * mean_dxhat_xhat);
            }
          }
        }
      });
}

// Inverted dropout: train keeps each unit with prob 1-p and rescales by
// 1/(1-p); eval is the identity.
template <class T>
inline Var<T> dropout(const Var<T>& a, double p, bool train, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ShapeMismatch("dropout p must be in [0,1)");
  if (!train || p == 0.0) {
    Tensor<T> out = a->value;
    return detail::make_node<T>(std::move(out), {a}, [](Node<T>& n) {
      const Var<T>& a = n.inputs[0];
      if (!a->requires_grad) return;
      for (int64_t i = 0; i < n.grad.numel(); ++i)
        a->grad.data[size_t(i)] += n.grad.data[size_t(i)];
    });
  }
  const T keep_scale = T(1.0 / (1.0 - p));
  std::vector<uint8_t> mask(size_t(a->value.numel()));
  for (auto& m : mask) m = rng.uniform01() >= p ? 1 : 0;
  Tensor<T> out(a->value.shape);
  for (int64_t i = 0; i < out.numel(); ++i)
    out.data[size_t(i)] = mask[size_t(i)] ? a->value.data[size_t(i)] * keep_scale : T(0);
  return detail::make_node<T>(std::move(out), {a},
                              [mask = std::move(mask), keep_scale](Node<T>& n) {
                                const Var<T>& a = n.inputs[0];
                                if (!a->requires_grad) return;
                                for (int64_t i = 0; i < n.grad.numel(); ++i)
                                  if (mask[size_t(i)])
                                    a->grad.data[size_t(i)] += n.grad.data[size_t(i)] * keep_scale;
                              });
}

// Forward identity, zero gradient into the input subgraph.
template <class T>
inline Var<T> stop_gradient(const Var<T>& a) {
  auto n = std::make_shared<Node<T>>();
  n->value = a->value;
  n->requires_grad = false;
  return n;
}

// ---------------------------------------------------------------------------
// conv1d: input [B,T,C] (or [T,C]), filters [K,C,F], valid padding.

template <class T>
inline Var<T> conv1d(const Var<T>& x, const Var<T>& w, int stride) {
  if (stride < 1) throw ShapeMismatch("conv1d stride must be >= 1");
  const auto& xs = x->value.shape;
  const auto& ws = w->value.shape;
  if ((xs.size() != 2 && xs.size() != 3) || ws.size() != 3)
    throw ShapeMismatch("conv1d expects [B,T,C] input and [K,C,F] filters");
  const bool batched = xs.size() == 3;
  const int B = batched ? xs[0] : 1;
  const int Tlen = batched ? xs[1] : xs[0];
  const int C = batched ? xs[2] : xs[1];
  const int K = ws[0], Cw = ws[1], F = ws[2];
  if (C != Cw) throw ShapeMismatch("conv1d channel mismatch");
  if (K > Tlen) throw ShapeMismatch("conv1d kernel longer than input");
  const int To = (Tlen - K) / stride + 1;
  std::vector<int> out_shape = batched ? std::vector<int>{B, To, F} : std::vector<int>{To, F};
  Tensor<T> out(out_shape);
  const T* px = x->value.data.data();
  const T* pw = w->value.data.data();
  T* po = out.data.data();
  parallel_for(B, [&](int64_t lo, int64_t hi) {
    for (int64_t b = lo; b < hi; ++b) {
      const T* xb = px + b * Tlen * C;
      T* ob = po + b * To * F;
      for (int t = 0; t < To; ++t) {
        T* orow = ob + int64_t(t) * F;
        for (int k = 0; k < K; ++k) {
          const T* xrow = xb + int64_t(t * stride + k) * C;
          const T* wrow = pw + int64_t(k) * C * F;
          for (int c = 0; c < C; ++c) {
            const T xv = xrow[c];
            if (xv == T(0)) continue;
            const T* wr = wrow + int64_t(c) * F;
            for (int f = 0; f < F; ++f) orow[f] += xv * wr[f];
          }
        }
      }
    }
  });
  return detail::make_node<T>(
      std::move(out), {x, w}, [B, Tlen, C, K, F, To, stride](Node<T>& n) {
        const Var<T>& x = n.inputs[0];
        const Var<T>& w = n.inputs[1];
        const T* px = x->value.data.data();
        const T* pw = w->value.data.data();
        const T* dg = n.grad.data.data();
        if (x->requires_grad) {
          T* dx = x->grad.data.data();
          parallel_for(B, [&](int64_t lo, int64_t hi) {
            for (int64_t b = lo; b < hi; ++b) {
              const T* gb = dg + b * To * F;
              T* dxb = dx + b * Tlen * C;
              for (int t = 0; t < To; ++t)
                for (int k = 0; k < K; ++k) {
                  T* dxrow = dxb + int64_t(t * stride + k) * C;
                  const T* wrow = pw + int64_t(k) * C * F;
                  const T* grow = gb + int64_t(t) * F;
                  for (int c = 0; c < C; ++c) {
                    T acc = T(0);
                    const T* wr = wrow + int64_t(c) * F;
                    for (int f = 0; f < F; ++f) acc += grow[f] * wr[f];
                    dxrow[c] += acc;
                  }
                }
            }
          });
        }
        if (w->requires_grad) {
          T* dw = w->grad.data.data();
          for (int b = 0; b < B; ++b) {
            const T* xb = px + int64_t(b) * Tlen * C;
            const T* gb = dg + int64_t(b) * To * F;
            for (int t = 0; t < To; ++t)
              for (int k = 0; k < K; ++k) {
                const T* xrow = xb + int64_t(t * stride + k) * C;
                const T* grow = gb + int64_t(t) * F;
                for (int c = 0; c < C; ++c) {
                  const T xv = xrow[c];
                  if (xv == T(0)) continue;
                  T* dwr = dw + (int64_t(k) * C + c) * F;
                  for (int f = 0; f < F; ++f) dwr[f] += xv * grow[f];
                }
              }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// cross entropy: mean over the batch of -log_softmax(logits)[label].

template <class T>
inline Var<T> cross_entropy(const Var<T>& logits, const std::vector<uint8_t>& labels) {
  const int d = logits->value.last_dim();
  const int64_t rows = logits->value.rows();
  if (int64_t(labels.size()) != rows) throw ShapeMismatch("cross_entropy label count");
  Tensor<T> probs(logits->value.shape);  // softmax, saved for backward
  T loss = T(0);
  for (int64_t r = 0; r < rows; ++r) {
    const T* x = logits->value.data.data() + r * d;
    T* y = probs.data.data() + r * d;
    T mx = x[0];
    for (int i = 1; i < d; ++i) mx = std::max(mx, x[i]);
    T sum = T(0);
    for (int i = 0; i < d; ++i) sum += (y[i] = std::exp(x[i] - mx));
    const T lse = mx + std::log(sum);
    for (int i = 0; i < d; ++i) y[i] /= sum;
    if (labels[size_t(r)] >= d) throw ShapeMismatch("label out of range");
    loss += lse - x[labels[size_t(r)]];
  }
  Tensor<T> out({1});
  out.data[0] = loss / T(rows);
  return detail::make_node<T>(
      std::move(out), {logits},
      [d, rows, probs = std::move(probs), labels](Node<T>& n) {
        const Var<T>& logits = n.inputs[0];
        if (!logits->requires_grad) return;
        const T g = n.grad.data[0] / T(rows);
        T* dx = logits->grad.data.data();
        const T* y = probs.data.data();
        for (int64_t r = 0; r < rows; ++r) {
          for (int i = 0; i < d; ++i) dx[r * d + i] += g * y[r * d + i];
          dx[r * d + labels[size_t(r)]] -= g;
        }
      });
}

// ---------------------------------------------------------------------------
// Adam with bias correction.

template <class T>
struct AdamState {
  int64_t t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-7;
  std::vector<std::vector<T>> m, v;  // per-parameter, index-aligned
};

template <class T>
inline void adam_step(const std::vector<Var<T>>& params, AdamState<T>& state, double lr) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i]->value.data.size(), T(0));
      state.v[i].assign(params[i]->value.data.size(), T(0));
    }
  }
  if (state.m.size() != params.size()) throw ShapeMismatch("adam state size mismatch");
  ++state.t;
  const double bc1 = 1.0 - std::pow(state.beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, double(state.t));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    if (p.grad.data.size() != p.value.data.size())
      throw ShapeMismatch("adam: parameter has no gradient");
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (size_t j = 0; j < p.value.data.size(); ++j) {
      const double g = double(p.grad.data[j]);
      m[j] = T(state.beta1 * double(m[j]) + (1.0 - state.beta1) * g);
      v[j] = T(state.beta2 * double(v[j]) + (1.0 - state.beta2) * g * g);
      const double mhat = double(m[j]) / bc1;
      const double vhat = double(v[j]) / bc2;
      p.value.data[j] -= T(lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

// ---------------------------------------------------------------------------
// Gradient checking: central finite differences against the backward pass.
// Run with T = double.

template <class Build>
inline double grad_check(Build&& build, const std::vector<Var<double>>& wrt,
                         double eps = 1e-4) {
  Var<double> loss = build();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(wrt.size());
  for (const auto& p : wrt) {
    if (p->grad.data.size() != p->value.data.size())
      throw ShapeMismatch("grad_check: missing gradient (is requires_grad set?)");
    analytic.push_back(p->grad.data);
  }
  double worst = 0.0;
  for (size_t pi = 0; pi < wrt.size(); ++pi) {
    auto& p = *wrt[pi];
    for (size_t j = 0; j < p.value.data.size(); ++j) {
      const double keep = p.value.data[j];
      p.value.data[j] = keep + eps;
      const double up = build()->value.data[0];
      p.value.data[j] = keep - eps;
      const double down = build()->value.data[0];
      p.value.data[j] = keep;
      const double fd = (up - down) / (2.0 * eps);
      const double ad = analytic[pi][j];
      const double err = std::abs(ad - fd) / std::max(1e-8, std::abs(ad) + std::abs(fd));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace gpam::ad
