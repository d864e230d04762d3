#pragma once

// CTC loss over per-frame log-probabilities, computed with a log-space
// forward/backward DP in double precision. Gradients flow into the log-prob
// tensor, so the op composes with log_softmax_rows.

#include "cloze/alignment.hpp"
#include "cloze/tensor.hpp"

namespace cloze {

namespace detail {

constexpr double kLogZero = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kLogZero) return b;
  if (b == kLogZero) return a;
  double hi = std::max(a, b), lo = std::min(a, b);
  return hi + std::log1p(std::exp(lo - hi));
}

struct CtcTables {
  int T = 0, S = 0;
  std::vector<double> alpha, beta;  // [T x S], path probs including frame t
  double log_p = kLogZero;
};

inline int ctc_min_frames(const std::vector<int>& target) {
  int repeats = 0;
  for (size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++repeats;
  return int(target.size()) + repeats;
}

// log_prob(t, k) must return log y_t(k) as double.
template <typename F>
CtcTables ctc_forward_backward(int T, int K, const std::vector<int>& target, int blank,
                               F&& log_prob) {
  for (int c : target)
    if (c < 0 || c >= K || c == blank)
      throw ShapeMismatchError("ctc: target symbol " + std::to_string(c) + " invalid for " +
                               std::to_string(K) + " classes with blank " + std::to_string(blank));
  if (T < ctc_min_frames(target))
    throw TargetTooLongError("ctc: target needs at least " + std::to_string(ctc_min_frames(target)) +
                             " frames, got " + std::to_string(T));

  const int L = int(target.size());
  const int S = 2 * L + 1;
  auto sym = [&](int s) { return (s % 2 == 0) ? blank : target[size_t(s / 2)]; };

  CtcTables tb;
  tb.T = T;
  tb.S = S;
  tb.alpha.assign(size_t(T) * size_t(S), kLogZero);
  tb.beta.assign(size_t(T) * size_t(S), kLogZero);
  auto A = [&](int t, int s) -> double& { return tb.alpha[size_t(t) * size_t(S) + size_t(s)]; };
  auto B = [&](int t, int s) -> double& { return tb.beta[size_t(t) * size_t(S) + size_t(s)]; };

  A(0, 0) = log_prob(0, blank);
  if (S > 1) A(0, 1) = log_prob(0, sym(1));
  for (int t = 1; t < T; ++t)
    for (int s = 0; s < S; ++s) {
      double acc = A(t - 1, s);
      if (s >= 1) acc = log_add(acc, A(t - 1, s - 1));
      if (s >= 2 && sym(s) != blank && sym(s) != sym(s - 2)) acc = log_add(acc, A(t - 1, s - 2));
      if (acc != kLogZero) A(t, s) = acc + log_prob(t, sym(s));
    }

  B(T - 1, S - 1) = log_prob(T - 1, blank);
  if (S > 1) B(T - 1, S - 2) = log_prob(T - 1, sym(S - 2));
  for (int t = T - 2; t >= 0; --t)
    for (int s = S - 1; s >= 0; --s) {
      double acc = B(t + 1, s);
      if (s + 1 < S) acc = log_add(acc, B(t + 1, s + 1));
      if (s + 2 < S && sym(s + 2) != blank && sym(s + 2) != sym(s)) acc = log_add(acc, B(t + 1, s + 2));
      if (acc != kLogZero) B(t, s) = acc + log_prob(t, sym(s));
    }

  tb.log_p = A(T - 1, S - 1);
  if (S > 1) tb.log_p = log_add(tb.log_p, A(T - 1, S - 2));
  return tb;
}

}  // namespace detail

// Negative log-likelihood from a plain double matrix of log-probs [T][K].
inline double ctc_loss_logspace(const std::vector<std::vector<double>>& log_probs,
                                const std::vector<int>& target, int blank) {
  int T = int(log_probs.size());
  if (T == 0) throw ShapeMismatchError("ctc: zero frames");
  int K = int(log_probs[0].size());
  for (const auto& row : log_probs)
    if (int(row.size()) != K) throw ShapeMismatchError("ctc: ragged log-prob rows");
  auto tb = detail::ctc_forward_backward(T, K, target, blank,
                                         [&](int t, int k) { return log_probs[size_t(t)][size_t(k)]; });
  return -tb.log_p;
}

// Autodiff CTC loss. `log_probs` is [T, K] of log y; returns scalar NLL.
inline Tensor ctc_loss(const Tensor& log_probs, const std::vector<int>& target, int blank) {
  detail::require_2d(log_probs, "ctc_loss");
  const int T = log_probs.dim(0), K = log_probs.dim(1);
  const auto& lp = log_probs.values();
  auto tb = detail::ctc_forward_backward(
      T, K, target, blank, [&](int t, int k) { return double(lp[size_t(t) * size_t(K) + size_t(k)]); });
  const int S = tb.S;
  return detail::make_op(
      {1}, {float(-tb.log_p)}, {log_probs},
      [T, K, S, blank, target, tb = std::move(tb)](detail::Node& self) {
        auto& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        auto sym = [&](int s) { return (s % 2 == 0) ? blank : target[size_t(s / 2)]; };
        auto& g = pa.grad_buf();
        float up = self.grad[0];
        for (int t = 0; t < T; ++t) {
          // dL/dlog y_t(k) = -exp(logsum_{s: sym=k}(alpha+beta-log y) - log P)
          std::vector<double> acc(size_t(K), detail::kLogZero);
          for (int s = 0; s < S; ++s) {
            double a = tb.alpha[size_t(t) * size_t(S) + size_t(s)];
            double b = tb.beta[size_t(t) * size_t(S) + size_t(s)];
            if (a == detail::kLogZero || b == detail::kLogZero) continue;
            int k = sym(s);
            double ly = double(pa.value[size_t(t) * size_t(K) + size_t(k)]);
            acc[size_t(k)] = detail::log_add(acc[size_t(k)], a + b - ly);
          }
          for (int k = 0; k < K; ++k) {
            if (acc[size_t(k)] == detail::kLogZero) continue;
            g[size_t(t) * size_t(K) + size_t(k)] -= up * float(std::exp(acc[size_t(k)] - tb.log_p));
          }
        }
      });
}

// Best-path decode: argmax per frame, collapse repeats, drop blanks.
inline std::vector<int> ctc_greedy_decode(const std::vector<float>& log_probs, int T, int K,
                                          int blank) {
  if (int(log_probs.size()) != T * K) throw ShapeMismatchError("ctc_greedy_decode: bad buffer size");
  std::vector<int> out;
  int prev = -1;
  for (int t = 0; t < T; ++t) {
    const float* row = log_probs.data() + size_t(t) * size_t(K);
    int best = 0;
    for (int k = 1; k < K; ++k)
      if (row[k] > row[best]) best = k;
    if (best != blank && best != prev) out.push_back(best);
    prev = best;
  }
  return out;
}

inline std::vector<int> ctc_greedy_decode(const Tensor& log_probs, int blank) {
  detail::require_2d(log_probs, "ctc_greedy_decode");
  return ctc_greedy_decode(log_probs.values(), log_probs.dim(0), log_probs.dim(1), blank);
}

// Character error rate: edit distance over reference length (1 if ref empty
// and hyp nonempty, 0 if both empty).
inline double char_error_rate(const std::vector<int>& ref, const std::vector<int>& hyp) {
  if (ref.empty()) return hyp.empty() ? 0.0 : 1.0;
  return double(levenshtein(ref, hyp)) / double(ref.size());
}

}  // namespace cloze
