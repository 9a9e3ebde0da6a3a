#pragma once

// Reference computations written without the library's code paths. Shared by
// the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <vector>

#include "protst/autodiff.hpp"
#include "protst/metrics.hpp"

namespace protst::oracle {

using Matrix = std::vector<std::vector<long double>>;

inline Matrix to_matrix(const ad::Tensor& t) {
  Matrix m(t.rows(), std::vector<long double>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.at(r, c);
  return m;
}

inline Matrix multiply(const Matrix& a, const Matrix& b) {
  Matrix out(a.size(), std::vector<long double>(b[0].size(), 0.0L));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
  return out;
}

// softmax(Q K^T / sqrt(d_k)) V per head, heads concatenated, masked keys
// excluded from the normalization. Extended precision throughout.
inline Matrix attention(const ad::Tensor& x, const ad::Tensor& wq, const ad::Tensor& wk, const ad::Tensor& wv,
                        std::size_t num_heads, const std::vector<bool>& key_mask) {
  const auto X = to_matrix(x);
  const auto Q = multiply(X, to_matrix(wq)), K = multiply(X, to_matrix(wk)), V = multiply(X, to_matrix(wv));
  const std::size_t n = X.size(), d = Q[0].size(), dk = d / num_heads;
  Matrix out(n, std::vector<long double>(d, 0.0L));
  for (std::size_t h = 0; h < num_heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<long double> score(n, 0.0L);
      long double top = -INFINITY;
      for (std::size_t j = 0; j < n; ++j) {
        if (!key_mask[j]) continue;
        for (std::size_t c = 0; c < dk; ++c) score[j] += Q[i][h * dk + c] * K[j][h * dk + c];
        score[j] /= std::sqrt(static_cast<long double>(dk));
        top = std::max(top, score[j]);
      }
      long double z = 0.0L;
      for (std::size_t j = 0; j < n; ++j)
        if (key_mask[j]) z += std::exp(score[j] - top);
      for (std::size_t j = 0; j < n; ++j) {
        if (!key_mask[j]) continue;
        const long double w = std::exp(score[j] - top) / z;
        for (std::size_t c = 0; c < dk; ++c) out[i][h * dk + c] += w * V[j][h * dk + c];
      }
    }
  }
  return out;
}

// Unweighted mean over truth-present classes of 2PR/(P+R).
inline double macro_f1(const std::vector<int>& truth, const std::vector<int>& pred) {
  std::set<int> present(truth.begin(), truth.end());
  long double total = 0.0L;
  for (int c : present) {
    long double tp = 0, predicted = 0, actual = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (pred[i] == c) ++predicted;
      if (truth[i] == c) ++actual;
      if (pred[i] == c && truth[i] == c) ++tp;
    }
    const long double p = predicted > 0 ? tp / predicted : 0.0L;
    const long double r = tp / actual;
    total += (p + r) > 0 ? 2.0L * p * r / (p + r) : 0.0L;
  }
  return static_cast<double>(total / present.size());
}

inline long double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  long double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<long double>(a[i]) * b[i];
    na += static_cast<long double>(a[i]) * a[i];
    nb += static_cast<long double>(b[i]) * b[i];
  }
  return dot / std::sqrt(na * nb);
}

// 1-based position of the ground truth after sorting the pool by
// similarity, ties broken by candidate id.
inline std::size_t rank(const PoolQuery& q) {
  std::vector<std::size_t> order(q.candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<long double> sims;
  for (const auto& c : q.candidates) sims.push_back(cosine(q.query, c));
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (sims[a] != sims[b]) return sims[a] > sims[b];
    return q.candidate_ids[a] < q.candidate_ids[b];
  });
  for (std::size_t i = 0; i < order.size(); ++i)
    if (q.candidate_ids[order[i]] == q.ground_truth) return i + 1;
  return 0;
}

inline double mrr(const std::vector<PoolQuery>& queries) {
  long double total = 0.0L;
  for (const auto& q : queries) total += 1.0L / rank(q);
  return static_cast<double>(total / queries.size());
}

inline double recall_at_k(const std::vector<PoolQuery>& queries, std::size_t k) {
  std::size_t hits = 0;
  for (const auto& q : queries) hits += rank(q) <= k ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

// Random labels over `classes` ids with a given length.
inline std::vector<int> random_labels(Rng& rng, std::size_t n, int classes) {
  std::vector<int> v(n);
  for (auto& x : v) x = rng.range(0, classes - 1);
  return v;
}

inline std::vector<PoolQuery> random_queries(Rng& rng, std::size_t count, std::size_t pool, std::size_t dim) {
  std::vector<PoolQuery> out;
  auto vec = [&] {
    std::vector<double> v(dim);
    for (auto& x : v) x = rng.normal(0.0, 1.0);
    return v;
  };
  for (std::size_t i = 0; i < count; ++i) {
    PoolQuery q;
    q.query = vec();
    for (std::size_t c = 0; c < pool; ++c) {
      q.candidates.push_back(vec());
      q.candidate_ids.push_back(static_cast<std::int64_t>(c * 3 + i));
    }
    q.ground_truth = q.candidate_ids[rng.below(pool)];
    out.push_back(std::move(q));
  }
  return out;
}

}  // namespace protst::oracle
