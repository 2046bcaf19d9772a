#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "detkit/io.hpp"
#include "detkit/matrix.hpp"
#include "detkit/rng.hpp"

namespace detkit {

inline constexpr double kAggregateEps = 1e-8;

/// Per-category prototype feature bank: (C+1) x D, one row per foreground
/// category plus a final background row. Rows are nonzero after init (cosine
/// similarity needs a nonzero norm) and are only changed by momentum updates.
struct CategoryMemory {
  Matrix rows;  // (C+1) x D
  double momentum = 0.01;
  std::uint64_t seed = 0;

  int num_categories() const { return static_cast<int>(rows.rows) - 1; }
  int background_label() const { return num_categories(); }
  int dim() const { return static_cast<int>(rows.cols); }
};

/// A batch of per-box features with their category labels (background uses
/// label C).
struct FeatureBatch {
  Matrix features;  // K x D
  std::vector<int> labels;

  void validate(int num_categories) const {
    if (features.rows != labels.size())
      throw std::invalid_argument("FeatureBatch: label count != feature rows");
    for (int l : labels)
      if (l < 0 || l > num_categories)
        throw std::invalid_argument("FeatureBatch: label out of range");
    if (!features.all_finite())
      throw std::invalid_argument("FeatureBatch: non-finite feature");
  }
};

/// Fresh memory of i.i.d. normal(0, scale^2) entries drawn from the
/// documented generator (rng.hpp), so the same (C, D, seed, scale) always
/// produces the same matrix.
inline CategoryMemory init_memory(int num_categories, int dim, std::uint64_t seed,
                                  double scale, double momentum = 0.01) {
  if (num_categories < 1) throw std::invalid_argument("init_memory: C must be >= 1");
  if (dim < 1) throw std::invalid_argument("init_memory: D must be >= 1");
  if (!(scale > 0.0))
    throw std::invalid_argument("init_memory: scale must be > 0 (zero rows break "
                                "cosine similarity)");
  if (!(momentum >= 0.0 && momentum <= 1.0))
    throw std::invalid_argument("init_memory: momentum must be in [0,1]");
  CategoryMemory mem;
  mem.momentum = momentum;
  mem.seed = seed;
  mem.rows = Matrix(static_cast<std::size_t>(num_categories) + 1,
                    static_cast<std::size_t>(dim));
  Rng rng(seed);
  for (double& v : mem.rows.data) v = rng.normal(0.0, scale);
  return mem;
}

/// Default init scale keeps row norms near 1 so early cosine similarities are
/// well conditioned.
inline CategoryMemory init_memory(int num_categories, int dim, std::uint64_t seed) {
  return init_memory(num_categories, dim, seed, 1.0 / std::sqrt(double(dim)));
}

namespace detail {

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace detail

/// Cosine similarity of each feature row against one memory row.
inline std::vector<double> cosine_weights(const Matrix& features,
                                          std::span<const double> memory_row) {
  if (features.cols != memory_row.size())
    throw std::invalid_argument("cosine_weights: dimension mismatch");
  const double mem_norm = detail::l2_norm(memory_row);
  if (mem_norm == 0.0)
    throw std::invalid_argument("cosine_weights: zero-norm memory row");
  std::vector<double> out;
  out.reserve(features.rows);
  for (std::size_t k = 0; k < features.rows; ++k) {
    const auto row = features.row(k);
    const double norm = detail::l2_norm(row);
    if (norm == 0.0)
      throw std::invalid_argument("cosine_weights: zero-norm feature row");
    // Clamp away rounding overshoot so 1 - w stays nonnegative downstream.
    out.push_back(std::clamp(detail::dot(row, memory_row) / (norm * mem_norm),
                             -1.0, 1.0));
  }
  return out;
}

/// Weighted average of feature rows with weights proportional to
/// (1 - cosine similarity), so features already close to the memory row
/// contribute less. When every similarity is 1 (denominator below eps) the
/// average falls back to uniform weights.
inline std::vector<double> aggregate_category(const Matrix& features,
                                              std::span<const double> w_cos,
                                              double eps = kAggregateEps) {
  if (features.rows == 0)
    throw std::invalid_argument("aggregate_category: empty feature batch");
  if (features.rows != w_cos.size())
    throw std::invalid_argument("aggregate_category: weight count mismatch");
  const std::size_t k = features.rows;
  double denom = 0.0;
  for (double w : w_cos) denom += 1.0 - w;
  std::vector<double> weights(k);
  if (denom < eps) {
    std::fill(weights.begin(), weights.end(), 1.0 / static_cast<double>(k));
  } else {
    for (std::size_t i = 0; i < k; ++i) weights[i] = (1.0 - w_cos[i]) / denom;
  }
  std::vector<double> out(features.cols, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    const auto row = features.row(i);
    for (std::size_t j = 0; j < features.cols; ++j) out[j] += weights[i] * row[j];
  }
  return out;
}

/// Momentum update M_j <- (1-m)*M_j + m*agg_j for the provided categories;
/// rows without an incoming aggregate are left untouched.
inline CategoryMemory ema_update(
    const CategoryMemory& mem,
    const std::vector<std::pair<int, std::vector<double>>>& aggregates) {
  CategoryMemory out = mem;
  const double m = mem.momentum;
  for (const auto& [cat, agg] : aggregates) {
    if (cat < 0 || cat > mem.num_categories())
      throw std::invalid_argument("ema_update: category out of range");
    if (agg.size() != out.rows.cols)
      throw std::invalid_argument("ema_update: aggregate dimension mismatch");
    auto row = out.rows.row(static_cast<std::size_t>(cat));
    for (std::size_t j = 0; j < row.size(); ++j)
      row[j] = (1.0 - m) * row[j] + m * agg[j];
  }
  return out;
}

/// Picks the (up to) two negative-sample rows whose best overlap with any
/// ground truth is smallest, labeled as background updates. Ties go to the
/// lower row index; fewer than two negatives return what exists.
inline FeatureBatch select_background_updates(const Matrix& neg_features,
                                              std::span<const double> neg_max_iou,
                                              int background_label) {
  if (neg_features.rows != neg_max_iou.size())
    throw std::invalid_argument("select_background_updates: IoU count mismatch");
  std::vector<int> order(neg_features.rows);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return neg_max_iou[a] < neg_max_iou[b]; });
  const std::size_t take = std::min<std::size_t>(2, order.size());
  FeatureBatch out;
  out.features = Matrix(take, neg_features.cols);
  for (std::size_t i = 0; i < take; ++i) {
    const auto src = neg_features.row(static_cast<std::size_t>(order[i]));
    std::copy(src.begin(), src.end(), out.features.row(i).begin());
    out.labels.push_back(background_label);
  }
  return out;
}

/// Category-aware features F = P * M. Every row of P must be a probability
/// vector over the C+1 categories (nonnegative, summing to 1 within 1e-6).
inline Matrix generate_category_feature(const Matrix& probabilities,
                                        const CategoryMemory& mem) {
  if (probabilities.cols != mem.rows.rows)
    throw std::invalid_argument(
        "generate_category_feature: P column count != number of memory rows");
  for (std::size_t i = 0; i < probabilities.rows; ++i) {
    double sum = 0.0;
    for (double v : probabilities.row(i)) {
      if (v < 0.0)
        throw std::invalid_argument(
            "generate_category_feature: negative probability in row " +
            std::to_string(i));
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6)
      throw std::invalid_argument(
          "generate_category_feature: row " + std::to_string(i) +
          " sums to " + std::to_string(sum) + ", expected 1");
  }
  return matmul(probabilities, mem.rows);
}

/// One full memory update from a labeled feature batch: group rows by label,
/// cosine-weight each group against its current memory row, aggregate, then
/// apply the momentum update.
inline CategoryMemory update_from_batch(const CategoryMemory& mem,
                                        const FeatureBatch& batch,
                                        double eps = kAggregateEps) {
  batch.validate(mem.num_categories());
  std::vector<std::pair<int, std::vector<double>>> aggregates;
  for (int cat = 0; cat <= mem.num_categories(); ++cat) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < batch.labels.size(); ++i)
      if (batch.labels[i] == cat) members.push_back(i);
    if (members.empty()) continue;
    Matrix group(members.size(), batch.features.cols);
    for (std::size_t i = 0; i < members.size(); ++i) {
      const auto src = batch.features.row(members[i]);
      std::copy(src.begin(), src.end(), group.row(i).begin());
    }
    const auto w = cosine_weights(group, mem.rows.row(static_cast<std::size_t>(cat)));
    aggregates.emplace_back(cat, aggregate_category(group, w, eps));
  }
  return ema_update(mem, aggregates);
}

/// Memory snapshot format (little-endian): magic "DKMEM1\n", u32 C, u32 D,
/// f64 momentum, u64 seed, then (C+1)*D f64 row-major entries. Round-trips
/// bit-exactly.
inline constexpr char kMemoryMagic[] = "DKMEM1\n";

inline void save_memory(const CategoryMemory& mem, const std::string& path) {
  std::string out;
  out.append(kMemoryMagic, 7);
  detail::put_u32(out, static_cast<std::uint32_t>(mem.num_categories()));
  detail::put_u32(out, static_cast<std::uint32_t>(mem.dim()));
  detail::put_f64(out, mem.momentum);
  detail::put_u64(out, mem.seed);
  for (double v : mem.rows.data) detail::put_f64(out, v);
  detail::write_file_bytes(path, out);
}

inline CategoryMemory load_memory(const std::string& path) {
  const std::string bytes = detail::read_file_bytes(path);
  detail::ByteReader r(bytes, path);
  if (r.chars(7) != std::string(kMemoryMagic, 7))
    throw IoError(path + ": not a memory snapshot (bad magic)");
  const std::uint32_t c = r.u32();
  const std::uint32_t d = r.u32();
  CategoryMemory mem;
  mem.momentum = r.f64();
  mem.seed = r.u64();
  mem.rows = Matrix(static_cast<std::size_t>(c) + 1, d);
  r.doubles(mem.rows.data.data(), mem.rows.data.size());
  if (!r.exhausted()) throw IoError(path + ": trailing bytes after matrix");
  return mem;
}

}  // namespace detkit
