#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "detkit/assign.hpp"
#include "detkit/scene.hpp"
#include "detkit/synth.hpp"

namespace detkit {

/// Baseline assigner knobs the stats harness forwards by name.
struct BaselineConfig {
  double iou_pos_thresh = 0.5;
  double iou_neg_thresh = 0.5;
  double center_radius_factor = 1.0;
};

inline const std::vector<std::string>& assigner_names() {
  static const std::vector<std::string> names{"mcss", "iou_max", "center", "atss"};
  return names;
}

inline void validate_assigner_name(const std::string& name) {
  const auto& names = assigner_names();
  if (std::find(names.begin(), names.end(), name) != names.end()) return;
  std::string valid;
  for (const auto& n : names) valid += (valid.empty() ? "" : ", ") + n;
  throw std::invalid_argument("unknown assigner '" + name + "' (valid: " + valid + ")");
}

inline Assignment run_assigner(const std::string& name, const Scene& scene,
                               const AssignConfig& cfg, const BaselineConfig& base) {
  if (name == "mcss") return assign_mcss(scene, cfg);
  if (name == "iou_max")
    return assign_iou_max(scene, base.iou_pos_thresh, base.iou_neg_thresh);
  if (name == "center") return assign_center_distance(scene, base.center_radius_factor);
  if (name == "atss") return assign_atss(scene, cfg.k);
  validate_assigner_name(name);
  throw std::invalid_argument("unreachable");
}

struct BucketRow {
  SizeBucket bucket = SizeBucket::kExtremelySmall;
  std::int64_t gt_count = 0;
  double mean_positives = 0.0;
  double std_positives = 0.0;
};

struct AssignerBucketStats {
  std::string assigner;
  std::array<BucketRow, kNumBuckets> rows;
  /// Coefficient of variation of mean_positives across populated buckets
  /// (population std over mean); 0 when at most one bucket is populated or
  /// all means are 0.
  double cov = 0.0;
};

/// The sample-balance report: per assigner, per size bucket, the mean and
/// spread of the number of positives each ground truth received.
struct BucketReport {
  std::vector<AssignerBucketStats> per_assigner;
  std::int64_t total_gt = 0;
  int n_scenes = 0;
};

namespace detail {

// Integer accumulators so that merging chunks is exact and the totals do not
// depend on scene processing order or worker count.
struct BucketAccum {
  std::int64_t count = 0;
  std::int64_t sum = 0;
  std::int64_t sum_sq = 0;

  void add(std::int64_t positives) {
    ++count;
    sum += positives;
    sum_sq += positives * positives;
  }
  void merge(const BucketAccum& o) {
    count += o.count;
    sum += o.sum;
    sum_sq += o.sum_sq;
  }
};

inline void accumulate_scene(const Scene& scene, const Assignment& assignment,
                             std::array<BucketAccum, kNumBuckets>& acc) {
  for (std::size_t g = 0; g < scene.num_gt(); ++g) {
    const auto bucket = static_cast<std::size_t>(size_bucket(area(scene.gt_boxes[g])));
    acc[bucket].add(static_cast<std::int64_t>(assignment.per_gt_positives[g].size()));
  }
}

inline double cov_of(const std::array<BucketRow, kNumBuckets>& rows) {
  std::vector<double> means;
  for (const auto& r : rows)
    if (r.gt_count > 0) means.push_back(r.mean_positives);
  if (means.size() < 2) return 0.0;
  double mean = 0.0;
  for (double m : means) mean += m;
  mean /= static_cast<double>(means.size());
  if (mean == 0.0) return 0.0;
  double var = 0.0;
  for (double m : means) var += (m - mean) * (m - mean);
  var /= static_cast<double>(means.size());
  return std::sqrt(var) / mean;
}

}  // namespace detail

/// Runs every named assigner over the same n_scenes generated scenes and
/// aggregates positives-per-ground-truth by size bucket. Scenes are processed
/// by `threads` workers (0 means hardware concurrency); the aggregation is
/// exact integer arithmetic, so the report does not depend on thread count.
inline BucketReport run_bucket_stats(const SynthConfig& synth_cfg,
                                     const AssignConfig& assign_cfg,
                                     const BaselineConfig& base_cfg,
                                     const std::vector<std::string>& assigners,
                                     int n_scenes, int threads = 0) {
  if (assigners.empty())
    throw std::invalid_argument("run_bucket_stats: empty assigner list");
  if (n_scenes < 1) throw std::invalid_argument("run_bucket_stats: n_scenes >= 1");
  for (const auto& name : assigners) validate_assigner_name(name);
  synth_cfg.validate();
  assign_cfg.validate();

  unsigned n_workers = threads > 0 ? static_cast<unsigned>(threads)
                                   : std::max(1u, std::thread::hardware_concurrency());
  n_workers = std::min<unsigned>(n_workers, static_cast<unsigned>(n_scenes));

  using AssignerAccum = std::vector<std::array<detail::BucketAccum, kNumBuckets>>;
  std::vector<AssignerAccum> partials(
      n_workers, AssignerAccum(assigners.size()));

  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&](unsigned w) {
    try {
      AssignerAccum& acc = partials[w];
      for (int s = static_cast<int>(w); s < n_scenes;
           s += static_cast<int>(n_workers)) {
        const Scene scene = generate_scene(synth_cfg, s);
        for (std::size_t a = 0; a < assigners.size(); ++a) {
          const Assignment assignment =
              run_assigner(assigners[a], scene, assign_cfg, base_cfg);
          detail::accumulate_scene(scene, assignment, acc[a]);
        }
      }
    } catch (...) {
      const std::lock_guard<std::mutex> lock(error_mutex);
      if (!first_error) first_error = std::current_exception();
    }
  };

  if (n_workers == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_workers);
    for (unsigned w = 0; w < n_workers; ++w) pool.emplace_back(worker, w);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  BucketReport report;
  report.n_scenes = n_scenes;
  for (std::size_t a = 0; a < assigners.size(); ++a) {
    AssignerBucketStats stats;
    stats.assigner = assigners[a];
    for (int b = 0; b < kNumBuckets; ++b) {
      detail::BucketAccum merged;
      for (unsigned w = 0; w < n_workers; ++w) merged.merge(partials[w][a][b]);
      BucketRow& row = stats.rows[static_cast<std::size_t>(b)];
      row.bucket = static_cast<SizeBucket>(b);
      row.gt_count = merged.count;
      if (merged.count > 0) {
        const double n = static_cast<double>(merged.count);
        row.mean_positives = static_cast<double>(merged.sum) / n;
        const double var = static_cast<double>(merged.sum_sq) / n -
                           row.mean_positives * row.mean_positives;
        row.std_positives = std::sqrt(std::max(var, 0.0));
      }
      if (a == 0) report.total_gt += merged.count;
    }
    stats.cov = detail::cov_of(stats.rows);
    report.per_assigner.push_back(std::move(stats));
  }
  return report;
}

}  // namespace detkit
