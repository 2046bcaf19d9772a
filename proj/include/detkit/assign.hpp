#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "detkit/geometry.hpp"
#include "detkit/scene.hpp"

namespace detkit {

enum class SampleRole { kNegative, kPositive, kIgnored };

/// Per-prediction verdict. `score` is the decision statistic of the assigner
/// that produced it: multi-clue confidence for mcss, IoU for iou_max and atss,
/// center distance for the distance baseline.
struct PredVerdict {
  SampleRole role = SampleRole::kNegative;
  int gt = -1;
  double score = 0.0;
};

/// Output of every assigner. Invariants, checked by the test suite:
///   - per_pred has one verdict per prediction; a prediction is positive for
///     at most one ground truth
///   - per_gt_positives[g] lists exactly the predictions whose verdict is
///     Positive(g), in ascending prediction index
///   - thresholds[g] is the per-ground-truth acceptance cutoff the assigner
///     used (meaning depends on the assigner)
struct Assignment {
  std::vector<PredVerdict> per_pred;
  std::vector<std::vector<int>> per_gt_positives;
  std::vector<double> thresholds;
};

/// How the minimum-positive-sample threshold enters the dynamic threshold.
/// kCap is min(mean + gamma*std, beta); kFloor is the max(...) reading.
enum class BetaMode { kCap, kFloor };

struct AssignConfig {
  int k = 9;
  double alpha = 0.3;
  double beta = 0.6;
  double s_max = 32.0;
  double gamma_cap = 3.0;
  bool scores_are_probabilities = false;
  BetaMode beta_mode = BetaMode::kCap;

  void validate() const {
    if (k < 1) throw std::invalid_argument("AssignConfig: k must be >= 1");
    if (!(alpha >= 0.0 && alpha <= 1.0))
      throw std::invalid_argument("AssignConfig: alpha must be in [0,1]");
    if (!(beta > 0.0 && beta <= 1.0))
      throw std::invalid_argument("AssignConfig: beta must be in (0,1]");
    if (!(s_max > 0.0)) throw std::invalid_argument("AssignConfig: s_max must be > 0");
    if (!(gamma_cap > 0.0))
      throw std::invalid_argument("AssignConfig: gamma_cap must be > 0");
  }
};

namespace detail {

// k predictions closest to gt g. Ranked by squared center distance (same
// ordering as the distance itself), ties by lower prediction index; result
// sorted ascending by (distance, index). Centers are precomputed by the
// caller so per-scene loops pay the center arithmetic once.
inline std::vector<int> topk_by_center_impl(std::span<const Point> pred_centers,
                                            const Point& gt_center, int k) {
  const std::size_t n = pred_centers.size();
  std::vector<std::pair<double, int>> heap;  // max-heap of the k best
  heap.reserve(static_cast<std::size_t>(k) + 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = pred_centers[i].x - gt_center.x;
    const double dy = pred_centers[i].y - gt_center.y;
    const std::pair<double, int> cand{dx * dx + dy * dy, static_cast<int>(i)};
    if (heap.size() < static_cast<std::size_t>(k)) {
      heap.push_back(cand);
      std::push_heap(heap.begin(), heap.end());
    } else if (cand < heap.front()) {
      std::pop_heap(heap.begin(), heap.end());
      heap.back() = cand;
      std::push_heap(heap.begin(), heap.end());
    }
  }
  std::sort(heap.begin(), heap.end());
  std::vector<int> out;
  out.reserve(heap.size());
  for (const auto& [d2, idx] : heap) out.push_back(idx);
  return out;
}

inline std::vector<Point> pred_centers_of(const Scene& scene) {
  std::vector<Point> centers;
  centers.reserve(scene.num_pred());
  for (const BBox& b : scene.pred_boxes) centers.push_back(center(b));
  return centers;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace detail

inline std::vector<int> topk_by_center(const Scene& scene, int g, int k) {
  if (g < 0 || static_cast<std::size_t>(g) >= scene.num_gt())
    throw std::out_of_range("topk_by_center: gt index out of range");
  if (k < 1) throw std::invalid_argument("topk_by_center: k must be >= 1");
  const std::vector<Point> centers = detail::pred_centers_of(scene);
  return detail::topk_by_center_impl(centers, center(scene.gt_boxes[g]), k);
}

/// Category confidence of each candidate for the class of gt g: sigmoid of
/// the raw logit in that class column, or the stored value unchanged when the
/// scene carries probabilities (which must then lie in [0,1]).
inline std::vector<double> category_confidence(const Scene& scene,
                                               std::span<const int> candidates, int g,
                                               bool scores_are_probabilities) {
  if (g < 0 || static_cast<std::size_t>(g) >= scene.num_gt())
    throw std::out_of_range("category_confidence: gt index out of range");
  const int label = scene.gt_labels[g];
  std::vector<double> out;
  out.reserve(candidates.size());
  for (int idx : candidates) {
    const double raw = scene.pred_scores(static_cast<std::size_t>(idx),
                                         static_cast<std::size_t>(label));
    if (scores_are_probabilities) {
      if (raw < 0.0 || raw > 1.0)
        throw std::invalid_argument(
            "category_confidence: score flagged as probability is outside [0,1]");
      out.push_back(raw);
    } else {
      out.push_back(detail::sigmoid(raw));
    }
  }
  return out;
}

/// Convex blend alpha*d_c + (1-alpha)*d_iou, elementwise.
inline std::vector<double> multi_clue_confidence(std::span<const double> d_c,
                                                 std::span<const double> d_iou,
                                                 double alpha) {
  if (d_c.size() != d_iou.size())
    throw std::invalid_argument("multi_clue_confidence: length mismatch");
  std::vector<double> out(d_c.size());
  const double one_minus = 1.0 - alpha;
  for (std::size_t i = 0; i < d_c.size(); ++i)
    out[i] = alpha * d_c[i] + one_minus * d_iou[i];
  return out;
}

/// Size-dependent multiplier min(s_g / s_max, cap) that scales the std term
/// of the dynamic threshold, so larger objects face stricter thresholds.
inline double standard_ratio(double s_g, double s_max, double cap) {
  if (!(s_g >= 0.0)) throw std::invalid_argument("standard_ratio: s_g must be >= 0");
  if (!(s_max > 0.0)) throw std::invalid_argument("standard_ratio: s_max must be > 0");
  return std::min(s_g / s_max, cap);
}

namespace detail {

inline std::pair<double, double> mean_and_pop_std(std::span<const double> v) {
  double sum = 0.0;
  for (double x : v) sum += x;
  const double mean = sum / static_cast<double>(v.size());
  double sq = 0.0;
  for (double x : v) sq += (x - mean) * (x - mean);
  return {mean, std::sqrt(sq / static_cast<double>(v.size()))};
}

}  // namespace detail

/// Per-ground-truth acceptance cutoff over candidate confidences:
/// min(mean + gamma*std, beta), population standard deviation, std taken as 0
/// for a single candidate. BetaMode::kFloor swaps the min for a max.
inline double dynamic_threshold(std::span<const double> confidences, double gamma,
                                double beta, BetaMode mode = BetaMode::kCap) {
  if (confidences.empty())
    throw std::invalid_argument("dynamic_threshold: empty confidence vector");
  const auto [mean, sd] = detail::mean_and_pop_std(confidences);
  const double raw = mean + gamma * sd;
  return mode == BetaMode::kCap ? std::min(raw, beta) : std::max(raw, beta);
}

/// One provisionally positive candidate for some ground truth.
struct ProvisionalPositive {
  int pred = -1;
  double score = 0.0;
};

/// Resolves predictions that are provisionally positive for several ground
/// truths: the match with the highest score survives, ties go to the lower
/// ground-truth index, the losers become negatives. Also canonicalizes the
/// output (per-gt lists in ascending prediction index).
inline Assignment resolve_duplicates(
    std::size_t n_preds, const std::vector<std::vector<ProvisionalPositive>>& per_gt,
    std::vector<double> thresholds) {
  Assignment out;
  out.thresholds = std::move(thresholds);
  out.per_pred.assign(n_preds, PredVerdict{});
  out.per_gt_positives.assign(per_gt.size(), {});

  // Best (score, lower gt) match per prediction.
  std::vector<int> best_gt(n_preds, -1);
  std::vector<double> best_score(n_preds, 0.0);
  for (std::size_t g = 0; g < per_gt.size(); ++g) {
    for (const ProvisionalPositive& p : per_gt[g]) {
      const std::size_t idx = static_cast<std::size_t>(p.pred);
      if (best_gt[idx] < 0 || p.score > best_score[idx]) {
        best_gt[idx] = static_cast<int>(g);
        best_score[idx] = p.score;
      }
    }
  }
  for (std::size_t i = 0; i < n_preds; ++i) {
    if (best_gt[i] >= 0) {
      out.per_pred[i] = PredVerdict{SampleRole::kPositive, best_gt[i], best_score[i]};
      out.per_gt_positives[static_cast<std::size_t>(best_gt[i])].push_back(
          static_cast<int>(i));
    }
  }
  return out;
}

/// Multi-clue sample selection. Per ground truth: the k nearest predictions
/// by center distance are scored with the blend of category confidence and
/// IoU, thresholded at min(mean + gamma*std, beta) with the size-dependent
/// gamma, and gated on the candidate center lying inside the ground truth.
/// Duplicate matches keep the highest-confidence ground truth. Everything
/// not matched is negative. A ground truth with no candidates (scene without
/// predictions) records beta as its threshold and gets no positives.
inline Assignment assign_mcss(const Scene& scene, const AssignConfig& cfg) {
  cfg.validate();
  const std::size_t n_gt = scene.num_gt();
  const std::size_t n_pred = scene.num_pred();
  std::vector<double> thresholds(n_gt, cfg.beta);
  std::vector<std::vector<ProvisionalPositive>> provisional(n_gt);
  const std::vector<Point> centers = detail::pred_centers_of(scene);

  std::vector<double> d_iou;
  for (std::size_t g = 0; g < n_gt; ++g) {
    const BBox& gt = scene.gt_boxes[g];
    if (n_pred == 0) continue;
    const std::vector<int> cand =
        detail::topk_by_center_impl(centers, center(gt), cfg.k);
    const std::vector<double> d_c = category_confidence(
        scene, cand, static_cast<int>(g), cfg.scores_are_probabilities);
    d_iou.clear();
    for (int idx : cand) d_iou.push_back(iou(scene.pred_boxes[idx], gt));
    const std::vector<double> conf = multi_clue_confidence(d_c, d_iou, cfg.alpha);

    const double gamma = standard_ratio(absolute_size(gt), cfg.s_max, cfg.gamma_cap);
    const double t_g = dynamic_threshold(conf, gamma, cfg.beta, cfg.beta_mode);
    thresholds[g] = t_g;

    for (std::size_t i = 0; i < cand.size(); ++i) {
      if (conf[i] >= t_g && contains_center(gt, scene.pred_boxes[cand[i]]))
        provisional[g].push_back(ProvisionalPositive{cand[i], conf[i]});
    }
  }
  return resolve_duplicates(n_pred, provisional, std::move(thresholds));
}

/// Classic max-IoU assignment. A prediction is positive for its argmax-IoU
/// ground truth when that IoU reaches pos_thresh, negative below neg_thresh,
/// ignored in between. Each ground truth additionally claims its single
/// best-IoU prediction when that IoU is positive; competing claims go to the
/// higher IoU, then the lower ground-truth index.
inline Assignment assign_iou_max(const Scene& scene, double pos_thresh = 0.5,
                                 double neg_thresh = 0.5) {
  if (!(neg_thresh >= 0.0 && neg_thresh <= pos_thresh && pos_thresh <= 1.0))
    throw std::invalid_argument(
        "assign_iou_max: need 0 <= neg_thresh <= pos_thresh <= 1");
  const std::size_t n_gt = scene.num_gt();
  const std::size_t n_pred = scene.num_pred();
  Assignment out;
  out.per_pred.assign(n_pred, PredVerdict{});
  out.per_gt_positives.assign(n_gt, {});
  out.thresholds.assign(n_gt, pos_thresh);

  std::vector<double> gt_best_iou(n_gt, 0.0);
  std::vector<int> gt_best_pred(n_gt, -1);
  for (std::size_t i = 0; i < n_pred; ++i) {
    double best = 0.0;
    int best_g = -1;
    for (std::size_t g = 0; g < n_gt; ++g) {
      const double v = iou(scene.pred_boxes[i], scene.gt_boxes[g]);
      if (v > best) {
        best = v;
        best_g = static_cast<int>(g);
      }
      if (v > gt_best_iou[g]) {
        gt_best_iou[g] = v;
        gt_best_pred[g] = static_cast<int>(i);
      }
    }
    if (best_g >= 0 && best >= pos_thresh)
      out.per_pred[i] = PredVerdict{SampleRole::kPositive, best_g, best};
    else if (best < neg_thresh || best_g < 0)
      out.per_pred[i] = PredVerdict{SampleRole::kNegative, -1, best};
    else
      out.per_pred[i] = PredVerdict{SampleRole::kIgnored, -1, best};
  }

  // Low-quality matches: every gt keeps its best prediction. A prediction
  // claimed by several gts goes to the one with the higher IoU.
  for (std::size_t g = 0; g < n_gt; ++g) {
    const int p = gt_best_pred[g];
    if (p < 0) continue;
    PredVerdict& v = out.per_pred[static_cast<std::size_t>(p)];
    const bool claimed_elsewhere = v.role == SampleRole::kPositive && v.gt >= 0 &&
                                   gt_best_pred[static_cast<std::size_t>(v.gt)] == p;
    if (claimed_elsewhere && v.score >= gt_best_iou[g]) continue;
    v = PredVerdict{SampleRole::kPositive, static_cast<int>(g), gt_best_iou[g]};
  }

  for (std::size_t i = 0; i < n_pred; ++i) {
    const PredVerdict& v = out.per_pred[i];
    if (v.role == SampleRole::kPositive)
      out.per_gt_positives[static_cast<std::size_t>(v.gt)].push_back(
          static_cast<int>(i));
  }
  return out;
}

/// Euclidean baseline: a prediction is positive for its nearest ground truth
/// (lower index on ties) when the center distance is at most
/// radius_factor * absolute_size of that ground truth. The verdict score is
/// the center distance; thresholds[g] is the radius.
inline Assignment assign_center_distance(const Scene& scene,
                                         double radius_factor = 1.0) {
  if (!(radius_factor > 0.0))
    throw std::invalid_argument("assign_center_distance: radius_factor must be > 0");
  const std::size_t n_gt = scene.num_gt();
  const std::size_t n_pred = scene.num_pred();
  Assignment out;
  out.per_pred.assign(n_pred, PredVerdict{});
  out.per_gt_positives.assign(n_gt, {});
  out.thresholds.assign(n_gt, 0.0);
  for (std::size_t g = 0; g < n_gt; ++g)
    out.thresholds[g] = radius_factor * absolute_size(scene.gt_boxes[g]);

  for (std::size_t i = 0; i < n_pred; ++i) {
    double best_d2 = 0.0;
    int best_g = -1;
    for (std::size_t g = 0; g < n_gt; ++g) {
      const double d2 = center_distance_sq(scene.pred_boxes[i], scene.gt_boxes[g]);
      if (best_g < 0 || d2 < best_d2) {
        best_d2 = d2;
        best_g = static_cast<int>(g);
      }
    }
    if (best_g < 0) continue;
    const double dist = std::sqrt(best_d2);
    if (dist <= out.thresholds[static_cast<std::size_t>(best_g)]) {
      out.per_pred[i] = PredVerdict{SampleRole::kPositive, best_g, dist};
      out.per_gt_positives[static_cast<std::size_t>(best_g)].push_back(
          static_cast<int>(i));
    } else {
      out.per_pred[i] = PredVerdict{SampleRole::kNegative, -1, dist};
    }
  }
  return out;
}

/// Statistical baseline: per ground truth, threshold the IoUs of the k
/// nearest candidates at their mean plus population std, gate on center
/// containment, resolve duplicates by highest IoU. The candidate pool is the
/// whole prediction set (no pyramid levels).
inline Assignment assign_atss(const Scene& scene, int k) {
  if (k < 1) throw std::invalid_argument("assign_atss: k must be >= 1");
  const std::size_t n_gt = scene.num_gt();
  const std::size_t n_pred = scene.num_pred();
  std::vector<double> thresholds(n_gt, 0.0);
  std::vector<std::vector<ProvisionalPositive>> provisional(n_gt);
  const std::vector<Point> centers = detail::pred_centers_of(scene);

  std::vector<double> ious;
  for (std::size_t g = 0; g < n_gt; ++g) {
    if (n_pred == 0) continue;
    const BBox& gt = scene.gt_boxes[g];
    const std::vector<int> cand = detail::topk_by_center_impl(centers, center(gt), k);
    ious.clear();
    for (int idx : cand) ious.push_back(iou(scene.pred_boxes[idx], gt));
    const auto [mean, sd] = detail::mean_and_pop_std(ious);
    const double t_g = mean + sd;
    thresholds[g] = t_g;
    for (std::size_t i = 0; i < cand.size(); ++i) {
      if (ious[i] >= t_g && contains_center(gt, scene.pred_boxes[cand[i]]))
        provisional[g].push_back(ProvisionalPositive{cand[i], ious[i]});
    }
  }
  return resolve_duplicates(n_pred, provisional, std::move(thresholds));
}

}  // namespace detkit
