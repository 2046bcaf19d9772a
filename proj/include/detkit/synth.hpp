#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "detkit/geometry.hpp"
#include "detkit/rng.hpp"
#include "detkit/scene.hpp"

namespace detkit {

/// Synthetic scene generator settings. Ground truths get absolute sizes
/// (sqrt of area) log-uniform in [size_min, size_max] with log-uniform aspect
/// in [0.5, 2], placed fully inside the image. Each ground truth spawns
/// preds_per_gt predictions whose centers are jittered by a normal with
/// per-axis sigma max(center_jitter_sigma * S_g, center_jitter_floor_px) and
/// whose sides are jittered in log space. The floor models the absolute
/// localization error real detectors carry, which is what starves small
/// objects of overlap; set it to 0 for purely size-proportional noise.
/// The true-class logit of each prediction is logit(clip(IoU to its parent,
/// 1e-4, 1-1e-4)) plus noise; other class logits are pure noise.
struct SynthConfig {
  std::uint64_t seed = 0;
  double image_w = 448.0;
  double image_h = 448.0;
  int n_gt = 64;
  double size_min = 4.0;
  double size_max = 256.0;
  int preds_per_gt = 7;
  double center_jitter_sigma = 0.15;    // fraction of gt absolute size
  double center_jitter_floor_px = 1.5;  // absolute sigma floor, pixels
  double scale_jitter_sigma = 0.12;     // log-space sigma on each side length
  double score_noise_sigma = 1.0;       // logit-space noise on every class
  int n_classes = 3;
  int max_attempts = 1000;  // per-box rejection-sampling budget

  void validate() const {
    if (!(image_w > 0.0 && image_h > 0.0))
      throw std::invalid_argument("SynthConfig: image size must be positive");
    if (n_gt < 1) throw std::invalid_argument("SynthConfig: n_gt must be >= 1");
    if (!(size_min > 0.0 && size_max >= size_min))
      throw std::invalid_argument("SynthConfig: need 0 < size_min <= size_max");
    if (preds_per_gt < 1)
      throw std::invalid_argument("SynthConfig: preds_per_gt must be >= 1");
    if (center_jitter_sigma < 0.0 || center_jitter_floor_px < 0.0 ||
        scale_jitter_sigma < 0.0 || score_noise_sigma < 0.0)
      throw std::invalid_argument("SynthConfig: sigmas must be >= 0");
    if (n_classes < 1) throw std::invalid_argument("SynthConfig: n_classes >= 1");
    if (max_attempts < 1)
      throw std::invalid_argument("SynthConfig: max_attempts must be >= 1");
  }
};

namespace detail {

inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline BBox box_from_center(double cx, double cy, double w, double h) {
  return BBox{cx - w * 0.5, cy - h * 0.5, cx + w * 0.5, cy + h * 0.5};
}

inline bool inside_image(const BBox& b, double image_w, double image_h) {
  return b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= image_w && b.y2 <= image_h;
}

}  // namespace detail

/// Deterministic scene for (cfg.seed, index). Draw order is fixed: per ground
/// truth its label, then placement attempts of (size, aspect, cx, cy), then
/// per prediction jitter attempts of (dx, dy, eps_w, eps_h) followed by the
/// class score noise. Predictions are rejection-sampled until they lie fully
/// inside the image; zero-noise configurations reproduce the parent box and
/// succeed on the first attempt.
inline Scene generate_scene(const SynthConfig& cfg, int index) {
  cfg.validate();
  Rng rng(cfg.seed, static_cast<std::uint64_t>(index));

  const double log_lo = std::log(cfg.size_min);
  const double log_hi = std::log(cfg.size_max);
  const double log_aspect = std::log(2.0);

  std::vector<BBox> gts;
  std::vector<int> labels;
  std::vector<BBox> preds;
  const std::size_t n_pred_total =
      static_cast<std::size_t>(cfg.n_gt) * static_cast<std::size_t>(cfg.preds_per_gt);
  Matrix scores(n_pred_total, static_cast<std::size_t>(cfg.n_classes));
  preds.reserve(n_pred_total);

  std::size_t pred_row = 0;
  for (int g = 0; g < cfg.n_gt; ++g) {
    const int label = static_cast<int>(rng.uniform_index(cfg.n_classes));

    BBox gt;
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
      const double s = std::exp(rng.uniform(log_lo, log_hi));
      const double aspect = std::exp(rng.uniform(-log_aspect, log_aspect));
      const double w = s * std::sqrt(aspect);
      const double h = s / std::sqrt(aspect);
      if (w > cfg.image_w || h > cfg.image_h) continue;
      const double cx = rng.uniform(w * 0.5, cfg.image_w - w * 0.5);
      const double cy = rng.uniform(h * 0.5, cfg.image_h - h * 0.5);
      BBox b = detail::box_from_center(cx, cy, w, h);
      // Clamp away sub-ulp overshoot from the center arithmetic.
      b.x1 = std::max(b.x1, 0.0);
      b.y1 = std::max(b.y1, 0.0);
      b.x2 = std::min(b.x2, cfg.image_w);
      b.y2 = std::min(b.y2, cfg.image_h);
      if (box_valid(b) && detail::inside_image(b, cfg.image_w, cfg.image_h)) {
        gt = b;
        placed = true;
        break;
      }
    }
    if (!placed)
      throw std::runtime_error(
          "generate_scene: could not place a ground truth inside the image in " +
          std::to_string(cfg.max_attempts) + " attempts (size range vs image size)");
    gts.push_back(gt);
    labels.push_back(label);

    const double s_g = absolute_size(gt);
    const double jitter_sigma =
        std::max(cfg.center_jitter_sigma * s_g, cfg.center_jitter_floor_px);

    for (int p = 0; p < cfg.preds_per_gt; ++p) {
      BBox pred;
      bool ok = false;
      for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
        const double dx = rng.normal(0.0, jitter_sigma);
        const double dy = rng.normal(0.0, jitter_sigma);
        const double dw = gt.width() * std::expm1(rng.normal(0.0, cfg.scale_jitter_sigma));
        const double dh = gt.height() * std::expm1(rng.normal(0.0, cfg.scale_jitter_sigma));
        // Corner form of "shift by (dx,dy), rescale about the center": the
        // zero-noise limit reproduces the parent box bit-exactly.
        const BBox b{gt.x1 + dx - dw * 0.5, gt.y1 + dy - dh * 0.5,
                     gt.x2 + dx + dw * 0.5, gt.y2 + dy + dh * 0.5};
        if (box_valid(b) && detail::inside_image(b, cfg.image_w, cfg.image_h)) {
          pred = b;
          ok = true;
          break;
        }
      }
      if (!ok)
        throw std::runtime_error(
            "generate_scene: could not place a prediction inside the image in " +
            std::to_string(cfg.max_attempts) + " attempts");
      preds.push_back(pred);

      const double quality =
          std::min(std::max(iou(pred, gt), 1e-4), 1.0 - 1e-4);
      auto row = scores.row(pred_row++);
      for (int c = 0; c < cfg.n_classes; ++c)
        row[static_cast<std::size_t>(c)] = rng.normal(0.0, cfg.score_noise_sigma);
      row[static_cast<std::size_t>(label)] += detail::logit(quality);
    }
  }

  return Scene(std::move(gts), std::move(labels), std::move(preds), std::move(scores),
               "synth-" + std::to_string(cfg.seed) + "-" + std::to_string(index));
}

/// Object-size strata by box area in square pixels.
enum class SizeBucket { kExtremelySmall = 0, kRelativelySmall, kGenerallySmall, kNormal };

inline constexpr int kNumBuckets = 4;

/// eS (0,144], rS (144,400], gS (400,1024], Normal above 1024.
inline SizeBucket size_bucket(double box_area) {
  if (!(box_area > 0.0))
    throw std::invalid_argument("size_bucket: area must be positive");
  if (box_area <= 144.0) return SizeBucket::kExtremelySmall;
  if (box_area <= 400.0) return SizeBucket::kRelativelySmall;
  if (box_area <= 1024.0) return SizeBucket::kGenerallySmall;
  return SizeBucket::kNormal;
}

inline const char* to_string(SizeBucket b) {
  switch (b) {
    case SizeBucket::kExtremelySmall: return "eS";
    case SizeBucket::kRelativelySmall: return "rS";
    case SizeBucket::kGenerallySmall: return "gS";
    case SizeBucket::kNormal: return "Normal";
  }
  return "?";
}

}  // namespace detkit
