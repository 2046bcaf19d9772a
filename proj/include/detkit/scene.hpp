#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "detkit/geometry.hpp"
#include "detkit/matrix.hpp"

namespace detkit {

/// One image's ground truth plus scored predictions, the unit every assigner
/// operates on. The constructor validates the whole structure; a Scene that
/// exists is consistent:
///   - gt_boxes and gt_labels have equal length, every label is in [0, C)
///   - pred_scores is N x C with one row per prediction box
///   - every box has strictly positive area and finite coordinates
/// pred_scores holds raw per-class logits by default; callers that ingest
/// post-sigmoid probabilities say so through AssignConfig.
struct Scene {
  std::vector<BBox> gt_boxes;
  std::vector<int> gt_labels;
  std::vector<BBox> pred_boxes;
  Matrix pred_scores;  // N x C
  std::string image_id;

  Scene() = default;
  Scene(std::vector<BBox> gts, std::vector<int> labels, std::vector<BBox> preds,
        Matrix scores, std::string id = {})
      : gt_boxes(std::move(gts)),
        gt_labels(std::move(labels)),
        pred_boxes(std::move(preds)),
        pred_scores(std::move(scores)),
        image_id(std::move(id)) {
    validate();
  }

  std::size_t num_gt() const { return gt_boxes.size(); }
  std::size_t num_pred() const { return pred_boxes.size(); }
  int num_classes() const { return static_cast<int>(pred_scores.cols); }

  void validate() const {
    if (gt_boxes.size() != gt_labels.size())
      throw std::invalid_argument("Scene: gt_boxes/gt_labels length mismatch");
    if (pred_scores.rows != pred_boxes.size())
      throw std::invalid_argument("Scene: pred_scores row count != pred_boxes size");
    for (const BBox& b : gt_boxes)
      if (!box_valid(b))
        throw std::invalid_argument("Scene: invalid ground-truth box (zero or "
                                    "negative area, or non-finite coordinate)");
    for (const BBox& b : pred_boxes)
      if (!box_valid(b))
        throw std::invalid_argument("Scene: invalid prediction box");
    const int c = num_classes();
    for (int label : gt_labels)
      if (label < 0 || label >= c)
        throw std::invalid_argument("Scene: gt label " + std::to_string(label) +
                                    " outside [0, " + std::to_string(c) + ")");
    if (!pred_scores.all_finite())
      throw std::invalid_argument("Scene: non-finite prediction score");
  }
};

}  // namespace detkit
