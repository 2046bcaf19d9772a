#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "detkit/assign.hpp"
#include "detkit/io.hpp"
#include "detkit/scene.hpp"
#include "detkit/stats.hpp"

namespace detkit {

/// Raised for structurally broken input documents (bad JSON, missing or
/// mistyped fields, dangling references). Per-record data problems that the
/// schema allows skipping (zero-area ground-truth boxes) go into rejection
/// reports instead.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RejectedAnnotation {
  std::int64_t annotation_id = 0;
  std::string reason;
};

/// Parsed ground-truth file. Every image from the document appears in
/// by_image (possibly with no boxes); label indices are positions in
/// `categories`, which is sorted by category id.
struct GroundTruthData {
  std::map<std::string, std::pair<std::vector<BBox>, std::vector<int>>> by_image;
  std::vector<std::pair<std::int64_t, std::string>> categories;
  std::vector<RejectedAnnotation> rejected;

  int num_categories() const { return static_cast<int>(categories.size()); }
};

struct PredictionData {
  std::map<std::string, std::pair<std::vector<BBox>, std::vector<std::vector<double>>>>
      by_image;
  int n_classes = 0;
};

namespace detail {

inline nlohmann::json parse_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open for reading");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
}

inline std::string id_to_string(const nlohmann::json& v, const std::string& context) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  throw ParseError(context + ": id must be an integer or a string");
}

inline const nlohmann::json& field(const nlohmann::json& obj, const char* name,
                                   const std::string& context) {
  const auto it = obj.find(name);
  if (it == obj.end())
    throw ParseError(context + ": missing field '" + name + "'");
  return *it;
}

inline double number_field(const nlohmann::json& obj, const char* name,
                           const std::string& context) {
  const auto& v = field(obj, name, context);
  if (!v.is_number()) throw ParseError(context + ": field '" + name + "' not a number");
  return v.get<double>();
}

// [x, y, w, h] to corner form; returns false (with reason) for degenerate
// boxes rather than throwing, so callers can reject per record.
inline bool xywh_to_corners(const nlohmann::json& arr, const std::string& context,
                            BBox& out, std::string& reason) {
  if (!arr.is_array() || arr.size() != 4)
    throw ParseError(context + ": bbox must be [x, y, w, h]");
  for (const auto& v : arr)
    if (!v.is_number()) throw ParseError(context + ": bbox entries must be numbers");
  const double x = arr[0].get<double>();
  const double y = arr[1].get<double>();
  const double w = arr[2].get<double>();
  const double h = arr[3].get<double>();
  out = BBox{x, y, x + w, y + h};
  if (!box_valid(out)) {
    reason = w <= 0.0 || h <= 0.0 ? "zero or negative box area"
                                  : "non-finite box coordinate";
    return false;
  }
  return true;
}

inline std::string fmt_g6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

inline std::string json_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\u%04x", c);
          out += buf;
        } else {
          out += c;
        }
    }
  }
  return out;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path + ": cannot open for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError(path + ": write failed");
}

}  // namespace detail

/// Loads a COCO-style annotation document: top-level `images` (id, width,
/// height), `annotations` (image_id, category_id, bbox [x,y,w,h]) and
/// `categories` (id, name). Boxes come back in corner form. Zero- or
/// negative-area annotations land in the rejection report with their
/// annotation id; every other inconsistency is an error.
inline GroundTruthData load_ground_truth(const std::string& path) {
  const nlohmann::json doc = detail::parse_json_file(path);
  if (!doc.is_object()) throw ParseError(path + ": top level must be an object");
  GroundTruthData out;

  for (const char* key : {"images", "annotations", "categories"})
    if (!detail::field(doc, key, path).is_array())
      throw ParseError(path + ": '" + key + "' must be an array");

  std::map<std::int64_t, int> label_of_category;
  for (const auto& cat : doc["categories"]) {
    const std::string ctx = path + ": categories";
    const auto id = static_cast<std::int64_t>(detail::number_field(cat, "id", ctx));
    const auto& name = detail::field(cat, "name", ctx);
    if (!name.is_string()) throw ParseError(ctx + ": 'name' must be a string");
    out.categories.emplace_back(id, name.get<std::string>());
  }
  std::sort(out.categories.begin(), out.categories.end());
  for (std::size_t i = 0; i < out.categories.size(); ++i) {
    if (!label_of_category.emplace(out.categories[i].first, static_cast<int>(i)).second)
      throw ParseError(path + ": duplicate category id " +
                       std::to_string(out.categories[i].first));
  }

  for (const auto& img : doc["images"]) {
    const std::string id = detail::id_to_string(detail::field(img, "id", path + ": images"),
                                                path + ": images");
    out.by_image.emplace(id, std::pair<std::vector<BBox>, std::vector<int>>{});
  }

  std::size_t index = 0;
  for (const auto& ann : doc["annotations"]) {
    const std::string ctx = path + ": annotations[" + std::to_string(index) + "]";
    std::int64_t ann_id = static_cast<std::int64_t>(index);
    if (const auto it = ann.find("id"); it != ann.end() && it->is_number_integer())
      ann_id = it->get<std::int64_t>();

    const std::string image_id =
        detail::id_to_string(detail::field(ann, "image_id", ctx), ctx);
    const auto image_it = out.by_image.find(image_id);
    if (image_it == out.by_image.end())
      throw ParseError(ctx + ": references unknown image id '" + image_id + "'");

    const auto cat_id =
        static_cast<std::int64_t>(detail::number_field(ann, "category_id", ctx));
    const auto label_it = label_of_category.find(cat_id);
    if (label_it == label_of_category.end())
      throw ParseError(ctx + ": unknown category_id " + std::to_string(cat_id));

    BBox box;
    std::string reason;
    if (!detail::xywh_to_corners(detail::field(ann, "bbox", ctx), ctx, box, reason)) {
      out.rejected.push_back({ann_id, reason});
    } else {
      image_it->second.first.push_back(box);
      image_it->second.second.push_back(label_it->second);
    }
    ++index;
  }
  return out;
}

/// Loads per-class-scored predictions: an array of records with image_id,
/// bbox [x,y,w,h] and a scores array of exactly n_classes entries. With
/// scores_are_probabilities set, every score must lie in [0,1]. Any bad
/// record is an error naming its index; detections carrying a single class
/// score cannot feed category confidence and are rejected the same way.
inline PredictionData load_predictions(const std::string& path, int n_classes,
                                       bool scores_are_probabilities) {
  if (n_classes < 1) throw std::invalid_argument("load_predictions: n_classes >= 1");
  const nlohmann::json doc = detail::parse_json_file(path);
  if (!doc.is_array()) throw ParseError(path + ": top level must be an array");
  PredictionData out;
  out.n_classes = n_classes;

  std::size_t index = 0;
  for (const auto& rec : doc) {
    const std::string ctx = path + ": record " + std::to_string(index);
    const std::string image_id =
        detail::id_to_string(detail::field(rec, "image_id", ctx), ctx);

    BBox box;
    std::string reason;
    if (!detail::xywh_to_corners(detail::field(rec, "bbox", ctx), ctx, box, reason))
      throw ParseError(ctx + ": " + reason);

    const auto& scores = detail::field(rec, "scores", ctx);
    if (!scores.is_array() || scores.size() != static_cast<std::size_t>(n_classes))
      throw ParseError(ctx + ": scores must be an array of length " +
                       std::to_string(n_classes));
    std::vector<double> row;
    row.reserve(scores.size());
    for (const auto& v : scores) {
      if (!v.is_number()) throw ParseError(ctx + ": scores entries must be numbers");
      const double s = v.get<double>();
      if (scores_are_probabilities && (s < 0.0 || s > 1.0))
        throw ParseError(ctx + ": score " + detail::fmt_g6(s) +
                         " flagged as probability is outside [0,1]");
      row.push_back(s);
    }

    auto& slot = out.by_image[image_id];
    slot.first.push_back(box);
    slot.second.push_back(std::move(row));
    ++index;
  }
  return out;
}

/// Joins ground truth and predictions into Scenes, one per image in the
/// ground-truth document (images without predictions become scenes with an
/// empty prediction set). Predictions for unknown images are an error.
inline std::vector<Scene> build_scenes(const GroundTruthData& gt,
                                       const PredictionData& preds) {
  for (const auto& [image_id, unused] : preds.by_image)
    if (gt.by_image.find(image_id) == gt.by_image.end())
      throw ParseError("predictions reference unknown image id '" + image_id + "'");

  std::vector<Scene> scenes;
  scenes.reserve(gt.by_image.size());
  for (const auto& [image_id, boxes_labels] : gt.by_image) {
    std::vector<BBox> pred_boxes;
    Matrix scores(0, static_cast<std::size_t>(preds.n_classes));
    if (const auto it = preds.by_image.find(image_id); it != preds.by_image.end()) {
      pred_boxes = it->second.first;
      scores = Matrix(pred_boxes.size(), static_cast<std::size_t>(preds.n_classes));
      for (std::size_t i = 0; i < pred_boxes.size(); ++i)
        std::copy(it->second.second[i].begin(), it->second.second[i].end(),
                  scores.row(i).begin());
    }
    scenes.emplace_back(boxes_labels.first, boxes_labels.second, std::move(pred_boxes),
                        std::move(scores), image_id);
  }
  return scenes;
}

/// Writes a scene set back out in the two document schemas above, full float
/// precision, so a write/load round trip reproduces the scenes.
inline void write_scenes(std::span<const Scene> scenes, const std::string& gt_path,
                         const std::string& pred_path, double image_w, double image_h) {
  nlohmann::ordered_json gt_doc;
  gt_doc["images"] = nlohmann::json::array();
  gt_doc["annotations"] = nlohmann::json::array();
  gt_doc["categories"] = nlohmann::json::array();
  nlohmann::ordered_json pred_doc = nlohmann::json::array();

  int n_classes = 0;
  for (const Scene& s : scenes) n_classes = std::max(n_classes, s.num_classes());
  for (int c = 0; c < n_classes; ++c)
    gt_doc["categories"].push_back({{"id", c}, {"name", "class_" + std::to_string(c)}});

  std::int64_t ann_id = 0;
  for (const Scene& scene : scenes) {
    gt_doc["images"].push_back(
        {{"id", scene.image_id}, {"width", image_w}, {"height", image_h}});
    for (std::size_t g = 0; g < scene.num_gt(); ++g) {
      const BBox& b = scene.gt_boxes[g];
      gt_doc["annotations"].push_back({{"id", ann_id++},
                                       {"image_id", scene.image_id},
                                       {"category_id", scene.gt_labels[g]},
                                       {"bbox", {b.x1, b.y1, b.width(), b.height()}}});
    }
    for (std::size_t i = 0; i < scene.num_pred(); ++i) {
      const BBox& b = scene.pred_boxes[i];
      nlohmann::ordered_json rec;
      rec["image_id"] = scene.image_id;
      rec["bbox"] = {b.x1, b.y1, b.width(), b.height()};
      rec["scores"] = std::vector<double>(scene.pred_scores.row(i).begin(),
                                          scene.pred_scores.row(i).end());
      pred_doc.push_back(std::move(rec));
    }
  }
  detail::write_text_file(gt_path, gt_doc.dump(2) + "\n");
  detail::write_text_file(pred_path, pred_doc.dump(2) + "\n");
}

enum class ReportFormat { kJson, kCsv };

inline ReportFormat report_format_from(const std::string& name) {
  if (name == "json") return ReportFormat::kJson;
  if (name == "csv") return ReportFormat::kCsv;
  throw std::invalid_argument("unknown format '" + name + "' (valid: json, csv)");
}

/// Writes the bucket-statistics report. Output is byte-deterministic: fixed
/// key order, buckets always in eS, rS, gS, Normal order, floats at six
/// significant digits.
inline void write_report(const BucketReport& report, const std::string& path,
                         ReportFormat format) {
  std::string out;
  if (format == ReportFormat::kCsv) {
    out += "assigner,bucket,gt_count,mean_positives,std_positives\n";
    for (const auto& a : report.per_assigner)
      for (const auto& row : a.rows)
        out += a.assigner + "," + to_string(row.bucket) + "," +
               std::to_string(row.gt_count) + "," + detail::fmt_g6(row.mean_positives) +
               "," + detail::fmt_g6(row.std_positives) + "\n";
  } else {
    out += "{\n";
    out += "  \"n_scenes\": " + std::to_string(report.n_scenes) + ",\n";
    out += "  \"total_gt\": " + std::to_string(report.total_gt) + ",\n";
    out += "  \"assigners\": [\n";
    for (std::size_t a = 0; a < report.per_assigner.size(); ++a) {
      const auto& st = report.per_assigner[a];
      out += "    {\"name\": \"" + detail::json_escape(st.assigner) + "\", ";
      out += "\"cov_mean_positives\": " + detail::fmt_g6(st.cov) + ", ";
      out += "\"buckets\": [\n";
      for (std::size_t b = 0; b < st.rows.size(); ++b) {
        const auto& row = st.rows[b];
        out += std::string("      {\"bucket\": \"") + to_string(row.bucket) + "\", ";
        out += "\"gt_count\": " + std::to_string(row.gt_count) + ", ";
        out += "\"mean_positives\": " + detail::fmt_g6(row.mean_positives) + ", ";
        out += "\"std_positives\": " + detail::fmt_g6(row.std_positives) + "}";
        out += b + 1 < st.rows.size() ? ",\n" : "\n";
      }
      out += "    ]}";
      out += a + 1 < report.per_assigner.size() ? ",\n" : "\n";
    }
    out += "  ]\n}\n";
  }
  detail::write_text_file(path, out);
}

/// Writes per-prediction verdicts and per-ground-truth positive lists for a
/// batch of scenes. CSV rows are scene,pred,role,gt,score; JSON additionally
/// carries thresholds and the per-gt lists. Byte-deterministic.
inline void write_assignments(const std::string& assigner,
                              std::span<const Scene> scenes,
                              std::span<const Assignment> assignments,
                              const std::string& path, ReportFormat format) {
  if (scenes.size() != assignments.size())
    throw std::invalid_argument("write_assignments: scene/assignment count mismatch");
  auto role_name = [](SampleRole r) {
    switch (r) {
      case SampleRole::kPositive: return "positive";
      case SampleRole::kNegative: return "negative";
      case SampleRole::kIgnored: return "ignored";
    }
    return "?";
  };

  std::string out;
  if (format == ReportFormat::kCsv) {
    out += "scene,image_id,pred,role,gt,score\n";
    for (std::size_t s = 0; s < scenes.size(); ++s) {
      const Assignment& asg = assignments[s];
      for (std::size_t i = 0; i < asg.per_pred.size(); ++i) {
        const PredVerdict& v = asg.per_pred[i];
        out += std::to_string(s) + "," + scenes[s].image_id + "," + std::to_string(i) +
               "," + role_name(v.role) + "," + std::to_string(v.gt) + "," +
               detail::fmt_g6(v.score) + "\n";
      }
    }
  } else {
    out += "{\n  \"assigner\": \"" + detail::json_escape(assigner) + "\",\n";
    out += "  \"scenes\": [\n";
    for (std::size_t s = 0; s < scenes.size(); ++s) {
      const Assignment& asg = assignments[s];
      out += "    {\"image_id\": \"" + detail::json_escape(scenes[s].image_id) + "\",\n";
      out += "     \"thresholds\": [";
      for (std::size_t g = 0; g < asg.thresholds.size(); ++g)
        out += (g ? ", " : "") + detail::fmt_g6(asg.thresholds[g]);
      out += "],\n     \"per_pred\": [";
      for (std::size_t i = 0; i < asg.per_pred.size(); ++i) {
        const PredVerdict& v = asg.per_pred[i];
        out += i ? ",\n                  " : "";
        out += std::string("{\"role\": \"") + role_name(v.role) +
               "\", \"gt\": " + std::to_string(v.gt) +
               ", \"score\": " + detail::fmt_g6(v.score) + "}";
      }
      out += "],\n     \"per_gt_positives\": [";
      for (std::size_t g = 0; g < asg.per_gt_positives.size(); ++g) {
        out += g ? ", [" : "[";
        for (std::size_t j = 0; j < asg.per_gt_positives[g].size(); ++j)
          out += (j ? ", " : "") + std::to_string(asg.per_gt_positives[g][j]);
        out += "]";
      }
      out += "]}";
      out += s + 1 < scenes.size() ? ",\n" : "\n";
    }
    out += "  ]\n}\n";
  }
  detail::write_text_file(path, out);
}

struct TrajectoryRow {
  int iteration = 0;
  int category = 0;
  double distance = 0.0;
};

/// Memory-simulation trajectory: per iteration, the distance of each memory
/// row to its cluster mean.
inline void write_trajectory(std::span<const TrajectoryRow> rows,
                             const std::string& path, ReportFormat format) {
  std::string out;
  if (format == ReportFormat::kCsv) {
    out += "iteration,category,distance\n";
    for (const auto& r : rows)
      out += std::to_string(r.iteration) + "," + std::to_string(r.category) + "," +
             detail::fmt_g6(r.distance) + "\n";
  } else {
    out += "[\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out += "  {\"iteration\": " + std::to_string(rows[i].iteration) +
             ", \"category\": " + std::to_string(rows[i].category) +
             ", \"distance\": " + detail::fmt_g6(rows[i].distance) + "}";
      out += i + 1 < rows.size() ? ",\n" : "\n";
    }
    out += "]\n";
  }
  detail::write_text_file(path, out);
}

}  // namespace detkit
