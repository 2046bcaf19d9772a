#pragma once

#include <cmath>

namespace detkit {

/// Axis-aligned box, corner format (x1,y1) top-left, (x2,y2) bottom-right,
/// in pixel coordinates. A box is valid when x2 > x1, y2 > y1 and all
/// coordinates are finite; containers (Scene, loaders) enforce validity at
/// construction so the geometry kernels below can assume it.
struct BBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
};

struct Point {
  double x = 0.0;
  double y = 0.0;
};

inline bool box_valid(const BBox& b) {
  return std::isfinite(b.x1) && std::isfinite(b.y1) && std::isfinite(b.x2) &&
         std::isfinite(b.y2) && b.x2 > b.x1 && b.y2 > b.y1;
}

inline double area(const BBox& b) { return (b.x2 - b.x1) * (b.y2 - b.y1); }

/// Intersection over union. 0 for disjoint or merely touching boxes.
inline double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = area(a) + area(b) - inter;
  return inter / uni;
}

inline Point center(const BBox& b) {
  return Point{(b.x1 + b.x2) * 0.5, (b.y1 + b.y2) * 0.5};
}

inline double center_distance(const BBox& a, const BBox& b) {
  const Point ca = center(a);
  const Point cb = center(b);
  const double dx = ca.x - cb.x;
  const double dy = ca.y - cb.y;
  return std::sqrt(dx * dx + dy * dy);
}

/// Squared distance between centers. Orders pairs the same way as
/// center_distance and is what the top-k candidate selection ranks by.
inline double center_distance_sq(const BBox& a, const BBox& b) {
  const Point ca = center(a);
  const Point cb = center(b);
  const double dx = ca.x - cb.x;
  const double dy = ca.y - cb.y;
  return dx * dx + dy * dy;
}

/// True iff the center of `cand` lies inside `gt`, boundary inclusive.
inline bool contains_center(const BBox& gt, const BBox& cand) {
  const Point c = center(cand);
  return c.x >= gt.x1 && c.x <= gt.x2 && c.y >= gt.y1 && c.y <= gt.y2;
}

/// sqrt(area), the side length of the equivalent square.
inline double absolute_size(const BBox& b) { return std::sqrt(area(b)); }

}  // namespace detkit
