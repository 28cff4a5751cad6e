#pragma once

#include <algorithm>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vcmqp/error.hpp"

namespace vcmqp {

/// Axis-aligned rectangle in pixel units. Extents are validated non-negative;
/// coordinates stay real-valued because detectors emit fractional boxes.
struct Rect {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  Rect() = default;
  Rect(double x_, double y_, double w_, double h_) : x(x_), y(y_), w(w_), h(h_) {
    if (w < 0.0 || h < 0.0)
      throw DataError("Rect: negative extent (" + std::to_string(w) + "x" + std::to_string(h) + ")");
  }

  double area() const { return w * h; }
  double right() const { return x + w; }
  double bottom() const { return y + h; }

  bool operator==(const Rect&) const = default;
};

/// Area of the rectangle intersection; 0 when disjoint or edge-touching.
inline double overlap_area(const Rect& a, const Rect& b) {
  const double ow = std::min(a.right(), b.right()) - std::max(a.x, b.x);
  const double oh = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
  if (ow <= 0.0 || oh <= 0.0) return 0.0;
  return ow * oh;
}

/// Overlap normalized by the smaller of the two areas. Equals 1 exactly when
/// the smaller rectangle lies inside the larger one, 0 when they are disjoint.
inline double relative_overlap(const Rect& ctu, const Rect& det) {
  if (!(det.area() > 0.0)) throw DataError("relative_overlap: zero-area detection");
  if (!(ctu.area() > 0.0)) throw DataError("relative_overlap: zero-area CTU");
  return overlap_area(ctu, det) / std::min(ctu.area(), det.area());
}

/// Tiling of an image into fixed-size CTUs, row-major. Border tiles are
/// clipped to the image bounds, so every pixel belongs to exactly one CTU.
struct CtuGrid {
  int image_width = 0;
  int image_height = 0;
  int ctu_size = 128;
  int cols = 0;
  int rows = 0;

  CtuGrid() = default;
  CtuGrid(int image_width_, int image_height_, int ctu_size_ = 128)
      : image_width(image_width_), image_height(image_height_), ctu_size(ctu_size_) {
    if (image_width <= 0 || image_height <= 0)
      throw DataError("CtuGrid: image dimensions must be positive");
    if (ctu_size <= 0) throw DataError("CtuGrid: ctu_size must be positive");
    cols = (image_width + ctu_size - 1) / ctu_size;
    rows = (image_height + ctu_size - 1) / ctu_size;
  }

  int ctu_count() const { return cols * rows; }

  /// k-th CTU rectangle in row-major order, clipped to the image.
  Rect ctu_rect(int k) const {
    if (k < 0 || k >= ctu_count())
      throw std::out_of_range("CtuGrid: CTU index " + std::to_string(k) + " out of range [0," +
                              std::to_string(ctu_count()) + ")");
    const int cx = (k % cols) * ctu_size;
    const int cy = (k / cols) * ctu_size;
    return Rect(cx, cy, std::min(ctu_size, image_width - cx), std::min(ctu_size, image_height - cy));
  }

  /// Index of the CTU containing pixel (x, y).
  int ctu_index_of(int x, int y) const {
    if (x < 0 || y < 0 || x >= image_width || y >= image_height)
      throw std::out_of_range("CtuGrid: pixel out of image bounds");
    return (y / ctu_size) * cols + (x / ctu_size);
  }

  bool operator==(const CtuGrid&) const = default;
};

inline Rect ctu_rect(const CtuGrid& grid, int k) { return grid.ctu_rect(k); }

/// Per-CTU binary saliency decision, row-major; true marks a salient CTU.
struct SaliencyMask {
  CtuGrid grid;
  std::vector<bool> flags;

  SaliencyMask() = default;
  SaliencyMask(CtuGrid grid_, std::vector<bool> flags_) : grid(grid_), flags(std::move(flags_)) {
    if (static_cast<int>(flags.size()) != grid.ctu_count())
      throw DataError("SaliencyMask: flag count does not match grid");
  }

  static SaliencyMask all(const CtuGrid& grid, bool value) {
    return SaliencyMask(grid, std::vector<bool>(grid.ctu_count(), value));
  }

  bool operator==(const SaliencyMask&) const = default;
};

/// Marks CTU k salient when some detection's relative overlap with it is
/// strictly greater than theta. An empty detection list yields no salient CTUs.
inline SaliencyMask decide_saliency(const CtuGrid& grid, std::span<const Rect> detections, double theta) {
  if (!(theta >= 0.0 && theta < 1.0))
    throw DataError("decide_saliency: theta must lie in [0,1), got " + std::to_string(theta));
  SaliencyMask mask = SaliencyMask::all(grid, false);
  for (int k = 0; k < grid.ctu_count(); ++k) {
    const Rect cell = grid.ctu_rect(k);
    for (const Rect& det : detections) {
      if (relative_overlap(cell, det) > theta) {
        mask.flags[k] = true;
        break;
      }
    }
  }
  return mask;
}

inline SaliencyMask decide_saliency(const CtuGrid& grid, const std::vector<Rect>& detections, double theta) {
  return decide_saliency(grid, std::span<const Rect>(detections), theta);
}

}  // namespace vcmqp
