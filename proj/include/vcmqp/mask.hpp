#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vcmqp/error.hpp"

namespace vcmqp {

// Masks travel as uncompressed row-major run lengths that alternate
// background/foreground and start with background, so the first run may be 0.

inline std::vector<std::uint8_t> rle_decode(const std::vector<std::int64_t>& runs, int width, int height) {
  if (width <= 0 || height <= 0) throw DataError("rle_decode: non-positive dimensions");
  const std::int64_t total = static_cast<std::int64_t>(width) * height;
  std::vector<std::uint8_t> pixels;
  pixels.reserve(static_cast<std::size_t>(total));
  std::uint8_t value = 0;
  for (std::int64_t run : runs) {
    if (run < 0) throw DataError("rle_decode: negative run length");
    pixels.insert(pixels.end(), static_cast<std::size_t>(run), value);
    value = value ? 0 : 1;
  }
  if (static_cast<std::int64_t>(pixels.size()) != total)
    throw DataError("rle_decode: run lengths sum to " + std::to_string(pixels.size()) +
                    ", expected " + std::to_string(total));
  return pixels;
}

/// Canonical encoding: leading background run (possibly 0), every later run positive.
inline std::vector<std::int64_t> rle_encode(const std::vector<std::uint8_t>& pixels) {
  std::vector<std::int64_t> runs;
  std::uint8_t value = 0;
  std::int64_t count = 0;
  for (std::uint8_t p : pixels) {
    const std::uint8_t bit = p ? 1 : 0;
    if (bit != value) {
      runs.push_back(count);
      count = 0;
      value = bit;
    }
    ++count;
  }
  runs.push_back(count);
  return runs;
}

/// Binary instance mask stored as RLE. Valid instances have at least one
/// foreground pixel and runs summing exactly to width*height.
class InstanceMask {
 public:
  InstanceMask(int width, int height, std::vector<std::int64_t> rle)
      : width_(width), height_(height), rle_(std::move(rle)) {
    if (width_ <= 0 || height_ <= 0) throw DataError("InstanceMask: non-positive dimensions");
    std::int64_t total = 0;
    pixel_count_ = 0;
    for (std::size_t i = 0; i < rle_.size(); ++i) {
      if (rle_[i] < 0) throw DataError("InstanceMask: negative run length");
      total += rle_[i];
      if (i % 2 == 1) pixel_count_ += rle_[i];
    }
    if (total != static_cast<std::int64_t>(width_) * height_)
      throw DataError("InstanceMask: run lengths sum to " + std::to_string(total) + ", expected " +
                      std::to_string(static_cast<std::int64_t>(width_) * height_));
    if (pixel_count_ <= 0) throw DataError("InstanceMask: empty mask");
  }

  static InstanceMask from_pixels(int width, int height, const std::vector<std::uint8_t>& pixels) {
    if (static_cast<std::int64_t>(pixels.size()) != static_cast<std::int64_t>(width) * height)
      throw DataError("InstanceMask: pixel buffer size mismatch");
    return InstanceMask(width, height, rle_encode(pixels));
  }

  int width() const { return width_; }
  int height() const { return height_; }
  const std::vector<std::int64_t>& rle() const { return rle_; }
  std::int64_t pixel_count() const { return pixel_count_; }

  std::vector<std::uint8_t> pixels() const { return rle_decode(rle_, width_, height_); }

  bool operator==(const InstanceMask&) const = default;

 private:
  int width_;
  int height_;
  std::vector<std::int64_t> rle_;
  std::int64_t pixel_count_;
};

struct Instance {
  std::int64_t id = 0;
  std::string class_label;
  double score = 1.0;  // 1.0 for ground truth
  InstanceMask mask;

  bool operator==(const Instance&) const = default;
};

/// All instances of one image, ids unique within the image.
struct InstanceSet {
  std::string image_id;
  int width = 0;
  int height = 0;
  std::vector<Instance> instances;

  bool operator==(const InstanceSet&) const = default;
};

}  // namespace vcmqp
