#pragma once

// Shared test fixtures: scratch directories, deterministic RNG helpers and a
// small synthetic corpus (noise images with planted box instances) used by
// the sweep and CLI tests.

#include <unistd.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "vcmqp/geometry.hpp"
#include "vcmqp/image.hpp"
#include "vcmqp/ingest.hpp"
#include "vcmqp/mask.hpp"

namespace testsupport {

namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::string tpl = (fs::temp_directory_path() / ("vcmqp-" + tag + "-XXXXXX")).string();
    std::vector<char> buf(tpl.begin(), tpl.end());
    buf.push_back('\0');
    if (!::mkdtemp(buf.data())) throw std::runtime_error("mkdtemp failed for " + tpl);
    path_ = fs::path(buf.data());
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

inline void write_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
}

// --- Synthetic corpus ---------------------------------------------------------
//
// Four 256x256 images (2x2 CTU grid at ctu_size 128). Each instance is a
// patch mixing "robust" dark samples (values 0/1 reconstruct within 1 at any
// QP) with full-range noise at a per-instance ratio, so the surviving pixel
// fraction of an instance slides smoothly from 1.0 toward that ratio as
// quantization coarsens. Several boxes leak small slivers across CTU
// boundaries; the sliver fractions interleave with the default theta grid
// {0, 0.025, 0.05, 0.1}. Two detector sources exist: "exact" re-emits the
// ground-truth boxes, "loose" inflates them, drops one instance per image
// and adds a spurious box.

struct SynthInstance {
  std::int64_t id;
  const char* cls;
  int x, y, w, h;
  int robust_pct;  // share of quantization-proof pixels, in percent
};

struct SynthImage {
  const char* image_id;
  std::array<SynthInstance, 4> instances;
  int dropped_by_loose;  // instance index the "loose" detector misses
};

inline const std::vector<SynthImage>& synth_images() {
  static const std::vector<SynthImage> images = {
      {"img000",
       {{{1, "car", 30, 20, 40, 36, 58},
         {2, "person", 100, 60, 30, 30, 74},
         {3, "car", 150, 140, 44, 30, 90},
         {4, "bus", 60, 126, 26, 30, 66}}},
       2},
      {"img001",
       {{{1, "car", 20, 30, 36, 40, 82},
         {2, "person", 98, 50, 31, 30, 62},
         {3, "car", 140, 150, 40, 28, 94},
         {4, "person", 126, 92, 30, 26, 70}}},
       3},
      {"img002",
       {{{1, "car", 40, 40, 30, 30, 86},
         {2, "person", 95, 160, 34, 30, 60},
         {3, "bus", 160, 30, 36, 36, 78},
         {4, "car", 10, 180, 30, 30, 92}}},
       0},
      {"img003",
       {{{1, "car", 50, 10, 40, 30, 64},
         {2, "person", 110, 90, 24, 36, 88},
         {3, "car", 140, 140, 50, 36, 72},
         {4, "person", 70, 124, 30, 30, 84}}},
       2},
  };
  return images;
}

inline constexpr int kSynthImageSize = 256;

inline vcmqp::Image render_synth_image(const SynthImage& spec, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::uniform_int_distribution<int> noise(0, 255);
  vcmqp::Image img(kSynthImageSize, kSynthImageSize);
  for (auto& p : img.luma) p = static_cast<std::uint8_t>(noise(rng));
  std::uniform_int_distribution<int> pct(0, 99);
  std::uniform_int_distribution<int> dark(0, 1);
  for (const SynthInstance& inst : spec.instances) {
    for (int y = inst.y; y < inst.y + inst.h; ++y)
      for (int x = inst.x; x < inst.x + inst.w; ++x) {
        const bool robust = pct(rng) < inst.robust_pct;
        img.set(x, y, static_cast<std::uint8_t>(robust ? dark(rng) : noise(rng)));
      }
  }
  return img;
}

inline vcmqp::InstanceSet make_synth_ground_truth(const SynthImage& spec) {
  vcmqp::InstanceSet set;
  set.image_id = spec.image_id;
  set.width = kSynthImageSize;
  set.height = kSynthImageSize;
  for (const SynthInstance& inst : spec.instances) {
    std::vector<std::uint8_t> pixels(static_cast<std::size_t>(kSynthImageSize) * kSynthImageSize, 0);
    for (int y = inst.y; y < inst.y + inst.h; ++y)
      for (int x = inst.x; x < inst.x + inst.w; ++x)
        pixels[static_cast<std::size_t>(y) * kSynthImageSize + x] = 1;
    set.instances.push_back(vcmqp::Instance{
        inst.id, inst.cls, 1.0,
        vcmqp::InstanceMask::from_pixels(kSynthImageSize, kSynthImageSize, pixels)});
  }
  return set;
}

inline vcmqp::json detection_record_json(const SynthImage& spec, bool loose) {
  vcmqp::json dets = vcmqp::json::array();
  for (std::size_t j = 0; j < spec.instances.size(); ++j) {
    const SynthInstance& inst = spec.instances[j];
    if (loose && static_cast<int>(j) == spec.dropped_by_loose) continue;
    double x = inst.x, y = inst.y, w = inst.w, h = inst.h;
    if (loose) {
      x -= 3;
      y -= 3;
      w += 6;
      h += 6;
    }
    dets.push_back(vcmqp::json{{"class", inst.cls},
                               {"score", loose ? 0.7 : 0.9},
                               {"bbox", {x, y, w, h}}});
  }
  if (loose)
    dets.push_back(vcmqp::json{{"class", "car"}, {"score", 0.4}, {"bbox", {5, 200, 18, 18}}});
  return vcmqp::json{{"schema", vcmqp::kDetectionSchema},
                     {"image_id", spec.image_id},
                     {"width", kSynthImageSize},
                     {"height", kSynthImageSize},
                     {"detections", std::move(dets)}};
}

/// Writes images/, gt/ and detections/{exact,loose} under dir.
inline void write_synth_corpus(const fs::path& dir, std::uint32_t seed = 20240501) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "gt");
  fs::create_directories(dir / "detections" / "exact");
  fs::create_directories(dir / "detections" / "loose");
  std::uint32_t image_seed = seed;
  for (const SynthImage& spec : synth_images()) {
    vcmqp::write_pgm(render_synth_image(spec, image_seed++), dir / "images" / (std::string(spec.image_id) + ".pgm"));
    vcmqp::write_instance_set(make_synth_ground_truth(spec), dir / "gt" / (std::string(spec.image_id) + ".json"));
    write_file(dir / "detections" / "exact" / (std::string(spec.image_id) + ".json"),
               detection_record_json(spec, false).dump(2) + "\n");
    write_file(dir / "detections" / "loose" / (std::string(spec.image_id) + ".json"),
               detection_record_json(spec, true).dump(2) + "\n");
  }
}

/// Sweep config over the synthetic corpus; the grid defaults to the full
/// reference grid when the arguments are left empty.
inline std::string synth_sweep_config(const std::string& thetas = "", const std::string& deltas = "",
                                      const std::string& bases = "") {
  std::string text;
  if (!thetas.empty()) text += "thetas = " + thetas + "\n";
  if (!deltas.empty()) text += "qp_deltas = " + deltas + "\n";
  if (!bases.empty()) text += "qp_bases = " + bases + "\n";
  text += "detector exact = detections/exact\n";
  text += "detector loose = detections/loose\n";
  text += "codec = mock\n";
  text += "quality = proxy\n";
  text += "anchor = constant-qp\n";
  text += "uncompressed_ap = 1.0\n";
  return text;
}

}  // namespace testsupport
