#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "vcmqp/error.hpp"
#include "vcmqp/geometry.hpp"
#include "vcmqp/mask.hpp"

namespace vcmqp {

using json = nlohmann::json;

inline constexpr const char* kDetectionSchema = "vcm-det/1";
inline constexpr const char* kInstanceSchema = "vcm-inst/1";
inline constexpr const char* kMaskSchema = "vcm-mask/1";

/// One scored, class-labeled box from a saliency/object detector.
struct Detection {
  std::string class_label;  // evaluation class after mapping
  double score = 0.0;
  Rect bbox;
  std::optional<InstanceMask> mask;

  bool operator==(const Detection&) const = default;
};

/// Detections of one image, boxes already clipped to the image rectangle.
struct ImageRecord {
  std::string image_id;
  int width = 0;
  int height = 0;
  std::vector<Detection> detections;

  bool operator==(const ImageRecord&) const = default;
};

/// Maps detector labels onto the evaluation class set. Labels mapped to
/// "ignore" (or missing entirely) are dropped at load time.
class ClassMap {
 public:
  static constexpr const char* kIgnore = "ignore";

  ClassMap() = default;
  explicit ClassMap(std::map<std::string, std::string> entries) : entries_(std::move(entries)) {
    for (const auto& [label, cls] : entries_)
      if (cls != kIgnore) eval_classes_.insert(cls);
  }

  /// Identity map over the eight Cityscapes road-user classes.
  static ClassMap cityscapes() {
    std::map<std::string, std::string> entries;
    for (const char* cls : {"bicycle", "bus", "car", "motorcycle", "person", "rider", "train", "truck"})
      entries.emplace(cls, cls);
    return ClassMap(std::move(entries));
  }

  /// Two-column text file: "detector_label evaluation_class", '#' comments.
  static ClassMap load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("class map: cannot open " + path.string());
    std::map<std::string, std::string> entries;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      std::istringstream ss(line);
      std::string label, cls, extra;
      if (!(ss >> label)) continue;  // blank line
      if (!(ss >> cls) || (ss >> extra))
        throw DataError("class map: expected two columns at " + path.string() + ":" +
                        std::to_string(lineno));
      entries[label] = cls;
    }
    return ClassMap(std::move(entries));
  }

  /// Evaluation class for a detector label; nullopt when the detection is to be dropped.
  std::optional<std::string> map(const std::string& detector_label) const {
    auto it = entries_.find(detector_label);
    if (it == entries_.end() || it->second == kIgnore) return std::nullopt;
    return it->second;
  }

  const std::set<std::string>& evaluation_classes() const { return eval_classes_; }

 private:
  std::map<std::string, std::string> entries_;
  std::set<std::string> eval_classes_;
};

inline json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

namespace detail {

inline const json& require_field(const json& obj, const char* field, const std::string& context) {
  auto it = obj.find(field);
  if (it == obj.end()) throw DataError(context + ": missing field \"" + field + "\"");
  return *it;
}

inline void check_schema(const json& obj, const char* expected, const std::string& context) {
  const std::string schema = require_field(obj, "schema", context).get<std::string>();
  if (schema != expected)
    throw DataError(context + ": unknown schema version \"" + schema + "\", expected \"" + expected + "\"");
}

// A file holds either one record object or an array of them.
inline std::vector<json> record_list(const json& root, const std::string& context) {
  if (root.is_array()) {
    std::vector<json> out;
    for (const auto& item : root) out.push_back(item);
    return out;
  }
  if (root.is_object()) return {root};
  throw DataError(context + ": expected an object or an array of objects");
}

/// Clip a raw box to [0,width]x[0,height]; nullopt when nothing remains.
inline std::optional<Rect> clip_box(double x, double y, double w, double h, int width, int height) {
  if (w < 0.0 || h < 0.0) throw DataError("detection bbox with negative extent");
  const double x0 = std::max(x, 0.0);
  const double y0 = std::max(y, 0.0);
  const double x1 = std::min(x + w, static_cast<double>(width));
  const double y1 = std::min(y + h, static_cast<double>(height));
  if (x1 <= x0 || y1 <= y0) return std::nullopt;
  return Rect(x0, y0, x1 - x0, y1 - y0);
}

}  // namespace detail

/// Parses a detection file (single record or array). Detections whose label
/// maps to "ignore" or to nothing, or whose score is below min_score, are
/// dropped; boxes are clipped to image bounds and dropped when fully outside.
inline std::vector<ImageRecord> load_detections(const std::filesystem::path& path, const ClassMap& class_map,
                                                double min_score = 0.0) {
  const std::string context = path.string();
  const json root = load_json_file(path);
  std::vector<ImageRecord> records;
  for (const json& rec : detail::record_list(root, context)) {
    detail::check_schema(rec, kDetectionSchema, context);
    ImageRecord out;
    out.image_id = detail::require_field(rec, "image_id", context).get<std::string>();
    out.width = detail::require_field(rec, "width", context).get<int>();
    out.height = detail::require_field(rec, "height", context).get<int>();
    if (out.width <= 0 || out.height <= 0)
      throw DataError(context + ": non-positive image dimensions for " + out.image_id);
    for (const json& det : detail::require_field(rec, "detections", context)) {
      const std::string label = detail::require_field(det, "class", context).get<std::string>();
      const double score = detail::require_field(det, "score", context).get<double>();
      if (score < 0.0 || score > 1.0)
        throw DataError(context + ": detection score " + std::to_string(score) + " outside [0,1]");
      const json& bbox = detail::require_field(det, "bbox", context);
      if (!bbox.is_array() || bbox.size() != 4)
        throw DataError(context + ": bbox must be [x, y, w, h]");
      const auto mapped = class_map.map(label);
      if (!mapped) continue;
      if (score < min_score) continue;
      const auto clipped = detail::clip_box(bbox[0].get<double>(), bbox[1].get<double>(),
                                            bbox[2].get<double>(), bbox[3].get<double>(),
                                            out.width, out.height);
      if (!clipped) continue;  // fully out of bounds
      out.detections.push_back(Detection{*mapped, score, *clipped, std::nullopt});
    }
    records.push_back(std::move(out));
  }
  return records;
}

/// Parses a ground-truth or prediction instance file (single record or array).
inline std::vector<InstanceSet> load_ground_truth(const std::filesystem::path& path) {
  const std::string context = path.string();
  const json root = load_json_file(path);
  std::vector<InstanceSet> sets;
  for (const json& rec : detail::record_list(root, context)) {
    detail::check_schema(rec, kInstanceSchema, context);
    InstanceSet set;
    set.image_id = detail::require_field(rec, "image_id", context).get<std::string>();
    set.width = detail::require_field(rec, "width", context).get<int>();
    set.height = detail::require_field(rec, "height", context).get<int>();
    if (set.width <= 0 || set.height <= 0)
      throw DataError(context + ": non-positive image dimensions for " + set.image_id);
    std::set<std::int64_t> seen_ids;
    for (const json& inst : detail::require_field(rec, "instances", context)) {
      Instance out{detail::require_field(inst, "id", context).get<std::int64_t>(),
                   detail::require_field(inst, "class", context).get<std::string>(),
                   detail::require_field(inst, "score", context).get<double>(),
                   InstanceMask(set.width, set.height,
                                detail::require_field(inst, "rle", context).get<std::vector<std::int64_t>>())};
      if (!seen_ids.insert(out.id).second)
        throw DataError(context + ": duplicate instance id " + std::to_string(out.id) + " in image " +
                        set.image_id);
      if (out.score < 0.0 || out.score > 1.0)
        throw DataError(context + ": instance score outside [0,1]");
      set.instances.push_back(std::move(out));
    }
    sets.push_back(std::move(set));
  }
  return sets;
}

/// Loads detection records from a single file or from every *.json in a
/// directory (sorted by filename), keyed by image_id.
inline std::map<std::string, ImageRecord> load_detection_records(const std::filesystem::path& source,
                                                                 const ClassMap& class_map,
                                                                 double min_score = 0.0) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  if (fs::is_directory(source)) {
    for (const auto& entry : fs::directory_iterator(source))
      if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(source);
  }
  if (files.empty()) throw DataError("no detection files under " + source.string());
  std::map<std::string, ImageRecord> records;
  for (const fs::path& file : files) {
    for (ImageRecord& rec : load_detections(file, class_map, min_score)) {
      const std::string image_id = rec.image_id;
      if (!records.emplace(image_id, std::move(rec)).second)
        throw DataError(file.string() + ": duplicate detection record for image " + image_id);
    }
  }
  return records;
}

/// Same as load_detection_records for instance (ground-truth/prediction) files.
inline std::map<std::string, InstanceSet> load_instance_sets(const std::filesystem::path& source) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  if (fs::is_directory(source)) {
    for (const auto& entry : fs::directory_iterator(source))
      if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(source);
  }
  if (files.empty()) throw DataError("no instance files under " + source.string());
  std::map<std::string, InstanceSet> sets;
  for (const fs::path& file : files) {
    for (InstanceSet& set : load_ground_truth(file)) {
      const std::string image_id = set.image_id;
      if (!sets.emplace(image_id, std::move(set)).second)
        throw DataError(file.string() + ": duplicate instance record for image " + image_id);
    }
  }
  return sets;
}

inline json instance_set_to_json(const InstanceSet& set) {
  json instances = json::array();
  for (const Instance& inst : set.instances) {
    instances.push_back(json{{"id", inst.id},
                             {"class", inst.class_label},
                             {"score", inst.score},
                             {"rle", inst.mask.rle()}});
  }
  return json{{"schema", kInstanceSchema},
              {"image_id", set.image_id},
              {"width", set.width},
              {"height", set.height},
              {"instances", std::move(instances)}};
}

inline void write_instance_set(const InstanceSet& set, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << instance_set_to_json(set).dump(2) << "\n";
}

// --- Saliency mask JSON (vcm-mask/1), consumed by the qpmap stage -----------

inline json mask_to_json(const SaliencyMask& mask, const std::string& image_id) {
  json flags = json::array();
  for (bool f : mask.flags) flags.push_back(f ? 1 : 0);
  return json{{"schema", kMaskSchema},
              {"image_id", image_id},
              {"width", mask.grid.image_width},
              {"height", mask.grid.image_height},
              {"ctu_size", mask.grid.ctu_size},
              {"flags", std::move(flags)}};
}

struct MaskRecord {
  SaliencyMask mask;
  std::string image_id;
};

inline MaskRecord mask_from_json(const json& obj, const std::string& context) {
  detail::check_schema(obj, kMaskSchema, context);
  const CtuGrid grid(detail::require_field(obj, "width", context).get<int>(),
                     detail::require_field(obj, "height", context).get<int>(),
                     detail::require_field(obj, "ctu_size", context).get<int>());
  std::vector<bool> flags;
  for (const json& f : detail::require_field(obj, "flags", context)) flags.push_back(f.get<int>() != 0);
  return MaskRecord{SaliencyMask(grid, std::move(flags)),
                    detail::require_field(obj, "image_id", context).get<std::string>()};
}

inline MaskRecord read_mask_json(const std::filesystem::path& path) {
  return mask_from_json(load_json_file(path), path.string());
}

}  // namespace vcmqp
