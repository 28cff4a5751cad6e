#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vcmqp/error.hpp"
#include "vcmqp/geometry.hpp"

namespace vcmqp {

inline constexpr int kQpMin = 0;
inline constexpr int kQpMax = 63;

/// QP offset for non-salient CTUs: a non-negative integer or the "max"
/// sentinel that forces QP 63 regardless of the base QP.
class QpDelta {
 public:
  explicit QpDelta(int value) : value_(value), is_max_(false) {
    if (value < 0) throw DataError("qp_delta must be non-negative, got " + std::to_string(value));
  }

  static QpDelta max() {
    QpDelta d(0);
    d.is_max_ = true;
    return d;
  }

  static QpDelta parse(const std::string& text) {
    if (text == "max") return max();
    try {
      std::size_t pos = 0;
      const int v = std::stoi(text, &pos);
      if (pos != text.size()) throw std::invalid_argument(text);
      return QpDelta(v);
    } catch (const std::exception&) {
      throw DataError("qp_delta must be a non-negative integer or \"max\", got \"" + text + "\"");
    }
  }

  bool is_max() const { return is_max_; }
  int value() const { return value_; }

  std::string str() const { return is_max_ ? "max" : std::to_string(value_); }

  bool operator==(const QpDelta&) const = default;

 private:
  int value_;
  bool is_max_;
};

/// Per-CTU integer QPs, row-major. qp_base/qp_delta record how the map was
/// produced; they are provenance only and not part of the serialized form.
struct QpMap {
  CtuGrid grid;
  std::vector<int> qps;
  std::optional<int> qp_base;
  std::optional<QpDelta> qp_delta;

  bool operator==(const QpMap& other) const { return grid == other.grid && qps == other.qps; }
};

/// Salient CTUs get qp_base, non-salient ones qp_base + delta clamped to 63
/// (the "max" sentinel yields 63 outright).
inline QpMap assign_qps(const SaliencyMask& mask, int qp_base, QpDelta qp_delta) {
  if (qp_base < kQpMin || qp_base > kQpMax)
    throw DataError("qp_base " + std::to_string(qp_base) + " outside [" + std::to_string(kQpMin) + "," +
                    std::to_string(kQpMax) + "]");
  const int non_salient_qp = qp_delta.is_max() ? kQpMax : std::min(qp_base + qp_delta.value(), kQpMax);
  QpMap map{mask.grid, {}, qp_base, qp_delta};
  map.qps.reserve(mask.flags.size());
  for (bool salient : mask.flags) map.qps.push_back(salient ? qp_base : non_salient_qp);
  return map;
}

// --- Sidecar serialization (text, UTF-8, LF) ---------------------------------
//
//   qpmap/1
//   image_id <id>
//   ctu_size <int>  image <W> <H>  grid <cols> <rows>
//   <cols> space-separated QPs per line, <rows> lines, row-major

inline constexpr const char* kQpMapMagic = "qpmap/1";

inline std::string qpmap_to_string(const QpMap& map, const std::string& image_id) {
  std::ostringstream out;
  out << kQpMapMagic << "\n";
  out << "image_id " << image_id << "\n";
  out << "ctu_size " << map.grid.ctu_size << "  image " << map.grid.image_width << " "
      << map.grid.image_height << "  grid " << map.grid.cols << " " << map.grid.rows << "\n";
  for (int r = 0; r < map.grid.rows; ++r) {
    for (int c = 0; c < map.grid.cols; ++c) {
      if (c) out << " ";
      out << map.qps[static_cast<std::size_t>(r) * map.grid.cols + c];
    }
    out << "\n";
  }
  return out.str();
}

struct QpMapFile {
  QpMap map;
  std::string image_id;
};

inline QpMapFile qpmap_from_string(const std::string& text, const std::string& context) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kQpMapMagic)
    throw DataError(context + ": not a " + std::string(kQpMapMagic) + " file");
  if (!std::getline(in, line) || line.rfind("image_id ", 0) != 0)
    throw DataError(context + ": missing image_id line");
  QpMapFile out;
  out.image_id = line.substr(9);

  if (!std::getline(in, line)) throw DataError(context + ": missing geometry line");
  std::istringstream geo(line);
  std::string kw_ctu, kw_image, kw_grid;
  int ctu_size = 0, width = 0, height = 0, cols = 0, rows = 0;
  if (!(geo >> kw_ctu >> ctu_size >> kw_image >> width >> height >> kw_grid >> cols >> rows) ||
      kw_ctu != "ctu_size" || kw_image != "image" || kw_grid != "grid")
    throw DataError(context + ": malformed geometry line \"" + line + "\"");
  CtuGrid grid(width, height, ctu_size);
  if (grid.cols != cols || grid.rows != rows)
    throw DataError(context + ": grid " + std::to_string(cols) + "x" + std::to_string(rows) +
                    " inconsistent with image and ctu_size");
  out.map.grid = grid;

  out.map.qps.reserve(static_cast<std::size_t>(grid.ctu_count()));
  int qp = 0;
  while (in >> qp) {
    if (qp < kQpMin || qp > kQpMax)
      throw DataError(context + ": QP value " + std::to_string(qp) + " outside [" +
                      std::to_string(kQpMin) + "," + std::to_string(kQpMax) + "]");
    out.map.qps.push_back(qp);
  }
  if (!in.eof()) throw DataError(context + ": non-numeric QP entry");
  if (static_cast<int>(out.map.qps.size()) != grid.ctu_count())
    throw DataError(context + ": " + std::to_string(out.map.qps.size()) + " QPs for a " +
                    std::to_string(grid.cols) + "x" + std::to_string(grid.rows) + " grid");
  return out;
}

inline void write_qpmap(const QpMap& map, const std::string& image_id, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << qpmap_to_string(map, image_id);
  if (!out) throw DataError("write failed: " + path.string());
}

inline QpMapFile read_qpmap(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return qpmap_from_string(buf.str(), path.string());
}

}  // namespace vcmqp
