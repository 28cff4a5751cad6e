#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include "vcmqp/bdrate.hpp"
#include "vcmqp/codec.hpp"
#include "vcmqp/error.hpp"
#include "vcmqp/geometry.hpp"
#include "vcmqp/image.hpp"
#include "vcmqp/ingest.hpp"
#include "vcmqp/metrics.hpp"
#include "vcmqp/qpmap.hpp"

namespace vcmqp {

namespace fs = std::filesystem;

// --- Sweep configuration ------------------------------------------------------

/// Grid and plumbing for one experiment sweep. The defaults reproduce the
/// reference grid: theta in {0, 0.025, 0.05, 0.1}, delta in {5, 10, 20, max},
/// base QP in {12, 17, 22, 27}, constant-QP anchor.
struct SweepConfig {
  std::vector<double> thetas = {0.0, 0.025, 0.05, 0.1};
  std::vector<QpDelta> qp_deltas = {QpDelta(5), QpDelta(10), QpDelta(20), QpDelta::max()};
  std::vector<int> qp_bases = {12, 17, 22, 27};
  std::vector<std::pair<std::string, std::string>> detector_sources;  // name -> path
  std::string codec = "mock";              // "mock" | "template"
  fs::path codec_template;                 // when codec == "template"
  std::string quality = "proxy";           // "proxy" | "external"
  fs::path predictions_root;               // when quality == "external"
  std::optional<fs::path> class_map_path;  // default: Cityscapes identity map
  double min_score = 0.0;
  int ctu_size = 128;
  std::optional<double> uncompressed_quality;    // reference line in the curve plot
  std::optional<double> curve_theta;             // operating point for report_curves
  std::optional<std::string> curve_delta;

  double effective_curve_theta() const { return curve_theta ? *curve_theta : thetas.front(); }
  QpDelta effective_curve_delta() const {
    return curve_delta ? QpDelta::parse(*curve_delta) : qp_deltas.back();
  }

  void validate() const {
    if (thetas.empty() || qp_deltas.empty() || qp_bases.empty())
      throw DataError("sweep config: thetas, qp_deltas and qp_bases must be nonempty");
    for (double t : thetas)
      if (!(t >= 0.0 && t < 1.0)) throw DataError("sweep config: theta outside [0,1)");
    for (int b : qp_bases)
      if (b < kQpMin || b > kQpMax) throw DataError("sweep config: qp_base outside QP range");
    if (detector_sources.empty()) throw DataError("sweep config: at least one detector source required");
    if (codec != "mock" && codec != "template")
      throw DataError("sweep config: codec must be \"mock\" or \"template <path>\"");
    if (codec == "template" && codec_template.empty())
      throw DataError("sweep config: codec template path missing");
    if (quality != "proxy" && quality != "external")
      throw DataError("sweep config: quality must be \"proxy\" or \"external <path>\"");
    if (quality == "external" && predictions_root.empty())
      throw DataError("sweep config: external predictions root missing");
    if (ctu_size <= 0) throw DataError("sweep config: ctu_size must be positive");
    if (curve_theta && std::find(thetas.begin(), thetas.end(), *curve_theta) == thetas.end())
      throw DataError("sweep config: curve_theta is not part of the theta grid");
    if (curve_delta) {
      const QpDelta d = QpDelta::parse(*curve_delta);
      if (std::find(qp_deltas.begin(), qp_deltas.end(), d) == qp_deltas.end())
        throw DataError("sweep config: curve_delta is not part of the qp_delta grid");
    }
  }

  static SweepConfig parse(const std::string& text, const std::string& context);
  static SweepConfig load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path.string());
  }
};

namespace detail {

inline std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

inline std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream ss(s);
  std::vector<std::string> tokens;
  std::string token;
  while (ss >> token) tokens.push_back(token);
  return tokens;
}

inline double parse_double(const std::string& text, const std::string& context) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(text, &pos);
    if (pos != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw DataError(context + ": malformed number \"" + text + "\"");
  }
}

inline int parse_int(const std::string& text, const std::string& context) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(text, &pos);
    if (pos != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw DataError(context + ": malformed integer \"" + text + "\"");
  }
}

}  // namespace detail

/// Key/value sweep file: "key = value" lines, '#' comments, list values
/// whitespace-separated. Detector sources use "detector <name> = <path>".
inline SweepConfig SweepConfig::parse(const std::string& text, const std::string& context) {
  SweepConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where = context + ":" + std::to_string(lineno);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError(where + ": expected \"key = value\"");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const std::vector<std::string> tokens = detail::split_ws(value);

    if (key == "thetas") {
      cfg.thetas.clear();
      for (const auto& t : tokens) cfg.thetas.push_back(detail::parse_double(t, where));
    } else if (key == "qp_deltas") {
      cfg.qp_deltas.clear();
      for (const auto& t : tokens) cfg.qp_deltas.push_back(QpDelta::parse(t));
    } else if (key == "qp_bases") {
      cfg.qp_bases.clear();
      for (const auto& t : tokens) cfg.qp_bases.push_back(detail::parse_int(t, where));
    } else if (key.rfind("detector ", 0) == 0) {
      const std::string name = detail::trim(key.substr(9));
      if (name.empty() || value.empty()) throw DataError(where + ": detector entry needs a name and a path");
      cfg.detector_sources.emplace_back(name, value);
    } else if (key == "codec") {
      if (tokens.size() == 1 && tokens[0] == "mock") {
        cfg.codec = "mock";
      } else if (tokens.size() == 2 && tokens[0] == "template") {
        cfg.codec = "template";
        cfg.codec_template = tokens[1];
      } else {
        throw DataError(where + ": codec must be \"mock\" or \"template <path>\"");
      }
    } else if (key == "quality") {
      if (tokens.size() == 1 && tokens[0] == "proxy") {
        cfg.quality = "proxy";
      } else if (tokens.size() == 2 && tokens[0] == "external") {
        cfg.quality = "external";
        cfg.predictions_root = tokens[1];
      } else {
        throw DataError(where + ": quality must be \"proxy\" or \"external <path>\"");
      }
    } else if (key == "anchor") {
      if (value != "constant-qp") throw DataError(where + ": only the constant-qp anchor is supported");
    } else if (key == "class_map") {
      cfg.class_map_path = fs::path(value);
    } else if (key == "min_score") {
      cfg.min_score = detail::parse_double(value, where);
    } else if (key == "ctu_size") {
      cfg.ctu_size = detail::parse_int(value, where);
    } else if (key == "uncompressed_ap") {
      cfg.uncompressed_quality = detail::parse_double(value, where);
    } else if (key == "curve_theta") {
      cfg.curve_theta = detail::parse_double(value, where);
    } else if (key == "curve_delta") {
      cfg.curve_delta = value;
    } else {
      throw DataError(where + ": unknown key \"" + key + "\"");
    }
  }
  cfg.validate();
  return cfg;
}

// --- Sweep result -------------------------------------------------------------

struct CellKey {
  std::string detector;
  double theta = 0.0;
  QpDelta delta = QpDelta(0);

  bool operator<(const CellKey& other) const {
    if (detector != other.detector) return detector < other.detector;
    if (theta != other.theta) return theta < other.theta;
    // "max" sorts after every numeric delta
    const long long a = delta.is_max() ? static_cast<long long>(kQpMax) + 1 : delta.value();
    const long long b = other.delta.is_max() ? static_cast<long long>(kQpMax) + 1 : other.delta.value();
    return a < b;
  }
  bool operator==(const CellKey&) const = default;
};

enum class CellStatus { Ok, Pending, Error };

inline const char* to_string(CellStatus s) {
  switch (s) {
    case CellStatus::Ok: return "ok";
    case CellStatus::Pending: return "pending";
    case CellStatus::Error: return "error";
  }
  return "error";
}

struct CellResult {
  CellStatus status = CellStatus::Pending;
  std::vector<RdPoint> points;  // one per qp_base, labeled with the base QP
  std::optional<double> bdr;    // vs the constant-QP anchor
  std::string note;
};

struct SweepResult {
  std::vector<double> thetas;
  std::vector<std::string> qp_deltas;
  std::vector<int> qp_bases;
  std::vector<std::string> detectors;
  double curve_theta = 0.0;
  std::string curve_delta;
  std::optional<double> uncompressed_quality;
  std::vector<RdPoint> anchor_points;  // empty while the anchor is pending
  std::string anchor_note;
  std::map<CellKey, CellResult> cells;
};

// --- Result JSON (vcm-sweep/1) --------------------------------------------

inline constexpr const char* kSweepSchema = "vcm-sweep/1";

inline json sweep_result_to_json(const SweepResult& result) {
  const auto points_json = [](const std::vector<RdPoint>& points) {
    json arr = json::array();
    for (const RdPoint& p : points)
      arr.push_back(json{{"label", p.label}, {"rate", p.rate}, {"quality", p.quality}});
    return arr;
  };
  json cells = json::array();
  for (const auto& [key, cell] : result.cells) {
    json obj{{"detector", key.detector}, {"theta", key.theta},      {"delta", key.delta.str()},
             {"status", to_string(cell.status)}, {"note", cell.note}, {"points", points_json(cell.points)}};
    if (cell.bdr) obj["bdr"] = *cell.bdr;
    cells.push_back(std::move(obj));
  }
  json out{{"schema", kSweepSchema},
           {"thetas", result.thetas},
           {"qp_deltas", result.qp_deltas},
           {"qp_bases", result.qp_bases},
           {"detectors", result.detectors},
           {"curve_theta", result.curve_theta},
           {"curve_delta", result.curve_delta},
           {"anchor", points_json(result.anchor_points)},
           {"anchor_note", result.anchor_note},
           {"cells", std::move(cells)}};
  if (result.uncompressed_quality) out["uncompressed_quality"] = *result.uncompressed_quality;
  return out;
}

inline SweepResult sweep_result_from_json(const json& root, const std::string& context) {
  detail::check_schema(root, kSweepSchema, context);
  const auto points_from = [&](const json& arr) {
    std::vector<RdPoint> points;
    for (const json& p : arr)
      points.push_back(RdPoint{p.at("rate").get<double>(), p.at("quality").get<double>(),
                               p.at("label").get<std::string>()});
    return points;
  };
  SweepResult result;
  result.thetas = root.at("thetas").get<std::vector<double>>();
  result.qp_deltas = root.at("qp_deltas").get<std::vector<std::string>>();
  result.qp_bases = root.at("qp_bases").get<std::vector<int>>();
  result.detectors = root.at("detectors").get<std::vector<std::string>>();
  result.curve_theta = root.at("curve_theta").get<double>();
  result.curve_delta = root.at("curve_delta").get<std::string>();
  if (root.contains("uncompressed_quality"))
    result.uncompressed_quality = root.at("uncompressed_quality").get<double>();
  result.anchor_points = points_from(root.at("anchor"));
  result.anchor_note = root.at("anchor_note").get<std::string>();
  for (const json& obj : root.at("cells")) {
    CellKey key{obj.at("detector").get<std::string>(), obj.at("theta").get<double>(),
                QpDelta::parse(obj.at("delta").get<std::string>())};
    CellResult cell;
    const std::string status = obj.at("status").get<std::string>();
    cell.status = status == "ok" ? CellStatus::Ok
                                 : (status == "pending" ? CellStatus::Pending : CellStatus::Error);
    cell.note = obj.at("note").get<std::string>();
    cell.points = points_from(obj.at("points"));
    if (obj.contains("bdr")) cell.bdr = obj.at("bdr").get<double>();
    result.cells.emplace(std::move(key), std::move(cell));
  }
  return result;
}

inline void save_sweep_result(const SweepResult& result, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << sweep_result_to_json(result).dump(2) << "\n";
}

inline SweepResult load_sweep_result(const fs::path& path) {
  return sweep_result_from_json(load_json_file(path), path.string());
}

// --- Corpus ---------------------------------------------------------------

struct CorpusImage {
  std::string image_id;
  Image image;
  InstanceSet ground_truth;
};

struct Corpus {
  std::vector<CorpusImage> images;  // sorted by image_id
  // detector name -> image_id -> class-filtered, clipped boxes
  std::map<std::string, std::map<std::string, std::vector<Rect>>> detections;
};

/// Loads images/, gt/ and every configured detector source, then checks that
/// all three agree on the image_id set. Relative detector paths resolve
/// against the corpus directory.
inline Corpus load_corpus(const fs::path& corpus_dir, const SweepConfig& cfg) {
  Corpus corpus;
  const fs::path images_dir = corpus_dir / "images";
  if (!fs::is_directory(images_dir)) throw DataError("corpus: missing images directory " + images_dir.string());
  std::vector<fs::path> image_files;
  for (const auto& entry : fs::directory_iterator(images_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".pgm") image_files.push_back(entry.path());
  std::sort(image_files.begin(), image_files.end());
  if (image_files.empty()) throw DataError("corpus: no .pgm images under " + images_dir.string());

  fs::path gt_path = corpus_dir / "gt";
  if (!fs::exists(gt_path)) gt_path = corpus_dir / "gt.json";
  auto gt_sets = load_instance_sets(gt_path);

  for (const fs::path& file : image_files) {
    CorpusImage ci;
    ci.image_id = file.stem().string();
    ci.image = read_pgm(file);
    auto it = gt_sets.find(ci.image_id);
    if (it == gt_sets.end()) throw DataError("corpus: no ground truth for image " + ci.image_id);
    ci.ground_truth = std::move(it->second);
    if (ci.ground_truth.width != ci.image.width || ci.ground_truth.height != ci.image.height)
      throw DataError("corpus: ground-truth dimensions disagree with image " + ci.image_id);
    corpus.images.push_back(std::move(ci));
  }

  const ClassMap class_map = cfg.class_map_path ? ClassMap::load(*cfg.class_map_path) : ClassMap::cityscapes();
  for (const auto& [name, source] : cfg.detector_sources) {
    fs::path path(source);
    if (path.is_relative()) path = corpus_dir / path;
    auto records = load_detection_records(path, class_map, cfg.min_score);
    std::map<std::string, std::vector<Rect>> boxes;
    for (const CorpusImage& ci : corpus.images) {
      auto it = records.find(ci.image_id);
      if (it == records.end())
        throw DataError("corpus: detector \"" + name + "\" has no record for image " + ci.image_id);
      if (it->second.width != ci.image.width || it->second.height != ci.image.height)
        throw DataError("corpus: detector \"" + name + "\" dimensions disagree with image " + ci.image_id);
      std::vector<Rect> rects;
      for (const Detection& det : it->second.detections) rects.push_back(det.bbox);
      boxes.emplace(ci.image_id, std::move(rects));
    }
    corpus.detections.emplace(name, std::move(boxes));
  }
  return corpus;
}

// --- Degradation-survival quality proxy ------------------------------------
//
// Hermetic stand-in for running a segmentation network on decoded frames:
// each ground-truth instance is re-emitted as a prediction made of the pixels
// that coding left nearly unchanged (|decoded - original| <= tolerance),
// scored by the surviving fraction. The prediction's IoU against its ground
// truth equals that fraction, so the AP threshold ladder grades degradation;
// fully altered instances vanish like missed detections.

inline constexpr int kSurvivalPixelTolerance = 1;

inline InstanceSet degrade_survival_predictions(const InstanceSet& ground_truth, const Image& original,
                                                const Image& decoded,
                                                int pixel_tolerance = kSurvivalPixelTolerance) {
  if (original.width != decoded.width || original.height != decoded.height)
    throw DataError("degrade_survival_predictions: image dimensions differ");
  if (ground_truth.width != original.width || ground_truth.height != original.height)
    throw DataError("degrade_survival_predictions: ground truth does not match image dimensions");
  InstanceSet predictions;
  predictions.image_id = ground_truth.image_id;
  predictions.width = ground_truth.width;
  predictions.height = ground_truth.height;
  for (const Instance& inst : ground_truth.instances) {
    const std::vector<std::uint8_t> mask = inst.mask.pixels();
    std::vector<std::uint8_t> surviving(mask.size(), 0);
    std::int64_t kept = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (!mask[i]) continue;
      const int diff = static_cast<int>(original.luma[i]) - static_cast<int>(decoded.luma[i]);
      if (diff <= pixel_tolerance && diff >= -pixel_tolerance) {
        surviving[i] = 1;
        ++kept;
      }
    }
    if (kept == 0) continue;
    Instance pred{inst.id, inst.class_label,
                  static_cast<double>(kept) / static_cast<double>(inst.mask.pixel_count()),
                  InstanceMask::from_pixels(ground_truth.width, ground_truth.height, surviving)};
    predictions.instances.push_back(std::move(pred));
  }
  return predictions;
}

// --- Sweep execution --------------------------------------------------------

namespace detail {

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t hash = 1469598103934665603ull) {
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 1099511628211ull;
  }
  return hash;
}

inline std::string format_theta(double theta) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", theta);
  return buf;
}

inline void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 0) jobs = static_cast<int>(std::thread::hardware_concurrency());
  if (jobs < 1) jobs = 1;
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&]() {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

struct EncodeJob {
  std::string detector;  // "anchor" for the constant-QP reference
  double theta = 0.0;
  QpDelta delta = QpDelta(0);
  int qp_base = 0;
  std::size_t image_index = 0;
};

struct EncodeOutcome {
  double bits = 0.0;
  Image decoded;
};

inline fs::path cell_directory(const fs::path& out_dir, const std::string& detector, double theta,
                               const QpDelta& delta, int qp_base) {
  return out_dir / "cells" / detector / format_theta(theta) / delta.str() / std::to_string(qp_base);
}

/// Cache layout per encoded image: key.txt (content hash), qpmap, bits.txt,
/// decoded.pgm. A hit requires the key to match; writes go through a
/// temporary directory renamed into place.
inline EncodeOutcome encode_with_cache(const Image& image, const std::string& image_id,
                                       const QpMap& map, const std::string& codec_id,
                                       const CommandTemplate* tpl, const fs::path& job_dir) {
  const std::string qpmap_text = qpmap_to_string(map, image_id);
  const std::string pgm = pgm_bytes(image);
  std::uint64_t hash = fnv1a64(pgm);
  hash = fnv1a64(qpmap_text, hash);
  hash = fnv1a64(codec_id, hash);
  char key[24];
  std::snprintf(key, sizeof(key), "%016llx", static_cast<unsigned long long>(hash));

  const fs::path key_path = job_dir / "key.txt";
  if (fs::exists(key_path)) {
    std::ifstream key_in(key_path);
    std::string stored;
    key_in >> stored;
    if (stored == key && fs::exists(job_dir / "bits.txt") && fs::exists(job_dir / "decoded.pgm")) {
      std::ifstream bits_in(job_dir / "bits.txt");
      double bits = 0.0;
      if (bits_in >> bits) return EncodeOutcome{bits, read_pgm(job_dir / "decoded.pgm")};
    }
  }

  EncodeResult encoded;
  const fs::path tmp_dir = job_dir.parent_path() / (".tmp-" + job_dir.filename().string());
  fs::remove_all(tmp_dir);
  fs::create_directories(tmp_dir);
  if (tpl) {
    encoded = external_encode(image, map, *tpl, tmp_dir / "work", image_id);
  } else {
    encoded = mock_encode(image, map);
  }
  write_qpmap(map, image_id, tmp_dir / "qpmap");
  write_pgm(encoded.decoded, tmp_dir / "decoded.pgm");
  {
    std::ofstream bits_out(tmp_dir / "bits.txt", std::ios::binary);
    bits_out << format_double(encoded.bits) << "\n";
    std::ofstream key_out(tmp_dir / "key.txt", std::ios::binary);
    key_out << key << "\n";
  }
  fs::remove_all(job_dir);
  fs::rename(tmp_dir, job_dir);
  return EncodeOutcome{encoded.bits, std::move(encoded.decoded)};
}

}  // namespace detail

inline void report_tables(const SweepResult& result, const fs::path& out_dir);
inline void report_curves(const SweepResult& result, const fs::path& out_dir);

/// Runs the full (detector, theta, qp_delta, qp_base) grid over the corpus:
/// decide saliency, assign QPs, encode (cached), attach a quality value per
/// operating point, then aggregate rate-quality curves and BDR against the
/// constant-QP anchor. Missing external predictions mark a cell pending
/// instead of failing the sweep.
inline SweepResult run_sweep(const SweepConfig& cfg, const fs::path& corpus_dir, const fs::path& out_dir,
                             int jobs = 0) {
  cfg.validate();
  const Corpus corpus = load_corpus(corpus_dir, cfg);
  fs::create_directories(out_dir / "cells");

  std::optional<CommandTemplate> tpl;
  std::string codec_id = "mock/1";
  if (cfg.codec == "template") {
    tpl = CommandTemplate::load(cfg.codec_template);
    const std::string body = tpl->encode_cmd + "\n" + tpl->decode_cmd + "\n" + tpl->bitstream_ext;
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(detail::fnv1a64(body)));
    codec_id = std::string("template/") + buf;
  }

  // Saliency masks are shared across deltas and base QPs.
  std::map<std::tuple<std::string, double, std::string>, SaliencyMask> masks;
  for (const CorpusImage& ci : corpus.images) {
    const CtuGrid grid(ci.image.width, ci.image.height, cfg.ctu_size);
    masks.emplace(std::make_tuple("anchor", 0.0, ci.image_id), SaliencyMask::all(grid, true));
    for (const auto& [detector, boxes] : corpus.detections)
      for (double theta : cfg.thetas)
        masks.emplace(std::make_tuple(detector, theta, ci.image_id),
                      decide_saliency(grid, boxes.at(ci.image_id), theta));
  }

  std::vector<detail::EncodeJob> job_list;
  for (int base : cfg.qp_bases)
    for (std::size_t i = 0; i < corpus.images.size(); ++i)
      job_list.push_back({"anchor", 0.0, QpDelta(0), base, i});
  for (const auto& [detector, boxes] : corpus.detections)
    for (double theta : cfg.thetas)
      for (const QpDelta& delta : cfg.qp_deltas)
        for (int base : cfg.qp_bases)
          for (std::size_t i = 0; i < corpus.images.size(); ++i)
            job_list.push_back({detector, theta, delta, base, i});

  std::vector<detail::EncodeOutcome> outcomes(job_list.size());
  detail::parallel_for(job_list.size(), jobs, [&](std::size_t j) {
    const detail::EncodeJob& job = job_list[j];
    const CorpusImage& ci = corpus.images[job.image_index];
    const SaliencyMask& mask = masks.at(std::make_tuple(job.detector, job.theta, ci.image_id));
    const QpMap map = assign_qps(mask, job.qp_base, job.delta);
    const fs::path job_dir =
        detail::cell_directory(out_dir, job.detector, job.theta, job.delta, job.qp_base) / ci.image_id;
    fs::create_directories(job_dir.parent_path());
    outcomes[j] = detail::encode_with_cache(ci.image, ci.image_id, map, codec_id,
                                            tpl ? &*tpl : nullptr, job_dir);
  });

  // Index outcomes by operating point for aggregation.
  std::map<std::tuple<std::string, double, std::string, int>, std::vector<const detail::EncodeOutcome*>>
      by_point;
  for (std::size_t j = 0; j < job_list.size(); ++j) {
    const detail::EncodeJob& job = job_list[j];
    auto& slot = by_point[std::make_tuple(job.detector, job.theta, job.delta.str(), job.qp_base)];
    if (slot.empty()) slot.resize(corpus.images.size(), nullptr);
    slot[job.image_index] = &outcomes[j];
  }

  std::vector<InstanceSet> gt_sets;
  for (const CorpusImage& ci : corpus.images) gt_sets.push_back(ci.ground_truth);

  // Quality for one operating point; nullopt marks a pending external cell.
  const auto quality_of = [&](const std::string& detector, double theta, const QpDelta& delta,
                              int qp_base, const std::vector<const detail::EncodeOutcome*>& decoded,
                              std::string& note) -> std::optional<double> {
    if (cfg.quality == "proxy") {
      std::vector<InstanceSet> predictions;
      for (std::size_t i = 0; i < corpus.images.size(); ++i)
        predictions.push_back(degrade_survival_predictions(corpus.images[i].ground_truth,
                                                           corpus.images[i].image, decoded[i]->decoded));
      return weighted_ap(predictions, gt_sets).weighted_ap;
    }
    const fs::path dir = cfg.predictions_root / detector / detail::format_theta(theta) / delta.str() /
                         std::to_string(qp_base);
    if (!fs::is_directory(dir)) {
      note = "predictions pending: " + dir.string();
      return std::nullopt;
    }
    std::vector<InstanceSet> predictions;
    for (const CorpusImage& ci : corpus.images) {
      const fs::path file = dir / (ci.image_id + ".json");
      if (!fs::exists(file)) {
        note = "predictions pending: " + file.string();
        return std::nullopt;
      }
      auto sets = load_ground_truth(file);
      for (InstanceSet& s : sets) {
        if (s.image_id != ci.image_id)
          throw DataError(file.string() + ": image_id mismatch (" + s.image_id + ")");
        predictions.push_back(std::move(s));
      }
    }
    return weighted_ap(predictions, gt_sets).weighted_ap;
  };

  SweepResult result;
  result.thetas = cfg.thetas;
  for (const QpDelta& d : cfg.qp_deltas) result.qp_deltas.push_back(d.str());
  result.qp_bases = cfg.qp_bases;
  for (const auto& [name, source] : cfg.detector_sources) result.detectors.push_back(name);
  result.curve_theta = cfg.effective_curve_theta();
  result.curve_delta = cfg.effective_curve_delta().str();
  result.uncompressed_quality = cfg.uncompressed_quality;

  const auto mean_bits = [&](const std::vector<const detail::EncodeOutcome*>& decoded) {
    double total = 0.0;
    for (const auto* o : decoded) total += o->bits;
    return total / static_cast<double>(decoded.size());
  };

  // Anchor curve.
  std::optional<RdCurve> anchor_curve;
  {
    std::vector<RdPoint> points;
    bool pending = false;
    for (int base : cfg.qp_bases) {
      const auto& decoded = by_point.at(std::make_tuple("anchor", 0.0, QpDelta(0).str(), base));
      std::string note;
      const auto quality = quality_of("anchor", 0.0, QpDelta(0), base, decoded, note);
      if (!quality) {
        pending = true;
        result.anchor_note = note;
        break;
      }
      points.push_back(RdPoint{mean_bits(decoded), *quality, std::to_string(base)});
    }
    if (!pending) {
      result.anchor_points = points;
      try {
        anchor_curve.emplace("anchor", points);
      } catch (const DataError& e) {
        result.anchor_note = e.what();  // degenerate anchor: cells still report their points
      }
    }
  }

  // Cells.
  for (const auto& [detector, boxes] : corpus.detections) {
    for (double theta : cfg.thetas) {
      for (const QpDelta& delta : cfg.qp_deltas) {
        CellKey key{detector, theta, delta};
        CellResult cell;
        bool pending = false;
        for (int base : cfg.qp_bases) {
          const auto& decoded = by_point.at(std::make_tuple(detector, theta, delta.str(), base));
          std::string note;
          const auto quality = quality_of(detector, theta, delta, base, decoded, note);
          if (!quality) {
            cell.status = CellStatus::Pending;
            cell.note = note;
            cell.points.clear();
            pending = true;
            break;
          }
          cell.points.push_back(RdPoint{mean_bits(decoded), *quality, std::to_string(base)});
        }
        if (!pending) {
          try {
            const RdCurve curve(detector, cell.points);
            cell.status = CellStatus::Ok;
            if (anchor_curve) {
              cell.bdr = bd_rate(curve, *anchor_curve);
            } else {
              cell.note = "anchor unavailable";
            }
          } catch (const DataError& e) {
            cell.status = CellStatus::Error;
            cell.note = e.what();
          }
        }
        result.cells.emplace(std::move(key), std::move(cell));
      }
    }
  }

  save_sweep_result(result, out_dir / "result.json");
  report_tables(result, out_dir);
  report_curves(result, out_dir);
  return result;
}

// --- Reports ------------------------------------------------------------------

inline std::string format_bdr(double bdr) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", bdr);
  return buf;
}

/// Per detector, the theta x qp_delta BDR matrix with the best (most
/// negative) cell flagged per row; plus one detector x qp_delta matrix at the
/// reporting theta. Pending and invalid cells keep their status as markers.
inline void report_tables(const SweepResult& result, const fs::path& out_dir) {
  const fs::path tables_dir = out_dir / "tables";
  fs::create_directories(tables_dir);

  const auto cell_text = [&](const CellResult& cell) -> std::string {
    if (cell.status == CellStatus::Ok && cell.bdr) return format_bdr(*cell.bdr);
    if (cell.status == CellStatus::Error) return "error";
    return "pending";
  };

  for (const std::string& detector : result.detectors) {
    std::ofstream out(tables_dir / ("bdr_" + detector + ".csv"), std::ios::binary);
    if (!out) throw DataError("cannot write BDR table for " + detector);
    out << "qp_delta";
    for (double theta : result.thetas) out << ",theta_" << detail::format_theta(theta);
    out << ",best_theta\n";
    for (const std::string& delta_text : result.qp_deltas) {
      const QpDelta delta = QpDelta::parse(delta_text);
      out << delta_text;
      std::optional<double> best;
      std::string best_theta;
      for (double theta : result.thetas) {
        const auto it = result.cells.find(CellKey{detector, theta, delta});
        if (it == result.cells.end()) {
          out << ",missing";
          continue;
        }
        out << "," << cell_text(it->second);
        if (it->second.status == CellStatus::Ok && it->second.bdr &&
            (!best || *it->second.bdr < *best)) {
          best = *it->second.bdr;
          best_theta = detail::format_theta(theta);
        }
      }
      out << "," << best_theta << "\n";
    }
  }

  std::ofstream out(tables_dir /
                        ("bdr_detectors_theta" + detail::format_theta(result.curve_theta) + ".csv"),
                    std::ios::binary);
  if (!out) throw DataError("cannot write detector BDR table");
  out << "detector";
  for (const std::string& delta_text : result.qp_deltas) out << ",delta_" << delta_text;
  out << ",best_delta\n";
  for (const std::string& detector : result.detectors) {
    out << detector;
    std::optional<double> best;
    std::string best_delta;
    for (const std::string& delta_text : result.qp_deltas) {
      const auto it = result.cells.find(CellKey{detector, result.curve_theta, QpDelta::parse(delta_text)});
      if (it == result.cells.end()) {
        out << ",missing";
        continue;
      }
      out << "," << cell_text(it->second);
      if (it->second.status == CellStatus::Ok && it->second.bdr && (!best || *it->second.bdr < *best)) {
        best = *it->second.bdr;
        best_delta = delta_text;
      }
    }
    out << "," << best_delta << "\n";
  }
}

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct SvgSeries {
  std::string name;
  std::vector<RdPoint> points;
};

/// Minimal deterministic SVG line plot: rate on x, quality on y.
inline std::string render_rate_quality_svg(const std::vector<SvgSeries>& series,
                                           std::optional<double> reference_quality) {
  const double width = 880, height = 560;
  const double left = 80, right = 30, top = 30, bottom = 60;
  double rate_min = 0.0, rate_max = 1.0, q_min = 0.0, q_max = 1.0;
  bool first = true;
  for (const auto& s : series) {
    for (const RdPoint& p : s.points) {
      if (first) {
        rate_min = rate_max = p.rate;
        q_min = q_max = p.quality;
        first = false;
      }
      rate_min = std::min(rate_min, p.rate);
      rate_max = std::max(rate_max, p.rate);
      q_min = std::min(q_min, p.quality);
      q_max = std::max(q_max, p.quality);
    }
  }
  if (reference_quality) {
    q_min = std::min(q_min, *reference_quality);
    q_max = std::max(q_max, *reference_quality);
  }
  if (rate_max <= rate_min) rate_max = rate_min + 1.0;
  if (q_max <= q_min) q_max = q_min + 1.0;
  const double rate_pad = 0.05 * (rate_max - rate_min);
  const double q_pad = 0.05 * (q_max - q_min);
  rate_min -= rate_pad;
  rate_max += rate_pad;
  q_min -= q_pad;
  q_max += q_pad;

  const auto sx = [&](double rate) {
    return left + (rate - rate_min) / (rate_max - rate_min) * (width - left - right);
  };
  const auto sy = [&](double q) {
    return height - bottom - (q - q_min) / (q_max - q_min) * (height - top - bottom);
  };
  const auto fmt = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return std::string(buf);
  };
  const auto fmt_tick = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return std::string(buf);
  };

  static const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                   "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  svg << "  <rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height
      << "\" fill=\"white\"/>\n";
  svg << "  <line x1=\"" << fmt(left) << "\" y1=\"" << fmt(height - bottom) << "\" x2=\""
      << fmt(width - right) << "\" y2=\"" << fmt(height - bottom)
      << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  svg << "  <line x1=\"" << fmt(left) << "\" y1=\"" << fmt(top) << "\" x2=\"" << fmt(left)
      << "\" y2=\"" << fmt(height - bottom) << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double rate = rate_min + (rate_max - rate_min) * i / 4.0;
    const double q = q_min + (q_max - q_min) * i / 4.0;
    svg << "  <text x=\"" << fmt(sx(rate)) << "\" y=\"" << fmt(height - bottom + 20)
        << "\" font-size=\"12\" text-anchor=\"middle\">" << fmt_tick(rate) << "</text>\n";
    svg << "  <text x=\"" << fmt(left - 8) << "\" y=\"" << fmt(sy(q) + 4)
        << "\" font-size=\"12\" text-anchor=\"end\">" << fmt_tick(q) << "</text>\n";
  }
  svg << "  <text x=\"" << fmt((left + width - right) / 2.0) << "\" y=\"" << fmt(height - 15)
      << "\" font-size=\"14\" text-anchor=\"middle\">Bitrate [bits/image]</text>\n";
  svg << "  <text x=\"20\" y=\"" << fmt((top + height - bottom) / 2.0)
      << "\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 20 "
      << fmt((top + height - bottom) / 2.0) << ")\">Weighted AP</text>\n";

  if (reference_quality) {
    svg << "  <line x1=\"" << fmt(left) << "\" y1=\"" << fmt(sy(*reference_quality)) << "\" x2=\""
        << fmt(width - right) << "\" y2=\"" << fmt(sy(*reference_quality))
        << "\" stroke=\"black\" stroke-width=\"1\" stroke-dasharray=\"2,4\"/>\n";
  }

  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = series[s].name == "anchor"
                            ? "#000000"
                            : kPalette[s % (sizeof(kPalette) / sizeof(kPalette[0]))];
    svg << "  <polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < series[s].points.size(); ++i) {
      if (i) svg << " ";
      svg << fmt(sx(series[s].points[i].rate)) << "," << fmt(sy(series[s].points[i].quality));
    }
    svg << "\"/>\n";
    for (const RdPoint& p : series[s].points) {
      svg << "  <circle cx=\"" << fmt(sx(p.rate)) << "\" cy=\"" << fmt(sy(p.quality))
          << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    svg << "  <text x=\"" << fmt(width - right - 160) << "\" y=\"" << fmt(top + 18 + 16 * s)
        << "\" font-size=\"13\" fill=\"" << color << "\">" << xml_escape(series[s].name)
        << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace detail

/// One rate-quality CSV per detector at the reporting operating point, an
/// anchor CSV, and a combined SVG plot (with the optional uncompressed-input
/// quality drawn as a dashed reference line).
inline void report_curves(const SweepResult& result, const fs::path& out_dir) {
  const fs::path curves_dir = out_dir / "curves";
  fs::create_directories(curves_dir);
  const QpDelta delta = QpDelta::parse(result.curve_delta);

  std::vector<detail::SvgSeries> series;
  const auto write_points_csv = [&](const std::string& name, const std::vector<RdPoint>& points) {
    std::ofstream out(curves_dir / (name + ".csv"), std::ios::binary);
    if (!out) throw DataError("cannot write curve CSV for " + name);
    out << kCurveCsvHeader << "\n";
    for (const RdPoint& p : points)
      out << name << "," << p.label << "," << format_double(p.rate) << "," << format_double(p.quality)
          << "\n";
  };

  if (!result.anchor_points.empty()) {
    write_points_csv("anchor", result.anchor_points);
    series.push_back({"anchor", result.anchor_points});
  }
  for (const std::string& detector : result.detectors) {
    const auto it = result.cells.find(CellKey{detector, result.curve_theta, delta});
    if (it == result.cells.end() || it->second.points.empty()) continue;
    write_points_csv(detector, it->second.points);
    series.push_back({detector, it->second.points});
  }

  std::ofstream svg(curves_dir / "rate_ap.svg", std::ios::binary);
  if (!svg) throw DataError("cannot write rate_ap.svg");
  svg << detail::render_rate_quality_svg(series, result.uncompressed_quality);
}

}  // namespace vcmqp
