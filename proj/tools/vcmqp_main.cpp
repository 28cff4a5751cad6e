// vcmqp command-line tool: saliency decision, QP-map generation, encoding,
// AP evaluation, BD-rate and full sweeps, one subcommand per stage.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 external-tool error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vcmqp/bdrate.hpp"
#include "vcmqp/codec.hpp"
#include "vcmqp/error.hpp"
#include "vcmqp/experiment.hpp"
#include "vcmqp/geometry.hpp"
#include "vcmqp/image.hpp"
#include "vcmqp/ingest.hpp"
#include "vcmqp/metrics.hpp"
#include "vcmqp/qpmap.hpp"

namespace fs = std::filesystem;

namespace {

std::pair<int, int> parse_image_size(const std::string& text) {
  int width = 0, height = 0;
  char extra = 0;
  if (std::sscanf(text.c_str(), "%dx%d%c", &width, &height, &extra) != 2 || width <= 0 || height <= 0)
    throw vcmqp::DataError("--image-size expects WxH, got \"" + text + "\"");
  return {width, height};
}

std::vector<vcmqp::Rect> boxes_of(const vcmqp::ImageRecord& record) {
  std::vector<vcmqp::Rect> boxes;
  for (const vcmqp::Detection& det : record.detections) boxes.push_back(det.bbox);
  return boxes;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw vcmqp::DataError("cannot write " + path.string());
  out << text;
}

struct DecideArgs {
  std::string dets;
  std::string out;
  std::string image_size;
  std::string class_map;
  double theta = 0.0;
  double min_score = 0.0;
  int ctu = 128;
};

void run_decide(const DecideArgs& args) {
  const vcmqp::ClassMap class_map =
      args.class_map.empty() ? vcmqp::ClassMap::cityscapes() : vcmqp::ClassMap::load(args.class_map);
  const auto records = vcmqp::load_detections(args.dets, class_map, args.min_score);
  if (records.empty()) throw vcmqp::DataError(args.dets + ": no detection records");

  std::optional<std::pair<int, int>> forced_size;
  if (!args.image_size.empty()) forced_size = parse_image_size(args.image_size);

  vcmqp::json output = vcmqp::json::array();
  for (const vcmqp::ImageRecord& record : records) {
    if (forced_size && (record.width != forced_size->first || record.height != forced_size->second))
      throw vcmqp::DataError(args.dets + ": record " + record.image_id + " is " +
                             std::to_string(record.width) + "x" + std::to_string(record.height) +
                             ", but --image-size says " + args.image_size);
    const vcmqp::CtuGrid grid(record.width, record.height, args.ctu);
    const vcmqp::SaliencyMask mask = vcmqp::decide_saliency(grid, boxes_of(record), args.theta);
    output.push_back(vcmqp::mask_to_json(mask, record.image_id));
  }
  const std::string text =
      (output.size() == 1 ? output[0].dump(2) : output.dump(2)) + "\n";
  if (args.out.empty() || args.out == "-")
    std::cout << text;
  else
    write_text(args.out, text);
}

struct QpmapArgs {
  std::string mask;
  std::string out;
  int qp_base = 22;
  std::string qp_delta = "max";
};

void run_qpmap(const QpmapArgs& args) {
  const vcmqp::MaskRecord record = vcmqp::read_mask_json(args.mask);
  const vcmqp::QpMap map =
      vcmqp::assign_qps(record.mask, args.qp_base, vcmqp::QpDelta::parse(args.qp_delta));
  if (args.out.empty() || args.out == "-")
    std::cout << vcmqp::qpmap_to_string(map, record.image_id);
  else
    vcmqp::write_qpmap(map, record.image_id, args.out);
}

struct EncodeArgs {
  std::string image;
  std::string qpmap;
  std::string out_dir;
  std::string template_path;
};

void run_encode(const EncodeArgs& args) {
  const vcmqp::Image image = vcmqp::read_pgm(args.image);
  const vcmqp::QpMapFile map_file = vcmqp::read_qpmap(args.qpmap);
  const fs::path out_dir(args.out_dir);
  fs::create_directories(out_dir);

  vcmqp::EncodeResult result;
  if (args.template_path.empty()) {
    result = vcmqp::mock_encode(image, map_file.map);
  } else {
    const vcmqp::CommandTemplate tpl = vcmqp::CommandTemplate::load(args.template_path);
    result = vcmqp::external_encode(image, map_file.map, tpl, out_dir / "work", map_file.image_id);
  }
  vcmqp::write_pgm(result.decoded, out_dir / "decoded.pgm");
  write_text(out_dir / "bits.txt", vcmqp::format_double(result.bits) + "\n");
  std::cout << vcmqp::format_double(result.bits) << "\n";
}

struct EvalApArgs {
  std::string pred;
  std::string gt;
  std::string classes;
  std::string json_out;
  std::string csv_out;
};

void run_eval_ap(const EvalApArgs& args) {
  const auto pred_map = vcmqp::load_instance_sets(args.pred);
  const auto gt_map = vcmqp::load_instance_sets(args.gt);
  std::vector<vcmqp::InstanceSet> preds, gts;
  for (const auto& [id, set] : pred_map) preds.push_back(set);
  for (const auto& [id, set] : gt_map) gts.push_back(set);

  std::vector<std::string> classes;
  if (!args.classes.empty()) {
    std::istringstream ss(args.classes);
    std::string cls;
    while (std::getline(ss, cls, ',')) classes.push_back(cls);
  }
  const vcmqp::ApReport report = vcmqp::weighted_ap(preds, gts, classes);

  if (!args.json_out.empty()) {
    vcmqp::json per_class = vcmqp::json::object();
    for (const auto& [cls, ap] : report.per_class_ap) per_class[cls] = ap;
    vcmqp::json counts = vcmqp::json::object();
    for (const auto& [cls, n] : report.per_class_count) counts[cls] = n;
    const vcmqp::json out{{"weighted_ap", report.weighted_ap},
                          {"per_class_ap", per_class},
                          {"per_class_count", counts}};
    write_text(args.json_out, out.dump(2) + "\n");
  }
  if (!args.csv_out.empty()) {
    std::ostringstream csv;
    csv << "class,gt_count,ap\n";
    for (const auto& [cls, n] : report.per_class_count) {
      csv << cls << "," << n << ",";
      const auto it = report.per_class_ap.find(cls);
      if (it != report.per_class_ap.end()) csv << vcmqp::format_double(it->second);
      csv << "\n";
    }
    csv << "weighted,," << vcmqp::format_double(report.weighted_ap) << "\n";
    write_text(args.csv_out, csv.str());
  }
  std::printf("%.6f\n", report.weighted_ap);
}

struct BdrateArgs {
  std::string anchor;
  std::string test;
  std::string anchor_name;
  std::string test_name;
};

const vcmqp::RdCurve& pick_curve(const std::vector<vcmqp::RdCurve>& curves, const std::string& name,
                                 const std::string& file) {
  if (name.empty()) {
    if (curves.size() != 1)
      throw vcmqp::DataError(file + ": contains " + std::to_string(curves.size()) +
                             " curves, select one with --anchor-name/--test-name");
    return curves.front();
  }
  for (const vcmqp::RdCurve& c : curves)
    if (c.name() == name) return c;
  throw vcmqp::DataError(file + ": no curve named \"" + name + "\"");
}

void run_bdrate(const BdrateArgs& args) {
  const auto anchor_curves = vcmqp::read_curves_csv(fs::path(args.anchor));
  const auto test_curves = vcmqp::read_curves_csv(fs::path(args.test));
  const double bdr = vcmqp::bd_rate(pick_curve(test_curves, args.test_name, args.test),
                                    pick_curve(anchor_curves, args.anchor_name, args.anchor));
  std::printf("%.6f\n", bdr);
}

struct SweepArgs {
  std::string config;
  std::string corpus;
  std::string out;
  int jobs = 0;
};

void run_sweep_cmd(const SweepArgs& args) {
  const vcmqp::SweepConfig cfg = vcmqp::SweepConfig::load(args.config);
  const vcmqp::SweepResult result = vcmqp::run_sweep(cfg, args.corpus, args.out, args.jobs);
  int ok = 0, pending = 0, error = 0;
  for (const auto& [key, cell] : result.cells) {
    switch (cell.status) {
      case vcmqp::CellStatus::Ok: ++ok; break;
      case vcmqp::CellStatus::Pending: ++pending; break;
      case vcmqp::CellStatus::Error: ++error; break;
    }
  }
  std::cerr << "sweep finished: " << ok << " cells ok, " << pending << " pending, " << error
            << " invalid; results under " << args.out << "\n";
}

struct ReportArgs {
  std::string result;
  std::string out;
};

void run_report(const ReportArgs& args) {
  const vcmqp::SweepResult result = vcmqp::load_sweep_result(args.result);
  vcmqp::report_tables(result, args.out);
  vcmqp::report_curves(result, args.out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Saliency-driven CTU QP maps and rate-accuracy evaluation for machine-vision coding"};
  app.require_subcommand(1);
  long long seed = 0;
  app.add_option("--seed", seed,
                 "Accepted for harness compatibility and ignored; all operations are deterministic");

  DecideArgs decide_args;
  auto* decide = app.add_subcommand("decide", "Derive the per-CTU saliency mask from detections");
  decide->add_option("--dets", decide_args.dets, "Detection JSON file (vcm-det/1)")->required();
  decide->add_option("--theta", decide_args.theta, "Relative-overlap threshold in [0,1)")
      ->default_val(0.0);
  decide->add_option("--ctu", decide_args.ctu, "CTU size in pixels")->default_val(128);
  decide->add_option("--image-size", decide_args.image_size, "Expected image size WxH (validated)");
  decide->add_option("--class-map", decide_args.class_map,
                     "Label map file (default: Cityscapes identity)");
  decide->add_option("--min-score", decide_args.min_score, "Drop detections below this score")
      ->default_val(0.0);
  decide->add_option("--out", decide_args.out, "Output mask JSON ('-' for stdout)");
  decide->callback([&] { run_decide(decide_args); });

  QpmapArgs qpmap_args;
  auto* qpmap = app.add_subcommand("qpmap", "Turn a saliency mask into a per-CTU QP map sidecar");
  qpmap->add_option("--mask", qpmap_args.mask, "Saliency mask JSON (vcm-mask/1)")->required();
  qpmap->add_option("--qp-base", qpmap_args.qp_base, "Base QP for salient CTUs [0,63]")->required();
  qpmap->add_option("--qp-delta", qpmap_args.qp_delta, "Offset for non-salient CTUs or \"max\"")
      ->required();
  qpmap->add_option("--out", qpmap_args.out, "Output qpmap sidecar ('-' for stdout)");
  qpmap->callback([&] { run_qpmap(qpmap_args); });

  EncodeArgs encode_args;
  auto* encode = app.add_subcommand("encode", "Encode a PGM image with a QP map (mock or external)");
  encode->add_option("--image", encode_args.image, "Input image (PGM, P5)")->required();
  encode->add_option("--qpmap", encode_args.qpmap, "QP map sidecar")->required();
  encode->add_option("--out-dir", encode_args.out_dir, "Directory for decoded.pgm and bits.txt")
      ->required();
  encode->add_option("--template", encode_args.template_path,
                     "Command template for an external encoder (default: built-in mock codec)");
  encode->callback([&] { run_encode(encode_args); });

  EvalApArgs eval_args;
  auto* eval_ap = app.add_subcommand("eval-ap", "Weighted instance-segmentation AP of predictions vs GT");
  eval_ap->add_option("--pred", eval_args.pred, "Prediction instance JSON file or directory")->required();
  eval_ap->add_option("--gt", eval_args.gt, "Ground-truth instance JSON file or directory")->required();
  eval_ap->add_option("--classes", eval_args.classes, "Comma-separated class subset (default: all GT classes)");
  eval_ap->add_option("--json", eval_args.json_out, "Write the full report as JSON");
  eval_ap->add_option("--csv", eval_args.csv_out, "Write the per-class table as CSV");
  eval_ap->callback([&] { run_eval_ap(eval_args); });

  BdrateArgs bdrate_args;
  auto* bdrate = app.add_subcommand("bdrate", "Bjontegaard delta-rate of a test curve vs an anchor");
  bdrate->add_option("--anchor", bdrate_args.anchor, "Anchor curve CSV (name,label,rate,quality)")
      ->required();
  bdrate->add_option("--test", bdrate_args.test, "Test curve CSV")->required();
  bdrate->add_option("--anchor-name", bdrate_args.anchor_name, "Curve name when the CSV holds several");
  bdrate->add_option("--test-name", bdrate_args.test_name, "Curve name when the CSV holds several");
  bdrate->callback([&] { run_bdrate(bdrate_args); });

  SweepArgs sweep_args;
  auto* sweep = app.add_subcommand("sweep", "Run the full (theta, qp_delta, qp_base) grid over a corpus");
  sweep->add_option("--config", sweep_args.config, "Sweep config file")->required();
  sweep->add_option("--corpus", sweep_args.corpus, "Corpus directory (images/, gt/, detections)")
      ->required();
  sweep->add_option("--out", sweep_args.out, "Output directory")->required();
  sweep->add_option("--jobs", sweep_args.jobs, "Worker threads (default: all processors)")->default_val(0);
  sweep->callback([&] { run_sweep_cmd(sweep_args); });

  ReportArgs report_args;
  auto* report = app.add_subcommand("report", "Regenerate tables and curves from a sweep result");
  report->add_option("--result", report_args.result, "result.json produced by sweep")->required();
  report->add_option("--out", report_args.out, "Output directory")->required();
  report->callback([&] { run_report(report_args); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const vcmqp::ExternalToolError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const vcmqp::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
