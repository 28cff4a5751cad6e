#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "vcmqp/error.hpp"
#include "vcmqp/mask.hpp"

namespace vcmqp {

/// Cityscapes-style threshold ladder 0.50:0.05:0.95.
inline const std::vector<double>& default_iou_thresholds() {
  static const std::vector<double> thresholds = {0.50, 0.55, 0.60, 0.65, 0.70,
                                                 0.75, 0.80, 0.85, 0.90, 0.95};
  return thresholds;
}

/// Pixel IoU of two equally-sized masks, computed by walking the run lengths.
inline double mask_iou(const InstanceMask& a, const InstanceMask& b) {
  if (a.width() != b.width() || a.height() != b.height())
    throw DataError("mask_iou: mask dimensions differ");
  const auto& ra = a.rle();
  const auto& rb = b.rle();
  std::size_t ia = 0, ib = 0;
  std::int64_t left_a = ra.empty() ? 0 : ra[0];
  std::int64_t left_b = rb.empty() ? 0 : rb[0];
  bool fg_a = false, fg_b = false;
  std::int64_t intersection = 0, uni = 0;
  std::int64_t remaining = static_cast<std::int64_t>(a.width()) * a.height();
  while (remaining > 0) {
    while (left_a == 0 && ia + 1 < ra.size()) {
      left_a = ra[++ia];
      fg_a = (ia % 2 == 1);
    }
    while (left_b == 0 && ib + 1 < rb.size()) {
      left_b = rb[++ib];
      fg_b = (ib % 2 == 1);
    }
    const std::int64_t chunk = std::min({left_a, left_b, remaining});
    if (fg_a && fg_b) intersection += chunk;
    if (fg_a || fg_b) uni += chunk;
    left_a -= chunk;
    left_b -= chunk;
    remaining -= chunk;
  }
  if (uni == 0) return 0.0;  // unreachable for valid instances
  return static_cast<double>(intersection) / static_cast<double>(uni);
}

struct ApReport {
  std::map<std::string, double> per_class_ap;        // only classes with ground truth
  std::map<std::string, std::int64_t> per_class_count;
  double weighted_ap = 0.0;
};

namespace detail {

struct RankedPrediction {
  double score;
  std::size_t image_index;
  std::size_t pred_index;
  std::int64_t pred_id;
};

// Area under the precision-recall curve: monotone precision envelope, then
// exact stepwise integration over the recall increments.
inline double ap_from_ranked_matches(const std::vector<bool>& is_tp, std::int64_t n_gt) {
  if (n_gt <= 0) throw DataError("ap_from_ranked_matches: no ground truth");
  if (is_tp.empty()) return 0.0;
  std::vector<double> precision(is_tp.size()), recall(is_tp.size());
  std::int64_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < is_tp.size(); ++i) {
    (is_tp[i] ? tp : fp)++;
    precision[i] = static_cast<double>(tp) / static_cast<double>(tp + fp);
    recall[i] = static_cast<double>(tp) / static_cast<double>(n_gt);
  }
  for (std::size_t i = precision.size() - 1; i-- > 0;)
    precision[i] = std::max(precision[i], precision[i + 1]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < precision.size(); ++i) {
    if (recall[i] > prev_recall) {
      ap += (recall[i] - prev_recall) * precision[i];
      prev_recall = recall[i];
    }
  }
  return ap;
}

inline void check_same_image_ids(std::span<const InstanceSet> predictions,
                                 std::span<const InstanceSet> ground_truth) {
  std::set<std::string> pred_ids, gt_ids;
  for (const auto& s : predictions)
    if (!pred_ids.insert(s.image_id).second) throw DataError("duplicate prediction set for image " + s.image_id);
  for (const auto& s : ground_truth)
    if (!gt_ids.insert(s.image_id).second) throw DataError("duplicate ground-truth set for image " + s.image_id);
  if (pred_ids != gt_ids)
    throw DataError("prediction and ground-truth files do not cover the same image_id set");
}

}  // namespace detail

/// Average precision of one class over the given IoU thresholds, pooled over
/// all images: predictions are ranked by score and greedily matched to the
/// highest-IoU unmatched ground-truth instance of the same image.
/// Returns nullopt when the class has no ground-truth instances.
inline std::optional<double> class_ap(std::span<const InstanceSet> predictions,
                                      std::span<const InstanceSet> ground_truth,
                                      const std::string& class_label,
                                      const std::vector<double>& iou_thresholds = default_iou_thresholds()) {
  detail::check_same_image_ids(predictions, ground_truth);
  if (iou_thresholds.empty()) throw DataError("class_ap: empty IoU threshold list");

  // Align prediction sets to ground-truth sets by image_id.
  std::map<std::string, std::size_t> gt_index;
  for (std::size_t i = 0; i < ground_truth.size(); ++i) gt_index[ground_truth[i].image_id] = i;

  std::vector<std::vector<const Instance*>> gts(ground_truth.size());
  std::int64_t n_gt = 0;
  for (std::size_t i = 0; i < ground_truth.size(); ++i) {
    for (const Instance& inst : ground_truth[i].instances) {
      if (inst.class_label != class_label) continue;
      gts[i].push_back(&inst);
      ++n_gt;
    }
  }
  if (n_gt == 0) return std::nullopt;

  std::vector<std::vector<const Instance*>> preds(ground_truth.size());
  std::vector<detail::RankedPrediction> ranked;
  for (const InstanceSet& set : predictions) {
    const std::size_t i = gt_index.at(set.image_id);
    for (const Instance& inst : set.instances) {
      if (inst.class_label != class_label) continue;
      preds[i].push_back(&inst);
      ranked.push_back({inst.score, i, preds[i].size() - 1, inst.id});
    }
  }
  std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image_index != b.image_index) return a.image_index < b.image_index;
    return a.pred_id < b.pred_id;
  });

  // IoU is threshold-independent; compute each pair once.
  std::vector<std::vector<std::vector<double>>> iou(ground_truth.size());
  for (std::size_t i = 0; i < ground_truth.size(); ++i) {
    iou[i].resize(preds[i].size());
    for (std::size_t p = 0; p < preds[i].size(); ++p) {
      iou[i][p].resize(gts[i].size());
      for (std::size_t g = 0; g < gts[i].size(); ++g)
        iou[i][p][g] = mask_iou(preds[i][p]->mask, gts[i][g]->mask);
    }
  }

  double ap_sum = 0.0;
  for (double threshold : iou_thresholds) {
    std::vector<std::vector<bool>> gt_matched(ground_truth.size());
    for (std::size_t i = 0; i < ground_truth.size(); ++i) gt_matched[i].assign(gts[i].size(), false);

    std::vector<bool> is_tp;
    is_tp.reserve(ranked.size());
    for (const auto& rp : ranked) {
      int best_gt = -1;
      double best_iou = -1.0;
      for (std::size_t g = 0; g < gts[rp.image_index].size(); ++g) {
        if (gt_matched[rp.image_index][g]) continue;
        const double value = iou[rp.image_index][rp.pred_index][g];
        if (value >= threshold && value > best_iou) {
          best_iou = value;
          best_gt = static_cast<int>(g);
        }
      }
      if (best_gt >= 0) {
        gt_matched[rp.image_index][static_cast<std::size_t>(best_gt)] = true;
        is_tp.push_back(true);
      } else {
        is_tp.push_back(false);
      }
    }
    ap_sum += detail::ap_from_ranked_matches(is_tp, n_gt);
  }
  return ap_sum / static_cast<double>(iou_thresholds.size());
}

/// Instance-count-weighted mean of the per-class APs. Classes without any
/// ground-truth instance are excluded from both numerator and denominator.
inline ApReport weighted_ap(std::span<const InstanceSet> predictions,
                            std::span<const InstanceSet> ground_truth,
                            std::vector<std::string> classes = {},
                            const std::vector<double>& iou_thresholds = default_iou_thresholds()) {
  detail::check_same_image_ids(predictions, ground_truth);
  if (classes.empty()) {
    std::set<std::string> seen;
    for (const InstanceSet& set : ground_truth)
      for (const Instance& inst : set.instances) seen.insert(inst.class_label);
    classes.assign(seen.begin(), seen.end());
  }

  ApReport report;
  double weighted_sum = 0.0;
  std::int64_t total_count = 0;
  for (const std::string& cls : classes) {
    std::int64_t count = 0;
    for (const InstanceSet& set : ground_truth)
      for (const Instance& inst : set.instances)
        if (inst.class_label == cls) ++count;
    report.per_class_count[cls] = count;
    if (count == 0) continue;  // underrepresented class: no AP contribution
    const auto ap = class_ap(predictions, ground_truth, cls, iou_thresholds);
    report.per_class_ap[cls] = *ap;
    weighted_sum += static_cast<double>(count) * (*ap);
    total_count += count;
  }
  if (total_count == 0) throw DataError("weighted_ap: no ground-truth instances in any requested class");
  report.weighted_ap = weighted_sum / static_cast<double>(total_count);
  return report;
}

inline ApReport weighted_ap(const std::vector<InstanceSet>& predictions,
                            const std::vector<InstanceSet>& ground_truth,
                            std::vector<std::string> classes = {},
                            const std::vector<double>& iou_thresholds = default_iou_thresholds()) {
  return weighted_ap(std::span<const InstanceSet>(predictions), std::span<const InstanceSet>(ground_truth),
                     std::move(classes), iou_thresholds);
}

}  // namespace vcmqp
