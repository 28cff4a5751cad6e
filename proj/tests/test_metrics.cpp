#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "vcmqp/metrics.hpp"

using vcmqp::DataError;
using vcmqp::Instance;
using vcmqp::InstanceMask;
using vcmqp::InstanceSet;

namespace {

InstanceMask rect_mask(int W, int H, int x, int y, int w, int h) {
  std::vector<std::uint8_t> px(static_cast<std::size_t>(W) * H, 0);
  for (int yy = y; yy < y + h; ++yy)
    for (int xx = x; xx < x + w; ++xx) px[static_cast<std::size_t>(yy) * W + xx] = 1;
  return InstanceMask::from_pixels(W, H, px);
}

InstanceMask pixels_mask(int W, int H, const std::vector<std::pair<int, int>>& coords) {
  std::vector<std::uint8_t> px(static_cast<std::size_t>(W) * H, 0);
  for (const auto& [x, y] : coords) px[static_cast<std::size_t>(y) * W + x] = 1;
  return InstanceMask::from_pixels(W, H, px);
}

// Pixel-level IoU oracle, independent of the RLE walk.
double iou_oracle(const InstanceMask& a, const InstanceMask& b) {
  const auto pa = a.pixels();
  const auto pb = b.pixels();
  long long inter = 0, uni = 0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i] && pb[i]) ++inter;
    if (pa[i] || pb[i]) ++uni;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Exhaustive single-threshold AP oracle for tiny instance sets. Matches
// greedily in score order against pixel IoU, then integrates the monotone
// precision envelope by rescanning every recall segment.
double oracle_ap(const std::vector<InstanceSet>& preds, const std::vector<InstanceSet>& gts,
                 const std::string& cls, double threshold) {
  struct Entry {
    double score;
    std::size_t image;
    std::int64_t id;
    const Instance* inst;
  };
  std::vector<Entry> entries;
  std::int64_t n_gt = 0;
  for (std::size_t i = 0; i < gts.size(); ++i)
    for (const Instance& g : gts[i].instances)
      if (g.class_label == cls) ++n_gt;
  REQUIRE(n_gt > 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    REQUIRE(preds[i].image_id == gts[i].image_id);
    for (const Instance& p : preds[i].instances)
      if (p.class_label == cls) entries.push_back({p.score, i, p.id, &p});
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image != b.image) return a.image < b.image;
    return a.id < b.id;
  });

  std::vector<std::vector<bool>> used(gts.size());
  for (std::size_t i = 0; i < gts.size(); ++i) used[i].assign(gts[i].instances.size(), false);
  std::vector<double> precision, recall;
  int tp = 0, fp = 0;
  for (const Entry& e : entries) {
    int best = -1;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < gts[e.image].instances.size(); ++g) {
      const Instance& gt = gts[e.image].instances[g];
      if (gt.class_label != cls || used[e.image][g]) continue;
      const double iou = iou_oracle(e.inst->mask, gt.mask);
      if (iou >= threshold && iou > best_iou) {
        best_iou = iou;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      used[e.image][static_cast<std::size_t>(best)] = true;
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / (tp + fp));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
  }

  // integrate by recall segments, recomputing the envelope on every segment
  double ap = 0.0, prev = 0.0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    if (recall[i] <= prev) continue;
    double env = 0.0;
    for (std::size_t j = 0; j < recall.size(); ++j)
      if (recall[j] >= recall[i]) env = std::max(env, precision[j]);
    ap += (recall[i] - prev) * env;
    prev = recall[i];
  }
  return ap;
}

InstanceSet single_image_set(const std::string& id, std::vector<Instance> instances) {
  InstanceSet set;
  set.image_id = id;
  set.width = 32;
  set.height = 32;
  set.instances = std::move(instances);
  return set;
}

}  // namespace

TEST_CASE("mask_iou examples and oracle agreement") {
  const InstanceMask a = pixels_mask(2, 2, {{0, 0}, {0, 1}});
  const InstanceMask b = pixels_mask(2, 2, {{0, 1}, {1, 1}});
  CHECK(vcmqp::mask_iou(a, a) == 1.0);
  CHECK(vcmqp::mask_iou(a, b) == Catch::Approx(1.0 / 3.0));
  const InstanceMask c = pixels_mask(2, 2, {{1, 0}});
  CHECK(vcmqp::mask_iou(b, c) == 0.0);
  CHECK_THROWS_AS(vcmqp::mask_iou(a, pixels_mask(3, 2, {{0, 0}})), DataError);

  std::mt19937 rng(404);
  for (int i = 0; i < 200; ++i) {
    std::uniform_int_distribution<int> dim(2, 16);
    const int W = dim(rng), H = dim(rng);
    std::bernoulli_distribution bit(0.35);
    std::vector<std::uint8_t> p1(static_cast<std::size_t>(W) * H), p2(p1);
    for (auto& v : p1) v = bit(rng);
    for (auto& v : p2) v = bit(rng);
    p1[0] = 1;  // keep masks nonempty
    p2[static_cast<std::size_t>(W) * H - 1] = 1;
    const InstanceMask m1 = InstanceMask::from_pixels(W, H, p1);
    const InstanceMask m2 = InstanceMask::from_pixels(W, H, p2);
    CHECK(vcmqp::mask_iou(m1, m2) == iou_oracle(m1, m2));
  }
}

TEST_CASE("class_ap degenerate cases") {
  const InstanceMask m = rect_mask(32, 32, 4, 4, 8, 8);
  const auto gts = std::vector<InstanceSet>{single_image_set("i0", {Instance{1, "car", 1.0, m}})};

  SECTION("perfect predictions give AP 1") {
    const auto preds = std::vector<InstanceSet>{single_image_set("i0", {Instance{1, "car", 1.0, m}})};
    CHECK(*vcmqp::class_ap(preds, gts, "car") == 1.0);
  }
  SECTION("no predictions give AP 0") {
    const auto preds = std::vector<InstanceSet>{single_image_set("i0", {})};
    CHECK(*vcmqp::class_ap(preds, gts, "car") == 0.0);
  }
  SECTION("class without ground truth is undefined, not zero") {
    const auto preds = std::vector<InstanceSet>{single_image_set("i0", {Instance{1, "bus", 0.8, m}})};
    CHECK_FALSE(vcmqp::class_ap(preds, gts, "bus").has_value());
  }
  SECTION("mismatched image sets are rejected") {
    const auto preds = std::vector<InstanceSet>{single_image_set("other", {})};
    CHECK_THROWS_AS(vcmqp::class_ap(preds, gts, "car"), DataError);
  }
}

TEST_CASE("prediction ordering changes AP exactly as the PR oracle says") {
  const InstanceMask good = rect_mask(32, 32, 4, 4, 8, 8);
  const InstanceMask spurious = rect_mask(32, 32, 20, 20, 6, 6);
  const auto gts = std::vector<InstanceSet>{single_image_set("i0", {Instance{1, "car", 1.0, good}})};
  const std::vector<double> t50 = {0.5};

  const auto correct_first = std::vector<InstanceSet>{single_image_set(
      "i0", {Instance{1, "car", 0.9, good}, Instance{2, "car", 0.8, spurious}})};
  const auto spurious_first = std::vector<InstanceSet>{single_image_set(
      "i0", {Instance{1, "car", 0.8, good}, Instance{2, "car", 0.9, spurious}})};

  CHECK(*vcmqp::class_ap(correct_first, gts, "car", t50) == 1.0);
  CHECK(*vcmqp::class_ap(spurious_first, gts, "car", t50) == 0.5);
  CHECK(oracle_ap(correct_first, gts, "car", 0.5) == 1.0);
  CHECK(oracle_ap(spurious_first, gts, "car", 0.5) == 0.5);
}

TEST_CASE("class_ap agrees with the exhaustive oracle on random tiny sets") {
  std::mt19937 rng(777);
  std::uniform_int_distribution<int> count(1, 5);
  std::uniform_real_distribution<double> score(0.05, 1.0);
  std::uniform_int_distribution<int> slot(0, 4);  // 5x5 grid of disjoint 6x6 cells

  for (int trial = 0; trial < 120; ++trial) {
    const int n_gt = count(rng), n_pred = count(rng);
    std::vector<Instance> gt_insts, pred_insts;
    for (int g = 0; g < n_gt; ++g)
      gt_insts.push_back(Instance{g + 1, "car", 1.0, rect_mask(32, 32, slot(rng) * 6, g * 6, 5, 5)});
    for (int p = 0; p < n_pred; ++p) {
      // half the predictions shadow a GT cell, half land anywhere
      const int row = slot(rng) % n_gt;
      const int x = (p % 2 == 0) ? static_cast<int>(gt_insts[row].mask.rle()[0] > 0 ? slot(rng) * 6 : 0)
                                 : slot(rng) * 6;
      pred_insts.push_back(Instance{100 + p, "car", score(rng), rect_mask(32, 32, x, row * 6, 5, 5)});
    }
    const auto gts = std::vector<InstanceSet>{single_image_set("i0", gt_insts)};
    const auto preds = std::vector<InstanceSet>{single_image_set("i0", pred_insts)};
    for (double t : {0.5, 0.75}) {
      const std::vector<double> thresholds = {t};
      CHECK(*vcmqp::class_ap(preds, gts, "car", thresholds) ==
            Catch::Approx(oracle_ap(preds, gts, "car", t)).margin(1e-12));
    }
  }
}

TEST_CASE("AP invariance and monotonicity properties") {
  std::mt19937 rng(555);
  const InstanceMask m1 = rect_mask(32, 32, 0, 0, 6, 6);
  const InstanceMask m2 = rect_mask(32, 32, 10, 0, 6, 6);
  const InstanceMask m3 = rect_mask(32, 32, 20, 0, 6, 6);
  const InstanceMask far_off = rect_mask(32, 32, 0, 24, 5, 5);
  const auto gts = std::vector<InstanceSet>{single_image_set(
      "i0", {Instance{1, "car", 1.0, m1}, Instance{2, "car", 1.0, m2}, Instance{3, "car", 1.0, m3}})};

  std::uniform_real_distribution<double> score(0.1, 0.9);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Instance> preds_v = {Instance{1, "car", score(rng), m1},
                                     Instance{2, "car", score(rng), m2},
                                     Instance{3, "car", score(rng), far_off}};
    const auto preds = std::vector<InstanceSet>{single_image_set("i0", preds_v)};
    const double base_ap = *vcmqp::class_ap(preds, gts, "car");

    // strictly monotone score transform: ordering unchanged, AP unchanged
    std::vector<Instance> transformed = preds_v;
    for (auto& p : transformed) p.score = 0.05 + 0.9 * p.score * p.score;
    const auto preds_t = std::vector<InstanceSet>{single_image_set("i0", transformed)};
    CHECK(*vcmqp::class_ap(preds_t, gts, "car") == base_ap);

    // a spurious top-scored prediction never raises AP
    std::vector<Instance> with_spurious = preds_v;
    with_spurious.push_back(Instance{99, "car", 1.0, far_off});
    const auto preds_s = std::vector<InstanceSet>{single_image_set("i0", with_spurious)};
    CHECK(*vcmqp::class_ap(preds_s, gts, "car") <= base_ap);
  }
}

TEST_CASE("weighted_ap aggregation") {
  const InstanceMask m = rect_mask(32, 32, 2, 2, 6, 6);

  SECTION("single class: weighted AP equals that class's AP") {
    const auto gts = std::vector<InstanceSet>{single_image_set("i0", {Instance{1, "car", 1.0, m}})};
    const auto preds = std::vector<InstanceSet>{single_image_set("i0", {Instance{1, "car", 0.9, m}})};
    const auto report = vcmqp::weighted_ap(preds, gts);
    CHECK(report.weighted_ap == report.per_class_ap.at("car"));
  }
  SECTION("counts (9,1) with APs (1,0) give 0.9") {
    std::vector<Instance> gt_insts, pred_insts;
    for (int i = 0; i < 9; ++i) {
      const InstanceMask cell = rect_mask(64, 64, (i % 3) * 8, (i / 3) * 8, 6, 6);
      gt_insts.push_back(Instance{i + 1, "car", 1.0, cell});
      pred_insts.push_back(Instance{i + 1, "car", 0.9, cell});
    }
    gt_insts.push_back(Instance{100, "bus", 1.0, rect_mask(64, 64, 40, 40, 6, 6)});  // never predicted
    InstanceSet gt_set;
    gt_set.image_id = "i0";
    gt_set.width = gt_set.height = 64;
    gt_set.instances = gt_insts;
    InstanceSet pred_set = gt_set;
    pred_set.instances = pred_insts;
    const auto report = vcmqp::weighted_ap(std::vector<InstanceSet>{pred_set}, std::vector<InstanceSet>{gt_set});
    CHECK(report.per_class_ap.at("car") == 1.0);
    CHECK(report.per_class_ap.at("bus") == 0.0);
    CHECK(report.weighted_ap == Catch::Approx(0.9).margin(1e-15));
  }
  SECTION("all classes perfect give exactly 1") {
    std::vector<Instance> insts = {Instance{1, "car", 1.0, rect_mask(32, 32, 0, 0, 6, 6)},
                                   Instance{2, "bus", 1.0, rect_mask(32, 32, 10, 10, 6, 6)}};
    const auto gts = std::vector<InstanceSet>{single_image_set("i0", insts)};
    const auto preds = gts;
    CHECK(vcmqp::weighted_ap(preds, gts).weighted_ap == 1.0);
  }
  SECTION("zero ground truth overall is an error") {
    const auto gts = std::vector<InstanceSet>{single_image_set("i0", {})};
    const auto preds = std::vector<InstanceSet>{single_image_set("i0", {})};
    CHECK_THROWS_AS(vcmqp::weighted_ap(preds, gts), DataError);
  }
  SECTION("zero-GT classes are excluded from the weighting, not scored 0") {
    const auto gts = std::vector<InstanceSet>{single_image_set("i0", {Instance{1, "car", 1.0, m}})};
    const auto preds = std::vector<InstanceSet>{single_image_set(
        "i0", {Instance{1, "car", 0.9, m}, Instance{2, "bus", 0.9, rect_mask(32, 32, 20, 20, 5, 5)}})};
    const auto report = vcmqp::weighted_ap(preds, gts, {"car", "bus"});
    CHECK(report.weighted_ap == 1.0);
    CHECK(report.per_class_count.at("bus") == 0);
    CHECK(report.per_class_ap.count("bus") == 0);
  }
}

TEST_CASE("weighted_ap matches the counting formula on random small sets") {
  std::mt19937 rng(31337);
  const std::vector<std::string> classes = {"a", "b", "c", "d", "e"};
  std::uniform_int_distribution<int> n_dist(0, 5);
  std::bernoulli_distribution keep(0.6);
  std::uniform_real_distribution<double> score(0.05, 1.0);

  for (int trial = 0; trial < 60; ++trial) {
    std::vector<Instance> gt_insts, pred_insts;
    std::int64_t id = 1;
    int row = 0;
    for (const std::string& cls : classes) {
      const int n = n_dist(rng);
      for (int i = 0; i < n && row < 10; ++i, ++row) {
        const InstanceMask cell = rect_mask(64, 64, (row % 5) * 12, (row / 5) * 12, 8, 8);
        gt_insts.push_back(Instance{id, cls, 1.0, cell});
        if (keep(rng)) pred_insts.push_back(Instance{id, cls, score(rng), cell});
        ++id;
      }
    }
    if (gt_insts.empty()) continue;
    const auto gts = std::vector<InstanceSet>{single_image_set("i0", gt_insts)};
    const auto preds = std::vector<InstanceSet>{single_image_set("i0", pred_insts)};
    const auto report = vcmqp::weighted_ap(preds, gts);

    double num = 0.0;
    std::int64_t den = 0;
    double min_ap = 1.0, max_ap = 0.0;
    for (const auto& [cls, ap] : report.per_class_ap) {
      const auto n = report.per_class_count.at(cls);
      num += static_cast<double>(n) * ap;
      den += n;
      min_ap = std::min(min_ap, ap);
      max_ap = std::max(max_ap, ap);
    }
    REQUIRE(den > 0);
    CHECK(report.weighted_ap == num / static_cast<double>(den));
    CHECK(report.weighted_ap >= min_ap);
    CHECK(report.weighted_ap <= max_ap);
  }
}
