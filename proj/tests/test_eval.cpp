// Detection metrics: greedy box matching, all-point average precision,
// log-average miss rate over nine false-positive-per-image reference points,
// and recall — pinned by hand-worked cases and an independent brute-force
// re-implementation on randomized instances.
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "crowdseg/eval.hpp"
#include "crowdseg/rng.hpp"

using namespace crowdseg;

namespace {

BoxXYXY bx(double x1, double y1, double x2, double y2) { return BoxXYXY{x1, y1, x2, y2}; }
ScoredBox det(double x1, double y1, double x2, double y2, double s) {
  return ScoredBox{bx(x1, y1, x2, y2), s};
}

// --- Independent references. Integer box coordinates keep every IoU an exact
// --- double, so the references must agree with the library bit-for-bit.

double ref_iou(const BoxXYXY& a, const BoxXYXY& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double areas = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1);
  return inter / (areas - inter);
}

// Flattened (score, tp) pairs in global evaluation order: score descending,
// then image index, then the detection's per-image score rank.
struct RefEntries {
  std::vector<double> scores;
  std::vector<bool> tp;
  int n_gt = 0;
};

RefEntries ref_match(const std::vector<ImageEval>& images, double thr) {
  struct Row {
    double score;
    bool tp;
    int image, rank;
  };
  std::vector<Row> rows;
  RefEntries out;
  for (std::size_t im = 0; im < images.size(); ++im) {
    const auto& dets = images[im].dets;
    const auto& gts = images[im].gts;
    out.n_gt += int(gts.size());
    std::vector<int> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return dets[std::size_t(a)].score > dets[std::size_t(b)].score;
    });
    std::vector<bool> used(gts.size(), false);
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
      const auto& d = dets[std::size_t(order[rank])];
      int pick = -1;
      double best = 0.0;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (used[g]) continue;
        const double v = ref_iou(d.box, gts[g]);
        if (v > best) {  // ties keep the earliest ground-truth entry
          best = v;
          pick = int(g);
        }
      }
      const bool tp = pick >= 0 && best >= thr;
      if (tp) used[std::size_t(pick)] = true;
      rows.push_back(Row{d.score, tp, int(im), int(rank)});
    }
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image != b.image) return a.image < b.image;
    return a.rank < b.rank;
  });
  for (const auto& r : rows) {
    out.scores.push_back(r.score);
    out.tp.push_back(r.tp);
  }
  return out;
}

// Area under the monotone precision envelope, with the envelope evaluated by
// direct suffix scans instead of in-place back-propagation.
double ref_ap(const RefEntries& e) {
  if (e.n_gt == 0 || e.scores.empty()) return 0.0;
  const std::size_t n = e.scores.size();
  std::vector<double> prec(n), rec(n);
  int tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += e.tp[i] ? 1 : 0;
    prec[i] = double(tp) / double(i + 1);
    rec[i] = double(tp) / double(e.n_gt);
  }
  double ap = 0.0, prev = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double envelope = 0.0;
    for (std::size_t j = i; j < n; ++j) envelope = std::max(envelope, prec[j]);
    ap += (rec[i] - prev) * envelope;
    prev = rec[i];
  }
  return ap;
}

double ref_recall(const RefEntries& e) {
  if (e.n_gt == 0) return 0.0;
  int tp = 0;
  for (bool t : e.tp) tp += t ? 1 : 0;
  return double(tp) / double(e.n_gt);
}

// Threshold sweep at distinct-score boundaries, then the geometric mean of the
// best miss rate at each of the nine log-spaced false-positive budgets.
double ref_mr2(const RefEntries& e, int n_images) {
  if (e.n_gt == 0) return 0.0;
  std::vector<double> fppi{0.0}, miss{1.0};
  int tp = 0, fp = 0;
  for (std::size_t i = 0; i < e.scores.size(); ++i) {
    tp += e.tp[i] ? 1 : 0;
    fp += e.tp[i] ? 0 : 1;
    if (i + 1 == e.scores.size() || e.scores[i + 1] != e.scores[i]) {
      fppi.push_back(double(fp) / double(n_images));
      miss.push_back(1.0 - double(tp) / double(e.n_gt));
    }
  }
  double log_sum = 0.0;
  for (int j = 0; j < 9; ++j) {
    const double budget = std::pow(10.0, -2.0 + 2.0 * j / 8.0);
    double best = 1.0;
    for (std::size_t i = 0; i < fppi.size(); ++i)
      if (fppi[i] <= budget) best = std::min(best, miss[i]);
    log_sum += std::log(std::max(best, 1e-6));
  }
  return std::exp(log_sum / 9.0);
}

std::vector<ImageEval> random_instance(Rng& rng) {
  std::vector<ImageEval> images(std::size_t(rng.uniform_int(1, 4)));
  for (auto& img : images) {
    const int n_det = rng.uniform_int(0, 12), n_gt = rng.uniform_int(0, 8);
    for (int g = 0; g < n_gt; ++g) {
      const int x = rng.uniform_int(0, 40), y = rng.uniform_int(0, 40);
      img.gts.push_back(bx(x, y, x + rng.uniform_int(1, 15), y + rng.uniform_int(1, 15)));
    }
    for (int d = 0; d < n_det; ++d) {
      // Half the detections perturb a ground-truth box so matches actually
      // occur; coarse scores produce frequent exact ties.
      BoxXYXY b;
      if (!img.gts.empty() && rng.uniform() < 0.5) {
        const auto& g = img.gts[std::size_t(rng.uniform_int(0, int(img.gts.size()) - 1))];
        b = bx(g.x1 + rng.uniform_int(-2, 2), g.y1 + rng.uniform_int(-2, 2),
               g.x2 + rng.uniform_int(-2, 2), g.y2 + rng.uniform_int(-2, 2));
        if (b.x2 <= b.x1) b.x2 = b.x1 + 1;
        if (b.y2 <= b.y1) b.y2 = b.y1 + 1;
      } else {
        const int x = rng.uniform_int(0, 40), y = rng.uniform_int(0, 40);
        b = bx(x, y, x + rng.uniform_int(1, 15), y + rng.uniform_int(1, 15));
      }
      img.dets.push_back(ScoredBox{b, 0.1 * rng.uniform_int(1, 10)});
    }
  }
  return images;
}

}  // namespace

TEST_CASE("greedy matching semantics") {
  SECTION("higher score claims the ground truth first") {
    const std::vector<ScoredBox> dets{det(0, 0, 10, 8, 0.9), det(0, 0, 10, 10, 0.8)};
    const std::vector<BoxXYXY> gts{bx(0, 0, 10, 10)};
    const ImageMatch m = match_single(dets, gts);
    CHECK(m.det_gt == std::vector<int>{0, -1});
    CHECK(m.gt_covered == std::vector<bool>{true});
  }

  SECTION("a detection picks its best-overlap unmatched ground truth") {
    const std::vector<ScoredBox> dets{det(0, 0, 10, 9, 0.5)};
    const std::vector<BoxXYXY> gts{bx(0, 0, 10, 10), bx(0, 0, 10, 6)};
    CHECK(match_single(dets, gts).det_gt == std::vector<int>{0});
  }

  SECTION("overlap exactly at the threshold counts; below does not") {
    const std::vector<BoxXYXY> gts{bx(0, 0, 10, 10)};
    CHECK(match_single({det(0, 0, 10, 5, 1.0)}, gts).det_gt == std::vector<int>{0});
    CHECK(match_single({det(0, 0, 10, 4, 1.0)}, gts).det_gt == std::vector<int>{-1});
  }

  SECTION("score ties process in input order") {
    const std::vector<ScoredBox> dets{det(0, 0, 10, 10, 0.5), det(0, 0, 10, 10, 0.5)};
    const std::vector<BoxXYXY> gts{bx(0, 0, 10, 10)};
    const ImageMatch m = match_single(dets, gts);
    CHECK(m.det_gt == std::vector<int>{0, -1});
    CHECK(m.order == std::vector<int>{0, 1});
  }

  SECTION("overlap ties go to the earliest ground-truth entry") {
    const std::vector<ScoredBox> dets{det(5, 0, 25, 10, 0.5)};
    const std::vector<BoxXYXY> gts{bx(0, 0, 10, 10), bx(20, 0, 30, 10)};
    const ImageMatch m = match_single(dets, gts, 0.1);
    CHECK(m.det_gt == std::vector<int>{0});
    CHECK(m.gt_covered == std::vector<bool>{true, false});
  }

  SECTION("non-finite scores are rejected") {
    const std::vector<ScoredBox> dets{det(0, 0, 1, 1, std::numeric_limits<double>::quiet_NaN())};
    CHECK_THROWS_AS(match_single(dets, {bx(0, 0, 1, 1)}), std::invalid_argument);
  }

  SECTION("global flattening orders by score, then image, then per-image rank") {
    std::vector<ImageEval> images(2);
    images[0].gts = {bx(0, 0, 10, 10)};
    images[0].dets = {det(0, 0, 10, 10, 0.5)};
    images[1].gts = {bx(0, 0, 10, 10)};
    images[1].dets = {det(40, 40, 50, 50, 0.5), det(0, 0, 10, 10, 0.5)};
    const MatchResult m = match(images);
    REQUIRE(m.scores == std::vector<double>{0.5, 0.5, 0.5});
    CHECK(m.is_tp == std::vector<bool>{true, false, true});
    CHECK(m.n_gt == 2);
    CHECK(m.n_images == 2);
  }
}

TEST_CASE("average precision hand cases") {
  SECTION("perfect detections reach 1.0") {
    std::vector<ImageEval> images(1);
    images[0].gts = {bx(0, 0, 10, 10), bx(20, 20, 30, 30)};
    images[0].dets = {det(0, 0, 10, 10, 0.9), det(20, 20, 30, 30, 0.8)};
    CHECK(average_precision(match(images)) == 1.0);
  }

  SECTION("nothing detected scores 0.0") {
    std::vector<ImageEval> images(1);
    images[0].gts = {bx(0, 0, 10, 10)};
    CHECK(average_precision(match(images)) == 0.0);
  }

  SECTION("hit, miss, hit over two ground truths gives exactly 5/6") {
    std::vector<ImageEval> images(1);
    images[0].gts = {bx(0, 0, 10, 10), bx(100, 100, 110, 110)};
    images[0].dets = {det(0, 0, 10, 10, 0.9), det(50, 50, 60, 60, 0.8),
                      det(100, 100, 110, 110, 0.7)};
    // Envelope integral: 0.5 recall at precision 1, then the remaining 0.5 at
    // precision 2/3. Bit-equal to the hand accumulation.
    const double ap = average_precision(match(images));
    CHECK(ap == 0.5 * 1.0 + 0.5 * (2.0 / 3.0));
    CHECK(ap == Catch::Approx(5.0 / 6.0).epsilon(1e-15));
  }

  SECTION("no ground truth means 0 regardless of detections") {
    std::vector<ImageEval> images(1);
    images[0].dets = {det(0, 0, 10, 10, 0.9)};
    const MatchResult m = match(images);
    CHECK(average_precision(m) == 0.0);
    CHECK(recall(m) == 0.0);
    CHECK(log_average_miss_rate(m) == 0.0);
  }
}

TEST_CASE("log-average miss rate hand cases") {
  SECTION("perfect detections clamp at the 1e-6 floor") {
    std::vector<ImageEval> images(1);
    images[0].gts = {bx(0, 0, 10, 10)};
    images[0].dets = {det(0, 0, 10, 10, 0.9)};
    CHECK(log_average_miss_rate(match(images)) == Catch::Approx(1e-6).epsilon(1e-9));
  }

  SECTION("nothing detected stays at 1.0") {
    std::vector<ImageEval> images(2);
    images[0].gts = {bx(0, 0, 10, 10)};
    images[1].gts = {bx(0, 0, 10, 10)};
    CHECK(log_average_miss_rate(match(images)) == 1.0);
  }

  SECTION("three-image sweep follows the hand-computed operating points") {
    // Global score order: 0.9 TP, 0.8 FP, 0.7 TP, 0.6 FP, 0.5 FP, 0.4 TP over
    // 4 ground truths and 3 images. Budgets below 1/3 FPPI see only the
    // zero-FP point (miss 0.75); the 0.562 budget admits 1 FP (miss 0.5); the
    // budget of 1 admits all (miss 0.25).
    std::vector<ImageEval> images(3);
    images[0].gts = {bx(0, 0, 10, 10), bx(20, 0, 30, 10)};
    images[0].dets = {det(0, 0, 10, 10, 0.9), det(40, 40, 50, 50, 0.6)};
    images[1].gts = {bx(0, 0, 10, 10)};
    images[1].dets = {det(0, 0, 10, 10, 0.7), det(40, 40, 50, 50, 0.8)};
    images[2].gts = {bx(0, 0, 10, 10)};
    images[2].dets = {det(0, 0, 10, 10, 0.4), det(40, 40, 50, 50, 0.5)};

    const MatchResult m = match(images);
    const double expected =
        std::exp((7.0 * std::log(0.75) + std::log(0.5) + std::log(0.25)) / 9.0);
    CHECK(log_average_miss_rate(m) == Catch::Approx(expected).epsilon(1e-12));
    CHECK(recall(m) == 0.75);

    const MetricsSummary s = evaluate(images);
    CHECK(s.mr2 == log_average_miss_rate(m));
    CHECK(s.ap50 == average_precision(m));
    CHECK(s.recall_v == 0.75);
    CHECK(s.n_images == 3);
    CHECK(s.n_gt == 4);
    CHECK(s.n_det == 6);
  }

  SECTION("at least one image is required") {
    CHECK_THROWS_AS(evaluate({}), std::invalid_argument);
  }
}

TEST_CASE("metrics agree with brute-force references on random instances") {
  Rng rng(0xe5a1);
  for (int it = 0; it < 200; ++it) {
    const std::vector<ImageEval> images = random_instance(rng);
    const MatchResult m = match(images);
    const RefEntries e = ref_match(images, 0.5);

    REQUIRE(m.n_gt == e.n_gt);
    REQUIRE(m.scores.size() == e.scores.size());
    for (std::size_t i = 0; i < e.scores.size(); ++i) {
      REQUIRE(m.scores[i] == e.scores[i]);
      REQUIRE(m.is_tp[i] == e.tp[i]);
    }
    REQUIRE(average_precision(m) == Catch::Approx(ref_ap(e)).margin(1e-9));
    REQUIRE(recall(m) == Catch::Approx(ref_recall(e)).margin(1e-9));
    REQUIRE(log_average_miss_rate(m) ==
            Catch::Approx(ref_mr2(e, int(images.size()))).margin(1e-9));
  }
}

TEST_CASE("metrics depend on scores only through their ordering") {
  Rng rng(0x51ab);
  for (int it = 0; it < 50; ++it) {
    const std::vector<ImageEval> images = random_instance(rng);
    const MetricsSummary base = evaluate(images);
    for (const double scale : {4.0, 0.0625}) {  // exact in binary: ties survive
      std::vector<ImageEval> scaled = images;
      for (auto& img : scaled)
        for (auto& d : img.dets) d.score *= scale;
      const MetricsSummary s = evaluate(scaled);
      REQUIRE(s.ap50 == base.ap50);
      REQUIRE(s.mr2 == base.mr2);
      REQUIRE(s.recall_v == base.recall_v);
    }
  }
}
