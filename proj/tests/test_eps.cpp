// Batched prompt sampling with coverage pruning: budget accounting, pruning
// soundness, determinism, and the baseline samplers. Containment is re-derived
// in the tests with an explicit coordinate mapping so the pruning rule is
// checked against an independent transcription.
#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <memory>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "crowdseg/eps.hpp"
#include "crowdseg/oracle_backend.hpp"
#include "crowdseg/scene.hpp"

using namespace crowdseg;

namespace {

struct EpsFixture {
  SceneSpec scene;
  GroundTruth gt;
  Image img;
  BackendCaps caps;
  std::unique_ptr<OracleBackend> backend;
  FeatureMap feat;

  static EpsFixture make(int n_objects, std::uint64_t seed) {
    EpsFixture fx;
    SceneParams p;
    p.n_objects = n_objects;
    p.overlap_level = 0.5;
    p.canvas_w = 512;
    p.canvas_h = 512;
    p.min_radius = 50;
    p.max_radius = 80;
    std::tie(fx.scene, fx.gt) = generate_scene(p, seed);
    fx.img = render(fx.scene);
    fx.backend = std::make_unique<OracleBackend>(fx.scene, fx.caps, 77);
    fx.feat = fx.backend->encode_image(ImageView::whole(fx.img));
    return fx;
  }
};

// Scores each prompt by the frozen decoder's best IoU estimate.
PromptScorer native_scorer() {
  return [](const DecodeResult& dec) {
    std::vector<double> s(std::size_t(dec.n) * 4);
    for (int i = 0; i < dec.n; ++i)
      for (int j = 0; j < 4; ++j) s[std::size_t(i) * 4 + j] = dec.native_iou.at(i, j, 0);
    return select_best(s, dec.n);
  };
}

// Scores everything at zero: nothing is ever valid, nothing gets pruned.
PromptScorer zero_scorer() {
  return [](const DecodeResult& dec) {
    Selection sel;
    sel.candidate.assign(std::size_t(dec.n), 0);
    sel.score.assign(std::size_t(dec.n), 0.0);
    return sel;
  };
}

// Same mapping the sampler uses to test point-in-mask at native resolution.
bool contained(const BitMask& m, const PointPrompt& p, int ww, int wh) {
  const int ix = std::min(m.width() - 1, int(p.x * m.width() / ww));
  const int iy = std::min(m.height() - 1, int(p.y * m.height() / wh));
  return m.get(ix, iy);
}

PromptSet grid_pool(int n, int w, int h) {
  PromptSet pool;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i)
      pool.push_back(PointPrompt{(i + 0.5) * double(w) / n, (j + 0.5) * double(h) / n,
                                 j * n + i, 1.0});
  return pool;
}

}  // namespace

TEST_CASE("sampler configuration validation") {
  EpsConfig ok;
  CHECK_NOTHROW(ok.validate());
  EpsConfig bad = ok;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = ok;
  bad.budget_k = ok.batch_size - 1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = ok;
  bad.valid_threshold = -0.01;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad.valid_threshold = 1.01;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("empty pool: no iterations, empty outputs") {
  auto fx = EpsFixture::make(3, 5);
  EpsConfig cfg;
  const EpsResult out = eps_sample(fx.feat, {}, native_scorer(), *fx.backend, cfg);
  CHECK(out.selected.empty());
  CHECK(out.decoded.empty());
  CHECK(out.valid.empty());
  CHECK(out.trace.steps.empty());
}

TEST_CASE("single object: one batch covers and prunes the whole pool") {
  auto fx = EpsFixture::make(1, 9);
  REQUIRE(fx.gt.visible_masks.size() == 1);
  const BitMask& vis = fx.gt.visible_masks[0];

  // Interior pixels only, so the native-resolution downsample of the object
  // is guaranteed to contain every prompt.
  PromptSet pool;
  const auto& box = fx.gt.visible_boxes[0];
  for (int y = int(box.y1); y < int(box.y2); y += 4)
    for (int x = int(box.x1); x < int(box.x2); x += 4) {
      bool interior = true;
      for (int dy = -3; interior && dy <= 3; dy += 3)
        for (int dx = -3; interior && dx <= 3; dx += 3)
          if (!vis.get(std::clamp(x + dx, 0, 511), std::clamp(y + dy, 0, 511)))
            interior = false;
      if (interior) pool.push_back(PointPrompt{x + 0.5, y + 0.5, -1, 1.0});
    }
  REQUIRE(pool.size() > 100);

  EpsConfig cfg;
  cfg.batch_size = 16;
  cfg.budget_k = 500;
  cfg.valid_threshold = 0.5;
  cfg.seed = 4;
  const EpsResult out = eps_sample(fx.feat, pool, native_scorer(), *fx.backend, cfg);

  REQUIRE(out.trace.steps.size() == 1);  // everything left is pruned at once
  CHECK(out.selected.size() == 16);
  CHECK(out.decoded.size() == 16);
  CHECK(out.valid.size() == 16);  // every in-object mask scores far above T
  CHECK(out.trace.steps[0].sampled == 16);
  CHECK(out.trace.steps[0].decoded == 16);
  CHECK(out.trace.steps[0].valid == 16);
  CHECK(out.trace.steps[0].pruned == int(pool.size()) - 16);
}

TEST_CASE("budget is hit exactly, including a truncated final batch") {
  auto fx = EpsFixture::make(4, 11);
  const PromptSet pool = grid_pool(10, 512, 512);  // 100 prompts

  EpsConfig cfg;
  cfg.batch_size = 16;
  cfg.budget_k = 40;  // not a multiple of the batch size
  cfg.seed = 1;
  const EpsResult out = eps_sample(fx.feat, pool, zero_scorer(), *fx.backend, cfg);
  REQUIRE(out.selected.size() == 40);
  REQUIRE(out.decoded.size() == 40);
  CHECK(out.valid.empty());
  REQUIRE(out.trace.steps.size() == 3);
  CHECK(out.trace.steps[2].sampled == 8);  // clipped to land exactly on K
  CHECK(out.trace.total(&EpsStep::decoded) == 40);
  CHECK(out.trace.total(&EpsStep::pruned) == 0);

  // With no pruning and K >= pool, every prompt is decoded exactly once.
  cfg.budget_k = 500;
  const EpsResult all = eps_sample(fx.feat, pool, zero_scorer(), *fx.backend, cfg);
  REQUIRE(all.selected.size() == pool.size());
  std::set<int> ids;
  for (const auto& p : all.selected) ids.insert(p.grid_index);
  REQUIRE(ids.size() == pool.size());  // no prompt decoded twice
}

TEST_CASE("every skipped prompt lies inside some valid mask") {
  auto fx = EpsFixture::make(8, 13);
  const PromptSet pool = grid_pool(32, 512, 512);  // 1024 prompts

  EpsConfig cfg;
  cfg.batch_size = 32;
  cfg.budget_k = int(pool.size());  // no budget exit: pool must drain fully
  cfg.valid_threshold = 0.5;
  cfg.seed = 21;
  const EpsResult out = eps_sample(fx.feat, pool, native_scorer(), *fx.backend, cfg);

  // The crowd scene must actually exercise pruning.
  REQUIRE(out.trace.total(&EpsStep::pruned) > 0);
  REQUIRE(out.selected.size() + std::size_t(out.trace.total(&EpsStep::pruned)) == pool.size());
  REQUIRE(out.selected.size() < pool.size());

  std::set<int> selected_ids;
  for (const auto& p : out.selected) {
    REQUIRE(selected_ids.insert(p.grid_index).second);  // uniqueness
  }
  for (const auto& p : pool) {
    if (selected_ids.count(p.grid_index)) continue;
    bool covered = false;
    for (int vi : out.valid)
      if (contained(out.decoded[std::size_t(vi)].best_mask, p, 512, 512)) {
        covered = true;
        break;
      }
    REQUIRE(covered);
  }

  // Valid entries really are the above-threshold ones, in order.
  for (int vi : out.valid) REQUIRE(out.decoded[std::size_t(vi)].score > cfg.valid_threshold);
  int n_valid = 0;
  for (const auto& d : out.decoded)
    if (d.score > cfg.valid_threshold) ++n_valid;
  REQUIRE(int(out.valid.size()) == n_valid);
}

TEST_CASE("identical seed reproduces the run; different seed diverges") {
  auto fx = EpsFixture::make(6, 17);
  const PromptSet pool = grid_pool(24, 512, 512);
  EpsConfig cfg;
  cfg.batch_size = 32;
  cfg.budget_k = 256;
  cfg.seed = 99;

  const EpsResult a = eps_sample(fx.feat, pool, native_scorer(), *fx.backend, cfg);
  const EpsResult b = eps_sample(fx.feat, pool, native_scorer(), *fx.backend, cfg);
  REQUIRE(a.selected.size() == b.selected.size());
  for (std::size_t i = 0; i < a.selected.size(); ++i) {
    REQUIRE(a.selected[i].grid_index == b.selected[i].grid_index);
    REQUIRE(a.decoded[i].candidate == b.decoded[i].candidate);
    REQUIRE(a.decoded[i].score == b.decoded[i].score);
    REQUIRE(a.decoded[i].best_mask == b.decoded[i].best_mask);
  }
  REQUIRE(a.valid == b.valid);
  REQUIRE(a.trace.steps.size() == b.trace.steps.size());
  for (std::size_t i = 0; i < a.trace.steps.size(); ++i) {
    REQUIRE(a.trace.steps[i].sampled == b.trace.steps[i].sampled);
    REQUIRE(a.trace.steps[i].pruned == b.trace.steps[i].pruned);
    REQUIRE(a.trace.steps[i].valid == b.trace.steps[i].valid);
  }

  cfg.seed = 100;
  const EpsResult c = eps_sample(fx.feat, pool, native_scorer(), *fx.backend, cfg);
  bool diverged = c.selected.size() != a.selected.size();
  for (std::size_t i = 0; !diverged && i < a.selected.size(); ++i)
    diverged = a.selected[i].grid_index != c.selected[i].grid_index;
  REQUIRE(diverged);
}

TEST_CASE("scorer failures carry iteration context") {
  auto fx = EpsFixture::make(2, 3);
  const PromptSet pool = grid_pool(8, 512, 512);
  EpsConfig cfg;
  cfg.batch_size = 16;
  const PromptScorer boom = [](const DecodeResult&) -> Selection {
    throw std::runtime_error("boom");
  };
  try {
    eps_sample(fx.feat, pool, boom, *fx.backend, cfg);
    FAIL("expected a propagated scorer failure");
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("iteration 1") != std::string::npos);
    CHECK(msg.find("boom") != std::string::npos);
  }
}

TEST_CASE("baseline samplers") {
  const PromptSet pool = grid_pool(8, 256, 256);  // 64 prompts

  SECTION("full sampler is the identity") {
    const PromptSet out = full_sampler(pool);
    REQUIRE(out.size() == pool.size());
    for (std::size_t i = 0; i < out.size(); ++i)
      REQUIRE(out[i].grid_index == pool[i].grid_index);
  }

  SECTION("random subset: size, membership, determinism") {
    const PromptSet a = random_sampler(pool, 20, 5);
    REQUIRE(a.size() == 20);
    std::set<int> ids;
    for (const auto& p : a) {
      REQUIRE(p.grid_index >= 0);
      REQUIRE(p.grid_index < 64);
      REQUIRE(ids.insert(p.grid_index).second);
    }
    const PromptSet b = random_sampler(pool, 20, 5);
    for (std::size_t i = 0; i < a.size(); ++i)
      REQUIRE(a[i].grid_index == b[i].grid_index);
    const PromptSet c = random_sampler(pool, 20, 6);
    bool diff = false;
    for (std::size_t i = 0; i < a.size(); ++i) diff |= a[i].grid_index != c[i].grid_index;
    REQUIRE(diff);
  }

  SECTION("edge budgets") {
    CHECK(random_sampler(pool, 0, 1).empty());
    CHECK(random_sampler(pool, 64, 1).size() == 64);
    CHECK(random_sampler(pool, 1000, 1).size() == 64);
    CHECK_THROWS_AS(random_sampler(pool, -1, 1), std::invalid_argument);
  }
}
