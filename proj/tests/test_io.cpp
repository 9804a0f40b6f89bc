// Dataset ingestion (JSON-lines person records), the synthetic dataset
// manifest, COCO-style result serialization with run-length masks, strict
// configuration parsing, and the flat metrics report.
#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crowdseg/config.hpp"
#include "crowdseg/formats.hpp"
#include "crowdseg/rng.hpp"

using namespace crowdseg;
using Catch::Matchers::ContainsSubstring;

namespace {

// Unique scratch file that removes itself.
struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name)
      : path((std::filesystem::temp_directory_path() /
              ("crowdseg_io_" + name + "_" + std::to_string(::getpid()))).string()) {}
  ~TempFile() { std::filesystem::remove(path); }
  void write(const std::string& content) const {
    std::ofstream f(path);
    f << content;
  }
};

BitMask random_mask(Rng& rng, int w, int h) {
  BitMask m(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (rng.uniform() < 0.4) m.set(x, y, true);
  return m;
}

}  // namespace

TEST_CASE("person-record JSON-lines ingestion") {
  SECTION("missing file") {
    CHECK_THROWS_WITH(load_odgt("/nonexistent/records.odgt"), ContainsSubstring("cannot open"));
  }

  SECTION("a file with no parseable records is an error") {
    TempFile f("empty");
    f.write("");
    CHECK_THROWS_WITH(load_odgt(f.path), ContainsSubstring("no valid lines"));
    f.write("   \n\t\n  \n");
    CHECK_THROWS_WITH(load_odgt(f.path), ContainsSubstring("no valid lines"));
  }

  SECTION("visible boxes convert from xywh and non-person tags are skipped") {
    TempFile f("one_line");
    f.write(R"({"ID":"img1","gtboxes":[)"
            R"({"tag":"person","vbox":[10,20,30,40]},)"
            R"({"tag":"person","vbox":[5,5,10,10]},)"
            R"({"tag":"mask","vbox":[0,0,5,5]}]})"
            "\n");
    const OdgtLoadResult r = load_odgt(f.path);
    REQUIRE(r.records.size() == 1);
    REQUIRE(r.warnings.empty());
    CHECK(r.records[0].id == "img1");
    REQUIRE(r.records[0].boxes.size() == 2);  // the "mask" tag is dropped
    CHECK(r.records[0].boxes[0].x1 == 10.0);
    CHECK(r.records[0].boxes[0].y1 == 20.0);
    CHECK(r.records[0].boxes[0].x2 == 40.0);  // x + w
    CHECK(r.records[0].boxes[0].y2 == 60.0);  // y + h
    CHECK(r.records[0].boxes[1].x2 == 15.0);
  }

  SECTION("malformed lines are reported with their line number") {
    TempFile f("mixed");
    f.write(R"({"ID":"a","gtboxes":[]})"
            "\n"
            "this is not json\n"
            R"({"ID":"c","gtboxes":[{"tag":"person","vbox":[1,1,2]}]})"
            "\n"
            R"({"ID":"d","gtboxes":[{"tag":"person","vbox":[0,0,4,4]}]})"
            "\n");
    const OdgtLoadResult r = load_odgt(f.path);
    REQUIRE(r.records.size() == 2);  // lines 1 and 4
    CHECK(r.records[0].id == "a");
    CHECK(r.records[1].id == "d");
    REQUIRE(r.warnings.size() == 2);
    CHECK_THAT(r.warnings[0], ContainsSubstring("line 2"));
    CHECK_THAT(r.warnings[1], ContainsSubstring("line 3"));  // short vbox
  }
}

TEST_CASE("dataset manifest round-trip") {
  DatasetManifest m;
  m.scene.n_objects = 7;
  m.scene.overlap_level = 0.35;
  m.scene.canvas_w = 320;
  m.scene.canvas_h = 240;
  m.scene.min_radius = 12;
  m.scene.max_radius = 30;
  m.config_fingerprint = 0xabcdef0123456789ULL;
  m.records.push_back(DatasetRecord{"scene-000", 42, {BoxXYXY{1, 2, 3, 4}}});
  m.records.push_back(DatasetRecord{"scene-001", 43, {BoxXYXY{5, 6, 7, 8}, BoxXYXY{0, 0, 1, 1}}});

  SECTION("via JSON value") {
    const DatasetManifest out = manifest_from_json(manifest_to_json(m));
    CHECK(out.config_fingerprint == m.config_fingerprint);
    CHECK(out.scene.n_objects == 7);
    CHECK(out.scene.overlap_level == 0.35);
    CHECK(out.scene.canvas_w == 320);
    CHECK(out.scene.canvas_h == 240);
    CHECK(out.scene.min_radius == 12);
    CHECK(out.scene.max_radius == 30);
    REQUIRE(out.records.size() == 2);
    CHECK(out.records[0].id == "scene-000");
    CHECK(out.records[0].scene_seed == 42);
    REQUIRE(out.records[1].boxes.size() == 2);
    CHECK(out.records[1].boxes[0].x1 == 5.0);
    CHECK(out.records[1].boxes[1].y2 == 1.0);
  }

  SECTION("via file") {
    TempFile f("manifest");
    save_manifest(m, f.path);
    const DatasetManifest out = load_manifest(f.path);
    CHECK(manifest_to_json(out) == manifest_to_json(m));
  }

  SECTION("schema violations and bad files are named") {
    CHECK_THROWS_WITH(manifest_from_json(nlohmann::json::object()),
                      ContainsSubstring("schema violation"));
    nlohmann::json j = manifest_to_json(m);
    j["records"][0].erase("scene_seed");
    CHECK_THROWS_WITH(manifest_from_json(j), ContainsSubstring("schema violation"));
    CHECK_THROWS_WITH(load_manifest("/nonexistent/manifest.json"),
                      ContainsSubstring("cannot open"));
    TempFile f("garbage");
    f.write("{{{{");
    CHECK_THROWS_WITH(load_manifest(f.path), ContainsSubstring("parse error"));
  }
}

TEST_CASE("COCO-style results round-trip with decodable masks") {
  Rng rng(0x10c0);
  CocoResults r;
  r.config_fingerprint = 77;
  r.images = {CocoImage{1, 64, 48}, CocoImage{2, 32, 32}};
  const BitMask m1 = random_mask(rng, 64, 48);
  const BitMask m2 = random_mask(rng, 32, 32);
  r.annotations.push_back(
      CocoDetection{1, rle_encode(m1), mask_to_box(m1).value(), 0.75});
  r.annotations.push_back(
      CocoDetection{2, rle_encode(m2), mask_to_box(m2).value(), 0.5});

  SECTION("the emitted structure pins the public format") {
    const nlohmann::json j = coco_to_json(r);
    CHECK(j["categories"].size() == 1);
    CHECK(j["categories"][0]["id"] == 1);
    CHECK(j["categories"][0]["name"] == "person");
    CHECK(j["info"]["config_fingerprint"] == 77);
    REQUIRE(j["annotations"].size() == 2);
    CHECK(j["annotations"][0]["id"] == 1);  // annotation ids are 1-based
    CHECK(j["annotations"][1]["id"] == 2);
    CHECK(j["annotations"][0]["category_id"] == 1);
    // Segmentation size is [height, width]; bbox is xywh.
    CHECK(j["annotations"][0]["segmentation"]["size"][0] == 48);
    CHECK(j["annotations"][0]["segmentation"]["size"][1] == 64);
    const auto& bb = j["annotations"][0]["bbox"];
    const BoxXYXY& b = r.annotations[0].box;
    CHECK(bb[0] == b.x1);
    CHECK(bb[1] == b.y1);
    CHECK(bb[2] == b.width());
    CHECK(bb[3] == b.height());
  }

  SECTION("file round-trip restores masks bit-for-bit") {
    TempFile f("coco");
    save_coco(r, f.path);
    const CocoResults out = load_coco(f.path);
    CHECK(out.config_fingerprint == 77);
    REQUIRE(out.images.size() == 2);
    CHECK(out.images[1].width == 32);
    REQUIRE(out.annotations.size() == 2);
    for (std::size_t i = 0; i < r.annotations.size(); ++i) {
      CHECK(out.annotations[i].image_id == r.annotations[i].image_id);
      CHECK(out.annotations[i].mask.counts == r.annotations[i].mask.counts);
      CHECK(out.annotations[i].score == r.annotations[i].score);
      CHECK(out.annotations[i].box.x1 == r.annotations[i].box.x1);
      CHECK(out.annotations[i].box.x2 == r.annotations[i].box.x2);
    }
    const BitMask decoded = rle_decode(out.annotations[0].mask);
    REQUIRE(decoded.width() == 64);
    CHECK(iou_masks(decoded, m1) == 1.0);
  }

  SECTION("an empty result set is still a valid file") {
    TempFile f("coco_empty");
    save_coco(CocoResults{}, f.path);
    const CocoResults out = load_coco(f.path);
    CHECK(out.images.empty());
    CHECK(out.annotations.empty());
  }

  SECTION("missing top-level sections are named") {
    nlohmann::json j = coco_to_json(r);
    j.erase("images");
    CHECK_THROWS_WITH(coco_from_json(j), ContainsSubstring("missing \"images\""));
    j = coco_to_json(r);
    j.erase("annotations");
    CHECK_THROWS_WITH(coco_from_json(j), ContainsSubstring("missing \"annotations\""));
    j = coco_to_json(r);
    j["annotations"][0].erase("image_id");
    CHECK_THROWS_WITH(coco_from_json(j), ContainsSubstring("schema violation"));
    CHECK_THROWS_WITH(load_coco("/nonexistent/results.json"), ContainsSubstring("cannot open"));
  }
}

TEST_CASE("strict configuration parsing") {
  SECTION("an empty object yields the documented defaults") {
    const Config c = config_from_json(nlohmann::json::object());
    CHECK(c.backend == "oracle");
    CHECK(c.seed == 0);
    CHECK(c.workers == 1);
    CHECK(c.n_scenes == 10);
    CHECK(c.train.learning_rate == 1e-5);
    CHECK(c.train.iterations == 2000);
    CHECK(c.pipeline.grid_single == 64);
    CHECK(c.pipeline.grid_per_crop == 32);
    CHECK(c.pipeline.heat_threshold == 0.5);
    CHECK(c.pipeline.output_threshold == 0.3);
    CHECK(c.pipeline.nms_iou == 0.5);
    CHECK(c.pipeline.multi_crop == false);
    CHECK(c.pipeline.crop_window == 512);
    CHECK(c.pipeline.crop_overlap == 128);
    CHECK(c.pipeline.eps.batch_size == 64);
    CHECK(c.pipeline.eps.budget_k == 500);
    CHECK(c.pipeline.eps.valid_threshold == 0.5);
  }

  SECTION("one seed drives every component stream") {
    const Config c = config_from_json(nlohmann::json{{"seed", 77}});
    CHECK(c.seed == 77);
    CHECK(c.train.seed == 77);
    CHECK(c.pipeline.seed == 77);
    CHECK(c.pipeline.eps.seed == 77);
  }

  SECTION("overrides reach nested fields") {
    const nlohmann::json j{{"train", {{"iterations", 5}}},
                           {"pipeline", {{"eps", {{"budget_k", 100}}}}}};
    const Config c = config_from_json(j);
    CHECK(c.train.iterations == 5);
    CHECK(c.pipeline.eps.budget_k == 100);
    CHECK(c.train.learning_rate == 1e-5);  // untouched siblings keep defaults
  }

  SECTION("unknown keys are rejected with their full path") {
    CHECK_THROWS_WITH(config_from_json(nlohmann::json{{"wat", 1}}),
                      ContainsSubstring("config: unknown key root.wat"));
    const nlohmann::json nested{{"pipeline", {{"eps", {{"bad_key", 1}}}}}};
    CHECK_THROWS_WITH(config_from_json(nested),
                      ContainsSubstring("config: unknown key pipeline.eps.bad_key"));
  }

  SECTION("type errors are rejected with their full path") {
    const nlohmann::json j{{"train", {{"iterations", "soon"}}}};
    CHECK_THROWS_WITH(config_from_json(j),
                      ContainsSubstring("config: bad type for train.iterations"));
    CHECK_THROWS_WITH(config_from_json(nlohmann::json{{"scene", 5}}),
                      ContainsSubstring("scene must be a JSON object"));
  }

  SECTION("semantic validation still applies after parsing") {
    CHECK_THROWS_WITH(config_from_json(nlohmann::json{{"backend", "llm"}}),
                      ContainsSubstring("backend must be"));
    CHECK_THROWS_AS(config_from_json(nlohmann::json{{"workers", 0}}), std::invalid_argument);
    CHECK_THROWS_AS(config_from_json(nlohmann::json{{"n_scenes", 0}}), std::invalid_argument);
    CHECK_THROWS_AS(config_from_json(nlohmann::json{{"train", {{"learning_rate", 0.0}}}}),
                    std::invalid_argument);
    CHECK_THROWS_AS(
        config_from_json(nlohmann::json{{"pipeline", {{"eps", {{"batch_size", 0}}}}}}),
        std::invalid_argument);
    // A prompt budget below one batch can never be spent correctly.
    CHECK_THROWS_AS(
        config_from_json(nlohmann::json{{"pipeline", {{"eps", {{"budget_k", 50}}}}}}),
        std::invalid_argument);
  }

  SECTION("fingerprint is stable across serialize/parse and tracks changes") {
    const Config a = config_from_json(nlohmann::json::object());
    const Config b = config_from_json(config_to_json(a));
    CHECK(config_fingerprint(a) == config_fingerprint(b));
    CHECK(config_fingerprint(a) != 0);
    Config c = a;
    c.seed = 1;
    CHECK(config_fingerprint(c) != config_fingerprint(a));
  }

  SECTION("config files load with named failure modes") {
    TempFile f("config");
    f.write(R"({"seed": 3, "n_scenes": 2})");
    const Config c = load_config_file(f.path);
    CHECK(c.seed == 3);
    CHECK(c.n_scenes == 2);
    CHECK_THROWS_WITH(load_config_file("/nonexistent/config.json"),
                      ContainsSubstring("cannot open"));
    f.write("not json at all");
    CHECK_THROWS_WITH(load_config_file(f.path), ContainsSubstring("parse error"));
  }
}

TEST_CASE("metrics report is a fixed-format key=value file") {
  MetricsSummary s;
  s.ap50 = 0.5;
  s.mr2 = 0.25;
  s.recall_v = 1.0 / 3.0;
  s.n_images = 3;
  s.n_gt = 10;
  s.n_det = 12;
  const std::string text = metrics_to_string(s);
  CHECK(text ==
        "ap50=0.5\n"
        "mr2=0.25\n"
        "recall=0.33333333333333331\n"  // 17 significant digits round-trip
        "n_images=3\n"
        "n_gt=10\n"
        "n_det=12\n");

  TempFile f("metrics");
  save_metrics(s, f.path);
  std::ifstream in(f.path);
  std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(contents == text);
}
