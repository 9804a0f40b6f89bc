#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crowdseg/box.hpp"
#include "crowdseg/eval.hpp"
#include "crowdseg/rle.hpp"
#include "crowdseg/scene.hpp"

namespace crowdseg {

/// One dataset entry: either a real image reference or a synthetic scene seed.
struct DatasetRecord {
  std::string id;
  std::uint64_t scene_seed = 0;
  std::vector<BoxXYXY> boxes;  // visible-region boxes
};

struct OdgtLoadResult {
  std::vector<DatasetRecord> records;
  std::vector<std::string> warnings;  // malformed lines, with line numbers
};

/// CrowdHuman-style JSON-lines reader: one record per line with an "ID" and a
/// "gtboxes" list; only person-tagged boxes are kept, and the visible-box
/// field (vbox, xywh) is converted to corner form.
inline OdgtLoadResult load_odgt(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("odgt: cannot open " + path);
  OdgtLoadResult out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      DatasetRecord rec;
      rec.id = j.at("ID").get<std::string>();
      for (const auto& gb : j.at("gtboxes")) {
        if (gb.value("tag", "") != "person") continue;
        const auto& vb = gb.at("vbox");
        rec.boxes.push_back(box_from_xywh(vb.at(0).get<double>(), vb.at(1).get<double>(),
                                          vb.at(2).get<double>(), vb.at(3).get<double>()));
      }
      out.records.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      out.warnings.push_back("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (out.records.empty()) throw std::runtime_error("odgt: no valid lines in " + path);
  return out;
}

/// Synthetic dataset manifest: shared scene parameters plus per-record seeds
/// and ground-truth visible boxes, so train/annotate/eval stages can rebuild
/// identical scenes independently.
struct DatasetManifest {
  SceneParams scene;
  std::uint64_t config_fingerprint = 0;
  std::vector<DatasetRecord> records;
};

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["config_fingerprint"] = m.config_fingerprint;
  j["scene"] = {{"n_objects", m.scene.n_objects},   {"overlap_level", m.scene.overlap_level},
                {"canvas_w", m.scene.canvas_w},     {"canvas_h", m.scene.canvas_h},
                {"min_radius", m.scene.min_radius}, {"max_radius", m.scene.max_radius}};
  auto& recs = j["records"] = nlohmann::json::array();
  for (const auto& r : m.records) {
    nlohmann::json boxes = nlohmann::json::array();
    for (const auto& b : r.boxes) boxes.push_back({b.x1, b.y1, b.x2, b.y2});
    recs.push_back({{"id", r.id}, {"scene_seed", r.scene_seed}, {"boxes", boxes}});
  }
  return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    m.config_fingerprint = j.value("config_fingerprint", std::uint64_t(0));
    const auto& s = j.at("scene");
    m.scene.n_objects = s.at("n_objects").get<int>();
    m.scene.overlap_level = s.at("overlap_level").get<double>();
    m.scene.canvas_w = s.at("canvas_w").get<int>();
    m.scene.canvas_h = s.at("canvas_h").get<int>();
    m.scene.min_radius = s.at("min_radius").get<double>();
    m.scene.max_radius = s.at("max_radius").get<double>();
    for (const auto& r : j.at("records")) {
      DatasetRecord rec;
      rec.id = r.at("id").get<std::string>();
      rec.scene_seed = r.at("scene_seed").get<std::uint64_t>();
      for (const auto& b : r.at("boxes"))
        rec.boxes.push_back(BoxXYXY{b.at(0).get<double>(), b.at(1).get<double>(),
                                    b.at(2).get<double>(), b.at(3).get<double>()});
      m.records.push_back(std::move(rec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("manifest: schema violation: ") + e.what());
  }
  return m;
}

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("manifest: cannot open for write: " + path);
  f << manifest_to_json(m).dump(2) << '\n';
}

inline DatasetManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("manifest: cannot open " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("manifest: parse error in " + path + ": " + e.what());
  }
  return manifest_from_json(j);
}

/// COCO-style result container (category 1 = person, uncompressed RLE).
struct CocoImage {
  int id = 0, width = 0, height = 0;
};

struct CocoDetection {
  int image_id = 0;
  RleMask mask;
  BoxXYXY box;
  double score = 0.0;
};

struct CocoResults {
  std::vector<CocoImage> images;
  std::vector<CocoDetection> annotations;
  std::uint64_t config_fingerprint = 0;
};

inline nlohmann::json coco_to_json(const CocoResults& r) {
  nlohmann::json j;
  j["info"] = {{"config_fingerprint", r.config_fingerprint}};
  j["categories"] = {{{"id", 1}, {"name", "person"}}};
  auto& images = j["images"] = nlohmann::json::array();
  for (const auto& im : r.images)
    images.push_back({{"id", im.id}, {"width", im.width}, {"height", im.height}});
  auto& anns = j["annotations"] = nlohmann::json::array();
  int ann_id = 1;
  for (const auto& d : r.annotations) {
    nlohmann::json seg = {{"size", {d.mask.height, d.mask.width}},
                          {"counts", d.mask.counts}};
    anns.push_back({{"id", ann_id++},
                    {"image_id", d.image_id},
                    {"category_id", 1},
                    {"segmentation", seg},
                    {"bbox", {d.box.x1, d.box.y1, d.box.width(), d.box.height()}},
                    {"area", d.box.area()},
                    {"score", d.score}});
  }
  return j;
}

inline CocoResults coco_from_json(const nlohmann::json& j) {
  CocoResults r;
  try {
    if (!j.contains("images")) throw std::runtime_error("coco: missing \"images\"");
    if (!j.contains("annotations")) throw std::runtime_error("coco: missing \"annotations\"");
    if (j.contains("info"))
      r.config_fingerprint = j["info"].value("config_fingerprint", std::uint64_t(0));
    for (const auto& im : j["images"])
      r.images.push_back(CocoImage{im.at("id").get<int>(), im.at("width").get<int>(),
                                   im.at("height").get<int>()});
    for (const auto& a : j["annotations"]) {
      CocoDetection d;
      d.image_id = a.at("image_id").get<int>();
      const auto& seg = a.at("segmentation");
      d.mask.height = seg.at("size").at(0).get<int>();
      d.mask.width = seg.at("size").at(1).get<int>();
      d.mask.counts = seg.at("counts").get<std::vector<std::uint32_t>>();
      const auto& bb = a.at("bbox");
      d.box = box_from_xywh(bb.at(0).get<double>(), bb.at(1).get<double>(),
                            bb.at(2).get<double>(), bb.at(3).get<double>());
      d.score = a.value("score", 0.0);
      r.annotations.push_back(std::move(d));
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("coco: schema violation: ") + e.what());
  }
  return r;
}

inline void save_coco(const CocoResults& r, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("coco: cannot open for write: " + path);
  f << coco_to_json(r).dump(2) << '\n';
}

inline CocoResults load_coco(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("coco: cannot open " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("coco: parse error in " + path + ": " + e.what());
  }
  return coco_from_json(j);
}

/// Flat key=value metrics report.
inline std::string metrics_to_string(const MetricsSummary& s) {
  std::ostringstream oss;
  oss.precision(17);
  oss << "ap50=" << s.ap50 << '\n'
      << "mr2=" << s.mr2 << '\n'
      << "recall=" << s.recall_v << '\n'
      << "n_images=" << s.n_images << '\n'
      << "n_gt=" << s.n_gt << '\n'
      << "n_det=" << s.n_det << '\n';
  return oss.str();
}

inline void save_metrics(const MetricsSummary& s, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("metrics: cannot open for write: " + path);
  f << metrics_to_string(s);
}

}  // namespace crowdseg
