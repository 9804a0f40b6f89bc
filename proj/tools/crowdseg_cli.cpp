// Command-line front end: scene generation, head training, annotation,
// evaluation, and the sampler benchmark, all driven by one JSON config.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "crowdseg/crowdseg.hpp"

namespace fs = std::filesystem;
using namespace crowdseg;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  bool seed_set = false;
  int workers = 0;         // 0 = take from config
  std::string backend;     // empty = take from config
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON config file (defaults used if omitted)");
  cmd->add_option("--out-dir", args.out_dir, "output directory");
  cmd->add_option("--seed", args.seed, "override the config seed")
      ->each([&](const std::string&) { args.seed_set = true; });
  cmd->add_option("--workers", args.workers, "override worker thread count");
  cmd->add_option("--backend", args.backend, "override backend (oracle|real)");
}

Config resolve_config(const CommonArgs& args) {
  Config cfg = args.config_path.empty() ? config_from_json(nlohmann::json::object())
                                        : load_config_file(args.config_path);
  if (args.seed_set) cfg.seed = args.seed;
  if (args.workers > 0) cfg.workers = args.workers;
  if (!args.backend.empty()) cfg.backend = args.backend;
  if (cfg.backend != "oracle" && cfg.backend != "real")
    throw std::invalid_argument("backend must be \"oracle\" or \"real\"");
  // Re-propagate the (possibly overridden) seed to the component configs.
  cfg.train.seed = cfg.seed;
  cfg.pipeline.seed = cfg.seed;
  cfg.pipeline.eps.seed = cfg.seed;
  return cfg;
}

void require_oracle(const Config& cfg, const char* what) {
  if (cfg.backend == "oracle") return;
  // The real backend validates its weight files and reports what is missing;
  // with weights present it still has no inference engine in this build.
  RealBackend rb(cfg.weights_dir);
  std::string reason = rb.available() ? "inference engine not linked into this build"
                                      : "missing " + rb.missing_files().front();
  throw BackendUnavailable(std::string(what) + ": real backend unavailable (" + reason + ")");
}

void write_text(const fs::path& path, const std::string& body) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for write: " + path.string());
  f << body;
}

fs::path prepare_out_dir(const CommonArgs& args, const Config& cfg) {
  fs::path out(args.out_dir);
  fs::create_directories(out);
  write_text(out / "config.json", config_to_json(cfg).dump(2) + "\n");
  return out;
}

void draw_box(Image& img, const BoxXYXY& b, std::uint8_t r, std::uint8_t g, std::uint8_t bl) {
  const int x0 = std::max(0, int(b.x1)), x1 = std::min(img.width - 1, int(b.x2));
  const int y0 = std::max(0, int(b.y1)), y1 = std::min(img.height - 1, int(b.y2));
  auto paint = [&](int x, int y) {
    std::uint8_t* p = img.px(x, y);
    p[0] = r;
    p[1] = g;
    p[2] = bl;
  };
  for (int x = x0; x <= x1; ++x)
    for (int t = 0; t < 2; ++t) {
      if (y0 + t <= y1) paint(x, y0 + t);
      if (y1 - t >= y0) paint(x, y1 - t);
    }
  for (int y = y0; y <= y1; ++y)
    for (int t = 0; t < 2; ++t) {
      if (x0 + t <= x1) paint(x0 + t, y);
      if (x1 - t >= x0) paint(x1 - t, y);
    }
}

int cmd_gen_scenes(const CommonArgs& args, bool render_images) {
  const Config cfg = resolve_config(args);
  require_oracle(cfg, "gen-scenes");
  const fs::path out = prepare_out_dir(args, cfg);
  auto scenes = build_dataset(cfg.scene, cfg.caps, cfg.seed, cfg.n_scenes, cfg.workers);
  save_manifest(dataset_manifest(scenes, cfg.scene, config_fingerprint(cfg)),
                (out / "scenes.json").string());
  if (render_images)
    for (std::size_t i = 0; i < scenes.size(); ++i)
      write_ppm(scenes[i].image, (out / (scenes[i].record.id + ".ppm")).string());
  std::cout << "wrote " << scenes.size() << " scene records to " << (out / "scenes.json")
            << "\n";
  return 0;
}

int cmd_train(const CommonArgs& args, const std::string& manifest_path) {
  const Config cfg = resolve_config(args);
  require_oracle(cfg, "train");
  const fs::path out = prepare_out_dir(args, cfg);
  std::vector<SyntheticScene> scenes;
  if (manifest_path.empty()) {
    scenes = build_dataset(cfg.scene, cfg.caps, cfg.seed, cfg.n_scenes, cfg.workers);
  } else {
    scenes = build_from_manifest(load_manifest(manifest_path), cfg.caps, cfg.workers);
  }
  const auto examples = prepare_training_set(scenes, cfg.workers);
  TrainResult result = train(examples, cfg.train);
  save_checkpoint((out / "checkpoint.bin").string(), result.heads, config_fingerprint(cfg));
  write_text(out / "loss.csv", loss_log_csv(result.log));
  std::cout << "trained " << cfg.train.iterations << " iterations on " << scenes.size()
            << " scenes; checkpoint at " << (out / "checkpoint.bin") << "\n";
  if (!result.log.empty())
    std::cout << "final loss: " << result.log.back().total << " (fg " << result.log.back().fg
              << ", iou " << result.log.back().iou << ")\n";
  return 0;
}

int cmd_annotate(const CommonArgs& args, const std::string& checkpoint_path,
                 const std::string& manifest_path, int n_overlays) {
  const Config cfg = resolve_config(args);
  require_oracle(cfg, "annotate");
  const fs::path out = prepare_out_dir(args, cfg);
  std::vector<SyntheticScene> scenes;
  if (manifest_path.empty()) {
    scenes = build_dataset(cfg.scene, cfg.caps, cfg.seed, cfg.n_scenes, cfg.workers);
  } else {
    scenes = build_from_manifest(load_manifest(manifest_path), cfg.caps, cfg.workers);
  }
  HeadSet heads(cfg.caps.feature_channels, cfg.caps.token_channels, cfg.seed);
  std::uint64_t ckpt_fp = 0;
  if (!checkpoint_path.empty()) ckpt_fp = load_checkpoint(checkpoint_path, heads);
  std::vector<AnnotationResult> results(scenes.size());
  parallel_for(int(scenes.size()), cfg.workers, [&](int i) {
    PipelineConfig pc = cfg.pipeline;
    pc.seed = hash_mix(cfg.seed, hash_mix(hash_str("annotate"), std::uint64_t(i)));
    results[std::size_t(i)] = annotate(scenes[std::size_t(i)].image, heads,
                                       *scenes[std::size_t(i)].backend, pc);
  });
  CocoResults coco;
  coco.config_fingerprint = ckpt_fp != 0 ? ckpt_fp : config_fingerprint(cfg);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    coco.images.push_back(
        CocoImage{int(i), scenes[i].image.width, scenes[i].image.height});
    for (const auto& det : results[i].detections)
      coco.annotations.push_back(CocoDetection{int(i), det.mask, det.box, det.score});
  }
  save_coco(coco, (out / "results.json").string());
  for (int i = 0; i < std::min<int>(n_overlays, int(scenes.size())); ++i) {
    Image overlay = scenes[std::size_t(i)].image;
    for (const auto& b : scenes[std::size_t(i)].record.boxes) draw_box(overlay, b, 40, 220, 40);
    for (const auto& det : results[std::size_t(i)].detections)
      draw_box(overlay, det.box, 230, 40, 40);
    write_ppm(overlay, (out / ("overlay-" + std::to_string(i) + ".ppm")).string());
  }
  std::cout << "annotated " << scenes.size() << " images, " << coco.annotations.size()
            << " detections -> " << (out / "results.json") << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& results_path,
             const std::string& manifest_path) {
  const Config cfg = resolve_config(args);
  const fs::path out = prepare_out_dir(args, cfg);
  const CocoResults coco = load_coco(results_path);
  const DatasetManifest manifest = load_manifest(manifest_path);
  if (coco.images.size() != manifest.records.size())
    throw std::runtime_error("eval: image count mismatch between results and manifest");
  std::vector<ImageEval> images(manifest.records.size());
  for (std::size_t i = 0; i < manifest.records.size(); ++i)
    images[i].gts = manifest.records[i].boxes;
  for (const auto& d : coco.annotations) {
    if (d.image_id < 0 || d.image_id >= int(images.size()))
      throw std::runtime_error("eval: detection references unknown image id " +
                               std::to_string(d.image_id));
    images[std::size_t(d.image_id)].dets.push_back(ScoredBox{d.box, d.score});
  }
  const MetricsSummary m = evaluate(images);
  save_metrics(m, (out / "metrics.txt").string());
  std::cout << metrics_to_string(m);
  return 0;
}

int cmd_bench(const CommonArgs& args) {
  const Config cfg = resolve_config(args);
  require_oracle(cfg, "bench-samplers");
  const fs::path out = prepare_out_dir(args, cfg);
  BenchConfig bc;
  bc.seed = cfg.seed;
  const auto rows = run_sampler_bench(bc, cfg.workers);
  write_text(out / "bench.csv", bench_csv(rows));
  write_text(out / "bench_timing.csv", bench_timing_csv(rows));
  write_text(out / "bench.svg", bench_plot_svg(rows));
  std::cout << bench_csv(rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"few-shot smart annotation for crowded scenes"};
  app.require_subcommand(1);

  CommonArgs gen_args;
  bool gen_render = false;
  auto* gen = app.add_subcommand("gen-scenes", "generate a synthetic scene manifest");
  add_common(gen, gen_args);
  gen->add_flag("--render", gen_render, "also write rendered scene images");

  CommonArgs train_args;
  std::string train_manifest;
  auto* tr = app.add_subcommand("train", "train the heads on synthetic scenes");
  add_common(tr, train_args);
  tr->add_option("--manifest", train_manifest, "scene manifest (generated when omitted)");

  CommonArgs ann_args;
  std::string ann_checkpoint, ann_manifest;
  int ann_overlays = 3;
  auto* an = app.add_subcommand("annotate", "annotate scenes with a trained checkpoint");
  add_common(an, ann_args);
  an->add_option("--checkpoint", ann_checkpoint, "trained checkpoint file");
  an->add_option("--manifest", ann_manifest, "scene manifest (generated when omitted)");
  an->add_option("--overlays", ann_overlays, "number of overlay images to write");

  CommonArgs eval_args;
  std::string eval_results, eval_manifest;
  auto* ev = app.add_subcommand("eval", "score annotation results against ground truth");
  add_common(ev, eval_args);
  ev->add_option("--results", eval_results, "COCO results file")->required();
  ev->add_option("--manifest", eval_manifest, "scene manifest with GT boxes")->required();

  CommonArgs bench_args;
  auto* be = app.add_subcommand("bench-samplers", "benchmark prompt samplers");
  add_common(be, bench_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_scenes(gen_args, gen_render);
    if (tr->parsed()) return cmd_train(train_args, train_manifest);
    if (an->parsed()) return cmd_annotate(ann_args, ann_checkpoint, ann_manifest, ann_overlays);
    if (ev->parsed()) return cmd_eval(eval_args, eval_results, eval_manifest);
    if (be->parsed()) return cmd_bench(bench_args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
