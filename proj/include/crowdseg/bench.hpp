#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "crowdseg/eps.hpp"
#include "crowdseg/oracle_backend.hpp"
#include "crowdseg/parallel.hpp"
#include "crowdseg/promptgen.hpp"
#include "crowdseg/scene.hpp"

namespace crowdseg {

/// Sampler-efficiency benchmark. Scores use only the frozen decoder IoU
/// estimate (max over the 4 candidates) — the "naive generator" setting, so no
/// trained heads are involved and rows depend only on prompt placement.
/// The full-decode rows exhaust the raw grid (the brute-force baseline); the
/// budgeted rows (random, eps) draw from the same grid pre-filtered to
/// foreground points, standing in for a trained heat filter, so they compare
/// sampling policy on identical pools.
/// A ground-truth object counts as recalled when any kept mask reaches
/// match_iou against its visible mask at native resolution; kept masks
/// reaching no object count as false positives.
struct BenchConfig {
  std::vector<int> full_grids{16, 32, 64, 128};
  int cmp_grid = 192;   // grid for the EPS / random comparison
  int low_grid = 32;    // sparse-grid EPS row
  int budget = 500;     // K for random and EPS rows
  int n_seeds_full = 5;
  int n_seeds_cmp = 20;
  int decode_chunk = 64;
  double keep_threshold = 0.5;  // frozen-score threshold for keeping a mask
  double match_iou = 0.5;
  std::uint64_t seed = 0;
  // Many small objects: sparse grids miss a good share of them, a random
  // budget wastes decodes on repeat hits of the same object, and pruning
  // converts those repeats into coverage — the regime the sampler targets.
  SceneParams scene{280, 0.4, 768, 768, 9.0, 17.0};
  // Coarser masks keep full-grid decoding affordable; whole-object candidates
  // are resolution-exact by construction, so recall is unaffected.
  BackendCaps caps{16, 32, 32, 128};
};

struct BenchRow {
  std::string sampler;
  int grid = 0;    // 0 for the oracle-points row
  int budget = 0;  // 0 = unlimited
  int seeds = 0;
  double recall = 0.0;
  double avg_fps = 0.0;
  double avg_decoded = 0.0;
  double wall_s = 0.0;
};

namespace bench_detail {

struct SceneBundle {
  std::unique_ptr<OracleBackend> backend;
  Image img;
  FeatureMap feat;
  std::vector<BitMask> gt_native;  // non-empty visible masks at native res
  BitMask fg_union;                // union of visible masks at canvas res
};

inline SceneBundle make_bundle(const BenchConfig& cfg, std::uint64_t scene_seed) {
  SceneBundle b;
  auto [scene, gt] = generate_scene(cfg.scene, scene_seed);
  b.backend = std::make_unique<OracleBackend>(std::move(scene), cfg.caps,
                                              hash_mix(scene_seed, hash_str("bench-backend")));
  b.img = render(b.backend->scene());
  b.feat = b.backend->encode_image(ImageView::whole(b.img));
  const int res = cfg.caps.native_mask_resolution;
  b.fg_union = BitMask(b.img.width, b.img.height);
  for (const auto& vis : b.backend->ground_truth().visible_masks) {
    b.fg_union.or_with(vis);
    BitMask native = resize_bitmask_nearest(vis, res, res);
    if (!native.empty_mask()) b.gt_native.push_back(std::move(native));
  }
  return b;
}

struct SeedStats {
  int covered = 0, total_gt = 0, fps = 0, decoded = 0;
};

inline void match_kept(const std::vector<BitMask>& kept, const SceneBundle& b,
                       double match_iou, SeedStats& s) {
  s.total_gt = int(b.gt_native.size());
  std::vector<bool> covered(b.gt_native.size(), false);
  for (const auto& m : kept) {
    bool hit = false;
    for (std::size_t g = 0; g < b.gt_native.size(); ++g) {
      if (m.intersection_count(b.gt_native[g]) == 0) continue;
      if (iou_masks(m, b.gt_native[g]) >= match_iou) {
        covered[g] = true;
        hit = true;
      }
    }
    if (!hit) ++s.fps;
  }
  for (bool c : covered) s.covered += c ? 1 : 0;
}

inline Selection frozen_selection(const DecodeResult& dec) {
  Selection sel;
  sel.candidate.resize(std::size_t(dec.n));
  sel.score.resize(std::size_t(dec.n));
  for (int i = 0; i < dec.n; ++i) {
    int best = 0;
    double bv = dec.native_iou.at(i, 0, 0);
    for (int j = 1; j < 4; ++j) {
      const double v = dec.native_iou.at(i, j, 0);
      if (v > bv) {
        bv = v;
        best = j;
      }
    }
    sel.candidate[std::size_t(i)] = best;
    sel.score[std::size_t(i)] = bv;
  }
  return sel;
}

inline PromptSet grid_prompts(int grid_n, int w, int h) {
  PromptSet out;
  out.reserve(std::size_t(grid_n) * grid_n);
  for (int j = 0; j < grid_n; ++j)
    for (int i = 0; i < grid_n; ++i)
      out.push_back(PointPrompt{(i + 0.5) * double(w) / grid_n,
                                (j + 0.5) * double(h) / grid_n, j * grid_n + i, 1.0});
  return out;
}

// Drop grid points that land on background. The budgeted sampler rows see the
// pool a trained heat filter would hand them, so the comparison isolates the
// sampling policy rather than the filter.
inline PromptSet keep_foreground(const PromptSet& pool, const BitMask& fg) {
  PromptSet out;
  for (const auto& p : pool) {
    const int x = std::min(fg.width() - 1, int(p.x));
    const int y = std::min(fg.height() - 1, int(p.y));
    if (fg.get(x, y)) out.push_back(p);
  }
  return out;
}

// Decode every prompt (chunked), keep best candidates whose frozen score
// clears the threshold.
inline SeedStats eval_decode_all(const SceneBundle& b, const PromptSet& prompts,
                                 const BenchConfig& cfg) {
  SeedStats s;
  std::vector<BitMask> kept;
  for (std::size_t off = 0; off < prompts.size(); off += std::size_t(cfg.decode_chunk)) {
    const std::size_t n = std::min(std::size_t(cfg.decode_chunk), prompts.size() - off);
    PromptSet chunk(prompts.begin() + long(off), prompts.begin() + long(off + n));
    const DecodeResult dec = b.backend->decode_prompts(b.feat, chunk);
    const Selection sel = frozen_selection(dec);
    for (int i = 0; i < dec.n; ++i) {
      if (sel.score[std::size_t(i)] > cfg.keep_threshold)
        kept.push_back(binarize(dec.mask(i, sel.candidate[std::size_t(i)]), 0.0));
    }
    s.decoded += dec.n;
  }
  match_kept(kept, b, cfg.match_iou, s);
  return s;
}

inline SeedStats eval_eps(const SceneBundle& b, const PromptSet& prompts,
                          const BenchConfig& cfg, std::uint64_t seed) {
  EpsConfig ec;
  ec.batch_size = cfg.decode_chunk;
  ec.budget_k = cfg.budget;
  ec.valid_threshold = cfg.keep_threshold;
  ec.seed = seed;
  const EpsResult r = eps_sample(b.feat, prompts, frozen_selection, *b.backend, ec);
  SeedStats s;
  s.decoded = int(r.decoded.size());
  std::vector<BitMask> kept;
  kept.reserve(r.valid.size());
  for (int idx : r.valid) kept.push_back(r.decoded[std::size_t(idx)].best_mask);
  match_kept(kept, b, cfg.match_iou, s);
  return s;
}

// One prompt per object at the visible-region center (snapped to the nearest
// visible pixel); an object counts as recalled if any decoded candidate
// matches it. This row measures the decoder ceiling for perfectly placed
// prompts, so candidate selection noise is excluded by construction.
inline SeedStats eval_oracle_points(const SceneBundle& b, const BenchConfig& cfg) {
  const GroundTruth& gt = b.backend->ground_truth();
  PromptSet prompts;
  for (std::size_t k = 0; k < gt.visible_masks.size(); ++k) {
    const BitMask& vis = gt.visible_masks[k];
    if (vis.empty_mask()) continue;
    const BoxXYXY& box = gt.visible_boxes[k];
    const double cx = (box.x1 + box.x2) / 2.0, cy = (box.y1 + box.y2) / 2.0;
    double best_d = 1e18, px = 0, py = 0;
    const int y_lo = std::max(0, int(box.y1)), y_hi = std::min(vis.height(), int(box.y2) + 1);
    const int x_lo = std::max(0, int(box.x1)), x_hi = std::min(vis.width(), int(box.x2) + 1);
    for (int y = y_lo; y < y_hi; ++y)
      for (int x = x_lo; x < x_hi; ++x) {
        if (!vis.get(x, y)) continue;
        const double d = (x + 0.5 - cx) * (x + 0.5 - cx) + (y + 0.5 - cy) * (y + 0.5 - cy);
        if (d < best_d) {
          best_d = d;
          px = x + 0.5;
          py = y + 0.5;
        }
      }
    prompts.push_back(PointPrompt{px, py, int(k), 1.0});
  }
  SeedStats s;
  std::vector<BitMask> kept;
  for (std::size_t off = 0; off < prompts.size(); off += std::size_t(cfg.decode_chunk)) {
    const std::size_t n = std::min(std::size_t(cfg.decode_chunk), prompts.size() - off);
    PromptSet chunk(prompts.begin() + long(off), prompts.begin() + long(off + n));
    const DecodeResult dec = b.backend->decode_prompts(b.feat, chunk);
    for (int i = 0; i < dec.n; ++i)
      for (int j = 0; j < 4; ++j) kept.push_back(binarize(dec.mask(i, j), 0.0));
    s.decoded += dec.n;
  }
  match_kept(kept, b, cfg.match_iou, s);
  s.fps = 0;  // all four candidates are inspected; FP counting is meaningless here
  return s;
}

}  // namespace bench_detail

inline std::vector<BenchRow> run_sampler_bench(const BenchConfig& cfg, int workers) {
  using clock = std::chrono::steady_clock;
  struct RowSpec {
    std::string sampler;
    int grid, budget, seeds;
  };
  std::vector<RowSpec> specs;
  for (int g : cfg.full_grids) specs.push_back({"full", g, 0, cfg.n_seeds_full});
  specs.push_back({"random", cfg.cmp_grid, cfg.budget, cfg.n_seeds_cmp});
  specs.push_back({"eps", cfg.cmp_grid, cfg.budget, cfg.n_seeds_cmp});
  specs.push_back({"eps", cfg.low_grid, cfg.budget, cfg.n_seeds_cmp});
  specs.push_back({"oracle-points", 0, 0, cfg.n_seeds_cmp});

  const int max_seeds = [&] {
    int m = 0;
    for (const auto& s : specs) m = std::max(m, s.seeds);
    return m;
  }();

  // Scenes are shared across rows (paired comparison). Each worker streams one
  // scene at a time through every row so only `workers` bundles are alive at
  // once; per-row wall time is the summed evaluation time across scenes.
  std::vector<std::vector<bench_detail::SeedStats>> stats(specs.size());
  std::vector<std::vector<double>> walls(specs.size());
  for (std::size_t si = 0; si < specs.size(); ++si) {
    stats[si].resize(std::size_t(specs[si].seeds));
    walls[si].resize(std::size_t(specs[si].seeds), 0.0);
  }
  parallel_for(max_seeds, workers, [&](int i) {
    const bench_detail::SceneBundle b =
        bench_detail::make_bundle(cfg, hash_mix(cfg.seed, std::uint64_t(i)));
    for (std::size_t si = 0; si < specs.size(); ++si) {
      const auto& spec = specs[si];
      if (i >= spec.seeds) continue;
      const auto t0 = clock::now();
      bench_detail::SeedStats s;
      if (spec.sampler == "oracle-points") {
        s = bench_detail::eval_oracle_points(b, cfg);
      } else {
        PromptSet pool =
            bench_detail::grid_prompts(spec.grid, b.feat.window_w, b.feat.window_h);
        if (spec.sampler != "full")
          pool = bench_detail::keep_foreground(pool, b.fg_union);
        const std::uint64_t row_seed =
            hash_mix(cfg.seed, hash_mix(hash_str(spec.sampler),
                                        std::uint64_t(spec.grid) << 16 | std::uint64_t(i)));
        if (spec.sampler == "full") {
          s = bench_detail::eval_decode_all(b, pool, cfg);
        } else if (spec.sampler == "random") {
          s = bench_detail::eval_decode_all(b, random_sampler(pool, spec.budget, row_seed),
                                            cfg);
        } else {
          s = bench_detail::eval_eps(b, pool, cfg, row_seed);
        }
      }
      stats[si][std::size_t(i)] = s;
      walls[si][std::size_t(i)] = std::chrono::duration<double>(clock::now() - t0).count();
    }
  });

  std::vector<BenchRow> rows;
  for (std::size_t si = 0; si < specs.size(); ++si) {
    const auto& spec = specs[si];
    BenchRow row;
    row.sampler = spec.sampler;
    row.grid = spec.grid;
    row.budget = spec.budget;
    row.seeds = spec.seeds;
    long covered = 0, total = 0, fps = 0, decoded = 0;
    for (const auto& s : stats[si]) {
      covered += s.covered;
      total += s.total_gt;
      fps += s.fps;
      decoded += s.decoded;
    }
    row.recall = total > 0 ? double(covered) / double(total) : 0.0;
    row.avg_fps = double(fps) / double(spec.seeds);
    row.avg_decoded = double(decoded) / double(spec.seeds);
    for (double w : walls[si]) row.wall_s += w;
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Deterministic results table (no timing).
inline std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream oss;
  oss.precision(17);
  oss << "sampler,grid,budget,seeds,recall,avg_fps,avg_decoded\n";
  for (const auto& r : rows)
    oss << r.sampler << ',' << r.grid << ',' << r.budget << ',' << r.seeds << ','
        << r.recall << ',' << r.avg_fps << ',' << r.avg_decoded << '\n';
  return oss.str();
}

/// Wall-clock times, kept separate so the main table is reproducible.
inline std::string bench_timing_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream oss;
  oss.precision(6);
  oss << "sampler,grid,budget,wall_s\n";
  for (const auto& r : rows)
    oss << r.sampler << ',' << r.grid << ',' << r.budget << ',' << r.wall_s << '\n';
  return oss.str();
}

/// Recall-versus-grid line chart for the full-decode rows plus one marker per
/// budgeted sampler, as a standalone SVG.
inline std::string bench_plot_svg(const std::vector<BenchRow>& rows) {
  const int W = 640, H = 420, ml = 60, mr = 20, mt = 30, mb = 50;
  double max_grid = 1.0;
  for (const auto& r : rows) max_grid = std::max(max_grid, double(r.grid));
  auto sx = [&](double grid) {
    return ml + (W - ml - mr) * (grid / max_grid);
  };
  auto sy = [&](double recall) { return mt + (H - mt - mb) * (1.0 - recall); };
  std::ostringstream svg;
  svg.precision(6);
  svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H
      << "' font-family='sans-serif' font-size='12'>\n";
  svg << "<rect width='" << W << "' height='" << H << "' fill='white'/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double r = i / 5.0;
    svg << "<line x1='" << ml << "' y1='" << sy(r) << "' x2='" << W - mr << "' y2='"
        << sy(r) << "' stroke='#ddd'/>\n";
    svg << "<text x='" << ml - 8 << "' y='" << sy(r) + 4
        << "' text-anchor='end'>" << r << "</text>\n";
  }
  svg << "<text x='" << W / 2 << "' y='" << H - 12
      << "' text-anchor='middle'>prompt grid side</text>\n";
  svg << "<text x='16' y='" << H / 2 << "' transform='rotate(-90 16 " << H / 2
      << ")' text-anchor='middle'>recall</text>\n";
  std::ostringstream poly;
  bool first = true;
  for (const auto& r : rows) {
    if (r.sampler != "full") continue;
    poly << (first ? "" : " ") << sx(r.grid) << ',' << sy(r.recall);
    first = false;
    svg << "<circle cx='" << sx(r.grid) << "' cy='" << sy(r.recall)
        << "' r='4' fill='#1f77b4'/>\n";
    svg << "<text x='" << sx(r.grid) << "' y='" << H - mb + 16
        << "' text-anchor='middle'>" << r.grid << "</text>\n";
  }
  if (!first)
    svg << "<polyline points='" << poly.str()
        << "' fill='none' stroke='#1f77b4' stroke-width='2'/>\n";
  int legend_y = mt + 10;
  for (const auto& r : rows) {
    if (r.sampler == "full") continue;
    const char* color = r.sampler == "eps"              ? "#d62728"
                        : r.sampler == "random"         ? "#2ca02c"
                                                        : "#9467bd";
    if (r.grid > 0) {
      svg << "<circle cx='" << sx(r.grid) << "' cy='" << sy(r.recall) << "' r='5' fill='"
          << color << "'/>\n";
    }
    svg << "<circle cx='" << W - mr - 150 << "' cy='" << legend_y << "' r='5' fill='"
        << color << "'/>\n";
    svg << "<text x='" << W - mr - 140 << "' y='" << legend_y + 4 << "'>" << r.sampler;
    if (r.grid > 0) svg << " @" << r.grid << (r.budget > 0 ? " K=" + std::to_string(r.budget) : "");
    svg << " (" << int(r.recall * 1000) / 10.0 << "%)</text>\n";
    legend_y += 18;
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace crowdseg
