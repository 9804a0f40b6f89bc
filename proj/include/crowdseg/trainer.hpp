#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "crowdseg/backend.hpp"
#include "crowdseg/heads.hpp"
#include "crowdseg/promptgen.hpp"
#include "crowdseg/pwdnet.hpp"
#include "crowdseg/rng.hpp"

namespace crowdseg {

struct TrainConfig {
  double learning_rate = 1e-5;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  int iterations = 2000;
  int batch_images = 1;
  int pos_points_per_image = 32;
  int neg_points_per_image = 32;
  std::uint64_t seed = 0;

  void validate() const {
    if (learning_rate <= 0.0 || iterations < 0 || batch_images < 1 ||
        pos_points_per_image < 0 || neg_points_per_image < 0 ||
        pos_points_per_image + neg_points_per_image < 1)
      throw std::invalid_argument("train config: invalid counts");
  }
};

/// Adam with L2-style weight decay folded into the gradient, constant
/// learning rate, bias-corrected moments.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, const TrainConfig& cfg)
      : params_(std::move(params)), cfg_(cfg) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i]->size(), 0.0);
      v_[i].assign(params_[i]->size(), 0.0);
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Parameter& p = *params_[i];
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double g = p.grad[k] + cfg_.weight_decay * p.value[k];
        m_[i][k] = cfg_.beta1 * m_[i][k] + (1.0 - cfg_.beta1) * g;
        v_[i][k] = cfg_.beta2 * v_[i][k] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m_[i][k] / bc1;
        const double vhat = v_[i][k] / bc2;
        p.value[k] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + 1e-8);
      }
    }
  }

  int steps_taken() const { return t_; }

 private:
  std::vector<Parameter*> params_;
  TrainConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  int t_ = 0;
};

struct LabeledPoint {
  PointPrompt p;  // pixel-center coordinates in the mask's own raster
  bool fg = false;
};

struct SampledPoints {
  std::vector<LabeledPoint> points;
  int got_pos = 0, got_neg = 0;
  std::string warning;  // non-empty when a side came up short
};

/// Uniform seeded sampling without replacement of foreground / background
/// pixels of a supervision mask. Returns fewer points (with a warning record)
/// when a side has fewer pixels than requested.
inline SampledPoints sample_training_points(const BitMask& mask, int n_pos, int n_neg,
                                            std::uint64_t seed) {
  std::vector<std::uint32_t> fg, bg;
  fg.reserve(std::size_t(mask.count()));
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      (mask.get(x, y) ? fg : bg).push_back(std::uint32_t(y) * mask.width() + x);
  SampledPoints out;
  Rng rng(seed);
  auto draw = [&](std::vector<std::uint32_t>& pix, int want, bool is_fg) {
    const int got = std::min<int>(want, int(pix.size()));
    const auto idx = rng.sample_without_replacement(pix.size(), std::size_t(got));
    for (std::size_t i : idx) {
      const std::uint32_t p = pix[i];
      out.points.push_back(LabeledPoint{
          PointPrompt{(p % mask.width()) + 0.5, (p / mask.width()) + 0.5, -1, 0.0}, is_fg});
    }
    return got;
  };
  out.got_pos = draw(fg, n_pos, true);
  out.got_neg = draw(bg, n_neg, false);
  std::ostringstream warn;
  if (out.got_pos < n_pos)
    warn << "requested " << n_pos << " positives, mask has " << out.got_pos << "; ";
  if (out.got_neg < n_neg)
    warn << "requested " << n_neg << " negatives, background has " << out.got_neg << "; ";
  out.warning = warn.str();
  return out;
}

/// Everything needed to run both loss terms on one labeled image; the frozen
/// backbone outputs are computed once and reused every iteration.
struct TrainingExample {
  const Backend* backend = nullptr;
  FeatureMap feat_sam;
  FeatureMap feat_dino_raw;
  BitMask pseudo;                      // merged supervision mask, 256x256
  std::vector<BitMask> ref_masks;      // per-box decoded masks at native res
  int window_w = 0, window_h = 0;
};

inline TrainingExample prepare_example(const Backend& backend, const ImageView& whole,
                                       const std::vector<BoxXYXY>& boxes) {
  TrainingExample ex;
  ex.backend = &backend;
  ex.feat_sam = backend.encode_image(whole);
  ex.feat_dino_raw = backend.extract_semantic_features(whole);
  ex.window_w = ex.feat_sam.window_w;
  ex.window_h = ex.feat_sam.window_h;
  ex.pseudo = generate_pseudo_masks(boxes, backend, ex.feat_sam);
  const int res = backend.caps().native_mask_resolution;
  ex.ref_masks.reserve(boxes.size());
  for (const auto& b : boxes)
    ex.ref_masks.push_back(
        resize_bitmask_nearest(backend.decode_box_prompt(ex.feat_sam, b), res, res));
  return ex;
}

struct LossBreakdown {
  double total = 0.0, fg = 0.0, iou = 0.0;
};

namespace detail {
inline int owner_of_point(const std::vector<BitMask>& ref_masks, double x01, double y01) {
  for (std::size_t k = 0; k < ref_masks.size(); ++k) {
    const BitMask& m = ref_masks[k];
    const int ix = std::min(m.width() - 1, int(x01 * m.width()));
    const int iy = std::min(m.height() - 1, int(y01 * m.height()));
    if (m.get(ix, iy)) return int(k);
  }
  return -1;
}
}  // namespace detail

/// One full forward/backward pass: dice term through the heatmap path plus the
/// score-regression term through the scoring heads, gradients accumulated into
/// `heads` (zero them first). Backbone outputs receive no gradient.
inline LossBreakdown total_loss(const TrainingExample& ex, HeadSet& heads,
                                int n_pos, int n_neg, std::uint64_t point_seed) {
  AdaptedFeatures adapt = adapt_features(ex.feat_dino_raw, heads.adapter);
  const FeatureMap& fd = adapt.adapted;
  SoftMask heat = heatmap_from_adapted(fd, heads.cls);
  SoftMask pred = resize_mask(heat, ex.pseudo.width(), ex.pseudo.height(),
                              ResizeMode::kBilinear);
  std::vector<double> dpred;
  LossBreakdown loss;
  loss.fg = dice_loss_backward(pred, ex.pseudo, dpred);

  SoftMask dpred_m(pred.width, pred.height, 0.0, true);
  dpred_m.data = std::move(dpred);
  SoftMask dheat = resize_bilinear_backward(dpred_m, heat.width, heat.height);
  std::vector<double> dfeat(fd.data.size(), 0.0);
  for (int r = 0; r < fd.h; ++r)
    for (int c = 0; c < fd.w; ++c) {
      const std::size_t cell = std::size_t(r) * fd.w + c;
      const double h = heat.data[cell];
      const double dlogit = dheat.data[cell] * h * (1.0 - h);
      if (dlogit != 0.0)
        heads.cls.backward(fd.cell(r, c), dlogit, &dfeat[cell * std::size_t(fd.channels)]);
    }

  // Score-regression term on sampled points.
  SampledPoints pts = sample_training_points(ex.pseudo, n_pos, n_neg, point_seed);
  if (!pts.points.empty()) {
    std::vector<PointPrompt> prompts;
    std::vector<int> owners;
    for (const auto& lp : pts.points) {
      const double x01 = lp.p.x / ex.pseudo.width();
      const double y01 = lp.p.y / ex.pseudo.height();
      prompts.push_back(PointPrompt{x01 * ex.window_w, y01 * ex.window_h, -1, 0.0});
      owners.push_back(lp.fg ? detail::owner_of_point(ex.ref_masks, x01, y01) : -1);
    }
    DecodeResult dec = ex.backend->decode_prompts(ex.feat_sam, prompts);
    IouScores iou = refine_iou(dec, heads.par);
    SemanticScores sem = semantic_score(dec, fd, heads.cls);
    std::vector<double> s = joint_score(iou.s, sem.s_cls);
    std::vector<double> targets = target_scores(dec, ex.ref_masks, owners);
    std::vector<double> ds;
    loss.iou = iou_loss_backward(s, targets, ds);
    std::vector<double> ds_iou(ds.size()), ds_cls(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
      ds_iou[i] = ds[i] * sem.s_cls[i];
      ds_cls[i] = ds[i] * iou.s[i];
    }
    refine_iou_backward(dec, iou, ds_iou, heads.par);
    semantic_score_backward(sem, ds_cls, heads.cls, dfeat);
  }

  // Push the accumulated feature gradient back through the adapter.
  for (int r = 0; r < fd.h; ++r)
    for (int c = 0; c < fd.w; ++c) {
      const std::size_t cell = std::size_t(r) * fd.w + c;
      heads.adapter.backward_cell(
          ex.feat_dino_raw.cell(r, c),
          &adapt.hidden_pre[cell * std::size_t(heads.adapter.hidden())],
          &dfeat[cell * std::size_t(fd.channels)], nullptr);
    }

  loss.total = loss.fg + loss.iou;
  if (!std::isfinite(loss.total)) {
    std::ostringstream oss;
    oss << "total_loss: non-finite loss (fg=" << loss.fg << ", iou=" << loss.iou << ")";
    throw std::runtime_error(oss.str());
  }
  return loss;
}

struct LossRow {
  int iteration = 0;
  double fg = 0.0, iou = 0.0, total = 0.0;
};

struct TrainResult {
  HeadSet heads;
  std::vector<LossRow> log;
};

inline std::string loss_log_csv(const std::vector<LossRow>& log) {
  std::ostringstream oss;
  oss << "iteration,loss_fg,loss_iou,loss_total\n";
  oss.precision(17);
  for (const auto& r : log)
    oss << r.iteration << ',' << r.fg << ',' << r.iou << ',' << r.total << '\n';
  return oss.str();
}

/// Deterministic training loop: examples visited round-robin, point sampling
/// reseeded per iteration from the config seed.
inline TrainResult train(const std::vector<TrainingExample>& dataset, const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  const BackendCaps caps = dataset.front().backend->caps();
  TrainResult out;
  out.heads = HeadSet(caps.feature_channels, caps.token_channels, cfg.seed);
  Adam opt(out.heads.params(), cfg);
  out.log.reserve(std::size_t(cfg.iterations));
  for (int it = 1; it <= cfg.iterations; ++it) {
    out.heads.zero_grad();
    LossBreakdown acc;
    for (int b = 0; b < cfg.batch_images; ++b) {
      const std::size_t idx = std::size_t((it - 1) * cfg.batch_images + b) % dataset.size();
      const LossBreakdown l =
          total_loss(dataset[idx], out.heads, cfg.pos_points_per_image,
                     cfg.neg_points_per_image, hash_mix(cfg.seed, std::uint64_t(it) << 8 | std::uint64_t(b)));
      acc.fg += l.fg;
      acc.iou += l.iou;
      acc.total += l.total;
    }
    opt.step();
    out.log.push_back(LossRow{it, acc.fg, acc.iou, acc.total});
  }
  if (!out.heads.finite()) throw std::runtime_error("train: non-finite parameters");
  return out;
}

}  // namespace crowdseg
