#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "crowdseg/backend.hpp"
#include "crowdseg/heads.hpp"
#include "crowdseg/mask.hpp"
#include "crowdseg/tensor.hpp"

namespace crowdseg {

/// Refined IoU estimates: trainable correction on top of the frozen decoder
/// estimate. `pre` caches hidden pre-activations for the backward pass.
struct IouScores {
  int n = 0;
  std::vector<double> s;    // n*4
  std::vector<double> pre;  // n*4*C_tok
};

inline IouScores refine_iou(const DecodeResult& dec, const ParallelIoUHead& head) {
  if (dec.mask_tokens.d2 != head.token_channels() ||
      dec.iou_token.d2 != head.token_channels())
    throw std::invalid_argument("refine_iou: token shape mismatch");
  const int ct = head.token_channels();
  IouScores out;
  out.n = dec.n;
  out.s.resize(std::size_t(dec.n) * 4);
  out.pre.resize(std::size_t(dec.n) * 4 * ct);
  for (int i = 0; i < dec.n; ++i) {
    const double* u = dec.iou_token.row(i, 0);
    for (int j = 0; j < 4; ++j) {
      const std::size_t idx = std::size_t(i) * 4 + j;
      out.s[idx] = head.forward(u, dec.mask_tokens.row(i, j), &out.pre[idx * ct]) +
                   dec.native_iou.at(i, j, 0);
    }
  }
  return out;
}

/// Accumulates head gradients for d loss / d s_iou = ds. The frozen decoder
/// tokens receive no gradient.
inline void refine_iou_backward(const DecodeResult& dec, const IouScores& fwd,
                                const std::vector<double>& ds, ParallelIoUHead& head) {
  const int ct = head.token_channels();
  if (ds.size() != fwd.s.size()) throw std::invalid_argument("refine_iou_backward: shape");
  for (int i = 0; i < dec.n; ++i) {
    const double* u = dec.iou_token.row(i, 0);
    for (int j = 0; j < 4; ++j) {
      const std::size_t idx = std::size_t(i) * 4 + j;
      head.backward(u, dec.mask_tokens.row(i, j), &fwd.pre[idx * ct], ds[idx], nullptr,
                    nullptr);
    }
  }
}

/// Per-candidate semantic tokens and classifier scores. The token is a convex
/// combination of feature cells: spatial softmax of the downsampled mask
/// logits provides the weights. `weights` caches them (n*4*h*w) for backward.
struct SemanticScores {
  int n = 0, h = 0, w = 0, channels = 0;
  Tensor3 tokens;              // n x 4 x C
  std::vector<double> s_cls;   // n*4, in (0,1)
  std::vector<double> weights; // n*4*h*w softmax weights
};

inline SemanticScores semantic_score(const DecodeResult& dec, const FeatureMap& feat,
                                     const ClsHead& cls) {
  if (feat.channels != cls.channels())
    throw std::invalid_argument("semantic_score: channel mismatch");
  const int cells = feat.h * feat.w;
  SemanticScores out;
  out.n = dec.n;
  out.h = feat.h;
  out.w = feat.w;
  out.channels = feat.channels;
  out.tokens = Tensor3(dec.n, 4, feat.channels);
  out.s_cls.resize(std::size_t(dec.n) * 4);
  out.weights.resize(std::size_t(dec.n) * 4 * cells);
  for (int i = 0; i < dec.n; ++i)
    for (int j = 0; j < 4; ++j) {
      const SoftMask& logits = dec.mask(i, j);
      SoftMask down = resize_mask(logits, feat.w, feat.h, ResizeMode::kBilinear);
      double* wcell = &out.weights[(std::size_t(i) * 4 + j) * cells];
      double mx = down.data[0];
      for (double v : down.data) mx = std::max(mx, v);
      double sum = 0.0;
      for (int c = 0; c < cells; ++c) {
        wcell[c] = std::exp(down.data[std::size_t(c)] - mx);
        sum += wcell[c];
      }
      double* tok = out.tokens.row(i, j);
      for (int ch = 0; ch < feat.channels; ++ch) tok[ch] = 0.0;
      for (int c = 0; c < cells; ++c) {
        wcell[c] /= sum;
        const double* fc = &feat.data[std::size_t(c) * feat.channels];
        for (int ch = 0; ch < feat.channels; ++ch) tok[ch] += wcell[c] * fc[ch];
      }
      out.s_cls[std::size_t(i) * 4 + j] = sigmoid(cls.forward(tok));
    }
  return out;
}

/// Backward for the semantic path: accumulates classifier gradients and adds
/// d loss / d feat into dfeat (size h*w*channels). Softmax weights are treated
/// as constants because the mask decoder is frozen.
inline void semantic_score_backward(const SemanticScores& fwd,
                                    const std::vector<double>& ds_cls,
                                    ClsHead& cls, std::vector<double>& dfeat) {
  const int cells = fwd.h * fwd.w;
  if (ds_cls.size() != fwd.s_cls.size())
    throw std::invalid_argument("semantic_score_backward: shape");
  if (dfeat.size() != std::size_t(cells) * fwd.channels)
    throw std::invalid_argument("semantic_score_backward: dfeat shape");
  std::vector<double> dtok(std::size_t(fwd.channels));
  for (int i = 0; i < fwd.n; ++i)
    for (int j = 0; j < 4; ++j) {
      const std::size_t idx = std::size_t(i) * 4 + j;
      const double s = fwd.s_cls[idx];
      const double dlogit = ds_cls[idx] * s * (1.0 - s);
      if (dlogit == 0.0) continue;
      std::fill(dtok.begin(), dtok.end(), 0.0);
      cls.backward(fwd.tokens.row(i, j), dlogit, dtok.data());
      const double* wcell = &fwd.weights[idx * std::size_t(cells)];
      for (int c = 0; c < cells; ++c) {
        if (wcell[c] == 0.0) continue;
        double* df = &dfeat[std::size_t(c) * fwd.channels];
        for (int ch = 0; ch < fwd.channels; ++ch) df[ch] += wcell[c] * dtok[std::size_t(ch)];
      }
    }
}

inline std::vector<double> joint_score(const std::vector<double>& s_iou,
                                       const std::vector<double>& s_cls) {
  if (s_iou.size() != s_cls.size()) throw std::invalid_argument("joint_score: shape");
  std::vector<double> s(s_iou.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = s_iou[i] * s_cls[i];
  return s;
}

/// Regression targets: foreground prompts get the per-candidate IoU against
/// the reference mask of the object containing the prompt; background prompts
/// get zero. `prompt_owner[i]` indexes ref_masks, -1 for background.
/// Candidates are binarized at logit 0 before the IoU.
inline std::vector<double> target_scores(const DecodeResult& dec,
                                         const std::vector<BitMask>& ref_masks,
                                         const std::vector<int>& prompt_owner) {
  if (int(prompt_owner.size()) != dec.n)
    throw std::invalid_argument("target_scores: owner list size");
  std::vector<double> t(std::size_t(dec.n) * 4, 0.0);
  for (int i = 0; i < dec.n; ++i) {
    const int owner = prompt_owner[std::size_t(i)];
    if (owner < 0) continue;
    const BitMask& ref = ref_masks.at(std::size_t(owner));
    for (int j = 0; j < 4; ++j) {
      const BitMask cand = binarize(dec.mask(i, j), 0.0);
      t[std::size_t(i) * 4 + j] =
          cand.empty_mask() && ref.empty_mask() ? 0.0 : iou_masks(cand, ref);
    }
  }
  return t;
}

inline double iou_loss(const std::vector<double>& s, const std::vector<double>& target) {
  if (s.size() != target.size() || s.empty())
    throw std::invalid_argument("iou_loss: shape");
  double acc = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double d = s[i] - target[i];
    acc += d * d;
  }
  return acc / double(s.size());
}

/// d MSE / d s, written into ds.
inline double iou_loss_backward(const std::vector<double>& s,
                                const std::vector<double>& target,
                                std::vector<double>& ds) {
  const double loss = iou_loss(s, target);
  ds.resize(s.size());
  const double scale = 2.0 / double(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) ds[i] = scale * (s[i] - target[i]);
  return loss;
}

/// Row-wise argmax over the 4 candidates; ties resolve to the lowest index.
struct Selection {
  std::vector<int> candidate;  // per prompt
  std::vector<double> score;   // winning joint score
};

inline Selection select_best(const std::vector<double>& s, int n) {
  if (int(s.size()) != n * 4) throw std::invalid_argument("select_best: shape");
  Selection out;
  out.candidate.resize(std::size_t(n));
  out.score.resize(std::size_t(n));
  for (int i = 0; i < n; ++i) {
    int best = 0;
    double bv = s[std::size_t(i) * 4];
    for (int j = 1; j < 4; ++j) {
      const double v = s[std::size_t(i) * 4 + j];
      if (v > bv) {
        bv = v;
        best = j;
      }
    }
    out.candidate[std::size_t(i)] = best;
    out.score[std::size_t(i)] = bv;
  }
  return out;
}

}  // namespace crowdseg
