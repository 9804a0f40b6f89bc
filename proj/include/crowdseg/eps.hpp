#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "crowdseg/backend.hpp"
#include "crowdseg/mask.hpp"
#include "crowdseg/pwdnet.hpp"
#include "crowdseg/rng.hpp"

namespace crowdseg {

struct EpsConfig {
  int batch_size = 64;
  int budget_k = 500;
  double valid_threshold = 0.5;  // joint-score threshold T for a valid mask
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("eps: batch_size must be >= 1");
    if (budget_k < batch_size) throw std::invalid_argument("eps: K must be >= batch_size");
    if (valid_threshold < 0.0 || valid_threshold > 1.0)
      throw std::invalid_argument("eps: T must be in [0,1]");
  }
};

struct EpsStep {
  int sampled = 0;  // prompts drawn into this batch
  int decoded = 0;  // prompts decoded (== sampled)
  int pruned = 0;   // remaining prompts removed by coverage
  int valid = 0;    // masks in this batch with score > T
};

struct EpsTrace {
  std::vector<EpsStep> steps;
  int total(int EpsStep::* field) const {
    int acc = 0;
    for (const auto& s : steps) acc += s.*field;
    return acc;
  }
};

/// One decoded prompt after candidate selection.
struct DecodedPrompt {
  PointPrompt prompt;
  int candidate = 0;  // argmax candidate index
  double score = 0.0; // joint score of that candidate
  BitMask best_mask;  // binarized best candidate at native resolution
};

struct EpsResult {
  PromptSet selected;                  // P_S, in decode order
  std::vector<DecodedPrompt> decoded;  // parallel to selected
  std::vector<int> valid;              // indices into decoded with score > T (M_S)
  EpsTrace trace;
};

// Scores one decoded batch; returns the per-prompt best candidate and its
// joint score (see pwdnet::select_best).
using PromptScorer = std::function<Selection(const DecodeResult&)>;

namespace detail {
inline bool prompt_in_native_mask(const BitMask& m, const PointPrompt& p, int window_w,
                                  int window_h) {
  const int ix = std::min(m.width() - 1, int(p.x * m.width() / window_w));
  const int iy = std::min(m.height() - 1, int(p.y * m.height() / window_h));
  return m.get(ix, iy);
}
}  // namespace detail

/// Iterative prompt sampling: draw a uniform batch from the pool, decode and
/// score it, keep masks above T as valid, then drop every still-unsampled
/// prompt already covered by a valid mask. Stops when the pool is empty or the
/// budget K is reached; the last batch is clipped so |P_S| <= K exactly.
inline EpsResult eps_sample(const FeatureMap& feat_sam, const PromptSet& pool_in,
                            const PromptScorer& scorer, const Backend& backend,
                            const EpsConfig& cfg) {
  cfg.validate();
  EpsResult out;
  PromptSet pool = pool_in;
  Rng rng(cfg.seed);
  int iteration = 0;
  while (!pool.empty() && int(out.selected.size()) < cfg.budget_k) {
    ++iteration;
    const int want = std::min<int>({cfg.batch_size, int(pool.size()),
                                    cfg.budget_k - int(out.selected.size())});
    PromptSet batch;
    batch.reserve(std::size_t(want));
    for (int i = 0; i < want; ++i) {
      const std::size_t pick = rng.uniform_index(pool.size());
      batch.push_back(pool[pick]);
      pool[pick] = pool.back();
      pool.pop_back();
    }
    DecodeResult dec;
    Selection sel;
    try {
      dec = backend.decode_prompts(feat_sam, batch);
      sel = scorer(dec);
    } catch (const std::exception& e) {
      throw std::runtime_error("eps_sample iteration " + std::to_string(iteration) + ": " +
                               e.what());
    }
    EpsStep step;
    step.sampled = want;
    step.decoded = want;
    // Indices (not pointers) into out.decoded: the vector may reallocate while
    // this batch is still being appended.
    std::vector<int> batch_valid;
    for (int i = 0; i < want; ++i) {
      DecodedPrompt dp;
      dp.prompt = batch[std::size_t(i)];
      dp.candidate = sel.candidate[std::size_t(i)];
      dp.score = sel.score[std::size_t(i)];
      dp.best_mask = binarize(dec.mask(i, dp.candidate), 0.0);
      out.selected.push_back(batch[std::size_t(i)]);
      out.decoded.push_back(std::move(dp));
      if (out.decoded.back().score > cfg.valid_threshold) {
        out.valid.push_back(int(out.decoded.size()) - 1);
        batch_valid.push_back(int(out.decoded.size()) - 1);
        ++step.valid;
      }
    }
    if (!batch_valid.empty() && !pool.empty()) {
      std::size_t kept = 0;
      for (std::size_t i = 0; i < pool.size(); ++i) {
        bool covered = false;
        for (int vi : batch_valid) {
          if (detail::prompt_in_native_mask(out.decoded[std::size_t(vi)].best_mask, pool[i],
                                            feat_sam.window_w, feat_sam.window_h)) {
            covered = true;
            break;
          }
        }
        if (!covered) pool[kept++] = pool[i];
      }
      step.pruned = int(pool.size() - kept);
      pool.resize(kept);
    }
    out.trace.steps.push_back(step);
  }
  return out;
}

/// Baseline samplers for the efficiency comparison.
inline PromptSet full_sampler(const PromptSet& pool) { return pool; }

inline PromptSet random_sampler(const PromptSet& pool, int k, std::uint64_t seed) {
  if (k < 0) throw std::invalid_argument("random_sampler: negative K");
  if (k >= int(pool.size())) return pool;
  Rng rng(seed);
  const auto idx = rng.sample_without_replacement(pool.size(), std::size_t(k));
  PromptSet out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(pool[i]);
  return out;
}

}  // namespace crowdseg
