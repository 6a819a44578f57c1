#pragma once

// Shared end-to-end fixture: synthetic corpus -> agents -> model data.

#include "bacite/syngen.hpp"
#include "bacite/train.hpp"

namespace bacite_tests {

struct Pipeline {
  bacite::SyntheticCorpus corpus;
  std::vector<bacite::PaperFeatureVector> feats;
  bacite::ModelData data;
};

inline Pipeline build_pipeline(const bacite::GenConfig& gen_cfg,
                               const bacite::SplitConfig& split = bacite::SplitConfig{},
                               double tau = 0.8, bool with_truth = false) {
  using namespace bacite;
  Pipeline p;
  p.corpus = generate(gen_cfg);

  AgentContext ctx;
  ctx.venues = &p.corpus.venues;
  ctx.institutions = &p.corpus.institutions;
  ctx.keyword_counts = &p.corpus.keyword_counts;
  set_reputation_maxima(ctx, p.corpus.records, split.train_lo, split.train_hi);
  for (const auto& r : p.corpus.records) p.feats.push_back(extract_features(r, ctx));

  std::map<std::string, SyntheticTruth> truth;
  if (with_truth)
    for (const auto& t : p.corpus.truth) truth[t.id] = t;
  p.data = build_model_data(p.corpus.records, p.feats, split, tau, with_truth ? &truth : nullptr);
  return p;
}

// compact training config for fast test runs
inline bacite::TrainConfig small_train_config(std::uint64_t seed, int epochs = 4) {
  bacite::TrainConfig cfg;
  cfg.encoder.hidden = 16;
  cfg.encoder.heads = 4;
  cfg.head_hidden = 16;
  cfg.max_epochs = epochs;
  cfg.warmup_epochs = std::min(2, epochs - 1);
  cfg.batch = 64;
  cfg.patience = std::max(2, epochs);
  cfg.lr = 3e-3;
  cfg.seed = seed;
  return cfg;
}

}  // namespace bacite_tests
