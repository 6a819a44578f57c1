#pragma once

// End-to-end optimization: AdamW with warmup+cosine schedule, per-step
// GroupDRO weight updates, counterfactual regularization, optional aux
// losses, early stopping on validation prediction loss, and deterministic
// history/checkpoint artifacts.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bacite/agents.hpp"
#include "bacite/encoder.hpp"
#include "bacite/graph.hpp"
#include "bacite/metrics.hpp"
#include "bacite/predictor.hpp"
#include "bacite/records.hpp"
#include "bacite/robust.hpp"
#include "bacite/syngen.hpp"

namespace bacite {

struct TrainConfig {
  double lambda_main = 1.0;
  double lambda_reg = 0.05;
  double lambda_mono = 1.0;    // inside L_reg
  double lambda_smooth = 0.1;  // inside L_reg
  double lambda_adv = 0.0;
  double lambda_corr = 0.0;

  double lr = 1e-3;
  double weight_decay = 1e-4;
  double final_lr = 1e-5;
  int warmup_epochs = 10;
  int max_epochs = 200;
  int batch = 128;
  int patience = 20;

  double dro_alpha = 0.1;
  double dro_w_min = 0.1, dro_w_max = 0.9;
  double tau = 0.8;

  EncoderConfig encoder;
  std::size_t head_hidden = 64;

  // ablation switches: mean-risk ERM and a single venue-exposed head
  bool use_groupdro = true;
  bool two_stage = true;

  std::uint64_t seed = 1;

  void validate() const {
    for (double l : {lambda_main, lambda_reg, lambda_mono, lambda_smooth, lambda_adv, lambda_corr})
      if (l < 0) throw std::invalid_argument("TrainConfig: negative lambda");
    if (lr <= 0 || final_lr <= 0) throw std::invalid_argument("TrainConfig: lr endpoints must be positive");
    if (batch < 2) throw std::invalid_argument("TrainConfig: batch must be >= 2");
    if (max_epochs < 1 || warmup_epochs < 0 || warmup_epochs >= max_epochs)
      throw std::invalid_argument("TrainConfig: bad epoch counts");
    if (patience < 1) throw std::invalid_argument("TrainConfig: patience must be >= 1");
    encoder.validate();
  }
};

// Linear ramp from lr/10 to lr across the warmup, then cosine decay from
// lr down to final_lr at the last epoch.
inline double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.max_epochs) throw std::out_of_range("lr_at: epoch out of range");
  const double start = cfg.lr / 10.0;
  if (epoch < cfg.warmup_epochs)
    return start + (cfg.lr - start) * static_cast<double>(epoch) / cfg.warmup_epochs;
  const int span = cfg.max_epochs - 1 - cfg.warmup_epochs;
  if (span <= 0) return cfg.lr;
  const double t = static_cast<double>(epoch - cfg.warmup_epochs) / span;
  return cfg.final_lr + 0.5 * (cfg.lr - cfg.final_lr) * (1.0 + std::cos(t * 3.14159265358979323846));
}

// ---- optimizer ----------------------------------------------------------------

class AdamW {
 public:
  AdamW(double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

  // decoupled decay; parameters without a recorded gradient are untouched
  void step(ParamStore& params, const BoundParams& bound, const Gradients& grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, t_);
    const double bc2 = 1.0 - std::pow(b2_, t_);
    for (auto& [name, entry] : params) {
      if (name.rfind("stats/", 0) == 0) continue;
      const Tensor& leaf = bound.at(name);
      if (!grads.has(leaf)) continue;
      const std::vector<double>& g = grads.at(leaf);
      auto& [m, v] = moments_[name];
      if (m.empty()) {
        m.assign(g.size(), 0.0);
        v.assign(g.size(), 0.0);
      }
      for (std::size_t i = 0; i < g.size(); ++i) {
        m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
        v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        entry.values[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + wd_ * entry.values[i]);
      }
    }
  }

 private:
  double wd_, b1_, b2_, eps_;
  long t_ = 0;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

// ---- packaged dataset -----------------------------------------------------------

struct NonFiniteLoss : std::runtime_error {
  explicit NonFiniteLoss(const std::string& what) : std::runtime_error(what) {}
};

struct ModelData {
  HeteroGraph graph_with_venue;   // cites-restricted, feature-scaled
  HeteroGraph graph_no_venue;     // venue-excluded view of the same graph
  std::vector<PaperFeatureVector> feats;  // raw, index-aligned with papers
  FeatureViews views;
  std::vector<double> labels;      // -1 marks missing labels
  std::vector<Environment> envs;
  std::vector<std::size_t> train_idx, val_idx, test_idx;
  std::vector<double> e_star;      // ground-truth exposure, NaN when absent
  bool has_e_star = false;
};

// Assembles everything training needs. Citation edges whose citing paper
// falls outside the train/val years are hidden from the encoder.
inline ModelData build_model_data(const std::vector<PaperRecord>& records,
                                  const std::vector<PaperFeatureVector>& feats,
                                  const SplitConfig& split_cfg, double tau,
                                  const std::map<std::string, SyntheticTruth>* truth = nullptr) {
  CorpusSplit split = temporal_split(records, split_cfg);
  ModelData data;
  data.feats = feats;

  std::vector<PaperFeatureVector> train_feats;
  std::map<std::string, std::size_t> index_of;
  for (std::size_t i = 0; i < records.size(); ++i) index_of[records[i].id] = i;
  for (const auto& id : split.train_ids) train_feats.push_back(feats[index_of[id]]);
  if (train_feats.empty()) throw std::invalid_argument("build_model_data: empty training split");
  data.views = FeatureViews{FeatureStats::from_training(train_feats)};

  HeteroGraph raw = build_graph(records, feats);
  HeteroGraph restricted = restrict_cites_by_year(raw, split_cfg.val_year);
  data.graph_with_venue = scale_features(restricted, data.views.stats);
  data.graph_no_venue = venue_excluded_view(data.graph_with_venue);

  data.labels.assign(records.size(), -1.0);
  data.e_star.assign(records.size(), std::numeric_limits<double>::quiet_NaN());
  EnvironmentConfig env_cfg{tau};
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].label_citations)
      data.labels[i] = static_cast<double>(*records[i].label_citations);
    data.envs.push_back(partition_environment(feats[i].v, env_cfg));
    if (truth) {
      auto it = truth->find(records[i].id);
      if (it != truth->end()) {
        data.e_star[i] = it->second.e_true;
        data.has_e_star = true;
      }
    }
  }

  auto to_idx = [&](const std::vector<std::string>& ids, std::vector<std::size_t>& out,
                    bool need_label) {
    for (const auto& id : ids) {
      const std::size_t i = index_of.at(id);
      if (!need_label || data.labels[i] >= 0) out.push_back(i);
    }
  };
  to_idx(split.train_ids, data.train_idx, true);
  to_idx(split.val_ids, data.val_idx, true);
  to_idx(split.test_ids, data.test_idx, false);
  return data;
}

// ---- model assembly ------------------------------------------------------------

inline void init_model_params(ParamStore& store, const TrainConfig& cfg) {
  const std::size_t hidden = static_cast<std::size_t>(cfg.encoder.hidden);
  init_encoder_params(store, cfg.encoder, Rng(cfg.seed).fork("encoder").seed());
  if (cfg.two_stage) {
    init_head_params(store, "stage_a", {hidden + kNumFeatureSlots, cfg.head_hidden},
                     Rng(cfg.seed).fork("stage_a").seed());
    init_head_params(store, "stage_b", {hidden + (kNumFeatureSlots - 1) + 1, cfg.head_hidden},
                     Rng(cfg.seed).fork("stage_b").seed());
  } else {
    // ablation: one head, venue-inclusive inputs
    init_head_params(store, "stage_s", {hidden + kNumFeatureSlots, cfg.head_hidden},
                     Rng(cfg.seed).fork("stage_s").seed());
  }
  if (cfg.lambda_adv > 0)
    init_adversary_params(store, hidden + (kNumFeatureSlots - 1) + 1, cfg.head_hidden,
                          Rng(cfg.seed).fork("adv").seed());
}

inline void store_feature_stats(ParamStore& store, const FeatureViews& views, const TrainConfig& cfg) {
  store.put("stats/feat_min", {kNumFeatureSlots},
            std::vector<double>(views.stats.min.begin(), views.stats.min.end()));
  store.put("stats/feat_max", {kNumFeatureSlots},
            std::vector<double>(views.stats.max.begin(), views.stats.max.end()));
  store.put("stats/median_q", {1}, {views.stats.median_q});
  store.put("stats/tau", {1}, {cfg.tau});
  store.put("stats/two_stage", {1}, {cfg.two_stage ? 1.0 : 0.0});
  store.put("stats/hidden", {1}, {static_cast<double>(cfg.encoder.hidden)});
  store.put("stats/heads", {1}, {static_cast<double>(cfg.encoder.heads)});
  store.put("stats/layers", {1}, {static_cast<double>(cfg.encoder.layers)});
  store.put("stats/head_hidden", {1}, {static_cast<double>(cfg.head_hidden)});
}

struct UntrainedCheckpoint : std::runtime_error {
  explicit UntrainedCheckpoint(const std::string& what)
      : std::runtime_error("untrained or malformed checkpoint: " + what) {}
};

// Reconstructs the architecture facts a loaded checkpoint needs for
// inference; training hyperparameters stay at their defaults.
inline TrainConfig config_from_store(const ParamStore& store) {
  TrainConfig cfg;
  try {
    cfg.encoder.hidden = static_cast<int>(store.at("stats/hidden").values[0]);
    cfg.encoder.heads = static_cast<int>(store.at("stats/heads").values[0]);
    cfg.encoder.layers = static_cast<int>(store.at("stats/layers").values[0]);
    cfg.head_hidden = static_cast<std::size_t>(store.at("stats/head_hidden").values[0]);
    cfg.two_stage = store.at("stats/two_stage").values[0] != 0.0;
    cfg.tau = store.at("stats/tau").values[0];
    store.at("encoder/in/paper/w");
    store.at(cfg.two_stage ? "stage_b/fc2/w" : "stage_s/fc2/w");
  } catch (const std::out_of_range& e) {
    throw UntrainedCheckpoint(e.what());
  }
  return cfg;
}

inline FeatureViews views_from_store(const ParamStore& store) {
  FeatureViews views;
  const auto& mn = store.at("stats/feat_min").values;
  const auto& mx = store.at("stats/feat_max").values;
  for (std::size_t i = 0; i < kNumFeatureSlots; ++i) {
    views.stats.min[i] = mn[i];
    views.stats.max[i] = mx[i];
  }
  views.stats.median_q = store.at("stats/median_q").values[0];
  return views;
}

namespace detail {

inline Tensor batch_matrix(Tape& tape, const ModelData& data,
                           const std::vector<std::size_t>& idx, bool venue_inclusive) {
  const std::size_t width = venue_inclusive ? kNumFeatureSlots : kNumFeatureSlots - 1;
  std::vector<double> rows;
  rows.reserve(idx.size() * width);
  for (std::size_t i : idx) {
    if (venue_inclusive) {
      const auto v = data.views.f_plus(data.feats[i]);
      rows.insert(rows.end(), v.begin(), v.end());
    } else {
      const auto v = data.views.f_minus(data.feats[i]);
      rows.insert(rows.end(), v.begin(), v.end());
    }
  }
  return tape.constant({idx.size(), width}, std::move(rows));
}

}  // namespace detail

// per-step loss decomposition; the arithmetic identity
// total = lm*groupdro + lr*reg + la*adv + lc*calib is testable to 1e-10
struct LossBundle {
  long step = 0;
  double risk_low = 0, risk_high = 0;
  double groupdro = 0;
  double mono_r = 0, mono_q = 0;
  double smooth_r = 0, smooth_q = 0;
  double reg = 0;
  double adv = 0, calib = 0;
  double total = 0;
  double lr = 0;
  double w_low = 0.5, w_high = 0.5;
  bool low_empty = false, high_empty = false;
};

struct ModelState {
  ParamStore params;
  AdamW opt{1e-4};
  GroupDroState dro;
  long global_step = 0;
};

// One optimization step over a batch of paper indices.
inline LossBundle train_step(ModelState& model, const ModelData& data,
                             const std::vector<std::size_t>& batch, const TrainConfig& cfg,
                             int epoch, Rng& rng) {
  Tape tape;
  BoundParams bound(tape, model.params, true);
  LossBundle bundle;
  bundle.step = model.global_step;
  bundle.lr = lr_at(epoch, cfg);

  PaperEmbeddings z_plus = encode(tape, data.graph_with_venue, bound, cfg.encoder,
                                  EncodeMode::WithVenue, true, rng);
  Tensor zb_plus = tape.rows_select(z_plus.z, batch);
  Tensor f_plus = detail::batch_matrix(tape, data, batch, true);

  std::vector<double> y;
  y.reserve(batch.size());
  for (std::size_t i : batch) y.push_back(data.labels[i]);

  Tensor u, e_hat, stage_b_input;
  Tensor zb_minus;
  if (cfg.two_stage) {
    PaperEmbeddings z_minus = encode(tape, data.graph_no_venue, bound, cfg.encoder,
                                     EncodeMode::WithoutVenue, true, rng);
    zb_minus = tape.rows_select(z_minus.z, batch);
    Tensor f_minus = detail::batch_matrix(tape, data, batch, false);
    e_hat = stage_a_forward(tape, bound, zb_plus, f_plus);
    u = stage_b_forward(tape, bound, zb_minus, f_minus, e_hat);
    stage_b_input = tape.concat({zb_minus, f_minus, e_hat}, 1);
  } else {
    u = head_forward(tape, bound, "stage_s", tape.concat({zb_plus, f_plus}, 1));
  }

  Tensor losses = pred_loss(tape, y, u);

  std::vector<Environment> envs;
  envs.reserve(batch.size());
  for (std::size_t i : batch) envs.push_back(data.envs[i]);
  GroupRisks risks = group_risks(tape, losses, envs, model.dro);
  bundle.risk_low = risks.low.scalar();
  bundle.risk_high = risks.high.scalar();
  bundle.low_empty = risks.low_empty;
  bundle.high_empty = risks.high_empty;

  Tensor objective;
  if (cfg.use_groupdro) {
    // adversarial weight update first, then the weighted objective
    update_group_weights(model.dro, bundle.risk_low, bundle.risk_high);
    objective = groupdro_objective(tape, model.dro, risks);
  } else {
    objective = tape.mean(losses);
  }
  bundle.w_low = model.dro.w_low;
  bundle.w_high = model.dro.w_high;
  bundle.groupdro = objective.scalar();

  Tensor reg = tape.scalar(0.0);
  if (cfg.two_stage && cfg.lambda_reg > 0) {
    std::vector<PaperFeatureVector> batch_feats;
    batch_feats.reserve(batch.size());
    for (std::size_t i : batch) batch_feats.push_back(data.feats[i]);
    std::vector<Tensor> monos, smooths;
    for (char factor : {'R', 'Q'}) {
      CounterfactualBatch cf = counterfactual_delta(tape, bound, factor, zb_plus, zb_minus,
                                                    batch_feats, data.views, u);
      const FactorSpec& spec = CounterfactualConfig::factor(factor);
      Tensor mono = mono_loss(tape, cf.delta, cf.low_mask, spec.direction);
      Tensor smooth = smooth_loss(tape, cf.delta);
      (factor == 'R' ? bundle.mono_r : bundle.mono_q) = mono.scalar();
      (factor == 'R' ? bundle.smooth_r : bundle.smooth_q) = smooth.scalar();
      monos.push_back(mono);
      smooths.push_back(smooth);
    }
    reg = total_reg(tape, monos, smooths, cfg.lambda_mono, cfg.lambda_smooth);
  }
  bundle.reg = reg.scalar();

  AuxTerms aux;
  if (cfg.two_stage && cfg.lambda_adv > 0) {
    aux.adv = adversarial_venue_loss(tape, bound, stage_b_input, envs);
    bundle.adv = aux.adv->scalar();
  }
  if (cfg.two_stage && cfg.lambda_corr > 0 && data.has_e_star) {
    std::vector<double> e_star;
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < batch.size(); ++r)
      if (std::isfinite(data.e_star[batch[r]])) {
        rows.push_back(r);
        e_star.push_back(data.e_star[batch[r]]);
      }
    if (!rows.empty()) {
      aux.calib = exposure_calibration_loss(tape, tape.rows_select(e_hat, rows), e_star);
      bundle.calib = aux.calib->scalar();
    }
  }

  Tensor total = total_loss(tape, objective, reg, aux, cfg.lambda_main, cfg.lambda_reg,
                            cfg.lambda_adv, cfg.lambda_corr);
  bundle.total = total.scalar();

  Gradients grads = tape.backward(total);
  model.opt.step(model.params, bound, grads, bundle.lr);
  ++model.global_step;
  return bundle;
}

// deterministic eval-mode forward over arbitrary paper indices
struct Predictions {
  std::vector<double> u;
  std::vector<double> e_hat;
};

inline Predictions predict(const ParamStore& params, const ModelData& data,
                           const std::vector<std::size_t>& idx, const TrainConfig& cfg) {
  Tape tape;
  BoundParams bound(tape, params, false);
  Rng rng(0);  // unused in eval mode
  const bool two_stage = !params.contains("stage_s");
  PaperEmbeddings z_plus = encode(tape, data.graph_with_venue, bound, cfg.encoder,
                                  EncodeMode::WithVenue, false, rng);
  Tensor zb_plus = tape.rows_select(z_plus.z, idx);
  Tensor f_plus = detail::batch_matrix(tape, data, idx, true);
  Predictions out;
  Tensor u;
  if (two_stage) {
    PaperEmbeddings z_minus = encode(tape, data.graph_no_venue, bound, cfg.encoder,
                                     EncodeMode::WithoutVenue, false, rng);
    Tensor zb_minus = tape.rows_select(z_minus.z, idx);
    Tensor f_minus = detail::batch_matrix(tape, data, idx, false);
    Tensor e_hat = stage_a_forward(tape, bound, zb_plus, f_plus);
    u = stage_b_forward(tape, bound, zb_minus, f_minus, e_hat);
    out.e_hat = e_hat.values();
  } else {
    u = head_forward(tape, bound, "stage_s", tape.concat({zb_plus, f_plus}, 1));
  }
  out.u = u.values();
  return out;
}

// ---- epoch batching --------------------------------------------------------------

// Without-replacement batches, stratified so both environments appear in a
// batch whenever the epoch's remaining pool allows it.
inline std::vector<std::vector<std::size_t>> stratified_batches(const ModelData& data,
                                                                const std::vector<std::size_t>& pool,
                                                                int batch_size, Rng& rng) {
  std::vector<std::size_t> low, high;
  for (std::size_t i : pool)
    (data.envs[i] == Environment::Low ? low : high).push_back(i);
  rng.shuffle(low);
  rng.shuffle(high);

  // largest-remainder interleave of the two streams
  std::vector<std::size_t> order;
  order.reserve(pool.size());
  const double n = static_cast<double>(pool.size());
  double credit_low = 0, credit_high = 0;
  std::size_t il = 0, ih = 0;
  for (std::size_t k = 0; k < pool.size(); ++k) {
    credit_low += static_cast<double>(low.size()) / n;
    credit_high += static_cast<double>(high.size()) / n;
    const bool take_low = ih >= high.size() ||
                          (il < low.size() && credit_low >= credit_high);
    if (take_low) {
      order.push_back(low[il++]);
      credit_low -= 1.0;
    } else {
      order.push_back(high[ih++]);
      credit_high -= 1.0;
    }
  }

  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    if (end - start < 2 && !batches.empty()) {
      // fold a trailing singleton into the previous batch
      batches.back().insert(batches.back().end(), order.begin() + start, order.begin() + end);
    } else {
      batches.emplace_back(order.begin() + start, order.begin() + end);
    }
  }
  return batches;
}

// ---- fit -------------------------------------------------------------------------

// Stops after `patience` epochs without a new best validation loss.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {}

  // feeds one epoch's validation loss; true means stop now
  bool observe(double val_loss) {
    if (val_loss < best_) {
      best_ = val_loss;
      since_best_ = 0;
      return false;
    }
    return ++since_best_ >= patience_;
  }

  double best() const { return best_; }
  int epochs_since_best() const { return since_best_; }

 private:
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int since_best_ = 0;
};

struct EpochRow {
  std::string epoch;  // number, or "best" for the final summary row
  double train_total = 0, train_groupdro = 0, train_reg = 0, train_adv = 0, train_calib = 0;
  double val_pred_loss = 0;
  EvalReport val_report;
  double lr = 0, w_low = 0.5, w_high = 0.5;
};

struct FitResult {
  ParamStore best_params;
  std::vector<EpochRow> history;
  std::vector<LossBundle> step_ledger;
  int best_epoch = -1;
  double best_val_loss = std::numeric_limits<double>::infinity();
};

inline EvalReport evaluate_split(const ParamStore& params, const ModelData& data,
                                 const std::vector<std::size_t>& idx, const TrainConfig& cfg) {
  const Predictions preds = predict(params, data, idx, cfg);
  std::vector<double> y;
  std::vector<std::string> env_labels;
  for (std::size_t i : idx) {
    y.push_back(data.labels[i]);
    env_labels.push_back(env_name(data.envs[i]));
  }
  return group_report(y, preds.u, env_labels);
}

inline FitResult fit(const ModelData& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.train_idx.empty() || data.val_idx.empty())
    throw std::invalid_argument("fit: train and val splits must be nonempty");

  ModelState model;
  model.opt = AdamW(cfg.weight_decay);
  model.dro.alpha = cfg.dro_alpha;
  model.dro.w_min = cfg.dro_w_min;
  model.dro.w_max = cfg.dro_w_max;
  init_model_params(model.params, cfg);
  store_feature_stats(model.params, data.views, cfg);

  Rng root(cfg.seed);
  FitResult result;
  EarlyStopper stopper(cfg.patience);

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    Rng epoch_rng = root.fork("epoch" + std::to_string(epoch));
    Rng dropout_rng = epoch_rng.fork("dropout");
    auto batches = stratified_batches(data, data.train_idx, cfg.batch, epoch_rng);

    EpochRow row;
    row.epoch = std::to_string(epoch);
    row.lr = lr_at(epoch, cfg);
    double acc_total = 0, acc_dro = 0, acc_reg = 0, acc_adv = 0, acc_calib = 0;
    for (const auto& batch : batches) {
      LossBundle bundle;
      try {
        bundle = train_step(model, data, batch, cfg, epoch, dropout_rng);
      } catch (const NonFiniteValue& e) {
        std::ostringstream os;
        os << "non-finite loss at epoch " << epoch << " step " << model.global_step << " (lr "
           << row.lr << ", w_low " << model.dro.w_low << "): " << e.what();
        throw NonFiniteLoss(os.str());
      }
      result.step_ledger.push_back(bundle);
      acc_total += bundle.total;
      acc_dro += bundle.groupdro;
      acc_reg += bundle.reg;
      acc_adv += bundle.adv;
      acc_calib += bundle.calib;
    }
    const double nb = static_cast<double>(batches.size());
    row.train_total = acc_total / nb;
    row.train_groupdro = acc_dro / nb;
    row.train_reg = acc_reg / nb;
    row.train_adv = acc_adv / nb;
    row.train_calib = acc_calib / nb;
    row.w_low = model.dro.w_low;
    row.w_high = model.dro.w_high;

    // validation: unweighted mean prediction loss plus the metric report
    const Predictions val_preds = predict(model.params, data, data.val_idx, cfg);
    double val_loss = 0;
    for (std::size_t r = 0; r < data.val_idx.size(); ++r)
      val_loss += pred_loss_value(data.labels[data.val_idx[r]], val_preds.u[r]);
    val_loss /= static_cast<double>(data.val_idx.size());
    row.val_pred_loss = val_loss;
    row.val_report = evaluate_split(model.params, data, data.val_idx, cfg);
    result.history.push_back(row);

    const bool stop = stopper.observe(val_loss);
    if (stopper.epochs_since_best() == 0) {
      result.best_val_loss = val_loss;
      result.best_epoch = epoch;
      result.best_params = model.params;
    }
    if (stop) break;
  }

  // summary row for the restored best checkpoint; `eval` on the same split
  // must reproduce these numbers exactly
  EpochRow best_row;
  best_row.epoch = "best";
  best_row.lr = lr_at(result.best_epoch, cfg);
  const Predictions best_preds = predict(result.best_params, data, data.val_idx, cfg);
  double best_loss = 0;
  for (std::size_t r = 0; r < data.val_idx.size(); ++r)
    best_loss += pred_loss_value(data.labels[data.val_idx[r]], best_preds.u[r]);
  best_row.val_pred_loss = best_loss / static_cast<double>(data.val_idx.size());
  best_row.val_report = evaluate_split(result.best_params, data, data.val_idx, cfg);
  best_row.w_low = model.dro.w_low;
  best_row.w_high = model.dro.w_high;
  result.history.push_back(best_row);
  return result;
}

// ---- artifact writers ---------------------------------------------------------

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline void write_history(const FitResult& result, const std::string& path) {
  std::ofstream f(path);
  f << "epoch\ttrain_total\ttrain_groupdro\ttrain_reg\ttrain_adv\ttrain_calib\t"
       "val_pred_loss\tval_male\tval_rmsle\tval_ndcg10\tval_ndcg20\tlr\tw_low\tw_high\n";
  for (const auto& r : result.history) {
    f << r.epoch << '\t' << detail::fmt(r.train_total) << '\t' << detail::fmt(r.train_groupdro)
      << '\t' << detail::fmt(r.train_reg) << '\t' << detail::fmt(r.train_adv) << '\t'
      << detail::fmt(r.train_calib) << '\t' << detail::fmt(r.val_pred_loss) << '\t'
      << detail::fmt(r.val_report.male) << '\t' << detail::fmt(r.val_report.rmsle) << '\t'
      << detail::fmt(r.val_report.ndcg.at(10)) << '\t' << detail::fmt(r.val_report.ndcg.at(20))
      << '\t' << detail::fmt(r.lr) << '\t' << detail::fmt(r.w_low) << '\t' << detail::fmt(r.w_high)
      << '\n';
  }
}

inline void write_step_ledger(const FitResult& result, const std::string& path) {
  std::ofstream f(path);
  f << "step\tL_low\tL_high\tw_low\tw_high\tL_mono\tL_smooth\tL_total\n";
  for (const auto& b : result.step_ledger) {
    f << b.step << '\t' << detail::fmt(b.risk_low) << '\t' << detail::fmt(b.risk_high) << '\t'
      << detail::fmt(b.w_low) << '\t' << detail::fmt(b.w_high) << '\t'
      << detail::fmt(b.mono_r + b.mono_q) << '\t' << detail::fmt(b.smooth_r + b.smooth_q) << '\t'
      << detail::fmt(b.total) << '\n';
  }
}

}  // namespace bacite
