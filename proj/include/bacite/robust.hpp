#pragma once

// Environment partitioning, GroupDRO risk reweighting, and counterfactual
// monotonicity/smoothness regularization over the actionable factors R and Q.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "bacite/agents.hpp"
#include "bacite/predictor.hpp"

namespace bacite {

enum class Environment : int { Low = 0, High = 1 };

inline const char* env_name(Environment e) { return e == Environment::Low ? "low" : "high"; }

struct EnvironmentConfig {
  double tau = 0.8;  // threshold on normalized venue prestige, boundary -> high

  void validate() const {
    if (tau <= 0.0 || tau >= 1.0) throw std::invalid_argument("tau must be in (0,1)");
  }
};

// V arrives on the raw 1..5 scale and is normalized via (V-1)/4.
inline Environment partition_environment(double v_raw, const EnvironmentConfig& cfg) {
  cfg.validate();
  return (v_raw - 1.0) / 4.0 >= cfg.tau ? Environment::High : Environment::Low;
}

inline std::vector<Environment> partition_environments(const std::vector<double>& v_raw,
                                                       const EnvironmentConfig& cfg) {
  std::vector<Environment> out;
  out.reserve(v_raw.size());
  for (double v : v_raw) out.push_back(partition_environment(v, cfg));
  return out;
}

struct GroupDroState {
  double w_low = 0.5, w_high = 0.5;
  double alpha = 0.1;
  double eps = 1e-8;
  double w_min = 0.1, w_max = 0.9;
  // last computed risks, reused when a batch leaves an environment empty
  double prev_risk_low = 0.0, prev_risk_high = 0.0;
  long empty_env_events = 0;
};

struct GroupRisks {
  Tensor low, high;            // scalar tensors; constants when reused
  bool low_empty = false, high_empty = false;
};

// Mean per-environment loss over the batch. An empty environment reuses
// the previous risk value as a constant (no gradient), keeping the
// two-player dynamics defined on every step.
inline GroupRisks group_risks(Tape& tape, const Tensor& per_sample_losses,
                              const std::vector<Environment>& envs, GroupDroState& state) {
  if (per_sample_losses.size() != envs.size()) throw ShapeMismatch("group_risks: label count");
  std::vector<double> mask_low(envs.size(), 0.0), mask_high(envs.size(), 0.0);
  std::size_t n_low = 0, n_high = 0;
  for (std::size_t i = 0; i < envs.size(); ++i) {
    if (envs[i] == Environment::Low) {
      mask_low[i] = 1.0;
      ++n_low;
    } else {
      mask_high[i] = 1.0;
      ++n_high;
    }
  }
  Tensor flat = per_sample_losses.rank() == 1
                    ? per_sample_losses
                    : tape.reshape(per_sample_losses, {per_sample_losses.size()});
  GroupRisks out;
  if (n_low) {
    out.low = tape.scale(tape.sum(tape.mul(flat, tape.constant({envs.size()}, std::move(mask_low)))),
                         1.0 / static_cast<double>(n_low));
    state.prev_risk_low = out.low.scalar();
  } else {
    out.low = tape.constant({1}, {state.prev_risk_low});
    out.low_empty = true;
    ++state.empty_env_events;
  }
  if (n_high) {
    out.high = tape.scale(tape.sum(tape.mul(flat, tape.constant({envs.size()}, std::move(mask_high)))),
                          1.0 / static_cast<double>(n_high));
    state.prev_risk_high = out.high.scalar();
  } else {
    out.high = tape.constant({1}, {state.prev_risk_high});
    out.high_empty = true;
    ++state.empty_env_events;
  }
  return out;
}

// sum_e w_e L_e; the weights are plain multipliers, gradients reach the
// model only through the risks
inline Tensor groupdro_objective(Tape& tape, const GroupDroState& state, const GroupRisks& risks) {
  return tape.add(tape.scale(risks.low, state.w_low), tape.scale(risks.high, state.w_high));
}

// Exponentiated update on the std-normalized risk gap, then clip to
// [w_min, w_max] and renormalize.
inline void update_group_weights(GroupDroState& state, double risk_low, double risk_high) {
  const double mean = 0.5 * (risk_low + risk_high);
  const double sd = std::sqrt(0.5 * ((risk_low - mean) * (risk_low - mean) +
                                     (risk_high - mean) * (risk_high - mean)));
  const double z_low = (risk_low - mean) / (sd + state.eps);
  const double z_high = (risk_high - mean) / (sd + state.eps);
  double w_low = state.w_low * std::exp(state.alpha * z_low);
  double w_high = state.w_high * std::exp(state.alpha * z_high);
  const double norm = w_low + w_high;
  w_low /= norm;
  w_high /= norm;
  w_low = std::clamp(w_low, state.w_min, state.w_max);
  w_high = std::clamp(w_high, state.w_min, state.w_max);
  const double renorm = w_low + w_high;
  state.w_low = w_low / renorm;
  state.w_high = w_high / renorm;
}

// ---- counterfactual regularization ------------------------------------------

struct NonActionableFactor : std::runtime_error {
  explicit NonActionableFactor(const std::string& f)
      : std::runtime_error("factor not actionable: " + f) {}
};

struct FactorSpec {
  char name;             // 'R' or 'Q'
  std::size_t slot;      // position in the canonical 9-slot layout
  double direction;      // t_v
  double raw_target;     // intervention value on the raw scale
};

struct CounterfactualConfig {
  double lambda_mono = 1.0;
  double lambda_smooth = 0.1;

  static const std::vector<FactorSpec>& actionable() {
    static const std::vector<FactorSpec> kFactors{
        {'R', kSlotR, +1.0, 1.0},
        {'Q', kSlotQ, +1.0, 5.0},
    };
    return kFactors;
  }

  static const FactorSpec& factor(char name) {
    for (const auto& f : actionable())
      if (f.name == name) return f;
    throw NonActionableFactor(std::string(1, name));
  }

  // 1{v(p) < tau_v}: R below 1 (i.e. R = 0), Q below the training median
  static bool in_low_region(const FactorSpec& f, const PaperFeatureVector& feats,
                            const FeatureStats& stats) {
    if (f.name == 'R') return feats.r < 1.0;
    return feats.q < stats.median_q;
  }
};

// Per-factor counterfactual effect on a batch: set the factor to its raw
// intervention target inside both feature views, recompute the exposure
// estimate through Stage A, rerun Stage B, and difference the outputs in
// log1p space. z embeddings stay fixed. Returns [n, 1].
struct CounterfactualBatch {
  Tensor delta;                 // u(intervened) - u(base)
  std::vector<double> low_mask; // per row, 1 when the factor sits below tau_v
};

inline CounterfactualBatch counterfactual_delta(
    Tape& tape, const BoundParams& params, char factor_name, const Tensor& z_plus,
    const Tensor& z_minus, const std::vector<PaperFeatureVector>& feats, const FeatureViews& views,
    const Tensor& u_base) {
  const FactorSpec& factor = CounterfactualConfig::factor(factor_name);
  const std::size_t n = feats.size();
  if (z_plus.dim(0) != n || z_minus.dim(0) != n || u_base.dim(0) != n)
    throw ShapeMismatch("counterfactual_delta: batch sizes differ");

  std::vector<double> fplus_up, fminus_up;
  fplus_up.reserve(n * kNumFeatureSlots);
  fminus_up.reserve(n * (kNumFeatureSlots - 1));
  CounterfactualBatch out;
  out.low_mask.reserve(n);
  for (const auto& f : feats) {
    PaperFeatureVector up = f;
    if (factor.name == 'R') up.r = factor.raw_target;
    else up.q = factor.raw_target;
    const auto plus = views.f_plus(up);
    fplus_up.insert(fplus_up.end(), plus.begin(), plus.end());
    const auto minus = views.f_minus(up);
    fminus_up.insert(fminus_up.end(), minus.begin(), minus.end());
    out.low_mask.push_back(CounterfactualConfig::in_low_region(factor, f, views.stats) ? 1.0 : 0.0);
  }

  Tensor fplus_t = tape.constant({n, kNumFeatureSlots}, std::move(fplus_up));
  Tensor fminus_t = tape.constant({n, kNumFeatureSlots - 1}, std::move(fminus_up));
  Tensor e_up = stage_a_forward(tape, params, z_plus, fplus_t);
  Tensor u_up = stage_b_forward(tape, params, z_minus, fminus_t, e_up);
  out.delta = tape.sub(u_up, u_base);
  return out;
}

// mean over the batch of max(0, -t_v * delta) restricted to the low region
inline Tensor mono_loss(Tape& tape, const Tensor& delta, const std::vector<double>& low_mask,
                        double direction) {
  if (delta.size() != low_mask.size()) throw ShapeMismatch("mono_loss: mask length");
  Tensor flat = delta.rank() == 1 ? delta : tape.reshape(delta, {delta.size()});
  Tensor hinge = tape.hinge(tape.scale(flat, -direction));
  return tape.mean(tape.mul(hinge, tape.constant({low_mask.size()}, low_mask)));
}

// mean of squared effects
inline Tensor smooth_loss(Tape& tape, const Tensor& delta) {
  return tape.mean(tape.square(delta));
}

// lambda_mono * sum_v mono + lambda_smooth * sum_v smooth
inline Tensor total_reg(Tape& tape, const std::vector<Tensor>& mono_losses,
                        const std::vector<Tensor>& smooth_losses, double lambda_mono,
                        double lambda_smooth) {
  if (lambda_mono < 0 || lambda_smooth < 0) throw std::invalid_argument("negative lambda");
  Tensor acc = tape.scalar(0.0);
  for (const Tensor& m : mono_losses) acc = tape.add(acc, tape.scale(m, lambda_mono));
  for (const Tensor& s : smooth_losses) acc = tape.add(acc, tape.scale(s, lambda_smooth));
  return acc;
}

struct AuxTerms {
  std::optional<Tensor> adv;    // adversarial venue-invariance CE
  std::optional<Tensor> calib;  // exposure calibration MSE
};

// lambda_main * L_groupdro + lambda_reg * L_reg (+ aux hooks when enabled)
inline Tensor total_loss(Tape& tape, const Tensor& groupdro, const Tensor& reg, const AuxTerms& aux,
                         double lambda_main, double lambda_reg, double lambda_adv,
                         double lambda_corr) {
  for (double l : {lambda_main, lambda_reg, lambda_adv, lambda_corr})
    if (l < 0) throw std::invalid_argument("negative lambda");
  Tensor acc = tape.add(tape.scale(groupdro, lambda_main), tape.scale(reg, lambda_reg));
  if (aux.adv && lambda_adv > 0) acc = tape.add(acc, tape.scale(*aux.adv, lambda_adv));
  if (aux.calib && lambda_corr > 0) acc = tape.add(acc, tape.scale(*aux.calib, lambda_corr));
  return acc;
}

// ---- aux hooks (defaults off) -------------------------------------------------

// Exposure calibration: mean (E_hat - E*)^2 against ground-truth or
// configured early-signal exposure.
inline Tensor exposure_calibration_loss(Tape& tape, const Tensor& e_hat,
                                        const std::vector<double>& e_star) {
  if (e_hat.dim(0) != e_star.size()) throw ShapeMismatch("calibration: batch sizes differ");
  Tensor target = tape.constant({e_star.size(), 1}, e_star);
  return tape.mean(tape.square(tape.sub(e_hat, target)));
}

inline void init_adversary_params(ParamStore& store, std::size_t in_width, std::size_t hidden,
                                  std::uint64_t seed) {
  Rng rng(seed);
  detail::put_linear(store, rng, "adv/fc1", in_width, hidden);
  detail::put_linear(store, rng, "adv/fc2", hidden, 2);
}

// Venue-tier cross-entropy of a 2-layer discriminator on the Stage-B input,
// behind a gradient-reversal: the discriminator learns the tier while the
// upstream model is pushed toward venue invariance.
inline Tensor adversarial_venue_loss(Tape& tape, const BoundParams& params,
                                     const Tensor& stage_b_input,
                                     const std::vector<Environment>& envs) {
  if (stage_b_input.dim(0) != envs.size()) throw ShapeMismatch("adversary: batch sizes differ");
  std::vector<std::size_t> labels;
  labels.reserve(envs.size());
  for (Environment e : envs) labels.push_back(static_cast<std::size_t>(e));
  Tensor reversed = tape.grad_reverse(stage_b_input);
  Tensor hidden = tape.gelu(
      tape.add(tape.matmul(reversed, params.at("adv/fc1/w")), params.at("adv/fc1/b")));
  Tensor logits = tape.add(tape.matmul(hidden, params.at("adv/fc2/w")), params.at("adv/fc2/b"));
  return tape.mean(tape.softmax_cross_entropy(logits, labels));
}

}  // namespace bacite
