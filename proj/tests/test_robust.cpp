#include <cmath>

#include "doctest.h"

#include "bacite/robust.hpp"

using namespace bacite;

namespace {

// independent closed-form evaluation of the exponentiated update with
// clipping, written against long doubles
std::pair<double, double> dro_update_oracle(double w_low, double w_high, double l_low,
                                            double l_high, double alpha, double eps, double w_min,
                                            double w_max) {
  const long double mean = 0.5L * (static_cast<long double>(l_low) + l_high);
  const long double sd = sqrtl(0.5L * ((l_low - mean) * (l_low - mean) +
                                       (l_high - mean) * (l_high - mean)));
  const long double zl = (l_low - mean) / (sd + static_cast<long double>(eps));
  const long double zh = (l_high - mean) / (sd + static_cast<long double>(eps));
  long double wl = w_low * expl(alpha * zl);
  long double wh = w_high * expl(alpha * zh);
  const long double norm = wl + wh;
  wl /= norm;
  wh /= norm;
  wl = std::clamp(wl, static_cast<long double>(w_min), static_cast<long double>(w_max));
  wh = std::clamp(wh, static_cast<long double>(w_min), static_cast<long double>(w_max));
  const long double renorm = wl + wh;
  return {static_cast<double>(wl / renorm), static_cast<double>(wh / renorm)};
}

}  // namespace

TEST_CASE("environment partition: normalization and inclusive boundary") {
  EnvironmentConfig cfg;
  CHECK(partition_environment(5.0, cfg) == Environment::High);   // norm 1.0
  CHECK(partition_environment(1.0, cfg) == Environment::Low);    // norm 0.0
  CHECK(partition_environment(4.2, cfg) == Environment::High);   // norm 0.8, boundary inclusive
  CHECK(partition_environment(4.19, cfg) == Environment::Low);
  CHECK_THROWS(partition_environment(3.0, EnvironmentConfig{1.5}));
}

TEST_CASE("group risks: per-environment means and empty-environment fallback") {
  GroupDroState state;
  {
    Tape tape;
    Tensor losses = tape.constant({2}, {1.0, 3.0});
    GroupRisks r = group_risks(tape, losses, {Environment::Low, Environment::Low}, state);
    CHECK(r.low.scalar() == doctest::Approx(2.0));
    CHECK(r.high_empty);
    CHECK(r.high.scalar() == doctest::Approx(0.0));  // no previous risk yet
  }
  {
    Tape tape;
    Tensor losses = tape.constant({3}, {1.0, 3.0, 5.0});
    GroupRisks r = group_risks(tape, losses, {Environment::Low, Environment::Low, Environment::High},
                               state);
    CHECK(r.low.scalar() == doctest::Approx(2.0));
    CHECK(r.high.scalar() == doctest::Approx(5.0));
  }
  {
    // single sample per env, and the high risk from last step is reused
    Tape tape;
    Tensor losses = tape.constant({1}, {0.7});
    GroupRisks r = group_risks(tape, losses, {Environment::Low}, state);
    CHECK(r.low.scalar() == doctest::Approx(0.7));
    CHECK(r.high_empty);
    CHECK(r.high.scalar() == doctest::Approx(5.0));  // previous value
    CHECK(state.empty_env_events == 2);
  }
}

TEST_CASE("group risks propagate gradients through the populated environments") {
  GroupDroState state;
  auto f = [&](Tape& t, const Tensor& x) {
    GroupDroState local;
    GroupRisks r = group_risks(t, x, {Environment::Low, Environment::High, Environment::Low}, local);
    return t.add(t.scale(r.low, 0.3), t.scale(r.high, 0.7));
  };
  CHECK(finite_difference_check(f, {1.0, 2.0, 4.0}, {3}) < 1e-8);
}

TEST_CASE("groupdro objective: weighted sum with plain multipliers") {
  GroupDroState state;
  Tape tape;
  GroupRisks risks;
  risks.low = tape.constant({1}, {1.0});
  risks.high = tape.constant({1}, {1.0});
  state.w_low = 0.5;
  state.w_high = 0.5;
  CHECK(groupdro_objective(tape, state, risks).scalar() == doctest::Approx(1.0));

  risks.high = tape.constant({1}, {2.0});
  state.w_low = 0.6;
  state.w_high = 0.4;
  CHECK(groupdro_objective(tape, state, risks).scalar() == doctest::Approx(1.4));

  state.w_low = 1.0;
  state.w_high = 0.0;
  CHECK(groupdro_objective(tape, state, risks).scalar() == doctest::Approx(1.0));
}

TEST_CASE("weight update: equal risks are a fixed point via epsilon") {
  GroupDroState state;
  update_group_weights(state, 2.5, 2.5);
  CHECK(state.w_low == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(state.w_high == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("weight update: spec worked example") {
  GroupDroState state;
  update_group_weights(state, 1.0, 0.5);
  // z = (+1, -1) up to eps; unnormalized (0.552585, 0.452419)
  CHECK(state.w_low == doctest::Approx(0.549835).epsilon(1e-5));
  CHECK(state.w_high == doctest::Approx(0.450165).epsilon(1e-5));
}

TEST_CASE("weight update: clip binds then renormalizes") {
  GroupDroState state;
  state.w_low = 0.95;
  state.w_high = 0.05;
  // equal risks: exponent 0, so the update only clips and renormalizes
  update_group_weights(state, 1.0, 1.0);
  CHECK(state.w_low == doctest::Approx(0.9));
  CHECK(state.w_high == doctest::Approx(0.1));
}

TEST_CASE("weight update matches the closed-form oracle on 100 seeded cases") {
  Rng rng(2718);
  for (int t = 0; t < 100; ++t) {
    GroupDroState state;
    const double w = rng.uniform(0.05, 0.95);
    state.w_low = w;
    state.w_high = 1.0 - w;
    state.alpha = rng.uniform(0.01, 0.5);
    const double l_low = rng.uniform(0.0, 5.0);
    const double l_high = rng.bernoulli(0.1) ? l_low : rng.uniform(0.0, 5.0);
    auto [el, eh] = dro_update_oracle(state.w_low, state.w_high, l_low, l_high, state.alpha,
                                      state.eps, state.w_min, state.w_max);
    update_group_weights(state, l_low, l_high);
    CHECK(std::fabs(state.w_low - el) <= 1e-12);
    CHECK(std::fabs(state.w_high - eh) <= 1e-12);
    // simplex and clip invariants
    CHECK(std::fabs(state.w_low + state.w_high - 1.0) <= 1e-12);
    CHECK(state.w_low >= state.w_min - 1e-12);
    CHECK(state.w_low <= state.w_max + 1e-12);
  }
}

TEST_CASE("weight update direction follows the risk gap when no clip binds") {
  Rng rng(555);
  for (int t = 0; t < 50; ++t) {
    GroupDroState state;
    state.w_low = rng.uniform(0.25, 0.75);
    state.w_high = 1.0 - state.w_low;
    const double l_low = rng.uniform(0.5, 3.0);
    const double l_high = rng.uniform(0.5, 3.0);
    if (l_low == l_high) continue;
    const double before = state.w_low;
    update_group_weights(state, l_low, l_high);
    if (state.w_low > state.w_min + 1e-9 && state.w_low < state.w_max - 1e-9) {
      const double mean = 0.5 * (l_low + l_high);
      CHECK(((state.w_low - before) > 0) == ((l_low - mean) > 0));
    }
  }
}

namespace {

constexpr std::size_t kHidden = 10;

struct CfFixture {
  ParamStore store;
  FeatureViews views;
  std::vector<PaperFeatureVector> feats;

  CfFixture(bool zero_params, std::uint64_t seed) {
    init_head_params(store, "stage_a", {kHidden + 9, 8}, seed);
    init_head_params(store, "stage_b", {kHidden + 8 + 1, 8}, seed + 1);
    if (zero_params)
      for (auto& [name, e] : store) std::fill(e.values.begin(), e.values.end(), 0.0);
    Rng rng(seed + 2);
    for (int i = 0; i < 6; ++i) {
      PaperFeatureVector f;
      f.a1 = rng.uniform(1, 5);
      f.a2 = rng.uniform(1, 5);
      f.a3 = rng.uniform(1, 5);
      f.v = rng.uniform(1, 5);
      f.r = i % 2 ? 1.0 : 0.0;
      f.c = rng.uniform(1, 5);
      f.h = rng.uniform(0, 4);
      f.q = rng.uniform(1, 5);
      f.pub_year = 2012 + i;
      feats.push_back(f);
    }
    views.stats = FeatureStats::from_training(feats);
  }
};

}  // namespace

TEST_CASE("counterfactual delta: identity intervention is exactly zero") {
  CfFixture fx(false, 41);
  // force every paper to R = 1 so the R intervention is a no-op
  for (auto& f : fx.feats) f.r = 1.0;
  fx.feats[0].r = 1.0;
  fx.views.stats = FeatureStats::from_training(fx.feats);

  Tape tape;
  BoundParams bound(tape, fx.store, false);
  Rng rng(1);
  std::vector<double> zp(fx.feats.size() * kHidden), zm(fx.feats.size() * kHidden);
  for (auto& v : zp) v = rng.uniform(-1, 1);
  for (auto& v : zm) v = rng.uniform(-1, 1);
  Tensor z_plus = tape.constant({fx.feats.size(), kHidden}, zp);
  Tensor z_minus = tape.constant({fx.feats.size(), kHidden}, zm);

  std::vector<double> fplus_rows, fminus_rows;
  for (const auto& f : fx.feats) {
    auto p = fx.views.f_plus(f);
    fplus_rows.insert(fplus_rows.end(), p.begin(), p.end());
    auto m = fx.views.f_minus(f);
    fminus_rows.insert(fminus_rows.end(), m.begin(), m.end());
  }
  Tensor fplus = tape.constant({fx.feats.size(), 9}, fplus_rows);
  Tensor fminus = tape.constant({fx.feats.size(), 8}, fminus_rows);
  Tensor e_hat = stage_a_forward(tape, bound, z_plus, fplus);
  Tensor u = stage_b_forward(tape, bound, z_minus, fminus, e_hat);

  CounterfactualBatch cf =
      counterfactual_delta(tape, bound, 'R', z_plus, z_minus, fx.feats, fx.views, u);
  for (double d : cf.delta.values()) CHECK(d == 0.0);
  for (double m : cf.low_mask) CHECK(m == 0.0);  // nobody sits below tau_R

  CHECK_THROWS_AS(counterfactual_delta(tape, bound, 'V', z_plus, z_minus, fx.feats, fx.views, u),
                  NonActionableFactor);
}

TEST_CASE("counterfactual delta: zero-initialized heads give zero everywhere") {
  CfFixture fx(true, 43);
  Tape tape;
  BoundParams bound(tape, fx.store, false);
  Tensor z_plus = tape.zeros({fx.feats.size(), kHidden});
  Tensor z_minus = tape.zeros({fx.feats.size(), kHidden});
  std::vector<double> fplus_rows, fminus_rows;
  for (const auto& f : fx.feats) {
    auto p = fx.views.f_plus(f);
    fplus_rows.insert(fplus_rows.end(), p.begin(), p.end());
    auto m = fx.views.f_minus(f);
    fminus_rows.insert(fminus_rows.end(), m.begin(), m.end());
  }
  Tensor fplus = tape.constant({fx.feats.size(), 9}, fplus_rows);
  Tensor fminus = tape.constant({fx.feats.size(), 8}, fminus_rows);
  Tensor e_hat = stage_a_forward(tape, bound, z_plus, fplus);
  Tensor u = stage_b_forward(tape, bound, z_minus, fminus, e_hat);
  for (char factor : {'R', 'Q'}) {
    CounterfactualBatch cf =
        counterfactual_delta(tape, bound, factor, z_plus, z_minus, fx.feats, fx.views, u);
    for (double d : cf.delta.values()) CHECK(d == 0.0);
  }
}

TEST_CASE("mono loss: hinge with low-region gating") {
  Tape tape;
  // delta +0.2 in the low region: inactive hinge
  CHECK(mono_loss(tape, tape.constant({1}, {0.2}), {1.0}, +1.0).scalar() == doctest::Approx(0.0));
  // delta -0.2 in the low region: contributes 0.2
  CHECK(mono_loss(tape, tape.constant({1}, {-0.2}), {1.0}, +1.0).scalar() == doctest::Approx(0.2));
  // outside the low region the sign does not matter
  CHECK(mono_loss(tape, tape.constant({1}, {-0.9}), {0.0}, +1.0).scalar() == doctest::Approx(0.0));
  // batch mean over mixed rows
  Tensor d = tape.constant({4}, {-0.2, 0.3, -0.4, -1.0});
  CHECK(mono_loss(tape, d, {1.0, 1.0, 1.0, 0.0}, +1.0).scalar() == doctest::Approx((0.2 + 0.4) / 4));
  // nonnegative on random inputs, zero when aligned with the direction
  Rng rng(77);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> dv(5), mask(5);
    for (auto& v : dv) v = rng.uniform(-1, 1);
    for (auto& v : mask) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
    CHECK(mono_loss(tape, tape.constant({5}, dv), mask, +1.0).scalar() >= 0.0);
    std::vector<double> aligned(5);
    for (auto& v : aligned) v = rng.uniform(0, 1);
    CHECK(mono_loss(tape, tape.constant({5}, aligned), mask, +1.0).scalar() == doctest::Approx(0.0));
  }
}

TEST_CASE("smooth loss: mean of squares and homogeneity") {
  Tape tape;
  CHECK(smooth_loss(tape, tape.constant({3}, {0, 0, 0})).scalar() == doctest::Approx(0.0));
  CHECK(smooth_loss(tape, tape.constant({2}, {1, -1})).scalar() == doctest::Approx(1.0));
  Tensor d = tape.constant({3}, {0.5, -1.5, 2.0});
  const double base = smooth_loss(tape, d).scalar();
  CHECK(smooth_loss(tape, tape.scale(d, 3.0)).scalar() == doctest::Approx(9.0 * base));
}

TEST_CASE("total regularizer: weighted factor sum, additive in factors") {
  Tape tape;
  std::vector<Tensor> monos{tape.constant({1}, {0.2}), tape.constant({1}, {0.3})};
  std::vector<Tensor> smooths{tape.constant({1}, {1.0}), tape.constant({1}, {2.0})};
  CHECK(total_reg(tape, monos, smooths, 0.0, 0.0).scalar() == doctest::Approx(0.0));
  CHECK(total_reg(tape, monos, smooths, 1.0, 0.0).scalar() == doctest::Approx(0.5));
  CHECK(total_reg(tape, monos, smooths, 1.0, 0.1).scalar() == doctest::Approx(0.5 + 0.3));
  // a factor with zero losses changes nothing
  monos.push_back(tape.constant({1}, {0.0}));
  smooths.push_back(tape.constant({1}, {0.0}));
  CHECK(total_reg(tape, monos, smooths, 1.0, 0.1).scalar() == doctest::Approx(0.8));
  CHECK_THROWS(total_reg(tape, monos, smooths, -1.0, 0.1));
}

TEST_CASE("total loss: weighted sum of terms, linear in each lambda") {
  Tape tape;
  Tensor dro = tape.constant({1}, {2.0});
  Tensor reg = tape.constant({1}, {0.4});
  AuxTerms aux;
  CHECK(total_loss(tape, dro, reg, aux, 1.0, 0.0, 0, 0).scalar() == doctest::Approx(2.0));
  CHECK(total_loss(tape, dro, reg, aux, 1.0, 0.05, 0, 0).scalar() == doctest::Approx(2.02));
  CHECK(total_loss(tape, dro, reg, aux, 0.0, 0.0, 0, 0).scalar() == doctest::Approx(0.0));
  aux.adv = tape.constant({1}, {0.6});
  aux.calib = tape.constant({1}, {1.5});
  const double full = total_loss(tape, dro, reg, aux, 1.0, 0.05, 0.1, 0.2).scalar();
  CHECK(full == doctest::Approx(2.0 + 0.02 + 0.06 + 0.3));
  // linearity in lambda_adv with everything else fixed
  const double bumped = total_loss(tape, dro, reg, aux, 1.0, 0.05, 0.2, 0.2).scalar();
  CHECK(bumped - full == doctest::Approx(0.06));
}

TEST_CASE("aux hooks: calibration MSE and adversary with reversed gradients") {
  Tape tape;
  Tensor e_hat = tape.constant({2, 1}, {1.0, 3.0});
  CHECK(exposure_calibration_loss(tape, e_hat, {1.0, 1.0}).scalar() == doctest::Approx(2.0));

  ParamStore store;
  init_adversary_params(store, 4, 6, 9);
  {
    Tape t;
    BoundParams bound(t, store, true);
    Tensor input = t.leaf({2, 4}, {0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, -0.8}, true);
    Tensor ce = adversarial_venue_loss(t, bound, input, {Environment::Low, Environment::High});
    CHECK(ce.scalar() > 0.0);
    Gradients g = t.backward(ce);
    // discriminator params receive ordinary gradients
    CHECK(g.has(bound.at("adv/fc1/w")));
    // the input path is reversed: compare against the unreversed loss
    Tape t2;
    BoundParams bound2(t2, store, false);
    Tensor input2 = t2.leaf({2, 4}, {0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, -0.8}, true);
    Tensor hidden = t2.gelu(
        t2.add(t2.matmul(input2, bound2.at("adv/fc1/w")), bound2.at("adv/fc1/b")));
    Tensor logits = t2.add(t2.matmul(hidden, bound2.at("adv/fc2/w")), bound2.at("adv/fc2/b"));
    Tensor plain = t2.mean(t2.softmax_cross_entropy(logits, {0, 1}));
    Gradients g2 = t2.backward(plain);
    const auto& rev = g.at(input);
    const auto& fwd = g2.at(input2);
    for (std::size_t i = 0; i < rev.size(); ++i) CHECK(rev[i] == doctest::Approx(-fwd[i]).epsilon(1e-12));
  }
}
