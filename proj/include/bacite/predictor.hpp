#pragma once

// Stage A (exposure) and Stage B (citation) heads. Stage B parameterizes
// its output u directly in log1p space, so predicted citations
// exp(u) - 1 are nonnegative by construction and the prediction loss
// needs no clamping on the heavy tail.

#include <cmath>
#include <string>
#include <vector>

#include "bacite/encoder.hpp"

namespace bacite {

struct HeadConfig {
  std::size_t in_width = 0;
  std::size_t hidden = 64;
};

// single hidden layer, gelu activation, linear scalar output
inline void init_head_params(ParamStore& store, const std::string& prefix, const HeadConfig& cfg,
                             std::uint64_t seed) {
  if (cfg.in_width == 0 || cfg.hidden == 0) throw std::invalid_argument("head widths must be positive");
  Rng rng(seed);
  detail::put_linear(store, rng, prefix + "/fc1", cfg.in_width, cfg.hidden);
  detail::put_linear(store, rng, prefix + "/fc2", cfg.hidden, 1);
}

inline Tensor head_forward(Tape& tape, const BoundParams& params, const std::string& prefix,
                           const Tensor& input) {
  Tensor hidden = tape.gelu(
      tape.add(tape.matmul(input, params.at(prefix + "/fc1/w")), params.at(prefix + "/fc1/b")));
  return tape.add(tape.matmul(hidden, params.at(prefix + "/fc2/w")), params.at(prefix + "/fc2/b"));
}

// Stage A: [z_with_venue ; f_plus] -> exposure estimate, softplus keeps it
// nonnegative. Inputs are rows of a batch; output is [n, 1].
inline Tensor stage_a_forward(Tape& tape, const BoundParams& params, const Tensor& z_with_venue,
                              const Tensor& f_plus) {
  if (z_with_venue.dim(0) != f_plus.dim(0)) throw ShapeMismatch("stage_a_forward: batch sizes differ");
  Tensor input = tape.concat({z_with_venue, f_plus}, 1);
  return tape.softplus(head_forward(tape, params, "stage_a", input));
}

// Stage B: [z_no_venue ; f_minus ; e_hat] -> u = log1p(predicted citations).
// Venue prestige is not an input anywhere on this path.
inline Tensor stage_b_forward(Tape& tape, const BoundParams& params, const Tensor& z_no_venue,
                              const Tensor& f_minus, const Tensor& e_hat) {
  if (z_no_venue.dim(0) != f_minus.dim(0) || z_no_venue.dim(0) != e_hat.dim(0))
    throw ShapeMismatch("stage_b_forward: batch sizes differ");
  Tensor input = tape.concat({z_no_venue, f_minus, e_hat}, 1);
  return head_forward(tape, params, "stage_b", input);
}

// per-sample (log1p(y) - u)^2; returns [n, 1]
inline Tensor pred_loss(Tape& tape, const std::vector<double>& y, const Tensor& u) {
  if (u.rank() != 2 || u.dim(1) != 1) throw ShapeMismatch("pred_loss: u must be [n,1]");
  if (y.size() != u.dim(0)) throw ShapeMismatch("pred_loss: batch sizes differ");
  std::vector<double> target(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] < 0) throw std::invalid_argument("pred_loss: negative citation count");
    target[i] = std::log1p(y[i]);
  }
  return tape.square(tape.sub(u, tape.constant({y.size(), 1}, std::move(target))));
}

inline double pred_loss_value(double y, double u) {
  if (y < 0) throw std::invalid_argument("pred_loss: negative citation count");
  const double d = std::log1p(y) - u;
  return d * d;
}

}  // namespace bacite
