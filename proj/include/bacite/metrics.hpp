#pragma once

// Point and ranking metrics in log1p citation space: MALE, RMSLE, NDCG@K,
// and grouped breakdowns by environment and citation band.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace bacite {

struct LengthMismatch : std::runtime_error {
  LengthMismatch() : std::runtime_error("metric inputs differ in length") {}
};

namespace detail {

inline void check_metric_inputs(const std::vector<double>& y, const std::vector<double>& u) {
  if (y.size() != u.size()) throw LengthMismatch();
  if (y.empty()) throw std::invalid_argument("metric inputs are empty");
}

}  // namespace detail

// mean |log1p(y) - u|; u is already in log1p space
inline double male(const std::vector<double>& y, const std::vector<double>& u) {
  detail::check_metric_inputs(y, u);
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += std::fabs(std::log1p(y[i]) - u[i]);
  return acc / static_cast<double>(y.size());
}

inline double rmsle(const std::vector<double>& y, const std::vector<double>& u) {
  detail::check_metric_inputs(y, u);
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = std::log1p(y[i]) - u[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(y.size()));
}

// Linear gain log1p(y), DCG discount log2(rank+1), ties broken by stable
// original index. Returns 1 when the ideal DCG is 0.
inline double ndcg_at_k(const std::vector<double>& y, const std::vector<double>& u, std::size_t k) {
  detail::check_metric_inputs(y, u);
  if (k < 1) throw std::invalid_argument("ndcg_at_k: K must be >= 1");
  std::vector<std::size_t> order(y.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return u[a] > u[b]; });

  std::vector<double> gains(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) gains[i] = std::log1p(y[i]);
  std::vector<double> ideal = gains;
  std::stable_sort(ideal.begin(), ideal.end(), std::greater<double>());

  const std::size_t top = std::min(k, y.size());
  double dcg = 0.0, idcg = 0.0;
  for (std::size_t rank = 1; rank <= top; ++rank) {
    const double discount = std::log2(static_cast<double>(rank) + 1.0);
    dcg += gains[order[rank - 1]] / discount;
    idcg += ideal[rank - 1] / discount;
  }
  return idcg > 0.0 ? dcg / idcg : 1.0;
}

struct GroupMetrics {
  double male = 0.0;
  double rmsle = 0.0;
  std::size_t count = 0;
};

struct EvalReport {
  double male = 0.0;
  double rmsle = 0.0;
  std::map<std::size_t, double> ndcg;             // K -> value
  std::map<std::string, GroupMetrics> by_group;   // "env:low", "band:high", ...
};

// Per-group and overall metrics. Bands default to low/high around the
// corpus median of y when no band labels are supplied.
inline EvalReport group_report(const std::vector<double>& y, const std::vector<double>& u,
                               const std::vector<std::string>& env_labels,
                               const std::vector<std::size_t>& ndcg_ks = {10, 20}) {
  detail::check_metric_inputs(y, u);
  if (!env_labels.empty() && env_labels.size() != y.size()) throw LengthMismatch();
  EvalReport rep;
  rep.male = male(y, u);
  rep.rmsle = rmsle(y, u);
  for (std::size_t k : ndcg_ks) rep.ndcg[k] = ndcg_at_k(y, u, k);

  auto add_group = [&](const std::string& name, const std::vector<std::size_t>& idx) {
    if (idx.empty()) return;
    std::vector<double> gy, gu;
    gy.reserve(idx.size());
    gu.reserve(idx.size());
    for (std::size_t i : idx) {
      gy.push_back(y[i]);
      gu.push_back(u[i]);
    }
    rep.by_group[name] = GroupMetrics{male(gy, gu), rmsle(gy, gu), idx.size()};
  };

  if (!env_labels.empty()) {
    std::map<std::string, std::vector<std::size_t>> envs;
    for (std::size_t i = 0; i < y.size(); ++i) envs[env_labels[i]].push_back(i);
    for (const auto& [label, idx] : envs) add_group("env:" + label, idx);
  }

  std::vector<double> sorted_y = y;
  std::sort(sorted_y.begin(), sorted_y.end());
  const double median = sorted_y.size() % 2
                            ? sorted_y[sorted_y.size() / 2]
                            : 0.5 * (sorted_y[sorted_y.size() / 2 - 1] + sorted_y[sorted_y.size() / 2]);
  std::vector<std::size_t> low_idx, high_idx;
  for (std::size_t i = 0; i < y.size(); ++i)
    (y[i] < median ? low_idx : high_idx).push_back(i);
  add_group("band:low", low_idx);
  add_group("band:high", high_idx);
  return rep;
}

inline nlohmann::json report_to_json(const EvalReport& rep) {
  nlohmann::json j;
  j["male"] = rep.male;
  j["rmsle"] = rep.rmsle;
  for (const auto& [k, v] : rep.ndcg) j["ndcg"]["@" + std::to_string(k)] = v;
  for (const auto& [name, gm] : rep.by_group) {
    j["groups"][name] = {{"male", gm.male}, {"rmsle", gm.rmsle}, {"count", gm.count}};
  }
  return j;
}

// flattened delimited rows (metric, group, value, count) for plotting
inline std::string report_to_rows(const EvalReport& rep) {
  std::ostringstream os;
  os.precision(17);
  os << "metric\tgroup\tvalue\tcount\n";
  os << "male\toverall\t" << rep.male << "\t0\n";
  os << "rmsle\toverall\t" << rep.rmsle << "\t0\n";
  for (const auto& [k, v] : rep.ndcg) os << "ndcg@" << k << "\toverall\t" << v << "\t0\n";
  for (const auto& [name, gm] : rep.by_group) {
    os << "male\t" << name << "\t" << gm.male << "\t" << gm.count << "\n";
    os << "rmsle\t" << name << "\t" << gm.rmsle << "\t" << gm.count << "\n";
  }
  return os.str();
}

}  // namespace bacite
