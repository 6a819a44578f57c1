#pragma once

// Post-training counterfactual reports: per-paper effect of pushing an
// actionable factor to its improved value, with the exposure estimate
// recomputed, plus corpus-level summaries.

#include <algorithm>
#include <string>
#include <vector>

#include "json.hpp"

#include "bacite/robust.hpp"
#include "bacite/train.hpp"

namespace bacite {

struct WhatIfRow {
  std::string paper_id;
  char factor;
  double u_base = 0;
  double u_intervened = 0;
  double delta = 0;          // u_intervened - u_base, exactly
  double yhat_base = 0;      // expm1(u)
  double yhat_intervened = 0;
  bool low_region = false;   // 1{v(p) < tau_v}
};

struct WhatIfSummary {
  char factor;
  double mean_delta = 0;
  double median_delta = 0;
  double violation_rate = 0;  // fraction of low-region rows with t_v * delta < 0
  std::size_t rows = 0;
  std::size_t low_region_rows = 0;
};

struct WhatIfReport {
  std::vector<WhatIfRow> rows;
  std::vector<WhatIfSummary> summaries;
};

// Rows for every requested (paper, factor) over the given paper indices.
// The checkpoint must be a trained two-stage model.
inline WhatIfReport whatif(const ParamStore& params, const ModelData& data,
                           const std::vector<std::size_t>& idx, const std::vector<char>& factors,
                           const TrainConfig& cfg) {
  if (!params.contains("stage_a/fc1/w") || !params.contains("stage_b/fc1/w"))
    throw UntrainedCheckpoint("two-stage heads missing");
  for (char f : factors) CounterfactualConfig::factor(f);  // validates

  WhatIfReport report;
  if (idx.empty()) return report;

  Tape tape;
  BoundParams bound(tape, params, false);
  Rng rng(0);
  PaperEmbeddings z_plus = encode(tape, data.graph_with_venue, bound, cfg.encoder,
                                  EncodeMode::WithVenue, false, rng);
  PaperEmbeddings z_minus = encode(tape, data.graph_no_venue, bound, cfg.encoder,
                                   EncodeMode::WithoutVenue, false, rng);
  Tensor zb_plus = tape.rows_select(z_plus.z, idx);
  Tensor zb_minus = tape.rows_select(z_minus.z, idx);
  Tensor f_plus = detail::batch_matrix(tape, data, idx, true);
  Tensor f_minus = detail::batch_matrix(tape, data, idx, false);
  Tensor e_hat = stage_a_forward(tape, bound, zb_plus, f_plus);
  Tensor u_base = stage_b_forward(tape, bound, zb_minus, f_minus, e_hat);

  std::vector<PaperFeatureVector> feats;
  feats.reserve(idx.size());
  for (std::size_t i : idx) feats.push_back(data.feats[i]);

  for (char factor : factors) {
    CounterfactualBatch cf =
        counterfactual_delta(tape, bound, factor, zb_plus, zb_minus, feats, data.views, u_base);
    const FactorSpec& spec = CounterfactualConfig::factor(factor);

    WhatIfSummary summary;
    summary.factor = factor;
    std::vector<double> deltas;
    std::size_t violations = 0;
    for (std::size_t r = 0; r < idx.size(); ++r) {
      WhatIfRow row;
      row.paper_id = data.graph_with_venue.ids(NodeKind::Paper)[idx[r]];
      row.factor = factor;
      row.u_base = u_base.values()[r];
      row.delta = cf.delta.values()[r];
      row.u_intervened = row.u_base + row.delta;
      row.yhat_base = std::max(0.0, std::expm1(row.u_base));
      row.yhat_intervened = std::max(0.0, std::expm1(row.u_intervened));
      row.low_region = cf.low_mask[r] > 0;
      if (row.low_region) {
        ++summary.low_region_rows;
        if (spec.direction * row.delta < 0) ++violations;
      }
      deltas.push_back(row.delta);
      summary.mean_delta += row.delta;
      report.rows.push_back(std::move(row));
    }
    summary.rows = idx.size();
    summary.mean_delta /= static_cast<double>(idx.size());
    std::sort(deltas.begin(), deltas.end());
    summary.median_delta = deltas.size() % 2
                               ? deltas[deltas.size() / 2]
                               : 0.5 * (deltas[deltas.size() / 2 - 1] + deltas[deltas.size() / 2]);
    summary.violation_rate =
        summary.low_region_rows ? static_cast<double>(violations) / summary.low_region_rows : 0.0;
    report.summaries.push_back(summary);
  }
  return report;
}

inline void write_whatif_rows(const WhatIfReport& report, const std::string& path) {
  std::ofstream f(path);
  f << "paper_id\tfactor\tu_base\tu_intervened\tdelta\tyhat_base\tyhat_intervened\tlow_region\n";
  for (const auto& r : report.rows) {
    f << r.paper_id << '\t' << r.factor << '\t' << detail::fmt(r.u_base) << '\t'
      << detail::fmt(r.u_intervened) << '\t' << detail::fmt(r.delta) << '\t'
      << detail::fmt(r.yhat_base) << '\t' << detail::fmt(r.yhat_intervened) << '\t'
      << (r.low_region ? 1 : 0) << '\n';
  }
}

inline nlohmann::json whatif_summary_json(const WhatIfReport& report) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& s : report.summaries) {
    j.push_back({{"factor", std::string(1, s.factor)},
                 {"mean_delta", s.mean_delta},
                 {"median_delta", s.median_delta},
                 {"violation_rate", s.violation_rate},
                 {"rows", s.rows},
                 {"low_region_rows", s.low_region_rows}});
  }
  return j;
}

}  // namespace bacite
