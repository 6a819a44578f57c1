#pragma once

// Venue-confounded synthetic corpora with long-tailed citation counts and
// known ground truth. The causal structure is literal: venue tier boosts
// early exposure (strength s_v), exposure and latent quality drive the
// citation mean, and counts follow a negative-binomial law. Factor values
// are realized through the same agents the pipeline runs, so the emitted
// metadata reproduces them exactly.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "bacite/agents.hpp"
#include "bacite/records.hpp"
#include "bacite/rng.hpp"

namespace bacite {

struct GenConfig {
  long n_papers = 1000;
  long n_authors = 400;
  long n_venues = 40;
  long n_topics = 60;
  long n_institutions = 50;
  // A*, A, B, C, unranked
  std::array<double, 5> venue_tier_probs{0.06, 0.10, 0.22, 0.32, 0.30};
  double s_v = 1.5;          // venue -> exposure shortcut strength
  double beta_r = 0.4;       // effect sizes on latent quality
  double beta_q = 0.3;
  double beta_c = 0.2;
  double beta_h = 0.3;
  double exposure_gain = 1.6;   // a: log-mean gain per log1p(E)
  double quality_gain = 0.9;    // b: log-mean gain per unit q
  double noise_q = 0.3;
  double noise_e = 0.5;
  double dispersion = 0.8;      // negative-binomial r
  bool deterministic = false;   // zero noise, y = round(mean)
  int year_lo = 2010;
  int year_hi = 2020;
  double mean_refs = 3.0;
  double p_repro = 0.35;
  std::uint64_t seed = 1;

  void validate() const {
    if (n_papers < 1 || n_authors < 1 || n_venues < 1 || n_topics < 1 || n_institutions < 1)
      throw std::invalid_argument("GenConfig: counts must be >= 1");
    double psum = 0.0;
    for (double p : venue_tier_probs) {
      if (p < 0) throw std::invalid_argument("GenConfig: negative tier probability");
      psum += p;
    }
    if (std::fabs(psum - 1.0) > 1e-9)
      throw std::invalid_argument("GenConfig: tier probabilities must sum to 1");
    if (s_v < 0 || beta_r <= 0 || beta_q <= 0 || beta_c <= 0 || beta_h <= 0)
      throw std::invalid_argument("GenConfig: effect sizes must be positive, s_v >= 0");
    if (exposure_gain <= 0 || quality_gain <= 0 || dispersion <= 0)
      throw std::invalid_argument("GenConfig: gains and dispersion must be positive");
    if (year_lo > year_hi) throw std::invalid_argument("GenConfig: year range inverted");
  }
};

struct SyntheticTruth {
  std::string id;
  double e_true = 0.0;
  double q_latent = 0.0;
};

struct SyntheticCorpus {
  std::vector<PaperRecord> records;   // year-ordered
  std::vector<SyntheticTruth> truth;  // aligned with records
  VenueRankingTable venues;
  InstitutionPrestige institutions;
  KeywordYearCounts keyword_counts;
};

namespace syndetail {

// normalizations shared by the generator and its effect oracle
inline double norm_q(double q) { return (q - 3.0) / 2.0; }
inline double norm_c(double c) { return (c - 3.0) / 2.0; }
inline double norm_h(double h) { return h / 4.0; }
inline double norm_v(double v) { return (v - 1.0) / 4.0; }

inline double latent_quality(const GenConfig& cfg, double r, double q, double c, double h,
                             double eps) {
  return cfg.beta_r * r + cfg.beta_q * norm_q(q) + cfg.beta_c * norm_c(c) + cfg.beta_h * norm_h(h) +
         eps;
}

inline double exposure(const GenConfig& cfg, double v_norm, double q_latent, double eps) {
  return std::exp(cfg.s_v * v_norm + 0.5 * q_latent + eps);
}

inline double citation_mean(const GenConfig& cfg, double e_true, double q_latent) {
  return std::exp(cfg.exposure_gain * std::log1p(e_true) + cfg.quality_gain * q_latent);
}

// Abstracts are assembled to land in a target quality band; the realized Q
// is whatever the heuristic scorer reads back off the text.
inline std::string sample_abstract(Rng& rng, int level) {
  static const char* kCues[3][2] = {{"problem", "challenge"},
                                    {"method", "propose"},
                                    {"result", "demonstrate"}};
  int n_words, pool;
  int cue_groups;
  switch (level) {
    case 0: n_words = 30, pool = 6, cue_groups = 0; break;
    case 1: n_words = 130, pool = 70, cue_groups = 1; break;
    default: n_words = 230, pool = 160, cue_groups = 3; break;
  }
  std::string out;
  for (int g = 0; g < cue_groups; ++g) {
    out += kCues[g][rng.uniform_int(0, 1)];
    out += ' ';
  }
  for (int w = 0; w < n_words; ++w) {
    out += "term" + std::to_string(rng.uniform_int(0, pool - 1));
    out += ' ';
  }
  return out;
}

struct FactorDraw {
  double r, q, c, h, v_norm;
  double eps_q, eps_e;
};

}  // namespace syndetail

class SyntheticGenerator {
 public:
  explicit SyntheticGenerator(GenConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  SyntheticCorpus generate() const {
    Rng root(cfg_.seed);
    SyntheticCorpus out;

    // institutions
    Rng inst_rng = root.fork("institutions");
    std::vector<std::string> inst_names;
    std::vector<std::string> countries{"US", "CN", "DE", "AU", "JP", "UK", "FR", "IN", "CA", "KR"};
    for (long i = 0; i < cfg_.n_institutions; ++i) {
      inst_names.push_back("Institute-" + std::to_string(i));
      const double u = inst_rng.uniform();
      out.institutions.add(inst_names.back(), u < 0.2 ? 1.0 : u < 0.5 ? 0.5 : 0.0);
    }

    // venues with tier table
    Rng venue_rng = root.fork("venues");
    std::vector<double> venue_v_raw(cfg_.n_venues);
    for (long i = 0; i < cfg_.n_venues; ++i) {
      const double u = venue_rng.uniform();
      double acc = 0.0;
      int tier_idx = 4;
      for (int t = 0; t < 5; ++t) {
        acc += cfg_.venue_tier_probs[t];
        if (u < acc) {
          tier_idx = t;
          break;
        }
      }
      const VenueTier tier = static_cast<VenueTier>(tier_idx);
      out.venues.add({"Venue-" + std::to_string(i), {}, tier});
      venue_v_raw[i] = tier_score(tier);
    }

    // authors with metadata
    Rng author_rng = root.fork("authors");
    std::vector<AuthorInfo> authors(cfg_.n_authors);
    for (long i = 0; i < cfg_.n_authors; ++i) {
      AuthorInfo& a = authors[i];
      a.name = "Author-" + std::to_string(i);
      a.affiliation = inst_names[author_rng.uniform_int(0, cfg_.n_institutions - 1)];
      a.country = countries[author_rng.uniform_int(0, static_cast<long>(countries.size()) - 1)];
      a.pub_count = static_cast<long>(std::floor(std::exp(author_rng.uniform(0.0, 5.5))));
      a.total_citations = a.pub_count * author_rng.uniform_int(0, 60);
    }

    // topics with prior-year counts (mild per-topic trend)
    Rng topic_rng = root.fork("topics");
    for (long t = 0; t < cfg_.n_topics; ++t) {
      double base = topic_rng.uniform(0.0, 40.0);
      const double trend = topic_rng.uniform(-3.0, 5.0);
      for (int y = cfg_.year_lo - 1; y <= cfg_.year_hi; ++y) {
        out.keyword_counts.add("topic-" + std::to_string(t), y,
                               std::max<long>(0, std::lround(base)));
        base = std::max(0.0, base + trend);
      }
    }

    AgentContext ctx;
    ctx.venues = &out.venues;
    ctx.institutions = &out.institutions;
    ctx.keyword_counts = &out.keyword_counts;

    // paper years drawn first and sorted so references can point backward
    Rng year_rng = root.fork("years");
    std::vector<int> years(cfg_.n_papers);
    for (auto& y : years) y = static_cast<int>(year_rng.uniform_int(cfg_.year_lo, cfg_.year_hi));
    std::sort(years.begin(), years.end());

    Rng paper_rng = root.fork("papers");
    std::vector<double> exposure_cumsum;  // over papers generated so far
    exposure_cumsum.reserve(cfg_.n_papers);
    double exposure_total = 0.0;

    for (long i = 0; i < cfg_.n_papers; ++i) {
      PaperRecord rec;
      rec.id = "p" + std::to_string(100000 + i);
      rec.pub_year = years[i];

      // team
      const int team_size = static_cast<int>(paper_rng.uniform_int(1, 8));
      std::set<long> picked;
      while (static_cast<int>(picked.size()) < team_size)
        picked.insert(paper_rng.uniform_int(0, cfg_.n_authors - 1));
      for (long a : picked) rec.authors.push_back(authors[a]);

      // venue
      const long v_idx = paper_rng.uniform_int(0, cfg_.n_venues - 1);
      rec.venue_name = "Venue-" + std::to_string(v_idx);

      // keywords, biased toward low topic indices
      const int n_kw = static_cast<int>(paper_rng.uniform_int(1, 3));
      std::set<std::string> kws;
      while (static_cast<int>(kws.size()) < n_kw) {
        const double u = paper_rng.uniform();
        kws.insert("topic-" + std::to_string(static_cast<long>(u * u * cfg_.n_topics)));
      }
      rec.keywords.assign(kws.begin(), kws.end());

      // abstract with a target quality band; R appends a repo link
      const int q_level = static_cast<int>(paper_rng.uniform_int(0, 2));
      rec.abstract = syndetail::sample_abstract(paper_rng, q_level);
      const bool repro = paper_rng.uniform() < cfg_.p_repro;
      if (repro) rec.abstract += "Code available at github.com/lab/" + rec.id + ".";
      rec.title = "Study " + std::to_string(i) + " of " + rec.keywords.front();

      // realized factors through the agents
      const PaperFeatureVector f = extract_features(rec, ctx);

      const double eps_q = cfg_.deterministic ? 0.0 : paper_rng.normal(0.0, cfg_.noise_q);
      const double eps_e = cfg_.deterministic ? 0.0 : paper_rng.normal(0.0, cfg_.noise_e);
      const double q_latent = syndetail::latent_quality(cfg_, f.r, f.q, f.c, f.h, eps_q);
      const double e_true =
          syndetail::exposure(cfg_, syndetail::norm_v(f.v), q_latent, eps_e);
      const double mu = syndetail::citation_mean(cfg_, e_true, q_latent);
      const long y = cfg_.deterministic ? std::lround(mu) : paper_rng.neg_binomial(mu, cfg_.dispersion);
      rec.label_citations = y;

      // references: weighted by target exposure over already-generated papers
      if (i > 0) {
        const long want = cfg_.deterministic
                              ? std::lround(cfg_.mean_refs)
                              : paper_rng.poisson(cfg_.mean_refs);
        std::set<long> refs;
        const long cap = std::min<long>(want, i);
        int tries = 0;
        while (static_cast<long>(refs.size()) < cap && tries < 20 * cap) {
          ++tries;
          const double u = paper_rng.uniform() * exposure_total;
          const auto it = std::upper_bound(exposure_cumsum.begin(), exposure_cumsum.end(), u);
          refs.insert(std::distance(exposure_cumsum.begin(), it));
        }
        for (long ridx : refs) rec.references.push_back(out.records[ridx].id);
      }

      exposure_total += e_true;
      exposure_cumsum.push_back(exposure_total);
      out.truth.push_back({rec.id, e_true, q_latent});
      out.records.push_back(std::move(rec));
    }
    return out;
  }

  // Population-level counterfactual effect of pushing factor v (R or Q) to
  // its intervention target, in log1p-mean-citation units, by Monte-Carlo
  // over the generative equations. Exposure is recomputed under the
  // intervention; noise draws are shared between both arms.
  double ground_truth_effect(char factor, std::size_t n_draws = 1000000) const {
    if (factor != 'R' && factor != 'Q') throw std::invalid_argument("factor must be R or Q");
    Rng rng = Rng(cfg_.seed).fork("effect_oracle");
    AgentContext ctx;  // collaboration agent needs no tables
    double acc = 0.0;
    for (std::size_t k = 0; k < n_draws; ++k) {
      syndetail::FactorDraw d{};
      d.r = rng.uniform() < cfg_.p_repro ? 1.0 : 0.0;
      const int q_level = static_cast<int>(rng.uniform_int(0, 2));
      d.q = heuristic_text_quality("", syndetail::sample_abstract(rng, q_level));
      // team profile -> collaboration score
      const int team_size = static_cast<int>(rng.uniform_int(1, 8));
      std::vector<AuthorInfo> team(team_size);
      for (int a = 0; a < team_size; ++a) {
        team[a].name = "x";
        team[a].affiliation = "Institute-" + std::to_string(rng.uniform_int(0, cfg_.n_institutions - 1));
        team[a].country = rng.uniform() < 0.5 ? "US" : (rng.uniform() < 0.5 ? "DE" : "JP");
      }
      d.c = score_collaboration(team, ctx);
      d.h = std::log1p(rng.uniform(0.0, 40.0));
      // venue tier from the configured distribution
      const double uv = rng.uniform();
      double accp = 0.0;
      int tier_idx = 4;
      for (int t = 0; t < 5; ++t) {
        accp += cfg_.venue_tier_probs[t];
        if (uv < accp) {
          tier_idx = t;
          break;
        }
      }
      d.v_norm = syndetail::norm_v(tier_score(static_cast<VenueTier>(tier_idx)));
      d.eps_q = cfg_.deterministic ? 0.0 : rng.normal(0.0, cfg_.noise_q);
      d.eps_e = cfg_.deterministic ? 0.0 : rng.normal(0.0, cfg_.noise_e);

      auto mean_at = [&](double r, double q) {
        const double ql = syndetail::latent_quality(cfg_, r, q, d.c, d.h, d.eps_q);
        const double e = syndetail::exposure(cfg_, d.v_norm, ql, d.eps_e);
        return syndetail::citation_mean(cfg_, e, ql);
      };
      const double base = mean_at(d.r, d.q);
      const double up = factor == 'R' ? mean_at(1.0, d.q) : mean_at(d.r, 5.0);
      acc += std::log1p(up) - std::log1p(base);
    }
    return acc / static_cast<double>(n_draws);
  }

  const GenConfig& config() const { return cfg_; }

 private:
  GenConfig cfg_;
};

// Convenience entry points matching the CLI surface.
inline SyntheticCorpus generate(const GenConfig& cfg) { return SyntheticGenerator(cfg).generate(); }

inline void write_corpus(const SyntheticCorpus& corpus, const std::string& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir + "/records.jsonl");
    for (const auto& r : corpus.records) f << record_to_json(r).dump() << '\n';
  }
  {
    std::ofstream f(dir + "/truth.tsv");
    f.precision(17);
    f << "id\te_true\tq_latent\n";
    for (const auto& t : corpus.truth) f << t.id << '\t' << t.e_true << '\t' << t.q_latent << '\n';
  }
  {
    std::ofstream f(dir + "/venues.tsv");
    for (const auto& e : corpus.venues.entries()) {
      f << e.canonical_name << '\t';
      for (std::size_t i = 0; i < e.aliases.size(); ++i) f << (i ? "|" : "") << e.aliases[i];
      f << '\t' << tier_name(e.tier) << '\n';
    }
  }
  {
    std::ofstream f(dir + "/institutions.tsv");
    for (const auto& [name, v] : corpus.institutions.all())
      f << name << '\t' << (v == 1.0 ? "top" : v == 0.5 ? "mid" : "low") << '\n';
  }
  {
    std::ofstream f(dir + "/keyword_counts.tsv");
    for (const auto& [key, count] : corpus.keyword_counts.all())
      f << key.first << '\t' << key.second << '\t' << count << '\n';
  }
}

inline std::map<std::string, SyntheticTruth> load_truth(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open truth file: " + path);
  std::map<std::string, SyntheticTruth> out;
  std::string line;
  std::getline(f, line);  // header
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    SyntheticTruth t;
    std::string e, q;
    std::getline(ls, t.id, '\t');
    std::getline(ls, e, '\t');
    std::getline(ls, q, '\t');
    t.e_true = std::stod(e);
    t.q_latent = std::stod(q);
    out[t.id] = t;
  }
  return out;
}

}  // namespace bacite
