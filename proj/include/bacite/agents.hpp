#pragma once

// Six deterministic feature extractors: role-aware author reputation (A),
// venue prestige (V), reproducibility (R), collaboration (C), topic
// hotness (H), and text quality (Q). Every agent is a pure function of the
// record and an immutable dependency snapshot.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bacite/records.hpp"

namespace bacite {

// Canonical slot order used for graph features and the Stage-A vector:
// [V, R, C, H, Q, Year, A1, A2, A3]. The venue-excluded vector drops
// slot 0; the encoder consumes slots 1..8.
enum FeatureSlot : std::size_t {
  kSlotV = 0,
  kSlotR = 1,
  kSlotC = 2,
  kSlotH = 3,
  kSlotQ = 4,
  kSlotYear = 5,
  kSlotA1 = 6,
  kSlotA2 = 7,
  kSlotA3 = 8,
  kNumFeatureSlots = 9
};

struct PaperFeatureVector {
  double a1 = 1.0, a2 = 1.0, a3 = 3.0;  // reputation by role, [1,5]
  double v = 1.0;                       // venue prestige, [1,5]
  double r = 0.0;                       // reproducibility, {0,1}
  double c = 1.0;                       // collaboration, [1,5]
  double h = 0.0;                       // topic hotness, >= 0
  double q = 1.0;                       // text quality, [1,5]
  int pub_year = 0;

  std::array<double, kNumFeatureSlots> slots() const {
    return {v, r, c, h, q, static_cast<double>(pub_year), a1, a2, a3};
  }
};

// ---- text utilities ---------------------------------------------------------

namespace text {

inline std::string normalize_name(const std::string& s) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : s) {
    if (std::isalnum(c)) {
      if (pending_space && !out.empty()) out.push_back(' ');
      out.push_back(static_cast<char>(std::tolower(c)));
      pending_space = false;
    } else {
      pending_space = true;
    }
  }
  return out;
}

inline std::vector<std::string> tokenize(const std::string& s) {
  std::vector<std::string> toks;
  std::string cur;
  for (unsigned char c : s) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      toks.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) toks.push_back(cur);
  return toks;
}

inline const std::set<std::string>& stopwords() {
  static const std::set<std::string> kStop{"a",  "an", "and", "for", "in",  "of",
                                           "on", "or", "the", "to",  "with"};
  return kStop;
}

// abbreviation-aware token match: equal, or the shorter token (>= 3 chars)
// is a subsequence of the longer one sharing its first letter
inline bool tokens_match(const std::string& a, const std::string& b) {
  if (a == b) return true;
  const std::string& s = a.size() <= b.size() ? a : b;
  const std::string& l = a.size() <= b.size() ? b : a;
  if (s.size() < 3 || s[0] != l[0]) return false;
  std::size_t j = 0;
  for (char c : l) {
    if (j < s.size() && s[j] == c) ++j;
  }
  return j == s.size();
}

// intersection-over-union of word tokens after stopword removal, with
// abbreviation-aware matching (greedy one-to-one pairing)
inline double token_set_similarity(const std::string& a, const std::string& b) {
  auto filter = [](const std::string& s) {
    std::vector<std::string> out;
    for (auto& t : tokenize(s))
      if (!stopwords().count(t)) out.push_back(t);
    return out;
  };
  std::vector<std::string> ta = filter(a), tb = filter(b);
  if (ta.empty() || tb.empty()) return ta.empty() && tb.empty() ? 1.0 : 0.0;
  std::vector<bool> used(tb.size(), false);
  std::size_t matched = 0;
  for (const auto& x : ta) {
    for (std::size_t j = 0; j < tb.size(); ++j) {
      if (!used[j] && tokens_match(x, tb[j])) {
        used[j] = true;
        ++matched;
        break;
      }
    }
  }
  return static_cast<double>(matched) / static_cast<double>(ta.size() + tb.size() - matched);
}

}  // namespace text

// ---- dependency snapshots ----------------------------------------------------

enum class VenueTier { AStar, A, B, C, Unranked };

inline std::optional<VenueTier> parse_tier(const std::string& s) {
  if (s == "A*" || s == "a*" || s == "astar") return VenueTier::AStar;
  if (s == "A" || s == "a") return VenueTier::A;
  if (s == "B" || s == "b") return VenueTier::B;
  if (s == "C" || s == "c") return VenueTier::C;
  if (s == "unranked" || s == "U" || s == "u") return VenueTier::Unranked;
  return std::nullopt;
}

inline const char* tier_name(VenueTier t) {
  switch (t) {
    case VenueTier::AStar: return "A*";
    case VenueTier::A: return "A";
    case VenueTier::B: return "B";
    case VenueTier::C: return "C";
    default: return "unranked";
  }
}

inline double tier_score(VenueTier t) {
  switch (t) {
    case VenueTier::AStar: return 5.0;
    case VenueTier::A: return 4.0;
    case VenueTier::B: return 3.0;
    case VenueTier::C: return 2.0;
    default: return 1.0;
  }
}

struct VenueRankingEntry {
  std::string canonical_name;
  std::vector<std::string> aliases;
  VenueTier tier = VenueTier::Unranked;
};

class VenueRankingTable {
 public:
  void add(VenueRankingEntry e) {
    const std::string key = text::normalize_name(e.canonical_name);
    if (by_name_.count(key))
      throw std::runtime_error("duplicate canonical venue name: " + e.canonical_name);
    by_name_[key] = e.tier;
    for (const auto& a : e.aliases) by_name_[text::normalize_name(a)] = e.tier;
    entries_.push_back(std::move(e));
  }

  std::optional<VenueTier> exact(const std::string& name) const {
    auto it = by_name_.find(text::normalize_name(name));
    if (it == by_name_.end()) return std::nullopt;
    return it->second;
  }

  // best fuzzy candidate at or above the threshold, scanning canonical
  // names and aliases
  std::optional<VenueTier> fuzzy(const std::string& name, double threshold) const {
    double best = threshold;
    std::optional<VenueTier> hit;
    for (const auto& e : entries_) {
      auto consider = [&](const std::string& cand) {
        const double sim = text::token_set_similarity(name, cand);
        if (sim >= best) {
          best = sim;
          hit = e.tier;
        }
      };
      consider(e.canonical_name);
      for (const auto& a : e.aliases) consider(a);
    }
    return hit;
  }

  const std::vector<VenueRankingEntry>& entries() const { return entries_; }

 private:
  std::vector<VenueRankingEntry> entries_;
  std::map<std::string, VenueTier> by_name_;
};

// delimited: canonical_name <TAB> alias1|alias2 <TAB> tier
inline VenueRankingTable load_venue_table(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open venue table: " + path);
  VenueRankingTable table;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string name, aliases, tier;
    std::getline(ls, name, '\t');
    std::getline(ls, aliases, '\t');
    std::getline(ls, tier, '\t');
    VenueRankingEntry e;
    e.canonical_name = name;
    std::istringstream as(aliases);
    std::string alias;
    while (std::getline(as, alias, '|'))
      if (!alias.empty()) e.aliases.push_back(alias);
    auto t = parse_tier(tier);
    if (!t) throw std::runtime_error("bad venue tier '" + tier + "' in " + path);
    e.tier = *t;
    table.add(std::move(e));
  }
  return table;
}

// Institution prestige tiers: top -> 1.0, mid -> 0.5, low -> 0.0. Names
// absent from the map score 0; an empty affiliation string scores the
// agnostic default 0.5.
class InstitutionPrestige {
 public:
  void add(const std::string& name, double tier_value) {
    by_name_[text::normalize_name(name)] = tier_value;
  }
  double lookup(const std::string& affiliation) const {
    if (affiliation.empty()) return 0.5;
    auto it = by_name_.find(text::normalize_name(affiliation));
    return it == by_name_.end() ? 0.0 : it->second;
  }
  std::size_t size() const { return by_name_.size(); }
  const std::map<std::string, double>& all() const { return by_name_; }

 private:
  std::map<std::string, double> by_name_;
};

// delimited: name <TAB> tier (top|mid|low)
inline InstitutionPrestige load_institution_map(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open institution map: " + path);
  InstitutionPrestige out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string name, tier;
    std::getline(ls, name, '\t');
    std::getline(ls, tier, '\t');
    double v = 0.0;
    if (tier == "top") v = 1.0;
    else if (tier == "mid") v = 0.5;
    else if (tier == "low") v = 0.0;
    else throw std::runtime_error("bad institution tier '" + tier + "' in " + path);
    out.add(name, v);
  }
  return out;
}

// keyword -> paper count for a given year
class KeywordYearCounts {
 public:
  void add(const std::string& keyword, int year, long count) {
    counts_[{text::normalize_name(keyword), year}] = count;
  }
  long lookup(const std::string& keyword, int year) const {
    auto it = counts_.find({text::normalize_name(keyword), year});
    return it == counts_.end() ? 0 : it->second;
  }
  const std::map<std::pair<std::string, int>, long>& all() const { return counts_; }

 private:
  std::map<std::pair<std::string, int>, long> counts_;
};

// delimited: keyword <TAB> year <TAB> count
inline KeywordYearCounts load_keyword_counts(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open keyword counts: " + path);
  KeywordYearCounts out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string kw, year, count;
    std::getline(ls, kw, '\t');
    std::getline(ls, year, '\t');
    std::getline(ls, count, '\t');
    out.add(kw, std::stoi(year), std::stol(count));
  }
  return out;
}

// ---- pluggable clients --------------------------------------------------------

struct QualityRequest {
  std::string title;
  std::string abstract_text;
  std::vector<std::string> exemplar_refs;
};

struct QualityResponse {
  double score = 0.0;
  std::string rationale;
};

struct ScorerError : std::runtime_error {
  explicit ScorerError(const std::string& what) : std::runtime_error(what) {}
};

class QualityScorer {
 public:
  virtual ~QualityScorer() = default;
  virtual QualityResponse score(const QualityRequest& req) = 0;
};

struct VerifierUnavailable : std::runtime_error {
  explicit VerifierUnavailable(const std::string& what) : std::runtime_error(what) {}
};

// Confirms that a detected repository is nonempty. Optional; pattern-only
// mode is the default.
class RepoVerifier {
 public:
  virtual ~RepoVerifier() = default;
  virtual bool repo_nonempty(const std::string& url) = 0;
};

// ---- agent context -------------------------------------------------------------

struct AgentContext {
  const VenueRankingTable* venues = nullptr;
  const InstitutionPrestige* institutions = nullptr;
  const KeywordYearCounts* keyword_counts = nullptr;
  QualityScorer* scorer = nullptr;        // null -> built-in heuristic
  RepoVerifier* repo_verifier = nullptr;  // null -> pattern-only mode
  double fuzzy_threshold = 0.90;
  // training-corpus maxima for reputation normalization
  double max_log_citations = std::log1p(10000.0);
  double max_log_pubcount = std::log1p(500.0);
};

struct AgentDiagnostic {
  std::string paper_id;
  std::string agent;
  std::string message;
};

// Reputation norms use training-corpus maxima; records outside the year
// window are ignored. Falls back to the context defaults on an empty window.
inline void set_reputation_maxima(AgentContext& ctx, const std::vector<PaperRecord>& records,
                                  int year_lo, int year_hi) {
  double max_c = 0.0, max_p = 0.0;
  for (const auto& r : records) {
    if (r.pub_year < year_lo || r.pub_year > year_hi) continue;
    for (const auto& a : r.authors) {
      max_c = std::max(max_c, std::log1p(static_cast<double>(a.total_citations)));
      max_p = std::max(max_p, std::log1p(static_cast<double>(a.pub_count)));
    }
  }
  if (max_c > 0) ctx.max_log_citations = max_c;
  if (max_p > 0) ctx.max_log_pubcount = max_p;
}

// ---- the six agents -------------------------------------------------------------

namespace detail {

inline double author_score(const AuthorInfo& a, const AgentContext& ctx) {
  const double nc = ctx.max_log_citations > 0
                        ? std::min(std::log1p(static_cast<double>(a.total_citations)) / ctx.max_log_citations, 1.0)
                        : 0.0;
  const double np = ctx.max_log_pubcount > 0
                        ? std::min(std::log1p(static_cast<double>(a.pub_count)) / ctx.max_log_pubcount, 1.0)
                        : 0.0;
  const double prestige = ctx.institutions ? ctx.institutions->lookup(a.affiliation)
                                           : (a.affiliation.empty() ? 0.5 : 0.0);
  return 1.0 + 4.0 * (nc + np + prestige) / 3.0;
}

}  // namespace detail

struct ReputationScores {
  double a1, a2, a3;
};

// First author -> A1, last author -> A2, mean of the rest -> A3
// (mid-scale 3.0 when there are no middle authors).
inline ReputationScores score_author_reputation(const std::vector<AuthorInfo>& authors,
                                                const AgentContext& ctx) {
  if (authors.empty()) throw std::invalid_argument("score_author_reputation: no authors");
  ReputationScores s{};
  s.a1 = detail::author_score(authors.front(), ctx);
  s.a2 = detail::author_score(authors.back(), ctx);
  if (authors.size() <= 2) {
    s.a3 = 3.0;
  } else {
    double acc = 0.0;
    for (std::size_t i = 1; i + 1 < authors.size(); ++i)
      acc += detail::author_score(authors[i], ctx);
    s.a3 = acc / static_cast<double>(authors.size() - 2);
  }
  return s;
}

inline double score_venue_prestige(const std::string& venue_name, const AgentContext& ctx) {
  if (!ctx.venues || venue_name.empty()) return 1.0;
  if (auto t = ctx.venues->exact(venue_name)) return tier_score(*t);
  if (auto t = ctx.venues->fuzzy(venue_name, ctx.fuzzy_threshold)) return tier_score(*t);
  return 1.0;
}

inline const std::regex& repo_url_pattern() {
  static const std::regex kPat(
      R"((github\.com|gitlab\.com|bitbucket\.org)/[A-Za-z0-9_.\-]+/[A-Za-z0-9_.\-]+)",
      std::regex::icase);
  return kPat;
}

inline double score_reproducibility(const PaperRecord& rec, const AgentContext& ctx,
                                    std::vector<AgentDiagnostic>* diags = nullptr) {
  std::vector<std::string> hits;
  auto scan = [&](const std::string& s) {
    auto begin = std::sregex_iterator(s.begin(), s.end(), repo_url_pattern());
    for (auto it = begin; it != std::sregex_iterator(); ++it) hits.push_back(it->str());
  };
  scan(rec.title);
  scan(rec.abstract);
  for (const auto& u : rec.fulltext_urls) scan(u);
  if (hits.empty()) return 0.0;
  if (!ctx.repo_verifier) return 1.0;
  try {
    for (const auto& url : hits)
      if (ctx.repo_verifier->repo_nonempty(url)) return 1.0;
    return 0.0;  // links found but every repository is empty
  } catch (const VerifierUnavailable& e) {
    if (diags) diags->push_back({rec.id, "R", std::string("verifier unavailable, pattern-only: ") + e.what()});
    return 1.0;
  }
}

// C = 1 + 4 * mean(team band, institution band, international flag) with
// zero-based saturating bands: (team-1)/7 and (institutions-1)/4 capped
// at 1, so a solo single-site paper sits exactly at the floor.
inline double score_collaboration(const std::vector<AuthorInfo>& authors, const AgentContext&) {
  if (authors.empty()) throw std::invalid_argument("score_collaboration: no authors");
  std::set<std::string> insts, countries;
  for (const auto& a : authors) {
    if (!a.affiliation.empty()) insts.insert(text::normalize_name(a.affiliation));
    if (!a.country.empty()) countries.insert(text::normalize_name(a.country));
  }
  const double team = std::min((static_cast<double>(authors.size()) - 1.0) / 7.0, 1.0);
  const double inst = std::min((static_cast<double>(std::max<std::size_t>(insts.size(), 1)) - 1.0) / 4.0, 1.0);
  const double intl = countries.size() >= 2 ? 1.0 : 0.0;
  return 1.0 + 4.0 * (team + inst + intl) / 3.0;
}

// H = log(1 + mean prior-year count over the paper's keywords); 0 with no keywords
inline double score_topic_hotness(const std::vector<std::string>& keywords, int pub_year,
                                  const AgentContext& ctx) {
  if (keywords.empty() || !ctx.keyword_counts) return 0.0;
  double acc = 0.0;
  for (const auto& k : keywords)
    acc += static_cast<double>(ctx.keyword_counts->lookup(k, pub_year - 1));
  return std::log1p(acc / static_cast<double>(keywords.size()));
}

// Built-in deterministic stand-in for an LLM grader: length adequacy of the
// abstract, structure cues, and a type-token-ratio band, each in [0,1].
inline double heuristic_text_quality(const std::string& title, const std::string& abstract_text) {
  (void)title;
  const std::vector<std::string> toks = text::tokenize(abstract_text);
  const double w = static_cast<double>(toks.size());

  double adequacy = 0.0;
  if (w > 0) adequacy = std::clamp(std::min(w / 100.0, (700.0 - w) / 300.0), 0.0, 1.0);

  static const std::vector<std::vector<std::string>> kCueGroups = {
      {"problem", "challenge", "gap", "question", "task"},
      {"method", "approach", "propose", "framework", "model", "algorithm"},
      {"result", "experiment", "evaluate", "improve", "outperform", "demonstrate"}};
  double cues = 0.0;
  for (const auto& group : kCueGroups) {
    bool found = false;
    for (const auto& t : toks) {
      for (const auto& cue : group) {
        if (t.rfind(cue, 0) == 0) {  // prefix match covers plural/verb forms
          found = true;
          break;
        }
      }
      if (found) break;
    }
    if (found) cues += 1.0;
  }
  cues /= 3.0;

  double ttr_band = 0.0;
  if (!toks.empty()) {
    const std::set<std::string> distinct(toks.begin(), toks.end());
    const double ttr = static_cast<double>(distinct.size()) / w;
    ttr_band = std::clamp(std::min((ttr - 0.2) / 0.2, (1.0 - ttr) / 0.2), 0.0, 1.0);
  }

  return 1.0 + 4.0 * (adequacy + cues + ttr_band) / 3.0;
}

inline double score_text_quality(const PaperRecord& rec, const AgentContext& ctx,
                                 std::vector<AgentDiagnostic>* diags = nullptr) {
  if (ctx.scorer) {
    try {
      const QualityResponse resp = ctx.scorer->score({rec.title, rec.abstract, {}});
      return std::clamp(resp.score, 1.0, 5.0);
    } catch (const std::exception& e) {
      if (diags) diags->push_back({rec.id, "Q", std::string("scorer failed, heuristic fallback: ") + e.what()});
    }
  }
  return heuristic_text_quality(rec.title, rec.abstract);
}

inline PaperFeatureVector extract_features(const PaperRecord& rec, const AgentContext& ctx,
                                           std::vector<AgentDiagnostic>* diags = nullptr) {
  PaperFeatureVector f;
  const ReputationScores rep = score_author_reputation(rec.authors, ctx);
  f.a1 = rep.a1;
  f.a2 = rep.a2;
  f.a3 = rep.a3;
  f.v = score_venue_prestige(rec.venue_name, ctx);
  f.r = score_reproducibility(rec, ctx, diags);
  f.c = score_collaboration(rec.authors, ctx);
  f.h = score_topic_hotness(rec.keywords, rec.pub_year, ctx);
  f.q = score_text_quality(rec, ctx, diags);
  f.pub_year = rec.pub_year;
  return f;
}

// ---- normalization views -----------------------------------------------------

// Per-slot min/max over the training split; normalized() maps each slot to
// [0,1] (degenerate ranges collapse to 0). Also carries the raw training
// median of Q for the counterfactual low-region threshold.
struct FeatureStats {
  std::array<double, kNumFeatureSlots> min{};
  std::array<double, kNumFeatureSlots> max{};
  double median_q = 3.0;

  static FeatureStats from_training(const std::vector<PaperFeatureVector>& train_feats) {
    if (train_feats.empty()) throw std::invalid_argument("FeatureStats: empty training set");
    FeatureStats s;
    s.min.fill(std::numeric_limits<double>::infinity());
    s.max.fill(-std::numeric_limits<double>::infinity());
    std::vector<double> qs;
    qs.reserve(train_feats.size());
    for (const auto& f : train_feats) {
      const auto v = f.slots();
      for (std::size_t i = 0; i < kNumFeatureSlots; ++i) {
        s.min[i] = std::min(s.min[i], v[i]);
        s.max[i] = std::max(s.max[i], v[i]);
      }
      qs.push_back(f.q);
    }
    std::sort(qs.begin(), qs.end());
    s.median_q = qs.size() % 2 ? qs[qs.size() / 2]
                               : 0.5 * (qs[qs.size() / 2 - 1] + qs[qs.size() / 2]);
    return s;
  }

  double normalize_slot(std::size_t slot, double value) const {
    const double span = max[slot] - min[slot];
    if (span <= 0.0) return 0.0;
    return std::clamp((value - min[slot]) / span, 0.0, 1.0);
  }
};

struct FeatureViews {
  FeatureStats stats;

  // venue-inclusive 9-vector, normalized slot-wise
  std::array<double, kNumFeatureSlots> f_plus(const PaperFeatureVector& f) const {
    const auto raw = f.slots();
    std::array<double, kNumFeatureSlots> out{};
    for (std::size_t i = 0; i < kNumFeatureSlots; ++i) out[i] = stats.normalize_slot(i, raw[i]);
    return out;
  }

  // f_plus with the V slot deleted
  std::array<double, kNumFeatureSlots - 1> f_minus(const PaperFeatureVector& f) const {
    const auto plus = f_plus(f);
    std::array<double, kNumFeatureSlots - 1> out{};
    for (std::size_t i = 1; i < kNumFeatureSlots; ++i) out[i - 1] = plus[i];
    return out;
  }
};

}  // namespace bacite
