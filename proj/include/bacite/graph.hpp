#pragma once

// Heterogeneous academic graph: typed nodes (paper/author/venue/topic),
// typed edges, per-node feature rows. Immutable after construction; safe
// to share across concurrent readers.

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "bacite/agents.hpp"
#include "bacite/records.hpp"

namespace bacite {

enum class NodeKind : int { Paper = 0, Author = 1, Venue = 2, Topic = 3 };
enum class EdgeKind : int { Cites = 0, Writes = 1, PublishedIn = 2, HasTopic = 3 };

constexpr int kNumNodeKinds = 4;
constexpr int kNumEdgeKinds = 4;

inline const char* node_kind_name(NodeKind k) {
  switch (k) {
    case NodeKind::Paper: return "paper";
    case NodeKind::Author: return "author";
    case NodeKind::Venue: return "venue";
    default: return "topic";
  }
}

inline const char* edge_kind_name(EdgeKind k) {
  switch (k) {
    case EdgeKind::Cites: return "cites";
    case EdgeKind::Writes: return "writes";
    case EdgeKind::PublishedIn: return "published_in";
    default: return "has_topic";
  }
}

inline NodeKind edge_src_kind(EdgeKind k) {
  switch (k) {
    case EdgeKind::Cites: return NodeKind::Paper;
    case EdgeKind::Writes: return NodeKind::Author;
    case EdgeKind::PublishedIn: return NodeKind::Paper;
    default: return NodeKind::Paper;
  }
}

inline NodeKind edge_dst_kind(EdgeKind k) {
  switch (k) {
    case EdgeKind::Cites: return NodeKind::Paper;
    case EdgeKind::Writes: return NodeKind::Paper;
    case EdgeKind::PublishedIn: return NodeKind::Venue;
    default: return NodeKind::Topic;
  }
}

enum class AuthorRole : int { First = 0, Last = 1, Middle = 2 };

struct Edge {
  int src = 0;
  int dst = 0;
};

struct MissingFeatures : std::runtime_error {
  explicit MissingFeatures(const std::string& paper_id)
      : std::runtime_error("missing features for paper " + paper_id) {}
};

struct HeteroGraph {
  // node ids per kind, index position == node index
  std::array<std::vector<std::string>, kNumNodeKinds> node_ids;
  // feature rows per kind: paper rows are 9 wide, the rest 1 wide
  std::array<std::vector<std::vector<double>>, kNumNodeKinds> node_features;
  // typed edges; parallel role vector for Writes
  std::array<std::vector<Edge>, kNumEdgeKinds> edges;
  std::vector<AuthorRole> writes_roles;
  // paper publication years (index-aligned with node_ids[Paper])
  std::vector<int> paper_years;

  std::size_t num_nodes(NodeKind k) const { return node_ids[static_cast<int>(k)].size(); }
  std::size_t num_edges(EdgeKind k) const { return edges[static_cast<int>(k)].size(); }

  const std::vector<std::string>& ids(NodeKind k) const { return node_ids[static_cast<int>(k)]; }
  const std::vector<std::vector<double>>& features(NodeKind k) const {
    return node_features[static_cast<int>(k)];
  }
  const std::vector<Edge>& edge_list(EdgeKind k) const { return edges[static_cast<int>(k)]; }

  int paper_index(const std::string& id) const {
    const auto& ids = node_ids[static_cast<int>(NodeKind::Paper)];
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (ids[i] == id) return static_cast<int>(i);
    return -1;
  }
};

namespace detail {

class NodeIndexer {
 public:
  int intern(const std::string& raw, std::vector<std::string>& ids) {
    const std::string key = text::normalize_name(raw);
    auto it = index_.find(key);
    if (it != index_.end()) return it->second;
    const int idx = static_cast<int>(ids.size());
    index_[key] = idx;
    ids.push_back(raw);
    return idx;
  }
  int find(const std::string& raw) const {
    auto it = index_.find(text::normalize_name(raw));
    return it == index_.end() ? -1 : it->second;
  }

 private:
  std::map<std::string, int> index_;
};

}  // namespace detail

// Builds the full graph. Venue/author/topic entities deduplicate by
// case-folded whitespace-normalized name. Paper features are the raw
// 9-slot vectors; author/venue/topic carry one normalized scalar each
// (log-citation mass, prestige, mean hotness of attached papers).
// Cites edges come from each record's reference list; unknown targets and
// time-violating references (citing year < cited year) are skipped.
inline HeteroGraph build_graph(const std::vector<PaperRecord>& records,
                               const std::vector<PaperFeatureVector>& feats) {
  if (feats.size() != records.size())
    throw MissingFeatures(records.size() > feats.size() && feats.size() < records.size()
                              ? records[feats.size()].id
                              : "(count mismatch)");
  HeteroGraph g;
  detail::NodeIndexer papers, authors, venues, topics;

  auto& paper_ids = g.node_ids[static_cast<int>(NodeKind::Paper)];
  auto& author_ids = g.node_ids[static_cast<int>(NodeKind::Author)];
  auto& venue_ids = g.node_ids[static_cast<int>(NodeKind::Venue)];
  auto& topic_ids = g.node_ids[static_cast<int>(NodeKind::Topic)];

  std::vector<long> author_citations;
  std::vector<double> venue_prestige;   // normalized (V-1)/4 from the paper's V score
  std::vector<double> topic_hotness_acc;
  std::vector<long> topic_paper_count;

  std::set<std::pair<int, int>> seen[kNumEdgeKinds];
  auto add_edge = [&](EdgeKind k, int src, int dst) {
    if (!seen[static_cast<int>(k)].insert({src, dst}).second) return false;
    g.edges[static_cast<int>(k)].push_back({src, dst});
    return true;
  };

  for (std::size_t i = 0; i < records.size(); ++i) {
    const PaperRecord& r = records[i];
    const PaperFeatureVector& f = feats[i];
    const int p = papers.intern(r.id, paper_ids);
    if (p + 1 != static_cast<int>(paper_ids.size()))
      throw std::runtime_error("duplicate paper id: " + r.id);
    g.paper_years.push_back(r.pub_year);
    const auto slots = f.slots();
    g.node_features[static_cast<int>(NodeKind::Paper)].push_back(
        std::vector<double>(slots.begin(), slots.end()));

    for (std::size_t ai = 0; ai < r.authors.size(); ++ai) {
      const int a = authors.intern(r.authors[ai].name, author_ids);
      if (a == static_cast<int>(author_citations.size()))
        author_citations.push_back(r.authors[ai].total_citations);
      if (add_edge(EdgeKind::Writes, a, p)) {
        const AuthorRole role = ai == 0 ? AuthorRole::First
                                : ai + 1 == r.authors.size() ? AuthorRole::Last
                                                             : AuthorRole::Middle;
        g.writes_roles.push_back(role);
      }
    }

    if (!r.venue_name.empty()) {
      const int v = venues.intern(r.venue_name, venue_ids);
      if (v == static_cast<int>(venue_prestige.size()))
        venue_prestige.push_back((f.v - 1.0) / 4.0);
      add_edge(EdgeKind::PublishedIn, p, v);
    }

    for (const auto& kw : r.keywords) {
      if (kw.empty()) continue;
      const int t = topics.intern(kw, topic_ids);
      if (t == static_cast<int>(topic_hotness_acc.size())) {
        topic_hotness_acc.push_back(0.0);
        topic_paper_count.push_back(0);
      }
      if (add_edge(EdgeKind::HasTopic, p, t)) {
        topic_hotness_acc[t] += f.h;
        topic_paper_count[t] += 1;
      }
    }
  }

  // Cites after all papers are interned; same-year citation is allowed.
  for (std::size_t i = 0; i < records.size(); ++i) {
    const int src = static_cast<int>(i);
    for (const auto& ref : records[i].references) {
      const int dst = papers.find(ref);
      if (dst < 0 || dst == src) continue;
      if (g.paper_years[src] < g.paper_years[dst]) continue;
      add_edge(EdgeKind::Cites, src, dst);
    }
  }

  // 1-dim features
  double max_log_cit = 0.0;
  for (long c : author_citations) max_log_cit = std::max(max_log_cit, std::log1p(static_cast<double>(c)));
  for (long c : author_citations)
    g.node_features[static_cast<int>(NodeKind::Author)].push_back(
        {max_log_cit > 0 ? std::log1p(static_cast<double>(c)) / max_log_cit : 0.0});
  for (double v : venue_prestige) g.node_features[static_cast<int>(NodeKind::Venue)].push_back({v});
  double max_h = 0.0;
  std::vector<double> topic_mean(topic_hotness_acc.size(), 0.0);
  for (std::size_t t = 0; t < topic_mean.size(); ++t) {
    topic_mean[t] = topic_paper_count[t] ? topic_hotness_acc[t] / static_cast<double>(topic_paper_count[t]) : 0.0;
    max_h = std::max(max_h, topic_mean[t]);
  }
  for (double h : topic_mean)
    g.node_features[static_cast<int>(NodeKind::Topic)].push_back({max_h > 0 ? h / max_h : 0.0});

  return g;
}

// Removes venue nodes and PublishedIn edges and zeroes the V slot of every
// paper feature row. Everything else is copied verbatim, so the op is a
// fixed point on venue-free graphs and idempotent in general.
inline HeteroGraph venue_excluded_view(const HeteroGraph& g) {
  HeteroGraph out = g;
  out.node_ids[static_cast<int>(NodeKind::Venue)].clear();
  out.node_features[static_cast<int>(NodeKind::Venue)].clear();
  out.edges[static_cast<int>(EdgeKind::PublishedIn)].clear();
  for (auto& row : out.node_features[static_cast<int>(NodeKind::Paper)]) row[kSlotV] = 0.0;
  return out;
}

// Maps every paper feature row through training-split min/max stats; the
// 1-dim node kinds are already normalized at build time.
inline HeteroGraph scale_features(const HeteroGraph& g, const FeatureStats& stats) {
  HeteroGraph out = g;
  for (auto& row : out.node_features[static_cast<int>(NodeKind::Paper)])
    for (std::size_t s = 0; s < kNumFeatureSlots; ++s) row[s] = stats.normalize_slot(s, row[s]);
  return out;
}

// Drops Cites edges whose citing paper was published after `max_year`;
// used to hide test-era citation structure during training.
inline HeteroGraph restrict_cites_by_year(const HeteroGraph& g, int max_year) {
  HeteroGraph out = g;
  auto& cites = out.edges[static_cast<int>(EdgeKind::Cites)];
  std::vector<Edge> kept;
  for (const Edge& e : cites)
    if (g.paper_years[e.src] <= max_year) kept.push_back(e);
  cites = std::move(kept);
  return out;
}

// Manifest with per-kind node counts plus one (src_id, dst_id) edge file
// per edge kind.
inline void export_graph(const HeteroGraph& g, const std::string& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  for (int k = 0; k < kNumNodeKinds; ++k)
    manifest["node_counts"][node_kind_name(static_cast<NodeKind>(k))] = g.node_ids[k].size();
  for (int k = 0; k < kNumEdgeKinds; ++k) {
    const auto kind = static_cast<EdgeKind>(k);
    manifest["edge_counts"][edge_kind_name(kind)] = g.edges[k].size();
    manifest["edge_files"][edge_kind_name(kind)] = std::string("edges_") + edge_kind_name(kind) + ".tsv";
    std::ofstream ef(dir + "/edges_" + edge_kind_name(kind) + ".tsv");
    const auto& src_ids = g.ids(edge_src_kind(kind));
    const auto& dst_ids = g.ids(edge_dst_kind(kind));
    for (const Edge& e : g.edges[k]) ef << src_ids[e.src] << '\t' << dst_ids[e.dst] << '\n';
  }
  std::ofstream mf(dir + "/graph_manifest.json");
  mf << manifest.dump(2) << '\n';
}

}  // namespace bacite
