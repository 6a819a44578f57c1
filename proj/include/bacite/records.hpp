#pragma once

// Scholarly metadata records: line-delimited ingestion and year-based
// corpus splitting.

#include <fstream>
#include <istream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace bacite {

struct AuthorInfo {
  std::string name;
  std::string affiliation;
  long pub_count = 0;
  long total_citations = 0;
  std::string country;
};

struct PaperRecord {
  std::string id;
  std::string title;
  std::string abstract;
  std::vector<std::string> keywords;
  int pub_year = 0;
  std::string venue_name;
  std::vector<AuthorInfo> authors;
  std::vector<std::string> fulltext_urls;
  std::optional<long> label_citations;     // five-year citation count, absent at inference
  std::vector<std::string> references;     // cited paper ids, optional in the input
};

struct MalformedRecord {
  std::size_t line_no = 0;
  std::string reason;
};

struct IngestResult {
  std::vector<PaperRecord> records;
  std::vector<MalformedRecord> errors;
};

namespace detail {

inline PaperRecord parse_record(const nlohmann::json& j) {
  PaperRecord r;
  r.id = j.at("id").get<std::string>();
  r.title = j.at("title").get<std::string>();
  r.pub_year = j.at("pub_year").get<int>();
  r.venue_name = j.at("venue_name").get<std::string>();
  if (j.contains("abstract")) r.abstract = j["abstract"].get<std::string>();
  if (j.contains("keywords"))
    for (const auto& k : j["keywords"]) r.keywords.push_back(k.get<std::string>());
  const auto& authors = j.at("authors");
  if (!authors.is_array() || authors.empty())
    throw std::runtime_error("authors must be a nonempty list");
  for (const auto& a : authors) {
    AuthorInfo ai;
    ai.name = a.at("name").get<std::string>();
    if (a.contains("affiliation")) ai.affiliation = a["affiliation"].get<std::string>();
    if (a.contains("pub_count")) ai.pub_count = a["pub_count"].get<long>();
    if (a.contains("total_citations")) ai.total_citations = a["total_citations"].get<long>();
    if (a.contains("country")) ai.country = a["country"].get<std::string>();
    if (ai.pub_count < 0 || ai.total_citations < 0)
      throw std::runtime_error("negative author counters");
    r.authors.push_back(std::move(ai));
  }
  if (j.contains("fulltext_urls"))
    for (const auto& u : j["fulltext_urls"]) r.fulltext_urls.push_back(u.get<std::string>());
  if (j.contains("label_citations") && !j["label_citations"].is_null()) {
    const long y = j["label_citations"].get<long>();
    if (y < 0) throw std::runtime_error("label_citations must be >= 0");
    r.label_citations = y;
  }
  if (j.contains("references"))
    for (const auto& u : j["references"]) r.references.push_back(u.get<std::string>());
  return r;
}

}  // namespace detail

// Parses one record per line, in input order. Malformed lines are reported
// with their 1-based line numbers; the whole ingest fails only when a
// nonempty stream yields no records at all.
inline IngestResult ingest_papers(std::istream& in) {
  IngestResult out;
  std::string line;
  std::size_t line_no = 0;
  std::size_t nonempty = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++nonempty;
    try {
      out.records.push_back(detail::parse_record(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      out.errors.push_back({line_no, e.what()});
    }
  }
  if (nonempty > 0 && out.records.empty())
    throw std::runtime_error("ingest: all " + std::to_string(nonempty) + " lines malformed; first: " +
                             out.errors.front().reason);
  return out;
}

inline IngestResult ingest_papers_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open record file: " + path);
  return ingest_papers(f);
}

inline nlohmann::json record_to_json(const PaperRecord& r) {
  nlohmann::json j;
  j["id"] = r.id;
  j["title"] = r.title;
  j["abstract"] = r.abstract;
  j["keywords"] = r.keywords;
  j["pub_year"] = r.pub_year;
  j["venue_name"] = r.venue_name;
  nlohmann::json authors = nlohmann::json::array();
  for (const auto& a : r.authors) {
    authors.push_back({{"name", a.name},
                       {"affiliation", a.affiliation},
                       {"pub_count", a.pub_count},
                       {"total_citations", a.total_citations},
                       {"country", a.country}});
  }
  j["authors"] = std::move(authors);
  j["fulltext_urls"] = r.fulltext_urls;
  if (r.label_citations) j["label_citations"] = *r.label_citations;
  if (!r.references.empty()) j["references"] = r.references;
  return j;
}

// ---- temporal split --------------------------------------------------------

struct SplitConfig {
  int train_lo = 2010;
  int train_hi = 2018;
  int val_year = 2019;
  int test_year = 2020;
};

struct CorpusSplit {
  std::vector<std::string> train_ids, val_ids, test_ids;
  SplitConfig years;
};

struct OverlappingYearRanges : std::runtime_error {
  OverlappingYearRanges() : std::runtime_error("split year ranges overlap") {}
};

// Membership is determined solely by pub_year; papers outside every range
// are left out of all three sets.
inline CorpusSplit temporal_split(const std::vector<PaperRecord>& records, const SplitConfig& cfg) {
  if (cfg.train_lo > cfg.train_hi) throw std::invalid_argument("train range inverted");
  const bool val_in_train = cfg.val_year >= cfg.train_lo && cfg.val_year <= cfg.train_hi;
  const bool test_in_train = cfg.test_year >= cfg.train_lo && cfg.test_year <= cfg.train_hi;
  if (val_in_train || test_in_train || cfg.val_year == cfg.test_year)
    throw OverlappingYearRanges();
  CorpusSplit split;
  split.years = cfg;
  for (const auto& r : records) {
    if (r.pub_year >= cfg.train_lo && r.pub_year <= cfg.train_hi)
      split.train_ids.push_back(r.id);
    else if (r.pub_year == cfg.val_year)
      split.val_ids.push_back(r.id);
    else if (r.pub_year == cfg.test_year)
      split.test_ids.push_back(r.id);
  }
  return split;
}

}  // namespace bacite
