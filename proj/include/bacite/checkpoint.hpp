#pragma once

// Named parameter store and its on-disk container: a text manifest
// (name, shape, offset) next to a flat little-endian float64 payload.
// Round-trips must be byte-exact.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bacite/tensor.hpp"

namespace bacite {

struct ParamEntry {
  Shape shape;
  std::vector<double> values;
};

// Ordered by name so every iteration (updates, saving, gradient pulls)
// is deterministic.
class ParamStore {
 public:
  using Map = std::map<std::string, ParamEntry>;

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  ParamEntry& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("ParamStore: missing " + name);
    return it->second;
  }
  const ParamEntry& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("ParamStore: missing " + name);
    return it->second;
  }

  void put(const std::string& name, Shape shape, std::vector<double> values) {
    if (shape_size(shape) != values.size())
      throw std::invalid_argument("ParamStore::put: shape/value mismatch for " + name);
    entries_[name] = ParamEntry{std::move(shape), std::move(values)};
  }

  Map::const_iterator begin() const { return entries_.begin(); }
  Map::const_iterator end() const { return entries_.end(); }
  Map::iterator begin() { return entries_.begin(); }
  Map::iterator end() { return entries_.end(); }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  std::size_t total_values() const {
    std::size_t n = 0;
    for (const auto& [k, e] : entries_) n += e.values.size();
    return n;
  }

 private:
  Map entries_;
};

namespace detail {

inline void write_f64_le(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), 8);
}

inline double read_f64_le(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  if (!is) throw std::runtime_error("checkpoint payload truncated");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace detail

// Writes <stem>.manifest and <stem>.payload.
inline void save_checkpoint(const ParamStore& store, const std::string& stem) {
  std::ofstream manifest(stem + ".manifest");
  std::ofstream payload(stem + ".payload", std::ios::binary);
  if (!manifest || !payload) throw std::runtime_error("cannot open checkpoint files at " + stem);
  std::size_t offset = 0;  // in values, not bytes
  for (const auto& [name, e] : store) {
    manifest << name << '\t';
    for (std::size_t i = 0; i < e.shape.size(); ++i) manifest << (i ? "x" : "") << e.shape[i];
    if (e.shape.empty()) manifest << "1";
    manifest << '\t' << offset << '\n';
    for (double v : e.values) detail::write_f64_le(payload, v);
    offset += e.values.size();
  }
  if (!manifest || !payload) throw std::runtime_error("checkpoint write failed at " + stem);
}

inline ParamStore load_checkpoint(const std::string& stem) {
  std::ifstream manifest(stem + ".manifest");
  if (!manifest) throw std::runtime_error("missing checkpoint manifest: " + stem + ".manifest");
  std::ifstream payload(stem + ".payload", std::ios::binary);
  if (!payload) throw std::runtime_error("missing checkpoint payload: " + stem + ".payload");
  ParamStore store;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name, dims, offset_str;
    if (!std::getline(ls, name, '\t') || !std::getline(ls, dims, '\t') ||
        !std::getline(ls, offset_str, '\t'))
      throw std::runtime_error("malformed manifest line: " + line);
    Shape shape;
    std::istringstream ds(dims);
    std::string tok;
    while (std::getline(ds, tok, 'x')) shape.push_back(std::stoull(tok));
    const std::size_t offset = std::stoull(offset_str);
    const std::size_t count = shape_size(shape);
    payload.seekg(static_cast<std::streamoff>(offset * 8));
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i) values[i] = detail::read_f64_le(payload);
    store.put(name, std::move(shape), std::move(values));
  }
  return store;
}

}  // namespace bacite
