#pragma once

// Two-layer heterogeneous graph-transformer encoder. Attention runs over
// typed in-neighbors; each of the four edge kinds also contributes a
// reversed relation so influence can flow against edge direction (cited ->
// citing, venue -> paper, ...). Per layer and node kind: Q/K/V and output
// projections; per relation: per-head attention and message matrices plus
// a learned scalar prior.

#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "bacite/checkpoint.hpp"
#include "bacite/graph.hpp"
#include "bacite/rng.hpp"
#include "bacite/tensor.hpp"

namespace bacite {

struct EncoderConfig {
  int layers = 2;
  int hidden = 128;
  int heads = 4;
  double dropout = 0.4;
  // paper uses the 8-dim slice of its 9-slot row (V lives on the venue node)
  std::array<int, kNumNodeKinds> input_widths{8, 1, 1, 1};

  int head_dim() const { return hidden / heads; }

  void validate() const {
    if (layers < 1 || hidden < 1 || heads < 1) throw std::invalid_argument("EncoderConfig: zero width");
    if (hidden % heads != 0) throw std::invalid_argument("EncoderConfig: hidden must divide by heads");
    if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("EncoderConfig: bad dropout");
    for (int w : input_widths)
      if (w < 1) throw std::invalid_argument("EncoderConfig: zero input width");
  }
};

enum class EncodeMode { WithVenue, WithoutVenue };

struct ModeGraphMismatch : std::runtime_error {
  ModeGraphMismatch() : std::runtime_error("without_venue mode requires the venue-excluded view") {}
};

struct PaperEmbeddings {
  Tensor z;  // [n_papers, hidden]
  EncodeMode mode = EncodeMode::WithVenue;
};

// A relation is an edge kind traversed forward or reversed.
struct Relation {
  EdgeKind kind;
  bool reversed;

  NodeKind src() const { return reversed ? edge_dst_kind(kind) : edge_src_kind(kind); }
  NodeKind dst() const { return reversed ? edge_src_kind(kind) : edge_dst_kind(kind); }
  std::string name() const { return reversed ? std::string("rev_") + edge_kind_name(kind) : edge_kind_name(kind); }
};

inline std::vector<Relation> all_relations() {
  std::vector<Relation> rels;
  for (int k = 0; k < kNumEdgeKinds; ++k)
    for (bool rev : {false, true}) rels.push_back({static_cast<EdgeKind>(k), rev});
  return rels;
}

// ---- parameter initialization -----------------------------------------------

namespace detail {

inline std::vector<double> xavier_uniform(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(fan_in * fan_out);
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return v;
}

inline void put_linear(ParamStore& store, Rng& rng, const std::string& prefix, std::size_t in,
                       std::size_t out) {
  store.put(prefix + "/w", {in, out}, xavier_uniform(rng, in, out));
  store.put(prefix + "/b", {out}, std::vector<double>(out, 0.0));
}

}  // namespace detail

// Fan-scaled uniform init, fully determined by seed. Parameter names live
// under "encoder/...".
inline void init_encoder_params(ParamStore& store, const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng root(seed);
  const std::size_t hidden = static_cast<std::size_t>(cfg.hidden);
  const std::size_t dh = static_cast<std::size_t>(cfg.head_dim());

  for (int k = 0; k < kNumNodeKinds; ++k) {
    Rng rng = root.fork(std::string("in/") + node_kind_name(static_cast<NodeKind>(k)));
    detail::put_linear(store, rng, std::string("encoder/in/") + node_kind_name(static_cast<NodeKind>(k)),
                       static_cast<std::size_t>(cfg.input_widths[k]), hidden);
  }
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string lp = "encoder/l" + std::to_string(l);
    for (int k = 0; k < kNumNodeKinds; ++k) {
      const std::string kp = lp + "/" + node_kind_name(static_cast<NodeKind>(k));
      Rng rng = root.fork(kp);
      detail::put_linear(store, rng, kp + "/q", hidden, hidden);
      detail::put_linear(store, rng, kp + "/k", hidden, hidden);
      detail::put_linear(store, rng, kp + "/v", hidden, hidden);
      detail::put_linear(store, rng, kp + "/out", hidden, hidden);
      store.put(kp + "/ln_g", {hidden}, std::vector<double>(hidden, 1.0));
      store.put(kp + "/ln_b", {hidden}, std::vector<double>(hidden, 0.0));
    }
    for (const Relation& rel : all_relations()) {
      const std::string rp = lp + "/rel/" + rel.name();
      Rng rng = root.fork(rp);
      for (int h = 0; h < cfg.heads; ++h) {
        store.put(rp + "/att" + std::to_string(h), {dh, dh}, detail::xavier_uniform(rng, dh, dh));
        store.put(rp + "/msg" + std::to_string(h), {dh, dh}, detail::xavier_uniform(rng, dh, dh));
      }
      store.put(rp + "/prior", {1}, {0.0});  // learned scalar, starts neutral
    }
  }
}

// Tape-bound view of a ParamStore: one leaf per entry. Entries under
// "stats/" never require grad.
class BoundParams {
 public:
  BoundParams(Tape& tape, const ParamStore& store, bool with_grad) {
    for (const auto& [name, e] : store) {
      const bool rg = with_grad && name.rfind("stats/", 0) != 0;
      tensors_.emplace(name, tape.leaf(e.shape, e.values, rg));
    }
  }

  const Tensor& at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw std::out_of_range("BoundParams: missing " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  const std::map<std::string, Tensor>& all() const { return tensors_; }

 private:
  std::map<std::string, Tensor> tensors_;
};

// optional attention capture for tests
struct EncodeDebug {
  struct AttentionBlock {
    int layer;
    NodeKind target;
    int head;
    std::vector<double> weights;       // per edge
    std::vector<std::size_t> dst_ids;  // per edge, node index within kind
  };
  std::vector<AttentionBlock> attention;
};

// Full-graph encode. Expects feature-scaled graphs; without_venue mode
// requires the venue-excluded view. Pure function of (graph, params, rng
// state); train=false uses no randomness.
inline PaperEmbeddings encode(Tape& tape, const HeteroGraph& g, const BoundParams& params,
                              const EncoderConfig& cfg, EncodeMode mode, bool train, Rng& rng,
                              EncodeDebug* debug = nullptr) {
  cfg.validate();
  if (mode == EncodeMode::WithoutVenue &&
      (g.num_nodes(NodeKind::Venue) != 0 || g.num_edges(EdgeKind::PublishedIn) != 0))
    throw ModeGraphMismatch();

  const int dh = cfg.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  // input projections; paper rows drop the V slot
  std::array<Tensor, kNumNodeKinds> h;
  for (int k = 0; k < kNumNodeKinds; ++k) {
    const auto kind = static_cast<NodeKind>(k);
    const std::size_t n = g.num_nodes(kind);
    if (n == 0) continue;
    const std::size_t width = static_cast<std::size_t>(cfg.input_widths[k]);
    std::vector<double> x;
    x.reserve(n * width);
    for (const auto& row : g.features(kind)) {
      if (kind == NodeKind::Paper) {
        if (row.size() != kNumFeatureSlots) throw ShapeMismatch("paper feature row width");
        for (std::size_t s = 1; s < kNumFeatureSlots; ++s) x.push_back(row[s]);
      } else {
        if (row.size() != width) throw ShapeMismatch("node feature row width");
        x.insert(x.end(), row.begin(), row.end());
      }
    }
    Tensor xt = tape.constant({n, width}, std::move(x));
    const std::string ip = std::string("encoder/in/") + node_kind_name(kind);
    h[k] = tape.add(tape.matmul(xt, params.at(ip + "/w")), params.at(ip + "/b"));
  }

  const std::vector<Relation> rels = all_relations();

  for (int l = 0; l < cfg.layers; ++l) {
    const std::string lp = "encoder/l" + std::to_string(l);

    std::array<Tensor, kNumNodeKinds> q, kk, vv;
    for (int k = 0; k < kNumNodeKinds; ++k) {
      if (!h[k].valid()) continue;
      const std::string kp = lp + "/" + node_kind_name(static_cast<NodeKind>(k));
      q[k] = tape.add(tape.matmul(h[k], params.at(kp + "/q/w")), params.at(kp + "/q/b"));
      kk[k] = tape.add(tape.matmul(h[k], params.at(kp + "/k/w")), params.at(kp + "/k/b"));
      vv[k] = tape.add(tape.matmul(h[k], params.at(kp + "/v/w")), params.at(kp + "/v/b"));
    }

    std::array<Tensor, kNumNodeKinds> h_next;
    for (int t = 0; t < kNumNodeKinds; ++t) {
      if (!h[t].valid()) continue;
      const auto target = static_cast<NodeKind>(t);
      const std::size_t n_t = g.num_nodes(target);
      const std::string kp = lp + "/" + node_kind_name(target);

      // gather incoming relations
      std::vector<std::vector<Tensor>> logits(cfg.heads), msgs(cfg.heads);
      std::vector<std::size_t> seg;
      for (const Relation& rel : rels) {
        if (rel.dst() != target) continue;
        const auto& edges = g.edge_list(rel.kind);
        if (edges.empty()) continue;
        const int s = static_cast<int>(rel.src());
        if (!h[s].valid()) continue;

        std::vector<std::size_t> src_idx, dst_idx;
        src_idx.reserve(edges.size());
        dst_idx.reserve(edges.size());
        for (const Edge& e : edges) {
          src_idx.push_back(static_cast<std::size_t>(rel.reversed ? e.dst : e.src));
          dst_idx.push_back(static_cast<std::size_t>(rel.reversed ? e.src : e.dst));
        }
        seg.insert(seg.end(), dst_idx.begin(), dst_idx.end());

        Tensor qe = tape.rows_select(q[t], dst_idx);
        Tensor ke = tape.rows_select(kk[s], src_idx);
        Tensor ve = tape.rows_select(vv[s], src_idx);

        const std::string rp = lp + "/rel/" + rel.name();
        const Tensor& prior = params.at(rp + "/prior");
        for (int hd = 0; hd < cfg.heads; ++hd) {
          Tensor qh = tape.slice_cols(qe, hd * dh, dh);
          Tensor kh = tape.slice_cols(ke, hd * dh, dh);
          Tensor vh = tape.slice_cols(ve, hd * dh, dh);
          Tensor krel = tape.matmul(kh, params.at(rp + "/att" + std::to_string(hd)));
          Tensor logit = tape.add(
              tape.scale(tape.row_sum(tape.mul(qh, krel)), inv_sqrt_dh), prior);
          logits[hd].push_back(logit);
          msgs[hd].push_back(tape.matmul(vh, params.at(rp + "/msg" + std::to_string(hd))));
        }
      }

      if (seg.empty()) {
        // no in-neighbors anywhere: residual path only
        h_next[t] = tape.gelu(
            tape.layer_norm(h[t], params.at(kp + "/ln_g"), params.at(kp + "/ln_b")));
        continue;
      }

      std::vector<Tensor> agg_heads;
      for (int hd = 0; hd < cfg.heads; ++hd) {
        Tensor logit_all = logits[hd].size() == 1 ? logits[hd][0] : tape.concat(logits[hd], 0);
        Tensor msg_all = msgs[hd].size() == 1 ? msgs[hd][0] : tape.concat(msgs[hd], 0);
        Tensor attn = tape.segment_softmax(logit_all, seg, n_t);
        if (debug) {
          debug->attention.push_back({l, target, hd, attn.values(), seg});
        }
        agg_heads.push_back(tape.segment_sum(tape.scale_rows(msg_all, attn), seg, n_t));
      }
      Tensor agg = tape.concat(agg_heads, 1);
      Tensor o = tape.add(tape.matmul(agg, params.at(kp + "/out/w")), params.at(kp + "/out/b"));
      if (train && cfg.dropout > 0.0) o = tape.dropout(o, cfg.dropout, rng, true);

      // zero the update rows of nodes without in-neighbors (kills the bias too)
      std::vector<double> mask(n_t, 0.0);
      for (std::size_t d : seg) mask[d] = 1.0;
      o = tape.scale_rows(o, tape.constant({n_t}, std::move(mask)));

      h_next[t] = tape.gelu(tape.layer_norm(tape.add(h[t], o), params.at(kp + "/ln_g"),
                                            params.at(kp + "/ln_b")));
    }
    h = h_next;
  }

  PaperEmbeddings out;
  out.z = h[static_cast<int>(NodeKind::Paper)];
  out.mode = mode;
  return out;
}

}  // namespace bacite
