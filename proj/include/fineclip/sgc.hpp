#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "fineclip/nn.hpp"

namespace fineclip {

/// Dense cosine-affinity graph over patch features.
struct PatchGraph {
  Tensor node_features;  // N × d
  Tensor affinity;       // N × N, symmetric, unit diagonal
  Tensor edge_mask;      // N × N additive (0 kept, large negative dropped); undefined when dense

  std::size_t num_nodes() const { return node_features.rows(); }
};

namespace detail {
inline constexpr double kDroppedEdge = -1e9;
}

/// affinity[i][l] = cos(keys_i, keys_l); rows with zero norm get 0 off-diagonal and 1 on it.
/// topk_edges > 0 keeps, per node, itself plus its topk most similar neighbours (symmetrized).
inline PatchGraph build_graph(const Tensor& keys, std::size_t topk_edges = 0) {
  detail::require_matrix("build_graph", keys);
  const std::size_t N = keys.rows();
  const Tensor unit = l2_normalize_rows(keys);
  const Tensor sim = matmul_nt(unit, unit);
  std::vector<double> off(N * N, 1.0);
  for (std::size_t i = 0; i < N; ++i) off[i * N + i] = 0.0;
  PatchGraph g;
  g.node_features = keys;
  g.affinity = add(mul(sim, Tensor({N, N}, std::move(off))), Tensor::eye(N));

  if (topk_edges > 0 && topk_edges + 1 < N) {
    std::vector<std::uint8_t> keep(N * N, 0);
    std::vector<std::size_t> idx(N);
    for (std::size_t i = 0; i < N; ++i) {
      std::iota(idx.begin(), idx.end(), 0);
      std::erase(idx, i);
      std::stable_sort(idx.begin(), idx.end(),
                       [&](std::size_t a, std::size_t b) { return sim.at(i, a) > sim.at(i, b); });
      keep[i * N + i] = 1;
      for (std::size_t r = 0; r < topk_edges; ++r) keep[i * N + idx[r]] = keep[idx[r] * N + i] = 1;
    }
    std::vector<double> mask(N * N);
    for (std::size_t i = 0; i < N * N; ++i) mask[i] = keep[i] ? 0.0 : detail::kDroppedEdge;
    g.edge_mask = Tensor({N, N}, std::move(mask));
  }
  return g;
}

/// Single-head graph attention layer with affinity-biased attention logits.
struct GATLayer {
  Tensor weight;     // out × in
  Tensor attention;  // 1 × 2·out: [source half | neighbour half]
  double leaky_slope = 0.2;

  GATLayer() = default;
  GATLayer(std::size_t in, std::size_t out, Rng& rng, bool trainable = true)
      : weight(randn({out, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng, trainable)),
        attention(randn({1, 2 * out}, 1.0 / std::sqrt(static_cast<double>(out)), rng, trainable)) {}

  std::size_t out_features() const { return weight.rows(); }

  void collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".attention", attention});
  }
};

struct GATOutput {
  Tensor features;      // N × out
  Tensor coefficients;  // N × N, rows sum to 1
};

/// h'_i = act(Σ_l α_il W h_l),  α_i· = softmax_l(LeakyReLU(aᵀ[Wh_i ‖ Wh_l]) + affinity_il).
inline GATOutput gat_forward(const PatchGraph& graph, const GATLayer& layer, const Tensor& features,
                             bool activate = true) {
  const std::size_t N = features.rows(), out = layer.out_features();
  if (graph.affinity.rows() != N) detail::mismatch("gat_forward", graph.affinity, features);
  const Tensor wh = matmul_nt(features, layer.weight);
  const Tensor src = matmul_nt(wh, slice(layer.attention, 0, 1, 0, out));         // N×1
  const Tensor dst = matmul_nt(wh, slice(layer.attention, 0, 1, out, 2 * out));   // N×1
  const Tensor ones_row = Tensor::full({1, N}, 1.0);
  const Tensor pairwise = add(matmul(src, ones_row), transpose(matmul(dst, ones_row)));
  Tensor logits = add(leaky_relu(pairwise, layer.leaky_slope), graph.affinity);
  if (graph.edge_mask.defined()) logits = add(logits, graph.edge_mask);
  const Tensor coeff = softmax_rows(logits);
  const Tensor mixed = matmul(coeff, wh);
  return {activate ? elu(mixed) : mixed, coeff};
}

inline GATOutput gat_forward(const PatchGraph& graph, const GATLayer& layer, bool activate = true) {
  return gat_forward(graph, layer, graph.node_features, activate);
}

enum class AssignSource { Linear, Gat };

/// Produces N×k cluster logits from enriched node features.
struct AssignmentHead {
  AssignSource source = AssignSource::Linear;
  Linear linear;   // d → k
  GATLayer gat;    // d → k, used when source == Gat

  AssignmentHead() = default;
  AssignmentHead(std::size_t d, std::size_t k, AssignSource src, Rng& rng) : source(src) {
    if (src == AssignSource::Linear) linear = Linear(d, k, rng, true);
    else gat = GATLayer(d, k, rng, true);
  }

  std::size_t clusters() const {
    return source == AssignSource::Linear ? linear.out_features() : gat.out_features();
  }

  Tensor logits(const Tensor& enriched, const PatchGraph& graph) const {
    if (source == AssignSource::Linear) return linear.forward(enriched);
    return gat_forward(graph, gat, enriched, false).features;
  }

  void collect(ParamList& out, const std::string& prefix) const {
    if (source == AssignSource::Linear) linear.collect(out, prefix);
    else gat.collect(out, prefix);
  }
};

struct ClusterAssignment {
  Tensor S;  // N × k, row-stochastic
  std::size_t k() const { return S.cols(); }

  /// argmax cluster per node (ties to the lowest id)
  std::vector<std::size_t> hard_labels() const {
    std::vector<std::size_t> out(S.rows());
    for (std::size_t i = 0; i < S.rows(); ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < S.cols(); ++c)
        if (S.at(i, c) > S.at(i, best)) best = c;
      out[i] = best;
    }
    return out;
  }
};

struct Condensed {
  ClusterAssignment assignment;
  Tensor f_oc;  // k × d
};

/// S = softmax_rows(logits), f_oc = Sᵀ · enriched.
inline Condensed condense_logits(const Tensor& enriched, const Tensor& logits) {
  if (logits.rows() != enriched.rows()) detail::mismatch("condense", enriched, logits);
  const Tensor S = softmax_rows(logits);
  return {{S}, matmul(transpose(S), enriched)};
}

inline Condensed condense(const Tensor& enriched, const AssignmentHead& head, const PatchGraph& graph) {
  return condense_logits(enriched, head.logits(enriched, graph));
}

struct SGCConfig {
  std::size_t clusters = 4;
  std::size_t topk_edges = 0;  // 0 keeps the graph dense
  AssignSource assign_source = AssignSource::Linear;
};

/// Graph build → one GAT layer → condensation into k object-centric features.
class SemanticGraphCondensation {
 public:
  struct Output {
    PatchGraph graph;
    Tensor enriched;
    Condensed condensed;
  };

  SemanticGraphCondensation() = default;
  SemanticGraphCondensation(std::size_t d, const SGCConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.clusters == 0) throw ConfigError("sgc.k must be positive");
    Rng rng(seed);
    gat_ = GATLayer(d, d, rng, true);
    head_ = AssignmentHead(d, cfg.clusters, cfg.assign_source, rng);
  }

  const SGCConfig& config() const { return cfg_; }
  const GATLayer& gat() const { return gat_; }
  const AssignmentHead& head() const { return head_; }

  Output forward(const Tensor& keys) const {
    Output out;
    out.graph = build_graph(keys, cfg_.topk_edges);
    out.enriched = gat_forward(out.graph, gat_).features;
    out.condensed = condense(out.enriched, head_, out.graph);
    return out;
  }

  void collect(ParamList& out, const std::string& prefix = "sgc") const {
    gat_.collect(out, prefix + ".gat");
    head_.collect(out, prefix + ".assign");
  }

  std::size_t parameter_count() const {
    ParamList ps;
    collect(ps);
    std::size_t n = 0;
    for (const auto& p : ps) n += p.tensor.numel();
    return n;
  }

 private:
  SGCConfig cfg_;
  GATLayer gat_;
  AssignmentHead head_;
};

}  // namespace fineclip
