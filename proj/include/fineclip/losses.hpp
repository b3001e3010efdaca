#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fineclip/nn.hpp"

namespace fineclip {

/// Σ_c mean_b BCE(σ(logit), label), computed stably as softplus(x) − y·x.
inline Tensor bce_level(const Tensor& logits, const Tensor& labels) {
  if (logits.shape() != labels.shape()) detail::mismatch("bce_level", logits, labels);
  const auto& y = labels.data();
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] != 0.0 && y[i] != 1.0) {
      throw DomainError("bce_level: label at index " + std::to_string(i) + " is " + std::to_string(y[i]) +
                        ", expected 0 or 1");
    }
  }
  const double inv_batch = 1.0 / static_cast<double>(logits.rows());
  return scale(sum(sub(softplus(logits), mul(labels, logits))), inv_batch);
}

/// Affine maps into the shared d̂ space: image side on [v ‖ v_oc], text side on z₁ rows.
struct ProjectionHeads {
  Linear image;  // 2d → d̂
  Linear text;   // d → d̂

  ProjectionHeads() = default;
  ProjectionHeads(std::size_t d, std::size_t projected, Rng& rng)
      : image(2 * d, projected, rng, true), text(d, projected, rng, true) {}

  std::size_t projected_dim() const { return image.out_features(); }

  void collect(ParamList& out, const std::string& prefix = "proj") const {
    image.collect(out, prefix + ".image");
    text.collect(out, prefix + ".text");
  }
};

/// h[b] (C×d̂) = z^p ⊙ v^p[b] row-broadcast, with v^p = φ_img([v ‖ v_oc]) and z^p = φ_txt(z₁).
inline std::vector<Tensor> class_embeddings(const Tensor& v, const Tensor& v_oc, const Tensor& z1,
                                            const ProjectionHeads& heads) {
  const Tensor vp = heads.image.forward(concat_cols({v, v_oc}));
  const Tensor zp = heads.text.forward(z1);
  std::vector<Tensor> h;
  h.reserve(vp.rows());
  for (std::size_t b = 0; b < vp.rows(); ++b) h.push_back(mul_row(zp, slice(vp, b, b + 1, 0, vp.cols())));
  return h;
}

struct MarginConfig {
  double margin = 0.7;
  std::size_t negatives_per_pair = 5;

  void validate() const {
    if (!(margin > 0.0 && margin <= 2.0)) throw ConfigError("margin must lie in (0, 2]");
  }
};

/// Positive pairs (i < j, same parent) and the sampled negatives for each.
struct MarginPlan {
  std::vector<std::pair<std::size_t, std::size_t>> positives;
  std::vector<std::vector<std::size_t>> negatives;
};

/// `parents[c]` is the parent of column c; `active[c]` marks columns positive somewhere in the batch.
inline MarginPlan mine_pairs(std::span<const std::size_t> parents, std::span<const std::uint8_t> active,
                             std::size_t negatives_per_pair, Rng& rng) {
  const std::size_t C = parents.size();
  MarginPlan plan;
  for (std::size_t i = 0; i < C; ++i) {
    if (!active[i]) continue;
    for (std::size_t j = i + 1; j < C; ++j) {
      if (!active[j] || parents[i] != parents[j]) continue;
      std::vector<std::size_t> pool;
      for (std::size_t k = 0; k < C; ++k)
        if (parents[k] != parents[i] && parents[k] != parents[j]) pool.push_back(k);
      const std::size_t take = std::min(negatives_per_pair, pool.size());
      for (std::size_t s = 0; s < take; ++s) {
        std::uniform_int_distribution<std::size_t> pick(s, pool.size() - 1);
        std::swap(pool[s], pool[pick(rng)]);
      }
      pool.resize(take);
      if (pool.empty()) continue;
      plan.positives.emplace_back(i, j);
      plan.negatives.push_back(std::move(pool));
    }
  }
  return plan;
}

inline std::vector<std::uint8_t> active_columns(const Tensor& labels) {
  std::vector<std::uint8_t> active(labels.cols(), 0);
  for (std::size_t b = 0; b < labels.rows(); ++b)
    for (std::size_t c = 0; c < labels.cols(); ++c)
      if (labels.at(b, c) != 0.0) active[c] = 1;
  return active;
}

/// (1/(|P|·B)) Σ_b Σ_(i,j) Σ_k max(0, m + d(h_i, h_j) − d(h_i, h_k)), d = 1 − cos.
inline Tensor margin_loss(std::span<const Tensor> h, const MarginPlan& plan, double margin) {
  if (plan.positives.empty() || h.empty()) return Tensor::scalar(0.0);
  const std::size_t C = h.front().rows();
  std::vector<std::size_t> pos_idx, neg_idx;
  for (std::size_t p = 0; p < plan.positives.size(); ++p) {
    const auto [i, j] = plan.positives[p];
    for (std::size_t k : plan.negatives[p]) {
      pos_idx.push_back(i * C + j);
      neg_idx.push_back(i * C + k);
    }
  }
  std::vector<Tensor> per_batch;
  per_batch.reserve(h.size());
  for (const Tensor& hb : h) {
    const Tensor unit = l2_normalize_rows(hb);
    const Tensor cos = matmul_nt(unit, unit);
    // m + (1 − cos_ij) − (1 − cos_ik) = m + cos_ik − cos_ij
    const Tensor terms = relu(add_scalar(sub(gather(cos, neg_idx), gather(cos, pos_idx)), margin));
    per_batch.push_back(sum(terms));
  }
  Tensor total = per_batch.front();
  for (std::size_t b = 1; b < per_batch.size(); ++b) total = add(total, per_batch[b]);
  return scale(total, 1.0 / static_cast<double>(plan.positives.size() * h.size()));
}

struct LossWeights {
  double level0 = 1.0;
  double level1 = 1.0;
  double margin = 1.0;

  void validate() const {
    if (level0 < 0.0 || level1 < 0.0 || margin < 0.0) throw ConfigError("loss weights must be non-negative");
  }
};

inline Tensor total_loss(const Tensor& l0, const Tensor& l1, const Tensor& lmargin, const LossWeights& w) {
  return add(add(scale(l0, w.level0), scale(l1, w.level1)), scale(lmargin, w.margin));
}

}  // namespace fineclip
