#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "fineclip/lora.hpp"
#include "fineclip/ops.hpp"
#include "fineclip/rng.hpp"

namespace fineclip {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

/// y = xWᵀ + b, optionally through a LoRA adapter on W.
struct Linear {
  Tensor weight;  // out × in
  Tensor bias;    // 1 × out, may be undefined
  std::optional<LoRAAdapter> lora;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool trainable, bool with_bias = true)
      : weight(randn({out, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng, trainable)) {
    if (with_bias) bias = Tensor::zeros({1, out}, trainable);
  }

  std::size_t in_features() const { return weight.cols(); }
  std::size_t out_features() const { return weight.rows(); }

  Tensor forward(const Tensor& x) const {
    Tensor y = lora ? lora_forward(x, weight, *lora) : matmul_nt(x, weight);
    return bias.defined() ? add_row(y, bias) : y;
  }

  void collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    if (bias.defined()) out.push_back({prefix + ".bias", bias});
  }
};

struct LayerNorm {
  Tensor gamma, beta;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim)
      : gamma(Tensor::full({1, dim}, 1.0)), beta(Tensor::zeros({1, dim})) {}

  Tensor forward(const Tensor& x) const { return layer_norm_rows(x, gamma, beta); }

  void collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
  }
};

/// Pre-norm transformer block over S stacked sequences of equal length.
struct TransformerBlock {
  LayerNorm ln1, ln2;
  Linear q, k, v, o, fc1, fc2;
  std::size_t heads = 1;

  TransformerBlock() = default;
  TransformerBlock(std::size_t dim, std::size_t heads_, std::size_t mlp_ratio, Rng& rng)
      : ln1(dim),
        ln2(dim),
        q(dim, dim, rng, false),
        k(dim, dim, rng, false),
        v(dim, dim, rng, false),
        o(dim, dim, rng, false),
        fc1(dim, dim * mlp_ratio, rng, false),
        fc2(dim * mlp_ratio, dim, rng, false),
        heads(heads_) {}

  /// `key_tap`, when non-null, receives the key projection of every token.
  Tensor forward(const Tensor& x, std::size_t sequences, bool causal, Tensor* key_tap = nullptr) const {
    const Tensor h = ln1.forward(x);
    const Tensor keys = k.forward(h);
    if (key_tap) *key_tap = keys;
    const Tensor att = attention(q.forward(h), keys, v.forward(h), sequences, heads, causal);
    const Tensor x1 = add(x, o.forward(att));
    return add(x1, fc2.forward(gelu(fc1.forward(ln2.forward(x1)))));
  }

  void collect(ParamList& out, const std::string& prefix) const {
    ln1.collect(out, prefix + ".ln1");
    q.collect(out, prefix + ".q");
    k.collect(out, prefix + ".k");
    v.collect(out, prefix + ".v");
    o.collect(out, prefix + ".o");
    ln2.collect(out, prefix + ".ln2");
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
  }
};

}  // namespace fineclip
