#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fineclip/image.hpp"
#include "fineclip/nn.hpp"
#include "fineclip/taxonomy.hpp"

namespace fineclip {

struct ViTConfig {
  std::size_t image_size = 32;
  std::size_t channels = 3;
  std::size_t patch_size = 8;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t embed_dim = 64;
  std::size_t mlp_ratio = 2;
  std::size_t key_tap_layer = 2;  // 1-based

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }

  void validate() const {
    if (patch_size == 0 || image_size % patch_size != 0) {
      throw ConfigError("image_size must be a multiple of patch_size");
    }
    if (heads == 0 || embed_dim % heads != 0) throw ConfigError("embed_dim must be divisible by vit heads");
    if (key_tap_layer < 1 || key_tap_layer > layers) {
      throw ConfigError("key_tap_layer must lie in [1, layers]");
    }
    if (channels == 0 || layers == 0 || mlp_ratio == 0) throw ConfigError("vit sizes must be positive");
  }
};

struct TextEncoderConfig {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t width = 64;
  std::size_t mlp_ratio = 2;
  std::size_t output_dim = 64;  // must equal the vision embed dim

  void validate() const {
    if (heads == 0 || width % heads != 0) throw ConfigError("text width must be divisible by text heads");
    if (layers == 0 || mlp_ratio == 0 || output_dim == 0) throw ConfigError("text sizes must be positive");
  }
};

/// Patch rows of an image: row p holds patch p (raster order) as channel-major P×P blocks.
inline std::vector<double> patchify(const Image& img, std::size_t patch) {
  const std::size_t g_h = img.height / patch, g_w = img.width / patch;
  const std::size_t dim = img.channels * patch * patch;
  std::vector<double> out(g_h * g_w * dim);
  std::size_t i = 0;
  for (std::size_t gy = 0; gy < g_h; ++gy)
    for (std::size_t gx = 0; gx < g_w; ++gx)
      for (std::size_t c = 0; c < img.channels; ++c)
        for (std::size_t py = 0; py < patch; ++py)
          for (std::size_t px = 0; px < patch; ++px)
            out[i++] = img.at(c, gy * patch + py, gx * patch + px) - 0.5;
  return out;
}

/// Vision transformer with frozen base weights; LoRA adapters attach to Q/K/V.
class VisionEncoder {
 public:
  struct Output {
    Tensor v;     // B × d, final-layer CLS output
    Tensor keys;  // (B·N) × d, key projection of patch tokens at the tap layer
  };

  VisionEncoder() = default;
  VisionEncoder(const ViTConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const std::size_t d = cfg_.embed_dim;
    patch_embed_ = Linear(cfg_.patch_dim(), d, rng, false);
    cls_ = randn({1, d}, 0.02, rng);
    pos_ = randn({cfg_.num_patches() + 1, d}, 0.02, rng);
    for (std::size_t l = 0; l < cfg_.layers; ++l) blocks_.emplace_back(d, cfg_.heads, cfg_.mlp_ratio, rng);
    ln_post_ = LayerNorm(d);
  }

  const ViTConfig& config() const { return cfg_; }

  void attach_lora(std::size_t rank, double alpha, std::uint64_t seed) {
    const std::size_t d = cfg_.embed_dim;
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      auto& b = blocks_[l];
      b.q.lora = LoRAAdapter(d, d, rank, alpha, mix_seed(seed, l, 0));
      b.k.lora = LoRAAdapter(d, d, rank, alpha, mix_seed(seed, l, 1));
      b.v.lora = LoRAAdapter(d, d, rank, alpha, mix_seed(seed, l, 2));
    }
  }

  void detach_lora() {
    for (auto& b : blocks_) b.q.lora = b.k.lora = b.v.lora = std::nullopt;
  }

  bool has_lora() const { return !blocks_.empty() && blocks_[0].q.lora.has_value(); }

  std::vector<TransformerBlock>& blocks() { return blocks_; }
  const std::vector<TransformerBlock>& blocks() const { return blocks_; }

  Output encode(std::span<const Image* const> images) const {
    if (images.empty()) throw ShapeError("encode_image: empty batch");
    const std::size_t B = images.size(), N = cfg_.num_patches(), T = N + 1, d = cfg_.embed_dim;
    std::vector<double> patches;
    patches.reserve(B * N * cfg_.patch_dim());
    for (const Image* img : images) {
      if (img->channels != cfg_.channels || img->height != cfg_.image_size || img->width != cfg_.image_size) {
        throw ShapeError("encode_image: image " + std::to_string(img->channels) + "x" +
                         std::to_string(img->height) + "x" + std::to_string(img->width) +
                         " does not match config " + std::to_string(cfg_.channels) + "x" +
                         std::to_string(cfg_.image_size) + "x" + std::to_string(cfg_.image_size));
      }
      const auto p = patchify(*img, cfg_.patch_size);
      patches.insert(patches.end(), p.begin(), p.end());
    }
    const Tensor embedded = patch_embed_.forward(Tensor({B * N, cfg_.patch_dim()}, std::move(patches)));

    // [cls, patch_1..N] per image, plus positions
    std::vector<std::size_t> order(B * T), cls_rows(B), patch_rows(B * N);
    for (std::size_t b = 0; b < B; ++b) {
      order[b * T] = 0;
      cls_rows[b] = b * T;
      for (std::size_t p = 0; p < N; ++p) {
        order[b * T + 1 + p] = 1 + b * N + p;
        patch_rows[b * N + p] = b * T + 1 + p;
      }
    }
    std::vector<double> pos_tiled(B * T * d);
    for (std::size_t b = 0; b < B; ++b)
      std::copy(pos_.data().begin(), pos_.data().end(), pos_tiled.begin() + b * T * d);
    Tensor x = add(take_rows(concat_rows({cls_, embedded}), order), Tensor({B * T, d}, std::move(pos_tiled)));

    Tensor keys;
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      Tensor tap;
      x = blocks_[l].forward(x, B, false, l + 1 == cfg_.key_tap_layer ? &tap : nullptr);
      if (tap.defined()) keys = take_rows(tap, patch_rows);
    }
    return {ln_post_.forward(take_rows(x, cls_rows)), keys};
  }

  Output encode(const Image& image) const {
    const Image* one[] = {&image};
    return encode(std::span<const Image* const>(one));
  }

  void collect(ParamList& out, const std::string& prefix = "vit") const {
    patch_embed_.collect(out, prefix + ".patch_embed");
    out.push_back({prefix + ".cls", cls_});
    out.push_back({prefix + ".pos", pos_});
    for (std::size_t l = 0; l < blocks_.size(); ++l) blocks_[l].collect(out, prefix + ".block" + std::to_string(l));
    ln_post_.collect(out, prefix + ".ln_post");
  }

  /// Adapter tensors named lora.<layer>.<q|k|v>.<A|B>.
  void collect_lora(ParamList& out) const {
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      const auto& b = blocks_[l];
      const std::pair<const char*, const Linear*> mats[] = {{"q", &b.q}, {"k", &b.k}, {"v", &b.v}};
      for (const auto& [tag, lin] : mats) {
        if (!lin->lora) continue;
        const std::string base = "lora." + std::to_string(l) + "." + tag;
        out.push_back({base + ".A", lin->lora->A});
        out.push_back({base + ".B", lin->lora->B});
      }
    }
  }

 private:
  ViTConfig cfg_;
  Linear patch_embed_;
  Tensor cls_, pos_;
  std::vector<TransformerBlock> blocks_;
  LayerNorm ln_post_;
};

/// Per-level learnable context vectors and frozen class embeddings.
///
/// Class embeddings stand in for the tokenized class name: the sum of frozen word
/// vectors for the class's instrument, (verb,) and target.
struct PromptBank {
  std::array<Tensor, 2> context;           // n × d_t per level
  std::array<Tensor, 2> class_embeddings;  // C_level × d_t

  std::size_t n_ctx() const { return context[0].rows(); }
  std::size_t width() const { return context[0].cols(); }
  std::size_t num_classes(int level) const { return class_embeddings[static_cast<std::size_t>(level)].rows(); }

  static PromptBank create(const Taxonomy& tax, std::size_t n_ctx, std::size_t width, std::uint64_t seed,
                           bool trainable = true) {
    if (n_ctx == 0) throw ConfigError("n_ctx must be positive");
    Rng rng(seed);
    PromptBank bank;
    for (auto& c : bank.context) c = randn({n_ctx, width}, 0.02, rng, trainable);
    const Tensor inst = randn({tax.instruments().size(), width}, 0.02, rng);
    const Tensor verb = randn({tax.verbs().size(), width}, 0.02, rng);
    const Tensor tgt = randn({tax.targets().size(), width}, 0.02, rng);
    auto word = [&](const Tensor& table, std::size_t row, std::size_t j) { return table.at(row, j); };
    std::vector<double> l0(tax.num_pairs() * width), l1(tax.num_triplets() * width);
    for (const auto& p : tax.pairs())
      for (std::size_t j = 0; j < width; ++j)
        l0[p.id * width + j] = word(inst, p.instrument, j) + word(tgt, p.target, j);
    for (const auto& t : tax.triplets())
      for (std::size_t j = 0; j < width; ++j)
        l1[t.id * width + j] = word(inst, t.instrument, j) + word(verb, t.verb, j) + word(tgt, t.target, j);
    bank.class_embeddings[0] = Tensor({tax.num_pairs(), width}, std::move(l0));
    bank.class_embeddings[1] = Tensor({tax.num_triplets(), width}, std::move(l1));
    return bank;
  }

  void collect(ParamList& out) const {
    out.push_back({"prompt.ctx0", context[0]});
    out.push_back({"prompt.ctx1", context[1]});
    out.push_back({"prompt.cls0", class_embeddings[0]});
    out.push_back({"prompt.cls1", class_embeddings[1]});
  }
};

/// Causal transformer over [V¹..Vⁿ, cls]; the last position is projected to d.
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(const TextEncoderConfig& cfg, std::size_t n_ctx, std::uint64_t seed) : cfg_(cfg), seq_len_(n_ctx + 1) {
    cfg_.validate();
    Rng rng(seed);
    pos_ = randn({seq_len_, cfg_.width}, 0.01, rng);
    for (std::size_t l = 0; l < cfg_.layers; ++l) blocks_.emplace_back(cfg_.width, cfg_.heads, cfg_.mlp_ratio, rng);
    ln_final_ = LayerNorm(cfg_.width);
    proj_ = Linear(cfg_.width, cfg_.output_dim, rng, false, false);
  }

  const TextEncoderConfig& config() const { return cfg_; }
  std::size_t sequence_length() const { return seq_len_; }

  /// One output row per listed class, in the listed order.
  Tensor encode(const Tensor& context, const Tensor& class_embeddings, std::span<const std::size_t> classes) const {
    const std::size_t n = context.rows(), T = seq_len_, w = cfg_.width, C = classes.size();
    if (n + 1 != T || context.cols() != w || class_embeddings.cols() != w) {
      throw ShapeError("encode_level: context " + shape_string(context.shape()) + " / class embeddings " +
                       shape_string(class_embeddings.shape()) + " vs sequence length " + std::to_string(T) +
                       " width " + std::to_string(w));
    }
    if (C == 0) throw ShapeError("encode_level: no classes requested");
    std::vector<std::size_t> order(C * T), last(C);
    for (std::size_t c = 0; c < C; ++c) {
      if (classes[c] >= class_embeddings.rows()) throw std::out_of_range("encode_level: class index out of range");
      for (std::size_t t = 0; t < n; ++t) order[c * T + t] = t;
      order[c * T + n] = n + classes[c];
      last[c] = c * T + n;
    }
    std::vector<double> pos_tiled(C * T * w);
    for (std::size_t c = 0; c < C; ++c) std::copy(pos_.data().begin(), pos_.data().end(), pos_tiled.begin() + c * T * w);
    Tensor x = add(take_rows(concat_rows({context, class_embeddings}), order), Tensor({C * T, w}, std::move(pos_tiled)));
    for (const auto& b : blocks_) x = b.forward(x, C, true);
    return proj_.forward(ln_final_.forward(take_rows(x, last)));
  }

  void collect(ParamList& out, const std::string& prefix = "text") const {
    out.push_back({prefix + ".pos", pos_});
    for (std::size_t l = 0; l < blocks_.size(); ++l) blocks_[l].collect(out, prefix + ".block" + std::to_string(l));
    ln_final_.collect(out, prefix + ".ln_final");
    proj_.collect(out, prefix + ".proj");
  }

 private:
  TextEncoderConfig cfg_;
  std::size_t seq_len_ = 0;
  Tensor pos_;
  std::vector<TransformerBlock> blocks_;
  LayerNorm ln_final_;
  Linear proj_;
};

/// Text embeddings z_level for the listed classes (all classes when empty).
inline Tensor encode_level(const PromptBank& bank, int level, const TextEncoder& encoder,
                           std::span<const std::size_t> classes = {}) {
  if (level != 0 && level != 1) throw std::invalid_argument("encode_level: level must be 0 or 1");
  const auto lv = static_cast<std::size_t>(level);
  if (classes.empty()) {
    std::vector<std::size_t> all(bank.class_embeddings[lv].rows());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return encoder.encode(bank.context[lv], bank.class_embeddings[lv], all);
  }
  return encoder.encode(bank.context[lv], bank.class_embeddings[lv], classes);
}

}  // namespace fineclip
