#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fineclip/alignment.hpp"
#include "fineclip/encoders.hpp"
#include "fineclip/losses.hpp"
#include "fineclip/sgc.hpp"

namespace fineclip {

/// Which learnable parts are switched on.
struct Components {
  bool soft_prompt = true;
  bool lora = true;
  bool hierarchy = true;
  bool sgc = true;

  bool operator==(const Components&) const = default;
};

struct ModelConfig {
  ViTConfig vit;
  TextEncoderConfig text;
  std::size_t n_ctx = 8;
  std::size_t lora_rank = 2;
  double lora_alpha = 1.0;
  SGCConfig sgc;
  double tau = 10.0;
  bool learn_tau = false;
  std::size_t proj_dim = 32;
  MarginConfig margin;
  LossWeights weights;
  Components components;
  std::uint64_t seed = 0;

  void validate() const {
    vit.validate();
    text.validate();
    if (text.output_dim != vit.embed_dim) throw ConfigError("text.output_dim must equal vit.embed_dim");
    if (n_ctx == 0) throw ConfigError("prompt.n_ctx must be positive");
    if (components.lora && (lora_rank == 0 || lora_rank > vit.embed_dim)) {
      throw ConfigError("lora.rank must lie in [1, vit.embed_dim]");
    }
    if (sgc.clusters == 0) throw ConfigError("sgc.k must be positive");
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    if (proj_dim == 0) throw ConfigError("loss.proj_dim must be positive");
    margin.validate();
    weights.validate();
  }

  /// Weights actually applied: the hierarchy switch zeroes the coarse-level and margin terms.
  LossWeights effective_weights() const {
    LossWeights w = weights;
    if (!components.hierarchy) w.level0 = w.margin = 0.0;
    return w;
  }

  /// Number of trainable scalars implied by the configuration.
  std::size_t analytic_trainable_count() const {
    const std::size_t d = vit.embed_dim, k = sgc.clusters;
    std::size_t n = 0;
    if (components.soft_prompt) n += 2 * n_ctx * text.width;
    if (components.lora) n += vit.layers * 3 * lora_rank * (d + d);
    if (components.sgc) {
      n += d * d + 2 * d;
      n += sgc.assign_source == AssignSource::Linear ? d * k + k : k * d + 2 * k;
    }
    if (components.hierarchy) n += (2 * d * proj_dim + proj_dim) + (d * proj_dim + proj_dim);
    if (learn_tau) n += 1;
    return n;
  }
};

struct TextFeatures {
  Tensor z0, z1;  // undefined when not requested
  std::vector<std::size_t> cols0, cols1;
};

struct ImageFeatures {
  Tensor v, v_oc;                                // B × d
  std::vector<ClusterAssignment> assignments;    // per image, empty without SGC
};

struct LossTerms {
  Tensor l0, l1, margin, total;
};

/// Frozen vision/text encoders with prompts, adapters, SGC and projection heads on top.
class FineClipModel {
 public:
  FineClipModel(const ModelConfig& cfg, const Taxonomy& tax) : cfg_(cfg), tax_(tax) {
    cfg_.validate();
    const std::uint64_t s = cfg_.seed;
    vit_ = VisionEncoder(cfg_.vit, mix_seed(s, 1));
    text_ = TextEncoder(cfg_.text, cfg_.n_ctx, mix_seed(s, 2));
    prompts_ = PromptBank::create(tax, cfg_.n_ctx, cfg_.text.width, mix_seed(s, 3), cfg_.components.soft_prompt);
    if (cfg_.components.lora) vit_.attach_lora(cfg_.lora_rank, cfg_.lora_alpha, mix_seed(s, 4));
    if (cfg_.components.sgc) sgc_ = SemanticGraphCondensation(cfg_.vit.embed_dim, cfg_.sgc, mix_seed(s, 5));
    if (cfg_.components.hierarchy) {
      Rng rng(mix_seed(s, 6));
      heads_ = ProjectionHeads(cfg_.vit.embed_dim, cfg_.proj_dim, rng);
    }
    if (cfg_.learn_tau) log_tau_ = Tensor::scalar(std::log(cfg_.tau), true);
  }

  const ModelConfig& config() const { return cfg_; }
  const Taxonomy& taxonomy() const { return tax_; }
  const VisionEncoder& vision() const { return vit_; }
  VisionEncoder& vision() { return vit_; }
  const PromptBank& prompts() const { return prompts_; }

  double tau() const { return cfg_.learn_tau ? std::exp(log_tau_.item()) : cfg_.tau; }

  /// Every tensor the model owns, frozen or not, under stable names.
  ParamList parameters() const {
    ParamList ps;
    vit_.collect(ps);
    vit_.collect_lora(ps);
    text_.collect(ps);
    prompts_.collect(ps);
    if (cfg_.components.sgc) sgc_.collect(ps);
    if (cfg_.components.hierarchy) heads_.collect(ps);
    if (cfg_.learn_tau) ps.push_back({"tau.log", log_tau_});
    return ps;
  }

  ParamList trainable() const {
    ParamList out;
    for (auto& p : parameters())
      if (p.tensor.requires_grad()) out.push_back(p);
    return out;
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& p : trainable()) n += p.tensor.numel();
    return n;
  }

  /// Text embeddings for the listed fine (and optionally coarse) class columns.
  TextFeatures encode_text(std::span<const std::size_t> cols1, std::span<const std::size_t> cols0 = {}) const {
    TextFeatures t;
    t.cols1.assign(cols1.begin(), cols1.end());
    t.cols0.assign(cols0.begin(), cols0.end());
    t.z1 = encode_level(prompts_, 1, text_, cols1);
    if (!cols0.empty()) t.z0 = encode_level(prompts_, 0, text_, cols0);
    return t;
  }

  ImageFeatures encode_images(std::span<const Image* const> images) const {
    const auto enc = vit_.encode(images);
    ImageFeatures f;
    f.v = enc.v;
    if (!cfg_.components.sgc) {
      f.v_oc = enc.v;
      return f;
    }
    const std::size_t N = cfg_.vit.num_patches(), d = cfg_.vit.embed_dim;
    std::vector<Tensor> rows;
    rows.reserve(images.size());
    for (std::size_t b = 0; b < images.size(); ++b) {
      const auto out = sgc_.forward(slice(enc.keys, b * N, (b + 1) * N, 0, d));
      rows.push_back(object_attention(slice(enc.v, b, b + 1, 0, d), out.condensed.f_oc).v_oc);
      f.assignments.push_back(out.condensed.assignment);
    }
    f.v_oc = concat_rows(rows);
    return f;
  }

  LogitBundle logits(const ImageFeatures& img, const TextFeatures& txt) const {
    LogitBundle b;
    b.tau = tau();
    auto level = [&](const Tensor& z, Tensor& y, Tensor& y_oc, Tensor& fused) {
      if (!z.defined()) return;
      y = cfg_.learn_tau ? image_logits(img.v, z, exp(log_tau_)) : image_logits(img.v, z, cfg_.tau);
      if (!cfg_.components.sgc) {
        y_oc = y;
      } else {
        y_oc = cfg_.learn_tau ? image_logits(img.v_oc, z, exp(log_tau_)) : image_logits(img.v_oc, z, cfg_.tau);
      }
      fused = fuse(y, y_oc);
    };
    level(txt.z0, b.y0, b.y0_oc, b.fused0);
    level(txt.z1, b.y1, b.y1_oc, b.fused1);
    return b;
  }

  /// Labels are 0/1 tensors over txt.cols1 (B×C₁) and txt.cols0 (B×C₀).
  LossTerms loss(const ImageFeatures& img, const TextFeatures& txt, const LogitBundle& logits,
                 const Tensor& labels1, const Tensor& labels0, std::uint64_t step) const {
    LossTerms t;
    const LossWeights w = cfg_.effective_weights();
    t.l1 = bce_level(logits.fused1, labels1);
    t.l0 = Tensor::scalar(0.0);
    t.margin = Tensor::scalar(0.0);
    if (cfg_.components.hierarchy) {
      if (logits.fused0.defined()) t.l0 = bce_level(logits.fused0, labels0);
      std::vector<std::size_t> parents;
      for (std::size_t c : txt.cols1) parents.push_back(tax_.parent_of(c));
      Rng rng(mix_seed(cfg_.seed, step, 0x3a));
      const auto plan = mine_pairs(parents, active_columns(labels1), cfg_.margin.negatives_per_pair, rng);
      if (!plan.positives.empty()) {
        const auto h = class_embeddings(img.v, img.v_oc, txt.z1, heads_);
        t.margin = margin_loss(h, plan, cfg_.margin.margin);
      }
    }
    t.total = total_loss(t.l0, t.l1, t.margin, w);
    return t;
  }

  /// Fused fine-level logits for the listed columns, no graph retained.
  std::vector<double> score(std::span<const Image* const> images, const TextFeatures& txt) const {
    const auto lb = logits(encode_images(images), txt);
    return lb.fused1.to_vector();
  }

  /// Checkpoint: header line, tab-separated manifest `name offset bytes`, then concatenated `.ten` blobs.
  void save(const std::filesystem::path& path) const {
    const auto ps = parameters();
    std::ostringstream blobs(std::ios::binary);
    std::ostringstream manifest;
    for (const auto& p : ps) {
      const auto offset = static_cast<std::uint64_t>(blobs.tellp());
      write_tensor(blobs, p.tensor);
      manifest << p.name << '\t' << offset << '\t' << ten_byte_size(p.tensor) << '\n';
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot write checkpoint " + path.string());
    os << kCheckpointMagic << '\n' << ps.size() << '\n' << manifest.str();
    const std::string data = blobs.str();
    os.write(data.data(), static_cast<std::streamsize>(data.size()));
  }

  /// Overwrites every parameter from a checkpoint written by a model of the same configuration.
  void load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open checkpoint " + path.string());
    std::string magic;
    std::getline(in, magic);
    if (magic != kCheckpointMagic) throw ConfigError("not a checkpoint: " + path.string());
    std::string line;
    std::getline(in, line);
    const std::size_t count = std::stoul(line);
    std::map<std::string, std::uint64_t> offsets;
    for (std::size_t i = 0; i < count; ++i) {
      std::getline(in, line);
      const auto t1 = line.find('\t'), t2 = line.find('\t', t1 + 1);
      if (t1 == std::string::npos || t2 == std::string::npos) throw ConfigError("corrupt checkpoint manifest");
      offsets[line.substr(0, t1)] = std::stoull(line.substr(t1 + 1, t2 - t1 - 1));
    }
    const auto base = in.tellg();
    for (auto& p : parameters()) {
      const auto it = offsets.find(p.name);
      if (it == offsets.end()) throw ConfigError("checkpoint lacks tensor " + p.name);
      in.seekg(base + static_cast<std::streamoff>(it->second));
      const Tensor t = read_tensor(in);
      if (t.shape() != p.tensor.shape()) {
        throw ConfigError("checkpoint tensor " + p.name + " has shape " + shape_string(t.shape()) + ", model expects " +
                          shape_string(p.tensor.shape()));
      }
      auto dst = p.tensor.mutable_data();
      std::copy(t.data().begin(), t.data().end(), dst.begin());
    }
    if (offsets.size() != parameters().size()) throw ConfigError("checkpoint has tensors this model does not own");
  }

 private:
  static constexpr const char* kCheckpointMagic = "fineclip-checkpoint 1";

  ModelConfig cfg_;
  Taxonomy tax_;
  VisionEncoder vit_;
  TextEncoder text_;
  PromptBank prompts_;
  SemanticGraphCondensation sgc_;
  ProjectionHeads heads_;
  Tensor log_tau_;
};

/// Class columns used in training: base fine classes and their coarse parents.
struct TrainingColumns {
  std::vector<std::size_t> fine, coarse;
};

inline TrainingColumns training_columns(const Taxonomy& tax, std::span<const std::size_t> base_classes) {
  TrainingColumns cols;
  cols.fine.assign(base_classes.begin(), base_classes.end());
  std::vector<std::uint8_t> seen(tax.num_pairs(), 0);
  for (std::size_t c : base_classes) seen[tax.parent_of(c)] = 1;
  for (std::size_t p = 0; p < seen.size(); ++p)
    if (seen[p]) cols.coarse.push_back(p);
  return cols;
}

/// B×|cols| label tensor restricted to the given columns.
inline Tensor label_tensor(std::span<const std::vector<std::uint8_t>* const> rows, std::span<const std::size_t> cols) {
  std::vector<double> data;
  data.reserve(rows.size() * cols.size());
  for (const auto* r : rows)
    for (std::size_t c : cols) data.push_back((*r)[c]);
  return Tensor({rows.size(), cols.size()}, std::move(data));
}

}  // namespace fineclip
