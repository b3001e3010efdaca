#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>

#include "fineclip/config.hpp"
#include "fineclip/data.hpp"
#include "fineclip/grad_check.hpp"
#include "fineclip/model.hpp"
#include "fineclip/optim.hpp"

using namespace fineclip;
namespace fs = std::filesystem;

namespace {

Taxonomy synthetic_taxonomy() { return Taxonomy::load(FINECLIP_DATA_DIR "/synthetic_vocabulary.txt"); }

std::vector<Components> all_component_sets() {
  std::vector<Components> out;
  for (int mask = 0; mask < 16; ++mask) out.push_back({bool(mask & 1), bool(mask & 2), bool(mask & 4), bool(mask & 8)});
  return out;
}

void perturb_lora(FineClipModel& m, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 0.05);
  for (auto& p : m.parameters()) {
    if (p.name.rfind("lora.", 0) != 0 || p.name.back() != 'B') continue;
    auto w = p.tensor.mutable_data();
    for (auto& x : w) x = n(rng);
  }
}

struct Batch {
  std::vector<Image> images;
  std::vector<std::vector<std::uint8_t>> labels;

  std::vector<const Image*> image_ptrs() const {
    std::vector<const Image*> out;
    for (const auto& i : images) out.push_back(&i);
    return out;
  }
  std::vector<const std::vector<std::uint8_t>*> label_ptrs() const {
    std::vector<const std::vector<std::uint8_t>*> out;
    for (const auto& l : labels) out.push_back(&l);
    return out;
  }
};

Batch make_batch(const Taxonomy& tax, std::size_t n, std::uint64_t seed) {
  const auto bundle = generate(SceneSpec::for_taxonomy(tax), tax, n, seed);
  Batch b;
  for (const auto& f : bundle.frames) {
    b.images.push_back(f.image);
    b.labels.push_back(f.annotation.labels);
  }
  return b;
}

// Two classes sharing a parent in one frame, so margin pairs always exist.
void add_sibling_frame(Batch& b, const Taxonomy& tax, std::size_t first, std::size_t second) {
  SceneDescription scene;
  scene.items.push_back({first, 0, 0, 0, 0});
  scene.items.push_back({second, 3, 1, 1, 0});
  b.images.push_back(render(SceneSpec::for_taxonomy(tax), tax, scene));
  b.labels.push_back(labels_of(scene, tax.num_triplets()));
}

}  // namespace

TEST(Model, AnalyticTrainableCountMatchesEveryComponentSet) {
  const auto tax = synthetic_taxonomy();
  for (const auto& comps : all_component_sets()) {
    for (auto src : {AssignSource::Linear, AssignSource::Gat}) {
      ModelConfig cfg;
      cfg.components = comps;
      cfg.sgc.assign_source = src;
      const FineClipModel m(cfg, tax);
      EXPECT_EQ(m.trainable_count(), cfg.analytic_trainable_count())
          << comps.soft_prompt << comps.lora << comps.hierarchy << comps.sgc;
    }
  }
  ModelConfig cfg;
  cfg.learn_tau = true;
  EXPECT_EQ(FineClipModel(cfg, tax).trainable_count(), cfg.analytic_trainable_count());
}

TEST(Model, NothingSwitchedOnMeansNothingTrainable) {
  ModelConfig cfg;
  cfg.components = {false, false, false, false};
  EXPECT_EQ(FineClipModel(cfg, synthetic_taxonomy()).trainable_count(), 0u);
}

TEST(Model, FrozenEncoderWeightsAreNeverTrainable) {
  const FineClipModel m(ModelConfig{}, synthetic_taxonomy());
  for (const auto& p : m.trainable()) {
    EXPECT_TRUE(p.name.rfind("vit.", 0) != 0 && p.name.rfind("text.", 0) != 0) << p.name;
    EXPECT_NE(p.name, "prompt.cls0");
    EXPECT_NE(p.name, "prompt.cls1");
  }
}

TEST(Model, ComposedGradientMatchesFiniteDifferences) {
  const auto tax = synthetic_taxonomy();
  ModelConfig cfg;
  cfg.seed = 5;
  FineClipModel m(cfg, tax);
  perturb_lora(m, 99);
  std::vector<std::size_t> all(tax.num_triplets());
  std::iota(all.begin(), all.end(), 0);
  const auto cols = training_columns(tax, all);
  std::vector<Tensor> params;
  for (const auto& p : m.trainable()) params.push_back(p.tensor);

  const auto start = std::chrono::steady_clock::now();
  for (std::uint64_t s = 0; s < 5; ++s) {
    Batch b = make_batch(tax, 7, 100 + s);
    add_sibling_frame(b, tax, 0, 1);
    ASSERT_EQ(tax.parent_of(0), tax.parent_of(1));
    const auto imgs = b.image_ptrs();
    const auto rows = b.label_ptrs();
    const Tensor y1 = label_tensor(rows, cols.fine);
    std::vector<std::vector<std::uint8_t>> coarse;
    for (const auto& l : b.labels) coarse.push_back(tax.pair_labels(l));
    std::vector<const std::vector<std::uint8_t>*> coarse_ptrs;
    for (const auto& c : coarse) coarse_ptrs.push_back(&c);
    const Tensor y0 = label_tensor(coarse_ptrs, cols.coarse);
    auto f = [&] {
      const auto txt = m.encode_text(cols.fine, cols.coarse);
      const auto img = m.encode_images(imgs);
      return m.loss(img, txt, m.logits(img, txt), y1, y0, s).total;
    };
    std::vector<std::size_t> parents;
    for (std::size_t c : cols.fine) parents.push_back(tax.parent_of(c));
    Rng mining(0);
    ASSERT_FALSE(mine_pairs(parents, active_columns(y1), 5, mining).positives.empty()) << "batch " << s;
    const double err = grad_check(f, params, GradCheckOptions{.eps = 1e-4, .max_coords_per_tensor = 3, .seed = s});
    EXPECT_LT(err, 1e-4) << "batch " << s;
  }
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 60.0);
}

TEST(Model, WithoutCondensationFusedEqualsPlainLogits) {
  const auto tax = synthetic_taxonomy();
  ModelConfig cfg;
  cfg.components.sgc = false;
  const FineClipModel m(cfg, tax);
  const Batch b = make_batch(tax, 2, 3);
  const auto imgs = b.image_ptrs();
  std::vector<std::size_t> cols = {0, 1, 2};
  const auto lb = m.logits(m.encode_images(imgs), m.encode_text(cols));
  EXPECT_EQ(lb.fused1.to_vector(), lb.y1.to_vector());
  EXPECT_FALSE(lb.fused0.defined());
}

TEST(Model, CheckpointRoundTripRestoresScores) {
  const auto tax = synthetic_taxonomy();
  ModelConfig cfg;
  cfg.seed = 1;
  FineClipModel a(cfg, tax);
  perturb_lora(a, 4);
  const auto path = fs::temp_directory_path() / "fineclip_model.ckpt";
  a.save(path);

  ModelConfig other = cfg;
  other.seed = 2;
  FineClipModel b(other, tax);
  const Batch batch = make_batch(tax, 4, 8);
  const auto imgs = batch.image_ptrs();
  std::vector<std::size_t> cols(tax.num_triplets());
  std::iota(cols.begin(), cols.end(), 0);
  EXPECT_NE(a.score(imgs, a.encode_text(cols)), b.score(imgs, b.encode_text(cols)));
  b.load(path);
  EXPECT_EQ(a.score(imgs, a.encode_text(cols)), b.score(imgs, b.encode_text(cols)));
  const auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].tensor.to_vector(), pb[i].tensor.to_vector()) << pa[i].name;
  fs::remove(path);
}

TEST(Model, CheckpointFromDifferentShapeRejected) {
  const auto tax = synthetic_taxonomy();
  ModelConfig cfg;
  const auto path = fs::temp_directory_path() / "fineclip_model_shape.ckpt";
  FineClipModel(cfg, tax).save(path);
  ModelConfig wider = cfg;
  wider.sgc.clusters = 6;
  FineClipModel m(wider, tax);
  EXPECT_THROW(m.load(path), ConfigError);
  fs::remove(path);
}

TEST(Optim, ZeroLearningRateLeavesParametersUnchanged) {
  const auto tax = synthetic_taxonomy();
  ModelConfig cfg;
  cfg.weights.margin = 1.0;
  FineClipModel m(cfg, tax);
  const auto before = m.trainable();
  std::vector<std::vector<double>> snapshot;
  for (const auto& p : before) snapshot.push_back(p.tensor.to_vector());

  AdamWConfig oc;
  oc.lr = 0.0;
  AdamW opt(m.trainable(), oc);
  const Batch b = make_batch(tax, 4, 2);
  const auto imgs = b.image_ptrs();
  const auto rows = b.label_ptrs();
  std::vector<std::size_t> cols(tax.num_triplets());
  std::iota(cols.begin(), cols.end(), 0);
  for (std::uint64_t step = 0; step < 3; ++step) {
    opt.zero_grad();
    const auto txt = m.encode_text(cols);
    const auto img = m.encode_images(imgs);
    m.loss(img, txt, m.logits(img, txt), label_tensor(rows, cols), Tensor(), step).total.backward();
    opt.step();
  }
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i].tensor.to_vector(), snapshot[i]) << before[i].name;
}

TEST(Optim, AdamStepMovesAgainstGradient) {
  Tensor w = Tensor::row({1.0, -2.0}, true);
  AdamWConfig oc;
  oc.lr = 0.1;
  oc.weight_decay = 0.0;
  AdamW opt({{"w", w}}, oc);
  sum(w).backward();
  opt.step();
  const double step = 0.1 / (1.0 + oc.eps);
  EXPECT_NEAR(w.data()[0], 1.0 - step, 1e-14);
  EXPECT_NEAR(w.data()[1], -2.0 - step, 1e-14);
}

TEST(Optim, NoDecaySetSkipsDecay) {
  Tensor a = Tensor::row({1.0}, true), b = Tensor::row({1.0}, true);
  AdamWConfig oc;
  oc.lr = 0.1;
  oc.weight_decay = 0.5;
  AdamW opt({{"a", a}, {"b", b}}, oc, {"b"});
  scale(add(a, b), 0.0).backward();
  opt.step();
  EXPECT_NEAR(a.item(), 0.95, 1e-12);
  EXPECT_NEAR(b.item(), 1.0, 1e-12);
}

TEST(Config, DefaultsRoundTripThroughText) {
  const RunConfig cfg;
  std::istringstream in(config_string(cfg));
  EXPECT_EQ(config_string(parse_config(in)), config_string(cfg));
}

TEST(Config, EditedValuesRoundTrip) {
  RunConfig cfg;
  set_config_value(cfg, "sgc.k", "15");
  set_config_value(cfg, "optim.lr", "0.00123");
  set_config_value(cfg, "components.sgc", "false");
  set_config_value(cfg, "data.setting", "UIV");
  set_config_value(cfg, "ablate.k", "5,10,15");
  std::istringstream in(config_string(cfg));
  const RunConfig back = parse_config(in);
  EXPECT_EQ(back.model.sgc.clusters, 15u);
  EXPECT_EQ(back.optim.lr, 0.00123);
  EXPECT_FALSE(back.model.components.sgc);
  EXPECT_EQ(back.setting, Setting::UIV);
  EXPECT_EQ(back.ablate_k, (std::vector<std::size_t>{5, 10, 15}));
}

TEST(Config, UnknownKeyRejectedWithLine) {
  std::istringstream in("[sgc]\nk = 4\n[sgc]\nclusterz = 3\n");
  try {
    parse_config(in);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4u);
  }
  RunConfig cfg;
  EXPECT_THROW(set_config_value(cfg, "sgc.clusterz", "3"), ConfigError);
}

TEST(Config, MalformedValuesRejected) {
  RunConfig cfg;
  EXPECT_THROW(set_config_value(cfg, "sgc.k", "-1"), ConfigError);
  EXPECT_THROW(set_config_value(cfg, "optim.lr", "fast"), ConfigError);
  EXPECT_THROW(set_config_value(cfg, "components.lora", "maybe"), ConfigError);
  std::istringstream orphan("k = 3\n");
  EXPECT_THROW(parse_config(orphan), ParseError);
}

TEST(Config, ValidateRejectsZeroClusters) {
  RunConfig cfg;
  cfg.model.sgc.clusters = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}
