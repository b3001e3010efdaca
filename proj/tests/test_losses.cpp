#include <gtest/gtest.h>

#include <cmath>

#include "fineclip/grad_check.hpp"
#include "fineclip/losses.hpp"

using namespace fineclip;

namespace {

double bce_ref(double x, double y) {
  const double p = 1.0 / (1.0 + std::exp(-x));
  return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
}

Tensor unit_at(double degrees) {
  const double r = degrees * M_PI / 180.0;
  return Tensor::row({std::cos(r), std::sin(r)});
}

Tensor rows_at(const std::vector<double>& degrees) {
  std::vector<Tensor> rows;
  for (double d : degrees) rows.push_back(unit_at(d));
  return concat_rows(rows);
}

double margin_at(const std::vector<double>& degrees, const MarginPlan& plan, double m) {
  const Tensor h[] = {rows_at(degrees)};
  return margin_loss(h, plan, m).item();
}

}  // namespace

TEST(BCE, ZeroLogitPositiveLabel) {
  EXPECT_NEAR(bce_level(Tensor::row({0.0}), Tensor::row({1.0})).item(), std::log(2.0), 1e-15);
}

TEST(BCE, Saturation) {
  EXPECT_LT(bce_level(Tensor::row({20.0}), Tensor::row({1.0})).item(), 1e-8);
  EXPECT_LT(bce_level(Tensor::row({-800.0}), Tensor::row({0.0})).item(), 1e-300);
  EXPECT_TRUE(std::isfinite(bce_level(Tensor::row({-800.0}), Tensor::row({1.0})).item()));
}

TEST(BCE, HandTwoClasses) {
  const double l = bce_level(Tensor::row({0.5, -0.5}), Tensor::row({1, 0})).item();
  EXPECT_NEAR(l, 2.0 * std::log(1.0 + std::exp(-0.5)), 1e-14);
  EXPECT_NEAR(l, 0.4741 + 0.4741, 2e-4);
}

TEST(BCE, SumsClassesAveragesBatch) {
  const Tensor x = Tensor::matrix(2, 2, {0.5, -1.0, 2.0, 0.0});
  const Tensor y = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const double expect = (bce_ref(0.5, 1) + bce_ref(-1, 0) + bce_ref(2, 0) + bce_ref(0, 1)) / 2.0;
  EXPECT_NEAR(bce_level(x, y).item(), expect, 1e-14);
}

TEST(BCE, ExhaustiveSmallCasesMatchClosedForm) {
  const double grid[] = {-6.0, -1.5, -0.25, 0.0, 0.3, 2.0, 7.0};
  for (double a : grid) {
    for (int ya = 0; ya < 2; ++ya) {
      const double one = bce_level(Tensor::row({a}), Tensor::row({double(ya)})).item();
      EXPECT_GE(one, 0.0);
      EXPECT_NEAR(one, bce_ref(a, ya), 1e-12);
      for (double b : grid) {
        for (int yb = 0; yb < 2; ++yb) {
          const double two = bce_level(Tensor::row({a, b}), Tensor::row({double(ya), double(yb)})).item();
          EXPECT_NEAR(two, bce_ref(a, ya) + bce_ref(b, yb), 1e-12);
        }
      }
    }
  }
}

TEST(BCE, NonBinaryLabelsRejected) {
  EXPECT_THROW(bce_level(Tensor::row({0, 0}), Tensor::row({1, 0.5})), DomainError);
  EXPECT_THROW(bce_level(Tensor::row({0, 0}), Tensor::row({1})), ShapeError);
}

TEST(BCE, GradCheck) {
  Rng rng(1);
  const Tensor x = randn({3, 4}, 2.0, rng, true);
  const Tensor y = Tensor::matrix(3, 4, {1, 0, 0, 1, 0, 0, 1, 1, 0, 1, 0, 0});
  EXPECT_LT(grad_check([&] { return bce_level(x, y); }, {x}), 1e-4);
}

TEST(ClassEmbeddings, HandElementwiseProduct) {
  Rng rng(2);
  ProjectionHeads heads(1, 2, rng);
  heads.image.weight = Tensor::matrix(2, 2, {1, 0, 0, 2});
  heads.image.bias = Tensor::zeros({1, 2});
  heads.text.weight = Tensor::matrix(2, 1, {3, 4});
  heads.text.bias = Tensor::zeros({1, 2});
  const auto h = class_embeddings(Tensor::row({1}), Tensor::row({1}), Tensor::matrix(1, 1, {1}), heads);
  ASSERT_EQ(h.size(), 1u);
  EXPECT_EQ(h[0].to_vector(), (std::vector<double>{3, 8}));
}

TEST(ClassEmbeddings, SharedTextRowsAndZeroImage) {
  Rng rng(3);
  ProjectionHeads heads(4, 3, rng);
  const Tensor z = Tensor::matrix(3, 4, {1, 2, 3, 4, 1, 2, 3, 4, 0, 1, 0, 1});
  const auto h = class_embeddings(randn({2, 4}, 1.0, rng), randn({2, 4}, 1.0, rng), z, heads);
  ASSERT_EQ(h.size(), 2u);
  for (const auto& hb : h) {
    EXPECT_EQ(hb.shape(), (Shape{3, 3}));
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(hb.at(0, c), hb.at(1, c));
  }
  heads.image.weight = Tensor::zeros({3, 8});
  const auto zero = class_embeddings(randn({1, 4}, 1.0, rng), randn({1, 4}, 1.0, rng), z, heads);
  for (double v : zero[0].data()) EXPECT_EQ(v, 0.0);
}

TEST(MarginPlan, PairsShareParentNegativesDoNot) {
  const std::vector<std::size_t> parents = {0, 0, 1, 1, 2, 0};
  const std::vector<std::uint8_t> active = {1, 1, 1, 0, 1, 1};
  Rng rng(4);
  const auto plan = mine_pairs(parents, active, 5, rng);
  ASSERT_EQ(plan.positives.size(), 3u);  // (0,1), (0,5), (1,5)
  for (std::size_t p = 0; p < plan.positives.size(); ++p) {
    const auto [i, j] = plan.positives[p];
    EXPECT_LT(i, j);
    EXPECT_EQ(parents[i], parents[j]);
    EXPECT_EQ(plan.negatives[p].size(), 3u);
    for (std::size_t k : plan.negatives[p]) EXPECT_NE(parents[k], parents[i]);
  }
}

TEST(MarginPlan, SamplingCappedAndDeterministic) {
  std::vector<std::size_t> parents(40);
  for (std::size_t c = 0; c < 40; ++c) parents[c] = c / 4;
  const std::vector<std::uint8_t> active(40, 1);
  Rng a(7), b(7);
  const auto pa = mine_pairs(parents, active, 5, a), pb = mine_pairs(parents, active, 5, b);
  EXPECT_EQ(pa.negatives, pb.negatives);
  for (const auto& neg : pa.negatives) {
    EXPECT_EQ(neg.size(), 5u);
    std::vector<std::size_t> sorted = neg;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(std::unique(sorted.begin(), sorted.end()), sorted.end());
  }
}

TEST(Margin, EmptyPairsGiveZero) {
  const std::vector<std::size_t> parents = {0, 1, 2};
  const std::vector<std::uint8_t> active = {1, 1, 1};
  Rng rng(1);
  const auto plan = mine_pairs(parents, active, 5, rng);
  EXPECT_TRUE(plan.positives.empty());
  const Tensor h[] = {rows_at({0, 10, 20})};
  EXPECT_EQ(margin_loss(h, plan, 0.7).item(), 0.0);
}

TEST(Margin, IdenticalEmbeddingsGiveMarginTimesNegatives) {
  std::vector<std::size_t> parents(12);
  for (std::size_t c = 0; c < 12; ++c) parents[c] = c / 2;
  std::vector<std::uint8_t> active(12, 0);
  active[0] = active[1] = active[4] = active[5] = 1;
  Rng rng(2);
  const auto plan = mine_pairs(parents, active, 5, rng);
  ASSERT_EQ(plan.positives.size(), 2u);
  const Tensor same = Tensor::full({12, 3}, 0.4);
  const Tensor h[] = {same, same, same};
  EXPECT_NEAR(margin_loss(h, plan, 0.7).item(), 0.7 * 5, 1e-12);
}

TEST(Margin, OppositeNegativeIsInactive) {
  MarginPlan plan;
  plan.positives = {{0, 1}};
  plan.negatives = {{2}};
  EXPECT_EQ(margin_at({0, 0, 180}, plan, 0.7), 0.0);
  // 90° negative: 0.7 + 0 − 1 < 0 as well; 30° negative: 0.7 − (1 − cos 30°) > 0
  EXPECT_EQ(margin_at({0, 0, 90}, plan, 0.7), 0.0);
  EXPECT_NEAR(margin_at({0, 0, 30}, plan, 0.7), 0.7 - (1.0 - std::cos(M_PI / 6)), 1e-12);
}

TEST(Margin, ZeroEmbeddingHasUnitDistance) {
  MarginPlan plan;
  plan.positives = {{0, 1}};
  plan.negatives = {{2}};
  const Tensor h[] = {Tensor::matrix(3, 2, {1, 0, 0, 0, 1, 0})};
  // d(0,1) = 1, d(0,2) = 0 → 0.7 + 1 − 0
  EXPECT_NEAR(margin_loss(h, plan, 0.7).item(), 1.7, 1e-12);
}

TEST(Margin, MonotoneInDistances) {
  MarginPlan plan;
  plan.positives = {{0, 1}};
  plan.negatives = {{2, 3}};
  Rng rng(5);
  std::uniform_real_distribution<double> angle(0.0, 170.0), step(0.5, 10.0);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> deg = {0.0, angle(rng), angle(rng), angle(rng)};
    const double base = margin_at(deg, plan, 0.7);
    EXPECT_GE(base, 0.0);
    auto further_neg = deg;
    further_neg[2] = std::min(180.0, deg[2] + step(rng));
    EXPECT_LE(margin_at(further_neg, plan, 0.7), base + 1e-12);
    auto further_pos = deg;
    further_pos[1] = std::min(180.0, deg[1] + step(rng));
    EXPECT_GE(margin_at(further_pos, plan, 0.7), base - 1e-12);
  }
}

TEST(Margin, GradCheck) {
  MarginPlan plan;
  plan.positives = {{0, 1}, {2, 3}};
  plan.negatives = {{2, 4}, {0, 4}};
  Rng rng(6);
  const Tensor h0 = randn({5, 3}, 1.0, rng, true), h1 = randn({5, 3}, 1.0, rng, true);
  const Tensor hs[] = {h0, h1};
  EXPECT_LT(grad_check([&] { return margin_loss(hs, plan, 1.5); }, {h0, h1}), 1e-4);
}

TEST(MarginConfig, RangeChecked) {
  MarginConfig cfg;
  cfg.margin = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.margin = 2.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.margin = 2.0;
  EXPECT_NO_THROW(cfg.validate());
}

TEST(TotalLoss, WeightedSums) {
  const Tensor l0 = Tensor::scalar(0.5), l1 = Tensor::scalar(9.0), lm = Tensor::scalar(0.25);
  EXPECT_DOUBLE_EQ(total_loss(l0, l1, lm, {2, 0, 1}).item(), 1.25);
  EXPECT_DOUBLE_EQ(total_loss(l0, l1, lm, {}).item(), 9.75);
  EXPECT_EQ(total_loss(l0, l1, lm, {0, 0, 0}).item(), 0.0);
  EXPECT_THROW((LossWeights{-1, 1, 1}.validate()), ConfigError);
}
