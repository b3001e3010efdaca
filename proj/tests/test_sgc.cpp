#include <gtest/gtest.h>

#include <cmath>

#include "fineclip/grad_check.hpp"
#include "fineclip/sgc.hpp"

using namespace fineclip;

namespace {

Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) {
  return take_rows(x.detach(), perm);
}

double elu_ref(double x) { return x > 0 ? x : std::exp(x) - 1.0; }

}  // namespace

TEST(BuildGraph, OrthogonalFeatures) {
  const auto g = build_graph(Tensor::matrix(2, 2, {1, 0, 0, 3}));
  EXPECT_EQ(g.affinity.to_vector(), (std::vector<double>{1, 0, 0, 1}));
}

TEST(BuildGraph, IdenticalFeaturesAllOnes) {
  const auto g = build_graph(Tensor::matrix(3, 2, {1, 2, 1, 2, 1, 2}));
  for (double a : g.affinity.data()) EXPECT_NEAR(a, 1.0, 1e-15);
}

TEST(BuildGraph, HalfRootTwoCosine) {
  const double r = 1.0 / std::sqrt(2.0);
  const auto g = build_graph(Tensor::matrix(2, 2, {1, 0, r, r}));
  EXPECT_NEAR(g.affinity.at(0, 1), std::sqrt(2.0) / 2.0, 1e-12);
  EXPECT_NEAR(g.affinity.at(1, 0), 0.7071, 1e-4);
}

TEST(BuildGraph, ZeroRowIsolated) {
  const auto g = build_graph(Tensor::matrix(3, 2, {1, 0, 0, 0, 1, 1}));
  EXPECT_EQ(g.affinity.at(1, 1), 1.0);
  EXPECT_EQ(g.affinity.at(1, 0), 0.0);
  EXPECT_EQ(g.affinity.at(2, 1), 0.0);
}

TEST(BuildGraph, SymmetricUnitDiagonalBounded) {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const auto g = build_graph(randn({7, 5}, 1.0, rng));
    for (std::size_t i = 0; i < 7; ++i) {
      EXPECT_EQ(g.affinity.at(i, i), 1.0);
      for (std::size_t l = 0; l < 7; ++l) {
        EXPECT_EQ(g.affinity.at(i, l), g.affinity.at(l, i));
        EXPECT_LE(std::abs(g.affinity.at(i, l)), 1.0 + 1e-12);
      }
    }
  }
}

TEST(BuildGraph, TopkMaskKeepsSelfAndNearest) {
  Rng rng(2);
  const auto g = build_graph(randn({6, 3}, 1.0, rng), 2);
  ASSERT_TRUE(g.edge_mask.defined());
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(g.edge_mask.at(i, i), 0.0);
    std::size_t kept = 0;
    for (std::size_t l = 0; l < 6; ++l) {
      EXPECT_EQ(g.edge_mask.at(i, l), g.edge_mask.at(l, i));
      kept += g.edge_mask.at(i, l) == 0.0;
    }
    EXPECT_GE(kept, 3u);
  }
  EXPECT_FALSE(build_graph(randn({6, 3}, 1.0, rng)).edge_mask.defined());
}

TEST(GAT, SingleNodeIsActivatedProjection) {
  Rng rng(3);
  const GATLayer layer(3, 3, rng);
  const Tensor x = Tensor::matrix(1, 3, {0.5, -1.0, 2.0});
  const auto out = gat_forward(build_graph(x), layer).features;
  const Tensor ref = elu(matmul_nt(x, layer.weight));
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(out.at(0, j), ref.at(0, j), 1e-14);
}

TEST(GAT, TwoNodeHandOracle) {
  GATLayer layer;
  layer.weight = Tensor::matrix(2, 2, {1.0, 0.5, 0.0, 1.0});
  layer.attention = Tensor::row({0.3, -0.2, 0.1, 0.4});
  const double X[2][2] = {{1.0, 0.0}, {0.0, 2.0}};
  const auto g = build_graph(Tensor::matrix(2, 2, {1, 0, 0, 2}));
  const auto out = gat_forward(g, layer);

  double wh[2][2];
  for (int i = 0; i < 2; ++i) {
    wh[i][0] = 1.0 * X[i][0] + 0.5 * X[i][1];
    wh[i][1] = 0.0 * X[i][0] + 1.0 * X[i][1];
  }
  const double aff[2][2] = {{1, 0}, {0, 1}};
  for (int i = 0; i < 2; ++i) {
    double e[2];
    for (int l = 0; l < 2; ++l) {
      const double raw = 0.3 * wh[i][0] - 0.2 * wh[i][1] + 0.1 * wh[l][0] + 0.4 * wh[l][1];
      e[l] = (raw > 0 ? raw : 0.2 * raw) + aff[i][l];
    }
    const double z = std::exp(e[0]) + std::exp(e[1]);
    const double a0 = std::exp(e[0]) / z, a1 = std::exp(e[1]) / z;
    EXPECT_NEAR(out.coefficients.at(i, 0), a0, 1e-14);
    for (int c = 0; c < 2; ++c) EXPECT_NEAR(out.features.at(i, c), elu_ref(a0 * wh[0][c] + a1 * wh[1][c]), 1e-14);
  }
}

TEST(GAT, CoefficientsRowStochastic) {
  Rng rng(4);
  const GATLayer layer(4, 4, rng);
  const auto out = gat_forward(build_graph(randn({9, 4}, 1.0, rng)), layer);
  for (std::size_t i = 0; i < 9; ++i) {
    double s = 0.0;
    for (std::size_t l = 0; l < 9; ++l) s += out.coefficients.at(i, l);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(GAT, PermutationEquivariance) {
  Rng rng(5);
  const GATLayer layer(4, 4, rng);
  const Tensor x = randn({6, 4}, 1.0, rng);
  const std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
  const Tensor a = gat_forward(build_graph(x), layer).features;
  const Tensor b = gat_forward(build_graph(permute_rows(x, perm)), layer).features;
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(b.at(r, c), a.at(perm[r], c), 1e-12);
}

TEST(Condense, SingleClusterPoolsAllRows) {
  Rng rng(6);
  const Tensor x = randn({5, 3}, 1.0, rng);
  const auto c = condense_logits(x, Tensor::zeros({5, 1}));
  ASSERT_EQ(c.f_oc.shape(), (Shape{1, 3}));
  for (std::size_t j = 0; j < 3; ++j) {
    double total = 0.0;
    for (std::size_t i = 0; i < 5; ++i) total += x.at(i, j);
    EXPECT_NEAR(c.f_oc.at(0, j), total, 1e-12);
  }
  const auto uniform = matmul(Tensor::full({1, 5}, 0.2), x);
  const auto two = condense_logits(x, Tensor::zeros({5, 2}));
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(two.f_oc.at(0, j), 2.5 * uniform.at(0, j), 1e-12);
}

TEST(Condense, OneHotAssignmentSumsAssignedRows) {
  const Tensor x = Tensor::matrix(4, 2, {1, 2, 3, 4, 5, 6, 7, 8});
  const std::vector<std::size_t> cluster = {0, 1, 0, 2};
  std::vector<double> logits(4 * 3, 0.0);
  for (std::size_t i = 0; i < 4; ++i) logits[i * 3 + cluster[i]] = 1000.0;
  const auto c = condense_logits(x, Tensor({4, 3}, logits));
  EXPECT_EQ(c.f_oc.to_vector(), (std::vector<double>{6, 8, 3, 4, 7, 8}));
  EXPECT_EQ(c.assignment.hard_labels(), cluster);
}

TEST(SGC, FifteenClusterShape) {
  SGCConfig cfg;
  cfg.clusters = 15;
  const SemanticGraphCondensation sgc(8, cfg, 1);
  Rng rng(7);
  const auto out = sgc.forward(randn({16, 8}, 1.0, rng));
  EXPECT_EQ(out.condensed.f_oc.shape(), (Shape{15, 8}));
  EXPECT_EQ(out.condensed.assignment.k(), 15u);
}

TEST(SGC, AssignmentRowStochasticAndPositive) {
  for (auto source : {AssignSource::Linear, AssignSource::Gat}) {
    SGCConfig cfg;
    cfg.assign_source = source;
    const SemanticGraphCondensation sgc(6, cfg, 2);
    Rng rng(8);
    for (int t = 0; t < 5; ++t) {
      const auto S = sgc.forward(randn({10, 6}, 1.0, rng)).condensed.assignment.S;
      for (std::size_t i = 0; i < 10; ++i) {
        double s = 0.0;
        for (std::size_t c = 0; c < 4; ++c) {
          EXPECT_GT(S.at(i, c), 0.0);
          s += S.at(i, c);
        }
        EXPECT_NEAR(s, 1.0, 1e-6);
      }
    }
  }
}

TEST(SGC, ClusterFeaturesInvariantToNodeOrder) {
  const SemanticGraphCondensation sgc(5, SGCConfig{}, 3);
  Rng rng(9);
  const Tensor keys = randn({7, 5}, 1.0, rng);
  const std::vector<std::size_t> perm = {6, 2, 0, 4, 1, 3, 5};
  const auto a = sgc.forward(keys).condensed.f_oc.to_vector();
  const auto b = sgc.forward(permute_rows(keys, perm)).condensed.f_oc.to_vector();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(SGC, ZeroClustersRejected) {
  SGCConfig cfg;
  cfg.clusters = 0;
  EXPECT_THROW(SemanticGraphCondensation(4, cfg, 1), ConfigError);
}

TEST(SGC, GradCheckThroughGraphGatAndCondense) {
  for (auto source : {AssignSource::Linear, AssignSource::Gat}) {
    SGCConfig cfg;
    cfg.clusters = 3;
    cfg.assign_source = source;
    const SemanticGraphCondensation sgc(4, cfg, 4);
    Rng rng(10);
    const Tensor keys = randn({5, 4}, 1.0, rng, true);
    const Tensor probe = randn({3, 4}, 1.0, rng);
    ParamList ps;
    sgc.collect(ps);
    std::vector<Tensor> params = {keys};
    for (const auto& p : ps) params.push_back(p.tensor);
    const double err = grad_check([&] { return sum(mul(sgc.forward(keys).condensed.f_oc, probe)); }, params);
    EXPECT_LT(err, 1e-4);
  }
}
