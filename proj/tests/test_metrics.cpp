#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fineclip/metrics.hpp"

using namespace fineclip;

namespace {

// Rank of frame i counted directly: frames with a higher score, or an equal score and lower index, come first.
double ap_by_rank_counting(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  const std::size_t F = s.size();
  auto ahead = [&](std::size_t j, std::size_t i) { return s[j] > s[i] || (s[j] == s[i] && j < i); };
  double total = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < F; ++i) {
    if (!y[i]) continue;
    ++positives;
    std::size_t rank = 1, hits = 1;
    for (std::size_t j = 0; j < F; ++j) {
      if (j == i || !ahead(j, i)) continue;
      ++rank;
      hits += y[j];
    }
    total += static_cast<double>(hits) / static_cast<double>(rank);
  }
  return positives ? total / static_cast<double>(positives) : -1.0;
}

ScoreTable table(std::size_t F, std::size_t C, std::vector<double> s, std::vector<std::uint8_t> y) {
  ScoreTable t;
  t.frames = F;
  for (std::size_t c = 0; c < C; ++c) t.class_ids.push_back(c);
  t.scores = std::move(s);
  t.labels = std::move(y);
  return t;
}

}  // namespace

TEST(AveragePrecision, PerfectRanking) {
  const std::vector<double> s = {0.9, 0.8, 0.3, 0.1};
  const std::vector<std::uint8_t> y = {1, 1, 0, 0};
  EXPECT_EQ(average_precision(s, y).value(), 1.0);
}

TEST(AveragePrecision, HandExample) {
  const std::vector<double> s = {0.9, 0.8, 0.1};
  const std::vector<std::uint8_t> y = {1, 0, 1};
  EXPECT_NEAR(average_precision(s, y).value(), (1.0 + 2.0 / 3.0) / 2.0, 1e-15);
  EXPECT_NEAR(average_precision(s, y).value(), 0.8333, 1e-4);
}

TEST(AveragePrecision, AllPositiveAndNoPositive) {
  const std::vector<double> s = {0.1, 0.7, 0.3};
  EXPECT_EQ(average_precision(s, std::vector<std::uint8_t>{1, 1, 1}).value(), 1.0);
  EXPECT_FALSE(average_precision(s, std::vector<std::uint8_t>{0, 0, 0}).has_value());
}

TEST(AveragePrecision, TiesGoToLowerFrameIndex) {
  const std::vector<double> s = {0.5, 0.5};
  EXPECT_EQ(average_precision(s, std::vector<std::uint8_t>{1, 0}).value(), 1.0);
  EXPECT_EQ(average_precision(s, std::vector<std::uint8_t>{0, 1}).value(), 0.5);
}

TEST(AveragePrecision, MatchesRankCountingOnAllSmallColumns) {
  const double grid[] = {0.0, 0.5, 1.0};
  for (std::size_t F = 1; F <= 6; ++F) {
    std::size_t score_combos = 1;
    for (std::size_t i = 0; i < F; ++i) score_combos *= 3;
    for (std::size_t sc = 0; sc < score_combos; ++sc) {
      std::vector<double> s(F);
      for (std::size_t i = 0, rem = sc; i < F; ++i, rem /= 3) s[i] = grid[rem % 3];
      for (std::size_t lc = 1; lc < (std::size_t{1} << F); ++lc) {
        std::vector<std::uint8_t> y(F);
        for (std::size_t i = 0; i < F; ++i) y[i] = (lc >> i) & 1;
        ASSERT_NEAR(average_precision(s, y).value(), ap_by_rank_counting(s, y), 1e-12);
      }
    }
  }
}

TEST(AveragePrecision, MapOverRandomTablesMatchesOracle) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> level(0, 3), bit(0, 1);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t F = 1 + trial % 6, C = 1 + (trial / 6) % 5;
    std::vector<double> s(F * C);
    std::vector<std::uint8_t> y(F * C);
    for (auto& v : s) v = level(rng) / 3.0;
    for (auto& v : y) v = static_cast<std::uint8_t>(bit(rng));
    const auto t = table(F, C, s, y);
    const auto r = compute_metrics(t, 1);
    double sum = 0.0;
    std::size_t n = 0;
    std::vector<double> col;
    std::vector<std::uint8_t> lab;
    for (std::size_t c = 0; c < C; ++c) {
      t.column(c, col, lab);
      const double ap = ap_by_rank_counting(col, lab);
      if (ap < 0) {
        EXPECT_FALSE(r.per_class[c].ap.has_value());
        continue;
      }
      EXPECT_NEAR(r.per_class[c].ap.value(), ap, 1e-12);
      sum += ap;
      ++n;
    }
    if (n) EXPECT_NEAR(r.mAP.value(), sum / n, 1e-12);
    else EXPECT_FALSE(r.mAP.has_value());
  }
}

TEST(AveragePrecision, InvariantUnderMonotoneTransform) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_int_distribution<int> bit(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s(20), t(20);
    std::vector<std::uint8_t> y(20);
    for (std::size_t i = 0; i < 20; ++i) {
      s[i] = n(rng);
      t[i] = std::exp(3.0 * s[i]) + 1.0;
      y[i] = static_cast<std::uint8_t>(bit(rng));
    }
    y[0] = 1;
    EXPECT_NEAR(average_precision(s, y).value(), average_precision(t, y).value(), 1e-15);
  }
}

TEST(F1AtK, SingleFrameHandExample) {
  const auto t = table(1, 5, {0.9, 0.8, 0.7, 0.1, 0.0}, {1, 0, 0, 0, 0});
  const auto per = per_class_f1(t);
  EXPECT_EQ(per[0].value(), 1.0);
  EXPECT_FALSE(per[1].has_value());
  EXPECT_FALSE(per[3].has_value());
  EXPECT_EQ(f1_at_k(t).value(), 1.0);
}

TEST(F1AtK, HandConfusionCounts) {
  const auto t = table(3, 4, {0.9, 0.8, 0.7, 0.1, 0.1, 0.9, 0.2, 0.8, 0.5, 0.6, 0.7, 0.0},
                       {1, 0, 1, 0, 0, 1, 0, 1, 0, 1, 0, 0});
  const auto per = per_class_f1(t);
  // frame 0 top3 {0,1,2}; frame 1 top3 {1,3,2}; frame 2 top3 {2,1,0}
  EXPECT_NEAR(per[0].value(), 2.0 / 3.0, 1e-15);        // tp1 fp1
  EXPECT_NEAR(per[1].value(), 2.0 * 2 / (4 + 1), 1e-15);  // tp2 fp1
  EXPECT_NEAR(per[2].value(), 2.0 / 4.0, 1e-15);          // tp1 fp2
  EXPECT_NEAR(per[3].value(), 1.0, 1e-15);
}

TEST(F1AtK, TiesGoToLowerClass) {
  const auto t = table(1, 4, {0.5, 0.5, 0.5, 0.5}, {0, 0, 0, 1});
  EXPECT_EQ(f1_at_k(t).value(), 0.0);
}

TEST(F1AtK, TooFewClassesRejected) {
  EXPECT_THROW(f1_at_k(table(1, 2, {0.1, 0.2}, {1, 0})), DomainError);
}

TEST(HarmonicMean, Examples) {
  EXPECT_EQ(harmonic_mean(0.5, 0.5), 0.5);
  EXPECT_EQ(harmonic_mean(0.0, 0.0), 0.0);
  EXPECT_NEAR(harmonic_mean(61.71, 39.78), 48.38, 0.01);
  EXPECT_NEAR(harmonic_mean(44.66, 23.44), 30.74, 0.01);
}

TEST(ScoreTable, RestrictColumnsKeepsOnlyThose) {
  const auto t = table(2, 3, {1, 2, 3, 4, 5, 6}, {1, 0, 1, 0, 1, 0});
  const std::vector<std::size_t> cols = {2, 0};
  const auto r = t.restrict_columns(cols);
  EXPECT_EQ(r.class_ids, cols);
  EXPECT_EQ(r.scores, (std::vector<double>{3, 1, 6, 4}));
  EXPECT_EQ(r.labels, (std::vector<std::uint8_t>{1, 1, 0, 0}));
}

TEST(ScoreTable, ShapeAndLabelChecks) {
  EXPECT_THROW(table(2, 2, {1, 2, 3}, {0, 0, 0, 0}).validate(), ShapeError);
  EXPECT_THROW(table(1, 2, {1, 2}, {0, 2}).validate(), DomainError);
}

TEST(Combine, HarmonicMeansOfBothMetrics) {
  MetricsReport base, novel;
  base.mAP = 0.6;
  novel.mAP = 0.3;
  base.f1_at_3 = 0.5;
  novel.f1_at_3 = 0.5;
  const auto r = combine(base, novel);
  EXPECT_NEAR(r.hm_map, 0.4, 1e-15);
  EXPECT_EQ(r.hm_f1, 0.5);
}
