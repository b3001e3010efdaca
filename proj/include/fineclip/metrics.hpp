#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fineclip/error.hpp"

namespace fineclip {

/// Interpolation-free AP: mean precision at each positive's rank.
/// Ranking is by score descending, ties by ascending frame index. No positives → nullopt.
inline std::optional<double> average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) {
    throw ShapeError("average_precision: " + std::to_string(scores.size()) + " scores vs " +
                     std::to_string(labels.size()) + " labels");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::size_t hits = 0;
  double total = 0.0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (!labels[order[r]]) continue;
    ++hits;
    total += static_cast<double>(hits) / static_cast<double>(r + 1);
  }
  if (hits == 0) return std::nullopt;
  return total / static_cast<double>(hits);
}

/// F frames × C classes of scores and binary labels; class_ids maps columns to vocabulary ids.
struct ScoreTable {
  std::size_t frames = 0;
  std::vector<std::size_t> class_ids;
  std::vector<double> scores;        // row-major F × C
  std::vector<std::uint8_t> labels;  // row-major F × C

  std::size_t classes() const { return class_ids.size(); }

  void validate() const {
    if (scores.size() != frames * classes() || labels.size() != frames * classes()) {
      throw ShapeError("ScoreTable: expected " + std::to_string(frames) + "x" + std::to_string(classes()) +
                       " entries, got " + std::to_string(scores.size()) + " scores and " +
                       std::to_string(labels.size()) + " labels");
    }
    for (std::uint8_t y : labels)
      if (y > 1) throw DomainError("ScoreTable: labels must be 0 or 1");
  }

  double score(std::size_t f, std::size_t c) const { return scores[f * classes() + c]; }
  std::uint8_t label(std::size_t f, std::size_t c) const { return labels[f * classes() + c]; }

  void column(std::size_t c, std::vector<double>& s, std::vector<std::uint8_t>& y) const {
    s.resize(frames);
    y.resize(frames);
    for (std::size_t f = 0; f < frames; ++f) {
      s[f] = score(f, c);
      y[f] = label(f, c);
    }
  }

  /// Subtable over the listed column positions.
  ScoreTable restrict_columns(std::span<const std::size_t> cols) const {
    ScoreTable out;
    out.frames = frames;
    for (std::size_t c : cols) out.class_ids.push_back(class_ids.at(c));
    out.scores.reserve(frames * cols.size());
    out.labels.reserve(frames * cols.size());
    for (std::size_t f = 0; f < frames; ++f)
      for (std::size_t c : cols) {
        out.scores.push_back(score(f, c));
        out.labels.push_back(label(f, c));
      }
    return out;
  }
};

/// Per-class F1 from per-frame top-k predictions (ties to the lower class column); nullopt for classes
/// without positives.
inline std::vector<std::optional<double>> per_class_f1(const ScoreTable& t, std::size_t k = 3) {
  t.validate();
  const std::size_t C = t.classes();
  if (C < k) throw DomainError("f1_at_k: " + std::to_string(C) + " classes is fewer than k=" + std::to_string(k));
  std::vector<std::size_t> tp(C, 0), fp(C, 0), fn(C, 0), order(C);
  for (std::size_t f = 0; f < t.frames; ++f) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return t.score(f, a) > t.score(f, b); });
    std::vector<std::uint8_t> predicted(C, 0);
    for (std::size_t r = 0; r < k; ++r) predicted[order[r]] = 1;
    for (std::size_t c = 0; c < C; ++c) {
      const bool y = t.label(f, c), p = predicted[c];
      tp[c] += y && p;
      fp[c] += !y && p;
      fn[c] += y && !p;
    }
  }
  std::vector<std::optional<double>> out(C);
  for (std::size_t c = 0; c < C; ++c) {
    if (tp[c] + fn[c] == 0) continue;
    out[c] = 2.0 * static_cast<double>(tp[c]) / static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
  }
  return out;
}

inline std::optional<double> mean_defined(std::span<const std::optional<double>> values) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& v : values)
    if (v) {
      total += *v;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return total / static_cast<double>(n);
}

/// Macro F1 over classes that have at least one positive.
inline std::optional<double> f1_at_k(const ScoreTable& t, std::size_t k = 3) {
  const auto per_class = per_class_f1(t, k);
  return mean_defined(per_class);
}

inline double harmonic_mean(double base, double novel) {
  if (base < 0.0 || novel < 0.0) throw DomainError("harmonic_mean: inputs must be non-negative");
  if (base + novel == 0.0) return 0.0;
  return 2.0 * base * novel / (base + novel);
}

struct ClassMetrics {
  std::size_t class_id = 0;
  std::optional<double> ap;
  std::optional<double> f1;
};

/// Fractions in [0, 1]; undefined entries stay empty.
struct MetricsReport {
  std::vector<ClassMetrics> per_class;
  std::optional<double> mAP;
  std::optional<double> f1_at_3;
};

inline MetricsReport compute_metrics(const ScoreTable& t, std::size_t k = 3) {
  t.validate();
  MetricsReport r;
  const auto f1 = per_class_f1(t, k);
  std::vector<double> s;
  std::vector<std::uint8_t> y;
  std::vector<std::optional<double>> aps;
  for (std::size_t c = 0; c < t.classes(); ++c) {
    t.column(c, s, y);
    aps.push_back(average_precision(s, y));
    r.per_class.push_back({t.class_ids[c], aps.back(), f1[c]});
  }
  r.mAP = mean_defined(aps);
  r.f1_at_3 = mean_defined(f1);
  return r;
}

struct BaseNovelReport {
  MetricsReport base, novel;
  double hm_map = 0.0;
  double hm_f1 = 0.0;
};

inline BaseNovelReport combine(MetricsReport base, MetricsReport novel) {
  BaseNovelReport r{std::move(base), std::move(novel)};
  r.hm_map = harmonic_mean(r.base.mAP.value_or(0.0), r.novel.mAP.value_or(0.0));
  r.hm_f1 = harmonic_mean(r.base.f1_at_3.value_or(0.0), r.novel.f1_at_3.value_or(0.0));
  return r;
}

}  // namespace fineclip
