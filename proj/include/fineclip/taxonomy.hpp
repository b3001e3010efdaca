#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fineclip/error.hpp"

namespace fineclip {

/// One ⟨instrument, verb, target⟩ class at the fine level.
struct Triplet {
  std::size_t id = 0;
  std::size_t instrument = 0;
  std::size_t verb = 0;
  std::size_t target = 0;
};

/// One ⟨instrument, target⟩ class at the coarse level.
struct PairClass {
  std::size_t id = 0;
  std::size_t instrument = 0;
  std::size_t target = 0;
};

enum class Setting { UT, UIV };

inline std::string to_string(Setting s) { return s == Setting::UT ? "UT" : "UIV"; }

inline Setting parse_setting(std::string_view s) {
  if (s == "UT" || s == "ut") return Setting::UT;
  if (s == "UIV" || s == "uiv") return Setting::UIV;
  throw ConfigError("unknown split setting '" + std::string(s) + "' (expected UT or UIV)");
}

/// Attribute lists from the vocabulary's [splits] section.
struct SplitAttributes {
  std::vector<std::string> ut_base_targets, ut_novel_targets;
  std::vector<std::string> uiv_base_pairs, uiv_novel_pairs;  // "instrument-verb"
  std::optional<std::vector<std::size_t>> ut_classes, uiv_classes;
};

struct SplitSpec {
  Setting setting = Setting::UT;
  std::vector<std::size_t> base_classes;   // ascending triplet ids
  std::vector<std::size_t> novel_classes;  // ascending triplet ids
};

struct FrameAnnotation {
  std::string video;
  std::int64_t frame = 0;
  std::vector<std::uint8_t> labels;  // multi-hot over all triplet classes

  std::vector<std::size_t> positives() const {
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < labels.size(); ++c)
      if (labels[c]) out.push_back(c);
    return out;
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s, char sep = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto pos = s.find(sep, start);
    const auto piece = trim(s.substr(start, pos == std::string_view::npos ? s.npos : pos - start));
    if (!piece.empty()) out.push_back(piece);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::size_t parse_index(const std::string& s, std::size_t line) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    throw ParseError("expected a non-negative integer, got '" + s + "'", line);
  }
  if (pos != s.size() || s.front() == '-') {
    throw ParseError("expected a non-negative integer, got '" + s + "'", line);
  }
  return static_cast<std::size_t>(v);
}

}  // namespace detail

/// Triplet vocabulary with its ⟨instrument, target⟩ parent hierarchy.
class Taxonomy {
 public:
  Taxonomy() = default;

  /// Builds from explicit name triples; ids follow input order.
  static Taxonomy from_names(const std::vector<std::array<std::string, 3>>& triplets,
                             SplitAttributes splits = {}) {
    Taxonomy tax;
    for (std::size_t i = 0; i < triplets.size(); ++i) {
      tax.add_triplet(i, triplets[i][0], triplets[i][1], triplets[i][2], i + 1);
    }
    tax.splits_ = std::move(splits);
    tax.finalize();
    return tax;
  }

  /// Parses the line-oriented vocabulary format:
  ///   T,<id>,<instrument>,<verb>,<target>
  ///   [splits]
  ///   ut_base_targets=a,b,...
  static Taxonomy parse(std::istream& in) {
    Taxonomy tax;
    std::string raw;
    std::size_t line = 0;
    bool in_splits = false;
    while (std::getline(in, raw)) {
      ++line;
      const std::string text = detail::trim(raw);
      if (text.empty() || text.front() == '#') continue;
      if (text.front() == '[') {
        if (text != "[splits]") throw ParseError("unknown section " + text, line);
        in_splits = true;
        continue;
      }
      if (!in_splits) {
        const auto fields = detail::split_list(text);
        if (fields.size() != 5 || fields[0] != "T") {
          throw ParseError("expected T,<id>,<instrument>,<verb>,<target>", line);
        }
        tax.add_triplet(detail::parse_index(fields[1], line), fields[2], fields[3], fields[4], line);
        continue;
      }
      const auto eq = text.find('=');
      if (eq == std::string::npos) throw ParseError("expected key=value in [splits]", line);
      const std::string key = detail::trim(std::string_view(text).substr(0, eq));
      const auto values = detail::split_list(std::string_view(text).substr(eq + 1));
      auto& s = tax.splits_;
      if (key == "ut_base_targets") s.ut_base_targets = values;
      else if (key == "ut_novel_targets") s.ut_novel_targets = values;
      else if (key == "uiv_base_pairs") s.uiv_base_pairs = values;
      else if (key == "uiv_novel_pairs") s.uiv_novel_pairs = values;
      else if (key == "ut_classes" || key == "uiv_classes") {
        std::vector<std::size_t> ids;
        for (const auto& v : values) ids.push_back(detail::parse_index(v, line));
        (key == "ut_classes" ? s.ut_classes : s.uiv_classes) = std::move(ids);
      } else {
        throw ParseError("unknown split key '" + key + "'", line);
      }
    }
    tax.finalize();
    return tax;
  }

  static Taxonomy load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open vocabulary " + path);
    return parse(in);
  }

  void write(std::ostream& os) const {
    for (const auto& t : triplets_) {
      os << "T," << t.id << ',' << instruments_[t.instrument] << ',' << verbs_[t.verb] << ','
         << targets_[t.target] << '\n';
    }
    auto join = [](const auto& xs) {
      std::ostringstream s;
      for (std::size_t i = 0; i < xs.size(); ++i) s << (i ? "," : "") << xs[i];
      return s.str();
    };
    os << "[splits]\n";
    os << "ut_base_targets=" << join(splits_.ut_base_targets) << '\n';
    os << "ut_novel_targets=" << join(splits_.ut_novel_targets) << '\n';
    os << "uiv_base_pairs=" << join(splits_.uiv_base_pairs) << '\n';
    os << "uiv_novel_pairs=" << join(splits_.uiv_novel_pairs) << '\n';
    if (splits_.ut_classes) os << "ut_classes=" << join(*splits_.ut_classes) << '\n';
    if (splits_.uiv_classes) os << "uiv_classes=" << join(*splits_.uiv_classes) << '\n';
  }

  std::size_t num_triplets() const { return triplets_.size(); }
  std::size_t num_pairs() const { return pairs_.size(); }
  const std::vector<Triplet>& triplets() const { return triplets_; }
  const std::vector<PairClass>& pairs() const { return pairs_; }
  const std::vector<std::string>& instruments() const { return instruments_; }
  const std::vector<std::string>& verbs() const { return verbs_; }
  const std::vector<std::string>& targets() const { return targets_; }
  const SplitAttributes& split_attributes() const { return splits_; }

  const Triplet& triplet(std::size_t id) const {
    if (id >= triplets_.size()) throw std::out_of_range("unknown triplet id " + std::to_string(id));
    return triplets_[id];
  }

  std::size_t parent_of(std::size_t triplet_id) const { return parent_.at(check(triplet_id)); }

  const std::vector<std::size_t>& children_of(std::size_t pair_id) const {
    if (pair_id >= children_.size()) throw std::out_of_range("unknown pair id " + std::to_string(pair_id));
    return children_[pair_id];
  }

  std::string triplet_name(std::size_t id) const {
    const auto& t = triplet(id);
    return instruments_[t.instrument] + "," + verbs_[t.verb] + "," + targets_[t.target];
  }

  std::string pair_name(std::size_t id) const {
    const auto& p = pairs_.at(id);
    return instruments_[p.instrument] + "," + targets_[p.target];
  }

  std::optional<std::size_t> find_triplet(std::string_view instrument, std::string_view verb,
                                          std::string_view target) const {
    for (const auto& t : triplets_) {
      if (instruments_[t.instrument] == instrument && verbs_[t.verb] == verb &&
          targets_[t.target] == target)
        return t.id;
    }
    return std::nullopt;
  }

  /// Coarse multi-hot derived from a fine multi-hot: a pair is positive iff any child is.
  std::vector<std::uint8_t> pair_labels(std::span<const std::uint8_t> triplet_labels) const {
    std::vector<std::uint8_t> out(pairs_.size(), 0);
    for (std::size_t c = 0; c < triplet_labels.size(); ++c)
      if (triplet_labels[c]) out[parent_[c]] = 1;
    return out;
  }

 private:
  std::size_t check(std::size_t id) const {
    if (id >= triplets_.size()) throw std::out_of_range("unknown triplet id " + std::to_string(id));
    return id;
  }

  static std::size_t intern(std::vector<std::string>& names, const std::string& name, std::size_t line) {
    if (name.find('-') != std::string::npos) {
      throw ParseError("vocabulary names may not contain '-': " + name, line);
    }
    const auto it = std::find(names.begin(), names.end(), name);
    if (it != names.end()) return static_cast<std::size_t>(it - names.begin());
    names.push_back(name);
    return names.size() - 1;
  }

  void add_triplet(std::size_t id, const std::string& inst, const std::string& verb,
                   const std::string& target, std::size_t line) {
    Triplet t{id, intern(instruments_, inst, line), intern(verbs_, verb, line),
              intern(targets_, target, line)};
    for (const auto& other : pending_) {
      if (other.id == id) throw ParseError("duplicate triplet id " + std::to_string(id), line);
      if (other.instrument == t.instrument && other.verb == t.verb && other.target == t.target) {
        throw ParseError("duplicate triplet " + inst + "," + verb + "," + target, line);
      }
    }
    pending_.push_back(t);
  }

  void finalize() {
    std::sort(pending_.begin(), pending_.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    for (std::size_t i = 0; i < pending_.size(); ++i) {
      if (pending_[i].id != i) {
        throw ConfigError("triplet ids must be contiguous from 0; missing id " + std::to_string(i));
      }
    }
    triplets_ = std::move(pending_);
    pending_.clear();
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> index;
    parent_.resize(triplets_.size());
    for (const auto& t : triplets_) {
      const auto key = std::make_pair(t.instrument, t.target);
      auto it = index.find(key);
      if (it == index.end()) {
        it = index.emplace(key, pairs_.size()).first;
        pairs_.push_back(PairClass{pairs_.size(), t.instrument, t.target});
        children_.emplace_back();
      }
      parent_[t.id] = it->second;
      children_[it->second].push_back(t.id);
    }
  }

  std::vector<std::string> instruments_, verbs_, targets_;
  std::vector<Triplet> pending_;
  std::vector<Triplet> triplets_;
  std::vector<PairClass> pairs_;
  std::vector<std::size_t> parent_;
  std::vector<std::vector<std::size_t>> children_;
  SplitAttributes splits_;
};

/// Partitions the classes named by the vocabulary's split attribute lists.
inline SplitSpec build_split(const Taxonomy& tax, Setting setting) {
  const auto& attrs = tax.split_attributes();
  SplitSpec spec;
  spec.setting = setting;

  // Class membership key per triplet: a target name (UT) or "instrument-verb" (UIV).
  auto key_of = [&](const Triplet& t) {
    return setting == Setting::UT ? tax.targets()[t.target]
                                  : tax.instruments()[t.instrument] + "-" + tax.verbs()[t.verb];
  };
  const auto& base_list = setting == Setting::UT ? attrs.ut_base_targets : attrs.uiv_base_pairs;
  const auto& novel_list = setting == Setting::UT ? attrs.ut_novel_targets : attrs.uiv_novel_pairs;
  const auto& restrict = setting == Setting::UT ? attrs.ut_classes : attrs.uiv_classes;
  if (base_list.empty() || novel_list.empty()) {
    throw ConfigError("vocabulary declares no " + to_string(setting) + " split attribute lists");
  }

  std::set<std::string> known;
  for (const auto& t : tax.triplets()) known.insert(key_of(t));
  const std::set<std::string> base(base_list.begin(), base_list.end());
  const std::set<std::string> novel(novel_list.begin(), novel_list.end());
  std::vector<std::string> unknown;
  for (const auto& k : base) {
    if (!known.count(k)) unknown.push_back(k);
    if (novel.count(k)) throw ConfigError(to_string(setting) + " attribute '" + k + "' is both base and novel");
  }
  for (const auto& k : novel)
    if (!known.count(k)) unknown.push_back(k);
  if (!unknown.empty()) {
    std::string msg = to_string(setting) + " split names attributes absent from the vocabulary:";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg);
  }

  std::vector<std::size_t> candidates;
  if (restrict) {
    for (std::size_t id : *restrict) tax.triplet(id);
    candidates = *restrict;
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  } else {
    for (const auto& t : tax.triplets()) candidates.push_back(t.id);
  }

  std::vector<std::size_t> orphans;
  for (std::size_t id : candidates) {
    const auto k = key_of(tax.triplet(id));
    if (base.count(k)) spec.base_classes.push_back(id);
    else if (novel.count(k)) spec.novel_classes.push_back(id);
    else if (restrict) orphans.push_back(id);
  }
  if (!orphans.empty()) {
    std::string msg = to_string(setting) + " split leaves classes uncovered by its attribute lists:";
    for (std::size_t id : orphans) msg += " " + std::to_string(id) + "(" + tax.triplet_name(id) + ")";
    throw ConfigError(msg);
  }
  return spec;
}

/// Frame indices sorted into base-only, novel-only, and mixed (dropped).
struct LeakageSplit {
  std::vector<std::size_t> base_frames;
  std::vector<std::size_t> novel_frames;
  std::vector<std::size_t> dropped;
};

/// Drops frames with positives on both sides; all-negative frames count as base.
inline LeakageSplit leakage_filter(std::span<const FrameAnnotation> frames, const SplitSpec& split) {
  LeakageSplit out;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& labels = frames[i].labels;
    auto any = [&](const std::vector<std::size_t>& cls) {
      return std::any_of(cls.begin(), cls.end(), [&](std::size_t c) { return c < labels.size() && labels[c]; });
    };
    const bool has_base = any(split.base_classes);
    const bool has_novel = any(split.novel_classes);
    if (has_base && has_novel) out.dropped.push_back(i);
    else if (has_novel) out.novel_frames.push_back(i);
    else out.base_frames.push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Annotation JSON-lines: {"video": str, "frame": int, "triplets": [int, ...]}

/// One parsed annotation line. `partition` is an optional extension key.
struct AnnotationRecord {
  FrameAnnotation annotation;
  std::optional<std::string> partition;
};

inline std::vector<AnnotationRecord> read_annotations(std::istream& in, const Taxonomy& tax) {
  std::vector<AnnotationRecord> out;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (detail::trim(raw).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed annotation JSON: ") + e.what(), line);
    }
    if (!j.is_object() || !j.contains("video") || !j.contains("frame") || !j.contains("triplets") ||
        !j["video"].is_string() || !j["frame"].is_number_integer() || !j["triplets"].is_array()) {
      throw ParseError("annotation needs string 'video', integer 'frame', array 'triplets'", line);
    }
    AnnotationRecord rec;
    rec.annotation.video = j["video"].get<std::string>();
    rec.annotation.frame = j["frame"].get<std::int64_t>();
    rec.annotation.labels.assign(tax.num_triplets(), 0);
    for (const auto& v : j["triplets"]) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0 ||
          static_cast<std::size_t>(v.get<std::int64_t>()) >= tax.num_triplets()) {
        throw ParseError("unknown triplet id " + v.dump() + " for a " +
                             std::to_string(tax.num_triplets()) + "-class vocabulary",
                         line);
      }
      rec.annotation.labels[v.get<std::size_t>()] = 1;
    }
    if (j.contains("partition")) rec.partition = j["partition"].get<std::string>();
    out.push_back(std::move(rec));
  }
  return out;
}

inline void write_annotation(std::ostream& os, const FrameAnnotation& a,
                             const std::optional<std::string>& partition = std::nullopt) {
  nlohmann::json j;
  j["video"] = a.video;
  j["frame"] = a.frame;
  j["triplets"] = a.positives();
  if (partition) j["partition"] = *partition;
  os << j.dump() << '\n';
}

}  // namespace fineclip
