#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fineclip/config.hpp"
#include "fineclip/data.hpp"
#include "fineclip/metrics.hpp"
#include "fineclip/model.hpp"
#include "fineclip/optim.hpp"

namespace fineclip {

namespace fs = std::filesystem;

/// Annotation subsets written by `split`; images stay in the dataset's image directory.
enum class Role { TrainBase, ValBase, ValNovel, TestBase, TestNovel };

inline std::string to_string(Role r) {
  switch (r) {
    case Role::TrainBase: return "train_base";
    case Role::ValBase: return "val_base";
    case Role::ValNovel: return "val_novel";
    case Role::TestBase: return "test_base";
    case Role::TestNovel: return "test_novel";
  }
  return "train_base";
}

inline fs::path split_dir(const RunConfig& cfg) { return fs::path(cfg.dataset) / "splits" / to_string(cfg.setting); }
inline fs::path role_path(const RunConfig& cfg, Role r) { return split_dir(cfg) / (to_string(r) + ".jsonl"); }
inline fs::path checkpoint_path(const RunConfig& cfg) { return fs::path(cfg.out) / "model.ckpt"; }

/// Appends `<stage>\t<file>` for every annotation file a stage opens.
class AccessLog {
 public:
  AccessLog(fs::path path, std::string stage) : path_(std::move(path)), stage_(std::move(stage)) {}

  void record(const fs::path& file) const {
    fs::create_directories(path_.parent_path());
    std::ofstream os(path_, std::ios::app);
    os << stage_ << '\t' << file.filename().string() << '\n';
  }

 private:
  fs::path path_;
  std::string stage_;
};

inline std::vector<std::pair<std::string, std::string>> read_access_log(const fs::path& path) {
  std::vector<std::pair<std::string, std::string>> out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    if (tab != std::string::npos) out.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return out;
}

inline Taxonomy dataset_taxonomy(const RunConfig& cfg) {
  const fs::path p = fs::path(cfg.dataset) / "vocabulary.txt";
  if (!fs::exists(p)) throw ConfigError("dataset has no vocabulary.txt: " + cfg.dataset + " (run gen-data first)");
  return Taxonomy::load(p.string());
}

inline DatasetBundle open_role(const RunConfig& cfg, Role r, const Taxonomy& tax, const AccessLog& log) {
  const fs::path p = role_path(cfg, r);
  if (!fs::exists(p)) throw ConfigError("missing split file " + p.string() + " (run split first)");
  log.record(p);
  return ingest(p, fs::path(cfg.dataset) / "images", tax);
}

// ---------------------------------------------------------------------------
// gen-data / split

inline std::size_t gen_data(const RunConfig& cfg, std::ostream& log) {
  const Taxonomy tax = Taxonomy::load(cfg.vocabulary);
  const auto bundle = generate(SceneSpec::for_taxonomy(tax), tax, cfg.frames, cfg.model.seed);
  save_bundle(bundle, tax, cfg.dataset);
  log << "wrote " << bundle.frames.size() << " frames to " << cfg.dataset << '\n';
  return bundle.frames.size();
}

struct SplitSummary {
  SplitSpec spec;
  std::map<Role, std::size_t> counts;
  std::size_t dropped = 0;
  std::size_t unseen_train_novel = 0;
};

inline SplitSummary split_dataset(const RunConfig& cfg, std::ostream& log) {
  const Taxonomy tax = dataset_taxonomy(cfg);
  const fs::path ann = fs::path(cfg.dataset) / "annotations.jsonl";
  std::ifstream in(ann);
  if (!in) throw ConfigError("cannot open annotations " + ann.string());
  auto records = read_annotations(in, tax);

  DatasetBundle parts;
  for (const auto& r : records) {
    Frame f;
    f.annotation = r.annotation;
    if (r.partition) f.partition = parse_partition(*r.partition);
    parts.frames.push_back(std::move(f));
  }
  if (std::any_of(parts.frames.begin(), parts.frames.end(), [](const Frame& f) { return !f.partition; })) {
    assign_partitions(parts, cfg.model.seed);
  }

  SplitSummary s;
  s.spec = build_split(tax, cfg.setting);
  const auto anns = parts.annotations();
  const auto lf = leakage_filter(anns, s.spec);
  s.dropped = lf.dropped.size();

  std::map<Role, std::vector<std::size_t>> members;
  for (std::size_t i : lf.base_frames) {
    const Partition p = *parts.frames[i].partition;
    members[p == Partition::Train ? Role::TrainBase : p == Partition::Val ? Role::ValBase : Role::TestBase].push_back(i);
  }
  for (std::size_t i : lf.novel_frames) {
    const Partition p = *parts.frames[i].partition;
    if (p == Partition::Train) ++s.unseen_train_novel;
    else members[p == Partition::Val ? Role::ValNovel : Role::TestNovel].push_back(i);
  }

  fs::create_directories(split_dir(cfg));
  for (Role r : {Role::TrainBase, Role::ValBase, Role::ValNovel, Role::TestBase, Role::TestNovel}) {
    std::ofstream os(role_path(cfg, r));
    for (std::size_t i : members[r]) write_annotation(os, anns[i], to_string(*parts.frames[i].partition));
    s.counts[r] = members[r].size();
  }

  nlohmann::ordered_json j;
  j["setting"] = to_string(cfg.setting);
  j["base_classes"] = s.spec.base_classes;
  j["novel_classes"] = s.spec.novel_classes;
  for (const auto& [r, n] : s.counts) j["frames"][to_string(r)] = n;
  j["dropped_mixed"] = s.dropped;
  j["unused_train_novel"] = s.unseen_train_novel;
  std::ofstream(split_dir(cfg) / "split.json") << j.dump(2) << '\n';

  log << to_string(cfg.setting) << " split: " << s.spec.base_classes.size() << " base / "
      << s.spec.novel_classes.size() << " novel classes;";
  for (const auto& [r, n] : s.counts) log << ' ' << to_string(r) << '=' << n;
  log << " dropped=" << s.dropped << '\n';
  return s;
}

// ---------------------------------------------------------------------------
// scoring

inline ScoreTable score_bundle(const FineClipModel& model, const DatasetBundle& data,
                               std::span<const std::size_t> classes, std::size_t chunk = 64) {
  ScoreTable t;
  t.frames = data.frames.size();
  t.class_ids.assign(classes.begin(), classes.end());
  const auto txt = model.encode_text(classes);
  for (std::size_t start = 0; start < data.frames.size(); start += chunk) {
    const std::size_t end = std::min(data.frames.size(), start + chunk);
    std::vector<const Image*> imgs;
    for (std::size_t i = start; i < end; ++i) imgs.push_back(&data.frames[i].image);
    const auto s = model.score(imgs, txt);
    t.scores.insert(t.scores.end(), s.begin(), s.end());
    for (std::size_t i = start; i < end; ++i)
      for (std::size_t c : classes) t.labels.push_back(data.frames[i].annotation.labels[c]);
  }
  return t;
}

/// F1@3 harmonic mean when both sides exist, otherwise whichever side does.
inline double selection_score(const std::optional<MetricsReport>& base, const std::optional<MetricsReport>& novel) {
  if (base && novel) return combine(*base, *novel).hm_f1;
  if (base) return base->f1_at_3.value_or(0.0);
  if (novel) return novel->f1_at_3.value_or(0.0);
  return 0.0;
}

// ---------------------------------------------------------------------------
// train

struct TrainResult {
  std::size_t steps = 0;
  std::size_t best_epoch = 0;
  double best_val = -1.0;
  std::size_t trainable = 0;
  double seconds = 0.0;
};

inline std::string trainable_report(const FineClipModel& model) {
  std::map<std::string, std::size_t> groups;
  for (const auto& p : model.trainable()) groups[p.name.substr(0, p.name.find('.'))] += p.tensor.numel();
  std::ostringstream os;
  os << "trainable parameters:";
  for (const auto& [g, n] : groups) os << ' ' << g << '=' << n;
  os << " total=" << model.trainable_count() << " (analytic " << model.config().analytic_trainable_count() << ")";
  return os.str();
}

inline TrainResult train(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const Taxonomy tax = dataset_taxonomy(cfg);
  const SplitSpec split = build_split(tax, cfg.setting);
  fs::create_directories(cfg.out);
  const AccessLog access(fs::path(cfg.out) / "access.log", "train");
  const auto train_set = open_role(cfg, Role::TrainBase, tax, access);
  const auto val_base = open_role(cfg, Role::ValBase, tax, access);
  const auto val_novel = open_role(cfg, Role::ValNovel, tax, access);
  if (train_set.frames.empty()) throw ConfigError("training set is empty");

  FineClipModel model(cfg.model, tax);
  TrainResult result;
  result.trainable = model.trainable_count();
  if (result.trainable != cfg.model.analytic_trainable_count()) {
    throw ConfigError("trainable parameter count disagrees with the analytic count");
  }
  log << trainable_report(model) << '\n';

  const auto cols = training_columns(tax, split.base_classes);
  const std::vector<std::size_t> coarse = cfg.model.components.hierarchy ? cols.coarse : std::vector<std::size_t>{};
  std::vector<std::vector<std::uint8_t>> pair_labels;
  for (const auto& f : train_set.frames) pair_labels.push_back(tax.pair_labels(f.annotation.labels));

  AdamW opt(model.trainable(), cfg.optim, {"tau.log"});
  AugmentConfig aug;
  aug.enabled = cfg.augment;

  std::ofstream csv(fs::path(cfg.out) / "train_log.csv");
  csv << "step,L0,L1,Lmargin,Ltotal\n" << std::setprecision(10);

  const std::size_t n = train_set.frames.size();
  std::vector<std::size_t> order(n);
  auto validate_and_keep = [&](std::size_t epoch) {
    std::optional<MetricsReport> vb, vn;
    if (!val_base.frames.empty()) vb = compute_metrics(score_bundle(model, val_base, split.base_classes));
    if (!val_novel.frames.empty()) vn = compute_metrics(score_bundle(model, val_novel, split.novel_classes));
    const double sel = selection_score(vb, vn);
    const bool better = sel > result.best_val;
    if (better) {
      result.best_val = sel;
      result.best_epoch = epoch;
      model.save(checkpoint_path(cfg));
    }
    return sel;
  };

  if (cfg.epochs == 0) validate_and_keep(0);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(mix_seed(cfg.model.seed, epoch, 0x0de));
    std::shuffle(order.begin(), order.end(), shuffle);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch) {
      const std::size_t end = std::min(n, start + cfg.batch);
      std::vector<Image> imgs;
      std::vector<const std::vector<std::uint8_t>*> rows1, rows0;
      for (std::size_t k = start; k < end; ++k) {
        const auto& f = train_set.frames[order[k]];
        imgs.push_back(augment(f.image, mix_seed(cfg.model.seed, epoch), static_cast<std::uint64_t>(f.annotation.frame), aug));
        rows1.push_back(&f.annotation.labels);
        rows0.push_back(&pair_labels[order[k]]);
      }
      std::vector<const Image*> ptrs;
      for (const auto& i : imgs) ptrs.push_back(&i);

      opt.zero_grad();
      const auto txt = model.encode_text(cols.fine, coarse);
      const auto img = model.encode_images(ptrs);
      const auto lb = model.logits(img, txt);
      const Tensor y1 = label_tensor(rows1, cols.fine);
      const Tensor y0 = coarse.empty() ? Tensor() : label_tensor(rows0, coarse);
      const auto terms = model.loss(img, txt, lb, y1, y0, result.steps);
      const double total = terms.total.item();
      if (!std::isfinite(total)) {
        throw NumericError("non-finite loss at step " + std::to_string(result.steps), result.steps);
      }
      csv << result.steps << ',' << terms.l0.item() << ',' << terms.l1.item() << ',' << terms.margin.item() << ','
          << total << '\n';
      terms.total.backward();
      opt.step();
      ++result.steps;
      epoch_loss += total;
      ++batches;
    }
    const double sel = validate_and_keep(epoch);
    log << "epoch " << epoch << " loss " << std::fixed << std::setprecision(4) << epoch_loss / double(batches)
        << " val_hm_f1@3 " << 100.0 * sel << (result.best_epoch == epoch ? " *" : "") << std::defaultfloat << '\n';
  }

  std::ofstream(fs::path(cfg.out) / "config.ini") << config_string(cfg);
  {
    std::ofstream voc(fs::path(cfg.out) / "vocabulary.txt");
    tax.write(voc);
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  nlohmann::ordered_json j;
  j["steps"] = result.steps;
  j["best_epoch"] = result.best_epoch;
  j["best_val_hm_f1_at_3"] = 100.0 * result.best_val;
  j["trainable_parameters"] = result.trainable;
  std::ofstream(fs::path(cfg.out) / "train_summary.json") << j.dump(2) << '\n';
  return result;
}

// ---------------------------------------------------------------------------
// eval / report

enum class Side { Base, Novel, Both };

inline Side parse_side(const std::string& s) {
  if (s == "base") return Side::Base;
  if (s == "novel") return Side::Novel;
  if (s == "both") return Side::Both;
  throw ConfigError("unknown split side '" + s + "' (expected base, novel or both)");
}

/// Scores per side, keyed "base" / "novel".
using SideTables = std::map<std::string, ScoreTable>;

struct EvalResult {
  std::optional<MetricsReport> base, novel;
  std::optional<BaseNovelReport> combined;
};

inline EvalResult summarize(const SideTables& tables) {
  EvalResult r;
  if (tables.count("base")) r.base = compute_metrics(tables.at("base"));
  if (tables.count("novel")) r.novel = compute_metrics(tables.at("novel"));
  if (r.base && r.novel) r.combined = combine(*r.base, *r.novel);
  return r;
}

inline nlohmann::ordered_json side_json(const MetricsReport& m, const ScoreTable& t) {
  nlohmann::ordered_json j;
  j["frames"] = t.frames;
  j["classes"] = t.class_ids;
  j["mAP"] = m.mAP ? nlohmann::ordered_json(100.0 * *m.mAP) : nlohmann::ordered_json();
  j["F1@3"] = m.f1_at_3 ? nlohmann::ordered_json(100.0 * *m.f1_at_3) : nlohmann::ordered_json();
  return j;
}

inline void write_metrics_json(const fs::path& path, Setting setting, const SideTables& tables, const EvalResult& r) {
  nlohmann::ordered_json j;
  j["setting"] = to_string(setting);
  j["units"] = "percent";
  if (r.base) j["base"] = side_json(*r.base, tables.at("base"));
  if (r.novel) j["novel"] = side_json(*r.novel, tables.at("novel"));
  if (r.combined) j["hm"] = {{"mAP", 100.0 * r.combined->hm_map}, {"F1@3", 100.0 * r.combined->hm_f1}};
  std::ofstream(path) << j.dump(2) << '\n';
}

inline void check_vocabulary_matches(const RunConfig& cfg, const Taxonomy& tax) {
  const fs::path trained = fs::path(cfg.out) / "vocabulary.txt";
  if (!fs::exists(trained)) return;
  std::ostringstream a, b;
  tax.write(a);
  b << std::ifstream(trained).rdbuf();
  if (a.str() != b.str()) {
    throw ConfigError("class columns of " + cfg.dataset + " do not match the vocabulary the checkpoint was trained on");
  }
}

inline EvalResult evaluate(const RunConfig& cfg, Side side, const fs::path& checkpoint, std::ostream& log) {
  cfg.validate();
  const Taxonomy tax = dataset_taxonomy(cfg);
  check_vocabulary_matches(cfg, tax);
  const SplitSpec split = build_split(tax, cfg.setting);
  FineClipModel model(cfg.model, tax);
  model.load(checkpoint);
  const AccessLog access(fs::path(cfg.out) / "access.log", "eval");

  SideTables tables;
  std::map<std::string, DatasetBundle> sets;
  auto run = [&](const std::string& name, Role role, const std::vector<std::size_t>& classes) {
    sets[name] = open_role(cfg, role, tax, access);
    if (sets[name].frames.empty()) throw ConfigError("test " + name + " set is empty");
    tables[name] = score_bundle(model, sets[name], classes);
  };
  if (side != Side::Novel) run("base", Role::TestBase, split.base_classes);
  if (side != Side::Base) run("novel", Role::TestNovel, split.novel_classes);

  fs::create_directories(cfg.out);
  std::ofstream scores(fs::path(cfg.out) / "scores.jsonl");
  for (const auto& [name, t] : tables) {
    const auto& frames = sets[name].frames;
    for (std::size_t f = 0; f < t.frames; ++f) {
      nlohmann::ordered_json j;
      j["side"] = name;
      j["video"] = frames[f].annotation.video;
      j["frame"] = frames[f].annotation.frame;
      j["classes"] = t.class_ids;
      std::vector<double> row(t.scores.begin() + f * t.classes(), t.scores.begin() + (f + 1) * t.classes());
      j["scores"] = row;
      j["triplets"] = frames[f].annotation.positives();
      scores << j.dump() << '\n';
    }
  }

  const EvalResult r = summarize(tables);
  write_metrics_json(fs::path(cfg.out) / "metrics.json", cfg.setting, tables, r);
  auto pct = [](const std::optional<double>& v) { return v ? 100.0 * *v : 0.0; };
  log << std::fixed << std::setprecision(2);
  if (r.base) log << "base   mAP " << pct(r.base->mAP) << "  F1@3 " << pct(r.base->f1_at_3) << '\n';
  if (r.novel) log << "novel  mAP " << pct(r.novel->mAP) << "  F1@3 " << pct(r.novel->f1_at_3) << '\n';
  if (r.combined) log << "HM     mAP " << 100.0 * r.combined->hm_map << "  F1@3 " << 100.0 * r.combined->hm_f1 << '\n';
  log << std::defaultfloat;
  return r;
}

inline SideTables read_scores(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string() + " (run eval first)");
  SideTables tables;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (detail::trim(raw).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed score line: ") + e.what(), line);
    }
    auto& t = tables[j.at("side").get<std::string>()];
    const auto classes = j.at("classes").get<std::vector<std::size_t>>();
    if (t.frames == 0) t.class_ids = classes;
    else if (t.class_ids != classes) throw ParseError("class columns change within one side", line);
    const auto s = j.at("scores").get<std::vector<double>>();
    if (s.size() != classes.size()) throw ParseError("score row length differs from class list", line);
    std::vector<std::uint8_t> y(classes.size(), 0);
    for (std::size_t p : j.at("triplets").get<std::vector<std::size_t>>()) {
      const auto it = std::find(classes.begin(), classes.end(), p);
      if (it != classes.end()) y[it - classes.begin()] = 1;
    }
    t.scores.insert(t.scores.end(), s.begin(), s.end());
    t.labels.insert(t.labels.end(), y.begin(), y.end());
    ++t.frames;
  }
  return tables;
}

inline void write_cluster_map(const fs::path& path, const ClusterAssignment& a, std::size_t grid, std::size_t patch) {
  const auto labels = a.hard_labels();
  const std::size_t k = a.k(), side = grid * patch;
  Image img(1, side, side);
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) {
      const std::size_t c = labels[(y / patch) * grid + x / patch];
      img.pixels[y * side + x] = k > 1 ? double(c) / double(k - 1) : 0.0;
    }
  write_pnm(path.string(), img);
}

inline EvalResult report(const RunConfig& cfg, const fs::path& checkpoint, std::ostream& log) {
  const Taxonomy tax = dataset_taxonomy(cfg);
  const SideTables tables = read_scores(fs::path(cfg.out) / "scores.jsonl");
  const EvalResult r = summarize(tables);
  write_metrics_json(fs::path(cfg.out) / "metrics.json", cfg.setting, tables, r);

  std::ofstream csv(fs::path(cfg.out) / "per_class.csv");
  csv << "class_id,name,ap,f1\n" << std::fixed << std::setprecision(4);
  auto put = [&](const MetricsReport& m) {
    for (const auto& c : m.per_class) {
      csv << c.class_id << ",\"" << tax.triplet_name(c.class_id) << "\",";
      if (c.ap) csv << 100.0 * *c.ap;
      csv << ',';
      if (c.f1) csv << 100.0 * *c.f1;
      csv << '\n';
    }
  };
  if (r.base) put(*r.base);
  if (r.novel) put(*r.novel);

  std::size_t maps = 0;
  if (cfg.model.components.sgc && fs::exists(checkpoint)) {
    FineClipModel model(cfg.model, tax);
    model.load(checkpoint);
    const fs::path dir = fs::path(cfg.out) / "clusters";
    fs::create_directories(dir);
    const AccessLog access(fs::path(cfg.out) / "access.log", "report");
    std::ifstream scores(fs::path(cfg.out) / "scores.jsonl");
    std::string raw;
    while (std::getline(scores, raw)) {
      if (detail::trim(raw).empty()) continue;
      const auto j = nlohmann::json::parse(raw);
      const std::string stem = j.at("video").get<std::string>() + "_" + std::to_string(j.at("frame").get<std::int64_t>());
      auto path = fs::path(cfg.dataset) / "images" / (stem + ".ppm");
      if (!fs::exists(path)) path.replace_extension(".pgm");
      access.record(path);
      const Image img = read_pnm(path.string());
      const Image* p = &img;
      const auto feats = model.encode_images(std::span<const Image* const>(&p, 1));
      write_cluster_map(dir / (stem + ".pgm"), feats.assignments.front(), cfg.model.vit.grid(), cfg.model.vit.patch_size);
      ++maps;
    }
  }
  log << "wrote metrics.json, per_class.csv and " << maps << " cluster maps to " << cfg.out << '\n';
  return r;
}

// ---------------------------------------------------------------------------
// ablate

struct AblationRow {
  std::string axis, value;
  EvalResult result;
};

inline std::vector<std::pair<std::string, Components>> component_ladder() {
  return {{"sp", {true, false, false, false}},
          {"lora", {false, true, false, false}},
          {"sp+lora", {true, true, false, false}},
          {"sp+lora+hier", {true, true, true, false}},
          {"sp+lora+hier+sgc", {true, true, true, true}}};
}

inline std::vector<AblationRow> ablate(const RunConfig& cfg, const std::string& axis, std::ostream& log) {
  std::vector<std::pair<std::string, RunConfig>> runs;
  if (axis == "components") {
    for (const auto& [name, comps] : component_ladder()) {
      RunConfig c = cfg;
      c.model.components = comps;
      runs.emplace_back(name, c);
    }
  } else if (axis == "layer_j") {
    for (std::size_t j : cfg.ablate_j) {
      RunConfig c = cfg;
      c.model.vit.key_tap_layer = j;
      runs.emplace_back(std::to_string(j), c);
    }
  } else if (axis == "clusters_k") {
    for (std::size_t k : cfg.ablate_k) {
      RunConfig c = cfg;
      c.model.sgc.clusters = k;
      runs.emplace_back(std::to_string(k), c);
    }
  } else {
    throw ConfigError("unknown ablation axis '" + axis + "' (expected components, layer_j or clusters_k)");
  }
  for (auto& [name, c] : runs) c.validate();

  std::vector<AblationRow> rows;
  for (auto& [name, c] : runs) {
    c.out = (fs::path(cfg.out) / "ablate" / axis / name).string();
    log << "== " << axis << " = " << name << '\n';
    train(c, log);
    rows.push_back({axis, name, evaluate(c, Side::Both, checkpoint_path(c), log)});
  }

  fs::create_directories(cfg.out);
  std::ofstream csv(fs::path(cfg.out) / "ablation.csv");
  csv << "axis,value,base_mAP,novel_mAP,hm_mAP,base_F1@3,novel_F1@3,hm_F1@3\n" << std::fixed << std::setprecision(4);
  for (const auto& r : rows) {
    const auto& b = r.result.base;
    const auto& n = r.result.novel;
    csv << r.axis << ',' << r.value << ',' << 100.0 * b->mAP.value_or(0.0) << ',' << 100.0 * n->mAP.value_or(0.0) << ','
        << 100.0 * r.result.combined->hm_map << ',' << 100.0 * b->f1_at_3.value_or(0.0) << ','
        << 100.0 * n->f1_at_3.value_or(0.0) << ',' << 100.0 * r.result.combined->hm_f1 << '\n';
  }
  return rows;
}

}  // namespace fineclip
