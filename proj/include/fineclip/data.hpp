#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fineclip/image.hpp"
#include "fineclip/rng.hpp"
#include "fineclip/taxonomy.hpp"

namespace fineclip {

enum class Partition { Train, Val, Test };

inline std::string to_string(Partition p) {
  switch (p) {
    case Partition::Train: return "train";
    case Partition::Val: return "val";
    case Partition::Test: return "test";
  }
  return "train";
}

inline Partition parse_partition(std::string_view s) {
  if (s == "train") return Partition::Train;
  if (s == "val") return Partition::Val;
  if (s == "test") return Partition::Test;
  throw ConfigError("unknown partition '" + std::string(s) + "' (expected train, val or test)");
}

using Color = std::array<double, 3>;

enum class GlyphKind { Jaw, Hook, Clamp, Cross, Tube, Ring };
enum class MarkKind { Dot, Bar, Plus, Corner };
enum class Pattern { Solid, HStripes, VStripes, Checker, Dots };

struct VerbMark {
  MarkKind kind = MarkKind::Dot;
  Color color{};
};

struct Texture {
  Pattern pattern = Pattern::Solid;
  Color base{}, accent{};
  std::size_t period = 4;
};

struct InstrumentGlyph {
  GlyphKind kind = GlyphKind::Jaw;
  Color color{};
};

/// How each vocabulary word is drawn. Triplets occupy one canvas quadrant each:
/// the target texture fills the quadrant, the instrument glyph sits on it, and the verb mark
/// is stamped at the glyph's upper-left corner.
struct SceneSpec {
  std::size_t canvas = 32;
  std::size_t channels = 3;
  std::map<std::string, InstrumentGlyph> instrument_glyphs;
  std::map<std::string, VerbMark> verb_marks;
  std::map<std::string, Texture> target_textures;
  std::size_t min_triplets = 1, max_triplets = 2;
  double noise = 0.03;
  Color background{0.15, 0.15, 0.15};

  /// Renderers for every word of the taxonomy, assigned by word index.
  static SceneSpec for_taxonomy(const Taxonomy& tax) {
    static constexpr Color palette[] = {{0.95, 0.95, 0.95}, {0.2, 0.9, 0.9}, {0.95, 0.85, 0.1},
                                        {0.9, 0.3, 0.9},    {0.3, 0.5, 1.0}, {1.0, 0.55, 0.1},
                                        {0.55, 1.0, 0.35},  {0.6, 0.4, 0.2}, {1.0, 0.7, 0.8},
                                        {0.1, 0.3, 0.6}};
    static constexpr Color tissue[] = {{0.25, 0.55, 0.2}, {0.85, 0.8, 0.35}, {0.45, 0.1, 0.1},
                                       {0.8, 0.2, 0.25},  {0.9, 0.6, 0.65},  {0.35, 0.3, 0.6},
                                       {0.6, 0.45, 0.3},  {0.3, 0.6, 0.6},   {0.7, 0.7, 0.7}};
    constexpr std::size_t n_palette = std::size(palette), n_tissue = std::size(tissue);
    SceneSpec s;
    for (std::size_t i = 0; i < tax.instruments().size(); ++i)
      s.instrument_glyphs[tax.instruments()[i]] = {static_cast<GlyphKind>(i % 6), palette[i % n_palette]};
    for (std::size_t i = 0; i < tax.verbs().size(); ++i)
      s.verb_marks[tax.verbs()[i]] = {static_cast<MarkKind>(i % 4), palette[(i + 3) % n_palette]};
    for (std::size_t i = 0; i < tax.targets().size(); ++i) {
      const Color& b = tissue[i % n_tissue];
      const Color accent{b[0] * 0.5, b[1] * 0.5, b[2] * 0.5};
      s.target_textures[tax.targets()[i]] = {static_cast<Pattern>(i % 5), b, accent, 4};
    }
    return s;
  }

  /// Throws naming the first triplet whose instrument, verb or target has no renderer.
  void check_renderable(const Taxonomy& tax) const {
    if (canvas % 2 != 0 || canvas < 16) throw ConfigError("scene canvas must be even and at least 16");
    if (min_triplets < 1 || max_triplets < min_triplets || max_triplets > 4) {
      throw ConfigError("triplets per frame must satisfy 1 <= min <= max <= 4");
    }
    for (const auto& t : tax.triplets()) {
      const bool ok = instrument_glyphs.count(tax.instruments()[t.instrument]) &&
                      verb_marks.count(tax.verbs()[t.verb]) && target_textures.count(tax.targets()[t.target]);
      if (!ok) throw ConfigError("no renderer for class " + std::to_string(t.id) + " (" + tax.triplet_name(t.id) + ")");
    }
  }
};

struct PlacedTriplet {
  std::size_t triplet = 0;
  std::size_t quadrant = 0;  // 0 TL, 1 TR, 2 BL, 3 BR
  int dx = 0, dy = 0;        // glyph jitter
  std::size_t phase = 0;     // texture offset
};

struct SceneDescription {
  std::vector<PlacedTriplet> items;
  std::uint64_t noise_seed = 0;
};

namespace detail {

inline void paint(Image& img, long y, long x, const Color& c) {
  if (y < 0 || x < 0 || y >= static_cast<long>(img.height) || x >= static_cast<long>(img.width)) return;
  for (std::size_t ch = 0; ch < img.channels; ++ch)
    img.at(ch, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = img.channels == 3 ? c[ch] : (c[0] + c[1] + c[2]) / 3.0;
}

inline bool texture_accent(const Texture& t, std::size_t y, std::size_t x) {
  const std::size_t p = std::max<std::size_t>(t.period, 2), half = p / 2;
  switch (t.pattern) {
    case Pattern::Solid: return false;
    case Pattern::HStripes: return (y % p) < half;
    case Pattern::VStripes: return (x % p) < half;
    case Pattern::Checker: return ((y / half) + (x / half)) % 2 == 0;
    case Pattern::Dots: return (y % p) == 0 && (x % p) == 0;
  }
  return false;
}

/// Glyph strokes inside a g×g box anchored at (y0, x0).
inline void draw_glyph(Image& img, GlyphKind kind, long y0, long x0, long g, const Color& c) {
  for (long i = 0; i < g; ++i) {
    switch (kind) {
      case GlyphKind::Jaw:  // V
        paint(img, y0 + i, x0 + i / 2, c);
        paint(img, y0 + i, x0 + g - 1 - i / 2, c);
        break;
      case GlyphKind::Hook:  // L
        paint(img, y0 + i, x0 + 1, c);
        paint(img, y0 + i, x0 + 2, c);
        paint(img, y0 + g - 1, x0 + i, c);
        break;
      case GlyphKind::Clamp:  // ||
        paint(img, y0 + i, x0 + 2, c);
        paint(img, y0 + i, x0 + g - 3, c);
        break;
      case GlyphKind::Cross:  // X
        paint(img, y0 + i, x0 + i, c);
        paint(img, y0 + i, x0 + g - 1 - i, c);
        break;
      case GlyphKind::Tube:  // thick bar
        for (long t = -1; t <= 1; ++t) paint(img, y0 + g / 2 + t, x0 + i, c);
        break;
      case GlyphKind::Ring:  // hollow square
        paint(img, y0, x0 + i, c);
        paint(img, y0 + g - 1, x0 + i, c);
        paint(img, y0 + i, x0, c);
        paint(img, y0 + i, x0 + g - 1, c);
        break;
    }
  }
}

inline void draw_mark(Image& img, MarkKind kind, long y0, long x0, const Color& c) {
  for (long i = 0; i < 4; ++i)
    for (long j = 0; j < 4; ++j) {
      bool on = false;
      switch (kind) {
        case MarkKind::Dot: on = (i == 1 || i == 2) && (j == 1 || j == 2); break;
        case MarkKind::Bar: on = true; break;
        case MarkKind::Plus: on = i == 1 || j == 1; break;
        case MarkKind::Corner: on = i == 0 || j == 0; break;
      }
      if (on) paint(img, y0 + i, x0 + j, c);
    }
}

inline double quantize8(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

}  // namespace detail

/// Deterministic rendering of a scene; pixel values are multiples of 1/255.
inline Image render(const SceneSpec& spec, const Taxonomy& tax, const SceneDescription& scene) {
  Image img(spec.channels, spec.canvas, spec.canvas);
  const std::size_t q = spec.canvas / 2;
  for (std::size_t y = 0; y < spec.canvas; ++y)
    for (std::size_t x = 0; x < spec.canvas; ++x) detail::paint(img, long(y), long(x), spec.background);

  for (const auto& item : scene.items) {
    const Triplet& t = tax.triplet(item.triplet);
    const Texture& tex = spec.target_textures.at(tax.targets()[t.target]);
    const auto& glyph = spec.instrument_glyphs.at(tax.instruments()[t.instrument]);
    const auto& mark = spec.verb_marks.at(tax.verbs()[t.verb]);
    const std::size_t oy = (item.quadrant / 2) * q, ox = (item.quadrant % 2) * q;
    for (std::size_t y = 0; y < q; ++y)
      for (std::size_t x = 0; x < q; ++x)
        detail::paint(img, long(oy + y), long(ox + x),
                      detail::texture_accent(tex, y + item.phase, x + item.phase) ? tex.accent : tex.base);
    const long g = static_cast<long>(q * 5 / 8);
    const long gy = long(oy) + (long(q) - g) / 2 + item.dy, gx = long(ox) + (long(q) - g) / 2 + item.dx;
    detail::draw_glyph(img, glyph.kind, gy, gx, g, glyph.color);
    detail::draw_mark(img, mark.kind, std::max(long(oy), gy - 3), std::max(long(ox), gx - 3), mark.color);
  }

  Rng rng(scene.noise_seed);
  std::uniform_real_distribution<double> jitter(-spec.noise, spec.noise);
  for (auto& p : img.pixels) p = detail::quantize8(p + jitter(rng));
  return img;
}

inline std::vector<std::uint8_t> labels_of(const SceneDescription& scene, std::size_t num_classes) {
  std::vector<std::uint8_t> labels(num_classes, 0);
  for (const auto& item : scene.items) labels.at(item.triplet) = 1;
  return labels;
}

struct Frame {
  Image image;
  FrameAnnotation annotation;
  std::optional<Partition> partition;
  std::optional<SceneDescription> scene;  // present for generated frames

  std::string stem() const { return annotation.video + "_" + std::to_string(annotation.frame); }
};

struct DatasetBundle {
  std::vector<Frame> frames;

  std::vector<FrameAnnotation> annotations() const {
    std::vector<FrameAnnotation> out;
    out.reserve(frames.size());
    for (const auto& f : frames) out.push_back(f.annotation);
    return out;
  }
};

struct PartitionRatios {
  double train = 0.7, val = 0.1, test = 0.2;
};

/// Random train/val/test assignment with counts round(ratio·n) (test takes the remainder).
inline void assign_partitions(DatasetBundle& bundle, std::uint64_t seed, const PartitionRatios& ratios = {}) {
  const double total = ratios.train + ratios.val + ratios.test;
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 || total <= 0) {
    throw ConfigError("partition ratios must be non-negative with a positive sum");
  }
  const std::size_t n = bundle.frames.size();
  const auto n_train = static_cast<std::size_t>(std::llround(ratios.train / total * double(n)));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(ratios.val / total * double(n))));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, 0x5b1u));
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t r = 0; r < n; ++r) {
    bundle.frames[order[r]].partition = r < n_train ? Partition::Train : (r < n_train + n_val ? Partition::Val : Partition::Test);
  }
}

/// Scene layout for frame `index`: distinct classes in distinct quadrants.
inline SceneDescription sample_scene(const SceneSpec& spec, const Taxonomy& tax, std::uint64_t seed, std::size_t index) {
  Rng rng(mix_seed(seed, index, 0x5ce));
  const std::size_t C = tax.num_triplets();
  const std::size_t count =
      std::min(C, std::uniform_int_distribution<std::size_t>(spec.min_triplets, spec.max_triplets)(rng));
  std::vector<std::size_t> classes(C), quads = {0, 1, 2, 3};
  std::iota(classes.begin(), classes.end(), 0);
  std::shuffle(classes.begin(), classes.end(), rng);
  std::shuffle(quads.begin(), quads.end(), rng);
  std::uniform_int_distribution<int> jit(-2, 2);
  std::uniform_int_distribution<std::size_t> phase(0, 7);
  SceneDescription s;
  for (std::size_t i = 0; i < count; ++i) {
    PlacedTriplet p;
    p.triplet = classes[i];
    p.quadrant = quads[i];
    p.dx = jit(rng);
    p.dy = jit(rng);
    p.phase = phase(rng);
    s.items.push_back(p);
  }
  std::sort(s.items.begin(), s.items.end(), [](const auto& a, const auto& b) { return a.triplet < b.triplet; });
  s.noise_seed = mix_seed(seed, index, 0x401);
  return s;
}

inline DatasetBundle generate(const SceneSpec& spec, const Taxonomy& tax, std::size_t count, std::uint64_t seed,
                              const PartitionRatios& ratios = {}) {
  spec.check_renderable(tax);
  DatasetBundle bundle;
  bundle.frames.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Frame f;
    f.scene = sample_scene(spec, tax, seed, i);
    f.image = render(spec, tax, *f.scene);
    f.annotation.video = "syn" + std::to_string(i / 100);
    f.annotation.frame = static_cast<std::int64_t>(i);
    f.annotation.labels = labels_of(*f.scene, tax.num_triplets());
    bundle.frames.push_back(std::move(f));
  }
  assign_partitions(bundle, seed, ratios);
  return bundle;
}

/// Writes images/<video>_<frame>.ppm, annotations.jsonl and vocabulary.txt under `dir`.
inline void save_bundle(const DatasetBundle& bundle, const Taxonomy& tax, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  std::ofstream ann(dir / "annotations.jsonl");
  if (!ann) throw ConfigError("cannot write " + (dir / "annotations.jsonl").string());
  for (const auto& f : bundle.frames) {
    write_pnm((dir / "images" / (f.stem() + (f.image.channels == 3 ? ".ppm" : ".pgm"))).string(), f.image);
    write_annotation(ann, f.annotation,
                     f.partition ? std::optional<std::string>(to_string(*f.partition)) : std::nullopt);
  }
  std::ofstream voc(dir / "vocabulary.txt");
  tax.write(voc);
}

/// Reads annotations and their images (`<video>_<frame>.ppm` or `.pgm`).
inline DatasetBundle ingest(const std::filesystem::path& annotation_path, const std::filesystem::path& image_dir,
                            const Taxonomy& tax) {
  std::ifstream in(annotation_path);
  if (!in) throw ConfigError("cannot open annotations " + annotation_path.string());
  DatasetBundle bundle;
  for (auto& rec : read_annotations(in, tax)) {
    Frame f;
    f.annotation = std::move(rec.annotation);
    if (rec.partition) f.partition = parse_partition(*rec.partition);
    auto path = image_dir / (f.stem() + ".ppm");
    if (!std::filesystem::exists(path)) path = image_dir / (f.stem() + ".pgm");
    f.image = read_pnm(path.string());
    bundle.frames.push_back(std::move(f));
  }
  return bundle;
}

inline DatasetBundle load_dataset(const std::filesystem::path& dir, const Taxonomy& tax) {
  return ingest(dir / "annotations.jsonl", dir / "images", tax);
}

inline Image hflip(const Image& img) {
  Image out(img.channels, img.height, img.width);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
  return out;
}

/// Square crop of side `side` at (top, left), resized bilinearly back to the full size.
inline Image crop_resize(const Image& img, double top, double left, double side) {
  Image out(img.channels, img.height, img.width);
  const double sy = side / double(img.height), sx = side / double(img.width);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const double fy = std::clamp(top + (double(y) + 0.5) * sy - 0.5, 0.0, double(img.height - 1));
      const double fx = std::clamp(left + (double(x) + 0.5) * sx - 0.5, 0.0, double(img.width - 1));
      const auto y0 = static_cast<std::size_t>(fy), x0 = static_cast<std::size_t>(fx);
      const std::size_t y1 = std::min(y0 + 1, img.height - 1), x1 = std::min(x0 + 1, img.width - 1);
      const double wy = fy - double(y0), wx = fx - double(x0);
      for (std::size_t c = 0; c < img.channels; ++c) {
        const double top_row = (1 - wx) * img.at(c, y0, x0) + wx * img.at(c, y0, x1);
        const double bottom_row = (1 - wx) * img.at(c, y1, x0) + wx * img.at(c, y1, x1);
        out.at(c, y, x) = (1 - wy) * top_row + wy * bottom_row;
      }
    }
  return out;
}

struct AugmentConfig {
  bool enabled = true;
  double flip_probability = 0.5;
  double min_area = 0.9;  // crop keeps this fraction of the area or more
  bool force_flip = false;
};

/// Horizontal flip and crop-resize, deterministic per (seed, frame id).
inline Image augment(const Image& img, std::uint64_t seed, std::uint64_t frame_id, const AugmentConfig& cfg = {}) {
  if (!cfg.enabled) return img;
  Rng rng(mix_seed(seed, frame_id, 0xa06));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const bool flip = cfg.force_flip || u(rng) < cfg.flip_probability;
  const double area = cfg.min_area + (1.0 - cfg.min_area) * u(rng);
  const double side = std::sqrt(area) * double(img.height);
  const double slack = double(img.height) - side;
  const double top = slack * u(rng), left = slack * u(rng);
  Image out = flip ? hflip(img) : img;
  return cfg.min_area >= 1.0 ? out : crop_resize(out, top, left, side);
}

}  // namespace fineclip
