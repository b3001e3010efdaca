#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "fineclip/data.hpp"
#include "fineclip/model.hpp"
#include "fineclip/optim.hpp"

namespace fineclip {

/// Everything a run needs; serialized as `key = value` lines under `[section]` headers.
/// Defaults are the desk configuration.
struct RunConfig {
  RunConfig() {
    optim.lr = 3e-3;
    model.vit.key_tap_layer = 4;
  }

  ModelConfig model;
  AdamWConfig optim;
  std::size_t batch = 32;
  std::size_t epochs = 30;

  Setting setting = Setting::UT;
  std::string vocabulary = "data/synthetic_vocabulary.txt";
  std::string dataset = "runs/synthetic";
  std::size_t frames = 2000;
  bool augment = true;

  std::string out = "runs/train";
  std::vector<std::size_t> ablate_j = {1, 2, 3, 4};
  std::vector<std::size_t> ablate_k = {2, 4, 8, 12, 16};

  void validate() const {
    model.validate();
    if (batch == 0) throw ConfigError("optim.batch must be positive");
    if (optim.lr < 0.0) throw ConfigError("optim.lr must be non-negative");
    if (optim.weight_decay < 0.0) throw ConfigError("optim.weight_decay must be non-negative");
  }
};

namespace detail {

struct ConfigKey {
  std::string name;  // section.key
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError(key + ": expected a number, got '" + s + "'");
  return v;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& s) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || s.empty()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "on") return true;
  if (s == "false" || s == "0" || s == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + s + "'");
}

inline std::vector<std::size_t> parse_list(const std::string& key, const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(s)) out.push_back(parse_uint(key, item));
  if (out.empty()) throw ConfigError(key + ": expected a comma-separated list");
  return out;
}

inline std::string format_list(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

#define FINECLIP_SIZE_KEY(NAME, FIELD)                                                  \
  ConfigKey {                                                                          \
    NAME, [](const RunConfig& c) { return std::to_string(c.FIELD); },                  \
        [](RunConfig& c, const std::string& v) { c.FIELD = parse_uint(NAME, v); }       \
  }
#define FINECLIP_DOUBLE_KEY(NAME, FIELD)                                                \
  ConfigKey {                                                                          \
    NAME, [](const RunConfig& c) { return format_double(c.FIELD); },                   \
        [](RunConfig& c, const std::string& v) { c.FIELD = parse_double(NAME, v); }     \
  }
#define FINECLIP_BOOL_KEY(NAME, FIELD)                                                  \
  ConfigKey {                                                                          \
    NAME, [](const RunConfig& c) { return std::string(c.FIELD ? "true" : "false"); },  \
        [](RunConfig& c, const std::string& v) { c.FIELD = parse_bool(NAME, v); }       \
  }
#define FINECLIP_STRING_KEY(NAME, FIELD)                                                \
  ConfigKey {                                                                          \
    NAME, [](const RunConfig& c) { return c.FIELD; },                                  \
        [](RunConfig& c, const std::string& v) { c.FIELD = v; }                        \
  }

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      FINECLIP_SIZE_KEY("run.seed", model.seed),
      FINECLIP_STRING_KEY("run.out", out),
      FINECLIP_STRING_KEY("data.vocabulary", vocabulary),
      FINECLIP_STRING_KEY("data.dataset", dataset),
      FINECLIP_SIZE_KEY("data.frames", frames),
      ConfigKey{"data.setting", [](const RunConfig& c) { return to_string(c.setting); },
                [](RunConfig& c, const std::string& v) { c.setting = parse_setting(v); }},
      FINECLIP_BOOL_KEY("data.augment", augment),
      FINECLIP_SIZE_KEY("vit.image_size", model.vit.image_size),
      FINECLIP_SIZE_KEY("vit.channels", model.vit.channels),
      FINECLIP_SIZE_KEY("vit.patch_size", model.vit.patch_size),
      FINECLIP_SIZE_KEY("vit.layers", model.vit.layers),
      FINECLIP_SIZE_KEY("vit.heads", model.vit.heads),
      ConfigKey{"vit.embed_dim", [](const RunConfig& c) { return std::to_string(c.model.vit.embed_dim); },
                [](RunConfig& c, const std::string& v) {
                  c.model.vit.embed_dim = c.model.text.output_dim = parse_uint("vit.embed_dim", v);
                }},
      FINECLIP_SIZE_KEY("vit.mlp_ratio", model.vit.mlp_ratio),
      FINECLIP_SIZE_KEY("text.layers", model.text.layers),
      FINECLIP_SIZE_KEY("text.heads", model.text.heads),
      FINECLIP_SIZE_KEY("text.width", model.text.width),
      FINECLIP_SIZE_KEY("text.mlp_ratio", model.text.mlp_ratio),
      FINECLIP_SIZE_KEY("prompt.n_ctx", model.n_ctx),
      FINECLIP_SIZE_KEY("lora.rank", model.lora_rank),
      FINECLIP_DOUBLE_KEY("lora.alpha", model.lora_alpha),
      FINECLIP_SIZE_KEY("sgc.j", model.vit.key_tap_layer),
      FINECLIP_SIZE_KEY("sgc.k", model.sgc.clusters),
      FINECLIP_SIZE_KEY("sgc.topk_edges", model.sgc.topk_edges),
      ConfigKey{"sgc.assign",
                [](const RunConfig& c) {
                  return std::string(c.model.sgc.assign_source == AssignSource::Linear ? "linear" : "gat");
                },
                [](RunConfig& c, const std::string& v) {
                  if (v == "linear") c.model.sgc.assign_source = AssignSource::Linear;
                  else if (v == "gat") c.model.sgc.assign_source = AssignSource::Gat;
                  else throw ConfigError("sgc.assign: expected linear or gat, got '" + v + "'");
                }},
      FINECLIP_DOUBLE_KEY("align.tau", model.tau),
      FINECLIP_BOOL_KEY("align.learn_tau", model.learn_tau),
      FINECLIP_DOUBLE_KEY("loss.margin", model.margin.margin),
      FINECLIP_SIZE_KEY("loss.negatives", model.margin.negatives_per_pair),
      FINECLIP_SIZE_KEY("loss.proj_dim", model.proj_dim),
      FINECLIP_DOUBLE_KEY("loss.alpha0", model.weights.level0),
      FINECLIP_DOUBLE_KEY("loss.alpha1", model.weights.level1),
      FINECLIP_DOUBLE_KEY("loss.alphah", model.weights.margin),
      FINECLIP_BOOL_KEY("components.soft_prompt", model.components.soft_prompt),
      FINECLIP_BOOL_KEY("components.lora", model.components.lora),
      FINECLIP_BOOL_KEY("components.hierarchy", model.components.hierarchy),
      FINECLIP_BOOL_KEY("components.sgc", model.components.sgc),
      FINECLIP_DOUBLE_KEY("optim.lr", optim.lr),
      FINECLIP_DOUBLE_KEY("optim.weight_decay", optim.weight_decay),
      FINECLIP_SIZE_KEY("optim.batch", batch),
      FINECLIP_SIZE_KEY("optim.epochs", epochs),
      ConfigKey{"ablate.j", [](const RunConfig& c) { return format_list(c.ablate_j); },
                [](RunConfig& c, const std::string& v) { c.ablate_j = parse_list("ablate.j", v); }},
      ConfigKey{"ablate.k", [](const RunConfig& c) { return format_list(c.ablate_k); },
                [](RunConfig& c, const std::string& v) { c.ablate_k = parse_list("ablate.k", v); }},
  };
  return keys;
}

#undef FINECLIP_SIZE_KEY
#undef FINECLIP_DOUBLE_KEY
#undef FINECLIP_BOOL_KEY
#undef FINECLIP_STRING_KEY

}  // namespace detail

/// Sets `section.key` from its text form; unknown keys throw.
inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& k : detail::config_keys()) {
    if (k.name == key) {
      k.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

inline std::vector<std::string> config_key_names() {
  std::vector<std::string> out;
  for (const auto& k : detail::config_keys()) out.push_back(k.name);
  return out;
}

inline RunConfig parse_config(std::istream& in) {
  RunConfig cfg;
  std::string raw, section;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string s = detail::trim(raw);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ParseError("unterminated section header", line);
      section = detail::trim(s.substr(1, s.size() - 2));
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", line);
    const std::string key = detail::trim(s.substr(0, eq)), value = detail::trim(s.substr(eq + 1));
    if (section.empty()) throw ParseError("key '" + key + "' outside any [section]", line);
    try {
      set_config_value(cfg, section + "." + key, value);
    } catch (const ParseError&) {
      throw;
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), line);
    }
  }
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  return parse_config(in);
}

inline void write_config(std::ostream& os, const RunConfig& cfg) {
  std::string section;
  for (const auto& k : detail::config_keys()) {
    const auto dot = k.name.find('.');
    const std::string sec = k.name.substr(0, dot);
    if (sec != section) {
      os << (section.empty() ? "" : "\n") << '[' << sec << "]\n";
      section = sec;
    }
    os << k.name.substr(dot + 1) << " = " << k.get(cfg) << '\n';
  }
}

inline std::string config_string(const RunConfig& cfg) {
  std::ostringstream os;
  write_config(os, cfg);
  return os.str();
}

}  // namespace fineclip
