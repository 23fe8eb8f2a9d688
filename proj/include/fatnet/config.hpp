#pragma once

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fatnet/geometry.hpp"
#include "fatnet/model.hpp"

namespace fatnet {

struct TrainConfig {
  std::size_t batch_size = 8;
  double lr = 0.001;
  double lr_decay = 0.7;
  std::size_t decay_every = 20;
  double lr_floor = 1e-5;
  double bn_momentum = 0.9;
  std::size_t epochs = 250;
  std::uint64_t seed = 1;
  AugmentOptions augment;
  bool augment_enabled = true;

  void validate() const {
    if (batch_size < 1) throw InvalidArgument("batch_size must be positive");
    if (!(lr > 0) || !(lr_decay > 0) || !(lr_floor > 0))
      throw InvalidArgument("learning-rate settings must be positive");
    if (decay_every < 1) throw InvalidArgument("decay_every must be positive");
    if (!(bn_momentum > 0 && bn_momentum < 1))
      throw InvalidArgument("bn_momentum must lie in (0, 1)");
    if (epochs < 1) throw InvalidArgument("epochs must be positive");
  }
};

/// Everything a CLI run reads from its config file.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string data;  ///< dataset directory
};

/// One `key = value` line.
struct ConfigEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename N>
N parse_number(const ConfigEntry& e) {
  N out{};
  const char* first = e.value.data();
  const char* last = first + e.value.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last)
    throw ParseError(e.line, "bad number '" + e.value + "' for " + e.key);
  return out;
}

inline std::size_t parse_count(const ConfigEntry& e) {
  if (!e.value.empty() && e.value[0] == '-')
    throw ParseError(e.line, e.key + " must be non-negative");
  return parse_number<std::size_t>(e);
}

inline bool parse_bool(const ConfigEntry& e) {
  const auto& v = e.value;
  if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
  if (v == "off" || v == "false" || v == "0" || v == "no") return false;
  throw ParseError(e.line, "expected on/off for " + e.key + ", got '" + v + "'");
}

inline std::vector<std::size_t> parse_list(const ConfigEntry& e) {
  std::vector<std::size_t> out;
  if (e.value.empty() || e.value == "none") return out;
  std::stringstream ss(e.value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    ConfigEntry sub{e.key, trim(item), e.line};
    out.push_back(parse_count(sub));
  }
  return out;
}

inline std::string join_list(const std::vector<std::size_t>& v) {
  if (v.empty()) return "none";
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace detail

/// Splits config text into entries. Blank lines and `#` comments are skipped.
inline std::vector<ConfigEntry> parse_config_text(std::string_view text) {
  std::vector<ConfigEntry> out;
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view raw = text.substr(pos, nl == std::string_view::npos ? text.size() - pos
                                                                          : nl - pos);
    ++line_no;
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    if (auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    const std::string line = detail::trim(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(line_no, "expected key = value");
    ConfigEntry e{detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)), line_no};
    if (e.key.empty()) throw ParseError(line_no, "missing key");
    out.push_back(std::move(e));
  }
  return out;
}

/// Applies one model key; false if the key is not a model key.
inline bool apply_model_key(ModelConfig& m, const ConfigEntry& e) {
  using namespace detail;
  const auto& k = e.key;
  try {
    if (k == "task") {
      if (e.value == "classify") m.task = Task::kClassify;
      else if (e.value == "segment") m.task = Task::kSegment;
      else throw ParseError(e.line, "task must be classify or segment");
    } else if (k == "widths") {
      m.widths = parse_list(e);
    } else if (k == "final_width") {
      m.final_width = parse_count(e);
    } else if (k == "head") {
      m.head = parse_list(e);
    } else if (k == "classes") {
      m.classes = parse_count(e);
    } else if (k == "k") {
      m.k = parse_count(e);
    } else if (k == "aggregation") {
      m.aggregation = parse_aggregation(e.value);
    } else if (k == "attention") {
      m.attention = parse_bool(e);
    } else if (k == "residual") {
      m.residual = parse_bool(e);
    } else if (k == "edge_center") {
      m.edge_center = parse_bool(e);
    } else if (k == "layout") {
      if (e.value == "per-layer") m.layout = Layout::kPerLayer;
      else if (e.value == "combine-at-end") m.layout = Layout::kCombineAtEnd;
      else throw ParseError(e.line, "layout must be per-layer or combine-at-end");
    } else if (k == "transformer") {
      m.transformer = parse_transformer(e.value);
    } else if (k == "tnet_widths") {
      m.tnet_widths = parse_list(e);
    } else if (k == "tnet_head") {
      m.tnet_head = parse_list(e);
    } else {
      return false;
    }
  } catch (const InvalidArgument& ex) {
    throw ParseError(e.line, ex.what());
  }
  return true;
}

/// Applies one training key; false if the key is not a training key.
inline bool apply_train_key(TrainConfig& t, const ConfigEntry& e) {
  using namespace detail;
  const auto& k = e.key;
  if (k == "batch_size") t.batch_size = parse_count(e);
  else if (k == "lr") t.lr = parse_number<double>(e);
  else if (k == "lr_decay") t.lr_decay = parse_number<double>(e);
  else if (k == "decay_every") t.decay_every = parse_count(e);
  else if (k == "lr_floor") t.lr_floor = parse_number<double>(e);
  else if (k == "bn_momentum") t.bn_momentum = parse_number<double>(e);
  else if (k == "epochs") t.epochs = parse_count(e);
  else if (k == "seed") t.seed = parse_number<std::uint64_t>(e);
  else if (k == "augment") t.augment_enabled = parse_bool(e);
  else if (k == "rotate") t.augment.rotate = parse_bool(e);
  else if (k == "scale") t.augment.scale = parse_bool(e);
  else if (k == "jitter") t.augment.jitter = parse_bool(e);
  else return false;
  return true;
}

/// Applies entries in order; unknown keys are errors.
inline void apply_entries(RunConfig& cfg, const std::vector<ConfigEntry>& entries) {
  for (const auto& e : entries) {
    if (e.key == "data") {
      cfg.data = e.value;
      continue;
    }
    if (!apply_model_key(cfg.model, e) && !apply_train_key(cfg.train, e))
      throw ParseError(e.line, "unknown key '" + e.key + "'");
  }
}

inline RunConfig parse_run_config(std::string_view text) {
  RunConfig cfg;
  apply_entries(cfg, parse_config_text(text));
  return cfg;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline RunConfig load_run_config(const std::string& path) {
  try {
    return parse_run_config(read_text_file(path));
  } catch (const ParseError& e) {
    throw ParseError(e.line(), path + ": " + std::string(e.what()));
  }
}

/// Canonical text for a model config; parsing it back gives an equal config.
inline std::string model_config_text(const ModelConfig& m) {
  using detail::join_list;
  std::ostringstream os;
  os << "task = " << (m.task == Task::kClassify ? "classify" : "segment") << "\n"
     << "widths = " << join_list(m.widths) << "\n"
     << "final_width = " << m.final_width << "\n"
     << "head = " << join_list(m.head) << "\n"
     << "classes = " << m.classes << "\n"
     << "k = " << m.k << "\n"
     << "aggregation = " << to_string(m.aggregation) << "\n"
     << "attention = " << (m.attention ? "on" : "off") << "\n"
     << "residual = " << (m.residual ? "on" : "off") << "\n"
     << "edge_center = " << (m.edge_center ? "on" : "off") << "\n"
     << "layout = " << (m.layout == Layout::kPerLayer ? "per-layer" : "combine-at-end") << "\n"
     << "transformer = " << to_string(m.transformer) << "\n"
     << "tnet_widths = " << join_list(m.tnet_widths) << "\n"
     << "tnet_head = " << join_list(m.tnet_head) << "\n";
  return os.str();
}

inline std::string train_config_text(const TrainConfig& t) {
  using detail::format_double;
  std::ostringstream os;
  auto onoff = [](bool b) { return b ? "on" : "off"; };
  os << "batch_size = " << t.batch_size << "\n"
     << "lr = " << format_double(t.lr) << "\n"
     << "lr_decay = " << format_double(t.lr_decay) << "\n"
     << "decay_every = " << t.decay_every << "\n"
     << "lr_floor = " << format_double(t.lr_floor) << "\n"
     << "bn_momentum = " << format_double(t.bn_momentum) << "\n"
     << "epochs = " << t.epochs << "\n"
     << "seed = " << t.seed << "\n"
     << "augment = " << onoff(t.augment_enabled) << "\n"
     << "rotate = " << onoff(t.augment.rotate) << "\n"
     << "scale = " << onoff(t.augment.scale) << "\n"
     << "jitter = " << onoff(t.augment.jitter) << "\n";
  return os.str();
}

inline ModelConfig parse_model_config(std::string_view text) {
  ModelConfig m;
  for (const auto& e : parse_config_text(text))
    if (!apply_model_key(m, e)) throw ParseError(e.line, "unknown model key '" + e.key + "'");
  return m;
}

inline bool operator==(const ModelConfig& a, const ModelConfig& b) {
  return model_config_text(a) == model_config_text(b);
}

/**
 * Reduced widths for single-core runs: the same wiring as the defaults
 * with every width scaled down so a few hundred small clouds train in
 * minutes.
 */
inline ModelConfig desk_model_config(std::size_t classes) {
  ModelConfig m;
  m.widths = {32, 32, 64};
  m.final_width = 128;
  m.head = {128, 64};
  m.classes = classes;
  m.k = 10;
  m.tnet_widths = {32, 64, 128};
  m.tnet_head = {64, 32};
  return m;
}

}  // namespace fatnet
