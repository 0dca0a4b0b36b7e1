#pragma once

// Experiment configuration: one schema table drives INI parsing, JSON echo,
// command-line overrides and validation, so the four never drift apart.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include "ccl/augment.hpp"
#include "ccl/errors.hpp"
#include "ccl/losses.hpp"
#include "ccl/model.hpp"
#include "ccl/refurbish.hpp"

namespace ccl {

enum class Method { ccl, rolr, ce };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::ccl: return "ccl";
    case Method::rolr: return "rolr";
    case Method::ce: return "ce";
  }
  return "?";
}

struct TrainConfig {
  Method method = Method::ccl;
  int epochs = 60;
  int warmup = 10;
  std::size_t batch_size = 128;
  AdamConfig adam;
  LossSettings loss;
  ConfidenceOptions confidence;
  double weak_jitter = 0.05;    // × mean per-feature standard deviation
  double strong_jitter = 0.15;  // × mean per-feature standard deviation
  int strong_ops = 2;
  double strong_magnitude = 0.2;
  double mask_fraction = 0.1;
  std::optional<ImageShape> image;
  std::optional<double> omega_override;  // replaces the estimated confidence when set
  int eval_every = 1;
};

struct DataConfig {
  std::string source = "blobs";  // blobs | container
  std::string path;
  std::size_t classes = 4;
  std::size_t n_per_class = 1250;
  std::size_t dim = 20;
  double separation = 3.0;
  double spread = 1.0;
  double test_fraction = 0.2;
};

struct NoiseConfig {
  std::string kind = "symmetric";  // symmetric | pair | instance | none
  double tau0 = 0.4;
  std::vector<std::size_t> pair_map;  // empty: cyclic i → i+1
  double rate_sd = 0.1;
};

struct ModelConfig {
  std::vector<std::size_t> hidden{128};
  std::size_t embed_dim = 64;
  bool relu_on_embedding = false;
};

struct MetricsConfig {
  bool enabled = true;
  std::size_t m_embed_pairs = 2000;
  std::string variance_of = "probs";  // probs | logits
  std::string taxonomy;
  std::vector<std::string> class_names;
};

struct ExperimentConfig {
  std::vector<std::uint64_t> seeds{1};
  std::string precision = "float";  // float | double
  std::string out_dir = "runs/default";
  bool checkpoint = true;
  bool omega_dump = false;
  DataConfig data;
  NoiseConfig noise;
  ModelConfig model;
  TrainConfig train;
  MetricsConfig metrics;

  Architecture architecture(std::size_t input_dim, std::size_t classes) const {
    Architecture a;
    a.layer_dims = {input_dim};
    a.layer_dims.insert(a.layer_dims.end(), model.hidden.begin(), model.hidden.end());
    a.layer_dims.push_back(model.embed_dim);
    a.classes = classes;
    a.relu_on_embedding = model.relu_on_embedding;
    return a;
  }
};

// ---------------------------------------------------------------------------
// Value codecs
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline double parse_double(const std::string& field, const std::string& s) {
  const auto t = trim(s);
  double v = 0;
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size() || t.empty())
    throw ConfigError(field + ": '" + s + "' is not a number");
  return v;
}

inline long long parse_int(const std::string& field, const std::string& s) {
  const auto t = trim(s);
  long long v = 0;
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size() || t.empty())
    throw ConfigError(field + ": '" + s + "' is not an integer");
  return v;
}

inline std::size_t parse_count(const std::string& field, const std::string& s) {
  const auto v = parse_int(field, s);
  if (v < 0) throw ConfigError(field + ": must be non-negative");
  return static_cast<std::size_t>(v);
}

inline std::uint64_t parse_u64(const std::string& field, const std::string& s) {
  const auto t = trim(s);
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size() || t.empty())
    throw ConfigError(field + ": '" + s + "' is not an unsigned integer");
  return v;
}

inline bool parse_bool(const std::string& field, const std::string& s) {
  auto t = trim(s);
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError(field + ": '" + s + "' is not a boolean");
}

inline std::string choice(const std::string& field, const std::string& s, std::initializer_list<const char*> allowed) {
  const auto t = trim(s);
  for (const char* a : allowed)
    if (t == a) return t;
  std::string msg = field + ": '" + s + "' is not one of";
  for (const char* a : allowed) msg += std::string(" ") + a;
  throw ConfigError(msg);
}

template <typename U>
std::string join(const std::vector<U>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    if constexpr (std::is_same_v<U, std::string>)
      s += v[i];
    else
      s += std::to_string(v[i]);
  }
  return s;
}

inline std::string image_str(const std::optional<ImageShape>& im) {
  if (!im) return "";
  return std::to_string(im->height) + "x" + std::to_string(im->width) + "x" + std::to_string(im->channels);
}

inline std::optional<ImageShape> parse_image(const std::string& field, const std::string& s) {
  if (trim(s).empty()) return std::nullopt;
  auto parts = split_list(s, 'x');
  if (parts.size() != 2 && parts.size() != 3) throw ConfigError(field + ": expected HxW or HxWxC");
  ImageShape im;
  im.height = parse_count(field, parts[0]);
  im.width = parse_count(field, parts[1]);
  im.channels = parts.size() == 3 ? parse_count(field, parts[2]) : 1;
  return im;
}

using Json = nlohmann::ordered_json;

struct ConfigKey {
  const char* section;
  const char* key;
  std::function<void(ExperimentConfig&, const std::string& field, const std::string& value)> set;
  std::function<Json(const ExperimentConfig&)> get;
};

// clang-format off
inline const std::vector<ConfigKey>& config_schema() {
  using C = ExperimentConfig;
  using S = const std::string&;
  static const std::vector<ConfigKey> keys = {
    {"experiment", "seeds",
     [](C& c, S f, S v) { c.seeds.clear(); for (auto& s : split_list(v)) c.seeds.push_back(parse_u64(f, s)); },
     [](const C& c) { return Json(join(c.seeds)); }},
    {"experiment", "precision", [](C& c, S f, S v) { c.precision = choice(f, v, {"float", "double"}); },
     [](const C& c) { return Json(c.precision); }},
    {"experiment", "out_dir", [](C& c, S, S v) { c.out_dir = trim(v); }, [](const C& c) { return Json(c.out_dir); }},
    {"experiment", "checkpoint", [](C& c, S f, S v) { c.checkpoint = parse_bool(f, v); },
     [](const C& c) { return Json(c.checkpoint); }},
    {"experiment", "omega_dump", [](C& c, S f, S v) { c.omega_dump = parse_bool(f, v); },
     [](const C& c) { return Json(c.omega_dump); }},

    {"data", "source", [](C& c, S f, S v) { c.data.source = choice(f, v, {"blobs", "container"}); },
     [](const C& c) { return Json(c.data.source); }},
    {"data", "path", [](C& c, S, S v) { c.data.path = trim(v); }, [](const C& c) { return Json(c.data.path); }},
    {"data", "classes", [](C& c, S f, S v) { c.data.classes = parse_count(f, v); },
     [](const C& c) { return Json(c.data.classes); }},
    {"data", "n_per_class", [](C& c, S f, S v) { c.data.n_per_class = parse_count(f, v); },
     [](const C& c) { return Json(c.data.n_per_class); }},
    {"data", "dim", [](C& c, S f, S v) { c.data.dim = parse_count(f, v); },
     [](const C& c) { return Json(c.data.dim); }},
    {"data", "separation", [](C& c, S f, S v) { c.data.separation = parse_double(f, v); },
     [](const C& c) { return Json(c.data.separation); }},
    {"data", "spread", [](C& c, S f, S v) { c.data.spread = parse_double(f, v); },
     [](const C& c) { return Json(c.data.spread); }},
    {"data", "test_fraction", [](C& c, S f, S v) { c.data.test_fraction = parse_double(f, v); },
     [](const C& c) { return Json(c.data.test_fraction); }},

    {"noise", "kind", [](C& c, S f, S v) { c.noise.kind = choice(f, v, {"symmetric", "pair", "instance", "none"}); },
     [](const C& c) { return Json(c.noise.kind); }},
    {"noise", "tau0", [](C& c, S f, S v) { c.noise.tau0 = parse_double(f, v); },
     [](const C& c) { return Json(c.noise.tau0); }},
    {"noise", "pair_map",
     [](C& c, S f, S v) { c.noise.pair_map.clear(); for (auto& s : split_list(v)) c.noise.pair_map.push_back(parse_count(f, s)); },
     [](const C& c) { return Json(join(c.noise.pair_map)); }},
    {"noise", "rate_sd", [](C& c, S f, S v) { c.noise.rate_sd = parse_double(f, v); },
     [](const C& c) { return Json(c.noise.rate_sd); }},

    {"model", "hidden",
     [](C& c, S f, S v) { c.model.hidden.clear(); for (auto& s : split_list(v)) c.model.hidden.push_back(parse_count(f, s)); },
     [](const C& c) { return Json(join(c.model.hidden)); }},
    {"model", "embed_dim", [](C& c, S f, S v) { c.model.embed_dim = parse_count(f, v); },
     [](const C& c) { return Json(c.model.embed_dim); }},
    {"model", "relu_on_embedding", [](C& c, S f, S v) { c.model.relu_on_embedding = parse_bool(f, v); },
     [](const C& c) { return Json(c.model.relu_on_embedding); }},

    {"train", "method",
     [](C& c, S f, S v) {
       auto m = choice(f, v, {"ccl", "rolr", "ce"});
       c.train.method = m == "ccl" ? Method::ccl : m == "rolr" ? Method::rolr : Method::ce;
     },
     [](const C& c) { return Json(method_name(c.train.method)); }},
    {"train", "epochs", [](C& c, S f, S v) { c.train.epochs = static_cast<int>(parse_int(f, v)); },
     [](const C& c) { return Json(c.train.epochs); }},
    {"train", "warmup", [](C& c, S f, S v) { c.train.warmup = static_cast<int>(parse_int(f, v)); },
     [](const C& c) { return Json(c.train.warmup); }},
    {"train", "batch_size", [](C& c, S f, S v) { c.train.batch_size = parse_count(f, v); },
     [](const C& c) { return Json(c.train.batch_size); }},
    {"train", "lr", [](C& c, S f, S v) { c.train.adam.lr = parse_double(f, v); },
     [](const C& c) { return Json(c.train.adam.lr); }},
    {"train", "beta1", [](C& c, S f, S v) { c.train.adam.beta1 = parse_double(f, v); },
     [](const C& c) { return Json(c.train.adam.beta1); }},
    {"train", "beta2", [](C& c, S f, S v) { c.train.adam.beta2 = parse_double(f, v); },
     [](const C& c) { return Json(c.train.adam.beta2); }},
    {"train", "adam_eps", [](C& c, S f, S v) { c.train.adam.eps = parse_double(f, v); },
     [](const C& c) { return Json(c.train.adam.eps); }},
    {"train", "c", [](C& c, S f, S v) { c.train.loss.c = parse_double(f, v); },
     [](const C& c) { return Json(c.train.loss.c); }},
    {"train", "T", [](C& c, S f, S v) { c.train.loss.sharpen_T = parse_double(f, v); },
     [](const C& c) { return Json(c.train.loss.sharpen_T); }},
    {"train", "tau", [](C& c, S f, S v) { c.train.loss.tau = parse_double(f, v); },
     [](const C& c) { return Json(c.train.loss.tau); }},
    {"train", "pg_hard", [](C& c, S f, S v) { c.train.loss.pg_hard = parse_bool(f, v); },
     [](const C& c) { return Json(c.train.loss.pg_hard); }},
    {"train", "sharpen_cross_target", [](C& c, S f, S v) { c.train.loss.sharpen_cross_target = parse_bool(f, v); },
     [](const C& c) { return Json(c.train.loss.sharpen_cross_target); }},
    {"train", "loss_view",
     [](C& c, S f, S v) { c.train.confidence.view = choice(f, v, {"plain", "weak"}) == "plain" ? LossView::plain : LossView::weak; },
     [](const C& c) { return Json(c.train.confidence.view == LossView::plain ? "plain" : "weak"); }},
    {"train", "gmm_max_iters", [](C& c, S f, S v) { c.train.confidence.max_iters = static_cast<int>(parse_int(f, v)); },
     [](const C& c) { return Json(c.train.confidence.max_iters); }},
    {"train", "gmm_tol", [](C& c, S f, S v) { c.train.confidence.tol = parse_double(f, v); },
     [](const C& c) { return Json(c.train.confidence.tol); }},
    {"train", "omega_override",
     [](C& c, S f, S v) {
       if (trim(v).empty()) c.train.omega_override.reset(); else c.train.omega_override = parse_double(f, v);
     },
     [](const C& c) { return c.train.omega_override ? Json(*c.train.omega_override) : Json(""); }},
    {"train", "eval_every", [](C& c, S f, S v) { c.train.eval_every = static_cast<int>(parse_int(f, v)); },
     [](const C& c) { return Json(c.train.eval_every); }},

    {"augment", "weak_jitter", [](C& c, S f, S v) { c.train.weak_jitter = parse_double(f, v); },
     [](const C& c) { return Json(c.train.weak_jitter); }},
    {"augment", "strong_jitter", [](C& c, S f, S v) { c.train.strong_jitter = parse_double(f, v); },
     [](const C& c) { return Json(c.train.strong_jitter); }},
    {"augment", "strong_ops", [](C& c, S f, S v) { c.train.strong_ops = static_cast<int>(parse_int(f, v)); },
     [](const C& c) { return Json(c.train.strong_ops); }},
    {"augment", "strong_magnitude", [](C& c, S f, S v) { c.train.strong_magnitude = parse_double(f, v); },
     [](const C& c) { return Json(c.train.strong_magnitude); }},
    {"augment", "mask_fraction", [](C& c, S f, S v) { c.train.mask_fraction = parse_double(f, v); },
     [](const C& c) { return Json(c.train.mask_fraction); }},
    {"augment", "image", [](C& c, S f, S v) { c.train.image = parse_image(f, v); },
     [](const C& c) { return Json(image_str(c.train.image)); }},

    {"metrics", "enabled", [](C& c, S f, S v) { c.metrics.enabled = parse_bool(f, v); },
     [](const C& c) { return Json(c.metrics.enabled); }},
    {"metrics", "m_embed_pairs", [](C& c, S f, S v) { c.metrics.m_embed_pairs = parse_count(f, v); },
     [](const C& c) { return Json(c.metrics.m_embed_pairs); }},
    {"metrics", "variance_of", [](C& c, S f, S v) { c.metrics.variance_of = choice(f, v, {"probs", "logits"}); },
     [](const C& c) { return Json(c.metrics.variance_of); }},
    {"metrics", "taxonomy", [](C& c, S, S v) { c.metrics.taxonomy = trim(v); },
     [](const C& c) { return Json(c.metrics.taxonomy); }},
    {"metrics", "class_names", [](C& c, S, S v) { c.metrics.class_names = split_list(v); },
     [](const C& c) { return Json(join(c.metrics.class_names)); }},
  };
  return keys;
}
// clang-format on

inline const ConfigKey* find_key(const std::string& section, const std::string& key) {
  for (const auto& k : config_schema())
    if (section == k.section && key == k.key) return &k;
  return nullptr;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Applying values
// ---------------------------------------------------------------------------

// Sets `section.key` from its textual value. Unknown keys raise ConfigError.
inline void set_config_value(ExperimentConfig& cfg, const std::string& path, const std::string& value) {
  const auto dot = path.find('.');
  if (dot == std::string::npos) throw ConfigError("unknown config key '" + path + "' (expected section.key)");
  const auto* k = detail::find_key(path.substr(0, dot), path.substr(dot + 1));
  if (!k) throw ConfigError("unknown config key '" + path + "'");
  k->set(cfg, path, value);
}

// Applies every (section.key, value) pair, reporting all unknown keys at once.
inline void apply_config_values(ExperimentConfig& cfg, const std::vector<std::pair<std::string, std::string>>& kv) {
  std::vector<std::string> unknown;
  for (const auto& [path, value] : kv) {
    const auto dot = path.find('.');
    if (dot == std::string::npos || !detail::find_key(path.substr(0, dot), path.substr(dot + 1)))
      unknown.push_back(path);
  }
  if (!unknown.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& u : unknown) msg += " " + u;
    throw ConfigError(msg);
  }
  for (const auto& [path, value] : kv) set_config_value(cfg, path, value);
}

inline std::vector<std::pair<std::string, std::string>> read_ini_values(std::istream& in) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  std::vector<std::pair<std::string, std::string>> kv;
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      kv.emplace_back(section, body.data());  // key outside any section
      continue;
    }
    for (const auto& [key, node] : body) kv.emplace_back(section + "." + key, node.data());
  }
  return kv;
}

// Accepts either {section: {key: value}} or a summary file carrying it under "config".
inline std::vector<std::pair<std::string, std::string>> read_json_values(const nlohmann::json& j) {
  const auto& root = j.contains("config") ? j["config"] : j;
  if (!root.is_object()) throw ConfigError("config: JSON config must be an object of sections");
  std::vector<std::pair<std::string, std::string>> kv;
  for (const auto& [section, body] : root.items()) {
    if (!body.is_object()) throw ConfigError("config: section '" + section + "' is not an object");
    for (const auto& [key, v] : body.items())
      kv.emplace_back(section + "." + key, v.is_string() ? v.get<std::string>() : v.dump());
  }
  return kv;
}

// INI by default; JSON when the file starts with '{'.
inline std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const auto text = buf.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    try {
      return read_json_values(nlohmann::json::parse(text));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
  }
  std::istringstream is(text);
  return read_ini_values(is);
}

// Fully defaulted, schema-ordered echo of a configuration.
inline nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& k : detail::config_schema()) j[k.section][k.key] = k.get(cfg);
  return j;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

inline void validate(const TrainConfig& t, std::vector<std::string>& problems) {
  auto bad = [&](const std::string& path, const std::string& why) { problems.push_back(path + ": " + why); };
  if (t.epochs < 0) bad("train.epochs", "must be non-negative");
  if (t.warmup < 0) bad("train.warmup", "must be non-negative");
  if (t.warmup > t.epochs) bad("train.warmup", "must not exceed train.epochs");
  if (t.batch_size < 1) bad("train.batch_size", "must be positive");
  if (!(t.adam.lr > 0)) bad("train.lr", "must be positive");
  if (!(t.adam.beta1 >= 0 && t.adam.beta1 < 1)) bad("train.beta1", "must lie in [0,1)");
  if (!(t.adam.beta2 >= 0 && t.adam.beta2 < 1)) bad("train.beta2", "must lie in [0,1)");
  if (!(t.adam.eps > 0)) bad("train.adam_eps", "must be positive");
  if (!(t.loss.c > 0 && t.loss.c < 1)) bad("train.c", "must lie in (0,1)");
  if (!(t.loss.sharpen_T > 0)) bad("train.T", "must be positive");
  if (!(t.loss.tau > 0)) bad("train.tau", "must be positive");
  if (t.confidence.max_iters < 1) bad("train.gmm_max_iters", "must be positive");
  if (!(t.confidence.tol > 0)) bad("train.gmm_tol", "must be positive");
  if (t.omega_override && !(*t.omega_override >= 0 && *t.omega_override <= 1))
    bad("train.omega_override", "must lie in [0,1]");
  if (t.eval_every < 1) bad("train.eval_every", "must be positive");
  if (!(t.weak_jitter >= 0)) bad("augment.weak_jitter", "must be non-negative");
  if (!(t.strong_jitter >= 0)) bad("augment.strong_jitter", "must be non-negative");
  if (t.strong_ops < 0) bad("augment.strong_ops", "must be non-negative");
  if (!(t.strong_magnitude >= 0 && t.strong_magnitude < 1)) bad("augment.strong_magnitude", "must lie in [0,1)");
  if (!(t.mask_fraction >= 0 && t.mask_fraction < 1)) bad("augment.mask_fraction", "must lie in [0,1)");
}

// Throws one ConfigError listing every offending field path.
inline void validate(const ExperimentConfig& c) {
  std::vector<std::string> problems;
  auto bad = [&](const std::string& path, const std::string& why) { problems.push_back(path + ": " + why); };
  if (c.seeds.empty()) bad("experiment.seeds", "need at least one seed");
  if (c.out_dir.empty()) bad("experiment.out_dir", "must not be empty");
  if (c.data.source == "container" && c.data.path.empty()) bad("data.path", "required when data.source = container");
  if (c.data.source == "blobs") {
    if (c.data.classes < 2) bad("data.classes", "need at least 2 classes");
    if (c.data.n_per_class < 1) bad("data.n_per_class", "must be positive");
    if (c.data.dim < 2) bad("data.dim", "must be at least 2");
    if (!(c.data.separation > 0)) bad("data.separation", "must be positive");
    if (!(c.data.spread >= 0)) bad("data.spread", "must be non-negative");
    if (!(c.data.test_fraction > 0 && c.data.test_fraction < 1)) bad("data.test_fraction", "must lie in (0,1)");
  }
  if (c.noise.kind != "none") {
    if (!(c.noise.tau0 >= 0 && c.noise.tau0 < 1)) bad("noise.tau0", "must lie in [0,1)");
    if (c.noise.kind == "instance" && !(c.noise.tau0 > 0)) bad("noise.tau0", "instance noise needs tau0 > 0");
  }
  if (!(c.noise.rate_sd >= 0)) bad("noise.rate_sd", "must be non-negative");
  if (c.model.embed_dim < 1) bad("model.embed_dim", "must be positive");
  for (auto h : c.model.hidden)
    if (h < 1) bad("model.hidden", "zero-width layer");
  if (c.metrics.m_embed_pairs < 1) bad("metrics.m_embed_pairs", "must be positive");
  validate(c.train, problems);
  if (!problems.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ConfigError(msg);
  }
}

}  // namespace ccl
