#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vsync/eval.hpp"

namespace vsync {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Everything a CLI run depends on. Unset hyperparameters fall back to the
/// reference values for the selected matcher.
struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out = "out";
  std::filesystem::path data;
  std::filesystem::path model;
  std::size_t resolution = 224;
  InputKind input = InputKind::kRaw;
  FlowEncoding flow_encoding = FlowEncoding::kDisplacement;
  ModelKind matcher = ModelKind::kTripletEuclidean;
  DelayMethod delay = DelayMethod::kHeatmap;
  bool heatmap_normalize = false;
  bool triplet_hinge = true;

  std::optional<std::size_t> matcher_epochs, matcher_batch;
  std::optional<double> matcher_lr;
  std::size_t dense_epochs = 50;
  std::size_t dense_batch = 32;
  double dense_lr = 0.01;
  DenseInput dense_input = DenseInput::kRowArgmax;

  std::size_t train_pairs = 500;
  std::size_t train_triplets = 500;
  std::size_t train_sequences = 400;
  std::size_t test_sequences = 100;

  FlowParams flow;
  SyntheticConfig synthetic;
  std::vector<std::uint64_t> scenes{1};

  std::vector<ModelKind> grid_matchers{ModelKind::kOracle};
  std::vector<DelayMethod> grid_delays{DelayMethod::kHeatmap};
  std::vector<std::string> train_sets;
  std::vector<std::string> test_sets;
  std::map<std::string, std::string> datasets;

  TrainOptions matcher_options(ModelKind kind) const {
    TrainOptions o = kind == ModelKind::kSiamese ? siamese_reference_options() : triplet_reference_options();
    if (matcher_epochs) o.epochs = *matcher_epochs;
    if (matcher_batch) o.batch = *matcher_batch;
    if (matcher_lr) o.lr = *matcher_lr;
    o.seed = seed;
    return o;
  }
  TrainOptions dense_options() const { return {dense_epochs, dense_batch, dense_lr, seed, {}}; }
  HeatmapOptions heatmap_options() const { return {heatmap_normalize}; }
  std::size_t input_channels() const {
    return input == InputKind::kFlow && flow_encoding == FlowEncoding::kDisplacement ? 2 : 1;
  }

  /// Pins the published training hyperparameters and input size.
  void apply_reference_defaults() {
    resolution = 224;
    matcher_epochs.reset();
    matcher_batch.reset();
    matcher_lr.reset();
    dense_epochs = 50;
    dense_batch = 32;
    dense_lr = 0.01;
  }

  void validate() const;
  void set(const std::string& key, const std::string& value);
  std::string to_text() const;
  DatasetSpec dataset_spec(const std::string& name) const;
  GridConfig grid() const;
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_int(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

template <typename F>
auto wrap(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

inline std::string real_text(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <typename T, typename F>
std::string join(const std::vector<T>& items, F&& fmt) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + fmt(items[i]);
  return out;
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline FlowEncoding parse_encoding(const std::string& v) {
  if (v == "displacement") return FlowEncoding::kDisplacement;
  if (v == "magnitude") return FlowEncoding::kMagnitude;
  throw std::invalid_argument("unknown flow encoding '" + v + "' (expected displacement or magnitude)");
}

inline InputKind parse_input(const std::string& v) {
  if (v == "raw") return InputKind::kRaw;
  if (v == "flow") return InputKind::kFlow;
  throw std::invalid_argument("unknown input kind '" + v + "' (expected raw or flow)");
}

#define VSYNC_SIZE_FIELD(name, member)                                                                  \
  {name, {[](RunConfig& c, const std::string& k, const std::string& v) { c.member = parse_int<std::size_t>(k, v); }, \
          [](const RunConfig& c) { return std::to_string(c.member); }}}
#define VSYNC_INT_FIELD(name, member)                                                                  \
  {name, {[](RunConfig& c, const std::string& k, const std::string& v) { c.member = parse_int<int>(k, v); }, \
          [](const RunConfig& c) { return std::to_string(c.member); }}}
#define VSYNC_REAL_FIELD(name, member)                                                                \
  {name, {[](RunConfig& c, const std::string& k, const std::string& v) { c.member = parse_real(k, v); }, \
          [](const RunConfig& c) { return real_text(c.member); }}}

inline const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"seed", {[](RunConfig& c, const std::string& k, const std::string& v) { c.seed = parse_int<std::uint64_t>(k, v); },
                [](const RunConfig& c) { return std::to_string(c.seed); }}},
      {"out", {[](RunConfig& c, const std::string&, const std::string& v) { c.out = v; },
               [](const RunConfig& c) { return c.out.string(); }}},
      {"data", {[](RunConfig& c, const std::string&, const std::string& v) { c.data = v; },
                [](const RunConfig& c) { return c.data.string(); }}},
      {"model", {[](RunConfig& c, const std::string&, const std::string& v) { c.model = v; },
                 [](const RunConfig& c) { return c.model.string(); }}},
      VSYNC_SIZE_FIELD("resolution", resolution),
      {"input", {[](RunConfig& c, const std::string& k, const std::string& v) { c.input = wrap(k, [&] { return parse_input(v); }); },
                 [](const RunConfig& c) { return to_string(c.input); }}},
      {"flow_encoding",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.flow_encoding = wrap(k, [&] { return parse_encoding(v); }); },
        [](const RunConfig& c) { return std::string(c.flow_encoding == FlowEncoding::kDisplacement ? "displacement" : "magnitude"); }}},
      {"matcher", {[](RunConfig& c, const std::string& k, const std::string& v) { c.matcher = wrap(k, [&] { return parse_model_kind(v); }); },
                   [](const RunConfig& c) { return to_string(c.matcher); }}},
      {"delay", {[](RunConfig& c, const std::string& k, const std::string& v) { c.delay = wrap(k, [&] { return parse_delay_method(v); }); },
                 [](const RunConfig& c) { return to_string(c.delay); }}},
      {"heatmap_normalize", {[](RunConfig& c, const std::string& k, const std::string& v) { c.heatmap_normalize = parse_bool(k, v); },
                             [](const RunConfig& c) { return std::string(c.heatmap_normalize ? "true" : "false"); }}},
      {"triplet_hinge", {[](RunConfig& c, const std::string& k, const std::string& v) { c.triplet_hinge = parse_bool(k, v); },
                         [](const RunConfig& c) { return std::string(c.triplet_hinge ? "true" : "false"); }}},
      {"matcher_epochs", {[](RunConfig& c, const std::string& k, const std::string& v) { c.matcher_epochs = parse_int<std::size_t>(k, v); },
                          [](const RunConfig& c) { return c.matcher_epochs ? std::to_string(*c.matcher_epochs) : "reference"; }}},
      {"matcher_batch", {[](RunConfig& c, const std::string& k, const std::string& v) { c.matcher_batch = parse_int<std::size_t>(k, v); },
                         [](const RunConfig& c) { return c.matcher_batch ? std::to_string(*c.matcher_batch) : "reference"; }}},
      {"matcher_lr", {[](RunConfig& c, const std::string& k, const std::string& v) { c.matcher_lr = parse_real(k, v); },
                      [](const RunConfig& c) { return c.matcher_lr ? real_text(*c.matcher_lr) : "reference"; }}},
      VSYNC_SIZE_FIELD("dense_epochs", dense_epochs),
      VSYNC_SIZE_FIELD("dense_batch", dense_batch),
      VSYNC_REAL_FIELD("dense_lr", dense_lr),
      {"dense_input", {[](RunConfig& c, const std::string& k, const std::string& v) { c.dense_input = wrap(k, [&] { return parse_dense_input(v); }); },
                       [](const RunConfig& c) { return to_string(c.dense_input); }}},
      VSYNC_SIZE_FIELD("train_pairs", train_pairs),
      VSYNC_SIZE_FIELD("train_triplets", train_triplets),
      VSYNC_SIZE_FIELD("train_sequences", train_sequences),
      VSYNC_SIZE_FIELD("test_sequences", test_sequences),
      VSYNC_INT_FIELD("flow_levels", flow.levels),
      VSYNC_REAL_FIELD("flow_pyramid_scale", flow.pyramid_scale),
      VSYNC_INT_FIELD("flow_window", flow.window_size),
      VSYNC_INT_FIELD("flow_iterations", flow.iterations),
      VSYNC_INT_FIELD("flow_poly_n", flow.poly_n),
      VSYNC_REAL_FIELD("flow_poly_sigma", flow.poly_sigma),
      VSYNC_SIZE_FIELD("synth_frames", synthetic.frames),
      VSYNC_REAL_FIELD("synth_disparity", synthetic.disparity),
      VSYNC_REAL_FIELD("synth_pan_speed", synthetic.pan_speed),
      VSYNC_INT_FIELD("synth_objects", synthetic.objects),
      VSYNC_REAL_FIELD("synth_object_speed", synthetic.object_speed),
      VSYNC_REAL_FIELD("synth_flicker", synthetic.flicker),
      VSYNC_REAL_FIELD("synth_noise", synthetic.sensor_noise),
      {"scenes", {[](RunConfig& c, const std::string& k, const std::string& v) {
                    c.scenes.clear();
                    for (const auto& s : split_list(v)) c.scenes.push_back(parse_int<std::uint64_t>(k, s));
                  },
                  [](const RunConfig& c) { return join(c.scenes, [](std::uint64_t s) { return std::to_string(s); }); }}},
      {"grid_matchers", {[](RunConfig& c, const std::string& k, const std::string& v) {
                           c.grid_matchers.clear();
                           for (const auto& s : split_list(v)) c.grid_matchers.push_back(wrap(k, [&] { return parse_model_kind(s); }));
                         },
                         [](const RunConfig& c) { return join(c.grid_matchers, [](ModelKind m) { return to_string(m); }); }}},
      {"grid_delays", {[](RunConfig& c, const std::string& k, const std::string& v) {
                         c.grid_delays.clear();
                         for (const auto& s : split_list(v)) c.grid_delays.push_back(wrap(k, [&] { return parse_delay_method(s); }));
                       },
                       [](const RunConfig& c) { return join(c.grid_delays, [](DelayMethod m) { return to_string(m); }); }}},
      {"train_sets", {[](RunConfig& c, const std::string&, const std::string& v) { c.train_sets = split_list(v); },
                      [](const RunConfig& c) { return join(c.train_sets, [](const std::string& s) { return s; }); }}},
      {"test_sets", {[](RunConfig& c, const std::string&, const std::string& v) { c.test_sets = split_list(v); },
                     [](const RunConfig& c) { return join(c.test_sets, [](const std::string& s) { return s; }); }}},
  };
  return table;
}

#undef VSYNC_SIZE_FIELD
#undef VSYNC_INT_FIELD
#undef VSYNC_REAL_FIELD

inline constexpr const char* kDatasetPrefix = "dataset.";

}  // namespace config_detail

/// Sets one key; `dataset.<name>` keys define grid datasets as
/// `synthetic:<seed>[,<seed>...]` or `dir:<path>`.
inline void RunConfig::set(const std::string& key, const std::string& value) {
  using namespace config_detail;
  const std::string v = trim(value);
  if (key.rfind(kDatasetPrefix, 0) == 0) {
    const auto name = key.substr(std::string(kDatasetPrefix).size());
    if (name.empty() || name.find_first_of(", ") != std::string::npos) {
      throw ConfigError("config key '" + key + "': dataset names must be non-empty without commas or spaces");
    }
    datasets[name] = v;
    dataset_spec(name);
    return;
  }
  const auto& table = fields();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(*this, key, v);
}

inline DatasetSpec RunConfig::dataset_spec(const std::string& name) const {
  const auto it = datasets.find(name);
  if (it == datasets.end()) throw ConfigError("dataset '" + name + "' is not defined (add a dataset." + name + " key)");
  const auto& v = it->second;
  const std::string key = config_detail::kDatasetPrefix + name;
  DatasetSpec spec;
  spec.synthetic = synthetic;
  if (v.rfind("synthetic:", 0) == 0) {
    spec.source = DatasetSpec::Source::kSynthetic;
    spec.seeds.clear();
    for (const auto& s : config_detail::split_list(v.substr(10))) {
      spec.seeds.push_back(config_detail::parse_int<std::uint64_t>(key, s));
    }
    if (spec.seeds.empty()) throw ConfigError("config key '" + key + "': synthetic dataset needs at least one seed");
  } else if (v.rfind("dir:", 0) == 0 && v.size() > 4) {
    spec.source = DatasetSpec::Source::kDirectory;
    spec.directory = v.substr(4);
  } else {
    throw ConfigError("config key '" + key + "': expected synthetic:<seeds> or dir:<path>, got '" + v + "'");
  }
  return spec;
}

inline void RunConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) { throw ConfigError("config key '" + key + "': " + why); };
  if (resolution == 0) fail("resolution", "must be positive");
  const bool learned = matcher != ModelKind::kOracle ||
                       std::any_of(grid_matchers.begin(), grid_matchers.end(), [](ModelKind k) { return k != ModelKind::kOracle; });
  if (learned && resolution < CnnBranch::kMinResolution) {
    fail("resolution", std::to_string(resolution) + " is below the CNN minimum of " + std::to_string(CnnBranch::kMinResolution));
  }
  if (matcher_epochs && *matcher_epochs == 0) fail("matcher_epochs", "must be positive");
  if (matcher_batch && *matcher_batch == 0) fail("matcher_batch", "must be positive");
  if (matcher_lr && !(*matcher_lr >= 0.0)) fail("matcher_lr", "must be non-negative");
  if (dense_epochs == 0) fail("dense_epochs", "must be positive");
  if (dense_batch == 0) fail("dense_batch", "must be positive");
  if (!(dense_lr >= 0.0)) fail("dense_lr", "must be non-negative");
  if (train_pairs == 0) fail("train_pairs", "must be positive");
  if (train_triplets == 0) fail("train_triplets", "must be positive");
  if (train_sequences == 0) fail("train_sequences", "must be positive");
  if (test_sequences == 0) fail("test_sequences", "must be positive");
  if (scenes.empty()) fail("scenes", "needs at least one seed");
  if (synthetic.frames < kMinSequenceStream) {
    fail("synth_frames", "needs at least " + std::to_string(kMinSequenceStream) + " frames for sequence pairs");
  }
  try {
    flow.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("flow parameters: ") + e.what());
  }
  try {
    SyntheticConfig s = synthetic;
    s.resolution = std::max<std::size_t>(resolution, 16);
    s.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("synthetic parameters: ") + e.what());
  }
  for (const auto& [name, v] : datasets) dataset_spec(name);
}

/// Sorted `key = value` lines; parsing them back reproduces the config.
inline std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [key, field] : config_detail::fields()) {
    const auto v = field.get(*this);
    if (v == "reference") continue;
    out += key + " = " + v + "\n";
  }
  for (const auto& [name, v] : datasets) out += std::string(config_detail::kDatasetPrefix) + name + " = " + v + "\n";
  return out;
}

inline GridConfig RunConfig::grid() const {
  GridConfig g;
  g.matchers = grid_matchers;
  g.delay_methods = grid_delays;
  g.train_sets = train_sets;
  g.test_sets = test_sets;
  for (const auto* list : {&train_sets, &test_sets}) {
    for (const auto& name : *list) g.datasets[name] = dataset_spec(name);
  }
  g.resolution = resolution;
  g.input = input;
  g.flow_encoding = flow_encoding;
  g.flow = flow;
  g.train_pairs = train_pairs;
  g.train_triplets = train_triplets;
  g.train_sequences = train_sequences;
  g.test_sequences = test_sequences;
  g.siamese = matcher_options(ModelKind::kSiamese);
  g.triplet = matcher_options(ModelKind::kTripletEuclidean);
  g.densedelay = dense_options();
  g.dense_input = dense_input;
  g.heatmap = heatmap_options();
  g.triplet_hinge = triplet_hinge;
  g.seed = seed;
  return g;
}

/// Applies `key = value` lines; `#` starts a comment. Errors name the line.
inline void apply_config_text(RunConfig& cfg, std::istream& in, const std::string& origin = "config") {
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(n) + ": expected key = value, got '" + line + "'");
    }
    const auto key = config_detail::trim(line.substr(0, eq));
    try {
      cfg.set(key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

inline void load_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  apply_config_text(cfg, in, path.string());
}

}  // namespace vsync
