#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vsync/dataset.hpp"
#include "vsync/delay.hpp"
#include "vsync/flow.hpp"
#include "vsync/matchers.hpp"

namespace vsync {

inline double mae_frames(const std::vector<int>& preds, const std::vector<int>& truths) {
  if (preds.size() != truths.size()) throw std::invalid_argument("mae_frames: prediction and truth counts differ");
  if (preds.empty()) throw std::invalid_argument("mae_frames: no samples");
  double s = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) s += std::abs(preds[i] - truths[i]);
  return s / static_cast<double>(preds.size());
}

struct F1Result {
  double exact_accuracy = 0.0;
  double macro_f1 = 0.0;
};

/// Exact-match accuracy and the unweighted mean of per-class F1 over the
/// classes that occur in `truths`.
inline F1Result f1_delay(const std::vector<int>& preds, const std::vector<int>& truths) {
  if (preds.size() != truths.size()) throw std::invalid_argument("f1_delay: prediction and truth counts differ");
  if (preds.empty()) throw std::invalid_argument("f1_delay: no samples");
  std::map<int, std::size_t> tp, fp, fn;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    fn[truths[i]];
    if (preds[i] == truths[i]) {
      ++tp[truths[i]];
      ++correct;
    } else {
      ++fp[preds[i]];
      ++fn[truths[i]];
    }
  }
  double f1_sum = 0.0;
  for (const auto& [cls, missed] : fn) {
    const double t = static_cast<double>(tp[cls]);
    const double denom = 2.0 * t + static_cast<double>(fp[cls]) + static_cast<double>(missed);
    f1_sum += denom > 0.0 ? 2.0 * t / denom : 0.0;
  }
  return {static_cast<double>(correct) / static_cast<double>(preds.size()), f1_sum / static_cast<double>(fn.size())};
}

/// One (system, test set) cell of an experiment.
struct EvalRow {
  std::string matcher;
  std::string delay_method;
  std::string train_set;
  std::string test_set;
  std::size_t n = 0;
  double exact_acc = 0.0;
  double macro_f1 = 0.0;
  double mae = 0.0;

  std::string system() const { return matcher + "+" + delay_method + " (" + train_set + ")"; }
};

inline EvalRow score_predictions(const std::vector<int>& preds, const std::vector<int>& truths) {
  EvalRow r;
  const auto f = f1_delay(preds, truths);
  r.n = preds.size();
  r.exact_acc = f.exact_accuracy;
  r.macro_f1 = f.macro_f1;
  r.mae = mae_frames(preds, truths);
  return r;
}

inline constexpr const char* kResultsHeader = "matcher,delay_method,train_set,test_set,n,exact_acc,macro_f1,mae";

inline void write_results_csv(std::ostream& out, const std::vector<EvalRow>& rows) {
  out << kResultsHeader << '\n';
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f", r.exact_acc, r.macro_f1, r.mae);
    out << r.matcher << ',' << r.delay_method << ',' << r.train_set << ',' << r.test_set << ',' << r.n << ',' << buf
        << '\n';
  }
}

inline std::vector<EvalRow> read_results_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kResultsHeader) throw DataError("results CSV: unexpected header");
  std::vector<EvalRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 8) throw DataError("results CSV: expected 8 columns in '" + line + "'");
    EvalRow r{f[0], f[1], f[2], f[3], std::stoul(f[4]), std::stod(f[5]), std::stod(f[6]), std::stod(f[7])};
    rows.push_back(r);
  }
  return rows;
}

namespace svg_detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '&': o += "&amp;"; break;
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

}  // namespace svg_detail

/// Grouped bar chart: macro-F1 (top panel) and MAE (bottom panel), one group
/// per test set, one bar per system.
inline std::string render_results_svg(const std::vector<EvalRow>& rows) {
  using svg_detail::escape;
  using svg_detail::fmt;
  if (rows.empty()) throw std::invalid_argument("emit_plot: empty report");
  std::vector<std::string> tests, systems;
  for (const auto& r : rows) {
    if (std::find(tests.begin(), tests.end(), r.test_set) == tests.end()) tests.push_back(r.test_set);
    if (std::find(systems.begin(), systems.end(), r.system()) == systems.end()) systems.push_back(r.system());
  }
  double max_mae = 1.0;
  for (const auto& r : rows) max_mae = std::max(max_mae, r.mae);

  const double bar = 14.0, gap = 24.0, left = 60.0, panel_h = 180.0, top = 40.0;
  const double group_w = bar * static_cast<double>(systems.size()) + gap;
  const double width = left + group_w * static_cast<double>(tests.size()) + 20.0;
  const double legend_y = top + 2 * panel_h + 90.0;
  const double height = legend_y + 18.0 * static_cast<double>(systems.size()) + 10.0;
  static const char* palette[] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
                                  "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"};

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width) << "\" height=\"" << fmt(height)
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  struct Panel {
    const char* title;
    double y0;
    double scale_max;
    bool f1;
  };
  const Panel panels[] = {{"macro F1", top, 1.0, true}, {"MAE (frames)", top + panel_h + 40.0, max_mae, false}};
  for (const auto& p : panels) {
    const double base = p.y0 + panel_h;
    svg << "<text x=\"" << fmt(left) << "\" y=\"" << fmt(p.y0 - 8.0) << "\" font-weight=\"bold\">" << p.title << "</text>\n";
    svg << "<line x1=\"" << fmt(left) << "\" y1=\"" << fmt(base) << "\" x2=\"" << fmt(width - 10.0) << "\" y2=\""
        << fmt(base) << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << fmt(left - 6.0) << "\" y=\"" << fmt(p.y0 + 4.0) << "\" text-anchor=\"end\">" << fmt(p.scale_max)
        << "</text>\n";
    svg << "<text x=\"" << fmt(left - 6.0) << "\" y=\"" << fmt(base) << "\" text-anchor=\"end\">0</text>\n";
    for (std::size_t g = 0; g < tests.size(); ++g) {
      const double gx = left + gap / 2.0 + group_w * static_cast<double>(g);
      for (std::size_t s = 0; s < systems.size(); ++s) {
        const auto it = std::find_if(rows.begin(), rows.end(),
                                     [&](const EvalRow& r) { return r.test_set == tests[g] && r.system() == systems[s]; });
        if (it == rows.end()) continue;
        const double v = p.f1 ? it->macro_f1 : it->mae;
        const double h = panel_h * std::clamp(v / p.scale_max, 0.0, 1.0);
        svg << "<rect x=\"" << fmt(gx + bar * static_cast<double>(s)) << "\" y=\"" << fmt(base - h) << "\" width=\""
            << fmt(bar - 2.0) << "\" height=\"" << fmt(h) << "\" fill=\"" << palette[s % 10] << "\"><title>"
            << escape(systems[s]) << " on " << escape(tests[g]) << ": " << fmt(v) << "</title></rect>\n";
      }
      svg << "<text x=\"" << fmt(gx + (group_w - gap) / 2.0) << "\" y=\"" << fmt(base + 14.0)
          << "\" text-anchor=\"middle\">" << escape(tests[g]) << "</text>\n";
    }
  }
  for (std::size_t s = 0; s < systems.size(); ++s) {
    const double y = legend_y + 18.0 * static_cast<double>(s);
    svg << "<rect x=\"" << fmt(left) << "\" y=\"" << fmt(y - 10.0) << "\" width=\"10\" height=\"10\" fill=\""
        << palette[s % 10] << "\"/>\n";
    svg << "<text x=\"" << fmt(left + 16.0) << "\" y=\"" << fmt(y) << "\">" << escape(systems[s]) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

inline void emit_plot(const std::vector<EvalRow>& rows, const std::filesystem::path& path) {
  const auto svg = render_results_svg(rows);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << svg;
}

/// Where a named dataset's stereo scenes come from.
struct DatasetSpec {
  enum class Source { kSynthetic, kDirectory };
  Source source = Source::kSynthetic;
  SyntheticConfig synthetic;
  std::vector<std::uint64_t> seeds{1};
  std::filesystem::path directory;
};

enum class InputKind { kRaw, kFlow };

inline std::string to_string(InputKind k) { return k == InputKind::kRaw ? "raw" : "flow"; }

enum class DelayMethod { kHeatmap, kDense };

inline std::string to_string(DelayMethod m) { return m == DelayMethod::kHeatmap ? "heatmap" : "dense"; }
inline DelayMethod parse_delay_method(const std::string& s) {
  if (s == "heatmap") return DelayMethod::kHeatmap;
  if (s == "dense") return DelayMethod::kDense;
  throw std::invalid_argument("unknown delay method '" + s + "' (expected heatmap or dense)");
}

struct GridConfig {
  std::vector<ModelKind> matchers{ModelKind::kOracle};
  std::vector<DelayMethod> delay_methods{DelayMethod::kHeatmap};
  std::vector<std::string> train_sets;
  std::vector<std::string> test_sets;
  std::map<std::string, DatasetSpec> datasets;

  std::size_t resolution = 64;
  InputKind input = InputKind::kRaw;
  FlowEncoding flow_encoding = FlowEncoding::kDisplacement;
  FlowParams flow;

  std::size_t train_pairs = 500;
  std::size_t train_triplets = 500;
  std::size_t train_sequences = 400;
  std::size_t test_sequences = 100;

  TrainOptions siamese = siamese_reference_options();
  TrainOptions triplet = triplet_reference_options();
  TrainOptions densedelay = densedelay_reference_options();
  DenseInput dense_input = DenseInput::kRowArgmax;
  HeatmapOptions heatmap;
  bool triplet_hinge = true;
  std::uint64_t seed = 0;
  std::function<void(const std::string&)> progress;

  void validate() const {
    if (matchers.empty()) throw std::invalid_argument("grid: no matchers listed");
    if (delay_methods.empty()) throw std::invalid_argument("grid: no delay methods listed");
    if (train_sets.empty()) throw std::invalid_argument("grid: no train sets listed");
    if (test_sets.empty()) throw std::invalid_argument("grid: no test sets listed");
    for (const auto& t : train_sets) {
      if (std::find(test_sets.begin(), test_sets.end(), t) != test_sets.end()) {
        throw std::invalid_argument("grid: train set '" + t + "' also appears in the test sets");
      }
    }
    for (const auto* list : {&train_sets, &test_sets}) {
      for (const auto& name : *list) {
        if (!datasets.count(name)) throw std::invalid_argument("grid: dataset '" + name + "' is not defined");
      }
    }
    if (resolution < CnnBranch::kMinResolution) {
      const bool learned = std::any_of(matchers.begin(), matchers.end(), [](ModelKind k) { return k != ModelKind::kOracle; });
      if (learned) {
        throw std::invalid_argument("grid: resolution " + std::to_string(resolution) + " is below the CNN minimum of " +
                                    std::to_string(CnnBranch::kMinResolution));
      }
    }
    if (resolution == 0) throw std::invalid_argument("grid: resolution must be positive");
  }
};

/// Stable 64-bit FNV-1a, used to derive per-job seeds from names.
inline std::uint64_t stable_hash(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t master, const std::string& tag) {
  return synth_detail::mix(master ^ stable_hash(tag));
}

/// Scenes of a dataset at model resolution, converted to flow frames if requested.
inline std::vector<StereoStreams> load_dataset(const DatasetSpec& spec, std::size_t resolution, InputKind input,
                                               const FlowParams& flow, FlowEncoding encoding) {
  std::vector<StereoStreams> scenes;
  if (spec.source == DatasetSpec::Source::kSynthetic) {
    SyntheticConfig cfg = spec.synthetic;
    if (input == InputKind::kRaw) cfg.resolution = resolution;
    for (auto s : spec.seeds) scenes.push_back(render_synthetic_stereo(cfg, s));
  } else {
    const auto& root = spec.directory;
    if (std::filesystem::is_directory(root / "left")) {
      scenes.push_back(load_stereo(root, resolution));
    } else {
      if (!std::filesystem::is_directory(root)) throw DataError("dataset directory not found: " + root.string());
      std::vector<std::filesystem::path> subdirs;
      for (const auto& e : std::filesystem::directory_iterator(root)) {
        if (e.is_directory() && std::filesystem::is_directory(e.path() / "left")) subdirs.push_back(e.path());
      }
      std::sort(subdirs.begin(), subdirs.end());
      if (subdirs.empty()) throw DataError("no left/right scene directories under " + root.string());
      for (const auto& d : subdirs) scenes.push_back(load_stereo(d, resolution));
    }
  }
  if (input == InputKind::kFlow) {
    for (auto& s : scenes) {
      s.left = flow_stream(s.left, resolution, flow, encoding);
      s.right = flow_stream(s.right, resolution, flow, encoding);
    }
  }
  return scenes;
}

/// n split over k parts, earlier parts taking the remainder.
inline std::vector<std::size_t> split_count(std::size_t n, std::size_t k) {
  std::vector<std::size_t> out(k, n / k);
  for (std::size_t i = 0; i < n % k; ++i) ++out[i];
  return out;
}

inline std::vector<Triplet> triplets_from(const std::vector<StereoStreams>& scenes, std::size_t n, std::uint64_t seed) {
  std::vector<Triplet> out;
  const auto counts = split_count(n, scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    auto t = make_triplets(scenes[i].left, scenes[i].right, counts[i], derive_seed(seed, "triplets" + std::to_string(i)));
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

inline std::vector<LabeledPair> pairs_from(const std::vector<StereoStreams>& scenes, std::size_t n, std::uint64_t seed) {
  std::vector<LabeledPair> out;
  const auto counts = split_count(n, scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const std::size_t match = std::min(counts[i] / 2, scenes[i].left.size());
    auto p = make_pairs(scenes[i].left, scenes[i].right, match, counts[i] - match,
                        derive_seed(seed, "pairs" + std::to_string(i)));
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

/// Sequence pairs drawn scene by scene. Per-scene delay balance holds; with
/// several scenes the pooled histogram stays within one per scene.
inline std::vector<SequencePair> sequences_from(const std::vector<StereoStreams>& scenes, std::size_t n,
                                                std::uint64_t seed) {
  std::vector<SequencePair> out;
  const auto counts = split_count(n, scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    auto s = make_sequence_pairs(scenes[i].left, scenes[i].right, counts[i], derive_seed(seed, "seq" + std::to_string(i)));
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

/// Trains a learned matcher in place on a dataset's scenes; the oracle
/// needs no training and yields an empty log.
inline TrainingLog fit_matcher(FrameMatcher& matcher, const std::vector<StereoStreams>& scenes, const GridConfig& grid,
                               std::uint64_t seed) {
  if (auto* s = dynamic_cast<SiameseModel*>(&matcher)) {
    auto opt = grid.siamese;
    opt.seed = derive_seed(seed, "order");
    return train_siamese(*s, pairs_from(scenes, grid.train_pairs, seed), opt);
  }
  if (auto* t = dynamic_cast<TripletModel*>(&matcher)) {
    t->set_hinge(grid.triplet_hinge);
    auto opt = grid.triplet;
    opt.seed = derive_seed(seed, "order");
    return train_triplet(*t, triplets_from(scenes, grid.train_triplets, seed), opt);
  }
  return {};
}

inline std::unique_ptr<FrameMatcher> train_matcher(ModelKind kind, const std::vector<StereoStreams>& scenes,
                                                   std::size_t channels, const GridConfig& grid, std::uint64_t seed) {
  ModelMetadata meta;
  meta.kind = kind;
  meta.input_channels = channels;
  auto matcher = make_matcher(meta, derive_seed(seed, "init"));
  fit_matcher(*matcher, scenes, grid, seed);
  return matcher;
}

/// DenseDelay trained on matrices the matcher builds from the same scenes.
inline DenseDelayModel fit_densedelay(const FrameMatcher& matcher, const std::vector<StereoStreams>& scenes,
                                      const GridConfig& grid, std::uint64_t seed, TrainingLog* log = nullptr) {
  MatrixBuilder builder(matcher);
  std::vector<MatchingMatrix> mats;
  std::vector<int> labels;
  for (const auto& sp : sequences_from(scenes, grid.train_sequences, derive_seed(seed, "delay-train"))) {
    mats.push_back(builder.build(sp));
    labels.push_back(delay_to_class(sp.true_delay));
  }
  DenseDelayModel dense(derive_seed(seed, "dense-init"), false, grid.dense_input);
  auto opt = grid.densedelay;
  opt.seed = derive_seed(seed, "dense-order");
  auto l = train_densedelay(dense, mats, labels, opt);
  if (log) *log = std::move(l);
  return dense;
}

/// Train once per (matcher, train set), evaluate every delay method on every
/// test set. Rows come out ordered by train set, matcher, method, test set.
inline std::vector<EvalRow> run_experiment(const GridConfig& grid) {
  grid.validate();
  const auto say = [&](const std::string& msg) {
    if (grid.progress) grid.progress(msg);
  };
  const std::size_t channels =
      grid.input == InputKind::kFlow && grid.flow_encoding == FlowEncoding::kDisplacement ? 2 : 1;

  std::map<std::string, std::vector<StereoStreams>> loaded;
  auto scenes_of = [&](const std::string& name) -> const std::vector<StereoStreams>& {
    auto it = loaded.find(name);
    if (it == loaded.end()) {
      say("loading dataset " + name);
      it = loaded.emplace(name, load_dataset(grid.datasets.at(name), grid.resolution, grid.input, grid.flow,
                                             grid.flow_encoding)).first;
    }
    return it->second;
  };

  std::vector<EvalRow> rows;
  for (const auto& train_name : grid.train_sets) {
    const auto& train_scenes = scenes_of(train_name);
    for (const auto kind : grid.matchers) {
      const std::string job = train_name + "/" + to_string(kind);
      const auto job_seed = derive_seed(grid.seed, job);
      say("training matcher " + job);
      const auto matcher = train_matcher(kind, train_scenes, channels, grid, job_seed);

      std::unique_ptr<DenseDelayModel> dense;
      if (std::find(grid.delay_methods.begin(), grid.delay_methods.end(), DelayMethod::kDense) != grid.delay_methods.end()) {
        say("training DenseDelay for " + job);
        dense = std::make_unique<DenseDelayModel>(fit_densedelay(*matcher, train_scenes, grid, job_seed));
      }

      std::map<std::string, std::pair<std::vector<MatchingMatrix>, std::vector<int>>> test_data;
      MatrixBuilder builder(*matcher);
      for (const auto& test_name : grid.test_sets) {
        auto& [mats, truths] = test_data[test_name];
        for (const auto& sp : sequences_from(scenes_of(test_name), grid.test_sequences, derive_seed(grid.seed, "test/" + test_name))) {
          mats.push_back(builder.build(sp));
          truths.push_back(sp.true_delay);
        }
      }

      for (const auto method : grid.delay_methods) {
        for (const auto& test_name : grid.test_sets) {
          const auto& [mats, truths] = test_data.at(test_name);
          std::vector<int> preds;
          for (const auto& m : mats) {
            preds.push_back((method == DelayMethod::kHeatmap ? heatmap_estimate(m, grid.heatmap) : dense->estimate(m)).delay);
          }
          auto row = score_predictions(preds, truths);
          row.matcher = to_string(kind);
          row.delay_method = to_string(method);
          row.train_set = train_name;
          row.test_set = test_name;
          rows.push_back(row);
        }
      }
    }
  }
  return rows;
}

}  // namespace vsync
