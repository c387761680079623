// vsync: stereo video synchronization from pixel content.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "vsync/vsync.hpp"

namespace fs = std::filesystem;
using namespace vsync;

namespace {

struct CommonFlags {
  std::string config;
  std::vector<std::string> sets;
  std::string seed, out, resolution, input, matcher, delay, data, model;
  bool reference_defaults = false;
  bool force = false;
};

RunConfig resolve(const CommonFlags& f) {
  RunConfig cfg;
  if (!f.config.empty()) load_config_file(cfg, f.config);
  if (f.reference_defaults) cfg.apply_reference_defaults();
  const std::pair<const char*, const std::string*> flags[] = {
      {"seed", &f.seed},       {"out", &f.out},     {"resolution", &f.resolution}, {"input", &f.input},
      {"matcher", &f.matcher}, {"delay", &f.delay}, {"data", &f.data},             {"model", &f.model}};
  for (const auto& [key, value] : flags) {
    if (!value->empty()) cfg.set(key, *value);
  }
  for (const auto& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void refuse_overwrite(const fs::path& path, bool force) {
  if (fs::exists(path) && !force) throw ConfigError(path.string() + " already exists (pass --force to overwrite)");
}

std::string frame_name(const char* stem, std::size_t i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%05zu.%s", stem, i, ext);
  return buf;
}

std::string log_csv(const TrainingLog& log) {
  std::string out = "epoch,loss\n";
  char buf[64];
  for (std::size_t e = 0; e < log.epoch_loss.size(); ++e) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", e, log.epoch_loss[e]);
    out += buf;
  }
  return out;
}

DatasetSpec training_data(const RunConfig& cfg) {
  DatasetSpec spec;
  spec.synthetic = cfg.synthetic;
  if (cfg.data.empty()) {
    spec.seeds = cfg.scenes;
  } else {
    spec.source = DatasetSpec::Source::kDirectory;
    spec.directory = cfg.data;
  }
  return spec;
}

fs::path model_stem(const RunConfig& cfg) { return cfg.model.empty() ? cfg.out / "model" : cfg.model; }

void cmd_gen_data(const RunConfig& cfg) {
  SyntheticConfig sc = cfg.synthetic;
  sc.resolution = cfg.resolution;
  for (const auto seed : cfg.scenes) {
    const fs::path root = cfg.out / ("scene_" + std::to_string(seed));
    const auto streams = render_synthetic_stereo(sc, seed);
    for (const auto& [lens, stream] : {std::pair{"left", &streams.left}, std::pair{"right", &streams.right}}) {
      fs::create_directories(root / lens);
      for (std::size_t i = 0; i < stream->size(); ++i) write_pgm(root / lens / frame_name("frame", i, "pgm"), *(*stream)[i]);
      if (cfg.input == InputKind::kFlow) {
        fs::create_directories(root / "flow" / lens);
        for (std::size_t i = 0; i + 1 < stream->size(); ++i) {
          save_flow(root / "flow" / lens / frame_name("flow", i, "flo"), farneback_flow(*(*stream)[i], *(*stream)[i + 1], cfg.flow));
        }
      }
    }
    const std::vector<StereoStreams> one{streams};
    write_manifest(root / "manifest.csv", pairs_from(one, cfg.train_pairs, derive_seed(cfg.seed, "pairs")),
                   sequences_from(one, cfg.test_sequences, derive_seed(cfg.seed, "sequences")), "scene_" + std::to_string(seed));
    std::cerr << "wrote " << root.string() << " (" << streams.left.size() << " frames per lens)\n";
  }
  write_text(cfg.out / "config.txt", cfg.to_text());
}

void cmd_flow(const RunConfig& cfg) {
  if (cfg.data.empty()) throw ConfigError("flow needs --data pointing at a directory with left/ and right/");
  for (const char* lens : {"left", "right"}) {
    const auto frames = load_frames(cfg.data / lens, cfg.resolution);
    if (frames.size() < 2) throw DataError("need at least two frames in " + (cfg.data / lens).string());
    fs::create_directories(cfg.out / lens);
    for (std::size_t i = 0; i + 1 < frames.size(); ++i) {
      const auto flow = farneback_flow(*frames[i], *frames[i + 1], cfg.flow);
      save_flow(cfg.out / lens / frame_name("flow", i, "flo"), flow);
      write_pgm(cfg.out / lens / frame_name("magnitude", i, "pgm"),
                flow_to_frame(flow, cfg.resolution, FlowEncoding::kMagnitude, static_cast<int>(i)));
    }
    std::cerr << "wrote " << frames.size() - 1 << " flow fields to " << (cfg.out / lens).string() << "\n";
  }
}

void cmd_train(const RunConfig& cfg, bool force) {
  ModelMetadata meta;
  meta.kind = cfg.matcher;
  meta.input_channels = cfg.input_channels();
  meta.resolution = cfg.resolution;
  meta.input = to_string(cfg.input);
  const fs::path stem = model_stem(cfg);
  const fs::path meta_path = stem.string() + ".json", params_path = stem.string() + ".params";

  const std::uint64_t job_seed = derive_seed(cfg.seed, "train/" + to_string(cfg.matcher));
  auto matcher = make_matcher(meta, derive_seed(job_seed, "init"));
  if (fs::exists(meta_path) && !force) {
    const auto existing = load_metadata(meta_path);
    if (!(existing == meta)) {
      throw ConfigError("resume rejected: " + meta_path.string() + " holds " + existing.to_json().dump() +
                        " but this run wants " + meta.to_json().dump() + " (pass --force to start over)");
    }
    if (auto* params = matcher_params(*matcher); params && fs::exists(params_path)) {
      params->assign_values(ParamSet::load(params_path));
      std::cerr << "resuming from " << params_path.string() << "\n";
    }
  }
  if (!stem.parent_path().empty()) fs::create_directories(stem.parent_path());
  fs::create_directories(cfg.out);

  GridConfig grid = cfg.grid();
  auto report = [](const char* what) {
    return [what](std::size_t epoch, double loss) { std::cerr << what << " epoch " << epoch + 1 << " loss " << loss << "\n"; };
  };
  grid.siamese.on_epoch = grid.triplet.on_epoch = report("matcher");
  grid.densedelay.on_epoch = report("densedelay");

  const auto scenes = load_dataset(training_data(cfg), cfg.resolution, cfg.input, cfg.flow, cfg.flow_encoding);
  const auto log = fit_matcher(*matcher, scenes, grid, job_seed);
  save_metadata(meta_path, meta);
  if (const auto* params = matcher_params(*matcher)) params->save(params_path);
  write_text(cfg.out / "training_log.csv", log_csv(log));

  if (cfg.delay == DelayMethod::kDense) {
    TrainingLog dense_log;
    const auto dense = fit_densedelay(*matcher, scenes, grid, job_seed, &dense_log);
    dense.params().save(stem.string() + ".dense.params");
    write_text(stem.string() + ".dense.json", nlohmann::json{{"input", to_string(dense.input())}}.dump(2) + "\n");
    write_text(cfg.out / "densedelay_log.csv", log_csv(dense_log));
  }
  write_text(cfg.out / "config.txt", cfg.to_text());
  std::cerr << "saved " << meta_path.string() << "\n";
}

Stream sync_frames(const fs::path& dir, std::size_t resolution, std::size_t needed) {
  Stream frames;
  try {
    frames = load_frames(dir, resolution);
  } catch (const DataError& e) {
    throw DataError(std::string(e.what()) + " (need " + std::to_string(needed) + " frames in " + dir.string() + ")");
  }
  if (frames.size() < needed) {
    throw DataError(dir.string() + " holds " + std::to_string(frames.size()) + " frames; sync needs at least " +
                    std::to_string(needed));
  }
  frames.resize(needed);
  return frames;
}

void cmd_sync(const RunConfig& cfg, const fs::path& left_dir, const fs::path& right_dir) {
  ModelMetadata meta;
  std::unique_ptr<FrameMatcher> matcher;
  if (cfg.matcher == ModelKind::kOracle) {
    matcher = std::make_unique<PixelOracleMatcher>();
    meta.resolution = cfg.resolution;
    meta.input = to_string(cfg.input);
    meta.input_channels = cfg.input_channels();
  } else {
    matcher = load_matcher(model_stem(cfg), &meta);
    if (meta.kind != cfg.matcher) {
      throw ConfigError("model " + model_stem(cfg).string() + " is " + to_string(meta.kind) + ", not " + to_string(cfg.matcher));
    }
  }
  const bool flow = meta.input == "flow";
  const std::size_t needed = kSequenceLength + (flow ? 1 : 0);
  SequencePair seq;
  seq.left = sync_frames(left_dir, meta.resolution, needed);
  seq.right = sync_frames(right_dir, meta.resolution, needed);
  if (flow) {
    const auto enc = meta.input_channels == 2 ? FlowEncoding::kDisplacement : FlowEncoding::kMagnitude;
    seq.left = flow_stream(seq.left, meta.resolution, cfg.flow, enc);
    seq.right = flow_stream(seq.right, meta.resolution, cfg.flow, enc);
  }
  const auto matrix = MatrixBuilder(*matcher).build(seq);
  DelayEstimate est;
  if (cfg.delay == DelayMethod::kDense) {
    // The sidecar records the input transform the model was trained with.
    DenseInput input = cfg.dense_input;
    const fs::path sidecar = model_stem(cfg).string() + ".dense.json";
    if (fs::exists(sidecar)) {
      std::ifstream in(sidecar);
      input = parse_dense_input(nlohmann::json::parse(in).at("input").get<std::string>());
    }
    DenseDelayModel dense(0, false, input);
    dense.params().assign_values(ParamSet::load(model_stem(cfg).string() + ".dense.params"));
    est = dense.estimate(matrix);
  } else {
    est = heatmap_estimate(matrix, cfg.heatmap_options());
  }
  std::printf("delay %+d frames, confidence %.3f (%s + %s)\n", est.delay, est.confidence, matcher->tag().c_str(),
              est.method.c_str());
  const nlohmann::json record = {{"left", left_dir.string()}, {"right", right_dir.string()}, {"delay", est.delay},
                                 {"confidence", est.confidence}, {"method", est.method}, {"matcher", matcher->tag()}};
  std::printf("%s\n", record.dump().c_str());
}

void cmd_evaluate(RunConfig cfg, bool force) {
  const auto csv = cfg.out / "results.csv";
  refuse_overwrite(csv, force);
  GridConfig grid = cfg.grid();
  grid.progress = [](const std::string& msg) { std::cerr << msg << "\n"; };
  const auto rows = run_experiment(grid);
  fs::create_directories(cfg.out);
  std::ostringstream out;
  write_results_csv(out, rows);
  write_text(csv, out.str());
  emit_plot(rows, cfg.out / "results.svg");
  write_text(cfg.out / "config.txt", cfg.to_text());
  std::cout << out.str();
}

void cmd_plot(const RunConfig& cfg, fs::path results, bool force) {
  if (results.empty()) results = cfg.out / "results.csv";
  std::ifstream in(results);
  if (!in) throw DataError("cannot read " + results.string());
  const auto svg = cfg.out / "results.svg";
  refuse_overwrite(svg, force);
  fs::create_directories(cfg.out);
  emit_plot(read_results_csv(in), svg);
  std::cerr << "wrote " << svg.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Time-synchronize two stereo video streams from pixel content"};
  app.require_subcommand(1);
  app.fallthrough();

  CommonFlags f;
  app.add_option("--config", f.config, "Flat key = value config file");
  app.add_option("--set", f.sets, "Override any config key (key=value), repeatable");
  app.add_option("--seed", f.seed, "Master seed");
  app.add_option("--out", f.out, "Output root");
  app.add_option("--resolution", f.resolution, "Model input side in pixels");
  app.add_option("--input", f.input, "Network input: raw or flow");
  app.add_option("--matcher", f.matcher, "siamese, triplet-euc, triplet-sim or oracle");
  app.add_option("--delay", f.delay, "heatmap or dense");
  app.add_option("--data", f.data, "Dataset directory (left/ and right/, or scene subdirectories)");
  app.add_option("--model", f.model, "Model path stem (default <out>/model)");
  app.add_flag("--reference-defaults", f.reference_defaults, "Use the published hyperparameters and 224 px input");
  app.add_flag("--force", f.force, "Overwrite existing outputs");

  auto* gen = app.add_subcommand("gen-data", "Render synthetic stereo scenes and manifests");
  auto* flow = app.add_subcommand("flow", "Dense optical flow for a stereo directory");
  auto* train = app.add_subcommand("train", "Train a matcher (and DenseDelay with --delay dense)");
  auto* sync = app.add_subcommand("sync", "Estimate the delay between two frame directories");
  std::string left_dir, right_dir;
  sync->add_option("left", left_dir, "Left frame directory")->required();
  sync->add_option("right", right_dir, "Right frame directory")->required();
  auto* evaluate = app.add_subcommand("evaluate", "Run the cross-dataset experiment grid");
  auto* plot = app.add_subcommand("plot", "Render results.svg from a results CSV");
  std::string results;
  plot->add_option("results", results, "Results CSV (default <out>/results.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const RunConfig cfg = resolve(f);
    if (gen->parsed()) cmd_gen_data(cfg);
    if (flow->parsed()) cmd_flow(cfg);
    if (train->parsed()) cmd_train(cfg, f.force);
    if (sync->parsed()) cmd_sync(cfg, left_dir, right_dir);
    if (evaluate->parsed()) cmd_evaluate(cfg, f.force);
    if (plot->parsed()) cmd_plot(cfg, results, f.force);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
