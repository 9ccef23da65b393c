#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "makgcn/checkpoint.hpp"
#include "makgcn/data.hpp"
#include "makgcn/errors.hpp"
#include "makgcn/model.hpp"
#include "makgcn/training.hpp"

namespace makgcn::cli {

namespace fs = std::filesystem;

namespace {

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

std::string exact(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

template <typename N>
std::vector<N> parse_list(const std::string& text, const char* field) {
  std::vector<N> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    N v{};
    std::istringstream is(item);
    if (!(is >> v) || !(is >> std::ws).eof()) throw ConfigError(field, "bad list entry '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(field, "empty list");
  return out;
}

// "a:b:s", "a:b" or "a", inclusive of b.
std::vector<std::size_t> parse_sweep(const std::string& text, const char* field) {
  std::vector<long long> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ':')) {
    std::istringstream is(item);
    long long v = 0;
    if (!(is >> v) || !(is >> std::ws).eof()) throw ConfigError(field, "bad sweep '" + text + "'");
    parts.push_back(v);
  }
  if (parts.empty() || parts.size() > 3) throw ConfigError(field, "sweep must be start[:stop[:step]]");
  const long long start = parts[0];
  const long long stop = parts.size() > 1 ? parts[1] : start;
  const long long step = parts.size() > 2 ? parts[2] : 1;
  if (start < 0 || step < 1 || stop < start) throw ConfigError(field, "bad sweep '" + text + "'");
  std::vector<std::size_t> out;
  for (long long v = start; v <= stop; v += step) out.push_back(static_cast<std::size_t>(v));
  return out;
}

// ------------------------------------------------------------------ run spec

struct RunSpec {
  std::string command = "train";
  std::string preset = "synth";
  std::string data;       // dataset manifest; empty means generated (synth preset)
  std::string test_data;  // optional separate test manifest
  std::uint64_t data_seed = 7;
  double val_fraction = 0.2;
  SynthSpec synth;
  PipelineConfig pipeline;
  ModelConfig model;
  TrainConfig train;
  std::vector<std::uint64_t> seeds = {1};
};

void apply_preset(RunSpec& s) {
  if (s.preset == "synth") {
    s.pipeline.window_frames = 10;
    s.pipeline.window_stride = 30;
    s.pipeline.points_per_frame = 4;
    s.pipeline.split_ratios = {0.8, 0.1, 0.1};
    s.model.stage_widths = {16, 16, 32, 64};
    s.model.emb_dims = 128;
    s.model.fc_widths = {64, 32};
    s.train.max_epochs = 30;
    s.train.patience = 10;
  } else if (s.preset == "milipoint") {
    s.pipeline.split_ratios = {0.8, 0.1, 0.1};
  } else if (s.preset == "mmactivity") {
    // 10% test, then 20% of the remaining training data for validation.
    s.pipeline.split_ratios = {0.72, 0.18, 0.1};
    s.val_fraction = 0.2;
  } else {
    throw ConfigError("preset", "unknown preset '" + s.preset + "' (expected mmactivity, milipoint or synth)");
  }
}

Json synth_json(const SynthSpec& s) {
  return Json{{"classes", s.classes}, {"sequences_per_class", s.sequences_per_class},
              {"frames", s.frames},   {"points", s.points},
              {"noise", s.noise},     {"seed", s.seed}};
}

SynthSpec synth_from_json(const Json& j) {
  SynthSpec s;
  s.classes = j.at("classes").get<std::size_t>();
  s.sequences_per_class = j.at("sequences_per_class").get<std::size_t>();
  s.frames = j.at("frames").get<std::size_t>();
  s.points = j.at("points").get<std::size_t>();
  s.noise = j.at("noise").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

Json run_json(const RunSpec& s) {
  return Json{{"command", s.command},
              {"version", kVersion},
              {"preset", s.preset},
              {"data", s.data},
              {"test_data", s.test_data},
              {"data_seed", s.data_seed},
              {"val_fraction", s.val_fraction},
              {"synth", synth_json(s.synth)},
              {"pipeline", to_json(s.pipeline)},
              {"model", to_json(s.model)},
              {"train", to_json(s.train)},
              {"seeds", s.seeds},
              {"layout",
               {{"manifest", "manifest.json"},
                {"checkpoint", "checkpoint.bin"},
                {"history", "history.csv"},
                {"metrics", "metrics.json"},
                {"per_seed_dirs", s.seeds.size() > 1}}}};
}

RunSpec run_from_json(const Json& j) {
  try {
    RunSpec s;
    s.command = j.at("command").get<std::string>();
    s.preset = j.at("preset").get<std::string>();
    s.data = j.at("data").get<std::string>();
    s.test_data = j.at("test_data").get<std::string>();
    s.data_seed = j.at("data_seed").get<std::uint64_t>();
    s.val_fraction = j.at("val_fraction").get<double>();
    s.synth = synth_from_json(j.at("synth"));
    s.pipeline = pipeline_config_from_json(j.at("pipeline"));
    s.model = model_config_from_json(j.at("model"));
    s.train = train_config_from_json(j.at("train"));
    s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest", std::string("incomplete run manifest: ") + e.what());
  }
}

struct Datasets {
  std::vector<Sample> train, val, test;
};

std::vector<FrameSequence> primary_sequences(const RunSpec& s) {
  if (!s.data.empty()) return load_sequences(s.data);
  if (s.preset != "synth") throw ConfigError("data", "--data is required for preset " + s.preset);
  return synth_generate(s.synth);
}

// Fills in channel and class counts from the data.
void resolve_shapes(RunSpec& s, const std::vector<FrameSequence>& seqs,
                    const std::vector<FrameSequence>& test_seqs, bool classes_given) {
  if (seqs.empty()) throw DataError("dataset is empty");
  s.model.in_channels = seqs.front().channels;
  if (!classes_given) {
    int top = 0;
    for (const auto* set : {&seqs, &test_seqs}) {
      for (const auto& q : *set) top = std::max(top, q.label);
    }
    s.model.num_classes = std::max<std::size_t>(2, static_cast<std::size_t>(top) + 1);
  }
}

Datasets window_and_split(const RunSpec& s, const std::vector<FrameSequence>& seqs,
                          const std::vector<FrameSequence>& test_seqs) {
  Datasets d;
  auto windows = make_windows(seqs, s.pipeline);
  if (windows.empty()) throw DataError("no sequence is long enough for a " + std::to_string(s.pipeline.window_frames) + "-frame window");
  if (!test_seqs.empty()) {
    auto [train, val] = split_holdout(std::move(windows), s.val_fraction, s.pipeline.seed);
    d.train = std::move(train);
    d.val = std::move(val);
    d.test = make_windows(test_seqs, s.pipeline);
    if (d.test.empty()) throw DataError("test data yields no windows");
  } else {
    auto split = split_samples(std::move(windows), s.pipeline.split_ratios, s.pipeline.seed);
    d.train = std::move(split.train);
    d.val = std::move(split.val);
    d.test = std::move(split.test);
  }
  const std::size_t n = d.train.front().n_points;
  if (s.model.k > n) {
    throw ConfigError("k", "k = " + std::to_string(s.model.k) + " exceeds the " + std::to_string(n) +
                               " points per sample");
  }
  return d;
}

Datasets build_datasets(const RunSpec& s) {
  const auto seqs = primary_sequences(s);
  const auto test_seqs = s.test_data.empty() ? std::vector<FrameSequence>{} : load_sequences(s.test_data);
  return window_and_split(s, seqs, test_seqs);
}

void write_json(const fs::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

Json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string metrics_line(const char* tag, const Metrics& m) {
  return std::string(tag) + ",acc=" + fixed(100 * m.accuracy, 2) + ",pre=" + fixed(100 * m.precision, 2) +
         ",rec=" + fixed(100 * m.recall, 2) + ",f1=" + fixed(100 * m.f1, 2);
}

// ------------------------------------------------------------------ train

struct SeedOutcome {
  Metrics test;
  double best_val_accuracy = 0.0;
  std::size_t best_epoch = 0;
};

template <typename T>
SeedOutcome train_one(const RunSpec& spec, std::uint64_t seed, const fs::path& dir, const Datasets& data,
                      std::ostream& out) {
  fs::create_directories(dir);
  TrainConfig tc = spec.train;
  tc.seed = seed;
  Model<T> model(spec.model, seed);
  const Json run = run_json(spec);

  std::ofstream history(dir / "history.csv");
  if (!history) throw DataError("cannot write " + (dir / "history.csv").string());
  history << kHistoryHeader << '\n';
  out << "run,seed=" << seed << ",dir=" << dir.generic_string() << '\n' << kHistoryHeader << '\n';

  FitHooks<T> hooks;
  hooks.on_epoch = [&](const EpochRecord& r) {
    const std::string row = history_row(r);
    history << row << '\n' << std::flush;
    out << row << '\n' << std::flush;
  };
  hooks.on_improve = [&](const EpochRecord& r, Model<T>& m) {
    Json manifest{{"run", run},
                  {"seed", seed},
                  {"epoch", r.epoch},
                  {"val_loss", r.val_loss},
                  {"val_accuracy", r.val_accuracy},
                  {"eval_batch", tc.eval_batch_size()}};
    save_checkpoint(dir / "checkpoint.bin", m, manifest);
  };
  const FitResult<T> result = fit(model, data.train, data.val, tc, hooks);
  const Evaluation<T> test = evaluate(model, data.test, tc.eval_batch_size());
  write_json(dir / "metrics.json", Json{{"seed", seed},
                                        {"best_epoch", result.best_epoch},
                                        {"best_val_loss", result.best_val_loss},
                                        {"best_val_accuracy", result.best_val_accuracy},
                                        {"stopped_early", result.stopped_early},
                                        {"test", to_json(test.metrics)}});
  out << "best,epoch=" << result.best_epoch << ",val_loss=" << exact(result.best_val_loss)
      << ",val_acc=" << exact(result.best_val_accuracy) << '\n';
  out << metrics_line("test", test.metrics) << '\n';
  return {test.metrics, result.best_val_accuracy, result.best_epoch};
}

SeedOutcome train_dispatch(const RunSpec& spec, std::uint64_t seed, const fs::path& dir, const Datasets& data,
                           std::ostream& out) {
  if (spec.train.dtype == DType::f64) return train_one<double>(spec, seed, dir, data, out);
  return train_one<float>(spec, seed, dir, data, out);
}

void print_summary(std::ostream& out, const std::vector<std::uint64_t>& seeds, const std::vector<double>& acc) {
  double mean = 0.0;
  for (double a : acc) mean += a;
  mean /= static_cast<double>(acc.size());
  double var = 0.0;
  for (double a : acc) var += (a - mean) * (a - mean);
  const double sd = acc.size() > 1 ? std::sqrt(var / static_cast<double>(acc.size() - 1)) : 0.0;
  out << "summary,seeds=";
  for (std::size_t i = 0; i < seeds.size(); ++i) out << (i ? ";" : "") << seeds[i];
  out << ",acc_mean=" << fixed(100 * mean, 2) << ",acc_std=" << fixed(100 * sd, 2) << '\n';
}

// Options shared by train and ablate.
struct TrainFlags {
  std::string preset = "synth";
  std::optional<std::string> data, test_data, variant, seeds, dtype, widths, fc;
  std::optional<std::size_t> k, heads, emb_dims, epochs, patience, batch, classes, window, stride, points;
  std::optional<double> lr_max, dropout;
  std::optional<std::uint64_t> seed, data_seed;
  std::optional<std::size_t> synth_classes, synth_sequences, synth_frames, synth_points;
  std::optional<double> synth_noise;
  std::string out = "run";
  std::optional<std::string> manifest;

  void add_to(CLI::App& app) {
    app.add_option("--preset", preset, "mmactivity, milipoint or synth")->capture_default_str();
    app.add_option("--data", data, "dataset manifest (one frame file per line)");
    app.add_option("--test-data", test_data, "separate test manifest");
    app.add_option("--k", k, "neighbours per point");
    app.add_option("--heads", heads, "kernel heads per MAK layer");
    app.add_option("--variant", variant, "mak, mak-ff, sandwich or sequential");
    app.add_option("--emb-dims", emb_dims, "embedding width");
    app.add_option("--widths", widths, "four stage widths, comma separated");
    app.add_option("--fc", fc, "classifier hidden widths, comma separated");
    app.add_option("--dropout", dropout, "classifier dropout");
    app.add_option("--classes", classes, "number of classes (default: from labels)");
    app.add_option("--lr-max", lr_max, "initial learning rate");
    app.add_option("--epochs", epochs, "maximum epochs");
    app.add_option("--patience", patience, "early-stopping patience");
    app.add_option("--batch", batch, "batch size");
    app.add_option("--seed", seed, "training seed");
    app.add_option("--seeds", seeds, "comma list of training seeds (repeated runs)");
    app.add_option("--data-seed", data_seed, "seed for synthesis, sampling and splits");
    app.add_option("--dtype", dtype, "f32 or f64");
    app.add_option("--window", window, "frames per window");
    app.add_option("--stride", stride, "window stride");
    app.add_option("--points", points, "points kept per frame");
    app.add_option("--synth-classes", synth_classes);
    app.add_option("--synth-sequences", synth_sequences, "sequences per class");
    app.add_option("--synth-frames", synth_frames);
    app.add_option("--synth-points", synth_points);
    app.add_option("--synth-noise", synth_noise);
    app.add_option("--out", out, "output directory")->capture_default_str();
  }

  RunSpec resolve() const {
    RunSpec s;
    s.preset = preset;
    apply_preset(s);
    if (data) s.data = fs::absolute(*data).string();
    if (test_data) s.test_data = fs::absolute(*test_data).string();
    if (data_seed) s.data_seed = *data_seed;
    s.pipeline.seed = s.data_seed;
    s.synth.seed = s.data_seed;
    if (synth_classes) s.synth.classes = *synth_classes;
    if (synth_sequences) s.synth.sequences_per_class = *synth_sequences;
    if (synth_frames) s.synth.frames = *synth_frames;
    if (synth_points) s.synth.points = *synth_points;
    if (synth_noise) s.synth.noise = *synth_noise;
    if (window) s.pipeline.window_frames = *window;
    if (stride) s.pipeline.window_stride = *stride;
    if (points) s.pipeline.points_per_frame = *points;
    if (k) s.model.k = *k;
    if (heads) s.model.num_heads = *heads;
    if (variant) s.model.variant = parse_variant(*variant);
    if (emb_dims) s.model.emb_dims = *emb_dims;
    if (widths) {
      const auto w = parse_list<std::size_t>(*widths, "widths");
      if (w.size() != 4) throw ConfigError("widths", "expected four stage widths");
      std::copy(w.begin(), w.end(), s.model.stage_widths.begin());
    }
    if (fc) s.model.fc_widths = parse_list<std::size_t>(*fc, "fc");
    if (dropout) s.model.dropout = *dropout;
    if (classes) s.model.num_classes = *classes;
    if (lr_max) s.train.lr_max = *lr_max;
    if (epochs) s.train.max_epochs = *epochs;
    if (patience) s.train.patience = *patience;
    if (batch) s.train.batch_size = *batch;
    if (dtype) s.train.dtype = parse_dtype(*dtype);
    if (seed && seeds) throw ConfigError("seeds", "give --seed or --seeds, not both");
    if (seed) s.seeds = {*seed};
    if (seeds) s.seeds = parse_list<std::uint64_t>(*seeds, "seeds");
    if (s.preset == "synth" && s.data.empty() && !classes) s.model.num_classes = s.synth.classes;
    // Validate with placeholder shapes so flag errors surface before any I/O.
    ModelConfig probe = s.model;
    probe.num_classes = std::max<std::size_t>(probe.num_classes, 2);
    probe.validate();
    s.train.validate();
    s.pipeline.validate();
    s.synth.validate();
    return s;
  }
};

int cmd_train(const TrainFlags& flags, std::ostream& out) {
  RunSpec spec;
  if (flags.manifest) {
    spec = run_from_json(read_json(*flags.manifest));
    if (spec.command != "train") throw ConfigError("manifest", "not a train manifest");
  } else {
    spec = flags.resolve();
  }
  const auto seqs = primary_sequences(spec);
  const auto test_seqs = spec.test_data.empty() ? std::vector<FrameSequence>{} : load_sequences(spec.test_data);
  if (!flags.manifest) resolve_shapes(spec, seqs, test_seqs, flags.classes.has_value());
  spec.model.validate();

  const fs::path root(flags.out);
  fs::create_directories(root);
  write_json(root / "manifest.json", run_json(spec));

  const Datasets data = window_and_split(spec, seqs, test_seqs);
  out << "data,train=" << data.train.size() << ",val=" << data.val.size() << ",test=" << data.test.size()
      << ",points=" << data.train.front().n_points << ",classes=" << spec.model.num_classes << '\n';
  std::vector<double> accuracies;
  for (auto seed : spec.seeds) {
    const fs::path dir = spec.seeds.size() > 1 ? root / ("seed-" + std::to_string(seed)) : root;
    accuracies.push_back(train_dispatch(spec, seed, dir, data, out).test.accuracy);
  }
  if (spec.seeds.size() > 1) print_summary(out, spec.seeds, accuracies);
  return kOk;
}

// ------------------------------------------------------------------ eval / infer

struct Loaded {
  CheckpointFile file;
  RunSpec spec;
  DType dtype = DType::f32;
};

Loaded load_checkpoint_file(const std::string& path) {
  if (!fs::exists(path)) throw DataError("checkpoint not found: " + path);
  Loaded l;
  l.file = read_checkpoint(path);
  const Json& m = l.file.manifest;
  if (!m.contains("run") || !m.contains("dtype")) throw DataError(path + ": manifest lacks run or dtype");
  if (m.value("format_version", 0) != kCheckpointFormatVersion) {
    throw DataError(path + ": unsupported checkpoint format version");
  }
  l.spec = run_from_json(m.at("run"));
  l.dtype = parse_dtype(m.at("dtype").get<std::string>());
  return l;
}

template <typename T>
int eval_typed(const Loaded& l, const std::string& data, const std::string& split_name,
               const std::string& confusion_path, bool macro, std::ostream& out) {
  Model<T> model(l.spec.model, l.file.manifest.value("seed", std::uint64_t{0}));
  load_state(model, l.file);
  std::vector<Sample> samples;
  if (!data.empty()) {
    samples = make_windows(load_sequences(data), l.spec.pipeline);
  } else {
    Datasets d = build_datasets(l.spec);
    if (split_name == "train") samples = std::move(d.train);
    else if (split_name == "val") samples = std::move(d.val);
    else if (split_name == "test") samples = std::move(d.test);
    else throw ConfigError("split", "expected train, val or test");
  }
  if (samples.empty()) throw DataError("no windows to evaluate");
  const std::size_t batch = l.file.manifest.value("eval_batch", std::size_t{64});
  const Evaluation<T> ev = evaluate(model, samples, batch, macro ? Averaging::macro : Averaging::weighted);
  const Metrics& m = ev.metrics;
  out << "Acc,Pre,Rec,F1\n"
      << fixed(100 * m.accuracy, 2) << ',' << fixed(100 * m.precision, 2) << ',' << fixed(100 * m.recall, 2)
      << ',' << fixed(100 * m.f1, 2) << '\n';
  out << "fraction," << exact(m.accuracy) << ',' << exact(m.precision) << ',' << exact(m.recall) << ','
      << exact(m.f1) << '\n';
  std::ostringstream conf;
  for (const auto& row : m.confusion) {
    for (std::size_t j = 0; j < row.size(); ++j) conf << (j ? "," : "") << row[j];
    conf << '\n';
  }
  if (!confusion_path.empty()) {
    std::ofstream f(confusion_path);
    if (!f) throw DataError("cannot write " + confusion_path);
    f << conf.str();
  } else {
    out << "confusion\n" << conf.str();
  }
  return kOk;
}

template <typename T>
int infer_typed(const Loaded& l, std::uint64_t sequence, std::istream& in, std::ostream& out, std::ostream& err) {
  Model<T> model(l.spec.model, l.file.manifest.value("seed", std::uint64_t{0}));
  load_state(model, l.file);
  std::string line;
  if (!std::getline(in, line)) return kOk;
  const FrameHeader header = parse_frame_header(line);
  if (header.channels != l.spec.model.in_channels) {
    throw DataError("stream has " + std::to_string(header.channels) + " channels, model expects " +
                    std::to_string(l.spec.model.in_channels));
  }
  const PipelineConfig& pc = l.spec.pipeline;
  StreamAssembler assembler(pc.window_frames, pc.points_per_frame, header.channels, pc.seed, sequence);
  std::size_t lineno = 1;
  NoGradGuard no_grad;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    long long index = 0;
    const auto frame = parse_frame_line(line, header.channels, &index);
    if (!frame) {
      err << "warning: skipping malformed frame line " << lineno << '\n';
      continue;
    }
    const auto sample = assembler.push(*frame);
    if (!sample) continue;
    const std::vector<Sample> one{*sample};
    const std::size_t idx = 0;
    const Tensor<T> scores = softmax(model.forward(stack_batch<T>(one, std::span(&idx, 1)), Mode::eval));
    const std::span<const T> row = scores.data();
    out << index << ',' << argmax(row);
    for (T v : row) out << ',' << fixed(static_cast<double>(v), 4);
    out << '\n';
  }
  return kOk;
}

// ------------------------------------------------------------------ cost / ablate / synth

void print_cost_header(std::ostream& out) { out << "k,heads,variant,macs,params,macs_g,params_m\n"; }

void print_cost_row(std::ostream& out, const ModelConfig& c, std::size_t n_points) {
  const auto macs = count_macs(c, n_points);
  const auto params = count_params(c);
  out << c.k << ',' << c.num_heads << ',' << variant_name(c.variant) << ',' << macs << ',' << params << ','
      << fixed(static_cast<double>(macs) / 1e9, 4) << ',' << fixed(static_cast<double>(params) / 1e6, 4) << '\n';
}

int cmd_ablate(const TrainFlags& flags, std::ostream& out) {
  if (flags.variant) throw ConfigError("variant", "ablate trains every variant; drop --variant");
  RunSpec base = flags.resolve();
  const auto seqs = primary_sequences(base);
  const auto test_seqs = base.test_data.empty() ? std::vector<FrameSequence>{} : load_sequences(base.test_data);
  resolve_shapes(base, seqs, test_seqs, flags.classes.has_value());
  base.model.validate();

  const fs::path root(flags.out);
  fs::create_directories(root);
  Json manifest = run_json(base);
  manifest["command"] = "ablate";
  write_json(root / "manifest.json", manifest);

  const Datasets data = window_and_split(base, seqs, test_seqs);
  const std::size_t n = data.train.front().n_points;
  struct Row {
    Variant v;
    std::uint64_t macs, params;
    double accuracy;
  };
  std::vector<Row> rows;
  std::ostringstream log;
  for (Variant v : kAllVariants) {
    RunSpec spec = base;
    spec.model.variant = v;
    std::vector<double> acc;
    for (auto seed : spec.seeds) {
      fs::path dir = root / std::string(variant_name(v));
      if (spec.seeds.size() > 1) dir /= "seed-" + std::to_string(seed);
      acc.push_back(train_dispatch(spec, seed, dir, data, log).test.accuracy);
    }
    double mean = 0.0;
    for (double a : acc) mean += a;
    rows.push_back({v, count_macs(spec.model, n), count_params(spec.model), mean / static_cast<double>(acc.size())});
    std::ofstream(root / std::string(variant_name(v)) / "train.log") << log.str();
    log.str("");
  }
  out << "method,macs,params,macs_g,params_m,accuracy\n";
  for (const auto& r : rows) {
    out << variant_label(r.v) << ',' << r.macs << ',' << r.params << ',' << fixed(static_cast<double>(r.macs) / 1e9, 4)
        << ',' << fixed(static_cast<double>(r.params) / 1e6, 4) << ',' << fixed(100 * r.accuracy, 2) << '\n';
  }
  return kOk;
}

int cmd_synth(const SynthSpec& spec, const std::string& out_dir, std::ostream& out) {
  spec.validate();
  const fs::path root(out_dir);
  fs::create_directories(root);
  const auto seqs = synth_generate(spec);
  std::vector<fs::path> files;
  for (const auto& s : seqs) {
    char name[32];
    std::snprintf(name, sizeof(name), "seq_%05llu.txt", static_cast<unsigned long long>(s.id));
    write_frame_file(root / name, s);
    files.emplace_back(name);
  }
  write_manifest(root / "manifest.txt", files);
  out << "wrote " << seqs.size() << " sequences, manifest " << (root / "manifest.txt").generic_string() << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Point-cloud activity recognition with multi-head adaptive kernels"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  TrainFlags train_flags;
  auto* train = app.add_subcommand("train", "train a model (one run per seed)");
  train_flags.add_to(*train);
  train->add_option("--manifest", train_flags.manifest, "replay a run manifest (other flags except --out ignored)");

  TrainFlags ablate_flags;
  auto* ablate = app.add_subcommand("ablate", "train all four layer variants under one budget");
  ablate_flags.add_to(*ablate);

  std::string ckpt, eval_data, split = "test", confusion;
  bool macro = false;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  eval->add_option("--data", eval_data, "evaluate every window of this manifest instead of a split");
  eval->add_option("--split", split, "train, val or test")->capture_default_str();
  eval->add_option("--confusion", confusion, "write the confusion matrix here (CSV)");
  eval->add_flag("--macro", macro, "unweighted class averaging");

  std::string infer_ckpt;
  std::uint64_t sequence = 0;
  auto* infer = app.add_subcommand("infer", "stream frames from standard input");
  infer->add_option("--checkpoint", infer_ckpt, "checkpoint file")->required();
  infer->add_option("--sequence", sequence, "sequence id keying the sampling stream")->capture_default_str();

  std::string k_sweep = "20", head_sweep = "1", cost_variant = "sequential", cost_widths, cost_fc;
  std::size_t cost_points = 960, cost_classes = 5, cost_emb = 1024;
  auto* cost = app.add_subcommand("cost", "MACs and parameter counts");
  cost->add_option("--k-sweep", k_sweep, "start:stop:step, inclusive")->capture_default_str();
  cost->add_option("--head-sweep", head_sweep, "start:stop:step, inclusive")->capture_default_str();
  cost->add_option("--variant", cost_variant, "variant name or 'all'")->capture_default_str();
  cost->add_option("--points", cost_points, "points per sample")->capture_default_str();
  cost->add_option("--classes", cost_classes)->capture_default_str();
  cost->add_option("--emb-dims", cost_emb)->capture_default_str();
  cost->add_option("--widths", cost_widths, "four stage widths, comma separated");
  cost->add_option("--fc", cost_fc, "classifier hidden widths, comma separated");

  SynthSpec synth_spec;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "write a synthetic dataset as frame files");
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--classes", synth_spec.classes)->capture_default_str();
  synth->add_option("--sequences", synth_spec.sequences_per_class, "sequences per class")->capture_default_str();
  synth->add_option("--frames", synth_spec.frames)->capture_default_str();
  synth->add_option("--points", synth_spec.points)->capture_default_str();
  synth->add_option("--noise", synth_spec.noise)->capture_default_str();
  synth->add_option("--seed", synth_spec.seed)->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*train) return cmd_train(train_flags, out);
    if (*ablate) return cmd_ablate(ablate_flags, out);
    if (*eval) {
      const Loaded l = load_checkpoint_file(ckpt);
      return l.dtype == DType::f64 ? eval_typed<double>(l, eval_data, split, confusion, macro, out)
                                   : eval_typed<float>(l, eval_data, split, confusion, macro, out);
    }
    if (*infer) {
      const Loaded l = load_checkpoint_file(infer_ckpt);
      return l.dtype == DType::f64 ? infer_typed<double>(l, sequence, in, out, err)
                                   : infer_typed<float>(l, sequence, in, out, err);
    }
    if (*cost) {
      ModelConfig base;
      base.num_classes = cost_classes;
      base.emb_dims = cost_emb;
      if (!cost_widths.empty()) {
        const auto w = parse_list<std::size_t>(cost_widths, "widths");
        if (w.size() != 4) throw ConfigError("widths", "expected four stage widths");
        std::copy(w.begin(), w.end(), base.stage_widths.begin());
      }
      if (!cost_fc.empty()) base.fc_widths = parse_list<std::size_t>(cost_fc, "fc");
      std::vector<Variant> variants;
      if (cost_variant == "all") variants.assign(kAllVariants.begin(), kAllVariants.end());
      else variants.push_back(parse_variant(cost_variant));
      const auto ks = parse_sweep(k_sweep, "k-sweep");
      const auto hs = parse_sweep(head_sweep, "head-sweep");
      print_cost_header(out);
      for (Variant v : variants) {
        for (auto h : hs) {
          for (auto k : ks) {
            ModelConfig c = base;
            c.variant = v;
            c.k = k;
            c.num_heads = h;
            print_cost_row(out, c, cost_points);
          }
        }
      }
      return kOk;
    }
    if (*synth) return cmd_synth(synth_spec, synth_out, out);
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kConfig;
  } catch (const CheckpointMismatch& e) {
    err << "checkpoint mismatch: " << e.what() << '\n';
    return kConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const DivergenceError& e) {
    err << "numeric failure: " << e.what() << " (the last saved checkpoint is kept)\n";
    return kNumeric;
  } catch (const std::invalid_argument& e) {
    err << "configuration error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::logic_error& e) {
    err << "configuration error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kData;
  }
  return kConfig;
}

}  // namespace makgcn::cli
