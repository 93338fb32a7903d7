#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "sevq/checkpoint.hpp"
#include "sevq/config_json.hpp"
#include "sevq/data_io.hpp"
#include "sevq/errors.hpp"
#include "sevq/evaluation.hpp"
#include "sevq/png_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace sevq::cli {
namespace {

constexpr const char* kRegionNames[kNumRegions] = {"upper_right", "upper_left", "middle_right",
                                                   "middle_left", "lower_right", "lower_left"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory '" + dir.string() + "'");
}

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw IoError(what + " '" + path.string() + "' does not exist");
}

json settings_json(const Settings& s) {
  return json{{"train", s.train},
              {"synthetic", s.synthetic},
              {"mode", to_string(s.mode)},
              {"threshold", s.threshold},
              {"deterministic", s.deterministic}};
}

/// Creates the output directory and writes run_manifest.json. Called before
/// any other output of a command.
void begin_run(const std::string& command, const Options& options, const Settings& settings, const json& inputs) {
  if (options.out.empty()) throw ValidationError(command + ": --out is required");
  make_dir(options.out);
  json manifest{{"command", command},
                {"config_path", options.config_path ? json(options.config_path->string()) : json(nullptr)},
                {"resolved_config", settings_json(settings)},
                {"seed", settings.train.seed},
                {"out_dir", options.out.string()},
                {"version", SEVQ_VERSION},
                {"inputs", inputs}};
  write_text(options.out / "run_manifest.json", manifest.dump(2) + "\n");
}

void warn(std::ostream& log, const std::string& message) { log << "warning: " << message << '\n'; }

/// Reads the images and masks of `records`. Every referenced file is checked
/// before any is decoded so missing inputs fail fast.
std::vector<TrainingSample> load_samples(const fs::path& manifest, const std::vector<DatasetRecord>& records,
                                         const PreprocessConfig& preprocess, bool keep_labels) {
  for (const auto& r : records) {
    require_file(resolve_path(manifest, r.image_path), "image");
    require_file(resolve_path(manifest, r.mask_path), "mask");
  }
  std::vector<TrainingSample> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    const ImageTensor image = read_png_image(resolve_path(manifest, r.image_path));
    const LungMask mask = read_png_mask(resolve_path(manifest, r.mask_path));
    try {
      out.push_back(make_training_sample(r.image_path.generic_string(), image, mask, preprocess,
                                         keep_labels ? r.label : std::nullopt));
    } catch (const GeometryError& e) {
      throw GeometryError("record '" + r.image_path.generic_string() + "': " + e.what());
    }
  }
  return out;
}

std::vector<DatasetRecord> load_records(const fs::path& manifest) {
  require_file(manifest, "manifest");
  return load_manifest(manifest);
}

std::string metrics_log(const std::vector<MetricRecord>& metrics) {
  std::ostringstream os;
  os << "step,loss,phase,unlabeled_fraction\n";
  for (const auto& m : metrics) os << m.step << ',' << num(m.loss) << ',' << m.phase << ',' << num(m.unlabeled_fraction) << '\n';
  return os.str();
}

/// Writes checkpoints, metrics.log and ensemble.txt of a finished run.
void write_run(const fs::path& out, const TrainRun& run, const TrainConfig& config, std::ostream& log) {
  const fs::path dir = out / "checkpoints";
  make_dir(dir);
  for (const auto& c : run.checkpoints) save_checkpoint(dir / checkpoint_filename(c.step), c);
  write_text(out / "metrics.log", metrics_log(run.metrics));

  std::ostringstream ensemble;
  for (int s : config.ensemble_steps) {
    const bool present = std::any_of(run.checkpoints.begin(), run.checkpoints.end(),
                                     [s](const Checkpoint& c) { return c.step == s; });
    if (present) ensemble << "checkpoints/" << checkpoint_filename(s) << '\n';
    else warn(log, "ensemble step " + std::to_string(s) + " was not reached");
  }
  write_text(out / "ensemble.txt", ensemble.str());
  for (const auto& w : run.warnings) warn(log, w);
  if (!run.metrics.empty())
    log << "finished at step " << run.last().step << ", last batch loss " << num(run.metrics.back().loss) << '\n';
  if (run.diverged) throw NumericError("training diverged; outputs up to the last finite step were written");
}

struct Ensemble {
  std::vector<Model> members;
  PreprocessConfig preprocess;
};

Ensemble load_ensemble(const std::vector<fs::path>& inputs) {
  const auto files = expand_checkpoints(inputs);
  if (files.empty()) throw ValidationError("at least one checkpoint is required");
  Ensemble e;
  for (std::size_t i = 0; i < files.size(); ++i) {
    require_file(files[i], "checkpoint");
    const Checkpoint c = load_checkpoint(files[i]);
    if (i == 0) {
      e.preprocess = c.preprocess;
    } else if (!(c.config == e.members.front().config()) || !(c.preprocess == e.preprocess)) {
      throw ValidationError("checkpoint '" + files[i].string() + "' has a different model configuration");
    }
    e.members.push_back(c.to_model());
  }
  return e;
}

std::string severity_table(const SeverityArray& a, double threshold) {
  const GlobalScore g = predicted_global_score(a, threshold);
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  os << "severity array (rows upper/middle/lower, columns right/left)\n";
  for (int r = 0; r < kSeverityRows; ++r) os << "  " << a.at(r, 0) << "  " << a.at(r, 1) << '\n';
  os << "integer score (threshold " << threshold << "): " << g.integer << '\n';
  os << "real score: " << g.real << '\n';
  return os.str();
}

std::string severity_csv(const SeverityArray& a, double threshold) {
  const GlobalScore g = predicted_global_score(a, threshold);
  std::ostringstream os;
  for (const char* n : kRegionNames) os << n << ',';
  os << "integer_score,real_score\n";
  for (double v : a.values) os << num(v) << ',';
  os << g.integer << ',' << num(g.real) << '\n';
  return os.str();
}

std::string map_csv(const ProbabilityMap& map) {
  std::ostringstream os;
  for (int r = 0; r < map.rows(); ++r) {
    for (int c = 0; c < map.cols(); ++c) os << (c ? "," : "") << num(map(r, c));
    os << '\n';
  }
  return os.str();
}

}  // namespace

std::map<std::string, std::string> read_environment() {
  std::map<std::string, std::string> env;
  if (const char* v = std::getenv("TOOLKIT_NUM_THREADS")) env["TOOLKIT_NUM_THREADS"] = v;
  return env;
}

Settings resolve_settings(const Options& options) {
  Settings s;
  json file = json::object();
  if (options.config_path) {
    require_file(*options.config_path, "config file");
    try {
      file = json::parse(read_text(*options.config_path));
    } catch (const json::exception& e) {
      throw ValidationError("config file '" + options.config_path->string() + "': " + e.what());
    }
    if (!file.is_object()) throw ValidationError("config file must hold a JSON object");
    for (const auto& [key, value] : file.items()) {
      static const char* known[] = {"preset", "train", "synthetic", "mode", "threshold", "deterministic"};
      if (std::find(std::begin(known), std::end(known), key) == std::end(known))
        throw ValidationError("config file: unknown key '" + key + "'");
    }
  }
  try {
    const std::string preset = file.value("preset", "desk");
    if (preset == "full") s.train = TrainConfig::full_scale();
    else if (preset != "desk") throw ValidationError("config file: unknown preset '" + preset + "'");
    if (file.contains("train")) from_json(file.at("train"), s.train);
    s.synthetic.side = s.train.model.output_side;
    if (file.contains("synthetic")) from_json(file.at("synthetic"), s.synthetic);
    if (file.contains("mode")) s.mode = parse_mode(file.at("mode").get<std::string>());
    s.threshold = file.value("threshold", s.threshold);
    s.deterministic = file.value("deterministic", s.deterministic);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config file: ") + e.what());
  }

  if (auto it = options.env.find("TOOLKIT_NUM_THREADS"); it != options.env.end()) {
    char* end = nullptr;
    const long n = std::strtol(it->second.c_str(), &end, 10);
    if (it->second.empty() || *end != '\0' || n < 0 || n > 4096)
      throw ValidationError("TOOLKIT_NUM_THREADS must be a non-negative integer, got '" + it->second + "'");
    s.train.num_threads = static_cast<int>(n);
  }

  if (options.seed) s.train.seed = *options.seed;
  if (options.steps) {
    if (*options.steps < 0) throw ValidationError("--steps must be >= 0");
    s.train.total_steps = *options.steps;
    auto& e = s.train.ensemble_steps;
    e.erase(std::remove_if(e.begin(), e.end(),
                           [&](int step) {
                             return step > s.train.total_steps ||
                                    (step % s.train.checkpoint_every != 0 && step != s.train.total_steps);
                           }),
            e.end());
    if (e.empty()) e.push_back(s.train.total_steps);
  }
  if (options.mode) s.mode = parse_mode(*options.mode);
  if (options.threshold) s.threshold = *options.threshold;
  if (options.deterministic) s.deterministic = true;
  // Results never depend on the thread count; determinism mode also pins it
  // so the recorded configuration is independent of the host.
  if (s.deterministic) s.train.num_threads = 1;

  if (!(s.threshold >= 0.0 && s.threshold <= 1.0)) throw ValidationError("threshold must lie in [0, 1]");
  s.train.validate();
  s.synthetic.validate();
  return s;
}

std::vector<fs::path> expand_checkpoints(const std::vector<fs::path>& inputs) {
  std::vector<fs::path> out;
  for (const auto& p : inputs) {
    if (!fs::is_directory(p)) {
      out.push_back(p);
      continue;
    }
    const fs::path list = p / "ensemble.txt";
    require_file(list, "ensemble list");
    std::istringstream in(read_text(list));
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) out.push_back(p / line);
  }
  return out;
}

void cmd_synth(const Options& options, const SynthArgs& args, std::ostream& log) {
  if (args.n < 0) throw ValidationError("synth: --n must be >= 0");
  if (!(args.labeled_fraction >= 0.0 && args.labeled_fraction <= 1.0))
    throw ValidationError("synth: --labeled-fraction must lie in [0, 1]");
  const Settings settings = resolve_settings(options);
  begin_run("synth", options, settings, json{{"n", args.n}, {"labeled_fraction", args.labeled_fraction}});

  const fs::path cases = options.out / "cases";
  make_dir(cases);
  const auto n_labeled = static_cast<int>(std::llround(args.labeled_fraction * args.n));
  std::vector<DatasetRecord> all;
  std::vector<DatasetRecord> labeled;
  std::vector<DatasetRecord> unlabeled;
  for (int i = 0; i < args.n; ++i) {
    // Distinct base seeds give disjoint case streams for any realistic n.
    const std::uint64_t case_seed = settings.train.seed * 1000003ULL + static_cast<std::uint64_t>(i);
    const SyntheticCase c = generate_synthetic_case(case_seed, settings.synthetic);
    char stem[32];
    std::snprintf(stem, sizeof(stem), "case_%06d", i);
    const SyntheticFiles files = write_synthetic_case(cases, stem, c);
    DatasetRecord r{fs::path("cases") / files.image.filename(), fs::path("cases") / files.mask.filename(), c.label,
                    "synthetic"};
    all.push_back(r);
    if (i < n_labeled) {
      labeled.push_back(r);
    } else {
      r.label.reset();
      unlabeled.push_back(r);
    }
  }
  save_manifest(options.out / "manifest.csv", all);
  if (args.labeled_fraction < 1.0) {
    save_manifest(options.out / "labeled.csv", labeled);
    save_manifest(options.out / "unlabeled.csv", unlabeled);
  }
  log << "wrote " << args.n << " synthetic cases to " << options.out.string() << '\n';
}

void cmd_train(const Options& options, const fs::path& manifest, const std::optional<fs::path>& resume,
               std::ostream& log) {
  const Settings settings = resolve_settings(options);
  begin_run("train", options, settings,
            json{{"manifest", manifest.string()}, {"resume", resume ? json(resume->string()) : json(nullptr)}});

  auto records = load_records(manifest);
  const auto before = records.size();
  records.erase(std::remove_if(records.begin(), records.end(), [](const DatasetRecord& r) { return !r.labeled(); }),
                records.end());
  if (records.size() != before) warn(log, "ignoring " + std::to_string(before - records.size()) + " unlabeled records");
  if (records.empty()) throw ValidationError("train: manifest has no labeled records");
  std::optional<Checkpoint> start;
  if (resume) {
    require_file(*resume, "checkpoint");
    start = load_checkpoint(*resume);
  }
  const auto samples = load_samples(manifest, records, settings.train.preprocess, true);

  write_text(options.out / "config.json", settings_json(settings).dump(2) + "\n");
  log << "training on " << samples.size() << " labeled cases for " << settings.train.total_steps << " steps\n";
  const TrainRun run = train(samples, settings.train, start ? &*start : nullptr);
  write_run(options.out, run, settings.train, log);
}

void cmd_selftrain(const Options& options, const fs::path& labeled_manifest, const fs::path& unlabeled_manifest,
                   std::ostream& log) {
  const Settings settings = resolve_settings(options);
  begin_run("selftrain", options, settings,
            json{{"labeled_manifest", labeled_manifest.string()},
                 {"unlabeled_manifest", unlabeled_manifest.string()},
                 {"mode", to_string(settings.mode)}});

  auto labeled = load_records(labeled_manifest);
  const auto before = labeled.size();
  labeled.erase(std::remove_if(labeled.begin(), labeled.end(), [](const DatasetRecord& r) { return !r.labeled(); }),
                labeled.end());
  if (labeled.size() != before)
    warn(log, "ignoring " + std::to_string(before - labeled.size()) + " unlabeled rows of the labeled manifest");
  if (labeled.empty()) throw ValidationError("selftrain: labeled manifest has no labeled records");
  const auto unlabeled = load_records(unlabeled_manifest);
  if (std::any_of(unlabeled.begin(), unlabeled.end(), [](const DatasetRecord& r) { return r.labeled(); }))
    warn(log, "labels in the unlabeled manifest are ignored");

  const auto l = load_samples(labeled_manifest, labeled, settings.train.preprocess, true);
  const auto u = load_samples(unlabeled_manifest, unlabeled, settings.train.preprocess, false);

  const int total = settings.train.total_steps;
  SelfTrainSchedule schedule;
  switch (settings.mode) {
    case SelfTrainSchedule::Mode::kProgressive: schedule = SelfTrainSchedule::progressive(total); break;
    case SelfTrainSchedule::Mode::kOneStep: schedule = SelfTrainSchedule::one_step(total, total / 6); break;
    case SelfTrainSchedule::Mode::kSupervisedOnly: schedule = SelfTrainSchedule::supervised_only(total); break;
  }

  write_text(options.out / "config.json", settings_json(settings).dump(2) + "\n");
  log << "self-training (" << to_string(settings.mode) << ") on " << l.size() << " labeled and " << u.size()
      << " unlabeled cases for " << total << " steps\n";
  const SelfTrainRun result = progressive_self_train(l, u, schedule, settings.train);

  std::ostringstream phases;
  phases << "phase,start_step,unlabeled_fraction,unlabeled_included,teacher_checkpoint\n";
  for (const auto& p : result.phases)
    phases << p.phase << ',' << p.start_step << ',' << num(p.unlabeled_fraction) << ',' << p.unlabeled_included << ','
           << p.teacher_checkpoint << '\n';
  write_text(options.out / "phases.log", phases.str());

  std::ostringstream pseudo;
  pseudo << "id";
  for (const char* n : kRegionNames) pseudo << ',' << n;
  pseudo << ",teacher_checkpoint\n";
  for (const auto& [index, label] : result.pseudo_labels) {
    pseudo << u[index].id;
    for (double v : label.array.values) pseudo << ',' << num(v);
    pseudo << ',' << label.teacher_checkpoint << '\n';
  }
  write_text(options.out / "pseudo_labels.csv", pseudo.str());
  if (result.effective_mode != settings.mode) log << "effective mode: " << to_string(result.effective_mode) << '\n';
  write_run(options.out, result.run, settings.train, log);
}

void cmd_predict(const Options& options, const std::vector<fs::path>& checkpoints, const fs::path& image,
                 const fs::path& mask, std::ostream& log) {
  const Settings settings = resolve_settings(options);
  json ckpts = json::array();
  for (const auto& c : checkpoints) ckpts.push_back(c.string());
  begin_run("predict", options, settings,
            json{{"checkpoints", ckpts}, {"image", image.string()}, {"mask", mask.string()}});

  require_file(image, "image");
  require_file(mask, "mask");
  const Ensemble ensemble = load_ensemble(checkpoints);
  const TrainingSample sample =
      make_training_sample(image.filename().string(), read_png_image(image), read_png_mask(mask), ensemble.preprocess);
  if (count_nonzero(sample.mask) == 0) warn(log, "lung mask is empty; outputs are all zero");
  const EnsembleOutput out = ensemble_predict(ensemble.members, sample);

  write_png_gray8(options.out / "probability_map.png", map_to_gray8(out.map));
  write_text(options.out / "probability_map.csv", map_csv(out.map));
  write_png_mask(options.out / "mask.png", sample.mask);
  write_png_rgb(options.out / "overlay.png", export_overlay(out.map, sample.image, settings.threshold).image);
  const std::string table = severity_table(out.pooled.array, settings.threshold);
  write_text(options.out / "severity.txt", table);
  write_text(options.out / "severity.csv", severity_csv(out.pooled.array, settings.threshold));
  log << table;
}

void cmd_evaluate(const Options& options, const std::vector<fs::path>& checkpoints, const fs::path& manifest,
                  bool oracle_predictions, std::ostream& log) {
  const Settings settings = resolve_settings(options);
  json ckpts = json::array();
  for (const auto& c : checkpoints) ckpts.push_back(c.string());
  begin_run("evaluate", options, settings,
            json{{"checkpoints", ckpts}, {"manifest", manifest.string()}, {"oracle_predictions", oracle_predictions}});

  const auto records = load_records(manifest);
  if (records.empty()) throw ValidationError("evaluate: test manifest is empty");
  for (const auto& r : records)
    if (!r.labeled()) throw ValidationError("evaluate: record '" + r.image_path.generic_string() + "' has no label");

  std::vector<SeverityArray> truth;
  std::vector<SeverityArray> predicted;
  std::vector<std::string> ids;
  if (oracle_predictions) {
    warn(log, "scoring labels as predictions (oracle mode)");
    for (const auto& r : records) {
      truth.push_back(*r.label);
      predicted.push_back(SeverityArray{r.label->values, SeverityArray::Kind::kProbability});
      ids.push_back(r.image_path.generic_string());
    }
  } else {
    const Ensemble ensemble = load_ensemble(checkpoints);
    const auto samples = load_samples(manifest, records, ensemble.preprocess, true);
    for (const auto& s : samples) {
      truth.push_back(*s.label);
      predicted.push_back(ensemble_predict(ensemble.members, s).pooled.array);
      ids.push_back(s.id);
    }
  }

  const EvaluationReport report = evaluate(predicted, truth, settings.threshold);
  write_text(options.out / "report.txt", report.to_text());
  write_text(options.out / "report.csv", report.to_csv());
  std::ostringstream rows;
  rows << "id";
  for (const char* n : kRegionNames) rows << ",pred_" << n;
  for (const char* n : kRegionNames) rows << ",true_" << n;
  rows << '\n';
  for (std::size_t i = 0; i < ids.size(); ++i) {
    rows << ids[i];
    for (double v : predicted[i].values) rows << ',' << num(v);
    for (double v : truth[i].values) rows << ',' << num(v);
    rows << '\n';
  }
  write_text(options.out / "predictions.csv", rows.str());
  log << report.to_text();
}

}  // namespace sevq::cli
