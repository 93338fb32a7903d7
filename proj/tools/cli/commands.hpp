// Command implementations behind the `sevq` executable. Each command writes
// run_manifest.json into its output directory before any other output and
// reports failures by throwing sevq::Error subclasses.
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sevq/synthetic.hpp"
#include "sevq/training.hpp"

namespace sevq::cli {

/// Flags shared by all subcommands. Unset values fall back to the
/// environment, then the config file, then built-in defaults.
struct Options {
  std::optional<std::filesystem::path> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> steps;
  std::optional<std::string> mode;
  std::optional<double> threshold;
  bool deterministic = false;
  std::filesystem::path out;
  /// Environment snapshot; only TOOLKIT_NUM_THREADS is consulted.
  std::map<std::string, std::string> env;
};

/// Fully resolved settings of a run.
struct Settings {
  TrainConfig train = TrainConfig::desk();
  SyntheticConfig synthetic;
  SelfTrainSchedule::Mode mode = SelfTrainSchedule::Mode::kProgressive;
  double threshold = 0.5;
  bool deterministic = false;
};

/// Layers file < environment < flags. The config file is JSON with optional
/// "preset" ("desk" or "full"), "train" (TrainConfig fields), "synthetic",
/// "mode" and "threshold" keys. When --steps changes the run length, ensemble
/// steps that no longer exist are dropped and the final step is used instead.
Settings resolve_settings(const Options& options);

/// Reads the environment variables the toolkit understands.
std::map<std::string, std::string> read_environment();

struct SynthArgs {
  int n = 0;
  /// Fraction of cases listed as labeled; the rest go to unlabeled.csv
  /// without labels. The full labeled set is always in manifest.csv.
  double labeled_fraction = 1.0;
};

void cmd_synth(const Options& options, const SynthArgs& args, std::ostream& log);

void cmd_train(const Options& options, const std::filesystem::path& manifest,
               const std::optional<std::filesystem::path>& resume, std::ostream& log);

void cmd_selftrain(const Options& options, const std::filesystem::path& labeled_manifest,
                   const std::filesystem::path& unlabeled_manifest, std::ostream& log);

/// `checkpoints` may name checkpoint files or run directories; a run
/// directory contributes the checkpoints listed in its ensemble.txt.
void cmd_predict(const Options& options, const std::vector<std::filesystem::path>& checkpoints,
                 const std::filesystem::path& image, const std::filesystem::path& mask, std::ostream& log);

/// With `oracle_predictions` the labels themselves are scored as predictions
/// and no checkpoint is needed (pipeline debugging).
void cmd_evaluate(const Options& options, const std::vector<std::filesystem::path>& checkpoints,
                  const std::filesystem::path& manifest, bool oracle_predictions, std::ostream& log);

/// Expands run directories into their ensemble checkpoint files.
std::vector<std::filesystem::path> expand_checkpoints(const std::vector<std::filesystem::path>& inputs);

}  // namespace sevq::cli
