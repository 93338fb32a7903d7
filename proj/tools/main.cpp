#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "cli/commands.hpp"
#include "sevq/errors.hpp"

namespace fs = std::filesystem;

namespace {

void add_common(CLI::App* cmd, sevq::cli::Options& o, std::optional<std::uint64_t>& seed, std::optional<int>& steps,
                std::optional<std::string>& mode, std::optional<double>& threshold, std::optional<fs::path>& config) {
  cmd->add_option("--config", config, "JSON config file");
  cmd->add_option("--seed", seed, "Random seed");
  cmd->add_option("--steps", steps, "Total optimizer steps");
  cmd->add_option("--mode", mode, "Self-training mode: progressive, one_step or supervised_only");
  cmd->add_option("--threshold", threshold, "Lesion threshold for integer scores and overlays");
  cmd->add_flag("--deterministic", o.deterministic, "Single-threaded, reproducible run");
  cmd->add_option("--out", o.out, "Output directory")->required();
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  // Training reallocates the same large activation buffers every step; keep
  // them on the heap instead of mapping and faulting fresh pages each time.
  mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
#endif

  CLI::App app{"Lung opacity severity toolkit"};
  app.set_version_flag("--version", std::string(SEVQ_VERSION));
  app.require_subcommand(1);

  sevq::cli::Options o;
  std::optional<std::uint64_t> seed;
  std::optional<int> steps;
  std::optional<std::string> mode;
  std::optional<double> threshold;
  std::optional<fs::path> config;

  sevq::cli::SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled dataset");
  add_common(synth, o, seed, steps, mode, threshold, config);
  synth->add_option("--n", synth_args.n, "Number of cases")->required();
  synth->add_option("--labeled-fraction", synth_args.labeled_fraction,
                    "Fraction listed in labeled.csv; the rest go unlabeled to unlabeled.csv");

  fs::path manifest;
  std::optional<fs::path> resume;
  auto* train = app.add_subcommand("train", "Supervised training");
  add_common(train, o, seed, steps, mode, threshold, config);
  train->add_option("--manifest", manifest, "Labeled dataset manifest")->required();
  train->add_option("--resume", resume, "Checkpoint to continue from");

  fs::path labeled;
  fs::path unlabeled;
  auto* selftrain = app.add_subcommand("selftrain", "Teacher-student self-training");
  add_common(selftrain, o, seed, steps, mode, threshold, config);
  selftrain->add_option("--labeled", labeled, "Labeled manifest")->required();
  selftrain->add_option("--unlabeled", unlabeled, "Unlabeled manifest")->required();

  std::vector<fs::path> checkpoints;
  fs::path image;
  fs::path mask;
  auto* predict = app.add_subcommand("predict", "Probability map and severity array for one image");
  add_common(predict, o, seed, steps, mode, threshold, config);
  predict->add_option("--checkpoint", checkpoints, "Checkpoint file or run directory (repeatable)")->required();
  predict->add_option("--image", image, "Input radiograph PNG")->required();
  predict->add_option("--mask", mask, "Lung mask PNG")->required();

  bool oracle = false;
  auto* evaluate = app.add_subcommand("evaluate", "Metrics on a labeled test manifest");
  add_common(evaluate, o, seed, steps, mode, threshold, config);
  evaluate->add_option("--checkpoint", checkpoints, "Checkpoint file or run directory (repeatable)");
  evaluate->add_option("--manifest", manifest, "Labeled test manifest")->required();
  evaluate->add_flag("--oracle-predictions", oracle, "Score the labels themselves (debugging)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  o.config_path = config;
  o.seed = seed;
  o.steps = steps;
  o.mode = mode;
  o.threshold = threshold;
  o.env = sevq::cli::read_environment();

  try {
    if (synth->parsed()) sevq::cli::cmd_synth(o, synth_args, std::cout);
    else if (train->parsed()) sevq::cli::cmd_train(o, manifest, resume, std::cout);
    else if (selftrain->parsed()) sevq::cli::cmd_selftrain(o, labeled, unlabeled, std::cout);
    else if (predict->parsed()) sevq::cli::cmd_predict(o, checkpoints, image, mask, std::cout);
    else if (evaluate->parsed()) {
      if (checkpoints.empty() && !oracle) throw sevq::ValidationError("evaluate: --checkpoint is required");
      sevq::cli::cmd_evaluate(o, checkpoints, manifest, oracle, std::cout);
    }
  } catch (const sevq::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
