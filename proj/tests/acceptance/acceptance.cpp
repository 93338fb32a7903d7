// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "cli/commands.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "sevq/errors.hpp"
#include "sevq/evaluation.hpp"
#include "sevq/lung_geometry.hpp"
#include "sevq/training.hpp"
#include "synthetic_data.hpp"
#include "test_support.hpp"

using namespace sevq;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome timed_limit(Outcome o, double elapsed, double limit) {
  o.detail += fmt(", %.1f s", elapsed) + fmt(" (limit %.0f s)", limit);
  if (elapsed > limit) o.pass = false;
  return o;
}

// Random lung-like mask that the region partition accepts.
LungMask valid_mask(std::mt19937_64& rng, int side) {
  for (;;) {
    LungMask m = testing::random_mask(rng, side);
    if (oracle::classify_regions(m)) return m;
  }
}

Outcome roi_pool_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  int mismatches = 0;
  int geometry_disagreements = 0;
  int checked = 0;
  for (int i = 0; i < 1000; ++i) {
    const LungMask mask = testing::random_mask(rng, 64);
    const ProbabilityMap map = testing::random_map(rng, 64, 64, i % 2 == 1);
    const auto regions = oracle::classify_regions(mask);
    std::optional<RegionPartition> partition;
    try {
      partition = build_region_partition(mask);
    } catch (const GeometryError&) {
    }
    if (regions.has_value() != partition.has_value()) {
      ++geometry_disagreements;
      continue;
    }
    if (!regions) continue;
    ++checked;
    const auto pooled = roi_max_pool(map, *partition);
    const auto expected = oracle::region_max(map, *regions);
    for (std::size_t k = 0; k < kNumRegions; ++k)
      if (std::memcmp(&pooled.array.values[k], &expected[k], sizeof(double)) != 0) ++mismatches;
  }
  Outcome o;
  o.pass = mismatches == 0 && geometry_disagreements == 0 && checked > 900;
  o.detail = std::to_string(checked) + " pairs pooled, " + std::to_string(mismatches) + " mismatched entries, " +
             std::to_string(geometry_disagreements) + " geometry disagreements";
  return timed_limit(o, seconds_since(t0), 30.0);
}

Outcome split_rows() {
  Outcome o;
  const SplitRows a = split_rows_for_extent(0, 120);
  const SplitRows b = split_rows_for_extent(0, 11);
  bool ok = a.r1 == 50 && a.r2 == 80 && b.r1 == 4 && b.r2 == 7;
  o.detail = "(0,120) -> (" + std::to_string(a.r1) + "," + std::to_string(a.r2) + "), (0,11) -> (" +
             std::to_string(b.r1) + "," + std::to_string(b.r2) + ")";

  std::mt19937_64 rng(202);
  int failures = 0;
  for (int i = 0; i < 100; ++i) {
    // Draw on a small canvas and paste at two offsets of a larger one.
    const LungMask small = testing::random_mask(rng, 48);
    std::uniform_int_distribution<int> off(0, 32);
    const int dy = off(rng);
    const int dx = off(rng);
    LungMask base(80, 80, 0);
    LungMask moved(80, 80, 0);
    for (int r = 0; r < 48; ++r)
      for (int c = 0; c < 48; ++c) {
        base(r, c) = small(r, c);
        moved(r + dy, c + dx) = small(r, c);
      }
    const SplitRows s0 = compute_split_rows(base);
    const SplitRows s1 = compute_split_rows(moved);
    if (s1.top != s0.top + dy || s1.bottom != s0.bottom + dy || s1.r1 != s0.r1 + dy || s1.r2 != s0.r2 + dy) ++failures;
  }
  ok = ok && failures == 0;
  o.detail += "; translation invariance failures " + std::to_string(failures) + "/100";
  o.pass = ok;
  return o;
}

Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  const TrainConfig config = TrainConfig::desk();
  Model model(config.model, 303);
  const auto samples = testing::synthetic_samples(303, 1, config);
  // A soft target keeps every entry's gradient away from zero.
  const auto target = SeverityArray::probability({0.9, 0.2, 0.7, 0.1, 0.6, 0.3});
  const auto r = testing::model_gradient_check(model, samples[0], target, 50, 303);
  Outcome o;
  o.pass = r.checked == 50 && r.max_rel_error < 1e-3;
  o.detail = std::to_string(r.checked) + " coordinates (skipped " + std::to_string(r.skipped_ties) + " tied, " +
             std::to_string(r.skipped_kinks) + " across a kink), max relative error " + fmt("%.3g", r.max_rel_error) + " at " + r.worst_parameter;
  return timed_limit(o, seconds_since(t0), 120.0);
}

Outcome bce_oracle() {
  const double half = bce_loss(SeverityArray::probability({0.5, 0.5, 0.5, 0.5, 0.5, 0.5}),
                               SeverityArray::binary({1, 0, 1, 0, 0, 1}));
  const double mixed = bce_loss(SeverityArray::probability({0.9, 0.1, 0.5, 0.5, 0.2, 0.8}),
                                SeverityArray::binary({1, 0, 1, 0, 0, 1}));
  const double ln2 = 0.693147180559945309417232121458;
  const bool ok_half = std::abs(half - ln2) < 1e-9;
  const bool ok_mixed = std::abs(mixed - 0.340542) < 1e-6;
  Outcome o;
  o.pass = ok_half && ok_mixed;
  o.detail = "0.5 predictions " + fmt("%.12f", half) + (ok_half ? " (ok)" : " (off)") + ", mixed example " +
             fmt("%.12f", mixed) + " vs stated 0.340542" + fmt(" (|diff| %.2e)", std::abs(mixed - 0.340542));
  return o;
}

Outcome masking() {
  std::mt19937_64 rng(505);
  int leaks = 0;
  for (int i = 0; i < 100; ++i) {
    const Model model(ModelConfig::desk(), static_cast<std::uint64_t>(i));
    const LungMask mask = valid_mask(rng, 64);
    const ImageTensor image = testing::random_image(rng, 64, 64);
    const ModelOutput out = model.forward(image, mask);
    for (std::size_t p = 0; p < mask.size(); ++p)
      if (!mask[p] && out.map[p] != 0.0) ++leaks;
  }
  Outcome o;
  o.pass = leaks == 0;
  o.detail = std::to_string(leaks) + " nonzero pixels outside the mask over 100 inputs";
  return o;
}

Outcome token_symmetry() {
  double worst = 0.0;
  std::mt19937_64 rng(606);
  for (int trial = 0; trial < 10; ++trial) {
    Model model(ModelConfig::desk(), static_cast<std::uint64_t>(600 + trial));
    model.params()[model.positional_embedding_id()].setZero();
    const auto f = model.embed_features(testing::random_image(rng, 64, 64));
    const int n = f.height * f.width;
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    nn::FeatureMap fp = f;
    for (int i = 0; i < n; ++i) fp.data.col(i) = f.data.col(perm[static_cast<std::size_t>(i)]);
    const nn::Matrix out = model.transformer_encode(model.tokenize(f));
    const nn::Matrix out_p = model.transformer_encode(model.tokenize(fp));
    worst = std::max(worst, (out_p.row(0) - out.row(0)).cwiseAbs().maxCoeff());
    for (int i = 0; i < n; ++i)
      worst = std::max(worst, (out_p.row(i + 1) - out.row(perm[static_cast<std::size_t>(i)] + 1)).cwiseAbs().maxCoeff());
  }
  Outcome o;
  o.pass = worst < 1e-5;
  o.detail = "max deviation " + fmt("%.3g", worst) + " over 10 permutations";
  return o;
}

struct HeldOut {
  double mean_auc = 0.0;
  bool auc_defined = false;
  double mse = 0.0;
};

HeldOut score(const std::vector<Checkpoint>& checkpoints, std::span<const TrainingSample> test) {
  std::vector<Model> members;
  for (const auto& c : checkpoints) members.push_back(c.to_model());
  std::vector<SeverityArray> pred;
  std::vector<SeverityArray> truth;
  for (const auto& s : test) {
    pred.push_back(ensemble_predict(members, s).pooled.array);
    truth.push_back(*s.label);
  }
  const EvaluationReport r = evaluate(pred, truth);
  return {r.auc.mean_auc.value_or(0.0), r.auc.mean_auc.has_value(), r.real_score.mse};
}

// Synthetic seeds of the training pool and the held-out set.
constexpr std::uint64_t kTrainSeed = 1000;
constexpr std::uint64_t kTestSeed = 900000;

Outcome end_to_end() {
  const auto t0 = std::chrono::steady_clock::now();
  const TrainConfig config = TrainConfig::desk();
  const auto train_set = testing::synthetic_samples(kTrainSeed, 400, config);
  const auto test_set = testing::synthetic_samples(kTestSeed, 100, config);
  const TrainRun run = train(train_set, config);
  const HeldOut h = score(run.select(config.ensemble_steps), test_set);
  Outcome o;
  o.pass = !run.diverged && h.auc_defined && h.mean_auc >= 0.90 && h.mse <= 0.5;
  o.detail = "held-out mean AUC " + fmt("%.4f", h.mean_auc) + " (>= 0.90), real-score MSE " + fmt("%.4f", h.mse) +
             " (<= 0.5), final batch loss " + fmt("%.4f", run.metrics.back().loss);
  return timed_limit(o, seconds_since(t0), 15 * 60.0);
}

Outcome self_training_order() {
  const auto t0 = std::chrono::steady_clock::now();
  TrainConfig config = TrainConfig::desk();
  const auto pool = testing::synthetic_samples(kTrainSeed, 400, config);
  const auto test_set = testing::synthetic_samples(kTestSeed, 100, config);
  // 20% keep their labels, 80% are stripped.
  const std::vector<TrainingSample> labeled(pool.begin(), pool.begin() + 80);
  std::vector<TrainingSample> unlabeled(pool.begin() + 80, pool.end());
  for (auto& s : unlabeled) s.label.reset();

  const int total = config.total_steps;
  std::array<std::vector<double>, 3> mse;
  std::ostringstream runs;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    config.seed = seed;
    const SelfTrainSchedule schedules[3] = {SelfTrainSchedule::progressive(total),
                                            SelfTrainSchedule::one_step(total, total / 6),
                                            SelfTrainSchedule::supervised_only(total)};
    for (std::size_t m = 0; m < 3; ++m) {
      const SelfTrainRun r = progressive_self_train(labeled, unlabeled, schedules[m], config);
      const HeldOut h = score(r.run.select(config.ensemble_steps), test_set);
      mse[m].push_back(h.mse);
      runs << (m ? "/" : (seed ? "; seed " : "seed ") + std::to_string(seed) + " ") << fmt("%.3f", h.mse);
    }
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  const double prog = median(mse[0]);
  const double one = median(mse[1]);
  const double sup = median(mse[2]);
  Outcome o;
  o.pass = prog <= one + 0.05 && prog <= sup + 0.05;
  o.detail = "median held-out MSE progressive " + fmt("%.4f", prog) + ", one_step " + fmt("%.4f", one) +
             ", supervised_only " + fmt("%.4f", sup) + " [progressive/one_step/supervised: " + runs.str() + "]";
  return timed_limit(o, seconds_since(t0), 45 * 60.0);
}

std::map<std::string, std::string> checkpoint_bytes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    out[e.path().filename().string()] = os.str();
  }
  return out;
}

Outcome determinism() {
  testing::TempDir dir("acceptance_determinism");
  std::ostringstream log;
  cli::Options synth;
  synth.out = dir / "data";
  synth.seed = 9;
  cli::cmd_synth(synth, {24, 0.25}, log);

  std::ofstream(dir / "config.json") << R"({"train": {"checkpoint_every": 10}})";
  auto options = [&](const std::string& out) {
    cli::Options o;
    o.config_path = dir / "config.json";
    o.out = dir / out;
    o.seed = 9;
    o.steps = 30;
    o.deterministic = true;
    return o;
  };
  cli::cmd_train(options("train_a"), dir / "data" / "manifest.csv", std::nullopt, log);
  cli::cmd_train(options("train_b"), dir / "data" / "manifest.csv", std::nullopt, log);
  cli::cmd_selftrain(options("self_a"), dir / "data" / "labeled.csv", dir / "data" / "unlabeled.csv", log);
  cli::cmd_selftrain(options("self_b"), dir / "data" / "labeled.csv", dir / "data" / "unlabeled.csv", log);

  const auto ta = checkpoint_bytes(dir / "train_a" / "checkpoints");
  const auto sa = checkpoint_bytes(dir / "self_a" / "checkpoints");
  const bool train_same = ta == checkpoint_bytes(dir / "train_b" / "checkpoints");
  const bool self_same = sa == checkpoint_bytes(dir / "self_b" / "checkpoints");
  Outcome o;
  o.pass = train_same && self_same && ta.size() == 4 && sa.size() == 4;
  o.detail = "train: " + std::to_string(ta.size()) + " checkpoints " + (train_same ? "identical" : "DIFFER") +
             "; selftrain: " + std::to_string(sa.size()) + " checkpoints " + (self_same ? "identical" : "DIFFER");
  return o;
}

Outcome metric_oracles() {
  std::mt19937_64 rng(1010);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int auc_mismatch = 0;
  int mae_violations = 0;
  int runs = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const bool ties = trial % 2 == 1;
    const double prevalence = 0.05 + 0.9 * u(rng);
    std::vector<SeverityArray> pred;
    std::vector<SeverityArray> truth;
    for (int c = 0; c < 200; ++c) {
      std::array<double, kNumRegions> p{};
      std::array<double, kNumRegions> t{};
      for (std::size_t k = 0; k < kNumRegions; ++k) {
        p[k] = ties ? std::floor(u(rng) * 6.0) / 5.0 : u(rng);
        t[k] = u(rng) < prevalence ? 1.0 : 0.0;
      }
      pred.push_back(SeverityArray::probability(p));
      truth.push_back(SeverityArray::binary(t));
    }
    const AucResult auc = mean_auc(pred, truth);
    double sum = 0.0;
    int defined = 0;
    for (std::size_t k = 0; k < kNumRegions; ++k) {
      std::vector<double> s;
      std::vector<int> y;
      for (std::size_t c = 0; c < pred.size(); ++c) {
        s.push_back(pred[c].values[k]);
        y.push_back(static_cast<int>(truth[c].values[k]));
      }
      const auto expected = oracle::pairwise_auc(s, y);
      if (expected.has_value() != auc.per_region[k].has_value() || (expected && *expected != *auc.per_region[k]))
        ++auc_mismatch;
      if (expected) {
        sum += *expected;
        ++defined;
      }
    }
    if (defined > 0 && (!auc.mean_auc || *auc.mean_auc != sum / defined)) ++auc_mismatch;

    const EvaluationReport r = evaluate(pred, truth);
    ++runs;
    for (const auto* m : {&r.real_score, &r.integer_score})
      if (m->mae * m->mae > m->mse) ++mae_violations;
  }
  Outcome o;
  o.pass = auc_mismatch == 0 && mae_violations == 0;
  o.detail = std::to_string(auc_mismatch) + " AUC mismatches over 50 x 200-case inputs, " +
             std::to_string(mae_violations) + " mae^2 > mse violations over " + std::to_string(runs) +
             " evaluation runs";
  return o;
}

const std::vector<std::pair<std::string, std::function<Outcome()>>>& criteria() {
  static const std::vector<std::pair<std::string, std::function<Outcome()>>> list = {
      {"roi max pooling matches the exhaustive oracle", roi_pool_oracle},
      {"split rows and translation invariance", split_rows},
      {"gradient check on the desk config", gradient_check},
      {"bce oracle values", bce_oracle},
      {"probability map is zero outside the mask", masking},
      {"token permutation symmetry", token_symmetry},
      {"synthetic end-to-end training", end_to_end},
      {"self-training mode ordering", self_training_order},
      {"bitwise determinism of train and selftrain", determinism},
      {"metric oracles", metric_oracles},
  };
  return list;
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
#endif
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--criterion" && i + 1 < argc) {
      selected.push_back(std::atoi(argv[++i]));
    } else {
      std::cerr << "usage: sevq_acceptance [--criterion N]...\n";
      return 2;
    }
  }
  if (selected.empty())
    for (int i = 1; i <= static_cast<int>(criteria().size()); ++i) selected.push_back(i);

  int failures = 0;
  for (int n : selected) {
    if (n < 1 || n > static_cast<int>(criteria().size())) {
      std::cerr << "unknown criterion " << n << '\n';
      return 2;
    }
    const auto& [name, fn] = criteria()[static_cast<std::size_t>(n - 1)];
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << "criterion " << n << " [" << name << "]: " << (o.pass ? "PASS" : "FAIL") << " - " << o.detail
              << std::endl;
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
