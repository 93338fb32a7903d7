#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sevq/checkpoint.hpp"
#include "sevq/lung_geometry.hpp"
#include "sevq/model.hpp"
#include "sevq/preprocessing.hpp"
#include "sevq/severity.hpp"

namespace sevq {

inline constexpr double kBceEpsilon = 1e-7;

/// Mean binary cross-entropy over the six entries, predictions clamped to
/// [eps, 1 - eps]. Targets may be soft. Throws NumericError on non-finite input.
double bce_loss(const SeverityArray& pred, const SeverityArray& target);

/// dL/dpred of bce_loss. The clamp is treated as identity for the gradient so
/// saturated predictions still receive a signal.
std::array<double, kNumRegions> bce_gradient(const SeverityArray& pred, const SeverityArray& target);

struct TrainConfig {
  ModelConfig model;
  PreprocessConfig preprocess;
  double learning_rate = 0.004;
  double momentum = 0.9;
  int batch_size = 8;
  int total_steps = 12000;
  std::uint64_t seed = 0;
  int checkpoint_every = 500;
  std::vector<int> ensemble_steps{11000, 11500, 12000};
  /// Loss weight of pseudo-labeled samples relative to labeled ones.
  double pseudo_label_weight = 1.0;
  /// Threshold teacher probabilities at hard_threshold instead of using them as soft targets.
  bool hard_pseudo_labels = false;
  double hard_threshold = 0.5;
  /// Worker threads for per-sample gradients; 0 = hardware concurrency.
  /// Results do not depend on this value.
  int num_threads = 0;

  /// SGD(0.9) at lr 0.004, batch 8, 12000 steps, 256x256 ViT-B/16 model.
  static TrainConfig full_scale();
  /// Desk scale: 64x64 model, 1200 steps, checkpoints every 50 steps.
  static TrainConfig desk();

  void validate() const;
};

/// A preprocessed case ready for the model.
struct TrainingSample {
  std::string id;
  ImageTensor image;
  LungMask mask;
  RegionPartition partition;
  std::optional<SeverityArray> label;
};

/// Preprocesses `image` and resizes `mask` to the model resolution. An empty
/// mask gets an all-background partition.
TrainingSample make_training_sample(std::string id, const ImageTensor& image, const LungMask& mask,
                                    const PreprocessConfig& config, std::optional<SeverityArray> label = {});

struct MetricRecord {
  std::int64_t step = 0;
  double loss = 0.0;
  int phase = 0;
  double unlabeled_fraction = 0.0;
  friend bool operator==(const MetricRecord&, const MetricRecord&) = default;
};

struct TrainRun {
  std::vector<Checkpoint> checkpoints;  ///< ascending step; the first is the starting point
  std::vector<MetricRecord> metrics;
  std::vector<std::string> warnings;
  bool diverged = false;

  const Checkpoint& last() const { return checkpoints.back(); }
  /// Checkpoints at the given steps, in the given order. Throws if one is missing.
  std::vector<Checkpoint> select(std::span<const int> steps) const;
};

/// One momentum SGD update in place: v <- mu * v + g ; w <- w - lr * v.
void sgd_momentum_update(nn::ParamStore& weights, nn::ParamStore& velocity, const nn::ParamStore& grad,
                         double learning_rate, double momentum);

/// Momentum SGD over one model: v <- mu * v + g ; w <- w - lr * v.
class Trainer {
 public:
  Trainer(Model model, const TrainConfig& config, std::int64_t step = 0);

  struct Target {
    const TrainingSample* sample;
    SeverityArray array;
    double weight = 1.0;
  };

  /// Mean weighted loss of the batch and its gradient (not applied).
  double compute_gradient(std::span<const Target> batch, nn::ParamStore& grad) const;
  /// One optimizer step on the batch; returns the batch loss before the update.
  double step(std::span<const Target> batch);
  void apply(const nn::ParamStore& grad);

  void reset_momentum() { velocity_.set_zero(); }
  void set_momentum(nn::ParamStore velocity);
  const nn::ParamStore& momentum() const noexcept { return velocity_; }

  Model& model() noexcept { return model_; }
  const Model& model() const noexcept { return model_; }
  std::int64_t step_count() const noexcept { return step_; }
  Checkpoint checkpoint() const;

 private:
  Model model_;
  TrainConfig config_;
  nn::ParamStore velocity_;
  std::int64_t step_ = 0;
  int threads_ = 1;
};

/// Seeded epoch-shuffled minibatch sampler over indices [0, n).
class BatchSampler {
 public:
  BatchSampler(std::size_t n, int batch_size, std::uint64_t seed);
  std::vector<std::size_t> next();

 private:
  void reshuffle();
  std::size_t n_;
  int batch_size_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// Seed of the data sampler for a training phase.
std::uint64_t phase_seed(std::uint64_t seed, int phase);

/// Supervised training on labeled samples (unlabeled ones are rejected).
/// Always records a checkpoint at the starting step, every checkpoint_every
/// steps, and at total_steps. With `resume`, training continues from its step
/// and optimizer state and reproduces the uninterrupted run.
TrainRun train(std::span<const TrainingSample> labeled, const TrainConfig& config,
               const Checkpoint* resume = nullptr);

struct EnsembleOutput {
  ProbabilityMap map;
  PooledArray pooled;
};

/// Mean of member probability maps, then ROI max pooling of the mean map.
EnsembleOutput ensemble_predict(std::span<const Model> members, const ImageTensor& image, const LungMask& mask);
EnsembleOutput ensemble_predict(std::span<const Model> members, const TrainingSample& sample);

struct PseudoLabel {
  SeverityArray array = SeverityArray::zeros(SeverityArray::Kind::kProbability);
  std::string teacher_checkpoint;
};

/// Teacher's pooled probabilities for `sample`. Returns nullopt on geometry
/// failure (the caller skips the record).
std::optional<PseudoLabel> pseudo_label(const Model& teacher, const std::string& teacher_id,
                                        const TrainingSample& sample);

struct SelfTrainSchedule {
  enum class Mode { kProgressive, kOneStep, kSupervisedOnly };
  struct Phase {
    int steps = 0;
    double unlabeled_fraction = 0.0;
  };

  Mode mode = Mode::kProgressive;
  std::vector<Phase> phases;

  /// `phases` equal phases with fractions k / (phases - 1).
  static SelfTrainSchedule progressive(int total_steps, int phases = 6);
  /// First phase labeled-only, then the whole unlabeled pool for the rest.
  static SelfTrainSchedule one_step(int total_steps, int first_phase_steps);
  static SelfTrainSchedule supervised_only(int total_steps);

  int total_steps() const;
  void validate() const;
};

std::string to_string(SelfTrainSchedule::Mode mode);
SelfTrainSchedule::Mode parse_mode(const std::string& name);

struct PhaseRecord {
  int phase = 0;
  std::int64_t start_step = 0;
  double unlabeled_fraction = 0.0;
  std::size_t unlabeled_included = 0;
  std::string teacher_checkpoint;  ///< empty for the labeled-only first phase
};

struct SelfTrainRun {
  TrainRun run;
  std::vector<PhaseRecord> phases;
  /// Pseudo labels of the final phase, keyed by sample position in the unlabeled pool.
  std::vector<std::pair<std::size_t, PseudoLabel>> pseudo_labels;
  SelfTrainSchedule::Mode effective_mode = SelfTrainSchedule::Mode::kProgressive;
};

/// Teacher-student self-training. Phase 0 trains on labeled data; each later
/// phase copies the current model into a new student (momentum reset), grows
/// the included unlabeled subset to the phase fraction, regenerates pseudo
/// labels with the new teacher and trains on labeled plus pseudo-labeled data.
SelfTrainRun progressive_self_train(std::span<const TrainingSample> labeled, std::span<const TrainingSample> unlabeled,
                                    const SelfTrainSchedule& schedule, const TrainConfig& config);

}  // namespace sevq
