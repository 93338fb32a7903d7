#include "sevq/training.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include "sevq/errors.hpp"

namespace sevq {

double bce_loss(const SeverityArray& pred, const SeverityArray& target) {
  double sum = 0.0;
  for (std::size_t i = 0; i < kNumRegions; ++i) {
    const double p = pred.values[i];
    const double t = target.values[i];
    if (!std::isfinite(p) || !std::isfinite(t)) throw NumericError("bce_loss: non-finite input");
    const double pc = std::clamp(p, kBceEpsilon, 1.0 - kBceEpsilon);
    sum -= t * std::log(pc) + (1.0 - t) * std::log(1.0 - pc);
  }
  return sum / kNumRegions;
}

std::array<double, kNumRegions> bce_gradient(const SeverityArray& pred, const SeverityArray& target) {
  std::array<double, kNumRegions> g{};
  for (std::size_t i = 0; i < kNumRegions; ++i) {
    const double pc = std::clamp(pred.values[i], kBceEpsilon, 1.0 - kBceEpsilon);
    g[i] = (pc - target.values[i]) / (pc * (1.0 - pc)) / kNumRegions;
  }
  return g;
}

TrainConfig TrainConfig::full_scale() {
  TrainConfig c;
  c.model = ModelConfig::full_scale();
  c.preprocess.target_side = 256;
  return c;
}

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.model = ModelConfig::desk();
  c.preprocess.target_side = c.model.output_side;
  c.learning_rate = 0.01;
  c.total_steps = 1200;
  c.checkpoint_every = 50;
  c.ensemble_steps = {1100, 1150, 1200};
  return c;
}

void TrainConfig::validate() const {
  model.validate();
  preprocess.validate();
  if (preprocess.target_side != model.output_side)
    throw ValidationError("TrainConfig: preprocess.target_side must equal model.output_side");
  if (!(learning_rate > 0.0) || momentum < 0.0 || momentum >= 1.0)
    throw ValidationError("TrainConfig: learning_rate must be > 0 and momentum in [0, 1)");
  if (batch_size < 1) throw ValidationError("TrainConfig: batch_size must be >= 1");
  if (total_steps < 0) throw ValidationError("TrainConfig: total_steps must be >= 0");
  if (checkpoint_every < 1) throw ValidationError("TrainConfig: checkpoint_every must be >= 1");
  for (int s : ensemble_steps) {
    if (s < 0 || s > total_steps || (s % checkpoint_every != 0 && s != total_steps))
      throw ValidationError("TrainConfig: ensemble step " + std::to_string(s) + " is not a saved checkpoint step");
  }
  if (pseudo_label_weight < 0.0) throw ValidationError("TrainConfig: pseudo_label_weight must be >= 0");
}

TrainingSample make_training_sample(std::string id, const ImageTensor& image, const LungMask& mask,
                                    const PreprocessConfig& config, std::optional<SeverityArray> label) {
  TrainingSample s;
  s.id = std::move(id);
  s.image = preprocess(image, config).pixels;
  s.mask = resize_mask(mask, config.target_side);
  s.partition = count_nonzero(s.mask) == 0 ? RegionPartition::background(s.mask.rows(), s.mask.cols())
                                           : build_region_partition(s.mask);
  if (label) label->validate();
  s.label = std::move(label);
  return s;
}

std::vector<Checkpoint> TrainRun::select(std::span<const int> steps) const {
  std::vector<Checkpoint> out;
  for (int s : steps) {
    auto it = std::find_if(checkpoints.begin(), checkpoints.end(), [s](const Checkpoint& c) { return c.step == s; });
    if (it == checkpoints.end()) throw ValidationError("no checkpoint at step " + std::to_string(s));
    out.push_back(*it);
  }
  return out;
}

Trainer::Trainer(Model model, const TrainConfig& config, std::int64_t step)
    : model_(std::move(model)), config_(config), velocity_(model_.params().zeros_like()), step_(step) {
  const unsigned hw = std::max(1U, std::thread::hardware_concurrency());
  threads_ = config.num_threads > 0 ? config.num_threads : static_cast<int>(hw);
}

void Trainer::set_momentum(nn::ParamStore velocity) {
  if (!velocity.same_layout(velocity_)) throw ValidationError("Trainer: momentum layout mismatch");
  velocity_ = std::move(velocity);
}

double Trainer::compute_gradient(std::span<const Target> batch, nn::ParamStore& grad) const {
  const std::size_t n = batch.size();
  if (n == 0) throw ValidationError("Trainer: empty batch");
  std::vector<nn::ParamStore> per_sample(n, model_.params().zeros_like());
  std::vector<double> losses(n, 0.0);
  std::vector<std::exception_ptr> errors(n);

  auto work = [&](std::size_t i) {
    try {
      const Target& t = batch[i];
      auto trace = model_.forward_trace(t.sample->image, t.sample->mask, t.sample->partition);
      const SeverityArray& pred = model_.output(*trace).pooled.array;
      losses[i] = bce_loss(pred, t.array);
      auto g = bce_gradient(pred, t.array);
      for (double& v : g) v *= t.weight / static_cast<double>(n);
      model_.backward(*trace, g, per_sample[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads_)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) work(i);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) work(i);
      });
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  // Fixed summation order keeps results independent of the thread count.
  grad = model_.params().zeros_like();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    grad.add_scaled(per_sample[i], 1.0);
    loss += batch[i].weight * losses[i];
  }
  return loss / static_cast<double>(n);
}

void sgd_momentum_update(nn::ParamStore& weights, nn::ParamStore& velocity, const nn::ParamStore& grad,
                         double learning_rate, double momentum) {
  if (!weights.same_layout(velocity) || !weights.same_layout(grad))
    throw ValidationError("sgd_momentum_update: parameter layouts differ");
  for (int i = 0; i < velocity.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grad[i];
    weights[i] -= learning_rate * velocity[i];
  }
}

void Trainer::apply(const nn::ParamStore& grad) {
  sgd_momentum_update(model_.params(), velocity_, grad, config_.learning_rate, config_.momentum);
  ++step_;
}

double Trainer::step(std::span<const Target> batch) {
  nn::ParamStore grad;
  double loss = 0.0;
  try {
    loss = compute_gradient(batch, grad);
  } catch (const NumericError&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  if (!std::isfinite(loss) || !grad.all_finite()) return std::numeric_limits<double>::quiet_NaN();
  apply(grad);
  return loss;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c = Checkpoint::from_model(model_, step_, config_.preprocess);
  c.momentum = velocity_;
  return c;
}

BatchSampler::BatchSampler(std::size_t n, int batch_size, std::uint64_t seed)
    : n_(n), batch_size_(batch_size), rng_(seed) {
  if (n == 0) throw ValidationError("BatchSampler: empty pool");
  order_.resize(n);
  reshuffle();
}

void BatchSampler::reshuffle() {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::shuffle(order_.begin(), order_.end(), rng_);
  cursor_ = 0;
}

std::vector<std::size_t> BatchSampler::next() {
  std::vector<std::size_t> batch;
  batch.reserve(static_cast<std::size_t>(batch_size_));
  while (batch.size() < static_cast<std::size_t>(batch_size_)) {
    if (cursor_ == n_) reshuffle();
    batch.push_back(order_[cursor_++]);
  }
  return batch;
}

std::uint64_t phase_seed(std::uint64_t seed, int phase) {
  return seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(phase) * 0xD1B54A32D192ED03ULL + 1;
}

namespace {

// Trains until `end_step`, recording metrics and checkpoints. Returns false on
// divergence.
bool run_phase(Trainer& trainer, std::span<const Trainer::Target> pool, BatchSampler& sampler, int phase,
               double fraction, std::int64_t end_step, const TrainConfig& config, TrainRun& run) {
  std::vector<Trainer::Target> batch;
  while (trainer.step_count() < end_step) {
    batch.clear();
    for (std::size_t i : sampler.next()) batch.push_back(pool[i]);
    const double loss = trainer.step(batch);
    if (!std::isfinite(loss)) {
      run.diverged = true;
      run.warnings.push_back("training diverged at step " + std::to_string(trainer.step_count() + 1) +
                             "; keeping the last good parameters");
      if (run.checkpoints.empty() || run.checkpoints.back().step != trainer.step_count())
        run.checkpoints.push_back(trainer.checkpoint());
      return false;
    }
    const std::int64_t step = trainer.step_count();
    run.metrics.push_back({step, loss, phase, fraction});
    if (step % config.checkpoint_every == 0 || step == config.total_steps) run.checkpoints.push_back(trainer.checkpoint());
  }
  return true;
}

std::vector<Trainer::Target> labeled_targets(std::span<const TrainingSample> labeled) {
  std::vector<Trainer::Target> pool;
  pool.reserve(labeled.size());
  for (const auto& s : labeled) {
    if (!s.label) throw ValidationError("training sample '" + s.id + "' has no label");
    pool.push_back({&s, *s.label, 1.0});
  }
  return pool;
}

}  // namespace

TrainRun train(std::span<const TrainingSample> labeled, const TrainConfig& config, const Checkpoint* resume) {
  config.validate();
  if (labeled.empty()) throw ValidationError("train: at least one labeled record is required");
  const std::vector<Trainer::Target> pool = labeled_targets(labeled);

  if (resume && resume->config != config.model) throw ValidationError("train: resume checkpoint has a different model config");
  Model model = resume ? resume->to_model() : Model(config.model, config.seed);
  const std::int64_t start = resume ? resume->step : 0;
  Trainer trainer(std::move(model), config, start);
  if (resume && resume->momentum) trainer.set_momentum(*resume->momentum);

  TrainRun run;
  run.checkpoints.push_back(trainer.checkpoint());
  BatchSampler sampler(pool.size(), config.batch_size, phase_seed(config.seed, 0));
  for (std::int64_t s = 0; s < start; ++s) sampler.next();
  run_phase(trainer, pool, sampler, 0, 0.0, config.total_steps, config, run);
  return run;
}

EnsembleOutput ensemble_predict(std::span<const Model> members, const ImageTensor& image, const LungMask& mask) {
  if (members.empty()) throw ValidationError("ensemble_predict: no members");
  for (const Model& m : members)
    if (m.config() != members.front().config()) throw ValidationError("ensemble_predict: member configs differ");
  const RegionPartition partition = count_nonzero(mask) == 0 ? RegionPartition::background(mask.rows(), mask.cols())
                                                             : build_region_partition(mask);
  EnsembleOutput out;
  out.map = ProbabilityMap(mask.rows(), mask.cols(), 0.0);
  for (const Model& m : members) {
    const ModelOutput o = m.forward(image, mask, partition);
    for (std::size_t i = 0; i < out.map.size(); ++i) out.map[i] += o.map[i];
  }
  const double inv = 1.0 / static_cast<double>(members.size());
  for (double& v : out.map.values()) v *= inv;
  out.pooled = roi_max_pool(out.map, partition);
  return out;
}

EnsembleOutput ensemble_predict(std::span<const Model> members, const TrainingSample& sample) {
  return ensemble_predict(members, sample.image, sample.mask);
}

std::optional<PseudoLabel> pseudo_label(const Model& teacher, const std::string& teacher_id,
                                        const TrainingSample& sample) {
  try {
    const ModelOutput o = teacher.forward(sample.image, sample.mask, sample.partition);
    return PseudoLabel{o.pooled.array, teacher_id};
  } catch (const GeometryError&) {
    return std::nullopt;
  }
}

SelfTrainSchedule SelfTrainSchedule::progressive(int total_steps, int phases) {
  if (phases < 2) throw ValidationError("progressive schedule needs at least two phases");
  SelfTrainSchedule s;
  s.mode = Mode::kProgressive;
  for (int k = 0; k < phases; ++k) {
    const int begin = static_cast<int>(static_cast<std::int64_t>(total_steps) * k / phases);
    const int end = static_cast<int>(static_cast<std::int64_t>(total_steps) * (k + 1) / phases);
    s.phases.push_back({end - begin, static_cast<double>(k) / (phases - 1)});
  }
  return s;
}

SelfTrainSchedule SelfTrainSchedule::one_step(int total_steps, int first_phase_steps) {
  if (first_phase_steps < 0 || first_phase_steps > total_steps)
    throw ValidationError("one_step schedule: first phase longer than the run");
  SelfTrainSchedule s;
  s.mode = Mode::kOneStep;
  s.phases = {{first_phase_steps, 0.0}, {total_steps - first_phase_steps, 1.0}};
  return s;
}

SelfTrainSchedule SelfTrainSchedule::supervised_only(int total_steps) {
  SelfTrainSchedule s;
  s.mode = Mode::kSupervisedOnly;
  s.phases = {{total_steps, 0.0}};
  return s;
}

int SelfTrainSchedule::total_steps() const {
  int total = 0;
  for (const auto& p : phases) total += p.steps;
  return total;
}

void SelfTrainSchedule::validate() const {
  if (phases.empty()) throw ValidationError("SelfTrainSchedule: no phases");
  for (const auto& p : phases) {
    if (p.steps < 0) throw ValidationError("SelfTrainSchedule: negative phase length");
    if (p.unlabeled_fraction < 0.0 || p.unlabeled_fraction > 1.0)
      throw ValidationError("SelfTrainSchedule: fraction outside [0, 1]");
  }
  if (phases.front().unlabeled_fraction != 0.0)
    throw ValidationError("SelfTrainSchedule: the first phase trains the teacher on labeled data only");
  switch (mode) {
    case Mode::kProgressive:
      for (std::size_t k = 1; k < phases.size(); ++k)
        if (phases[k].unlabeled_fraction < phases[k - 1].unlabeled_fraction)
          throw ValidationError("SelfTrainSchedule: progressive fractions must be nondecreasing");
      if (phases.back().unlabeled_fraction != 1.0)
        throw ValidationError("SelfTrainSchedule: progressive schedule must end with fraction 1");
      break;
    case Mode::kOneStep:
      for (std::size_t k = 1; k < phases.size(); ++k)
        if (phases[k].unlabeled_fraction != 1.0)
          throw ValidationError("SelfTrainSchedule: one_step phases after the first must use fraction 1");
      break;
    case Mode::kSupervisedOnly:
      for (const auto& p : phases)
        if (p.unlabeled_fraction != 0.0)
          throw ValidationError("SelfTrainSchedule: supervised_only uses no unlabeled data");
      break;
  }
}

std::string to_string(SelfTrainSchedule::Mode mode) {
  switch (mode) {
    case SelfTrainSchedule::Mode::kProgressive: return "progressive";
    case SelfTrainSchedule::Mode::kOneStep: return "one_step";
    case SelfTrainSchedule::Mode::kSupervisedOnly: return "supervised_only";
  }
  return "unknown";
}

SelfTrainSchedule::Mode parse_mode(const std::string& name) {
  if (name == "progressive") return SelfTrainSchedule::Mode::kProgressive;
  if (name == "one_step") return SelfTrainSchedule::Mode::kOneStep;
  if (name == "supervised_only") return SelfTrainSchedule::Mode::kSupervisedOnly;
  throw ValidationError("unknown self-training mode '" + name + "'");
}

SelfTrainRun progressive_self_train(std::span<const TrainingSample> labeled, std::span<const TrainingSample> unlabeled,
                                    const SelfTrainSchedule& schedule_in, const TrainConfig& config) {
  config.validate();
  schedule_in.validate();
  if (schedule_in.total_steps() != config.total_steps)
    throw ValidationError("self-training schedule covers " + std::to_string(schedule_in.total_steps()) +
                          " steps but total_steps is " + std::to_string(config.total_steps));
  if (labeled.empty()) throw ValidationError("self-training needs at least one labeled record");

  SelfTrainRun out;
  SelfTrainSchedule schedule = schedule_in;
  if (unlabeled.empty() && schedule.mode != SelfTrainSchedule::Mode::kSupervisedOnly) {
    out.run.warnings.push_back("unlabeled pool is empty; falling back to supervised_only");
    schedule = SelfTrainSchedule::supervised_only(config.total_steps);
  }
  out.effective_mode = schedule.mode;

  const std::vector<Trainer::Target> labeled_pool = labeled_targets(labeled);
  std::vector<std::size_t> order(unlabeled.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 subset_rng(config.seed ^ 0x5EB5E7C0FFEEULL);
  std::shuffle(order.begin(), order.end(), subset_rng);

  Trainer trainer(Model(config.model, config.seed), config);
  out.run.checkpoints.push_back(trainer.checkpoint());

  std::int64_t end_step = 0;
  for (std::size_t k = 0; k < schedule.phases.size(); ++k) {
    const auto& phase = schedule.phases[k];
    const int phase_index = static_cast<int>(k);
    std::vector<Trainer::Target> pool = labeled_pool;
    PhaseRecord record{phase_index, trainer.step_count(), phase.unlabeled_fraction, 0, {}};

    if (k > 0) {
      // The current model becomes the teacher; the student starts as its copy.
      const Model teacher = trainer.model();
      record.teacher_checkpoint = trainer.checkpoint().id();
      trainer.reset_momentum();
      const auto included = static_cast<std::size_t>(std::llround(phase.unlabeled_fraction * static_cast<double>(order.size())));
      out.pseudo_labels.clear();
      for (std::size_t j = 0; j < included; ++j) {
        const TrainingSample& sample = unlabeled[order[j]];
        auto label = pseudo_label(teacher, record.teacher_checkpoint, sample);
        if (!label) {
          out.run.warnings.push_back("skipping unlabeled record '" + sample.id + "': lung geometry failed");
          continue;
        }
        if (config.hard_pseudo_labels)
          for (double& v : label->array.values) v = v >= config.hard_threshold ? 1.0 : 0.0;
        out.pseudo_labels.emplace_back(order[j], *label);
        ++record.unlabeled_included;
      }
      for (const auto& [index, label] : out.pseudo_labels)
        pool.push_back({&unlabeled[index], label.array, config.pseudo_label_weight});
    }
    out.phases.push_back(record);

    end_step += phase.steps;
    BatchSampler sampler(pool.size(), config.batch_size, phase_seed(config.seed, phase_index));
    if (!run_phase(trainer, pool, sampler, phase_index, phase.unlabeled_fraction, end_step, config, out.run)) break;
  }
  return out;
}

}  // namespace sevq
