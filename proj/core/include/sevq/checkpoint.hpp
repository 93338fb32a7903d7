#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "sevq/model.hpp"
#include "sevq/model_config.hpp"
#include "sevq/nn/params.hpp"
#include "sevq/preprocessing.hpp"

namespace sevq {

inline constexpr std::uint32_t kCheckpointMajor = 1;
inline constexpr std::uint32_t kCheckpointMinor = 0;

/// Parameters of a model at a training step, optionally with the optimizer's
/// momentum buffers so training can resume exactly.
struct Checkpoint {
  ModelConfig config;
  /// Conditioning applied to inputs at training time; inference repeats it.
  PreprocessConfig preprocess;
  nn::ParamStore params;
  std::int64_t step = 0;
  std::optional<nn::ParamStore> momentum;

  /// "step_000123"
  std::string id() const;
  Model to_model() const;
  static Checkpoint from_model(const Model& model, std::int64_t step, const PreprocessConfig& preprocess);

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

/// Binary container: 8-byte magic "SEVQCKPT", u32 major, u32 minor, u64 header
/// length, a JSON header (config, step, tensor index), then little-endian
/// float64 tensor payloads in column-major order.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
/// Accepts any file with the same major version; unknown header keys are ignored.
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string checkpoint_filename(std::int64_t step);

}  // namespace sevq
