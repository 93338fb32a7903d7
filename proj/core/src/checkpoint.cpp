#include "sevq/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "sevq/config_json.hpp"
#include "sevq/errors.hpp"

namespace sevq {
namespace {

constexpr char kMagic[8] = {'S', 'E', 'V', 'Q', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError("truncated checkpoint reading " + what);
  return v;
}

void index_tensors(nlohmann::json& index, const nn::ParamStore& store, const std::string& group,
                   std::uint64_t& offset) {
  for (int i = 0; i < store.size(); ++i) {
    index.push_back({{"name", store.name(i)},
                     {"group", group},
                     {"rows", store[i].rows()},
                     {"cols", store[i].cols()},
                     {"offset", offset}});
    offset += static_cast<std::uint64_t>(store[i].size()) * sizeof(double);
  }
}

}  // namespace

std::string checkpoint_filename(std::int64_t step) {
  std::ostringstream os;
  os << "step_" << std::setw(6) << std::setfill('0') << step << ".ckpt";
  return os.str();
}

std::string Checkpoint::id() const {
  std::ostringstream os;
  os << "step_" << std::setw(6) << std::setfill('0') << step;
  return os.str();
}

Model Checkpoint::to_model() const {
  Model model(config);
  model.set_params(params);
  return model;
}

Checkpoint Checkpoint::from_model(const Model& model, std::int64_t step, const PreprocessConfig& preprocess) {
  return Checkpoint{model.config(), preprocess, model.params(), step, std::nullopt};
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  nlohmann::json header;
  header["format"] = "sevq-checkpoint";
  header["config"] = checkpoint.config;
  header["preprocess"] = checkpoint.preprocess;
  header["step"] = checkpoint.step;
  header["layout"] = "column-major float64 little-endian";
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  index_tensors(index, checkpoint.params, "params", offset);
  if (checkpoint.momentum) index_tensors(index, *checkpoint.momentum, "momentum", offset);
  header["tensors"] = index;
  header["payload_bytes"] = offset;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  out.write(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(out, kCheckpointMajor);
  write_pod<std::uint32_t>(out, kCheckpointMinor);
  write_pod<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  auto write_store = [&out](const nn::ParamStore& store) {
    for (int i = 0; i < store.size(); ++i)
      out.write(reinterpret_cast<const char*>(store[i].data()),
                static_cast<std::streamsize>(static_cast<std::size_t>(store[i].size()) * sizeof(double)));
  };
  write_store(checkpoint.params);
  if (checkpoint.momentum) write_store(*checkpoint.momentum);
  if (!out) throw IoError("failed writing checkpoint '" + path.string() + "'");
}

namespace {

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError("'" + path.string() + "' is not a sevq checkpoint");
  const auto major = read_pod<std::uint32_t>(in, "version");
  read_pod<std::uint32_t>(in, "version");
  if (major != kCheckpointMajor)
    throw IoError("checkpoint '" + path.string() + "' has unsupported major version " + std::to_string(major));
  const auto header_len = read_pod<std::uint64_t>(in, "header length");
  std::string text(header_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_len))) throw IoError("truncated checkpoint header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint header in '" + path.string() + "': " + e.what());
  }

  Checkpoint ckpt;
  ckpt.config = header.at("config").get<ModelConfig>();
  ckpt.step = header.at("step").get<std::int64_t>();
  ckpt.preprocess.target_side = ckpt.config.output_side;
  if (header.contains("preprocess")) ckpt.preprocess = header.at("preprocess").get<PreprocessConfig>();
  const std::streamoff payload_start = in.tellg();

  // Build a model to obtain the canonical parameter layout, then fill by name.
  Model model(ckpt.config);
  ckpt.params = model.params();
  bool has_momentum = false;
  nn::ParamStore momentum = ckpt.params.zeros_like();
  std::size_t filled = 0;
  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const std::string group = entry.at("group").get<std::string>();
    nn::ParamStore* target = group == "params" ? &ckpt.params : group == "momentum" ? &momentum : nullptr;
    if (!target) continue;
    const auto id = target->find(name);
    if (!id) throw IoError("checkpoint tensor '" + name + "' does not belong to this model config");
    nn::Matrix& m = (*target)[*id];
    if (m.rows() != entry.at("rows").get<Eigen::Index>() || m.cols() != entry.at("cols").get<Eigen::Index>())
      throw IoError("checkpoint tensor '" + name + "' has the wrong shape");
    in.seekg(payload_start + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
    if (!in.read(reinterpret_cast<char*>(m.data()),
                 static_cast<std::streamsize>(static_cast<std::size_t>(m.size()) * sizeof(double))))
      throw IoError("truncated checkpoint payload for '" + name + "'");
    if (group == "params") ++filled;
    has_momentum = has_momentum || group == "momentum";
  }
  if (filled != static_cast<std::size_t>(ckpt.params.size()))
    throw IoError("checkpoint '" + path.string() + "' is missing parameter tensors");
  if (has_momentum) ckpt.momentum = std::move(momentum);
  return ckpt;
}

}  // namespace

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return read_checkpoint(path);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint header in '" + path.string() + "': " + e.what());
  }
}

}  // namespace sevq
