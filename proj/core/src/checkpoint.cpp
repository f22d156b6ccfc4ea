#include "cmwm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "cmwm/config.hpp"
#include "cmwm/errors.hpp"

namespace cmwm {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

constexpr char kMagic[8] = {'C', 'M', 'W', 'M', 'C', 'K', 'P', 'T'};
// Guards against allocating absurd sizes from a corrupt header.
constexpr std::uint64_t kMaxBlock = std::uint64_t{1} << 34;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const char* what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw ValidationError(std::string("checkpoint truncated while reading ") + what);
  }
  return v;
}

std::string get_bytes(std::istream& in, std::uint64_t n, const char* what) {
  if (n > kMaxBlock) throw ValidationError(std::string("checkpoint: implausible size for ") + what);
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw ValidationError(std::string("checkpoint truncated while reading ") + what);
  }
  return s;
}

}  // namespace

nlohmann::json checkpoint_metadata(const Checkpoint& c) {
  return {{"format", "cmwm-checkpoint"},
          {"version", kCheckpointVersion},
          {"model", to_json(c.model.config())},
          {"standardizer", to_json(c.standardizer)},
          {"loss", to_json(c.loss)},
          {"train", to_json(c.train)},
          {"epoch", c.epoch},
          {"validation", to_json(c.validation)},
          {"parameter_count", c.model.parameter_count()},
          {"run_config", c.run_config}};
}

void write_checkpoint(std::ostream& out, const Checkpoint& c) {
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string meta = checkpoint_metadata(c).dump();
  put<std::uint64_t>(out, meta.size());
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  const ParamStore& params = c.model.params();
  put<std::uint64_t>(out, params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params.name(i);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint64_t>(out, params[i].rows());
    put<std::uint64_t>(out, params[i].cols());
    const auto v = params[i].values();
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!out) throw Error("checkpoint write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw ValidationError("not a cmwm checkpoint (bad magic)");
  }
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw ValidationError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto meta_len = get<std::uint64_t>(in, "metadata length");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(get_bytes(in, meta_len, "metadata"));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("checkpoint metadata: ") + e.what());
  }

  ParamStore params;
  const auto count = get<std::uint64_t>(in, "tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint32_t>(in, "tensor name length");
    std::string name = get_bytes(in, name_len, "tensor name");
    const auto rows = get<std::uint64_t>(in, "tensor rows");
    const auto cols = get<std::uint64_t>(in, "tensor cols");
    if (rows * cols > kMaxBlock / sizeof(double)) {
      throw ValidationError("checkpoint: implausible shape for '" + name + "'");
    }
    std::vector<double> data(rows * cols);
    if (!data.empty() && !in.read(reinterpret_cast<char*>(data.data()),
                                  static_cast<std::streamsize>(data.size() * sizeof(double)))) {
      throw ValidationError("checkpoint truncated in tensor '" + name + "'");
    }
    params.add(std::move(name), Tensor(rows, cols, std::move(data)));
  }

  try {
    const ModelConfig cfg = model_config_from_json(meta.at("model"));
    return Checkpoint{CmwmModel::from_params(cfg, std::move(params)),
                      standardizer_from_json(meta.at("standardizer")),
                      loss_weights_from_json(meta.at("loss")),
                      train_config_from_json(meta.at("train")),
                      meta.at("epoch").get<std::size_t>(),
                      MetricSummary{meta.at("validation").at("n").get<std::size_t>(),
                                    meta.at("validation").at("mae").get<double>(),
                                    meta.at("validation").at("rmse").get<double>()},
                      meta.value("run_config", nlohmann::json::object())};
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("checkpoint metadata: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open checkpoint " + path.string());
  try {
    return read_checkpoint(in);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

}  // namespace cmwm
