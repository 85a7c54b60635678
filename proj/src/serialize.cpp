// Model file layout (all integers little-endian):
//   "NRTM" | u32 version | u32 header_len | header JSON (UTF-8)
//   | f32 parameter blocks in declaration order | u64 FNV-1a of all prior bytes

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "nrt/model.hpp"

namespace nrt {

namespace {

constexpr char kMagic[4] = {'N', 'R', 'T', 'M'};

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Dense: return "dense";
  }
  return "?";
}

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host assumed");
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t offset) {
  T v;
  std::memcpy(&v, bytes.data() + offset, sizeof(T));
  return v;
}

}  // namespace

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

nlohmann::json layer_to_json(const LayerSpec& l) {
  nlohmann::json j{{"type", layer_kind_name(l.kind)}};
  switch (l.kind) {
    case LayerKind::Conv:
      j["out_channels"] = l.units;
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      j["padding"] = l.padding;
      break;
    case LayerKind::MaxPool:
      j["window"] = l.kernel;
      j["stride"] = l.stride;
      break;
    case LayerKind::Dense:
      j["units"] = l.units;
      break;
    default:
      break;
  }
  return j;
}

LayerSpec layer_from_json(const nlohmann::json& j) {
  const std::string t = j.at("type").get<std::string>();
  if (t == "conv") {
    return LayerSpec::conv(j.at("out_channels").get<std::size_t>(), j.at("kernel").get<int>(),
                           j.at("stride").get<int>(), j.at("padding").get<int>());
  }
  if (t == "relu") return LayerSpec::relu();
  if (t == "maxpool") return LayerSpec::maxpool(j.at("window").get<int>(), j.at("stride").get<int>());
  if (t == "flatten") return LayerSpec::flatten();
  if (t == "dense") return LayerSpec::dense(j.at("units").get<std::size_t>());
  throw ModelFormatError("unknown layer type '" + t + "'");
}

std::vector<std::uint8_t> serialize_model(const Model& model) {
  nlohmann::json header;
  header["input_shape"] = model.input_shape();
  header["num_classes"] = model.num_classes();
  header["layers"] = nlohmann::json::array();
  for (const auto& l : model.layers()) header["layers"].push_back(layer_to_json(l));
  header["params"] = nlohmann::json::array();
  for (const auto& p : model.params()) {
    header["params"].push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
  }
  header["metadata"] = model.metadata();
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(16 + text.size() + model.parameter_count() * 4);
  out.insert(out.end(), kMagic, kMagic + 4);
  put_le<std::uint32_t>(out, kModelFormatVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& p : model.params()) {
    for (float v : p.tensor.data()) put_le<float>(out, v);
  }
  put_le<std::uint64_t>(out, fnv1a64(out));
  return out;
}

Model deserialize_model(std::span<const std::uint8_t> bytes, LoadOptions options) {
  if (bytes.size() < 12) throw ModelTruncatedError("model file truncated: no complete preamble");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw ModelFormatError("not a model file: bad magic bytes");
  }
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kModelFormatVersion) {
    throw ModelVersionError("unsupported model format version " + std::to_string(version) +
                            " (this build reads version " +
                            std::to_string(kModelFormatVersion) + ")");
  }
  const auto header_len = get_le<std::uint32_t>(bytes, 8);
  if (bytes.size() < 12 + static_cast<std::size_t>(header_len) + 8) {
    throw ModelTruncatedError("model file truncated inside the header");
  }
  nlohmann::json header;
  bool header_ok = true;
  try {
    header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
  } catch (const nlohmann::json::exception&) {
    header_ok = false;
  }

  std::size_t expected = 0;
  if (header_ok) {
    try {
      for (const auto& p : header.at("params")) {
        expected += shape_numel(p.at("shape").get<Shape>()) * sizeof(float);
      }
    } catch (const nlohmann::json::exception&) {
      header_ok = false;
    }
  }
  const std::size_t param_begin = 12 + header_len;
  if (header_ok && bytes.size() < param_begin + expected + 8) {
    throw ModelTruncatedError("model file truncated: expected " +
                              std::to_string(param_begin + expected + 8) + " bytes, found " +
                              std::to_string(bytes.size()));
  }
  const auto stored = get_le<std::uint64_t>(bytes, bytes.size() - 8);
  if (fnv1a64(bytes.first(bytes.size() - 8)) != stored) {
    throw ModelChecksumError("model checksum mismatch: file is corrupted");
  }
  if (!header_ok) throw ModelFormatError("model header is not a valid architecture descriptor");
  if (bytes.size() != param_begin + expected + 8) {
    throw ModelFormatError("model file has trailing bytes after the parameter blocks");
  }

  try {
    std::vector<LayerSpec> layers;
    for (const auto& l : header.at("layers")) layers.push_back(layer_from_json(l));
    Model model(header.at("input_shape").get<Shape>(), std::move(layers),
                header.at("num_classes").get<std::size_t>());
    const auto& pj = header.at("params");
    if (pj.size() != model.params().size()) {
      throw ModelFormatError("parameter list does not match the layer stack");
    }
    std::size_t offset = param_begin;
    for (std::size_t i = 0; i < pj.size(); ++i) {
      auto& p = model.params()[i];
      if (pj[i].at("name").get<std::string>() != p.name ||
          pj[i].at("shape").get<Shape>() != p.tensor.shape()) {
        throw ModelFormatError("parameter '" + p.name + "' does not match the layer stack");
      }
      std::memcpy(p.tensor.data().data(), bytes.data() + offset, p.tensor.size() * sizeof(float));
      offset += p.tensor.size() * sizeof(float);
    }
    if (!options.strip_metadata && header.contains("metadata")) {
      model.metadata() = header["metadata"];
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ModelFormatError(std::string("malformed model header: ") + e.what());
  } catch (const ConfigError& e) {
    throw ModelFormatError(std::string("invalid architecture in model header: ") + e.what());
  }
}

void save_model(const Model& model, const std::filesystem::path& path) {
  const auto bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

Model load_model(const std::filesystem::path& path, LoadOptions options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model file '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_model(bytes, options);
}

}  // namespace nrt
