#include "evcog/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "evcog/errors.hpp"
#include "evcog/hash.hpp"

namespace evcog {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename U>
void put_le(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

template <typename U>
U get_le(std::string_view bytes, std::size_t& pos) {
  if (pos + sizeof(U) > bytes.size()) throw FormatError("checkpoint truncated");
  U v;
  std::memcpy(&v, bytes.data() + pos, sizeof(U));
  pos += sizeof(U);
  return v;
}

}  // namespace

ModelCheckpoint ModelCheckpoint::from_model(const Gpt<float>& model, nlohmann::json metadata) {
  return ModelCheckpoint{model.config(), std::vector<float>(model.params().begin(), model.params().end()),
                         std::move(metadata)};
}

Gpt<float> ModelCheckpoint::to_model() const {
  Gpt<float> model(config);
  if (params.size() != model.params().size()) {
    throw FormatError("checkpoint holds " + std::to_string(params.size()) + " parameters, config requires " +
                      std::to_string(model.params().size()));
  }
  model.params().assign(params.begin(), params.end());
  return model;
}

std::string ModelCheckpoint::hash() const { return sha256_hex(serialize_checkpoint(*this)); }

std::string serialize_checkpoint(const ModelCheckpoint& ckpt) {
  ParameterLayout layout(ckpt.config);
  if (layout.total() != ckpt.params.size()) throw FormatError("parameter vector does not match model config");
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : layout.tensors()) {
    tensors.push_back({{"name", t.name},
                       {"shape", t.shape},
                       {"dtype", "f32"},
                       {"offset", t.offset * sizeof(float)},
                       {"nbytes", t.numel * sizeof(float)}});
  }
  nlohmann::json header = {{"format_version", kCheckpointVersion},
                           {"model_config", ckpt.config},
                           {"vocabulary", Vocabulary::standard().to_json()},
                           {"metadata", ckpt.metadata},
                           {"tensors", tensors}};
  std::string head = header.dump();
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, head.size());
  out += head;
  out.reserve(out.size() + ckpt.params.size() * sizeof(float));
  for (float f : ckpt.params) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

ModelCheckpoint deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) || std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw FormatError("not an evcog checkpoint (bad magic)");
  }
  std::size_t pos = sizeof(kCheckpointMagic);
  auto version = get_le<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  auto head_len = get_le<std::uint64_t>(bytes, pos);
  if (pos + head_len > bytes.size()) throw FormatError("checkpoint header truncated");
  auto header = nlohmann::json::parse(bytes.substr(pos, head_len));
  pos += head_len;

  ModelCheckpoint ckpt;
  ckpt.config = header.at("model_config").get<ModelConfig>();
  ckpt.metadata = header.value("metadata", nlohmann::json::object());
  Vocabulary::from_json(header.at("vocabulary"));

  ParameterLayout layout(ckpt.config);
  ckpt.params.assign(layout.total(), 0.0f);
  const std::string_view data = bytes.substr(pos);
  for (const auto& entry : header.at("tensors")) {
    const auto& slot = layout.find(entry.at("name").get<std::string>());
    if (entry.at("dtype").get<std::string>() != "f32") throw FormatError("unsupported dtype for " + slot.name);
    if (entry.at("shape").get<std::vector<std::int64_t>>() != slot.shape) {
      throw FormatError("shape mismatch for tensor " + slot.name);
    }
    auto offset = entry.at("offset").get<std::size_t>();
    auto nbytes = entry.at("nbytes").get<std::size_t>();
    if (nbytes != slot.numel * sizeof(float) || offset + nbytes > data.size()) {
      throw FormatError("tensor " + slot.name + " extends past the data section");
    }
    std::size_t p = offset;
    for (std::size_t i = 0; i < slot.numel; ++i) {
      ckpt.params[slot.offset + i] = std::bit_cast<float>(get_le<std::uint32_t>(data, p));
    }
  }
  return ckpt;
}

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path) {
  auto bytes = serialize_checkpoint(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace evcog
