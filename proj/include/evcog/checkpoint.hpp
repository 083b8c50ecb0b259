#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evcog/model.hpp"
#include "evcog/tokenizer.hpp"

namespace evcog {

// On-disk layout (all integers little-endian):
//   8 bytes   magic "EVCOGCKP"
//   u32       format version
//   u64       header length in bytes
//   header    UTF-8 JSON: model_config, vocabulary, metadata, and a tensor
//             table [{name, shape, dtype: "f32", offset, nbytes}]
//   data      raw little-endian float32 tensors; offsets are relative to the
//             start of the data section
inline constexpr char kCheckpointMagic[8] = {'E', 'V', 'C', 'O', 'G', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct ModelCheckpoint {
  ModelConfig config;
  std::vector<float> params;
  nlohmann::json metadata = nlohmann::json::object();

  static ModelCheckpoint from_model(const Gpt<float>& model, nlohmann::json metadata = nlohmann::json::object());
  Gpt<float> to_model() const;
  // SHA-256 over the serialized bytes; stable identifier for caching and
  // embedding provenance.
  std::string hash() const;
};

std::string serialize_checkpoint(const ModelCheckpoint& ckpt);
ModelCheckpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace evcog
