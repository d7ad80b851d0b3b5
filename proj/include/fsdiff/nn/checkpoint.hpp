#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"

#include "fsdiff/nn/adam.hpp"
#include "fsdiff/nn/denoiser.hpp"

namespace fsdiff::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  DenoiserConfig model;
  ParamSet params;
  std::int64_t step = 0;
  std::optional<AdamState> adam;
  nlohmann::json meta = nlohmann::json::object();  // training settings carried for resume
};

/// Layout: magic "FSDCKPT\0", u32 version, u64 header length, JSON header
/// (model config, step, meta, tensor manifest), then f64 payloads in manifest order.
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes, const std::string& source);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fsdiff::nn
