#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fsdiff/diffusion.hpp"
#include "fsdiff/freespace.hpp"
#include "fsdiff/nn/denoiser.hpp"
#include "fsdiff/synthworld.hpp"

namespace fsdiff {

struct EpisodeMix {
  Topology topology = Topology::kStraight;
  int count = 0;
  int lane_count = 1;
  double lane_width = 3.5;
  int min_obstacles = 0;
  int max_obstacles = 0;
  /// Restricts the planned command; empty picks uniformly among feasible ones.
  std::optional<Command> command;
};

struct SynthSettings {
  std::vector<EpisodeMix> episodes;
  int pose_stride = 4;
  double tail_length = 50.0;
  double validation_fraction = 0.1;
  int records_per_shard = 256;
};

struct TrainSettings {
  std::int64_t steps = 1000;
  int batch_size = 64;
  double lr = 1e-4;
  std::int64_t warmup_steps = 0;
  int draws = 1;  // corruptions per example per step
  double command_dropout = 0.2;
  std::int64_t checkpoint_every = 0;  // 0: only the final checkpoint
  std::int64_t log_every = 10;
  int template_k = kDefaultTemplateK;
};

enum class CommandMode { kNone, kAll, kFixed };

struct SamplerSettings {
  int samples = 6;
  GuidanceConfig guidance;
  bool template_init = false;
  CommandMode command_mode = CommandMode::kNone;
  Command command = Command::kFollowLane;  // used with kFixed
  std::string split = "val";
  int max_images = 0;  // 0: all
};

/// Parses "off" or "obstacle:<lambda>".
GuidanceConfig parse_guidance(const std::string& text);
std::string guidance_text(const GuidanceConfig& g);
/// Parses "none", "all" or a command name.
void parse_command_mode(const std::string& text, CommandMode* mode, Command* command);
std::string command_mode_text(CommandMode mode, Command command);

struct RunConfig {
  std::uint64_t seed = 0;
  SynthSettings synth;
  BuildConfig build;
  nn::DenoiserConfig model;
  TrainSettings train;
  SamplerSettings sampler;

  /// Throws ValidationError on out-of-range values.
  void validate() const;
};

/// Missing keys keep their defaults; unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& c);
nlohmann::json to_json(const TrainSettings& t);
TrainSettings train_settings_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace fsdiff
