#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fsdiff {

/// Contract violations in user-supplied inputs (maps to CLI exit code 1).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Failures while running a pipeline stage, e.g. unreadable files (exit code 2).
class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Command : std::uint8_t {
  kTurnLeft = 0,
  kTurnRight = 1,
  kGoStraight = 2,
  kFollowLane = 3,
  kChangeLaneLeft = 4,
  kChangeLaneRight = 5,
};

inline constexpr int kCommandCount = 6;
inline constexpr std::array<Command, kCommandCount> kAllCommands{
    Command::kTurnLeft,   Command::kTurnRight,      Command::kGoStraight,
    Command::kFollowLane, Command::kChangeLaneLeft, Command::kChangeLaneRight};

std::string_view command_name(Command c);
std::optional<Command> parse_command(std::string_view name);
inline int command_index(Command c) { return static_cast<int>(c); }

/// Semantic rendering used as the model's image input. Channel-planar,
/// row-major, values in [0, 1].
struct SemanticImage {
  enum Channel : int { kRoad = 0, kLaneMarking = 1, kObstacle = 2, kOffRoad = 3 };
  static constexpr int kChannels = 4;

  int width = 0;
  int height = 0;
  std::vector<float> data;

  SemanticImage() = default;
  SemanticImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(kChannels) * w * h, 0.0f) {}

  float at(int channel, int col, int row) const {
    return data[(static_cast<std::size_t>(channel) * height + row) * width + col];
  }
  float& at(int channel, int col, int row) {
    return data[(static_cast<std::size_t>(channel) * height + row) * width + col];
  }
  bool operator==(const SemanticImage&) const = default;
};

/// SplitMix64 finalizer; derives independent stream seeds from a base seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

}  // namespace fsdiff
