#include "fsdiff/common.hpp"

namespace fsdiff {

namespace {
constexpr std::array<std::string_view, kCommandCount> kCommandNames{
    "turn-left", "turn-right", "go-straight", "follow-lane", "change-lane-to-left",
    "change-lane-to-right"};
}  // namespace

std::string_view command_name(Command c) { return kCommandNames[static_cast<std::size_t>(c)]; }

std::optional<Command> parse_command(std::string_view name) {
  for (int i = 0; i < kCommandCount; ++i) {
    if (kCommandNames[static_cast<std::size_t>(i)] == name) return static_cast<Command>(i);
  }
  return std::nullopt;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  auto splitmix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  std::uint64_t h = splitmix(seed);
  h = splitmix(h ^ a);
  h = splitmix(h ^ b);
  h = splitmix(h ^ c);
  return h;
}

}  // namespace fsdiff
