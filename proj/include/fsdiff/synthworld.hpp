#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fsdiff/common.hpp"
#include "fsdiff/freespace.hpp"
#include "fsdiff/geom.hpp"

namespace fsdiff {

enum class Topology : std::uint8_t {
  kStraight = 0,
  kSingleLane = 1,
  kMultiLane = 2,
  kTJunction = 3,
  kCrossroads = 4,
};

std::string_view topology_name(Topology t);
std::optional<Topology> parse_topology(std::string_view name);

struct SceneSpec {
  Topology topology = Topology::kStraight;
  int lane_count = 1;
  double lane_width = 3.5;
  int obstacle_count = 0;
  std::uint64_t seed = 0;
};

/// Oriented rectangle on the ground, world frame (x forward at episode start, y left).
struct GroundRect {
  Vec2 center;
  double heading = 0.0;
  double length = 0.0;  // along heading
  double width = 0.0;

  std::array<Vec2, 4> corners() const;
  bool contains(Vec2 p) const;
};

/// Separating-axis test; touching rectangles count as overlapping.
bool rects_overlap(const GroundRect& a, const GroundRect& b);

struct LaneMarking {
  Vec2 start;
  Vec2 end;
  double width = 0.15;
  double dash = 0.0;  // 0 for solid lines, otherwise dash and gap length
};

struct World {
  SceneSpec spec;
  std::vector<GroundRect> road;          // disjoint pieces, union is the road
  std::vector<std::vector<Vec2>> lanes;  // centerlines of lanes heading away from the ego start
  std::vector<LaneMarking> markings;
  std::vector<GroundRect> obstacles;
  double junction_x = 0.0;   // x of the crossing road axis (junction topologies)
  int ego_lane = 0;          // index into the approach lanes, 0 = rightmost
  static constexpr double kObstacleHeight = 1.5;

  bool on_road(Vec2 p) const;
  double road_area() const;
};

/// Deterministic in `spec.seed`. Throws ValidationError for infeasible specs.
World generate_world(const SceneSpec& spec);

struct Trajectory {
  std::vector<Pose2> poses;
  Command command = Command::kFollowLane;
  /// Arc-length window [begin, end] (meters from the first pose) in which the
  /// command is active; frames outside it are labelled follow-lane.
  double command_begin = 0.0;
  double command_end = 0.0;
};

inline constexpr double kPoseSpacing = 0.5;

/// Poses 0.5 m apart along the command's path. Throws ValidationError when the
/// command is not feasible for the topology or the ego lane.
Trajectory plan_trajectory(const World& world, Command command, std::uint64_t seed,
                           double tail_length = 50.0);

/// Per-frame command label given the arc length travelled so far.
Command label_at(const Trajectory& traj, double arc_length);

SemanticImage render_semantic(const World& world, const Pose2& pose, const CameraModel& cam);

/// Renders `world` and reports, for each obstacle with visible pixels, its
/// image box (continuous pixel coordinates) and BEV footprint in the ego frame.
SemanticImage render_semantic(const World& world, const Pose2& pose, const CameraModel& cam,
                              std::vector<ObstacleBox>* boxes);

struct EmitOptions {
  int pose_stride = 1;  // one frame every `pose_stride` poses
  double ego_width = 1.9;
  double ego_length = 4.5;
  std::string ref_prefix = "frame";
};

/// Poses are stored in world coordinates. Footprints are re-anchored to each
/// frame's pose when samples are built. The log ends before the first pose at
/// which the ego footprint touches an obstacle.
DrivingLog emit_log(const World& world, const Trajectory& traj, const CameraModel& cam,
                    const EmitOptions& options = {});

/// Commands the generator can plan for a topology (and ego lane).
std::vector<Command> feasible_commands(const World& world);

}  // namespace fsdiff
