#include "fsdiff/synthworld.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <random>

#include <Eigen/Dense>

namespace fsdiff {

namespace {

constexpr std::array<std::string_view, 5> kTopologyNames{"straight", "single_lane", "multi_lane",
                                                         "t_junction", "crossroads"};
constexpr double kBehindStart = 10.0;
constexpr double kRoadLength = 220.0;
constexpr double kArmLength = 80.0;
constexpr double kEdgeInset = 0.25;
constexpr double kMarkingWidth = 0.15;
constexpr double kDashLength = 3.0;
constexpr double kObstacleLength = 4.5;
constexpr double kObstacleWidth = 1.9;

GroundRect rect_from_bounds(double x0, double x1, double y0, double y1) {
  return GroundRect{Vec2{0.5 * (x0 + x1), 0.5 * (y0 + y1)}, 0.0, x1 - x0, y1 - y0};
}

struct LaneSlot {
  Vec2 start;
  double heading;
  double length;
};

}  // namespace

std::string_view topology_name(Topology t) { return kTopologyNames[static_cast<std::size_t>(t)]; }

std::optional<Topology> parse_topology(std::string_view name) {
  for (std::size_t i = 0; i < kTopologyNames.size(); ++i) {
    if (kTopologyNames[i] == name) return static_cast<Topology>(i);
  }
  return std::nullopt;
}

std::array<Vec2, 4> GroundRect::corners() const {
  const double c = std::cos(heading), s = std::sin(heading);
  const double hl = 0.5 * length, hw = 0.5 * width;
  const std::array<Vec2, 4> local{Vec2{-hl, -hw}, Vec2{hl, -hw}, Vec2{hl, hw}, Vec2{-hl, hw}};
  std::array<Vec2, 4> out;
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = Vec2{center.x + c * local[i].x - s * local[i].y, center.y + s * local[i].x + c * local[i].y};
  }
  return out;
}

bool GroundRect::contains(Vec2 p) const {
  const double c = std::cos(heading), s = std::sin(heading);
  const double dx = p.x - center.x, dy = p.y - center.y;
  const double lx = c * dx + s * dy;
  const double ly = -s * dx + c * dy;
  return std::abs(lx) <= 0.5 * length && std::abs(ly) <= 0.5 * width;
}

bool World::on_road(Vec2 p) const {
  return std::any_of(road.begin(), road.end(), [&](const GroundRect& r) { return r.contains(p); });
}

double World::road_area() const {
  double a = 0.0;
  for (const auto& r : road) a += r.length * r.width;
  return a;
}

World generate_world(const SceneSpec& spec) {
  if (spec.lane_count < 1) throw ValidationError("scene: lane_count must be >= 1");
  if (!(spec.lane_width > kObstacleWidth)) throw ValidationError("scene: lane_width too narrow for the ego");
  if (spec.obstacle_count < 0) throw ValidationError("scene: negative obstacle_count");
  if (spec.topology == Topology::kMultiLane && spec.lane_count < 2) {
    throw ValidationError("scene: multi_lane needs lane_count >= 2");
  }

  std::mt19937_64 rng(mix_seed(spec.seed, 0x5eed));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  World world;
  world.spec = spec;
  const double lw = spec.lane_width;
  const double w = spec.lane_count * lw;
  const double hw = 0.5 * w;
  auto lane_offset = [&](int i) { return -hw + (i + 0.5) * lw; };

  std::vector<LaneSlot> slots;
  auto add_edges = [&](Vec2 a, Vec2 b) { world.markings.push_back({a, b, kMarkingWidth, 0.0}); };
  auto add_divider = [&](Vec2 a, Vec2 b) { world.markings.push_back({a, b, kMarkingWidth, kDashLength}); };

  const bool junction = spec.topology == Topology::kTJunction || spec.topology == Topology::kCrossroads;
  if (!junction) {
    world.road.push_back(rect_from_bounds(-kBehindStart, kRoadLength, -hw, hw));
    for (int i = 0; i < spec.lane_count; ++i) {
      world.lanes.push_back({Vec2{-kBehindStart, lane_offset(i)}, Vec2{kRoadLength, lane_offset(i)}});
      slots.push_back({Vec2{0.0, lane_offset(i)}, 0.0, kRoadLength - 20.0});
    }
    if (spec.topology != Topology::kStraight) {
      add_edges({-kBehindStart, -hw + kEdgeInset}, {kRoadLength, -hw + kEdgeInset});
      add_edges({-kBehindStart, hw - kEdgeInset}, {kRoadLength, hw - kEdgeInset});
      for (int i = 1; i < spec.lane_count; ++i) {
        add_divider({-kBehindStart, -hw + i * lw}, {kRoadLength, -hw + i * lw});
      }
    }
    world.ego_lane = spec.topology == Topology::kMultiLane
                         ? static_cast<int>(unit(rng) * spec.lane_count) % spec.lane_count
                         : 0;
  } else {
    const double j = 18.0 + 22.0 * unit(rng);
    world.junction_x = j;
    const double jx0 = j - hw, jx1 = j + hw;
    world.road.push_back(rect_from_bounds(-kBehindStart, jx0, -hw, hw));  // approach arm
    if (spec.topology == Topology::kTJunction) {
      world.road.push_back(rect_from_bounds(jx0, jx1, -kArmLength, kArmLength));
    } else {
      world.road.push_back(rect_from_bounds(jx0, jx1, -hw, hw));              // junction square
      world.road.push_back(rect_from_bounds(jx0, jx1, hw, kArmLength));       // left arm
      world.road.push_back(rect_from_bounds(jx0, jx1, -kArmLength, -hw));     // right arm
      world.road.push_back(rect_from_bounds(jx1, j + kArmLength, -hw, hw));   // far arm
    }

    for (int i = 0; i < spec.lane_count; ++i) {
      const double y = lane_offset(i);
      world.lanes.push_back({Vec2{-kBehindStart, y}, Vec2{jx0, y}});
      slots.push_back({Vec2{0.0, y}, 0.0, jx0 - kObstacleLength});
      const double x = j - hw + (i + 0.5) * lw;
      world.lanes.push_back({Vec2{x, hw}, Vec2{x, kArmLength}});
      world.lanes.push_back({Vec2{x, -hw}, Vec2{x, -kArmLength}});
      slots.push_back({Vec2{x, hw + 1.0}, 0.5 * std::numbers::pi, kArmLength - hw - 8.0});
      slots.push_back({Vec2{x, -hw - 1.0}, -0.5 * std::numbers::pi, kArmLength - hw - 8.0});
      if (spec.topology == Topology::kCrossroads) {
        world.lanes.push_back({Vec2{jx1, y}, Vec2{j + kArmLength, y}});
        slots.push_back({Vec2{jx1 + 1.0, y}, 0.0, kArmLength - 8.0});
      }
    }

    // Approach arm markings.
    add_edges({-kBehindStart, -hw + kEdgeInset}, {jx0, -hw + kEdgeInset});
    add_edges({-kBehindStart, hw - kEdgeInset}, {jx0, hw - kEdgeInset});
    for (int i = 1; i < spec.lane_count; ++i) add_divider({-kBehindStart, -hw + i * lw}, {jx0, -hw + i * lw});
    // Crossing arms.
    for (double sign : {1.0, -1.0}) {
      add_edges({jx0 + kEdgeInset, sign * hw}, {jx0 + kEdgeInset, sign * kArmLength});
      for (int i = 1; i < spec.lane_count; ++i) {
        add_divider({jx0 + i * lw, sign * hw}, {jx0 + i * lw, sign * kArmLength});
      }
    }
    if (spec.topology == Topology::kTJunction) {
      add_edges({jx1 - kEdgeInset, -kArmLength}, {jx1 - kEdgeInset, kArmLength});
    } else {
      for (double sign : {1.0, -1.0}) add_edges({jx1 - kEdgeInset, sign * hw}, {jx1 - kEdgeInset, sign * kArmLength});
      add_edges({jx1, -hw + kEdgeInset}, {j + kArmLength, -hw + kEdgeInset});
      add_edges({jx1, hw - kEdgeInset}, {j + kArmLength, hw - kEdgeInset});
      for (int i = 1; i < spec.lane_count; ++i) add_divider({jx1, -hw + i * lw}, {j + kArmLength, -hw + i * lw});
    }
    world.ego_lane = 0;
  }

  // Obstacles: lane-aligned boxes at least 6 m from the ego start, no overlaps.
  const Vec2 ego_start{0.0, lane_offset(world.ego_lane)};
  for (int k = 0; k < spec.obstacle_count; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < 400 && !placed; ++attempt) {
      const LaneSlot& slot = slots[static_cast<std::size_t>(unit(rng) * slots.size()) % slots.size()];
      const double along = 6.0 + unit(rng) * std::max(0.0, std::min(slot.length, 60.0) - 6.0);
      const double lateral = (unit(rng) - 0.5) * 0.6;
      const double c = std::cos(slot.heading), s = std::sin(slot.heading);
      GroundRect box{Vec2{slot.start.x + c * along - s * lateral, slot.start.y + s * along + c * lateral},
                     slot.heading, kObstacleLength, kObstacleWidth};
      const auto corners = box.corners();
      bool ok = norm(box.center - ego_start) >= 6.0 + 0.5 * kObstacleLength;
      for (const Vec2& p : corners) ok = ok && world.on_road(p);
      for (const GroundRect& other : world.obstacles) {
        ok = ok && norm(other.center - box.center) > kObstacleLength + 1.0;
      }
      if (ok) {
        world.obstacles.push_back(box);
        placed = true;
      }
    }
    if (!placed) throw ValidationError("scene: cannot place the requested obstacles");
  }
  return world;
}

std::vector<Command> feasible_commands(const World& world) {
  switch (world.spec.topology) {
    case Topology::kStraight:
    case Topology::kSingleLane:
      return {Command::kFollowLane};
    case Topology::kMultiLane: {
      std::vector<Command> out{Command::kFollowLane};
      if (world.ego_lane + 1 < world.spec.lane_count) out.push_back(Command::kChangeLaneLeft);
      if (world.ego_lane > 0) out.push_back(Command::kChangeLaneRight);
      return out;
    }
    case Topology::kTJunction:
      return {Command::kTurnLeft, Command::kTurnRight};
    case Topology::kCrossroads:
      return {Command::kTurnLeft, Command::kTurnRight, Command::kGoStraight};
  }
  return {};
}

namespace {

struct DensePath {
  std::vector<Vec2> points;
  std::vector<double> heading;

  void add(Vec2 p, double h) {
    points.push_back(p);
    heading.push_back(h);
  }
  void straight(Vec2 from, double h, double length, double step) {
    const int n = std::max(1, static_cast<int>(std::ceil(length / step)));
    const double c = std::cos(h), s = std::sin(h);
    for (int i = 0; i <= n; ++i) {
      const double d = length * i / n;
      add({from.x + c * d, from.y + s * d}, h);
    }
  }
};

std::vector<Pose2> resample_path(const DensePath& path, double spacing) {
  std::vector<double> cum(path.points.size(), 0.0);
  for (std::size_t i = 1; i < path.points.size(); ++i) {
    cum[i] = cum[i - 1] + norm(path.points[i] - path.points[i - 1]);
  }
  std::vector<Pose2> poses;
  std::size_t seg = 0;
  for (double s = 0.0; s <= cum.back() + 1e-9; s += spacing) {
    while (seg + 2 < cum.size() && cum[seg + 1] < s) ++seg;
    const double len = cum[seg + 1] - cum[seg];
    const double t = len > 0.0 ? std::clamp((s - cum[seg]) / len, 0.0, 1.0) : 0.0;
    const Vec2 p = path.points[seg] + (path.points[seg + 1] - path.points[seg]) * t;
    const double h0 = path.heading[seg];
    const double h1 = path.heading[seg + 1];
    poses.push_back(Pose2{p.x, p.y, wrap_angle(h0 + wrap_angle(h1 - h0) * t)});
  }
  return poses;
}

}  // namespace

Trajectory plan_trajectory(const World& world, Command command, std::uint64_t seed, double tail_length) {
  const auto feasible = feasible_commands(world);
  if (std::find(feasible.begin(), feasible.end(), command) == feasible.end()) {
    throw ValidationError(std::string("plan_trajectory: command '") + std::string(command_name(command)) +
                          "' is infeasible for topology " + std::string(topology_name(world.spec.topology)));
  }
  std::mt19937_64 rng(mix_seed(seed, 0x7a1));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const double lw = world.spec.lane_width;
  const double w = world.spec.lane_count * lw;
  const double hw = 0.5 * w;
  const double y0 = -hw + (world.ego_lane + 0.5) * lw;
  constexpr double step = 0.02;
  constexpr double pi = std::numbers::pi;

  Trajectory traj;
  traj.command = command;
  DensePath path;

  switch (command) {
    case Command::kFollowLane: {
      path.straight({0.0, y0}, 0.0, 20.0 + tail_length, step);
      traj.command_begin = 0.0;
      traj.command_end = 1e9;
      break;
    }
    case Command::kChangeLaneLeft:
    case Command::kChangeLaneRight: {
      const double start = 5.0 + 20.0 * unit(rng);
      constexpr double blend = 20.0;
      const double delta = command == Command::kChangeLaneLeft ? lw : -lw;
      path.straight({0.0, y0}, 0.0, start, step);
      for (double x = start + step; x < start + blend; x += step) {
        const double phase = pi * (x - start) / blend;
        const double y = y0 + delta * 0.5 * (1.0 - std::cos(phase));
        const double slope = delta * 0.5 * std::sin(phase) * pi / blend;
        path.add({x, y}, std::atan(slope));
      }
      path.straight({start + blend, y0 + delta}, 0.0, tail_length, step);
      traj.command_begin = std::max(0.0, start - 15.0);
      traj.command_end = start + blend;
      break;
    }
    case Command::kGoStraight: {
      const double entry = world.junction_x - hw;
      path.straight({0.0, y0}, 0.0, entry + w + tail_length, step);
      traj.command_begin = std::max(0.0, entry - 25.0);
      traj.command_end = entry + w;
      break;
    }
    case Command::kTurnLeft:
    case Command::kTurnRight: {
      const bool left = command == Command::kTurnLeft;
      const double j = world.junction_x;
      double radius, arc_start_x;
      if (left) {
        const double x_out = j + hw - 0.5 * lw;
        radius = w - 0.5 * lw + 2.5;
        arc_start_x = x_out - radius;
      } else {
        const double x_out = j - hw + 0.5 * lw;
        radius = 0.5 * lw + 4.0;
        arc_start_x = x_out - radius;
      }
      path.straight({0.0, y0}, 0.0, arc_start_x, step);
      const double sign = left ? 1.0 : -1.0;
      const Vec2 center{arc_start_x, y0 + sign * radius};
      const double sweep = 0.5 * pi;
      const int n = static_cast<int>(std::ceil(radius * sweep / step));
      for (int i = 1; i <= n; ++i) {
        const double phi = sweep * i / n;
        const Vec2 p{center.x + radius * std::sin(phi), center.y - sign * radius * std::cos(phi)};
        path.add(p, sign * phi);
      }
      const Vec2 end = path.points.back();
      DensePath tail;
      tail.straight(end, sign * 0.5 * pi, tail_length, step);
      for (std::size_t i = 1; i < tail.points.size(); ++i) path.add(tail.points[i], tail.heading[i]);
      traj.command_begin = std::max(0.0, arc_start_x - 25.0);
      traj.command_end = arc_start_x + radius * sweep;
      break;
    }
  }
  traj.poses = resample_path(path, kPoseSpacing);
  return traj;
}

Command label_at(const Trajectory& traj, double arc_length) {
  if (arc_length >= traj.command_begin && arc_length <= traj.command_end) return traj.command;
  return Command::kFollowLane;
}

namespace {

bool on_marking(const World& world, Vec2 p) {
  for (const LaneMarking& m : world.markings) {
    const Vec2 d = m.end - m.start;
    const double len = norm(d);
    if (len <= 0.0) continue;
    const Vec2 dir = d * (1.0 / len);
    const Vec2 rel = p - m.start;
    const double along = dot(rel, dir);
    if (along < 0.0 || along > len) continue;
    if (std::abs(cross(dir, rel)) > 0.5 * m.width) continue;
    if (m.dash > 0.0 && static_cast<long>(std::floor(along / m.dash)) % 2 != 0) continue;
    return true;
  }
  return false;
}

// Entry distance of a ray into an upright box standing on the ground, or +inf.
double ray_box(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir, const GroundRect& box, double height) {
  const double c = std::cos(box.heading), s = std::sin(box.heading);
  const double ox = origin.x() - box.center.x, oy = origin.y() - box.center.y;
  const std::array<double, 3> o{c * ox + s * oy, -s * ox + c * oy, origin.z()};
  const std::array<double, 3> d{c * dir.x() + s * dir.y(), -s * dir.x() + c * dir.y(), dir.z()};
  const std::array<double, 3> lo{-0.5 * box.length, -0.5 * box.width, 0.0};
  const std::array<double, 3> hi{0.5 * box.length, 0.5 * box.width, height};
  double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 3; ++k) {
    if (std::abs(d[k]) < 1e-15) {
      if (o[k] < lo[k] || o[k] > hi[k]) return std::numeric_limits<double>::infinity();
      continue;
    }
    double a = (lo[k] - o[k]) / d[k];
    double b = (hi[k] - o[k]) / d[k];
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
    if (t0 > t1) return std::numeric_limits<double>::infinity();
  }
  return t0;
}

}  // namespace

SemanticImage render_semantic(const World& world, const Pose2& pose, const CameraModel& cam) {
  return render_semantic(world, pose, cam, nullptr);
}

SemanticImage render_semantic(const World& world, const Pose2& pose, const CameraModel& cam,
                              std::vector<ObstacleBox>* boxes) {
  SemanticImage img(cam.image_width, cam.image_height);
  const double ch = std::cos(pose.theta), sh = std::sin(pose.theta);
  const Eigen::Vector3d origin(pose.x, pose.y, cam.height);
  const Eigen::Matrix3d rt = cam.rotation.transpose();

  struct Extent {
    int c0 = std::numeric_limits<int>::max(), c1 = -1, r0 = std::numeric_limits<int>::max(), r1 = -1;
  };
  std::vector<Extent> extents(world.obstacles.size());

  for (int r = 0; r < cam.image_height; ++r) {
    for (int c = 0; c < cam.image_width; ++c) {
      const Eigen::Vector3d ray((c + 0.5 - cam.cx) / cam.fx, (r + 0.5 - cam.cy) / cam.fy, 1.0);
      const Eigen::Vector3d level = rt * ray;  // x right, y down, z forward (ego level frame)
      // World direction: forward * z + left * (-x) + up * (-y).
      const Eigen::Vector3d dir(ch * level.z() - sh * (-level.x()), sh * level.z() + ch * (-level.x()), -level.y());

      const double t_ground = dir.z() < -1e-12 ? cam.height / -dir.z() : std::numeric_limits<double>::infinity();
      double t_obs = std::numeric_limits<double>::infinity();
      int hit = -1;
      for (std::size_t k = 0; k < world.obstacles.size(); ++k) {
        const double t = ray_box(origin, dir, world.obstacles[k], World::kObstacleHeight);
        if (t < t_obs) {
          t_obs = t;
          hit = static_cast<int>(k);
        }
      }
      if (hit >= 0 && t_obs < t_ground) {
        img.at(SemanticImage::kObstacle, c, r) = 1.0f;
        Extent& e = extents[static_cast<std::size_t>(hit)];
        e.c0 = std::min(e.c0, c);
        e.c1 = std::max(e.c1, c);
        e.r0 = std::min(e.r0, r);
        e.r1 = std::max(e.r1, r);
        continue;
      }
      if (!std::isfinite(t_ground)) continue;  // sky
      const Vec2 p{origin.x() + dir.x() * t_ground, origin.y() + dir.y() * t_ground};
      if (world.on_road(p)) {
        img.at(SemanticImage::kRoad, c, r) = 1.0f;
        if (on_marking(world, p)) img.at(SemanticImage::kLaneMarking, c, r) = 1.0f;
      } else {
        img.at(SemanticImage::kOffRoad, c, r) = 1.0f;
      }
    }
  }

  if (boxes) {
    boxes->clear();
    for (std::size_t k = 0; k < world.obstacles.size(); ++k) {
      const Extent& e = extents[k];
      if (e.c1 < 0) continue;
      ObstacleBox box{static_cast<double>(e.c0), static_cast<double>(e.r0), static_cast<double>(e.c1 + 1),
                      static_cast<double>(e.r1 + 1), std::nullopt};
      std::array<Vec2, 4> bev;
      const auto corners = world.obstacles[k].corners();
      for (std::size_t i = 0; i < 4; ++i) {
        const double dx = corners[i].x - pose.x, dy = corners[i].y - pose.y;
        const double fwd = ch * dx + sh * dy;
        const double left = -sh * dx + ch * dy;
        bev[i] = Vec2{-left, fwd};
      }
      box.bev_footprint = bev;
      boxes->push_back(box);
    }
  }
  return img;
}

bool rects_overlap(const GroundRect& a, const GroundRect& b) {
  const auto ca = a.corners(), cb = b.corners();
  for (const GroundRect* r : {&a, &b}) {
    for (const Vec2 axis : {Vec2{std::cos(r->heading), std::sin(r->heading)}, Vec2{-std::sin(r->heading), std::cos(r->heading)}}) {
      double a0 = std::numeric_limits<double>::infinity(), a1 = -a0, b0 = a0, b1 = -a0;
      for (const Vec2& p : ca) {
        a0 = std::min(a0, dot(p, axis));
        a1 = std::max(a1, dot(p, axis));
      }
      for (const Vec2& p : cb) {
        b0 = std::min(b0, dot(p, axis));
        b1 = std::max(b1, dot(p, axis));
      }
      if (a1 < b0 || b1 < a0) return false;
    }
  }
  return true;
}

DrivingLog emit_log(const World& world, const Trajectory& traj, const CameraModel& cam, const EmitOptions& options) {
  if (options.pose_stride < 1) throw ValidationError("emit_log: pose_stride must be >= 1");
  if (traj.poses.size() < 2) throw ValidationError("emit_log: trajectory needs at least 2 poses");
  DrivingLog log;
  log.camera = cam;
  log.ego_width = options.ego_width;
  log.ego_length = options.ego_length;
  std::size_t end = traj.poses.size();
  for (std::size_t i = 0; i < end; ++i) {
    const Pose2& p = traj.poses[i];
    const GroundRect ego{Vec2{p.x, p.y}, p.theta, options.ego_length, options.ego_width};
    for (const GroundRect& o : world.obstacles) {
      if (rects_overlap(ego, o)) end = i;
    }
  }
  for (std::size_t i = 0; i < end; i += static_cast<std::size_t>(options.pose_stride)) {
    LogFrame frame;
    char ref[64];
    std::snprintf(ref, sizeof(ref), "%s_%05zu", options.ref_prefix.c_str(), log.frames.size());
    frame.image_ref = ref;
    frame.timestamp = 0.1 * static_cast<double>(i);
    frame.pose = traj.poses[i];
    frame.command = label_at(traj, kPoseSpacing * static_cast<double>(i));
    frame.image = std::make_shared<const SemanticImage>(render_semantic(world, frame.pose, cam, &frame.obstacles));
    log.frames.push_back(std::move(frame));
  }
  return log;
}

}  // namespace fsdiff
