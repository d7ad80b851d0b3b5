#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace fsdiff {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  bool operator==(const Vec2&) const = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
double norm(Vec2 v);

/// Wraps an angle into (-pi, pi].
double wrap_angle(double radians);

/// Ego pose in a world frame: x forward, y to the left, theta counter-clockwise.
struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
};

struct Rigid2 {
  double rotation = 0.0;
  Vec2 translation;
};

/// Relative transform of `other` with respect to `reference`.
///
/// The translation is the plain world-axis difference; it is not rotated into
/// the reference heading. Callers that need ego-frame offsets re-anchor the
/// poses first (see `anchor_pose`).
Rigid2 relative_pose(const Pose2& reference, const Pose2& other);

/// Expresses `pose` in the frame of `anchor` (anchor becomes the origin).
Pose2 anchor_pose(const Pose2& anchor, const Pose2& pose);

/// Corners R(rotation) * P + translation of a w x l footprint, where the first
/// coordinate spans the width and the second the length. Order:
/// (-w/2,-l/2), (w/2,-l/2), (w/2,l/2), (-w/2,l/2).
std::array<Vec2, 4> footprint_corners(const Rigid2& transform, double width, double length);

/// Signed shoelace area (positive for counter-clockwise in a y-up frame).
double signed_area(std::span<const Vec2> polygon);

/// A regular lattice of sample points: cell (i, j) is sampled at its center
/// origin + ((i + 0.5) * step, (j + 0.5) * step).
struct GridSpec {
  int width = 0;
  int height = 0;
  double resolution = 1.0;
  Vec2 origin;

  Vec2 cell_center(int col, int row) const {
    return {origin.x + (col + 0.5) * resolution, origin.y + (row + 0.5) * resolution};
  }
  bool operator==(const GridSpec&) const = default;
};

/// BEV grid in the ego frame: u lateral (right positive), v forward.
/// 0.1 m cells spanning 30 m laterally and 60 m forward of the ego origin.
GridSpec default_bev_grid();

/// Row-major binary raster.
class BitGrid {
 public:
  BitGrid() = default;
  BitGrid(int width, int height);

  int width() const { return width_; }
  int height() const { return height_; }
  bool in_bounds(int col, int row) const {
    return col >= 0 && row >= 0 && col < width_ && row < height_;
  }
  bool at(int col, int row) const { return bits_[index(col, row)] != 0; }
  void set(int col, int row, bool value = true) { bits_[index(col, row)] = value ? 1 : 0; }
  std::size_t count() const;
  bool none() const { return count() == 0; }

  std::span<const std::uint8_t> bits() const { return bits_; }
  std::span<std::uint8_t> bits() { return bits_; }

  bool operator==(const BitGrid&) const = default;

 private:
  std::size_t index(int col, int row) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(col);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;
};

using ImageMask = BitGrid;

struct GridMask {
  GridSpec spec;
  BitGrid bits;

  explicit GridMask(const GridSpec& s = default_bev_grid()) : spec(s), bits(s.width, s.height) {}
  bool operator==(const GridMask&) const = default;
};

/// Sets every lattice cell whose center is inside `polygon` (even-odd rule).
/// Crossings are half-open: a center on a left/lower edge is inside, one on a
/// right/upper edge is outside, so polygons sharing an edge never both claim a
/// cell.
void fill_polygon(std::span<const Vec2> polygon, const GridSpec& lattice, BitGrid& out);

struct RasterResult {
  GridMask mask;
  bool degenerate = false;
};

RasterResult rasterize_polygon(std::span<const Vec2> corners, const GridSpec& grid);

/// Cellwise OR. Throws std::invalid_argument on mismatched grid specs.
GridMask union_masks(std::span<const GridMask> masks);

/// Pinhole camera above a flat ground plane.
///
/// Camera axes are x right, y down, z forward. A ground point at lateral u
/// (right positive) and forward v is [u, +height, v] before `rotation`.
struct CameraModel {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  double height = 0.0;
  int image_width = 0;
  int image_height = 0;

  /// Throws std::invalid_argument when intrinsics, height or rotation are invalid.
  void validate() const;

  /// Camera pitched down by `pitch_down` radians about its x axis.
  static CameraModel pitched(double fx, double fy, double cx, double cy, double pitch_down,
                             double height, int image_width, int image_height);
  /// 128x256 semantic camera used by the synthetic world.
  static CameraModel synth_default();
};

inline constexpr double kDepthEpsilon = 1e-6;

/// Ground point (u, v) to continuous pixel coordinates (pixel (c, r) spans
/// [c, c+1) x [r, r+1)). Empty when behind the near plane or outside the image.
std::optional<Vec2> project_ground_point(const CameraModel& cam, Vec2 ground);

/// Same projection without the image-bounds test.
std::optional<Vec2> project_ground_point_unbounded(const CameraModel& cam, Vec2 ground);

/// Ground intersection of the ray through continuous pixel coordinates, if the
/// ray points below the horizon.
std::optional<Vec2> ground_from_pixel(const CameraModel& cam, Vec2 pixel);

/// Projects every set BEV cell as a quad and fills it in the image. Quads are
/// clipped against the near plane before the perspective divide.
ImageMask project_mask(const CameraModel& cam, const GridMask& bev);

}  // namespace fsdiff
