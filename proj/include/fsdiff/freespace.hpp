#pragma once

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fsdiff/common.hpp"
#include "fsdiff/contour.hpp"
#include "fsdiff/geom.hpp"

namespace fsdiff {

/// Obstacle as seen in one frame: an image-plane box in continuous pixel
/// coordinates and, when known, its ground footprint in the BEV ego frame of
/// that frame (u right, v forward, meters).
struct ObstacleBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;
  std::optional<std::array<Vec2, 4>> bev_footprint;

  bool valid() const { return x_min < x_max && y_min < y_max; }
  /// True when the open box overlaps the unit square of pixel (col, row).
  bool overlaps_pixel(int col, int row) const {
    return x_min < col + 1 && x_max > col && y_min < row + 1 && y_max > row;
  }
  bool operator==(const ObstacleBox&) const = default;
};

struct LogFrame {
  std::string image_ref;
  double timestamp = 0.0;
  Pose2 pose;
  std::vector<ObstacleBox> obstacles;
  Command command = Command::kFollowLane;
  std::shared_ptr<const SemanticImage> image;
};

struct DrivingLog {
  std::vector<LogFrame> frames;
  CameraModel camera;
  double ego_width = 1.9;
  double ego_length = 4.5;

  /// Throws ValidationError unless there are >= 2 frames with increasing timestamps.
  void validate() const;
};

struct FreespaceSample {
  std::string image_ref;
  int frame = 0;
  Contour contour;
  ImageMask mask;
  Command command = Command::kFollowLane;
  std::vector<ObstacleBox> obstacles;
  std::shared_ptr<const SemanticImage> image;
};

/// Union of the ego footprints at every future frame, in the BEV ego frame of
/// frame `t`. Future frames closer than 0.05 m to the previously kept one are
/// skipped; the first future frame is always kept.
GridMask future_footprint_union(const DrivingLog& log, int t, const GridSpec& grid = default_bev_grid());

struct ClipResult {
  ImageMask projected;  // K_t
  ImageMask clipped;    // S_t
  std::vector<int> truncating_obstacles;
  bool empty_footprint = false;
};

/// Projects the footprint into the image and truncates it at the nearest
/// overlapping obstacle: every row whose top edge lies above the box bottom
/// is removed. Repeats while any remaining box overlaps the mask.
ClipResult clip_to_nearest_obstacle(const GridMask& footprint, std::span<const ObstacleBox> obstacles,
                                    const CameraModel& cam);

struct Pixel {
  int col = 0;
  int row = 0;
  bool operator==(const Pixel&) const = default;
};

struct BorderResult {
  std::vector<Pixel> border;  // clockwise on screen, first pixel is the raster-first one
  ImageMask component;        // the traced component
  int discarded_components = 0;
};

/// Outer border of the largest 8-connected component, by border following.
/// Throws ValidationError on an empty mask.
BorderResult extract_contour(const ImageMask& mask);

/// Converts a clockwise border-pixel chain into the polygon running along the
/// outer pixel edges (vertices on integer pixel corners). The polygon encloses
/// exactly the traced component, holes included.
std::vector<Vec2> border_to_polygon(std::span<const Pixel> border);

struct BuildConfig {
  double min_travel = 5.0;
  std::size_t min_area = 200;
  int n_points = kDefaultContourPoints;
  int frame_stride = 1;
  GridSpec grid = default_bev_grid();
};

struct BuildStats {
  int frames_considered = 0;
  int emitted = 0;
  std::map<std::string, int> skipped;  // reason -> count
  int discarded_components = 0;
};

struct BuildResult {
  std::vector<FreespaceSample> samples;
  BuildStats stats;
};

BuildResult build_dataset(const DrivingLog& log, const BuildConfig& config);

/// Footprint-union -> clip -> border -> contour for a single frame; empty when
/// the frame is skipped (reason written to `skip_reason`).
std::optional<FreespaceSample> build_sample(const DrivingLog& log, int t, const BuildConfig& config,
                                            std::string* skip_reason = nullptr,
                                            int* discarded_components = nullptr);

}  // namespace fsdiff
