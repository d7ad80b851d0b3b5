#include "fsdiff/freespace.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fsdiff {

void DrivingLog::validate() const {
  if (frames.size() < 2) throw ValidationError("driving log needs at least 2 frames");
  for (std::size_t i = 1; i < frames.size(); ++i) {
    if (!(frames[i].timestamp > frames[i - 1].timestamp)) {
      throw ValidationError("driving log timestamps must increase");
    }
  }
  if (!(ego_width > 0.0) || !(ego_length > 0.0)) throw ValidationError("ego dimensions must be positive");
  camera.validate();
}

GridMask future_footprint_union(const DrivingLog& log, int t, const GridSpec& grid) {
  const int n = static_cast<int>(log.frames.size());
  if (t < 0 || t >= n - 1) throw ValidationError("future_footprint_union: frame index out of range");

  GridMask out(grid);
  const Pose2 anchor = log.frames[t].pose;
  const Pose2 origin{};
  const double u_lo = grid.origin.x, u_hi = grid.origin.x + grid.width * grid.resolution;
  const double v_lo = grid.origin.y, v_hi = grid.origin.y + grid.height * grid.resolution;

  Pose2 last_kept = anchor;
  for (int k = t + 1; k < n; ++k) {
    const Pose2& pose = log.frames[k].pose;
    if (k > t + 1 && std::hypot(pose.x - last_kept.x, pose.y - last_kept.y) < 0.05) continue;
    last_kept = pose;

    // Pose in the ego frame at t (x forward, y left), then the verbatim
    // relative transform, then BEV axes (u right, v forward).
    const Rigid2 rel = relative_pose(origin, anchor_pose(anchor, pose));
    const Rigid2 bev{rel.rotation, Vec2{-rel.translation.y, rel.translation.x}};
    const auto corners = footprint_corners(bev, log.ego_width, log.ego_length);

    double bu0 = corners[0].x, bu1 = corners[0].x, bv0 = corners[0].y, bv1 = corners[0].y;
    for (const Vec2& c : corners) {
      bu0 = std::min(bu0, c.x);
      bu1 = std::max(bu1, c.x);
      bv0 = std::min(bv0, c.y);
      bv1 = std::max(bv1, c.y);
    }
    if (bu1 < u_lo || bu0 > u_hi || bv1 < v_lo || bv0 > v_hi) continue;
    fill_polygon(corners, grid, out.bits);
  }
  return out;
}

namespace {

double distance_to_polygon(Vec2 p, std::span<const Vec2> poly) {
  bool inside = false;
  double best = std::numeric_limits<double>::infinity();
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 a = poly[i];
    const Vec2 b = poly[(i + 1) % n];
    if ((a.y > p.y) != (b.y > p.y) && p.x < a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y)) {
      inside = !inside;
    }
    const Vec2 ab = b - a;
    const double len2 = dot(ab, ab);
    const double s = len2 > 0.0 ? std::clamp(dot(p - a, ab) / len2, 0.0, 1.0) : 0.0;
    best = std::min(best, norm(p - (a + ab * s)));
  }
  return inside ? 0.0 : best;
}

bool box_overlaps_mask(const ObstacleBox& box, const ImageMask& mask) {
  const int c0 = std::max(0, static_cast<int>(std::floor(box.x_min)));
  const int c1 = std::min(mask.width() - 1, static_cast<int>(std::ceil(box.x_max)) - 1);
  const int r0 = std::max(0, static_cast<int>(std::floor(box.y_min)));
  const int r1 = std::min(mask.height() - 1, static_cast<int>(std::ceil(box.y_max)) - 1);
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      if (mask.at(c, r) && box.overlaps_pixel(c, r)) return true;
    }
  }
  return false;
}

}  // namespace

ClipResult clip_to_nearest_obstacle(const GridMask& footprint, std::span<const ObstacleBox> obstacles,
                                    const CameraModel& cam) {
  ClipResult result;
  result.projected = project_mask(cam, footprint);
  result.clipped = result.projected;
  if (footprint.bits.none()) {
    result.empty_footprint = true;
    return result;
  }

  ImageMask& s = result.clipped;
  for (;;) {
    std::vector<int> candidates;
    for (std::size_t i = 0; i < obstacles.size(); ++i) {
      if (obstacles[i].valid() && box_overlaps_mask(obstacles[i], s)) {
        candidates.push_back(static_cast<int>(i));
      }
    }
    if (candidates.empty()) break;

    const bool all_bev = std::all_of(candidates.begin(), candidates.end(),
                                     [&](int i) { return obstacles[i].bev_footprint.has_value(); });
    int nearest = candidates.front();
    double best = std::numeric_limits<double>::infinity();
    for (int i : candidates) {
      const double key = all_bev ? distance_to_polygon(Vec2{0.0, 0.0}, *obstacles[i].bev_footprint)
                                 : -obstacles[i].y_max;
      if (key < best) {
        best = key;
        nearest = i;
      }
    }
    result.truncating_obstacles.push_back(nearest);

    // Drop every row whose top edge is above the box bottom.
    const int cut = std::min(s.height(), static_cast<int>(std::ceil(obstacles[nearest].y_max)));
    for (int r = 0; r < cut; ++r) {
      for (int c = 0; c < s.width(); ++c) s.set(c, r, false);
    }
  }
  return result;
}

namespace {

// Clockwise on screen, starting at west.
constexpr std::array<Pixel, 8> kNeighbours{Pixel{-1, 0}, Pixel{-1, -1}, Pixel{0, -1}, Pixel{1, -1},
                                           Pixel{1, 0},  Pixel{1, 1},   Pixel{0, 1},  Pixel{-1, 1}};

int direction_of(Pixel from, Pixel to) {
  const Pixel d{to.col - from.col, to.row - from.row};
  for (int i = 0; i < 8; ++i) {
    if (kNeighbours[i] == d) return i;
  }
  return -1;
}

}  // namespace

BorderResult extract_contour(const ImageMask& mask) {
  const int w = mask.width();
  const int h = mask.height();
  if (mask.none()) throw ValidationError("extract_contour: empty mask");

  // 8-connected labelling in raster order.
  std::vector<int> label(static_cast<std::size_t>(w) * h, -1);
  std::vector<std::size_t> sizes;
  std::vector<Pixel> first_pixel;
  std::vector<Pixel> stack;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!mask.at(c, r) || label[static_cast<std::size_t>(r) * w + c] >= 0) continue;
      const int id = static_cast<int>(sizes.size());
      sizes.push_back(0);
      first_pixel.push_back({c, r});
      stack.assign(1, Pixel{c, r});
      label[static_cast<std::size_t>(r) * w + c] = id;
      while (!stack.empty()) {
        const Pixel p = stack.back();
        stack.pop_back();
        ++sizes[id];
        for (const Pixel& d : kNeighbours) {
          const int nc = p.col + d.col, nr = p.row + d.row;
          if (!mask.in_bounds(nc, nr) || !mask.at(nc, nr)) continue;
          int& l = label[static_cast<std::size_t>(nr) * w + nc];
          if (l < 0) {
            l = id;
            stack.push_back({nc, nr});
          }
        }
      }
    }
  }
  const int largest = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());

  BorderResult result;
  result.discarded_components = static_cast<int>(sizes.size()) - 1;
  result.component = ImageMask(w, h);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (label[static_cast<std::size_t>(r) * w + c] == largest) result.component.set(c, r);
    }
  }

  const ImageMask& comp = result.component;
  auto object = [&](Pixel p) { return comp.in_bounds(p.col, p.row) && comp.at(p.col, p.row); };
  auto step = [](Pixel p, int dir) { return Pixel{p.col + kNeighbours[dir].col, p.row + kNeighbours[dir].row}; };

  // Border following from the raster-first pixel, whose west neighbour is
  // background. The predecessor is found turning counter-clockwise from west,
  // successors turning clockwise from the previous pixel.
  const Pixel start = first_pixel[largest];
  int found = -1;
  for (int k = 0; k < 8; ++k) {
    const int dir = (8 - k) % 8;
    if (object(step(start, dir))) {
      found = dir;
      break;
    }
  }
  if (found < 0) {
    result.border.push_back(start);
    return result;
  }
  const Pixel last = step(start, found);
  Pixel prev = last;
  Pixel cur = start;
  for (;;) {
    const int from = direction_of(cur, prev);
    Pixel next = cur;
    for (int k = 1; k <= 8; ++k) {
      const int dir = (from + k) % 8;
      const Pixel cand = step(cur, dir);
      if (object(cand)) {
        next = cand;
        break;
      }
    }
    result.border.push_back(cur);
    if (next == start && cur == last) break;
    prev = cur;
    cur = next;
  }
  return result;
}

namespace {

// Pixel corners, clockwise on screen: TL, TR, BR, BL.
constexpr std::array<Vec2, 4> kCorners{Vec2{0, 0}, Vec2{1, 0}, Vec2{1, 1}, Vec2{0, 1}};

// Corner of the current pixel through which the boundary leaves when moving
// in direction `dir` (indexing kNeighbours), and the corner of the next pixel
// through which it enters.
constexpr std::array<int, 8> kExitCorner{3, 0, 0, 1, 1, 2, 2, 3};
constexpr std::array<int, 8> kEntryCorner{2, 2, 3, 3, 0, 0, 1, 1};

}  // namespace

std::vector<Vec2> border_to_polygon(std::span<const Pixel> border) {
  std::vector<Vec2> poly;
  if (border.empty()) return poly;
  auto corner = [](Pixel p, int k) { return Vec2{p.col + kCorners[k].x, p.row + kCorners[k].y}; };
  const std::size_t n = border.size();
  if (n == 1) {
    for (int k = 0; k < 4; ++k) poly.push_back(corner(border[0], k));
    return poly;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const Pixel p = border[i];
    const Pixel before = border[(i + n - 1) % n];
    const Pixel after = border[(i + 1) % n];
    const int dir_in = direction_of(before, p);
    const int dir_out = direction_of(p, after);
    const int entry = kEntryCorner[dir_in];
    const int exit = kExitCorner[dir_out];
    // A diagonal dead end enters and leaves through the same corner but must
    // go all the way around the pixel.
    const bool reversal = dir_out == (dir_in + 4) % 8;
    int k = entry;
    for (int visited = 0;; ++visited) {
      const Vec2 v = corner(p, k);
      if (poly.empty() || !(poly.back() == v)) poly.push_back(v);
      if (k == exit && !(reversal && visited == 0)) break;
      k = (k + 1) % 4;
    }
  }
  while (poly.size() > 1 && poly.back() == poly.front()) poly.pop_back();

  // Drop vertices in the middle of straight runs.
  std::vector<Vec2> simplified;
  const std::size_t m = poly.size();
  for (std::size_t i = 0; i < m; ++i) {
    const Vec2 a = poly[(i + m - 1) % m];
    const Vec2 b = poly[i];
    const Vec2 c = poly[(i + 1) % m];
    if (cross(b - a, c - b) == 0.0 && dot(b - a, c - b) > 0.0) continue;
    simplified.push_back(b);
  }
  return simplified.size() >= 3 ? simplified : poly;
}

std::optional<FreespaceSample> build_sample(const DrivingLog& log, int t, const BuildConfig& config,
                                            std::string* skip_reason, int* discarded_components) {
  auto skip = [&](const char* reason) -> std::optional<FreespaceSample> {
    if (skip_reason) *skip_reason = reason;
    return std::nullopt;
  };
  const int n = static_cast<int>(log.frames.size());
  if (t < 0 || t >= n - 1) return skip("no_future");

  double travel = 0.0;
  for (int k = t + 1; k < n; ++k) {
    const Pose2& a = log.frames[k - 1].pose;
    const Pose2& b = log.frames[k].pose;
    travel += std::hypot(b.x - a.x, b.y - a.y);
  }
  if (travel < config.min_travel) return skip("short_travel");

  const LogFrame& frame = log.frames[t];
  const GridMask footprint = future_footprint_union(log, t, config.grid);
  ClipResult clip = clip_to_nearest_obstacle(footprint, frame.obstacles, log.camera);
  if (clip.empty_footprint || clip.clipped.none()) return skip("empty_mask");
  if (clip.clipped.count() < config.min_area) return skip("small_area");

  BorderResult border = extract_contour(clip.clipped);
  if (discarded_components) *discarded_components += border.discarded_components;
  if (border.component.count() < config.min_area) return skip("small_area");
  const std::vector<Vec2> polygon = border_to_polygon(border.border);

  FreespaceSample sample;
  sample.image_ref = frame.image_ref;
  sample.frame = t;
  sample.contour = resample_contour(polygon, config.n_points, log.camera.image_width,
                                    log.camera.image_height);
  sample.mask = std::move(border.component);
  sample.command = frame.command;
  sample.obstacles = frame.obstacles;
  sample.image = frame.image;
  return sample;
}

BuildResult build_dataset(const DrivingLog& log, const BuildConfig& config) {
  log.validate();
  if (config.frame_stride < 1) throw ValidationError("build_dataset: frame_stride must be >= 1");
  BuildResult result;
  const int n = static_cast<int>(log.frames.size());
  for (int t = 0; t < n; t += config.frame_stride) {
    ++result.stats.frames_considered;
    std::string reason;
    auto sample = build_sample(log, t, config, &reason, &result.stats.discarded_components);
    if (sample) {
      result.samples.push_back(std::move(*sample));
      ++result.stats.emitted;
    } else {
      ++result.stats.skipped[reason];
    }
  }
  return result;
}

}  // namespace fsdiff
