#include "fsdiff/geom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <Eigen/Dense>

namespace fsdiff {

double norm(Vec2 v) { return std::hypot(v.x, v.y); }

double wrap_angle(double radians) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double a = std::fmod(radians, two_pi);
  if (a <= -std::numbers::pi) a += two_pi;
  if (a > std::numbers::pi) a -= two_pi;
  return a;
}

Rigid2 relative_pose(const Pose2& reference, const Pose2& other) {
  return Rigid2{wrap_angle(other.theta - reference.theta),
                Vec2{other.x - reference.x, other.y - reference.y}};
}

Pose2 anchor_pose(const Pose2& anchor, const Pose2& pose) {
  const double c = std::cos(anchor.theta);
  const double s = std::sin(anchor.theta);
  const double dx = pose.x - anchor.x;
  const double dy = pose.y - anchor.y;
  return Pose2{c * dx + s * dy, -s * dx + c * dy, wrap_angle(pose.theta - anchor.theta)};
}

std::array<Vec2, 4> footprint_corners(const Rigid2& transform, double width, double length) {
  if (!(width > 0.0) || !(length > 0.0)) {
    throw std::invalid_argument("footprint_corners: width and length must be positive");
  }
  const double hw = 0.5 * width;
  const double hl = 0.5 * length;
  const std::array<Vec2, 4> local{Vec2{-hw, -hl}, Vec2{hw, -hl}, Vec2{hw, hl}, Vec2{-hw, hl}};
  const double c = std::cos(transform.rotation);
  const double s = std::sin(transform.rotation);
  std::array<Vec2, 4> out;
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = Vec2{c * local[i].x - s * local[i].y + transform.translation.x,
                  s * local[i].x + c * local[i].y + transform.translation.y};
  }
  return out;
}

double signed_area(std::span<const Vec2> polygon) {
  double acc = 0.0;
  const std::size_t n = polygon.size();
  for (std::size_t i = 0; i < n; ++i) {
    acc += cross(polygon[i], polygon[(i + 1) % n]);
  }
  return 0.5 * acc;
}

GridSpec default_bev_grid() { return GridSpec{300, 600, 0.1, Vec2{-15.0, 0.0}}; }

BitGrid::BitGrid(int width, int height) : width_(width), height_(height) {
  if (width < 0 || height < 0) throw std::invalid_argument("BitGrid: negative dimensions");
  bits_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 0);
}

std::size_t BitGrid::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

void fill_polygon(std::span<const Vec2> polygon, const GridSpec& lattice, BitGrid& out) {
  const std::size_t n = polygon.size();
  if (n < 3) return;
  double y_min = polygon[0].y, y_max = polygon[0].y;
  for (const Vec2& p : polygon) {
    y_min = std::min(y_min, p.y);
    y_max = std::max(y_max, p.y);
  }
  const double res = lattice.resolution;
  int row_lo = static_cast<int>(std::floor((y_min - lattice.origin.y) / res - 0.5));
  int row_hi = static_cast<int>(std::ceil((y_max - lattice.origin.y) / res - 0.5));
  row_lo = std::max(row_lo, 0);
  row_hi = std::min(row_hi, lattice.height - 1);

  std::vector<double> xs;
  xs.reserve(8);
  for (int row = row_lo; row <= row_hi; ++row) {
    const double y = lattice.cell_center(0, row).y;
    xs.clear();
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2& a = polygon[i];
      const Vec2& b = polygon[(i + 1) % n];
      if ((a.y > y) != (b.y > y)) {
        xs.push_back(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
      }
    }
    if (xs.size() < 2) continue;
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      const double left = xs[k];
      const double right = xs[k + 1];
      if (!(right > left)) continue;
      int col = static_cast<int>(std::floor((left - lattice.origin.x) / res - 0.5));
      col = std::max(col, 0);
      while (col < lattice.width && lattice.cell_center(col, row).x < left) ++col;
      for (; col < lattice.width; ++col) {
        if (!(lattice.cell_center(col, row).x < right)) break;
        out.set(col, row);
      }
    }
  }
}

RasterResult rasterize_polygon(std::span<const Vec2> corners, const GridSpec& grid) {
  if (corners.size() < 3) {
    throw std::invalid_argument("rasterize_polygon: need at least 3 corners");
  }
  RasterResult result{GridMask(grid), false};
  if (std::abs(signed_area(corners)) < 1e-12) {
    result.degenerate = true;
    return result;
  }
  fill_polygon(corners, grid, result.mask.bits);
  return result;
}

GridMask union_masks(std::span<const GridMask> masks) {
  if (masks.empty()) throw std::invalid_argument("union_masks: no masks");
  GridMask out = masks.front();
  auto dst = out.bits.bits();
  for (std::size_t m = 1; m < masks.size(); ++m) {
    if (!(masks[m].spec == out.spec)) {
      throw std::invalid_argument("union_masks: mismatched grid specs");
    }
    auto src = masks[m].bits.bits();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] |= src[i];
  }
  return out;
}

void CameraModel::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("camera: focal lengths must be positive");
  if (!(height > 0.0)) throw std::invalid_argument("camera: height must be positive");
  if (image_width <= 0 || image_height <= 0) throw std::invalid_argument("camera: empty image");
  const double err = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (!(err < 1e-9)) throw std::invalid_argument("camera: rotation is not orthonormal");
}

CameraModel CameraModel::pitched(double fx, double fy, double cx, double cy, double pitch_down,
                                 double height, int image_width, int image_height) {
  CameraModel cam;
  cam.fx = fx;
  cam.fy = fy;
  cam.cx = cx;
  cam.cy = cy;
  const double c = std::cos(pitch_down);
  const double s = std::sin(pitch_down);
  cam.rotation << 1.0, 0.0, 0.0,
                  0.0, c, -s,
                  0.0, s, c;
  cam.height = height;
  cam.image_width = image_width;
  cam.image_height = image_height;
  return cam;
}

CameraModel CameraModel::synth_default() {
  return pitched(110.0, 110.0, 128.0, 44.0, 8.0 * std::numbers::pi / 180.0, 1.6, 256, 128);
}

namespace {

Eigen::Vector3d to_camera(const CameraModel& cam, Vec2 ground) {
  return cam.rotation * Eigen::Vector3d(ground.x, cam.height, ground.y);
}

Vec2 perspective(const CameraModel& cam, const Eigen::Vector3d& p) {
  return Vec2{cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy};
}

}  // namespace

std::optional<Vec2> project_ground_point_unbounded(const CameraModel& cam, Vec2 ground) {
  const Eigen::Vector3d p = to_camera(cam, ground);
  if (p.z() <= kDepthEpsilon) return std::nullopt;
  return perspective(cam, p);
}

std::optional<Vec2> project_ground_point(const CameraModel& cam, Vec2 ground) {
  auto px = project_ground_point_unbounded(cam, ground);
  if (!px) return std::nullopt;
  if (px->x < 0.0 || px->y < 0.0 || px->x >= cam.image_width || px->y >= cam.image_height) {
    return std::nullopt;
  }
  return px;
}

std::optional<Vec2> ground_from_pixel(const CameraModel& cam, Vec2 pixel) {
  const Eigen::Vector3d ray((pixel.x - cam.cx) / cam.fx, (pixel.y - cam.cy) / cam.fy, 1.0);
  const Eigen::Vector3d level = cam.rotation.transpose() * ray;
  if (level.y() <= 1e-12) return std::nullopt;
  const double s = cam.height / level.y();
  return Vec2{s * level.x(), s * level.z()};
}

ImageMask project_mask(const CameraModel& cam, const GridMask& bev) {
  ImageMask out(cam.image_width, cam.image_height);
  const GridSpec image_lattice{cam.image_width, cam.image_height, 1.0, Vec2{0.0, 0.0}};
  const GridSpec& g = bev.spec;

  std::array<Eigen::Vector3d, 4> quad;
  std::vector<Eigen::Vector3d> clipped;
  std::vector<Vec2> pixels;
  for (int row = 0; row < g.height; ++row) {
    for (int col = 0; col < g.width; ++col) {
      if (!bev.bits.at(col, row)) continue;
      const double u0 = g.origin.x + col * g.resolution;
      const double v0 = g.origin.y + row * g.resolution;
      const double u1 = u0 + g.resolution;
      const double v1 = v0 + g.resolution;
      quad = {to_camera(cam, {u0, v0}), to_camera(cam, {u1, v0}), to_camera(cam, {u1, v1}),
              to_camera(cam, {u0, v1})};

      // Sutherland-Hodgman against z >= epsilon.
      clipped.clear();
      for (std::size_t i = 0; i < 4; ++i) {
        const Eigen::Vector3d& a = quad[i];
        const Eigen::Vector3d& b = quad[(i + 1) % 4];
        const bool a_in = a.z() >= kDepthEpsilon;
        const bool b_in = b.z() >= kDepthEpsilon;
        if (a_in) clipped.push_back(a);
        if (a_in != b_in) {
          const double s = (kDepthEpsilon - a.z()) / (b.z() - a.z());
          Eigen::Vector3d p = a + s * (b - a);
          p.z() = kDepthEpsilon;
          clipped.push_back(p);
        }
      }
      if (clipped.size() < 3) continue;
      pixels.clear();
      for (const auto& p : clipped) pixels.push_back(perspective(cam, p));
      fill_polygon(pixels, image_lattice, out);
    }
  }
  return out;
}

}  // namespace fsdiff
