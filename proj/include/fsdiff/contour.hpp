#pragma once

#include <span>
#include <vector>

#include "fsdiff/geom.hpp"

namespace fsdiff {

inline constexpr int kDefaultContourPoints = 50;

/// Closed, ordered contour in normalized image coordinates ([-1, 1]^2, x to
/// the right, y down). Canonical form: point 0 is the point of maximum y (ties
/// broken by minimum x) and the traversal is clockwise on screen.
struct Contour {
  std::vector<Vec2> points;
  bool clockwise = true;

  std::size_t size() const { return points.size(); }
  bool operator==(const Contour&) const = default;
};

Vec2 pixel_to_normalized(Vec2 pixel, int width, int height);
Vec2 normalized_to_pixel(Vec2 normalized, int width, int height);

/// Reorders a closed point sequence into canonical start and orientation
/// without moving any point.
std::vector<Vec2> canonical_order(std::vector<Vec2> points);
bool is_canonical(std::span<const Vec2> points);

/// Arc-length-uniform resampling of a closed polyline given in pixel
/// coordinates, returned canonical and normalized. Throws ValidationError for
/// fewer than 3 points.
Contour resample_contour(std::span<const Vec2> raw_pixels, int n, int image_width, int image_height);

/// Orders an unordered point set into a short closed tour (nearest neighbour
/// seeded, then 2-opt until no move shortens it). Returns the permutation.
std::vector<int> closed_tour(std::span<const Vec2> points);

/// Builds a canonical Contour from points whose index order carries no
/// meaning (e.g. the output of a permutation-equivariant sampler).
Contour contour_from_point_set(std::span<const Vec2> normalized_points);

}  // namespace fsdiff
