#include "fsdiff/contour.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fsdiff/common.hpp"

namespace fsdiff {

Vec2 pixel_to_normalized(Vec2 pixel, int width, int height) {
  return {2.0 * pixel.x / width - 1.0, 2.0 * pixel.y / height - 1.0};
}

Vec2 normalized_to_pixel(Vec2 normalized, int width, int height) {
  return {(normalized.x + 1.0) * 0.5 * width, (normalized.y + 1.0) * 0.5 * height};
}

namespace {

std::size_t canonical_start(std::span<const Vec2> pts) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    if (pts[i].y > pts[best].y || (pts[i].y == pts[best].y && pts[i].x < pts[best].x)) best = i;
  }
  return best;
}

}  // namespace

std::vector<Vec2> canonical_order(std::vector<Vec2> points) {
  if (points.size() < 2) return points;
  // Positive shoelace area in a y-down frame is clockwise on screen.
  if (signed_area(points) < 0.0) std::reverse(points.begin(), points.end());
  const std::size_t start = canonical_start(points);
  std::rotate(points.begin(), points.begin() + static_cast<std::ptrdiff_t>(start), points.end());
  return points;
}

bool is_canonical(std::span<const Vec2> points) {
  if (points.size() < 3) return true;
  return canonical_start(points) == 0 && signed_area(points) >= 0.0;
}

Contour resample_contour(std::span<const Vec2> raw_pixels, int n, int image_width, int image_height) {
  if (raw_pixels.size() < 3) throw ValidationError("resample_contour: need at least 3 raw points");
  if (n < 3) throw ValidationError("resample_contour: need at least 3 output points");

  std::vector<Vec2> poly;
  poly.reserve(raw_pixels.size());
  for (const Vec2& p : raw_pixels) {
    if (poly.empty() || !(poly.back() == p)) poly.push_back(p);
  }
  while (poly.size() > 1 && poly.back() == poly.front()) poly.pop_back();
  if (poly.size() < 3) throw ValidationError("resample_contour: fewer than 3 distinct points");
  poly = canonical_order(std::move(poly));

  const std::size_t m = poly.size();
  std::vector<double> cumulative(m + 1, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    cumulative[i + 1] = cumulative[i] + norm(poly[(i + 1) % m] - poly[i]);
  }
  const double perimeter = cumulative[m];

  Contour out;
  out.points.reserve(static_cast<std::size_t>(n));
  std::size_t seg = 0;
  for (int k = 0; k < n; ++k) {
    const double s = perimeter * k / n;
    while (seg + 1 < m && cumulative[seg + 1] <= s) ++seg;
    const double len = cumulative[seg + 1] - cumulative[seg];
    const double t = len > 0.0 ? (s - cumulative[seg]) / len : 0.0;
    const Vec2 a = poly[seg];
    const Vec2 b = poly[(seg + 1) % m];
    const Vec2 p = t == 0.0 ? a : a + (b - a) * t;
    out.points.push_back(pixel_to_normalized(p, image_width, image_height));
  }
  return out;
}

std::vector<int> closed_tour(std::span<const Vec2> points) {
  const int n = static_cast<int>(points.size());
  std::vector<int> tour;
  if (n == 0) return tour;
  auto dist = [&](int a, int b) { return norm(points[a] - points[b]); };

  std::vector<char> used(n, 0);
  tour.push_back(0);
  used[0] = 1;
  for (int step = 1; step < n; ++step) {
    const int last = tour.back();
    int best = -1;
    double best_d = 0.0;
    for (int j = 0; j < n; ++j) {
      if (used[j]) continue;
      const double d = dist(last, j);
      if (best < 0 || d < best_d) {
        best = j;
        best_d = d;
      }
    }
    used[best] = 1;
    tour.push_back(best);
  }
  if (n < 4) return tour;

  // 2-opt: reverse tour[i+1..j] when it shortens the tour.
  for (int pass = 0; pass < 200; ++pass) {
    bool improved = false;
    for (int i = 0; i < n - 1; ++i) {
      for (int j = i + 2; j < n; ++j) {
        const int a = tour[i], b = tour[i + 1];
        const int c = tour[j], d = tour[(j + 1) % n];
        if (a == d) continue;
        const double delta = dist(a, c) + dist(b, d) - dist(a, b) - dist(c, d);
        if (delta < -1e-12) {
          std::reverse(tour.begin() + i + 1, tour.begin() + j + 1);
          improved = true;
        }
      }
    }
    if (!improved) break;
  }
  return tour;
}

Contour contour_from_point_set(std::span<const Vec2> normalized_points) {
  const std::vector<int> tour = closed_tour(normalized_points);
  std::vector<Vec2> ordered;
  ordered.reserve(tour.size());
  for (int idx : tour) ordered.push_back(normalized_points[idx]);
  return Contour{canonical_order(std::move(ordered)), true};
}

}  // namespace fsdiff
