#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Dense>

#include "doctest.h"
#include "fsdiff/geom.hpp"
#include "oracles.hpp"

using namespace fsdiff;
using namespace fsdiff::oracle;

namespace {

constexpr double kPi = std::numbers::pi;

// Matrix composition T_ref^-1 * T_other, rotation component.
double composed_rotation(const Pose2& ref, const Pose2& other) {
  Eigen::Matrix3d a, b;
  a << std::cos(ref.theta), -std::sin(ref.theta), ref.x, std::sin(ref.theta), std::cos(ref.theta), ref.y, 0, 0, 1;
  b << std::cos(other.theta), -std::sin(other.theta), other.x, std::sin(other.theta), std::cos(other.theta), other.y, 0,
      0, 1;
  const Eigen::Matrix3d rel = a.inverse() * b;
  return std::atan2(rel(1, 0), rel(0, 0));
}

CameraModel example_camera() {
  CameraModel cam;
  cam.fx = cam.fy = 100.0;
  cam.cx = 128.0;
  cam.cy = 64.0;
  cam.height = 1.5;
  cam.image_width = 256;
  cam.image_height = 128;
  return cam;
}

}  // namespace

TEST_CASE("relative_pose examples") {
  auto r = relative_pose({0, 0, 0}, {0, 0, 0});
  CHECK(r.rotation == 0.0);
  CHECK(r.translation == Vec2{0, 0});

  r = relative_pose({1, 2, kPi / 2}, {1, 2, -kPi / 2});
  CHECK(r.rotation == doctest::Approx(kPi));
  CHECK(r.translation == Vec2{0, 0});

  r = relative_pose({0, 0, 0}, {3, 4, 0.3});
  CHECK(r.rotation == doctest::Approx(0.3));
  CHECK(r.rotation == doctest::Approx(composed_rotation({0, 0, 0}, {3, 4, 0.3})));
  CHECK(r.translation == Vec2{3, 4});
}

TEST_CASE("relative_pose rotation matches matrix composition") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-10, 10), th(-kPi, kPi);
  for (int i = 0; i < 200; ++i) {
    const Pose2 a{u(rng), u(rng), th(rng)}, b{u(rng), u(rng), th(rng)};
    const Rigid2 r = relative_pose(a, b);
    CHECK(std::abs(wrap_angle(r.rotation - composed_rotation(a, b))) < 1e-9);
    CHECK(r.rotation > -kPi);
    CHECK(r.rotation <= kPi);
  }
}

TEST_CASE("wrap_angle range") {
  CHECK(wrap_angle(kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(-kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(3 * kPi / 2) == doctest::Approx(-kPi / 2));
}

TEST_CASE("footprint_corners examples") {
  auto c = footprint_corners(Rigid2{0.0, {0, 0}}, 2, 4);
  CHECK(c[0] == Vec2{-1, -2});
  CHECK(c[1] == Vec2{1, -2});
  CHECK(c[2] == Vec2{1, 2});
  CHECK(c[3] == Vec2{-1, 2});

  c = footprint_corners(Rigid2{kPi / 2, {0, 0}}, 2, 4);
  const Vec2 expect[4] = {{2, -1}, {2, 1}, {-2, 1}, {-2, -1}};
  for (int i = 0; i < 4; ++i) {
    Eigen::Matrix2d rot;
    rot << std::cos(kPi / 2), -std::sin(kPi / 2), std::sin(kPi / 2), std::cos(kPi / 2);
    const Eigen::Vector2d p0(i == 0 || i == 3 ? -1 : 1, i < 2 ? -2 : 2);
    const Eigen::Vector2d oracle = rot * p0;
    CHECK(c[i].x == doctest::Approx(expect[i].x));
    CHECK(c[i].y == doctest::Approx(expect[i].y));
    CHECK(c[i].x == doctest::Approx(oracle.x()));
    CHECK(c[i].y == doctest::Approx(oracle.y()));
  }

  c = footprint_corners(Rigid2{0.0, {5, 0}}, 2, 4);
  CHECK(c[0] == Vec2{4, -2});
  CHECK(c[2] == Vec2{6, 2});

  CHECK_THROWS_AS(footprint_corners(Rigid2{}, 0.0, 4), std::invalid_argument);
  CHECK_THROWS_AS(footprint_corners(Rigid2{}, 2.0, -1), std::invalid_argument);
}

TEST_CASE("rasterize_polygon axis-aligned rectangle") {
  const GridSpec g = default_bev_grid();
  const std::vector<Vec2> rect{{-1.03, 10.02}, {0.97, 10.02}, {0.97, 14.02}, {-1.03, 14.02}};
  const RasterResult r = rasterize_polygon(rect, g);
  CHECK_FALSE(r.degenerate);
  CHECK(r.mask.bits.count() == 800);
  for (int row = 0; row < g.height; ++row) {
    for (int col = 0; col < g.width; ++col) {
      const Vec2 c = g.cell_center(col, row);
      const bool expect = c.x > -1.03 && c.x < 0.97 && c.y > 10.02 && c.y < 14.02;
      REQUIRE(r.mask.bits.at(col, row) == expect);
    }
  }
}

TEST_CASE("rasterize_polygon degenerate and disjoint") {
  const GridSpec g = default_bev_grid();
  const std::vector<Vec2> line{{0, 1}, {1, 2}, {2, 3}};
  const RasterResult r = rasterize_polygon(line, g);
  CHECK(r.degenerate);
  CHECK(r.mask.bits.none());

  const std::vector<Vec2> far{{100, 100}, {102, 100}, {102, 104}, {100, 104}};
  CHECK(rasterize_polygon(far, g).mask.bits.none());
  const std::vector<Vec2> two{{0, 0}, {1, 1}};
  CHECK_THROWS_AS(rasterize_polygon(two, g), std::invalid_argument);
}

TEST_CASE("rasterize_polygon matches winding-number oracle on random quads") {
  const GridSpec g{120, 160, 0.1, {-6, 0}};
  std::mt19937_64 rng(7);
  for (int k = 0; k < 100; ++k) {
    const auto quad = random_star_quad(rng, g);
    const RasterResult r = rasterize_polygon(quad, g);
    int mismatches = 0;
    for (int row = 0; row < g.height; ++row) {
      for (int col = 0; col < g.width; ++col) {
        mismatches += r.mask.bits.at(col, row) != inside_winding(quad, g.cell_center(col, row));
      }
    }
    REQUIRE(mismatches == 0);
  }
}

TEST_CASE("adjacent polygons never double-cover a cell") {
  const GridSpec g{40, 40, 0.25, {0, 0}};
  const std::vector<Vec2> left{{1, 1}, {5, 1}, {5, 9}, {1, 9}};
  const std::vector<Vec2> right{{5, 1}, {9, 1}, {9, 9}, {5, 9}};
  const auto a = rasterize_polygon(left, g).mask;
  const auto b = rasterize_polygon(right, g).mask;
  for (int row = 0; row < g.height; ++row) {
    for (int col = 0; col < g.width; ++col) CHECK_FALSE((a.bits.at(col, row) && b.bits.at(col, row)));
  }
  const std::vector<Vec2> whole{{1, 1}, {9, 1}, {9, 9}, {1, 9}};
  CHECK(a.bits.count() + b.bits.count() == rasterize_polygon(whole, g).mask.bits.count());
}

TEST_CASE("union_masks identities and inclusion-exclusion") {
  const GridSpec g = default_bev_grid();
  const std::vector<Vec2> r1{{-1, 5}, {1, 5}, {1, 15}, {-1, 15}};
  const std::vector<Vec2> r2{{0, 10}, {3, 10}, {3, 20}, {0, 20}};
  const GridMask a = rasterize_polygon(r1, g).mask;
  const GridMask b = rasterize_polygon(r2, g).mask;
  const GridMask empty(g);

  const std::vector<GridMask> single{a};
  CHECK(union_masks(single) == a);
  const std::vector<GridMask> with_empty{a, empty};
  CHECK(union_masks(with_empty) == a);

  std::size_t inter = 0;
  for (int row = 0; row < g.height; ++row) {
    for (int col = 0; col < g.width; ++col) inter += a.bits.at(col, row) && b.bits.at(col, row);
  }
  const std::vector<GridMask> both{a, b};
  CHECK(union_masks(both).bits.count() == a.bits.count() + b.bits.count() - inter);

  CHECK_THROWS_AS(union_masks(std::vector<GridMask>{}), std::invalid_argument);
  const std::vector<GridMask> mismatch{a, GridMask(GridSpec{10, 10, 0.1, {0, 0}})};
  CHECK_THROWS_AS(union_masks(mismatch), std::invalid_argument);
}

TEST_CASE("union_masks is associative, commutative and idempotent on random masks") {
  const GridSpec g{37, 23, 1.0, {0, 0}};
  std::mt19937_64 rng(3);
  std::bernoulli_distribution coin(0.3);
  auto random_mask = [&] {
    GridMask m(g);
    for (int r = 0; r < g.height; ++r)
      for (int c = 0; c < g.width; ++c) m.bits.set(c, r, coin(rng));
    return m;
  };
  for (int i = 0; i < 20; ++i) {
    const GridMask a = random_mask(), b = random_mask(), c = random_mask();
    const GridMask ab = union_masks(std::vector<GridMask>{a, b});
    const GridMask bc = union_masks(std::vector<GridMask>{b, c});
    CHECK(union_masks(std::vector<GridMask>{ab, c}) == union_masks(std::vector<GridMask>{a, bc}));
    CHECK(ab == union_masks(std::vector<GridMask>{b, a}));
    CHECK(union_masks(std::vector<GridMask>{a, a}) == a);
    for (int r = 0; r < g.height; ++r)
      for (int col = 0; col < g.width; ++col)
        REQUIRE(ab.bits.at(col, r) == (a.bits.at(col, r) || b.bits.at(col, r)));
  }
}

TEST_CASE("project_ground_point examples") {
  const CameraModel cam = example_camera();
  const auto p = project_ground_point(cam, {0, 10});
  REQUIRE(p.has_value());
  CHECK(p->x == doctest::Approx(128.0));
  CHECK(p->y == doctest::Approx(79.0));
  CHECK_FALSE(project_ground_point(cam, {0, -5}).has_value());
}

TEST_CASE("project_ground_point perspective convergence") {
  const CameraModel cam = example_camera();
  for (double u : {-3.0, -0.5, 0.7, 2.5}) {
    double prev = std::numeric_limits<double>::infinity();
    for (double v = 2.0; v < 80.0; v += 0.5) {
      const auto p = project_ground_point_unbounded(cam, {u, v});
      REQUIRE(p.has_value());
      const double d = std::abs(p->x - cam.cx);
      CHECK(d < prev);
      prev = d;
    }
  }
}

TEST_CASE("ground_from_pixel inverts the projection") {
  const CameraModel cam = CameraModel::synth_default();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-8, 8), v(3, 50);
  for (int i = 0; i < 200; ++i) {
    const Vec2 g{u(rng), v(rng)};
    const auto p = project_ground_point_unbounded(cam, g);
    REQUIRE(p.has_value());
    const auto back = ground_from_pixel(cam, *p);
    REQUIRE(back.has_value());
    CHECK(back->x == doctest::Approx(g.x).epsilon(1e-9));
    CHECK(back->y == doctest::Approx(g.y).epsilon(1e-9));
  }
  CHECK_FALSE(ground_from_pixel(cam, {128, 0}).has_value());
}

TEST_CASE("camera validation") {
  CameraModel cam = example_camera();
  CHECK_NOTHROW(cam.validate());
  cam.rotation(0, 1) = 0.1;
  CHECK_THROWS_AS(cam.validate(), std::invalid_argument);
  cam = example_camera();
  cam.height = 0;
  CHECK_THROWS_AS(cam.validate(), std::invalid_argument);
}

TEST_CASE("project_mask examples") {
  const CameraModel cam = example_camera();
  const GridSpec g = default_bev_grid();
  CHECK(project_mask(cam, GridMask(g)).none());

  GridMask single(g);
  single.bits.set(150, 100);  // cell spanning u in [0, 0.1], v in [10, 10.1]
  const ImageMask m = project_mask(cam, single);
  CHECK(m == project_oracle(cam, single));
  const auto c0 = project_ground_point(cam, {0.0, 10.0});
  const auto c1 = project_ground_point(cam, {0.1, 10.1});
  REQUIRE(c0);
  REQUIRE(c1);
  for (int r = 0; r < m.height(); ++r)
    for (int c = 0; c < m.width(); ++c)
      if (m.at(c, r)) {
        CHECK(c + 0.5 >= c0->x - 1e-9);
        CHECK(c + 0.5 <= c1->x + 1.0);
      }

  const std::vector<Vec2> strip{{-1.5, 5}, {1.5, 5}, {1.5, 40}, {-1.5, 40}};
  const ImageMask k = project_mask(cam, rasterize_polygon(strip, g).mask);
  int prev_width = std::numeric_limits<int>::max();
  int rows = 0;
  for (int r = k.height() - 1; r >= 0; --r) {
    int w = 0;
    for (int c = 0; c < k.width(); ++c) w += k.at(c, r);
    if (w == 0) continue;
    ++rows;
    CHECK(w <= prev_width);
    prev_width = w;
  }
  CHECK(rows > 5);
}

TEST_CASE("project_mask matches the inverse-projection oracle on random masks") {
  const CameraModel cam = CameraModel::synth_default();
  const GridSpec g = default_bev_grid();
  std::mt19937_64 rng(21);
  for (int k = 0; k < 100; ++k) {
    GridMask bev(g);
    for (int q = 0; q < 3; ++q) {
      const auto quad = random_star_quad(rng, GridSpec{g.width, g.height / 2, g.resolution, g.origin});
      fill_polygon(quad, g, bev.bits);
    }
    REQUIRE(project_mask(cam, bev) == project_oracle(cam, bev));
  }
}

TEST_CASE("project_mask is independent of cell order") {
  const CameraModel cam = CameraModel::synth_default();
  const GridSpec g = default_bev_grid();
  GridMask a(g), b(g);
  std::vector<std::pair<int, int>> cells;
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> col(0, g.width - 1), row(0, 200);
  for (int i = 0; i < 300; ++i) cells.emplace_back(col(rng), row(rng));
  for (auto [c, r] : cells) a.bits.set(c, r);
  std::shuffle(cells.begin(), cells.end(), rng);
  for (auto [c, r] : cells) b.bits.set(c, r);
  CHECK(project_mask(cam, a) == project_mask(cam, b));
}

TEST_CASE("footprint rotated by pi is the point reflection of the mask") {
  const GridSpec g{200, 200, 0.1, {-10, -10}};
  const Vec2 center{0.0, 0.0};
  for (double alpha : {0.0, 0.3, 1.1, -0.7}) {
    const auto a = rasterize_polygon(footprint_corners(Rigid2{alpha, center}, 1.9, 4.5), g).mask;
    const auto b = rasterize_polygon(footprint_corners(Rigid2{alpha + kPi, center}, 1.9, 4.5), g).mask;
    int unmatched = 0;
    for (int r = 0; r < g.height; ++r) {
      for (int c = 0; c < g.width; ++c) {
        if (!a.bits.at(c, r)) continue;
        const int mc = g.width - 1 - c, mr = g.height - 1 - r;
        bool near = false;
        for (int dr = -1; dr <= 1 && !near; ++dr)
          for (int dc = -1; dc <= 1 && !near; ++dc)
            near = b.bits.in_bounds(mc + dc, mr + dr) && b.bits.at(mc + dc, mr + dr);
        unmatched += !near;
      }
    }
    CHECK(unmatched == 0);
    CHECK(std::abs(static_cast<long>(a.bits.count()) - static_cast<long>(b.bits.count())) < 60);
  }
}
