#include "fsdiff/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <sstream>

namespace fsdiff {

ImageMask contour_to_mask(const Contour& contour, int width, int height) {
  ImageMask mask(width, height);
  if (contour.points.size() < 3) return mask;
  std::vector<Vec2> poly;
  poly.reserve(contour.points.size());
  for (const Vec2& p : contour.points) poly.push_back(normalized_to_pixel(p, width, height));
  fill_polygon(poly, GridSpec{width, height, 1.0, Vec2{0.0, 0.0}}, mask);
  return mask;
}

namespace {

void check_same(const ImageMask& a, const ImageMask& b, const char* what) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw ValidationError(std::string(what) + ": mask dimensions differ");
  }
}

}  // namespace

double iou(const ImageMask& a, const ImageMask& b) {
  check_same(a, b, "iou");
  std::size_t inter = 0, uni = 0;
  const auto ab = a.bits(), bb = b.bits();
  for (std::size_t i = 0; i < ab.size(); ++i) {
    inter += (ab[i] & bb[i]) ? 1 : 0;
    uni += (ab[i] | bb[i]) ? 1 : 0;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double overlap_fraction(const ImageMask& pred, const ImageMask& region) {
  check_same(pred, region, "overlap_fraction");
  std::size_t inter = 0, total = 0;
  const auto pb = pred.bits(), rb = region.bits();
  for (std::size_t i = 0; i < pb.size(); ++i) {
    total += pb[i] ? 1 : 0;
    inter += (pb[i] && rb[i]) ? 1 : 0;
  }
  if (total == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(total);
}

ImageMask obstacle_region(std::span<const ObstacleBox> boxes, int width, int height) {
  ImageMask region(width, height);
  for (const ObstacleBox& b : boxes) {
    if (!b.valid()) continue;
    const int c0 = std::max(0, static_cast<int>(std::floor(b.x_min - 0.5)));
    const int c1 = std::min(width - 1, static_cast<int>(std::ceil(b.x_max - 0.5)));
    const int r0 = std::max(0, static_cast<int>(std::floor(b.y_min - 0.5)));
    const int r1 = std::min(height - 1, static_cast<int>(std::ceil(b.y_max - 0.5)));
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        if (c + 0.5 > b.x_min && c + 0.5 < b.x_max && r + 0.5 > b.y_min && r + 0.5 < b.y_max) region.set(c, r);
      }
    }
  }
  return region;
}

ImageMask offroad_region(const SemanticImage& image) {
  ImageMask region(image.width, image.height);
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      const bool drivable = image.at(SemanticImage::kRoad, c, r) > 0.5f ||
                            image.at(SemanticImage::kLaneMarking, c, r) > 0.5f ||
                            image.at(SemanticImage::kObstacle, c, r) > 0.5f;
      if (!drivable) region.set(c, r);
    }
  }
  return region;
}

double centerline_angle(const Contour& contour, int width, int height) {
  const std::size_t n = contour.points.size();
  if (n < 3) throw ValidationError("centerline_angle: contour needs at least 3 points");
  std::vector<Vec2> poly;
  poly.reserve(n);
  double bottom = -std::numeric_limits<double>::infinity();
  for (const Vec2& p : contour.points) {
    poly.push_back(normalized_to_pixel(p, width, height));
    bottom = std::max(bottom, poly.back().y);
  }

  std::vector<double> cum(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) cum[i + 1] = cum[i] + norm(poly[(i + 1) % n] - poly[i]);
  const double perimeter = cum[n];
  if (!(perimeter > 0.0)) throw ValidationError("centerline_angle: degenerate contour");

  // Widest span of a cross-section one sample spacing above the lowest point,
  // clear of corners cut by resampling.
  auto widest_span = [&](double cut, double* mid_x) {
    std::vector<double> xs;
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2 a = poly[i], b = poly[(i + 1) % n];
      if ((a.y > cut) != (b.y > cut)) xs.push_back(a.x + (cut - a.y) * (b.x - a.x) / (b.y - a.y));
    }
    std::sort(xs.begin(), xs.end());
    double widest = -1.0;
    for (std::size_t i = 0; i + 1 < xs.size(); i += 2) {
      if (xs[i + 1] - xs[i] > widest) {
        widest = xs[i + 1] - xs[i];
        *mid_x = 0.5 * (xs[i] + xs[i + 1]);
      }
    }
    return widest > 0.0;
  };
  double mid_x = poly[0].x;
  double cut = bottom - perimeter / static_cast<double>(n);
  if (!widest_span(cut, &mid_x)) {
    cut = bottom - 0.5;
    widest_span(cut, &mid_x);
  }
  const Vec2 base{mid_x, cut};

  // Chains are walked both ways from the polyline point closest to the bottom-center.
  const Vec2 target{mid_x, bottom};
  double anchor_s = 0.0, best = std::numeric_limits<double>::infinity();
  Vec2 anchor = poly[0];
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 a = poly[i], ab = poly[(i + 1) % n] - a;
    const double len2 = dot(ab, ab);
    const double t = len2 > 0.0 ? std::clamp(dot(target - a, ab) / len2, 0.0, 1.0) : 0.0;
    const Vec2 q = a + ab * t;
    const double d = norm(q - target);
    if (d < best) {
      best = d;
      anchor = q;
      anchor_s = cum[i] + t * std::sqrt(len2);
    }
  }
  auto at_arc = [&](double arc) {
    arc = std::fmod(arc, perimeter);
    if (arc < 0.0) arc += perimeter;
    const auto seg = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), arc) - cum.begin());
    const std::size_t i = std::min(seg == 0 ? 0 : seg - 1, n - 1);
    const double len = cum[i + 1] - cum[i];
    const double t = len > 0.0 ? (arc - cum[i]) / len : 0.0;
    return poly[i] + (poly[(i + 1) % n] - poly[i]) * t;
  };
  // Centerline: midpoints of the two chains walked from the anchor at equal arc length.
  constexpr int kSteps = 64;
  Vec2 centroid{0.0, 0.0};
  for (int k = 1; k <= kSteps; ++k) {
    const double s = 0.5 * perimeter * k / kSteps;
    centroid = centroid + (at_arc(anchor_s + s) + at_arc(anchor_s - s)) * (0.5 / kSteps);
  }
  const Vec2 d = centroid - base;
  return std::atan2(-d.y, d.x) * 180.0 / std::numbers::pi;
}

DirectionalStats directional_deviation(std::span<const Contour> samples, int width, int height, int expected) {
  if (expected < 1 || static_cast<int>(samples.size()) < expected) {
    throw ValidationError("directional_deviation: need " + std::to_string(expected) + " contours");
  }
  std::vector<double> angles;
  for (int i = 0; i < expected; ++i) angles.push_back(centerline_angle(samples[static_cast<std::size_t>(i)], width, height));
  DirectionalStats s;
  double offset = 0.0;
  for (double a : angles) offset += a - angles[0];
  s.mean = angles[0] + offset / expected;
  double var = 0.0;
  for (double a : angles) var += (a - s.mean) * (a - s.mean);
  s.stddev = std::sqrt(var / expected);
  const auto [mn, mx] = std::minmax_element(angles.begin(), angles.end());
  s.extent = *mx - *mn;
  return s;
}

namespace {

struct Accumulator {
  int images = 0;
  double iou_mean = 0.0, iou_best = 0.0;
  double obstacle = 0.0, offroad = 0.0;
  int obstacle_n = 0, offroad_n = 0;
  double dd_mean = 0.0, dd_std = 0.0, dd_extent = 0.0;
  int dd_n = 0;

  MetricSummary finish() const {
    MetricSummary s;
    s.images = images;
    if (images > 0) {
      s.iou_mean = iou_mean / images;
      s.iou_best = iou_best / images;
    }
    if (obstacle_n > 0) s.obstacle_overlap = obstacle / obstacle_n;
    if (offroad_n > 0) s.offroad_overlap = offroad / offroad_n;
    if (dd_n > 0) {
      s.dd_mean = dd_mean / dd_n;
      s.dd_stddev = dd_std / dd_n;
      s.dd_extent = dd_extent / dd_n;
    }
    return s;
  }
};

}  // namespace

MetricsReport evaluate(std::span<const EvalItem> items, const SampleFn& sampler, int width, int height) {
  Accumulator all;
  std::map<std::string, Accumulator> per;
  for (std::size_t idx = 0; idx < items.size(); ++idx) {
    const EvalItem& item = items[idx];
    const std::vector<Contour> draws = sampler(item, idx);
    if (draws.empty()) throw ValidationError("evaluate: sampler returned no contours");
    const ImageMask gt = contour_to_mask(item.ground_truth, width, height);
    std::optional<ImageMask> obstacles, offroad;
    if (item.obstacles) obstacles = obstacle_region(*item.obstacles, width, height);
    if (item.image) offroad = offroad_region(*item.image);

    double iou_sum = 0.0, iou_best = 0.0, obs_sum = 0.0, off_sum = 0.0;
    for (const Contour& c : draws) {
      const ImageMask pred = contour_to_mask(c, width, height);
      const double v = iou(pred, gt);
      iou_sum += v;
      iou_best = std::max(iou_best, v);
      if (obstacles) obs_sum += overlap_fraction(pred, *obstacles);
      if (offroad) off_sum += overlap_fraction(pred, *offroad);
    }
    const double k = static_cast<double>(draws.size());
    for (Accumulator* acc : {&all, &per[item.scenario]}) {
      ++acc->images;
      acc->iou_mean += iou_sum / k;
      acc->iou_best += iou_best;
      if (obstacles) {
        acc->obstacle += obs_sum / k;
        ++acc->obstacle_n;
      }
      if (offroad) {
        acc->offroad += off_sum / k;
        ++acc->offroad_n;
      }
    }
    if (draws.size() >= 2) {
      const DirectionalStats dd = directional_deviation(draws, width, height, static_cast<int>(draws.size()));
      for (Accumulator* acc : {&all, &per[item.scenario]}) {
        acc->dd_mean += dd.mean;
        acc->dd_std += dd.stddev;
        acc->dd_extent += dd.extent;
        ++acc->dd_n;
      }
    }
  }
  MetricsReport report;
  report.overall = all.finish();
  for (const auto& [name, acc] : per) report.per_scenario[name] = acc.finish();
  return report;
}

namespace {

nlohmann::json summary_json(const MetricSummary& s) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return nlohmann::json{{"images", s.images},
                        {"iou_mean_of_samples", opt(s.iou_mean)},
                        {"iou_best_of_samples", opt(s.iou_best)},
                        {"obstacle_overlap", opt(s.obstacle_overlap)},
                        {"offroad_overlap", opt(s.offroad_overlap)},
                        {"dd_mean_deg", opt(s.dd_mean)},
                        {"dd_stddev_deg", opt(s.dd_stddev)},
                        {"dd_extent_deg", opt(s.dd_extent)}};
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "absent";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", *v);
  return buf;
}

}  // namespace

nlohmann::json to_json(const MetricsReport& report) {
  nlohmann::json j{{"overall", summary_json(report.overall)}, {"scenarios", nlohmann::json::object()}};
  for (const auto& [name, s] : report.per_scenario) j["scenarios"][name] = summary_json(s);
  return j;
}

std::string format_report(const MetricsReport& report) {
  std::ostringstream out;
  auto line = [&](const std::string& name, const MetricSummary& s) {
    out << name << ": images=" << s.images << " iou(mean-of-samples)=" << fmt(s.iou_mean)
        << " iou(best-of-samples)=" << fmt(s.iou_best) << " obstacle_overlap=" << fmt(s.obstacle_overlap)
        << " offroad_overlap=" << fmt(s.offroad_overlap) << " dd_mean=" << fmt(s.dd_mean)
        << " dd_stddev=" << fmt(s.dd_stddev) << " dd_extent=" << fmt(s.dd_extent) << "\n";
  };
  line("overall", report.overall);
  for (const auto& [name, s] : report.per_scenario) line(name, s);
  return out.str();
}

}  // namespace fsdiff
