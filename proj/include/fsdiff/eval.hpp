#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "fsdiff/contour.hpp"
#include "fsdiff/freespace.hpp"
#include "fsdiff/geom.hpp"

namespace fsdiff {

/// Even-odd fill of the contour polygon (pixel-center sampling).
ImageMask contour_to_mask(const Contour& contour, int width, int height);

/// 1 when both masks are empty. Throws ValidationError on size mismatch.
double iou(const ImageMask& a, const ImageMask& b);

/// |pred ∩ region| / |pred|, 0 for an empty prediction.
double overlap_fraction(const ImageMask& pred, const ImageMask& region);

/// Pixels whose centers lie inside any box.
ImageMask obstacle_region(std::span<const ObstacleBox> boxes, int width, int height);

/// Pixels that show neither road, marking nor obstacle (sky included).
ImageMask offroad_region(const SemanticImage& image);

/// Centerline angle in degrees (90 = straight up the image), in pixel units.
/// The centerline pairs points of the two chains leaving the bottom-center at
/// equal arc length; the angle runs from the bottom-center to its mean point.
double centerline_angle(const Contour& contour, int width, int height);

struct DirectionalStats {
  double mean = 0.0;
  double stddev = 0.0;  // population
  double extent = 0.0;  // max - min
};

DirectionalStats directional_deviation(std::span<const Contour> samples, int width, int height, int expected = 6);

struct EvalItem {
  std::shared_ptr<const SemanticImage> image;  // null: off-road metric absent
  Contour ground_truth;
  std::optional<std::vector<ObstacleBox>> obstacles;  // empty optional: obstacle metric absent
  std::string scenario;
  Command command = Command::kFollowLane;
};

struct MetricSummary {
  int images = 0;
  std::optional<double> iou_mean;  // mean over draws, then over images
  std::optional<double> iou_best;  // best draw per image, then mean
  std::optional<double> obstacle_overlap;
  std::optional<double> offroad_overlap;
  std::optional<double> dd_mean;
  std::optional<double> dd_stddev;
  std::optional<double> dd_extent;
};

struct MetricsReport {
  MetricSummary overall;
  std::map<std::string, MetricSummary> per_scenario;
};

/// Draws for one item; `index` is the item's position in the evaluated list.
using SampleFn = std::function<std::vector<Contour>(const EvalItem& item, std::size_t index)>;

MetricsReport evaluate(std::span<const EvalItem> items, const SampleFn& sampler, int width, int height);

nlohmann::json to_json(const MetricsReport& report);
std::string format_report(const MetricsReport& report);

}  // namespace fsdiff
