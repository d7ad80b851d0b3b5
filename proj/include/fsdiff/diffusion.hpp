#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "fsdiff/contour.hpp"
#include "fsdiff/freespace.hpp"
#include "fsdiff/nn/denoiser.hpp"

namespace fsdiff {

using nn::Mat;

/// Index t runs over 0..t_max; entry 0 is the clean state (beta 0, alpha_bar 1).
struct NoiseSchedule {
  int t_max = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  /// Posterior variance beta~_t = beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t).
  double posterior_variance(int t) const;
  /// Reverse-step coefficients: mean = coef_a (c_t - coef_g * eps).
  double coef_a(int t) const;
  double coef_g(int t) const;
  /// Same mean written over the clean estimate: coef_clean * c0_hat + coef_noisy * c_t.
  double coef_clean(int t) const;
  double coef_noisy(int t) const;
};

/// Clean-signal estimates are clamped to [-kCleanClip, kCleanClip] inside reverse steps.
inline constexpr double kCleanClip = 1.0;

NoiseSchedule cosine_schedule(int t_max, double s = 0.008);

Mat standard_normal(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng);

Mat forward_diffuse(const NoiseSchedule& sched, const Mat& c0, int t, const Mat& noise);

/// Clean-signal estimate implied by a noise prediction.
Mat predict_clean(const NoiseSchedule& sched, const Mat& c_t, int t, const Mat& eps_hat);

/// Posterior mean around the clamped clean estimate plus sigma_t * z; `z` is
/// ignored at t = 1. Equals coef_a (c_t - coef_g eps_hat) while the estimate
/// stays inside the clamp.
Mat reverse_step(const NoiseSchedule& sched, const Mat& c_t, int t, const Mat& eps_hat, const Mat& z);
Mat reverse_step(const NoiseSchedule& sched, const Mat& c_t, int t, const Mat& eps_hat, std::mt19937_64& rng);

/// Noise predictor used by generic reverse chains: (c_t, t) -> eps_hat.
using NoisePredictor = std::function<Mat(const Mat&, int)>;

/// Runs reverse steps start_t..1 from `c_start`.
Mat reverse_chain(const NoiseSchedule& sched, const Mat& c_start, int start_t, const NoisePredictor& predictor,
                  std::mt19937_64& rng);

/// Axis-aligned box in normalized image coordinates.
struct NormBox {
  double x_min = 0.0, y_min = 0.0, x_max = 0.0, y_max = 0.0;
  bool strictly_contains(Vec2 p) const { return p.x > x_min && p.x < x_max && p.y > y_min && p.y < y_max; }
};

NormBox normalize_box(const ObstacleBox& box, int image_width, int image_height);

/// Moves each point strictly inside a box toward the box's nearest edge by
/// lambda times its distance to that edge. Edges on the image border do not
/// count. `aspect` is image width / height; with it, distances are measured
/// in pixel-proportional units. Boxes are visited in order.
Mat obstacle_guidance_step(const Mat& points, std::span<const NormBox> boxes, double lambda, double aspect = 1.0);

/// Places every point strictly inside some box onto the closest boundary
/// point that is outside all boxes, preferring points inside the image.
Mat project_outside_boxes(const Mat& points, std::span<const NormBox> boxes, double aspect = 1.0);

struct TrainExample {
  const SemanticImage* image = nullptr;
  Mat contour;  // N×2 normalized, canonical
  std::optional<Command> command;
};

struct LossResult {
  double loss = 0.0;
  std::vector<Mat> grads;
};

/// Mean over draws, points and coordinates of (eps_hat - eps)^2 with t drawn
/// from {1..t_max}. Each example contributes `draws` independent corruptions
/// that share one encoder pass.
LossResult training_loss(const nn::Denoiser& model, const NoiseSchedule& sched, std::span<const TrainExample> batch,
                         std::mt19937_64& rng, int draws = 1);

enum class InitKind { kGaussian, kTemplate };

struct GuidanceConfig {
  bool enabled = false;
  double lambda = 0.5;
  int active_from = 10;  // applied after steps with t <= active_from
};

struct SamplerConfig {
  InitKind init = InitKind::kGaussian;
  int start_t = 0;  // 0 selects t_max (gaussian) or 10 (template)
  std::optional<Command> command;
  std::optional<Mat> template_mean;  // required for template init
  GuidanceConfig guidance;
  std::uint64_t seed = 0;

  int resolved_start(int t_max) const;
};

inline constexpr int kTemplateStart = 10;
inline constexpr int kDefaultTemplateK = 32;

/// Pointwise mean of the first k canonical contours.
Mat template_mean(std::span<const Contour> contours, int k = kDefaultTemplateK);
Mat make_noise_template(std::span<const Contour> contours, int k, int t_template, const NoiseSchedule& sched,
                        std::mt19937_64& rng);

/// Draws one contour per config for a single image. Draws sharing a start
/// step are denoised together; each draw owns its random stream.
std::vector<Contour> sample_batch(const nn::Denoiser& model, const NoiseSchedule& sched, const SemanticImage& image,
                                  std::span<const SamplerConfig> draws, std::span<const ObstacleBox> obstacles = {});

Contour sample(const nn::Denoiser& model, const NoiseSchedule& sched, const SemanticImage& image,
               const SamplerConfig& config, std::span<const ObstacleBox> obstacles = {});

}  // namespace fsdiff
