#include "fsdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>

namespace fsdiff {

double NoiseSchedule::posterior_variance(int t) const {
  if (t < 1 || t > t_max) throw ValidationError("posterior_variance: t out of range");
  const auto i = static_cast<std::size_t>(t);
  return beta[i] * (1.0 - alpha_bar[i - 1]) / (1.0 - alpha_bar[i]);
}

double NoiseSchedule::coef_a(int t) const { return 1.0 / std::sqrt(alpha[static_cast<std::size_t>(t)]); }

double NoiseSchedule::coef_g(int t) const {
  const auto i = static_cast<std::size_t>(t);
  return beta[i] / std::sqrt(1.0 - alpha_bar[i]);
}

double NoiseSchedule::coef_clean(int t) const {
  const auto i = static_cast<std::size_t>(t);
  return std::sqrt(alpha_bar[i - 1]) * beta[i] / (1.0 - alpha_bar[i]);
}

double NoiseSchedule::coef_noisy(int t) const {
  const auto i = static_cast<std::size_t>(t);
  return std::sqrt(alpha[i]) * (1.0 - alpha_bar[i - 1]) / (1.0 - alpha_bar[i]);
}

NoiseSchedule cosine_schedule(int t_max, double s) {
  if (t_max < 1) throw ValidationError("cosine_schedule: t_max must be >= 1");
  const auto f = [&](int t) {
    const double c = std::cos(((static_cast<double>(t) / t_max + s) / (1.0 + s)) * std::numbers::pi / 2.0);
    return c * c;
  };
  NoiseSchedule sched;
  sched.t_max = t_max;
  const auto n = static_cast<std::size_t>(t_max) + 1;
  sched.beta.assign(n, 0.0);
  sched.alpha.assign(n, 1.0);
  sched.alpha_bar.assign(n, 1.0);
  const double f0 = f(0);
  for (int t = 1; t <= t_max; ++t) {
    const double prev = f(t - 1) / f0;
    const double cur = f(t) / f0;
    const auto i = static_cast<std::size_t>(t);
    sched.beta[i] = std::min(1.0 - cur / prev, 0.999);
    sched.alpha[i] = 1.0 - sched.beta[i];
    sched.alpha_bar[i] = sched.alpha_bar[i - 1] * sched.alpha[i];
  }
  return sched;
}

Mat standard_normal(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

Mat forward_diffuse(const NoiseSchedule& sched, const Mat& c0, int t, const Mat& noise) {
  if (t < 0 || t > sched.t_max) throw ValidationError("forward_diffuse: t out of range");
  if (c0.rows() != noise.rows() || c0.cols() != noise.cols()) throw ValidationError("forward_diffuse: shape mismatch");
  const double ab = sched.alpha_bar[static_cast<std::size_t>(t)];
  if (t == 0) return c0;
  return std::sqrt(ab) * c0 + std::sqrt(1.0 - ab) * noise;
}

Mat predict_clean(const NoiseSchedule& sched, const Mat& c_t, int t, const Mat& eps_hat) {
  if (t < 0 || t > sched.t_max) throw ValidationError("predict_clean: t out of range");
  const double ab = sched.alpha_bar[static_cast<std::size_t>(t)];
  return (c_t - std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(ab);
}

Mat reverse_step(const NoiseSchedule& sched, const Mat& c_t, int t, const Mat& eps_hat, const Mat& z) {
  if (t < 1 || t > sched.t_max) throw ValidationError("reverse_step: t out of range");
  const Mat clean = predict_clean(sched, c_t, t, eps_hat).cwiseMax(-kCleanClip).cwiseMin(kCleanClip);
  Mat mean = sched.coef_clean(t) * clean + sched.coef_noisy(t) * c_t;
  if (t > 1) mean += std::sqrt(sched.posterior_variance(t)) * z;
  return mean;
}

Mat reverse_step(const NoiseSchedule& sched, const Mat& c_t, int t, const Mat& eps_hat, std::mt19937_64& rng) {
  if (t == 1) return reverse_step(sched, c_t, t, eps_hat, Mat());
  return reverse_step(sched, c_t, t, eps_hat, standard_normal(c_t.rows(), c_t.cols(), rng));
}

Mat reverse_chain(const NoiseSchedule& sched, const Mat& c_start, int start_t, const NoisePredictor& predictor,
                  std::mt19937_64& rng) {
  if (start_t < 1 || start_t > sched.t_max) throw ValidationError("reverse_chain: start_t out of range");
  Mat c = c_start;
  for (int t = start_t; t >= 1; --t) c = reverse_step(sched, c, t, predictor(c, t), rng);
  return c;
}

NormBox normalize_box(const ObstacleBox& box, int image_width, int image_height) {
  const Vec2 lo = pixel_to_normalized({box.x_min, box.y_min}, image_width, image_height);
  const Vec2 hi = pixel_to_normalized({box.x_max, box.y_max}, image_width, image_height);
  return NormBox{lo.x, lo.y, hi.x, hi.y};
}

namespace {

// Box edges lying on the image border are where the view truncates the
// obstacle, so they are not exits.
struct OpenEdges {
  bool left, right, top, bottom;
};

OpenEdges open_edges(const NormBox& b) { return {b.x_min > -1.0, b.x_max < 1.0, b.y_min > -1.0, b.y_max < 1.0}; }

bool in_view(Vec2 p) { return p.x >= -1.0 && p.x <= 1.0 && p.y >= -1.0 && p.y <= 1.0; }

}  // namespace

Mat obstacle_guidance_step(const Mat& points, std::span<const NormBox> boxes, double lambda, double aspect) {
  if (!(lambda > 0.0)) throw ValidationError("obstacle_guidance_step: lambda must be positive");
  if (!(aspect > 0.0)) throw ValidationError("obstacle_guidance_step: aspect must be positive");
  constexpr double kInf = std::numeric_limits<double>::infinity();
  Mat out = points;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    for (const NormBox& b : boxes) {
      const Vec2 p{out(i, 0), out(i, 1)};
      if (!b.strictly_contains(p)) continue;
      const OpenEdges open = open_edges(b);
      // Depths are compared in pixel-proportional units.
      const double dl = open.left ? aspect * (p.x - b.x_min) : kInf, dr = open.right ? aspect * (b.x_max - p.x) : kInf;
      const double dt = open.top ? p.y - b.y_min : kInf, db = open.bottom ? b.y_max - p.y : kInf;
      const double depth = std::min({dl, dr, dt, db});
      if (depth == kInf) continue;
      if (depth == dl) out(i, 0) -= lambda * depth / aspect;
      else if (depth == dr) out(i, 0) += lambda * depth / aspect;
      else if (depth == dt) out(i, 1) -= lambda * depth;
      else out(i, 1) += lambda * depth;
    }
  }
  return out;
}

Mat project_outside_boxes(const Mat& points, std::span<const NormBox> boxes, double aspect) {
  if (!(aspect > 0.0)) throw ValidationError("project_outside_boxes: aspect must be positive");
  constexpr double margin = 1e-9;
  auto inside_any = [&](Vec2 p) {
    return std::any_of(boxes.begin(), boxes.end(), [&](const NormBox& b) { return b.strictly_contains(p); });
  };
  Mat out = points;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const Vec2 p{out(i, 0), out(i, 1)};
    if (!inside_any(p)) continue;
    Vec2 best = p;
    double best_d = std::numeric_limits<double>::infinity();
    auto consider = [&](Vec2 q) {
      const double d = std::hypot(aspect * (q.x - p.x), q.y - p.y);
      if (d < best_d && in_view(q) && !inside_any(q)) {
        best = q;
        best_d = d;
      }
    };
    for (const NormBox& b : boxes) {
      const double cx = std::clamp(p.x, b.x_min, b.x_max), cy = std::clamp(p.y, b.y_min, b.y_max);
      consider({b.x_min - margin, cy});
      consider({b.x_max + margin, cy});
      consider({cx, b.y_min - margin});
      consider({cx, b.y_max + margin});
      consider({b.x_min - margin, b.y_min - margin});
      consider({b.x_max + margin, b.y_min - margin});
      consider({b.x_min - margin, b.y_max + margin});
      consider({b.x_max + margin, b.y_max + margin});
    }
    if (!std::isfinite(best_d)) {
      best = p;
      for (std::size_t guard = 0; guard <= boxes.size() && inside_any(best); ++guard) {
        for (const NormBox& b : boxes) {
          if (b.strictly_contains(best)) best.y = b.y_max + margin;
        }
      }
    }
    out(i, 0) = best.x;
    out(i, 1) = best.y;
  }
  return out;
}

LossResult training_loss(const nn::Denoiser& model, const NoiseSchedule& sched, std::span<const TrainExample> batch,
                         std::mt19937_64& rng, int draws) {
  if (batch.empty()) throw ValidationError("training_loss: empty batch");
  if (draws < 1) throw ValidationError("training_loss: draws must be >= 1");
  const int n = model.config().n_points;
  std::vector<const SemanticImage*> images;
  std::map<const SemanticImage*, int> image_index;
  nn::DenoiserBatch db;
  const Eigen::Index rows = static_cast<Eigen::Index>(batch.size()) * draws * n;
  db.points.resize(rows, 2);
  Mat eps(rows, 2);
  std::uniform_int_distribution<int> pick_t(1, sched.t_max);
  int group = 0;
  for (const TrainExample& ex : batch) {
    if (!ex.image) throw ValidationError("training_loss: example without image");
    if (ex.contour.rows() != n || ex.contour.cols() != 2) throw ValidationError("training_loss: contour size mismatch");
    auto [it, inserted] = image_index.emplace(ex.image, static_cast<int>(images.size()));
    if (inserted) images.push_back(ex.image);
    for (int k = 0; k < draws; ++k, ++group) {
      const int t = pick_t(rng);
      const Mat noise = standard_normal(n, 2, rng);
      db.points.middleRows(static_cast<Eigen::Index>(group) * n, n) = forward_diffuse(sched, ex.contour, t, noise);
      eps.middleRows(static_cast<Eigen::Index>(group) * n, n) = noise;
      db.timesteps.push_back(t);
      db.image_of_group.push_back(it->second);
      db.commands.push_back(ex.command);
    }
  }
  db.images = images;

  nn::Tape tape(&model.params());
  const nn::Var pred = model.forward(tape, db);
  const nn::Var loss = tape.mse(pred, eps);
  LossResult result;
  result.loss = tape.value(loss)(0, 0);
  result.grads = model.params().zeros_like();
  tape.backward(loss, result.grads);
  return result;
}

int SamplerConfig::resolved_start(int t_max) const {
  const int s = start_t > 0 ? start_t : (init == InitKind::kTemplate ? kTemplateStart : t_max);
  if (s < 1 || s > t_max) throw ValidationError("sampler: start_t out of range");
  return s;
}

Mat template_mean(std::span<const Contour> contours, int k) {
  if (k < 1) throw ValidationError("template: k must be >= 1");
  if (static_cast<int>(contours.size()) < k) {
    throw ValidationError("template: need " + std::to_string(k) + " contours, have " + std::to_string(contours.size()));
  }
  const std::size_t n = contours[0].points.size();
  Mat mean = Mat::Zero(static_cast<Eigen::Index>(n), 2);
  for (int i = 0; i < k; ++i) {
    const Contour& c = contours[static_cast<std::size_t>(i)];
    if (c.points.size() != n) throw ValidationError("template: contours differ in point count");
    for (std::size_t j = 0; j < n; ++j) {
      mean(static_cast<Eigen::Index>(j), 0) += c.points[j].x;
      mean(static_cast<Eigen::Index>(j), 1) += c.points[j].y;
    }
  }
  return mean / static_cast<double>(k);
}

Mat make_noise_template(std::span<const Contour> contours, int k, int t_template, const NoiseSchedule& sched,
                        std::mt19937_64& rng) {
  const Mat mean = template_mean(contours, k);
  return forward_diffuse(sched, mean, t_template, standard_normal(mean.rows(), 2, rng));
}

std::vector<Contour> sample_batch(const nn::Denoiser& model, const NoiseSchedule& sched, const SemanticImage& image,
                                  std::span<const SamplerConfig> draws, std::span<const ObstacleBox> obstacles) {
  const int n = model.config().n_points;
  std::vector<NormBox> boxes;
  for (const ObstacleBox& b : obstacles) {
    if (b.valid()) boxes.push_back(normalize_box(b, image.width, image.height));
  }
  const SemanticImage* img = &image;
  const nn::FeatureMaps features = model.encode_images(std::span<const SemanticImage* const>(&img, 1));

  std::vector<Mat> state(draws.size());
  std::vector<std::mt19937_64> rngs;
  std::vector<int> starts(draws.size());
  rngs.reserve(draws.size());
  for (std::size_t i = 0; i < draws.size(); ++i) {
    const SamplerConfig& cfg = draws[i];
    if (cfg.guidance.enabled && !(cfg.guidance.lambda > 0.0)) throw ValidationError("sampler: lambda must be positive");
    rngs.emplace_back(mix_seed(cfg.seed, 0x5a3b1e));
    starts[i] = cfg.resolved_start(sched.t_max);
    if (cfg.init == InitKind::kTemplate) {
      if (!cfg.template_mean || cfg.template_mean->rows() != n || cfg.template_mean->cols() != 2) {
        throw ValidationError("sampler: template init needs an N×2 template mean");
      }
      state[i] = forward_diffuse(sched, *cfg.template_mean, starts[i], standard_normal(n, 2, rngs[i]));
    } else {
      state[i] = standard_normal(n, 2, rngs[i]);
    }
  }

  const int top = draws.empty() ? 0 : *std::max_element(starts.begin(), starts.end());
  for (int t = top; t >= 1; --t) {
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < draws.size(); ++i) {
      if (starts[i] >= t) active.push_back(i);
    }
    if (active.empty()) continue;
    nn::DenoiserBatch batch;
    batch.points.resize(static_cast<Eigen::Index>(active.size()) * n, 2);
    for (std::size_t a = 0; a < active.size(); ++a) {
      batch.points.middleRows(static_cast<Eigen::Index>(a) * n, n) = state[active[a]];
      batch.image_of_group.push_back(0);
      batch.timesteps.push_back(t);
      batch.commands.push_back(draws[active[a]].command);
    }
    const Mat eps = model.predict(features, batch);
    for (std::size_t a = 0; a < active.size(); ++a) {
      const std::size_t i = active[a];
      Mat next = reverse_step(sched, state[i], t, eps.middleRows(static_cast<Eigen::Index>(a) * n, n), rngs[i]);
      const GuidanceConfig& g = draws[i].guidance;
      if (g.enabled && !boxes.empty() && t <= g.active_from) {
        const double aspect = static_cast<double>(image.width) / image.height;
        next = obstacle_guidance_step(next, boxes, g.lambda, aspect);
        if (t == 1) next = project_outside_boxes(next, boxes, aspect);
      }
      state[i] = std::move(next);
    }
  }

  std::vector<Contour> out;
  out.reserve(draws.size());
  for (const Mat& s : state) {
    std::vector<Vec2> pts(static_cast<std::size_t>(s.rows()));
    for (Eigen::Index r = 0; r < s.rows(); ++r) pts[static_cast<std::size_t>(r)] = Vec2{s(r, 0), s(r, 1)};
    out.push_back(contour_from_point_set(pts));
  }
  return out;
}

Contour sample(const nn::Denoiser& model, const NoiseSchedule& sched, const SemanticImage& image,
               const SamplerConfig& config, std::span<const ObstacleBox> obstacles) {
  return sample_batch(model, sched, image, std::span<const SamplerConfig>(&config, 1), obstacles).front();
}

}  // namespace fsdiff
