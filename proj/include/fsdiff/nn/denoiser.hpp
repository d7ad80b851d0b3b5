#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "json.hpp"

#include "fsdiff/common.hpp"
#include "fsdiff/nn/tape.hpp"

namespace fsdiff::nn {

struct DenoiserConfig {
  int feature_dim = 64;  // D_f
  int pos_dim = 64;      // D_e
  int blocks = 6;
  int heads = 4;
  int mlp_ratio = 4;
  int n_points = 50;
  int command_vocab = kCommandCount;
  int in_channels = SemanticImage::kChannels;
  int stage1_channels = 16;
  int stage2_channels = 32;
  int t_max = 50;
  bool zero_init_head = true;

  int model_dim() const { return feature_dim + pos_dim; }
  /// Throws ValidationError when the configuration is inconsistent.
  void validate() const;
  bool operator==(const DenoiserConfig&) const = default;
};

nlohmann::json to_json(const DenoiserConfig& c);
/// Rejects unknown keys.
DenoiserConfig denoiser_config_from_json(const nlohmann::json& j);

/// Channel-planar semantic image to a (H·W)×C pixel-row matrix.
Mat image_to_rows(const SemanticImage& image);

/// Per point: sin(f x), cos(f x), sin(f y), cos(f y) blocks with f = 1, 2, 4, ...
Mat fourier_pos_embed(const Mat& points, int dim);

/// Transformer sinusoid over `dim` entries: first half sin, second half cos.
Eigen::RowVectorXd sinusoidal_time_embed(int t, int dim, int t_max);

/// One group = one (image, noisy contour, t, command) query.
struct DenoiserBatch {
  std::vector<const SemanticImage*> images;
  Mat points;                   // (groups·N)×2, normalized coordinates
  std::vector<int> image_of_group;
  std::vector<int> timesteps;
  std::vector<std::optional<Command>> commands;

  int groups() const { return static_cast<int>(timesteps.size()); }
};

/// Encoder output for a set of images.
struct FeatureMaps {
  Mat values;  // (B·H'·W')×D_f
  FeatureMapShape shape;
};

class Denoiser {
 public:
  Denoiser(const DenoiserConfig& config, std::uint64_t seed);
  Denoiser(const DenoiserConfig& config, ParamSet params);

  const DenoiserConfig& config() const { return config_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  /// Records the encoder on `tape` and returns the feature map variable.
  Var encode(Tape& tape, std::span<const SemanticImage* const> images, FeatureMapShape* shape) const;
  /// Predicted noise, (groups·N)×2.
  Var forward(Tape& tape, const DenoiserBatch& batch) const;
  /// Same as forward() but reuses precomputed features (image_of_group indexes `features`).
  Var forward_with_features(Tape& tape, Var features, FeatureMapShape shape, const DenoiserBatch& batch) const;

  FeatureMaps encode_images(std::span<const SemanticImage* const> images) const;
  Mat predict(const FeatureMaps& features, const DenoiserBatch& batch) const;
  Mat predict(const SemanticImage& image, const Mat& points, int t, std::optional<Command> command) const;

 private:
  void build(std::uint64_t seed);
  int p(const char* name) const;

  DenoiserConfig config_;
  ParamSet params_;
};

}  // namespace fsdiff::nn
