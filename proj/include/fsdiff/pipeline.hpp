#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "fsdiff/config.hpp"
#include "fsdiff/diffusion.hpp"
#include "fsdiff/eval.hpp"
#include "fsdiff/io.hpp"
#include "fsdiff/nn/adam.hpp"
#include "fsdiff/nn/checkpoint.hpp"

namespace fsdiff {

struct DatasetSummary {
  nlohmann::json manifest;
  int episodes = 0;
  int failures = 0;
  std::size_t records = 0;
};

/// Generates one log per configured episode under logs/, then builds shards
/// and the manifest. Episode e's world and trajectory derive from
/// mix_seed(seed, e). Failed episodes are listed in the manifest.
DatasetSummary synth_dataset(const RunConfig& config, const DatasetPaths& paths,
                             const CameraModel& cam = CameraModel::synth_default());

/// Rebuilds shards and the manifest from every log under logs/. Logs without
/// an episode.json are treated as training data of scenario "unknown".
DatasetSummary build_data(const RunConfig& config, const DatasetPaths& paths);

/// Drops the metadata block (creation time) so manifests compare byte-exact.
nlohmann::json manifest_without_metadata(nlohmann::json manifest);

/// Pointwise-mean contours per command, for commands with at least k samples.
struct TemplateSet {
  std::map<Command, Mat> means;

  bool empty() const { return means.empty(); }
};

TemplateSet compute_templates(std::span<const DatasetRecord> records, int k);
nlohmann::json to_json(const TemplateSet& t);
TemplateSet templates_from_json(const nlohmann::json& j);

Mat contour_matrix(const Contour& c);

/// Training examples pointing into `records` (which must outlive them).
std::vector<TrainExample> make_examples(std::span<const DatasetRecord> records);

/// Deterministic trainer: step s draws its batch and noise from
/// mix_seed(seed, s), so a resumed run matches an uninterrupted one bitwise.
class Trainer {
 public:
  Trainer(const nn::DenoiserConfig& model, const TrainSettings& settings, std::uint64_t seed,
          std::vector<TrainExample> data);
  /// Resumes from a checkpoint written by checkpoint(). `steps` overrides the
  /// recorded step budget.
  Trainer(nn::Checkpoint ckpt, std::vector<TrainExample> data, std::optional<std::int64_t> steps = std::nullopt);

  /// One optimizer step; returns the batch loss.
  double step();
  bool finished() const { return step_ >= settings_.steps; }
  std::int64_t current_step() const { return step_; }
  const TrainSettings& settings() const { return settings_; }
  const nn::Denoiser& model() const { return model_; }
  int skipped_updates() const { return skipped_; }

  void set_templates(const TemplateSet& t) { templates_ = to_json(t); }
  nn::Checkpoint checkpoint() const;

 private:
  nn::Denoiser model_;
  TrainSettings settings_;
  std::uint64_t seed_ = 0;
  std::vector<TrainExample> data_;
  nn::AdamState adam_;
  NoiseSchedule sched_;
  std::int64_t step_ = 0;
  int skipped_ = 0;
  nlohmann::json templates_ = nlohmann::json::object();
};

/// Learning rate at step s: linear warmup, then constant.
double learning_rate(const TrainSettings& s, std::int64_t step);

struct TrainRunOptions {
  std::filesystem::path out_dir;
  std::function<void(std::int64_t step, double loss)> on_log;  // every log_every steps
};

/// Steps the trainer to completion. Appends "step,loss" lines to
/// out_dir/loss.csv (truncated to the trainer's start step), writes
/// ckpt_<step>.bin every checkpoint_every steps and final.bin at the end.
nn::Checkpoint run_training(Trainer& trainer, const TrainRunOptions& options);

/// Per-draw sampler configs for the item at `item_index`.
std::vector<SamplerConfig> plan_draws(const SamplerSettings& settings, const TemplateSet& templates,
                                      std::uint64_t seed, std::size_t item_index);

EvalItem make_eval_item(const DatasetRecord& record);

SampleFn model_sampler(const nn::Denoiser& model, const NoiseSchedule& sched, const SamplerSettings& settings,
                       const TemplateSet& templates, std::uint64_t seed);

/// Semantic image in flat colors with obstacle boxes, the ground truth
/// (white) and predictions (one color per draw) outlined on top.
RgbImage render_overlay(const SemanticImage& image, const Contour* ground_truth, std::span<const Contour> predictions,
                        std::span<const ObstacleBox> obstacles);

nlohmann::json to_json(const Contour& c);
Contour contour_from_json(const nlohmann::json& j);

}  // namespace fsdiff
