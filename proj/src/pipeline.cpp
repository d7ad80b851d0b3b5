#include "fsdiff/pipeline.hpp"

#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <random>
#include <sstream>

#include "fsdiff/bytes.hpp"

namespace fsdiff {

namespace {

struct EpisodeResult {
  std::string name;
  std::string scenario;
  std::string split;
  BuildResult built;
};

std::string episode_name(int e) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ep%05d", e);
  return buf;
}

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

DatasetSummary write_dataset(const RunConfig& config, const DatasetPaths& paths, std::vector<EpisodeResult>& episodes,
                             const nlohmann::json& failures) {
  std::map<std::string, std::vector<DatasetRecord>> splits;
  nlohmann::json scenarios = nlohmann::json::object();
  for (EpisodeResult& ep : episodes) {
    nlohmann::json& s = scenarios[ep.scenario];
    if (s.is_null()) {
      s = {{"episodes", 0}, {"frames", 0}, {"samples", 0}, {"train", 0}, {"val", 0},
           {"skipped", nlohmann::json::object()}, {"discarded_components", 0}};
    }
    const BuildStats& st = ep.built.stats;
    s["episodes"] = s["episodes"].get<int>() + 1;
    s["frames"] = s["frames"].get<int>() + st.frames_considered;
    s["samples"] = s["samples"].get<int>() + st.emitted;
    nlohmann::json& per_split = s[ep.split];
    per_split = (per_split.is_null() ? 0 : per_split.get<int>()) + st.emitted;
    s["discarded_components"] = s["discarded_components"].get<int>() + st.discarded_components;
    for (const auto& [reason, n] : st.skipped) {
      nlohmann::json& r = s["skipped"][reason];
      r = (r.is_null() ? 0 : r.get<int>()) + n;
    }
    auto& out = splits[ep.split];
    for (FreespaceSample& sample : ep.built.samples) {
      sample.image.reset();
      out.push_back({ep.scenario, std::move(sample)});
    }
    ep.built.samples.clear();
  }

  std::filesystem::create_directories(paths.shards());
  nlohmann::json shards = nlohmann::json::array();
  std::size_t total = 0;
  for (const auto& [split, records] : splits) {
    const std::size_t per = static_cast<std::size_t>(config.synth.records_per_shard);
    for (std::size_t begin = 0, k = 0; begin < records.size(); begin += per, ++k) {
      const std::size_t n = std::min(per, records.size() - begin);
      char file[64];
      std::snprintf(file, sizeof(file), "%s_%05zu.bin", split.c_str(), k);
      write_shard(paths.shards() / file, std::span<const DatasetRecord>(records.data() + begin, n));
      shards.push_back({{"file", file}, {"split", split}, {"records", n}});
      total += n;
    }
  }

  DatasetSummary summary;
  summary.episodes = static_cast<int>(episodes.size()) + static_cast<int>(failures.size());
  summary.failures = static_cast<int>(failures.size());
  summary.records = total;
  summary.manifest = {{"format", "fsdiff-dataset"},
                      {"version", 1},
                      {"seed", config.seed},
                      {"n_points", config.build.n_points},
                      {"shards", shards},
                      {"scenarios", scenarios},
                      {"failures", failures},
                      {"metadata", {{"created_utc", utc_now()}}}};
  write_json_atomic(paths.manifest(), summary.manifest);
  return summary;
}

}  // namespace

DatasetSummary synth_dataset(const RunConfig& config, const DatasetPaths& paths, const CameraModel& cam) {
  config.validate();
  std::vector<EpisodeResult> results;
  nlohmann::json failures = nlohmann::json::array();
  int e = 0;
  for (const EpisodeMix& mix : config.synth.episodes) {
    const double f = config.synth.validation_fraction;
    for (int k = 0; k < mix.count; ++k, ++e) {
      const std::string name = episode_name(e);
      std::mt19937_64 rng(mix_seed(config.seed, 0xe915, static_cast<std::uint64_t>(e)));
      SceneSpec spec;
      spec.topology = mix.topology;
      spec.lane_count = mix.lane_count;
      spec.lane_width = mix.lane_width;
      spec.obstacle_count = std::uniform_int_distribution<int>(mix.min_obstacles, mix.max_obstacles)(rng);
      spec.seed = mix_seed(config.seed, 0x5ce7e, static_cast<std::uint64_t>(e));
      const bool val = std::floor((k + 1) * f) > std::floor(k * f);
      try {
        const World world = generate_world(spec);
        Command cmd;
        if (mix.command) {
          cmd = *mix.command;
        } else {
          const std::vector<Command> feasible = feasible_commands(world);
          cmd = feasible[std::uniform_int_distribution<std::size_t>(0, feasible.size() - 1)(rng)];
        }
        const Trajectory traj = plan_trajectory(world, cmd, spec.seed, config.synth.tail_length);
        EmitOptions opts;
        opts.pose_stride = config.synth.pose_stride;
        opts.ref_prefix = name + "/frame";
        const DrivingLog log = emit_log(world, traj, cam, opts);
        const std::filesystem::path dir = paths.logs() / name;
        write_log(dir, log);
        EpisodeResult r{name, std::string(topology_name(mix.topology)), val ? "val" : "train", build_dataset(log, config.build)};
        write_json_atomic(dir / "episode.json", {{"scenario", r.scenario},
                                                 {"split", r.split},
                                                 {"command", std::string(command_name(cmd))},
                                                 {"lane_count", spec.lane_count},
                                                 {"lane_width", spec.lane_width},
                                                 {"obstacles", spec.obstacle_count},
                                                 {"seed", spec.seed}});
        results.push_back(std::move(r));
      } catch (const ValidationError& err) {
        failures.push_back({{"episode", name}, {"scenario", std::string(topology_name(mix.topology))}, {"error", err.what()}});
      }
    }
  }
  return write_dataset(config, paths, results, failures);
}

DatasetSummary build_data(const RunConfig& config, const DatasetPaths& paths) {
  config.validate();
  std::vector<std::filesystem::path> dirs;
  if (std::filesystem::is_directory(paths.logs())) {
    for (const auto& entry : std::filesystem::directory_iterator(paths.logs())) {
      if (entry.is_directory() && std::filesystem::exists(entry.path() / "index.json")) dirs.push_back(entry.path());
    }
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<EpisodeResult> results;
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& dir : dirs) {
    EpisodeResult r{dir.filename().string(), "unknown", "train", {}};
    if (std::filesystem::exists(dir / "episode.json")) {
      const nlohmann::json meta = read_json(dir / "episode.json");
      r.scenario = meta.value("scenario", r.scenario);
      r.split = meta.value("split", r.split);
    }
    try {
      r.built = build_dataset(read_log(dir, false), config.build);
      results.push_back(std::move(r));
    } catch (const ValidationError& err) {
      failures.push_back({{"episode", r.name}, {"scenario", r.scenario}, {"error", err.what()}});
    }
  }
  return write_dataset(config, paths, results, failures);
}

nlohmann::json manifest_without_metadata(nlohmann::json manifest) {
  manifest.erase("metadata");
  return manifest;
}

Mat contour_matrix(const Contour& c) {
  Mat m(static_cast<Eigen::Index>(c.points.size()), 2);
  for (std::size_t i = 0; i < c.points.size(); ++i) {
    m(static_cast<Eigen::Index>(i), 0) = c.points[i].x;
    m(static_cast<Eigen::Index>(i), 1) = c.points[i].y;
  }
  return m;
}

TemplateSet compute_templates(std::span<const DatasetRecord> records, int k) {
  std::map<Command, std::vector<Contour>> by_command;
  for (const DatasetRecord& r : records) by_command[r.sample.command].push_back(r.sample.contour);
  TemplateSet t;
  for (const auto& [cmd, contours] : by_command) {
    if (static_cast<int>(contours.size()) >= k) t.means[cmd] = template_mean(contours, k);
  }
  return t;
}

nlohmann::json to_json(const TemplateSet& t) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [cmd, m] : t.means) {
    nlohmann::json pts = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) pts.push_back({m(i, 0), m(i, 1)});
    j[std::string(command_name(cmd))] = pts;
  }
  return j;
}

TemplateSet templates_from_json(const nlohmann::json& j) {
  TemplateSet t;
  if (!j.is_object()) throw ValidationError("templates must be an object");
  for (const auto& [name, pts] : j.items()) {
    const auto cmd = parse_command(name);
    if (!cmd) throw ValidationError("templates: unknown command '" + name + "'");
    Mat m(static_cast<Eigen::Index>(pts.size()), 2);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      m(static_cast<Eigen::Index>(i), 0) = pts[i].at(0).get<double>();
      m(static_cast<Eigen::Index>(i), 1) = pts[i].at(1).get<double>();
    }
    t.means[*cmd] = m;
  }
  return t;
}

std::vector<TrainExample> make_examples(std::span<const DatasetRecord> records) {
  std::vector<TrainExample> out;
  out.reserve(records.size());
  for (const DatasetRecord& r : records) {
    if (!r.sample.image) throw ValidationError("training record " + r.sample.image_ref + " has no image");
    out.push_back({r.sample.image.get(), contour_matrix(r.sample.contour), r.sample.command});
  }
  return out;
}

Trainer::Trainer(const nn::DenoiserConfig& model, const TrainSettings& settings, std::uint64_t seed,
                 std::vector<TrainExample> data)
    : model_(model, mix_seed(seed, 0x1417)),
      settings_(settings),
      seed_(seed),
      data_(std::move(data)),
      adam_(nn::AdamState::zeros_for(model_.params())),
      sched_(cosine_schedule(model.t_max)) {
  if (data_.empty()) throw ValidationError("training needs at least one sample");
  for (const TrainExample& ex : data_) {
    if (ex.contour.rows() != model.n_points) throw ValidationError("training contour size differs from model n_points");
  }
}

Trainer::Trainer(nn::Checkpoint ckpt, std::vector<TrainExample> data, std::optional<std::int64_t> steps)
    : model_(ckpt.model, std::move(ckpt.params)), data_(std::move(data)), sched_(cosine_schedule(ckpt.model.t_max)) {
  if (!ckpt.adam) throw ValidationError("checkpoint has no optimizer state; cannot resume");
  if (!ckpt.meta.contains("train") || !ckpt.meta.contains("seed")) {
    throw ValidationError("checkpoint has no training metadata; cannot resume");
  }
  settings_ = train_settings_from_json(ckpt.meta.at("train"));
  seed_ = ckpt.meta.at("seed").get<std::uint64_t>();
  skipped_ = ckpt.meta.value("skipped", 0);
  if (ckpt.meta.contains("templates")) templates_ = ckpt.meta.at("templates");
  if (steps) settings_.steps = *steps;
  adam_ = std::move(*ckpt.adam);
  step_ = ckpt.step;
  if (data_.empty()) throw ValidationError("training needs at least one sample");
  for (const TrainExample& ex : data_) {
    if (ex.contour.rows() != model_.config().n_points) {
      throw ValidationError("training contour size differs from model n_points");
    }
  }
}

double learning_rate(const TrainSettings& s, std::int64_t step) {
  if (s.warmup_steps > 0 && step < s.warmup_steps) return s.lr * static_cast<double>(step + 1) / s.warmup_steps;
  return s.lr;
}

double Trainer::step() {
  std::mt19937_64 rng(mix_seed(seed_, 0x7a11, static_cast<std::uint64_t>(step_)));
  std::uniform_int_distribution<std::size_t> pick(0, data_.size() - 1);
  std::bernoulli_distribution drop(settings_.command_dropout);
  std::vector<TrainExample> batch;
  batch.reserve(static_cast<std::size_t>(settings_.batch_size));
  for (int b = 0; b < settings_.batch_size; ++b) {
    TrainExample ex = data_[pick(rng)];
    if (drop(rng)) ex.command.reset();
    batch.push_back(std::move(ex));
  }
  const LossResult r = training_loss(model_, sched_, batch, rng, settings_.draws);
  if (!nn::adam_step(model_.params(), r.grads, adam_, learning_rate(settings_, step_))) ++skipped_;
  ++step_;
  return r.loss;
}

nn::Checkpoint Trainer::checkpoint() const {
  nn::Checkpoint c;
  c.model = model_.config();
  c.params = model_.params();
  c.step = step_;
  c.adam = adam_;
  c.meta = {{"seed", seed_}, {"train", to_json(settings_)}, {"skipped", skipped_}, {"templates", templates_}};
  return c;
}

nn::Checkpoint run_training(Trainer& trainer, const TrainRunOptions& options) {
  const std::filesystem::path log_path = options.out_dir / "loss.csv";
  std::string log = "step,loss\n";
  if (std::filesystem::exists(log_path)) {
    std::istringstream in(read_file(log_path));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      long long s = 0;
      if (std::sscanf(line.c_str(), "%lld,", &s) == 1 && s <= trainer.current_step()) log += line + "\n";
    }
  }
  const TrainSettings& st = trainer.settings();
  double window = 0.0;
  int window_n = 0;
  while (!trainer.finished()) {
    const double loss = trainer.step();
    const std::int64_t s = trainer.current_step();
    char line[64];
    std::snprintf(line, sizeof(line), "%" PRId64 ",%.17g\n", s, loss);
    log += line;
    window += loss;
    ++window_n;
    if (s % st.log_every == 0 || trainer.finished()) {
      if (options.on_log) options.on_log(s, window / window_n);
      window = 0.0;
      window_n = 0;
    }
    if (st.checkpoint_every > 0 && s % st.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "ckpt_%08" PRId64 ".bin", s);
      nn::save_checkpoint(options.out_dir / name, trainer.checkpoint());
      write_file_atomic(log_path, log);
    }
  }
  nn::Checkpoint final_ckpt = trainer.checkpoint();
  nn::save_checkpoint(options.out_dir / "final.bin", final_ckpt);
  write_file_atomic(log_path, log);
  return final_ckpt;
}

std::vector<SamplerConfig> plan_draws(const SamplerSettings& settings, const TemplateSet& templates,
                                      std::uint64_t seed, std::size_t item_index) {
  std::vector<Command> available;
  for (const auto& [cmd, m] : templates.means) available.push_back(cmd);
  std::vector<SamplerConfig> draws;
  for (int d = 0; d < settings.samples; ++d) {
    SamplerConfig c;
    c.seed = mix_seed(seed, 0xd4a3, item_index, static_cast<std::uint64_t>(d));
    c.guidance = settings.guidance;
    if (settings.command_mode == CommandMode::kAll) c.command = kAllCommands[static_cast<std::size_t>(d) % kCommandCount];
    if (settings.command_mode == CommandMode::kFixed) c.command = settings.command;
    if (settings.template_init) {
      Command t;
      if (c.command) {
        t = *c.command;
      } else {
        if (available.empty()) throw ValidationError("template sampling needs a checkpoint with templates");
        t = available[static_cast<std::size_t>(d) % available.size()];
      }
      const auto it = templates.means.find(t);
      if (it == templates.means.end()) {
        throw ValidationError("no noise template for command " + std::string(command_name(t)));
      }
      c.init = InitKind::kTemplate;
      c.template_mean = it->second;
    }
    draws.push_back(std::move(c));
  }
  return draws;
}

EvalItem make_eval_item(const DatasetRecord& record) {
  return {record.sample.image, record.sample.contour, record.sample.obstacles, record.scenario, record.sample.command};
}

SampleFn model_sampler(const nn::Denoiser& model, const NoiseSchedule& sched, const SamplerSettings& settings,
                       const TemplateSet& templates, std::uint64_t seed) {
  return [&model, &sched, settings, templates, seed](const EvalItem& item, std::size_t index) {
    if (!item.image) throw ValidationError("sampling needs the item's image");
    const std::vector<SamplerConfig> plan = plan_draws(settings, templates, seed, index);
    std::span<const ObstacleBox> boxes;
    if (item.obstacles) boxes = *item.obstacles;
    return sample_batch(model, sched, *item.image, plan, boxes);
  };
}

namespace {

struct Rgb {
  std::uint8_t r, g, b;
};

void draw_line(RgbImage& img, Vec2 a, Vec2 b, Rgb c) {
  const int steps = static_cast<int>(std::ceil(std::max(std::abs(b.x - a.x), std::abs(b.y - a.y)))) + 1;
  for (int i = 0; i <= steps; ++i) {
    const Vec2 p = a + (b - a) * (static_cast<double>(i) / steps);
    img.set(static_cast<int>(std::floor(p.x)), static_cast<int>(std::floor(p.y)), c.r, c.g, c.b);
  }
}

void draw_contour(RgbImage& img, const Contour& contour, Rgb c) {
  const std::size_t n = contour.points.size();
  for (std::size_t i = 0; i < n; ++i) {
    draw_line(img, normalized_to_pixel(contour.points[i], img.width, img.height),
              normalized_to_pixel(contour.points[(i + 1) % n], img.width, img.height), c);
  }
}

constexpr Rgb kPalette[6] = {{0, 200, 255}, {255, 200, 0}, {255, 0, 200}, {0, 255, 120}, {160, 100, 255}, {255, 120, 60}};

}  // namespace

RgbImage render_overlay(const SemanticImage& image, const Contour* ground_truth, std::span<const Contour> predictions,
                        std::span<const ObstacleBox> obstacles) {
  RgbImage out(image.width, image.height);
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      Rgb px{20, 20, 40};
      if (image.at(SemanticImage::kOffRoad, c, r) > 0.5f) px = {40, 90, 40};
      if (image.at(SemanticImage::kRoad, c, r) > 0.5f) px = {90, 90, 90};
      if (image.at(SemanticImage::kLaneMarking, c, r) > 0.5f) px = {200, 200, 200};
      if (image.at(SemanticImage::kObstacle, c, r) > 0.5f) px = {180, 40, 40};
      out.set(c, r, px.r, px.g, px.b);
    }
  }
  for (const ObstacleBox& b : obstacles) {
    const Rgb orange{255, 140, 0};
    draw_line(out, {b.x_min, b.y_min}, {b.x_max - 1e-9, b.y_min}, orange);
    draw_line(out, {b.x_max - 1e-9, b.y_min}, {b.x_max - 1e-9, b.y_max - 1e-9}, orange);
    draw_line(out, {b.x_max - 1e-9, b.y_max - 1e-9}, {b.x_min, b.y_max - 1e-9}, orange);
    draw_line(out, {b.x_min, b.y_max - 1e-9}, {b.x_min, b.y_min}, orange);
  }
  for (std::size_t i = 0; i < predictions.size(); ++i) draw_contour(out, predictions[i], kPalette[i % 6]);
  if (ground_truth) draw_contour(out, *ground_truth, {255, 255, 255});
  return out;
}

nlohmann::json to_json(const Contour& c) {
  nlohmann::json pts = nlohmann::json::array();
  for (const Vec2& p : c.points) pts.push_back({p.x, p.y});
  return {{"points", pts}};
}

Contour contour_from_json(const nlohmann::json& j) {
  Contour c;
  for (const auto& p : j.at("points")) c.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  return c;
}

}  // namespace fsdiff
