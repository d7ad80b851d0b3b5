// fsdiff command-line interface: synth, build-data, train, sample, eval, render.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "fsdiff/pipeline.hpp"

namespace fs = std::filesystem;
using namespace fsdiff;

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::string predictions;
  std::optional<int> samples;
  std::optional<std::string> guidance;
  std::optional<std::string> command;
  std::optional<std::string> template_mode;
  std::optional<std::string> split;
};

RunConfig resolve_config(const Options& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
  if (o.seed) c.seed = *o.seed;
  if (o.samples) c.sampler.samples = *o.samples;
  if (o.guidance) {
    const GuidanceConfig g = parse_guidance(*o.guidance);
    c.sampler.guidance.enabled = g.enabled;
    c.sampler.guidance.lambda = g.lambda;
  }
  if (o.command) parse_command_mode(*o.command, &c.sampler.command_mode, &c.sampler.command);
  if (o.template_mode) {
    if (*o.template_mode != "on" && *o.template_mode != "off") throw ValidationError("--template must be on or off");
    c.sampler.template_init = *o.template_mode == "on";
  }
  if (o.split) c.sampler.split = *o.split;
  c.validate();
  return c;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ValidationError(std::string(flag) + " is required for this command");
}

std::string file_safe(std::string s) {
  for (char& ch : s) {
    if (ch == '/' || ch == '\\') ch = '_';
  }
  return s;
}

void print_summary(const DatasetSummary& s) {
  std::printf("episodes=%d failures=%d records=%zu\n", s.episodes, s.failures, s.records);
  for (const auto& [name, st] : s.manifest.at("scenarios").items()) {
    std::printf("  %s: episodes=%d samples=%d\n", name.c_str(), st.at("episodes").get<int>(),
                st.at("samples").get<int>());
  }
}

int cmd_synth(const Options& o) {
  require(o.out, "--out");
  const RunConfig c = resolve_config(o);
  const DatasetSummary s = synth_dataset(c, DatasetPaths{o.out});
  print_summary(s);
  return s.episodes > 0 && s.failures == s.episodes ? 2 : 0;
}

int cmd_build_data(const Options& o) {
  require(o.data, "--data");
  const RunConfig c = resolve_config(o);
  const DatasetSummary s = build_data(c, DatasetPaths{o.data});
  print_summary(s);
  return s.episodes > 0 && s.failures == s.episodes ? 2 : 0;
}

std::vector<DatasetRecord> load_records(const std::string& data, const std::string& split, int n_points) {
  const DatasetPaths paths{data};
  const nlohmann::json manifest = read_json(paths.manifest());
  if (manifest.value("n_points", n_points) != n_points) {
    throw ValidationError("dataset contours have " + std::to_string(manifest.value("n_points", 0)) +
                          " points but the model expects " + std::to_string(n_points));
  }
  return load_split(paths, split);
}

int cmd_train(const Options& o) {
  require(o.data, "--data");
  require(o.out, "--out");
  const RunConfig c = resolve_config(o);
  std::optional<nn::Checkpoint> resume;
  if (!o.checkpoint.empty()) resume = nn::load_checkpoint(o.checkpoint);
  const int n_points = resume ? resume->model.n_points : c.model.n_points;
  const std::vector<DatasetRecord> records = load_records(o.data, "train", n_points);
  if (records.empty()) throw ValidationError("dataset has no training records");
  std::optional<Trainer> trainer;
  if (resume) {
    trainer.emplace(std::move(*resume), make_examples(records), c.train.steps);
  } else {
    trainer.emplace(c.model, c.train, c.seed, make_examples(records));
    trainer->set_templates(compute_templates(records, c.train.template_k));
  }
  fs::create_directories(o.out);
  write_json_atomic(fs::path(o.out) / "config.json", to_json(c));
  TrainRunOptions run{o.out, [](std::int64_t step, double loss) {
                        std::fprintf(stderr, "step %lld loss %.5f\n", static_cast<long long>(step), loss);
                      }};
  run_training(*trainer, run);
  std::printf("trained to step %lld (%d skipped updates); checkpoint %s\n",
              static_cast<long long>(trainer->current_step()), trainer->skipped_updates(),
              (fs::path(o.out) / "final.bin").string().c_str());
  return 0;
}

struct LoadedModel {
  nn::Checkpoint ckpt;
  std::unique_ptr<nn::Denoiser> model;
  NoiseSchedule sched;
  TemplateSet templates;
};

LoadedModel load_model(const std::string& path) {
  LoadedModel m;
  m.ckpt = nn::load_checkpoint(path);
  m.model = std::make_unique<nn::Denoiser>(m.ckpt.model, m.ckpt.params);
  m.sched = cosine_schedule(m.ckpt.model.t_max);
  if (m.ckpt.meta.contains("templates")) m.templates = templates_from_json(m.ckpt.meta.at("templates"));
  return m;
}

std::vector<EvalItem> eval_items(const std::vector<DatasetRecord>& records, int max_images) {
  std::vector<EvalItem> items;
  for (const DatasetRecord& r : records) {
    if (max_images > 0 && static_cast<int>(items.size()) >= max_images) break;
    items.push_back(make_eval_item(r));
  }
  return items;
}

int cmd_sample(const Options& o) {
  require(o.data, "--data");
  require(o.checkpoint, "--checkpoint");
  require(o.out, "--out");
  const RunConfig c = resolve_config(o);
  const LoadedModel m = load_model(o.checkpoint);
  const std::vector<DatasetRecord> records = load_records(o.data, c.sampler.split, m.ckpt.model.n_points);
  const std::vector<EvalItem> items = eval_items(records, c.sampler.max_images);
  const SampleFn sampler = model_sampler(*m.model, m.sched, c.sampler, m.templates, c.seed);
  nlohmann::json out_items = nlohmann::json::array();
  for (std::size_t i = 0; i < items.size(); ++i) {
    const std::vector<Contour> draws = sampler(items[i], i);
    nlohmann::json js = nlohmann::json::array();
    for (const Contour& d : draws) js.push_back(to_json(d));
    out_items.push_back({{"image_ref", records[i].sample.image_ref},
                         {"scenario", items[i].scenario},
                         {"command", std::string(command_name(items[i].command))},
                         {"samples", js}});
    const RgbImage overlay = render_overlay(*items[i].image, nullptr, draws, *items[i].obstacles);
    char name[32];
    std::snprintf(name, sizeof(name), "%05zu_", i);
    write_file_atomic(fs::path(o.out) / "overlays" / (name + file_safe(records[i].sample.image_ref) + ".ppm"),
                      encode_ppm(overlay));
  }
  const nlohmann::json doc{{"split", c.sampler.split},
                           {"seed", c.seed},
                           {"samples", c.sampler.samples},
                           {"guidance", guidance_text(c.sampler.guidance)},
                           {"command", command_mode_text(c.sampler.command_mode, c.sampler.command)},
                           {"template", c.sampler.template_init},
                           {"items", out_items}};
  write_json_atomic(fs::path(o.out) / "contours.json", doc);
  std::printf("sampled %zu images x %d draws into %s\n", items.size(), c.sampler.samples, o.out.c_str());
  return 0;
}

int cmd_eval(const Options& o) {
  require(o.data, "--data");
  require(o.checkpoint, "--checkpoint");
  require(o.out, "--out");
  const RunConfig c = resolve_config(o);
  const LoadedModel m = load_model(o.checkpoint);
  const std::vector<DatasetRecord> records = load_records(o.data, c.sampler.split, m.ckpt.model.n_points);
  const std::vector<EvalItem> items = eval_items(records, c.sampler.max_images);
  if (items.empty()) throw ValidationError("no records in split '" + c.sampler.split + "'");
  const int w = items.front().image->width, h = items.front().image->height;
  const MetricsReport report = evaluate(items, model_sampler(*m.model, m.sched, c.sampler, m.templates, c.seed), w, h);
  nlohmann::json j = to_json(report);
  j["sampler"] = {{"split", c.sampler.split},
                  {"seed", c.seed},
                  {"samples", c.sampler.samples},
                  {"guidance", guidance_text(c.sampler.guidance)},
                  {"command", command_mode_text(c.sampler.command_mode, c.sampler.command)},
                  {"template", c.sampler.template_init}};
  write_json_atomic(fs::path(o.out) / "metrics.json", j);
  const std::string text = format_report(report);
  write_file_atomic(fs::path(o.out) / "metrics.txt", text);
  std::fputs(text.c_str(), stdout);
  return 0;
}

int cmd_render(const Options& o) {
  require(o.data, "--data");
  require(o.out, "--out");
  const RunConfig c = resolve_config(o);
  std::vector<DatasetRecord> records = load_split(DatasetPaths{o.data}, c.sampler.split);
  std::map<std::string, std::vector<Contour>> predicted;
  if (!o.predictions.empty()) {
    const nlohmann::json doc = read_json(o.predictions);
    try {
      for (const auto& item : doc.at("items")) {
        std::vector<Contour>& dst = predicted[item.at("image_ref").get<std::string>()];
        for (const auto& s : item.at("samples")) dst.push_back(contour_from_json(s));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(o.predictions + ": " + e.what());
    }
  }
  std::size_t written = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (c.sampler.max_images > 0 && static_cast<int>(written) >= c.sampler.max_images) break;
    const FreespaceSample& s = records[i].sample;
    const auto it = predicted.find(s.image_ref);
    if (!o.predictions.empty() && it == predicted.end()) continue;
    const std::vector<Contour> none;
    const RgbImage img = render_overlay(*s.image, &s.contour, it == predicted.end() ? none : it->second, s.obstacles);
    char name[32];
    std::snprintf(name, sizeof(name), "%05zu_", i);
    write_file_atomic(fs::path(o.out) / (name + file_safe(s.image_ref) + ".ppm"), encode_ppm(img));
    ++written;
  }
  std::printf("rendered %zu overlays into %s\n", written, o.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Free-space contour diffusion: data generation, training, sampling and evaluation"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config_path, "Run configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Global seed (overrides the config)");

  auto add_common = [&](CLI::App* sub) {
    sub->fallthrough();
    sub->add_option("--out", o.out, "Output directory");
  };
  auto add_sampling = [&](CLI::App* sub) {
    sub->add_option("--data", o.data, "Dataset directory")->required();
    sub->add_option("--samples", o.samples, "Draws per image (default 6)");
    sub->add_option("--guidance", o.guidance, "off | obstacle:<lambda>");
    sub->add_option("--command", o.command, "none | all | <command name>");
    sub->add_option("--template", o.template_mode, "on | off");
    sub->add_option("--split", o.split, "Dataset split (default val)");
  };

  CLI::App* synth = app.add_subcommand("synth", "Generate synthetic driving logs and dataset shards");
  add_common(synth);
  CLI::App* build = app.add_subcommand("build-data", "Rebuild shards from the logs of a dataset directory");
  add_common(build);
  build->add_option("--data", o.data, "Dataset directory")->required();
  CLI::App* train = app.add_subcommand("train", "Train the denoiser");
  add_common(train);
  train->add_option("--data", o.data, "Dataset directory")->required();
  train->add_option("--checkpoint", o.checkpoint, "Resume from this checkpoint");
  CLI::App* sample = app.add_subcommand("sample", "Sample contours and write overlays");
  add_common(sample);
  add_sampling(sample);
  sample->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(eval);
  add_sampling(eval);
  eval->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
  CLI::App* render = app.add_subcommand("render", "Draw ground truth and predictions");
  add_common(render);
  render->add_option("--data", o.data, "Dataset directory")->required();
  render->add_option("--predictions", o.predictions, "contours.json written by sample");
  render->add_option("--split", o.split, "Dataset split (default val)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) return cmd_synth(o);
    if (*build) return cmd_build_data(o);
    if (*train) return cmd_train(o);
    if (*sample) return cmd_sample(o);
    if (*eval) return cmd_eval(o);
    if (*render) return cmd_render(o);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
