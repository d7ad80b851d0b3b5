#include <cmath>

#include "doctest.h"
#include "fsdiff/pipeline.hpp"

using namespace fsdiff;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fsdiff_test_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

nn::DenoiserConfig tiny_model() {
  nn::DenoiserConfig m;
  m.feature_dim = 8;
  m.pos_dim = 8;
  m.blocks = 1;
  m.heads = 2;
  m.mlp_ratio = 2;
  m.stage1_channels = 4;
  m.stage2_channels = 8;
  return m;
}

RunConfig small_run() {
  RunConfig c;
  c.seed = 21;
  c.synth.episodes = {{Topology::kStraight, 2, 1, 3.5, 0, 1, {}}, {Topology::kTJunction, 2, 1, 3.5, 0, 0, {}}};
  c.synth.pose_stride = 12;
  c.synth.validation_fraction = 0.5;
  c.synth.records_per_shard = 5;
  c.model = tiny_model();
  c.train.steps = 6;
  c.train.batch_size = 2;
  c.train.lr = 1e-3;
  c.train.template_k = 2;
  return c;
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), root).string();
    if (rel == "manifest.json") continue;
    out[rel] = read_file(e.path());
  }
  return out;
}

}  // namespace

TEST_CASE("run config defaults mirror the published training constants") {
  const RunConfig c;
  CHECK(c.train.lr == 1e-4);
  CHECK(c.train.batch_size == 64);
  CHECK(c.model.t_max == 50);
  CHECK(c.model.n_points == 50);
  CHECK(c.build.n_points == 50);
  CHECK(c.model.blocks == 6);
  CHECK(c.sampler.samples == 6);
  CHECK(c.train.template_k == 32);
  CHECK_FALSE(c.sampler.guidance.enabled);
  CHECK(c.sampler.guidance.lambda == 0.5);
}

TEST_CASE("run config json") {
  const RunConfig c = small_run();
  const nlohmann::json j = to_json(c);
  CHECK(to_json(run_config_from_json(j)) == j);
  CHECK(to_json(run_config_from_json(nlohmann::json::object())) == to_json(RunConfig{}));

  CHECK_THROWS_AS(run_config_from_json({{"sead", 1}}), ValidationError);
  CHECK_THROWS_AS(run_config_from_json({{"train", {{"stpes", 1}}}}), ValidationError);
  CHECK_THROWS_AS(run_config_from_json({{"model", {{"width", 1}}}}), ValidationError);
  CHECK_THROWS_AS(run_config_from_json({{"synth", {{"episodes", {{{"topology", "loop"}}}}}}}), ValidationError);
  CHECK_THROWS_AS(run_config_from_json({{"train", {{"lr", "fast"}}}}), ValidationError);
  CHECK_THROWS_AS(run_config_from_json({{"build", {{"n_points", 40}}}}), ValidationError);
  CHECK_THROWS_AS(run_config_from_json({{"train", {{"command_dropout", 1.5}}}}), ValidationError);

  const RunConfig g = run_config_from_json({{"sampler", {{"guidance", "obstacle:0.25"}, {"command", "all"}}}});
  CHECK(g.sampler.guidance.enabled);
  CHECK(g.sampler.guidance.lambda == 0.25);
  CHECK(g.sampler.command_mode == CommandMode::kAll);
}

TEST_CASE("guidance and command flags") {
  CHECK_FALSE(parse_guidance("off").enabled);
  CHECK(parse_guidance("obstacle:2").lambda == 2.0);
  for (const char* bad : {"on", "obstacle:", "obstacle:-1", "obstacle:0", "obstacle:1x", "obstacle:nan"}) {
    CHECK_THROWS_AS(parse_guidance(bad), ValidationError);
  }
  CHECK(parse_guidance(guidance_text(parse_guidance("obstacle:0.3"))).lambda == 0.3);
  CommandMode mode;
  Command cmd = Command::kFollowLane;
  parse_command_mode("turn-left", &mode, &cmd);
  CHECK(mode == CommandMode::kFixed);
  CHECK(cmd == Command::kTurnLeft);
  CHECK(command_mode_text(mode, cmd) == "turn-left");
  CHECK_THROWS_AS(parse_command_mode("reverse", &mode, &cmd), ValidationError);
}

TEST_CASE("synth dataset is deterministic and rebuildable") {
  const RunConfig c = small_run();
  const fs::path a = scratch("a"), b = scratch("b");
  const DatasetSummary sa = synth_dataset(c, DatasetPaths{a});
  const DatasetSummary sb = synth_dataset(c, DatasetPaths{b});
  CHECK(sa.failures == 0);
  CHECK(sa.episodes == 4);
  REQUIRE(sa.records > 0);
  CHECK(sa.manifest.at("scenarios").contains("straight"));
  CHECK(sa.manifest.at("scenarios").contains("t_junction"));
  CHECK(manifest_without_metadata(sa.manifest) == manifest_without_metadata(sb.manifest));
  CHECK(tree_bytes(a) == tree_bytes(b));

  std::size_t listed = 0;
  for (const auto& s : sa.manifest.at("shards")) {
    CHECK(s.at("records").get<std::size_t>() <= 5);
    listed += s.at("records").get<std::size_t>();
  }
  CHECK(listed == sa.records);
  const auto train = load_split(DatasetPaths{a}, "train");
  const auto val = load_split(DatasetPaths{a}, "val");
  CHECK(train.size() + val.size() == sa.records);
  CHECK_FALSE(val.empty());
  for (const auto& r : train) REQUIRE(r.sample.image);

  // Rebuilding from the logs reproduces the shards.
  const std::map<std::string, std::string> before = tree_bytes(a);
  const DatasetSummary rebuilt = build_data(c, DatasetPaths{a});
  CHECK(rebuilt.records == sa.records);
  CHECK(tree_bytes(a) == before);
  CHECK(manifest_without_metadata(rebuilt.manifest) == manifest_without_metadata(sa.manifest));

  RunConfig empty = c;
  empty.synth.episodes.clear();
  const fs::path e = scratch("empty");
  const DatasetSummary se = synth_dataset(empty, DatasetPaths{e});
  CHECK(se.records == 0);
  CHECK(se.manifest.at("shards").empty());
  CHECK(load_split(DatasetPaths{e}, "train").empty());

  RunConfig infeasible = c;
  infeasible.synth.episodes = {{Topology::kTJunction, 1, 1, 3.5, 0, 0, Command::kGoStraight}};
  const DatasetSummary sf = synth_dataset(infeasible, DatasetPaths{e});
  CHECK(sf.failures == 1);
  CHECK(sf.manifest.at("failures").size() == 1);
  for (const fs::path& p : {a, b, e}) fs::remove_all(p);
}

TEST_CASE("templates") {
  std::vector<DatasetRecord> recs(3);
  for (int i = 0; i < 3; ++i) {
    recs[i].sample.command = i < 2 ? Command::kTurnLeft : Command::kTurnRight;
    recs[i].sample.contour.points = {{0.1 * i, 0.0}, {1.0, 0.5}, {0.0, 1.0}};
  }
  const TemplateSet t = compute_templates(recs, 2);
  REQUIRE(t.means.size() == 1);
  CHECK(t.means.at(Command::kTurnLeft)(0, 0) == doctest::Approx(0.05));
  const TemplateSet back = templates_from_json(nlohmann::json::parse(to_json(t).dump()));
  CHECK(back.means.at(Command::kTurnLeft) == t.means.at(Command::kTurnLeft));
  CHECK_THROWS_AS(templates_from_json({{"fly", nlohmann::json::array()}}), ValidationError);
}

TEST_CASE("draw plans") {
  TemplateSet t;
  t.means[Command::kTurnLeft] = Mat::Zero(4, 2);
  t.means[Command::kTurnRight] = Mat::Ones(4, 2);
  SamplerSettings s;
  const auto plain = plan_draws(s, t, 1, 0);
  REQUIRE(plain.size() == 6);
  for (const auto& d : plain) {
    CHECK(d.init == InitKind::kGaussian);
    CHECK_FALSE(d.command);
  }
  CHECK(plain[0].seed != plain[1].seed);
  CHECK(plan_draws(s, t, 1, 1)[0].seed != plain[0].seed);
  CHECK(plan_draws(s, t, 1, 0)[3].seed == plain[3].seed);

  s.command_mode = CommandMode::kAll;
  const auto all = plan_draws(s, t, 1, 0);
  for (int d = 0; d < 6; ++d) CHECK(*all[d].command == kAllCommands[d]);

  s.command_mode = CommandMode::kNone;
  s.template_init = true;
  const auto tmpl = plan_draws(s, t, 1, 0);
  CHECK(tmpl[0].init == InitKind::kTemplate);
  CHECK(*tmpl[0].template_mean == t.means.at(Command::kTurnLeft));
  CHECK(*tmpl[1].template_mean == t.means.at(Command::kTurnRight));
  CHECK(*tmpl[2].template_mean == t.means.at(Command::kTurnLeft));

  s.command_mode = CommandMode::kAll;
  CHECK_THROWS_AS(plan_draws(s, t, 1, 0), ValidationError);
  s.command_mode = CommandMode::kNone;
  CHECK_THROWS_AS(plan_draws(s, TemplateSet{}, 1, 0), ValidationError);
}

TEST_CASE("training resumes bit-stably") {
  const RunConfig c = small_run();
  const fs::path data = scratch("train_data");
  synth_dataset(c, DatasetPaths{data});
  const auto records = load_split(DatasetPaths{data}, "train");
  REQUIRE_FALSE(records.empty());

  Trainer full(c.model, c.train, c.seed, make_examples(records));
  std::vector<double> losses;
  while (!full.finished()) losses.push_back(full.step());
  CHECK(full.current_step() == 6);
  for (double l : losses) CHECK(std::isfinite(l));

  Trainer first(c.model, c.train, c.seed, make_examples(records));
  for (int i = 0; i < 3; ++i) CHECK(first.step() == losses[i]);
  const std::string bytes = nn::encode_checkpoint(first.checkpoint());
  Trainer resumed(nn::decode_checkpoint(bytes, "mem"), make_examples(records));
  CHECK(resumed.current_step() == 3);
  for (int i = 3; i < 6; ++i) CHECK(resumed.step() == losses[i]);
  CHECK(resumed.finished());
  CHECK(nn::encode_checkpoint(resumed.checkpoint()) == nn::encode_checkpoint(full.checkpoint()));

  nn::Checkpoint bare = full.checkpoint();
  bare.adam.reset();
  CHECK_THROWS_AS(Trainer(bare, make_examples(records)), ValidationError);
  CHECK_THROWS_AS(Trainer(c.model, c.train, c.seed, {}), ValidationError);
  fs::remove_all(data);
}

TEST_CASE("run_training writes checkpoints and a resumable loss log") {
  RunConfig c = small_run();
  c.train.checkpoint_every = 2;
  const fs::path data = scratch("run_data"), out = scratch("run_out"), out2 = scratch("run_out2");
  synth_dataset(c, DatasetPaths{data});
  const auto records = load_split(DatasetPaths{data}, "train");

  Trainer t(c.model, c.train, c.seed, make_examples(records));
  int logs = 0;
  run_training(t, {out, [&](std::int64_t, double) { ++logs; }});
  CHECK(logs == 1);
  for (const char* f : {"ckpt_00000002.bin", "ckpt_00000004.bin", "ckpt_00000006.bin", "final.bin", "loss.csv"}) {
    CHECK(fs::exists(out / f));
  }
  const std::string log = read_file(out / "loss.csv");
  CHECK(std::count(log.begin(), log.end(), '\n') == 7);

  // Resume from step 2 in a copy of the output directory.
  fs::create_directories(out2);
  fs::copy_file(out / "loss.csv", out2 / "loss.csv");
  Trainer r(nn::load_checkpoint(out / "ckpt_00000002.bin"), make_examples(records));
  run_training(r, {out2, {}});
  CHECK(read_file(out2 / "loss.csv") == log);
  CHECK(read_file(out2 / "final.bin") == read_file(out / "final.bin"));
  for (const fs::path& p : {data, out, out2}) fs::remove_all(p);
}

TEST_CASE("overlay matches the image size") {
  SemanticImage img(32, 16);
  img.at(SemanticImage::kRoad, 3, 3) = 1;
  Contour c;
  c.points = {{-0.5, 0.5}, {0.5, 0.5}, {0.0, -0.5}};
  const std::vector<Contour> preds{c};
  const std::vector<ObstacleBox> boxes{{2, 2, 6, 6, std::nullopt}};
  const RgbImage o = render_overlay(img, &c, preds, boxes);
  CHECK(o.width == 32);
  CHECK(o.height == 16);
  CHECK(o.rgb.size() == 32 * 16 * 3);
  CHECK(contour_from_json(nlohmann::json::parse(to_json(c).dump())) == c);
}
