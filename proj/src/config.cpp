#include "fsdiff/config.hpp"

#include <cmath>
#include <cstdlib>

#include "fsdiff/bytes.hpp"

namespace fsdiff {

namespace {

template <typename F>
void for_keys(const nlohmann::json& j, const std::string& section, F&& handle) {
  if (!j.is_object()) throw ValidationError(section + " must be an object");
  for (const auto& [key, v] : j.items()) {
    bool known = true;
    try {
      known = handle(key, v);
    } catch (const nlohmann::json::exception&) {
      throw ValidationError(section + ": bad value for '" + key + "'");
    }
    if (!known) throw ValidationError(section + ": unknown key '" + key + "'");
  }
}

EpisodeMix episode_from_json(const nlohmann::json& j) {
  EpisodeMix e;
  for_keys(j, "synth.episodes[]", [&](const std::string& key, const nlohmann::json& v) {
    if (key == "topology") {
      const auto t = parse_topology(v.get<std::string>());
      if (!t) throw ValidationError("synth.episodes[]: unknown topology '" + v.get<std::string>() + "'");
      e.topology = *t;
    } else if (key == "count") e.count = v.get<int>();
    else if (key == "lane_count") e.lane_count = v.get<int>();
    else if (key == "lane_width") e.lane_width = v.get<double>();
    else if (key == "min_obstacles") e.min_obstacles = v.get<int>();
    else if (key == "max_obstacles") e.max_obstacles = v.get<int>();
    else if (key == "command") {
      const auto c = parse_command(v.get<std::string>());
      if (!c) throw ValidationError("synth.episodes[]: unknown command '" + v.get<std::string>() + "'");
      e.command = *c;
    } else return false;
    return true;
  });
  return e;
}

nlohmann::json to_json(const EpisodeMix& e) {
  nlohmann::json j{{"topology", std::string(topology_name(e.topology))},
                   {"count", e.count},
                   {"lane_count", e.lane_count},
                   {"lane_width", e.lane_width},
                   {"min_obstacles", e.min_obstacles},
                   {"max_obstacles", e.max_obstacles}};
  if (e.command) j["command"] = std::string(command_name(*e.command));
  return j;
}

}  // namespace

GuidanceConfig parse_guidance(const std::string& text) {
  GuidanceConfig g;
  if (text == "off") return g;
  constexpr std::string_view prefix = "obstacle:";
  if (text.rfind(prefix, 0) != 0) throw ValidationError("guidance must be 'off' or 'obstacle:<lambda>'");
  const std::string num = text.substr(prefix.size());
  char* end = nullptr;
  const double lambda = std::strtod(num.c_str(), &end);
  if (num.empty() || end != num.c_str() + num.size() || !(lambda > 0.0) || !std::isfinite(lambda)) {
    throw ValidationError("guidance lambda must be a positive number");
  }
  g.enabled = true;
  g.lambda = lambda;
  return g;
}

std::string guidance_text(const GuidanceConfig& g) {
  if (!g.enabled) return "off";
  nlohmann::json num = g.lambda;
  return "obstacle:" + num.dump();
}

void parse_command_mode(const std::string& text, CommandMode* mode, Command* command) {
  if (text == "none") {
    *mode = CommandMode::kNone;
  } else if (text == "all") {
    *mode = CommandMode::kAll;
  } else if (const auto c = parse_command(text)) {
    *mode = CommandMode::kFixed;
    *command = *c;
  } else {
    throw ValidationError("command must be 'none', 'all' or a command name, got '" + text + "'");
  }
}

std::string command_mode_text(CommandMode mode, Command command) {
  switch (mode) {
    case CommandMode::kNone: return "none";
    case CommandMode::kAll: return "all";
    case CommandMode::kFixed: return std::string(command_name(command));
  }
  return "none";
}

void RunConfig::validate() const {
  model.validate();
  if (build.n_points != model.n_points) throw ValidationError("build.n_points must equal model.n_points");
  if (build.min_travel < 0.0 || build.frame_stride < 1) throw ValidationError("build: bad min_travel or frame_stride");
  for (const EpisodeMix& e : synth.episodes) {
    if (e.count < 0) throw ValidationError("synth.episodes[].count must be >= 0");
    if (e.min_obstacles < 0 || e.max_obstacles < e.min_obstacles) {
      throw ValidationError("synth.episodes[]: need 0 <= min_obstacles <= max_obstacles");
    }
  }
  if (synth.pose_stride < 1) throw ValidationError("synth.pose_stride must be >= 1");
  if (!(synth.tail_length > 0.0)) throw ValidationError("synth.tail_length must be positive");
  if (!(synth.validation_fraction >= 0.0 && synth.validation_fraction <= 1.0)) {
    throw ValidationError("synth.validation_fraction must be in [0, 1]");
  }
  if (synth.records_per_shard < 1) throw ValidationError("synth.records_per_shard must be >= 1");
  if (train.steps < 0 || train.batch_size < 1 || !(train.lr > 0.0) || train.draws < 1 || train.warmup_steps < 0) {
    throw ValidationError("train: need steps >= 0, batch_size >= 1, lr > 0, draws >= 1, warmup_steps >= 0");
  }
  if (!(train.command_dropout >= 0.0 && train.command_dropout <= 1.0)) {
    throw ValidationError("train.command_dropout must be in [0, 1]");
  }
  if (train.checkpoint_every < 0 || train.log_every < 1 || train.template_k < 1) {
    throw ValidationError("train: need checkpoint_every >= 0, log_every >= 1, template_k >= 1");
  }
  if (sampler.samples < 1) throw ValidationError("sampler.samples must be >= 1");
  if (sampler.guidance.enabled && !(sampler.guidance.lambda > 0.0)) throw ValidationError("guidance lambda must be > 0");
  if (sampler.max_images < 0) throw ValidationError("sampler.max_images must be >= 0");
}

nlohmann::json to_json(const TrainSettings& t) {
  return {{"steps", t.steps},
          {"batch_size", t.batch_size},
          {"lr", t.lr},
          {"warmup_steps", t.warmup_steps},
          {"draws", t.draws},
          {"command_dropout", t.command_dropout},
          {"checkpoint_every", t.checkpoint_every},
          {"log_every", t.log_every},
          {"template_k", t.template_k}};
}

TrainSettings train_settings_from_json(const nlohmann::json& j) {
  TrainSettings t;
  for_keys(j, "train", [&](const std::string& key, const nlohmann::json& v) {
    if (key == "steps") t.steps = v.get<std::int64_t>();
    else if (key == "batch_size") t.batch_size = v.get<int>();
    else if (key == "lr") t.lr = v.get<double>();
    else if (key == "warmup_steps") t.warmup_steps = v.get<std::int64_t>();
    else if (key == "draws") t.draws = v.get<int>();
    else if (key == "command_dropout") t.command_dropout = v.get<double>();
    else if (key == "checkpoint_every") t.checkpoint_every = v.get<std::int64_t>();
    else if (key == "log_every") t.log_every = v.get<std::int64_t>();
    else if (key == "template_k") t.template_k = v.get<int>();
    else return false;
    return true;
  });
  return t;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  for_keys(j, "config", [&](const std::string& key, const nlohmann::json& v) {
    if (key == "seed") {
      c.seed = v.get<std::uint64_t>();
    } else if (key == "synth") {
      for_keys(v, "synth", [&](const std::string& k, const nlohmann::json& s) {
        if (k == "episodes") {
          if (!s.is_array()) throw ValidationError("synth.episodes must be an array");
          c.synth.episodes.clear();
          for (const auto& e : s) c.synth.episodes.push_back(episode_from_json(e));
        } else if (k == "pose_stride") c.synth.pose_stride = s.get<int>();
        else if (k == "tail_length") c.synth.tail_length = s.get<double>();
        else if (k == "validation_fraction") c.synth.validation_fraction = s.get<double>();
        else if (k == "records_per_shard") c.synth.records_per_shard = s.get<int>();
        else return false;
        return true;
      });
    } else if (key == "build") {
      for_keys(v, "build", [&](const std::string& k, const nlohmann::json& s) {
        if (k == "min_travel") c.build.min_travel = s.get<double>();
        else if (k == "min_area") c.build.min_area = s.get<std::size_t>();
        else if (k == "n_points") c.build.n_points = s.get<int>();
        else if (k == "frame_stride") c.build.frame_stride = s.get<int>();
        else return false;
        return true;
      });
    } else if (key == "model") {
      c.model = nn::denoiser_config_from_json(v);
    } else if (key == "train") {
      c.train = train_settings_from_json(v);
    } else if (key == "sampler") {
      for_keys(v, "sampler", [&](const std::string& k, const nlohmann::json& s) {
        if (k == "samples") c.sampler.samples = s.get<int>();
        else if (k == "guidance") {
          const GuidanceConfig g = parse_guidance(s.get<std::string>());
          c.sampler.guidance.enabled = g.enabled;
          c.sampler.guidance.lambda = g.lambda;
        } else if (k == "guidance_from") c.sampler.guidance.active_from = s.get<int>();
        else if (k == "template") c.sampler.template_init = s.get<bool>();
        else if (k == "command") parse_command_mode(s.get<std::string>(), &c.sampler.command_mode, &c.sampler.command);
        else if (k == "split") c.sampler.split = s.get<std::string>();
        else if (k == "max_images") c.sampler.max_images = s.get<int>();
        else return false;
        return true;
      });
    } else {
      return false;
    }
    return true;
  });
  c.validate();
  return c;
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json episodes = nlohmann::json::array();
  for (const EpisodeMix& e : c.synth.episodes) episodes.push_back(to_json(e));
  return {{"seed", c.seed},
          {"synth",
           {{"episodes", episodes},
            {"pose_stride", c.synth.pose_stride},
            {"tail_length", c.synth.tail_length},
            {"validation_fraction", c.synth.validation_fraction},
            {"records_per_shard", c.synth.records_per_shard}}},
          {"build",
           {{"min_travel", c.build.min_travel},
            {"min_area", c.build.min_area},
            {"n_points", c.build.n_points},
            {"frame_stride", c.build.frame_stride}}},
          {"model", nn::to_json(c.model)},
          {"train", to_json(c.train)},
          {"sampler",
           {{"samples", c.sampler.samples},
            {"guidance", guidance_text(c.sampler.guidance)},
            {"guidance_from", c.sampler.guidance.active_from},
            {"template", c.sampler.template_init},
            {"command", command_mode_text(c.sampler.command_mode, c.sampler.command)},
            {"split", c.sampler.split},
            {"max_images", c.sampler.max_images}}}};
}

RunConfig load_run_config(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace fsdiff
