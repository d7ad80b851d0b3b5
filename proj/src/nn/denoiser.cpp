#include "fsdiff/nn/denoiser.hpp"

#include <cmath>
#include <random>
#include <string>

namespace fsdiff::nn {

void DenoiserConfig::validate() const {
  if (feature_dim < 1 || pos_dim < 4) throw ValidationError("denoiser: feature_dim and pos_dim must be positive");
  if (pos_dim % 4 != 0) throw ValidationError("denoiser: pos_dim must be divisible by 4");
  if (model_dim() % 2 != 0) throw ValidationError("denoiser: model dim must be even");
  if (heads < 1 || model_dim() % heads != 0) throw ValidationError("denoiser: model dim not divisible by heads");
  if (blocks < 1) throw ValidationError("denoiser: blocks must be >= 1");
  if (mlp_ratio < 1) throw ValidationError("denoiser: mlp_ratio must be >= 1");
  if (n_points < 3) throw ValidationError("denoiser: n_points must be >= 3");
  if (command_vocab < 1) throw ValidationError("denoiser: command_vocab must be >= 1");
  if (in_channels < 1 || stage1_channels < 1 || stage2_channels < 1) {
    throw ValidationError("denoiser: channel counts must be positive");
  }
  if (t_max < 1) throw ValidationError("denoiser: t_max must be >= 1");
}

nlohmann::json to_json(const DenoiserConfig& c) {
  return nlohmann::json{{"feature_dim", c.feature_dim},   {"pos_dim", c.pos_dim},
                        {"blocks", c.blocks},             {"heads", c.heads},
                        {"mlp_ratio", c.mlp_ratio},       {"n_points", c.n_points},
                        {"command_vocab", c.command_vocab}, {"in_channels", c.in_channels},
                        {"stage1_channels", c.stage1_channels}, {"stage2_channels", c.stage2_channels},
                        {"t_max", c.t_max},               {"zero_init_head", c.zero_init_head}};
}

DenoiserConfig denoiser_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("model config must be an object");
  DenoiserConfig c;
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "feature_dim") c.feature_dim = v.get<int>();
      else if (key == "pos_dim") c.pos_dim = v.get<int>();
      else if (key == "blocks") c.blocks = v.get<int>();
      else if (key == "heads") c.heads = v.get<int>();
      else if (key == "mlp_ratio") c.mlp_ratio = v.get<int>();
      else if (key == "n_points") c.n_points = v.get<int>();
      else if (key == "command_vocab") c.command_vocab = v.get<int>();
      else if (key == "in_channels") c.in_channels = v.get<int>();
      else if (key == "stage1_channels") c.stage1_channels = v.get<int>();
      else if (key == "stage2_channels") c.stage2_channels = v.get<int>();
      else if (key == "t_max") c.t_max = v.get<int>();
      else if (key == "zero_init_head") c.zero_init_head = v.get<bool>();
      else throw ValidationError("model config: unknown key '" + key + "'");
    } catch (const nlohmann::json::exception&) {
      throw ValidationError("model config: bad value for '" + key + "'");
    }
  }
  c.validate();
  return c;
}

Mat image_to_rows(const SemanticImage& image) {
  const int c = SemanticImage::kChannels;
  Mat rows(static_cast<Eigen::Index>(image.width) * image.height, c);
  for (int ch = 0; ch < c; ++ch) {
    for (int r = 0; r < image.height; ++r) {
      for (int x = 0; x < image.width; ++x) {
        rows(static_cast<Eigen::Index>(r) * image.width + x, ch) = image.at(ch, x, r);
      }
    }
  }
  return rows;
}

Mat fourier_pos_embed(const Mat& points, int dim) {
  if (dim % 4 != 0) throw ValidationError("fourier_pos_embed: dim must be divisible by 4");
  const int nf = dim / 4;
  Mat out(points.rows(), dim);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    for (int axis = 0; axis < 2; ++axis) {
      const double v = points(i, axis);
      double f = 1.0;
      for (int k = 0; k < nf; ++k, f *= 2.0) {
        out(i, axis * 2 * nf + k) = std::sin(f * v);
        out(i, axis * 2 * nf + nf + k) = std::cos(f * v);
      }
    }
  }
  return out;
}

Eigen::RowVectorXd sinusoidal_time_embed(int t, int dim, int t_max) {
  if (t < 0 || t > t_max) throw ValidationError("sinusoidal_time_embed: timestep out of range");
  if (dim < 2 || dim % 2 != 0) throw ValidationError("sinusoidal_time_embed: dim must be even");
  const int half = dim / 2;
  Eigen::RowVectorXd out(dim);
  for (int i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -2.0 * i / dim);
    out(i) = std::sin(t * freq);
    out(half + i) = std::cos(t * freq);
  }
  return out;
}

Denoiser::Denoiser(const DenoiserConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  build(seed);
}

Denoiser::Denoiser(const DenoiserConfig& config, ParamSet params) : config_(config) {
  config_.validate();
  build(0);
  if (params.size() != params_.size()) throw ValidationError("denoiser: parameter count mismatch");
  for (int i = 0; i < params_.size(); ++i) {
    if (params.name(i) != params_.name(i) || params.value(i).rows() != params_.value(i).rows() ||
        params.value(i).cols() != params_.value(i).cols()) {
      throw ValidationError("denoiser: parameter '" + params.name(i) + "' does not match the config");
    }
    params_.value(i) = params.value(i);
  }
}

void Denoiser::build(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto weight = [&](const std::string& name, int in, int out, double gain) {
    Mat w(in, out);
    const double scale = gain / std::sqrt(static_cast<double>(in));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = scale * normal(rng);
    params_.add(name + ".w", std::move(w));
    params_.add(name + ".b", Mat::Zero(1, out));
  };
  auto norm_layer = [&](const std::string& name, int dim) {
    params_.add(name + ".g", Mat::Ones(1, dim));
    params_.add(name + ".b", Mat::Zero(1, dim));
  };

  const DenoiserConfig& c = config_;
  const int d = c.model_dim();
  const double residual_gain = 1.0 / std::sqrt(2.0 * c.blocks);
  weight("enc.conv1", 9 * c.in_channels, c.stage1_channels, std::sqrt(2.0));
  weight("enc.conv2", 9 * c.stage1_channels, c.stage2_channels, std::sqrt(2.0));
  weight("enc.conv3", 9 * c.stage2_channels, c.feature_dim, std::sqrt(2.0));
  weight("time", d, d, 1.0);
  weight("cmd", c.command_vocab, d, 1.0);
  for (int b = 0; b < c.blocks; ++b) {
    const std::string pre = "block" + std::to_string(b);
    norm_layer(pre + ".ln1", d);
    weight(pre + ".qkv", d, 3 * d, 1.0);
    weight(pre + ".proj", d, d, residual_gain);
    norm_layer(pre + ".ln2", d);
    weight(pre + ".fc1", d, c.mlp_ratio * d, 1.0);
    weight(pre + ".fc2", c.mlp_ratio * d, d, residual_gain);
  }
  norm_layer("head.ln", d);
  weight("head.fc1", d, d, 1.0);
  weight("head.fc2", d, 2, 1.0);
  if (c.zero_init_head) params_.value(params_.find("head.fc2.w")).setZero();
}

int Denoiser::p(const char* name) const {
  const int i = params_.find(name);
  if (i < 0) throw RuntimeError(std::string("denoiser: missing parameter ") + name);
  return i;
}

Var Denoiser::encode(Tape& tape, std::span<const SemanticImage* const> images, FeatureMapShape* shape) const {
  if (images.empty()) throw ValidationError("encode: no images");
  const int w = images[0]->width, h = images[0]->height;
  if (w % 8 != 0 || h % 8 != 0 || w <= 0 || h <= 0) {
    throw ValidationError("encode: image dimensions must be positive multiples of 8");
  }
  Mat rows(static_cast<Eigen::Index>(images.size()) * w * h, config_.in_channels);
  if (config_.in_channels != SemanticImage::kChannels) throw ValidationError("encode: channel count mismatch");
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->width != w || images[i]->height != h) throw ValidationError("encode: image size mismatch");
    rows.middleRows(static_cast<Eigen::Index>(i) * w * h, static_cast<Eigen::Index>(w) * h) = image_to_rows(*images[i]);
  }
  FeatureMapShape s{static_cast<int>(images.size()), h, w, config_.in_channels};
  Var x = tape.constant(std::move(rows));
  const char* stages[3][2] = {{"enc.conv1.w", "enc.conv1.b"}, {"enc.conv2.w", "enc.conv2.b"}, {"enc.conv3.w", "enc.conv3.b"}};
  const int out_channels[3] = {config_.stage1_channels, config_.stage2_channels, config_.feature_dim};
  for (int k = 0; k < 3; ++k) {
    Var cols = tape.im2col(x, s);
    x = tape.silu(tape.linear(cols, tape.param(p(stages[k][0])), tape.param(p(stages[k][1]))));
    s = FeatureMapShape{s.batch, s.height / 2, s.width / 2, out_channels[k]};
  }
  if (shape) *shape = s;
  return x;
}

Var Denoiser::forward(Tape& tape, const DenoiserBatch& batch) const {
  FeatureMapShape shape;
  Var f = encode(tape, batch.images, &shape);
  return forward_with_features(tape, f, shape, batch);
}

Var Denoiser::forward_with_features(Tape& tape, Var features, FeatureMapShape shape, const DenoiserBatch& batch) const {
  const DenoiserConfig& c = config_;
  const int g = batch.groups();
  const int n = c.n_points;
  const int d = c.model_dim();
  if (g < 1) throw ValidationError("denoiser: empty batch");
  if (batch.points.rows() != static_cast<Eigen::Index>(g) * n || batch.points.cols() != 2) {
    throw ValidationError("denoiser: expected " + std::to_string(n) + " points per contour");
  }
  if (static_cast<int>(batch.image_of_group.size()) != g || static_cast<int>(batch.commands.size()) != g) {
    throw ValidationError("denoiser: batch field sizes disagree");
  }

  std::vector<int> map_of_row(static_cast<std::size_t>(g) * n);
  for (int gi = 0; gi < g; ++gi) {
    const int img = batch.image_of_group[static_cast<std::size_t>(gi)];
    if (img < 0 || img >= shape.batch) throw ValidationError("denoiser: image index out of range");
    std::fill_n(map_of_row.begin() + static_cast<std::ptrdiff_t>(gi) * n, n, img);
  }
  Var sampled = tape.bilinear_sample(features, shape, batch.points, map_of_row);
  Var pos = tape.constant(fourier_pos_embed(batch.points, c.pos_dim));
  Var point_tokens = tape.concat_cols(sampled, pos);

  Mat temb(g, d);
  for (int gi = 0; gi < g; ++gi) temb.row(gi) = sinusoidal_time_embed(batch.timesteps[static_cast<std::size_t>(gi)], d, c.t_max);
  Var time_tokens = tape.linear(tape.constant(std::move(temb)), tape.param(p("time.w")), tape.param(p("time.b")));

  std::vector<int> cmd_row(static_cast<std::size_t>(g), -1);
  int cmd_count = 0;
  for (int gi = 0; gi < g; ++gi) {
    if (batch.commands[static_cast<std::size_t>(gi)]) cmd_row[static_cast<std::size_t>(gi)] = cmd_count++;
  }
  std::vector<Var> parts{point_tokens, time_tokens};
  if (cmd_count > 0) {
    Mat onehot = Mat::Zero(cmd_count, c.command_vocab);
    for (int gi = 0; gi < g; ++gi) {
      const auto& cmd = batch.commands[static_cast<std::size_t>(gi)];
      if (!cmd) continue;
      const int idx = command_index(*cmd);
      if (idx < 0 || idx >= c.command_vocab) throw ValidationError("denoiser: unknown command");
      onehot(cmd_row[static_cast<std::size_t>(gi)], idx) = 1.0;
    }
    parts.push_back(tape.linear(tape.constant(std::move(onehot)), tape.param(p("cmd.w")), tape.param(p("cmd.b"))));
  }

  std::vector<RowRef> layout;
  std::vector<int> offsets{0};
  std::vector<RowRef> point_rows;
  layout.reserve(static_cast<std::size_t>(g) * (n + 2));
  point_rows.reserve(static_cast<std::size_t>(g) * n);
  for (int gi = 0; gi < g; ++gi) {
    for (int k = 0; k < n; ++k) {
      point_rows.push_back({0, static_cast<int>(layout.size())});
      layout.push_back({0, gi * n + k});
    }
    layout.push_back({1, gi});
    if (cmd_row[static_cast<std::size_t>(gi)] >= 0) layout.push_back({2, cmd_row[static_cast<std::size_t>(gi)]});
    offsets.push_back(static_cast<int>(layout.size()));
  }
  Var h = tape.stack_rows(parts, layout);

  for (int b = 0; b < c.blocks; ++b) {
    const std::string pre = "block" + std::to_string(b);
    auto P = [&](const std::string& suffix) { return tape.param(p((pre + suffix).c_str())); };
    Var a = tape.layer_norm(h, P(".ln1.g"), P(".ln1.b"));
    a = tape.linear(a, P(".qkv.w"), P(".qkv.b"));
    a = tape.attention(a, offsets, c.heads);
    a = tape.linear(a, P(".proj.w"), P(".proj.b"));
    h = tape.add(h, a);
    Var m = tape.layer_norm(h, P(".ln2.g"), P(".ln2.b"));
    m = tape.gelu(tape.linear(m, P(".fc1.w"), P(".fc1.b")));
    m = tape.linear(m, P(".fc2.w"), P(".fc2.b"));
    h = tape.add(h, m);
  }

  const Var only_points[] = {h};
  Var out = tape.stack_rows(only_points, point_rows);
  out = tape.layer_norm(out, tape.param(p("head.ln.g")), tape.param(p("head.ln.b")));
  out = tape.gelu(tape.linear(out, tape.param(p("head.fc1.w")), tape.param(p("head.fc1.b"))));
  return tape.linear(out, tape.param(p("head.fc2.w")), tape.param(p("head.fc2.b")));
}

FeatureMaps Denoiser::encode_images(std::span<const SemanticImage* const> images) const {
  Tape tape(&params_);
  FeatureMaps out;
  Var f = encode(tape, images, &out.shape);
  out.values = tape.value(f);
  return out;
}

Mat Denoiser::predict(const FeatureMaps& features, const DenoiserBatch& batch) const {
  Tape tape(&params_);
  Var f = tape.constant(features.values);
  return tape.value(forward_with_features(tape, f, features.shape, batch));
}

Mat Denoiser::predict(const SemanticImage& image, const Mat& points, int t, std::optional<Command> command) const {
  DenoiserBatch batch;
  batch.images = {&image};
  batch.points = points;
  batch.image_of_group = {0};
  batch.timesteps = {t};
  batch.commands = {command};
  Tape tape(&params_);
  return tape.value(forward(tape, batch));
}

}  // namespace fsdiff::nn
