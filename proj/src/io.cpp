#include "fsdiff/io.hpp"

#include <bit>
#include <cstdio>

namespace fsdiff {

namespace {

constexpr std::string_view kImageMagic{"FSDIMG\0\0", 8};
constexpr std::string_view kShardMagic{"FSDSHRD\0", 8};

Command command_from_json(const nlohmann::json& j) {
  const auto c = parse_command(j.get<std::string>());
  if (!c) throw ValidationError("unknown command name: " + j.get<std::string>());
  return *c;
}

std::string image_file_name(const std::string& ref) {
  std::string name = ref;
  for (char& ch : name) {
    if (ch == '/' || ch == '\\') ch = '_';
  }
  return name + ".img";
}

void write_box(ByteWriter& w, const ObstacleBox& b) {
  w.f64(b.x_min);
  w.f64(b.y_min);
  w.f64(b.x_max);
  w.f64(b.y_max);
  w.u8(b.bev_footprint ? 1 : 0);
  if (b.bev_footprint) {
    for (const Vec2& p : *b.bev_footprint) {
      w.f64(p.x);
      w.f64(p.y);
    }
  }
}

ObstacleBox read_box(ByteReader& r) {
  ObstacleBox b;
  b.x_min = r.f64();
  b.y_min = r.f64();
  b.x_max = r.f64();
  b.y_max = r.f64();
  const std::uint8_t has_bev = r.u8();
  if (has_bev > 1) throw RuntimeError(r.source() + ": bad obstacle flag");
  if (has_bev) {
    std::array<Vec2, 4> fp;
    for (Vec2& p : fp) {
      p.x = r.f64();
      p.y = r.f64();
    }
    b.bev_footprint = fp;
  }
  return b;
}

}  // namespace

std::string encode_image(const SemanticImage& image) {
  ByteWriter w;
  w.bytes(kImageMagic);
  w.u32(static_cast<std::uint32_t>(image.width));
  w.u32(static_cast<std::uint32_t>(image.height));
  w.u32(SemanticImage::kChannels);
  const std::size_t plane = static_cast<std::size_t>(image.width) * image.height;
  for (int ch = 0; ch < SemanticImage::kChannels; ++ch) {
    const float* v = image.data.data() + ch * plane;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> runs;
    for (std::size_t i = 0; i < plane;) {
      const std::uint32_t bits = std::bit_cast<std::uint32_t>(v[i]);
      std::size_t j = i + 1;
      while (j < plane && std::bit_cast<std::uint32_t>(v[j]) == bits) ++j;
      runs.emplace_back(static_cast<std::uint32_t>(j - i), bits);
      i = j;
    }
    w.u32(static_cast<std::uint32_t>(runs.size()));
    for (const auto& [len, bits] : runs) {
      w.u32(len);
      w.u32(bits);
    }
  }
  return w.take();
}

SemanticImage decode_image(std::string_view bytes, const std::string& source) {
  ByteReader r(bytes, source);
  if (r.bytes(kImageMagic.size()) != kImageMagic) throw RuntimeError(source + ": not an image payload");
  const std::uint32_t w = r.u32(), h = r.u32(), channels = r.u32();
  if (channels != SemanticImage::kChannels || w == 0 || h == 0 || w > 16384 || h > 16384) {
    throw RuntimeError(source + ": bad image header");
  }
  SemanticImage image(static_cast<int>(w), static_cast<int>(h));
  const std::size_t plane = static_cast<std::size_t>(w) * h;
  for (std::uint32_t ch = 0; ch < channels; ++ch) {
    float* v = image.data.data() + ch * plane;
    const std::uint32_t runs = r.u32();
    std::size_t pos = 0;
    for (std::uint32_t k = 0; k < runs; ++k) {
      const std::uint32_t len = r.u32();
      const float value = std::bit_cast<float>(r.u32());
      if (len == 0 || len > plane - pos) throw RuntimeError(source + ": bad image run");
      std::fill(v + pos, v + pos + len, value);
      pos += len;
    }
    if (pos != plane) throw RuntimeError(source + ": image runs do not cover the plane");
  }
  if (!r.done()) throw RuntimeError(source + ": trailing bytes after image");
  return image;
}

void write_mask_rle(ByteWriter& out, const ImageMask& mask) {
  out.u32(static_cast<std::uint32_t>(mask.width()));
  out.u32(static_cast<std::uint32_t>(mask.height()));
  std::vector<std::uint32_t> runs;
  std::uint8_t current = 0;
  std::uint32_t len = 0;
  for (std::uint8_t b : mask.bits()) {
    if ((b != 0) != (current != 0)) {
      runs.push_back(len);
      current = b != 0;
      len = 0;
    }
    ++len;
  }
  runs.push_back(len);
  out.u32(static_cast<std::uint32_t>(runs.size()));
  for (std::uint32_t r : runs) out.u32(r);
}

ImageMask read_mask_rle(ByteReader& in) {
  const std::uint32_t w = in.u32(), h = in.u32();
  if (w > 16384 || h > 16384) throw RuntimeError(in.source() + ": bad mask size");
  ImageMask mask(static_cast<int>(w), static_cast<int>(h));
  const std::size_t total = static_cast<std::size_t>(w) * h;
  const std::uint32_t count = in.u32();
  std::size_t pos = 0;
  auto bits = mask.bits();
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint32_t len = in.u32();
    if (len > total - pos) throw RuntimeError(in.source() + ": mask runs overflow");
    if (k % 2 == 1) std::fill(bits.begin() + pos, bits.begin() + pos + len, std::uint8_t{1});
    pos += len;
  }
  if (pos != total) throw RuntimeError(in.source() + ": mask runs do not cover the mask");
  return mask;
}

nlohmann::json to_json(const CameraModel& cam) {
  nlohmann::json rot = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) rot.push_back({cam.rotation(r, 0), cam.rotation(r, 1), cam.rotation(r, 2)});
  return {{"fx", cam.fx},
          {"fy", cam.fy},
          {"cx", cam.cx},
          {"cy", cam.cy},
          {"rotation", rot},
          {"height", cam.height},
          {"image_width", cam.image_width},
          {"image_height", cam.image_height}};
}

CameraModel camera_from_json(const nlohmann::json& j) {
  CameraModel cam;
  cam.fx = j.at("fx").get<double>();
  cam.fy = j.at("fy").get<double>();
  cam.cx = j.at("cx").get<double>();
  cam.cy = j.at("cy").get<double>();
  const auto& rot = j.at("rotation");
  if (!rot.is_array() || rot.size() != 3) throw ValidationError("camera rotation must be 3x3");
  for (int r = 0; r < 3; ++r) {
    if (!rot[r].is_array() || rot[r].size() != 3) throw ValidationError("camera rotation must be 3x3");
    for (int c = 0; c < 3; ++c) cam.rotation(r, c) = rot[r][c].get<double>();
  }
  cam.height = j.at("height").get<double>();
  cam.image_width = j.at("image_width").get<int>();
  cam.image_height = j.at("image_height").get<int>();
  try {
    cam.validate();
  } catch (const std::invalid_argument& e) {
    throw ValidationError(std::string("camera: ") + e.what());
  }
  return cam;
}

nlohmann::json to_json(const ObstacleBox& box) {
  nlohmann::json j{{"box", {box.x_min, box.y_min, box.x_max, box.y_max}}};
  if (box.bev_footprint) {
    nlohmann::json fp = nlohmann::json::array();
    for (const Vec2& p : *box.bev_footprint) fp.push_back({p.x, p.y});
    j["bev"] = fp;
  } else {
    j["bev"] = nullptr;
  }
  return j;
}

ObstacleBox obstacle_box_from_json(const nlohmann::json& j) {
  ObstacleBox b;
  const auto& box = j.at("box");
  if (!box.is_array() || box.size() != 4) throw ValidationError("obstacle box needs 4 numbers");
  b.x_min = box[0].get<double>();
  b.y_min = box[1].get<double>();
  b.x_max = box[2].get<double>();
  b.y_max = box[3].get<double>();
  const auto& bev = j.at("bev");
  if (!bev.is_null()) {
    if (!bev.is_array() || bev.size() != 4) throw ValidationError("obstacle footprint needs 4 points");
    std::array<Vec2, 4> fp;
    for (int i = 0; i < 4; ++i) fp[i] = {bev[i].at(0).get<double>(), bev[i].at(1).get<double>()};
    b.bev_footprint = fp;
  }
  return b;
}

void write_log(const std::filesystem::path& dir, const DrivingLog& log) {
  nlohmann::json frames = nlohmann::json::array();
  for (const LogFrame& f : log.frames) {
    nlohmann::json obstacles = nlohmann::json::array();
    for (const ObstacleBox& b : f.obstacles) obstacles.push_back(to_json(b));
    const std::string file = image_file_name(f.image_ref);
    frames.push_back({{"image_ref", f.image_ref},
                      {"image_file", f.image ? nlohmann::json("images/" + file) : nlohmann::json(nullptr)},
                      {"timestamp", f.timestamp},
                      {"pose", {f.pose.x, f.pose.y, f.pose.theta}},
                      {"command", std::string(command_name(f.command))},
                      {"obstacles", obstacles}});
    if (f.image) write_file_atomic(dir / "images" / file, encode_image(*f.image));
  }
  const nlohmann::json index{{"format", "fsdiff-log"},
                             {"version", 1},
                             {"camera", to_json(log.camera)},
                             {"ego_width", log.ego_width},
                             {"ego_length", log.ego_length},
                             {"frames", frames}};
  write_json_atomic(dir / "index.json", index);
}

DrivingLog read_log(const std::filesystem::path& dir, bool load_images) {
  const nlohmann::json index = read_json(dir / "index.json");
  try {
    if (index.at("format") != "fsdiff-log") throw ValidationError((dir / "index.json").string() + ": not a log index");
    DrivingLog log;
    log.camera = camera_from_json(index.at("camera"));
    log.ego_width = index.at("ego_width").get<double>();
    log.ego_length = index.at("ego_length").get<double>();
    for (const auto& jf : index.at("frames")) {
      LogFrame f;
      f.image_ref = jf.at("image_ref").get<std::string>();
      f.timestamp = jf.at("timestamp").get<double>();
      const auto& pose = jf.at("pose");
      f.pose = {pose.at(0).get<double>(), pose.at(1).get<double>(), pose.at(2).get<double>()};
      f.command = command_from_json(jf.at("command"));
      for (const auto& jb : jf.at("obstacles")) f.obstacles.push_back(obstacle_box_from_json(jb));
      if (load_images && !jf.at("image_file").is_null()) {
        const std::filesystem::path p = dir / jf.at("image_file").get<std::string>();
        f.image = std::make_shared<const SemanticImage>(decode_image(read_file(p), p.string()));
      }
      log.frames.push_back(std::move(f));
    }
    return log;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError((dir / "index.json").string() + ": " + e.what());
  }
}

bool DatasetRecord::operator==(const DatasetRecord& o) const {
  const FreespaceSample& a = sample;
  const FreespaceSample& b = o.sample;
  return scenario == o.scenario && a.image_ref == b.image_ref && a.frame == b.frame && a.contour == b.contour &&
         a.mask == b.mask && a.command == b.command && a.obstacles == b.obstacles;
}

std::string encode_shard(std::span<const DatasetRecord> records) {
  ByteWriter w;
  w.bytes(kShardMagic);
  w.u32(kShardVersion);
  w.u64(records.size());
  for (const DatasetRecord& rec : records) {
    const FreespaceSample& s = rec.sample;
    ByteWriter r;
    r.blob(s.image_ref);
    r.blob(rec.scenario);
    r.u32(static_cast<std::uint32_t>(s.frame));
    r.u8(static_cast<std::uint8_t>(s.command));
    r.u32(static_cast<std::uint32_t>(s.contour.points.size()));
    for (const Vec2& p : s.contour.points) {
      r.f64(p.x);
      r.f64(p.y);
    }
    r.u32(static_cast<std::uint32_t>(s.obstacles.size()));
    for (const ObstacleBox& b : s.obstacles) write_box(r, b);
    write_mask_rle(r, s.mask);
    w.blob(r.str());
  }
  return w.take();
}

std::vector<DatasetRecord> decode_shard(std::string_view bytes, const std::string& source) {
  ByteReader r(bytes, source);
  if (r.bytes(kShardMagic.size()) != kShardMagic) throw RuntimeError(source + ": not a dataset shard");
  if (r.u32() != kShardVersion) throw RuntimeError(source + ": unsupported shard version");
  const std::uint64_t count = r.u64();
  std::vector<DatasetRecord> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    ByteReader rec(r.blob(), source);
    DatasetRecord d;
    FreespaceSample& s = d.sample;
    s.image_ref = std::string(rec.blob());
    d.scenario = std::string(rec.blob());
    s.frame = static_cast<int>(rec.u32());
    const std::uint8_t cmd = rec.u8();
    if (cmd >= kCommandCount) throw RuntimeError(source + ": bad command byte");
    s.command = static_cast<Command>(cmd);
    const std::uint32_t n = rec.u32();
    if (n > rec.remaining() / 16) throw RuntimeError(source + ": bad contour length");
    s.contour.points.resize(n);
    for (Vec2& p : s.contour.points) {
      p.x = rec.f64();
      p.y = rec.f64();
    }
    const std::uint32_t boxes = rec.u32();
    if (boxes > rec.remaining() / 33) throw RuntimeError(source + ": bad obstacle count");
    for (std::uint32_t k = 0; k < boxes; ++k) s.obstacles.push_back(read_box(rec));
    s.mask = read_mask_rle(rec);
    if (!rec.done()) throw RuntimeError(source + ": trailing bytes in record");
    out.push_back(std::move(d));
  }
  if (!r.done()) throw RuntimeError(source + ": trailing bytes after records");
  return out;
}

void write_shard(const std::filesystem::path& path, std::span<const DatasetRecord> records) {
  write_file_atomic(path, encode_shard(records));
}

std::vector<DatasetRecord> read_shard(const std::filesystem::path& path) {
  return decode_shard(read_file(path), path.string());
}

ImageStore::ImageStore(std::filesystem::path logs_root) {
  if (!std::filesystem::is_directory(logs_root)) return;
  std::vector<std::filesystem::path> dirs;
  for (const auto& e : std::filesystem::directory_iterator(logs_root)) {
    if (e.is_directory() && std::filesystem::exists(e.path() / "index.json")) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) {
    const nlohmann::json index = read_json(dir / "index.json");
    for (const auto& f : index.at("frames")) {
      if (f.at("image_file").is_null()) continue;
      files_[f.at("image_ref").get<std::string>()] = dir / f.at("image_file").get<std::string>();
    }
  }
}

std::shared_ptr<const SemanticImage> ImageStore::load(const std::string& ref) {
  if (auto it = cache_.find(ref); it != cache_.end()) return it->second;
  const auto f = files_.find(ref);
  if (f == files_.end()) throw RuntimeError("no image payload for ref " + ref);
  auto img = std::make_shared<const SemanticImage>(decode_image(read_file(f->second), f->second.string()));
  cache_.emplace(ref, img);
  return img;
}

std::vector<DatasetRecord> load_split(const DatasetPaths& paths, const std::string& split, bool with_images) {
  const nlohmann::json manifest = read_json(paths.manifest());
  std::vector<DatasetRecord> out;
  std::optional<ImageStore> store;
  if (with_images) store.emplace(paths.logs());
  try {
    for (const auto& shard : manifest.at("shards")) {
      if (shard.at("split").get<std::string>() != split) continue;
      auto recs = read_shard(paths.shards() / shard.at("file").get<std::string>());
      for (auto& r : recs) {
        if (store) r.sample.image = store->load(r.sample.image_ref);
        out.push_back(std::move(r));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw RuntimeError(paths.manifest().string() + ": " + e.what());
  }
  return out;
}

void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& j) {
  write_file_atomic(path, j.dump(2) + "\n");
}

nlohmann::json read_json(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw RuntimeError(path.string() + ": " + e.what());
  }
}

void RgbImage::set(int col, int row, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  if (col < 0 || row < 0 || col >= width || row >= height) return;
  const std::size_t i = 3 * (static_cast<std::size_t>(row) * width + col);
  rgb[i] = r;
  rgb[i + 1] = g;
  rgb[i + 2] = b;
}

std::string encode_ppm(const RgbImage& image) {
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(image.rgb.data()), image.rgb.size());
  return out;
}

RgbImage decode_ppm(std::string_view bytes, const std::string& source) {
  int w = 0, h = 0, maxval = 0, consumed = 0;
  const std::string head(bytes.substr(0, std::min<std::size_t>(bytes.size(), 64)));
  if (std::sscanf(head.c_str(), "P6 %d %d %d%n", &w, &h, &maxval, &consumed) != 3 || maxval != 255 || w <= 0 ||
      h <= 0) {
    throw RuntimeError(source + ": not an 8-bit P6 image");
  }
  RgbImage img(w, h);
  const std::size_t start = static_cast<std::size_t>(consumed) + 1;
  if (bytes.size() != start + img.rgb.size()) throw RuntimeError(source + ": PPM size mismatch");
  std::copy(bytes.begin() + start, bytes.end(), img.rgb.begin());
  return img;
}

}  // namespace fsdiff
