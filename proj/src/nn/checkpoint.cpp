#include "fsdiff/nn/checkpoint.hpp"

#include "fsdiff/bytes.hpp"
#include "fsdiff/common.hpp"

namespace fsdiff::nn {

namespace {

constexpr std::string_view kMagic{"FSDCKPT\0", 8};

void write_tensor(ByteWriter& w, const Mat& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) w.f64(m.data()[i]);
}

Mat read_tensor(ByteReader& r, Eigen::Index rows, Eigen::Index cols) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.f64();
  return m;
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json manifest = nlohmann::json::array();
  for (int i = 0; i < ckpt.params.size(); ++i) {
    manifest.push_back({{"name", ckpt.params.name(i)},
                        {"shape", {ckpt.params.value(i).rows(), ckpt.params.value(i).cols()}}});
  }
  nlohmann::json header{{"model", to_json(ckpt.model)},
                        {"step", ckpt.step},
                        {"meta", ckpt.meta},
                        {"tensors", manifest},
                        {"adam", ckpt.adam.has_value()}};
  if (ckpt.adam) header["adam_step"] = ckpt.adam->step;
  const std::string text = header.dump();

  ByteWriter w;
  w.bytes(kMagic);
  w.u32(kCheckpointVersion);
  w.blob(text);
  for (int i = 0; i < ckpt.params.size(); ++i) write_tensor(w, ckpt.params.value(i));
  if (ckpt.adam) {
    for (const Mat& m : ckpt.adam->m) write_tensor(w, m);
    for (const Mat& v : ckpt.adam->v) write_tensor(w, v);
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes, const std::string& source) {
  ByteReader r(bytes, source);
  if (r.remaining() < kMagic.size() || r.bytes(kMagic.size()) != kMagic) {
    throw RuntimeError(source + ": not a checkpoint file");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw RuntimeError(source + ": unsupported checkpoint version " + std::to_string(version));
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.blob());
  } catch (const nlohmann::json::exception& e) {
    throw RuntimeError(source + ": corrupt checkpoint header: " + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.model = denoiser_config_from_json(header.at("model"));
    ckpt.step = header.at("step").get<std::int64_t>();
    ckpt.meta = header.at("meta");
    std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes;
    for (const auto& t : header.at("tensors")) {
      const auto rows = t.at("shape").at(0).get<Eigen::Index>();
      const auto cols = t.at("shape").at(1).get<Eigen::Index>();
      if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) > r.remaining() / 8) {
        throw RuntimeError(source + ": tensor shape exceeds payload");
      }
      ckpt.params.add(t.at("name").get<std::string>(), read_tensor(r, rows, cols));
      shapes.emplace_back(rows, cols);
    }
    if (header.at("adam").get<bool>()) {
      AdamState s;
      s.step = header.at("adam_step").get<std::int64_t>();
      for (const auto& [rows, cols] : shapes) s.m.push_back(read_tensor(r, rows, cols));
      for (const auto& [rows, cols] : shapes) s.v.push_back(read_tensor(r, rows, cols));
      ckpt.adam = std::move(s);
    }
  } catch (const nlohmann::json::exception& e) {
    throw RuntimeError(source + ": corrupt checkpoint header: " + e.what());
  } catch (const ValidationError& e) {
    throw RuntimeError(source + ": " + e.what());
  }
  if (!r.done()) throw RuntimeError(source + ": trailing bytes after checkpoint payload");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path), path.string());
}

}  // namespace fsdiff::nn
