#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "fsdiff/bytes.hpp"
#include "fsdiff/freespace.hpp"

namespace fsdiff {

/// Image payload: magic "FSDIMG\0\0", u32 width, u32 height, u32 channels,
/// then per channel a u32 run count and (u32 length, f32 value) runs.
std::string encode_image(const SemanticImage& image);
SemanticImage decode_image(std::string_view bytes, const std::string& source);

/// u32 width, u32 height, u32 run count, then u32 run lengths alternating
/// between unset and set cells, starting with unset.
void write_mask_rle(ByteWriter& out, const ImageMask& mask);
ImageMask read_mask_rle(ByteReader& in);

nlohmann::json to_json(const CameraModel& cam);
CameraModel camera_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ObstacleBox& box);
ObstacleBox obstacle_box_from_json(const nlohmann::json& j);

/// Log directory: index.json (camera, ego size, per-frame pose, command,
/// obstacles and image file) plus images/<file>.img payloads.
void write_log(const std::filesystem::path& dir, const DrivingLog& log);
DrivingLog read_log(const std::filesystem::path& dir, bool load_images = true);

struct DatasetRecord {
  std::string scenario;
  FreespaceSample sample;
  bool operator==(const DatasetRecord& o) const;
};

inline constexpr std::uint32_t kShardVersion = 1;

/// Shard: magic "FSDSHRD\0", u32 version, u64 record count, then u64-length
/// framed records. A record holds image ref, scenario, frame, command byte,
/// contour (u32 count, f64 pairs), obstacle boxes and the RLE mask. Images
/// are not embedded.
std::string encode_shard(std::span<const DatasetRecord> records);
std::vector<DatasetRecord> decode_shard(std::string_view bytes, const std::string& source);
void write_shard(const std::filesystem::path& path, std::span<const DatasetRecord> records);
std::vector<DatasetRecord> read_shard(const std::filesystem::path& path);

/// Maps image refs to payload files by scanning <root>/*/index.json.
class ImageStore {
 public:
  explicit ImageStore(std::filesystem::path logs_root);

  bool contains(const std::string& ref) const { return files_.count(ref) != 0; }
  /// Loads (and caches) the image; throws RuntimeError for unknown refs.
  std::shared_ptr<const SemanticImage> load(const std::string& ref);

 private:
  std::map<std::string, std::filesystem::path> files_;
  std::map<std::string, std::shared_ptr<const SemanticImage>> cache_;
};

/// Dataset directory layout produced by the synth and build-data verbs.
struct DatasetPaths {
  std::filesystem::path root;

  std::filesystem::path manifest() const { return root / "manifest.json"; }
  std::filesystem::path logs() const { return root / "logs"; }
  std::filesystem::path shards() const { return root / "shards"; }
};

/// Reads every shard of `split` listed in the manifest, in manifest order,
/// and attaches images when requested.
std::vector<DatasetRecord> load_split(const DatasetPaths& paths, const std::string& split, bool with_images = true);

void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

/// Binary PPM (P6) writer, 8-bit RGB, row-major.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(3) * w * h, 0) {}
  void set(int col, int row, std::uint8_t r, std::uint8_t g, std::uint8_t b);
};

std::string encode_ppm(const RgbImage& image);
RgbImage decode_ppm(std::string_view bytes, const std::string& source);

}  // namespace fsdiff
