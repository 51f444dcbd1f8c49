#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "afcv/avdata/synthetic.hpp"
#include "afcv/avdata/types.hpp"

namespace afcv::avdata {

namespace fs = std::filesystem;

// On-disk clip layout:
//   <clip>/frames/00000.ppm ...   16-bit binary PPM (P6, maxval 65535)
//   <clip>/audio.wav              16-bit linear PCM, 1 or 2 channels
//   <clip>/annotations.json       per-frame instances with run-length masks

inline constexpr const char* kFramesDir = "frames";
inline constexpr const char* kAudioFile = "audio.wav";
inline constexpr const char* kAnnotationFile = "annotations.json";
inline constexpr const char* kManifestFile = "manifest.json";

void write_ppm16(const fs::path& path, const Frame& frame);
Frame read_ppm16(const fs::path& path);

void write_wav16(const fs::path& path, const AudioTrack& track);
AudioTrack read_wav16(const fs::path& path);

/// Alternating run lengths over the row-major mask, starting with a 0-run.
std::vector<std::uint32_t> rle_encode(const BinaryMask& mask);
BinaryMask rle_decode(const std::vector<std::uint32_t>& counts, int height, int width);

void save_clip(const VideoClip& clip, const fs::path& dir);
/// Throws IoError naming the missing or corrupt file.
VideoClip load_clip(const fs::path& dir);

struct ManifestEntry {
  std::string split;
  std::string clip_id;
  int num_frames = 0;
};

struct Manifest {
  int format_version = 1;
  double fps = 0;
  int sample_rate = 0;
  std::vector<std::string> class_names;
  SyntheticSceneConfig scene;
  std::vector<ManifestEntry> clips;

  std::vector<ManifestEntry> split(const std::string& name) const;
};

nlohmann::json scene_to_json(const SyntheticSceneConfig& cfg);
SyntheticSceneConfig scene_from_json(const nlohmann::json& j);

void write_manifest(const fs::path& root, const Manifest& manifest);
Manifest read_manifest(const fs::path& root);

fs::path clip_dir(const fs::path& root, const ManifestEntry& entry);

/// Generates `train_clips` + `val_clips` clips (indices are contiguous, train
/// first) and writes them with a manifest.
Manifest write_synthetic_dataset(const fs::path& root, const SyntheticSceneConfig& cfg,
                                 int train_clips, int val_clips);

/// Loads every clip of a split. Clips missing frames or audio are skipped and
/// logged rather than failing the whole split.
std::vector<VideoClip> load_split(const fs::path& root, const std::string& split);

}  // namespace afcv::avdata
