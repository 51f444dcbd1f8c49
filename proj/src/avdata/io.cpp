#include "afcv/avdata/io.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "afcv/core/error.hpp"

namespace afcv::avdata {

using nlohmann::json;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

std::string frame_filename(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05d.ppm", index);
  return buf;
}

void put_u16le(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}
void put_u32le(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
std::uint32_t get_le(const std::string& s, std::size_t pos, int bytes) {
  std::uint32_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[pos + i])) << (8 * i);
  return v;
}

json bbox_json(const BBox& b) { return json::array({b.x_min, b.y_min, b.x_max, b.y_max}); }

}  // namespace

void write_ppm16(const fs::path& path, const Frame& frame) {
  if (frame.rank() != 3 || frame.dim(0) != 3) throw ShapeError("PPM frames must be [3, H, W]");
  const int h = frame.dim(1);
  const int w = frame.dim(2);
  std::string bytes = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n65535\n";
  bytes.reserve(bytes.size() + static_cast<std::size_t>(h) * w * 6);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const auto v = static_cast<std::uint16_t>(std::lround(std::clamp(frame.at(c, y, x), 0.0, 1.0) * 65535.0));
        bytes.push_back(static_cast<char>(v >> 8));
        bytes.push_back(static_cast<char>(v & 0xff));
      }
    }
  }
  write_file(path, bytes);
}

Frame read_ppm16(const fs::path& path) {
  const std::string bytes = read_file(path);
  std::istringstream header(bytes);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  header >> magic >> w >> h >> maxval;
  if (!header || magic != "P6" || w <= 0 || h <= 0 || maxval != 65535) {
    throw IoError("corrupt frame file " + path.string() + ": expected 16-bit P6 header");
  }
  const auto offset = static_cast<std::size_t>(header.tellg()) + 1;
  const std::size_t need = static_cast<std::size_t>(w) * h * 6;
  if (bytes.size() < offset + need) throw IoError("corrupt frame file " + path.string() + ": truncated pixels");
  Frame frame({3, h, w});
  std::size_t p = offset;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const unsigned hi = static_cast<unsigned char>(bytes[p]);
        const unsigned lo = static_cast<unsigned char>(bytes[p + 1]);
        p += 2;
        frame.at(c, y, x) = static_cast<double>((hi << 8) | lo) / 65535.0;
      }
    }
  }
  return frame;
}

void write_wav16(const fs::path& path, const AudioTrack& track) {
  const int channels = track.num_channels();
  if (channels < 1) throw DataError("cannot write audio without channels");
  const auto n = static_cast<std::uint32_t>(track.num_samples());
  const std::uint32_t data_bytes = n * channels * 2;
  std::string s;
  s.reserve(44 + data_bytes);
  s += "RIFF";
  put_u32le(s, 36 + data_bytes);
  s += "WAVEfmt ";
  put_u32le(s, 16);
  put_u16le(s, 1);  // PCM
  put_u16le(s, static_cast<std::uint16_t>(channels));
  put_u32le(s, static_cast<std::uint32_t>(track.sample_rate));
  put_u32le(s, static_cast<std::uint32_t>(track.sample_rate * channels * 2));
  put_u16le(s, static_cast<std::uint16_t>(channels * 2));
  put_u16le(s, 16);
  s += "data";
  put_u32le(s, data_bytes);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (int c = 0; c < channels; ++c) {
      const auto v = static_cast<std::int16_t>(std::lround(std::clamp(track.channels[c][i], -1.0, 1.0) * 32767.0));
      put_u16le(s, static_cast<std::uint16_t>(v));
    }
  }
  write_file(path, s);
}

AudioTrack read_wav16(const fs::path& path) {
  const std::string s = read_file(path);
  auto corrupt = [&](const std::string& why) { return IoError("corrupt audio file " + path.string() + ": " + why); };
  if (s.size() < 12 || s.compare(0, 4, "RIFF") != 0 || s.compare(8, 4, "WAVE") != 0) throw corrupt("not RIFF/WAVE");
  std::size_t pos = 12;
  int channels = 0, bits = 0, format = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (pos + 8 <= s.size()) {
    const std::string id = s.substr(pos, 4);
    const std::uint32_t len = get_le(s, pos + 4, 4);
    pos += 8;
    if (pos + len > s.size()) throw corrupt("chunk '" + id + "' overruns file");
    if (id == "fmt ") {
      if (len < 16) throw corrupt("short fmt chunk");
      format = static_cast<int>(get_le(s, pos, 2));
      channels = static_cast<int>(get_le(s, pos + 2, 2));
      rate = get_le(s, pos + 4, 4);
      bits = static_cast<int>(get_le(s, pos + 14, 2));
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw corrupt("data before fmt");
      if (format != 1 || bits != 16) throw corrupt("only 16-bit linear PCM is supported");
      if (channels < 1) throw corrupt("zero channels");
      AudioTrack track;
      track.sample_rate = static_cast<int>(rate);
      const std::size_t n = len / (2u * channels);
      track.channels.assign(channels, std::vector<double>(n));
      for (std::size_t i = 0; i < n; ++i) {
        for (int c = 0; c < channels; ++c) {
          const auto raw = static_cast<std::int16_t>(get_le(s, pos + (i * channels + c) * 2, 2));
          track.channels[c][i] = raw / 32767.0;
        }
      }
      return track;
    }
    pos += len + (len & 1);
  }
  throw corrupt("no data chunk");
}

std::vector<std::uint32_t> rle_encode(const BinaryMask& mask) {
  std::vector<std::uint32_t> counts;
  std::uint8_t current = 0;
  std::uint32_t run = 0;
  for (auto b : mask.bits) {
    if (b != current) {
      counts.push_back(run);
      run = 0;
      current = b;
    }
    ++run;
  }
  counts.push_back(run);
  return counts;
}

BinaryMask rle_decode(const std::vector<std::uint32_t>& counts, int height, int width) {
  BinaryMask mask(height, width);
  std::size_t pos = 0;
  std::uint8_t value = 0;
  for (auto run : counts) {
    if (pos + run > mask.bits.size()) throw DataError("run-length counts exceed mask size");
    std::fill_n(mask.bits.begin() + static_cast<std::ptrdiff_t>(pos), run, value);
    pos += run;
    value ^= 1;
  }
  if (pos != mask.bits.size()) throw DataError("run-length counts do not cover the mask");
  return mask;
}

void save_clip(const VideoClip& clip, const fs::path& dir) {
  fs::create_directories(dir / kFramesDir);
  for (int f = 0; f < clip.num_frames(); ++f) write_ppm16(dir / kFramesDir / frame_filename(f), clip.frames[f]);
  write_wav16(dir / kAudioFile, clip.audio);

  json frames = json::array();
  for (int f = 0; f < clip.num_frames(); ++f) {
    json instances = json::array();
    for (const auto& a : clip.annotations[f]) {
      instances.push_back({{"instance_id", a.instance_id},
                           {"class_id", a.class_id},
                           {"bbox", bbox_json(a.bbox)},
                           {"mask_rle", rle_encode(a.mask)}});
    }
    frames.push_back({{"index", f}, {"instances", std::move(instances)}});
  }
  const json doc = {{"clip_id", clip.clip_id}, {"fps", clip.fps},
                    {"height", clip.height()}, {"width", clip.width()},
                    {"num_frames", clip.num_frames()}, {"frames", std::move(frames)}};
  write_file(dir / kAnnotationFile, doc.dump(1) + "\n");
}

VideoClip load_clip(const fs::path& dir) {
  const fs::path ann_path = dir / kAnnotationFile;
  if (!fs::exists(ann_path)) throw IoError("missing annotation file " + ann_path.string());
  json doc;
  try {
    doc = json::parse(read_file(ann_path));
  } catch (const json::exception& e) {
    throw IoError("corrupt annotation file " + ann_path.string() + ": " + e.what());
  }

  VideoClip clip;
  try {
    clip.clip_id = doc.at("clip_id").get<std::string>();
    clip.fps = doc.at("fps").get<double>();
    const int h = doc.at("height").get<int>();
    const int w = doc.at("width").get<int>();
    const int n = doc.at("num_frames").get<int>();
    for (int f = 0; f < n; ++f) {
      const fs::path frame_path = dir / kFramesDir / frame_filename(f);
      if (!fs::exists(frame_path)) throw IoError("missing frame file " + frame_path.string());
      clip.frames.push_back(read_ppm16(frame_path));
      if (clip.frames.back().dim(1) != h || clip.frames.back().dim(2) != w) {
        throw IoError("frame file " + frame_path.string() + " does not match annotated size");
      }
    }
    clip.annotations.resize(n);
    for (const auto& fr : doc.at("frames")) {
      const int f = fr.at("index").get<int>();
      if (f < 0 || f >= n) throw IoError("annotation file " + ann_path.string() + " has frame index out of range");
      for (const auto& inst : fr.at("instances")) {
        InstanceAnnotation a;
        a.instance_id = inst.at("instance_id").get<int>();
        a.class_id = inst.at("class_id").get<int>();
        const auto b = inst.at("bbox").get<std::vector<int>>();
        if (b.size() != 4) throw IoError("annotation file " + ann_path.string() + " has a malformed bbox");
        a.bbox = {b[0], b[1], b[2], b[3]};
        a.mask = rle_decode(inst.at("mask_rle").get<std::vector<std::uint32_t>>(), h, w);
        clip.annotations[f].push_back(std::move(a));
      }
    }
  } catch (const json::exception& e) {
    throw IoError("corrupt annotation file " + ann_path.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw IoError("corrupt annotation file " + ann_path.string() + ": " + e.what());
  }

  const fs::path audio_path = dir / kAudioFile;
  if (!fs::exists(audio_path)) throw IoError("missing audio file " + audio_path.string());
  clip.audio = read_wav16(audio_path);
  return clip;
}

std::vector<ManifestEntry> Manifest::split(const std::string& name) const {
  std::vector<ManifestEntry> out;
  std::copy_if(clips.begin(), clips.end(), std::back_inserter(out),
               [&](const ManifestEntry& e) { return e.split == name; });
  return out;
}

json scene_to_json(const SyntheticSceneConfig& cfg) {
  json classes = json::array();
  for (const auto& c : cfg.classes) {
    classes.push_back({{"name", c.name}, {"shape", to_string(c.shape)}, {"color", c.color}, {"tone_hz", c.tone_hz}});
  }
  return {{"classes", classes},
          {"shapes_per_clip", cfg.shapes_per_clip},
          {"frames_per_clip", cfg.frames_per_clip},
          {"height", cfg.height},
          {"width", cfg.width},
          {"min_radius", cfg.min_radius},
          {"max_radius", cfg.max_radius},
          {"min_speed", cfg.min_speed},
          {"max_speed", cfg.max_speed},
          {"color_jitter", cfg.color_jitter},
          {"background_noise", cfg.background_noise},
          {"fps", cfg.fps},
          {"sample_rate", cfg.sample_rate},
          {"audio_channels", cfg.audio_channels},
          {"exclusive_lookalikes", cfg.exclusive_lookalikes},
          {"seed", cfg.seed}};
}

SyntheticSceneConfig scene_from_json(const json& j) {
  SyntheticSceneConfig cfg;
  for (const auto& c : j.at("classes")) {
    cfg.classes.push_back({c.at("name").get<std::string>(), shape_kind_from_string(c.at("shape").get<std::string>()),
                           c.at("color").get<std::array<double, 3>>(), c.at("tone_hz").get<double>()});
  }
  cfg.shapes_per_clip = j.at("shapes_per_clip").get<int>();
  cfg.frames_per_clip = j.at("frames_per_clip").get<int>();
  cfg.height = j.at("height").get<int>();
  cfg.width = j.at("width").get<int>();
  cfg.min_radius = j.at("min_radius").get<double>();
  cfg.max_radius = j.at("max_radius").get<double>();
  cfg.min_speed = j.at("min_speed").get<double>();
  cfg.max_speed = j.at("max_speed").get<double>();
  cfg.color_jitter = j.at("color_jitter").get<double>();
  cfg.background_noise = j.at("background_noise").get<double>();
  cfg.fps = j.at("fps").get<double>();
  cfg.sample_rate = j.at("sample_rate").get<int>();
  cfg.audio_channels = j.at("audio_channels").get<int>();
  cfg.exclusive_lookalikes = j.at("exclusive_lookalikes").get<bool>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

void write_manifest(const fs::path& root, const Manifest& m) {
  json clips = json::array();
  for (const auto& e : m.clips) clips.push_back({{"split", e.split}, {"clip_id", e.clip_id}, {"num_frames", e.num_frames}});
  const json doc = {{"format_version", m.format_version}, {"fps", m.fps},
                    {"sample_rate", m.sample_rate}, {"class_names", m.class_names},
                    {"scene", scene_to_json(m.scene)}, {"clips", clips}};
  fs::create_directories(root);
  write_file(root / kManifestFile, doc.dump(1) + "\n");
}

Manifest read_manifest(const fs::path& root) {
  const fs::path path = root / kManifestFile;
  if (!fs::exists(path)) throw IoError("missing manifest " + path.string());
  try {
    const json doc = json::parse(read_file(path));
    Manifest m;
    m.format_version = doc.at("format_version").get<int>();
    if (m.format_version != 1) throw IoError("manifest " + path.string() + " has unsupported format_version");
    m.fps = doc.at("fps").get<double>();
    m.sample_rate = doc.at("sample_rate").get<int>();
    m.class_names = doc.at("class_names").get<std::vector<std::string>>();
    m.scene = scene_from_json(doc.at("scene"));
    for (const auto& e : doc.at("clips")) {
      m.clips.push_back({e.at("split").get<std::string>(), e.at("clip_id").get<std::string>(), e.at("num_frames").get<int>()});
    }
    return m;
  } catch (const json::exception& e) {
    throw IoError("corrupt manifest " + path.string() + ": " + e.what());
  }
}

fs::path clip_dir(const fs::path& root, const ManifestEntry& entry) { return root / entry.split / entry.clip_id; }

Manifest write_synthetic_dataset(const fs::path& root, const SyntheticSceneConfig& cfg, int train_clips,
                                 int val_clips) {
  cfg.validate();
  if (train_clips < 0 || val_clips < 0) throw ConfigError("clip counts must be non-negative");
  Manifest m;
  m.fps = cfg.fps;
  m.sample_rate = cfg.sample_rate;
  for (const auto& c : cfg.classes) m.class_names.push_back(c.name);
  m.scene = cfg;
  for (int i = 0; i < train_clips + val_clips; ++i) {
    const VideoClip clip = generate_clip(cfg, i);
    ManifestEntry e{i < train_clips ? "train" : "val", clip.clip_id, clip.num_frames()};
    save_clip(clip, clip_dir(root, e));
    m.clips.push_back(e);
  }
  write_manifest(root, m);
  return m;
}

std::vector<VideoClip> load_split(const fs::path& root, const std::string& split) {
  const Manifest m = read_manifest(root);
  std::vector<VideoClip> clips;
  for (const auto& e : m.split(split)) {
    const fs::path dir = clip_dir(root, e);
    if (!fs::exists(dir / kAudioFile) || !fs::exists(dir / kFramesDir)) {
      spdlog::warn("skipping {}: missing {}", dir.string(), fs::exists(dir / kAudioFile) ? "frames" : "audio");
      continue;
    }
    clips.push_back(load_clip(dir));
  }
  return clips;
}

}  // namespace afcv::avdata
