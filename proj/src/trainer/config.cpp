#include "afcv/trainer/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "afcv/core/error.hpp"

namespace afcv::trainer {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  return out;
}

std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& s) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError("'" + key + "': expected a number, got '" + s + "'");
  }
  return v;
}

long long parse_integer(const std::string& key, const std::string& s) {
  long long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError("'" + key + "': expected an integer, got '" + s + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("'" + key + "': expected true or false, got '" + s + "'");
}

struct Field {
  std::function<std::string()> get;
  std::function<void(const std::string& key, const std::string&)> set;
};

Field bind(double& v) {
  return {[&v] { return fmt(v); }, [&v](const std::string& k, const std::string& s) { v = parse_double(k, s); }};
}
Field bind(int& v) {
  return {[&v] { return std::to_string(v); },
          [&v](const std::string& k, const std::string& s) { v = static_cast<int>(parse_integer(k, s)); }};
}
Field bind(std::uint64_t& v) {
  return {[&v] { return std::to_string(v); }, [&v](const std::string& k, const std::string& s) {
            const long long x = parse_integer(k, s);
            if (x < 0) throw ConfigError("'" + k + "' must be non-negative");
            v = static_cast<std::uint64_t>(x);
          }};
}
Field bind(bool& v) {
  return {[&v] { return std::string(v ? "true" : "false"); },
          [&v](const std::string& k, const std::string& s) { v = parse_bool(k, s); }};
}
Field bind(std::vector<int>& v) {
  return {[&v] {
            std::string out;
            for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
            return out;
          },
          [&v](const std::string& k, const std::string& s) {
            v.clear();
            if (s.empty()) return;
            for (const auto& part : split(s, ',')) v.push_back(static_cast<int>(parse_integer(k, part)));
          }};
}
Field bind(std::vector<double>& v) {
  return {[&v] {
            std::string out;
            for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v[i]);
            return out;
          },
          [&v](const std::string& k, const std::string& s) {
            v.clear();
            if (s.empty()) return;
            for (const auto& part : split(s, ',')) v.push_back(parse_double(k, part));
          }};
}

// name:shape:r,g,b:tone entries separated by ';'
Field bind_classes(std::vector<avdata::ClassStyle>& classes) {
  return {[&classes] {
            std::string out;
            for (std::size_t i = 0; i < classes.size(); ++i) {
              const auto& c = classes[i];
              out += (i ? "; " : "") + c.name + ":" + avdata::to_string(c.shape) + ":" + fmt(c.color[0]) + "," +
                     fmt(c.color[1]) + "," + fmt(c.color[2]) + ":" + fmt(c.tone_hz);
            }
            return out;
          },
          [&classes](const std::string& k, const std::string& s) {
            classes.clear();
            for (const auto& entry : split(s, ';')) {
              if (entry.empty()) continue;
              const auto parts = split(entry, ':');
              if (parts.size() != 4) throw ConfigError("'" + k + "': class entry '" + entry + "' is not name:shape:r,g,b:tone");
              const auto rgb = split(parts[2], ',');
              if (rgb.size() != 3) throw ConfigError("'" + k + "': color of '" + parts[0] + "' needs 3 components");
              avdata::ClassStyle style;
              style.name = parts[0];
              try {
                style.shape = avdata::shape_kind_from_string(parts[1]);
              } catch (const Error& e) {
                throw ConfigError("'" + k + "': " + e.what());
              }
              for (int c = 0; c < 3; ++c) style.color[c] = parse_double(k, rgb[c]);
              style.tone_hz = parse_double(k, parts[3]);
              classes.push_back(style);
            }
          }};
}

Field bind_optimizer(OptimizerKind& v) {
  return {[&v] { return to_string(v); }, [&v](const std::string& k, const std::string& s) {
            if (s == "rmsprop") v = OptimizerKind::rmsprop;
            else if (s == "adam") v = OptimizerKind::adam;
            else throw ConfigError("'" + k + "': unknown optimizer '" + s + "' (expected rmsprop|adam)");
          }};
}

Field bind_fusion(segcore::FusionPoint& v) {
  return {[&v] { return segcore::to_string(v); },
          [&v](const std::string& k, const std::string& s) {
            try {
              v = segcore::fusion_point_from_string(s);
            } catch (const Error& e) {
              throw ConfigError("'" + k + "': " + e.what());
            }
          }};
}

std::map<std::string, Field> fields(ExperimentConfig& c) {
  auto& d = c.data;
  auto& m = c.model;
  auto& t = c.train;
  return {
      {"data.classes", bind_classes(d.classes)},
      {"data.shapes_per_clip", bind(d.shapes_per_clip)},
      {"data.frames_per_clip", bind(d.frames_per_clip)},
      {"data.height", bind(d.height)},
      {"data.width", bind(d.width)},
      {"data.min_radius", bind(d.min_radius)},
      {"data.max_radius", bind(d.max_radius)},
      {"data.min_speed", bind(d.min_speed)},
      {"data.max_speed", bind(d.max_speed)},
      {"data.color_jitter", bind(d.color_jitter)},
      {"data.background_noise", bind(d.background_noise)},
      {"data.fps", bind(d.fps)},
      {"data.sample_rate", bind(d.sample_rate)},
      {"data.audio_channels", bind(d.audio_channels)},
      {"data.exclusive_lookalikes", bind(d.exclusive_lookalikes)},
      {"data.seed", bind(d.seed)},
      {"data.val_fraction", bind(c.val_fraction)},

      {"model.visual_channels", bind(m.visual_channels)},
      {"model.audio_channels", bind(m.audio_channels)},
      {"model.audio_hidden", bind(m.audio_hidden)},
      {"model.audio_columns", bind(m.audio_columns)},
      {"model.tower_channels", bind(m.tower_channels)},
      {"model.mask_channels", bind(m.mask_channels)},
      {"model.mask_head_hidden", bind(m.mask_head_hidden)},
      {"model.embed_dim", bind(m.embed_dim)},
      {"model.fusion", bind_fusion(m.fusion)},

      {"input.min_size", bind(c.input.min_size)},
      {"input.max_size", bind(c.input.max_size)},
      {"audio.window", bind(c.input.spectrogram.window)},
      {"audio.hop", bind(c.input.spectrogram.hop)},
      {"audio.db_floor", bind(c.input.spectrogram.db_floor)},
      {"audio.enabled", bind(t.audio_enabled)},
      {"crossover.enabled", bind(t.crossover_enabled)},

      {"inference.score_threshold", bind(c.inference.score_threshold)},
      {"inference.nms_iou", bind(c.inference.nms_iou)},
      {"inference.max_detections", bind(c.inference.max_detections)},
      {"inference.mask_threshold", bind(c.inference.mask_threshold)},
      {"inference.track_similarity", bind(c.inference.track_similarity)},
      {"eval.thresholds", bind(c.eval.thresholds)},
      {"eval.max_tracks_per_video", bind(c.eval.max_tracks_per_video)},

      {"train.base_lr", bind(t.base_lr)},
      {"train.epochs", bind(t.epochs)},
      {"train.lr_milestones", bind(t.lr_milestones)},
      {"train.lr_gamma", bind(t.lr_gamma)},
      {"train.warmup_iters", bind(t.warmup_iters)},
      {"train.warmup_factor", bind(t.warmup_factor)},
      {"train.batch_clips", bind(t.batch_clips)},
      {"train.pairs_per_clip", bind(t.pairs_per_clip)},
      {"train.seed", bind(t.seed)},
      {"train.optimizer", bind_optimizer(t.optimizer)},
      {"train.rmsprop_alpha", bind(t.rmsprop_alpha)},
      {"train.adam_beta1", bind(t.adam_beta1)},
      {"train.adam_beta2", bind(t.adam_beta2)},
      {"train.optimizer_eps", bind(t.optimizer_eps)},
      {"train.grad_clip", bind(t.grad_clip)},
      {"train.delta_max", bind(t.delta_max)},
      {"train.mask_locations", bind(t.mask_locations)},
      {"train.embed_margin", bind(t.embed_margin)},
      {"train.focal_alpha", bind(t.focal_alpha)},
      {"train.focal_gamma", bind(t.focal_gamma)},
      {"loss.cls", bind(t.loss_weights.cls)},
      {"loss.loc", bind(t.loss_weights.loc)},
      {"loss.mask", bind(t.loss_weights.mask)},
      {"loss.crossover", bind(t.loss_weights.crossover)},
      {"loss.embed", bind(t.loss_weights.embed)},
  };
}

}  // namespace

std::string to_string(OptimizerKind k) { return k == OptimizerKind::rmsprop ? "rmsprop" : "adam"; }

ConfigMap parse_config_text(const std::string& text) {
  ConfigMap out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (out.count(key)) throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

ConfigMap load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::pair<std::string, std::string> parse_assignment(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || trim(text.substr(0, eq)).empty()) {
    throw ConfigError("expected key=value, got '" + text + "'");
  }
  return {trim(text.substr(0, eq)), trim(text.substr(eq + 1))};
}

void TrainConfig::validate() const {
  if (!(base_lr > 0)) throw ConfigError("train.base_lr must be positive");
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
  for (std::size_t i = 0; i < lr_milestones.size(); ++i) {
    if (i > 0 && lr_milestones[i] <= lr_milestones[i - 1]) {
      throw ConfigError("train.lr_milestones must be strictly increasing");
    }
    if (lr_milestones[i] < 0 || (epochs > 0 && lr_milestones[i] >= epochs)) {
      throw ConfigError("train.lr_milestones must lie in [0, train.epochs)");
    }
  }
  if (!(lr_gamma > 0)) throw ConfigError("train.lr_gamma must be positive");
  if (warmup_iters < 0) throw ConfigError("train.warmup_iters must be >= 0");
  if (!(warmup_factor > 0) || warmup_factor > 1) throw ConfigError("train.warmup_factor must lie in (0, 1]");
  if (batch_clips < 1) throw ConfigError("train.batch_clips must be >= 1");
  if (pairs_per_clip < 1) throw ConfigError("train.pairs_per_clip must be >= 1");
  const auto& w = loss_weights;
  for (double v : {w.cls, w.loc, w.mask, w.crossover, w.embed}) {
    if (!(v >= 0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and >= 0");
  }
  if (!(rmsprop_alpha > 0 && rmsprop_alpha < 1)) throw ConfigError("train.rmsprop_alpha must lie in (0, 1)");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 > 0 && adam_beta2 < 1)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(optimizer_eps > 0)) throw ConfigError("train.optimizer_eps must be positive");
  if (grad_clip < 0) throw ConfigError("train.grad_clip must be >= 0");
  if (delta_max < 1) throw ConfigError("train.delta_max must be >= 1");
  if (mask_locations < 1) throw ConfigError("train.mask_locations must be >= 1");
  if (!(embed_margin > 0)) throw ConfigError("train.embed_margin must be positive");
  if (!(focal_alpha >= 0 && focal_alpha <= 1) || focal_gamma < 0) throw ConfigError("invalid focal loss parameters");
}

void ExperimentConfig::sync_derived() {
  model.num_classes = data.num_classes();
  model.audio_bins = input.spectrogram.window / 2 + 1;
  model.audio_db_floor = input.spectrogram.db_floor;
  eval.num_classes = data.num_classes();
}

void ExperimentConfig::validate() const {
  data.validate();
  train.validate();
  if (!(val_fraction >= 0 && val_fraction < 1)) throw ConfigError("data.val_fraction must lie in [0, 1)");
  if (input.min_size < segcore::ModelConfig::kStride || input.min_size % segcore::ModelConfig::kStride != 0) {
    throw ConfigError("input.min_size must be a positive multiple of " + std::to_string(segcore::ModelConfig::kStride));
  }
  if (input.spectrogram.window < 2 || input.spectrogram.hop < 1) throw ConfigError("invalid audio window/hop");
  if (!(input.spectrogram.db_floor < 0)) throw ConfigError("audio.db_floor must be negative");
  if (eval.thresholds.empty()) throw ConfigError("eval.thresholds must not be empty");
  for (double t : eval.thresholds) {
    if (!(t > 0 && t <= 1)) throw ConfigError("eval.thresholds must lie in (0, 1]");
  }
  if (eval.max_tracks_per_video < 1) throw ConfigError("eval.max_tracks_per_video must be >= 1");
  if (inference.max_detections < 1) throw ConfigError("inference.max_detections must be >= 1");
}

ConfigMap to_config_map(const ExperimentConfig& cfg) {
  auto& mutable_cfg = const_cast<ExperimentConfig&>(cfg);  // getters only read
  ConfigMap out;
  for (const auto& [key, field] : fields(mutable_cfg)) out[key] = field.get();
  return out;
}

void apply_config(ExperimentConfig& cfg, const ConfigMap& values) {
  auto table = fields(cfg);
  for (const auto& [key, value] : values) {
    auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second.set(key, value);
  }
  cfg.sync_derived();
}

std::string format_config(const ConfigMap& map) {
  std::string out;
  for (const auto& [k, v] : map) out += k + " = " + v + "\n";
  return out;
}

std::vector<std::string> config_diff(const ConfigMap& a, const ConfigMap& b) {
  std::set<std::string> keys;
  for (const auto& [k, v] : a) keys.insert(k);
  for (const auto& [k, v] : b) keys.insert(k);
  std::vector<std::string> out;
  for (const auto& k : keys) {
    auto ia = a.find(k);
    auto ib = b.find(k);
    if (ia == a.end() || ib == b.end() || ia->second != ib->second) out.push_back(k);
  }
  return out;
}

}  // namespace afcv::trainer
