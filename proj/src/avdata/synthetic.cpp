#include "afcv/avdata/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>

#include "afcv/core/error.hpp"
#include "afcv/core/rng.hpp"

namespace afcv::avdata {

namespace {

constexpr double kSquareHalfSide = 0.85;  // relative to radius
constexpr int kSpawnAttempts = 500;

struct Sprite {
  int instance_id;
  int class_id;
  ShapeKind shape;
  double radius;
  double cx, cy;
  double vx, vy;
  std::array<double, 3> color;
  double phase;
};

double bounding_radius(ShapeKind shape, double radius) {
  return shape == ShapeKind::square ? radius * kSquareHalfSide * std::numbers::sqrt2 : radius;
}

bool covers(const Sprite& s, double px, double py) {
  const double dx = px - s.cx;
  const double dy = py - s.cy;
  switch (s.shape) {
    case ShapeKind::circle:
      return dx * dx + dy * dy <= s.radius * s.radius;
    case ShapeKind::square: {
      const double h = s.radius * kSquareHalfSide;
      return std::abs(dx) <= h && std::abs(dy) <= h;
    }
    case ShapeKind::triangle: {
      // Equilateral, apex up, inscribed in the radius circle.
      const double r = s.radius;
      const double ax = 0, ay = -r;
      const double bx = r * std::cos(std::numbers::pi / 6), by = r * 0.5;
      const double cx = -bx, cy = by;
      auto edge = [&](double x0, double y0, double x1, double y1) {
        return (x1 - x0) * (dy - y0) - (y1 - y0) * (dx - x0);
      };
      const double e0 = edge(ax, ay, bx, by);
      const double e1 = edge(bx, by, cx, cy);
      const double e2 = edge(cx, cy, ax, ay);
      return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
    }
  }
  return false;
}

void reflect(double& pos, double& vel, double lo, double hi) {
  if (pos < lo) {
    pos = 2 * lo - pos;
    vel = -vel;
  } else if (pos > hi) {
    pos = 2 * hi - pos;
    vel = -vel;
  }
  pos = std::clamp(pos, lo, hi);
}

std::vector<int> draw_classes(const SyntheticSceneConfig& cfg, Rng& rng) {
  std::vector<int> allowed(cfg.num_classes());
  for (int c = 0; c < cfg.num_classes(); ++c) allowed[c] = c;
  std::vector<int> picked;
  for (int i = 0; i < cfg.shapes_per_clip; ++i) {
    const int cls = allowed[rng.uniform_int(0, static_cast<int>(allowed.size()) - 1)];
    picked.push_back(cls);
    if (!cfg.exclusive_lookalikes) continue;
    const auto& style = cfg.classes[cls];
    std::erase_if(allowed, [&](int other) {
      const auto& o = cfg.classes[other];
      return other != cls && o.shape == style.shape && o.color == style.color;
    });
  }
  return picked;
}

}  // namespace

std::string to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::circle:
      return "circle";
    case ShapeKind::square:
      return "square";
    case ShapeKind::triangle:
      return "triangle";
  }
  return "?";
}

ShapeKind shape_kind_from_string(const std::string& name) {
  if (name == "circle") return ShapeKind::circle;
  if (name == "square") return ShapeKind::square;
  if (name == "triangle") return ShapeKind::triangle;
  throw ConfigError("unknown shape '" + name + "'");
}

void SyntheticSceneConfig::validate() const {
  if (classes.empty()) throw ConfigError("scene needs at least one class");
  std::set<double> tones;
  for (const auto& c : classes) {
    if (!(c.tone_hz > 0) || c.tone_hz >= sample_rate / 2.0) {
      throw ConfigError("class '" + c.name + "' tone must lie in (0, sample_rate/2)");
    }
    if (!tones.insert(c.tone_hz).second) {
      throw ConfigError("tone map is not injective: two classes share " +
                        std::to_string(c.tone_hz) + " Hz");
    }
  }
  if (height < 32 || width < 32) throw ConfigError("frame size must be at least 32x32");
  if (frames_per_clip < 1) throw ConfigError("frames_per_clip must be >= 1");
  if (shapes_per_clip < 0) throw ConfigError("shapes_per_clip must be >= 0");
  if (!(min_radius >= 1) || max_radius < min_radius) throw ConfigError("invalid radius range");
  if (min_speed < 0 || max_speed < min_speed) throw ConfigError("invalid speed range");
  if (!(fps > 0) || sample_rate <= 0) throw ConfigError("fps and sample_rate must be positive");
  if (audio_channels != 1 && audio_channels != 2) throw ConfigError("audio_channels must be 1 or 2");
  double widest = 0;
  for (const auto& c : classes) widest = std::max(widest, bounding_radius(c.shape, max_radius));
  if (2 * widest >= std::min(height, width)) throw ConfigError("shapes do not fit in the frame");
  const double footprint = shapes_per_clip * (2 * widest) * (2 * widest);
  if (footprint > static_cast<double>(height) * width) {
    throw ConfigError(std::to_string(shapes_per_clip) +
                      " shapes cannot be spawned without full occlusion in a " +
                      std::to_string(height) + "x" + std::to_string(width) + " frame");
  }
}

SyntheticSceneConfig SyntheticSceneConfig::lookalike_default() {
  SyntheticSceneConfig cfg;
  cfg.classes = {
      {"circle_low", ShapeKind::circle, {0.85, 0.25, 0.2}, 500.0},
      {"square", ShapeKind::square, {0.25, 0.8, 0.3}, 1000.0},
      {"circle_high", ShapeKind::circle, {0.85, 0.25, 0.2}, 1750.0},
  };
  return cfg;
}

std::vector<int> lookalike_classes(const SyntheticSceneConfig& config) {
  std::vector<int> out;
  for (int a = 0; a < config.num_classes(); ++a) {
    for (int b = 0; b < config.num_classes(); ++b) {
      const auto& x = config.classes[a];
      const auto& y = config.classes[b];
      if (a != b && x.shape == y.shape && x.color == y.color) {
        out.push_back(a);
        break;
      }
    }
  }
  return out;
}

std::string clip_name(int clip_index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "clip_%05d", clip_index);
  return buf;
}

VideoClip generate_clip(const SyntheticSceneConfig& cfg, int clip_index) {
  cfg.validate();
  Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(clip_index)));
  const int h = cfg.height;
  const int w = cfg.width;

  std::vector<Sprite> sprites;
  const auto classes = draw_classes(cfg, rng);
  for (int i = 0; i < cfg.shapes_per_clip; ++i) {
    Sprite s{};
    s.instance_id = i + 1;
    s.class_id = classes[i];
    const auto& style = cfg.classes[s.class_id];
    s.shape = style.shape;
    s.radius = rng.uniform(cfg.min_radius, cfg.max_radius);
    const double br = bounding_radius(s.shape, s.radius);
    // Rejection-sample a non-overlapping spawn; keep the best-separated
    // candidate if the frame is crowded.
    double best_gap = -1e9;
    for (int attempt = 0; attempt < kSpawnAttempts; ++attempt) {
      const double x = rng.uniform(br, w - br);
      const double y = rng.uniform(br, h - br);
      double gap = 1e9;
      for (const auto& o : sprites) {
        gap = std::min(gap, std::hypot(x - o.cx, y - o.cy) - br - bounding_radius(o.shape, o.radius));
      }
      if (gap > best_gap) {
        best_gap = gap;
        s.cx = x;
        s.cy = y;
      }
      if (gap >= 0) break;
    }
    const double speed = rng.uniform(cfg.min_speed, cfg.max_speed);
    const double angle = rng.uniform(0.0, 2 * std::numbers::pi);
    s.vx = speed * std::cos(angle);
    s.vy = speed * std::sin(angle);
    for (int c = 0; c < 3; ++c) {
      s.color[c] = std::clamp(style.color[c] + rng.uniform(-cfg.color_jitter, cfg.color_jitter), 0.0, 1.0);
    }
    s.phase = rng.uniform(0.0, 2 * std::numbers::pi);
    sprites.push_back(s);
  }

  VideoClip clip;
  clip.clip_id = clip_name(clip_index);
  clip.fps = cfg.fps;
  // presence[f][i]: sprite i visible in frame f; pan[f][i]: horizontal position in [0, 1].
  std::vector<std::vector<bool>> presence(cfg.frames_per_clip, std::vector<bool>(sprites.size()));
  std::vector<std::vector<double>> pan(cfg.frames_per_clip, std::vector<double>(sprites.size()));

  std::vector<int> owner(static_cast<std::size_t>(h) * w);
  for (int f = 0; f < cfg.frames_per_clip; ++f) {
    Frame frame({3, h, w});
    std::fill(owner.begin(), owner.end(), -1);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        // Later sprites are drawn on top.
        for (int i = static_cast<int>(sprites.size()) - 1; i >= 0; --i) {
          if (covers(sprites[i], x + 0.5, y + 0.5)) {
            owner[static_cast<std::size_t>(y) * w + x] = i;
            break;
          }
        }
        const int o = owner[static_cast<std::size_t>(y) * w + x];
        for (int c = 0; c < 3; ++c) {
          const double base = o >= 0 ? sprites[o].color[c] : 0.15;
          const double noise = rng.uniform(-cfg.background_noise, cfg.background_noise);
          frame.at(c, y, x) = std::clamp(base + noise, 0.0, 1.0);
        }
      }
    }
    std::vector<InstanceAnnotation> anns;
    for (std::size_t i = 0; i < sprites.size(); ++i) {
      InstanceAnnotation ann;
      ann.instance_id = sprites[i].instance_id;
      ann.class_id = sprites[i].class_id;
      ann.mask = BinaryMask(h, w);
      for (std::size_t p = 0; p < owner.size(); ++p) ann.mask.bits[p] = owner[p] == static_cast<int>(i);
      if (ann.mask.area() == 0) continue;
      ann.bbox = tight_bbox(ann.mask);
      presence[f][i] = true;
      pan[f][i] = sprites[i].cx / w;
      anns.push_back(std::move(ann));
    }
    clip.frames.push_back(std::move(frame));
    clip.annotations.push_back(std::move(anns));

    for (auto& s : sprites) {
      const double br = bounding_radius(s.shape, s.radius);
      s.cx += s.vx;
      s.cy += s.vy;
      reflect(s.cx, s.vx, br, w - br);
      reflect(s.cy, s.vy, br, h - br);
    }
  }

  // Audio: sum of the tones of on-screen instances, panned by position.
  auto& audio = clip.audio;
  audio.sample_rate = cfg.sample_rate;
  const auto n = static_cast<std::size_t>(
      std::llround(cfg.frames_per_clip / cfg.fps * cfg.sample_rate));
  audio.channels.assign(cfg.audio_channels, std::vector<double>(n, 0.0));
  for (std::size_t t = 0; t < n; ++t) {
    const int f = std::min(cfg.frames_per_clip - 1,
                           static_cast<int>(std::floor(t * cfg.fps / cfg.sample_rate)));
    for (std::size_t i = 0; i < sprites.size(); ++i) {
      if (!presence[f][i]) continue;
      const double v = std::sin(2 * std::numbers::pi * cfg.tone_of(sprites[i].class_id) * t /
                                    cfg.sample_rate +
                                sprites[i].phase);
      if (cfg.audio_channels == 1) {
        audio.channels[0][t] += v;
      } else {
        audio.channels[0][t] += v * (1.0 - 0.5 * pan[f][i]);
        audio.channels[1][t] += v * (0.5 + 0.5 * pan[f][i]);
      }
    }
  }
  double peak = 0;
  for (const auto& ch : audio.channels) {
    for (double v : ch) peak = std::max(peak, std::abs(v));
  }
  if (peak > 0) {
    for (auto& ch : audio.channels) {
      for (double& v : ch) v /= peak;
    }
  }
  return clip;
}

}  // namespace afcv::avdata
