#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "afcv/avdata/types.hpp"

namespace afcv::avdata {

enum class ShapeKind { circle, square, triangle };

std::string to_string(ShapeKind kind);
ShapeKind shape_kind_from_string(const std::string& name);

struct ClassStyle {
  std::string name;
  ShapeKind shape = ShapeKind::circle;
  std::array<double, 3> color{1.0, 1.0, 1.0};
  double tone_hz = 440.0;
};

/// Scene recipe for the moving-shapes generator. Classes that share shape and
/// color are visually identical; only their tones tell them apart.
struct SyntheticSceneConfig {
  std::vector<ClassStyle> classes;
  int shapes_per_clip = 2;
  int frames_per_clip = 6;
  int height = 64;
  int width = 64;
  double min_radius = 9.0;
  double max_radius = 14.0;
  double min_speed = 1.0;  // px/frame
  double max_speed = 4.0;
  double color_jitter = 0.06;
  double background_noise = 0.03;
  double fps = 10.0;
  int sample_rate = 16000;
  int audio_channels = 2;
  /// Never put two look-alike classes in one clip, so a clip's audio names
  /// which member of a look-alike group is on screen.
  bool exclusive_lookalikes = true;
  std::uint64_t seed = 0;

  int num_classes() const { return static_cast<int>(classes.size()); }
  double tone_of(int class_id) const { return classes.at(class_id).tone_hz; }

  /// Throws ConfigError on any invalid field.
  void validate() const;

  /// Three classes: two red circles told apart only by tone, one green square.
  static SyntheticSceneConfig lookalike_default();
};

/// Class ids whose visual style matches another class with a different tone.
std::vector<int> lookalike_classes(const SyntheticSceneConfig& config);

/// Deterministic in (config.seed, clip_index).
VideoClip generate_clip(const SyntheticSceneConfig& config, int clip_index);

std::string clip_name(int clip_index);

}  // namespace afcv::avdata
