#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "afcv/avdata/types.hpp"
#include "afcv/core/tensor.hpp"

namespace afcv::audiofe {

using avdata::AudioTrack;

struct SpectrogramParams {
  int window = 1024;
  int hop = 256;
  double db_floor = -80.0;
  double epsilon = 1e-10;
};

/// Log-magnitude STFT, bins x columns. Column j covers samples
/// [j*hop, j*hop + window) under a periodic Hann window.
struct Spectrogram {
  Tensor magnitudes;  // [F, T], dB
  double freq_resolution = 0;  // Hz per bin
  double time_resolution = 0;  // seconds per column

  int bins() const { return magnitudes.dim(0); }
  int columns() const { return magnitudes.dim(1); }
  double at(int bin, int column) const { return magnitudes[static_cast<std::size_t>(bin) * columns() + column]; }
};

struct SpectrogramSlice {
  Tensor magnitudes;  // [F, width]
  int frame_index = 0;
  int first_column = 0;
  std::string parent_id;

  int width() const { return magnitudes.dim(1); }
};

/// Stereo -> mono by per-sample mean; mono passes through.
AudioTrack downmix(const AudioTrack& track);

/// Number of STFT columns for a signal of `num_samples`.
int frame_count(std::size_t num_samples, int window, int hop);

Spectrogram compute_spectrogram(const AudioTrack& mono, const SpectrogramParams& params = {});

/// Evenly divides the time axis into `num_frames` contiguous slices; the last
/// slice absorbs the remainder columns.
std::vector<SpectrogramSlice> slice_per_frame(const Spectrogram& spec, int num_frames,
                                              const std::string& parent_id = {});

/// Linear interpolation along time (end columns aligned) to exactly
/// `target_columns` columns. Returns [F, target_columns].
Tensor slice_to_fixed(const SpectrogramSlice& slice, int target_columns);

/// Full pipeline for one clip: downmix, spectrogram, per-frame slices.
std::vector<SpectrogramSlice> clip_audio_slices(const avdata::VideoClip& clip, const SpectrogramParams& params);

// audio_slices.bin: "AFSL" magic, u32 version, u32 F, u32 num_frames,
// u32 widths[num_frames], then float32 slices row-major [F, width_i].
inline constexpr const char* kSliceFile = "audio_slices.bin";

void write_slices(const std::filesystem::path& path, const std::vector<SpectrogramSlice>& slices);
std::vector<SpectrogramSlice> read_slices(const std::filesystem::path& path);

}  // namespace afcv::audiofe
