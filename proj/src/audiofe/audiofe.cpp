#include "afcv/audiofe/audiofe.hpp"

#include <fftw3.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <mutex>
#include <numbers>
#include <sstream>

#include "afcv/core/error.hpp"

namespace afcv::audiofe {

namespace {

// FFTW planning is not thread-safe; execution of distinct plans is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

class RealFft {
 public:
  explicit RealFft(int n) : n_(n) {
    in_ = static_cast<double*>(fftw_malloc(sizeof(double) * n));
    out_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)));
    std::lock_guard lock(planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(n, in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    {
      std::lock_guard lock(planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_; }
  void run() { fftw_execute(plan_); }
  double magnitude(int k) const { return std::hypot(out_[k][0], out_[k][1]); }

 private:
  int n_;
  double* in_;
  fftw_complex* out_;
  fftw_plan plan_;
};

void put_u32(std::string& s, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  s.append(b, 4);
}

}  // namespace

AudioTrack downmix(const AudioTrack& track) {
  if (track.num_channels() == 1) return track;
  if (track.num_channels() != 2) {
    throw ConfigError("unsupported audio format: " + std::to_string(track.num_channels()) +
                      " channels (expected 1 or 2)");
  }
  AudioTrack mono;
  mono.sample_rate = track.sample_rate;
  const auto& l = track.channels[0];
  const auto& r = track.channels[1];
  mono.channels.assign(1, std::vector<double>(l.size()));
  for (std::size_t i = 0; i < l.size(); ++i) mono.channels[0][i] = 0.5 * (l[i] + r[i]);
  return mono;
}

int frame_count(std::size_t num_samples, int window, int hop) {
  if (num_samples < static_cast<std::size_t>(window)) return 0;
  return 1 + static_cast<int>((num_samples - window) / hop);
}

Spectrogram compute_spectrogram(const AudioTrack& mono, const SpectrogramParams& params) {
  if (mono.num_channels() != 1) throw ConfigError("spectrogram expects mono audio; downmix first");
  if (params.hop < 1 || params.window < params.hop) throw ConfigError("spectrogram requires window >= hop >= 1");
  const auto& x = mono.channels[0];
  if (x.size() < static_cast<std::size_t>(params.window)) {
    throw DataError("signal too short: " + std::to_string(x.size()) + " samples < window " +
                    std::to_string(params.window));
  }
  const int n = params.window;
  const int bins = n / 2 + 1;
  const int cols = frame_count(x.size(), n, params.hop);

  std::vector<double> hann(n);
  for (int i = 0; i < n; ++i) hann[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);

  Spectrogram spec;
  spec.magnitudes = Tensor({bins, cols});
  spec.freq_resolution = static_cast<double>(mono.sample_rate) / n;
  spec.time_resolution = static_cast<double>(params.hop) / mono.sample_rate;
  RealFft fft(n);
  for (int j = 0; j < cols; ++j) {
    const double* src = x.data() + static_cast<std::size_t>(j) * params.hop;
    for (int i = 0; i < n; ++i) fft.input()[i] = src[i] * hann[i];
    fft.run();
    for (int k = 0; k < bins; ++k) {
      const double db = 20.0 * std::log10(fft.magnitude(k) + params.epsilon);
      spec.magnitudes[static_cast<std::size_t>(k) * cols + j] = std::max(db, params.db_floor);
    }
  }
  return spec;
}

std::vector<SpectrogramSlice> slice_per_frame(const Spectrogram& spec, int num_frames, const std::string& parent_id) {
  if (num_frames < 1) throw DataError("slice_per_frame needs at least one frame");
  const int total = spec.columns();
  if (total < num_frames) {
    throw DataError("too few spectrogram columns: " + std::to_string(total) + " for " +
                    std::to_string(num_frames) + " frames");
  }
  const int base = total / num_frames;
  const int bins = spec.bins();
  std::vector<SpectrogramSlice> slices;
  slices.reserve(num_frames);
  int start = 0;
  for (int f = 0; f < num_frames; ++f) {
    const int width = f + 1 == num_frames ? total - start : base;
    SpectrogramSlice s;
    s.magnitudes = Tensor({bins, width});
    s.frame_index = f;
    s.first_column = start;
    s.parent_id = parent_id;
    for (int k = 0; k < bins; ++k) {
      for (int j = 0; j < width; ++j) s.magnitudes[static_cast<std::size_t>(k) * width + j] = spec.at(k, start + j);
    }
    slices.push_back(std::move(s));
    start += width;
  }
  return slices;
}

Tensor slice_to_fixed(const SpectrogramSlice& slice, int target_columns) {
  if (slice.magnitudes.empty() || slice.width() < 1) throw DataError("cannot resample an empty slice");
  if (target_columns < 1) throw DataError("target column count must be positive");
  const int bins = slice.magnitudes.dim(0);
  const int width = slice.width();
  if (width == target_columns) return slice.magnitudes;
  Tensor out({bins, target_columns});
  for (int j = 0; j < target_columns; ++j) {
    const double pos = target_columns == 1 ? 0.5 * (width - 1)
                                           : static_cast<double>(j) * (width - 1) / (target_columns - 1);
    const int lo = static_cast<int>(std::floor(pos));
    const int hi = std::min(lo + 1, width - 1);
    const double t = pos - lo;
    for (int k = 0; k < bins; ++k) {
      const double a = slice.magnitudes[static_cast<std::size_t>(k) * width + lo];
      const double b = slice.magnitudes[static_cast<std::size_t>(k) * width + hi];
      out[static_cast<std::size_t>(k) * target_columns + j] = t == 0.0 ? a : a + t * (b - a);
    }
  }
  return out;
}

std::vector<SpectrogramSlice> clip_audio_slices(const avdata::VideoClip& clip, const SpectrogramParams& params) {
  const auto spec = compute_spectrogram(downmix(clip.audio), params);
  return slice_per_frame(spec, clip.num_frames(), clip.clip_id);
}

void write_slices(const std::filesystem::path& path, const std::vector<SpectrogramSlice>& slices) {
  if (slices.empty()) throw DataError("no slices to write");
  std::string s = "AFSL";
  put_u32(s, 1);
  put_u32(s, static_cast<std::uint32_t>(slices[0].magnitudes.dim(0)));
  put_u32(s, static_cast<std::uint32_t>(slices.size()));
  for (const auto& sl : slices) put_u32(s, static_cast<std::uint32_t>(sl.width()));
  for (const auto& sl : slices) {
    for (double v : sl.magnitudes.values()) {
      const auto f = static_cast<float>(v);
      char b[4];
      std::memcpy(b, &f, 4);
      s.append(b, 4);
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::vector<SpectrogramSlice> read_slices(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string s = ss.str();
  auto corrupt = [&](const char* why) { return IoError("corrupt slice file " + path.string() + ": " + why); };
  auto u32 = [&](std::size_t pos) {
    if (pos + 4 > s.size()) throw corrupt("truncated header");
    std::uint32_t v;
    std::memcpy(&v, s.data() + pos, 4);
    return v;
  };
  if (s.size() < 16 || s.compare(0, 4, "AFSL") != 0) throw corrupt("bad magic");
  if (u32(4) != 1) throw corrupt("unsupported version");
  const auto bins = static_cast<int>(u32(8));
  const auto frames = static_cast<int>(u32(12));
  std::vector<int> widths(frames);
  std::size_t pos = 16;
  for (auto& w : widths) {
    w = static_cast<int>(u32(pos));
    pos += 4;
  }
  std::vector<SpectrogramSlice> slices;
  int column = 0;
  for (int f = 0; f < frames; ++f) {
    SpectrogramSlice sl;
    sl.frame_index = f;
    sl.first_column = column;
    sl.magnitudes = Tensor({bins, widths[f]});
    const std::size_t n = sl.magnitudes.size();
    if (pos + n * 4 > s.size()) throw corrupt("truncated data");
    for (std::size_t i = 0; i < n; ++i) {
      float v;
      std::memcpy(&v, s.data() + pos + i * 4, 4);
      sl.magnitudes[i] = v;
    }
    pos += n * 4;
    column += widths[f];
    slices.push_back(std::move(sl));
  }
  return slices;
}

}  // namespace afcv::audiofe
