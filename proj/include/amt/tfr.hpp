#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace amt::tfr {

inline constexpr int kWorkingSampleRate = 22050;

struct AudioBuffer {
  std::vector<double> samples;
  int sample_rate = kWorkingSampleRate;

  double duration() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

enum class WavEncoding { kPcm16, kFloat32 };

/// Reads a RIFF/WAVE file (PCM16 or IEEE float32, mono or stereo).
/// Stereo is averaged to mono; PCM16 is divided by 32768 and float data is
/// clamped to [-1, 1].
AudioBuffer load_audio(const std::filesystem::path& path);

void save_wav(const std::filesystem::path& path, const AudioBuffer& audio,
              WavEncoding encoding = WavEncoding::kFloat32);

/// Windowed-sinc (Blackman-Harris window, 32 zero crossings) rate conversion.
AudioBuffer resample(const AudioBuffer& audio, int target_rate);

/// load_audio followed by conversion to the working rate when needed.
AudioBuffer load_working_audio(const std::filesystem::path& path);

double rms(std::span<const double> samples);

struct TfrConfig {
  int window_length = 4096;
  int hop = 256;
  int bins_per_octave = 36;
  double f_min = 27.5;
  double f_max = kWorkingSampleRate / 2.0;

  double frame_rate(int sample_rate) const {
    return static_cast<double>(sample_rate) / hop;
  }
  void validate(int sample_rate) const;
};

/// Number of log-frequency bins whose upper triangle edge stays at or below f_max.
int log_bin_count(const TfrConfig& cfg);
std::vector<double> log_bin_frequencies(const TfrConfig& cfg);

/// Frames produced for a signal of `length` samples (0 when shorter than a window).
int frame_count(std::size_t length, const TfrConfig& cfg);

struct Spectrogram {
  Eigen::MatrixXd values;  // bins x frames, non-negative magnitudes
  std::vector<double> bin_freqs;
  double frame_rate = 0.0;

  int bins() const { return static_cast<int>(values.rows()); }
  int frames() const { return static_cast<int>(values.cols()); }
};

/// Hann-windowed magnitude STFT mapped onto geometrically spaced bins by
/// unit-peak triangular filters that span the neighbouring bin centres.
Spectrogram compute_spectrogram(const AudioBuffer& audio, const TfrConfig& cfg);

/// Row-major CSV dump, one spectrogram row per line, `%.6e` entries.
void write_matrix_csv(const std::filesystem::path& path, const Eigen::MatrixXd& m);

}  // namespace amt::tfr
