#include "amt/tfr.hpp"

#include "amt/error.hpp"
#include "fft.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <numbers>

namespace amt::tfr {

namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
}

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xfffe;

double blackman_harris(double x) {
  // x in [-1, 1]
  const double t = std::numbers::pi * (x + 1.0);
  return 0.35875 - 0.48829 * std::cos(t) + 0.14128 * std::cos(2 * t) -
         0.01168 * std::cos(3 * t);
}

}  // namespace

AudioBuffer load_audio(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open audio file: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    fail(ErrorCode::kFormat, "not a RIFF/WAVE file: " + path.string());
  }

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t available = bytes.size() - body;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || available < 16) fail(ErrorCode::kFormat, "truncated fmt chunk");
      format = read_u16(chunk + 8);
      channels = read_u16(chunk + 10);
      rate = read_u32(chunk + 12);
      bits = read_u16(chunk + 22);
      if (format == kFormatExtensible) {
        if (size < 40 || available < 40) fail(ErrorCode::kFormat, "truncated extensible fmt chunk");
        format = read_u16(chunk + 32);
      }
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = std::min<std::size_t>(size, available);
    }
    pos = body + size + (size & 1u);
  }
  if (format == 0) fail(ErrorCode::kFormat, "missing fmt chunk: " + path.string());
  if (data == nullptr) fail(ErrorCode::kFormat, "missing data chunk: " + path.string());
  if (channels != 1 && channels != 2) {
    fail(ErrorCode::kFormat, "unsupported channel count " + std::to_string(channels));
  }
  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool float32 = format == kFormatFloat && bits == 32;
  if (!pcm16 && !float32) {
    fail(ErrorCode::kFormat, "unsupported encoding (format " + std::to_string(format) +
                                 ", " + std::to_string(bits) + " bits)");
  }
  if (rate == 0) fail(ErrorCode::kFormat, "zero sample rate");

  const std::size_t frame_bytes = static_cast<std::size_t>(channels) * (bits / 8);
  const std::size_t frames = data_size / frame_bytes;
  if (frames == 0) fail(ErrorCode::kFormat, "zero-length audio: " + path.string());

  AudioBuffer out;
  out.sample_rate = static_cast<int>(rate);
  out.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      const unsigned char* p = data + i * frame_bytes + c * (bits / 8);
      double v;
      if (pcm16) {
        v = static_cast<std::int16_t>(read_u16(p)) / 32768.0;
      } else {
        float f;
        const std::uint32_t raw = read_u32(p);
        std::memcpy(&f, &raw, sizeof f);
        v = std::isfinite(f) ? std::clamp(static_cast<double>(f), -1.0, 1.0) : 0.0;
      }
      acc += v;
    }
    out.samples[i] = acc / channels;
  }
  return out;
}

void save_wav(const std::filesystem::path& path, const AudioBuffer& audio, WavEncoding encoding) {
  const bool pcm = encoding == WavEncoding::kPcm16;
  const std::uint16_t bits = pcm ? 16 : 32;
  const std::uint32_t data_size = static_cast<std::uint32_t>(audio.samples.size() * (bits / 8));
  std::vector<unsigned char> out;
  out.reserve(44 + data_size);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_size);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, pcm ? kFormatPcm : kFormatFloat);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(audio.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(audio.sample_rate) * (bits / 8));
  put_u16(out, bits / 8);
  put_u16(out, bits);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_size);
  for (double s : audio.samples) {
    const double c = std::clamp(s, -1.0, 1.0);
    if (pcm) {
      const long q = std::lround(c * 32768.0);
      put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(q, -32768L, 32767L))));
    } else {
      const float f = static_cast<float>(c);
      std::uint32_t raw;
      std::memcpy(&raw, &f, sizeof raw);
      put_u32(out, raw);
    }
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) fail(ErrorCode::kIo, "cannot write audio file: " + path.string());
  file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

AudioBuffer resample(const AudioBuffer& audio, int target_rate) {
  require(audio.sample_rate > 0 && target_rate > 0, ErrorCode::kInvalidArgument,
          "sample rates must be positive");
  if (audio.sample_rate == target_rate) return audio;
  constexpr int kZeroCrossings = 32;
  const double ratio = static_cast<double>(target_rate) / audio.sample_rate;
  const double cutoff = std::min(1.0, ratio);
  const double half_width = kZeroCrossings / cutoff;
  const auto in_len = static_cast<long>(audio.samples.size());
  const auto out_len = static_cast<long>(std::floor(in_len * ratio));

  AudioBuffer out;
  out.sample_rate = target_rate;
  out.samples.resize(static_cast<std::size_t>(std::max(0L, out_len)));
  for (long j = 0; j < out_len; ++j) {
    const double t = j / ratio;
    const long lo = std::max(0L, static_cast<long>(std::ceil(t - half_width)));
    const long hi = std::min(in_len - 1, static_cast<long>(std::floor(t + half_width)));
    double acc = 0.0;
    for (long i = lo; i <= hi; ++i) {
      const double x = i - t;
      const double arg = cutoff * x;
      const double sinc =
          std::abs(arg) < 1e-12 ? 1.0 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
      acc += audio.samples[static_cast<std::size_t>(i)] * cutoff * sinc *
             blackman_harris(x / half_width);
    }
    out.samples[static_cast<std::size_t>(j)] = std::clamp(acc, -1.0, 1.0);
  }
  return out;
}

AudioBuffer load_working_audio(const std::filesystem::path& path) {
  AudioBuffer audio = load_audio(path);
  if (audio.sample_rate != kWorkingSampleRate) audio = resample(audio, kWorkingSampleRate);
  return audio;
}

double rms(std::span<const double> samples) {
  if (samples.empty()) return 0.0;
  double acc = 0.0;
  for (double s : samples) acc += s * s;
  return std::sqrt(acc / static_cast<double>(samples.size()));
}

void TfrConfig::validate(int sample_rate) const {
  require(hop > 0 && hop <= window_length, ErrorCode::kInvalidArgument,
          "hop must satisfy 0 < hop <= window_length");
  require(bins_per_octave >= 1, ErrorCode::kInvalidArgument, "bins_per_octave must be >= 1");
  require(f_min > 0 && f_min < f_max, ErrorCode::kInvalidArgument, "need 0 < f_min < f_max");
  require(f_max <= sample_rate / 2.0 + 1e-9, ErrorCode::kInvalidArgument,
          "f_max exceeds the Nyquist frequency");
}

int log_bin_count(const TfrConfig& cfg) {
  return static_cast<int>(std::floor(cfg.bins_per_octave * std::log2(cfg.f_max / cfg.f_min) + 1e-9));
}

std::vector<double> log_bin_frequencies(const TfrConfig& cfg) {
  const int m = log_bin_count(cfg);
  std::vector<double> freqs(static_cast<std::size_t>(std::max(0, m)));
  for (int j = 0; j < m; ++j) {
    freqs[static_cast<std::size_t>(j)] =
        cfg.f_min * std::exp2(static_cast<double>(j) / cfg.bins_per_octave);
  }
  return freqs;
}

int frame_count(std::size_t length, const TfrConfig& cfg) {
  if (length < static_cast<std::size_t>(cfg.window_length)) return 0;
  return static_cast<int>((length - static_cast<std::size_t>(cfg.window_length)) /
                          static_cast<std::size_t>(cfg.hop)) + 1;
}

namespace {

// Rows: log bins, columns: FFT bins 0..W/2.
Eigen::MatrixXd triangular_filterbank(const std::vector<double>& centres, const TfrConfig& cfg,
                                      int sample_rate) {
  const int fft_bins = cfg.window_length / 2 + 1;
  const double df = static_cast<double>(sample_rate) / cfg.window_length;
  const double step = std::exp2(1.0 / cfg.bins_per_octave);
  const auto m = static_cast<int>(centres.size());
  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(m, fft_bins);
  for (int j = 0; j < m; ++j) {
    const double fc = centres[static_cast<std::size_t>(j)];
    const double lo = fc / step;
    const double hi = fc * step;
    bool any = false;
    for (int b = static_cast<int>(std::ceil(lo / df)); b <= static_cast<int>(std::floor(hi / df)) && b < fft_bins; ++b) {
      const double f = b * df;
      const double w = f <= fc ? (f - lo) / (fc - lo) : (hi - f) / (hi - fc);
      if (w > 0.0) {
        fb(j, b) = w;
        any = true;
      }
    }
    if (!any) {
      // Triangle narrower than the FFT grid: interpolate the magnitude at fc.
      const double pos = fc / df;
      const int b0 = static_cast<int>(std::floor(pos));
      const double frac = pos - b0;
      if (b0 < fft_bins) fb(j, b0) = 1.0 - frac;
      if (b0 + 1 < fft_bins) fb(j, b0 + 1) = frac;
    }
  }
  return fb;
}

}  // namespace

Spectrogram compute_spectrogram(const AudioBuffer& audio, const TfrConfig& cfg) {
  cfg.validate(audio.sample_rate);
  const int n_frames = frame_count(audio.samples.size(), cfg);
  require(n_frames >= 1, ErrorCode::kInvalidArgument, "audio shorter than one analysis window");

  const int w = cfg.window_length;
  const int fft_bins = w / 2 + 1;
  std::vector<double> window(static_cast<std::size_t>(w));
  for (int i = 0; i < w; ++i) {
    window[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / w);
  }

  detail::RealFft fft(w);

  Eigen::MatrixXd magnitude(fft_bins, n_frames);
  for (int n = 0; n < n_frames; ++n) {
    const double* frame = audio.samples.data() + static_cast<std::size_t>(n) * cfg.hop;
    double* in = fft.input();
    for (int i = 0; i < w; ++i) in[i] = frame[i] * window[static_cast<std::size_t>(i)];
    fft.execute();
    const fftw_complex* out = fft.output();
    for (int b = 0; b < fft_bins; ++b) magnitude(b, n) = std::hypot(out[b][0], out[b][1]);
  }

  Spectrogram spec;
  spec.bin_freqs = log_bin_frequencies(cfg);
  spec.frame_rate = cfg.frame_rate(audio.sample_rate);
  spec.values.noalias() = triangular_filterbank(spec.bin_freqs, cfg, audio.sample_rate) * magnitude;
  return spec;
}

void write_matrix_csv(const std::filesystem::path& path, const Eigen::MatrixXd& m) {
  std::FILE* f = std::fopen(path.string().c_str(), "w");
  if (f == nullptr) fail(ErrorCode::kIo, "cannot write " + path.string());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      std::fprintf(f, c == 0 ? "%.6e" : ",%.6e", m(r, c));
    }
    std::fputc('\n', f);
  }
  std::fclose(f);
}

}  // namespace amt::tfr
