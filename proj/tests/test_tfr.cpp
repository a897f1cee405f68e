#include "amt/error.hpp"
#include "amt/tfr.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>

using namespace amt;
using namespace amt::tfr;

namespace {

std::filesystem::path tmp(const std::string& name) {
  const std::filesystem::path dir = AMT_TEST_TMP;
  std::filesystem::create_directories(dir);
  return dir / name;
}

void put16(std::ofstream& o, std::uint16_t v) { o.put(static_cast<char>(v & 0xff)).put(static_cast<char>(v >> 8)); }
void put32(std::ofstream& o, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) o.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

// Hand-written PCM16 file, independent of save_wav.
void write_pcm16(const std::filesystem::path& path, const std::vector<std::int16_t>& interleaved,
                 int channels, int rate) {
  std::ofstream o(path, std::ios::binary);
  const auto data_bytes = static_cast<std::uint32_t>(interleaved.size() * 2);
  o.write("RIFF", 4);
  put32(o, 36 + data_bytes);
  o.write("WAVE", 4);
  o.write("fmt ", 4);
  put32(o, 16);
  put16(o, 1);
  put16(o, static_cast<std::uint16_t>(channels));
  put32(o, static_cast<std::uint32_t>(rate));
  put32(o, static_cast<std::uint32_t>(rate * channels * 2));
  put16(o, static_cast<std::uint16_t>(channels * 2));
  put16(o, 16);
  o.write("data", 4);
  put32(o, data_bytes);
  for (std::int16_t s : interleaved) put16(o, static_cast<std::uint16_t>(s));
}

AudioBuffer sine(double f, double seconds, double amp = 1.0, int rate = kWorkingSampleRate) {
  AudioBuffer a;
  a.sample_rate = rate;
  const auto n = static_cast<std::size_t>(seconds * rate);
  for (std::size_t i = 0; i < n; ++i) a.samples.push_back(amp * std::sin(2.0 * M_PI * f * i / rate));
  return a;
}

}  // namespace

TEST_CASE("PCM16 full scale maps to 32767/32768") {
  const auto path = tmp("pcm16.wav");
  write_pcm16(path, {32767, -32768, 0}, 1, 22050);
  const auto a = load_audio(path);
  REQUIRE(a.samples.size() == 3);
  CHECK(a.samples[0] == doctest::Approx(32767.0 / 32768.0));
  CHECK(a.samples[1] == -1.0);
  CHECK(a.sample_rate == 22050);
}

TEST_CASE("stereo frames are averaged") {
  const auto path = tmp("stereo.wav");
  write_pcm16(path, {16384, -16384, 8192, 8192}, 2, 22050);
  const auto a = load_audio(path);
  REQUIRE(a.samples.size() == 2);
  CHECK(a.samples[0] == 0.0);
  CHECK(a.samples[1] == doctest::Approx(0.25));
}

TEST_CASE("wrong magic bytes are a format error") {
  const auto path = tmp("bad.wav");
  std::ofstream(path, std::ios::binary) << "RIFX0000WAVEjunkjunk";
  try {
    load_audio(path);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kFormat);
  }
  CHECK_THROWS_AS(load_audio(tmp("does_not_exist.wav")), Error);
}

TEST_CASE("float and PCM16 writers round-trip") {
  AudioBuffer a = sine(440.0, 0.1, 0.5);
  save_wav(tmp("f32.wav"), a, WavEncoding::kFloat32);
  const auto f = load_audio(tmp("f32.wav"));
  REQUIRE(f.samples.size() == a.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) CHECK(f.samples[i] == doctest::Approx(a.samples[i]).epsilon(1e-6));
  save_wav(tmp("i16.wav"), a, WavEncoding::kPcm16);
  const auto p = load_audio(tmp("i16.wav"));
  for (std::size_t i = 0; i < a.samples.size(); ++i) CHECK(std::abs(p.samples[i] - a.samples[i]) <= 1.0 / 32768.0);
}

TEST_CASE("resampling preserves the frequency of a sine") {
  const AudioBuffer a = sine(1000.0, 0.5, 0.5, 44100);
  const AudioBuffer r = resample(a, kWorkingSampleRate);
  CHECK(r.sample_rate == kWorkingSampleRate);
  CHECK(std::abs(static_cast<double>(r.samples.size()) - a.samples.size() / 2.0) <= 2.0);
  // Compare against the analytic sine away from the edges.
  double err = 0.0;
  for (std::size_t i = 500; i + 500 < r.samples.size(); ++i) {
    err = std::max(err, std::abs(r.samples[i] - 0.5 * std::sin(2.0 * M_PI * 1000.0 * i / kWorkingSampleRate)));
  }
  CHECK(err < 1e-3);
}

TEST_CASE("bin frequencies are geometric from f_min") {
  TfrConfig cfg;
  const auto f = log_bin_frequencies(cfg);
  REQUIRE(static_cast<int>(f.size()) == log_bin_count(cfg));
  CHECK(f.size() > 300);
  CHECK(f.size() < 320);
  CHECK(f.front() == doctest::Approx(27.5));
  for (std::size_t i = 1; i < f.size(); ++i) CHECK(f[i] / f[i - 1] == doctest::Approx(std::exp2(1.0 / 36)));
  CHECK(cfg.frame_rate(kWorkingSampleRate) == doctest::Approx(86.1328125));
}

TEST_CASE("440 Hz sine peaks at the nearest bin") {
  TfrConfig cfg;
  const auto spec = compute_spectrogram(sine(440.0, 1.0), cfg);
  std::size_t nearest = 0;
  for (std::size_t i = 0; i < spec.bin_freqs.size(); ++i) {
    if (std::abs(spec.bin_freqs[i] - 440.0) < std::abs(spec.bin_freqs[nearest] - 440.0)) nearest = i;
  }
  for (int n = 0; n < spec.frames(); ++n) {
    Eigen::Index arg;
    spec.values.col(n).maxCoeff(&arg);
    CHECK(arg == static_cast<Eigen::Index>(nearest));
  }
}

TEST_CASE("silence gives zeros and one window gives one frame") {
  TfrConfig cfg;
  AudioBuffer a;
  a.samples.assign(static_cast<std::size_t>(cfg.window_length), 0.0);
  const auto spec = compute_spectrogram(a, cfg);
  CHECK(spec.frames() == 1);
  CHECK(spec.values.maxCoeff() == 0.0);
  a.samples.pop_back();
  CHECK_THROWS_AS(compute_spectrogram(a, cfg), Error);
}

TEST_CASE("property: frame count formula, non-negativity, linearity") {
  TfrConfig cfg;
  cfg.window_length = 1024;
  cfg.hop = 128;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 0.2);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t len = 1024 + rng() % 5000;
    AudioBuffer a;
    for (std::size_t i = 0; i < len; ++i) a.samples.push_back(g(rng));
    const auto s = compute_spectrogram(a, cfg);
    CHECK(s.frames() == static_cast<int>((len - 1024) / 128 + 1));
    CHECK(s.values.minCoeff() >= 0.0);
    CHECK(s.values.allFinite());
    AudioBuffer b = a;
    for (double& x : b.samples) x *= 2.0;
    const auto s2 = compute_spectrogram(b, cfg);
    CHECK((s2.values - 2.0 * s.values).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + s.values.maxCoeff()));
  }
}

TEST_CASE("invalid configurations are rejected") {
  TfrConfig cfg;
  cfg.hop = 0;
  CHECK_THROWS_AS(cfg.validate(kWorkingSampleRate), Error);
  cfg = {};
  cfg.f_max = 20000.0;
  CHECK_THROWS_AS(cfg.validate(kWorkingSampleRate), Error);
  cfg = {};
  cfg.bins_per_octave = 0;
  CHECK_THROWS_AS(cfg.validate(kWorkingSampleRate), Error);
}

TEST_CASE("CSV dump is row-major with six-digit exponents") {
  Eigen::MatrixXd m(2, 2);
  m << 1, 2, 3, 4;
  write_matrix_csv(tmp("m.csv"), m);
  std::ifstream in(tmp("m.csv"));
  std::string line;
  std::getline(in, line);
  CHECK(line == "1.000000e+00,2.000000e+00");
}
