#include "amt/loudness.hpp"

#include "amt/error.hpp"
#include "fft.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <sstream>

#ifndef AMT_DATA_DIR
#define AMT_DATA_DIR "data"
#endif

namespace amt::loud {

namespace {

// Hearing threshold in dB SPL (ISO 226:2003 table) used to shape the
// outer/middle-ear transfer and the low-frequency cochlear gain.
constexpr std::array<double, 29> kThresholdHz{
    20,   25,   31.5, 40,   50,   63,   80,   100,  125,  160,  200,   250,   315,   400,  500,
    630,  800,  1000, 1250, 1600, 2000, 2500, 3150, 4000, 5000, 6300, 8000, 10000, 12500};
constexpr std::array<double, 29> kThresholdDb{
    78.5, 68.7, 59.5, 51.1, 44.0, 37.5, 31.5, 26.5, 22.1, 17.9, 14.4, 11.4, 8.6, 6.2, 4.4,
    3.0,  2.2,  2.4,  3.5,  1.7,  -1.3, -4.2, -6.0, -5.4, -1.5, 6.0,  12.6, 13.9, 12.3};

// Compression exponent and additive constant as functions of the low-level
// gain G (dB) below 500 Hz.
constexpr std::array<double, 6> kGainDb{-25, -20, -15, -10, -5, 0};
constexpr std::array<double, 6> kAlpha{0.267, 0.252, 0.238, 0.222, 0.211, 0.200};
constexpr std::array<double, 6> kConstA{15.3, 11.6, 8.8, 6.9, 5.5, 4.62};

template <std::size_t N>
double interp_log_f(const std::array<double, N>& fx, const std::array<double, N>& y, double f) {
  if (f <= fx.front()) return y.front();
  if (f >= fx.back()) return y.back();
  const auto it = std::upper_bound(fx.begin(), fx.end(), f);
  const std::size_t i = static_cast<std::size_t>(it - fx.begin());
  const double t = std::log(f / fx[i - 1]) / std::log(fx[i] / fx[i - 1]);
  return y[i - 1] + t * (y[i] - y[i - 1]);
}

template <std::size_t N>
double interp_linear(const std::array<double, N>& x, const std::array<double, N>& y, double v) {
  if (v <= x.front()) return y.front();
  if (v >= x.back()) return y.back();
  const auto it = std::upper_bound(x.begin(), x.end(), v);
  const std::size_t i = static_cast<std::size_t>(it - x.begin());
  const double t = (v - x[i - 1]) / (x[i] - x[i - 1]);
  return y[i - 1] + t * (y[i] - y[i - 1]);
}

double threshold_db(double f) { return interp_log_f(kThresholdHz, kThresholdDb, f); }

// Half of the threshold rise below 500 Hz is attributed to the middle ear and
// half to reduced cochlear gain.
double low_frequency_elevation(double f) {
  return f < 500.0 ? 0.5 * (threshold_db(f) - threshold_db(500.0)) : 0.0;
}

double a_weighting_raw(double f) {
  const double f2 = f * f;
  const double num = 12194.0 * 12194.0 * f2 * f2;
  const double den = (f2 + 20.6 * 20.6) *
                     std::sqrt((f2 + 107.7 * 107.7) * (f2 + 737.9 * 737.9)) *
                     (f2 + 12194.0 * 12194.0);
  return 20.0 * std::log10(num / den);
}

constexpr double kCurveMinHz = 10.0;
constexpr double kCurveMaxHz = 20000.0;

// Excitation analysis of one signal: channel excitations (power units where
// 1 = 0 dB SPL) per analysis frame, computed at the configured reference level.
struct Excitation {
  Eigen::MatrixXd energy;  // channels x frames
  std::vector<double> gain, alpha, constant;
  double hop_ms = 1.0;
};

struct ChannelBank {
  Eigen::MatrixXd weights;  // channels x fft bins
  std::vector<double> gain, alpha, constant;
};

ChannelBank make_channels(int fft_size, int sample_rate, double erb_step) {
  const int bins = fft_size / 2 + 1;
  const double top = std::min(15000.0, 0.95 * sample_rate / 2.0);
  const double cam_lo = hz_to_cam(30.0);
  const double cam_hi = hz_to_cam(top);
  const int channels = static_cast<int>(std::floor((cam_hi - cam_lo) / erb_step)) + 1;
  ChannelBank bank;
  bank.weights = Eigen::MatrixXd::Zero(channels, bins);
  for (int c = 0; c < channels; ++c) {
    const double fc = cam_to_hz(cam_lo + c * erb_step);
    const double p = 4.0 * fc / erb_hz(fc);
    for (int b = 1; b < bins; ++b) {
      const double f = static_cast<double>(b) * sample_rate / fft_size;
      const double g = std::abs(f - fc) / fc;
      if (p * g > 30.0) continue;
      bank.weights(c, b) = (1.0 + p * g) * std::exp(-p * g);
    }
    const double g_db = -low_frequency_elevation(fc);
    bank.gain.push_back(std::pow(10.0, g_db / 10.0));
    bank.alpha.push_back(interp_linear(kGainDb, kAlpha, g_db));
    bank.constant.push_back(interp_linear(kGainDb, kConstA, g_db));
  }
  return bank;
}

Excitation analyze(const tfr::AudioBuffer& audio, const GmConfig& cfg) {
  require(audio.sample_rate > 0, ErrorCode::kInvalidArgument, "sample rate must be positive");
  const int sr = audio.sample_rate;
  const int window = std::max(16, static_cast<int>(std::lround(cfg.window_ms * 1e-3 * sr)));
  int fft_size = 1;
  while (fft_size < window) fft_size *= 2;
  const int hop = std::max(1, static_cast<int>(std::lround(cfg.analysis_hop_ms * 1e-3 * sr)));

  ChannelBank bank = make_channels(fft_size, sr, cfg.erb_step);
  Excitation ex;
  ex.gain = std::move(bank.gain);
  ex.alpha = std::move(bank.alpha);
  ex.constant = std::move(bank.constant);
  ex.hop_ms = 1000.0 * hop / sr;

  const std::size_t len = audio.samples.size();
  // Frames are centred on multiples of the hop, covering the whole signal.
  const int frames = static_cast<int>(len / static_cast<std::size_t>(hop)) + 1;
  std::vector<double> win(static_cast<std::size_t>(window));
  double win_power = 0.0;
  for (int i = 0; i < window; ++i) {
    win[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / window);
    win_power += win[static_cast<std::size_t>(i)] * win[static_cast<std::size_t>(i)];
  }

  // Level calibration: digital RMS `reference_rms` maps to the assumed level.
  const double level_gain =
      std::pow(10.0, cfg.assumed_level_db_spl / 20.0) / cfg.reference_rms;
  const int bins = fft_size / 2 + 1;
  Eigen::VectorXd ear(bins);
  for (int b = 0; b < bins; ++b) {
    const double f = std::max(1.0, static_cast<double>(b) * sr / fft_size);
    ear(b) = std::pow(10.0, outer_middle_ear_db(f) / 10.0);
  }
  const double norm = level_gain * level_gain * 2.0 / (static_cast<double>(fft_size) * win_power);

  Eigen::MatrixXd power(bins, frames);
  detail::RealFft fft(fft_size);
  for (int n = 0; n < frames; ++n) {
    double* in = fft.input();
    std::fill(in, in + fft_size, 0.0);
    const long start = static_cast<long>(n) * hop - window / 2;
    for (int i = 0; i < window; ++i) {
      const long j = start + i;
      if (j >= 0 && j < static_cast<long>(len)) {
        in[i] = audio.samples[static_cast<std::size_t>(j)] * win[static_cast<std::size_t>(i)];
      }
    }
    fft.execute();
    const fftw_complex* out = fft.output();
    for (int b = 0; b < bins; ++b) {
      power(b, n) = (out[b][0] * out[b][0] + out[b][1] * out[b][1]) * norm * ear(b);
    }
  }
  ex.energy.noalias() = bank.weights * power;
  return ex;
}

// Instantaneous loudness for amplitude scale s (excitation scales with s^2),
// then temporal integration on a 1 ms grid.
GmLoudness integrate(const Excitation& ex, double scale, const GmConfig& cfg, double c) {
  const Eigen::Index channels = ex.energy.rows();
  const Eigen::Index frames = ex.energy.cols();
  const double s2 = scale * scale;
  std::vector<double> inst(static_cast<std::size_t>(frames));
  for (Eigen::Index n = 0; n < frames; ++n) {
    double total = 0.0;
    for (Eigen::Index ch = 0; ch < channels; ++ch) {
      const std::size_t i = static_cast<std::size_t>(ch);
      const double e = ex.energy(ch, n) * s2;
      const double a = ex.constant[i];
      const double al = ex.alpha[i];
      total += std::max(0.0, std::pow(ex.gain[i] * e + a, al) - std::pow(a, al));
    }
    inst[static_cast<std::size_t>(n)] = c * total * cfg.erb_step;
  }

  GmLoudness out;
  const double duration_ms = (frames - 1) * ex.hop_ms;
  const std::size_t steps = static_cast<std::size_t>(std::floor(duration_ms)) + 1;
  out.instantaneous.resize(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    const double pos = static_cast<double>(t) / ex.hop_ms;
    const std::size_t i = std::min(static_cast<std::size_t>(pos), inst.size() - 1);
    const std::size_t j = std::min(i + 1, inst.size() - 1);
    const double w = pos - static_cast<double>(i);
    out.instantaneous[t] = inst[i] + w * (inst[j] - inst[i]);
  }
  out.short_term.resize(steps);
  out.long_term.resize(steps);
  double stl = 0.0;
  double ltl = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    const double x = out.instantaneous[t];
    stl += (x > stl ? cfg.stl_attack : cfg.stl_release) * (x - stl);
    ltl += (stl > ltl ? cfg.ltl_attack : cfg.ltl_release) * (stl - ltl);
    out.short_term[t] = stl;
    out.long_term[t] = ltl;
    out.max_loudness = std::max(out.max_loudness, ltl);
  }
  return out;
}

double resolve_calibration(const GmConfig& cfg) {
  return cfg.sone_calibration > 0.0 ? cfg.sone_calibration : fit_sone_calibration(cfg);
}

}  // namespace

double a_weighting_db(double f) {
  require(f > 0.0, ErrorCode::kInvalidArgument, "frequency must be positive");
  return a_weighting_raw(f) - a_weighting_raw(1000.0);
}

LoudnessCurve LoudnessCurve::inverted_a_weighting() { return {}; }

LoudnessCurve LoudnessCurve::tabulated(std::vector<std::pair<double, double>> table) {
  LoudnessCurve c;
  c.kind = Kind::kTabulated;
  c.table = std::move(table);
  c.validate();
  return c;
}

LoudnessCurve LoudnessCurve::from_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  std::vector<std::pair<double, double>> table;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    double f = 0.0;
    double g = 0.0;
    if (!(ss >> f >> g)) {
      if (table.empty()) continue;  // header
      fail(ErrorCode::kParse, path.string() + " line " + std::to_string(line_no) +
                                  ": expected two numbers");
    }
    table.emplace_back(f, g);
  }
  return tabulated(std::move(table));
}

double LoudnessCurve::min_frequency() const {
  return kind == Kind::kTabulated ? table.front().first : kCurveMinHz;
}

double LoudnessCurve::max_frequency() const {
  return kind == Kind::kTabulated ? table.back().first : kCurveMaxHz;
}

void LoudnessCurve::validate() const {
  if (kind != Kind::kTabulated) return;
  require(table.size() >= 2, ErrorCode::kInvalidArgument, "loudness table needs two points");
  for (std::size_t i = 0; i < table.size(); ++i) {
    require(table[i].first > 0.0 && std::isfinite(table[i].second), ErrorCode::kInvalidArgument,
            "loudness table entries must be finite with positive frequency");
    if (i > 0) {
      require(table[i].first > table[i - 1].first, ErrorCode::kInvalidArgument,
              "loudness table frequencies must increase strictly");
    }
  }
  require(table.front().first <= 27.5 && table.back().first >= 8000.0,
          ErrorCode::kInvalidArgument, "loudness table must cover 27.5 Hz to 8 kHz");
}

double equal_loudness_gain(const LoudnessCurve& curve, double f) {
  require(f >= curve.min_frequency() && f <= curve.max_frequency(), ErrorCode::kInvalidArgument,
          "frequency " + std::to_string(f) + " Hz outside the curve domain");
  if (curve.kind == LoudnessCurve::Kind::kInvertedAWeighting) return -a_weighting_db(f);
  const auto& t = curve.table;
  const auto it = std::lower_bound(t.begin(), t.end(), f,
                                   [](const auto& p, double v) { return p.first < v; });
  if (it->first == f) return it->second;
  const auto prev = it - 1;
  const double w = std::log(f / prev->first) / std::log(it->first / prev->first);
  return prev->second + w * (it->second - prev->second);
}

std::filesystem::path data_directory() {
  if (const char* env = std::getenv("AMT_DATA_DIR"); env != nullptr && *env != '\0') return env;
  return AMT_DATA_DIR;
}

void GmConfig::validate() const {
  require(std::isfinite(assumed_level_db_spl), ErrorCode::kInvalidArgument,
          "assumed level must be finite");
  require(reference_rms > 0.0, ErrorCode::kInvalidArgument, "reference_rms must be positive");
  require(erb_step > 0.0, ErrorCode::kInvalidArgument, "erb_step must be positive");
  require(window_ms > 0.0 && analysis_hop_ms > 0.0, ErrorCode::kInvalidArgument,
          "window and hop must be positive");
  for (double c : {stl_attack, stl_release, ltl_attack, ltl_release}) {
    require(c > 0.0 && c <= 1.0, ErrorCode::kInvalidArgument,
            "smoothing coefficients must lie in (0, 1]");
  }
  require(sone_calibration >= 0.0, ErrorCode::kInvalidArgument,
          "sone calibration must be non-negative");
}

double erb_hz(double f) { return 24.7 * (4.37 * f / 1000.0 + 1.0); }
double hz_to_cam(double f) { return 21.366 * std::log10(4.368 * f / 1000.0 + 1.0); }
double cam_to_hz(double cam) { return (std::pow(10.0, cam / 21.366) - 1.0) * 1000.0 / 4.368; }

double outer_middle_ear_db(double f) {
  const double above = f < 500.0 ? threshold_db(500.0) : threshold_db(f);
  return -(above - threshold_db(1000.0)) - low_frequency_elevation(f);
}

GmLoudness glasberg_moore_loudness(const tfr::AudioBuffer& audio, const GmConfig& cfg) {
  cfg.validate();
  return integrate(analyze(audio, cfg), 1.0, cfg, resolve_calibration(cfg));
}

double fit_sone_calibration(GmConfig cfg) {
  cfg.sone_calibration = 1.0;
  tfr::AudioBuffer tone;
  tone.samples.resize(static_cast<std::size_t>(2 * tone.sample_rate));
  const double amp = cfg.reference_rms * std::sqrt(2.0) *
                     std::pow(10.0, (40.0 - cfg.assumed_level_db_spl) / 20.0);
  for (std::size_t i = 0; i < tone.samples.size(); ++i) {
    tone.samples[i] = amp * std::sin(2.0 * std::numbers::pi * 1000.0 * i / tone.sample_rate);
  }
  const double raw = integrate(analyze(tone, cfg), 1.0, cfg, 1.0).max_loudness;
  require(raw > 0.0, ErrorCode::kNumerical, "calibration tone has zero loudness");
  return 1.0 / raw;
}

std::vector<double> compute_loudness_scalers(const std::map<int, tfr::AudioBuffer>& notes,
                                             int reference_key, const GmConfig& cfg) {
  cfg.validate();
  require(notes.count(reference_key) == 1, ErrorCode::kCalibration,
          "reference key " + std::to_string(reference_key) + " has no calibration note");
  const double c = resolve_calibration(cfg);

  std::vector<int> keys;
  std::vector<const tfr::AudioBuffer*> audio;
  for (const auto& [k, a] : notes) {
    keys.push_back(k);
    audio.push_back(&a);
  }
  const int count = static_cast<int>(keys.size());
  std::vector<Excitation> ex(static_cast<std::size_t>(count));
  std::vector<std::string> errors(static_cast<std::size_t>(count));

#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < count; ++i) {
    const std::size_t u = static_cast<std::size_t>(i);
    try {
      tfr::AudioBuffer normalized = *audio[u];
      const double r = tfr::rms(normalized.samples);
      if (r <= 0.0) fail(ErrorCode::kCalibration, "note is silent");
      for (double& s : normalized.samples) s *= cfg.reference_rms / r;
      ex[u] = analyze(normalized, cfg);
    } catch (const std::exception& e) {
      errors[u] = e.what();
    }
  }

  const std::size_t ref = static_cast<std::size_t>(
      std::find(keys.begin(), keys.end(), reference_key) - keys.begin());
  if (!errors[ref].empty()) fail(ErrorCode::kCalibration, "reference key: " + errors[ref]);
  const double target = integrate(ex[ref], 1.0, cfg, c).max_loudness;
  require(target > 0.0, ErrorCode::kCalibration, "reference note has zero loudness");

  std::vector<double> scalers(static_cast<std::size_t>(count), 1.0);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < count; ++i) {
    const std::size_t u = static_cast<std::size_t>(i);
    if (u == ref || !errors[u].empty()) continue;
    auto loudness = [&](double s) { return integrate(ex[u], s, cfg, c).max_loudness; };
    double lo = std::ldexp(1.0, -8);
    double hi = std::ldexp(1.0, 8);
    if (loudness(lo) > target || loudness(hi) < target) {
      errors[u] = "loudness target outside the scaler bracket [2^-8, 2^8]";
      continue;
    }
    while (hi / lo - 1.0 > 1e-3) {
      const double mid = std::sqrt(lo * hi);
      (loudness(mid) < target ? lo : hi) = mid;
    }
    scalers[u] = std::sqrt(lo * hi);
  }

  std::string report;
  for (int i = 0; i < count; ++i) {
    if (!errors[static_cast<std::size_t>(i)].empty()) {
      report += (report.empty() ? "" : "; ") + std::string("key ") + std::to_string(keys[static_cast<std::size_t>(i)]) +
                ": " + errors[static_cast<std::size_t>(i)];
    }
  }
  if (!report.empty()) fail(ErrorCode::kCalibration, "loudness scalers failed: " + report);
  return scalers;
}

std::vector<double> curve_scalers(const LoudnessCurve& curve, const std::vector<int>& midi_pitches,
                                  int reference_key) {
  auto f0 = [](int midi) { return 440.0 * std::pow(2.0, (midi - 69) / 12.0); };
  const double ref_gain = equal_loudness_gain(curve, f0(reference_key));
  std::vector<double> out;
  out.reserve(midi_pitches.size());
  for (int m : midi_pitches) {
    out.push_back(std::pow(10.0, (equal_loudness_gain(curve, f0(m)) - ref_gain) / 20.0));
  }
  return out;
}

void ThresholdProfile::validate() const {
  require(base_threshold > 0.0 && std::isfinite(base_threshold), ErrorCode::kInvalidArgument,
          "base threshold must be positive and finite");
  require(scalers.size() == midi_pitches.size() && thresholds.size() == midi_pitches.size(),
          ErrorCode::kShapeMismatch, "profile needs one scaler and threshold per key");
  require(!midi_pitches.empty(), ErrorCode::kInvalidArgument, "profile has no keys");
  bool has_reference = false;
  for (std::size_t i = 0; i < midi_pitches.size(); ++i) {
    require(thresholds[i] > 0.0 && std::isfinite(thresholds[i]), ErrorCode::kInvalidArgument,
            "thresholds must be positive and finite");
    require(scalers[i] > 0.0 && std::isfinite(scalers[i]), ErrorCode::kInvalidArgument,
            "scalers must be positive and finite");
    if (i > 0) {
      require(midi_pitches[i] > midi_pitches[i - 1], ErrorCode::kInvalidArgument,
              "profile keys must be ascending");
    }
    if (midi_pitches[i] == reference_key) {
      require(scalers[i] == 1.0, ErrorCode::kInvalidArgument, "reference key scaler must be 1");
      has_reference = true;
    }
  }
  require(has_reference, ErrorCode::kInvalidArgument, "reference key missing from profile");
}

double ThresholdProfile::threshold_for(int midi) const {
  const auto it = std::lower_bound(midi_pitches.begin(), midi_pitches.end(), midi);
  require(it != midi_pitches.end() && *it == midi, ErrorCode::kInvalidArgument,
          "no threshold for key " + std::to_string(midi));
  return thresholds[static_cast<std::size_t>(it - midi_pitches.begin())];
}

ThresholdProfile make_threshold_profile(double base_threshold, int low_key,
                                        const std::vector<int>& midi_pitches,
                                        const std::vector<double>& scalers, int reference_key) {
  require(scalers.size() == midi_pitches.size(), ErrorCode::kShapeMismatch,
          "one scaler per key required");
  const auto it = std::find(midi_pitches.begin(), midi_pitches.end(), low_key);
  require(it != midi_pitches.end(), ErrorCode::kCalibration,
          "low-intensity key " + std::to_string(low_key) + " is not in the dictionary");
  const double s0 = scalers[static_cast<std::size_t>(it - midi_pitches.begin())];
  ThresholdProfile p;
  p.base_threshold = base_threshold;
  p.reference_key = reference_key;
  p.midi_pitches = midi_pitches;
  p.scalers = scalers;
  for (double s : scalers) p.thresholds.push_back(base_threshold * s / s0);
  p.validate();
  return p;
}

ThresholdProfile build_threshold_profile(const tfr::AudioBuffer& low_note, int low_key,
                                         const std::vector<double>& scalers, int reference_key,
                                         const ProfileSolve& solve, double beta) {
  require(solve.patterns != nullptr, ErrorCode::kInvalidArgument, "dictionary required");
  require(beta > 0.0, ErrorCode::kInvalidArgument, "beta must be positive");
  const dict::PatternTensor& p = *solve.patterns;
  const int k0 = p.key_index(low_key);
  const tfr::Spectrogram spec = tfr::compute_spectrogram(low_note, solve.tfr);
  fact::SolverConfig cfg = solve.solver;
  cfg.stage_iters[2] = 0;
  const fact::SolveResult res = fact::solve_activity(spec.values, p, cfg, solve.markov);
  double peak = 0.0;
  for (int n = 0; n < res.activity.time_frames(); ++n) {
    peak = std::max(peak, res.activity.at(k0, 0, n));
  }
  require(peak > 0.0, ErrorCode::kCalibration,
          "low-intensity note produced no onset activation for key " + std::to_string(low_key));
  return make_threshold_profile(beta * peak, low_key, p.midi_pitches, scalers, reference_key);
}

std::string profile_to_json(const ThresholdProfile& profile) {
  profile.validate();
  nlohmann::json j;
  j["base"] = profile.base_threshold;
  j["reference_key"] = profile.reference_key;
  j["midi_pitches"] = profile.midi_pitches;
  j["scalers"] = profile.scalers;
  j["thresholds"] = profile.thresholds;
  return j.dump(2);
}

ThresholdProfile profile_from_json(const std::string& text) {
  ThresholdProfile p;
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    p.base_threshold = j.at("base").get<double>();
    p.reference_key = j.at("reference_key").get<int>();
    p.scalers = j.at("scalers").get<std::vector<double>>();
    p.thresholds = j.at("thresholds").get<std::vector<double>>();
    if (j.contains("midi_pitches")) {
      p.midi_pitches = j.at("midi_pitches").get<std::vector<int>>();
    } else {
      for (std::size_t i = 0; i < p.thresholds.size(); ++i) {
        p.midi_pitches.push_back(21 + static_cast<int>(i));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, std::string("threshold profile: ") + e.what());
  }
  p.validate();
  return p;
}

void write_profile(const std::filesystem::path& path, const ThresholdProfile& profile) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  out << profile_to_json(profile) << '\n';
}

ThresholdProfile read_profile(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return profile_from_json(ss.str());
}

}  // namespace amt::loud
