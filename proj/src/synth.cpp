#include "amt/synth.hpp"

#include "amt/error.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <limits>
#include <random>

namespace amt::synth {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

void peak_normalize(std::vector<double>& x, double target) {
  double peak = 0.0;
  for (double s : x) peak = std::max(peak, std::abs(s));
  if (peak > 0.0) {
    const double g = target / peak;
    for (double& s : x) s *= g;
  }
}

}  // namespace

void SynthConfig::validate() const {
  require(partials >= 1, ErrorCode::kInvalidArgument, "partials must be >= 1");
  require(decay_s > 0.0, ErrorCode::kInvalidArgument, "decay must be > 0");
  require(inharmonicity >= 0.0 && attack_ms >= 0.0 && release_ms >= 0.0 && noise_floor >= 0.0,
          ErrorCode::kInvalidArgument, "synth parameters must be non-negative");
  require(sample_rate > 0, ErrorCode::kInvalidArgument, "sample rate must be positive");
}

SynthConfig test_timbre() {
  SynthConfig c;
  c.partials = 14;
  c.rolloff = 1.1;
  c.decay_s = 1.2;
  c.decay_pitch_slope = 0.3;
  c.partial_decay_exponent = 0.5;
  c.inharmonicity = 1e-4;
  c.attack_ms = 4.0;
  c.seed = 11;
  return c;
}

SynthConfig train_timbre() {
  SynthConfig c;
  c.partials = 9;
  c.rolloff = 1.6;
  c.decay_s = 0.7;
  c.decay_pitch_slope = 0.45;
  c.partial_decay_exponent = 0.8;
  c.inharmonicity = 4e-4;
  c.attack_ms = 9.0;
  c.noise_floor = 5e-4;
  c.seed = 97;
  return c;
}

double midi_to_hz(int midi) { return 440.0 * std::pow(2.0, (midi - 69) / 12.0); }

double velocity_to_amplitude(double velocity, const SynthConfig& cfg) {
  return std::pow(velocity, cfg.velocity_exponent);
}

tfr::AudioBuffer synthesize_note(int midi_pitch, double duration_s, double velocity,
                                 const SynthConfig& cfg) {
  cfg.validate();
  require(midi_pitch >= 21 && midi_pitch <= 108, ErrorCode::kInvalidArgument,
          "MIDI pitch outside 21..108: " + std::to_string(midi_pitch));
  require(duration_s > 0.0, ErrorCode::kInvalidArgument, "duration must be > 0");
  require(velocity > 0.0 && velocity <= 1.0, ErrorCode::kInvalidArgument,
          "velocity must be in (0, 1]");

  const double sr = cfg.sample_rate;
  const auto n = static_cast<std::size_t>(std::llround(duration_s * sr));
  tfr::AudioBuffer out;
  out.sample_rate = cfg.sample_rate;
  out.samples.assign(n, 0.0);
  if (n == 0) return out;

  // Phases and noise depend on (seed, pitch) only, so a key always sounds the same.
  std::mt19937_64 rng(cfg.seed * 1000003ULL + static_cast<std::uint64_t>(midi_pitch));
  std::uniform_real_distribution<double> phase_dist(0.0, kTwoPi);
  std::normal_distribution<double> noise(0.0, 1.0);

  const double f0 = midi_to_hz(midi_pitch);
  const double tau0 = cfg.decay_s * std::pow(2.0, -cfg.decay_pitch_slope * (midi_pitch - 60) / 12.0);
  const double nyquist_guard = 0.95 * sr / 2.0;
  for (int p = 1; p <= cfg.partials; ++p) {
    const double fp = p * f0 * std::sqrt(1.0 + cfg.inharmonicity * p * p);
    const double phase = phase_dist(rng);
    if (fp >= nyquist_guard) continue;
    const double amp = std::pow(static_cast<double>(p), -cfg.rolloff);
    const double tau = tau0 / std::pow(static_cast<double>(p), cfg.partial_decay_exponent);
    const double w = kTwoPi * fp / sr;
    const double decay = std::exp(-1.0 / (tau * sr));
    double env = amp;
    for (std::size_t i = 0; i < n; ++i) {
      out.samples[i] += env * std::sin(w * static_cast<double>(i) + phase);
      env *= decay;
    }
  }

  const auto attack = static_cast<std::size_t>(cfg.attack_ms * 1e-3 * sr);
  for (std::size_t i = 0; i < std::min(attack, n); ++i)
    out.samples[i] *= static_cast<double>(i) / static_cast<double>(attack);
  const auto release = std::min(n, static_cast<std::size_t>(cfg.release_ms * 1e-3 * sr));
  for (std::size_t i = 0; i < release; ++i)
    out.samples[n - 1 - i] *= static_cast<double>(i) / static_cast<double>(release);

  peak_normalize(out.samples, 1.0);
  if (cfg.noise_floor > 0.0)
    for (double& s : out.samples) s += cfg.noise_floor * noise(rng);
  peak_normalize(out.samples, velocity_to_amplitude(velocity, cfg));
  return out;
}

tfr::AudioBuffer render_mixture(const Score& score, const SynthConfig& cfg, std::size_t length) {
  cfg.validate();
  std::map<int, std::vector<const eval::NoteEvent*>> by_pitch;
  for (const auto& e : score.events) {
    eval::validate(e);
    by_pitch[e.midi_pitch].push_back(&e);
  }
  for (auto& [pitch, notes] : by_pitch) {
    std::sort(notes.begin(), notes.end(),
              [](const auto* a, const auto* b) { return a->onset < b->onset; });
    for (std::size_t i = 1; i < notes.size(); ++i) {
      const double prev_end = notes[i - 1]->offset.value_or(notes[i - 1]->onset + kDefaultNoteDuration);
      require(notes[i]->onset >= prev_end, ErrorCode::kInvalidArgument,
              "overlapping notes on MIDI pitch " + std::to_string(pitch));
    }
  }

  tfr::AudioBuffer mix;
  mix.sample_rate = cfg.sample_rate;
  mix.samples.assign(length, 0.0);
  for (const auto& e : score.events) {
    const double dur = e.offset.value_or(e.onset + kDefaultNoteDuration) - e.onset;
    const auto note = synthesize_note(e.midi_pitch, dur, std::clamp(e.intensity, 1e-6, 1.0), cfg);
    const auto start = static_cast<std::size_t>(std::llround(e.onset * cfg.sample_rate));
    for (std::size_t i = 0; i < note.samples.size() && start + i < length; ++i)
      mix.samples[start + i] += note.samples[i];
  }
  return mix;
}

std::pair<tfr::AudioBuffer, Score> synthesize_piece(const Score& score, const SynthConfig& cfg,
                                                    double min_duration_s, double tail_s) {
  double end = 0.0;
  for (const auto& e : score.events) end = std::max(end, e.offset.value_or(e.onset + kDefaultNoteDuration));
  const double duration = std::max(min_duration_s, score.events.empty() ? 0.0 : end + tail_s);
  const auto length = static_cast<std::size_t>(std::llround(duration * cfg.sample_rate));
  auto mix = render_mixture(score, cfg, length);
  if (cfg.mixture_peak > 0.0) peak_normalize(mix.samples, cfg.mixture_peak);
  return {std::move(mix), score};
}

Score random_score(const RandomScoreConfig& cfg) {
  require(cfg.note_count >= 0 && cfg.max_polyphony >= 1, ErrorCode::kInvalidArgument,
          "invalid random score configuration");
  require(cfg.pitch_low >= 21 && cfg.pitch_high <= 108 && cfg.pitch_low <= cfg.pitch_high,
          ErrorCode::kInvalidArgument, "pitch range must lie within 21..108");
  require(cfg.min_duration_s > 0.0 && cfg.max_duration_s >= cfg.min_duration_s,
          ErrorCode::kInvalidArgument, "invalid duration range");

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::exponential_distribution<double> gap(1.0 / std::max(cfg.mean_gap_s, 1e-6));
  const int tonic = static_cast<int>(rng() % 12);
  static constexpr int kMajor[] = {0, 2, 4, 5, 7, 9, 11};
  std::vector<int> diatonic, chromatic;
  for (int p = cfg.pitch_low; p <= cfg.pitch_high; ++p) {
    chromatic.push_back(p);
    const int degree = ((p - tonic) % 12 + 12) % 12;
    if (std::find(std::begin(kMajor), std::end(kMajor), degree) != std::end(kMajor))
      diatonic.push_back(p);
  }
  if (diatonic.empty()) diatonic = chromatic;

  Score score;
  score.title = "random-" + std::to_string(cfg.seed);
  std::map<int, double> busy_until;  // pitch -> offset of its latest note
  double t = cfg.start_s;
  while (static_cast<int>(score.events.size()) < cfg.note_count) {
    int sounding = 0;
    double next_free = std::numeric_limits<double>::infinity();
    for (const auto& [p, until] : busy_until)
      if (until > t) {
        ++sounding;
        next_free = std::min(next_free, until);
      }
    if (sounding >= cfg.max_polyphony) {
      t = next_free + cfg.min_gap_s;
      continue;
    }
    int size = 1;
    if (cfg.max_polyphony > 1 && unit(rng) < cfg.chord_probability)
      size = 2 + static_cast<int>(rng() % static_cast<std::uint64_t>(cfg.max_polyphony - 1));
    size = std::min({size, cfg.max_polyphony - sounding,
                     cfg.note_count - static_cast<int>(score.events.size())});
    int placed = 0;
    for (int attempt = 0; placed < size && attempt < 64; ++attempt) {
      const auto& pool = unit(rng) < cfg.diatonic_bias ? diatonic : chromatic;
      const int pitch = pool[rng() % pool.size()];
      auto it = busy_until.find(pitch);
      if (it != busy_until.end() && it->second > t) continue;
      eval::NoteEvent e;
      e.midi_pitch = pitch;
      e.onset = t;
      e.offset = t + cfg.min_duration_s + unit(rng) * (cfg.max_duration_s - cfg.min_duration_s);
      e.intensity = cfg.velocity_low + unit(rng) * (cfg.velocity_high - cfg.velocity_low);
      busy_until[pitch] = *e.offset;
      score.events.push_back(e);
      ++placed;
    }
    t += cfg.min_gap_s + gap(rng);
  }
  score.sort();
  return score;
}

tfr::AudioBuffer add_interference(const tfr::AudioBuffer& audio, const InterferenceConfig& cfg) {
  require(cfg.bursts >= 0 && cfg.chirps >= 0, ErrorCode::kInvalidArgument,
          "event counts must be >= 0");
  tfr::AudioBuffer out = audio;
  const double sr = audio.sample_rate;
  const double signal_rms = tfr::rms(audio.samples);
  if (audio.samples.empty() || signal_rms == 0.0) return out;
  const double target_rms = signal_rms * std::pow(10.0, -cfg.snr_db / 20.0);

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double total = audio.duration();

  auto place = [&](std::vector<double>& event) {
    const double r = tfr::rms(event);
    if (r == 0.0 || event.size() >= out.samples.size()) return;
    const auto start = static_cast<std::size_t>(unit(rng) * static_cast<double>(out.samples.size() - event.size()));
    for (std::size_t i = 0; i < event.size(); ++i) out.samples[start + i] += event[i] * target_rms / r;
  };

  for (int b = 0; b < cfg.bursts; ++b) {
    const double dur = std::min(total, cfg.burst_min_s + unit(rng) * (cfg.burst_max_s - cfg.burst_min_s));
    std::vector<double> ev(static_cast<std::size_t>(dur * sr));
    const double tau = std::max(dur / 4.0, 1e-3);
    for (std::size_t i = 0; i < ev.size(); ++i) ev[i] = noise(rng) * std::exp(-static_cast<double>(i) / sr / tau);
    place(ev);
  }
  for (int c = 0; c < cfg.chirps; ++c) {
    const double dur = std::min(total, cfg.chirp_min_s + unit(rng) * (cfg.chirp_max_s - cfg.chirp_min_s));
    const double lo = std::log(cfg.chirp_f_low), hi = std::log(cfg.chirp_f_high);
    const double f_start = std::exp(lo + unit(rng) * (hi - lo));
    const double f_end = std::exp(lo + unit(rng) * (hi - lo));
    std::vector<double> ev(static_cast<std::size_t>(dur * sr));
    double phase = 0.0;
    for (std::size_t i = 0; i < ev.size(); ++i) {
      const double frac = static_cast<double>(i) / static_cast<double>(ev.size());
      const double f = f_start * std::pow(f_end / f_start, frac);
      phase += kTwoPi * f / sr;
      const double env = std::sin(std::numbers::pi * frac);
      ev[i] = env * (std::sin(phase) + 0.5 * std::sin(2.0 * phase) + 0.25 * std::sin(3.0 * phase));
    }
    place(ev);
  }
  double peak = 0.0;
  for (double s : out.samples) peak = std::max(peak, std::abs(s));
  if (peak > 1.0)
    for (double& s : out.samples) s /= peak;
  return out;
}

}  // namespace amt::synth
