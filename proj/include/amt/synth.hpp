#pragma once

#include "amt/score.hpp"
#include "amt/tfr.hpp"

#include <cstdint>
#include <string>
#include <utility>

namespace amt::synth {

/// Additive piano-like tone generator. Partial p of a note with fundamental
/// f0 sits at p*f0*sqrt(1 + B p^2) with amplitude p^-rolloff and decays with
/// time constant decay_s * 2^(-decay_pitch_slope*(pitch-60)/12) / p^partial_decay_exponent.
struct SynthConfig {
  int partials = 12;
  double rolloff = 1.0;
  double decay_s = 1.0;
  double decay_pitch_slope = 0.3;
  double partial_decay_exponent = 0.5;
  double inharmonicity = 1e-4;
  double attack_ms = 5.0;
  double release_ms = 30.0;
  double noise_floor = 1e-4;         // white-noise std relative to the note peak
  double velocity_exponent = 1.0;    // amplitude = velocity^exponent
  double mixture_peak = 0.9;         // <= 0 disables piece normalization
  int sample_rate = tfr::kWorkingSampleRate;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Timbre used for calibration and test material.
SynthConfig test_timbre();
/// Disjoint timbre used only to render decoder training material.
SynthConfig train_timbre();

double midi_to_hz(int midi);
double velocity_to_amplitude(double velocity, const SynthConfig& cfg);

tfr::AudioBuffer synthesize_note(int midi_pitch, double duration_s, double velocity,
                                 const SynthConfig& cfg);

/// Unnormalized additive mixture of all score notes, `length` samples long.
tfr::AudioBuffer render_mixture(const Score& score, const SynthConfig& cfg, std::size_t length);

/// Renders the score, then peak-normalizes the mixture to cfg.mixture_peak.
/// The audio lasts until the last offset plus `tail_s`, and at least `min_duration_s`.
std::pair<tfr::AudioBuffer, Score> synthesize_piece(const Score& score, const SynthConfig& cfg,
                                                    double min_duration_s = 0.0,
                                                    double tail_s = 0.5);

inline constexpr double kDefaultNoteDuration = 1.0;

struct RandomScoreConfig {
  int note_count = 30;
  int max_polyphony = 4;
  double chord_probability = 0.3;
  double mean_gap_s = 0.35;      // mean of the exponential inter-onset gap
  double min_gap_s = 0.08;
  double min_duration_s = 0.2;
  double max_duration_s = 2.0;
  int pitch_low = 21;
  int pitch_high = 108;
  double diatonic_bias = 0.85;   // probability of drawing from the piece's key
  double velocity_low = 0.3;
  double velocity_high = 1.0;
  double start_s = 0.25;
  std::uint64_t seed = 1;
};

Score random_score(const RandomScoreConfig& cfg);

/// Short broadband bursts and pitched chirps, each scaled so that the piece
/// RMS over the event's RMS equals snr_db.
struct InterferenceConfig {
  int bursts = 3;
  int chirps = 2;
  double snr_db = 10.0;
  double burst_min_s = 0.05;
  double burst_max_s = 0.2;
  double chirp_min_s = 0.1;
  double chirp_max_s = 0.4;
  double chirp_f_low = 200.0;
  double chirp_f_high = 2000.0;
  std::uint64_t seed = 1;
};

tfr::AudioBuffer add_interference(const tfr::AudioBuffer& audio, const InterferenceConfig& cfg);

}  // namespace amt::synth
