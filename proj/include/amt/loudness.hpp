#pragma once

#include "amt/dictionary.hpp"
#include "amt/solver.hpp"
#include "amt/tfr.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace amt::loud {

// Gains are in dB and state how much more level a tone at that frequency
// needs to sound as loud as a 1 kHz tone (inverted A-weighting is +19.1 dB at
// 100 Hz).
struct LoudnessCurve {
  enum class Kind { kInvertedAWeighting, kTabulated };
  Kind kind = Kind::kInvertedAWeighting;
  std::vector<std::pair<double, double>> table;  // (Hz, dB), strictly increasing Hz

  static LoudnessCurve inverted_a_weighting();
  static LoudnessCurve tabulated(std::vector<std::pair<double, double>> table);
  /// Two-column CSV (Hz, dB); lines starting with '#' and a non-numeric
  /// header line are skipped.
  static LoudnessCurve from_csv(const std::filesystem::path& path);

  double min_frequency() const;
  double max_frequency() const;
  void validate() const;
};

/// IEC 61672 A-weighting in dB, exactly 0 at 1 kHz.
double a_weighting_db(double f);

double equal_loudness_gain(const LoudnessCurve& curve, double f);

/// Directory holding the shipped data tables (AMT_DATA_DIR overrides).
std::filesystem::path data_directory();

struct GmConfig {
  double assumed_level_db_spl = 30.0;
  // Digital RMS that corresponds to assumed_level_db_spl.
  double reference_rms = 1.0;
  double erb_step = 0.25;  // cam
  double window_ms = 46.0;
  double analysis_hop_ms = 2.0;  // loudness is interpolated onto a 1 ms grid
  double stl_attack = 0.045;
  double stl_release = 0.02;
  double ltl_attack = 0.01;
  double ltl_release = 0.0005;
  // Sone scaling constant C; 0 means "fit so that a 1 kHz tone at 40 dB SPL
  // has a long-term loudness of 1 sone".
  double sone_calibration = 0.0;

  void validate() const;
};

struct GmLoudness {
  std::vector<double> instantaneous;  // sones, 1 ms grid
  std::vector<double> short_term;
  std::vector<double> long_term;
  double max_loudness = 0.0;  // max of long_term
};

double erb_hz(double f);
double hz_to_cam(double f);
double cam_to_hz(double cam);

/// Combined outer/middle-ear transfer (dB) at frequency f.
double outer_middle_ear_db(double f);

GmLoudness glasberg_moore_loudness(const tfr::AudioBuffer& audio, const GmConfig& cfg = {});

/// The C that maps the 1 kHz / 40 dB SPL anchor to exactly 1 sone.
double fit_sone_calibration(GmConfig cfg);

/// Per-key amplitude scalers that give every RMS-normalized note the loudness
/// of the reference note. Keys are returned in ascending MIDI order.
std::vector<double> compute_loudness_scalers(const std::map<int, tfr::AudioBuffer>& notes,
                                             int reference_key, const GmConfig& cfg = {});

/// s_k = 10^((gain(f0_k) - gain(f0_ref)) / 20).
std::vector<double> curve_scalers(const LoudnessCurve& curve, const std::vector<int>& midi_pitches,
                                  int reference_key);

struct ThresholdProfile {
  double base_threshold = 0.0;
  int reference_key = 60;  // MIDI key whose scaler is 1
  std::vector<int> midi_pitches;
  std::vector<double> scalers;
  std::vector<double> thresholds;

  void validate() const;
  double threshold_for(int midi) const;
};

/// a_min(k) = base * s_k / s_{k0}.
ThresholdProfile make_threshold_profile(double base_threshold, int low_key,
                                        const std::vector<int>& midi_pitches,
                                        const std::vector<double>& scalers, int reference_key);

struct ProfileSolve {
  const dict::PatternTensor* patterns = nullptr;
  tfr::TfrConfig tfr;
  fact::SolverConfig solver;
  fact::MarkovConfig markov;
};

/// Transcribes the low-intensity note with stages 1-2 and sets
/// base = beta * max_n A[k0, 0, n].
ThresholdProfile build_threshold_profile(const tfr::AudioBuffer& low_note, int low_key,
                                         const std::vector<double>& scalers, int reference_key,
                                         const ProfileSolve& solve, double beta = 0.5);

std::string profile_to_json(const ThresholdProfile& profile);
ThresholdProfile profile_from_json(const std::string& text);
void write_profile(const std::filesystem::path& path, const ThresholdProfile& profile);
ThresholdProfile read_profile(const std::filesystem::path& path);

}  // namespace amt::loud
