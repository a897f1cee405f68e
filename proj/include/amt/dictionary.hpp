#pragma once

#include "amt/tfr.hpp"

#include <Eigen/Dense>

#include <vector>

namespace amt::dict {

/// Spectro-temporal pattern dictionary P (M x L x K), stored unfolded as an
/// M x (L*K) matrix whose column k*L + l holds template l of key k.
struct PatternTensor {
  Eigen::MatrixXd values;
  int frames = 0;                       // L
  std::vector<int> effective_lengths;   // L_k, 1 <= L_k <= L
  std::vector<int> midi_pitches;        // ascending
  double frame_rate = 0.0;
  // Seconds from the start of a pattern's first frame to the note start it
  // was cut from; maps activation frames back to onset times.
  double onset_lag_s = 0.0;

  int bins() const { return static_cast<int>(values.rows()); }
  int keys() const { return static_cast<int>(midi_pitches.size()); }
  Eigen::Index column(int key, int frame) const {
    return static_cast<Eigen::Index>(key) * frames + frame;
  }
  double at(int m, int l, int k) const { return values(m, column(k, l)); }
  double& at(int m, int l, int k) { return values(m, column(k, l)); }
  int key_index(int midi) const;  // -1 when absent

  /// Throws when any structural invariant is violated.
  void validate() const;
};

struct NotePattern {
  int midi = 0;
  Eigen::MatrixXd pattern;  // M x L
  int effective_length = 0;
  int onset_frame = 0;
  double onset_lag_s = 0.0;
};

inline constexpr double kOnsetGate = 0.1;
inline constexpr double kEffectiveLengthFloor = 1e-3;

/// Cuts L frames starting at the first frame whose energy exceeds
/// `onset_gate` times the loudest frame (10% by default). Frames above 0.1% of
/// the onset frame's energy count towards the effective length.
NotePattern build_pattern(const tfr::AudioBuffer& note_audio, const tfr::TfrConfig& cfg,
                          int frames, int midi = 0, double onset_gate = kOnsetGate);

/// Stacks patterns in ascending MIDI order. When `expected_keys` is non-empty
/// every listed key must be present exactly once.
PatternTensor assemble_dictionary(std::vector<NotePattern> patterns, double frame_rate,
                                  const std::vector<int>& expected_keys = {});

/// round(seconds * frame_rate), at least 1.
int frames_for(double seconds, double frame_rate);

}  // namespace amt::dict
