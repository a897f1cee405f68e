#include "amt/dictionary.hpp"

#include "amt/error.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace amt::dict {

int PatternTensor::key_index(int midi) const {
  const auto it = std::lower_bound(midi_pitches.begin(), midi_pitches.end(), midi);
  if (it == midi_pitches.end() || *it != midi) return -1;
  return static_cast<int>(it - midi_pitches.begin());
}

void PatternTensor::validate() const {
  const int k = keys();
  require(frames >= 1, ErrorCode::kShapeMismatch, "pattern length must be >= 1");
  require(values.cols() == static_cast<Eigen::Index>(frames) * k, ErrorCode::kShapeMismatch,
          "pattern tensor column count does not match L*K");
  require(static_cast<int>(effective_lengths.size()) == k, ErrorCode::kShapeMismatch,
          "effective length count does not match K");
  require(std::is_sorted(midi_pitches.begin(), midi_pitches.end()) &&
              std::adjacent_find(midi_pitches.begin(), midi_pitches.end()) == midi_pitches.end(),
          ErrorCode::kInvalidArgument, "MIDI pitches must be strictly ascending");
  require(values.allFinite() && (values.array() >= 0.0).all(), ErrorCode::kInvalidArgument,
          "pattern entries must be finite and non-negative");
  for (int key = 0; key < k; ++key) {
    const int lk = effective_lengths[static_cast<std::size_t>(key)];
    require(lk >= 1 && lk <= frames, ErrorCode::kInvalidArgument, "effective length out of range");
    for (int l = lk; l < frames; ++l) {
      require((values.col(column(key, l)).array() == 0.0).all(), ErrorCode::kInvalidArgument,
              "pattern entries beyond the effective length must be zero");
    }
  }
}

int frames_for(double seconds, double frame_rate) {
  return std::max(1, static_cast<int>(std::lround(seconds * frame_rate)));
}

NotePattern build_pattern(const tfr::AudioBuffer& note_audio, const tfr::TfrConfig& cfg,
                          int frames, int midi, double onset_gate) {
  require(frames >= 1, ErrorCode::kInvalidArgument, "pattern length must be >= 1");
  require(onset_gate > 0.0 && onset_gate < 1.0, ErrorCode::kInvalidArgument,
          "onset gate must lie in (0, 1)");
  const tfr::Spectrogram spec = tfr::compute_spectrogram(note_audio, cfg);
  const Eigen::VectorXd energy = spec.values.colwise().squaredNorm().transpose();
  const double peak = energy.maxCoeff();
  int onset = -1;
  for (Eigen::Index n = 0; n < energy.size(); ++n) {
    if (energy(n) > onset_gate * peak) {
      onset = static_cast<int>(n);
      break;
    }
  }
  if (peak <= 0.0 || onset < 0) {
    fail(ErrorCode::kCalibration,
         "calibration note " + std::to_string(midi) + " has no frame above the onset gate");
  }

  NotePattern out;
  out.midi = midi;
  out.onset_frame = onset;
  out.pattern = Eigen::MatrixXd::Zero(spec.bins(), frames);
  const int available = std::min(frames, spec.frames() - onset);
  out.pattern.leftCols(available) = spec.values.middleCols(onset, available);

  const double floor = kEffectiveLengthFloor * energy(onset);
  int effective = 0;
  for (int l = 0; l < available; ++l) {
    if (energy(onset + l) > floor) effective = l + 1;
  }
  out.effective_length = std::clamp(effective, 1, frames);
  // Templates past the effective length are cleared so the tensor invariant holds.
  out.pattern.rightCols(frames - out.effective_length).setZero();

  double amp_peak = 0.0;
  for (double s : note_audio.samples) amp_peak = std::max(amp_peak, std::abs(s));
  std::size_t start = 0;
  while (start < note_audio.samples.size() &&
         std::abs(note_audio.samples[start]) < 0.05 * amp_peak) {
    ++start;
  }
  out.onset_lag_s = (static_cast<double>(start) - static_cast<double>(onset) * cfg.hop) /
                    note_audio.sample_rate;
  return out;
}

PatternTensor assemble_dictionary(std::vector<NotePattern> patterns, double frame_rate,
                                  const std::vector<int>& expected_keys) {
  require(!patterns.empty(), ErrorCode::kInvalidArgument, "no patterns to assemble");
  std::sort(patterns.begin(), patterns.end(),
            [](const NotePattern& a, const NotePattern& b) { return a.midi < b.midi; });
  for (std::size_t i = 1; i < patterns.size(); ++i) {
    if (patterns[i].midi == patterns[i - 1].midi) {
      fail(ErrorCode::kInvalidArgument, "duplicate pattern for MIDI key " +
                                            std::to_string(patterns[i].midi));
    }
  }
  if (!expected_keys.empty()) {
    const std::set<int> have = [&] {
      std::set<int> s;
      for (const auto& p : patterns) s.insert(p.midi);
      return s;
    }();
    for (int key : expected_keys) {
      if (!have.contains(key)) fail(ErrorCode::kInvalidArgument, "missing pattern for MIDI key " + std::to_string(key));
    }
    require(have.size() == std::set<int>(expected_keys.begin(), expected_keys.end()).size(),
            ErrorCode::kInvalidArgument, "unexpected extra calibration keys");
  }

  const Eigen::Index m = patterns.front().pattern.rows();
  const Eigen::Index l = patterns.front().pattern.cols();
  PatternTensor p;
  p.frames = static_cast<int>(l);
  p.frame_rate = frame_rate;
  p.values.resize(m, l * static_cast<Eigen::Index>(patterns.size()));
  std::vector<double> lags;
  for (std::size_t k = 0; k < patterns.size(); ++k) {
    const NotePattern& np = patterns[k];
    if (np.pattern.rows() != m || np.pattern.cols() != l) {
      fail(ErrorCode::kShapeMismatch, "pattern for MIDI key " + std::to_string(np.midi) +
                                          " has mismatched M or L");
    }
    p.values.middleCols(static_cast<Eigen::Index>(k) * l, l) = np.pattern;
    p.effective_lengths.push_back(np.effective_length);
    p.midi_pitches.push_back(np.midi);
    lags.push_back(np.onset_lag_s);
  }
  std::nth_element(lags.begin(), lags.begin() + static_cast<std::ptrdiff_t>(lags.size() / 2), lags.end());
  p.onset_lag_s = lags[lags.size() / 2];
  p.validate();
  return p;
}

}  // namespace amt::dict
