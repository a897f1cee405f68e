#pragma once

#include "amt/eval.hpp"
#include "amt/factorization.hpp"
#include "amt/loudness.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace amt::dec {

enum class Mode { kUni, kBi };

std::string mode_name(Mode mode);
Mode parse_mode(const std::string& name);

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// One LSTM layer in one direction. Gate rows are stacked as
// [input; forget; output; cell candidate], each `hidden` rows tall.
template <typename Scalar>
struct LstmCell {
  Matrix<Scalar> w;  // 4H x in
  Matrix<Scalar> u;  // 4H x H
  Vector<Scalar> b;  // 4H
};

template <typename Scalar>
struct LstmParams {
  Mode mode = Mode::kUni;
  int input = 88;
  int hidden = 100;
  int output = 88;
  int layers = 2;
  int delay_frames = 0;  // uni mode: output at n is the posterior for n - delay
  std::vector<LstmCell<Scalar>> cells;  // index layer * directions() + direction
  Matrix<Scalar> dense_w;               // output x (H * directions)
  Vector<Scalar> dense_b;

  int directions() const { return mode == Mode::kBi ? 2 : 1; }
  int layer_input(int layer) const { return layer == 0 ? input : hidden * directions(); }

  /// Zero-initialized parameters of the right shapes.
  static LstmParams zeros(Mode mode, int input, int hidden, int output, int layers,
                          int delay_frames);
  /// Glorot-uniform weights, zero biases except forget-gate biases of 1.
  static LstmParams glorot(Mode mode, int input, int hidden, int output, int layers,
                           int delay_frames, std::uint64_t seed);

  void validate() const;

  /// Visits every parameter tensor as (name, data, size) in a fixed order.
  void for_each(const std::function<void(const std::string&, Scalar*, Eigen::Index)>& fn);
  Eigen::Index parameter_count() const;

  template <typename Other>
  LstmParams<Other> cast() const {
    LstmParams<Other> out;
    out.mode = mode;
    out.input = input;
    out.hidden = hidden;
    out.output = output;
    out.layers = layers;
    out.delay_frames = delay_frames;
    for (const auto& c : cells) {
      out.cells.push_back({c.w.template cast<Other>(), c.u.template cast<Other>(),
                           c.b.template cast<Other>()});
    }
    out.dense_w = dense_w.template cast<Other>();
    out.dense_b = dense_b.template cast<Other>();
    return out;
  }
};

struct TrainConfig {
  double dropout = 0.5;
  double label_smoothing = 0.05;
  double adam_step = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int chunk_frames = 2000;
  int epochs = 10;
  int batch_size = 4;  // sequences per Adam step
  int target_width = 3;  // frames set to 1 around each true onset (odd)
  std::uint64_t seed = 0;

  void validate() const;
};

/// feat[k, n] = A[k, 0, n] / a_min(k), then divided by the global standard
/// deviation over all entries (left unscaled when that deviation is 0).
Eigen::MatrixXd normalize_activations(const fact::ActivityTensor& a,
                                      const loud::ThresholdProfile& profile);

/// Posteriors (output x N). In uni mode column n holds the posterior for frame
/// n - delay_frames. Sequences longer than chunk_frames are processed in
/// chunks; the recurrent state is carried across chunks in uni mode and reset
/// in bi mode. `training` enables inverted dropout with masks drawn from
/// dropout_seed.
template <typename Scalar>
Matrix<Scalar> lstm_forward(const LstmParams<Scalar>& params, const Matrix<Scalar>& features,
                            bool training = false, double dropout = 0.0,
                            std::uint64_t dropout_seed = 0, int chunk_frames = 2000);

/// Onset targets (output x N) for events, widened to `width` frames and
/// shifted by delay_frames.
Eigen::MatrixXd onset_targets(const std::vector<eval::NoteEvent>& events, int frames,
                              double frame_rate, int delay_frames, int width = 3,
                              int lowest_midi = 21, int keys = 88);

/// Mean elementwise cross-entropy against smoothed targets and its gradient
/// with respect to every parameter (same layout as params). Dropout masks are
/// drawn from `dropout_seed` when dropout > 0.
template <typename Scalar>
double loss_and_gradient(const LstmParams<Scalar>& params, const Matrix<Scalar>& features,
                         const Matrix<Scalar>& targets, const TrainConfig& cfg,
                         std::uint64_t dropout_seed, LstmParams<Scalar>* gradient);

/// Same loss without gradients (no dropout).
template <typename Scalar>
double evaluate_loss(const LstmParams<Scalar>& params, const Matrix<Scalar>& features,
                     const Matrix<Scalar>& targets, const TrainConfig& cfg);

template <typename Scalar>
class AdamState {
 public:
  explicit AdamState(const LstmParams<Scalar>& shape);
  /// One Adam step; parameters with zero gradient stay unchanged.
  void step(LstmParams<Scalar>& params, LstmParams<Scalar>& gradient, const TrainConfig& cfg);
  long steps() const { return t_; }

 private:
  std::vector<double> m_, v_;
  long t_ = 0;
};

struct Sequence {
  Eigen::MatrixXd features;  // input x N
  Eigen::MatrixXd targets;   // output x N (already shifted for uni mode)
};

/// Averages gradients over batches of sequences and applies Adam; returns the
/// mean training loss of every epoch. A non-finite loss aborts with an error.
template <typename Scalar>
std::vector<double> train(LstmParams<Scalar>& params, const std::vector<Sequence>& data,
                          const TrainConfig& cfg,
                          const std::function<void(int, double)>& on_epoch = {});

struct DecodeConfig {
  double threshold = 0.5;
  int peak_radius = 2;   // frames
  double min_gap_s = 0.05;
  int delay_frames = 0;  // subtracted from detected frames (uni mode)
  double time_offset_s = 0.0;
  int lowest_midi = 21;
};

/// Peak picking per key: value >= threshold, maximum within +-peak_radius,
/// minimum gap per key keeping the stronger peak; onset = frame / rate + offset.
std::vector<eval::NoteEvent> decode_onsets(const Eigen::MatrixXd& posteriors, double frame_rate,
                                           const DecodeConfig& cfg);

/// Same peak and gap rules applied to A[k, 0, n] against per-key thresholds.
std::vector<eval::NoteEvent> decode_activations(const fact::ActivityTensor& a,
                                                const std::vector<double>& thresholds,
                                                const std::vector<int>& midi_pitches,
                                                double frame_rate, const DecodeConfig& cfg);

}  // namespace amt::dec
