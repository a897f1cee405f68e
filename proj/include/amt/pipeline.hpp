#pragma once

#include "amt/container.hpp"
#include "amt/decoder.hpp"
#include "amt/dictionary.hpp"
#include "amt/loudness.hpp"
#include "amt/score.hpp"
#include "amt/solver.hpp"
#include "amt/synth.hpp"
#include "amt/tfr.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace amt::pipe {

enum class LoudnessMode { kGlasbergMoore, kAWeighting, kContour, kUniform };
enum class DecoderMode { kThreshold, kLstm, kBlstm };

std::string loudness_mode_name(LoudnessMode mode);
LoudnessMode parse_loudness_mode(const std::string& name);
std::string decoder_mode_name(DecoderMode mode);
DecoderMode parse_decoder_mode(const std::string& name);

/// Solver settings tuned on the synthetic suite (lambdas are resolved per
/// dictionary by resolve_solver).
fact::SolverConfig tuned_solver_config();

struct PipelineConfig {
  tfr::TfrConfig tfr;
  double pattern_seconds = 1.0;  // L = round(pattern_seconds * frame_rate)
  double onset_gate = dict::kOnsetGate;

  // lambda1 = lambda1_scale * mean column sum of P, lambda2 = tv_ratio * lambda1.
  double lambda1_scale = 0.01;
  double tv_ratio = 0.5;
  fact::SolverConfig solver = tuned_solver_config();
  double min_run_seconds = 0.1;  // L_min, clamped to every key's L_k
  fact::MarkovConfig markov;

  LoudnessMode loudness = LoudnessMode::kGlasbergMoore;
  std::filesystem::path contour_path;  // empty: the shipped 35-phon table
  loud::GmConfig gm;
  double beta = 0.5;
  int reference_key = 60;

  DecoderMode decoder_mode = DecoderMode::kThreshold;
  int hidden = 100;
  int layers = 2;
  double delay_s = 0.4;
  dec::TrainConfig train;
  dec::DecodeConfig decode;

  std::filesystem::path dictionary_path;
  std::filesystem::path profile_path;
  std::filesystem::path model_path;

  void validate() const;
};

nlohmann::json to_json(const PipelineConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected.
PipelineConfig config_from_json(const nlohmann::json& j, PipelineConfig base = {});
PipelineConfig read_config(const std::filesystem::path& path);

/// Solver settings for one dictionary and config: lambdas and L_min resolved.
fact::SolverConfig resolve_solver(const PipelineConfig& cfg, const dict::PatternTensor& p);
fact::MarkovConfig resolve_markov(const PipelineConfig& cfg, const dict::PatternTensor& p);

// --- persistence -----------------------------------------------------------

io::Container dictionary_to_container(const dict::PatternTensor& p, const tfr::TfrConfig& cfg);
dict::PatternTensor dictionary_from_container(const io::Container& c, tfr::TfrConfig* cfg = nullptr);
void save_dictionary(const std::filesystem::path& path, const dict::PatternTensor& p,
                     const tfr::TfrConfig& cfg);
dict::PatternTensor load_dictionary(const std::filesystem::path& path, tfr::TfrConfig* cfg = nullptr);

struct DecoderModel {
  dec::LstmParams<float> params;
  double frame_rate = 0.0;
};

io::Container model_to_container(const DecoderModel& model);
DecoderModel model_from_container(const io::Container& c);
void save_model(const std::filesystem::path& path, const DecoderModel& model);
DecoderModel load_model(const std::filesystem::path& path);

/// 8-bit binary PGM of log(1 + x), scaled so the maximum maps to 255 (an
/// all-zero matrix gives an all-zero image). Rows become image rows.
std::vector<unsigned char> plot_pgm(const Eigen::MatrixXd& m);
void emit_plot(const Eigen::MatrixXd& m, const std::filesystem::path& path);

// --- calibration -----------------------------------------------------------

/// Reads every `<midi>.wav` in a directory, converted to the working rate.
std::map<int, tfr::AudioBuffer> load_calibration_set(const std::filesystem::path& dir);

/// Unit-RMS copy of a note; silent input is a calibration error.
tfr::AudioBuffer rms_normalized(const tfr::AudioBuffer& audio);

dict::PatternTensor build_dictionary(const std::map<int, tfr::AudioBuffer>& notes,
                                     const PipelineConfig& cfg);

/// Per-key amplitude scalers for the configured loudness mode.
std::vector<double> loudness_scalers(const std::map<int, tfr::AudioBuffer>& notes,
                                     const dict::PatternTensor& p, const PipelineConfig& cfg);

struct Calibration {
  dict::PatternTensor dictionary;
  loud::ThresholdProfile profile;
};

/// Dictionary from the RMS-normalized notes, loudness scalers, and the
/// threshold profile from the (unnormalized) low-intensity note of `low_key`.
Calibration calibrate(const std::map<int, tfr::AudioBuffer>& notes, const tfr::AudioBuffer& low_note,
                      int low_key, const PipelineConfig& cfg);

/// Replaces the profile's scalers (and thresholds) keeping its base threshold.
loud::ThresholdProfile with_scalers(const loud::ThresholdProfile& profile, int low_key,
                                    const std::vector<double>& scalers);

// --- synthetic material ----------------------------------------------------

// Common output gain of every rendered file. Pieces are not peak-normalized,
// so their level stays comparable to the calibration notes and the
// low-intensity note; the gain keeps polyphonic mixtures inside [-1, 1].
inline constexpr double kRenderGain = 0.2;
inline constexpr double kCalibrationLead = 0.25;  // seconds of silence before a note

/// One calibration note: lead silence, the note, one analysis window of tail.
tfr::AudioBuffer render_calibration_note(int midi, double velocity, const synth::SynthConfig& timbre,
                                         double duration_s = 2.0);
std::map<int, tfr::AudioBuffer> render_calibration_set(const std::vector<int>& midi_pitches,
                                                       double velocity,
                                                       const synth::SynthConfig& timbre);
/// Unnormalized mixture of the score at kRenderGain, with a 0.5 s tail.
tfr::AudioBuffer render_piece(const Score& score, const synth::SynthConfig& timbre);

// --- transcription ---------------------------------------------------------

struct Transcription {
  Score score;
  fact::ActivityTensor activity;
  double frame_rate = 0.0;
  std::vector<std::string> diagnostics;
};

/// Runs the staged solver on the piece; stage 3 uses the profile thresholds.
fact::SolveResult solve_piece(const tfr::AudioBuffer& audio, const dict::PatternTensor& p,
                              const loud::ThresholdProfile& profile, const PipelineConfig& cfg);

/// Threshold mode needs no model; lstm/blstm modes require one.
Transcription run_transcribe(const tfr::AudioBuffer& audio, const dict::PatternTensor& p,
                             const loud::ThresholdProfile& profile, const PipelineConfig& cfg,
                             const DecoderModel* model = nullptr);

/// Turns a solved activity tensor into notes with the configured decoder.
Score decode_activity(const fact::ActivityTensor& activity, const dict::PatternTensor& p,
                      const loud::ThresholdProfile& profile, const PipelineConfig& cfg,
                      const DecoderModel* model = nullptr);

/// Decoder features for a transcribed piece (padded with delay frames in uni mode).
Eigen::MatrixXd decoder_features(const fact::ActivityTensor& a, const loud::ThresholdProfile& profile,
                                 int delay_frames);

/// Training sequence: features from the solved piece, targets from the ground
/// truth expressed in activation frames (onsets shifted by the onset lag).
dec::Sequence training_sequence(const fact::ActivityTensor& a, const loud::ThresholdProfile& profile,
                                const dict::PatternTensor& p, const std::vector<eval::NoteEvent>& truth,
                                const PipelineConfig& cfg, int delay_frames);

/// Solves every piece with the calibration and turns it into a training sequence.
std::vector<dec::Sequence> training_set(const std::vector<std::pair<tfr::AudioBuffer, Score>>& pieces,
                                        const Calibration& calibration, const PipelineConfig& cfg);

int delay_frames_for(const PipelineConfig& cfg, double frame_rate);

/// Trains a fresh decoder of the configured mode and size on the sequences.
DecoderModel train_decoder(const std::vector<dec::Sequence>& data, double frame_rate,
                           const PipelineConfig& cfg,
                           const std::function<void(int, double)>& on_epoch = {});

}  // namespace amt::pipe
