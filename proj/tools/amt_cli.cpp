#include "amt/error.hpp"
#include "amt/eval.hpp"
#include "amt/pipeline.hpp"
#include "amt/score.hpp"
#include "amt/solver.hpp"
#include "amt/synth.hpp"
#include "amt/tfr.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace amt;
using nlohmann::json;

namespace {

struct Overrides {
  std::optional<int> bins_per_octave;
  std::optional<int> hop;
  std::optional<double> pattern_seconds;
  std::optional<double> min_run_seconds;
  std::optional<std::string> loudness;
  std::optional<double> beta;
  std::optional<int> reference_key;
  std::optional<std::string> decoder;
  std::optional<int> hidden;
  std::optional<int> layers;
  std::optional<int> epochs;
  std::optional<int> seed;
  std::optional<int> precision;
};

void add_tfr_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--bins-per-octave", o.bins_per_octave, "Log-frequency resolution");
  cmd->add_option("--hop", o.hop, "STFT hop in samples");
}

void add_solver_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--min-run-seconds", o.min_run_seconds, "Minimum note run (Markov L_min)");
  cmd->add_option("--precision", o.precision, "Solver precision (32 or 64)");
}

pipe::PipelineConfig resolve_config(const std::string& path, const Overrides& o) {
  pipe::PipelineConfig cfg = path.empty() ? pipe::PipelineConfig{} : pipe::read_config(path);
  if (o.bins_per_octave) cfg.tfr.bins_per_octave = *o.bins_per_octave;
  if (o.hop) cfg.tfr.hop = *o.hop;
  if (o.pattern_seconds) cfg.pattern_seconds = *o.pattern_seconds;
  if (o.min_run_seconds) cfg.min_run_seconds = *o.min_run_seconds;
  if (o.loudness) cfg.loudness = pipe::parse_loudness_mode(*o.loudness);
  if (o.beta) cfg.beta = *o.beta;
  if (o.reference_key) cfg.reference_key = *o.reference_key;
  if (o.decoder) cfg.decoder_mode = pipe::parse_decoder_mode(*o.decoder);
  if (o.hidden) cfg.hidden = *o.hidden;
  if (o.layers) cfg.layers = *o.layers;
  if (o.epochs) cfg.train.epochs = *o.epochs;
  if (o.seed) {
    cfg.train.seed = static_cast<std::uint64_t>(*o.seed);
    cfg.solver.seed = static_cast<std::uint64_t>(*o.seed);
  }
  if (o.precision) {
    require(*o.precision == 32 || *o.precision == 64, ErrorCode::kInvalidArgument,
            "--precision must be 32 or 64");
    cfg.solver.precision = *o.precision == 32 ? fact::Precision::kFloat32 : fact::Precision::kFloat64;
  }
  cfg.validate();
  return cfg;
}

fs::path pick(const std::string& flag, const fs::path& from_config, const char* what) {
  const fs::path p = flag.empty() ? from_config : fs::path(flag);
  require(!p.empty(), ErrorCode::kInvalidArgument, std::string("no ") + what + " path given");
  return p;
}

synth::SynthConfig timbre_named(const std::string& name) {
  if (name == "test") return synth::test_timbre();
  if (name == "train") return synth::train_timbre();
  fail(ErrorCode::kInvalidArgument, "unknown timbre '" + name + "' (test, train)");
}

void print_json(const json& j) { std::cout << j.dump(2) << "\n"; }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  out << text;
}

// --- commands ----------------------------------------------------------------

struct CalibrateArgs {
  std::string calibration_dir, low_note, dictionary, profile;
  int low_key = 60;
};

void run_calibrate(const pipe::PipelineConfig& cfg, const CalibrateArgs& a) {
  const auto notes = pipe::load_calibration_set(a.calibration_dir);
  const auto low = tfr::load_working_audio(a.low_note);
  const auto cal = pipe::calibrate(notes, low, a.low_key, cfg);
  const fs::path dict_path = pick(a.dictionary, cfg.dictionary_path, "dictionary");
  const fs::path profile_path = pick(a.profile, cfg.profile_path, "profile");
  pipe::save_dictionary(dict_path, cal.dictionary, cfg.tfr);
  loud::write_profile(profile_path, cal.profile);
  print_json({{"keys", cal.dictionary.keys()},
              {"bins", cal.dictionary.bins()},
              {"frames", cal.dictionary.frames},
              {"base_threshold", cal.profile.base_threshold},
              {"loudness_mode", pipe::loudness_mode_name(cfg.loudness)},
              {"dictionary", dict_path.string()},
              {"profile", profile_path.string()}});
}

struct TranscribeArgs {
  std::string input, dictionary, profile, model, output, activity_plot, residuals;
};

void run_transcribe_cmd(pipe::PipelineConfig cfg, const TranscribeArgs& a) {
  tfr::TfrConfig stored;
  const auto p = pipe::load_dictionary(pick(a.dictionary, cfg.dictionary_path, "dictionary"), &stored);
  cfg.tfr = stored;  // analysis must match calibration
  const auto profile = loud::read_profile(pick(a.profile, cfg.profile_path, "profile"));
  std::optional<pipe::DecoderModel> model;
  if (cfg.decoder_mode != pipe::DecoderMode::kThreshold) {
    model = pipe::load_model(pick(a.model, cfg.model_path, "model"));
  }
  const auto audio = tfr::load_working_audio(a.input);
  const auto result = pipe::run_transcribe(audio, p, profile, cfg, model ? &*model : nullptr);
  Score score = result.score;
  score.title = fs::path(a.input).stem().string();
  if (a.output.empty()) {
    std::cout << notes_to_jsonl(score);
  } else {
    write_notes(a.output, score);
  }
  if (!a.activity_plot.empty() && result.activity.time_frames() > 0) {
    pipe::emit_plot(fact::flatten_for_plot(result.activity), a.activity_plot);
  }
  for (const auto& d : result.diagnostics) std::cerr << d << "\n";
  if (!a.output.empty()) {
    print_json({{"notes", score.events.size()},
                {"mode", pipe::decoder_mode_name(cfg.decoder_mode)},
                {"output", a.output}});
  }
}

struct SynthArgs {
  std::string kind = "piece";
  std::string out;
  std::string timbre = "test";
  std::string score;
  int midi = 60;
  int low_key = 60;
  double velocity = 0.8;
  double low_velocity = 0.3;
  double duration = 2.0;
  int count = 10;
  int notes = 30;
  int polyphony = 4;
  int seed = 1;
  double snr_db = 0.0;  // <= 0: no interference
};

tfr::AudioBuffer with_interference(const tfr::AudioBuffer& audio, const SynthArgs& a, int index) {
  if (a.snr_db <= 0.0) return audio;
  synth::InterferenceConfig ic;
  ic.snr_db = a.snr_db;
  ic.seed = static_cast<std::uint64_t>(a.seed) * 1000003u + static_cast<std::uint64_t>(index);
  return synth::add_interference(audio, ic);
}

void run_synth(const SynthArgs& a) {
  const auto timbre = timbre_named(a.timbre);
  require(!a.out.empty(), ErrorCode::kInvalidArgument, "--out is required");
  if (a.kind == "note") {
    tfr::save_wav(a.out, pipe::render_calibration_note(a.midi, a.velocity, timbre, a.duration));
    print_json({{"kind", "note"}, {"midi", a.midi}, {"output", a.out}});
  } else if (a.kind == "calibration") {
    fs::create_directories(a.out);
    std::vector<int> keys;
    for (int m = 21; m <= 108; ++m) keys.push_back(m);
    for (const auto& [midi, audio] : pipe::render_calibration_set(keys, a.velocity, timbre)) {
      tfr::save_wav(fs::path(a.out) / (std::to_string(midi) + ".wav"), audio);
    }
    const fs::path low = fs::path(a.out) / ("low_" + std::to_string(a.low_key) + ".wav");
    tfr::save_wav(low, pipe::render_calibration_note(a.low_key, a.low_velocity, timbre));
    print_json({{"kind", "calibration"}, {"keys", keys.size()}, {"low_note", low.string()}});
  } else if (a.kind == "piece") {
    Score score;
    if (!a.score.empty()) {
      score = read_notes(a.score);
    } else {
      synth::RandomScoreConfig rc;
      rc.note_count = a.notes;
      rc.max_polyphony = a.polyphony;
      rc.seed = static_cast<std::uint64_t>(a.seed);
      score = synth::random_score(rc);
    }
    const auto audio = with_interference(pipe::render_piece(score, timbre), a, 0);
    tfr::save_wav(a.out, audio);
    fs::path truth = a.out;
    truth.replace_extension(".jsonl");
    if (a.score.empty()) write_notes(truth, score);
    print_json({{"kind", "piece"}, {"notes", score.events.size()}, {"output", a.out}});
  } else if (a.kind == "corpus") {
    fs::create_directories(a.out);
    for (int i = 0; i < a.count; ++i) {
      synth::RandomScoreConfig rc;
      rc.note_count = a.notes;
      rc.max_polyphony = a.polyphony;
      rc.seed = static_cast<std::uint64_t>(a.seed) * 7919u + static_cast<std::uint64_t>(i);
      const Score score = synth::random_score(rc);
      char name[32];
      std::snprintf(name, sizeof name, "piece_%03d", i);
      tfr::save_wav(fs::path(a.out) / (std::string(name) + ".wav"),
                    with_interference(pipe::render_piece(score, timbre), a, i));
      write_notes(fs::path(a.out) / (std::string(name) + ".jsonl"), score);
    }
    print_json({{"kind", "corpus"}, {"pieces", a.count}, {"output", a.out}});
  } else {
    fail(ErrorCode::kInvalidArgument, "unknown synth kind '" + a.kind + "' (note, calibration, piece, corpus)");
  }
}

struct TrainArgs {
  std::string corpus, dictionary, profile, model, curve;
};

void run_train(pipe::PipelineConfig cfg, const TrainArgs& a) {
  tfr::TfrConfig stored;
  pipe::Calibration cal;
  cal.dictionary = pipe::load_dictionary(pick(a.dictionary, cfg.dictionary_path, "dictionary"), &stored);
  cfg.tfr = stored;
  cal.profile = loud::read_profile(pick(a.profile, cfg.profile_path, "profile"));
  require(fs::is_directory(a.corpus), ErrorCode::kIo, "corpus directory " + a.corpus + " does not exist");
  std::vector<fs::path> wavs;
  for (const auto& entry : fs::directory_iterator(a.corpus)) {
    if (entry.path().extension() == ".wav") wavs.push_back(entry.path());
  }
  std::sort(wavs.begin(), wavs.end());
  std::vector<std::pair<tfr::AudioBuffer, Score>> pieces;
  for (const auto& wav : wavs) {
    fs::path truth = wav;
    truth.replace_extension(".jsonl");
    require(fs::exists(truth), ErrorCode::kIo, "missing ground truth " + truth.string());
    pieces.emplace_back(tfr::load_working_audio(wav), read_notes(truth));
  }
  require(!pieces.empty(), ErrorCode::kInvalidArgument, "corpus contains no .wav files");
  const auto data = pipe::training_set(pieces, cal, cfg);
  std::string curve = "epoch,loss\n";
  const auto model = pipe::train_decoder(data, cal.dictionary.frame_rate, cfg, [&](int epoch, double loss) {
    curve += std::to_string(epoch) + "," + std::to_string(loss) + "\n";
    std::cerr << "epoch " << epoch << " loss " << loss << "\n";
  });
  const fs::path out = pick(a.model, cfg.model_path, "model");
  pipe::save_model(out, model);
  if (!a.curve.empty()) write_text(a.curve, curve);
  print_json({{"pieces", pieces.size()},
              {"mode", pipe::decoder_mode_name(cfg.decoder_mode)},
              {"parameters", model.params.parameter_count()},
              {"model", out.string()}});
}

struct EvaluateArgs {
  std::string reference, estimate, format = "json";
  double tolerance = eval::kDefaultTolerance;
};

void run_evaluate(const EvaluateArgs& a) {
  const Score ref = read_notes(a.reference);
  const Score est = read_notes(a.estimate);
  const auto r = eval::evaluate(ref.events, est.events, a.tolerance);
  if (a.format == "table") {
    std::cout << eval::to_table(r);
  } else {
    require(a.format == "json", ErrorCode::kInvalidArgument, "--format must be json or table");
    std::cout << eval::to_json(r) << "\n";
  }
}

struct PlotArgs {
  std::string kind = "spectrogram", input, dictionary, profile, output;
};

void run_plot(pipe::PipelineConfig cfg, const PlotArgs& a) {
  require(!a.output.empty(), ErrorCode::kInvalidArgument, "--output is required");
  if (a.kind == "spectrogram") {
    const auto spec = tfr::compute_spectrogram(tfr::load_working_audio(a.input), cfg.tfr);
    require(spec.frames() > 0, ErrorCode::kInvalidArgument, "audio is shorter than one window");
    pipe::emit_plot(spec.values.colwise().reverse(), a.output);  // low frequencies at the bottom
  } else if (a.kind == "dictionary") {
    const auto p = pipe::load_dictionary(a.input.empty() ? pick(a.dictionary, cfg.dictionary_path, "dictionary")
                                                         : fs::path(a.input));
    pipe::emit_plot(p.values.colwise().reverse(), a.output);
  } else if (a.kind == "activity") {
    tfr::TfrConfig stored;
    const auto p = pipe::load_dictionary(pick(a.dictionary, cfg.dictionary_path, "dictionary"), &stored);
    cfg.tfr = stored;
    const auto profile = loud::read_profile(pick(a.profile, cfg.profile_path, "profile"));
    const auto solved = pipe::solve_piece(tfr::load_working_audio(a.input), p, profile, cfg);
    require(solved.activity.time_frames() > 0, ErrorCode::kInvalidArgument, "audio is shorter than one window");
    pipe::emit_plot(fact::flatten_for_plot(solved.activity), a.output);
  } else {
    fail(ErrorCode::kInvalidArgument, "unknown plot kind '" + a.kind + "' (spectrogram, dictionary, activity)");
  }
  print_json({{"kind", a.kind}, {"output", a.output}});
}

void report_error(std::string_view code, const std::string& message) {
  std::cerr << json{{"error", std::string(code)}, {"message", message}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Piano transcription by constrained tensor factorization"};
  app.require_subcommand(1);
  std::string config_path;
  int threads = 0;
  app.add_option("--config", config_path, "JSON pipeline configuration")->check(CLI::ExistingFile);
  app.add_option("--threads", threads, "Worker threads (0 = library default)")->check(CLI::NonNegativeNumber);

  Overrides o;

  CalibrateArgs cal;
  auto* calibrate = app.add_subcommand("calibrate", "Build the dictionary and threshold profile");
  calibrate->add_option("--calibration-dir", cal.calibration_dir, "Directory of <midi>.wav notes")->required();
  calibrate->add_option("--low-note", cal.low_note, "Lowest-intensity note recording")->required();
  calibrate->add_option("--low-key", cal.low_key, "MIDI key of the low-intensity note");
  calibrate->add_option("--dictionary", cal.dictionary, "Output dictionary container");
  calibrate->add_option("--profile", cal.profile, "Output threshold profile (JSON)");
  calibrate->add_option("--pattern-seconds", o.pattern_seconds, "Pattern length in seconds");
  calibrate->add_option("--loudness", o.loudness, "gm, a_weighting, contour or uniform");
  calibrate->add_option("--beta", o.beta, "Threshold safety factor");
  calibrate->add_option("--reference-key", o.reference_key, "Loudness reference key");
  add_tfr_flags(calibrate, o);
  add_solver_flags(calibrate, o);

  TranscribeArgs tr;
  auto* transcribe = app.add_subcommand("transcribe", "Transcribe a recording to JSON Lines notes");
  transcribe->add_option("--input", tr.input, "Input WAV")->required()->check(CLI::ExistingFile);
  transcribe->add_option("--dictionary", tr.dictionary, "Dictionary container");
  transcribe->add_option("--profile", tr.profile, "Threshold profile");
  transcribe->add_option("--model", tr.model, "Decoder model (lstm/blstm modes)");
  transcribe->add_option("--mode", o.decoder, "threshold, lstm or blstm");
  transcribe->add_option("--output", tr.output, "Output notes (stdout when omitted)");
  transcribe->add_option("--activity-plot", tr.activity_plot, "Write the activity tensor as PGM");
  add_solver_flags(transcribe, o);

  SynthArgs sy;
  auto* synthc = app.add_subcommand("synth", "Render synthetic notes, calibration sets and pieces");
  synthc->add_option("--kind", sy.kind, "note, calibration, piece or corpus");
  synthc->add_option("--out", sy.out, "Output file or directory")->required();
  synthc->add_option("--timbre", sy.timbre, "test or train");
  synthc->add_option("--score", sy.score, "Score to render (piece kind)");
  synthc->add_option("--midi", sy.midi, "Key of a single note");
  synthc->add_option("--velocity", sy.velocity, "Note / calibration velocity");
  synthc->add_option("--duration", sy.duration, "Single-note duration in seconds");
  synthc->add_option("--low-key", sy.low_key, "Key of the low-intensity calibration note");
  synthc->add_option("--low-velocity", sy.low_velocity, "Velocity of the low-intensity note");
  synthc->add_option("--count", sy.count, "Pieces in a corpus");
  synthc->add_option("--notes", sy.notes, "Notes per random piece");
  synthc->add_option("--polyphony", sy.polyphony, "Maximum polyphony of random pieces");
  synthc->add_option("--seed", sy.seed, "Random seed");
  synthc->add_option("--snr-db", sy.snr_db, "Add bursts and chirps at this SNR (0 = none)");

  TrainArgs ta;
  auto* train = app.add_subcommand("train-decoder", "Train the LSTM/BLSTM onset decoder");
  train->add_option("--corpus", ta.corpus, "Directory of WAV + JSON Lines pairs")->required();
  train->add_option("--dictionary", ta.dictionary, "Dictionary container");
  train->add_option("--profile", ta.profile, "Threshold profile");
  train->add_option("--model", ta.model, "Output model container");
  train->add_option("--curve", ta.curve, "Training curve CSV");
  train->add_option("--mode", o.decoder, "lstm or blstm");
  train->add_option("--hidden", o.hidden, "Units per layer");
  train->add_option("--layers", o.layers, "Recurrent layers");
  train->add_option("--epochs", o.epochs, "Training epochs");
  train->add_option("--seed", o.seed, "Initialization and dropout seed");
  add_solver_flags(train, o);

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Onset precision / recall / F-measure");
  evaluate->add_option("--reference", ev.reference, "Ground-truth notes")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--estimate", ev.estimate, "Transcribed notes")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--tolerance", ev.tolerance, "Onset tolerance in seconds");
  evaluate->add_option("--format", ev.format, "json or table");

  PlotArgs pl;
  auto* plot = app.add_subcommand("plot", "Write a spectrogram, dictionary or activity tensor as PGM");
  plot->add_option("--kind", pl.kind, "spectrogram, dictionary or activity");
  plot->add_option("--input", pl.input, "Input WAV (or dictionary container)");
  plot->add_option("--dictionary", pl.dictionary, "Dictionary container (activity kind)");
  plot->add_option("--profile", pl.profile, "Threshold profile (activity kind)");
  plot->add_option("--output", pl.output, "Output PGM")->required();
  add_tfr_flags(plot, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage", e.what());
    return 2;
  }

  try {
    if (threads > 0) {
#ifdef _OPENMP
      omp_set_num_threads(threads);
#endif
      Eigen::setNbThreads(threads);
    }
    if (*evaluate) {
      run_evaluate(ev);
      return 0;
    }
    if (*synthc) {
      run_synth(sy);
      return 0;
    }
    const auto cfg = resolve_config(config_path, o);
    if (*calibrate) run_calibrate(cfg, cal);
    if (*transcribe) run_transcribe_cmd(cfg, tr);
    if (*train) run_train(cfg, ta);
    if (*plot) run_plot(cfg, pl);
  } catch (const Error& e) {
    report_error(error_code_name(e.code()), e.what());
    return 1;
  } catch (const std::exception& e) {
    report_error("internal", e.what());
    return 1;
  }
  return 0;
}
