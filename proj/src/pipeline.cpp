#include "amt/pipeline.hpp"

#include "amt/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace amt::pipe {

namespace {

using nlohmann::json;

// Reads known keys of one config section and rejects anything else.
class Section {
 public:
  Section(const json& root, const std::string& name) : name_(name) {
    if (root.contains(name)) {
      node_ = &root.at(name);
      require(node_->is_object(), ErrorCode::kParse, "config section '" + name + "' must be an object");
    }
  }

  template <typename T>
  void get(const std::string& key, T& value) {
    seen_.insert(key);
    if (node_ == nullptr || !node_->contains(key)) return;
    try {
      value = node_->at(key).get<T>();
    } catch (const json::exception& e) {
      fail(ErrorCode::kParse, "config " + name_ + "." + key + ": " + e.what());
    }
  }

  void get_path(const std::string& key, std::filesystem::path& value) {
    std::string s = value.string();
    get(key, s);
    value = s;
  }

  const json* node() const { return node_; }

  void finish() const {
    if (node_ == nullptr) return;
    for (const auto& item : node_->items()) {
      require(seen_.count(item.key()) > 0, ErrorCode::kParse,
              "unknown config key '" + name_ + "." + item.key() + "'");
    }
  }

 private:
  std::string name_;
  const json* node_ = nullptr;
  std::set<std::string> seen_;
};

std::string init_name(fact::Init init) {
  switch (init) {
    case fact::Init::kZero: return "zero";
    case fact::Init::kRandom: return "random";
    case fact::Init::kMultiplicative: return "multiplicative";
  }
  return "zero";
}

fact::Init parse_init(const std::string& s) {
  if (s == "zero") return fact::Init::kZero;
  if (s == "random") return fact::Init::kRandom;
  if (s == "multiplicative") return fact::Init::kMultiplicative;
  fail(ErrorCode::kParse, "unknown solver init '" + s + "'");
}

// Remaps decoder rows (numbered from 0) onto dictionary pitches.
void remap_pitches(std::vector<eval::NoteEvent>& events, const std::vector<int>& midi_pitches) {
  for (auto& e : events) e.midi_pitch = midi_pitches.at(static_cast<std::size_t>(e.midi_pitch));
}

}  // namespace

std::string loudness_mode_name(LoudnessMode mode) {
  switch (mode) {
    case LoudnessMode::kGlasbergMoore: return "gm";
    case LoudnessMode::kAWeighting: return "a_weighting";
    case LoudnessMode::kContour: return "contour";
    case LoudnessMode::kUniform: return "uniform";
  }
  return "gm";
}

LoudnessMode parse_loudness_mode(const std::string& name) {
  if (name == "gm") return LoudnessMode::kGlasbergMoore;
  if (name == "a_weighting") return LoudnessMode::kAWeighting;
  if (name == "contour") return LoudnessMode::kContour;
  if (name == "uniform") return LoudnessMode::kUniform;
  fail(ErrorCode::kInvalidArgument,
       "unknown loudness mode '" + name + "' (gm, a_weighting, contour, uniform)");
}

std::string decoder_mode_name(DecoderMode mode) {
  switch (mode) {
    case DecoderMode::kThreshold: return "threshold";
    case DecoderMode::kLstm: return "lstm";
    case DecoderMode::kBlstm: return "blstm";
  }
  return "threshold";
}

DecoderMode parse_decoder_mode(const std::string& name) {
  if (name == "threshold") return DecoderMode::kThreshold;
  if (name == "lstm") return DecoderMode::kLstm;
  if (name == "blstm") return DecoderMode::kBlstm;
  fail(ErrorCode::kInvalidArgument, "unknown decoder mode '" + name + "' (threshold, lstm, blstm)");
}

fact::SolverConfig tuned_solver_config() {
  fact::SolverConfig s;
  s.data_gain = 300.0;
  s.markov_weight = 300.0;
  s.threshold_weight = 1.0;
  s.stage_iters = {50, 300, 50};
  s.init = fact::Init::kMultiplicative;
  s.init_iters = 200;
  s.precision = fact::Precision::kFloat32;
  return s;
}

void PipelineConfig::validate() const {
  tfr.validate(tfr::kWorkingSampleRate);
  require(pattern_seconds > 0.0, ErrorCode::kInvalidArgument, "pattern_seconds must be positive");
  require(onset_gate > 0.0 && onset_gate < 1.0, ErrorCode::kInvalidArgument,
          "onset_gate must lie in (0, 1)");
  require(lambda1_scale >= 0.0 && tv_ratio >= 0.0, ErrorCode::kInvalidArgument,
          "lambda scales must be non-negative");
  solver.validate();
  require(min_run_seconds > 0.0, ErrorCode::kInvalidArgument, "min_run_seconds must be positive");
  gm.validate();
  require(beta > 0.0, ErrorCode::kInvalidArgument, "beta must be positive");
  require(reference_key >= 21 && reference_key <= 108, ErrorCode::kInvalidArgument,
          "reference_key must be a piano key");
  require(hidden >= 1 && layers >= 1, ErrorCode::kInvalidArgument, "decoder size must be positive");
  require(delay_s >= 0.0, ErrorCode::kInvalidArgument, "delay_s must be non-negative");
  train.validate();
  require(decode.threshold > 0.0 && decode.peak_radius >= 0 && decode.min_gap_s >= 0.0,
          ErrorCode::kInvalidArgument, "invalid decode settings");
}

json to_json(const PipelineConfig& c) {
  json j;
  j["tfr"] = {{"window_length", c.tfr.window_length},
              {"hop", c.tfr.hop},
              {"bins_per_octave", c.tfr.bins_per_octave},
              {"f_min", c.tfr.f_min},
              {"f_max", c.tfr.f_max}};
  j["dictionary"] = {{"pattern_seconds", c.pattern_seconds}, {"onset_gate", c.onset_gate}};
  const auto& s = c.solver;
  j["solver"] = {{"lambda1_scale", c.lambda1_scale},
                 {"tv_ratio", c.tv_ratio},
                 {"rho", s.rho},
                 {"data_gain", s.data_gain},
                 {"markov_weight", s.markov_weight},
                 {"markov_weight_start", s.markov_weight_start},
                 {"threshold_weight", s.threshold_weight},
                 {"adaptive_rho", s.adaptive_rho},
                 {"rho_interval", s.rho_interval},
                 {"rho_balance", s.rho_balance},
                 {"rho_factor", s.rho_factor},
                 {"stage_iters", s.stage_iters},
                 {"tol_primal", s.tol_primal},
                 {"tol_dual", s.tol_dual},
                 {"precision", static_cast<int>(s.precision)},
                 {"init", init_name(s.init)},
                 {"init_scale", s.init_scale},
                 {"init_iters", s.init_iters},
                 {"seed", s.seed}};
  j["markov"] = {{"min_run_seconds", c.min_run_seconds},
                 {"allow_truncated_final_run", c.markov.allow_truncated_final_run},
                 {"allow_sustain_loop", c.markov.allow_sustain_loop}};
  j["loudness"] = {{"mode", loudness_mode_name(c.loudness)},
                   {"contour_path", c.contour_path.string()},
                   {"beta", c.beta},
                   {"reference_key", c.reference_key}};
  j["gm"] = {{"assumed_level_db_spl", c.gm.assumed_level_db_spl},
             {"reference_rms", c.gm.reference_rms},
             {"erb_step", c.gm.erb_step},
             {"window_ms", c.gm.window_ms},
             {"analysis_hop_ms", c.gm.analysis_hop_ms},
             {"stl_attack", c.gm.stl_attack},
             {"stl_release", c.gm.stl_release},
             {"ltl_attack", c.gm.ltl_attack},
             {"ltl_release", c.gm.ltl_release},
             {"sone_calibration", c.gm.sone_calibration}};
  j["decoder"] = {{"mode", decoder_mode_name(c.decoder_mode)},
                  {"hidden", c.hidden},
                  {"layers", c.layers},
                  {"delay_s", c.delay_s},
                  {"threshold", c.decode.threshold},
                  {"peak_radius", c.decode.peak_radius},
                  {"min_gap_s", c.decode.min_gap_s}};
  j["train"] = {{"dropout", c.train.dropout},
                {"label_smoothing", c.train.label_smoothing},
                {"adam_step", c.train.adam_step},
                {"adam_beta1", c.train.adam_beta1},
                {"adam_beta2", c.train.adam_beta2},
                {"adam_eps", c.train.adam_eps},
                {"chunk_frames", c.train.chunk_frames},
                {"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"target_width", c.train.target_width},
                {"seed", c.train.seed}};
  j["paths"] = {{"dictionary", c.dictionary_path.string()},
                {"profile", c.profile_path.string()},
                {"model", c.model_path.string()}};
  return j;
}

PipelineConfig config_from_json(const json& j, PipelineConfig c) {
  require(j.is_object(), ErrorCode::kParse, "config must be a JSON object");
  static const std::set<std::string> kSections{"tfr",      "dictionary", "solver", "markov", "loudness",
                                               "gm",       "decoder",    "train",  "paths"};
  for (const auto& item : j.items()) {
    require(kSections.count(item.key()) > 0, ErrorCode::kParse,
            "unknown config section '" + item.key() + "'");
  }
  {
    Section s(j, "tfr");
    s.get("window_length", c.tfr.window_length);
    s.get("hop", c.tfr.hop);
    s.get("bins_per_octave", c.tfr.bins_per_octave);
    s.get("f_min", c.tfr.f_min);
    s.get("f_max", c.tfr.f_max);
    s.finish();
  }
  {
    Section s(j, "dictionary");
    s.get("pattern_seconds", c.pattern_seconds);
    s.get("onset_gate", c.onset_gate);
    s.finish();
  }
  {
    Section s(j, "solver");
    auto& v = c.solver;
    s.get("lambda1_scale", c.lambda1_scale);
    s.get("tv_ratio", c.tv_ratio);
    s.get("rho", v.rho);
    s.get("data_gain", v.data_gain);
    s.get("markov_weight", v.markov_weight);
    s.get("markov_weight_start", v.markov_weight_start);
    s.get("threshold_weight", v.threshold_weight);
    s.get("adaptive_rho", v.adaptive_rho);
    s.get("rho_interval", v.rho_interval);
    s.get("rho_balance", v.rho_balance);
    s.get("rho_factor", v.rho_factor);
    s.get("stage_iters", v.stage_iters);
    s.get("tol_primal", v.tol_primal);
    s.get("tol_dual", v.tol_dual);
    int precision = static_cast<int>(v.precision);
    s.get("precision", precision);
    require(precision == 32 || precision == 64, ErrorCode::kParse, "solver.precision must be 32 or 64");
    v.precision = precision == 32 ? fact::Precision::kFloat32 : fact::Precision::kFloat64;
    std::string init = init_name(v.init);
    s.get("init", init);
    v.init = parse_init(init);
    s.get("init_scale", v.init_scale);
    s.get("init_iters", v.init_iters);
    s.get("seed", v.seed);
    s.finish();
  }
  {
    Section s(j, "markov");
    s.get("min_run_seconds", c.min_run_seconds);
    s.get("allow_truncated_final_run", c.markov.allow_truncated_final_run);
    s.get("allow_sustain_loop", c.markov.allow_sustain_loop);
    s.finish();
  }
  {
    Section s(j, "loudness");
    std::string mode = loudness_mode_name(c.loudness);
    s.get("mode", mode);
    c.loudness = parse_loudness_mode(mode);
    s.get_path("contour_path", c.contour_path);
    s.get("beta", c.beta);
    s.get("reference_key", c.reference_key);
    s.finish();
  }
  {
    Section s(j, "gm");
    s.get("assumed_level_db_spl", c.gm.assumed_level_db_spl);
    s.get("reference_rms", c.gm.reference_rms);
    s.get("erb_step", c.gm.erb_step);
    s.get("window_ms", c.gm.window_ms);
    s.get("analysis_hop_ms", c.gm.analysis_hop_ms);
    s.get("stl_attack", c.gm.stl_attack);
    s.get("stl_release", c.gm.stl_release);
    s.get("ltl_attack", c.gm.ltl_attack);
    s.get("ltl_release", c.gm.ltl_release);
    s.get("sone_calibration", c.gm.sone_calibration);
    s.finish();
  }
  {
    Section s(j, "decoder");
    std::string mode = decoder_mode_name(c.decoder_mode);
    s.get("mode", mode);
    c.decoder_mode = parse_decoder_mode(mode);
    s.get("hidden", c.hidden);
    s.get("layers", c.layers);
    s.get("delay_s", c.delay_s);
    s.get("threshold", c.decode.threshold);
    s.get("peak_radius", c.decode.peak_radius);
    s.get("min_gap_s", c.decode.min_gap_s);
    s.finish();
  }
  {
    Section s(j, "train");
    s.get("dropout", c.train.dropout);
    s.get("label_smoothing", c.train.label_smoothing);
    s.get("adam_step", c.train.adam_step);
    s.get("adam_beta1", c.train.adam_beta1);
    s.get("adam_beta2", c.train.adam_beta2);
    s.get("adam_eps", c.train.adam_eps);
    s.get("chunk_frames", c.train.chunk_frames);
    s.get("epochs", c.train.epochs);
    s.get("batch_size", c.train.batch_size);
    s.get("target_width", c.train.target_width);
    s.get("seed", c.train.seed);
    s.finish();
  }
  {
    Section s(j, "paths");
    s.get_path("dictionary", c.dictionary_path);
    s.get_path("profile", c.profile_path);
    s.get_path("model", c.model_path);
    s.finish();
  }
  c.validate();
  return c;
}

PipelineConfig read_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, "config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

fact::SolverConfig resolve_solver(const PipelineConfig& cfg, const dict::PatternTensor& p) {
  fact::SolverConfig s = cfg.solver;
  const double column_mass = p.values.size() > 0 ? p.values.colwise().sum().mean() : 0.0;
  s.lambda1 = cfg.lambda1_scale * column_mass;
  s.lambda2 = cfg.tv_ratio * s.lambda1;
  return s;
}

fact::MarkovConfig resolve_markov(const PipelineConfig& cfg, const dict::PatternTensor& p) {
  fact::MarkovConfig m = cfg.markov;
  int shortest = p.frames;
  for (int lk : p.effective_lengths) shortest = std::min(shortest, lk);
  m.min_run_frames = std::clamp(dict::frames_for(cfg.min_run_seconds, p.frame_rate), 1,
                                std::max(shortest, 1));
  return m;
}

// --- persistence -----------------------------------------------------------

io::Container dictionary_to_container(const dict::PatternTensor& p, const tfr::TfrConfig& cfg) {
  p.validate();
  io::Container c;
  c.meta = {{"kind", "dictionary"},
            {"frames", p.frames},
            {"frame_rate", p.frame_rate},
            {"onset_lag_s", p.onset_lag_s},
            {"tfr",
             {{"window_length", cfg.window_length},
              {"hop", cfg.hop},
              {"bins_per_octave", cfg.bins_per_octave},
              {"f_min", cfg.f_min},
              {"f_max", cfg.f_max}}}};
  c.add("values", p.values);
  c.add("effective_lengths", std::vector<double>(p.effective_lengths.begin(), p.effective_lengths.end()));
  c.add("midi_pitches", std::vector<double>(p.midi_pitches.begin(), p.midi_pitches.end()));
  return c;
}

dict::PatternTensor dictionary_from_container(const io::Container& c, tfr::TfrConfig* cfg) {
  dict::PatternTensor p;
  try {
    require(c.meta.value("kind", "") == "dictionary", ErrorCode::kFormat,
            "container does not hold a dictionary");
    p.frames = c.meta.at("frames").get<int>();
    p.frame_rate = c.meta.at("frame_rate").get<double>();
    p.onset_lag_s = c.meta.at("onset_lag_s").get<double>();
    if (cfg != nullptr) {
      const auto& t = c.meta.at("tfr");
      cfg->window_length = t.at("window_length").get<int>();
      cfg->hop = t.at("hop").get<int>();
      cfg->bins_per_octave = t.at("bins_per_octave").get<int>();
      cfg->f_min = t.at("f_min").get<double>();
      cfg->f_max = t.at("f_max").get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("dictionary metadata: ") + e.what());
  }
  p.values = c.matrix("values");
  for (double v : c.vector("effective_lengths")) p.effective_lengths.push_back(static_cast<int>(v));
  for (double v : c.vector("midi_pitches")) p.midi_pitches.push_back(static_cast<int>(v));
  p.validate();
  return p;
}

void save_dictionary(const std::filesystem::path& path, const dict::PatternTensor& p,
                     const tfr::TfrConfig& cfg) {
  io::write_container(path, dictionary_to_container(p, cfg));
}

dict::PatternTensor load_dictionary(const std::filesystem::path& path, tfr::TfrConfig* cfg) {
  return dictionary_from_container(io::read_container(path), cfg);
}

io::Container model_to_container(const DecoderModel& model) {
  model.params.validate();
  const auto& p = model.params;
  io::Container c;
  c.meta = {{"kind", "decoder"},
            {"mode", dec::mode_name(p.mode)},
            {"input", p.input},
            {"hidden", p.hidden},
            {"output", p.output},
            {"layers", p.layers},
            {"delay_frames", p.delay_frames},
            {"frame_rate", model.frame_rate}};
  auto copy = p;
  copy.for_each([&](const std::string& name, float* data, Eigen::Index size) {
    c.add(name, data, {static_cast<std::int64_t>(size)});
  });
  return c;
}

DecoderModel model_from_container(const io::Container& c) {
  DecoderModel m;
  try {
    require(c.meta.value("kind", "") == "decoder", ErrorCode::kFormat,
            "container does not hold a decoder model");
    m.params = dec::LstmParams<float>::zeros(
        dec::parse_mode(c.meta.at("mode").get<std::string>()), c.meta.at("input").get<int>(),
        c.meta.at("hidden").get<int>(), c.meta.at("output").get<int>(),
        c.meta.at("layers").get<int>(), c.meta.at("delay_frames").get<int>());
    m.frame_rate = c.meta.at("frame_rate").get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("decoder metadata: ") + e.what());
  }
  m.params.for_each([&](const std::string& name, float* data, Eigen::Index size) {
    c.copy_to(name, data, size);
  });
  m.params.validate();
  return m;
}

void save_model(const std::filesystem::path& path, const DecoderModel& model) {
  io::write_container(path, model_to_container(model));
}

DecoderModel load_model(const std::filesystem::path& path) {
  return model_from_container(io::read_container(path));
}

std::vector<unsigned char> plot_pgm(const Eigen::MatrixXd& m) {
  require(m.size() > 0, ErrorCode::kInvalidArgument, "cannot plot an empty matrix");
  require(m.allFinite(), ErrorCode::kInvalidArgument, "cannot plot non-finite values");
  const Eigen::MatrixXd compressed = m.cwiseMax(0.0).unaryExpr([](double x) { return std::log1p(x); });
  const double peak = compressed.maxCoeff();
  const std::string header =
      "P5\n" + std::to_string(m.cols()) + " " + std::to_string(m.rows()) + "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  out.reserve(out.size() + static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double v = peak > 0.0 ? compressed(r, c) / peak * 255.0 : 0.0;
      out.push_back(static_cast<unsigned char>(std::clamp(std::lround(v), 0L, 255L)));
    }
  }
  return out;
}

void emit_plot(const Eigen::MatrixXd& m, const std::filesystem::path& path) {
  const auto bytes = plot_pgm(m);
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed for " + path.string());
}

// --- calibration -----------------------------------------------------------

std::map<int, tfr::AudioBuffer> load_calibration_set(const std::filesystem::path& dir) {
  require(std::filesystem::is_directory(dir), ErrorCode::kIo,
          "calibration directory " + dir.string() + " does not exist");
  std::map<int, tfr::AudioBuffer> notes;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".wav") continue;
    const std::string stem = entry.path().stem().string();
    if (stem.empty() || !std::all_of(stem.begin(), stem.end(), [](char ch) { return ch >= '0' && ch <= '9'; })) {
      continue;
    }
    const int midi = std::stoi(stem);
    require(midi >= 21 && midi <= 108, ErrorCode::kCalibration,
            "calibration file " + entry.path().filename().string() + " is not a piano key");
    notes[midi] = tfr::load_working_audio(entry.path());
  }
  require(!notes.empty(), ErrorCode::kCalibration,
          "no <midi>.wav files found in " + dir.string());
  return notes;
}

tfr::AudioBuffer rms_normalized(const tfr::AudioBuffer& audio) {
  const double r = tfr::rms(audio.samples);
  require(r > 0.0, ErrorCode::kCalibration, "calibration note is silent");
  tfr::AudioBuffer out = audio;
  for (double& s : out.samples) s /= r;
  return out;
}

dict::PatternTensor build_dictionary(const std::map<int, tfr::AudioBuffer>& notes,
                                     const PipelineConfig& cfg) {
  cfg.tfr.validate(tfr::kWorkingSampleRate);
  std::vector<std::pair<int, const tfr::AudioBuffer*>> items;
  for (const auto& [midi, audio] : notes) items.emplace_back(midi, &audio);
  const double frame_rate = cfg.tfr.frame_rate(tfr::kWorkingSampleRate);
  const int frames = dict::frames_for(cfg.pattern_seconds, frame_rate);
  std::vector<dict::NotePattern> patterns(items.size());
  std::vector<std::string> errors(items.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < items.size(); ++i) {
    try {
      patterns[i] = dict::build_pattern(rms_normalized(*items[i].second), cfg.tfr, frames,
                                        items[i].first, cfg.onset_gate);
    } catch (const std::exception& e) {
      errors[i] = "key " + std::to_string(items[i].first) + ": " + e.what();
    }
  }
  std::string joined;
  for (const auto& e : errors) {
    if (!e.empty()) joined += (joined.empty() ? "" : "; ") + e;
  }
  require(joined.empty(), ErrorCode::kCalibration, joined);
  return dict::assemble_dictionary(std::move(patterns), frame_rate);
}

std::vector<double> loudness_scalers(const std::map<int, tfr::AudioBuffer>& notes,
                                     const dict::PatternTensor& p, const PipelineConfig& cfg) {
  require(p.key_index(cfg.reference_key) >= 0, ErrorCode::kCalibration,
          "reference key " + std::to_string(cfg.reference_key) + " is not in the calibration set");
  switch (cfg.loudness) {
    case LoudnessMode::kGlasbergMoore:
      return loud::compute_loudness_scalers(notes, cfg.reference_key, cfg.gm);
    case LoudnessMode::kAWeighting:
      return loud::curve_scalers(loud::LoudnessCurve::inverted_a_weighting(), p.midi_pitches,
                                 cfg.reference_key);
    case LoudnessMode::kContour: {
      const auto path = cfg.contour_path.empty() ? loud::data_directory() / "contour_35phon.csv"
                                                 : cfg.contour_path;
      return loud::curve_scalers(loud::LoudnessCurve::from_csv(path), p.midi_pitches,
                                 cfg.reference_key);
    }
    case LoudnessMode::kUniform:
      return std::vector<double>(p.midi_pitches.size(), 1.0);
  }
  return {};
}

Calibration calibrate(const std::map<int, tfr::AudioBuffer>& notes, const tfr::AudioBuffer& low_note,
                      int low_key, const PipelineConfig& cfg) {
  cfg.validate();
  Calibration out;
  out.dictionary = build_dictionary(notes, cfg);
  require(out.dictionary.key_index(low_key) >= 0, ErrorCode::kCalibration,
          "low-intensity key " + std::to_string(low_key) + " is not in the calibration set");
  const auto scalers = loudness_scalers(notes, out.dictionary, cfg);
  loud::ProfileSolve solve;
  solve.patterns = &out.dictionary;
  solve.tfr = cfg.tfr;
  solve.solver = resolve_solver(cfg, out.dictionary);
  solve.markov = resolve_markov(cfg, out.dictionary);
  out.profile = loud::build_threshold_profile(low_note, low_key, scalers, cfg.reference_key, solve,
                                              cfg.beta);
  return out;
}

loud::ThresholdProfile with_scalers(const loud::ThresholdProfile& profile, int low_key,
                                    const std::vector<double>& scalers) {
  const int k0 = static_cast<int>(std::find(profile.midi_pitches.begin(), profile.midi_pitches.end(), low_key) -
                                  profile.midi_pitches.begin());
  require(k0 < static_cast<int>(profile.midi_pitches.size()), ErrorCode::kInvalidArgument,
          "low-intensity key is not in the profile");
  // base_threshold is the low key's own threshold; keep it and re-derive the rest.
  const double base = profile.thresholds[static_cast<std::size_t>(k0)];
  return loud::make_threshold_profile(base, low_key, profile.midi_pitches, scalers,
                                      profile.reference_key);
}

// --- synthetic material ----------------------------------------------------

tfr::AudioBuffer render_calibration_note(int midi, double velocity, const synth::SynthConfig& timbre,
                                         double duration_s) {
  const tfr::AudioBuffer note = synth::synthesize_note(midi, duration_s, velocity, timbre);
  tfr::AudioBuffer out;
  out.sample_rate = note.sample_rate;
  const auto lead = static_cast<std::size_t>(std::lround(kCalibrationLead * note.sample_rate));
  out.samples.assign(lead, 0.0);
  for (double s : note.samples) out.samples.push_back(kRenderGain * s);
  out.samples.resize(out.samples.size() + static_cast<std::size_t>(tfr::TfrConfig{}.window_length), 0.0);
  return out;
}

std::map<int, tfr::AudioBuffer> render_calibration_set(const std::vector<int>& midi_pitches,
                                                       double velocity,
                                                       const synth::SynthConfig& timbre) {
  std::vector<tfr::AudioBuffer> rendered(midi_pitches.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < midi_pitches.size(); ++i) {
    rendered[i] = render_calibration_note(midi_pitches[i], velocity, timbre);
  }
  std::map<int, tfr::AudioBuffer> out;
  for (std::size_t i = 0; i < midi_pitches.size(); ++i) out[midi_pitches[i]] = std::move(rendered[i]);
  return out;
}

tfr::AudioBuffer render_piece(const Score& score, const synth::SynthConfig& timbre) {
  synth::SynthConfig cfg = timbre;
  cfg.mixture_peak = 0.0;
  auto [audio, truth] = synth::synthesize_piece(score, cfg);
  for (double& s : audio.samples) s *= kRenderGain;
  return audio;
}

// --- transcription ---------------------------------------------------------

fact::SolveResult solve_piece(const tfr::AudioBuffer& audio, const dict::PatternTensor& p,
                              const loud::ThresholdProfile& profile, const PipelineConfig& cfg) {
  require(profile.midi_pitches == p.midi_pitches, ErrorCode::kShapeMismatch,
          "threshold profile and dictionary cover different keys");
  tfr::AudioBuffer working = audio;
  if (working.sample_rate != tfr::kWorkingSampleRate) {
    working = tfr::resample(working, tfr::kWorkingSampleRate);
  }
  const int bins = tfr::log_bin_count(cfg.tfr);
  require(bins == p.bins(), ErrorCode::kShapeMismatch,
          "analysis has " + std::to_string(bins) + " bins but the dictionary has " +
              std::to_string(p.bins()) + "; the TFR settings differ from calibration");
  if (tfr::frame_count(working.samples.size(), cfg.tfr) == 0) {
    fact::SolveResult empty;
    empty.activity = fact::ActivityTensor(p.keys(), p.frames, 0);
    empty.diagnostics.push_back("audio shorter than one analysis window");
    return empty;
  }
  const tfr::Spectrogram spec = tfr::compute_spectrogram(working, cfg.tfr);
  return fact::solve_activity(spec.values, p, resolve_solver(cfg, p), resolve_markov(cfg, p),
                              profile.thresholds);
}

int delay_frames_for(const PipelineConfig& cfg, double frame_rate) {
  if (cfg.decoder_mode != DecoderMode::kLstm) return 0;
  return static_cast<int>(std::lround(cfg.delay_s * frame_rate));
}

Eigen::MatrixXd decoder_features(const fact::ActivityTensor& a, const loud::ThresholdProfile& profile,
                                 int delay_frames) {
  const Eigen::MatrixXd feat = dec::normalize_activations(a, profile);
  Eigen::MatrixXd padded = Eigen::MatrixXd::Zero(feat.rows(), feat.cols() + delay_frames);
  padded.leftCols(feat.cols()) = feat;
  return padded;
}

Transcription run_transcribe(const tfr::AudioBuffer& audio, const dict::PatternTensor& p,
                             const loud::ThresholdProfile& profile, const PipelineConfig& cfg,
                             const DecoderModel* model) {
  cfg.validate();
  Transcription out;
  out.frame_rate = p.frame_rate;
  fact::SolveResult solved = solve_piece(audio, p, profile, cfg);
  out.diagnostics = std::move(solved.diagnostics);
  out.activity = std::move(solved.activity);
  out.score = decode_activity(out.activity, p, profile, cfg, model);
  return out;
}

Score decode_activity(const fact::ActivityTensor& activity, const dict::PatternTensor& p,
                      const loud::ThresholdProfile& profile, const PipelineConfig& cfg,
                      const DecoderModel* model) {
  Score out;
  if (activity.time_frames() == 0) return out;

  dec::DecodeConfig dc = cfg.decode;
  dc.time_offset_s = p.onset_lag_s;
  if (cfg.decoder_mode == DecoderMode::kThreshold) {
    dc.delay_frames = 0;
    out.events = dec::decode_activations(activity, profile.thresholds, p.midi_pitches, p.frame_rate, dc);
  } else {
    require(model != nullptr, ErrorCode::kInvalidArgument,
            decoder_mode_name(cfg.decoder_mode) + " decoding requires a trained model");
    const auto& params = model->params;
    const dec::Mode expected = cfg.decoder_mode == DecoderMode::kBlstm ? dec::Mode::kBi : dec::Mode::kUni;
    require(params.mode == expected, ErrorCode::kInvalidArgument,
            "model is " + dec::mode_name(params.mode) + " but the decoder mode is " +
                decoder_mode_name(cfg.decoder_mode));
    require(params.input == p.keys() && params.output == p.keys(), ErrorCode::kShapeMismatch,
            "model key count does not match the dictionary");
    require(std::abs(model->frame_rate - p.frame_rate) < 1e-9 * p.frame_rate,
            ErrorCode::kInvalidArgument, "model was trained at a different frame rate");
    const Eigen::MatrixXf feat = decoder_features(activity, profile, params.delay_frames).cast<float>();
    const Eigen::MatrixXd post =
        dec::lstm_forward(params, feat, false, 0.0, 0, cfg.train.chunk_frames).cast<double>();
    dc.delay_frames = params.delay_frames;
    dc.lowest_midi = 0;
    out.events = dec::decode_onsets(post, p.frame_rate, dc);
    remap_pitches(out.events, p.midi_pitches);
  }
  out.sort();
  return out;
}

dec::Sequence training_sequence(const fact::ActivityTensor& a, const loud::ThresholdProfile& profile,
                                const dict::PatternTensor& p, const std::vector<eval::NoteEvent>& truth,
                                const PipelineConfig& cfg, int delay_frames) {
  dec::Sequence seq;
  seq.features = decoder_features(a, profile, delay_frames);
  std::vector<eval::NoteEvent> shifted;
  for (const auto& e : truth) {
    const int k = p.key_index(e.midi_pitch);
    if (k < 0) continue;
    eval::NoteEvent s = e;
    s.midi_pitch = k;  // row index
    s.onset = e.onset - p.onset_lag_s;
    shifted.push_back(s);
  }
  seq.targets = dec::onset_targets(shifted, static_cast<int>(seq.features.cols()), p.frame_rate,
                                   delay_frames, cfg.train.target_width, 0, p.keys());
  return seq;
}

std::vector<dec::Sequence> training_set(const std::vector<std::pair<tfr::AudioBuffer, Score>>& pieces,
                                        const Calibration& calibration, const PipelineConfig& cfg) {
  const int delay = delay_frames_for(cfg, calibration.dictionary.frame_rate);
  std::vector<dec::Sequence> out;
  for (const auto& [audio, truth] : pieces) {
    const fact::SolveResult solved = solve_piece(audio, calibration.dictionary, calibration.profile, cfg);
    if (solved.activity.time_frames() == 0) continue;
    out.push_back(training_sequence(solved.activity, calibration.profile, calibration.dictionary,
                                    truth.events, cfg, delay));
  }
  return out;
}

DecoderModel train_decoder(const std::vector<dec::Sequence>& data, double frame_rate,
                           const PipelineConfig& cfg, const std::function<void(int, double)>& on_epoch) {
  require(cfg.decoder_mode != DecoderMode::kThreshold, ErrorCode::kInvalidArgument,
          "training needs decoder mode lstm or blstm");
  require(!data.empty(), ErrorCode::kInvalidArgument, "no training sequences");
  const int keys = static_cast<int>(data.front().features.rows());
  const dec::Mode mode = cfg.decoder_mode == DecoderMode::kBlstm ? dec::Mode::kBi : dec::Mode::kUni;
  DecoderModel model;
  model.frame_rate = frame_rate;
  model.params = dec::LstmParams<float>::glorot(mode, keys, cfg.hidden, keys, cfg.layers,
                                                delay_frames_for(cfg, frame_rate), cfg.train.seed);
  dec::train(model.params, data, cfg.train, on_epoch);
  return model;
}

}  // namespace amt::pipe
