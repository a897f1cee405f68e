#include "amt/error.hpp"
#include "amt/loudness.hpp"
#include "amt/synth.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

using namespace amt;
using namespace amt::loud;

namespace {

tfr::AudioBuffer tone(double freq, double db_spl, double seconds = 1.0, const GmConfig& cfg = {}) {
  tfr::AudioBuffer a;
  a.samples.resize(static_cast<std::size_t>(seconds * a.sample_rate));
  const double amp = cfg.reference_rms * std::sqrt(2.0) * std::pow(10.0, (db_spl - cfg.assumed_level_db_spl) / 20.0);
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    a.samples[i] = amp * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / a.sample_rate);
  }
  return a;
}

tfr::AudioBuffer scaled(tfr::AudioBuffer a, double s) {
  for (double& x : a.samples) x *= s;
  return a;
}

tfr::AudioBuffer unit_rms(tfr::AudioBuffer a, double target = 1.0) {
  return scaled(a, target / tfr::rms(a.samples));
}

std::filesystem::path tmp_dir() {
  std::filesystem::path p = AMT_TEST_TMP;
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("inverted A-weighting examples") {
  const auto curve = LoudnessCurve::inverted_a_weighting();
  CHECK(std::abs(equal_loudness_gain(curve, 1000.0)) <= 0.01);
  CHECK(std::abs(a_weighting_db(100.0) + 19.1) < 0.05);
  CHECK(std::abs(equal_loudness_gain(curve, 100.0) - 19.1) < 0.05);
  CHECK_THROWS_AS(equal_loudness_gain(curve, -5.0), Error);
}

TEST_CASE("A-weighting matches the IEC third-octave table") {
  // Exact base-10 band centres 1000 * 10^(i/10) for i = -20..13.
  const double table[] = {-50.5, -44.7, -39.4, -34.6, -30.2, -26.2, -22.5, -19.1, -16.1, -13.4, -10.9, -8.6,
                          -6.6,  -4.8,  -3.2,  -1.9,  -0.8,  0.0,   0.6,   1.0,   1.2,   1.3,   1.2,   1.0,
                          0.5,   -0.1,  -1.1,  -2.5,  -4.3,  -6.6,  -9.3};
  const auto curve = LoudnessCurve::inverted_a_weighting();
  for (int i = -17; i <= 13; ++i) {
    const double f = 1000.0 * std::pow(10.0, i / 10.0);
    const double expected = table[i + 17];
    CHECK(std::abs(a_weighting_db(f) - expected) <= 0.3);
    CHECK(std::abs(equal_loudness_gain(curve, f) + expected) <= 0.3);
  }
}

TEST_CASE("tabulated curves interpolate in log frequency") {
  const auto curve = LoudnessCurve::tabulated({{20.0, 40.0}, {200.0, 10.0}, {2000.0, 0.0}, {10000.0, 5.0}});
  CHECK(equal_loudness_gain(curve, 200.0) == 10.0);
  CHECK(equal_loudness_gain(curve, 2000.0) == 0.0);
  CHECK(equal_loudness_gain(curve, std::sqrt(20.0 * 200.0)) == doctest::Approx(25.0));
  CHECK_THROWS_AS(equal_loudness_gain(curve, 10.0), Error);
  CHECK_THROWS_AS(equal_loudness_gain(curve, 12000.0), Error);
  CHECK_THROWS_AS(LoudnessCurve::tabulated({{20.0, 1.0}, {10.0, 2.0}, {9000.0, 0.0}}), Error);
  CHECK_THROWS_AS(LoudnessCurve::tabulated({{100.0, 1.0}, {9000.0, 0.0}}), Error);
}

TEST_CASE("contour CSV loading") {
  const auto path = tmp_dir() / "contour.csv";
  {
    std::ofstream out(path);
    out << "# comment\nfrequency_hz,gain_db\n20,30\n1000,0\n9000,4\n";
  }
  const auto curve = LoudnessCurve::from_csv(path);
  CHECK(curve.kind == LoudnessCurve::Kind::kTabulated);
  CHECK(curve.table.size() == 3);
  CHECK(equal_loudness_gain(curve, 1000.0) == 0.0);
  {
    std::ofstream out(path);
    out << "20,30\n1000,zero\n9000,4\n";
  }
  CHECK_THROWS_AS(LoudnessCurve::from_csv(path), Error);

  const auto shipped = LoudnessCurve::from_csv(data_directory() / "contour_35phon.csv");
  CHECK(shipped.min_frequency() <= 27.5);
  CHECK(shipped.max_frequency() >= 8000.0);
}

TEST_CASE("curve scalers convert dB differences to amplitude") {
  const auto curve = LoudnessCurve::inverted_a_weighting();
  const std::vector<int> keys{45, 60, 81};
  const auto s = curve_scalers(curve, keys, 60);
  CHECK(s[1] == 1.0);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const double f = synth::midi_to_hz(keys[i]);
    const double expected = std::pow(10.0, (equal_loudness_gain(curve, f) - equal_loudness_gain(curve, synth::midi_to_hz(60))) / 20.0);
    CHECK(s[i] == doctest::Approx(expected).epsilon(1e-12));
  }
  CHECK(s[0] > 1.0);  // low notes need more amplitude to sound as loud
}

TEST_CASE("Glasberg-Moore sone anchors") {
  const GmConfig cfg;
  const double l40 = glasberg_moore_loudness(tone(1000.0, 40.0), cfg).max_loudness;
  const double l50 = glasberg_moore_loudness(tone(1000.0, 50.0), cfg).max_loudness;
  CHECK(l40 == doctest::Approx(1.0).epsilon(0.25));
  CHECK(l50 == doctest::Approx(2.0).epsilon(0.30));

  tfr::AudioBuffer silence;
  silence.samples.assign(22050, 0.0);
  const auto quiet = glasberg_moore_loudness(silence, cfg);
  CHECK(quiet.max_loudness <= 0.01);
  CHECK_FALSE(quiet.long_term.empty());
}

TEST_CASE("loudness is strictly monotone in amplitude") {
  const GmConfig cfg;
  const std::vector<tfr::AudioBuffer> signals{
      tone(440.0, 35.0, 0.5), synth::synthesize_note(40, 0.5, 0.8, synth::test_timbre()),
      synth::synthesize_note(84, 0.5, 0.8, synth::test_timbre())};
  for (const auto& s : signals) {
    double prev = -1.0;
    for (double g : {0.25, 0.5, 1.0, 2.0, 4.0}) {
      const double l = glasberg_moore_loudness(scaled(s, g), cfg).max_loudness;
      CHECK(l > prev);
      prev = l;
    }
  }
}

TEST_CASE("GM configuration validation") {
  GmConfig cfg;
  cfg.erb_step = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = GmConfig{};
  cfg.stl_attack = 1.5;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = GmConfig{};
  cfg.ltl_release = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("loudness scalers: reference, symmetry and grid-search oracle") {
  const GmConfig cfg;
  const auto ref = synth::synthesize_note(60, 0.5, 0.8, synth::test_timbre());
  const auto low = synth::synthesize_note(28, 0.5, 0.8, synth::test_timbre());
  std::map<int, tfr::AudioBuffer> notes{{28, low}, {29, low}, {60, ref}, {61, ref}};
  const auto s = compute_loudness_scalers(notes, 60, cfg);
  REQUIRE(s.size() == 4);
  CHECK(s[2] == 1.0);  // the reference key
  CHECK(s[1] == s[0]);  // identical recordings
  CHECK(s[3] == doctest::Approx(1.0).epsilon(0.001));
  CHECK(s[0] > 1.0);

  // Fine geometric grid over s for the low note, evaluated through the full model.
  const double target = glasberg_moore_loudness(unit_rms(ref, cfg.reference_rms), cfg).max_loudness;
  const auto low_n = unit_rms(low, cfg.reference_rms);
  double lo = 1.0;
  while (glasberg_moore_loudness(scaled(low_n, lo * 2.0), cfg).max_loudness < target) lo *= 2.0;
  double best = lo, best_err = 1e300;
  for (double g = lo; g <= 2.0 * lo; g *= 1.0025) {
    const double err = std::abs(glasberg_moore_loudness(scaled(low_n, g), cfg).max_loudness - target);
    if (err < best_err) {
      best_err = err;
      best = g;
    }
  }
  CHECK(s[0] == doctest::Approx(best).epsilon(0.005));
  const double reproduced = glasberg_moore_loudness(scaled(low_n, s[0]), cfg).max_loudness;
  CHECK(reproduced == doctest::Approx(target).epsilon(0.005));
}

TEST_CASE("loudness scalers require the reference and reject silence") {
  const auto ref = synth::synthesize_note(60, 0.3, 0.8, synth::test_timbre());
  CHECK_THROWS_AS(compute_loudness_scalers({{62, ref}}, 60), Error);
  tfr::AudioBuffer silence;
  silence.samples.assign(8000, 0.0);
  try {
    compute_loudness_scalers({{60, ref}, {62, silence}}, 60);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kCalibration);
  }
}

TEST_CASE("threshold profile follows the proportionality rule") {
  const std::vector<int> keys{40, 60, 70};
  const auto uniform = make_threshold_profile(0.4, 60, keys, {1.0, 1.0, 1.0}, 60);
  for (double t : uniform.thresholds) CHECK(t == doctest::Approx(0.4));

  const auto p = make_threshold_profile(0.4, 60, keys, {2.0, 1.0, 0.5}, 60);
  CHECK(p.thresholds[0] == doctest::Approx(2.0 * p.thresholds[1]));
  CHECK(p.thresholds[2] == doctest::Approx(0.5 * p.thresholds[1]));
  CHECK(p.threshold_for(70) == doctest::Approx(0.2));
  CHECK_THROWS_AS(p.threshold_for(41), Error);

  // Low key other than the reference: a_min(k0) = base.
  const auto q = make_threshold_profile(0.4, 40, keys, {2.0, 1.0, 0.5}, 60);
  CHECK(q.thresholds[0] == doctest::Approx(0.4));
  CHECK(q.thresholds[1] == doctest::Approx(0.2));

  CHECK_THROWS_AS(make_threshold_profile(0.4, 61, keys, {2.0, 1.0, 0.5}, 60), Error);
  CHECK_THROWS_AS(make_threshold_profile(0.0, 60, keys, {2.0, 1.0, 0.5}, 60), Error);
  CHECK_THROWS_AS(make_threshold_profile(0.4, 60, keys, {2.0, 1.5, 0.5}, 60), Error);
}

TEST_CASE("threshold profile JSON round trip is exact") {
  const auto p = make_threshold_profile(0.123456789012345, 60, {40, 60, 70}, {1.0 / 3.0, 1.0, 2.0 / 7.0}, 60);
  const auto q = profile_from_json(profile_to_json(p));
  CHECK(q.base_threshold == p.base_threshold);
  CHECK(q.reference_key == p.reference_key);
  CHECK(q.midi_pitches == p.midi_pitches);
  CHECK(q.scalers == p.scalers);
  CHECK(q.thresholds == p.thresholds);

  const auto path = tmp_dir() / "profile.json";
  write_profile(path, p);
  CHECK(read_profile(path).thresholds == p.thresholds);
  CHECK_THROWS_AS(profile_from_json("{\"base\": 1}"), Error);
}

TEST_CASE("threshold profile from a low-intensity note") {
  tfr::TfrConfig tcfg;
  tcfg.bins_per_octave = 12;
  const double fr = tcfg.frame_rate(tfr::kWorkingSampleRate);
  const int L = 20;
  std::vector<dict::NotePattern> patterns;
  for (int midi : {57, 60, 64}) {
    tfr::AudioBuffer a;
    a.samples.assign(4410, 0.0);
    const auto note = synth::synthesize_note(midi, 0.5, 0.8, synth::test_timbre());
    a.samples.insert(a.samples.end(), note.samples.begin(), note.samples.end());
    a.samples.resize(a.samples.size() + 4096, 0.0);
    patterns.push_back(dict::build_pattern(unit_rms(a), tcfg, L, midi));
  }
  const auto p = dict::assemble_dictionary(patterns, fr);
  tfr::AudioBuffer low;
  low.samples.assign(4410, 0.0);
  const auto note = scaled(synth::synthesize_note(60, 0.5, 0.3, synth::test_timbre()), 0.2);
  low.samples.insert(low.samples.end(), note.samples.begin(), note.samples.end());
  low.samples.resize(low.samples.size() + 4096, 0.0);

  ProfileSolve solve;
  solve.patterns = &p;
  solve.tfr = tcfg;
  solve.solver = fact::default_solver_config(tfr::compute_spectrogram(low, tcfg).values);
  solve.solver.stage_iters = {100, 50, 0};
  solve.markov.min_run_frames = 5;
  const auto prof = build_threshold_profile(low, 60, {1.0, 1.0, 2.0}, 60, solve, 0.5);
  CHECK(prof.base_threshold > 0.0);
  CHECK(prof.thresholds[0] == doctest::Approx(prof.base_threshold));
  CHECK(prof.thresholds[2] == doctest::Approx(2.0 * prof.base_threshold));
  const auto half = build_threshold_profile(low, 60, {1.0, 1.0, 2.0}, 60, solve, 0.25);
  CHECK(half.base_threshold == doctest::Approx(0.5 * prof.base_threshold));
}
