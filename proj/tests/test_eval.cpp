#include "amt/eval.hpp"

#include <doctest.h>

#include <random>

using amt::eval::NoteEvent;
using namespace amt::eval;

namespace {

NoteEvent note(int pitch, double onset) {
  NoteEvent e;
  e.midi_pitch = pitch;
  e.onset = onset;
  return e;
}

std::vector<NoteEvent> random_events(std::mt19937_64& rng, int count) {
  std::uniform_int_distribution<int> pitch(60, 64);
  std::uniform_real_distribution<double> onset(0.0, 3.0);
  std::vector<NoteEvent> out;
  for (int i = 0; i < count; ++i) out.push_back(note(pitch(rng), onset(rng)));
  return out;
}

}  // namespace

TEST_CASE("identical lists match completely") {
  const std::vector<NoteEvent> ref{note(60, 0.1), note(64, 0.5), note(67, 0.5)};
  const auto r = evaluate(ref, ref);
  CHECK(r.tp == 3);
  CHECK(r.fp == 0);
  CHECK(r.fn == 0);
  CHECK(r.f_measure == 1.0);
}

TEST_CASE("onset 90 ms away is within the 100 ms tolerance") {
  const auto r = evaluate({note(60, 0.0)}, {note(60, 0.090)});
  CHECK(r.tp == 1);
}

TEST_CASE("onset 150 ms away is not matched") {
  const auto r = evaluate({note(60, 0.0)}, {note(60, 0.150)});
  CHECK(r.tp == 0);
  CHECK(r.fp == 1);
  CHECK(r.fn == 1);
}

TEST_CASE("a reference note validates at most one detection") {
  const auto r = evaluate({note(60, 1.0)}, {note(60, 0.97), note(60, 1.04)});
  CHECK(r.tp == 1);
  CHECK(r.fp == 1);
  CHECK(r.fn == 0);
  REQUIRE(r.matching.size() == 1);
  CHECK(r.matching[0] == std::pair<int, int>{0, 0});  // earlier detection is visited first
}

TEST_CASE("pitch must agree") {
  const auto r = evaluate({note(60, 1.0)}, {note(61, 1.0)});
  CHECK(r.tp == 0);
}

TEST_CASE("equidistant references tie towards the earlier one") {
  const auto m = match_notes({note(60, 1.0), note(60, 1.1)}, {note(60, 1.05)});
  REQUIRE(m.size() == 1);
  CHECK(m[0].first == 0);
}

TEST_CASE("TP=3, FP=1, FN=1 gives 0.75 everywhere") {
  const std::vector<NoteEvent> ref{note(60, 0), note(62, 1), note(64, 2), note(65, 3)};
  const std::vector<NoteEvent> est{note(60, 0), note(62, 1), note(64, 2), note(70, 3)};
  const auto r = evaluate(ref, est);
  CHECK(r.tp == 3);
  CHECK(r.fp == 1);
  CHECK(r.fn == 1);
  CHECK(r.precision == doctest::Approx(0.75));
  CHECK(r.recall == doctest::Approx(0.75));
  CHECK(r.f_measure == doctest::Approx(0.75));
}

TEST_CASE("empty-list conventions") {
  const auto both = evaluate({}, {});
  CHECK(both.precision == 1.0);
  CHECK(both.recall == 1.0);
  CHECK(both.f_measure == 1.0);
  const auto no_est = evaluate({note(60, 0)}, {});
  CHECK(no_est.precision == 0.0);
  CHECK(no_est.recall == 0.0);
  CHECK(no_est.f_measure == 0.0);
  const auto no_ref = evaluate({}, {note(60, 0)});
  CHECK(no_ref.f_measure == 0.0);
}

TEST_CASE("json output carries all counts") {
  const auto r = evaluate({note(60, 0)}, {note(60, 0)});
  const std::string j = to_json(r);
  for (const char* key : {"precision", "recall", "f_measure", "tp", "fp", "fn"}) {
    CHECK(j.find(std::string("\"") + key + "\"") != std::string::npos);
  }
  CHECK(to_table(r).find("f_measure") != std::string::npos);
}

TEST_CASE("property: counts, bounds, translation invariance, tolerance monotonicity") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    const auto ref = random_events(rng, static_cast<int>(rng() % 8));
    const auto est = random_events(rng, static_cast<int>(rng() % 8));
    const auto r = evaluate(ref, est);
    CHECK(r.tp == static_cast<int>(r.matching.size()));
    CHECK(r.tp + r.fp == static_cast<int>(est.size()));
    CHECK(r.tp + r.fn == static_cast<int>(ref.size()));
    CHECK(r.tp <= static_cast<int>(std::min(ref.size(), est.size())));
    CHECK(r.precision >= 0.0);
    CHECK(r.precision <= 1.0);
    CHECK(r.recall >= 0.0);
    CHECK(r.recall <= 1.0);
    CHECK(r.f_measure >= 0.0);
    CHECK(r.f_measure <= 1.0);
    if (r.precision + r.recall > 0.0 && !(ref.empty() && est.empty())) {
      CHECK(r.f_measure == doctest::Approx(2 * r.precision * r.recall / (r.precision + r.recall)));
    }

    // Shift by a dyadic amount so onset differences stay exact.
    auto ref_s = ref;
    auto est_s = est;
    for (auto& e : ref_s) e.onset += 2.0;
    for (auto& e : est_s) e.onset += 2.0;
    CHECK(evaluate(ref_s, est_s).tp == r.tp);

    int previous = r.tp;
    for (double tol : {0.08, 0.05, 0.02, 0.0}) {
      const int tp = evaluate(ref, est, tol).tp;
      CHECK(tp <= previous);
      previous = tp;
    }
  }
}
