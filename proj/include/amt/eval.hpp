#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace amt::eval {

struct NoteEvent {
  int midi_pitch = 60;
  double onset = 0.0;                // seconds
  std::optional<double> offset;      // seconds, > onset when present
  double intensity = 1.0;

  bool operator==(const NoteEvent&) const = default;
};

void validate(const NoteEvent& e);

using Matching = std::vector<std::pair<int, int>>;  // (reference index, estimate index)

inline constexpr double kDefaultTolerance = 0.100;

/// Greedy onset matching: estimates are visited in ascending onset order and
/// each takes the unmatched reference of equal pitch with the smallest
/// |onset difference| <= tolerance (ties go to the earlier reference).
Matching match_notes(const std::vector<NoteEvent>& ref, const std::vector<NoteEvent>& est,
                     double tolerance = kDefaultTolerance);

struct EvalResult {
  double precision = 0.0;
  double recall = 0.0;
  double f_measure = 0.0;
  int tp = 0;
  int fp = 0;
  int fn = 0;
  Matching matching;
};

EvalResult compute_prf(const Matching& matching, const std::vector<NoteEvent>& ref,
                       const std::vector<NoteEvent>& est);

inline EvalResult evaluate(const std::vector<NoteEvent>& ref, const std::vector<NoteEvent>& est,
                           double tolerance = kDefaultTolerance) {
  return compute_prf(match_notes(ref, est, tolerance), ref, est);
}

/// {"precision":..,"recall":..,"f_measure":..,"tp":..,"fp":..,"fn":..}
std::string to_json(const EvalResult& r);
std::string to_table(const EvalResult& r);

}  // namespace amt::eval
