#include "amt/eval.hpp"

#include "amt/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace amt::eval {

void validate(const NoteEvent& e) {
  require(e.midi_pitch >= 21 && e.midi_pitch <= 108, ErrorCode::kInvalidArgument,
          "MIDI pitch outside 21..108: " + std::to_string(e.midi_pitch));
  require(e.onset >= 0.0 && std::isfinite(e.onset), ErrorCode::kInvalidArgument,
          "onset must be finite and >= 0");
  require(!e.offset || *e.offset > e.onset, ErrorCode::kInvalidArgument,
          "offset must follow onset");
}

Matching match_notes(const std::vector<NoteEvent>& ref, const std::vector<NoteEvent>& est,
                     double tolerance) {
  require(tolerance >= 0.0, ErrorCode::kInvalidArgument, "tolerance must be >= 0");
  // Guards against representation error in the tolerance comparison.
  const double slack = 1e-9;
  std::vector<int> order(est.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return est[static_cast<std::size_t>(a)].onset < est[static_cast<std::size_t>(b)].onset; });
  std::vector<bool> used(ref.size(), false);
  Matching out;
  for (int ei : order) {
    const NoteEvent& e = est[static_cast<std::size_t>(ei)];
    int best = -1;
    double best_dist = 0.0;
    for (std::size_t ri = 0; ri < ref.size(); ++ri) {
      if (used[ri] || ref[ri].midi_pitch != e.midi_pitch) continue;
      const double dist = std::abs(ref[ri].onset - e.onset);
      if (dist > tolerance + slack) continue;
      const bool better =
          best < 0 || dist < best_dist ||
          (dist == best_dist && ref[ri].onset < ref[static_cast<std::size_t>(best)].onset);
      if (better) {
        best = static_cast<int>(ri);
        best_dist = dist;
      }
    }
    if (best >= 0) {
      used[static_cast<std::size_t>(best)] = true;
      out.emplace_back(best, ei);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

EvalResult compute_prf(const Matching& matching, const std::vector<NoteEvent>& ref,
                       const std::vector<NoteEvent>& est) {
  EvalResult r;
  r.matching = matching;
  r.tp = static_cast<int>(matching.size());
  r.fp = static_cast<int>(est.size()) - r.tp;
  r.fn = static_cast<int>(ref.size()) - r.tp;
  if (ref.empty() && est.empty()) {
    r.precision = r.recall = r.f_measure = 1.0;
    return r;
  }
  r.precision = est.empty() ? 0.0 : static_cast<double>(r.tp) / static_cast<double>(est.size());
  r.recall = ref.empty() ? 0.0 : static_cast<double>(r.tp) / static_cast<double>(ref.size());
  const double sum = r.precision + r.recall;
  r.f_measure = sum > 0.0 ? 2.0 * r.precision * r.recall / sum : 0.0;
  return r;
}

std::string to_json(const EvalResult& r) {
  nlohmann::json j = {{"precision", r.precision}, {"recall", r.recall},
                      {"f_measure", r.f_measure}, {"tp", r.tp},
                      {"fp", r.fp},               {"fn", r.fn}};
  return j.dump();
}

std::string to_table(const EvalResult& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "precision  %.4f\nrecall     %.4f\nf_measure  %.4f\ntp %d  fp %d  fn %d\n",
                r.precision, r.recall, r.f_measure, r.tp, r.fp, r.fn);
  return buf;
}

}  // namespace amt::eval
