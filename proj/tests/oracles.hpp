#pragma once

// Independent reference implementations used by the tests: brute-force
// enumerations, naive loops and 1-D numeric minimization.

#include "amt/dictionary.hpp"
#include "amt/factorization.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace oracle {

/// Golden-section minimization of a unimodal function on [lo, hi].
inline double minimize_1d(const std::function<double(double)>& f, double lo, double hi,
                          int iters = 200) {
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = f(c), fd = f(d);
  for (int i = 0; i < iters; ++i) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = f(d);
    }
  }
  return (a + b) / 2.0;
}

/// Sum over k, l of P[m,l,k] A[k,l,n] by explicit loops.
inline Eigen::MatrixXd model_loops(const amt::dict::PatternTensor& p, const amt::fact::ActivityTensor& a) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(p.bins(), a.time_frames());
  for (int m = 0; m < p.bins(); ++m)
    for (int n = 0; n < a.time_frames(); ++n)
      for (int k = 0; k < p.keys(); ++k)
        for (int l = 0; l < p.frames; ++l) out(m, n) += p.at(m, l, k) * a.at(k, l, n);
  return out;
}

/// Every admissible state path (0 = idle, s = template position s) of length n.
inline void enumerate_paths(int lk, int n, const amt::fact::MarkovConfig& cfg,
                            std::vector<std::vector<int>>& out) {
  std::vector<int> path;
  std::function<void(int)> rec = [&](int t) {
    if (t == n) {
      const int last = path.back();
      if (last == 0 || last >= cfg.min_run_frames || cfg.allow_truncated_final_run) out.push_back(path);
      return;
    }
    std::vector<int> next;
    if (t == 0) {
      next = {0, 1};
    } else {
      const int s = path.back();
      if (s == 0) {
        next = {0, 1};
      } else {
        if (s < lk) next.push_back(s + 1);
        if (s >= cfg.min_run_frames) {
          next.push_back(0);
          next.push_back(1);
        }
        if (s == lk && cfg.allow_sustain_loop) next.push_back(lk);
      }
    }
    for (int s : next) {
      path.push_back(s);
      rec(t + 1);
      path.pop_back();
    }
  };
  rec(0);
}

/// Euclidean projection onto single-path supports by exhaustive search.
inline Eigen::MatrixXd markov_brute_force(const Eigen::MatrixXd& x, int lk, const amt::fact::MarkovConfig& cfg) {
  const int n = static_cast<int>(x.cols());
  std::vector<std::vector<int>> paths;
  enumerate_paths(lk, n, cfg, paths);
  double best = -1.0;
  Eigen::MatrixXd best_out = Eigen::MatrixXd::Zero(x.rows(), n);
  for (const auto& path : paths) {
    Eigen::MatrixXd cand = Eigen::MatrixXd::Zero(x.rows(), n);
    for (int t = 0; t < n; ++t) {
      if (path[t] > 0) cand(path[t] - 1, t) = std::max(x(path[t] - 1, t), 0.0);
    }
    const double dist = (cand - x).squaredNorm();
    if (best < 0.0 || dist < best - 1e-15) {
      best = dist;
      best_out = cand;
    }
  }
  return best_out;
}

}  // namespace oracle
