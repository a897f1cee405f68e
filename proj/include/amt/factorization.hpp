#pragma once

#include "amt/dictionary.hpp"
#include "amt/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace amt::fact {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Activations A (K x L x N), stored as a (K*L) x N matrix with row k*L + l.
/// Rows for one key form a contiguous L x N block.
struct ActivityTensor {
  int keys = 0;
  int frames = 0;  // L, template positions per key
  Eigen::MatrixXd values;

  ActivityTensor() = default;
  ActivityTensor(int k, int l, int n)
      : keys(k), frames(l), values(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k) * l, n)) {}

  int time_frames() const { return static_cast<int>(values.cols()); }
  Eigen::Index row(int key, int l) const { return static_cast<Eigen::Index>(key) * frames + l; }
  double at(int k, int l, int n) const { return values(row(k, l), n); }
  double& at(int k, int l, int n) { return values(row(k, l), n); }
  auto slice(int k) { return values.middleRows(static_cast<Eigen::Index>(k) * frames, frames); }
  auto slice(int k) const { return values.middleRows(static_cast<Eigen::Index>(k) * frames, frames); }
};

struct MarkovConfig {
  int min_run_frames = 1;  // L_min
  bool allow_truncated_final_run = true;
  bool allow_sustain_loop = true;
};

// --- signal model ----------------------------------------------------------

/// (P (x) A)[m,n] = sum_k sum_l P[m,l,k] A[k,l,n], i.e. the unfolded product.
Eigen::MatrixXd apply_model(const dict::PatternTensor& p, const ActivityTensor& a);

/// d(a, b) = a log(a/b) - a + b with d(0, b) = b and d(a>0, 0) = +inf.
inline double kl_term(double a, double b) {
  if (a == 0.0) return b;
  if (b == 0.0) return std::numeric_limits<double>::infinity();
  return a * std::log(a / b) - a + b;
}

/// Sum of kl_term over all entries; throws on shape mismatch or negative entries.
double kl_divergence(const Eigen::MatrixXd& v, const Eigen::MatrixXd& w);

// --- diagonal differences --------------------------------------------------

/// out[k, l-1, n-1] = A[k,l,n] - A[k,l-1,n-1] for l, n >= 1 (0-based), stored
/// as a (K*(L-1)) x (N-1) matrix with row k*(L-1) + (l-1).
template <typename Scalar>
void diagonal_difference(const Mat<Scalar>& a, int keys, int frames, Mat<Scalar>& out) {
  const Eigen::Index n = a.cols();
  out.resize(static_cast<Eigen::Index>(keys) * (frames - 1), n - 1);
  for (int k = 0; k < keys; ++k) {
    const Eigen::Index src = static_cast<Eigen::Index>(k) * frames;
    const Eigen::Index dst = static_cast<Eigen::Index>(k) * (frames - 1);
    out.middleRows(dst, frames - 1) =
        a.block(src + 1, 1, frames - 1, n - 1) - a.block(src, 0, frames - 1, n - 1);
  }
}

/// Adjoint of diagonal_difference: accumulates +b at (l+1, n+1) and -b at (l, n).
template <typename Scalar>
void diagonal_difference_adjoint(const Mat<Scalar>& b, int keys, int frames, Mat<Scalar>& out) {
  const Eigen::Index n = b.cols() + 1;
  out.setZero(static_cast<Eigen::Index>(keys) * frames, n);
  for (int k = 0; k < keys; ++k) {
    const Eigen::Index dst = static_cast<Eigen::Index>(k) * frames;
    const Eigen::Index src = static_cast<Eigen::Index>(k) * (frames - 1);
    out.block(dst + 1, 1, frames - 1, n - 1) += b.middleRows(src, frames - 1);
    out.block(dst, 0, frames - 1, n - 1) -= b.middleRows(src, frames - 1);
  }
}

Eigen::MatrixXd diagonal_difference(const ActivityTensor& a);
ActivityTensor diagonal_difference_adjoint(const Eigen::MatrixXd& b, int keys, int frames);

/// Solves (I + D^T D) x = rhs in place, where D is diagonal_difference. Every
/// diagonal chain is an independent tridiagonal system (diagonal 2, 3, ..., 3, 2
/// and off-diagonals -1); all chains are swept together column by column.
template <typename Scalar>
void solve_identity_plus_tv_gram(Mat<Scalar>& x, int keys, int frames) {
  const Eigen::Index n = x.cols();
  const Eigen::Index len_max = std::min<Eigen::Index>(frames, n);
  if (frames < 2 || n < 2) return;
  // Thomas coefficients by chain position t: c'_t = -1 / (b_t + c'_{t-1}).
  std::vector<Scalar> inv_mid(static_cast<std::size_t>(len_max)), inv_last(inv_mid.size()),
      c_prime(inv_mid.size());
  for (Eigen::Index t = 0; t < len_max; ++t) {
    const auto i = static_cast<std::size_t>(t);
    const double prev = t > 0 ? static_cast<double>(c_prime[i - 1]) : 0.0;
    const double d_mid = (t == 0 ? 2.0 : 3.0) + prev;
    inv_mid[i] = static_cast<Scalar>(1.0 / d_mid);
    inv_last[i] = static_cast<Scalar>(t == 0 ? 1.0 : 1.0 / (2.0 + prev));
    c_prime[i] = static_cast<Scalar>(-1.0 / d_mid);
  }
  const Eigen::Index rows = x.rows();
  Scalar* data = x.data();
  for (Eigen::Index c = 0; c < n; ++c) {
    Scalar* col = data + c * rows;
    const Scalar* prev = data + (c - 1) * rows;
    const bool last_col = c == n - 1;
    for (int k = 0; k < keys; ++k) {
      const Eigen::Index base = static_cast<Eigen::Index>(k) * frames;
      for (int l = 0; l < frames; ++l) {
        const auto t = static_cast<std::size_t>(std::min<Eigen::Index>(l, c));
        const bool last = last_col || l == frames - 1;
        if (t == 0) {
          if (!last) col[base + l] *= inv_mid[0];
        } else {
          col[base + l] = (col[base + l] + prev[base + l - 1]) * (last ? inv_last[t] : inv_mid[t]);
        }
      }
    }
  }
  for (Eigen::Index c = n - 2; c >= 0; --c) {
    Scalar* col = data + c * rows;
    const Scalar* next = data + (c + 1) * rows;
    for (int k = 0; k < keys; ++k) {
      const Eigen::Index base = static_cast<Eigen::Index>(k) * frames;
      for (int l = 0; l < frames - 1; ++l) {
        const auto t = static_cast<std::size_t>(std::min<Eigen::Index>(l, c));
        col[base + l] -= c_prime[t] * next[base + l + 1];
      }
    }
  }
}

// --- proximal operators and projections -------------------------------------

/// argmin_z d(v, z) + rho/2 (z - x)^2, elementwise.
template <typename Scalar>
inline Scalar prox_kl_scalar(Scalar x, Scalar v, Scalar rho) {
  const Scalar b = rho * x - Scalar(1);
  const Scalar disc = std::sqrt(b * b + Scalar(4) * rho * v);
  // Rationalized branch avoids cancellation when b is large and negative.
  if (b >= Scalar(0)) return (b + disc) / (Scalar(2) * rho);
  const Scalar den = disc - b;
  return den > Scalar(0) ? Scalar(2) * v / den : Scalar(0);
}

template <typename Scalar>
inline Scalar soft_threshold_scalar(Scalar x, Scalar tau) {
  if (x > tau) return x - tau;
  if (x < -tau) return x + tau;
  return Scalar(0);
}

/// Nearest point of {0} U [a_min, inf); the tie x = a_min/2 maps to 0.
template <typename Scalar>
inline Scalar hard_threshold_scalar(Scalar x, Scalar a_min) {
  if (x <= a_min / Scalar(2)) return Scalar(0);
  return x > a_min ? x : a_min;
}

Eigen::MatrixXd prox_kl(const Eigen::MatrixXd& x, const Eigen::MatrixXd& v, double rho);
Eigen::MatrixXd project_nonneg(const Eigen::MatrixXd& x);
Eigen::MatrixXd soft_threshold(const Eigen::MatrixXd& x, double tau);
double project_hard_threshold(double x, double a_min);
/// Per-key hard thresholding of a full activity tensor.
ActivityTensor project_hard_threshold(const ActivityTensor& a, std::span<const double> a_min);

/// Euclidean projection of one key's L x N slice onto slices supported on a
/// single admissible state path (idle, or template position 1..L_k). Rows at
/// or beyond `effective_length` are always cleared. In place.
template <typename Derived>
void project_markov(Eigen::MatrixBase<Derived>& slice, int effective_length, const MarkovConfig& cfg);


template <typename Derived>
void project_markov(Eigen::MatrixBase<Derived>& slice, int effective_length, const MarkovConfig& cfg) {
  using Scalar = typename Derived::Scalar;
  const int total_rows = static_cast<int>(slice.rows());
  const auto n_frames = static_cast<int>(slice.cols());
  const int lk = effective_length;
  if (lk < 1 || lk > total_rows) {
    fail(ErrorCode::kInvalidArgument, "effective length outside [1, L]");
  }
  if (cfg.min_run_frames < 1 || cfg.min_run_frames > lk) {
    fail(ErrorCode::kInvalidArgument, "min_run_frames must lie in [1, L_k]");
  }
  if (n_frames == 0) return;
  const int lmin = cfg.min_run_frames;
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  // State 0 is idle, state s >= 1 is template position s (1-based).
  const int n_states = lk + 1;
  std::vector<double> score(static_cast<std::size_t>(n_states), kNegInf);
  std::vector<double> next(static_cast<std::size_t>(n_states));
  std::vector<int> back(static_cast<std::size_t>(n_states) * n_frames, -1);
  auto gain = [&](int s, int n) {
    const double v = std::max(static_cast<double>(slice(s - 1, n)), 0.0);
    return v * v;
  };

  score[0] = 0.0;
  score[1] = gain(1, 0);
  back[0] = 0;
  back[1] = 0;
  for (int n = 1; n < n_frames; ++n) {
    // Best predecessor that may leave its run: idle, or positions >= L_min.
    double best_exit = score[0];
    int best_exit_state = 0;
    for (int s = lmin; s <= lk; ++s) {
      if (score[static_cast<std::size_t>(s)] > best_exit) {
        best_exit = score[static_cast<std::size_t>(s)];
        best_exit_state = s;
      }
    }
    int* bp = back.data() + static_cast<std::size_t>(n) * n_states;
    next[0] = best_exit;
    bp[0] = best_exit_state;
    next[1] = best_exit + gain(1, n);
    bp[1] = best_exit_state;
    for (int s = 2; s <= lk; ++s) {
      double from = score[static_cast<std::size_t>(s - 1)];
      int from_state = s - 1;
      if (s == lk && cfg.allow_sustain_loop && score[static_cast<std::size_t>(lk)] > from) {
        from = score[static_cast<std::size_t>(lk)];
        from_state = lk;
      }
      next[static_cast<std::size_t>(s)] = from == kNegInf ? kNegInf : from + gain(s, n);
      bp[s] = from_state;
    }
    score.swap(next);
  }

  int state = 0;
  double best = score[0];
  for (int s = 1; s <= lk; ++s) {
    const bool may_end = s >= lmin || cfg.allow_truncated_final_run;
    if (may_end && score[static_cast<std::size_t>(s)] > best) {
      best = score[static_cast<std::size_t>(s)];
      state = s;
    }
  }

  for (int n = n_frames - 1; n >= 0; --n) {
    for (int r = 0; r < total_rows; ++r) {
      if (r + 1 != state) {
        slice(r, n) = Scalar(0);
      } else if (slice(r, n) < Scalar(0)) {
        slice(r, n) = Scalar(0);
      }
    }
    state = back[static_cast<std::size_t>(n) * n_states + static_cast<std::size_t>(state)];
  }
}

ActivityTensor project_markov(const ActivityTensor& a, std::span<const int> effective_lengths,
                              const MarkovConfig& cfg);
Eigen::MatrixXd project_markov(const Eigen::MatrixXd& slice, int effective_length,
                               const MarkovConfig& cfg);

/// True when the non-negative slice lies on one admissible path.
bool markov_feasible(const Eigen::MatrixXd& slice, int effective_length, const MarkovConfig& cfg);

/// Largest singular value of the M x (L*K) unfolding (power iteration on P P^T).
double estimate_operator_norm(const Eigen::MatrixXd& unfolded);
inline double estimate_operator_norm(const dict::PatternTensor& p) {
  return estimate_operator_norm(p.values);
}

// --- objective -------------------------------------------------------------

enum class Stage { kConvex = 1, kMarkov = 2, kThreshold = 3 };

struct ObjectiveWeights {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
};

struct ObjectiveBreakdown {
  double data = 0.0;
  double nonneg = 0.0;
  double l1 = 0.0;
  double tv = 0.0;
  double markov = 0.0;
  double threshold = 0.0;
  double total = 0.0;
  std::vector<std::string> violated;  // names of characteristic terms at +inf
};

/// Evaluates the terms active at `stage`. Characteristic terms contribute 0
/// or +inf; `thresholds` is required for the threshold stage.
ObjectiveBreakdown objective_value(const Eigen::MatrixXd& v, const dict::PatternTensor& p,
                                   const ActivityTensor& a, const ObjectiveWeights& weights,
                                   const MarkovConfig& markov, Stage stage,
                                   std::span<const double> thresholds = {});

}  // namespace amt::fact
