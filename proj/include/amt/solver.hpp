#pragma once

#include "amt/dictionary.hpp"
#include "amt/factorization.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace amt::fact {

enum class Precision { kFloat32 = 32, kFloat64 = 64 };
// kMultiplicative warm-starts the consensus with `init_iters` multiplicative
// updates of the KL + l1 part of the objective.
enum class Init { kZero, kRandom, kMultiplicative };

struct SolverConfig {
  double lambda1 = 0.0;  // l1 weight, spectrogram units per activation unit
  double lambda2 = 0.0;  // diagonal TV weight
  double rho = 1.0;      // initial penalty of the internally rescaled problem
  // Residual balancing: every `rho_interval` iterations rho is multiplied
  // (divided) by rho_factor when the primal (dual) residual exceeds the other
  // by more than rho_balance. Scaled duals are rescaled accordingly.
  // Internal unfolding is P' = data_gain * P / ||P||; larger gains weight the
  // data split more heavily against the regularizer copies.
  double data_gain = 1.0;
  // Penalty multipliers of the Markov and threshold copies; weights above 1
  // pull the consensus onto the non-convex sets faster.
  double markov_weight = 1.0;
  double threshold_weight = 1.0;
  // When positive, the Markov weight starts here and grows geometrically to
  // markov_weight over the first half of stage 2 (one step per rho_interval).
  double markov_weight_start = 0.0;
  bool adaptive_rho = true;
  int rho_interval = 10;
  double rho_balance = 10.0;
  double rho_factor = 2.0;
  std::array<int, 3> stage_iters{200, 100, 100};  // convex, +markov, +threshold
  double tol_primal = 1e-4;
  double tol_dual = 1e-4;
  Precision precision = Precision::kFloat64;
  Init init = Init::kZero;
  double init_scale = 1.0;  // upper bound of the uniform random start (internal units)
  int init_iters = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

/// lambda1 = l1_scale * mean(V), lambda2 = tv_ratio * lambda1.
SolverConfig default_solver_config(const Eigen::MatrixXd& v, double l1_scale = 0.01,
                                   double tv_ratio = 0.5);

struct ResidualRecord {
  int iteration = 0;  // global, 1-based
  int stage = 1;
  double primal = 0.0;
  double dual = 0.0;
};

struct SolveResult {
  ActivityTensor activity;
  std::vector<ResidualRecord> residuals;
  bool stage1_converged = false;
  int stage1_iterations = 0;
  // Internal rescaling: V' = V / data_scale, P' = P / operator_norm.
  double data_scale = 0.0;
  double operator_norm = 0.0;
  std::vector<std::string> diagnostics;
};

/// Staged consensus ADMM. Stage 1 runs the convex terms (KL, non-negativity,
/// l1, diagonal TV) and stops early once both residuals fall below tolerance;
/// stage 2 adds the Markov support projection and stage 3 the per-key hard
/// threshold (only when `thresholds` is non-empty). The returned activity is
/// the final consensus passed through non-negativity, Markov (when stage 2
/// ran) and threshold (when stage 3 ran) projections, in that order.
SolveResult solve_activity(const Eigen::MatrixXd& v, const dict::PatternTensor& p,
                           const SolverConfig& cfg, const MarkovConfig& markov,
                           std::span<const double> thresholds = {});

/// Per-iteration residuals as CSV (iteration,stage,primal,dual).
void write_residuals_csv(const std::string& path, const std::vector<ResidualRecord>& log);

/// Slices A[k,:,:] stacked vertically (K*L rows x N columns).
inline const Eigen::MatrixXd& flatten_for_plot(const ActivityTensor& a) { return a.values; }

}  // namespace amt::fact
