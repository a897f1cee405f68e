#include "amt/solver.hpp"

#include "amt/error.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <cstdio>
#include <limits>
#include <random>

namespace amt::fact {

void SolverConfig::validate() const {
  require(lambda1 >= 0.0 && lambda2 >= 0.0, ErrorCode::kInvalidArgument,
          "regularization weights must be non-negative");
  require(rho > 0.0, ErrorCode::kInvalidArgument, "rho must be positive");
  for (int it : stage_iters) {
    require(it >= 0, ErrorCode::kInvalidArgument, "stage iteration counts must be >= 0");
  }
  require(tol_primal >= 0.0 && tol_dual >= 0.0, ErrorCode::kInvalidArgument,
          "tolerances must be non-negative");
  require(markov_weight > 0.0 && threshold_weight > 0.0, ErrorCode::kInvalidArgument,
          "copy weights must be positive");
  require(markov_weight_start >= 0.0, ErrorCode::kInvalidArgument,
          "markov_weight_start must be non-negative");
  require(data_gain > 0.0, ErrorCode::kInvalidArgument, "data_gain must be positive");
  require(rho_interval >= 1 && rho_balance > 1.0 && rho_factor > 1.0, ErrorCode::kInvalidArgument,
          "rho adaptation needs interval >= 1, balance > 1 and factor > 1");
  require(init_iters >= 0, ErrorCode::kInvalidArgument, "init_iters must be >= 0");
  require(init_scale >= 0.0, ErrorCode::kInvalidArgument, "init_scale must be non-negative");
}

SolverConfig default_solver_config(const Eigen::MatrixXd& v, double l1_scale, double tv_ratio) {
  SolverConfig cfg;
  const double mean = v.size() > 0 ? v.mean() : 0.0;
  cfg.lambda1 = l1_scale * mean;
  cfg.lambda2 = tv_ratio * cfg.lambda1;
  return cfg;
}

namespace {

enum class CopyKind { kNonneg, kL1, kMarkov, kThreshold };

template <typename Scalar>
struct Copy {
  CopyKind kind;
  Scalar weight;  // penalty multiplier relative to rho
  Mat<Scalar> x;
  Mat<Scalar> u;
};

// Consensus ADMM on the internally rescaled problem. Variables of the x-block
// are the data split Z (~ P'Y), one copy per regularizer and the TV copy X_tv;
// the z-block holds the consensus Y and the TV auxiliary W (~ D X_tv).
// Elementwise work is fused into a handful of column sweeps because the
// iteration is bound by memory traffic over the (K*L) x N tensors.
template <typename Scalar>
class ConsensusAdmm {
 public:
  using M = Mat<Scalar>;

  ConsensusAdmm(const Eigen::MatrixXd& v, const dict::PatternTensor& p, const SolverConfig& cfg,
                const MarkovConfig& markov, std::span<const double> thresholds, double data_scale,
                double op_norm)
      : cfg_(cfg),
        markov_(markov),
        keys_(p.keys()),
        frames_(p.frames),
        effective_(p.effective_lengths),
        rho_(static_cast<Scalar>(cfg.rho)),
        l1_(static_cast<Scalar>(cfg.lambda1 / op_norm)),
        tv_(static_cast<Scalar>(cfg.lambda2 / op_norm)) {
    pattern_ = (p.values / op_norm).cast<Scalar>();
    data_ = (v / data_scale).cast<Scalar>();
    gram_ = pattern_ * pattern_.transpose();
    for (double t : thresholds) thresholds_.push_back(static_cast<Scalar>(t * op_norm / data_scale));
  }

  void initialize() {
    const Eigen::Index rows = pattern_.cols();
    const Eigen::Index n = data_.cols();
    if (cfg_.init == Init::kRandom) {
      std::mt19937_64 rng(cfg_.seed);
      std::uniform_real_distribution<double> dist(0.0, cfg_.init_scale);
      y_.resize(rows, n);
      for (Eigen::Index c = 0; c < n; ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) y_(r, c) = static_cast<Scalar>(dist(rng));
      }
    } else if (cfg_.init == Init::kMultiplicative) {
      multiplicative_start();
    } else {
      y_ = M::Zero(rows, n);
    }
    py_.noalias() = pattern_ * y_;
    z_ = py_;
    uz_ = M::Zero(z_.rows(), n);
    add_copy(CopyKind::kNonneg);
    add_copy(CopyKind::kL1);
    x_tv_ = y_;
    u_tv_ = M::Zero(rows, n);
    if (use_tv()) {
      diagonal_difference<Scalar>(y_, keys_, frames_, w_);
      u_w_ = M::Zero(w_.rows(), w_.cols());
      g_.resize(w_.rows(), w_.cols());
    }
    s_.resize(rows, n);
  }

  void add_copy(CopyKind kind) {
    double weight = 1.0;
    if (kind == CopyKind::kMarkov) {
      weight = cfg_.markov_weight_start > 0.0 ? cfg_.markov_weight_start : cfg_.markov_weight;
    }
    if (kind == CopyKind::kThreshold) weight = cfg_.threshold_weight;
    copies_.push_back({kind, static_cast<Scalar>(weight), y_, M::Zero(y_.rows(), y_.cols())});
    factor();
  }

  // Changes a copy's penalty weight while keeping its unscaled dual fixed.
  void set_weight(CopyKind kind, double weight) {
    for (auto& copy : copies_) {
      if (copy.kind != kind) continue;
      copy.u *= copy.weight / static_cast<Scalar>(weight);
      copy.weight = static_cast<Scalar>(weight);
    }
    factor();
  }

  // One ADMM sweep; returns the (primal, dual) residual norms.
  std::pair<double, double> iterate() {
    const Eigen::Index n = data_.cols();
    const Eigen::Index rows = y_.rows();
    const Eigen::Index total = rows * n;
    const Scalar* y = y_.data();

    // x-block ----------------------------------------------------------------
    for (Eigen::Index i = 0; i < z_.size(); ++i) {
      z_.data()[i] = prox_kl_scalar(py_.data()[i] + uz_.data()[i], data_.data()[i], rho_);
    }
    for (auto& copy : copies_) {
      Scalar* x = copy.x.data();
      const Scalar* u = copy.u.data();
      switch (copy.kind) {
        case CopyKind::kNonneg:
          for (Eigen::Index i = 0; i < total; ++i) x[i] = std::max(y[i] - u[i], Scalar(0));
          break;
        case CopyKind::kL1: {
          const Scalar tau = l1_ / (rho_ * copy.weight);
          for (Eigen::Index i = 0; i < total; ++i) x[i] = soft_threshold_scalar(y[i] - u[i], tau);
          break;
        }
        case CopyKind::kMarkov:
          for (Eigen::Index i = 0; i < total; ++i) x[i] = y[i] - u[i];
#pragma omp parallel for schedule(static)
          for (int k = 0; k < keys_; ++k) {
            auto block = copy.x.middleRows(static_cast<Eigen::Index>(k) * frames_, frames_);
            project_markov(block, effective_[static_cast<std::size_t>(k)], markov_);
          }
          break;
        case CopyKind::kThreshold:
          for (Eigen::Index c = 0; c < n; ++c) {
            for (int k = 0; k < keys_; ++k) {
              const Scalar t = thresholds_[static_cast<std::size_t>(k)];
              const Eigen::Index off = c * rows + static_cast<Eigen::Index>(k) * frames_;
              for (int l = 0; l < frames_; ++l) {
                x[off + l] = hard_threshold_scalar(y[off + l] - u[off + l], t);
              }
            }
          }
          break;
      }
    }
    if (use_tv()) {
      // Right-hand side (Y - U_tv) + D^T (W - U_w), then the chain solves.
      g_ = w_ - u_w_;
      tv_rhs(g_);
      solve_identity_plus_tv_gram<Scalar>(x_tv_, keys_, frames_);
    } else {
      x_tv_ = y_ - u_tv_;
    }

    // z-block: consensus via the Woodbury form of (P'^T P' + c I)^-1.
    const Scalar c = total_weight();
    {
      Scalar* s = s_.data();
      const Scalar* xt = x_tv_.data();
      const Scalar* ut = u_tv_.data();
      for (Eigen::Index i = 0; i < total; ++i) s[i] = xt[i] + ut[i];
      for (const auto& copy : copies_) {
        const Scalar* x = copy.x.data();
        const Scalar* u = copy.u.data();
        const Scalar w = copy.weight;
        for (Eigen::Index i = 0; i < total; ++i) s[i] += w * (x[i] + u[i]);
      }
    }
    b_ = z_ - uz_;
    q_.noalias() = pattern_ * s_;
    q_.noalias() += gram_ * b_;
    t_ = llt_.solve(q_);
    b_ -= t_;
    y_prev_.swap(y_);
    y_.noalias() = pattern_.transpose() * b_;
    y_ += s_;
    y_ /= c;
    py_prev_.swap(py_);
    py_ = q_;
    py_.noalias() -= gram_ * t_;
    py_ /= c;

    // Residuals and dual ascent ---------------------------------------------
    double dual_sq = (py_ - py_prev_).squaredNorm();
    double primal_sq = 0.0;
    if (use_tv()) primal_sq += update_w();  // leaves delta W in g_
    y = y_.data();
    const Scalar* yp = y_prev_.data();
    double dy_sq = 0.0;
    for (Eigen::Index i = 0; i < total; ++i) {
      const double d = static_cast<double>(y[i] - yp[i]);
      dy_sq += d * d;
    }
    for (const auto& copy : copies_) {
      dual_sq += static_cast<double>(copy.weight) * static_cast<double>(copy.weight) * dy_sq;
    }
    dual_sq += use_tv() ? tv_dual_sq() : dy_sq;
    for (auto& copy : copies_) {
      const Scalar* x = copy.x.data();
      Scalar* u = copy.u.data();
      double acc = 0.0;
      for (Eigen::Index i = 0; i < total; ++i) {
        const Scalar r = x[i] - y[i];
        acc += static_cast<double>(r) * r;
        u[i] += r;
      }
      primal_sq += static_cast<double>(copy.weight) * acc;
    }
    {
      const Scalar* x = x_tv_.data();
      Scalar* u = u_tv_.data();
      double acc = 0.0;
      for (Eigen::Index i = 0; i < total; ++i) {
        const Scalar r = x[i] - y[i];
        acc += static_cast<double>(r) * r;
        u[i] += r;
      }
      primal_sq += acc;
    }
    b_ = py_ - z_;
    primal_sq += b_.squaredNorm();
    uz_ += b_;

    return {std::sqrt(primal_sq), static_cast<double>(rho_) * std::sqrt(dual_sq)};
  }

  // Y <- Y * P'^T (V' / P'Y) / (P'^T 1 + lambda1'), from a flat start whose
  // reconstruction has the mean of V'.
  void multiplicative_start() {
    const Eigen::Index rows = pattern_.cols();
    const Eigen::Index n = data_.cols();
    const Mat<Scalar> col_sums = pattern_.colwise().sum().transpose();
    const Scalar row_mean = pattern_.rowwise().sum().mean();
    y_ = M::Constant(rows, n, row_mean > 0 ? Scalar(1) / row_mean : Scalar(0));
    M ratio(data_.rows(), n), num(rows, n);
    const Scalar tiny = std::numeric_limits<Scalar>::min();
    for (int it = 0; it < cfg_.init_iters; ++it) {
      ratio.noalias() = pattern_ * y_;
      ratio = data_.array() / ratio.array().max(tiny);
      num.noalias() = pattern_.transpose() * ratio;
      for (Eigen::Index c = 0; c < n; ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) y_(r, c) *= num(r, c) / (col_sums(r) + l1_ + tiny);
      }
    }
  }

  // Residual balancing; the linear system does not depend on rho.
  void adapt_rho(double primal, double dual) {
    Scalar f = 1;
    if (primal > cfg_.rho_balance * dual) {
      f = static_cast<Scalar>(cfg_.rho_factor);
    } else if (dual > cfg_.rho_balance * primal) {
      f = static_cast<Scalar>(1.0 / cfg_.rho_factor);
    } else {
      return;
    }
    rho_ *= f;
    const Scalar g = Scalar(1) / f;
    uz_ *= g;
    for (auto& copy : copies_) copy.u *= g;
    u_tv_ *= g;
    if (use_tv()) u_w_ *= g;
  }

  double rho() const { return static_cast<double>(rho_); }

  Eigen::MatrixXd consensus() const { return y_.template cast<double>(); }

 private:
  bool use_tv() const { return frames_ >= 2 && data_.cols() >= 2; }

  // Sum of the penalty multipliers of the copies plus the TV copy.
  Scalar total_weight() const {
    Scalar c = 1;
    for (const auto& copy : copies_) c += copy.weight;
    return c;
  }

  void factor() {
    const Scalar c = total_weight();
    M system = gram_;
    system.diagonal().array() += c;
    llt_.compute(system);
    if (llt_.info() != Eigen::Success) fail(ErrorCode::kNumerical, "Cholesky factorization failed");
  }

  // x_tv = (y - u_tv) + D^T g, with D^T g at (l, n) = g(l-1, n-1) - g(l, n).
  void tv_rhs(const M& g) {
    const Eigen::Index n = y_.cols();
    const Eigen::Index rows = y_.rows();
    const Eigen::Index grows = g.rows();
    x_tv_.resize(rows, n);
    for (Eigen::Index c = 0; c < n; ++c) {
      Scalar* out = x_tv_.data() + c * rows;
      const Scalar* y = y_.data() + c * rows;
      const Scalar* u = u_tv_.data() + c * rows;
      for (Eigen::Index r = 0; r < rows; ++r) out[r] = y[r] - u[r];
      for (int k = 0; k < keys_; ++k) {
        const Eigen::Index base = static_cast<Eigen::Index>(k) * frames_;
        const Eigen::Index gbase = static_cast<Eigen::Index>(k) * (frames_ - 1);
        if (c >= 1) {
          const Scalar* gp = g.data() + (c - 1) * grows + gbase;
          for (int l = 1; l < frames_; ++l) out[base + l] += gp[l - 1];
        }
        if (c < n - 1) {
          const Scalar* gc = g.data() + c * grows + gbase;
          for (int l = 0; l < frames_ - 1; ++l) out[base + l] -= gc[l];
        }
      }
    }
  }

  // W = soft(D X_tv + U_w, lambda2'/rho); U_w += D X_tv - W. Stores delta W in
  // g_ and returns the squared primal residual of the W constraint.
  double update_w() {
    const Eigen::Index gn = w_.cols();
    const Eigen::Index grows = w_.rows();
    const Eigen::Index rows = x_tv_.rows();
    const Scalar tau = tv_ / rho_;
    double acc = 0.0;
    for (Eigen::Index c = 0; c < gn; ++c) {
      const Scalar* x0 = x_tv_.data() + c * rows;
      const Scalar* x1 = x_tv_.data() + (c + 1) * rows;
      Scalar* w = w_.data() + c * grows;
      Scalar* u = u_w_.data() + c * grows;
      Scalar* dw = g_.data() + c * grows;
      for (int k = 0; k < keys_; ++k) {
        const Eigen::Index base = static_cast<Eigen::Index>(k) * frames_;
        const Eigen::Index gbase = static_cast<Eigen::Index>(k) * (frames_ - 1);
        for (int l = 0; l < frames_ - 1; ++l) {
          const Eigen::Index i = gbase + l;
          const Scalar d = x1[base + l + 1] - x0[base + l];
          const Scalar w_new = soft_threshold_scalar(d + u[i], tau);
          dw[i] = w_new - w[i];
          w[i] = w_new;
          const Scalar r = d - w_new;
          acc += static_cast<double>(r) * r;
          u[i] += r;
        }
      }
    }
    return acc;
  }

  // ||delta Y + D^T delta W||^2 with delta W held in g_.
  double tv_dual_sq() const {
    const Eigen::Index n = y_.cols();
    const Eigen::Index rows = y_.rows();
    const Eigen::Index grows = g_.rows();
    double acc = 0.0;
    for (Eigen::Index c = 0; c < n; ++c) {
      const Scalar* y = y_.data() + c * rows;
      const Scalar* yp = y_prev_.data() + c * rows;
      for (int k = 0; k < keys_; ++k) {
        const Eigen::Index base = static_cast<Eigen::Index>(k) * frames_;
        const Eigen::Index gbase = static_cast<Eigen::Index>(k) * (frames_ - 1);
        const Scalar* gp = c >= 1 ? g_.data() + (c - 1) * grows + gbase : nullptr;
        const Scalar* gc = c < n - 1 ? g_.data() + c * grows + gbase : nullptr;
        for (int l = 0; l < frames_; ++l) {
          Scalar d = y[base + l] - yp[base + l];
          if (gp != nullptr && l >= 1) d += gp[l - 1];
          if (gc != nullptr && l < frames_ - 1) d -= gc[l];
          acc += static_cast<double>(d) * d;
        }
      }
    }
    return acc;
  }

  const SolverConfig& cfg_;
  MarkovConfig markov_;
  int keys_;
  int frames_;
  std::vector<int> effective_;
  Scalar rho_;
  Scalar l1_;
  Scalar tv_;
  std::vector<Scalar> thresholds_;

  M pattern_, gram_, data_;
  Eigen::LLT<M> llt_;
  M y_, y_prev_, py_, py_prev_, z_, uz_;
  std::vector<Copy<Scalar>> copies_;
  M x_tv_, u_tv_, w_, u_w_, g_;
  M b_, s_, q_, t_;
};

template <typename Scalar>
void run_stages(const Eigen::MatrixXd& v, const dict::PatternTensor& p, const SolverConfig& cfg,
                const MarkovConfig& markov, std::span<const double> thresholds, SolveResult& result) {
  const double internal_norm = result.operator_norm / cfg.data_gain;
  ConsensusAdmm<Scalar> admm(v, p, cfg, markov, thresholds, result.data_scale, internal_norm);
  admm.initialize();
  int iteration = 0;
  const bool markov_stage = cfg.stage_iters[1] > 0;
  const bool threshold_stage = cfg.stage_iters[2] > 0 && !thresholds.empty();
  const int ramp_steps =
      cfg.markov_weight_start > 0.0 ? cfg.stage_iters[1] / (2 * cfg.rho_interval) : 0;
  for (int stage = 1; stage <= 3; ++stage) {
    if (stage == 2) {
      if (!markov_stage) continue;
      admm.add_copy(CopyKind::kMarkov);
    }
    if (stage == 3) {
      if (!threshold_stage) continue;
      admm.add_copy(CopyKind::kThreshold);
    }
    const int iters = cfg.stage_iters[static_cast<std::size_t>(stage - 1)];
    for (int i = 0; i < iters; ++i) {
      const auto [primal, dual] = admm.iterate();
      ++iteration;
      result.residuals.push_back({iteration, stage, primal, dual});
      if (cfg.adaptive_rho && iteration % cfg.rho_interval == 0) admm.adapt_rho(primal, dual);
      if (stage == 2 && ramp_steps > 0 && (i + 1) % cfg.rho_interval == 0 &&
          (i + 1) / cfg.rho_interval <= ramp_steps) {
        const double f = static_cast<double>((i + 1) / cfg.rho_interval) / ramp_steps;
        admm.set_weight(CopyKind::kMarkov,
                        cfg.markov_weight_start * std::pow(cfg.markov_weight / cfg.markov_weight_start, f));
      }
      if (!std::isfinite(primal) || !std::isfinite(dual)) {
        fail(ErrorCode::kNumerical, "ADMM residuals became non-finite at iteration " +
                                        std::to_string(iteration));
      }
      if (stage == 1) {
        result.stage1_iterations = i + 1;
        if (primal <= cfg.tol_primal && dual <= cfg.tol_dual) {
          result.stage1_converged = true;
          break;
        }
      }
    }
    if (stage == 1 && !result.stage1_converged) {
      const auto& last = result.residuals.empty() ? ResidualRecord{} : result.residuals.back();
      char buf[160];
      std::snprintf(buf, sizeof buf,
                    "stage 1 not converged after %d iterations (primal %.3e, dual %.3e)",
                    result.stage1_iterations, last.primal, last.dual);
      result.diagnostics.emplace_back(buf);
    }
  }

  ActivityTensor& a = result.activity;
  a.values = admm.consensus() * (result.data_scale / internal_norm);
  a.values = a.values.cwiseMax(0.0);
  if (markov_stage) {
    for (int k = 0; k < a.keys; ++k) {
      auto block = a.slice(k);
      project_markov(block, p.effective_lengths[static_cast<std::size_t>(k)], markov);
    }
  }
  if (threshold_stage) a = project_hard_threshold(a, thresholds);
}

}  // namespace

SolveResult solve_activity(const Eigen::MatrixXd& v, const dict::PatternTensor& p,
                           const SolverConfig& cfg, const MarkovConfig& markov,
                           std::span<const double> thresholds) {
  cfg.validate();
  require(v.rows() == p.bins(), ErrorCode::kShapeMismatch,
          "spectrogram has " + std::to_string(v.rows()) + " bins, dictionary has " +
              std::to_string(p.bins()));
  require(v.cols() >= 1, ErrorCode::kShapeMismatch, "spectrogram has no frames");
  require((v.array() >= 0.0).all() && v.allFinite(), ErrorCode::kInvalidArgument,
          "spectrogram must be finite and non-negative");
  require(thresholds.empty() || static_cast<int>(thresholds.size()) == p.keys(),
          ErrorCode::kShapeMismatch, "one threshold per key required");
  for (double t : thresholds) {
    require(t > 0.0 && std::isfinite(t), ErrorCode::kInvalidArgument, "thresholds must be positive");
  }
  if (cfg.stage_iters[1] > 0) {
    for (int lk : p.effective_lengths) {
      require(markov.min_run_frames >= 1 && markov.min_run_frames <= lk, ErrorCode::kInvalidArgument,
              "min_run_frames must lie in [1, L_k] for every key");
    }
  }

  SolveResult result;
  result.activity = ActivityTensor(p.keys(), p.frames, static_cast<int>(v.cols()));
  result.data_scale = v.mean();
  result.operator_norm = estimate_operator_norm(p);
  if (result.data_scale <= 0.0 || result.operator_norm <= 0.0) {
    result.stage1_converged = true;
    return result;
  }
  if (cfg.precision == Precision::kFloat32) {
    run_stages<float>(v, p, cfg, markov, thresholds, result);
  } else {
    run_stages<double>(v, p, cfg, markov, thresholds, result);
  }
  return result;
}

void write_residuals_csv(const std::string& path, const std::vector<ResidualRecord>& log) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (f == nullptr) fail(ErrorCode::kIo, "cannot write " + path);
  std::fprintf(f, "iteration,stage,primal,dual\n");
  for (const auto& r : log) std::fprintf(f, "%d,%d,%.9e,%.9e\n", r.iteration, r.stage, r.primal, r.dual);
  std::fclose(f);
}

}  // namespace amt::fact
