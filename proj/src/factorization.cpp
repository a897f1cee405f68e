#include "amt/factorization.hpp"

#include "amt/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace amt::fact {

namespace {

void check_model_shapes(const dict::PatternTensor& p, const ActivityTensor& a) {
  require(p.keys() == a.keys && p.frames == a.frames, ErrorCode::kShapeMismatch,
          "pattern tensor (L=" + std::to_string(p.frames) + ", K=" + std::to_string(p.keys()) +
              ") does not match activity tensor (L=" + std::to_string(a.frames) +
              ", K=" + std::to_string(a.keys) + ")");
  require(a.values.rows() == static_cast<Eigen::Index>(a.keys) * a.frames,
          ErrorCode::kShapeMismatch, "activity tensor storage has the wrong row count");
}

}  // namespace

Eigen::MatrixXd apply_model(const dict::PatternTensor& p, const ActivityTensor& a) {
  check_model_shapes(p, a);
  Eigen::MatrixXd out;
  out.noalias() = p.values * a.values;
  return out;
}

double kl_divergence(const Eigen::MatrixXd& v, const Eigen::MatrixXd& w) {
  require(v.rows() == w.rows() && v.cols() == w.cols(), ErrorCode::kShapeMismatch,
          "KL divergence operands differ in shape");
  require((v.array() >= 0.0).all() && (w.array() >= 0.0).all(), ErrorCode::kInvalidArgument,
          "KL divergence requires non-negative entries");
  double sum = 0.0;
  for (Eigen::Index c = 0; c < v.cols(); ++c) {
    for (Eigen::Index r = 0; r < v.rows(); ++r) sum += kl_term(v(r, c), w(r, c));
  }
  return sum;
}

Eigen::MatrixXd diagonal_difference(const ActivityTensor& a) {
  require(a.frames >= 2 && a.time_frames() >= 2, ErrorCode::kShapeMismatch,
          "diagonal difference needs L >= 2 and N >= 2");
  Eigen::MatrixXd out;
  diagonal_difference<double>(a.values, a.keys, a.frames, out);
  return out;
}

ActivityTensor diagonal_difference_adjoint(const Eigen::MatrixXd& b, int keys, int frames) {
  require(frames >= 2 && keys >= 1 && b.rows() == static_cast<Eigen::Index>(keys) * (frames - 1),
          ErrorCode::kShapeMismatch, "adjoint input must be (K*(L-1)) x (N-1)");
  ActivityTensor a;
  a.keys = keys;
  a.frames = frames;
  diagonal_difference_adjoint<double>(b, keys, frames, a.values);
  return a;
}

Eigen::MatrixXd prox_kl(const Eigen::MatrixXd& x, const Eigen::MatrixXd& v, double rho) {
  require(rho > 0.0, ErrorCode::kInvalidArgument, "rho must be positive");
  require(x.rows() == v.rows() && x.cols() == v.cols(), ErrorCode::kShapeMismatch,
          "prox_kl operands differ in shape");
  require((v.array() >= 0.0).all(), ErrorCode::kInvalidArgument, "prox_kl requires v >= 0");
  return x.binaryExpr(v, [rho](double xi, double vi) { return prox_kl_scalar(xi, vi, rho); });
}

Eigen::MatrixXd project_nonneg(const Eigen::MatrixXd& x) { return x.cwiseMax(0.0); }

Eigen::MatrixXd soft_threshold(const Eigen::MatrixXd& x, double tau) {
  require(tau >= 0.0, ErrorCode::kInvalidArgument, "soft threshold needs tau >= 0");
  return x.unaryExpr([tau](double xi) { return soft_threshold_scalar(xi, tau); });
}

double project_hard_threshold(double x, double a_min) {
  require(a_min > 0.0, ErrorCode::kInvalidArgument, "hard threshold must be positive");
  return hard_threshold_scalar(x, a_min);
}

ActivityTensor project_hard_threshold(const ActivityTensor& a, std::span<const double> a_min) {
  require(static_cast<int>(a_min.size()) == a.keys, ErrorCode::kShapeMismatch,
          "one threshold per key required");
  ActivityTensor out = a;
  for (int k = 0; k < a.keys; ++k) {
    const double t = a_min[static_cast<std::size_t>(k)];
    require(t > 0.0, ErrorCode::kInvalidArgument, "hard threshold must be positive");
    out.slice(k) = out.slice(k).unaryExpr([t](double x) { return hard_threshold_scalar(x, t); });
  }
  return out;
}

ActivityTensor project_markov(const ActivityTensor& a, std::span<const int> effective_lengths,
                              const MarkovConfig& cfg) {
  require(static_cast<int>(effective_lengths.size()) == a.keys, ErrorCode::kShapeMismatch,
          "one effective length per key required");
  ActivityTensor out = a;
  for (int k = 0; k < a.keys; ++k) {
    auto block = out.slice(k);
    project_markov(block, effective_lengths[static_cast<std::size_t>(k)], cfg);
  }
  return out;
}

Eigen::MatrixXd project_markov(const Eigen::MatrixXd& slice, int effective_length,
                               const MarkovConfig& cfg) {
  Eigen::MatrixXd out = slice;
  project_markov<Eigen::MatrixXd>(out, effective_length, cfg);
  return out;
}

bool markov_feasible(const Eigen::MatrixXd& slice, int effective_length, const MarkovConfig& cfg) {
  if ((slice.array() < 0.0).any()) return false;
  return project_markov(slice, effective_length, cfg) == slice;
}

double estimate_operator_norm(const Eigen::MatrixXd& unfolded) {
  require(unfolded.size() > 0, ErrorCode::kInvalidArgument, "operator norm of an empty matrix");
  const bool wide = unfolded.rows() <= unfolded.cols();
  const Eigen::MatrixXd gram = wide ? Eigen::MatrixXd(unfolded * unfolded.transpose())
                                    : Eigen::MatrixXd(unfolded.transpose() * unfolded);
  if (gram.cwiseAbs().maxCoeff() == 0.0) return 0.0;
  // Deterministic, generically non-orthogonal start vector.
  Eigen::VectorXd x(gram.rows());
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = 1.0 + 0.1 * std::sin(1.0 + static_cast<double>(i));
  x.normalize();
  double lambda = 0.0;
  for (int it = 0; it < 100000; ++it) {
    Eigen::VectorXd y = gram * x;
    const double next = x.dot(y);
    const double norm = y.norm();
    if (norm == 0.0) return 0.0;
    x = y / norm;
    if (it > 0 && std::abs(next - lambda) <= 1e-14 * std::abs(next)) {
      lambda = next;
      break;
    }
    lambda = next;
  }
  return std::sqrt(std::max(lambda, 0.0));
}

ObjectiveBreakdown objective_value(const Eigen::MatrixXd& v, const dict::PatternTensor& p,
                                   const ActivityTensor& a, const ObjectiveWeights& weights,
                                   const MarkovConfig& markov, Stage stage,
                                   std::span<const double> thresholds) {
  check_model_shapes(p, a);
  require(v.rows() == p.bins() && v.cols() == a.time_frames(), ErrorCode::kShapeMismatch,
          "spectrogram does not match the model output shape");
  constexpr double kInf = std::numeric_limits<double>::infinity();
  ObjectiveBreakdown out;
  if ((a.values.array() < 0.0).any()) {
    out.nonneg = kInf;
    out.violated.emplace_back("nonneg");
  }
  const Eigen::MatrixXd model = p.values * a.values;
  // Negative model values can only arise from an infeasible A.
  out.data = out.nonneg == kInf ? kInf : kl_divergence(v, model.cwiseMax(0.0));
  out.l1 = weights.lambda1 * a.values.cwiseAbs().sum();
  if (a.frames >= 2 && a.time_frames() >= 2) {
    out.tv = weights.lambda2 * diagonal_difference(a).cwiseAbs().sum();
  }
  if (stage != Stage::kConvex) {
    for (int k = 0; k < a.keys; ++k) {
      if (!markov_feasible(a.slice(k), p.effective_lengths[static_cast<std::size_t>(k)], markov)) {
        out.markov = kInf;
        out.violated.emplace_back("markov");
        break;
      }
    }
  }
  if (stage == Stage::kThreshold) {
    require(static_cast<int>(thresholds.size()) == a.keys, ErrorCode::kShapeMismatch,
            "threshold stage needs one threshold per key");
    for (int k = 0; k < a.keys && out.threshold == 0.0; ++k) {
      const double t = thresholds[static_cast<std::size_t>(k)];
      for (double x : a.slice(k).reshaped()) {
        if (x != 0.0 && x < t) {
          out.threshold = kInf;
          out.violated.emplace_back("threshold");
          break;
        }
      }
    }
  }
  out.total = out.data + out.nonneg + out.l1 + out.tv + out.markov + out.threshold;
  return out;
}

}  // namespace amt::fact
