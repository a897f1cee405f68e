#include "amt/decoder.hpp"

#include "amt/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace amt::dec {

std::string mode_name(Mode mode) { return mode == Mode::kBi ? "blstm" : "lstm"; }

Mode parse_mode(const std::string& name) {
  if (name == "lstm" || name == "uni") return Mode::kUni;
  if (name == "blstm" || name == "bi") return Mode::kBi;
  fail(ErrorCode::kInvalidArgument, "unknown decoder mode '" + name + "'");
}

namespace {

template <typename S>
S sigmoid(S x) {
  return S(1) / (S(1) + std::exp(-x));
}

// softplus(z) - t z, the cross-entropy of sigmoid(z) against target t.
template <typename S>
double cross_entropy_logit(S z, S t) {
  const double zd = static_cast<double>(z);
  const double sp = zd > 0 ? zd + std::log1p(std::exp(-zd)) : std::log1p(std::exp(zd));
  return sp - static_cast<double>(t) * zd;
}

template <typename S>
struct Pass {
  std::vector<Matrix<S>> layer_in;  // per layer, after dropout
  std::vector<Matrix<S>> in_mask;   // per layer, empty without dropout
  std::vector<Matrix<S>> gates;     // per cell, 4H x T (activated)
  std::vector<Matrix<S>> cell;      // per cell, H x T
  std::vector<Matrix<S>> hid;       // per cell, H x T
  std::vector<Vector<S>> h0, c0;    // per cell, initial state
  Matrix<S> dense_in;
  Matrix<S> dense_mask;
  Matrix<S> logits;
};

template <typename S>
Matrix<S> draw_mask(Eigen::Index rows, Eigen::Index cols, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution keep(1.0 - p);
  const S scale = static_cast<S>(1.0 / (1.0 - p));
  Matrix<S> m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = keep(rng) ? scale : S(0);
  }
  return m;
}

// Forward over one chunk. `h_state`/`c_state` hold the initial state per cell
// and receive the final state of forward-direction cells.
template <typename S>
void forward_chunk(const LstmParams<S>& p, const Matrix<S>& x, double dropout, std::mt19937_64* rng,
                   std::vector<Vector<S>>& h_state, std::vector<Vector<S>>& c_state,
                   Pass<S>& pass) {
  const int dirs = p.directions();
  const int h = p.hidden;
  const Eigen::Index steps = x.cols();
  const bool drop = dropout > 0.0 && rng != nullptr;
  const std::size_t cells = p.cells.size();
  pass.layer_in.assign(static_cast<std::size_t>(p.layers), {});
  pass.in_mask.assign(static_cast<std::size_t>(p.layers), {});
  pass.gates.assign(cells, {});
  pass.cell.assign(cells, {});
  pass.hid.assign(cells, {});
  pass.h0.assign(cells, {});
  pass.c0.assign(cells, {});

  Matrix<S> current = x;
  for (int l = 0; l < p.layers; ++l) {
    const std::size_t li = static_cast<std::size_t>(l);
    if (drop) {
      pass.in_mask[li] = draw_mask<S>(current.rows(), steps, dropout, *rng);
      current = current.cwiseProduct(pass.in_mask[li]);
    }
    pass.layer_in[li] = current;
    Matrix<S> out(static_cast<Eigen::Index>(h) * dirs, steps);
    for (int d = 0; d < dirs; ++d) {
      const std::size_t ci = static_cast<std::size_t>(l * dirs + d);
      const LstmCell<S>& cell = p.cells[ci];
      Matrix<S> pre = cell.w * current;
      pre.colwise() += cell.b;
      Matrix<S>& gates = pass.gates[ci];
      gates.resize(4 * h, steps);
      pass.cell[ci].resize(h, steps);
      pass.hid[ci].resize(h, steps);
      pass.h0[ci] = h_state[ci];
      pass.c0[ci] = c_state[ci];
      Vector<S> hv = h_state[ci];
      Vector<S> cv = c_state[ci];
      Vector<S> z(4 * h);
      for (Eigen::Index s = 0; s < steps; ++s) {
        const Eigen::Index t = d == 0 ? s : steps - 1 - s;
        z.noalias() = pre.col(t) + cell.u * hv;
        for (int j = 0; j < 3 * h; ++j) z(j) = sigmoid(z(j));
        for (int j = 3 * h; j < 4 * h; ++j) z(j) = std::tanh(z(j));
        cv = z.segment(h, h).cwiseProduct(cv) + z.head(h).cwiseProduct(z.tail(h));
        hv = z.segment(2 * h, h).cwiseProduct(cv.array().tanh().matrix());
        gates.col(t) = z;
        pass.cell[ci].col(t) = cv;
        pass.hid[ci].col(t) = hv;
      }
      if (d == 0) {
        h_state[ci] = hv;
        c_state[ci] = cv;
      }
      out.middleRows(static_cast<Eigen::Index>(d) * h, h) = pass.hid[ci];
    }
    current = std::move(out);
  }
  if (drop) {
    pass.dense_mask = draw_mask<S>(current.rows(), steps, dropout, *rng);
    current = current.cwiseProduct(pass.dense_mask);
  }
  pass.dense_in = std::move(current);
  pass.logits = p.dense_w * pass.dense_in;
  pass.logits.colwise() += p.dense_b;
}

// Backward over one chunk given dLoss/dlogits; accumulates into `g`.
template <typename S>
void backward_chunk(const LstmParams<S>& p, const Pass<S>& pass, const Matrix<S>& dlogits,
                    LstmParams<S>& g) {
  const int dirs = p.directions();
  const int h = p.hidden;
  const Eigen::Index steps = dlogits.cols();
  g.dense_w.noalias() += dlogits * pass.dense_in.transpose();
  g.dense_b += dlogits.rowwise().sum();
  Matrix<S> dout = p.dense_w.transpose() * dlogits;
  if (pass.dense_mask.size() > 0) dout = dout.cwiseProduct(pass.dense_mask);

  for (int l = p.layers - 1; l >= 0; --l) {
    const std::size_t li = static_cast<std::size_t>(l);
    const Matrix<S>& xin = pass.layer_in[li];
    Matrix<S> dx = Matrix<S>::Zero(xin.rows(), steps);
    for (int d = 0; d < dirs; ++d) {
      const std::size_t ci = static_cast<std::size_t>(l * dirs + d);
      const LstmCell<S>& cell = p.cells[ci];
      LstmCell<S>& gc = g.cells[ci];
      const Matrix<S>& gates = pass.gates[ci];
      const Matrix<S>& cm = pass.cell[ci];
      const Matrix<S>& hm = pass.hid[ci];
      Matrix<S> dz(4 * h, steps);
      Matrix<S> hprev(h, steps);
      Vector<S> dh_next = Vector<S>::Zero(h);
      Vector<S> dc_next = Vector<S>::Zero(h);
      for (Eigen::Index s = steps - 1; s >= 0; --s) {
        const Eigen::Index t = d == 0 ? s : steps - 1 - s;
        const bool first = s == 0;
        const Eigen::Index tp = d == 0 ? t - 1 : t + 1;
        const auto c_prev = first ? pass.c0[ci] : Vector<S>(cm.col(tp));
        hprev.col(t) = first ? pass.h0[ci] : Vector<S>(hm.col(tp));
        const auto gi = gates.col(t).head(h).array();
        const auto gf = gates.col(t).segment(h, h).array();
        const auto go = gates.col(t).segment(2 * h, h).array();
        const auto gg = gates.col(t).tail(h).array();
        const Eigen::Array<S, Eigen::Dynamic, 1> tc = cm.col(t).array().tanh();
        const Eigen::Array<S, Eigen::Dynamic, 1> dh =
            dout.col(t).segment(static_cast<Eigen::Index>(d) * h, h).array() + dh_next.array();
        const Eigen::Array<S, Eigen::Dynamic, 1> dc =
            dh * go * (S(1) - tc * tc) + dc_next.array();
        dz.col(t).head(h) = (dc * gg * gi * (S(1) - gi)).matrix();
        dz.col(t).segment(h, h) = (dc * c_prev.array() * gf * (S(1) - gf)).matrix();
        dz.col(t).segment(2 * h, h) = (dh * tc * go * (S(1) - go)).matrix();
        dz.col(t).tail(h) = (dc * gi * (S(1) - gg * gg)).matrix();
        dc_next = (dc * gf).matrix();
        dh_next.noalias() = cell.u.transpose() * dz.col(t);
      }
      gc.w.noalias() += dz * xin.transpose();
      gc.u.noalias() += dz * hprev.transpose();
      gc.b += dz.rowwise().sum();
      dx.noalias() += cell.w.transpose() * dz;
    }
    if (pass.in_mask[li].size() > 0) dx = dx.cwiseProduct(pass.in_mask[li]);
    dout = std::move(dx);
  }
}

template <typename S>
void initial_state(const LstmParams<S>& p, std::vector<Vector<S>>& h, std::vector<Vector<S>>& c) {
  h.assign(p.cells.size(), Vector<S>::Zero(p.hidden));
  c.assign(p.cells.size(), Vector<S>::Zero(p.hidden));
}

template <typename S>
void check_features(const LstmParams<S>& p, const Matrix<S>& features) {
  require(features.rows() == p.input, ErrorCode::kShapeMismatch,
          "decoder expects " + std::to_string(p.input) + " feature rows, got " +
              std::to_string(features.rows()));
}

template <typename S>
S smooth_target(S t, double eps) {
  return static_cast<S>(static_cast<double>(t) * (1.0 - 2.0 * eps) + eps);
}

// Shared chunk loop for loss evaluation and gradients.
template <typename S>
double run_loss(const LstmParams<S>& p, const Matrix<S>& features, const Matrix<S>& targets,
                const TrainConfig& cfg, double dropout, std::uint64_t seed, LstmParams<S>* grad) {
  check_features(p, features);
  require(targets.rows() == p.output && targets.cols() == features.cols(),
          ErrorCode::kShapeMismatch, "targets must be output x N");
  const Eigen::Index n = features.cols();
  if (grad != nullptr) *grad = LstmParams<S>::zeros(p.mode, p.input, p.hidden, p.output, p.layers,
                                                  p.delay_frames);
  std::mt19937_64 rng(seed);
  std::vector<Vector<S>> hs, cs;
  initial_state(p, hs, cs);
  const double count = static_cast<double>(n) * p.output;
  double loss = 0.0;
  Pass<S> pass;
  for (Eigen::Index start = 0; start < n; start += cfg.chunk_frames) {
    const Eigen::Index len = std::min<Eigen::Index>(cfg.chunk_frames, n - start);
    if (p.mode == Mode::kBi) initial_state(p, hs, cs);
    forward_chunk(p, Matrix<S>(features.middleCols(start, len)), dropout,
                  dropout > 0.0 ? &rng : nullptr, hs, cs, pass);
    Matrix<S> dlogits(p.output, len);
    for (Eigen::Index c = 0; c < len; ++c) {
      for (Eigen::Index r = 0; r < p.output; ++r) {
        const S z = pass.logits(r, c);
        const S t = smooth_target(targets(r, start + c), cfg.label_smoothing);
        loss += cross_entropy_logit(z, t);
        dlogits(r, c) = static_cast<S>((static_cast<double>(sigmoid(z)) - t) / count);
      }
    }
    if (grad != nullptr) backward_chunk(p, pass, dlogits, *grad);
  }
  return loss / count;
}

template <typename S>
std::vector<std::pair<S*, Eigen::Index>> tensors(LstmParams<S>& p) {
  std::vector<std::pair<S*, Eigen::Index>> out;
  p.for_each([&](const std::string&, S* data, Eigen::Index size) { out.emplace_back(data, size); });
  return out;
}

}  // namespace

template <typename S>
LstmParams<S> LstmParams<S>::zeros(Mode mode, int input, int hidden, int output, int layers,
                                   int delay_frames) {
  require(input >= 1 && hidden >= 1 && output >= 1 && layers >= 1, ErrorCode::kInvalidArgument,
          "decoder dimensions must be positive");
  LstmParams p;
  p.mode = mode;
  p.input = input;
  p.hidden = hidden;
  p.output = output;
  p.layers = layers;
  p.delay_frames = mode == Mode::kUni ? delay_frames : 0;
  for (int l = 0; l < layers; ++l) {
    for (int d = 0; d < p.directions(); ++d) {
      p.cells.push_back({Matrix<S>::Zero(4 * hidden, p.layer_input(l)),
                         Matrix<S>::Zero(4 * hidden, hidden), Vector<S>::Zero(4 * hidden)});
    }
  }
  p.dense_w = Matrix<S>::Zero(output, hidden * p.directions());
  p.dense_b = Vector<S>::Zero(output);
  return p;
}

template <typename S>
LstmParams<S> LstmParams<S>::glorot(Mode mode, int input, int hidden, int output, int layers,
                                    int delay_frames, std::uint64_t seed) {
  LstmParams p = zeros(mode, input, hidden, output, layers, delay_frames);
  std::mt19937_64 rng(seed);
  auto fill = [&](Matrix<S>& m) {
    const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = static_cast<S>(dist(rng));
    }
  };
  for (auto& cell : p.cells) {
    fill(cell.w);
    fill(cell.u);
    cell.b.segment(hidden, hidden).setOnes();
  }
  fill(p.dense_w);
  return p;
}

template <typename S>
void LstmParams<S>::validate() const {
  require(input >= 1 && hidden >= 1 && output >= 1 && layers >= 1, ErrorCode::kInvalidArgument,
          "decoder dimensions must be positive");
  require(delay_frames >= 0, ErrorCode::kInvalidArgument, "delay_frames must be >= 0");
  require(static_cast<int>(cells.size()) == layers * directions(), ErrorCode::kShapeMismatch,
          "wrong number of LSTM cells");
  for (int l = 0; l < layers; ++l) {
    for (int d = 0; d < directions(); ++d) {
      const auto& c = cells[static_cast<std::size_t>(l * directions() + d)];
      require(c.w.rows() == 4 * hidden && c.w.cols() == layer_input(l) &&
                  c.u.rows() == 4 * hidden && c.u.cols() == hidden && c.b.size() == 4 * hidden,
              ErrorCode::kShapeMismatch, "LSTM cell has inconsistent shapes");
      require(c.w.allFinite() && c.u.allFinite() && c.b.allFinite(), ErrorCode::kNumerical,
              "LSTM parameters must be finite");
    }
  }
  require(dense_w.rows() == output && dense_w.cols() == hidden * directions() &&
              dense_b.size() == output,
          ErrorCode::kShapeMismatch, "dense layer has inconsistent shapes");
  require(dense_w.allFinite() && dense_b.allFinite(), ErrorCode::kNumerical,
          "dense parameters must be finite");
}

template <typename S>
void LstmParams<S>::for_each(
    const std::function<void(const std::string&, S*, Eigen::Index)>& fn) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const std::string prefix = "layer" + std::to_string(static_cast<int>(i) / directions()) +
                               (directions() == 2 ? (i % 2 == 0 ? ".fwd" : ".bwd") : "");
    fn(prefix + ".w", cells[i].w.data(), cells[i].w.size());
    fn(prefix + ".u", cells[i].u.data(), cells[i].u.size());
    fn(prefix + ".b", cells[i].b.data(), cells[i].b.size());
  }
  fn("dense.w", dense_w.data(), dense_w.size());
  fn("dense.b", dense_b.data(), dense_b.size());
}

template <typename S>
Eigen::Index LstmParams<S>::parameter_count() const {
  Eigen::Index n = dense_w.size() + dense_b.size();
  for (const auto& c : cells) n += c.w.size() + c.u.size() + c.b.size();
  return n;
}

void TrainConfig::validate() const {
  require(dropout >= 0.0 && dropout < 1.0, ErrorCode::kInvalidArgument,
          "dropout must lie in [0, 1)");
  require(label_smoothing >= 0.0 && label_smoothing < 0.5, ErrorCode::kInvalidArgument,
          "label smoothing must lie in [0, 0.5)");
  require(adam_step > 0.0, ErrorCode::kInvalidArgument, "adam_step must be positive");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0,
          ErrorCode::kInvalidArgument, "Adam betas must lie in [0, 1)");
  require(adam_eps > 0.0, ErrorCode::kInvalidArgument, "adam_eps must be positive");
  require(chunk_frames >= 1 && epochs >= 0 && batch_size >= 1, ErrorCode::kInvalidArgument,
          "chunk_frames and batch_size must be >= 1, epochs >= 0");
  require(target_width >= 1 && target_width % 2 == 1, ErrorCode::kInvalidArgument,
          "target width must be a positive odd number");
}

Eigen::MatrixXd normalize_activations(const fact::ActivityTensor& a,
                                      const loud::ThresholdProfile& profile) {
  require(static_cast<int>(profile.thresholds.size()) == a.keys, ErrorCode::kShapeMismatch,
          "profile has " + std::to_string(profile.thresholds.size()) + " thresholds for " +
              std::to_string(a.keys) + " keys");
  const int n = a.time_frames();
  Eigen::MatrixXd feat(a.keys, n);
  for (int k = 0; k < a.keys; ++k) {
    const double t = profile.thresholds[static_cast<std::size_t>(k)];
    require(t > 0.0, ErrorCode::kInvalidArgument, "thresholds must be positive");
    for (int c = 0; c < n; ++c) feat(k, c) = a.at(k, 0, c) / t;
  }
  if (feat.size() > 0) {
    const double mean = feat.mean();
    const double var = (feat.array() - mean).square().mean();
    if (var > 0.0) feat /= std::sqrt(var);
  }
  return feat;
}

template <typename S>
Matrix<S> lstm_forward(const LstmParams<S>& params, const Matrix<S>& features, bool training,
                       double dropout, std::uint64_t dropout_seed, int chunk_frames) {
  params.validate();
  check_features(params, features);
  require(chunk_frames >= 1, ErrorCode::kInvalidArgument, "chunk_frames must be >= 1");
  const Eigen::Index n = features.cols();
  Matrix<S> out(params.output, n);
  std::mt19937_64 rng(dropout_seed);
  const bool drop = training && dropout > 0.0;
  std::vector<Vector<S>> hs, cs;
  initial_state(params, hs, cs);
  Pass<S> pass;
  for (Eigen::Index start = 0; start < n; start += chunk_frames) {
    const Eigen::Index len = std::min<Eigen::Index>(chunk_frames, n - start);
    if (params.mode == Mode::kBi) initial_state(params, hs, cs);
    forward_chunk(params, Matrix<S>(features.middleCols(start, len)), drop ? dropout : 0.0,
                  drop ? &rng : nullptr, hs, cs, pass);
    out.middleCols(start, len) = pass.logits.unaryExpr([](S z) { return sigmoid(z); });
  }
  return out;
}

Eigen::MatrixXd onset_targets(const std::vector<eval::NoteEvent>& events, int frames,
                              double frame_rate, int delay_frames, int width, int lowest_midi,
                              int keys) {
  require(frames >= 0 && frame_rate > 0.0 && width >= 1, ErrorCode::kInvalidArgument,
          "invalid target geometry");
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(keys, frames);
  const int half = width / 2;
  for (const auto& e : events) {
    const int k = e.midi_pitch - lowest_midi;
    if (k < 0 || k >= keys) continue;
    const int centre = static_cast<int>(std::lround(e.onset * frame_rate)) + delay_frames;
    for (int d = -half; d <= half; ++d) {
      const int n = centre + d;
      if (n >= 0 && n < frames) t(k, n) = 1.0;
    }
  }
  return t;
}

template <typename S>
double loss_and_gradient(const LstmParams<S>& params, const Matrix<S>& features,
                         const Matrix<S>& targets, const TrainConfig& cfg,
                         std::uint64_t dropout_seed, LstmParams<S>* gradient) {
  const double loss = run_loss(params, features, targets, cfg, cfg.dropout, dropout_seed, gradient);
  if (!std::isfinite(loss)) fail(ErrorCode::kNumerical, "decoder loss became non-finite");
  return loss;
}

template <typename S>
double evaluate_loss(const LstmParams<S>& params, const Matrix<S>& features,
                     const Matrix<S>& targets, const TrainConfig& cfg) {
  return run_loss(params, features, targets, cfg, 0.0, 0, static_cast<LstmParams<S>*>(nullptr));
}

template <typename S>
AdamState<S>::AdamState(const LstmParams<S>& shape)
    : m_(static_cast<std::size_t>(shape.parameter_count()), 0.0),
      v_(static_cast<std::size_t>(shape.parameter_count()), 0.0) {}

template <typename S>
void AdamState<S>::step(LstmParams<S>& params, LstmParams<S>& gradient, const TrainConfig& cfg) {
  const auto p = tensors(params);
  const auto g = tensors(gradient);
  require(p.size() == g.size(), ErrorCode::kShapeMismatch, "gradient layout mismatch");
  ++t_;
  const double b1 = cfg.adam_beta1;
  const double b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  std::size_t offset = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    require(p[i].second == g[i].second, ErrorCode::kShapeMismatch, "gradient layout mismatch");
    for (Eigen::Index j = 0; j < p[i].second; ++j, ++offset) {
      const double gj = static_cast<double>(g[i].first[j]);
      m_[offset] = b1 * m_[offset] + (1.0 - b1) * gj;
      v_[offset] = b2 * v_[offset] + (1.0 - b2) * gj * gj;
      const double update =
          cfg.adam_step * (m_[offset] / c1) / (std::sqrt(v_[offset] / c2) + cfg.adam_eps);
      p[i].first[j] = static_cast<S>(static_cast<double>(p[i].first[j]) - update);
    }
  }
}

template <typename S>
std::vector<double> train(LstmParams<S>& params, const std::vector<Sequence>& data,
                          const TrainConfig& cfg, const std::function<void(int, double)>& on_epoch) {
  cfg.validate();
  params.validate();
  require(!data.empty(), ErrorCode::kInvalidArgument, "no training sequences");
  std::vector<Matrix<S>> feats, targs;
  for (const auto& s : data) {
    feats.push_back(s.features.cast<S>());
    targs.push_back(s.targets.cast<S>());
  }
  AdamState<S> adam(params);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> curve;
  std::uint64_t mask_seed = cfg.seed * 7919 + 1;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const int count = static_cast<int>(end - start);
      std::vector<LstmParams<S>> grads(static_cast<std::size_t>(count));
      std::vector<std::string> errors(static_cast<std::size_t>(count));
#pragma omp parallel for schedule(dynamic)
      for (int b = 0; b < count; ++b) {
        const std::size_t idx = order[start + static_cast<std::size_t>(b)];
        try {
          loss_and_gradient(params, feats[idx], targs[idx], cfg, mask_seed + idx * 131 + start,
                            &grads[static_cast<std::size_t>(b)]);
        } catch (const std::exception& e) {
          errors[static_cast<std::size_t>(b)] = e.what();
        }
      }
      for (const auto& e : errors) {
        if (!e.empty()) fail(ErrorCode::kNumerical, "training epoch " + std::to_string(epoch + 1) + ": " + e);
      }
      LstmParams<S>& total = grads.front();
      const auto dst = tensors(total);
      for (int b = 1; b < count; ++b) {
        const auto src = tensors(grads[static_cast<std::size_t>(b)]);
        for (std::size_t i = 0; i < dst.size(); ++i) {
          for (Eigen::Index j = 0; j < dst[i].second; ++j) dst[i].first[j] += src[i].first[j];
        }
      }
      for (const auto& t : dst) {
        for (Eigen::Index j = 0; j < t.second; ++j) t.first[j] /= static_cast<S>(count);
      }
      adam.step(params, total, cfg);
    }
    mask_seed += 1000003;
    // Epoch loss is measured without dropout so successive values compare.
    double loss = 0.0;
    for (std::size_t i = 0; i < feats.size(); ++i) loss += evaluate_loss(params, feats[i], targs[i], cfg);
    loss /= static_cast<double>(feats.size());
    if (!std::isfinite(loss)) {
      fail(ErrorCode::kNumerical, "training loss became non-finite in epoch " + std::to_string(epoch + 1));
    }
    curve.push_back(loss);
    if (on_epoch) on_epoch(epoch + 1, loss);
  }
  return curve;
}

namespace {

// Peak picking on one row; returns (frame, value) pairs.
std::vector<std::pair<int, double>> pick_peaks(const Eigen::Ref<const Eigen::RowVectorXd>& row,
                                               double threshold, int radius, double min_gap_frames) {
  const int n = static_cast<int>(row.size());
  std::vector<std::pair<int, double>> kept;
  for (int t = 0; t < n; ++t) {
    const double v = row(t);
    if (!(v >= threshold) || v <= 0.0) continue;
    bool peak = true;
    for (int d = 1; d <= radius && peak; ++d) {
      if (t - d >= 0 && row(t - d) >= v) peak = false;  // first frame of a plateau wins
      if (t + d < n && row(t + d) > v) peak = false;
    }
    if (!peak) continue;
    if (!kept.empty() && t - kept.back().first < min_gap_frames) {
      if (v > kept.back().second) kept.back() = {t, v};
      continue;
    }
    kept.emplace_back(t, v);
  }
  return kept;
}

void sort_events(std::vector<eval::NoteEvent>& events) {
  std::stable_sort(events.begin(), events.end(), [](const auto& a, const auto& b) {
    return a.onset != b.onset ? a.onset < b.onset : a.midi_pitch < b.midi_pitch;
  });
}

}  // namespace

std::vector<eval::NoteEvent> decode_onsets(const Eigen::MatrixXd& posteriors, double frame_rate,
                                           const DecodeConfig& cfg) {
  require(frame_rate > 0.0, ErrorCode::kInvalidArgument, "frame rate must be positive");
  std::vector<eval::NoteEvent> events;
  const double gap = cfg.min_gap_s * frame_rate;
  for (Eigen::Index k = 0; k < posteriors.rows(); ++k) {
    for (const auto& [t, v] : pick_peaks(posteriors.row(k), cfg.threshold, cfg.peak_radius, gap)) {
      const int frame = t - cfg.delay_frames;
      if (frame < 0) continue;
      eval::NoteEvent e;
      e.midi_pitch = cfg.lowest_midi + static_cast<int>(k);
      e.onset = std::max(0.0, frame / frame_rate + cfg.time_offset_s);
      e.intensity = v;
      events.push_back(e);
    }
  }
  sort_events(events);
  return events;
}

std::vector<eval::NoteEvent> decode_activations(const fact::ActivityTensor& a,
                                                const std::vector<double>& thresholds,
                                                const std::vector<int>& midi_pitches,
                                                double frame_rate, const DecodeConfig& cfg) {
  require(static_cast<int>(thresholds.size()) == a.keys &&
              static_cast<int>(midi_pitches.size()) == a.keys,
          ErrorCode::kShapeMismatch, "one threshold and pitch per key required");
  require(frame_rate > 0.0, ErrorCode::kInvalidArgument, "frame rate must be positive");
  std::vector<eval::NoteEvent> events;
  const double gap = cfg.min_gap_s * frame_rate;
  Eigen::RowVectorXd row(a.time_frames());
  for (int k = 0; k < a.keys; ++k) {
    for (int n = 0; n < a.time_frames(); ++n) row(n) = a.at(k, 0, n);
    for (const auto& [t, v] :
         pick_peaks(row, thresholds[static_cast<std::size_t>(k)], cfg.peak_radius, gap)) {
      eval::NoteEvent e;
      e.midi_pitch = midi_pitches[static_cast<std::size_t>(k)];
      e.onset = std::max(0.0, t / frame_rate + cfg.time_offset_s);
      e.intensity = v;
      events.push_back(e);
    }
  }
  sort_events(events);
  return events;
}

#define AMT_DECODER_INSTANTIATE(S)                                                              \
  template struct LstmParams<S>;                                                                \
  template class AdamState<S>;                                                                  \
  template Matrix<S> lstm_forward<S>(const LstmParams<S>&, const Matrix<S>&, bool, double,      \
                                     std::uint64_t, int);                                       \
  template double loss_and_gradient<S>(const LstmParams<S>&, const Matrix<S>&,                  \
                                       const Matrix<S>&, const TrainConfig&, std::uint64_t,     \
                                       LstmParams<S>*);                                         \
  template double evaluate_loss<S>(const LstmParams<S>&, const Matrix<S>&, const Matrix<S>&,    \
                                   const TrainConfig&);                                         \
  template std::vector<double> train<S>(LstmParams<S>&, const std::vector<Sequence>&,           \
                                        const TrainConfig&, const std::function<void(int, double)>&);

AMT_DECODER_INSTANTIATE(float)
AMT_DECODER_INSTANTIATE(double)

}  // namespace amt::dec
