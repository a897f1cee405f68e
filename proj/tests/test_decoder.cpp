#include "amt/decoder.hpp"
#include "amt/error.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace amt;
using namespace amt::dec;

namespace {

Matrix<double> random_features(int rows, int n, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> g;
  return Matrix<double>::NullaryExpr(rows, n, [&] { return g(rng); });
}

Matrix<double> random_targets(int rows, int n, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::bernoulli_distribution b(0.3);
  return Matrix<double>::NullaryExpr(rows, n, [&] { return b(rng) ? 1.0 : 0.0; });
}

// Largest relative deviation between the analytic gradient and central
// differences over every parameter; entries where both are below `floor` in
// magnitude count as agreeing.
double gradient_check(LstmParams<double> params, const Matrix<double>& x, const Matrix<double>& y,
                      const TrainConfig& cfg) {
  LstmParams<double> grad = params;
  loss_and_gradient(params, x, y, cfg, 0, &grad);
  std::vector<double> analytic;
  grad.for_each([&](const std::string&, double* d, Eigen::Index n) { analytic.insert(analytic.end(), d, d + n); });
  const double h = 1e-4;
  const double floor = 1e-8;
  double worst = 0.0;
  std::size_t idx = 0;
  params.for_each([&](const std::string&, double* d, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i, ++idx) {
      const double keep = d[i];
      d[i] = keep + h;
      const double up = evaluate_loss(params, x, y, cfg);
      d[i] = keep - h;
      const double down = evaluate_loss(params, x, y, cfg);
      d[i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[idx];
      const double scale = std::max(std::abs(a), std::abs(numeric));
      if (std::abs(a - numeric) / scale > 1e-4) std::printf("%.3e vs %.3e at %zu\n", a, numeric, idx);
      worst = std::max(worst, std::abs(a - numeric) / scale);
    }
  });
  return worst;
}

}  // namespace

TEST_CASE("feature normalization") {
  fact::ActivityTensor a(3, 2, 4);
  loud::ThresholdProfile prof;
  prof.base_threshold = 0.5;
  prof.midi_pitches = {59, 60, 61};
  prof.scalers = {1.0, 1.0, 1.0};
  prof.thresholds = {0.5, 1.0, 2.0};
  CHECK(normalize_activations(a, prof).isZero(0.0));
  for (int k = 0; k < 3; ++k)
    for (int n = 0; n < 4; ++n) a.at(k, 0, n) = prof.thresholds[static_cast<std::size_t>(k)];
  const Eigen::MatrixXd ones = normalize_activations(a, prof);
  CHECK(ones.isApprox(Eigen::MatrixXd::Ones(3, 4)));
  a.at(1, 0, 2) = 7.0;
  a.at(2, 1, 3) = 9.0;  // only the onset row is used
  const Eigen::MatrixXd f = normalize_activations(a, prof);
  const double mean = f.mean();
  const double sd = std::sqrt((f.array() - mean).square().mean());
  CHECK(sd == doctest::Approx(1.0));
  prof.thresholds.pop_back();
  CHECK_THROWS_AS(normalize_activations(a, prof), Error);
}

TEST_CASE("zero parameters give posteriors of one half") {
  const auto p = LstmParams<double>::zeros(Mode::kUni, 88, 10, 88, 2, 0);
  for (int n : {1, 5, 33}) {
    const auto out = lstm_forward(p, random_features(88, n, 1));
    CHECK(out.rows() == 88);
    CHECK(out.cols() == n);
    CHECK((out.array() == 0.5).all());
  }
  const auto pb = LstmParams<double>::zeros(Mode::kBi, 88, 10, 88, 2, 0);
  CHECK((lstm_forward(pb, random_features(88, 4, 2)).array() == 0.5).all());
}

TEST_CASE("forward pass checks shapes and finiteness") {
  auto p = LstmParams<double>::glorot(Mode::kUni, 6, 4, 5, 2, 0, 1);
  CHECK_THROWS_AS(lstm_forward(p, random_features(7, 3, 1)), Error);
  p.dense_b(0) = std::nan("");
  CHECK_THROWS_AS(lstm_forward(p, random_features(6, 3, 1)), Error);
}

TEST_CASE("uni mode is causal") {
  const auto p = LstmParams<double>::glorot(Mode::kUni, 6, 8, 5, 2, 0, 3);
  const auto x = random_features(6, 20, 4);
  const auto base = lstm_forward(p, x);
  for (int n = 0; n < 19; ++n) {
    auto y = x;
    y.col(n + 1).array() += 1.5;
    const auto out = lstm_forward(p, y);
    CHECK(out.leftCols(n + 1) == base.leftCols(n + 1));
    CHECK_FALSE(out.col(n + 1) == base.col(n + 1));
  }
}

TEST_CASE("uni mode carries state across chunks") {
  const auto p = LstmParams<double>::glorot(Mode::kUni, 6, 8, 5, 2, 0, 5);
  const auto x = random_features(6, 25, 6);
  const auto whole = lstm_forward(p, x, false, 0.0, 0, 1000);
  const auto chunked = lstm_forward(p, x, false, 0.0, 0, 7);
  CHECK((whole - chunked).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("inference is deterministic") {
  const auto p = LstmParams<float>::glorot(Mode::kBi, 88, 16, 88, 2, 0, 7);
  const Matrix<float> x = random_features(88, 30, 8).cast<float>();
  CHECK(lstm_forward(p, x) == lstm_forward(p, x));
}

TEST_CASE("analytic gradients match central differences") {
  TrainConfig cfg;
  cfg.dropout = 0.0;
  cfg.chunk_frames = 100;
  const auto x = random_features(6, 7, 9);
  const auto y = random_targets(5, 7, 10);
  SUBCASE("uni") {
    const auto p = LstmParams<double>::glorot(Mode::kUni, 6, 8, 5, 2, 0, 11);
    CHECK(gradient_check(p, x, y, cfg) < 1e-4);
  }
  SUBCASE("uni with delay") {
    const auto p = LstmParams<double>::glorot(Mode::kUni, 6, 8, 5, 2, 2, 12);
    CHECK(gradient_check(p, x, y, cfg) < 1e-4);
  }
  SUBCASE("bi") {
    const auto p = LstmParams<double>::glorot(Mode::kBi, 6, 8, 5, 2, 0, 13);
    CHECK(gradient_check(p, x, y, cfg) < 1e-4);
  }
}

TEST_CASE("zero gradient leaves parameters unchanged") {
  auto p = LstmParams<double>::glorot(Mode::kUni, 6, 4, 5, 2, 0, 14);
  const auto before = p;
  auto grad = LstmParams<double>::zeros(Mode::kUni, 6, 4, 5, 2, 0);
  AdamState<double> adam(p);
  adam.step(p, grad, TrainConfig{});
  CHECK(p.dense_w == before.dense_w);
  CHECK(p.dense_b == before.dense_b);
  for (std::size_t i = 0; i < p.cells.size(); ++i) {
    CHECK(p.cells[i].w == before.cells[i].w);
    CHECK(p.cells[i].u == before.cells[i].u);
    CHECK(p.cells[i].b == before.cells[i].b);
  }
}

TEST_CASE("cross-entropy prefers predictions that match the targets") {
  // A net with zero weights whose dense bias drives the posterior towards a
  // constant prediction per output row.
  auto p = LstmParams<double>::zeros(Mode::kUni, 2, 3, 2, 1, 0);
  Matrix<double> y(2, 4);
  y << 1, 1, 1, 1, 0, 0, 0, 0;
  const auto x = random_features(2, 4, 15);
  TrainConfig cfg;
  p.dense_b << 5.0, -5.0;
  const double good = evaluate_loss(p, x, y, cfg);
  p.dense_b << -5.0, 5.0;
  const double bad = evaluate_loss(p, x, y, cfg);
  CHECK(good < bad);
}

TEST_CASE("onset targets") {
  const std::vector<eval::NoteEvent> ev{{60, 1.0, std::nullopt, 0.8}};
  const double fr = 100.0;
  const auto t = onset_targets(ev, 200, fr, 0, 3);
  CHECK(t.rows() == 88);
  CHECK(t.sum() == 3.0);
  CHECK(t(39, 99) == 1.0);
  CHECK(t(39, 100) == 1.0);
  CHECK(t(39, 101) == 1.0);
  const auto d = onset_targets(ev, 200, fr, 40, 1);
  CHECK(d(39, 140) == 1.0);
  CHECK(d.sum() == 1.0);
}

TEST_CASE("decode examples") {
  const double fr = 86.1328125;
  DecodeConfig cfg;
  Eigen::MatrixXd post = Eigen::MatrixXd::Zero(88, 100);
  CHECK(decode_onsets(post, fr, cfg).empty());

  post(39, 50) = 0.9;
  auto ev = decode_onsets(post, fr, cfg);
  REQUIRE(ev.size() == 1);
  CHECK(ev[0].midi_pitch == 60);
  CHECK(ev[0].onset == doctest::Approx(0.5805).epsilon(1e-3));
  CHECK(ev[0].intensity == doctest::Approx(0.9));

  // Two peaks about 30 ms apart (3 frames at ~11.6 ms): only the higher survives.
  post.setZero();
  post(39, 50) = 0.6;
  post(39, 53) = 0.8;
  ev = decode_onsets(post, fr, cfg);
  REQUIRE(ev.size() == 1);
  CHECK(ev[0].intensity == doctest::Approx(0.8));
  CHECK(ev[0].onset == doctest::Approx(53.0 / fr));

  // Uni-mode delay shifts detections back.
  cfg.delay_frames = 10;
  ev = decode_onsets(post, fr, cfg);
  REQUIRE(ev.size() == 1);
  CHECK(ev[0].onset == doctest::Approx(43.0 / fr));
}

TEST_CASE("threshold decoding of activations") {
  fact::ActivityTensor a(2, 3, 40);
  a.at(0, 0, 10) = 2.0;
  a.at(1, 0, 20) = 0.4;  // below its threshold
  a.at(1, 0, 30) = 1.2;
  DecodeConfig cfg;
  cfg.time_offset_s = 0.1;
  const auto ev = decode_activations(a, {1.0, 1.0}, {50, 70}, 100.0, cfg);
  REQUIRE(ev.size() == 2);
  CHECK(ev[0].midi_pitch == 50);
  CHECK(ev[0].onset == doctest::Approx(0.2));
  CHECK(ev[1].midi_pitch == 70);
  CHECK(ev[1].onset == doctest::Approx(0.4));
}

TEST_CASE("bi mode is symmetric on palindromes") {
  auto p = LstmParams<double>::glorot(Mode::kBi, 6, 5, 4, 2, 0, 16);
  // Backward cells mirror the forward cells; the dense layer weights both
  // directions equally. Layer-2 inputs are [fwd; bwd], so mirror their columns too.
  for (int layer = 0; layer < p.layers; ++layer) {
    auto& f = p.cells[static_cast<std::size_t>(layer * 2)];
    auto& b = p.cells[static_cast<std::size_t>(layer * 2 + 1)];
    if (layer > 0) {
      const Eigen::Index h = p.hidden;
      Matrix<double> w = f.w;
      w.rightCols(h) = f.w.leftCols(h);
      w.leftCols(h) = f.w.leftCols(h);
      f.w = w;
    }
    b = f;
  }
  p.dense_w.rightCols(p.hidden) = p.dense_w.leftCols(p.hidden);
  Matrix<double> x = random_features(6, 9, 17);
  for (int n = 0; n < 4; ++n) x.col(8 - n) = x.col(n);
  const auto out = lstm_forward(p, x);
  CHECK((out - out.rowwise().reverse()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("training decreases the loss over the first epochs") {
  // Targets fire where the first input row is large; a learnable pattern.
  std::vector<Sequence> data;
  for (int s = 0; s < 8; ++s) {
    Sequence seq;
    seq.features = random_features(6, 60, 100 + s);
    seq.targets = (seq.features.topRows(5).array() > 1.0).cast<double>();
    data.push_back(seq);
  }
  auto p = LstmParams<float>::glorot(Mode::kUni, 6, 16, 5, 2, 0, 18);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.adam_step = 1e-3;
  cfg.seed = 3;
  int calls = 0;
  const auto losses = train(p, data, cfg, [&](int, double) { ++calls; });
  REQUIRE(losses.size() == 5);
  CHECK(calls == 5);
  for (std::size_t i = 1; i < losses.size(); ++i) CHECK(losses[i] < losses[i - 1]);

  auto q = LstmParams<float>::glorot(Mode::kUni, 6, 16, 5, 2, 0, 18);
  CHECK(train(q, data, cfg) == losses);  // same seed, same run
}

TEST_CASE("configuration validation") {
  TrainConfig cfg;
  cfg.dropout = 1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = TrainConfig{};
  cfg.adam_step = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  CHECK(parse_mode(mode_name(Mode::kBi)) == Mode::kBi);
  CHECK_THROWS_AS(parse_mode("gru"), Error);
}
