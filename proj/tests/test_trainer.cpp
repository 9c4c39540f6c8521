// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The flimrnn Authors

#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "flim/error.hpp"
#include "flim/trainer.hpp"

using namespace flim;

namespace {

RnnConfig small_config(Variant v, std::size_t hidden = 4) {
  RnnConfig c;
  c.variant = v;
  c.hidden = hidden;
  c.head_hidden = hidden;
  return c;
}

RnnWeights perturbed(Variant v, std::uint64_t seed) {
  RnnWeights w = init_weights(small_config(v), seed);
  Rng rng(seed + 1000);
  for (auto t : w.tensors()) {
    for (double& x : t) x += rng.uniform(-0.3, 0.3);
  }
  return w;
}

struct Batch {
  std::vector<std::vector<double>> seqs;
  std::vector<double> truths;
};

Batch make_batch(std::uint64_t seed, std::size_t count, std::size_t length) {
  Batch b;
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    const double tau = rng.uniform(0.5, 5.0);
    const auto s = generate_sequence(DecayModel::mono(tau, rng.uniform(0, 5), 0.1673, 50.0),
                                     length, seed * 31 + i);
    b.seqs.push_back(s.timestamps);
    b.truths.push_back(tau);
  }
  return b;
}

double batch_loss(const RnnWeights& w, const Batch& b, std::span<const double> sw) {
  double total = 0.0;
  for (std::size_t i = 0; i < b.seqs.size(); ++i) {
    const auto pred = predict_all_steps(b.seqs[i], w);
    total += weighted_mspe(pred, b.truths[i], sw);
  }
  return total / static_cast<double>(b.seqs.size());
}

double max_fd_error(const RnnWeights& w, const Batch& b) {
  const auto sw = loss_weights(b.seqs.front().size());
  const GradientResult g = bptt_gradients(w, b.seqs, b.truths);
  double worst = 0.0;
  RnnWeights probe = w;
  auto pt = probe.tensors();
  auto gt = g.grad.tensors();
  for (std::size_t k = 0; k < pt.size(); ++k) {
    for (std::size_t j = 0; j < pt[k].size(); ++j) {
      const double x = pt[k][j];
      const double eps = 1e-5;
      pt[k][j] = x + eps;
      const double up = batch_loss(probe, b, sw);
      pt[k][j] = x - eps;
      const double dn = batch_loss(probe, b, sw);
      pt[k][j] = x;
      const double fd = (up - dn) / (2.0 * eps);
      const double denom = std::max({std::abs(fd), std::abs(gt[k][j]), 1e-8});
      worst = std::max(worst, std::abs(fd - gt[k][j]) / denom);
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("loss weights") {
  const std::size_t N = 256;
  const auto raw = loss_weights(N, false);
  CHECK(raw[N / 4 - 1] == doctest::Approx(0.5).epsilon(1e-15));  // i = N/4
  CHECK(raw[N - 1] == doctest::Approx(1.0 / (1.0 + std::exp(-3.0))).epsilon(1e-15));
  CHECK(raw[N - 1] == doctest::Approx(0.9526).epsilon(1e-4));
  for (std::size_t i = 1; i < N; ++i) CHECK(raw[i] > raw[i - 1]);
  for (std::size_t n : {1, 7, 16, 256, 1024}) {
    const auto w = loss_weights(n);
    double s = 0.0;
    for (double v : w) s += v;
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
}

TEST_CASE("weighted MSPE") {
  const auto w = loss_weights(64);
  std::vector<double> pred(64, 3.0);
  CHECK(weighted_mspe(pred, 3.0, w) == 0.0);
  std::fill(pred.begin(), pred.end(), 6.0);
  CHECK(weighted_mspe(pred, 3.0, w) == doctest::Approx(1.0).epsilon(1e-12));

  Rng rng(5);
  for (double& p : pred) p = rng.uniform(0.0, 6.0);
  double oracle = 0.0;
  for (std::size_t i = 0; i < 64; ++i) {
    const double wi = 1.0 / (1.0 + std::exp(-((i + 1.0) - 16.0) / 16.0));
    oracle += wi * ((2.2 - pred[i]) / 2.2) * ((2.2 - pred[i]) / 2.2);
  }
  double norm = 0.0;
  for (std::size_t i = 0; i < 64; ++i) norm += 1.0 / (1.0 + std::exp(-((i + 1.0) - 16.0) / 16.0));
  CHECK(weighted_mspe(pred, 2.2, w) == doctest::Approx(oracle / norm).epsilon(1e-12));
  CHECK(weighted_mspe(pred, 2.2, w) >= 0.0);
  CHECK_THROWS_AS(weighted_mspe(pred, 0.0, w), DomainError);
}

TEST_CASE("initialization") {
  for (Variant v : {Variant::kSimple, Variant::kGru, Variant::kLstm}) {
    const RnnConfig c = small_config(v, 16);
    const RnnWeights w = init_weights(c, 3);
    const std::size_t H = 16;
    for (std::size_t g = 0; g < gate_count(v); ++g) {
      for (std::size_t i = 0; i < H; ++i) {
        for (std::size_t j = 0; j < H; ++j) {
          double dot = 0.0;
          for (std::size_t k = 0; k < H; ++k) {
            dot += w.w_hh[(g * H + k) * H + i] * w.w_hh[(g * H + k) * H + j];
          }
          CHECK(std::abs(dot - (i == j ? 1.0 : 0.0)) <= 1e-10);
        }
      }
    }
    const double b_in = std::sqrt(6.0 / (1.0 + H));
    for (double x : w.w_ih) CHECK(std::abs(x) <= b_in);
    const double b_h1 = std::sqrt(6.0 / (H + c.head_hidden));
    for (double x : w.head_w1) CHECK(std::abs(x) <= b_h1);
    const double b_h2 = std::sqrt(6.0 / (c.head_hidden + 1.0));
    for (double x : w.head_w2) CHECK(std::abs(x) <= b_h2);
    for (std::size_t i = 0; i < w.b.size(); ++i) {
      const bool forget = v == Variant::kLstm && i >= H && i < 2 * H;
      CHECK(w.b[i] == (forget ? 1.0 : 0.0));
    }
    for (double x : w.head_b1) CHECK(x == 0.0);
    CHECK(w.head_b2[0] == 0.0);
    CHECK(init_weights(c, 3) == w);
  }
}

TEST_CASE("BPTT matches central differences") {
  for (Variant v : {Variant::kSimple, Variant::kGru, Variant::kLstm}) {
    CAPTURE(variant_name(v));
    const RnnWeights w = perturbed(v, 17);
    const Batch b = make_batch(3, 3, 16);
    CHECK(max_fd_error(w, b) < 1e-4);
  }
}

TEST_CASE("gradient with only the last step weighted") {
  const RnnWeights w = perturbed(Variant::kGru, 8);
  const Batch b = make_batch(4, 1, 16);
  std::vector<double> sw(16, 0.0);
  sw.back() = 1.0;
  const GradientResult g = bptt_gradients(w, b.seqs, b.truths, sw);
  // Loss ((y - yhat) / y)^2 with yhat = s (b2 + w2 . a).
  HiddenState st = init_state(w.config);
  for (double t : b.seqs[0]) cell_step_inplace(st, t, w);
  const double y = b.truths[0];
  const double yhat = head_predict(st, w);
  const double s = w.config.output_scale;
  const double dl = 2.0 * (yhat - y) / (y * y);
  CHECK(g.loss == doctest::Approx((y - yhat) * (y - yhat) / (y * y)).epsilon(1e-12));
  CHECK(g.grad.head_b2[0] == doctest::Approx(dl * s).epsilon(1e-12));
  for (std::size_t k = 0; k < w.config.head_hidden; ++k) {
    double a = w.head_b1[k];
    for (std::size_t j = 0; j < w.config.hidden; ++j) a += w.head_w1[k * w.config.hidden + j] * st.h[j];
    CHECK(g.grad.head_w2[k] == doctest::Approx(dl * s * sigmoid(a)).epsilon(1e-12));
  }
}

TEST_CASE("no gradient through a severed head path") {
  RnnWeights w = perturbed(Variant::kLstm, 9);
  w.head_w2[1] = 0.0;
  const Batch b = make_batch(5, 2, 16);
  const GradientResult g = bptt_gradients(w, b.seqs, b.truths);
  CHECK(g.grad.head_b1[1] == 0.0);
  for (std::size_t j = 0; j < w.config.hidden; ++j) CHECK(g.grad.head_w1[w.config.hidden + j] == 0.0);
  CHECK(g.grad.head_w2[1] != 0.0);
}

TEST_CASE("gradients do not depend on the thread count") {
  const RnnWeights w = perturbed(Variant::kGru, 10);
  const Batch b = make_batch(6, 9, 32);
  const GradientResult a = bptt_gradients(w, b.seqs, b.truths, {}, 0, 1);
  const GradientResult c = bptt_gradients(w, b.seqs, b.truths, {}, 0, 4);
  CHECK(a.grad == c.grad);
  CHECK(a.loss == c.loss);
}

TEST_CASE("truncated BPTT equals full BPTT when the window covers the sequence") {
  const RnnWeights w = perturbed(Variant::kGru, 12);
  const Batch b = make_batch(7, 2, 16);
  const GradientResult full = bptt_gradients(w, b.seqs, b.truths);
  const GradientResult wide = bptt_gradients(w, b.seqs, b.truths, {}, 16);
  auto x = full.grad.tensors();
  auto y = wide.grad.tensors();
  for (std::size_t k = 0; k < x.size(); ++k) {
    for (std::size_t j = 0; j < x[k].size(); ++j) CHECK(x[k][j] == doctest::Approx(y[k][j]).epsilon(1e-12));
  }
}

TEST_CASE("Adam first step moves each parameter by the learning rate") {
  RnnWeights w = perturbed(Variant::kSimple, 2);
  const RnnWeights before = w;
  RnnWeights g = RnnWeights::zeros(w.config);
  Rng rng(3);
  for (auto t : g.tensors()) {
    for (double& x : t) x = rng.uniform(-1.0, 1.0);
  }
  Adam adam(w, AdamConfig{});
  adam.step(w, g, 0.01);
  auto a = before.tensors();
  auto b = w.tensors();
  auto gt = g.tensors();
  for (std::size_t k = 0; k < a.size(); ++k) {
    for (std::size_t j = 0; j < a[k].size(); ++j) {
      const double expect = -0.01 * gt[k][j] / (std::abs(gt[k][j]) + 1e-8);
      CHECK(b[k][j] - a[k][j] == doctest::Approx(expect).epsilon(1e-9));
    }
  }
  CHECK(adam.steps() == 1);
}

TEST_CASE("learning-rate schedule") {
  TrainConfig c;
  CHECK(c.lr_at(0) == 0.001);
  CHECK(c.lr_at(4) == 0.001);
  CHECK(c.lr_at(5) == doctest::Approx(0.0009).epsilon(1e-15));
  CHECK(c.lr_at(10) == doctest::Approx(0.00081).epsilon(1e-15));
  CHECK(c.epochs == 100);
  CHECK(c.batch_size == 32);
  c.decay = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.decay = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("training is reproducible and keeps the best checkpoint") {
  DatasetConfig dc;
  dc.samples = 400;
  dc.photons = 32;
  dc.seed = 8;
  const Dataset data = generate_dataset(dc);
  TrainConfig tc;
  tc.model = small_config(Variant::kGru, 8);
  tc.epochs = 4;
  tc.learning_rate = 0.01;
  tc.seed = 4;
  const TrainResult a = train(tc, data);
  const TrainResult b = train(tc, data);
  CHECK(a.weights == b.weights);
  CHECK(a.history.to_csv() == b.history.to_csv());
  REQUIRE(a.history.epochs.size() == 4);
  double best = 1e300;
  for (const auto& e : a.history.epochs) best = std::min(best, e.eval_loss);
  CHECK(a.history.epochs[a.history.best_epoch].eval_loss == best);
  CHECK(evaluate(a.weights, data.eval()).loss == best);
  CHECK(a.weights.train_seed == 4);

  SUBCASE("fine-tuning starts from the given weights") {
    TrainConfig ft = tc;
    ft.epochs = 1;
    ft.initial = a.weights;
    const TrainResult c = train(ft, data);
    CHECK(c.history.epochs.size() == 1);
    ft.initial->config.hidden = 16;
    CHECK_THROWS_AS(train(ft, data), ConfigError);
  }
}
