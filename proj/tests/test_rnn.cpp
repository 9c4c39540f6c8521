// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The flimrnn Authors

#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "flim/error.hpp"
#include "flim/io.hpp"
#include "flim/rnn.hpp"
#include "flim/sim.hpp"

using namespace flim;

namespace {

RnnWeights random_weights(Variant v, std::size_t hidden, std::uint64_t seed,
                          double scale = 0.5) {
  RnnConfig c;
  c.variant = v;
  c.hidden = hidden;
  c.head_hidden = hidden;
  RnnWeights w = RnnWeights::zeros(c);
  Rng rng(seed);
  for (auto t : w.tensors()) {
    for (double& x : t) x = rng.uniform(-scale, scale);
  }
  return w;
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Straight-line reference: each gate is a separate (W, U, b) triple pulled
// out of the packed layout by index arithmetic, then the textbook update.
struct Reference {
  const RnnWeights& w;
  std::size_t H;

  double W(std::size_t gate, std::size_t i) const { return w.w_ih[gate * H + i]; }
  double U(std::size_t gate, std::size_t i, std::size_t j) const {
    return w.w_hh[(gate * H + i) * H + j];
  }
  double B(std::size_t gate, std::size_t i) const { return w.b[gate * H + i]; }

  double pre(std::size_t gate, std::size_t i, double x, const std::vector<double>& h) const {
    double s = 0.0;
    for (std::size_t j = 0; j < H; ++j) s += U(gate, i, j) * h[j];
    return W(gate, i) * x + s + B(gate, i);
  }

  void step(std::vector<double>& h, std::vector<double>& c, double t) const {
    const double x = t / w.config.input_scale;
    std::vector<double> nh(H), nc(c);
    for (std::size_t i = 0; i < H; ++i) {
      if (w.config.variant == Variant::kSimple) {
        nh[i] = std::tanh(pre(0, i, x, h));
      } else if (w.config.variant == Variant::kGru) {
        const double z = sig(pre(0, i, x, h));
        std::vector<double> rh(H);
        for (std::size_t j = 0; j < H; ++j) rh[j] = sig(pre(1, j, x, h)) * h[j];
        const double n = std::tanh(pre(2, i, x, rh));
        nh[i] = (1.0 - z) * n + z * h[i];
      } else {
        const double ig = sig(pre(0, i, x, h));
        const double fg = sig(pre(1, i, x, h));
        const double gg = std::tanh(pre(2, i, x, h));
        const double og = sig(pre(3, i, x, h));
        nc[i] = fg * c[i] + ig * gg;
        nh[i] = og * std::tanh(nc[i]);
      }
    }
    h = nh;
    c = nc;
  }

  double head(const std::vector<double>& h) const {
    const std::size_t K = w.config.head_hidden;
    double y = w.head_b2[0];
    for (std::size_t k = 0; k < K; ++k) {
      double a = w.head_b1[k];
      for (std::size_t j = 0; j < H; ++j) a += w.head_w1[k * H + j] * h[j];
      y += w.head_w2[k] * sig(a);
    }
    return y * w.config.output_scale;
  }
};

}  // namespace

TEST_CASE("initial state") {
  RnnConfig c;
  c.hidden = 32;
  HiddenState s = init_state(c);
  CHECK(s.h == std::vector<double>(32, 0.0));
  CHECK(s.c.empty());
  CHECK(s.count == 0);
  c.variant = Variant::kLstm;
  c.hidden = 8;
  s = init_state(c);
  CHECK(s.h == std::vector<double>(8, 0.0));
  CHECK(s.c == std::vector<double>(8, 0.0));
  c.variant = Variant::kSimple;
  c.hidden = 16;
  CHECK(init_state(c).h.size() == 16);
}

TEST_CASE("config validation") {
  RnnConfig c;
  for (std::size_t h : {4, 8, 16, 32, 64}) {
    c.hidden = h;
    CHECK_NOTHROW(c.validate());
  }
  for (std::size_t h : {0, 3, 12, 128}) {
    c.hidden = h;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
  CHECK_THROWS_AS(parse_variant("transformer"), ConfigError);
  CHECK(parse_variant("lstm") == Variant::kLstm);
  CHECK(gate_count(Variant::kGru) == 3);
}

TEST_CASE("zero GRU stays at zero") {
  RnnConfig c;
  c.hidden = 8;
  const RnnWeights w = RnnWeights::zeros(c);
  HiddenState s = init_state(c);
  for (double t : {0.0, 1.0, 7.5, 49.0}) s = cell_step(s, t, w);
  CHECK(s.h == std::vector<double>(8, 0.0));
  CHECK(s.count == 4);

  // h' = h / 2 with zero weights.
  s.h.assign(8, 0.8);
  s = cell_step(s, 3.0, w);
  for (double v : s.h) CHECK(v == 0.4);
}

TEST_CASE("cell step is deterministic") {
  const RnnWeights w = random_weights(Variant::kLstm, 16, 4);
  HiddenState s = init_state(w.config);
  s = cell_step(s, 1.0, w);
  CHECK(cell_step(s, 2.5, w).h == cell_step(s, 2.5, w).h);
}

TEST_CASE("cell and head match a straight-line reference") {
  for (Variant v : {Variant::kSimple, Variant::kGru, Variant::kLstm}) {
    CAPTURE(variant_name(v));
    const RnnWeights w = random_weights(v, 8, 101 + static_cast<int>(v));
    const auto seq = generate_sequence(DecayModel::mono(2.0, 1.0, 0.1673, 50.0, 0.05), 256, 7);
    Reference ref{w, 8};
    std::vector<double> h(8, 0.0), c(8, 0.0);
    HiddenState s = init_state(w.config);
    for (double t : seq.timestamps) {
      ref.step(h, c, t);
      cell_step_inplace(s, t, w);
    }
    for (std::size_t j = 0; j < 8; ++j) {
      CHECK(std::abs(s.h[j] - h[j]) <= 1e-12);
      if (v == Variant::kLstm) CHECK(std::abs(s.c[j] - c[j]) <= 1e-12);
    }
    CHECK(std::abs(head_predict(s, w) - ref.head(h)) <= 1e-12);
  }
}

TEST_CASE("head of zero weights") {
  RnnConfig c;
  c.hidden = 8;
  RnnWeights w = RnnWeights::zeros(c);
  CHECK(head_predict(init_state(c), w) == 0.0);
  // With w2 = 1 everywhere each hidden unit contributes sigmoid(0) = 1/2.
  w.head_w2.assign(w.head_w2.size(), 1.0);
  CHECK(head_predict(init_state(c), w) == 0.5 * 16 * c.output_scale);
}

TEST_CASE("streaming emissions and causality") {
  const RnnWeights w = random_weights(Variant::kGru, 16, 9);
  const auto seq = generate_sequence(DecayModel::mono(2.0, 1.0, 0.1673, 50.0), 100, 3);
  CHECK(stream_estimate(seq.timestamps, w, 100).size() == 1);
  const auto em = stream_estimate(seq.timestamps, w, 16);
  REQUIRE(em.size() == 7);  // 16, 32, ..., 96 and the final photon
  CHECK(em.back().photon_index == 100);
  CHECK(em.back().estimate == final_estimate(seq.timestamps, w));
  for (const Emission& e : em) {
    const std::span<const double> prefix(seq.timestamps.data(), e.photon_index);
    CHECK(final_estimate(prefix, w) == e.estimate);
  }
  CHECK_THROWS_AS(stream_estimate(std::vector<double>{}, w, 1), DomainError);
}

TEST_CASE("hidden state stays inside (-1, 1)") {
  for (Variant v : {Variant::kSimple, Variant::kGru, Variant::kLstm}) {
    const RnnWeights w = random_weights(v, 16, 55, 1.0);
    HiddenState s = init_state(w.config);
    Rng rng(1);
    for (int i = 0; i < 2000; ++i) {
      cell_step_inplace(s, rng.uniform(0.0, 50.0), w);
      for (double x : s.h) {
        CHECK(x > -1.0);
        CHECK(x < 1.0);
      }
    }
    // Saturating weights: tanh rounds to +-1 in double, never beyond.
    const RnnWeights big = random_weights(v, 16, 56, 20.0);
    HiddenState b = init_state(big.config);
    for (int i = 0; i < 500; ++i) {
      cell_step_inplace(b, rng.uniform(0.0, 50.0), big);
      for (double x : b.h) CHECK(std::abs(x) <= 1.0);
    }
  }
}

TEST_CASE("state size mismatch") {
  const RnnWeights w = random_weights(Variant::kGru, 8, 1);
  HiddenState s;
  s.h.assign(4, 0.0);
  CHECK_THROWS_AS(cell_step(s, 1.0, w), ContractViolation);
  CHECK_THROWS_AS(head_predict(s, w), ContractViolation);
  RnnWeights bad = w;
  bad.w_hh.pop_back();
  CHECK_THROWS_AS(bad.validate(), ContractViolation);
  bad = w;
  bad.b[0] = std::nan("");
  CHECK_THROWS_AS(bad.validate(), ContractViolation);
}

TEST_CASE("golden weights file") {
  const std::filesystem::path dir = FLIM_DATA_DIR;
  const RnnWeights w = load_weights(dir / "golden_rnn.json");
  // Frozen reference sequence and output.
  const auto seq = generate_sequence(DecayModel::mono(2.5, 1.0, 0.1673, 50.0), 256, 2500);
  CHECK(std::abs(final_estimate(seq.timestamps, w) - 2.5) <= 1e-9);
}
