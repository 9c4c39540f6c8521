// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The flimrnn Authors

#include "flim/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "flim/error.hpp"
#include "flim/parallel.hpp"
#include "flim/rng.hpp"

namespace flim {

std::vector<double> loss_weights(std::size_t n_timesteps, bool normalize) {
  if (n_timesteps == 0) throw DomainError("loss_weights: need at least one step");
  const double quarter = static_cast<double>(n_timesteps) / 4.0;
  std::vector<double> w(n_timesteps);
  for (std::size_t i = 1; i <= n_timesteps; ++i) {
    w[i - 1] = 1.0 / (1.0 + std::exp(-(static_cast<double>(i) - quarter) / quarter));
  }
  if (normalize) {
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    for (double& v : w) v /= total;
  }
  return w;
}

double weighted_mspe(std::span<const double> predictions, double truth,
                     std::span<const double> weights) {
  if (truth == 0.0) throw DomainError("weighted_mspe: truth must be non-zero");
  if (predictions.size() != weights.size()) {
    throw ContractViolation("weighted_mspe: length mismatch");
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double rel = (truth - predictions[i]) / truth;
    loss += weights[i] * rel * rel;
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Initialization

namespace {

void orthogonal_block(std::span<double> m, std::size_t rows_offset,
                      std::size_t H, Rng& rng) {
  // Gaussian matrix, then modified Gram-Schmidt over the rows, twice.
  std::vector<double> q(H * H);
  for (double& v : q) v = rng.normal(0.0, 1.0);
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t i = 0; i < H; ++i) {
      double* qi = q.data() + i * H;
      for (std::size_t k = 0; k < i; ++k) {
        const double* qk = q.data() + k * H;
        double dot = 0.0;
        for (std::size_t j = 0; j < H; ++j) dot += qi[j] * qk[j];
        for (std::size_t j = 0; j < H; ++j) qi[j] -= dot * qk[j];
      }
      double norm = 0.0;
      for (std::size_t j = 0; j < H; ++j) norm += qi[j] * qi[j];
      norm = std::sqrt(norm);
      for (std::size_t j = 0; j < H; ++j) qi[j] /= norm;
    }
  }
  std::copy(q.begin(), q.end(), m.begin() + rows_offset * H);
}

void xavier(std::span<double> m, std::size_t fan_in, std::size_t fan_out,
            Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : m) v = rng.uniform(-bound, bound);
}

}  // namespace

RnnWeights init_weights(const RnnConfig& config, std::uint64_t seed) {
  RnnWeights w = RnnWeights::zeros(config);
  Rng rng(derive_seed(seed, "init"));
  const std::size_t H = config.hidden;
  const std::size_t G = gate_count(config.variant);
  for (std::size_t g = 0; g < G; ++g) {
    orthogonal_block(w.w_hh, g * H, H, rng);
    xavier(std::span(w.w_ih).subspan(g * H, H), 1, H, rng);
  }
  xavier(w.head_w1, H, config.head_hidden, rng);
  xavier(w.head_w2, config.head_hidden, 1, rng);
  if (config.variant == Variant::kLstm) {
    std::fill(w.b.begin() + H, w.b.begin() + 2 * H, 1.0);
  }
  w.train_seed = seed;
  return w;
}

// ---------------------------------------------------------------------------
// Forward with activations kept for the backward pass

namespace {

struct Tape {
  std::vector<double> hs;     // (N+1) x H, hs[0] = 0
  std::vector<double> cs;     // (N+1) x H, LSTM
  std::vector<double> gates;  // N x G*H, post-activation
  std::vector<double> rh;     // N x H, GRU r*h
  std::vector<double> tc;     // N x H, LSTM tanh(c)
  std::vector<double> act;    // N x K, head hidden activations
  std::vector<double> pred;   // N, ns
};

void forward(const RnnWeights& w, std::span<const double> ts, Tape& tape) {
  const std::size_t N = ts.size();
  const std::size_t H = w.config.hidden;
  const std::size_t K = w.config.head_hidden;
  const std::size_t G = gate_count(w.config.variant);
  const std::size_t GH = G * H;
  const Variant variant = w.config.variant;
  tape.hs.assign((N + 1) * H, 0.0);
  tape.gates.resize(N * GH);
  tape.act.resize(N * K);
  tape.pred.resize(N);
  if (variant == Variant::kGru) tape.rh.resize(N * H);
  if (variant == Variant::kLstm) {
    tape.cs.assign((N + 1) * H, 0.0);
    tape.tc.resize(N * H);
  }
  const double inv_scale = 1.0 / w.config.input_scale;
  const double* U = w.w_hh.data();
  const double* Wx = w.w_ih.data();
  const double* B = w.b.data();

  for (std::size_t t = 0; t < N; ++t) {
    const double x = ts[t] * inv_scale;
    const double* h = tape.hs.data() + t * H;
    double* hn = tape.hs.data() + (t + 1) * H;
    double* gt = tape.gates.data() + t * GH;
    const std::size_t affine_rows = variant == Variant::kGru ? 2 * H : GH;
    for (std::size_t r = 0; r < affine_rows; ++r) {
      const double* u = U + r * H;
      double acc = B[r] + Wx[r] * x;
      for (std::size_t j = 0; j < H; ++j) acc += u[j] * h[j];
      gt[r] = acc;
    }
    switch (variant) {
      case Variant::kSimple:
        for (std::size_t j = 0; j < H; ++j) {
          gt[j] = std::tanh(gt[j]);
          hn[j] = gt[j];
        }
        break;
      case Variant::kGru: {
        double* rh = tape.rh.data() + t * H;
        for (std::size_t j = 0; j < 2 * H; ++j) gt[j] = sigmoid(gt[j]);
        for (std::size_t j = 0; j < H; ++j) rh[j] = gt[H + j] * h[j];
        for (std::size_t r = 2 * H; r < 3 * H; ++r) {
          const double* u = U + r * H;
          double acc = B[r] + Wx[r] * x;
          for (std::size_t j = 0; j < H; ++j) acc += u[j] * rh[j];
          gt[r] = std::tanh(acc);
        }
        for (std::size_t j = 0; j < H; ++j) {
          const double z = gt[j];
          hn[j] = (1.0 - z) * gt[2 * H + j] + z * h[j];
        }
        break;
      }
      case Variant::kLstm: {
        const double* c = tape.cs.data() + t * H;
        double* cn = tape.cs.data() + (t + 1) * H;
        double* tc = tape.tc.data() + t * H;
        for (std::size_t j = 0; j < H; ++j) {
          gt[j] = sigmoid(gt[j]);
          gt[H + j] = sigmoid(gt[H + j]);
          gt[2 * H + j] = std::tanh(gt[2 * H + j]);
          gt[3 * H + j] = sigmoid(gt[3 * H + j]);
          cn[j] = gt[H + j] * c[j] + gt[j] * gt[2 * H + j];
          tc[j] = std::tanh(cn[j]);
          hn[j] = gt[3 * H + j] * tc[j];
        }
        break;
      }
    }
    // Head on the new state.
    double* a = tape.act.data() + t * K;
    double y = w.head_b2[0];
    for (std::size_t k = 0; k < K; ++k) {
      const double* row = w.head_w1.data() + k * H;
      double acc = w.head_b1[k];
      for (std::size_t j = 0; j < H; ++j) acc += row[j] * hn[j];
      a[k] = sigmoid(acc);
      y += w.head_w2[k] * a[k];
    }
    tape.pred[t] = y * w.config.output_scale;
  }
}

struct BackwardScratch {
  std::vector<double> dh, dc, dh_prev, dc_prev, dpre, drh, dpre1;
};

// Accumulates d(loss)/d(params) for one sequence into `g`. Returns the loss.
double backward(const RnnWeights& w, std::span<const double> ts, double truth,
                std::span<const double> step_w, std::size_t truncation,
                const Tape& tape, RnnWeights& g, BackwardScratch& s) {
  const std::size_t N = ts.size();
  const std::size_t H = w.config.hidden;
  const std::size_t K = w.config.head_hidden;
  const std::size_t G = gate_count(w.config.variant);
  const std::size_t GH = G * H;
  const Variant variant = w.config.variant;
  const double scale = w.config.output_scale;
  const double inv_scale = 1.0 / w.config.input_scale;
  const double inv_t2 = 1.0 / (truth * truth);

  s.dh.assign(H, 0.0);
  s.dc.assign(H, 0.0);
  s.dh_prev.resize(H);
  s.dc_prev.resize(H);
  s.dpre.resize(GH);
  s.drh.resize(H);
  s.dpre1.resize(K);

  const double* U = w.w_hh.data();
  double loss = 0.0;

  for (std::size_t t = N; t-- > 0;) {
    if (truncation > 0 && (t + 1) % truncation == 0 && t + 1 < N) {
      std::fill(s.dh.begin(), s.dh.end(), 0.0);
      std::fill(s.dc.begin(), s.dc.end(), 0.0);
    }
    const double* hn = tape.hs.data() + (t + 1) * H;
    const double* h = tape.hs.data() + t * H;
    const double* gt = tape.gates.data() + t * GH;
    const double x = ts[t] * inv_scale;

    // Loss term and head.
    const double wt = step_w[t];
    const double diff = tape.pred[t] - truth;
    loss += wt * diff * diff * inv_t2;
    if (wt != 0.0) {
      const double dy = 2.0 * wt * diff * inv_t2 * scale;
      const double* a = tape.act.data() + t * K;
      g.head_b2[0] += dy;
      for (std::size_t k = 0; k < K; ++k) {
        g.head_w2[k] += dy * a[k];
        s.dpre1[k] = dy * w.head_w2[k] * a[k] * (1.0 - a[k]);
        g.head_b1[k] += s.dpre1[k];
        double* gw = g.head_w1.data() + k * H;
        const double* row = w.head_w1.data() + k * H;
        const double dp = s.dpre1[k];
        for (std::size_t j = 0; j < H; ++j) {
          gw[j] += dp * hn[j];
          s.dh[j] += dp * row[j];
        }
      }
    }

    // Cell.
    std::fill(s.dh_prev.begin(), s.dh_prev.end(), 0.0);
    std::size_t rows_with_h = GH;  // rows whose recurrent input is h
    switch (variant) {
      case Variant::kSimple:
        for (std::size_t j = 0; j < H; ++j) {
          s.dpre[j] = s.dh[j] * (1.0 - gt[j] * gt[j]);
        }
        break;
      case Variant::kGru: {
        rows_with_h = 2 * H;
        const double* rh = tape.rh.data() + t * H;
        std::fill(s.drh.begin(), s.drh.end(), 0.0);
        for (std::size_t j = 0; j < H; ++j) {
          const double z = gt[j];
          const double n = gt[2 * H + j];
          const double dn = s.dh[j] * (1.0 - z);
          s.dpre[2 * H + j] = dn * (1.0 - n * n);
          s.dpre[j] = s.dh[j] * (h[j] - n) * z * (1.0 - z);
          s.dh_prev[j] = s.dh[j] * z;
        }
        for (std::size_t r = 2 * H; r < 3 * H; ++r) {
          const double dp = s.dpre[r];
          g.w_ih[r] += dp * x;
          g.b[r] += dp;
          double* gu = g.w_hh.data() + r * H;
          const double* u = U + r * H;
          for (std::size_t j = 0; j < H; ++j) {
            gu[j] += dp * rh[j];
            s.drh[j] += dp * u[j];
          }
        }
        for (std::size_t j = 0; j < H; ++j) {
          const double r = gt[H + j];
          s.dpre[H + j] = s.drh[j] * h[j] * r * (1.0 - r);
          s.dh_prev[j] += s.drh[j] * r;
        }
        break;
      }
      case Variant::kLstm: {
        const double* c = tape.cs.data() + t * H;
        const double* tc = tape.tc.data() + t * H;
        for (std::size_t j = 0; j < H; ++j) {
          const double i = gt[j], f = gt[H + j], gg = gt[2 * H + j],
                       o = gt[3 * H + j];
          const double dc = s.dc[j] + s.dh[j] * o * (1.0 - tc[j] * tc[j]);
          s.dpre[j] = dc * gg * i * (1.0 - i);
          s.dpre[H + j] = dc * c[j] * f * (1.0 - f);
          s.dpre[2 * H + j] = dc * i * (1.0 - gg * gg);
          s.dpre[3 * H + j] = s.dh[j] * tc[j] * o * (1.0 - o);
          s.dc_prev[j] = dc * f;
        }
        break;
      }
    }
    for (std::size_t r = 0; r < rows_with_h; ++r) {
      const double dp = s.dpre[r];
      g.w_ih[r] += dp * x;
      g.b[r] += dp;
      double* gu = g.w_hh.data() + r * H;
      const double* u = U + r * H;
      for (std::size_t j = 0; j < H; ++j) {
        gu[j] += dp * h[j];
        s.dh_prev[j] += dp * u[j];
      }
    }
    std::swap(s.dh, s.dh_prev);
    if (variant == Variant::kLstm) std::swap(s.dc, s.dc_prev);
  }
  return loss;
}

void check_finite(const Tape& tape, std::size_t index) {
  for (double p : tape.pred) {
    if (!std::isfinite(p)) {
      throw TrainingError("non-finite prediction in forward pass (batch item " +
                          std::to_string(index) + ")");
    }
  }
}

void zero(RnnWeights& w) {
  for (auto t : w.tensors()) std::fill(t.begin(), t.end(), 0.0);
}

void add_into(RnnWeights& dst, const RnnWeights& src, double scale = 1.0) {
  auto d = dst.tensors();
  auto s = src.tensors();
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t j = 0; j < d[i].size(); ++j) d[i][j] += scale * s[i][j];
  }
}

struct SeqRef {
  std::span<const double> ts;
  double truth;
};

GradientResult bptt_impl(const RnnWeights& weights,
                         std::span<const SeqRef> batch,
                         std::span<const double> step_weights,
                         std::size_t truncation, unsigned threads) {
  if (batch.empty()) throw DomainError("bptt_gradients: empty batch");
  const std::size_t B = batch.size();
  std::vector<RnnWeights> per(threads <= 1 ? 1 : B,
                              RnnWeights::zeros(weights.config));
  std::vector<double> losses(B, 0.0);

  GradientResult out{RnnWeights::zeros(weights.config), 0.0};
  out.grad.config = weights.config;

  auto run_one = [&](std::size_t i, RnnWeights& g) {
    thread_local Tape tape;
    thread_local BackwardScratch scratch;
    const auto ts = batch[i].ts;
    if (ts.empty()) throw DomainError("bptt_gradients: empty sequence");
    std::vector<double> own;
    std::span<const double> sw = step_weights;
    if (sw.empty()) {
      own = loss_weights(ts.size());
      sw = own;
    } else if (sw.size() != ts.size()) {
      throw ContractViolation("bptt_gradients: step weight length mismatch");
    }
    forward(weights, ts, tape);
    check_finite(tape, i);
    zero(g);
    losses[i] = backward(weights, ts, batch[i].truth, sw, truncation, tape, g,
                         scratch);
  };

  if (per.size() == 1) {
    for (std::size_t i = 0; i < B; ++i) {
      run_one(i, per[0]);
      add_into(out.grad, per[0]);
    }
  } else {
    parallel_for(B, threads, [&](std::size_t i) { run_one(i, per[i]); });
    for (std::size_t i = 0; i < B; ++i) add_into(out.grad, per[i]);
  }
  const double inv_b = 1.0 / static_cast<double>(B);
  for (auto t : out.grad.tensors()) {
    for (double& v : t) v *= inv_b;
  }
  for (double l : losses) out.loss += l;
  out.loss *= inv_b;
  return out;
}

}  // namespace

std::vector<double> predict_all_steps(std::span<const double> timestamps,
                                      const RnnWeights& weights) {
  Tape tape;
  forward(weights, timestamps, tape);
  return tape.pred;
}

GradientResult bptt_gradients(const RnnWeights& weights,
                              std::span<const TimestampSequence> batch,
                              std::span<const double> step_weights,
                              std::size_t truncation, unsigned threads) {
  std::vector<SeqRef> refs;
  refs.reserve(batch.size());
  for (const auto& s : batch) refs.push_back({s.timestamps, s.true_lifetime()});
  return bptt_impl(weights, refs, step_weights, truncation, threads);
}

GradientResult bptt_gradients(const RnnWeights& weights,
                              std::span<const std::vector<double>> sequences,
                              std::span<const double> truths,
                              std::span<const double> step_weights,
                              std::size_t truncation, unsigned threads) {
  if (sequences.size() != truths.size()) {
    throw ContractViolation("bptt_gradients: sequences/truths length mismatch");
  }
  std::vector<SeqRef> refs;
  refs.reserve(sequences.size());
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    refs.push_back({sequences[i], truths[i]});
  }
  return bptt_impl(weights, refs, step_weights, truncation, threads);
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(const RnnWeights& shape, AdamConfig config)
    : cfg_(config),
      m_(RnnWeights::zeros(shape.config)),
      v_(RnnWeights::zeros(shape.config)) {}

void Adam::step(RnnWeights& params, const RnnWeights& grad, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  auto p = params.tensors();
  auto g = grad.tensors();
  auto m = m_.tensors();
  auto v = v_.tensors();
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = 0; j < p[i].size(); ++j) {
      const double gj = g[i][j];
      m[i][j] = cfg_.beta1 * m[i][j] + (1.0 - cfg_.beta1) * gj;
      v[i][j] = cfg_.beta2 * v[i][j] + (1.0 - cfg_.beta2) * gj * gj;
      const double mhat = m[i][j] / c1;
      const double vhat = v[i][j] / c2;
      p[i][j] -= lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop

void TrainConfig::validate() const {
  model.validate();
  if (epochs == 0 || batch_size == 0) {
    throw ConfigError("train: epochs and batch size must be positive");
  }
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning rate must be > 0");
  if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("train: decay must be in (0, 1]");
  if (decay_every == 0) throw ConfigError("train: decay_every must be positive");
  if (clip_norm < 0.0) throw ConfigError("train: clip_norm must be >= 0");
}

double TrainConfig::lr_at(std::size_t epoch) const {
  return learning_rate *
         std::pow(decay, static_cast<double>(epoch / decay_every));
}

std::string TrainHistory::to_csv(bool include_timing) const {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,learning_rate,train_loss,eval_loss,eval_mape";
  if (include_timing) os << ",wall_seconds";
  os << '\n';
  for (const auto& e : epochs) {
    os << e.epoch << ',' << e.learning_rate << ',' << e.train_loss << ','
       << e.eval_loss << ',' << e.eval_mape;
    if (include_timing) os << ',' << e.wall_seconds;
    os << '\n';
  }
  return os.str();
}

EvalScore evaluate(const RnnWeights& weights,
                   std::span<const TimestampSequence> samples,
                   unsigned threads) {
  if (samples.empty()) return {};
  std::vector<double> loss(samples.size()), ape(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i) {
    thread_local Tape tape;
    const auto& s = samples[i];
    forward(weights, s.timestamps, tape);
    const double y = s.true_lifetime();
    const auto w = loss_weights(s.size());
    loss[i] = weighted_mspe(tape.pred, y, w);
    ape[i] = std::abs((y - tape.pred.back()) / y);
  });
  EvalScore score;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    score.loss += loss[i];
    score.mape += ape[i];
  }
  score.loss /= static_cast<double>(samples.size());
  score.mape /= static_cast<double>(samples.size());
  return score;
}

TrainResult train(const TrainConfig& config, const Dataset& dataset) {
  config.validate();
  const auto train_set = dataset.train();
  auto eval_set = dataset.eval();
  if (train_set.empty() || eval_set.empty()) {
    throw ConfigError("train: dataset needs non-empty train and eval splits");
  }
  if (config.eval_limit > 0 && eval_set.size() > config.eval_limit) {
    eval_set = eval_set.subspan(0, config.eval_limit);
  }

  RnnWeights weights = init_weights(config.model, config.seed);
  if (config.initial) {
    if (!(config.initial->config == config.model)) {
      throw ConfigError("train: initial weights do not match the model config");
    }
    config.initial->validate();
    weights = *config.initial;
  }
  RnnWeights best = weights;
  double best_loss = std::numeric_limits<double>::infinity();
  Adam adam(weights, config.adam);

  TrainResult result;
  result.history.adam = config.adam;

  std::vector<std::size_t> order(train_set.size());
  const auto start = std::chrono::steady_clock::now();

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(config.seed, "shuffle", epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    }
    const double lr = config.lr_at(epoch);
    double train_loss = 0.0;
    std::size_t batches = 0;
    std::vector<SeqRef> batch;
    try {
      for (std::size_t lo = 0; lo < order.size(); lo += config.batch_size) {
        const std::size_t hi = std::min(order.size(), lo + config.batch_size);
        batch.clear();
        for (std::size_t i = lo; i < hi; ++i) {
          const auto& s = train_set[order[i]];
          batch.push_back({s.timestamps, s.true_lifetime()});
        }
        GradientResult gr =
            bptt_impl(weights, batch, {}, config.truncation, config.threads);
        if (!std::isfinite(gr.loss)) throw TrainingError("non-finite training loss");
        if (config.clip_norm > 0.0) {
          double sq = 0.0;
          for (auto t : gr.grad.tensors()) {
            for (double v : t) sq += v * v;
          }
          const double norm = std::sqrt(sq);
          if (norm > config.clip_norm) {
            const double f = config.clip_norm / norm;
            for (auto t : gr.grad.tensors()) {
              for (double& v : t) v *= f;
            }
          }
        }
        adam.step(weights, gr.grad, lr);
        train_loss += gr.loss;
        ++batches;
      }
    } catch (const TrainingError& e) {
      result.history.diverged = true;
      result.history.message = std::string(e.what()) + " in epoch " +
                               std::to_string(epoch);
      break;
    }

    const EvalScore score = evaluate(weights, eval_set, config.threads);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.learning_rate = lr;
    rec.train_loss = train_loss / static_cast<double>(batches);
    rec.eval_loss = score.loss;
    rec.eval_mape = score.mape;
    rec.wall_seconds = std::chrono::duration<double>(
                           std::chrono::steady_clock::now() - start)
                           .count();
    result.history.epochs.push_back(rec);
    if (!std::isfinite(score.loss)) {
      result.history.diverged = true;
      result.history.message = "non-finite eval loss in epoch " + std::to_string(epoch);
      break;
    }
    if (score.loss < best_loss) {
      best_loss = score.loss;
      best = weights;
      result.history.best_epoch = epoch;
    }
    if (config.verbose) {
      std::fprintf(stderr,
                   "epoch %3zu  lr %.6f  train %.6f  eval %.6f  mape %.4f  (%.0fs)\n",
                   epoch, lr, rec.train_loss, rec.eval_loss, rec.eval_mape,
                   rec.wall_seconds);
    }
  }
  best.train_seed = config.seed;
  result.weights = std::move(best);
  return result;
}

}  // namespace flim
