#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "uavcr/autodiff.hpp"
#include "uavcr/dgn.hpp"
#include "uavcr/environment.hpp"
#include "uavcr/errors.hpp"
#include "uavcr/rng.hpp"

namespace uavcr {

// (O, A, O', R, C) plus an end-of-episode flag. C is the adjacency observed
// together with O and is reused for O' when computing targets.
struct Transition {
  std::vector<Observation> obs;
  std::vector<int> actions;
  std::vector<Observation> next_obs;
  std::vector<double> rewards;
  Adjacency adjacency;
  bool terminal = false;

  int num_agents() const { return static_cast<int>(obs.size()); }

  void validate() const {
    const std::size_t n = obs.size();
    if (n == 0 || actions.size() != n || next_obs.size() != n || rewards.size() != n ||
        static_cast<std::size_t>(adjacency.size()) != n) {
      throw DomainError("Transition: inconsistent agent count across fields");
    }
  }
};

// Fixed-capacity ring buffer; the oldest transition is overwritten first.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw DomainError("ReplayBuffer: capacity must be positive");
    data_.reserve(std::min<std::size_t>(capacity, 1 << 16));
  }

  void store(Transition t) {
    t.validate();
    if (data_.size() < capacity_) {
      data_.push_back(std::move(t));
    } else {
      data_[head_] = std::move(t);
      head_ = (head_ + 1) % capacity_;
    }
  }

  // Uniform sampling with replacement.
  std::vector<const Transition*> sample(std::size_t count, Rng& rng) const {
    if (data_.size() < count || count == 0) throw StateError("ReplayBuffer::sample: not enough transitions");
    std::vector<const Transition*> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) out.push_back(&data_[rng.below(data_.size())]);
    return out;
  }

  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }

  // i-th transition in insertion order, 0 = oldest still held.
  const Transition& at(std::size_t i) const { return data_.at((head_ + i) % data_.size()); }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;  // oldest element once full
  std::vector<Transition> data_;
};

using Batch = std::vector<const Transition*>;

// y_i = R_i + gamma * max_a Q_target(O', C, a)_i with C the stored adjacency;
// terminal transitions use y_i = R_i.
inline std::vector<std::vector<double>> td_targets(const Batch& batch, const DgnParams& target, const DgnConfig& cfg) {
  if (batch.empty()) throw DomainError("td_targets: empty batch");
  GraphBatchBuilder builder;
  for (const auto* t : batch) builder.add(t->next_obs, t->adjacency);
  const GraphBatch gb = builder.build();
  ad::Tape tape(false);
  DgnNetwork net(tape, cfg, target);
  const Matrix q = tape.value(net.q_values(tape.constant(gb.obs), gb.mask));

  std::vector<std::vector<double>> y(batch.size());
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const Transition& t = *batch[s];
    y[s].resize(t.rewards.size());
    for (int i = 0; i < t.num_agents(); ++i) {
      y[s][i] = t.rewards[i];
      if (!t.terminal && cfg.gamma > 0.0) y[s][i] += cfg.gamma * q.row(gb.offsets[s] + i).maxCoeff();
    }
  }
  return y;
}

// Mean over samples of the mean over agents of (y_i - Q(O, C, a_i))^2.
// Gradients are added into *grads when it is non-null.
inline double td_loss(const Batch& batch, const std::vector<std::vector<double>>& y, const DgnParams& params,
                      const DgnConfig& cfg, DgnParams* grads) {
  GraphBatchBuilder builder;
  for (const auto* t : batch) builder.add(t->obs, t->adjacency);
  const GraphBatch gb = builder.build();
  const int rows = gb.total_agents();
  Vector target(rows), weights(rows);
  std::vector<int> taken(rows);
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const Transition& t = *batch[s];
    const double w = 1.0 / (static_cast<double>(batch.size()) * t.num_agents());
    for (int i = 0; i < t.num_agents(); ++i) {
      const int r = gb.offsets[s] + i;
      target(r) = y[s][i];
      weights(r) = w;
      taken[r] = t.actions[i];
    }
  }
  ad::Tape tape(grads != nullptr);
  DgnNetwork net(tape, cfg, params, grads);
  ad::Var q = net.q_values(tape.constant(gb.obs), gb.mask);
  ad::Var loss = tape.weighted_squared_error(tape.pick(q, taken), target, weights);
  if (grads) tape.backward(loss);
  return tape.value(loss)(0, 0);
}

// theta' <- beta * theta + (1 - beta) * theta'
inline void soft_update(const DgnParams& online, DgnParams& target, double beta) {
  if (!online.same_shape(target)) throw DomainError("soft_update: parameter shapes differ");
  DgnParams::zip(target, online, [beta](const std::string&, Matrix& t, const Matrix& o) {
    if (beta == 1.0) {
      t = o;
    } else if (beta != 0.0) {
      t = beta * o + (1.0 - beta) * t;
    }
  });
}

class Optimizer {
 public:
  Optimizer(const DgnConfig& cfg, const DgnParams& shape)
      : adam_(cfg.optimizer == "adam"), lr_(cfg.learning_rate) {
    if (adam_) {
      m_ = shape.zeros_like();
      v_ = shape.zeros_like();
    }
  }

  void apply(DgnParams& params, const DgnParams& grads) {
    if (!adam_) {
      DgnParams::zip(params, grads, [this](const std::string&, Matrix& p, const Matrix& g) { p -= lr_ * g; });
      return;
    }
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, t_);
    const double c2 = 1.0 - std::pow(kBeta2, t_);
    std::vector<Matrix*> ms, vs;
    m_.for_each([&](const std::string&, Matrix& m) { ms.push_back(&m); });
    v_.for_each([&](const std::string&, Matrix& v) { vs.push_back(&v); });
    std::size_t k = 0;
    DgnParams::zip(params, grads, [&](const std::string&, Matrix& p, const Matrix& g) {
      Matrix& m = *ms[k];
      Matrix& v = *vs[k];
      ++k;
      m = kBeta1 * m + (1.0 - kBeta1) * g;
      v = kBeta2 * v + (1.0 - kBeta2) * g.cwiseProduct(g);
      p.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + kEps);
    });
  }

  long steps() const { return t_; }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  bool adam_;
  double lr_;
  long t_ = 0;
  DgnParams m_, v_;
};

inline double global_norm(const DgnParams& g) {
  double s = 0.0;
  g.for_each([&](const std::string&, const Matrix& m) { s += m.squaredNorm(); });
  return std::sqrt(s);
}

// Samples a minibatch, evaluates the TD loss against the target network,
// backpropagates and applies one optimizer step. Parameters are left untouched
// when the loss or any gradient is non-finite.
inline double train_step(const ReplayBuffer& buffer, DgnParams& params, const DgnParams& target,
                         const DgnConfig& cfg, Optimizer& opt, Rng& rng) {
  const auto need = static_cast<std::size_t>(std::max(cfg.batch_size, cfg.warmup_transitions));
  if (buffer.size() < need) throw StateError("train_step: replay buffer holds fewer than max(batch, warmup) transitions");
  const Batch batch = buffer.sample(static_cast<std::size_t>(cfg.batch_size), rng);
  const auto y = td_targets(batch, target, cfg);
  DgnParams grads = params.zeros_like();
  const double loss = td_loss(batch, y, params, cfg, &grads);

  if (!std::isfinite(loss)) {
    std::ostringstream msg;
    msg << "non-finite TD loss (" << loss << ") after " << opt.steps() << " optimizer steps";
    throw TrainingError(msg.str());
  }
  grads.for_each([&](const std::string& name, const Matrix& g) {
    if (!g.allFinite()) throw TrainingError("non-finite gradient in tensor " + name);
  });
  if (cfg.grad_clip > 0.0) {
    const double norm = global_norm(grads);
    if (norm > cfg.grad_clip) {
      const double scale = cfg.grad_clip / norm;
      grads.for_each([scale](const std::string&, Matrix& g) { g *= scale; });
    }
  }
  opt.apply(params, grads);
  return loss;
}

}  // namespace uavcr
