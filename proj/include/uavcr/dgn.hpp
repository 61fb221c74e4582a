#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "uavcr/autodiff.hpp"
#include "uavcr/environment.hpp"
#include "uavcr/errors.hpp"
#include "uavcr/rng.hpp"

namespace uavcr {

using ad::Matrix;
using ad::Vector;

struct DgnConfig {
  int obs_dim = 4;
  int hidden_dim = 128;
  int num_heads = 8;
  int key_dim = 16;
  int num_conv_layers = 2;
  int num_actions = kNumActions;
  double gamma = 0.95;
  double tau_scale = 0.0;          // attention temperature; 0 selects 1/sqrt(key_dim)
  double beta = 0.01;              // soft target update rate, applied every train step
  int batch_size = 32;
  int buffer_capacity = 100000;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  double epsilon_decay_fraction = 0.2;  // of all episodes
  double learning_rate = 1e-3;
  int warmup_transitions = 500;
  std::string optimizer = "sgd";   // "sgd" or "adam"
  double grad_clip = 0.0;          // global-norm clip, 0 disables

  double tau() const { return tau_scale > 0.0 ? tau_scale : 1.0 / std::sqrt(static_cast<double>(key_dim)); }

  void validate() const {
    if (!(obs_dim > 0 && hidden_dim > 0 && num_heads > 0 && key_dim > 0 && num_conv_layers >= 0 &&
          num_actions > 0)) {
      throw DomainError("DgnConfig: dimensions must be positive");
    }
    if (!(gamma >= 0.0 && gamma < 1.0)) throw DomainError("DgnConfig: gamma must lie in [0, 1)");
    if (!(beta > 0.0 && beta <= 1.0)) throw DomainError("DgnConfig: beta must lie in (0, 1]");
    if (!(batch_size > 0 && buffer_capacity >= batch_size && warmup_transitions >= 0)) {
      throw DomainError("DgnConfig: invalid batch size, buffer capacity or warmup");
    }
    if (!(epsilon_start >= 0.0 && epsilon_start <= 1.0 && epsilon_end >= 0.0 && epsilon_end <= 1.0 &&
          epsilon_decay_fraction >= 0.0 && epsilon_decay_fraction <= 1.0)) {
      throw DomainError("DgnConfig: epsilon schedule out of range");
    }
    if (!(learning_rate > 0.0 && grad_clip >= 0.0 && tau_scale >= 0.0)) {
      throw DomainError("DgnConfig: learning_rate, grad_clip and tau_scale must be non-negative");
    }
    if (optimizer != "sgd" && optimizer != "adam") throw DomainError("DgnConfig: optimizer must be sgd or adam");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DgnConfig, obs_dim, hidden_dim, num_heads, key_dim, num_conv_layers,
                                                num_actions, gamma, tau_scale, beta, batch_size, buffer_capacity,
                                                epsilon_start, epsilon_end, epsilon_decay_fraction, learning_rate,
                                                warmup_transitions, optimizer, grad_clip)

// All learnable weights. Shapes depend only on DgnConfig, never on the number
// of agents, so a network trained on 3-agent graphs evaluates 4-agent ones.
struct DgnParams {
  struct Head {
    Matrix wq, wk, wv;  // hidden x key_dim
  };
  struct ConvLayer {
    std::vector<Head> heads;
    Matrix w_out, b_out;  // (heads*key_dim) x hidden, 1 x hidden
  };

  Matrix enc_w1, enc_b1;  // obs_dim x hidden, 1 x hidden
  Matrix enc_w2, enc_b2;  // hidden x hidden, 1 x hidden
  std::vector<ConvLayer> conv;
  Matrix q_w, q_b;        // hidden*(1+layers) x actions, 1 x actions

  // Visits every tensor in checkpoint order with a stable name.
  template <class F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <class F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

  // Visits matching tensors of two same-shaped parameter sets.
  template <class F>
  static void zip(DgnParams& a, const DgnParams& b, F&& f) {
    std::vector<const Matrix*> rhs;
    b.for_each([&](const std::string&, const Matrix& m) { rhs.push_back(&m); });
    std::size_t k = 0;
    a.for_each([&](const std::string& name, Matrix& m) {
      if (k >= rhs.size()) throw DomainError("parameter sets differ in structure");
      f(name, m, *rhs[k++]);
    });
    if (k != rhs.size()) throw DomainError("parameter sets differ in structure");
  }

  std::size_t count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }

  DgnParams zeros_like() const {
    DgnParams z = *this;
    z.for_each([](const std::string&, Matrix& m) { m.setZero(); });
    return z;
  }

  bool same_shape(const DgnParams& other) const {
    std::vector<std::pair<Eigen::Index, Eigen::Index>> s1, s2;
    for_each([&](const std::string&, const Matrix& m) { s1.emplace_back(m.rows(), m.cols()); });
    other.for_each([&](const std::string&, const Matrix& m) { s2.emplace_back(m.rows(), m.cols()); });
    return s1 == s2;
  }

  bool operator==(const DgnParams& other) const {
    if (!same_shape(other)) return false;
    std::vector<const Matrix*> rhs;
    other.for_each([&](const std::string&, const Matrix& m) { rhs.push_back(&m); });
    std::size_t k = 0;
    bool eq = true;
    for_each([&](const std::string&, const Matrix& m) { eq = eq && m == *rhs[k++]; });
    return eq;
  }

 private:
  template <class Self, class F>
  static void visit(Self& p, F& f) {
    f(std::string("encoder.w1"), p.enc_w1);
    f(std::string("encoder.b1"), p.enc_b1);
    f(std::string("encoder.w2"), p.enc_w2);
    f(std::string("encoder.b2"), p.enc_b2);
    for (std::size_t l = 0; l < p.conv.size(); ++l) {
      const std::string layer = "conv" + std::to_string(l);
      for (std::size_t h = 0; h < p.conv[l].heads.size(); ++h) {
        const std::string head = layer + ".head" + std::to_string(h);
        f(head + ".wq", p.conv[l].heads[h].wq);
        f(head + ".wk", p.conv[l].heads[h].wk);
        f(head + ".wv", p.conv[l].heads[h].wv);
      }
      f(layer + ".w_out", p.conv[l].w_out);
      f(layer + ".b_out", p.conv[l].b_out);
    }
    f(std::string("q_head.w"), p.q_w);
    f(std::string("q_head.b"), p.q_b);
  }
};

// Zero-filled parameters with the shapes implied by cfg.
inline DgnParams make_params(const DgnConfig& cfg) {
  cfg.validate();
  DgnParams p;
  const int h = cfg.hidden_dim;
  p.enc_w1 = Matrix::Zero(cfg.obs_dim, h);
  p.enc_b1 = Matrix::Zero(1, h);
  p.enc_w2 = Matrix::Zero(h, h);
  p.enc_b2 = Matrix::Zero(1, h);
  p.conv.resize(cfg.num_conv_layers);
  for (auto& layer : p.conv) {
    layer.heads.resize(cfg.num_heads);
    for (auto& head : layer.heads) {
      head.wq = Matrix::Zero(h, cfg.key_dim);
      head.wk = Matrix::Zero(h, cfg.key_dim);
      head.wv = Matrix::Zero(h, cfg.key_dim);
    }
    layer.w_out = Matrix::Zero(cfg.num_heads * cfg.key_dim, h);
    layer.b_out = Matrix::Zero(1, h);
  }
  p.q_w = Matrix::Zero(h * (1 + cfg.num_conv_layers), cfg.num_actions);
  p.q_b = Matrix::Zero(1, cfg.num_actions);
  return p;
}

// Uniform fan-in initialisation (bound sqrt(6 / fan_in) for weights feeding a
// rectifier, sqrt(1 / fan_in) otherwise); biases start at zero.
inline DgnParams init_params(const DgnConfig& cfg, std::uint64_t seed) {
  DgnParams p = make_params(cfg);
  Rng rng(seed);
  auto fill = [&](Matrix& m, double gain) {
    const double bound = std::sqrt(gain / static_cast<double>(m.rows()));
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = rng.uniform(-bound, bound);
  };
  fill(p.enc_w1, 6.0);
  fill(p.enc_w2, 6.0);
  for (auto& layer : p.conv) {
    for (auto& head : layer.heads) {
      fill(head.wq, 1.0);
      fill(head.wk, 1.0);
      fill(head.wv, 1.0);
    }
    fill(layer.w_out, 6.0);
  }
  fill(p.q_w, 1.0);
  return p;
}

// Several graphs stacked into one disjoint union: agent rows concatenated and
// a block-diagonal adjacency mask, so attention never crosses graphs.
struct GraphBatch {
  Matrix obs;                    // total_agents x obs_dim
  Matrix mask;                   // total_agents x total_agents
  std::vector<int> offsets;      // first row of each graph, plus total at the end

  int num_graphs() const { return static_cast<int>(offsets.size()) - 1; }
  int total_agents() const { return offsets.empty() ? 0 : offsets.back(); }
};

inline Matrix observations_matrix(const std::vector<Observation>& obs) {
  Matrix m(static_cast<Eigen::Index>(obs.size()), static_cast<Eigen::Index>(Observation{}.size()));
  for (std::size_t i = 0; i < obs.size(); ++i)
    for (std::size_t k = 0; k < obs[i].size(); ++k) m(i, k) = obs[i][k];
  return m;
}

inline Matrix adjacency_matrix(const Adjacency& c) {
  Matrix m(c.size(), c.size());
  for (int i = 0; i < c.size(); ++i)
    for (int j = 0; j < c.size(); ++j) m(i, j) = c(i, j) ? 1.0 : 0.0;
  return m;
}

class GraphBatchBuilder {
 public:
  void add(const std::vector<Observation>& obs, const Adjacency& c) {
    if (static_cast<int>(obs.size()) != c.size()) throw DomainError("graph batch: observation/adjacency size mismatch");
    obs_.push_back(&obs);
    adj_.push_back(&c);
  }

  GraphBatch build() const {
    GraphBatch b;
    int total = 0;
    b.offsets.push_back(0);
    for (const auto* o : obs_) b.offsets.push_back(total += static_cast<int>(o->size()));
    b.obs = Matrix(total, static_cast<Eigen::Index>(Observation{}.size()));
    b.mask = Matrix::Zero(total, total);
    for (std::size_t g = 0; g < obs_.size(); ++g) {
      const int off = b.offsets[g];
      const auto& o = *obs_[g];
      const auto& c = *adj_[g];
      for (std::size_t i = 0; i < o.size(); ++i)
        for (std::size_t k = 0; k < o[i].size(); ++k) b.obs(off + i, k) = o[i][k];
      for (int i = 0; i < c.size(); ++i)
        for (int j = 0; j < c.size(); ++j) b.mask(off + i, off + j) = c(i, j) ? 1.0 : 0.0;
    }
    return b;
  }

 private:
  std::vector<const std::vector<Observation>*> obs_;
  std::vector<const Adjacency*> adj_;
};

// Records the network on `tape`. With grads == nullptr the parameters are
// constants; otherwise their gradients accumulate into the matching tensors
// of *grads on backward().
class DgnNetwork {
 public:
  DgnNetwork(ad::Tape& tape, const DgnConfig& cfg, const DgnParams& params, DgnParams* grads = nullptr)
      : tape_(tape), cfg_(cfg), params_(params), grads_(grads) {}

  ad::Var encode(ad::Var obs) {
    check_width(obs, cfg_.obs_dim, "encode: observation width");
    auto& t = tape_;
    ad::Var h = t.relu(t.add_row(t.matmul(obs, leaf(params_.enc_w1, grads_ ? &grads_->enc_w1 : nullptr)),
                                 leaf(params_.enc_b1, grads_ ? &grads_->enc_b1 : nullptr)));
    return t.relu(t.add_row(t.matmul(h, leaf(params_.enc_w2, grads_ ? &grads_->enc_w2 : nullptr)),
                            leaf(params_.enc_b2, grads_ ? &grads_->enc_b2 : nullptr)));
  }

  // Attention weights of one head over the masked neighbourhoods.
  ad::Var attention(ad::Var features, const Matrix& mask, int layer, int head) {
    const auto& hp = params_.conv.at(layer).heads.at(head);
    DgnParams::Head* hg = grads_ ? &grads_->conv[layer].heads[head] : nullptr;
    ad::Var q = tape_.matmul(features, leaf(hp.wq, hg ? &hg->wq : nullptr));
    ad::Var k = tape_.matmul(features, leaf(hp.wk, hg ? &hg->wk : nullptr));
    return tape_.masked_softmax(tape_.matmul_nt(q, k), mask, cfg_.tau());
  }

  // One graph convolution: per head, attention-weighted sum of value
  // projections over the neighbourhood; heads concatenated and passed
  // through a rectified affine layer.
  ad::Var conv_layer(ad::Var features, const Matrix& mask, int layer) {
    const auto& lp = params_.conv.at(layer);
    DgnParams::ConvLayer* lg = grads_ ? &grads_->conv[layer] : nullptr;
    std::vector<ad::Var> heads;
    heads.reserve(lp.heads.size());
    for (int m = 0; m < static_cast<int>(lp.heads.size()); ++m) {
      ad::Var alpha = attention(features, mask, layer, m);
      ad::Var v = tape_.matmul(features, leaf(lp.heads[m].wv, lg ? &lg->heads[m].wv : nullptr));
      heads.push_back(tape_.matmul(alpha, v));
    }
    ad::Var cat = tape_.hcat(heads);
    return tape_.relu(tape_.add_row(tape_.matmul(cat, leaf(lp.w_out, lg ? &lg->w_out : nullptr)),
                                    leaf(lp.b_out, lg ? &lg->b_out : nullptr)));
  }

  // rows x num_actions action values.
  ad::Var q_values(ad::Var obs, const Matrix& mask) {
    const Eigen::Index n = tape_.value(obs).rows();
    if (mask.rows() != n || mask.cols() != n) throw DomainError("q_values: adjacency shape mismatch");
    std::vector<ad::Var> skips;
    ad::Var h = encode(obs);
    skips.push_back(h);
    for (int l = 0; l < cfg_.num_conv_layers; ++l) {
      h = conv_layer(h, mask, l);
      skips.push_back(h);
    }
    ad::Var cat = tape_.hcat(skips);
    return tape_.add_row(tape_.matmul(cat, leaf(params_.q_w, grads_ ? &grads_->q_w : nullptr)),
                         leaf(params_.q_b, grads_ ? &grads_->q_b : nullptr));
  }

 private:
  ad::Var leaf(const Matrix& value, Matrix* grad) { return tape_.parameter(value, grad); }

  void check_width(ad::Var v, int width, const char* what) {
    if (tape_.value(v).cols() != width) throw DomainError(what);
  }

  ad::Tape& tape_;
  const DgnConfig& cfg_;
  const DgnParams& params_;
  DgnParams* grads_;
};

inline Matrix encode(const Observation& obs, const DgnConfig& cfg, const DgnParams& params) {
  ad::Tape tape(false);
  DgnNetwork net(tape, cfg, params);
  return tape.value(net.encode(tape.constant(observations_matrix({obs}))));
}

inline Matrix attention_scores(const Matrix& features, const Adjacency& c, int layer, int head, const DgnConfig& cfg,
                               const DgnParams& params) {
  ad::Tape tape(false);
  DgnNetwork net(tape, cfg, params);
  return tape.value(net.attention(tape.constant(features), adjacency_matrix(c), layer, head));
}

inline Matrix conv_layer(const Matrix& features, const Adjacency& c, int layer, const DgnConfig& cfg,
                         const DgnParams& params) {
  ad::Tape tape(false);
  DgnNetwork net(tape, cfg, params);
  return tape.value(net.conv_layer(tape.constant(features), adjacency_matrix(c), layer));
}

// N x num_actions action values for one graph.
inline Matrix q_values(const std::vector<Observation>& obs, const Adjacency& c, const DgnConfig& cfg,
                       const DgnParams& params) {
  if (static_cast<int>(obs.size()) != c.size()) throw DomainError("q_values: observation/adjacency size mismatch");
  ad::Tape tape(false);
  DgnNetwork net(tape, cfg, params);
  return tape.value(net.q_values(tape.constant(observations_matrix(obs)), adjacency_matrix(c)));
}

inline int argmax_lowest(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  int best = 0;
  for (int a = 1; a < row.size(); ++a)
    if (row(a) > row(best)) best = a;
  return best;
}

// epsilon-greedy per agent: uniform random action with probability epsilon,
// otherwise the greedy action with ties going to the lowest index.
inline std::vector<Action> select_actions(const Matrix& q, double epsilon, Rng& rng) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw DomainError("select_actions: epsilon must lie in [0, 1]");
  std::vector<Action> out;
  out.reserve(static_cast<std::size_t>(q.rows()));
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    if (epsilon > 0.0 && rng.uniform01() < epsilon) {
      out.push_back(static_cast<Action>(rng.below(static_cast<std::uint64_t>(q.cols()))));
    } else {
      out.push_back(static_cast<Action>(argmax_lowest(q.row(i))));
    }
  }
  return out;
}

}  // namespace uavcr
