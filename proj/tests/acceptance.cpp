// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
//
//   uavcr_acceptance [--out DIR] [--config desk_scale.json] [--only 5,6,7]
//
// Criteria 1-4 and 11 train networks with the desk-scale config; 5-10 are
// deterministic oracle suites.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gradcheck.hpp"
#include "uavcr/uavcr.hpp"

#ifndef UAVCR_DESK_CONFIG
#define UAVCR_DESK_CONFIG "configs/desk_scale.json"
#endif

namespace fs = std::filesystem;
using namespace uavcr;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s << std::setprecision(prec) << v;
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path);
  return config_from_json(nlohmann::json::parse(in));
}

// ---- training-based criteria (1-4) --------------------------------------

struct TrainingRuns {
  bool ran = false;
  std::string error;
  TrainSummary three;
  EvalSummary eval;
  EvalSummary base;
  TrainSummary four;
  std::string four_error;
  double seconds_three = 0.0;
  double seconds_four = 0.0;
};

TrainingRuns run_training(const RunConfig& desk, const fs::path& out) {
  TrainingRuns r;
  r.ran = true;
  std::ofstream log(out / "training.log");
  try {
    RunConfig three = desk;
    three.run.agents = 3;
    three.run.out_dir = (out / "three").string();
    const auto t0 = std::chrono::steady_clock::now();
    r.three = cmd_train(three, log);
    r.seconds_three = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    RunConfig ev = three;
    ev.run.eval_episodes = 200;
    ev.run.checkpoint_in = r.three.checkpoint;
    r.eval = cmd_evaluate(ev, log);
    r.base = cmd_baseline(ev, log);
  } catch (const std::exception& e) {
    r.error = e.what();
    return r;
  }
  try {
    RunConfig four = desk;
    four.run.agents = 4;
    four.run.episodes = 500;
    four.run.checkpoint_in = r.three.checkpoint;
    four.run.out_dir = (out / "four").string();
    const auto t0 = std::chrono::steady_clock::now();
    r.four = cmd_train(four, log);
    r.seconds_four = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  } catch (const std::exception& e) {
    r.four_error = e.what();
  }
  return r;
}

Outcome criterion1(const TrainingRuns& r) {
  if (!r.error.empty()) return {false, "training/evaluation failed: " + r.error};
  const double agent = r.eval.report.mean_loss_count;
  const double base = r.base.report.mean_loss_count;
  bool paired = r.eval.metrics.size() == r.base.metrics.size();
  for (std::size_t k = 0; paired && k < r.eval.metrics.size(); ++k)
    paired = r.eval.metrics[k].scenario_seed == r.base.metrics[k].scenario_seed;
  const bool pass = paired && r.eval.metrics.size() == 200 && agent <= 0.5 * base;
  return {pass, "mean loss_count " + fmt(agent) + " vs baseline " + fmt(base) + " (ratio " + fmt(agent / base) +
                    ", limit 0.5), solved " + std::to_string(r.eval.report.solved_count) + "/200, train " +
                    fmt(r.seconds_three, 3) + " s"};
}

Outcome criterion2(const TrainingRuns& r) {
  if (!r.error.empty()) return {false, "training/evaluation failed: " + r.error};
  const int nmac = r.eval.report.nmac_total;
  return {nmac <= 1, "NMAC events over 200 evaluation episodes: " + std::to_string(nmac) + " (limit 1; baseline " +
                         std::to_string(r.base.report.nmac_total) + ")"};
}

Outcome criterion3(const TrainingRuns& r) {
  if (!r.error.empty()) return {false, "3-agent stage failed: " + r.error};
  if (!r.four_error.empty()) return {false, "4-agent stage failed: " + r.four_error};
  bool finite = r.four.metrics.size() == 500;
  int trained = 0;
  for (const auto& m : r.four.metrics) {
    finite = finite && std::isfinite(m.mean_td_loss) && std::isfinite(m.cumulative_reward);
    trained += m.train_steps;
  }
  const DgnParams a = read_checkpoint(r.three.checkpoint).params;
  const DgnParams b = read_checkpoint(r.four.checkpoint).params;
  const bool same_shape = a.same_shape(b);
  return {finite && same_shape && trained > 0,
          std::to_string(r.four.metrics.size()) + " episodes, " + std::to_string(trained) +
              " train steps, all losses finite: " + (finite ? "yes" : "no") +
              ", shapes unchanged: " + (same_shape ? "yes" : "no") + ", " + fmt(r.seconds_four, 3) + " s"};
}

Outcome criterion4(const TrainingRuns& r) {
  if (!r.error.empty()) return {false, "training failed: " + r.error};
  double max_agent = -1e300, max_cum = -1e300;
  std::size_t rows = 0;
  for (const auto* run : {&r.three, &r.four}) {
    for (const auto& m : run->metrics) {
      max_agent = std::max(max_agent, m.max_agent_reward);
      max_cum = std::max(max_cum, m.cumulative_reward);
      ++rows;
    }
  }
  return {rows > 0 && max_agent <= 0.0 && max_cum <= 0.0,
          std::to_string(rows) + " training episodes, max per-agent reward " + fmt(max_agent, 6) +
              ", max cumulative reward " + fmt(max_cum, 6)};
}

// ---- oracle suites (5-10) ---------------------------------------------------

Outcome criterion5() {
  Rng rng(derive_seed(5, 0, 0));
  const SeparationConfig sep;
  double worst_d = 0.0, worst_t = 0.0, worst_window = 0.0;
  int pairs = 0;
  while (pairs < 1000) {
    const UavState a(rng.uniform(-500, 500), rng.uniform(-500, 500), rng.uniform(0, 360), rng.uniform(8, 15));
    const UavState b(rng.uniform(-500, 500), rng.uniform(-500, 500), rng.uniform(0, 360), rng.uniform(8, 15));
    const Vec2 p = b.position() - a.position();
    const Vec2 v = b.velocity() - a.velocity();
    // Near-parallel equal-speed pairs have no resolvable minimum in time.
    if (v.norm() < 0.5) continue;
    ++pairs;
    // Dense 1 ms scan over a window that must contain the minimiser:
    // |t_cpa| <= |p| / |v|.
    const long half = static_cast<long>(std::ceil((p.norm() / v.norm() + 1.0) * 1000.0));
    double best = 1e300, best_t = 0.0;
    for (long k = -half; k <= half; ++k) {
      const double t = k * 1e-3;
      const Vec2 d = p + v * t;
      const double d2 = d.squaredNorm();
      if (d2 < best) {
        best = d2;
        best_t = t;
      }
    }
    // Window minimum over [0, t_la].
    double best_w = 1e300;
    for (long k = 0; k <= 8000; ++k) best_w = std::min(best_w, (p + v * (k * 1e-3)).squaredNorm());

    const CpaResult c = assess_pair(a, b, sep);
    worst_d = std::max(worst_d, std::abs(c.d_cpa - std::sqrt(best)));
    worst_t = std::max(worst_t, std::abs(c.t_cpa - best_t));
    worst_window = std::max(worst_window, std::abs(c.d_min_window - std::sqrt(best_w)));
  }
  const bool pass = worst_d <= 0.1 && worst_t <= 1e-3 + 1e-9 && worst_window <= 0.1;
  return {pass, "1000 pairs, max |d_cpa err| " + fmt(worst_d, 3) + " m, max |t_cpa err| " + fmt(worst_t, 3) +
                    " s, max window-min err " + fmt(worst_window, 3) + " m"};
}

Outcome criterion6() {
  const SeparationConfig sep;
  int scenarios = 0, pairs = 0, failures = 0;
  double worst_t = 0.0, worst_d = 0.0;
  std::string first_failure;
  for (int agents : {3, 4}) {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      ScenarioConfig cfg;
      cfg.target = agents;
      cfg.seed = derive_seed(6, static_cast<std::uint64_t>(agents), seed);
      const Scenario s = generate(cfg, sep);
      ++scenarios;
      bool ok = static_cast<int>(s.states.size()) == agents;
      // Straight-line replay on a 1 ms grid.
      const auto n = s.states.size();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
          const Vec2 p = s.states[j].position() - s.states[i].position();
          const Vec2 v = s.states[j].velocity() - s.states[i].velocity();
          for (long k = 0; k <= 8000; ++k) {
            if ((p + v * (k * 1e-3)).norm() < sep.r_separation) {
              ok = false;
              break;
            }
          }
        }
      }
      for (const auto& dp : s.designed_pairs) {
        ++pairs;
        const Vec2 p = s.states[dp.b].position() - s.states[dp.a].position();
        const Vec2 v = s.states[dp.b].velocity() - s.states[dp.a].velocity();
        double first = -1.0, min_d = 1e300;
        for (long k = 0; k <= 60000; ++k) {
          const double t = k * 1e-3;
          const double d = (p + v * t).norm();
          if (first < 0.0 && d < sep.r_separation) first = t;
          min_d = std::min(min_d, d);
        }
        const double et = first < 0.0 ? 1e9 : std::abs(first - 15.0);
        const double ed = std::abs(min_d - dp.d_cpa);
        worst_t = std::max(worst_t, et);
        worst_d = std::max(worst_d, ed);
        if (et > 0.05 || ed > 0.5) ok = false;
      }
      if (!ok) {
        ++failures;
        if (first_failure.empty())
          first_failure = " first failure: agents=" + std::to_string(agents) + " seed=" + std::to_string(cfg.seed);
      }
    }
  }
  return {failures == 0, std::to_string(scenarios) + " scenarios, " + std::to_string(pairs) +
                             " designed pairs, max |first LOSS - 15 s| " + fmt(worst_t, 3) +
                             " s, max |min dist - d_cpa| " + fmt(worst_d, 3) + " m, failures " +
                             std::to_string(failures) + first_failure};
}

Outcome criterion7() {
  const double r = separation_radius(4.0, 15.0, std::numbers::pi / 2.0, 15.0);
  return {std::abs(r - 238.55) <= 0.01,
          "separation_radius = " + fmt(r, 8) + " m (operational threshold " +
              fmt(SeparationConfig{}.r_separation) + " m)"};
}

DgnConfig small_dgn() {
  DgnConfig cfg;
  cfg.hidden_dim = 8;
  cfg.num_heads = 2;
  cfg.key_dim = 4;
  cfg.batch_size = 3;
  cfg.warmup_transitions = 0;
  return cfg;
}

// Transitions from real environment rollouts, so adjacencies carry edges.
std::vector<Transition> sample_transitions(int agents, int count, std::uint64_t seed) {
  std::vector<Transition> out;
  Rng rng(seed);
  ScenarioConfig sc;
  sc.target = agents;
  sc.seed = seed;
  Environment env;
  StepResult cur = env.reset(generate(sc, SeparationConfig{}));
  while (static_cast<int>(out.size()) < count && !cur.done) {
    std::vector<Action> acts;
    for (int i = 0; i < agents; ++i) acts.push_back(static_cast<Action>(rng.below(3)));
    StepResult next = env.step(acts);
    Transition t;
    t.obs = cur.observations;
    t.next_obs = next.observations;
    t.rewards = next.rewards;
    t.adjacency = cur.adjacency;
    t.terminal = next.done;
    for (Action a : acts) t.actions.push_back(static_cast<int>(a));
    // Keep only transitions with at least one conflict edge once we have one
    // of each kind, so attention gradients are exercised.
    bool edge = false;
    for (int i = 0; i < agents; ++i) edge = edge || cur.adjacency.degree(i) > 0;
    if (edge || out.empty()) out.push_back(std::move(t));
    cur = std::move(next);
  }
  return out;
}

Outcome criterion8() {
  const DgnConfig cfg = small_dgn();
  DgnParams p = init_params(cfg, 81);
  const DgnParams target = init_params(cfg, 82);
  std::vector<Transition> ts = sample_transitions(3, 2, 83);
  for (auto& t : sample_transitions(4, 2, 84)) ts.push_back(std::move(t));
  // Guarantee one fully connected graph regardless of what the rollout gave.
  Transition dense = ts.back();
  for (int i = 0; i < dense.adjacency.size(); ++i)
    for (int j = 0; j < dense.adjacency.size(); ++j) dense.adjacency.set(i, j, true);
  ts.push_back(dense);
  Batch batch;
  for (const auto& t : ts) batch.push_back(&t);
  const auto y = td_targets(batch, target, cfg);

  DgnParams g = p.zeros_like();
  td_loss(batch, y, p, cfg, &g);
  std::vector<const Matrix*> analytic;
  g.for_each([&](const std::string&, const Matrix& m) { analytic.push_back(&m); });
  std::size_t k = 0, passed = 0;
  double worst = 0.0;
  std::string worst_name;
  p.for_each([&](const std::string& name, Matrix& m) {
    const Matrix numeric = testing::numeric_gradient([&] { return td_loss(batch, y, p, cfg, nullptr); }, m, 1e-4);
    const Matrix& a = *analytic[k++];
    const double err = testing::relative_error(a.size() ? a : Matrix::Zero(m.rows(), m.cols()), numeric);
    if (err < 1e-3) ++passed;
    if (err >= worst) {
      worst = err;
      worst_name = name;
    }
  });
  return {passed == k && k > 0, std::to_string(passed) + "/" + std::to_string(k) + " tensors pass, worst rel. err " +
                                    fmt(worst, 3) + " (" + worst_name + ")"};
}

Adjacency random_graph(Rng& rng, int n) {
  Adjacency c = Adjacency::identity(n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (rng.below(2)) {
        c.set(i, j, true);
        c.set(j, i, true);
      }
  return c;
}

std::vector<Observation> random_obs(Rng& rng, int n) {
  std::vector<Observation> o(n);
  for (auto& x : o)
    for (double& v : x) v = rng.uniform01();
  return o;
}

Matrix encode_rows(const std::vector<Observation>& obs, const DgnConfig& cfg, const DgnParams& p) {
  ad::Tape tape(false);
  DgnNetwork net(tape, cfg, p);
  return tape.value(net.encode(tape.constant(observations_matrix(obs))));
}

Outcome criterion9() {
  DgnConfig cfg;
  cfg.hidden_dim = 64;
  cfg.num_heads = 4;
  const DgnParams p = init_params(cfg, 91);
  Rng rng(92);

  double worst_row = 0.0;
  bool mask_ok = true;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(8));
    const Adjacency c = random_graph(rng, n);
    const Matrix feats = encode_rows(random_obs(rng, n), cfg, p);
    for (int layer = 0; layer < cfg.num_conv_layers; ++layer) {
      for (int head = 0; head < cfg.num_heads; ++head) {
        const Matrix a = attention_scores(feats, c, layer, head, cfg, p);
        for (int i = 0; i < n; ++i) {
          worst_row = std::max(worst_row, std::abs(a.row(i).sum() - 1.0));
          for (int j = 0; j < n; ++j) mask_ok = mask_ok && (c(i, j) || a(i, j) == 0.0);
        }
      }
    }
  }

  double worst_perm = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 3 + static_cast<int>(rng.below(4));
    const auto obs = random_obs(rng, n);
    const Adjacency c = random_graph(rng, n);
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Observation> op(n);
    Adjacency cp = Adjacency::identity(n);
    for (int i = 0; i < n; ++i) {
      op[i] = obs[perm[i]];
      for (int j = 0; j < n; ++j) cp.set(i, j, c(perm[i], perm[j]));
    }
    const Matrix q = q_values(obs, c, cfg, p);
    const Matrix qp = q_values(op, cp, cfg, p);
    for (int i = 0; i < n; ++i) worst_perm = std::max(worst_perm, (qp.row(i) - q.row(perm[i])).cwiseAbs().maxCoeff());
  }

  // Locality: with identity adjacency, an agent's Q row equals its value
  // evaluated alone and does not move when others change.
  double worst_local = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(5));
    auto obs = random_obs(rng, n);
    const Matrix q = q_values(obs, Adjacency::identity(n), cfg, p);
    for (int i = 0; i < n; ++i)
      worst_local = std::max(worst_local,
                             (q.row(i) - q_values({obs[i]}, Adjacency::identity(1), cfg, p)).cwiseAbs().maxCoeff());
    const auto other = random_obs(rng, n);
    for (int i = 1; i < n; ++i) obs[i] = other[i];
    const Matrix q2 = q_values(obs, Adjacency::identity(n), cfg, p);
    worst_local = std::max(worst_local, (q2.row(0) - q.row(0)).cwiseAbs().maxCoeff());
  }

  const bool pass = worst_row <= 1e-9 && mask_ok && worst_perm <= 1e-9 && worst_local <= 1e-9;
  return {pass, "max |row sum - 1| " + fmt(worst_row, 3) + ", masked entries zero: " + (mask_ok ? "yes" : "no") +
                    ", 50 relabelings max dev " + fmt(worst_perm, 3) + ", identity-adjacency locality max dev " +
                    fmt(worst_local, 3)};
}

Outcome criterion10() {
  const DgnConfig cfg = small_dgn();
  const DgnParams target = init_params(cfg, 101);
  // Head-on pair 420 m apart closing at 20 m/s: no predicted conflict now
  // (window minimum 260 m), but one after the 2 s step (220 m).
  Scenario sc;
  sc.states = {UavState(0, 0, 90, 10), UavState(420, 0, 270, 10), UavState(0, 3000, 0, 10)};
  Environment env;
  const StepResult cur = env.reset(sc);
  const std::vector<Action> acts(3, Action::DoNothing);
  StepResult next = env.step(acts);

  Transition t;
  t.obs = cur.observations;
  t.next_obs = next.observations;
  t.rewards = next.rewards;
  t.adjacency = cur.adjacency;
  t.actions.assign(3, static_cast<int>(Action::DoNothing));
  const bool changed = !(cur.adjacency == next.adjacency);

  const auto y0 = td_targets({&t}, target, cfg);
  // Mutate the live adjacency further (all edges on) and take another step.
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) next.adjacency.set(i, j, true);
  env.step(acts);
  const auto y1 = td_targets({&t}, target, cfg);

  // Independent evaluation with the stored C versus the live C.
  const Matrix q_stored = q_values(t.next_obs, t.adjacency, cfg, target);
  const Matrix q_live = q_values(t.next_obs, next.adjacency, cfg, target);
  bool exact = y0 == y1;
  bool matches_stored = true;
  for (int i = 0; i < 3; ++i) matches_stored = matches_stored && y0[0][i] == t.rewards[i] + cfg.gamma * q_stored.row(i).maxCoeff();
  const bool live_differs = !(q_live == q_stored);
  return {changed && exact && matches_stored && live_differs,
          std::string("adjacency changed between t and t+1: ") + (changed ? "yes" : "no") +
              ", targets unchanged after mutating live C: " + (exact ? "yes" : "no") +
              ", targets equal stored-C evaluation: " + (matches_stored ? "yes" : "no") +
              ", live C would give different values: " + (live_differs ? "yes" : "no")};
}

Outcome criterion11(const RunConfig& desk, const fs::path& out) {
  RunConfig cfg = desk;
  cfg.run.episodes = 10;
  cfg.run.agents = 3;
  // Start learning early so the comparison covers gradient steps too.
  cfg.dgn.warmup_transitions = cfg.dgn.batch_size;
  std::ostringstream log;
  cfg.run.out_dir = (out / "determinism_a").string();
  const TrainSummary a = cmd_train(cfg, log);
  cfg.run.out_dir = (out / "determinism_b").string();
  const TrainSummary b = cmd_train(cfg, log);
  const std::string ca = slurp(a.metrics_csv);
  const std::string cb = slurp(b.metrics_csv);
  const bool rows = std::count(ca.begin(), ca.end(), '\n') == 11;
  const bool ck = slurp(a.checkpoint) == slurp(b.checkpoint);
  return {ca == cb && rows && ck, "metrics.csv " + std::to_string(ca.size()) + " bytes, identical: " +
                                      (ca == cb ? "yes" : "no") + ", checkpoints identical: " + (ck ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string out = "acceptance_out";
  std::string config = UAVCR_DESK_CONFIG;
  std::vector<int> only;
  app.add_option("--out", out, "working directory for training artifacts");
  app.add_option("--config", config, "desk-scale run configuration");
  app.add_option("--only", only, "run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::set<int> selected(only.begin(), only.end());
  auto wanted = [&](int c) { return selected.empty() || selected.count(c) > 0; };

  fs::create_directories(out);
  RunConfig desk;
  try {
    desk = load_config(config);
    desk.validate();
  } catch (const std::exception& e) {
    std::cerr << "cannot load " << config << ": " << e.what() << '\n';
    return 2;
  }

  const std::map<int, std::string> names{
      {1, "3-agent learning signal"},   {2, "NMAC safety"},          {3, "curriculum retraining"},
      {4, "reward ceiling"},            {5, "CPA oracle"},           {6, "scenario contract"},
      {7, "separation radius"},         {8, "gradient correctness"}, {9, "attention invariants"},
      {10, "frozen adjacency targets"}, {11, "determinism"}};

  TrainingRuns runs;
  if (wanted(1) || wanted(2) || wanted(3) || wanted(4)) runs = run_training(desk, out);

  nlohmann::json report = nlohmann::json::array();
  int failed = 0;
  for (const auto& [id, name] : names) {
    if (!wanted(id)) continue;
    Outcome o;
    try {
      switch (id) {
        case 1: o = criterion1(runs); break;
        case 2: o = criterion2(runs); break;
        case 3: o = criterion3(runs); break;
        case 4: o = criterion4(runs); break;
        case 5: o = criterion5(); break;
        case 6: o = criterion6(); break;
        case 7: o = criterion7(); break;
        case 8: o = criterion8(); break;
        case 9: o = criterion9(); break;
        case 10: o = criterion10(); break;
        case 11: o = criterion11(desk, out); break;
      }
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << "criterion " << std::setw(2) << id << " " << (o.pass ? "PASS" : "FAIL") << "  " << name << ": "
              << o.detail << std::endl;
    report.push_back({{"criterion", id}, {"name", name}, {"pass", o.pass}, {"detail", o.detail}});
  }
  std::ofstream(fs::path(out) / "acceptance_report.json") << report.dump(2) << '\n';
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed == 0 ? 0 : 1;
}
