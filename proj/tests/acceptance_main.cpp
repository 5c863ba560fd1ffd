// Acceptance gate: one labeled pass/fail line per criterion, nonzero exit
// when any gated criterion fails. The dependence-recovery score is reported
// but does not gate.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "b2mapo/batch.hpp"
#include "b2mapo/exact.hpp"
#include "b2mapo/game.hpp"
#include "b2mapo/harness.hpp"
#include "b2mapo/optimizer.hpp"
#include "b2mapo/policies.hpp"
#include "b2mapo/rng.hpp"
#include "b2mapo/rollout.hpp"
#include "b2mapo/scheduler.hpp"
#include "b2mapo/verify.hpp"

using namespace b2mapo;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

std::vector<double> snapshot_logits(const PolicySet& set) {
  std::vector<double> out;
  for (const auto& c : set.conditioned)
    out.insert(out.end(), c.table->logits.begin(), c.table->logits.end());
  return out;
}

void perturb_set(PolicySet& set, double scale, Rng& rng) {
  for (auto& c : set.conditioned)
    for (double& v : c.table->logits) v += scale * rng.normal();
  for (auto& p : set.independent)
    for (double& v : p.table->logits) v += scale * rng.normal();
}

/* Relative error with a floor: central differences at h = 1e-5 carry noise
 * around 1e-9, so gradients below the floor are compared absolutely. */
double grad_error(double analytic, double numeric) {
  const double denom =
      std::max({std::fabs(analytic), std::fabs(numeric), 1e-3});
  return std::fabs(analytic - numeric) / denom;
}

double central_diff(double& coord, const std::function<double()>& f, double h) {
  const double saved = coord;
  coord = saved + h;
  const double up = f();
  coord = saved - h;
  const double down = f();
  coord = saved;
  return (up - down) / (2.0 * h);
}

// ---------------------------------------------------------------- criterion 1

Outcome criterion_bound_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<BoundReport> reports = run_bound_suite(SuiteCounts{}, 0);
  const double secs = seconds_since(t0);
  std::size_t failed = 0;
  for (const auto& r : reports)
    if (!r.pass) ++failed;
  const bool in_time = secs < 300.0;
  std::ostringstream d;
  d << reports.size() << " checks, " << failed << " violations, " << fmt(secs)
    << "s (limit 300s)";
  return {failed == 0 && in_time, d.str()};
}

// ---------------------------------------------------------------- criterion 2

double reduction_gae_diff() {
  double worst = 0.0;
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    MarkovGame game = build_random_game(3, 4, 2, 0.9, seed);
    PolicySet set = make_policy_set(game, BatchSequence::singletons({0, 1, 2}));
    Rng rng(derive_seed(seed, 1));
    perturb_set(set, 0.7, rng);
    TrajectoryBatch traj =
        collect_rollouts(game, set, set.sequence, 8, 16, derive_seed(seed, 2));
    std::vector<double> v = fit_value_table(traj, game.n_states, game.gamma);
    const JointPolicy joint = set.to_joint_table(game);
    AdvantageEstimate plain = gae(traj, v, game.gamma, 0.9);
    AdvantageEstimate corrected =
        corrected_advantage(game, traj, v, joint, joint, game.gamma, 0.9);
    for (std::size_t e = 0; e < plain.values.size(); ++e)
      for (std::size_t t = 0; t < plain.values[e].size(); ++t)
        worst = std::max(worst,
                         std::fabs(plain.values[e][t] - corrected.values[e][t]));
  }
  return worst;
}

bool reduction_mappo_bitwise() {
  MarkovGame game = build_dependency_chain_game(3, 0.6, 61);
  SchemeConfig config;
  config.mode = Mode::mappo;
  config.n_episodes = 8;
  config.horizon = 16;
  config.distill_period = 100;
  const std::uint64_t seed = 62;

  Trainer trainer(game, config, seed);
  for (int r = 0; r < 3; ++r) trainer.run_round();

  PolicySet set = make_policy_set(game, BatchSequence::single(3));
  for (int r = 0; r < 3; ++r) {
    const std::uint64_t round_seed =
        derive_seed(seed, static_cast<std::uint64_t>(r));
    PolicySet old_set(set);
    TrajectoryBatch traj = collect_rollouts(game, set, set.sequence, 8, 16,
                                            derive_seed(round_seed, 1));
    std::vector<double> v = fit_value_table(traj, game.n_states, game.gamma);
    const JointPolicy behavior = old_set.to_joint_table(game);
    AdvantageEstimate adv = corrected_advantage(game, traj, v, behavior,
                                                behavior, game.gamma,
                                                config.lambda);
    mappo_update(game, set, old_set, traj, adv, config);
  }
  return snapshot_logits(trainer.policies()) == snapshot_logits(set);
}

bool reduction_a2po_bitwise() {
  MarkovGame game = build_dependency_chain_game(3, 0.6, 71);
  SchemeConfig config;
  config.mode = Mode::a2po;
  config.n_episodes = 8;
  config.horizon = 16;
  config.distill_period = 100;
  const std::uint64_t seed = 72;

  SchemeConfig fixed = config;
  fixed.mode = Mode::b2mapo_fixed;
  fixed.fixed_sequence = BatchSequence::singletons({0, 1, 2});

  Trainer a2po(game, config, seed);
  Trainer replay(game, fixed, seed);
  for (int r = 0; r < 3; ++r) {
    RoundReport rep = a2po.run_round();
    for (const auto& b : rep.sequence.batches)
      if (b.size() != 1) return false;
    replay.force_sequence(rep.sequence);
    replay.run_round();
    if (snapshot_logits(a2po.policies()) != snapshot_logits(replay.policies()))
      return false;
  }
  return true;
}

Outcome criterion_reductions() {
  const double gae_diff = reduction_gae_diff();
  const bool mappo_ok = reduction_mappo_bitwise();
  const bool a2po_ok = reduction_a2po_bitwise();
  const BoundReport chain = check_sequential_chain_equivalence(7);
  std::ostringstream d;
  d << "corrected-vs-gae diff " << fmt(gae_diff) << "; mappo replay "
    << (mappo_ok ? "bitwise" : "DIFFERS") << "; a2po replay "
    << (a2po_ok ? "bitwise" : "DIFFERS") << "; chain equivalence gap "
    << fmt(chain.lhs);
  return {gae_diff <= 1e-12 && mappo_ok && a2po_ok && chain.pass, d.str()};
}

// ---------------------------------------------------------------- criterion 3

constexpr double kFdStep = 1e-5;
constexpr double kFdTol = 1e-4;

double fd_logprob_worst(int points, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int p = 0; p < points; ++p) {
    const int n = 2 + rng.uniform_int(4);
    std::vector<double> row(n);
    for (double& v : row) v = 2.0 * rng.normal();
    const int action = rng.uniform_int(n);
    const int coord = rng.uniform_int(n);
    const double analytic = log_prob_gradient(row, action)[coord];
    const double numeric = central_diff(
        row[coord],
        [&] { return std::log(softmax(row)[action]); }, kFdStep);
    worst = std::max(worst, grad_error(analytic, numeric));
  }
  return worst;
}

double fd_batch_surrogate_worst(int points, std::uint64_t seed) {
  double worst = 0.0;
  for (int p = 0; p < points; ++p) {
    const std::uint64_t trial = derive_seed(seed, static_cast<std::uint64_t>(p));
    Rng rng(trial);
    MarkovGame game = build_random_game(2, 3, 2, 0.9, derive_seed(trial, 1));
    BatchSequence seq = BatchSequence::singletons({0, 1});
    PolicySet old_set = make_policy_set(game, seq);
    perturb_set(old_set, 0.5, rng);
    PolicySet now(old_set);
    perturb_set(now, 0.3, rng);  // ratios off 1, some samples clipped

    TrajectoryBatch traj = collect_rollouts(game, old_set, seq, 4, 8,
                                            derive_seed(trial, 2));
    AdvantageEstimate adv;
    adv.gamma = game.gamma;
    adv.lambda = 0.9;
    adv.mode = "gae";
    std::vector<double> flat;
    adv.values.resize(traj.episodes.size());
    for (std::size_t e = 0; e < traj.episodes.size(); ++e) {
      adv.values[e].resize(traj.episodes[e].steps.size());
      for (double& a : adv.values[e]) {
        a = rng.normal();
        flat.push_back(a);
      }
    }

    const double eps = 0.2;
    const std::size_t batch_index = 1;  // nontrivial preceding-ratio factor
    SchemeConfig config;
    config.clip_eps = eps;
    config.epochs = 1;
    config.lr = 0.25;

    // One plain ascent epoch; the step recovers the analytic gradient.
    PolicySet stepped(now);
    update_batch(game, stepped, old_set, batch_index, traj, adv, config);
    const int agent = seq.batches[batch_index][0];
    const std::vector<double>& before = now.conditioned[agent].table->logits;
    const std::vector<double>& after =
        stepped.conditioned[agent].table->logits;

    PolicySet probe(now);
    std::vector<double>& logits = probe.conditioned[agent].table->logits;
    auto loss = [&] {
      std::vector<double> ratios;
      for (const auto& ep : traj.episodes)
        for (const auto& st : ep.steps)
          ratios.push_back(batch_ratio(game, probe, old_set, st.state,
                                       st.actions, batch_index, eps));
      return batch_surrogate_loss(ratios, flat, eps);
    };
    const int coord = rng.uniform_int(static_cast<int>(logits.size()));
    const double analytic = (after[coord] - before[coord]) / config.lr;
    const double numeric = central_diff(logits[coord], loss, kFdStep);
    worst = std::max(worst, grad_error(analytic, numeric));
  }
  return worst;
}

double fd_distill_worst(int points, std::uint64_t seed) {
  double worst = 0.0;
  for (int p = 0; p < points; ++p) {
    const std::uint64_t trial = derive_seed(seed, static_cast<std::uint64_t>(p));
    Rng rng(trial);
    MarkovGame game = build_random_game(2, 3, 2, 0.9, derive_seed(trial, 1));
    PolicySet set = make_policy_set(game, BatchSequence::singletons({0, 1}));
    perturb_set(set, 0.8, rng);
    TrajectoryBatch traj = collect_rollouts(game, set, set.sequence, 2, 6,
                                            derive_seed(trial, 2));

    const double lr = 0.5;
    PolicySet stepped(set);
    distill_step(game, stepped, traj, 1.0, lr);

    const int agent = rng.uniform_int(game.n_agents);
    const std::vector<double>& before = set.independent[agent].table->logits;
    const std::vector<double>& after =
        stepped.independent[agent].table->logits;

    PolicySet probe(set);
    std::vector<double>& logits = probe.independent[agent].table->logits;
    const int coord = rng.uniform_int(static_cast<int>(logits.size()));
    const double analytic = (before[coord] - after[coord]) / lr;  // descent
    const double numeric = central_diff(
        logits[coord], [&] { return distill_step(game, probe, traj, 1.0, 0.0); },
        kFdStep);
    worst = std::max(worst, grad_error(analytic, numeric));
  }
  return worst;
}

double fd_dag_generator_worst(int points, std::uint64_t seed) {
  double worst = 0.0;
  const int n = 4, feat_dim = 6;
  for (int p = 0; p < points; ++p) {
    const std::uint64_t trial = derive_seed(seed, static_cast<std::uint64_t>(p));
    Rng rng(trial);
    std::vector<std::vector<double>> features(n, std::vector<double>(feat_dim));
    for (auto& row : features)
      for (double& v : row) v = rng.normal();

    AttentionScorer sampler = make_scorer(feat_dim, 5, derive_seed(trial, 1));
    DependenceGraph graph = score_dependence(sampler, features, 0.0);
    std::vector<EdgeSample> samples;
    for (int k = 0; k < 6; ++k) {
      EdgeSample s = sample_edge_set(graph, features, rng);
      s.advantage = rng.normal();
      samples.push_back(std::move(s));
    }

    AttentionScorer scorer = make_scorer(feat_dim, 5, derive_seed(trial, 2));
    const double eps = 0.2, c1 = 0.5;
    const ScorerGradient grad = dag_generator_gradient(scorer, samples, eps, c1);
    auto loss = [&] { return dag_generator_loss(scorer, samples, eps, c1); };

    const int r = rng.uniform_int(scorer.d_k);
    const int c = rng.uniform_int(feat_dim);
    double analytic, numeric;
    if (rng.uniform01() < 0.5) {
      analytic = grad.d_w_q[r][c];
      numeric = central_diff(scorer.w_q[r][c], loss, kFdStep);
    } else {
      analytic = grad.d_w_k[r][c];
      numeric = central_diff(scorer.w_k[r][c], loss, kFdStep);
    }
    worst = std::max(worst, grad_error(analytic, numeric));
  }
  return worst;
}

Outcome criterion_gradients() {
  const double logprob = fd_logprob_worst(100, 301);
  const double surrogate = fd_batch_surrogate_worst(100, 302);
  const double distill = fd_distill_worst(100, 303);
  const double dag = fd_dag_generator_worst(100, 304);
  std::ostringstream d;
  d << "worst rel err: log-prob " << fmt(logprob) << ", batch surrogate "
    << fmt(surrogate) << ", distill kl " << fmt(distill) << ", dag generator "
    << fmt(dag) << " (tol " << fmt(kFdTol) << ", 100 points each)";
  const bool pass = logprob <= kFdTol && surrogate <= kFdTol &&
                    distill <= kFdTol && dag <= kFdTol;
  return {pass, d.str()};
}

// ---------------------------------------------------------------- criterion 4

/* A round's improvement contract compares the RoundReport's exact-return
 * fields: "before" is the round's behavior policy. In dag mode a replan may
 * re-key the conditioned tables between rounds; that projection sits outside
 * the per-round guarantee and is reported separately, not gated. */
Outcome criterion_oracle_monotone() {
  MarkovGame game = build_dependency_chain_game(3, 0.6, 91);
  bool pass = true;
  std::ostringstream d;
  for (Mode mode : {Mode::mappo, Mode::a2po, Mode::b2mapo_dag}) {
    SchemeConfig config;
    config.mode = mode;
    config.clip_eps = 0.1;
    config.oracle = true;
    config.n_episodes = 8;
    config.horizon = 16;
    Trainer trainer(game, config, 92);
    double last_after = -1e300;
    double worst_drop = 0.0;
    double worst_boundary = 0.0;
    double final_j = 0.0;
    for (int r = 0; r < 200; ++r) {
      RoundReport rep = trainer.run_round();
      worst_drop = std::max(worst_drop, rep.j_exact_before - rep.j_exact_after);
      worst_boundary = std::max(worst_boundary, last_after - rep.j_exact_before);
      last_after = rep.j_exact_after;
      final_j = rep.j_exact_after;
    }
    if (worst_drop > 1e-6) pass = false;
    if (mode != Mode::mappo) d << "; ";
    d << mode_to_string(mode) << " worst in-round drop " << fmt(worst_drop)
      << ", replan boundary " << fmt(worst_boundary) << ", final J "
      << fmt(final_j);
  }
  d << " (200 rounds each, tol 1e-6)";
  return {pass, d.str()};
}

// ---------------------------------------------------------------- criterion 5

std::vector<double> per_agent_distill_kl(const MarkovGame& game,
                                         const PolicySet& set,
                                         const TrajectoryBatch& traj) {
  std::vector<double> kl(game.n_agents, 0.0);
  std::size_t n = 0;
  for (const auto& ep : traj.episodes)
    for (const auto& st : ep.steps) {
      ++n;
      for (int i = 0; i < game.n_agents; ++i) {
        std::vector<double> p =
            set.action_probs(i, st.observations[i], st.actions);
        std::vector<double> q =
            set.independent[i].table->probs(st.observations[i], 0);
        kl[i] += kl_divergence(p, q);
      }
    }
  for (double& v : kl) v /= static_cast<double>(n);
  return kl;
}

Outcome criterion_distillation() {
  std::vector<BoundReport> gaps;
  for (std::uint64_t i = 0; i < 5; ++i)
    gaps.push_back(check_distilled_value_gap(200 + i));
  std::sort(gaps.begin(), gaps.end(),
            [](const BoundReport& a, const BoundReport& b) {
              return a.lhs < b.lhs;
            });
  const BoundReport& median = gaps[2];

  // Fixed fixture: every per-agent KL must strictly fall across 100 steps.
  MarkovGame game = build_dependency_chain_game(2, 0.5, 201);
  PolicySet set = make_policy_set(game, BatchSequence::singletons({0, 1}));
  Rng rng(202);
  for (auto& c : set.conditioned)
    for (double& v : c.table->logits) v += rng.normal();
  TrajectoryBatch traj = collect_rollouts(game, set, set.sequence, 8, 16, 203);
  bool strictly_falling = true;
  std::vector<double> prev = per_agent_distill_kl(game, set, traj);
  for (int step = 0; step < 100; ++step) {
    distill_step(game, set, traj, 1.0, 0.05);
    std::vector<double> now = per_agent_distill_kl(game, set, traj);
    for (std::size_t i = 0; i < now.size(); ++i)
      if (!(now[i] < prev[i])) strictly_falling = false;
    prev = std::move(now);
  }

  std::ostringstream d;
  d << "median value gap " << fmt(median.lhs) << " <= " << fmt(median.rhs)
    << " (5 seeds); per-agent kl "
    << (strictly_falling ? "strictly falling over 100 steps"
                         : "NOT strictly falling");
  return {median.pass && strictly_falling, d.str()};
}

// ---------------------------------------------------------------- criterion 6

bool sequence_respects_dag(const BatchSequence& seq,
                           const std::vector<WeightedEdge>& dag) {
  std::vector<int> layer(seq.n_agents, -1);
  for (std::size_t k = 0; k < seq.batches.size(); ++k)
    for (int agent : seq.batches[k]) layer[agent] = static_cast<int>(k);
  for (const auto& e : dag)
    if (layer[e.from] >= layer[e.to]) return false;
  return true;
}

bool batches_conflict_free(const BatchSequence& seq,
                           const IndependenceGraph& graph) {
  for (const auto& b : seq.batches)
    for (std::size_t x = 0; x < b.size(); ++x)
      for (std::size_t y = x + 1; y < b.size(); ++y)
        if (graph.adj[b[x]][b[y]]) return false;
  return true;
}

Outcome criterion_scheduler() {
  Rng rng(401);
  int bad = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const int n = 1 + rng.uniform_int(8);
    std::vector<WeightedEdge> edges;
    std::vector<std::pair<int, int>> pairs;
    for (int u = 0; u < n; ++u)
      for (int v = 0; v < n; ++v) {
        if (u == v || rng.uniform01() >= 0.3) continue;
        edges.push_back({u, v, rng.uniform01() + 1e-3});
        pairs.emplace_back(u, v);
      }
    try {
      std::vector<WeightedEdge> dag = to_dag(edges, n);
      BatchSequence layered = layer_topological(dag, n);
      layered.validate();
      if (!sequence_respects_dag(layered, dag)) ++bad;

      IndependenceGraph und = IndependenceGraph::from_edges(n, pairs);
      BatchSequence greedy = min_batches_greedy(und);
      greedy.validate();
      if (!batches_conflict_free(greedy, und)) ++bad;
    } catch (const std::exception&) {
      ++bad;
    }
  }

  // Exhaustive undirected graphs, n <= 5: greedy within one of the optimum.
  int graphs = 0, over = 0;
  for (int n = 1; n <= 5; ++n) {
    std::vector<std::pair<int, int>> all_pairs;
    for (int u = 0; u < n; ++u)
      for (int v = u + 1; v < n; ++v) all_pairs.emplace_back(u, v);
    for (std::uint32_t mask = 0; mask < (1u << all_pairs.size()); ++mask) {
      ++graphs;
      std::vector<std::pair<int, int>> pairs;
      for (std::size_t e = 0; e < all_pairs.size(); ++e)
        if (mask & (1u << e)) pairs.push_back(all_pairs[e]);
      IndependenceGraph und = IndependenceGraph::from_edges(n, pairs);
      const std::size_t best = min_batches_bruteforce(und).batches.size();
      const std::size_t grd = min_batches_greedy(und).batches.size();
      if (grd > best + 1 || grd < best) ++over;
    }
  }

  const bool chain_ok =
      layer_topological({{0, 1, 1.0}, {1, 2, 1.0}}, 3).to_string() == "0|1|2";
  const bool edgeless_ok = layer_topological({}, 4).to_string() == "0,1,2,3";
  const bool diamond_ok =
      layer_topological({{0, 1, 1.0}, {0, 2, 1.0}, {1, 3, 1.0}, {2, 3, 1.0}}, 4)
          .to_string() == "0|1,2|3";

  std::ostringstream d;
  d << "10000 random graphs, " << bad << " invariant violations; " << graphs
    << " exhaustive graphs (n<=5), " << over
    << " greedy beyond optimum+1; fixed layerings "
    << (chain_ok && edgeless_ok && diamond_ok ? "match" : "DIFFER");
  return {bad == 0 && over == 0 && chain_ok && edgeless_ok && diamond_ok,
          d.str()};
}

// ---------------------------------------------------------------- criterion 7

double rank_auc(const std::vector<double>& positives,
                const std::vector<double>& negatives) {
  if (positives.empty() || negatives.empty()) return 0.0;
  double wins = 0.0;
  for (double p : positives)
    for (double q : negatives) {
      if (p > q)
        wins += 1.0;
      else if (p == q)
        wins += 0.5;
    }
  return wins / (static_cast<double>(positives.size()) *
                 static_cast<double>(negatives.size()));
}

Outcome criterion_dependence_recovery() {
  std::vector<double> directed, undirected;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    MarkovGame game = build_dependency_chain_game(4, 1.0, 501 + seed);
    SchemeConfig config;
    config.mode = Mode::b2mapo_dag;
    config.n_episodes = 16;
    config.horizon = 32;
    config.distill_period = 1000;
    config.replan_period = 2;
    config.dag_lr = 0.02;
    Trainer trainer(game, config, 601 + seed);
    for (int r = 0; r < 100; ++r) trainer.run_round();

    TrajectoryBatch traj =
        collect_rollouts(game, trainer.policies(), trainer.policies().sequence,
                         16, 32, 701 + seed);
    const auto features = trajectory_features(game, traj, config.dag_window);
    DependenceGraph graph = score_dependence(trainer.scorer(), features, 0.0);

    std::vector<double> pos, neg, upos, uneg;
    for (int u = 0; u < game.n_agents; ++u)
      for (int v = 0; v < game.n_agents; ++v) {
        if (u == v) continue;
        (game.dependence.has_edge(u, v) ? pos : neg).push_back(graph.soft[u][v]);
        if (u < v) {
          const double s = std::max(graph.soft[u][v], graph.soft[v][u]);
          const bool adjacent = game.dependence.has_edge(u, v) ||
                                game.dependence.has_edge(v, u);
          (adjacent ? upos : uneg).push_back(s);
        }
      }
    directed.push_back(rank_auc(pos, neg));
    undirected.push_back(rank_auc(upos, uneg));
  }
  std::sort(directed.begin(), directed.end());
  std::sort(undirected.begin(), undirected.end());
  std::ostringstream d;
  d << "median auc: directed " << fmt(directed[2]) << ", undirected "
    << fmt(undirected[2]) << " over 5 seeds (target 0.8, reported only)";
  return {directed[2] >= 0.8, d.str()};
}

// ---------------------------------------------------------------- criterion 8

Outcome criterion_efficiency() {
  BenchConfig config;  // 8 agents
  std::vector<BenchRecord> records = run_bench(config);
  const BenchRecord& mappo = records[0];
  const BenchRecord& dag = records[1];
  const BenchRecord& a2po = records[2];
  const bool order_ok = mappo.train_seconds <= dag.train_seconds &&
                        dag.train_seconds <= a2po.train_seconds;
  const bool decide_ok =
      dag.decide_ind_seconds <= 2.0 * mappo.decide_cond_seconds;
  std::ostringstream d;
  d << "train s/round: mappo " << fmt(mappo.train_seconds) << " <= dag "
    << fmt(dag.train_seconds) << " <= a2po " << fmt(a2po.train_seconds)
    << "; decide s/step: independent " << fmt(dag.decide_ind_seconds)
    << " vs 2x conditioned " << fmt(2.0 * mappo.decide_cond_seconds);
  return {order_ok && decide_ok, d.str()};
}

// ---------------------------------------------------------------- criterion 9

std::string slurp(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

Outcome criterion_determinism() {
  const fs::path root = fs::temp_directory_path() / "b2mapo_acceptance_det";
  fs::remove_all(root);
  ExperimentConfig config = parse_experiment_config(R"(
[game]
builder = chain
n_agents = 2
seed = 3
[scheme]
mode = b2mapo-dag
oracle = true
n_episodes = 4
horizon = 8
[run]
seeds = 0,1
rounds = 3
)");
  config.out = (root / "a").string();
  RunFiles a = run_experiment(config);
  config.out = (root / "b").string();
  RunFiles b = run_experiment(config);

  int mismatched = 0;
  auto compare = [&](const std::vector<std::string>& xs,
                     const std::vector<std::string>& ys) {
    for (std::size_t i = 0; i < xs.size(); ++i)
      if (slurp(xs[i]) != slurp(ys[i])) ++mismatched;
  };
  compare(a.rounds_csv, b.rounds_csv);
  compare(a.curve_csv, b.curve_csv);
  const std::size_t metric_files = a.rounds_csv.size() + a.curve_csv.size();

  SuiteCounts counts;
  counts.subadditivity = 200;
  counts.offpolicy = 50;
  counts.drift = 25;
  counts.drift_max_t = 6;
  counts.single_chains = 12;
  counts.joint_chains = 12;
  counts.tightening = 8;
  counts.simultaneous = 50;
  counts.sequential = 25;
  counts.distill_seeds = 1;
  const bool suite_identical = bound_reports_to_csv(run_bound_suite(counts, 3)) ==
                               bound_reports_to_csv(run_bound_suite(counts, 3));
  fs::remove_all(root);

  std::ostringstream d;
  d << metric_files << " metric files byte-identical across reruns ("
    << mismatched << " mismatches, timing files excluded); bound csv rerun "
    << (suite_identical ? "identical" : "DIFFERS");
  return {mismatched == 0 && suite_identical, d.str()};
}

}  // namespace

int main() {
  struct Entry {
    const char* label;
    Outcome (*run)();
    bool gated;
  };
  const Entry entries[] = {
      {"bound suite", criterion_bound_suite, true},
      {"estimator and mode reductions", criterion_reductions, true},
      {"analytic gradients vs finite differences", criterion_gradients, true},
      {"oracle-mode monotone improvement", criterion_oracle_monotone, true},
      {"distilled execution gap", criterion_distillation, true},
      {"scheduler invariants", criterion_scheduler, true},
      {"dependence recovery", criterion_dependence_recovery, false},
      {"efficiency ordering", criterion_efficiency, true},
      {"byte-identical reruns", criterion_determinism, true},
  };

  int failures = 0;
  int index = 0;
  for (const Entry& entry : entries) {
    ++index;
    Outcome outcome;
    try {
      outcome = entry.run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    const char* tag = entry.gated ? (outcome.pass ? "PASS" : "FAIL")
                                  : (outcome.pass ? "PASS*" : "INFO");
    std::printf("[%s] %d %s: %s\n", tag, index, entry.label,
                outcome.detail.c_str());
    if (entry.gated && !outcome.pass) ++failures;
  }
  std::printf("acceptance: %d of 8 gated criteria passed, 1 reported\n",
              8 - failures);
  return failures == 0 ? 0 : 1;
}
