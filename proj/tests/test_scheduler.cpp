#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <fstream>

#include "b2mapo/policies.hpp"
#include "b2mapo/rng.hpp"
#include "b2mapo/rollout.hpp"
#include "b2mapo/scheduler.hpp"
#include "doctest.h"

using namespace b2mapo;

namespace {

std::vector<std::vector<double>> random_features(int n, int dim,
                                                 std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> f(n, std::vector<double>(dim));
  for (auto& row : f)
    for (double& x : row) x = rng.normal();
  return f;
}

bool valid_partition(const IndependenceGraph& g, const BatchSequence& seq) {
  seq.validate();
  for (const auto& batch : seq.batches)
    for (std::size_t a = 0; a < batch.size(); ++a)
      for (std::size_t b = a + 1; b < batch.size(); ++b)
        if (g.adj[batch[a]][batch[b]]) return false;
  return true;
}

bool respects_dag(const std::vector<WeightedEdge>& dag, const BatchSequence& seq) {
  for (const auto& e : dag)
    if (seq.batch_of(e.from) >= seq.batch_of(e.to)) return false;
  return true;
}

}  // namespace

TEST_CASE("identical features give uniform rows; thresholds zero them out") {
  AttentionScorer scorer = make_scorer(4, 2, 301, 2);
  std::vector<std::vector<double>> f(3, {0.3, -0.2, 1.0, 0.5});

  DependenceGraph g = score_dependence(scorer, f);
  CHECK(g.threshold == doctest::Approx(0.25));
  for (int i = 0; i < 3; ++i) {
    CHECK(g.soft[i][i] == 0.0);
    CHECK(g.weight[i][i] == 0.0);
    for (int j = 0; j < 3; ++j)
      if (j != i) {
        CHECK(g.soft[i][j] == doctest::Approx(0.5).epsilon(1e-14));
        CHECK(g.weight[i][j] == g.soft[i][j]);
      }
  }

  DependenceGraph cut = score_dependence(scorer, f, 0.9);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(cut.weight[i][j] == 0.0);

  std::vector<std::vector<double>> bad(3, std::vector<double>(5, 0.0));
  CHECK_THROWS_AS(score_dependence(scorer, bad), std::invalid_argument);
}

TEST_CASE("score rows match an independent softmax evaluation") {
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + trial % 4;
    AttentionScorer scorer = make_scorer(6, 2, 400 + trial, 3);
    auto f = random_features(n, 6, 500 + trial);
    DependenceGraph g = score_dependence(scorer, f);

    for (int i = 0; i < n; ++i) {
      // Direct evaluation: q_i . k_j / sqrt(d_k), softmax over j != i.
      std::vector<double> q(scorer.d_k, 0.0), scores;
      for (int r = 0; r < scorer.d_k; ++r)
        for (int c = 0; c < 6; ++c) q[r] += scorer.w_q[r][c] * f[i][c];
      double z = 0.0, row_sum = 0.0;
      std::vector<int> cols;
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        double kj = 0.0;
        for (int r = 0; r < scorer.d_k; ++r) {
          double kr = 0.0;
          for (int c = 0; c < 6; ++c) kr += scorer.w_k[r][c] * f[j][c];
          kj += q[r] * kr;
        }
        scores.push_back(std::exp(kj / std::sqrt(double(scorer.d_k))));
        z += scores.back();
        cols.push_back(j);
      }
      for (std::size_t c = 0; c < cols.size(); ++c)
        CHECK(std::abs(g.soft[i][cols[c]] - scores[c] / z) <= 1e-12);
      for (int j = 0; j < n; ++j) row_sum += g.soft[i][j];
      CHECK(std::abs(row_sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("edge sampling hits its Bernoulli probabilities") {
  DependenceGraph g;
  g.n = 2;
  g.threshold = 0.0;
  g.soft = {{0.0, 1.0}, {1.0, 0.0}};
  g.weight = g.soft;
  auto f = random_features(2, 3, 600);
  Rng rng(601);
  EdgeSample all = sample_edge_set(g, f, rng);
  CHECK(all.candidates.size() == 2);
  CHECK(sampled_edges(all).size() == 2);
  CHECK(std::abs(all.log_prob_old) <= 1e-9);

  DependenceGraph none = g;
  none.soft = {{0.0, 0.0}, {0.0, 0.0}};
  none.weight = none.soft;
  EdgeSample empty = sample_edge_set(none, f, rng);
  CHECK(empty.candidates.empty());
  CHECK(empty.log_prob_old == 0.0);

  AttentionScorer scorer = make_scorer(5, 2, 602, 2);
  auto feats = random_features(3, 5, 603);
  DependenceGraph scored = score_dependence(scorer, feats, 0.0);
  std::vector<std::vector<int>> hits(3, std::vector<int>(3, 0));
  const int draws = 100000;
  Rng mc(604);
  for (int d = 0; d < draws; ++d) {
    EdgeSample s = sample_edge_set(scored, feats, mc);
    for (std::size_t c = 0; c < s.candidates.size(); ++c)
      if (s.included[c]) hits[s.candidates[c].first][s.candidates[c].second]++;
  }
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const double freq = static_cast<double>(hits[i][j]) / draws;
      CHECK(std::abs(freq - scored.weight[i][j]) <= 0.01);
    }
}

TEST_CASE("cycle removal drops the lightest edge and leaves DAGs alone") {
  std::vector<WeightedEdge> acyclic = {{0, 1, 0.5}, {1, 2, 0.4}, {0, 2, 0.3}};
  auto same = to_dag(acyclic, 3);
  REQUIRE(same.size() == 3);
  for (std::size_t e = 0; e < same.size(); ++e) {
    CHECK(same[e].from == acyclic[e].from);
    CHECK(same[e].to == acyclic[e].to);
  }

  std::vector<WeightedEdge> two_cycle = {{0, 1, 0.9}, {1, 0, 0.2}};
  auto broken = to_dag(two_cycle, 2);
  REQUIRE(broken.size() == 1);
  CHECK(broken[0].from == 0);
  CHECK(broken[0].to == 1);
  CHECK(broken[0].weight == 0.9);

  CHECK(to_dag({}, 4).empty());

  // Equal weights: lexicographic (from, to) goes first.
  std::vector<WeightedEdge> tie = {{0, 1, 0.5}, {1, 0, 0.5}};
  auto kept = to_dag(tie, 2);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].from == 1);

  // Random graphs: output is an acyclic subgraph, deterministically.
  Rng rng(610);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + trial % 3;
    std::vector<WeightedEdge> edges;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j && rng.uniform01() < 0.6)
          edges.push_back({i, j, rng.uniform(0.05, 1.0)});
    auto dag = to_dag(edges, n);
    auto again = to_dag(edges, n);
    REQUIRE(dag.size() == again.size());
    for (std::size_t e = 0; e < dag.size(); ++e)
      CHECK((dag[e].from == again[e].from && dag[e].to == again[e].to));
    for (const auto& e : dag) {
      bool found = false;
      for (const auto& src : edges)
        if (src.from == e.from && src.to == e.to && src.weight == e.weight)
          found = true;
      CHECK(found);
    }
    BatchSequence seq = layer_topological(dag, n);  // throws if cyclic
    CHECK(respects_dag(dag, seq));
  }
}

TEST_CASE("topological layering fixtures") {
  BatchSequence chain = layer_topological({{0, 1, 1.0}, {1, 2, 1.0}}, 3);
  CHECK(chain.to_string() == "0|1|2");

  BatchSequence single = layer_topological({}, 4);
  CHECK(single.to_string() == "0,1,2,3");

  BatchSequence diamond = layer_topological(
      {{0, 1, 1.0}, {0, 2, 1.0}, {1, 3, 1.0}, {2, 3, 1.0}}, 4);
  CHECK(diamond.to_string() == "0|1,2|3");

  // Longest path wins: 0->1->2 plus 0->2 still puts 2 in the third layer.
  BatchSequence longest =
      layer_topological({{0, 1, 1.0}, {1, 2, 1.0}, {0, 2, 1.0}}, 3);
  CHECK(longest.to_string() == "0|1|2");

  CHECK_THROWS_AS(layer_topological({{0, 1, 1.0}, {1, 0, 1.0}}, 2),
                  std::logic_error);
}

TEST_CASE("minimum batch partitioning: fixtures and exhaustive small graphs") {
  auto triangle = IndependenceGraph::from_edges(3, {{0, 1}, {1, 2}, {0, 2}});
  CHECK(min_batches_bruteforce(triangle).batches.size() == 3);
  CHECK(min_batches_greedy(triangle).batches.size() == 3);

  auto path = IndependenceGraph::from_edges(3, {{0, 1}, {1, 2}});
  BatchSequence p = min_batches_bruteforce(path);
  CHECK(p.batches.size() == 2);
  CHECK(valid_partition(path, p));
  CHECK(min_batches_greedy(path).to_string() == "0,2|1");

  auto edgeless = IndependenceGraph::from_edges(4, {});
  CHECK(min_batches_bruteforce(edgeless).batches.size() == 1);
  CHECK(min_batches_greedy(edgeless).to_string() == "0,1,2,3");

  auto c5 = IndependenceGraph::from_edges(
      5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 0}});
  CHECK(min_batches_bruteforce(c5).batches.size() == 3);

  auto big = IndependenceGraph::from_edges(11, {});
  CHECK_THROWS_AS(min_batches_bruteforce(big), std::length_error);
  CHECK_THROWS_AS(IndependenceGraph::from_edges(2, {{0, 0}}),
                  std::invalid_argument);

  // Every 5-vertex graph: both partitions valid, greedy within +1 of exact.
  const int pairs[10][2] = {{0, 1}, {0, 2}, {0, 3}, {0, 4}, {1, 2},
                            {1, 3}, {1, 4}, {2, 3}, {2, 4}, {3, 4}};
  for (int mask = 0; mask < 1024; ++mask) {
    std::vector<std::pair<int, int>> edges;
    for (int b = 0; b < 10; ++b)
      if (mask & (1 << b)) edges.emplace_back(pairs[b][0], pairs[b][1]);
    auto g = IndependenceGraph::from_edges(5, edges);
    BatchSequence exact = min_batches_bruteforce(g);
    BatchSequence greedy = min_batches_greedy(g);
    REQUIRE(valid_partition(g, exact));
    REQUIRE(valid_partition(g, greedy));
    REQUIRE(greedy.batches.size() >= exact.batches.size());
    REQUIRE(greedy.batches.size() <= exact.batches.size() + 1);
  }
}

TEST_CASE("period rewards sum geometrically") {
  std::vector<double> ones(5, 1.0);
  CHECK(dag_period_reward(ones, 0, 0.9, 0) == 1.0);
  CHECK(dag_period_reward(ones, 1, 0.9, 2) == doctest::Approx(2.71).epsilon(1e-12));
  CHECK(dag_period_reward(ones, 3, 0.9, 5) ==
        doctest::Approx(1.9).epsilon(1e-12));  // truncated at stream end

  Rng rng(620);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> r(12);
    for (double& x : r) x = rng.uniform(-1.0, 1.0);
    const int T = 1 + static_cast<int>(rng.uniform_int(6));
    const std::size_t t = rng.uniform_int(10);
    double direct = 0.0;
    for (int l = T; l >= 0; --l)
      if (t + l < r.size()) direct = direct * 1.0 + std::pow(0.93, l) * r[t + l];
    CHECK(std::abs(dag_period_reward(r, t, 0.93, T) - direct) <= 1e-12);
  }
  CHECK_THROWS_AS(dag_period_reward(ones, 9, 0.9, 1), std::invalid_argument);
}

TEST_CASE("period advantages match their definition") {
  // Single period, zero values: the advantage is the period reward itself.
  std::vector<double> pr = {2.71};
  auto a = dag_advantage(pr, {0.0}, 0.9, 3);
  CHECK(a.size() == 1);
  CHECK(a[0] == doctest::Approx(2.71));

  // Zero rewards, constant value c: interior deltas are c(gamma-1) < 0.
  const double c = 2.0, gamma = 0.9;
  std::vector<double> zeros(10, 0.0), vconst(10, c);
  auto za = dag_advantage(zeros, vconst, gamma, 3);
  // t=0 is interior (t+T < L): delta chain sums of c(gamma-1).
  double expect = 0.0;
  for (int l = 0; l < 3; ++l) expect += std::pow(gamma, l) * c * (gamma - 1.0);
  CHECK(za[0] == doctest::Approx(expect).epsilon(1e-12));
  CHECK(za[0] < 0.0);

  Rng rng(630);
  for (int trial = 0; trial < 50; ++trial) {
    const int L = 6 + static_cast<int>(rng.uniform_int(8));
    const int T = 1 + static_cast<int>(rng.uniform_int(4));
    std::vector<double> prs(L), v(L);
    for (double& x : prs) x = rng.uniform(-1.0, 1.0);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    auto adv = dag_advantage(prs, v, gamma, T);
    for (int t = 0; t < L; ++t) {
      double direct = 0.0;
      for (int l = 0; l < T && t + l < L; ++l) {
        const int u = t + l;
        const double vn = (u + T < L) ? v[u + T] : 0.0;
        direct += std::pow(gamma, l) * (prs[u] + gamma * vn - v[u]);
      }
      CHECK(std::abs(adv[t] - direct) <= 1e-12);
    }
  }
}

TEST_CASE("generator loss: zero advantage, clip plateau, and sign behavior") {
  AttentionScorer scorer = make_scorer(4, 2, 640, 2);
  auto f = random_features(3, 4, 641);
  DependenceGraph g = score_dependence(scorer, f, 0.0);
  Rng rng(642);

  std::vector<EdgeSample> zero(3);
  for (auto& s : zero) {
    s = sample_edge_set(g, f, rng);
    s.advantage = 0.0;
  }
  ScorerGradient grad = dag_generator_gradient(scorer, zero, 0.2, 0.0);
  for (const auto& row : grad.d_w_q)
    for (double x : row) CHECK(x == 0.0);
  for (const auto& row : grad.d_w_k)
    for (double x : row) CHECK(x == 0.0);

  // Ratio forced to 1.5 with positive advantage: the clipped branch wins.
  EdgeSample forced = sample_edge_set(g, f, rng);
  forced.advantage = 2.0;
  DependenceGraph now = score_dependence(scorer, forced.features);
  double lp_new = 0.0;
  for (std::size_t c = 0; c < forced.candidates.size(); ++c) {
    auto [i, j] = forced.candidates[c];
    lp_new += forced.included[c] ? std::log(now.soft[i][j])
                                 : std::log(1.0 - now.soft[i][j]);
  }
  forced.log_prob_old = lp_new - std::log(1.5);
  CHECK(dag_generator_loss(scorer, {forced}, 0.2, 0.0) ==
        doctest::Approx(1.2 * 2.0).epsilon(1e-12));

  // A positively rewarded one-edge sample gets more probable after a step.
  EdgeSample one;
  one.features = f;
  one.candidates = {{0, 1}};
  one.included = {1};
  one.p_old = {score_dependence(scorer, f).soft[0][1]};
  one.log_prob_old = std::log(one.p_old[0]);
  one.advantage = 1.0;
  AttentionScorer stepped = scorer;
  dag_generator_update(stepped, {one}, 0.2, 0.0, 0.05);
  CHECK(score_dependence(stepped, f).soft[0][1] >
        score_dependence(scorer, f).soft[0][1]);
}

TEST_CASE("generator gradients match central finite differences") {
  AttentionScorer scorer = make_scorer(4, 2, 650, 2);
  auto f = random_features(3, 4, 651);
  DependenceGraph g = score_dependence(scorer, f, 0.0);
  Rng rng(652);
  std::vector<EdgeSample> samples;
  for (int s = 0; s < 4; ++s) {
    EdgeSample e = sample_edge_set(g, f, rng);
    e.advantage = (s % 2 == 0) ? 0.8 : -0.6;
    samples.push_back(e);
  }

  const double eps = 0.2, c1 = 0.5, h = 1e-5;
  ScorerGradient grad = dag_generator_gradient(scorer, samples, eps, c1);
  int checked = 0;
  auto check_block = [&](std::vector<std::vector<double>> AttentionScorer::*w,
                         const std::vector<std::vector<double>>& gblock) {
    for (int r = 0; r < scorer.d_k; ++r)
      for (int c = 0; c < scorer.feat_dim; ++c) {
        AttentionScorer up = scorer, dn = scorer;
        (up.*w)[r][c] += h;
        (dn.*w)[r][c] -= h;
        const double fd = (dag_generator_loss(up, samples, eps, c1) -
                           dag_generator_loss(dn, samples, eps, c1)) /
                          (2.0 * h);
        const double denom = std::max(std::abs(fd), 1e-4);
        CHECK(std::abs(gblock[r][c] - fd) / denom <= 1e-4);
        ++checked;
      }
  };
  check_block(&AttentionScorer::w_q, grad.d_w_q);
  check_block(&AttentionScorer::w_k, grad.d_w_k);
  CHECK(checked == 16);
}

TEST_CASE("critic updates are least-squares steps") {
  AttentionScorer scorer = make_scorer(3, 1, 660, 2);

  // Single state, single target: geometric convergence.
  for (int step = 0; step < 10000 && std::abs(scorer.v_phi[0] - 4.2) > 1e-7;
       ++step)
    dag_critic_update(scorer, {0}, {4.2}, 0.05);
  CHECK(std::abs(scorer.v_phi[0] - 4.2) <= 1e-6);

  // Matching targets: exact zero gradient.
  AttentionScorer fixed = make_scorer(3, 2, 661, 2);
  fixed.v_phi = {1.5, -0.5};
  const auto before = fixed.v_phi;
  dag_critic_update(fixed, {0, 1, 0}, {1.5, -0.5, 1.5}, 0.1);
  CHECK(fixed.v_phi == before);

  // Random fixtures: loss never increases along 100 steps.
  Rng rng(662);
  for (int trial = 0; trial < 20; ++trial) {
    AttentionScorer s = make_scorer(3, 4, 700 + trial, 2);
    std::vector<int> states;
    std::vector<double> targets;
    for (int i = 0; i < 32; ++i) {
      states.push_back(static_cast<int>(rng.uniform_int(4)));
      targets.push_back(rng.uniform(-2.0, 2.0));
    }
    double prev = dag_critic_update(s, states, targets, 0.05);
    for (int step = 0; step < 100; ++step) {
      const double cur = dag_critic_update(s, states, targets, 0.05);
      CHECK(cur <= prev + 1e-12);
      prev = cur;
    }
  }
}

TEST_CASE("trajectory features are windowed one-hot means") {
  MarkovGame g = build_random_game(2, 3, 2, 0.9, 670);
  BatchSequence seq = BatchSequence::single(2);
  PolicySet set = make_policy_set(g, seq);
  TrajectoryBatch traj = collect_rollouts(g, set, seq, 16, 10, 5);

  const int window = 4;
  auto f = trajectory_features(g, traj, window);
  const int block = 3 + 2;  // max_obs + max_actions
  REQUIRE(f.size() == 2);
  for (const auto& row : f) {
    REQUIRE(static_cast<int>(row.size()) == window * block);
    for (double x : row) {
      CHECK(x >= 0.0);
      CHECK(x <= 1.0);
    }
    // Full-length episodes: each block's obs and action one-hots average
    // to mass one.
    for (int w = 0; w < window; ++w) {
      double obs_mass = 0.0, act_mass = 0.0;
      for (int o = 0; o < 3; ++o) obs_mass += row[w * block + o];
      for (int a = 0; a < 2; ++a) act_mass += row[w * block + 3 + a];
      CHECK(obs_mass == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(act_mass == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  // Episodes shorter than the window zero-pad the leading blocks.
  TrajectoryBatch brief = collect_rollouts(g, set, seq, 4, 2, 6);
  auto fb = trajectory_features(g, brief, window);
  for (const auto& row : fb)
    for (int w = 0; w < 2; ++w)
      for (int k = 0; k < block; ++k) CHECK(row[w * block + k] == 0.0);
}

TEST_CASE("weighted graph files parse and reject malformed input") {
  const std::string path = "graph_file.tmp";
  {
    std::ofstream out(path);
    out << "# comment\n4\n0 1 0.9\n2 3 0.4\n1 2 0.7\n";
  }
  WeightedGraphFile g = load_weighted_graph(path);
  CHECK(g.n == 4);
  REQUIRE(g.edges.size() == 3);
  CHECK(g.edges[1].from == 2);
  CHECK(g.edges[1].weight == doctest::Approx(0.4));

  {
    std::ofstream out(path);
    out << "2\n0 0 0.5\n";
  }
  CHECK_THROWS_AS(load_weighted_graph(path), std::invalid_argument);
  {
    std::ofstream out(path);
    out << "2\n0 1 1.5\n";
  }
  CHECK_THROWS_AS(load_weighted_graph(path), std::invalid_argument);
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_weighted_graph("missing_file.tmp"), std::invalid_argument);
}
