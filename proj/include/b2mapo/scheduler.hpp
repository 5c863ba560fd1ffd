#pragma once

/**
 * @file scheduler.hpp
 * @brief Upper layer: dependence scoring, DAG construction, and layering.
 *
 * A bilinear attention scorer turns per-agent trajectory features into a
 * weighted dependence graph. Graphs become directed acyclic subgraphs by
 * minimum-weight cycle removal, then topological layering yields the batch
 * sequence. Minimum-batch partitioning (exact and greedy) works on the
 * undirected view. The scorer doubles as a stochastic edge-set policy whose
 * Bernoulli log-probabilities feed a clipped-ratio generator update, with a
 * tabular period-value critic alongside.
 */

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "b2mapo/batch.hpp"
#include "b2mapo/game.hpp"
#include "b2mapo/rng.hpp"

namespace b2mapo {

struct TrajectoryBatch;

/// Row-softmax dependence weights; soft is pre-threshold, weight zeroes
/// entries below the threshold. Diagonals are exactly zero in both.
struct DependenceGraph {
  int n = 0;
  double threshold = 0.0;
  std::vector<std::vector<double>> soft;
  std::vector<std::vector<double>> weight;
};

struct WeightedEdge {
  int from = 0;
  int to = 0;
  double weight = 0.0;
};

/// Bilinear scorer plus the tabular period-value head.
struct AttentionScorer {
  int feat_dim = 0;
  int d_k = 8;
  std::vector<std::vector<double>> w_q;  ///< [d_k][feat_dim]
  std::vector<std::vector<double>> w_k;  ///< [d_k][feat_dim]
  std::vector<double> v_phi;             ///< [n_states]
};

/// Small random init, deterministic under seed.
AttentionScorer make_scorer(int feat_dim, int n_states, std::uint64_t seed,
                            int d_k = 8);

/// Default dependence threshold: half the uniform off-diagonal row mass.
double default_threshold(int n_agents);

/**
 * @brief Per-agent features from the last @p window steps of each episode.
 *
 * One block per window slot: the agent's observation one-hot next to its
 * action one-hot, padded to the maximum observation/action counts; episodes
 * shorter than the window zero-pad leading blocks; blocks average across
 * episodes. Width = window * (max_obs + max_actions).
 */
std::vector<std::vector<double>> trajectory_features(const MarkovGame& game,
                                                     const TrajectoryBatch& traj,
                                                     int window = 4);

/**
 * @brief g[i][j] = softmax_{j != i}(q_i . k_j / sqrt(d_k)), then threshold.
 *
 * @p threshold < 0 selects default_threshold(n). Throws std::invalid_argument
 * on feature width mismatch.
 */
DependenceGraph score_dependence(const AttentionScorer& scorer,
                                 const std::vector<std::vector<double>>& features,
                                 double threshold = -1.0);

/// One stochastic edge-set draw together with what the ratio needs later.
struct EdgeSample {
  std::vector<std::vector<double>> features;     ///< frozen at sample time
  std::vector<std::pair<int, int>> candidates;   ///< positive-weight pairs
  std::vector<char> included;
  std::vector<double> p_old;                     ///< sampling probabilities
  double log_prob_old = 0.0;
  double advantage = 0.0;
};

/// Independent Bernoulli per positive-weight edge; log-prob is their sum.
EdgeSample sample_edge_set(const DependenceGraph& graph,
                           const std::vector<std::vector<double>>& features,
                           Rng& rng);

/// Edge list of the sample (from, to, weight as sampled probability).
std::vector<WeightedEdge> sampled_edges(const EdgeSample& sample);

/// Deterministic edge set: every positive post-threshold weight.
std::vector<WeightedEdge> thresholded_edges(const DependenceGraph& graph);

/**
 * @brief Remove cycles by dropping the lightest edge on a found cycle.
 *
 * Repeats until acyclic; ties broken by lexicographic (from, to). Acyclic
 * inputs pass through unchanged.
 */
std::vector<WeightedEdge> to_dag(std::vector<WeightedEdge> edges, int n);

/// Kahn layering: batch k holds agents of longest incoming path length k.
BatchSequence layer_topological(const std::vector<WeightedEdge>& dag, int n);

/// Undirected co-update conflict graph.
struct IndependenceGraph {
  int n = 0;
  std::vector<std::vector<char>> adj;

  static IndependenceGraph from_edges(int n,
                                      const std::vector<std::pair<int, int>>& edges);
};

/// Exact minimum partition into conflict-free batches (n <= 10, else
/// std::length_error); exhaustive color search, deterministic.
BatchSequence min_batches_bruteforce(const IndependenceGraph& graph);

/// Greedy largest-independent-set-first partition; always valid.
BatchSequence min_batches_greedy(const IndependenceGraph& graph);

/// r_{t:t+T} = sum_{l=0}^{T} gamma^l rewards[t+l], truncated at stream end.
double dag_period_reward(const std::vector<double>& rewards, std::size_t t,
                         double gamma, int T);

/**
 * @brief Period advantage from period rewards and per-step values.
 *
 * delta_t = pr[t] + gamma V(s_{t+T}) - V(s_t) with V past the stream end
 * taken as zero; advantage_t = sum_{l=0}^{T-1} gamma^l delta_{t+l},
 * truncated at the stream end.
 */
std::vector<double> dag_advantage(const std::vector<double>& period_rewards,
                                  const std::vector<double>& step_values,
                                  double gamma, int T);

/// Clipped-ratio generator objective (to ascend): mean over samples of
/// min(Sr*A, clip(Sr, 1-eps, 1+eps)*A) - c1 * sum of Bernoulli KLs
/// (old against current). Throws std::domain_error on non-finite loss.
double dag_generator_loss(const AttentionScorer& scorer,
                          const std::vector<EdgeSample>& samples, double eps,
                          double c1);

struct ScorerGradient {
  std::vector<std::vector<double>> d_w_q;
  std::vector<std::vector<double>> d_w_k;
};

/// Analytic gradient of dag_generator_loss in (w_q, w_k).
ScorerGradient dag_generator_gradient(const AttentionScorer& scorer,
                                      const std::vector<EdgeSample>& samples,
                                      double eps, double c1);

/// One ascent step; returns the loss before the step.
double dag_generator_update(AttentionScorer& scorer,
                            const std::vector<EdgeSample>& samples, double eps,
                            double c1, double lr);

/// One least-squares descent step of V_phi toward period-return targets;
/// returns the mean squared error before the step.
double dag_critic_update(AttentionScorer& scorer, const std::vector<int>& states,
                         const std::vector<double>& targets, double lr);

/// Whitespace graph file: first line "n", then "i j w" per edge.
struct WeightedGraphFile {
  int n = 0;
  std::vector<WeightedEdge> edges;
};
WeightedGraphFile load_weighted_graph(const std::string& path);

}  // namespace b2mapo
