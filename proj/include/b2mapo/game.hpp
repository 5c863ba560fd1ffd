#pragma once

/**
 * @file game.hpp
 * @brief Finite cooperative Markov games with a shared team reward.
 *
 * Everything downstream (exact solvers, rollouts, policy updates, bound
 * checks) consumes this one tabular representation. Sizes are deliberately
 * capped so that dynamic-programming references stay exact: at most 64
 * states and 256 joint actions.
 */

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "b2mapo/rng.hpp"

namespace b2mapo {

inline constexpr int kMaxStates = 64;
inline constexpr int kMaxJointActions = 256;

/**
 * @brief Directed dependence edges (from -> to).
 *
 * An edge (j -> i) states that agent i's reward or dynamics component reacts
 * to agent j's action. Serves as ground truth when scoring learned
 * dependence graphs.
 */
struct GroundTruthDependence {
  int n_agents = 0;
  std::vector<std::pair<int, int>> edges;

  bool has_edge(int from, int to) const {
    for (const auto& e : edges)
      if (e.first == from && e.second == to) return true;
    return false;
  }
};

/**
 * @brief Tabular n-agent cooperative Markov game.
 *
 * States and per-agent actions are dense integer ranges. Joint actions are
 * flattened row-major over agent order: agent 0 varies slowest, agent n-1
 * fastest. Transition and reward tables are indexed [state][joint_action].
 * Observations are per-agent deterministic maps from state to an observation
 * index; the default is the identity (full observability).
 */
struct MarkovGame {
  std::string name = "game";
  int n_agents = 0;
  int n_states = 0;
  std::vector<int> n_actions;  ///< per-agent action counts
  double gamma = 0.95;
  double r_max = 1.0;  ///< bound on |reward|

  std::vector<double> initial_dist;                    ///< [state]
  std::vector<std::vector<std::vector<double>>> transition;  ///< [s][a][s']
  std::vector<std::vector<double>> reward;             ///< [s][a], shared team reward

  std::vector<int> n_obs;                        ///< per-agent observation counts
  std::vector<std::vector<int>> observation;     ///< [agent][state] -> obs index

  GroundTruthDependence dependence;

  /// Product of per-agent action counts.
  int joint_action_count() const;

  /// Flatten per-agent actions into a joint index (agent 0 slowest).
  int encode_joint(const std::vector<int>& actions) const;

  /// Inverse of encode_joint.
  std::vector<int> decode_joint(int joint) const;

  /**
   * @brief Check every structural invariant.
   *
   * Throws std::invalid_argument on malformed tables (row sums off by more
   * than 1e-12, rewards outside [-r_max, r_max], bad observation indices,
   * gamma outside (0,1)) and std::length_error when the state or joint
   * action caps are exceeded.
   */
  void validate() const;

  /**
   * @brief Sample one environment transition.
   * @return (next state, team reward).
   *
   * Throws std::invalid_argument when the state or joint action index is out
   * of range.
   */
  std::pair<int, double> step(int state, int joint_action, Rng& rng) const;

  /// Draw an initial state from initial_dist.
  int sample_initial(Rng& rng) const;
};

/**
 * @brief Chain-coupled coordination game.
 *
 * Agent i >= 1 earns a matching bonus when its action equals agent i-1's,
 * scaled by @p coupling; every agent also earns a private term for matching
 * the state's target bit, scaled by 1-coupling (agent 0 always earns the
 * private term). At coupling = 0 the reward is an additive per-agent sum and
 * the dynamics ignore actions entirely, so agents are numerically
 * independent. Ground-truth dependence is the chain (i-1 -> i), present only
 * when coupling > 0.
 *
 * States are two bits: bit0 is the reward target, bit1 is a nuisance bit
 * driven by joint action parity. @p masked replaces the identity observation
 * with bit0 only.
 */
MarkovGame build_dependency_chain_game(int n_agents, double coupling,
                                       std::uint64_t seed, bool masked = false);

/**
 * @brief Random game with Dirichlet(1) transition rows and uniform rewards
 * in [-1, 1]. Same action count for every agent; identity observations; no
 * ground-truth dependence.
 */
MarkovGame build_random_game(int n_agents, int n_states, int n_actions,
                             double gamma, std::uint64_t seed);

/// Serialize to the documented "b2mapo-game v1" text form (bit-exact reload).
std::string game_to_text(const MarkovGame& game);

/// Parse game_to_text output; validates before returning.
MarkovGame game_from_text(const std::string& text);

void save_game(const MarkovGame& game, const std::string& path);
MarkovGame load_game(const std::string& path);

}  // namespace b2mapo
