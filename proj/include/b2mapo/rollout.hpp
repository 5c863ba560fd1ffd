#pragma once

/**
 * @file rollout.hpp
 * @brief Seeded trajectory collection and advantage estimation.
 *
 * One rollout set collected under a behavior policy serves every batch
 * update of a round. Advantages come in two flavors: plain GAE and the
 * off-policy variant whose lambda-products carry truncated importance
 * weights min(1, target/behavior) on the joint action probabilities.
 */

#include <cstdint>
#include <string>
#include <vector>

#include "b2mapo/batch.hpp"
#include "b2mapo/exact.hpp"
#include "b2mapo/game.hpp"
#include "b2mapo/policies.hpp"

namespace b2mapo {

struct Step {
  int state = 0;
  std::vector<int> observations;     ///< per agent
  std::vector<int> actions;          ///< per agent
  double reward = 0.0;
  double behavior_log_prob = 0.0;    ///< joint, chain rule in batch order
  std::vector<double> agent_log_probs;
};

struct Episode {
  std::vector<Step> steps;
};

struct TrajectoryBatch {
  std::string behavior_id;  ///< checksum of the behavior policy checkpoint
  std::uint64_t seed = 0;
  int horizon = 0;
  std::vector<Episode> episodes;
};

/// FNV-1a checksum (hex) of the policy checkpoint text; labels rollouts.
std::string policy_checksum(const PolicySet& set);

/**
 * @brief Roll out n_episodes of fixed horizon under the conditioned policy.
 *
 * Episode e owns the generator seeded with derive_seed(seed, e), so the
 * batch is bit-identical for a given seed and independent of collection
 * order. Horizon cuts take a zero bootstrap. Throws std::invalid_argument
 * when the policy's batch sequence differs from @p sequence.
 */
TrajectoryBatch collect_rollouts(const MarkovGame& game, const PolicySet& set,
                                 const BatchSequence& sequence, int n_episodes,
                                 int horizon, std::uint64_t seed);

/// Recompute every stored log-prob under @p behavior; throws
/// std::runtime_error when any deviates by more than @p tol.
void validate_rollouts(const MarkovGame& game, const PolicySet& behavior,
                       const TrajectoryBatch& traj, double tol = 1e-10);

struct AdvantageEstimate {
  double gamma = 0.0;
  double lambda = 0.0;
  std::string mode;  ///< "gae" or "corrected"
  std::vector<std::vector<double>> values;  ///< [episode][t]
};

/// delta_t = r_t + gamma V(s_{t+1}) - V(s_t), zero bootstrap at the cut.
std::vector<std::vector<double>> td_errors(const TrajectoryBatch& traj,
                                           const std::vector<double>& value,
                                           double gamma);

/// Standard lambda-weighted advantage, backward recursion over each episode.
AdvantageEstimate gae(const TrajectoryBatch& traj, const std::vector<double>& value,
                      double gamma, double lambda);

/**
 * @brief Off-policy advantage with truncated importance weights.
 *
 * A_t = delta_t + sum_{n>=1} gamma^n (prod_{j=1..n} lambda *
 * min(1, target(a|s)/behavior(a|s))) delta_{t+n}, truncated at episode end;
 * evaluated by backward recursion. Weights are checked to lie in [0, 1].
 * Throws std::domain_error when behavior gives a logged action zero
 * probability. With target == behavior this reduces to gae() exactly.
 */
AdvantageEstimate corrected_advantage(const MarkovGame& game,
                                      const TrajectoryBatch& traj,
                                      const std::vector<double>& value,
                                      const JointPolicy& behavior,
                                      const JointPolicy& target, double gamma,
                                      double lambda);

/// Per-state mean of empirical discounted returns-to-go; unvisited -> 0.
std::vector<double> fit_value_table(const TrajectoryBatch& traj, int n_states,
                                    double gamma);

/// Mean discounted episode return of the batch.
double mean_return(const TrajectoryBatch& traj, double gamma);

/// Columnar dump: one "episode t state a_1..a_n reward logp" row per step.
std::string trajectory_to_text(const TrajectoryBatch& traj);
void save_trajectory(const TrajectoryBatch& traj, const std::string& path);

}  // namespace b2mapo
