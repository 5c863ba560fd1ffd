#pragma once

/**
 * @file policies.hpp
 * @brief Tabular softmax policies over (observation, context) keys.
 *
 * Two families live side by side:
 *  - conditioned policies: one per agent, keyed by the agent's observation
 *    and by the actions of every agent in strictly earlier batches of the
 *    current BatchSequence (decision-time conditioning);
 *  - independent policies: one per agent, keyed by observation only, the
 *    distillation targets used for decentralized execution.
 *
 * Tables store logits; rows are materialized through a shift-invariant
 * softmax. Parameter sharing (optional) aliases the logit storage of agents
 * in the same batch with identical table shapes.
 */

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "b2mapo/batch.hpp"
#include "b2mapo/exact.hpp"
#include "b2mapo/game.hpp"
#include "b2mapo/rng.hpp"

namespace b2mapo {

/// Numerically stable softmax (max-shifted).
std::vector<double> softmax(const std::vector<double>& logits);

/// log softmax(logits)[a], max-shifted.
double log_softmax_at(const std::vector<double>& logits, int a);

/**
 * @brief Forward KL divergence sum_a p[a] * log(p[a]/q[a]).
 *
 * Terms with p[a] = 0 contribute zero. Throws std::domain_error when some
 * p[a] > 0 meets q[a] = 0 (the divergence is infinite).
 */
double kl_divergence(const std::vector<double>& p, const std::vector<double>& q);

/**
 * @brief Context key layout: which preceding agents an agent conditions on.
 *
 * Keys enumerate the context agents' actions row-major in ascending agent
 * order (first listed agent varies slowest).
 */
struct ContextSpec {
  std::vector<int> agents;         ///< sorted ascending
  std::vector<int> action_counts;  ///< aligned with agents

  int size() const {
    int p = 1;
    for (int c : action_counts) p *= c;
    return p;
  }

  /// Key for a fully or partially assigned joint action vector. Context
  /// agents must be assigned; others are ignored.
  int index(const std::vector<int>& joint_actions) const;

  bool operator==(const ContextSpec& other) const {
    return agents == other.agents && action_counts == other.action_counts;
  }
};

/// Dense logit table keyed by (observation, context, action).
struct PolicyTable {
  int n_obs = 0;
  int n_contexts = 1;
  int n_actions = 0;
  std::vector<double> logits;  ///< size n_obs * n_contexts * n_actions

  static std::shared_ptr<PolicyTable> make(int n_obs, int n_contexts, int n_actions);

  int row_offset(int obs, int ctx) const;
  double* row(int obs, int ctx);
  const double* row(int obs, int ctx) const;
  std::vector<double> row_logits(int obs, int ctx) const;
  /// Softmax of the addressed row. Throws std::invalid_argument on a bad key.
  std::vector<double> probs(int obs, int ctx) const;
  double log_prob(int obs, int ctx, int action) const;
};

struct ConditionedPolicy {
  int agent = 0;
  ContextSpec context;
  std::shared_ptr<PolicyTable> table;
};

struct IndependentPolicy {
  int agent = 0;
  std::shared_ptr<PolicyTable> table;  ///< n_contexts == 1
};

/**
 * @brief The full policy state of one training run.
 *
 * Holds the conditioned set (with its batch sequence) and the independent
 * distillation targets. Copying deep-copies all tables while preserving the
 * sharing topology within the copy.
 */
struct PolicySet {
  BatchSequence sequence;
  bool param_sharing = false;
  std::vector<ConditionedPolicy> conditioned;
  std::vector<IndependentPolicy> independent;

  PolicySet() = default;
  PolicySet(const PolicySet& other);
  PolicySet& operator=(const PolicySet& other);
  PolicySet(PolicySet&&) = default;
  PolicySet& operator=(PolicySet&&) = default;

  /// Conditional action probabilities of one agent given observation and the
  /// actions of its preceding agents (read from joint_actions).
  std::vector<double> action_probs(int agent, int obs,
                                   const std::vector<int>& joint_actions) const;

  /// Joint probability of a joint action at a state (chain rule in batch order).
  double joint_prob(const MarkovGame& game, int state,
                    const std::vector<int>& joint_actions) const;

  double joint_log_prob(const MarkovGame& game, int state,
                        const std::vector<int>& joint_actions) const;

  /// Dense [state][joint_action] table of the conditioned joint policy.
  JointPolicy to_joint_table(const MarkovGame& game) const;

  /// Dense joint table of the independent (product) policy.
  JointPolicy independent_joint_table(const MarkovGame& game) const;

  /// Sample a joint action batch-by-batch; returns the joint action vector.
  std::vector<int> sample_joint(const MarkovGame& game, int state, Rng& rng) const;
};

/**
 * @brief Build a uniform policy set for a game under a batch sequence.
 *
 * With @p param_sharing, agents in the same batch whose tables have
 * identical shapes alias one logit table.
 */
PolicySet make_policy_set(const MarkovGame& game, const BatchSequence& sequence,
                          bool param_sharing = false);

/// Gradient of log softmax(row)[action] in the row logits: onehot - softmax.
std::vector<double> log_prob_gradient(const std::vector<double>& row_logits, int action);

/**
 * @brief Visitation-weighted per-agent marginals of the conditioned joint.
 *
 * For each agent and observation, contexts are integrated out under the
 * conditioned joint policy, states weighted by its exact visitation.
 * Returns probability rows indexed [agent][obs][action].
 */
std::vector<std::vector<std::vector<double>>> marginalize(const PolicySet& set,
                                                          const MarkovGame& game);

/**
 * @brief Re-key the conditioned set onto a new batch sequence.
 *
 * New rows are initialized to the old joint policy's conditional action
 * distribution given (observation, new context), weighted by the old
 * policy's exact visitation; unreachable contexts fall back to the
 * unconditional marginal. Probabilities are floored at 1e-12 before the log
 * so later gradient steps stay finite. Independent policies are untouched.
 */
void restructure(PolicySet& set, const BatchSequence& new_sequence,
                 const MarkovGame& game);

/// Serialize the full policy set (bit-exact reload, sharing preserved).
std::string policy_set_to_text(const PolicySet& set);
PolicySet policy_set_from_text(const std::string& text);
void save_policy_set(const PolicySet& set, const std::string& path);
PolicySet load_policy_set(const std::string& path);

}  // namespace b2mapo
