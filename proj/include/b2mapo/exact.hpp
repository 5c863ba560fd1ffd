#pragma once

/* Exact dynamic-programming references for tabular joint policies.
 *
 * All quantities are computed by dense linear solves, never by sampling, so
 * they can serve as ground truth in tests and bound checks. Joint policies
 * are dense [state][joint_action] probability tables. Every solve asserts a
 * Bellman residual below 1e-10 and throws std::runtime_error otherwise.
 */

#include <vector>

#include "b2mapo/game.hpp"

namespace b2mapo {

using JointPolicy = std::vector<std::vector<double>>;
using Table = std::vector<std::vector<double>>;  // [state][joint_action]

/* Dense LU-style elimination with partial pivoting; A is consumed.
 * Throws std::runtime_error when the pivot collapses. */
std::vector<double> solve_dense(std::vector<std::vector<double>> a,
                                std::vector<double> b);

struct ExactTables {
  std::vector<double> value;       // V[s]
  Table q;                         // Q[s][a]
  Table advantage;                 // A[s][a] = Q - V
  std::vector<double> visitation;  // discounted state visitation, sums to 1
  double expected_return = 0.0;    // <initial_dist, V>
  double max_abs_advantage = 0.0;  // max_{s,a} |A|
};

/* Validate that pi is a proper policy table for the game (row sums 1). */
void check_policy_table(const MarkovGame& game, const JointPolicy& pi);

std::vector<double> exact_value(const MarkovGame& game, const JointPolicy& pi);
double expected_return(const MarkovGame& game, const JointPolicy& pi);
std::vector<double> exact_visitation(const MarkovGame& game, const JointPolicy& pi);
ExactTables solve_exact(const MarkovGame& game, const JointPolicy& pi);

/* Total variation distance 0.5*l1 between two distributions. */
double tv_distance(const std::vector<double>& p, const std::vector<double>& q);

/* max over states of tv_distance between policy rows. */
double max_tv(const JointPolicy& a, const JointPolicy& b);

/* E over (visitation of mu, actions from act) of a per-(s,a) function. */
double visitation_expectation(const MarkovGame& game, const JointPolicy& mu,
                              const JointPolicy& act, const Table& f);

/* State distribution after exactly t steps under pi from initial_dist. */
std::vector<double> state_distribution_at(const MarkovGame& game,
                                          const JointPolicy& pi, int t);

/* Closed-form expectation of the one-sided truncated importance-weighted
 * TD-error series. Per start pair (s,a): the TD error of V plus the
 * discounted sum over future steps, each step damped by
 * lambda*min(1, target/behavior) evaluated along behavior trajectories.
 * Forward recursion truncated at `depth` future steps; the geometric tail is
 * the caller's tolerance. Row sums of min(behavior, target) replace the
 * ratio so zero-probability behavior actions never divide. */
Table tabulate_corrected_advantage(const MarkovGame& game,
                                   const JointPolicy& behavior,
                                   const JointPolicy& target,
                                   const std::vector<double>& v, double lambda,
                                   int depth = 12);

/* One-step surrogate objective: J(prev) + 1/(1-gamma) * E over the
 * visitation of `next` (states) and `next` (actions) of advantage_table. */
double exact_batch_surrogate(const MarkovGame& game, const JointPolicy& prev,
                             const JointPolicy& next,
                             const Table& advantage_table);

/* One link of an update chain: the policy after a batch update and the
 * advantage table the surrogate used for that link. */
struct ChainStep {
  JointPolicy policy;
  Table advantage;
};

/* Chained surrogate: J(start) plus the per-link expectation terms, each
 * taken under the visitation of that link's own policy. */
double exact_joint_surrogate(const MarkovGame& game, const JointPolicy& start,
                             const std::vector<ChainStep>& chain);

}  // namespace b2mapo
