#pragma once

/**
 * @file verify.hpp
 * @brief Numeric property checks for the scheme's improvement guarantees.
 *
 * Every check draws randomized small instances, computes both sides of one
 * inequality with exact dynamic-programming quantities (never Monte Carlo),
 * and emits machine-readable BoundReports. Tolerances: 1e-12 for pure
 * arithmetic, 1e-9 for linear-solver-backed values. The advantage-magnitude
 * epsilon is labeled bound_eps in report extras to keep it apart from the
 * clip parameter clip_eps.
 */

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "b2mapo/exact.hpp"
#include "b2mapo/game.hpp"
#include "b2mapo/optimizer.hpp"

namespace b2mapo {

struct BoundReport {
  std::string statement;
  std::uint64_t seed = 0;
  double lhs = 0.0;
  double rhs = 0.0;
  double slack = 0.0;  ///< rhs - lhs
  double tol = 0.0;
  bool pass = false;   ///< slack >= -tol
  std::vector<std::pair<std::string, double>> extras;

  static BoundReport make(std::string statement, std::uint64_t seed, double lhs,
                          double rhs, double tol);
  double extra(const std::string& key) const;  ///< throws if missing
};

bool all_pass(const std::vector<BoundReport>& reports);
std::string bound_reports_to_csv(const std::vector<BoundReport>& reports);
void save_bound_reports(const std::vector<BoundReport>& reports,
                        const std::string& path);

/**
 * @brief One realized or synthetic update chain over a game.
 *
 * behavior is the policy that collected the (hypothetical) data; after[k] is
 * the joint policy once batch k has been updated. Batches list the agent ids
 * updated at each link.
 */
struct UpdateChain {
  MarkovGame game;
  double lambda = 0.95;
  std::vector<std::vector<int>> batches;
  JointPolicy behavior;
  std::vector<JointPolicy> after;
};

/// Random conditioned-policy chain: random game (2-4 agents, 3-5 states,
/// gamma in [0.8, 0.95]), random ordered partition, per-batch logit noise.
UpdateChain random_update_chain(std::uint64_t seed, double noise = 0.3);

/// Chain recorded by a Trainer round (requires record_chain).
UpdateChain chain_from_report(const MarkovGame& game, const RoundReport& report,
                              double lambda);

/**
 * @brief Exact per-link quantities of a chain.
 *
 * Per link k: alpha[k] is the max-over-states TV between consecutive joint
 * policies; eps[k] the max absolute exact advantage of the link's start
 * policy; xi[k] the max deviation of the tabulated off-policy estimator from
 * that exact advantage (zero in exact_advantage mode); realized[k] the
 * absolute gap between the exact return of the link's end policy and the
 * link surrogate; factor[k] the discounted state-drift factor
 * 1/(1-g) - 1/(1-g(1-sum_{j<=k} alpha_j)).
 */
struct ChainTerms {
  std::vector<double> alpha;
  std::vector<double> eps;
  std::vector<double> xi;
  std::vector<double> realized;
  std::vector<double> factor;
  double bound_eps = 0.0;       ///< max over links of eps[k]
  double j_behavior = 0.0;
  double j_final = 0.0;
  double surrogate_total = 0.0; ///< chained surrogate of the whole round
};

ChainTerms evaluate_chain(const UpdateChain& chain, bool exact_advantage,
                          int depth = 12);

/* Product-distribution TV is subadditive in the per-agent TVs; equality when
 * exactly one factor differs. Pure arithmetic, tol 1e-12. */
std::vector<BoundReport> check_tv_product_subadditivity(int n_trials,
                                                        std::uint64_t seed);

/* Expected exact advantage under a shifted product policy is bounded by
 * 2 * bound_eps * sum of per-agent TVs, per state. Tol 1e-9. */
std::vector<BoundReport> check_offpolicy_advantage_bound(int n_trials,
                                                         std::uint64_t seed);

/* Advantage expectations under two t-step state distributions differ by at
 * most 4 * bound_eps * TV(first, second) * (1 - (1 - TV(second, third))^t). */
std::vector<BoundReport> check_state_drift_bound(int n_trials, int max_t,
                                                 std::uint64_t seed);

/* Per chain link: |J(end) - link surrogate| <= 4 eps_k alpha_k factor_k +
 * xi_k/(1-g). Half the chains are synthetic, half harvested from
 * instrumented training rounds. */
std::vector<BoundReport> check_single_batch_surrogate_bound(
    int n_chains, std::uint64_t seed, bool exact_advantage);

/* Whole-round: |J(final) - chained surrogate| against both the drift-factor
 * form and its relaxed closed form 4 g eps/(1-g)^2 * sum alpha_k S_k. */
std::vector<BoundReport> check_joint_surrogate_bound(int n_chains,
                                                     std::uint64_t seed);

/* Replacing realized link gaps with their bound terms, one prefix at a time,
 * yields a non-decreasing sequence of bound expressions that all dominate
 * the whole-round gap. */
std::vector<BoundReport> check_incremental_tightening(int n_chains,
                                                      std::uint64_t seed);

/* A singleton-sequence run replayed through the fixed-sequence mode yields
 * bitwise identical chains; all per-link bound terms agree to 1e-12. */
BoundReport check_sequential_chain_equivalence(std::uint64_t seed);

/* Train the dependence-scheduled mode on a 2-agent game, distill, and
 * compare exact state values of the conditioned and independent joints.
 * Pass when the max gap is within 0.05 * r_max / (1 - gamma). */
BoundReport check_distilled_value_gap(std::uint64_t seed);

/* Simultaneous update: |J(new) - J(old) - sum_i per-agent linear term| <=
 * 4 bound_eps / (1-g) * sum_i alpha_i on random product-policy pairs. */
std::vector<BoundReport> check_simultaneous_update_bound(int n_trials,
                                                         std::uint64_t seed);

/* Per-agent sequential surrogates without off-policy correction: the gap is
 * bounded only up to a term carrying the preceding agents' TVs; that term is
 * reported in extras as uncontrollable. */
std::vector<BoundReport> check_sequential_update_bound(int n_trials,
                                                       std::uint64_t seed);

struct SuiteCounts {
  int subadditivity = 10000;
  int offpolicy = 1000;
  int drift = 500;
  int drift_max_t = 8;
  int single_chains = 200;
  int joint_chains = 200;
  int tightening = 100;
  int simultaneous = 500;
  int sequential = 200;
  int distill_seeds = 5;
};

/* The full default suite: every check above at the given counts, the
 * distillation gap reported as the median over its training seeds. */
std::vector<BoundReport> run_bound_suite(const SuiteCounts& counts,
                                         std::uint64_t seed);

}  // namespace b2mapo
