#pragma once

/**
 * @file optimizer.hpp
 * @brief Lower layer: sequential batch-by-batch policy updates.
 *
 * One rollout per round under the behavior policy serves every batch. For
 * batch k the surrogate ratio is the batch's own joint ratio times the
 * clipped product of all preceding batches' ratios; advantages are
 * recomputed before each batch update with the chain's newest intermediate
 * policy as correction target. MAPPO (one batch, per-agent ratios) and A2PO
 * (singleton batches, advantage-ordered) are configuration special cases.
 * The independent execution policies are distilled periodically by forward
 * KL toward the conditioned policy's empirical conditionals.
 */

#include <cstdint>
#include <string>
#include <vector>

#include "b2mapo/batch.hpp"
#include "b2mapo/exact.hpp"
#include "b2mapo/game.hpp"
#include "b2mapo/policies.hpp"
#include "b2mapo/rollout.hpp"
#include "b2mapo/scheduler.hpp"

namespace b2mapo {

enum class Mode { mappo, a2po, b2mapo_dag, b2mapo_fixed };

Mode mode_from_string(const std::string& s);
std::string mode_to_string(Mode m);

struct SchemeConfig {
  Mode mode = Mode::mappo;
  double clip_eps = 0.2;   ///< per-batch clip, uniform
  double lr = 0.05;
  int epochs = 4;
  int distill_period = 5;  ///< rounds between distillation steps
  double distill_coef = 1.0;
  double distill_lr = 0.5;
  double lambda = 0.95;
  double gamma_override = -1.0;  ///< < 0: use the game's gamma
  int n_episodes = 32;
  int horizon = 64;
  bool oracle = false;     ///< exact values/advantages, deterministic schedule
  bool normalize_advantage = false;  ///< must stay off for bound checks
  bool record_chain = false;         ///< keep per-batch joint snapshots
  BatchSequence fixed_sequence;      ///< for mode b2mapo_fixed
  int replan_period = 5;   ///< rounds between upper-layer replans
  int dag_window = 4;
  double dag_clip_eps = 0.2;
  double dag_kl_coef = 0.5;
  double dag_lr = 0.01;
  double dag_critic_lr = 0.1;
  int dag_period = 16;     ///< period length for upper-layer rewards

  void validate(int n_agents) const;
  double gamma(const MarkovGame& game) const;
};

/// Per-agent proxy for how much estimated advantage an agent could still
/// capture: mean over samples of |A| * (1 - pi^i(a^i | key)).
std::vector<double> agent_advantage_magnitudes(const MarkovGame& game,
                                               const PolicySet& set,
                                               const TrajectoryBatch& traj,
                                               const AdvantageEstimate& adv);

/**
 * @brief Batch sequence for the next round.
 *
 * mappo: one batch of all agents. a2po: singleton batches by descending
 * magnitude (ties by agent index). b2mapo_dag: the scheduler's layered
 * sequence. b2mapo_fixed: the validated user sequence.
 */
BatchSequence plan_round(const SchemeConfig& config, int n_agents,
                         const BatchSequence& scheduled,
                         const std::vector<double>& magnitudes);

/**
 * @brief Double-clipped surrogate ratio for one sample.
 *
 * l = (new/old over the batch's own agents) * g with g the product of all
 * preceding batches' ratios clipped to 1 +- eps/2. Throws std::domain_error
 * when the old policy gives the logged action zero probability.
 */
double batch_ratio(const MarkovGame& game, const PolicySet& now,
                   const PolicySet& old, int state,
                   const std::vector<int>& actions, std::size_t batch_index,
                   double eps);

/// Mean over samples of min(l*A, clip(l, 1 +- eps)*A).
double batch_surrogate_loss(const std::vector<double>& ratios,
                            const std::vector<double>& advantages, double eps);

struct BatchUpdateStats {
  std::vector<int> batch;
  double surrogate_before = 0.0;
  double surrogate_after = 0.0;
  std::vector<double> agent_alpha;  ///< max TV per updated agent over keys
  double joint_alpha = 0.0;         ///< max TV of the joint policy over states
  double seconds = 0.0;
};

/**
 * @brief Gradient-ascent epochs on the double-clipped surrogate for one
 * batch; only that batch's parameters move. Throws std::runtime_error on
 * non-finite gradients (round aborted).
 */
BatchUpdateStats update_batch(const MarkovGame& game, PolicySet& set,
                              const PolicySet& old_set, std::size_t batch_index,
                              const TrajectoryBatch& traj,
                              const AdvantageEstimate& adv,
                              const SchemeConfig& config);

/// Simultaneous per-agent clipped update of every agent; the mode=mappo
/// round path calls exactly this.
BatchUpdateStats mappo_update(const MarkovGame& game, PolicySet& set,
                              const PolicySet& old_set,
                              const TrajectoryBatch& traj,
                              const AdvantageEstimate& adv,
                              const SchemeConfig& config);

/**
 * @brief One forward-KL distillation step of the independent policies.
 *
 * Loss: mean over rollout samples of sum_i KL(conditioned row ||
 * independent row); only independent logits move, scaled by coefficient.
 * Returns the loss before the step. Throws std::domain_error on an
 * absolute-continuity violation.
 */
double distill_step(const MarkovGame& game, PolicySet& set,
                    const TrajectoryBatch& traj, double coefficient, double lr);

struct ChainLink {
  std::vector<int> batch;
  JointPolicy before;
  JointPolicy after;
};

struct RoundReport {
  int round = 0;
  BatchSequence sequence;
  std::vector<BatchUpdateStats> batches;
  double j_mc = 0.0;
  double j_exact_before = 0.0;  ///< oracle mode only
  double j_exact_after = 0.0;   ///< oracle mode only
  bool have_exact = false;
  double distill_kl = 0.0;
  bool distilled = false;
  double seconds = 0.0;
  /* record_chain extras (small games only): */
  JointPolicy behavior;
  std::vector<double> value_used;
  std::vector<ChainLink> links;
};

/**
 * @brief Owns one training run: policies, upper-layer state, round counter.
 *
 * Per-round seeds derive from (master seed, round), so runs are bit
 * reproducible. In dag mode the upper layer replans every replan_period
 * rounds from the newest rollout's features; oracle runs take the
 * deterministic thresholded edge set, training runs sample edge sets and
 * feed the generator/critic updates.
 */
class Trainer {
 public:
  Trainer(MarkovGame game, SchemeConfig config, std::uint64_t seed);

  RoundReport run_round();

  const MarkovGame& game() const { return game_; }
  const PolicySet& policies() const { return set_; }
  PolicySet& policies() { return set_; }
  const AttentionScorer& scorer() const { return scorer_; }
  const BatchSequence& planned_sequence() const { return planned_; }
  int round_index() const { return round_; }

  /// Override the next round's sequence (restructures lazily at round
  /// start); only meaningful for mode b2mapo_fixed.
  void force_sequence(const BatchSequence& seq);

 private:
  MarkovGame game_;
  SchemeConfig config_;
  std::uint64_t seed_;
  PolicySet set_;
  AttentionScorer scorer_;
  BatchSequence planned_;
  std::vector<double> magnitudes_;
  BatchSequence scheduled_;      ///< latest upper-layer layering
  std::vector<EdgeSample> dag_buffer_;
  bool pending_sample_ = false;
  EdgeSample pending_;
  int round_ = 0;
};

}  // namespace b2mapo
