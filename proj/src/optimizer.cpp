#include "b2mapo/optimizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

namespace b2mapo {

namespace {

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

double clip(double x, double lo, double hi) { return std::min(std::max(x, lo), hi); }

struct SampleKey {
  int state = 0;
  const Step* step = nullptr;
};

std::vector<SampleKey> flatten(const TrajectoryBatch& traj) {
  std::vector<SampleKey> keys;
  for (const Episode& ep : traj.episodes)
    for (const Step& st : ep.steps) keys.push_back({st.state, &st});
  return keys;
}

std::vector<double> flatten_adv(const AdvantageEstimate& adv) {
  std::vector<double> flat;
  for (const auto& ep : adv.values) flat.insert(flat.end(), ep.begin(), ep.end());
  return flat;
}

double agent_prob(const PolicySet& set, int agent, const Step& st) {
  const ConditionedPolicy& c = set.conditioned[agent];
  return c.table->probs(st.observations[agent],
                        c.context.index(st.actions))[st.actions[agent]];
}

/* Gradient buffers keyed by the owning table, so shared tables accumulate
 * contributions from every aliasing agent. */
struct GradBuffers {
  std::unordered_map<PolicyTable*, std::vector<double>> buf;

  std::vector<double>& of(PolicyTable* t) {
    auto it = buf.find(t);
    if (it == buf.end())
      it = buf.emplace(t, std::vector<double>(t->logits.size(), 0.0)).first;
    return it->second;
  }

  void apply(double lr) {
    for (auto& [table, g] : buf) {
      for (double x : g)
        if (!std::isfinite(x))
          throw std::runtime_error("policy update: non-finite gradient, round aborted");
      for (std::size_t p = 0; p < g.size(); ++p) table->logits[p] += lr * g[p];
    }
  }
};

/* Adds coef * (onehot(action) - softmax(row)) into the row's gradient. */
void add_row_gradient(GradBuffers& grads, const ConditionedPolicy& c, int obs,
                      int ctx, int action, double coef) {
  std::vector<double> p = c.table->probs(obs, ctx);
  std::vector<double>& g = grads.of(c.table.get());
  const int off = c.table->row_offset(obs, ctx);
  for (int a = 0; a < c.table->n_actions; ++a)
    g[off + a] += coef * ((a == action ? 1.0 : 0.0) - p[a]);
}

double tv(const std::vector<double>& p, const std::vector<double>& q) {
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - q[i]);
  return 0.5 * acc;
}

std::vector<double> per_agent_alpha(const PolicySet& before,
                                    const PolicySet& after,
                                    const std::vector<int>& batch) {
  std::vector<double> alphas;
  for (int agent : batch) {
    const PolicyTable& tb = *before.conditioned[agent].table;
    const PolicyTable& ta = *after.conditioned[agent].table;
    double worst = 0.0;
    for (int o = 0; o < tb.n_obs; ++o)
      for (int c = 0; c < tb.n_contexts; ++c)
        worst = std::max(worst, tv(tb.probs(o, c), ta.probs(o, c)));
    alphas.push_back(worst);
  }
  return alphas;
}

}  // namespace

Mode mode_from_string(const std::string& s) {
  if (s == "mappo") return Mode::mappo;
  if (s == "a2po") return Mode::a2po;
  if (s == "b2mapo-dag") return Mode::b2mapo_dag;
  if (s == "b2mapo-fixed") return Mode::b2mapo_fixed;
  throw std::invalid_argument("unknown mode: " + s);
}

std::string mode_to_string(Mode m) {
  switch (m) {
    case Mode::mappo: return "mappo";
    case Mode::a2po: return "a2po";
    case Mode::b2mapo_dag: return "b2mapo-dag";
    case Mode::b2mapo_fixed: return "b2mapo-fixed";
  }
  throw std::logic_error("mode_to_string: bad enum");
}

void SchemeConfig::validate(int n_agents) const {
  if (!(clip_eps > 0.0 && clip_eps < 1.0))
    throw std::invalid_argument("config: clip_eps must lie in (0, 1)");
  if (!(lr > 0.0)) throw std::invalid_argument("config: lr must be positive");
  if (epochs < 1) throw std::invalid_argument("config: epochs >= 1");
  if (distill_period < 1) throw std::invalid_argument("config: distill_period >= 1");
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw std::invalid_argument("config: lambda in [0, 1]");
  if (n_episodes < 1 || horizon < 1)
    throw std::invalid_argument("config: rollout sizes >= 1");
  if (gamma_override >= 0.0 && !(gamma_override > 0.0 && gamma_override < 1.0))
    throw std::invalid_argument("config: gamma_override in (0, 1)");
  if (replan_period < 1) throw std::invalid_argument("config: replan_period >= 1");
  if (dag_period < 1) throw std::invalid_argument("config: dag_period >= 1");
  if (mode == Mode::b2mapo_fixed) {
    fixed_sequence.validate();
    if (fixed_sequence.n_agents != n_agents)
      throw std::invalid_argument("config: fixed_sequence agent count mismatch");
  }
}

double SchemeConfig::gamma(const MarkovGame& game) const {
  return gamma_override < 0.0 ? game.gamma : gamma_override;
}

std::vector<double> agent_advantage_magnitudes(const MarkovGame& game,
                                               const PolicySet& set,
                                               const TrajectoryBatch& traj,
                                               const AdvantageEstimate& adv) {
  std::vector<double> m(game.n_agents, 0.0);
  long long n = 0;
  for (std::size_t e = 0; e < traj.episodes.size(); ++e)
    for (std::size_t t = 0; t < traj.episodes[e].steps.size(); ++t) {
      const Step& st = traj.episodes[e].steps[t];
      const double a = std::abs(adv.values.at(e).at(t));
      for (int i = 0; i < game.n_agents; ++i)
        m[i] += a * (1.0 - agent_prob(set, i, st));
      ++n;
    }
  for (double& x : m) x /= static_cast<double>(n);
  return m;
}

BatchSequence plan_round(const SchemeConfig& config, int n_agents,
                         const BatchSequence& scheduled,
                         const std::vector<double>& magnitudes) {
  switch (config.mode) {
    case Mode::mappo:
      return BatchSequence::single(n_agents);
    case Mode::a2po: {
      std::vector<int> order(n_agents);
      std::iota(order.begin(), order.end(), 0);
      if (!magnitudes.empty()) {
        if (static_cast<int>(magnitudes.size()) != n_agents)
          throw std::invalid_argument("plan_round: magnitude arity mismatch");
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
          return magnitudes[a] > magnitudes[b];
        });
      }
      return BatchSequence::singletons(order);
    }
    case Mode::b2mapo_dag:
      if (scheduled.n_agents == n_agents && !scheduled.batches.empty()) {
        scheduled.validate();
        return scheduled;
      }
      return BatchSequence::single(n_agents);
    case Mode::b2mapo_fixed:
      config.fixed_sequence.validate();
      if (config.fixed_sequence.n_agents != n_agents)
        throw std::invalid_argument("plan_round: fixed sequence agent mismatch");
      return config.fixed_sequence;
  }
  throw std::logic_error("plan_round: bad mode");
}

double batch_ratio(const MarkovGame& game, const PolicySet& now,
                   const PolicySet& old, int state,
                   const std::vector<int>& actions, std::size_t batch_index,
                   double eps) {
  (void)game;
  if (batch_index >= now.sequence.batches.size())
    throw std::invalid_argument("batch_ratio: batch index out of range");
  Step st;  // reuse the (obs, actions) accessor shape
  st.state = state;
  st.actions = actions;
  st.observations.resize(now.conditioned.size());
  for (std::size_t i = 0; i < now.conditioned.size(); ++i)
    st.observations[i] = game.observation[i][state];

  double g = 1.0;
  for (std::size_t j = 0; j < batch_index; ++j)
    for (int agent : now.sequence.batches[j]) {
      const double po = agent_prob(old, agent, st);
      if (po <= 0.0)
        throw std::domain_error("batch_ratio: zero old-policy probability");
      g *= agent_prob(now, agent, st) / po;
    }
  g = clip(g, 1.0 - eps / 2.0, 1.0 + eps / 2.0);

  double r = 1.0;
  for (int agent : now.sequence.batches[batch_index]) {
    const double po = agent_prob(old, agent, st);
    if (po <= 0.0)
      throw std::domain_error("batch_ratio: zero old-policy probability");
    r *= agent_prob(now, agent, st) / po;
  }
  return r * g;
}

double batch_surrogate_loss(const std::vector<double>& ratios,
                            const std::vector<double>& advantages, double eps) {
  if (ratios.size() != advantages.size() || ratios.empty())
    throw std::invalid_argument("batch_surrogate_loss: arity mismatch");
  double acc = 0.0;
  for (std::size_t n = 0; n < ratios.size(); ++n) {
    const double l = ratios[n], a = advantages[n];
    acc += std::min(l * a, clip(l, 1.0 - eps, 1.0 + eps) * a);
  }
  return acc / static_cast<double>(ratios.size());
}

BatchUpdateStats update_batch(const MarkovGame& game, PolicySet& set,
                              const PolicySet& old_set, std::size_t batch_index,
                              const TrajectoryBatch& traj,
                              const AdvantageEstimate& adv,
                              const SchemeConfig& config) {
  if (batch_index >= set.sequence.batches.size())
    throw std::invalid_argument("update_batch: batch index out of range");
  if (!(set.sequence == old_set.sequence))
    throw std::invalid_argument("update_batch: sequence mismatch");
  const double t0 = now_seconds();
  const std::vector<int>& batch = set.sequence.batches[batch_index];
  const double eps = config.clip_eps;

  std::vector<SampleKey> keys = flatten(traj);
  std::vector<double> a = flatten_adv(adv);
  if (keys.size() != a.size())
    throw std::invalid_argument("update_batch: advantage arity mismatch");
  const std::size_t n = keys.size();

  // Per sample: the clipped preceding-batch product (constant during this
  // batch's epochs) and the batch agents' old probabilities.
  std::vector<double> g(n);
  std::vector<std::vector<double>> old_p(n, std::vector<double>(batch.size()));
  for (std::size_t s = 0; s < n; ++s) {
    const Step& st = *keys[s].step;
    double prod = 1.0;
    for (std::size_t j = 0; j < batch_index; ++j)
      for (int agent : set.sequence.batches[j]) {
        const double po = agent_prob(old_set, agent, st);
        if (po <= 0.0)
          throw std::domain_error("update_batch: zero old-policy probability");
        prod *= agent_prob(set, agent, st) / po;
      }
    g[s] = clip(prod, 1.0 - eps / 2.0, 1.0 + eps / 2.0);
    for (std::size_t bi = 0; bi < batch.size(); ++bi) {
      old_p[s][bi] = agent_prob(old_set, batch[bi], st);
      if (old_p[s][bi] <= 0.0)
        throw std::domain_error("update_batch: zero old-policy probability");
    }
  }

  auto ratios = [&]() {
    std::vector<double> l(n);
    for (std::size_t s = 0; s < n; ++s) {
      double r = 1.0;
      for (std::size_t bi = 0; bi < batch.size(); ++bi)
        r *= agent_prob(set, batch[bi], *keys[s].step) / old_p[s][bi];
      l[s] = r * g[s];
    }
    return l;
  };

  PolicySet before(set);
  BatchUpdateStats stats;
  stats.batch = batch;
  stats.surrogate_before = batch_surrogate_loss(ratios(), a, eps);

  const double inv_n = 1.0 / static_cast<double>(n);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    GradBuffers grads;
    for (int agent : batch) grads.of(set.conditioned[agent].table.get());
    std::vector<double> l = ratios();
    for (std::size_t s = 0; s < n; ++s) {
      const bool active = (a[s] >= 0.0) ? (l[s] <= 1.0 + eps) : (l[s] >= 1.0 - eps);
      if (!active || a[s] == 0.0) continue;
      const double coef = inv_n * a[s] * l[s];
      const Step& st = *keys[s].step;
      for (int agent : batch) {
        const ConditionedPolicy& c = set.conditioned[agent];
        add_row_gradient(grads, c, st.observations[agent],
                         c.context.index(st.actions), st.actions[agent], coef);
      }
    }
    grads.apply(config.lr);
  }

  stats.surrogate_after = batch_surrogate_loss(ratios(), a, eps);
  stats.agent_alpha = per_agent_alpha(before, set, batch);
  stats.joint_alpha = max_tv(before.to_joint_table(game), set.to_joint_table(game));
  stats.seconds = now_seconds() - t0;
  return stats;
}

BatchUpdateStats mappo_update(const MarkovGame& game, PolicySet& set,
                              const PolicySet& old_set,
                              const TrajectoryBatch& traj,
                              const AdvantageEstimate& adv,
                              const SchemeConfig& config) {
  if (!(set.sequence == old_set.sequence))
    throw std::invalid_argument("mappo_update: sequence mismatch");
  const double t0 = now_seconds();
  const double eps = config.clip_eps;
  std::vector<SampleKey> keys = flatten(traj);
  std::vector<double> a = flatten_adv(adv);
  if (keys.size() != a.size())
    throw std::invalid_argument("mappo_update: advantage arity mismatch");
  const std::size_t n = keys.size();
  const int agents = game.n_agents;

  std::vector<std::vector<double>> old_p(n, std::vector<double>(agents));
  for (std::size_t s = 0; s < n; ++s)
    for (int i = 0; i < agents; ++i) {
      old_p[s][i] = agent_prob(old_set, i, *keys[s].step);
      if (old_p[s][i] <= 0.0)
        throw std::domain_error("mappo_update: zero old-policy probability");
    }

  // Sum over agents of the per-agent clipped surrogate.
  auto surrogate = [&]() {
    double acc = 0.0;
    for (std::size_t s = 0; s < n; ++s)
      for (int i = 0; i < agents; ++i) {
        const double r = agent_prob(set, i, *keys[s].step) / old_p[s][i];
        acc += std::min(r * a[s], clip(r, 1.0 - eps, 1.0 + eps) * a[s]);
      }
    return acc / static_cast<double>(n);
  };

  PolicySet before(set);
  BatchUpdateStats stats;
  for (int i = 0; i < agents; ++i) stats.batch.push_back(i);
  stats.surrogate_before = surrogate();

  const double inv_n = 1.0 / static_cast<double>(n);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    GradBuffers grads;
    for (std::size_t s = 0; s < n; ++s) {
      const Step& st = *keys[s].step;
      for (int i = 0; i < agents; ++i) {
        const double r = agent_prob(set, i, st) / old_p[s][i];
        const bool active = (a[s] >= 0.0) ? (r <= 1.0 + eps) : (r >= 1.0 - eps);
        if (!active || a[s] == 0.0) continue;
        const ConditionedPolicy& c = set.conditioned[i];
        add_row_gradient(grads, c, st.observations[i], c.context.index(st.actions),
                         st.actions[i], inv_n * a[s] * r);
      }
    }
    grads.apply(config.lr);
  }

  stats.surrogate_after = surrogate();
  stats.agent_alpha = per_agent_alpha(before, set, stats.batch);
  stats.joint_alpha = max_tv(before.to_joint_table(game), set.to_joint_table(game));
  stats.seconds = now_seconds() - t0;
  return stats;
}

double distill_step(const MarkovGame& game, PolicySet& set,
                    const TrajectoryBatch& traj, double coefficient, double lr) {
  std::vector<SampleKey> keys = flatten(traj);
  if (keys.empty()) throw std::invalid_argument("distill_step: empty trajectory");
  const double inv_n = 1.0 / static_cast<double>(keys.size());

  double loss = 0.0;
  GradBuffers grads;
  for (const SampleKey& key : keys) {
    const Step& st = *key.step;
    for (int i = 0; i < game.n_agents; ++i) {
      const int obs = st.observations[i];
      std::vector<double> p = set.action_probs(i, obs, st.actions);
      std::vector<double> q = set.independent[i].table->probs(obs, 0);
      loss += inv_n * kl_divergence(p, q);  // throws on q = 0 under p > 0
      if (coefficient == 0.0) continue;
      std::vector<double>& g = grads.of(set.independent[i].table.get());
      const int off = set.independent[i].table->row_offset(obs, 0);
      for (std::size_t a = 0; a < q.size(); ++a)
        g[off + a] += inv_n * (q[a] - p[a]);
    }
  }
  if (coefficient != 0.0) grads.apply(-lr * coefficient);  // descend the KL
  return loss;
}

Trainer::Trainer(MarkovGame game, SchemeConfig config, std::uint64_t seed)
    : game_(std::move(game)), config_(std::move(config)), seed_(seed) {
  config_.validate(game_.n_agents);
  planned_ = plan_round(config_, game_.n_agents, scheduled_, {});
  set_ = make_policy_set(game_, planned_);
  int max_obs = 0, max_act = 0;
  for (int i = 0; i < game_.n_agents; ++i) {
    max_obs = std::max(max_obs, game_.n_obs[i]);
    max_act = std::max(max_act, game_.n_actions[i]);
  }
  scorer_ = make_scorer(config_.dag_window * (max_obs + max_act), game_.n_states,
                        derive_seed(seed_, 0xda6), 8);
}

void Trainer::force_sequence(const BatchSequence& seq) {
  seq.validate();
  if (seq.n_agents != game_.n_agents)
    throw std::invalid_argument("force_sequence: agent count mismatch");
  config_.fixed_sequence = seq;
}

RoundReport Trainer::run_round() {
  const double t0 = now_seconds();
  const std::uint64_t round_seed = derive_seed(seed_, static_cast<std::uint64_t>(round_));
  const double gamma = config_.gamma(game_);

  planned_ = plan_round(config_, game_.n_agents, scheduled_, magnitudes_);
  if (!(planned_ == set_.sequence)) restructure(set_, planned_, game_);

  RoundReport report;
  report.round = round_;
  report.sequence = set_.sequence;

  const PolicySet old_set(set_);
  TrajectoryBatch traj =
      collect_rollouts(game_, set_, set_.sequence, config_.n_episodes,
                       config_.horizon, derive_seed(round_seed, 1));
  report.j_mc = mean_return(traj, gamma);

  const JointPolicy behavior_joint = old_set.to_joint_table(game_);
  std::vector<double> value =
      config_.oracle ? exact_value(game_, behavior_joint)
                     : fit_value_table(traj, game_.n_states, gamma);
  if (config_.record_chain) {
    report.behavior = behavior_joint;
    report.value_used = value;
  }
  if (config_.oracle)
    report.j_exact_before = expected_return(game_, behavior_joint);

  const std::size_t n_batches = set_.sequence.batches.size();
  for (std::size_t k = 0; k < n_batches; ++k) {
    JointPolicy intermediate = set_.to_joint_table(game_);
    AdvantageEstimate adv;
    if (config_.oracle) {
      // Exact advantage of the newest intermediate policy per sample: the
      // estimation-error term vanishes and bound checks see clean chains.
      const Table a_table = solve_exact(game_, intermediate).advantage;
      adv.gamma = gamma;
      adv.lambda = config_.lambda;
      adv.mode = "exact";
      adv.values.resize(traj.episodes.size());
      for (std::size_t e = 0; e < traj.episodes.size(); ++e) {
        adv.values[e].resize(traj.episodes[e].steps.size());
        for (std::size_t t = 0; t < traj.episodes[e].steps.size(); ++t) {
          const Step& st = traj.episodes[e].steps[t];
          adv.values[e][t] = a_table[st.state][game_.encode_joint(st.actions)];
        }
      }
    } else {
      adv = corrected_advantage(game_, traj, value, behavior_joint, intermediate,
                                gamma, config_.lambda);
      if (config_.normalize_advantage) {
        double sum = 0.0, sq = 0.0;
        long long cnt = 0;
        for (const auto& ep : adv.values)
          for (double x : ep) {
            sum += x;
            sq += x * x;
            ++cnt;
          }
        const double mean = sum / cnt;
        const double sd = std::sqrt(std::max(sq / cnt - mean * mean, 1e-12));
        for (auto& ep : adv.values)
          for (double& x : ep) x = (x - mean) / sd;
      }
    }
    if (config_.mode == Mode::a2po && k == 0)
      magnitudes_ = agent_advantage_magnitudes(game_, old_set, traj, adv);

    BatchUpdateStats stats =
        (config_.mode == Mode::mappo)
            ? mappo_update(game_, set_, old_set, traj, adv, config_)
            : update_batch(game_, set_, old_set, k, traj, adv, config_);
    if (config_.record_chain)
      report.links.push_back(
          {stats.batch, intermediate, set_.to_joint_table(game_)});
    report.batches.push_back(std::move(stats));
  }

  if ((round_ + 1) % config_.distill_period == 0) {
    report.distill_kl =
        distill_step(game_, set_, traj, config_.distill_coef, config_.distill_lr);
    report.distilled = true;
  }

  if (config_.oracle) {
    report.j_exact_after = expected_return(game_, set_.to_joint_table(game_));
    report.have_exact = true;
  }

  // Upper layer: replan from the newest rollout's features.
  if (config_.mode == Mode::b2mapo_dag && round_ % config_.replan_period == 0) {
    auto features = trajectory_features(game_, traj, config_.dag_window);
    if (config_.oracle) {
      DependenceGraph graph = score_dependence(scorer_, features);
      scheduled_ =
          layer_topological(to_dag(thresholded_edges(graph), game_.n_agents),
                            game_.n_agents);
    } else {
      // Period-return targets and the schedule advantage for the upper PPO.
      std::vector<int> states;
      std::vector<double> targets;
      double adv0 = 0.0;
      for (const Episode& ep : traj.episodes) {
        std::vector<double> rewards, values, periods;
        for (const Step& st : ep.steps) {
          rewards.push_back(st.reward);
          values.push_back(scorer_.v_phi.at(st.state));
        }
        for (std::size_t t = 0; t < rewards.size(); ++t) {
          periods.push_back(dag_period_reward(rewards, t, gamma, config_.dag_period));
          states.push_back(ep.steps[t].state);
          targets.push_back(periods.back());
        }
        adv0 += dag_advantage(periods, values, gamma, config_.dag_period)[0];
      }
      adv0 /= static_cast<double>(traj.episodes.size());

      if (pending_sample_) {
        pending_.advantage = adv0;
        dag_buffer_.push_back(pending_);
        if (dag_buffer_.size() > 8)
          dag_buffer_.erase(dag_buffer_.begin());
        dag_generator_update(scorer_, dag_buffer_, config_.dag_clip_eps,
                             config_.dag_kl_coef, config_.dag_lr);
      }
      dag_critic_update(scorer_, states, targets, config_.dag_critic_lr);

      DependenceGraph graph = score_dependence(scorer_, features);
      Rng upper_rng(derive_seed(round_seed, 2));
      pending_ = sample_edge_set(graph, features, upper_rng);
      pending_sample_ = true;
      scheduled_ = layer_topological(to_dag(sampled_edges(pending_), game_.n_agents),
                                     game_.n_agents);
    }
  }

  ++round_;
  report.seconds = now_seconds() - t0;
  return report;
}

}  // namespace b2mapo
