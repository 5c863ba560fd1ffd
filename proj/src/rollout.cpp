#include "b2mapo/rollout.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "b2mapo/rng.hpp"
#include "b2mapo/text_io.hpp"

namespace b2mapo {

std::string policy_checksum(const PolicySet& set) {
  const std::string text = policy_set_to_text(set);
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

TrajectoryBatch collect_rollouts(const MarkovGame& game, const PolicySet& set,
                                 const BatchSequence& sequence, int n_episodes,
                                 int horizon, std::uint64_t seed) {
  if (!(set.sequence == sequence))
    throw std::invalid_argument("collect_rollouts: policy sequence mismatch");
  if (n_episodes < 1 || horizon < 1)
    throw std::invalid_argument("collect_rollouts: need episodes and horizon >= 1");

  TrajectoryBatch traj;
  traj.behavior_id = policy_checksum(set);
  traj.seed = seed;
  traj.horizon = horizon;
  traj.episodes.resize(n_episodes);

  for (int e = 0; e < n_episodes; ++e) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(e)));
    Episode& ep = traj.episodes[e];
    ep.steps.reserve(horizon);
    int s = game.sample_initial(rng);
    for (int t = 0; t < horizon; ++t) {
      Step st;
      st.state = s;
      st.actions = set.sample_joint(game, s, rng);
      st.observations.resize(game.n_agents);
      st.agent_log_probs.resize(game.n_agents);
      double joint = 0.0;
      for (int i = 0; i < game.n_agents; ++i) {
        st.observations[i] = game.observation[i][s];
        const ConditionedPolicy& c = set.conditioned[i];
        st.agent_log_probs[i] =
            c.table->log_prob(st.observations[i], c.context.index(st.actions),
                              st.actions[i]);
        joint += st.agent_log_probs[i];
      }
      st.behavior_log_prob = joint;
      auto [next, reward] = game.step(s, game.encode_joint(st.actions), rng);
      st.reward = reward;
      ep.steps.push_back(std::move(st));
      s = next;
    }
  }
  return traj;
}

void validate_rollouts(const MarkovGame& game, const PolicySet& behavior,
                       const TrajectoryBatch& traj, double tol) {
  for (const Episode& ep : traj.episodes) {
    if (static_cast<int>(ep.steps.size()) > traj.horizon)
      throw std::runtime_error("validate_rollouts: episode exceeds horizon");
    for (const Step& st : ep.steps) {
      double joint = 0.0;
      for (int i = 0; i < game.n_agents; ++i) {
        if (st.observations[i] != game.observation[i][st.state])
          throw std::runtime_error("validate_rollouts: observation mismatch");
        const ConditionedPolicy& c = behavior.conditioned[i];
        const double lp = c.table->log_prob(
            st.observations[i], c.context.index(st.actions), st.actions[i]);
        if (std::abs(lp - st.agent_log_probs[i]) > tol)
          throw std::runtime_error("validate_rollouts: agent log-prob drift");
        joint += lp;
      }
      if (std::abs(joint - st.behavior_log_prob) > tol)
        throw std::runtime_error("validate_rollouts: joint log-prob drift");
    }
  }
}

std::vector<std::vector<double>> td_errors(const TrajectoryBatch& traj,
                                           const std::vector<double>& value,
                                           double gamma) {
  std::vector<std::vector<double>> out(traj.episodes.size());
  for (std::size_t e = 0; e < traj.episodes.size(); ++e) {
    const auto& steps = traj.episodes[e].steps;
    out[e].resize(steps.size());
    for (std::size_t t = 0; t < steps.size(); ++t) {
      const double next_v =
          (t + 1 < steps.size()) ? value.at(steps[t + 1].state) : 0.0;
      out[e][t] = steps[t].reward + gamma * next_v - value.at(steps[t].state);
    }
  }
  return out;
}

AdvantageEstimate gae(const TrajectoryBatch& traj, const std::vector<double>& value,
                      double gamma, double lambda) {
  AdvantageEstimate est;
  est.gamma = gamma;
  est.lambda = lambda;
  est.mode = "gae";
  est.values = td_errors(traj, value, gamma);
  for (auto& ep : est.values)
    for (std::size_t t = ep.size(); t-- > 1;)
      ep[t - 1] += gamma * lambda * ep[t];
  return est;
}

AdvantageEstimate corrected_advantage(const MarkovGame& game,
                                      const TrajectoryBatch& traj,
                                      const std::vector<double>& value,
                                      const JointPolicy& behavior,
                                      const JointPolicy& target, double gamma,
                                      double lambda) {
  AdvantageEstimate est;
  est.gamma = gamma;
  est.lambda = lambda;
  est.mode = "corrected";
  est.values = td_errors(traj, value, gamma);
  for (std::size_t e = 0; e < est.values.size(); ++e) {
    const auto& steps = traj.episodes[e].steps;
    for (const Step& st : steps)
      if (behavior.at(st.state).at(game.encode_joint(st.actions)) <= 0.0)
        throw std::domain_error("corrected_advantage: zero behavior probability");
    auto& adv = est.values[e];
    for (std::size_t t = adv.size(); t-- > 1;) {
      const Step& st = steps[t];
      const int a = game.encode_joint(st.actions);
      const double b = behavior[st.state][a];
      const double w = std::min(1.0, target.at(st.state).at(a) / b);
      if (!(w >= 0.0 && w <= 1.0))
        throw std::logic_error("corrected_advantage: weight outside [0, 1]");
      adv[t - 1] += gamma * lambda * w * adv[t];
    }
  }
  return est;
}

std::vector<double> fit_value_table(const TrajectoryBatch& traj, int n_states,
                                    double gamma) {
  std::vector<double> sum(n_states, 0.0);
  std::vector<long long> count(n_states, 0);
  for (const Episode& ep : traj.episodes) {
    double g = 0.0;
    for (std::size_t t = ep.steps.size(); t-- > 0;) {
      g = ep.steps[t].reward + gamma * g;
      sum.at(ep.steps[t].state) += g;
      count[ep.steps[t].state]++;
    }
  }
  std::vector<double> v(n_states, 0.0);
  for (int s = 0; s < n_states; ++s)
    if (count[s] > 0) v[s] = sum[s] / static_cast<double>(count[s]);
  return v;
}

double mean_return(const TrajectoryBatch& traj, double gamma) {
  double total = 0.0;
  for (const Episode& ep : traj.episodes) {
    double g = 0.0, scale = 1.0;
    for (const Step& st : ep.steps) {
      g += scale * st.reward;
      scale *= gamma;
    }
    total += g;
  }
  return total / static_cast<double>(traj.episodes.size());
}

std::string trajectory_to_text(const TrajectoryBatch& traj) {
  std::ostringstream out;
  out << "b2mapo-traj v1\n";
  out << "behavior " << traj.behavior_id << "\n";
  out << "seed " << traj.seed << "\n";
  out << "horizon " << traj.horizon << "\n";
  out << "episodes " << traj.episodes.size() << "\n";
  for (std::size_t e = 0; e < traj.episodes.size(); ++e) {
    const auto& steps = traj.episodes[e].steps;
    for (std::size_t t = 0; t < steps.size(); ++t) {
      const Step& st = steps[t];
      out << e << " " << t << " " << st.state;
      for (int a : st.actions) out << " " << a;
      out << " " << format_double_exact(st.reward) << " "
          << format_double_exact(st.behavior_log_prob) << "\n";
    }
  }
  out << "end\n";
  return out.str();
}

void save_trajectory(const TrajectoryBatch& traj, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::invalid_argument("save_trajectory: cannot open " + path);
  out << trajectory_to_text(traj);
  if (!out) throw std::runtime_error("save_trajectory: write failed for " + path);
}

}  // namespace b2mapo
