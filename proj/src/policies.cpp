#include "b2mapo/policies.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "b2mapo/text_io.hpp"

namespace b2mapo {

std::vector<double> softmax(const std::vector<double>& logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty row");
  double mx = logits[0];
  for (double l : logits) mx = std::max(mx, l);
  std::vector<double> out(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    z += out[i];
  }
  for (double& p : out) p /= z;
  return out;
}

double log_softmax_at(const std::vector<double>& logits, int a) {
  if (a < 0 || a >= static_cast<int>(logits.size()))
    throw std::invalid_argument("log_softmax_at: action out of range");
  double mx = logits[0];
  for (double l : logits) mx = std::max(mx, l);
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  return logits[a] - mx - std::log(z);
}

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] <= 0.0)
      throw std::domain_error("kl_divergence: p has mass where q vanishes");
    acc += p[i] * std::log(p[i] / q[i]);
  }
  return acc;
}

std::vector<double> log_prob_gradient(const std::vector<double>& row_logits, int action) {
  std::vector<double> g = softmax(row_logits);
  for (double& x : g) x = -x;
  if (action < 0 || action >= static_cast<int>(g.size()))
    throw std::invalid_argument("log_prob_gradient: action out of range");
  g[action] += 1.0;
  return g;
}

int ContextSpec::index(const std::vector<int>& joint_actions) const {
  int idx = 0;
  for (std::size_t k = 0; k < agents.size(); ++k) {
    const int agent = agents[k];
    if (agent < 0 || agent >= static_cast<int>(joint_actions.size()))
      throw std::invalid_argument("ContextSpec: context agent outside joint action");
    const int a = joint_actions[agent];
    if (a < 0 || a >= action_counts[k])
      throw std::invalid_argument("ContextSpec: unknown context key");
    idx = idx * action_counts[k] + a;
  }
  return idx;
}

std::shared_ptr<PolicyTable> PolicyTable::make(int n_obs, int n_contexts, int n_actions) {
  if (n_obs < 1 || n_contexts < 1 || n_actions < 1)
    throw std::invalid_argument("PolicyTable: bad shape");
  auto t = std::make_shared<PolicyTable>();
  t->n_obs = n_obs;
  t->n_contexts = n_contexts;
  t->n_actions = n_actions;
  t->logits.assign(static_cast<std::size_t>(n_obs) * n_contexts * n_actions, 0.0);
  return t;
}

int PolicyTable::row_offset(int obs, int ctx) const {
  if (obs < 0 || obs >= n_obs || ctx < 0 || ctx >= n_contexts)
    throw std::invalid_argument("PolicyTable: unknown (observation, context) key");
  return (obs * n_contexts + ctx) * n_actions;
}

double* PolicyTable::row(int obs, int ctx) { return logits.data() + row_offset(obs, ctx); }
const double* PolicyTable::row(int obs, int ctx) const {
  return logits.data() + row_offset(obs, ctx);
}

std::vector<double> PolicyTable::row_logits(int obs, int ctx) const {
  const double* r = row(obs, ctx);
  return std::vector<double>(r, r + n_actions);
}

std::vector<double> PolicyTable::probs(int obs, int ctx) const {
  return softmax(row_logits(obs, ctx));
}

double PolicyTable::log_prob(int obs, int ctx, int action) const {
  return log_softmax_at(row_logits(obs, ctx), action);
}

namespace {

/* Deep copy preserving the sharing topology of the source. */
std::shared_ptr<PolicyTable> clone_table(
    const std::shared_ptr<PolicyTable>& src,
    std::unordered_map<const PolicyTable*, std::shared_ptr<PolicyTable>>& seen) {
  auto it = seen.find(src.get());
  if (it != seen.end()) return it->second;
  auto copy = std::make_shared<PolicyTable>(*src);
  seen.emplace(src.get(), copy);
  return copy;
}

}  // namespace

PolicySet::PolicySet(const PolicySet& other)
    : sequence(other.sequence), param_sharing(other.param_sharing) {
  std::unordered_map<const PolicyTable*, std::shared_ptr<PolicyTable>> seen;
  conditioned.reserve(other.conditioned.size());
  for (const auto& c : other.conditioned)
    conditioned.push_back({c.agent, c.context, clone_table(c.table, seen)});
  independent.reserve(other.independent.size());
  for (const auto& p : other.independent)
    independent.push_back({p.agent, clone_table(p.table, seen)});
}

PolicySet& PolicySet::operator=(const PolicySet& other) {
  if (this != &other) {
    PolicySet tmp(other);
    *this = std::move(tmp);
  }
  return *this;
}

std::vector<double> PolicySet::action_probs(int agent, int obs,
                                            const std::vector<int>& joint_actions) const {
  if (agent < 0 || agent >= static_cast<int>(conditioned.size()))
    throw std::invalid_argument("PolicySet: unknown agent");
  const ConditionedPolicy& c = conditioned[agent];
  return c.table->probs(obs, c.context.index(joint_actions));
}

double PolicySet::joint_log_prob(const MarkovGame& game, int state,
                                 const std::vector<int>& joint_actions) const {
  double acc = 0.0;
  for (const auto& batch : sequence.batches)
    for (int agent : batch) {
      const ConditionedPolicy& c = conditioned[agent];
      const int obs = game.observation[agent][state];
      acc += c.table->log_prob(obs, c.context.index(joint_actions), joint_actions[agent]);
    }
  return acc;
}

double PolicySet::joint_prob(const MarkovGame& game, int state,
                             const std::vector<int>& joint_actions) const {
  return std::exp(joint_log_prob(game, state, joint_actions));
}

JointPolicy PolicySet::to_joint_table(const MarkovGame& game) const {
  const int S = game.n_states;
  const int A = game.joint_action_count();
  JointPolicy out(S, std::vector<double>(A, 0.0));
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) out[s][a] = joint_prob(game, s, game.decode_joint(a));
  return out;
}

JointPolicy PolicySet::independent_joint_table(const MarkovGame& game) const {
  const int S = game.n_states;
  const int A = game.joint_action_count();
  JointPolicy out(S, std::vector<double>(A, 1.0));
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      auto acts = game.decode_joint(a);
      for (int i = 0; i < game.n_agents; ++i) {
        const auto& p = independent[i];
        out[s][a] *= softmax(p.table->row_logits(game.observation[i][s], 0))[acts[i]];
      }
    }
  return out;
}

std::vector<int> PolicySet::sample_joint(const MarkovGame& game, int state, Rng& rng) const {
  std::vector<int> actions(game.n_agents, -1);
  for (const auto& batch : sequence.batches)
    for (int agent : batch) {
      const ConditionedPolicy& c = conditioned[agent];
      const int obs = game.observation[agent][state];
      actions[agent] = rng.categorical(c.table->probs(obs, c.context.index(actions)));
    }
  return actions;
}

PolicySet make_policy_set(const MarkovGame& game, const BatchSequence& sequence,
                          bool param_sharing) {
  sequence.validate();
  if (sequence.n_agents != game.n_agents)
    throw std::invalid_argument("make_policy_set: agent count mismatch");

  PolicySet set;
  set.sequence = sequence;
  set.param_sharing = param_sharing;
  set.conditioned.resize(game.n_agents);

  for (std::size_t k = 0; k < sequence.batches.size(); ++k) {
    // Sharing groups: same batch, same (n_obs, n_actions, context shape).
    std::vector<std::pair<ConditionedPolicy*, int>> built;
    for (int agent : sequence.batches[k]) {
      ContextSpec ctx;
      ctx.agents = sequence.preceding_agents(agent);
      for (int j : ctx.agents) ctx.action_counts.push_back(game.n_actions[j]);

      ConditionedPolicy& c = set.conditioned[agent];
      c.agent = agent;
      c.context = ctx;
      if (param_sharing) {
        for (auto& [other, other_agent] : built) {
          if (other->table->n_obs == game.n_obs[agent] &&
              other->table->n_actions == game.n_actions[agent] &&
              other->context.action_counts == ctx.action_counts) {
            c.table = other->table;
            break;
          }
        }
      }
      if (!c.table)
        c.table = PolicyTable::make(game.n_obs[agent], ctx.size(), game.n_actions[agent]);
      built.emplace_back(&c, agent);
    }
  }

  set.independent.resize(game.n_agents);
  for (int i = 0; i < game.n_agents; ++i) {
    set.independent[i].agent = i;
    set.independent[i].table = PolicyTable::make(game.n_obs[i], 1, game.n_actions[i]);
  }
  return set;
}

namespace {

/* Visitation weights per (agent observation) bucket. Falls back to uniform
 * weights when the bucket carries no visitation mass. */
struct ObsWeights {
  std::vector<std::vector<int>> states;     // [obs] -> member states
  std::vector<std::vector<double>> weight;  // [obs] -> normalized weights
};

ObsWeights obs_weights(const MarkovGame& game, int agent, const std::vector<double>& d) {
  ObsWeights w;
  w.states.assign(game.n_obs[agent], {});
  w.weight.assign(game.n_obs[agent], {});
  for (int s = 0; s < game.n_states; ++s)
    w.states[game.observation[agent][s]].push_back(s);
  for (int o = 0; o < game.n_obs[agent]; ++o) {
    double total = 0.0;
    for (int s : w.states[o]) total += d[s];
    for (int s : w.states[o])
      w.weight[o].push_back(total > 1e-300 ? d[s] / total
                                           : 1.0 / static_cast<double>(w.states[o].size()));
  }
  return w;
}

}  // namespace

std::vector<std::vector<std::vector<double>>> marginalize(const PolicySet& set,
                                                          const MarkovGame& game) {
  const JointPolicy joint = set.to_joint_table(game);
  const std::vector<double> d = exact_visitation(game, joint);
  const int A = game.joint_action_count();

  std::vector<std::vector<std::vector<double>>> out(game.n_agents);
  for (int i = 0; i < game.n_agents; ++i) {
    ObsWeights w = obs_weights(game, i, d);
    out[i].assign(game.n_obs[i], std::vector<double>(game.n_actions[i], 0.0));
    for (int o = 0; o < game.n_obs[i]; ++o) {
      if (w.states[o].empty()) {
        for (double& p : out[i][o]) p = 1.0 / game.n_actions[i];
        continue;
      }
      for (std::size_t si = 0; si < w.states[o].size(); ++si) {
        const int s = w.states[o][si];
        for (int a = 0; a < A; ++a)
          out[i][o][game.decode_joint(a)[i]] += w.weight[o][si] * joint[s][a];
      }
      double z = 0.0;
      for (double p : out[i][o]) z += p;
      for (double& p : out[i][o]) p /= z;
    }
  }
  return out;
}

void restructure(PolicySet& set, const BatchSequence& new_sequence,
                 const MarkovGame& game) {
  new_sequence.validate();
  if (new_sequence == set.sequence) return;

  const JointPolicy joint = set.to_joint_table(game);
  const std::vector<double> d = exact_visitation(game, joint);
  const int A = game.joint_action_count();

  PolicySet fresh = make_policy_set(game, new_sequence, set.param_sharing);
  for (int i = 0; i < game.n_agents; ++i) {
    ConditionedPolicy& c = fresh.conditioned[i];
    ObsWeights w = obs_weights(game, i, d);
    for (int o = 0; o < game.n_obs[i]; ++o) {
      for (int ctx = 0; ctx < c.context.size(); ++ctx) {
        std::vector<double> numer(game.n_actions[i], 0.0);
        std::vector<double> fallback(game.n_actions[i], 0.0);
        for (std::size_t si = 0; si < w.states[o].size(); ++si) {
          const int s = w.states[o][si];
          const double ws = w.weight[o][si];
          for (int a = 0; a < A; ++a) {
            const auto acts = game.decode_joint(a);
            const double mass = ws * joint[s][a];
            fallback[acts[i]] += mass;
            if (!c.context.agents.empty() && c.context.index(acts) != ctx) continue;
            numer[acts[i]] += mass;
          }
        }
        double z = 0.0;
        for (double p : numer) z += p;
        const std::vector<double>& src = (z > 1e-12) ? numer : fallback;
        double zz = 0.0;
        std::vector<double> p(game.n_actions[i]);
        for (int a = 0; a < game.n_actions[i]; ++a) {
          p[a] = std::max(src[a], 1e-12);
          zz += p[a];
        }
        double* row = c.table->row(o, ctx);
        for (int a = 0; a < game.n_actions[i]; ++a) row[a] = std::log(p[a] / zz);
      }
    }
  }
  set.sequence = new_sequence;
  set.conditioned = std::move(fresh.conditioned);
}

std::string policy_set_to_text(const PolicySet& set) {
  std::ostringstream out;
  out << "b2mapo-policy v1\n";
  out << "agents " << set.conditioned.size() << "\n";
  out << "sharing " << (set.param_sharing ? 1 : 0) << "\n";
  out << "sequence " << set.sequence.batches.size() << "\n";
  for (const auto& b : set.sequence.batches) {
    out << "batch " << b.size();
    for (int a : b) out << " " << a;
    out << "\n";
  }

  std::vector<const PolicyTable*> tables;
  std::unordered_map<const PolicyTable*, int> ids;
  auto intern = [&](const PolicyTable* t) {
    auto it = ids.find(t);
    if (it != ids.end()) return it->second;
    int id = static_cast<int>(tables.size());
    tables.push_back(t);
    ids.emplace(t, id);
    return id;
  };
  std::vector<int> cond_ids, ind_ids;
  for (const auto& c : set.conditioned) cond_ids.push_back(intern(c.table.get()));
  for (const auto& p : set.independent) ind_ids.push_back(intern(p.table.get()));

  out << "tables " << tables.size() << "\n";
  for (std::size_t id = 0; id < tables.size(); ++id) {
    const PolicyTable* t = tables[id];
    out << "table " << id << " " << t->n_obs << " " << t->n_contexts << " "
        << t->n_actions;
    for (double l : t->logits) out << " " << format_double_exact(l);
    out << "\n";
  }

  out << "conditioned " << set.conditioned.size() << "\n";
  for (std::size_t i = 0; i < set.conditioned.size(); ++i) {
    const auto& c = set.conditioned[i];
    out << "agent " << c.agent << " table " << cond_ids[i] << " context "
        << c.context.agents.size();
    for (int a : c.context.agents) out << " " << a;
    for (int n : c.context.action_counts) out << " " << n;
    out << "\n";
  }
  out << "independent " << set.independent.size() << "\n";
  for (std::size_t i = 0; i < set.independent.size(); ++i)
    out << "agent " << set.independent[i].agent << " table " << ind_ids[i] << "\n";
  out << "end\n";
  return out.str();
}

namespace {

struct PolicyLineReader {
  std::istringstream in;
  explicit PolicyLineReader(const std::string& text) : in(text) {}
  std::vector<std::string> next() {
    std::string line;
    while (std::getline(in, line)) {
      auto toks = split_ws(line);
      if (!toks.empty()) return toks;
    }
    throw std::invalid_argument("policy text: unexpected end of input");
  }
};

}  // namespace

PolicySet policy_set_from_text(const std::string& text) {
  PolicyLineReader r(text);
  auto toks = r.next();
  if (toks.size() != 2 || toks[0] != "b2mapo-policy" || toks[1] != "v1")
    throw std::invalid_argument("policy text: bad header");

  PolicySet set;
  toks = r.next();
  if (toks[0] != "agents") throw std::invalid_argument("policy text: expected agents");
  const int n_agents = static_cast<int>(parse_int(toks.at(1)));
  toks = r.next();
  if (toks[0] != "sharing") throw std::invalid_argument("policy text: expected sharing");
  set.param_sharing = parse_int(toks.at(1)) != 0;

  toks = r.next();
  if (toks[0] != "sequence") throw std::invalid_argument("policy text: expected sequence");
  const int n_batches = static_cast<int>(parse_int(toks.at(1)));
  set.sequence.n_agents = n_agents;
  for (int k = 0; k < n_batches; ++k) {
    toks = r.next();
    if (toks[0] != "batch") throw std::invalid_argument("policy text: expected batch");
    const int sz = static_cast<int>(parse_int(toks.at(1)));
    std::vector<int> b;
    for (int i = 0; i < sz; ++i) b.push_back(static_cast<int>(parse_int(toks.at(2 + i))));
    set.sequence.batches.push_back(b);
  }
  set.sequence.validate();

  toks = r.next();
  if (toks[0] != "tables") throw std::invalid_argument("policy text: expected tables");
  const int n_tables = static_cast<int>(parse_int(toks.at(1)));
  std::vector<std::shared_ptr<PolicyTable>> tables;
  for (int id = 0; id < n_tables; ++id) {
    toks = r.next();
    if (toks[0] != "table" || static_cast<int>(parse_int(toks.at(1))) != id)
      throw std::invalid_argument("policy text: table order");
    auto t = PolicyTable::make(static_cast<int>(parse_int(toks.at(2))),
                               static_cast<int>(parse_int(toks.at(3))),
                               static_cast<int>(parse_int(toks.at(4))));
    if (toks.size() != 5 + t->logits.size())
      throw std::invalid_argument("policy text: table logit arity");
    for (std::size_t i = 0; i < t->logits.size(); ++i)
      t->logits[i] = parse_double(toks[5 + i]);
    tables.push_back(t);
  }

  toks = r.next();
  if (toks[0] != "conditioned" || static_cast<int>(parse_int(toks.at(1))) != n_agents)
    throw std::invalid_argument("policy text: conditioned header");
  set.conditioned.resize(n_agents);
  for (int i = 0; i < n_agents; ++i) {
    toks = r.next();
    if (toks[0] != "agent") throw std::invalid_argument("policy text: expected agent");
    ConditionedPolicy c;
    c.agent = static_cast<int>(parse_int(toks.at(1)));
    if (toks[2] != "table") throw std::invalid_argument("policy text: expected table ref");
    c.table = tables.at(parse_int(toks.at(3)));
    if (toks[4] != "context") throw std::invalid_argument("policy text: expected context");
    const int k = static_cast<int>(parse_int(toks.at(5)));
    for (int j = 0; j < k; ++j)
      c.context.agents.push_back(static_cast<int>(parse_int(toks.at(6 + j))));
    for (int j = 0; j < k; ++j)
      c.context.action_counts.push_back(static_cast<int>(parse_int(toks.at(6 + k + j))));
    set.conditioned[c.agent] = c;
  }

  toks = r.next();
  if (toks[0] != "independent" || static_cast<int>(parse_int(toks.at(1))) != n_agents)
    throw std::invalid_argument("policy text: independent header");
  set.independent.resize(n_agents);
  for (int i = 0; i < n_agents; ++i) {
    toks = r.next();
    if (toks[0] != "agent") throw std::invalid_argument("policy text: expected agent");
    IndependentPolicy p;
    p.agent = static_cast<int>(parse_int(toks.at(1)));
    if (toks[2] != "table") throw std::invalid_argument("policy text: expected table ref");
    p.table = tables.at(parse_int(toks.at(3)));
    set.independent[p.agent] = p;
  }

  toks = r.next();
  if (toks[0] != "end") throw std::invalid_argument("policy text: expected end");
  return set;
}

void save_policy_set(const PolicySet& set, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::invalid_argument("save_policy_set: cannot open " + path);
  out << policy_set_to_text(set);
  if (!out) throw std::runtime_error("save_policy_set: write failed for " + path);
}

PolicySet load_policy_set(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("load_policy_set: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return policy_set_from_text(ss.str());
}

}  // namespace b2mapo
