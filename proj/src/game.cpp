#include "b2mapo/game.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "b2mapo/text_io.hpp"

namespace b2mapo {

namespace {

constexpr double kRowSumTol = 1e-12;

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument("MarkovGame: " + msg);
}

}  // namespace

int MarkovGame::joint_action_count() const {
  int prod = 1;
  for (int a : n_actions) prod *= a;
  return prod;
}

int MarkovGame::encode_joint(const std::vector<int>& actions) const {
  require(static_cast<int>(actions.size()) == n_agents, "encode_joint: wrong arity");
  int idx = 0;
  for (int i = 0; i < n_agents; ++i) {
    require(actions[i] >= 0 && actions[i] < n_actions[i], "encode_joint: action out of range");
    idx = idx * n_actions[i] + actions[i];
  }
  return idx;
}

std::vector<int> MarkovGame::decode_joint(int joint) const {
  require(joint >= 0 && joint < joint_action_count(), "decode_joint: index out of range");
  std::vector<int> actions(n_agents);
  for (int i = n_agents - 1; i >= 0; --i) {
    actions[i] = joint % n_actions[i];
    joint /= n_actions[i];
  }
  return actions;
}

void MarkovGame::validate() const {
  require(n_agents >= 1, "need at least one agent");
  require(n_states >= 1, "need at least one state");
  require(static_cast<int>(n_actions.size()) == n_agents, "n_actions arity");
  for (int a : n_actions) require(a >= 1, "each agent needs at least one action");
  if (n_states > kMaxStates)
    throw std::length_error("MarkovGame: state count exceeds cap of 64");
  long long joint = 1;
  for (int a : n_actions) {
    joint *= a;
    if (joint > kMaxJointActions)
      throw std::length_error("MarkovGame: joint action count exceeds cap of 256");
  }
  const int n_joint = static_cast<int>(joint);

  require(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0,1)");
  require(r_max > 0.0, "r_max must be positive");

  require(static_cast<int>(initial_dist.size()) == n_states, "initial_dist size");
  double isum = 0.0;
  for (double p : initial_dist) {
    require(p >= 0.0, "initial_dist entries must be nonnegative");
    isum += p;
  }
  require(std::fabs(isum - 1.0) <= kRowSumTol, "initial_dist must sum to 1");

  require(static_cast<int>(transition.size()) == n_states, "transition outer size");
  require(static_cast<int>(reward.size()) == n_states, "reward outer size");
  for (int s = 0; s < n_states; ++s) {
    require(static_cast<int>(transition[s].size()) == n_joint, "transition action size");
    require(static_cast<int>(reward[s].size()) == n_joint, "reward action size");
    for (int a = 0; a < n_joint; ++a) {
      const auto& row = transition[s][a];
      require(static_cast<int>(row.size()) == n_states, "transition row size");
      double sum = 0.0;
      for (double p : row) {
        require(p >= 0.0, "transition probabilities must be nonnegative");
        sum += p;
      }
      require(std::fabs(sum - 1.0) <= kRowSumTol, "transition row must sum to 1");
      require(std::fabs(reward[s][a]) <= r_max + kRowSumTol, "reward exceeds r_max");
    }
  }

  require(static_cast<int>(n_obs.size()) == n_agents, "n_obs arity");
  require(static_cast<int>(observation.size()) == n_agents, "observation arity");
  for (int i = 0; i < n_agents; ++i) {
    require(n_obs[i] >= 1, "each agent needs at least one observation");
    require(static_cast<int>(observation[i].size()) == n_states, "observation map size");
    for (int s = 0; s < n_states; ++s)
      require(observation[i][s] >= 0 && observation[i][s] < n_obs[i],
              "observation index out of range");
  }

  require(dependence.n_agents == n_agents, "dependence agent count");
  for (const auto& e : dependence.edges) {
    require(e.first >= 0 && e.first < n_agents && e.second >= 0 && e.second < n_agents,
            "dependence edge out of range");
    require(e.first != e.second, "dependence self-loop");
  }
}

std::pair<int, double> MarkovGame::step(int state, int joint_action, Rng& rng) const {
  require(state >= 0 && state < n_states, "step: state out of range");
  require(joint_action >= 0 && joint_action < joint_action_count(),
          "step: joint action out of range");
  int next = rng.categorical(transition[state][joint_action]);
  return {next, reward[state][joint_action]};
}

int MarkovGame::sample_initial(Rng& rng) const {
  return rng.categorical(initial_dist);
}

MarkovGame build_dependency_chain_game(int n_agents, double coupling,
                                       std::uint64_t seed, bool masked) {
  if (n_agents < 2) throw std::invalid_argument("chain game needs at least 2 agents");
  if (coupling < 0.0 || coupling > 1.0)
    throw std::invalid_argument("chain game coupling must lie in [0,1]");

  MarkovGame g;
  g.name = "chain";
  g.n_agents = n_agents;
  g.n_states = 4;  // bit0: reward target, bit1: nuisance
  g.n_actions.assign(n_agents, 2);
  g.gamma = 0.95;
  g.r_max = 1.0;
  g.initial_dist.assign(4, 0.25);

  Rng jitter_rng(derive_seed(seed, 1));
  const double jitter = jitter_rng.uniform(-0.05, 0.05);

  const int n_joint = g.joint_action_count();
  g.transition.assign(4, std::vector<std::vector<double>>(
                             n_joint, std::vector<double>(4, 0.0)));
  g.reward.assign(4, std::vector<double>(n_joint, 0.0));

  for (int s = 0; s < 4; ++s) {
    const int bit0 = s & 1;
    for (int a = 0; a < n_joint; ++a) {
      std::vector<int> acts = g.decode_joint(a);
      int ones = 0;
      for (int x : acts) ones += x;
      const double frac_ones = static_cast<double>(ones) / n_agents;
      const int parity = ones & 1;

      // bit0 flips with an action-dependent probability; the action term is
      // scaled away entirely at coupling = 0 so agents stay independent.
      double p_flip = 0.25 + 0.5 * coupling * frac_ones + jitter;
      if (p_flip < 0.05) p_flip = 0.05;
      if (p_flip > 0.95) p_flip = 0.95;
      const double p_bit0_1 = (bit0 == 1) ? (1.0 - p_flip) : p_flip;

      // bit1 follows joint-action parity with probability 0.5 + 0.4*coupling
      // (pure noise at coupling = 0).
      const double p_follow = 0.5 + 0.4 * coupling;
      const double p_bit1_1 = (parity == 1) ? p_follow : (1.0 - p_follow);

      for (int sn = 0; sn < 4; ++sn) {
        const double p0 = (sn & 1) ? p_bit0_1 : (1.0 - p_bit0_1);
        const double p1 = (sn & 2) ? p_bit1_1 : (1.0 - p_bit1_1);
        g.transition[s][a][sn] = p0 * p1;
      }

      auto base = [&](int act) { return act == bit0 ? 0.5 : -0.5; };
      double r = base(acts[0]);
      for (int i = 1; i < n_agents; ++i) {
        const double match = acts[i] == acts[i - 1] ? 1.0 : -1.0;
        r += (1.0 - coupling) * base(acts[i]) + coupling * match;
      }
      g.reward[s][a] = r / n_agents;
    }
  }

  g.n_obs.assign(n_agents, masked ? 2 : 4);
  g.observation.assign(n_agents, std::vector<int>(4, 0));
  for (int i = 0; i < n_agents; ++i)
    for (int s = 0; s < 4; ++s) g.observation[i][s] = masked ? (s & 1) : s;

  g.dependence.n_agents = n_agents;
  if (coupling > 0.0)
    for (int i = 1; i < n_agents; ++i) g.dependence.edges.emplace_back(i - 1, i);

  g.validate();
  return g;
}

MarkovGame build_random_game(int n_agents, int n_states, int n_actions,
                             double gamma, std::uint64_t seed) {
  MarkovGame g;
  g.name = "random";
  g.n_agents = n_agents;
  g.n_states = n_states;
  g.n_actions.assign(n_agents, n_actions);
  g.gamma = gamma;
  g.r_max = 1.0;

  Rng rng(derive_seed(seed, 2));
  const int n_joint = g.joint_action_count();

  auto dirichlet_row = [&](int dim) {
    std::vector<double> row(dim);
    double sum = 0.0;
    for (int i = 0; i < dim; ++i) {
      // Gamma(1,1) variate; the floor keeps degenerate all-zero rows out.
      double u = rng.uniform01();
      row[i] = -std::log(1.0 - u) + 1e-12;
      sum += row[i];
    }
    for (int i = 0; i < dim; ++i) row[i] /= sum;
    return row;
  };

  g.initial_dist = dirichlet_row(n_states);
  g.transition.assign(n_states, std::vector<std::vector<double>>(n_joint));
  g.reward.assign(n_states, std::vector<double>(n_joint, 0.0));
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_joint; ++a) {
      g.transition[s][a] = dirichlet_row(n_states);
      g.reward[s][a] = rng.uniform(-1.0, 1.0);
    }

  g.n_obs.assign(n_agents, n_states);
  g.observation.assign(n_agents, std::vector<int>(n_states, 0));
  for (int i = 0; i < n_agents; ++i)
    for (int s = 0; s < n_states; ++s) g.observation[i][s] = s;

  g.dependence.n_agents = n_agents;

  g.validate();
  return g;
}

std::string game_to_text(const MarkovGame& game) {
  std::ostringstream out;
  out << "b2mapo-game v1\n";
  out << "name " << game.name << "\n";
  out << "agents " << game.n_agents << "\n";
  out << "states " << game.n_states << "\n";
  out << "actions";
  for (int a : game.n_actions) out << " " << a;
  out << "\n";
  out << "gamma " << format_double_exact(game.gamma) << "\n";
  out << "r_max " << format_double_exact(game.r_max) << "\n";
  out << "initial";
  for (double p : game.initial_dist) out << " " << format_double_exact(p);
  out << "\n";
  for (int i = 0; i < game.n_agents; ++i) {
    out << "observation " << i << " " << game.n_obs[i];
    for (int s = 0; s < game.n_states; ++s) out << " " << game.observation[i][s];
    out << "\n";
  }
  out << "dependence " << game.dependence.edges.size() << "\n";
  for (const auto& e : game.dependence.edges)
    out << e.first << " " << e.second << "\n";
  out << "transition\n";
  const int n_joint = game.joint_action_count();
  for (int s = 0; s < game.n_states; ++s)
    for (int a = 0; a < n_joint; ++a) {
      out << s << " " << a;
      for (double p : game.transition[s][a]) out << " " << format_double_exact(p);
      out << "\n";
    }
  out << "reward\n";
  for (int s = 0; s < game.n_states; ++s) {
    out << s;
    for (double r : game.reward[s]) out << " " << format_double_exact(r);
    out << "\n";
  }
  out << "end\n";
  return out.str();
}

namespace {

struct LineReader {
  std::istringstream in;
  int line_no = 0;
  explicit LineReader(const std::string& text) : in(text) {}
  std::vector<std::string> next() {
    std::string line;
    while (std::getline(in, line)) {
      ++line_no;
      auto toks = split_ws(line);
      if (!toks.empty()) return toks;
    }
    throw std::invalid_argument("game text: unexpected end of input");
  }
};

void expect_key(const std::vector<std::string>& toks, const std::string& key) {
  if (toks.empty() || toks[0] != key)
    throw std::invalid_argument("game text: expected '" + key + "'");
}

}  // namespace

MarkovGame game_from_text(const std::string& text) {
  LineReader r(text);
  auto header = r.next();
  if (header.size() != 2 || header[0] != "b2mapo-game" || header[1] != "v1")
    throw std::invalid_argument("game text: bad header");

  MarkovGame g;
  auto toks = r.next();
  expect_key(toks, "name");
  if (toks.size() != 2) throw std::invalid_argument("game text: bad name line");
  g.name = toks[1];

  toks = r.next();
  expect_key(toks, "agents");
  g.n_agents = static_cast<int>(parse_int(toks.at(1)));
  toks = r.next();
  expect_key(toks, "states");
  g.n_states = static_cast<int>(parse_int(toks.at(1)));
  toks = r.next();
  expect_key(toks, "actions");
  if (static_cast<int>(toks.size()) != g.n_agents + 1)
    throw std::invalid_argument("game text: actions arity");
  for (int i = 0; i < g.n_agents; ++i)
    g.n_actions.push_back(static_cast<int>(parse_int(toks[1 + i])));
  toks = r.next();
  expect_key(toks, "gamma");
  g.gamma = parse_double(toks.at(1));
  toks = r.next();
  expect_key(toks, "r_max");
  g.r_max = parse_double(toks.at(1));
  toks = r.next();
  expect_key(toks, "initial");
  if (static_cast<int>(toks.size()) != g.n_states + 1)
    throw std::invalid_argument("game text: initial arity");
  for (int s = 0; s < g.n_states; ++s) g.initial_dist.push_back(parse_double(toks[1 + s]));

  g.n_obs.assign(g.n_agents, 0);
  g.observation.assign(g.n_agents, {});
  for (int i = 0; i < g.n_agents; ++i) {
    toks = r.next();
    expect_key(toks, "observation");
    if (static_cast<int>(toks.size()) != g.n_states + 3)
      throw std::invalid_argument("game text: observation arity");
    int agent = static_cast<int>(parse_int(toks[1]));
    if (agent != i) throw std::invalid_argument("game text: observation agent order");
    g.n_obs[i] = static_cast<int>(parse_int(toks[2]));
    for (int s = 0; s < g.n_states; ++s)
      g.observation[i].push_back(static_cast<int>(parse_int(toks[3 + s])));
  }

  toks = r.next();
  expect_key(toks, "dependence");
  const int n_edges = static_cast<int>(parse_int(toks.at(1)));
  g.dependence.n_agents = g.n_agents;
  for (int e = 0; e < n_edges; ++e) {
    toks = r.next();
    if (toks.size() != 2) throw std::invalid_argument("game text: bad edge line");
    g.dependence.edges.emplace_back(static_cast<int>(parse_int(toks[0])),
                                    static_cast<int>(parse_int(toks[1])));
  }

  toks = r.next();
  expect_key(toks, "transition");
  const int n_joint = g.joint_action_count();
  g.transition.assign(g.n_states, std::vector<std::vector<double>>(
                                      n_joint, std::vector<double>(g.n_states, 0.0)));
  for (int s = 0; s < g.n_states; ++s)
    for (int a = 0; a < n_joint; ++a) {
      toks = r.next();
      if (static_cast<int>(toks.size()) != g.n_states + 2)
        throw std::invalid_argument("game text: transition row arity");
      if (static_cast<int>(parse_int(toks[0])) != s ||
          static_cast<int>(parse_int(toks[1])) != a)
        throw std::invalid_argument("game text: transition row order");
      for (int sn = 0; sn < g.n_states; ++sn)
        g.transition[s][a][sn] = parse_double(toks[2 + sn]);
    }

  toks = r.next();
  expect_key(toks, "reward");
  g.reward.assign(g.n_states, std::vector<double>(n_joint, 0.0));
  for (int s = 0; s < g.n_states; ++s) {
    toks = r.next();
    if (static_cast<int>(toks.size()) != n_joint + 1)
      throw std::invalid_argument("game text: reward row arity");
    if (static_cast<int>(parse_int(toks[0])) != s)
      throw std::invalid_argument("game text: reward row order");
    for (int a = 0; a < n_joint; ++a) g.reward[s][a] = parse_double(toks[1 + a]);
  }

  toks = r.next();
  expect_key(toks, "end");
  g.validate();
  return g;
}

void save_game(const MarkovGame& game, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::invalid_argument("save_game: cannot open " + path);
  out << game_to_text(game);
  if (!out) throw std::runtime_error("save_game: write failed for " + path);
}

MarkovGame load_game(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("load_game: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return game_from_text(ss.str());
}

}  // namespace b2mapo
