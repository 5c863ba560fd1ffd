#include "b2mapo/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "b2mapo/rollout.hpp"
#include "b2mapo/text_io.hpp"

namespace b2mapo {

namespace {

constexpr double kProbLo = 1e-12;
constexpr double kProbHi = 1.0 - 1e-12;

double clamp_prob(double p) { return std::min(std::max(p, kProbLo), kProbHi); }

std::vector<double> project(const std::vector<std::vector<double>>& w,
                            const std::vector<double>& f) {
  std::vector<double> out(w.size(), 0.0);
  for (std::size_t r = 0; r < w.size(); ++r)
    for (std::size_t c = 0; c < f.size(); ++c) out[r] += w[r][c] * f[c];
  return out;
}

}  // namespace

AttentionScorer make_scorer(int feat_dim, int n_states, std::uint64_t seed,
                            int d_k) {
  if (feat_dim < 1 || d_k < 1 || n_states < 1)
    throw std::invalid_argument("make_scorer: bad dimensions");
  AttentionScorer s;
  s.feat_dim = feat_dim;
  s.d_k = d_k;
  Rng rng(derive_seed(seed, 1));
  s.w_q.assign(d_k, std::vector<double>(feat_dim, 0.0));
  s.w_k.assign(d_k, std::vector<double>(feat_dim, 0.0));
  for (auto& row : s.w_q)
    for (double& x : row) x = 0.1 * rng.normal();
  for (auto& row : s.w_k)
    for (double& x : row) x = 0.1 * rng.normal();
  s.v_phi.assign(n_states, 0.0);
  return s;
}

double default_threshold(int n_agents) {
  if (n_agents < 2) return 1.0;
  return 1.0 / (2.0 * (n_agents - 1));
}

std::vector<std::vector<double>> trajectory_features(const MarkovGame& game,
                                                     const TrajectoryBatch& traj,
                                                     int window) {
  if (window < 1) throw std::invalid_argument("trajectory_features: window >= 1");
  if (traj.episodes.empty())
    throw std::invalid_argument("trajectory_features: empty batch");
  int max_obs = 0, max_act = 0;
  for (int i = 0; i < game.n_agents; ++i) {
    max_obs = std::max(max_obs, game.n_obs[i]);
    max_act = std::max(max_act, game.n_actions[i]);
  }
  const int block = max_obs + max_act;
  std::vector<std::vector<double>> feat(
      game.n_agents, std::vector<double>(window * block, 0.0));

  for (const Episode& ep : traj.episodes) {
    const int len = static_cast<int>(ep.steps.size());
    for (int w = 0; w < window; ++w) {
      const int t = len - window + w;
      if (t < 0) continue;  // short episode: leading blocks stay zero
      const Step& st = ep.steps[t];
      for (int i = 0; i < game.n_agents; ++i) {
        feat[i][w * block + st.observations[i]] += 1.0;
        feat[i][w * block + max_obs + st.actions[i]] += 1.0;
      }
    }
  }
  const double scale = 1.0 / static_cast<double>(traj.episodes.size());
  for (auto& row : feat)
    for (double& x : row) x *= scale;
  return feat;
}

DependenceGraph score_dependence(const AttentionScorer& scorer,
                                 const std::vector<std::vector<double>>& features,
                                 double threshold) {
  const int n = static_cast<int>(features.size());
  if (n < 1) throw std::invalid_argument("score_dependence: no agents");
  for (const auto& f : features)
    if (static_cast<int>(f.size()) != scorer.feat_dim)
      throw std::invalid_argument("score_dependence: feature width mismatch");

  DependenceGraph g;
  g.n = n;
  g.threshold = threshold < 0.0 ? default_threshold(n) : threshold;
  g.soft.assign(n, std::vector<double>(n, 0.0));
  g.weight.assign(n, std::vector<double>(n, 0.0));
  if (n == 1) return g;

  std::vector<std::vector<double>> q(n), k(n);
  for (int i = 0; i < n; ++i) {
    q[i] = project(scorer.w_q, features[i]);
    k[i] = project(scorer.w_k, features[i]);
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(scorer.d_k));
  for (int i = 0; i < n; ++i) {
    std::vector<double> s;
    s.reserve(n - 1);
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      double dot = 0.0;
      for (int r = 0; r < scorer.d_k; ++r) dot += q[i][r] * k[j][r];
      s.push_back(dot * scale);
    }
    const double mx = *std::max_element(s.begin(), s.end());
    double z = 0.0;
    for (double& x : s) {
      x = std::exp(x - mx);
      z += x;
    }
    int col = 0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      g.soft[i][j] = s[col++] / z;
      g.weight[i][j] = g.soft[i][j] >= g.threshold ? g.soft[i][j] : 0.0;
    }
  }
  return g;
}

EdgeSample sample_edge_set(const DependenceGraph& graph,
                           const std::vector<std::vector<double>>& features,
                           Rng& rng) {
  EdgeSample sample;
  sample.features = features;
  for (int i = 0; i < graph.n; ++i)
    for (int j = 0; j < graph.n; ++j) {
      if (graph.weight[i][j] <= 0.0) continue;
      const double p = clamp_prob(graph.weight[i][j]);
      const bool inc = rng.uniform01() < graph.weight[i][j];
      sample.candidates.emplace_back(i, j);
      sample.included.push_back(inc ? 1 : 0);
      sample.p_old.push_back(p);
      sample.log_prob_old += inc ? std::log(p) : std::log(1.0 - p);
    }
  return sample;
}

std::vector<WeightedEdge> sampled_edges(const EdgeSample& sample) {
  std::vector<WeightedEdge> edges;
  for (std::size_t c = 0; c < sample.candidates.size(); ++c)
    if (sample.included[c])
      edges.push_back({sample.candidates[c].first, sample.candidates[c].second,
                       sample.p_old[c]});
  return edges;
}

std::vector<WeightedEdge> thresholded_edges(const DependenceGraph& graph) {
  std::vector<WeightedEdge> edges;
  for (int i = 0; i < graph.n; ++i)
    for (int j = 0; j < graph.n; ++j)
      if (graph.weight[i][j] > 0.0) edges.push_back({i, j, graph.weight[i][j]});
  return edges;
}

namespace {

/* First directed cycle in deterministic DFS order (ascending start node,
 * ascending edge targets), as a list of edge indices into `edges`. */
std::vector<int> find_cycle(const std::vector<WeightedEdge>& edges, int n) {
  std::vector<std::vector<std::pair<int, int>>> out(n);  // (to, edge index)
  for (std::size_t e = 0; e < edges.size(); ++e)
    out[edges[e].from].emplace_back(edges[e].to, static_cast<int>(e));
  for (auto& lst : out) std::sort(lst.begin(), lst.end());

  std::vector<int> color(n, 0);  // 0 white, 1 on stack, 2 done
  std::vector<std::pair<int, int>> stack;  // (node, edge index used to enter)
  std::vector<int> pos_in_stack(n, -1);

  for (int start = 0; start < n; ++start) {
    if (color[start] != 0) continue;
    // Iterative DFS with explicit child iterators.
    std::vector<std::size_t> it(n, 0);
    stack.clear();
    stack.emplace_back(start, -1);
    color[start] = 1;
    pos_in_stack[start] = 0;
    while (!stack.empty()) {
      const int u = stack.back().first;
      if (it[u] < out[u].size()) {
        auto [v, e] = out[u][it[u]++];
        if (color[v] == 1) {
          std::vector<int> cycle;
          for (int p = pos_in_stack[v] + 1; p < static_cast<int>(stack.size()); ++p)
            cycle.push_back(stack[p].second);
          cycle.push_back(e);
          return cycle;
        }
        if (color[v] == 0) {
          color[v] = 1;
          stack.emplace_back(v, e);
          pos_in_stack[v] = static_cast<int>(stack.size()) - 1;
        }
      } else {
        color[u] = 2;
        pos_in_stack[u] = -1;
        stack.pop_back();
      }
    }
  }
  return {};
}

}  // namespace

std::vector<WeightedEdge> to_dag(std::vector<WeightedEdge> edges, int n) {
  for (;;) {
    std::vector<int> cycle = find_cycle(edges, n);
    if (cycle.empty()) return edges;
    int drop = cycle[0];
    for (int e : cycle) {
      const WeightedEdge& a = edges[e];
      const WeightedEdge& b = edges[drop];
      if (a.weight < b.weight ||
          (a.weight == b.weight &&
           std::make_pair(a.from, a.to) < std::make_pair(b.from, b.to)))
        drop = e;
    }
    edges.erase(edges.begin() + drop);
  }
}

BatchSequence layer_topological(const std::vector<WeightedEdge>& dag, int n) {
  std::vector<int> indeg(n, 0), depth(n, 0);
  std::vector<std::vector<int>> out(n);
  for (const auto& e : dag) {
    if (e.from < 0 || e.from >= n || e.to < 0 || e.to >= n)
      throw std::invalid_argument("layer_topological: edge endpoint out of range");
    out[e.from].push_back(e.to);
    indeg[e.to]++;
  }
  std::vector<int> frontier;
  for (int v = 0; v < n; ++v)
    if (indeg[v] == 0) frontier.push_back(v);
  int processed = 0, max_depth = 0;
  while (!frontier.empty()) {
    std::vector<int> next;
    for (int u : frontier) {
      ++processed;
      max_depth = std::max(max_depth, depth[u]);
      for (int v : out[u]) {
        depth[v] = std::max(depth[v], depth[u] + 1);
        if (--indeg[v] == 0) next.push_back(v);
      }
    }
    frontier = std::move(next);
  }
  if (processed != n) throw std::logic_error("layer_topological: cyclic input");

  BatchSequence seq;
  seq.n_agents = n;
  seq.batches.assign(max_depth + 1, {});
  for (int v = 0; v < n; ++v) seq.batches[depth[v]].push_back(v);
  for (auto& b : seq.batches) std::sort(b.begin(), b.end());
  seq.validate();
  return seq;
}

IndependenceGraph IndependenceGraph::from_edges(
    int n, const std::vector<std::pair<int, int>>& edges) {
  IndependenceGraph g;
  g.n = n;
  g.adj.assign(n, std::vector<char>(n, 0));
  for (auto [a, b] : edges) {
    if (a < 0 || a >= n || b < 0 || b >= n)
      throw std::invalid_argument("IndependenceGraph: endpoint out of range");
    if (a == b) throw std::invalid_argument("IndependenceGraph: self loop");
    g.adj[a][b] = g.adj[b][a] = 1;
  }
  return g;
}

namespace {

bool color_with(const IndependenceGraph& g, int k, std::vector<int>& color) {
  const int n = g.n;
  color.assign(n, -1);
  // Backtracking with symmetry breaking: agent v may only open color
  // max_used + 1.
  std::vector<int> max_used_at(n + 1, -1);
  int v = 0;
  std::vector<int> attempt(n, 0);
  while (v >= 0 && v < n) {
    bool placed = false;
    const int limit = std::min(k - 1, max_used_at[v] + 1);
    for (int c = attempt[v]; c <= limit; ++c) {
      bool ok = true;
      for (int u = 0; u < v && ok; ++u)
        if (g.adj[v][u] && color[u] == c) ok = false;
      if (ok) {
        color[v] = c;
        attempt[v] = c + 1;
        max_used_at[v + 1] = std::max(max_used_at[v], c);
        placed = true;
        break;
      }
    }
    if (placed) {
      ++v;
      if (v < n) attempt[v] = 0;
    } else {
      color[v] = -1;
      --v;
    }
  }
  return v == n;
}

BatchSequence batches_from_colors(int n, int k, const std::vector<int>& color) {
  BatchSequence seq;
  seq.n_agents = n;
  seq.batches.assign(k, {});
  for (int v = 0; v < n; ++v) seq.batches[color[v]].push_back(v);
  seq.validate();
  return seq;
}

/* Maximum independent set over `mask`, preferring inclusion of low indices
 * on ties; returns the chosen mask. */
std::uint64_t max_independent_set(const std::vector<std::uint64_t>& nbr,
                                  std::uint64_t mask) {
  if (mask == 0) return 0;
  const int v = __builtin_ctzll(mask);
  const std::uint64_t bit = 1ull << v;
  const std::uint64_t with_v = bit | max_independent_set(nbr, mask & ~bit & ~nbr[v]);
  const std::uint64_t without_v = max_independent_set(nbr, mask & ~bit);
  if (__builtin_popcountll(with_v) >= __builtin_popcountll(without_v))
    return with_v;
  return without_v;
}

}  // namespace

BatchSequence min_batches_bruteforce(const IndependenceGraph& graph) {
  if (graph.n < 1) throw std::invalid_argument("min_batches_bruteforce: empty");
  if (graph.n > 10)
    throw std::length_error("min_batches_bruteforce: n > 10 unsupported");
  for (int k = 1; k <= graph.n; ++k) {
    std::vector<int> color;
    if (color_with(graph, k, color)) return batches_from_colors(graph.n, k, color);
  }
  throw std::logic_error("min_batches_bruteforce: unreachable");
}

BatchSequence min_batches_greedy(const IndependenceGraph& graph) {
  if (graph.n < 1) throw std::invalid_argument("min_batches_greedy: empty");
  if (graph.n > 63) throw std::length_error("min_batches_greedy: n > 63");
  std::vector<std::uint64_t> nbr(graph.n, 0);
  for (int i = 0; i < graph.n; ++i)
    for (int j = 0; j < graph.n; ++j)
      if (graph.adj[i][j]) nbr[i] |= 1ull << j;

  BatchSequence seq;
  seq.n_agents = graph.n;
  std::uint64_t remaining = (graph.n == 64) ? ~0ull : ((1ull << graph.n) - 1);
  while (remaining) {
    const std::uint64_t pick = max_independent_set(nbr, remaining);
    std::vector<int> batch;
    for (int v = 0; v < graph.n; ++v)
      if (pick & (1ull << v)) batch.push_back(v);
    seq.batches.push_back(batch);
    remaining &= ~pick;
  }
  seq.validate();
  return seq;
}

double dag_period_reward(const std::vector<double>& rewards, std::size_t t,
                         double gamma, int T) {
  if (T < 0) throw std::invalid_argument("dag_period_reward: T >= 0");
  if (t >= rewards.size())
    throw std::invalid_argument("dag_period_reward: start beyond stream");
  double acc = 0.0, scale = 1.0;
  for (int l = 0; l <= T && t + l < rewards.size(); ++l) {
    acc += scale * rewards[t + l];
    scale *= gamma;
  }
  return acc;
}

std::vector<double> dag_advantage(const std::vector<double>& period_rewards,
                                  const std::vector<double>& step_values,
                                  double gamma, int T) {
  if (period_rewards.size() != step_values.size())
    throw std::invalid_argument("dag_advantage: length mismatch");
  if (T < 1) throw std::invalid_argument("dag_advantage: T >= 1");
  const std::size_t L = period_rewards.size();
  std::vector<double> delta(L);
  for (std::size_t t = 0; t < L; ++t) {
    const double v_next = (t + T < L) ? step_values[t + T] : 0.0;
    delta[t] = period_rewards[t] + gamma * v_next - step_values[t];
  }
  std::vector<double> adv(L, 0.0);
  for (std::size_t t = 0; t < L; ++t) {
    double scale = 1.0;
    for (int l = 0; l < T && t + l < L; ++l) {
      adv[t] += scale * delta[t + l];
      scale *= gamma;
    }
  }
  return adv;
}

namespace {

struct SampleEval {
  double log_prob_new = 0.0;
  double kl = 0.0;
  std::vector<double> p_new;  // clamped, aligned with candidates
};

SampleEval eval_sample(const AttentionScorer& scorer, const EdgeSample& sample) {
  DependenceGraph g = score_dependence(scorer, sample.features);
  SampleEval ev;
  ev.p_new.resize(sample.candidates.size());
  for (std::size_t c = 0; c < sample.candidates.size(); ++c) {
    auto [i, j] = sample.candidates[c];
    const double p = clamp_prob(g.soft[i][j]);
    ev.p_new[c] = p;
    ev.log_prob_new += sample.included[c] ? std::log(p) : std::log(1.0 - p);
    const double po = sample.p_old[c];
    ev.kl += po * std::log(po / p) + (1.0 - po) * std::log((1.0 - po) / (1.0 - p));
  }
  return ev;
}

}  // namespace

double dag_generator_loss(const AttentionScorer& scorer,
                          const std::vector<EdgeSample>& samples, double eps,
                          double c1) {
  if (samples.empty()) throw std::invalid_argument("dag_generator_loss: no samples");
  double total = 0.0;
  for (const EdgeSample& s : samples) {
    SampleEval ev = eval_sample(scorer, s);
    const double sr = std::exp(ev.log_prob_new - s.log_prob_old);
    const double clipped = std::min(std::max(sr, 1.0 - eps), 1.0 + eps);
    total += std::min(sr * s.advantage, clipped * s.advantage) - c1 * ev.kl;
  }
  const double loss = total / static_cast<double>(samples.size());
  if (!std::isfinite(loss))
    throw std::domain_error("dag_generator_loss: non-finite loss");
  return loss;
}

ScorerGradient dag_generator_gradient(const AttentionScorer& scorer,
                                      const std::vector<EdgeSample>& samples,
                                      double eps, double c1) {
  if (samples.empty())
    throw std::invalid_argument("dag_generator_gradient: no samples");
  ScorerGradient grad;
  grad.d_w_q.assign(scorer.d_k, std::vector<double>(scorer.feat_dim, 0.0));
  grad.d_w_k.assign(scorer.d_k, std::vector<double>(scorer.feat_dim, 0.0));
  const double inv_n = 1.0 / static_cast<double>(samples.size());
  const double scale = 1.0 / std::sqrt(static_cast<double>(scorer.d_k));

  for (const EdgeSample& s : samples) {
    DependenceGraph g = score_dependence(scorer, s.features);
    const int n = g.n;
    SampleEval ev = eval_sample(scorer, s);
    const double sr = std::exp(ev.log_prob_new - s.log_prob_old);
    const bool active =
        (s.advantage >= 0.0) ? (sr <= 1.0 + eps) : (sr >= 1.0 - eps);
    const double d_obj_d_lp = active ? sr * s.advantage : 0.0;

    // Upstream gradient on each candidate probability.
    std::vector<std::vector<double>> up(n, std::vector<double>(n, 0.0));
    for (std::size_t c = 0; c < s.candidates.size(); ++c) {
      auto [i, j] = s.candidates[c];
      const double p = ev.p_new[c];
      if (g.soft[i][j] <= kProbLo || g.soft[i][j] >= kProbHi) continue;  // clamped
      const double d_lp_dp = s.included[c] ? 1.0 / p : -1.0 / (1.0 - p);
      const double d_kl_dp =
          -s.p_old[c] / p + (1.0 - s.p_old[c]) / (1.0 - p);
      up[i][j] += inv_n * (d_obj_d_lp * d_lp_dp - c1 * d_kl_dp);
    }

    std::vector<std::vector<double>> q(n), k(n);
    for (int i = 0; i < n; ++i) {
      q[i] = project(scorer.w_q, s.features[i]);
      k[i] = project(scorer.w_k, s.features[i]);
    }
    // Softmax backward per row, then into the projections.
    for (int i = 0; i < n; ++i) {
      double bar = 0.0;
      for (int j = 0; j < n; ++j)
        if (j != i) bar += up[i][j] * g.soft[i][j];
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        const double ds = g.soft[i][j] * (up[i][j] - bar) * scale;
        if (ds == 0.0) continue;
        for (int r = 0; r < scorer.d_k; ++r) {
          const double dq = ds * k[j][r];
          const double dk = ds * q[i][r];
          for (int c = 0; c < scorer.feat_dim; ++c) {
            grad.d_w_q[r][c] += dq * s.features[i][c];
            grad.d_w_k[r][c] += dk * s.features[j][c];
          }
        }
      }
    }
  }
  return grad;
}

double dag_generator_update(AttentionScorer& scorer,
                            const std::vector<EdgeSample>& samples, double eps,
                            double c1, double lr) {
  const double before = dag_generator_loss(scorer, samples, eps, c1);
  ScorerGradient grad = dag_generator_gradient(scorer, samples, eps, c1);
  for (int r = 0; r < scorer.d_k; ++r)
    for (int c = 0; c < scorer.feat_dim; ++c) {
      scorer.w_q[r][c] += lr * grad.d_w_q[r][c];
      scorer.w_k[r][c] += lr * grad.d_w_k[r][c];
    }
  return before;
}

double dag_critic_update(AttentionScorer& scorer, const std::vector<int>& states,
                         const std::vector<double>& targets, double lr) {
  if (states.size() != targets.size() || states.empty())
    throw std::invalid_argument("dag_critic_update: bad sample arrays");
  const double inv_n = 1.0 / static_cast<double>(states.size());
  double mse = 0.0;
  std::vector<double> residual(scorer.v_phi.size(), 0.0);
  for (std::size_t t = 0; t < states.size(); ++t) {
    const double v = scorer.v_phi.at(states[t]);
    const double err = v - targets[t];
    mse += err * err * inv_n;
    residual.at(states[t]) += 2.0 * err * inv_n;
  }
  for (std::size_t s = 0; s < scorer.v_phi.size(); ++s)
    scorer.v_phi[s] -= lr * residual[s];
  return mse;
}

WeightedGraphFile load_weighted_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("load_weighted_graph: cannot open " + path);
  WeightedGraphFile g;
  std::string line;
  bool have_n = false;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto toks = split_ws(line);
    if (toks.empty() || toks[0][0] == '#') continue;
    if (!have_n) {
      if (toks.size() != 1)
        throw std::invalid_argument("load_weighted_graph: first line must be n");
      g.n = static_cast<int>(parse_int(toks[0]));
      if (g.n < 1) throw std::invalid_argument("load_weighted_graph: n >= 1");
      have_n = true;
      continue;
    }
    if (toks.size() != 3)
      throw std::invalid_argument("load_weighted_graph: expected 'i j w' at line " +
                                  std::to_string(lineno));
    WeightedEdge e;
    e.from = static_cast<int>(parse_int(toks[0]));
    e.to = static_cast<int>(parse_int(toks[1]));
    e.weight = parse_double(toks[2]);
    if (e.from < 0 || e.from >= g.n || e.to < 0 || e.to >= g.n || e.from == e.to)
      throw std::invalid_argument("load_weighted_graph: bad edge at line " +
                                  std::to_string(lineno));
    if (!(e.weight >= 0.0 && e.weight <= 1.0))
      throw std::invalid_argument("load_weighted_graph: weight outside [0,1]");
    g.edges.push_back(e);
  }
  if (!have_n) throw std::invalid_argument("load_weighted_graph: empty file");
  return g;
}

}  // namespace b2mapo
