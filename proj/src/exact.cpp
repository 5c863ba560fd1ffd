#include "b2mapo/exact.hpp"

#include <cmath>
#include <stdexcept>

namespace b2mapo {

namespace {

constexpr double kResidualTol = 1e-10;

/* Policy-averaged transition matrix and reward vector. */
void policy_kernel(const MarkovGame& game, const JointPolicy& pi,
                   std::vector<std::vector<double>>& p_pi,
                   std::vector<double>& r_pi) {
  const int S = game.n_states;
  const int A = game.joint_action_count();
  p_pi.assign(S, std::vector<double>(S, 0.0));
  r_pi.assign(S, 0.0);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      const double w = pi[s][a];
      if (w == 0.0) continue;
      r_pi[s] += w * game.reward[s][a];
      const auto& row = game.transition[s][a];
      for (int sn = 0; sn < S; ++sn) p_pi[s][sn] += w * row[sn];
    }
}

}  // namespace

std::vector<double> solve_dense(std::vector<std::vector<double>> a,
                                std::vector<double> b) {
  const int n = static_cast<int>(b.size());
  if (static_cast<int>(a.size()) != n)
    throw std::invalid_argument("solve_dense: shape mismatch");
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    for (int r = col + 1; r < n; ++r)
      if (std::fabs(a[r][col]) > std::fabs(a[pivot][col])) pivot = r;
    if (std::fabs(a[pivot][col]) < 1e-14)
      throw std::runtime_error("solve_dense: singular system");
    std::swap(a[col], a[pivot]);
    std::swap(b[col], b[pivot]);
    const double inv = 1.0 / a[col][col];
    for (int r = col + 1; r < n; ++r) {
      const double f = a[r][col] * inv;
      if (f == 0.0) continue;
      for (int c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n, 0.0);
  for (int r = n - 1; r >= 0; --r) {
    double acc = b[r];
    for (int c = r + 1; c < n; ++c) acc -= a[r][c] * x[c];
    x[r] = acc / a[r][r];
  }
  return x;
}

void check_policy_table(const MarkovGame& game, const JointPolicy& pi) {
  const int S = game.n_states;
  const int A = game.joint_action_count();
  if (static_cast<int>(pi.size()) != S)
    throw std::invalid_argument("policy table: wrong state count");
  for (int s = 0; s < S; ++s) {
    if (static_cast<int>(pi[s].size()) != A)
      throw std::invalid_argument("policy table: wrong action count");
    double sum = 0.0;
    for (double p : pi[s]) {
      if (p < 0.0) throw std::invalid_argument("policy table: negative probability");
      sum += p;
    }
    if (std::fabs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("policy table: row does not sum to 1");
  }
}

std::vector<double> exact_value(const MarkovGame& game, const JointPolicy& pi) {
  check_policy_table(game, pi);
  const int S = game.n_states;
  std::vector<std::vector<double>> p_pi;
  std::vector<double> r_pi;
  policy_kernel(game, pi, p_pi, r_pi);

  std::vector<std::vector<double>> m(S, std::vector<double>(S, 0.0));
  for (int s = 0; s < S; ++s) {
    for (int sn = 0; sn < S; ++sn) m[s][sn] = -game.gamma * p_pi[s][sn];
    m[s][s] += 1.0;
  }
  std::vector<double> v = solve_dense(m, r_pi);

  for (int s = 0; s < S; ++s) {
    double res = v[s] - r_pi[s];
    for (int sn = 0; sn < S; ++sn) res -= game.gamma * p_pi[s][sn] * v[sn];
    if (std::fabs(res) > kResidualTol)
      throw std::runtime_error("exact_value: Bellman residual above 1e-10");
  }
  return v;
}

double expected_return(const MarkovGame& game, const JointPolicy& pi) {
  std::vector<double> v = exact_value(game, pi);
  double j = 0.0;
  for (int s = 0; s < game.n_states; ++s) j += game.initial_dist[s] * v[s];
  return j;
}

std::vector<double> exact_visitation(const MarkovGame& game, const JointPolicy& pi) {
  check_policy_table(game, pi);
  const int S = game.n_states;
  std::vector<std::vector<double>> p_pi;
  std::vector<double> r_pi;
  policy_kernel(game, pi, p_pi, r_pi);

  /* d solves (I - gamma * P^T) d = (1-gamma) * initial. */
  std::vector<std::vector<double>> m(S, std::vector<double>(S, 0.0));
  std::vector<double> rhs(S, 0.0);
  for (int s = 0; s < S; ++s) {
    rhs[s] = (1.0 - game.gamma) * game.initial_dist[s];
    for (int sp = 0; sp < S; ++sp) m[s][sp] = -game.gamma * p_pi[sp][s];
    m[s][s] += 1.0;
  }
  std::vector<double> d = solve_dense(m, rhs);

  double sum = 0.0;
  for (int s = 0; s < S; ++s) {
    double res = d[s] - rhs[s];
    for (int sp = 0; sp < S; ++sp) res -= game.gamma * p_pi[sp][s] * d[sp];
    if (std::fabs(res) > kResidualTol)
      throw std::runtime_error("exact_visitation: residual above 1e-10");
    sum += d[s];
  }
  if (std::fabs(sum - 1.0) > 1e-9)
    throw std::runtime_error("exact_visitation: mass does not sum to 1");
  return d;
}

ExactTables solve_exact(const MarkovGame& game, const JointPolicy& pi) {
  ExactTables t;
  t.value = exact_value(game, pi);
  const int S = game.n_states;
  const int A = game.joint_action_count();
  t.q.assign(S, std::vector<double>(A, 0.0));
  t.advantage.assign(S, std::vector<double>(A, 0.0));
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      double q = game.reward[s][a];
      for (int sn = 0; sn < S; ++sn)
        q += game.gamma * game.transition[s][a][sn] * t.value[sn];
      t.q[s][a] = q;
      t.advantage[s][a] = q - t.value[s];
      t.max_abs_advantage = std::max(t.max_abs_advantage, std::fabs(t.advantage[s][a]));
    }
  t.visitation = exact_visitation(game, pi);
  t.expected_return = 0.0;
  for (int s = 0; s < S; ++s) t.expected_return += game.initial_dist[s] * t.value[s];
  return t;
}

double tv_distance(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw std::invalid_argument("tv_distance: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::fabs(p[i] - q[i]);
  return 0.5 * acc;
}

double max_tv(const JointPolicy& a, const JointPolicy& b) {
  if (a.size() != b.size()) throw std::invalid_argument("max_tv: state mismatch");
  double m = 0.0;
  for (std::size_t s = 0; s < a.size(); ++s) m = std::max(m, tv_distance(a[s], b[s]));
  return m;
}

double visitation_expectation(const MarkovGame& game, const JointPolicy& mu,
                              const JointPolicy& act, const Table& f) {
  check_policy_table(game, act);
  std::vector<double> d = exact_visitation(game, mu);
  double acc = 0.0;
  for (int s = 0; s < game.n_states; ++s) {
    if (d[s] == 0.0) continue;
    double inner = 0.0;
    for (int a = 0; a < game.joint_action_count(); ++a) inner += act[s][a] * f[s][a];
    acc += d[s] * inner;
  }
  return acc;
}

std::vector<double> state_distribution_at(const MarkovGame& game,
                                          const JointPolicy& pi, int t) {
  check_policy_table(game, pi);
  const int S = game.n_states;
  const int A = game.joint_action_count();
  std::vector<double> cur = game.initial_dist;
  std::vector<double> next(S, 0.0);
  for (int step = 0; step < t; ++step) {
    next.assign(S, 0.0);
    for (int s = 0; s < S; ++s) {
      if (cur[s] == 0.0) continue;
      for (int a = 0; a < A; ++a) {
        const double w = cur[s] * pi[s][a];
        if (w == 0.0) continue;
        for (int sn = 0; sn < S; ++sn) next[sn] += w * game.transition[s][a][sn];
      }
    }
    cur.swap(next);
  }
  return cur;
}

Table tabulate_corrected_advantage(const MarkovGame& game,
                                   const JointPolicy& behavior,
                                   const JointPolicy& target,
                                   const std::vector<double>& v, double lambda,
                                   int depth) {
  check_policy_table(game, behavior);
  check_policy_table(game, target);
  const int S = game.n_states;
  const int A = game.joint_action_count();
  if (static_cast<int>(v.size()) != S)
    throw std::invalid_argument("tabulate_corrected_advantage: value table size");

  /* Expected TD error of v at each (s,a). */
  Table delta(S, std::vector<double>(A, 0.0));
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      double d = game.reward[s][a] - v[s];
      for (int sn = 0; sn < S; ++sn)
        d += game.gamma * game.transition[s][a][sn] * v[sn];
      delta[s][a] = d;
    }

  /* Damping weights: behavior prob times the truncated ratio collapses to
   * min(behavior, target), so zero-probability actions are harmless. */
  Table damp(S, std::vector<double>(A, 0.0));
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a)
      damp[s][a] = lambda * std::min(behavior[s][a], target[s][a]);

  /* Horner evaluation of sum_{n=0..depth} (gamma*M)^n delta where
   * (M x)(s,a) = sum_{s'} P(s'|s,a) sum_{a'} damp(s',a') x(s',a'). */
  Table x = delta;
  std::vector<double> y(S, 0.0);
  for (int it = 0; it < depth; ++it) {
    for (int s = 0; s < S; ++s) {
      double acc = 0.0;
      for (int a = 0; a < A; ++a) acc += damp[s][a] * x[s][a];
      y[s] = acc;
    }
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) {
        double m = 0.0;
        for (int sn = 0; sn < S; ++sn) m += game.transition[s][a][sn] * y[sn];
        x[s][a] = delta[s][a] + game.gamma * m;
      }
  }
  return x;
}

double exact_batch_surrogate(const MarkovGame& game, const JointPolicy& prev,
                             const JointPolicy& next,
                             const Table& advantage_table) {
  const double j_prev = expected_return(game, prev);
  const double corr = visitation_expectation(game, next, next, advantage_table);
  return j_prev + corr / (1.0 - game.gamma);
}

double exact_joint_surrogate(const MarkovGame& game, const JointPolicy& start,
                             const std::vector<ChainStep>& chain) {
  double g = expected_return(game, start);
  for (const ChainStep& step : chain)
    g += visitation_expectation(game, step.policy, step.policy, step.advantage) /
         (1.0 - game.gamma);
  return g;
}

}  // namespace b2mapo
