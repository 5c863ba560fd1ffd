#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>

#include "b2mapo/exact.hpp"
#include "b2mapo/policies.hpp"
#include "b2mapo/rng.hpp"
#include "doctest.h"

using namespace b2mapo;

namespace {

void randomize_logits(PolicySet& set, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  for (auto& c : set.conditioned)
    for (double& l : c.table->logits) l = scale * rng.normal();
  for (auto& p : set.independent)
    for (double& l : p.table->logits) l = scale * rng.normal();
}

}  // namespace

TEST_CASE("softmax is shift invariant and matches hand values") {
  std::vector<double> row = {1.0, 0.0};
  auto p = softmax(row);
  const double e = std::exp(1.0);
  CHECK(p[0] == doctest::Approx(e / (e + 1.0)).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(1.0 / (e + 1.0)).epsilon(1e-15));

  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> l(4), shifted(4);
    const double c = rng.uniform(-50.0, 50.0);
    for (int i = 0; i < 4; ++i) {
      l[i] = rng.uniform(-10.0, 10.0);
      shifted[i] = l[i] + c;
    }
    auto a = softmax(l);
    auto b = softmax(shifted);
    double sum = 0.0;
    for (int i = 0; i < 4; ++i) {
      CHECK(std::abs(a[i] - b[i]) <= 1e-14);
      sum += a[i];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
    for (int i = 0; i < 4; ++i)
      CHECK(log_softmax_at(l, i) == doctest::Approx(std::log(a[i])).epsilon(1e-12));
  }
}

TEST_CASE("kl_divergence hand value, nonnegativity, infinite-mass error") {
  // p = (1/2, 1/2), q = (1/3, 2/3): KL = 0.5 ln(3/2) + 0.5 ln(3/4) = 0.5 ln(9/8).
  CHECK(kl_divergence({0.5, 0.5}, {1.0 / 3.0, 2.0 / 3.0}) ==
        doctest::Approx(0.5 * std::log(9.0 / 8.0)).epsilon(1e-14));
  CHECK(kl_divergence({0.0, 1.0}, {0.5, 0.5}) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(kl_divergence({0.25, 0.75}, {0.25, 0.75}) == doctest::Approx(0.0));

  Rng rng(12);
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<double> p(3), q(3);
    double zp = 0.0, zq = 0.0;
    for (int i = 0; i < 3; ++i) {
      p[i] = rng.uniform(1e-3, 1.0);
      q[i] = rng.uniform(1e-3, 1.0);
      zp += p[i];
      zq += q[i];
    }
    for (int i = 0; i < 3; ++i) {
      p[i] /= zp;
      q[i] /= zq;
    }
    CHECK(kl_divergence(p, q) >= -1e-15);
  }

  CHECK_THROWS_AS(kl_divergence({0.5, 0.5}, {1.0, 0.0}), std::domain_error);
  CHECK_THROWS_AS(kl_divergence({0.5, 0.5}, {0.5}), std::invalid_argument);
}

TEST_CASE("context keys are row-major with the first agent slowest") {
  ContextSpec ctx;
  ctx.agents = {0, 2};
  ctx.action_counts = {2, 3};
  CHECK(ctx.size() == 6);
  CHECK(ctx.index({0, 7, 0}) == 0);
  CHECK(ctx.index({0, 7, 2}) == 2);
  CHECK(ctx.index({1, 7, 0}) == 3);
  CHECK(ctx.index({1, 7, 2}) == 5);

  // Unassigned (-1) or out-of-range context actions are rejected.
  CHECK_THROWS_AS(ctx.index({-1, 0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(ctx.index({0, 0, 3}), std::invalid_argument);
  CHECK_THROWS_AS(ctx.index({0, 0}), std::invalid_argument);

  ContextSpec empty;
  CHECK(empty.size() == 1);
  CHECK(empty.index({5, 5}) == 0);
}

TEST_CASE("log_prob_gradient matches finite differences") {
  Rng rng(13);
  const double h = 1e-5;
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_int(4));
    std::vector<double> row(n);
    for (double& l : row) l = rng.uniform(-2.0, 2.0);
    const int a = static_cast<int>(rng.uniform_int(n));
    auto grad = log_prob_gradient(row, a);
    for (int k = 0; k < n; ++k) {
      auto up = row, dn = row;
      up[k] += h;
      dn[k] -= h;
      const double fd = (log_softmax_at(up, a) - log_softmax_at(dn, a)) / (2.0 * h);
      const double denom = std::max(std::abs(fd), 1e-3);
      CHECK(std::abs(grad[k] - fd) / denom <= 1e-6);
      ++checked;
    }
  }
  CHECK(checked >= 100);
}

TEST_CASE("joint table rows are distributions matching the chain rule") {
  for (std::uint64_t seed : {21, 22, 23}) {
    MarkovGame g = build_random_game(3, 4, 2, 0.9, seed);
    BatchSequence seq;
    seq.n_agents = 3;
    seq.batches = {{0, 2}, {1}};
    PolicySet set = make_policy_set(g, seq);
    randomize_logits(set, seed * 100 + 7);

    JointPolicy joint = set.to_joint_table(g);
    check_policy_table(g, joint);
    for (int s = 0; s < g.n_states; ++s) {
      double sum = 0.0;
      for (int a = 0; a < g.joint_action_count(); ++a) {
        sum += joint[s][a];
        auto acts = g.decode_joint(a);
        CHECK(joint[s][a] == doctest::Approx(set.joint_prob(g, s, acts)).epsilon(1e-14));
        // Chain rule against per-agent conditionals in batch order.
        double prod = 1.0;
        for (const auto& batch : seq.batches)
          for (int i : batch)
            prod *= set.action_probs(i, g.observation[i][s], acts)[acts[i]];
        CHECK(joint[s][a] == doctest::Approx(prod).epsilon(1e-13));
        CHECK(set.joint_log_prob(g, s, acts) ==
              doctest::Approx(std::log(prod)).epsilon(1e-12));
      }
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("sampling frequencies match joint probabilities") {
  MarkovGame g = build_random_game(2, 3, 3, 0.9, 31);
  BatchSequence seq = BatchSequence::singletons({0, 1});
  PolicySet set = make_policy_set(g, seq);
  randomize_logits(set, 77);

  const int state = 1;
  const int n = 200000;
  std::vector<int> counts(g.joint_action_count(), 0);
  Rng rng(900);
  for (int i = 0; i < n; ++i)
    counts[g.encode_joint(set.sample_joint(g, state, rng))]++;
  for (int a = 0; a < g.joint_action_count(); ++a) {
    const double freq = static_cast<double>(counts[a]) / n;
    CHECK(std::abs(freq - set.joint_prob(g, state, g.decode_joint(a))) <= 0.005);
  }
}

TEST_CASE("marginalize reduces to the agent's own rows when contexts are empty") {
  MarkovGame g = build_random_game(2, 4, 3, 0.9, 41);
  PolicySet set = make_policy_set(g, BatchSequence::single(2));
  randomize_logits(set, 42);

  auto marg = marginalize(set, g);
  // Identity observations: one state per observation, so the weighted
  // average collapses to the row itself.
  for (int i = 0; i < 2; ++i)
    for (int s = 0; s < g.n_states; ++s) {
      auto row = set.conditioned[i].table->probs(g.observation[i][s], 0);
      for (int a = 0; a < g.n_actions[i]; ++a)
        CHECK(marg[i][g.observation[i][s]][a] == doctest::Approx(row[a]).epsilon(1e-12));
    }
}

TEST_CASE("value gap between conditioned joint and distilled product obeys the simulation bound") {
  for (std::uint64_t seed : {51, 52, 53, 54, 55}) {
    MarkovGame g = build_random_game(2, 4, 2, 0.9, seed);
    PolicySet set = make_policy_set(g, BatchSequence::singletons({0, 1}));
    randomize_logits(set, seed + 1000);

    auto marg = marginalize(set, g);
    for (int i = 0; i < 2; ++i)
      for (int o = 0; o < g.n_obs[i]; ++o) {
        double* row = set.independent[i].table->row(o, 0);
        for (int a = 0; a < g.n_actions[i]; ++a) row[a] = std::log(marg[i][o][a]);
      }

    JointPolicy cond = set.to_joint_table(g);
    JointPolicy prod = set.independent_joint_table(g);
    check_policy_table(g, prod);
    const double eps = max_tv(cond, prod);
    const double gap = std::abs(expected_return(g, cond) - expected_return(g, prod));
    const double bound =
        2.0 * eps * g.r_max / ((1.0 - g.gamma) * (1.0 - g.gamma));
    CHECK(gap <= bound + 1e-12);
  }
}

TEST_CASE("parameter sharing aliases same-shape tables within a batch") {
  MarkovGame g = build_random_game(3, 4, 2, 0.9, 61);
  BatchSequence seq;
  seq.n_agents = 3;
  seq.batches = {{0, 1}, {2}};

  PolicySet shared = make_policy_set(g, seq, true);
  CHECK(shared.conditioned[0].table.get() == shared.conditioned[1].table.get());
  CHECK(shared.conditioned[0].table.get() != shared.conditioned[2].table.get());

  // A write through agent 0 is visible through agent 1.
  shared.conditioned[0].table->row(0, 0)[0] = 3.5;
  CHECK(shared.conditioned[1].table->row_logits(0, 0)[0] == 3.5);

  // Deep copy keeps the aliasing but detaches storage.
  PolicySet copy(shared);
  CHECK(copy.conditioned[0].table.get() == copy.conditioned[1].table.get());
  CHECK(copy.conditioned[0].table.get() != shared.conditioned[0].table.get());
  copy.conditioned[0].table->row(0, 0)[0] = -1.0;
  CHECK(shared.conditioned[0].table->row_logits(0, 0)[0] == 3.5);

  PolicySet plain = make_policy_set(g, seq, false);
  CHECK(plain.conditioned[0].table.get() != plain.conditioned[1].table.get());
}

TEST_CASE("restructuring a product policy onto a chain reproduces the joint") {
  for (std::uint64_t seed : {71, 72, 73}) {
    MarkovGame g = build_random_game(3, 4, 2, 0.92, seed);
    PolicySet set = make_policy_set(g, BatchSequence::single(3));
    randomize_logits(set, seed + 5);

    JointPolicy before = set.to_joint_table(g);
    BatchSequence chain = BatchSequence::singletons({1, 0, 2});
    restructure(set, chain, g);
    CHECK(set.sequence == chain);
    JointPolicy after = set.to_joint_table(g);

    // A product policy's conditionals ignore the context, so the re-keyed
    // policy is the same joint distribution.
    for (int s = 0; s < g.n_states; ++s)
      for (int a = 0; a < g.joint_action_count(); ++a)
        CHECK(after[s][a] == doctest::Approx(before[s][a]).epsilon(1e-9));
  }
}

TEST_CASE("restructuring a chain onto one batch installs the visitation marginals") {
  MarkovGame g = build_random_game(2, 4, 3, 0.9, 81);
  PolicySet set = make_policy_set(g, BatchSequence::singletons({0, 1}));
  randomize_logits(set, 86);

  auto marg = marginalize(set, g);
  PolicySet moved(set);
  restructure(moved, BatchSequence::single(2), g);

  for (int i = 0; i < 2; ++i)
    for (int o = 0; o < g.n_obs[i]; ++o) {
      auto row = moved.conditioned[i].table->probs(o, 0);
      for (int a = 0; a < g.n_actions[i]; ++a)
        CHECK(row[a] == doctest::Approx(marg[i][o][a]).epsilon(1e-9));
    }

  // Re-keying onto the current sequence is a no-op.
  PolicySet same(set);
  restructure(same, set.sequence, g);
  for (int i = 0; i < 2; ++i)
    CHECK(same.conditioned[i].table->logits == set.conditioned[i].table->logits);
}

TEST_CASE("checkpoints round-trip bit-exactly with sharing preserved") {
  MarkovGame g = build_random_game(3, 4, 2, 0.9, 91);
  BatchSequence seq;
  seq.n_agents = 3;
  seq.batches = {{0, 1}, {2}};
  PolicySet set = make_policy_set(g, seq, true);
  randomize_logits(set, 92, 3.0);

  const std::string text = policy_set_to_text(set);
  PolicySet back = policy_set_from_text(text);
  CHECK(back.sequence == set.sequence);
  CHECK(back.param_sharing == set.param_sharing);
  for (int i = 0; i < 3; ++i) {
    CHECK(back.conditioned[i].context == set.conditioned[i].context);
    CHECK(back.conditioned[i].table->logits == set.conditioned[i].table->logits);
    CHECK(back.independent[i].table->logits == set.independent[i].table->logits);
  }
  CHECK(back.conditioned[0].table.get() == back.conditioned[1].table.get());
  CHECK(policy_set_to_text(back) == text);

  const std::string path = "policy_roundtrip.tmp";
  save_policy_set(set, path);
  PolicySet loaded = load_policy_set(path);
  CHECK(policy_set_to_text(loaded) == text);
  std::remove(path.c_str());

  CHECK_THROWS_AS(policy_set_from_text("b2mapo-policy v2\n"), std::invalid_argument);
  CHECK_THROWS_AS(policy_set_from_text("garbage\n"), std::invalid_argument);
}

TEST_CASE("construction rejects mismatched shapes and bad keys") {
  MarkovGame g = build_random_game(2, 3, 2, 0.9, 101);
  BatchSequence wrong;
  wrong.n_agents = 3;
  wrong.batches = {{0, 1, 2}};
  CHECK_THROWS_AS(make_policy_set(g, wrong), std::invalid_argument);

  PolicySet set = make_policy_set(g, BatchSequence::singletons({0, 1}));
  CHECK_THROWS_AS(set.action_probs(5, 0, {0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(set.action_probs(1, 0, {-1, 0}), std::invalid_argument);
  CHECK_THROWS_AS(set.conditioned[0].table->probs(99, 0), std::invalid_argument);
}
