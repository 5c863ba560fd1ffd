#pragma once

// Ordered batch partitions of agents. Produced by the scheduler, consumed by
// the policy structure and the optimizer.

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

namespace b2mapo {

/**
 * @brief An ordered partition of {0..n_agents-1} into update batches.
 *
 * Batch k is updated after batches 0..k-1; agents within one batch are
 * updated simultaneously. Each batch is kept sorted ascending.
 */
struct BatchSequence {
  int n_agents = 0;
  std::vector<std::vector<int>> batches;

  /// Every agent appears exactly once, batches nonempty and sorted.
  void validate() const {
    std::vector<int> seen(n_agents, 0);
    if (batches.empty()) throw std::invalid_argument("BatchSequence: no batches");
    for (const auto& b : batches) {
      if (b.empty()) throw std::invalid_argument("BatchSequence: empty batch");
      for (std::size_t i = 0; i < b.size(); ++i) {
        int agent = b[i];
        if (agent < 0 || agent >= n_agents)
          throw std::invalid_argument("BatchSequence: agent out of range");
        if (seen[agent]++) throw std::invalid_argument("BatchSequence: duplicate agent");
        if (i > 0 && b[i - 1] >= agent)
          throw std::invalid_argument("BatchSequence: batch not sorted");
      }
    }
    for (int a = 0; a < n_agents; ++a)
      if (!seen[a]) throw std::invalid_argument("BatchSequence: missing agent");
  }

  int batch_of(int agent) const {
    for (std::size_t k = 0; k < batches.size(); ++k)
      for (int a : batches[k])
        if (a == agent) return static_cast<int>(k);
    throw std::invalid_argument("BatchSequence: unknown agent");
  }

  /// Union of all batches strictly before the agent's batch, sorted.
  std::vector<int> preceding_agents(int agent) const {
    const int k = batch_of(agent);
    std::vector<int> out;
    for (int j = 0; j < k; ++j)
      out.insert(out.end(), batches[j].begin(), batches[j].end());
    std::sort(out.begin(), out.end());
    return out;
  }

  bool operator==(const BatchSequence& other) const {
    return n_agents == other.n_agents && batches == other.batches;
  }

  static BatchSequence single(int n_agents) {
    BatchSequence s;
    s.n_agents = n_agents;
    s.batches.emplace_back();
    for (int a = 0; a < n_agents; ++a) s.batches[0].push_back(a);
    return s;
  }

  static BatchSequence singletons(const std::vector<int>& order) {
    BatchSequence s;
    s.n_agents = static_cast<int>(order.size());
    for (int a : order) s.batches.push_back({a});
    s.validate();
    return s;
  }

  std::string to_string() const {
    std::string out;
    for (std::size_t k = 0; k < batches.size(); ++k) {
      out += (k ? "|" : "");
      for (std::size_t i = 0; i < batches[k].size(); ++i)
        out += (i ? "," : "") + std::to_string(batches[k][i]);
    }
    return out;
  }
};

}  // namespace b2mapo
