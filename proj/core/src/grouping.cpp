#include "p4net/grouping.hpp"

#include <algorithm>
#include <limits>
#include <string>

namespace p4net {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

std::vector<std::vector<std::size_t>> CollaborationGraph::groups() const {
  std::size_t count = 0;
  for (std::size_t g : group_of) count = std::max(count, g + 1);
  std::vector<std::vector<std::size_t>> out(count);
  for (std::size_t i = 0; i < group_of.size(); ++i) out[group_of[i]].push_back(i);
  return out;
}

void validate(const CollaborationGraph& graph, std::size_t max_size) {
  const std::size_t m = graph.m;
  if (graph.adjacency.size() != m * m) {
    throw ShapeError("collaboration graph: adjacency is not m x m");
  }
  if (graph.group_of.size() != m) {
    throw ShapeError("collaboration graph: group labels missing for some clients");
  }
  for (std::size_t i = 0; i < m; ++i) {
    if (graph.adjacent(i, i)) {
      throw DomainError("collaboration graph: nonzero diagonal at " + std::to_string(i));
    }
    for (std::size_t j = 0; j < m; ++j) {
      if (graph.adjacent(i, j) != graph.adjacent(j, i)) {
        throw DomainError("collaboration graph: asymmetric edge " + std::to_string(i) +
                          "," + std::to_string(j));
      }
      const bool same = i != j && graph.group_of[i] == graph.group_of[j];
      if (graph.adjacent(i, j) != same) {
        throw DomainError("collaboration graph: edges do not form group cliques at " +
                          std::to_string(i) + "," + std::to_string(j));
      }
    }
  }
  for (const auto& members : graph.groups()) {
    if (members.empty()) throw DomainError("collaboration graph: empty group label");
    if (members.size() > max_size) {
      throw DomainError("collaboration graph: group of " + std::to_string(members.size()) +
                        " exceeds cap " + std::to_string(max_size));
    }
  }
}

void SimilarityCache::insert(std::size_t i, std::size_t j, double dissimilarity) {
  if (i == j) throw ParamError("similarity cache: self pair " + std::to_string(i));
  if (!(dissimilarity >= 0.0)) {
    throw DomainError("similarity cache: negative dissimilarity " +
                      std::to_string(dissimilarity));
  }
  entries_[{std::min(i, j), std::max(i, j)}] = dissimilarity;
}

std::optional<double> SimilarityCache::find(std::size_t i, std::size_t j) const {
  const auto it = entries_.find({std::min(i, j), std::max(i, j)});
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

double model_dissimilarity(const DenseVector& wi, const DenseVector& wj) {
  if (wi.size() != wj.size()) {
    throw ShapeError("model_dissimilarity: parameter counts differ (" +
                     std::to_string(wi.size()) + " vs " + std::to_string(wj.size()) + ")");
  }
  return l1_distance(wi, wj);
}

void sample_and_probe(std::size_t client, const std::vector<DenseVector>& weights,
                      std::size_t H, SimilarityCache& cache, RandomSource& rng) {
  const std::size_t m = weights.size();
  if (client >= m) throw ParamError("sample_and_probe: client id out of range");
  if (H + 1 > m) {
    throw ParamError("sample_and_probe: probe count " + std::to_string(H) +
                     " exceeds peer count " + std::to_string(m - 1));
  }
  for (std::size_t idx : rng.sample_without_replacement(m - 1, H)) {
    const std::size_t peer = idx < client ? idx : idx + 1;
    cache.insert(client, peer, model_dissimilarity(weights[client], weights[peer]));
  }
}

std::vector<std::vector<std::size_t>> form_pairs(const SimilarityCache& cache,
                                                 std::size_t m, RandomSource& rng) {
  if (m == 0) throw ParamError("form_pairs: no clients");

  // Most similar probed peer, optionally restricted to unpaired clients.
  // Ascending scan with a strict compare breaks ties toward the lowest id.
  auto best_peer = [&](std::size_t i, const std::vector<std::uint8_t>* skip)
      -> std::optional<std::size_t> {
    std::optional<std::size_t> best;
    double best_d = kInf;
    for (std::size_t j = 0; j < m; ++j) {
      if (j == i || (skip && (*skip)[j])) continue;
      const auto d = cache.find(i, j);
      if (d && *d < best_d) {
        best_d = *d;
        best = j;
      }
    }
    return best;
  };

  std::vector<std::uint8_t> taken(m, 0);
  std::vector<std::vector<std::size_t>> groups;

  std::vector<std::optional<std::size_t>> favorite(m);
  for (std::size_t i = 0; i < m; ++i) favorite[i] = best_peer(i, nullptr);
  for (std::size_t i = 0; i < m; ++i) {
    if (taken[i] || !favorite[i]) continue;
    const std::size_t j = *favorite[i];
    if (j > i && !taken[j] && favorite[j] && *favorite[j] == i) {
      groups.push_back({i, j});
      taken[i] = taken[j] = 1;
    }
  }

  for (std::size_t i = 0; i < m; ++i) {
    if (taken[i]) continue;
    const auto j = best_peer(i, &taken);
    if (j) {
      groups.push_back({i, *j});
      taken[i] = taken[*j] = 1;
    }
  }

  std::vector<std::size_t> leftovers;
  for (std::size_t i = 0; i < m; ++i) {
    if (!taken[i]) leftovers.push_back(i);
  }
  if (!leftovers.empty()) {
    std::vector<std::size_t> order = rng.shuffled_indices(leftovers.size());
    for (std::size_t k = 0; k + 1 < order.size(); k += 2) {
      std::size_t a = leftovers[order[k]];
      std::size_t b = leftovers[order[k + 1]];
      if (a > b) std::swap(a, b);
      groups.push_back({a, b});
    }
    if (order.size() % 2 == 1) groups.push_back({leftovers[order.back()]});
  }
  return groups;
}

double group_dissimilarity(const std::vector<std::size_t>& a,
                           const std::vector<std::size_t>& b,
                           const SimilarityCache& cache) {
  double best = kInf;
  for (std::size_t i : a) {
    for (std::size_t j : b) {
      const auto d = cache.find(i, j);
      if (d && *d < best) best = *d;
    }
  }
  return best;
}

CollaborationGraph merge_until(std::vector<std::vector<std::size_t>> groups,
                               const SimilarityCache& cache, std::size_t max_size,
                               RandomSource& rng) {
  if (max_size == 0) throw ParamError("merge_until: max group size must be >= 1");
  for (auto& g : groups) {
    if (g.empty()) throw ParamError("merge_until: empty group");
    std::sort(g.begin(), g.end());
  }

  bool merged_any = true;
  while (merged_any) {
    merged_any = false;
    std::sort(groups.begin(), groups.end(),
              [](const auto& a, const auto& b) { return a.front() < b.front(); });
    const std::size_t n = groups.size();
    std::vector<std::uint8_t> used(n, 0);
    std::vector<std::pair<std::size_t, std::size_t>> merges;

    auto best_partner = [&](std::size_t gi, bool only_unused)
        -> std::optional<std::size_t> {
      std::optional<std::size_t> best;
      double best_d = kInf;
      for (std::size_t gj = 0; gj < n; ++gj) {
        if (gj == gi || (only_unused && used[gj])) continue;
        if (groups[gi].size() + groups[gj].size() > max_size) continue;
        const double d = group_dissimilarity(groups[gi], groups[gj], cache);
        if (d < best_d) {
          best_d = d;
          best = gj;
        }
      }
      return best;
    };

    std::vector<std::optional<std::size_t>> favorite(n);
    for (std::size_t gi = 0; gi < n; ++gi) favorite[gi] = best_partner(gi, false);
    for (std::size_t gi = 0; gi < n; ++gi) {
      if (used[gi] || !favorite[gi]) continue;
      const std::size_t gj = *favorite[gi];
      if (gj > gi && !used[gj] && favorite[gj] && *favorite[gj] == gi) {
        merges.push_back({gi, gj});
        used[gi] = used[gj] = 1;
      }
    }

    for (std::size_t gi = 0; gi < n; ++gi) {
      if (used[gi]) continue;
      const auto gj = best_partner(gi, true);
      if (gj) {
        merges.push_back({gi, *gj});
        used[gi] = used[*gj] = 1;
      }
    }

    // Leftovers merge in random order, still requiring a probed cross pair
    // and the size cap. Groups sharing no cache entry never merge.
    std::vector<std::size_t> leftovers;
    for (std::size_t gi = 0; gi < n; ++gi) {
      if (!used[gi]) leftovers.push_back(gi);
    }
    if (leftovers.size() > 1) {
      const std::vector<std::size_t> order = rng.shuffled_indices(leftovers.size());
      for (std::size_t a = 0; a < order.size(); ++a) {
        const std::size_t gi = leftovers[order[a]];
        if (used[gi]) continue;
        for (std::size_t b = a + 1; b < order.size(); ++b) {
          const std::size_t gj = leftovers[order[b]];
          if (used[gj]) continue;
          if (groups[gi].size() + groups[gj].size() > max_size) continue;
          if (group_dissimilarity(groups[gi], groups[gj], cache) == kInf) continue;
          merges.push_back({gi, gj});
          used[gi] = used[gj] = 1;
          break;
        }
      }
    }

    if (!merges.empty()) {
      merged_any = true;
      std::vector<std::uint8_t> absorbed(n, 0);
      for (const auto& [gi, gj] : merges) {
        groups[gi].insert(groups[gi].end(), groups[gj].begin(), groups[gj].end());
        std::sort(groups[gi].begin(), groups[gi].end());
        absorbed[gj] = 1;
      }
      std::vector<std::vector<std::size_t>> next;
      next.reserve(n - merges.size());
      for (std::size_t gi = 0; gi < n; ++gi) {
        if (!absorbed[gi]) next.push_back(std::move(groups[gi]));
      }
      groups = std::move(next);
    }
  }

  std::sort(groups.begin(), groups.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
  std::size_t m = 0;
  for (const auto& g : groups) {
    for (std::size_t i : g) m = std::max(m, i + 1);
  }
  CollaborationGraph graph;
  graph.m = m;
  graph.adjacency.assign(m * m, 0);
  graph.group_of.assign(m, 0);
  std::vector<std::uint8_t> seen(m, 0);
  for (std::size_t label = 0; label < groups.size(); ++label) {
    for (std::size_t i : groups[label]) {
      if (seen[i]) throw ParamError("merge_until: client " + std::to_string(i) +
                                    " appears in two groups");
      seen[i] = 1;
      graph.group_of[i] = label;
      for (std::size_t j : groups[label]) {
        if (i != j) graph.adjacency[i * m + j] = 1;
      }
    }
  }
  for (std::size_t i = 0; i < m; ++i) {
    if (!seen[i]) throw ParamError("merge_until: client " + std::to_string(i) +
                                   " missing from all groups");
  }
  validate(graph, max_size);
  return graph;
}

double grouping_objective(const CollaborationGraph& graph,
                          const std::vector<DenseVector>& weights) {
  if (weights.size() != graph.m) {
    throw ShapeError("grouping_objective: weight count does not match graph");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < graph.m; ++i) {
    for (std::size_t j = i + 1; j < graph.m; ++j) {
      if (graph.adjacent(i, j)) total += l1_distance(weights[i], weights[j]);
    }
  }
  return total;
}

GroupingResult form_groups(const std::vector<DenseVector>& weights, std::size_t H,
                           std::size_t max_size, RandomSource& rng) {
  if (weights.empty()) throw ParamError("form_groups: no clients");
  GroupingResult result;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    sample_and_probe(i, weights, H, result.cache, rng);
  }
  auto pairs = form_pairs(result.cache, weights.size(), rng);
  result.graph = merge_until(std::move(pairs), result.cache, max_size, rng);
  result.objective = grouping_objective(result.graph, weights);
  return result;
}

}  // namespace p4net
