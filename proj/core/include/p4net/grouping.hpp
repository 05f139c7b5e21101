#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <vector>

#include "p4net/errors.hpp"
#include "p4net/numerics.hpp"

namespace p4net {

/// Who collaborates with whom. Groups are disjoint cliques; the adjacency
/// matrix is symmetric with a zero diagonal.
struct CollaborationGraph {
  std::size_t m = 0;
  std::vector<std::uint8_t> adjacency;  // m*m row-major booleans
  std::vector<std::size_t> group_of;    // client -> group label

  bool adjacent(std::size_t i, std::size_t j) const { return adjacency[i * m + j] != 0; }
  /// Members per group, each list ascending, groups ordered by label.
  std::vector<std::vector<std::size_t>> groups() const;
};

/// Throws unless the graph is symmetric, zero-diagonal and partitioned into
/// cliques no larger than max_size that agree with the group labels.
void validate(const CollaborationGraph& graph, std::size_t max_size);

/// Pairwise dissimilarities known so far. Sparse: only probed pairs appear.
class SimilarityCache {
 public:
  void insert(std::size_t i, std::size_t j, double dissimilarity);
  std::optional<double> find(std::size_t i, std::size_t j) const;
  std::size_t size() const { return entries_.size(); }

 private:
  std::map<std::pair<std::size_t, std::size_t>, double> entries_;
};

/// l1 distance between two flattened parameter vectors.
double model_dissimilarity(const DenseVector& wi, const DenseVector& wj);

/// Client `client` probes H distinct peers chosen without replacement and
/// records the dissimilarities. weights[k] holds client k's flattened proxy
/// parameters after the first local training round.
void sample_and_probe(std::size_t client, const std::vector<DenseVector>& weights,
                      std::size_t H, SimilarityCache& cache, RandomSource& rng);

/// Greedy pairing: mutual most-similar pairs first, then each leftover joins
/// its most similar still-unpaired probed peer, then random pairs. Odd
/// leftover stays a singleton. Every client lands in exactly one group of
/// size one or two.
std::vector<std::vector<std::size_t>> form_pairs(const SimilarityCache& cache,
                                                 std::size_t m, RandomSource& rng);

/// Smallest cached cross-pair dissimilarity between the two groups;
/// +infinity when no cross pair was ever probed (such groups cannot merge).
double group_dissimilarity(const std::vector<std::size_t>& a,
                           const std::vector<std::size_t>& b,
                           const SimilarityCache& cache);

/// Repeats the pairing rule on whole groups (mutual, unilateral, random)
/// until no merge is possible without exceeding max_size members.
CollaborationGraph merge_until(std::vector<std::vector<std::size_t>> groups,
                               const SimilarityCache& cache, std::size_t max_size,
                               RandomSource& rng);

/// Sum of within-group pairwise l1 distances, from the true weights.
double grouping_objective(const CollaborationGraph& graph,
                          const std::vector<DenseVector>& weights);

struct GroupingResult {
  CollaborationGraph graph;
  SimilarityCache cache;
  double objective = 0.0;
};

/// The whole first phase: probe, pair, merge. H is the probe count per
/// client, max_size the group size cap.
GroupingResult form_groups(const std::vector<DenseVector>& weights, std::size_t H,
                           std::size_t max_size, RandomSource& rng);

}  // namespace p4net
