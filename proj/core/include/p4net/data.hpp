#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "p4net/errors.hpp"
#include "p4net/features.hpp"
#include "p4net/numerics.hpp"

namespace p4net {

struct LabeledExample {
  Image image;
  std::size_t label = 0;
};

struct LabeledDataset {
  std::vector<LabeledExample> items;
  std::size_t num_classes = 0;

  std::size_t size() const { return items.size(); }
  /// Per-class sample counts.
  std::vector<std::size_t> label_histogram() const;
};

/// One client's local data after partitioning. Train and test are disjoint
/// and split 80/20 up to rounding.
struct ClientShard {
  std::size_t client_id = 0;
  LabeledDataset train;
  LabeledDataset test;
};

enum class PartitionMode { kShardBased, kAlphaBased };

struct PartitionSpec {
  PartitionMode mode = PartitionMode::kShardBased;
  std::size_t clients = 0;            // M (alpha mode; derived as L*P/N in shard mode)
  std::size_t samples_per_client = 0; // R (alpha mode)
  std::size_t classes_per_client = 0; // N (shard mode)
  std::size_t shards_per_class = 0;   // P (shard mode)
  double iid_fraction = 0.0;          // gamma in [0,1] (alpha mode)
  std::uint64_t seed = 0;
};

enum class DatasetFormat { kIdx, kCsv };

/// Load a dataset from disk. IDX: `path` is the big-endian image file; the
/// label file is found by substituting "images"->"labels" / "idx3"->"idx1"
/// in the name. CSV: header `label,p0,...,pN` with pixels in 0..255; images
/// are square grayscale. Pixels are scaled to [0,1].
LabeledDataset load_dataset(const std::string& path, DatasetFormat format);

/// Deterministic synthetic classification data: per-class Gaussian blobs in
/// pixel space whose means sit `separation` apart (unit noise), squashed
/// through a logistic into [0,1] and shaped as dim x dim grayscale images.
LabeledDataset generate_synthetic(std::size_t num_classes, std::size_t per_class,
                                  std::size_t dim, double separation,
                                  std::uint64_t seed);

/// Shard-based heterogeneity: every class is cut into P shards and each of
/// the M = L*P/N clients receives one shard for each of N distinct classes.
/// Remainder samples that do not fill a shard are dropped.
std::vector<ClientShard> partition_shard_based(const LabeledDataset& ds, std::size_t P,
                                               std::size_t N, std::uint64_t seed);

/// Alpha-based heterogeneity: each client draws floor(gamma*R) samples IID
/// from all classes and the rest from its dedicated class (round-robin by
/// client index). No sample is used by two clients.
std::vector<ClientShard> partition_alpha_based(const LabeledDataset& ds, double gamma,
                                               std::size_t M, std::size_t R,
                                               std::uint64_t seed);

/// Deterministic shuffled 80/20 split (train count = floor(ratio*n)).
std::pair<LabeledDataset, LabeledDataset> split_train_test(const LabeledDataset& samples,
                                                           double ratio, RandomSource& rng);

}  // namespace p4net
