#include "p4net/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

namespace p4net {
namespace {

std::uint32_t read_be32(const unsigned char* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

std::vector<unsigned char> read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                    std::istreambuf_iterator<char>());
}

std::string sibling_label_path(const std::string& images_path) {
  std::string labels = images_path;
  auto replace = [&labels](const std::string& from, const std::string& to) {
    const auto pos = labels.find(from);
    if (pos != std::string::npos) labels.replace(pos, from.size(), to);
  };
  replace("images", "labels");
  replace("idx3", "idx1");
  if (labels == images_path) {
    throw ParamError("load_dataset(idx): cannot derive label file name from " + images_path);
  }
  return labels;
}

LabeledDataset load_idx(const std::string& images_path) {
  const auto img_bytes = read_all(images_path);
  const auto lbl_bytes = read_all(sibling_label_path(images_path));

  auto fail = [&images_path](std::size_t offset, const std::string& what) -> LabeledDataset {
    std::ostringstream msg;
    msg << images_path << ": " << what << " at byte offset " << offset;
    throw ParseError(msg.str());
  };

  if (img_bytes.size() < 16) fail(img_bytes.size(), "truncated IDX image header");
  if (read_be32(img_bytes.data()) != 0x00000803u) fail(0, "bad IDX image magic");
  const std::size_t count = read_be32(img_bytes.data() + 4);
  const std::size_t rows = read_be32(img_bytes.data() + 8);
  const std::size_t cols = read_be32(img_bytes.data() + 12);
  if (img_bytes.size() < 16 + count * rows * cols) {
    fail(img_bytes.size(), "truncated IDX image data");
  }

  if (lbl_bytes.size() < 8) fail(lbl_bytes.size(), "truncated IDX label header");
  if (read_be32(lbl_bytes.data()) != 0x00000801u) fail(0, "bad IDX label magic");
  const std::size_t label_count = read_be32(lbl_bytes.data() + 4);
  if (label_count != count) fail(4, "IDX image/label count mismatch");
  if (lbl_bytes.size() < 8 + count) fail(lbl_bytes.size(), "truncated IDX label data");

  LabeledDataset ds;
  ds.items.reserve(count);
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < count; ++i) {
    LabeledExample ex;
    ex.image = Image(rows, cols, 1);
    const unsigned char* src = img_bytes.data() + 16 + i * rows * cols;
    for (std::size_t p = 0; p < rows * cols; ++p) {
      ex.image.pixels[p] = src[p] / 255.0;
    }
    ex.label = lbl_bytes[8 + i];
    max_label = std::max(max_label, ex.label);
    ds.items.push_back(std::move(ex));
  }
  ds.num_classes = max_label + 1;
  return ds;
}

LabeledDataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);

  std::string header;
  std::size_t offset = 0;
  if (!std::getline(in, header) || header.empty()) {
    throw ParseError(path + ": missing CSV header at byte offset 0");
  }
  offset += header.size() + 1;
  const std::size_t columns = 1 + std::count(header.begin(), header.end(), ',');
  if (columns < 2) throw ParseError(path + ": CSV header needs label and pixel columns");
  const std::size_t pixels = columns - 1;
  const std::size_t dim = static_cast<std::size_t>(std::lround(std::sqrt(double(pixels))));
  if (dim * dim != pixels) {
    throw ParseError(path + ": pixel column count " + std::to_string(pixels) +
                     " is not a perfect square");
  }

  LabeledDataset ds;
  std::size_t max_label = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) {
      offset += 1;
      continue;
    }
    LabeledExample ex;
    ex.image = Image(dim, dim, 1);
    std::stringstream row(line);
    std::string cell;
    if (!std::getline(row, cell, ',')) {
      throw ParseError(path + ": empty row at byte offset " + std::to_string(offset));
    }
    try {
      ex.label = std::stoul(cell);
    } catch (const std::exception&) {
      throw ParseError(path + ": bad label '" + cell + "' at byte offset " +
                       std::to_string(offset));
    }
    for (std::size_t p = 0; p < pixels; ++p) {
      if (!std::getline(row, cell, ',')) {
        throw ParseError(path + ": row with " + std::to_string(p) +
                         " pixels, expected " + std::to_string(pixels) +
                         " at byte offset " + std::to_string(offset));
      }
      double v = 0.0;
      try {
        v = std::stod(cell);
      } catch (const std::exception&) {
        throw ParseError(path + ": bad pixel '" + cell + "' at byte offset " +
                         std::to_string(offset));
      }
      ex.image.pixels[p] = v / 255.0;
    }
    max_label = std::max(max_label, ex.label);
    ds.items.push_back(std::move(ex));
    offset += line.size() + 1;
  }
  if (ds.items.empty()) throw ParseError(path + ": no data rows");
  ds.num_classes = max_label + 1;
  return ds;
}

LabeledDataset subset(const LabeledDataset& ds, const std::vector<std::size_t>& indices) {
  LabeledDataset out;
  out.num_classes = ds.num_classes;
  out.items.reserve(indices.size());
  for (std::size_t i : indices) out.items.push_back(ds.items[i]);
  return out;
}

// Per-client assembly shared by the two partitioners: shuffle, 80/20 split.
ClientShard make_shard(const LabeledDataset& ds, std::size_t client_id,
                       std::vector<std::size_t> indices, RandomSource& rng) {
  // Shuffle so the split does not follow class order.
  for (std::size_t i = indices.size(); i > 1; --i) {
    std::swap(indices[i - 1], indices[rng.next_below(i)]);
  }
  ClientShard shard;
  shard.client_id = client_id;
  auto [train, test] = split_train_test(subset(ds, indices), 0.8, rng);
  shard.train = std::move(train);
  shard.test = std::move(test);
  return shard;
}

}  // namespace

std::vector<std::size_t> LabeledDataset::label_histogram() const {
  std::vector<std::size_t> hist(num_classes, 0);
  for (const auto& ex : items) {
    if (ex.label >= num_classes) throw DomainError("label exceeds num_classes");
    ++hist[ex.label];
  }
  return hist;
}

LabeledDataset load_dataset(const std::string& path, DatasetFormat format) {
  switch (format) {
    case DatasetFormat::kIdx:
      return load_idx(path);
    case DatasetFormat::kCsv:
      return load_csv(path);
  }
  throw ParamError("load_dataset: unknown format");
}

LabeledDataset generate_synthetic(std::size_t num_classes, std::size_t per_class,
                                  std::size_t dim, double separation,
                                  std::uint64_t seed) {
  if (num_classes < 2) throw ParamError("generate_synthetic: need at least 2 classes");
  if (dim == 0 || per_class == 0) throw ParamError("generate_synthetic: empty dimensions");

  const std::size_t d = dim * dim;
  RandomSource mean_rng(seed, /*stream_id=*/0);
  // Random unit directions are near-orthogonal in high dimension, so scaling
  // by separation/sqrt(2) puts class means ~separation apart pairwise.
  std::vector<std::vector<double>> means(num_classes, std::vector<double>(d, 0.0));
  for (auto& mu : means) {
    double norm = 0.0;
    for (double& x : mu) {
      x = mean_rng.next_gaussian();
      norm += x * x;
    }
    norm = std::sqrt(norm);
    const double scale = separation / std::numbers::sqrt2 / (norm > 0 ? norm : 1.0);
    for (double& x : mu) x *= scale;
  }

  LabeledDataset ds;
  ds.num_classes = num_classes;
  ds.items.reserve(num_classes * per_class);
  for (std::size_t c = 0; c < num_classes; ++c) {
    RandomSource rng(seed, /*stream_id=*/1 + c);
    for (std::size_t i = 0; i < per_class; ++i) {
      LabeledExample ex;
      ex.label = c;
      ex.image = Image(dim, dim, 1);
      for (std::size_t p = 0; p < d; ++p) {
        const double v = means[c][p] + rng.next_gaussian();
        ex.image.pixels[p] = 1.0 / (1.0 + std::exp(-v));
      }
      ds.items.push_back(std::move(ex));
    }
  }
  return ds;
}

std::vector<ClientShard> partition_shard_based(const LabeledDataset& ds, std::size_t P,
                                               std::size_t N, std::uint64_t seed) {
  const std::size_t L = ds.num_classes;
  if (P == 0 || N == 0 || N > L) throw ParamError("partition_shard_based: bad P or N");
  if ((L * P) % N != 0) {
    throw ParamError("partition_shard_based: L*P = " + std::to_string(L * P) +
                     " not divisible by N = " + std::to_string(N));
  }
  const std::size_t M = L * P / N;

  RandomSource rng(seed, /*stream_id=*/0);

  // Cut each class into P equal shards (remainder dropped).
  std::vector<std::vector<std::size_t>> by_class(L);
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    by_class[ds.items[i].label].push_back(i);
  }
  struct Shard {
    std::size_t cls;
    std::vector<std::size_t> indices;
  };
  std::vector<Shard> shards;
  shards.reserve(L * P);
  for (std::size_t c = 0; c < L; ++c) {
    auto& pool = by_class[c];
    const std::size_t shard_size = pool.size() / P;
    if (shard_size == 0) {
      throw ParamError("partition_shard_based: class " + std::to_string(c) +
                       " has fewer than P samples");
    }
    for (std::size_t i = pool.size(); i > 1; --i) {
      std::swap(pool[i - 1], pool[rng.next_below(i)]);
    }
    for (std::size_t p = 0; p < P; ++p) {
      Shard s;
      s.cls = c;
      s.indices.assign(pool.begin() + p * shard_size, pool.begin() + (p + 1) * shard_size);
      shards.push_back(std::move(s));
    }
  }

  // Deal shards N per client, then repair duplicate-class conflicts by
  // swapping shards between clients. Each swap removes one duplicate and
  // never creates a new one, so the pass terminates; reshuffle on a stall.
  for (std::size_t attempt = 0; attempt < 64; ++attempt) {
    std::vector<std::size_t> order = rng.shuffled_indices(shards.size());
    std::vector<std::vector<std::size_t>> assignment(M);
    for (std::size_t i = 0; i < order.size(); ++i) {
      assignment[i / N].push_back(order[i]);
    }

    auto has_class = [&](std::size_t client, std::size_t cls) {
      for (std::size_t s : assignment[client]) {
        if (shards[s].cls == cls) return true;
      }
      return false;
    };
    auto duplicate_slot = [&](std::size_t client) -> long {
      for (std::size_t a = 0; a < N; ++a) {
        for (std::size_t b = a + 1; b < N; ++b) {
          if (shards[assignment[client][a]].cls == shards[assignment[client][b]].cls) {
            return static_cast<long>(b);
          }
        }
      }
      return -1;
    };

    bool stalled = false;
    for (std::size_t i = 0; i < M && !stalled; ++i) {
      long slot;
      while (!stalled && (slot = duplicate_slot(i)) >= 0) {
        const std::size_t dup_cls = shards[assignment[i][slot]].cls;
        bool swapped = false;
        for (std::size_t j = 0; j < M && !swapped; ++j) {
          if (j == i) continue;
          for (std::size_t t = 0; t < N; ++t) {
            const std::size_t cand = shards[assignment[j][t]].cls;
            if (cand != dup_cls && !has_class(i, cand) && !has_class(j, dup_cls)) {
              std::swap(assignment[i][slot], assignment[j][t]);
              swapped = true;
              break;
            }
          }
        }
        stalled = !swapped;
      }
    }
    if (stalled) continue;

    std::vector<ClientShard> out;
    out.reserve(M);
    for (std::size_t i = 0; i < M; ++i) {
      std::vector<std::size_t> indices;
      for (std::size_t s : assignment[i]) {
        indices.insert(indices.end(), shards[s].indices.begin(), shards[s].indices.end());
      }
      out.push_back(make_shard(ds, i, std::move(indices), rng));
    }
    return out;
  }
  throw ParamError("partition_shard_based: could not find a duplicate-free assignment");
}

std::vector<ClientShard> partition_alpha_based(const LabeledDataset& ds, double gamma,
                                               std::size_t M, std::size_t R,
                                               std::uint64_t seed) {
  if (gamma < 0.0 || gamma > 1.0) throw ParamError("partition_alpha_based: gamma not in [0,1]");
  if (M == 0 || R == 0) throw ParamError("partition_alpha_based: M and R must be positive");
  const std::size_t L = ds.num_classes;
  const std::size_t iid_count = static_cast<std::size_t>(gamma * double(R) + 1e-9);
  const std::size_t dedicated_count = R - iid_count;

  RandomSource rng(seed, /*stream_id=*/0);
  std::vector<std::vector<std::size_t>> by_class(L);
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    by_class[ds.items[i].label].push_back(i);
  }
  for (auto& pool : by_class) {
    for (std::size_t i = pool.size(); i > 1; --i) {
      std::swap(pool[i - 1], pool[rng.next_below(i)]);
    }
  }

  // Dedicated draws first, one class per client round-robin.
  std::vector<std::vector<std::size_t>> dedicated(M);
  for (std::size_t i = 0; i < M; ++i) {
    auto& pool = by_class[i % L];
    if (pool.size() < dedicated_count) {
      throw ParamError("partition_alpha_based: class " + std::to_string(i % L) +
                       " has too few samples for client " + std::to_string(i));
    }
    dedicated[i].assign(pool.end() - dedicated_count, pool.end());
    pool.resize(pool.size() - dedicated_count);
  }

  // Remaining samples form the IID pool, drawn uniformly over samples.
  std::vector<std::size_t> iid_pool;
  for (const auto& pool : by_class) iid_pool.insert(iid_pool.end(), pool.begin(), pool.end());
  for (std::size_t i = iid_pool.size(); i > 1; --i) {
    std::swap(iid_pool[i - 1], iid_pool[rng.next_below(i)]);
  }
  if (iid_pool.size() < iid_count * M) {
    throw ParamError("partition_alpha_based: not enough samples for the IID share");
  }

  std::vector<ClientShard> out;
  out.reserve(M);
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < M; ++i) {
    // Split the IID part and the dedicated part separately so both train and
    // test keep the gamma mix, then merge.
    std::vector<std::size_t> iid_part(iid_pool.begin() + cursor,
                                      iid_pool.begin() + cursor + iid_count);
    cursor += iid_count;

    ClientShard shard;
    shard.client_id = i;
    shard.train.num_classes = L;
    shard.test.num_classes = L;
    if (!iid_part.empty()) {
      auto [train, test] = split_train_test(subset(ds, iid_part), 0.8, rng);
      shard.train.items.insert(shard.train.items.end(), train.items.begin(), train.items.end());
      shard.test.items.insert(shard.test.items.end(), test.items.begin(), test.items.end());
    }
    if (!dedicated[i].empty()) {
      auto [train, test] = split_train_test(subset(ds, dedicated[i]), 0.8, rng);
      shard.train.items.insert(shard.train.items.end(), train.items.begin(), train.items.end());
      shard.test.items.insert(shard.test.items.end(), test.items.begin(), test.items.end());
    }
    out.push_back(std::move(shard));
  }
  return out;
}

std::pair<LabeledDataset, LabeledDataset> split_train_test(const LabeledDataset& samples,
                                                           double ratio, RandomSource& rng) {
  const std::size_t n = samples.size();
  if (n < 5) throw ParamError("split_train_test: need at least 5 samples");
  if (ratio <= 0.0 || ratio >= 1.0) throw ParamError("split_train_test: ratio not in (0,1)");
  const std::size_t n_train = static_cast<std::size_t>(ratio * double(n) + 1e-9);

  auto order = rng.shuffled_indices(n);
  LabeledDataset train, test;
  train.num_classes = samples.num_classes;
  test.num_classes = samples.num_classes;
  for (std::size_t i = 0; i < n; ++i) {
    (i < n_train ? train : test).items.push_back(samples.items[order[i]]);
  }
  return {std::move(train), std::move(test)};
}

}  // namespace p4net
