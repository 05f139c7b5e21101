#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "p4net/data.hpp"
#include "p4net/errors.hpp"
#include "p4net/grouping.hpp"
#include "p4net/models.hpp"
#include "p4net/network.hpp"
#include "p4net/numerics.hpp"
#include "p4net/privacy.hpp"

namespace p4net {

enum class Method {
  kP4,             // full two-phase protocol
  kLocal,          // each client alone, raw pixels, no noise
  kLocalHc,        // each client alone on handcrafted features
  kFedAvg,         // central server baseline
  kP4RandomGroups, // grouping replaced by uniform random groups
  kP4NoProxy,      // one noisy model per client instead of the pair
  kP4RawImages,    // feature extraction bypassed
};

Method parse_method(const std::string& name);
std::string method_name(Method method);

struct ExperimentConfig {
  // data source
  std::string dataset = "synthetic";  // "synthetic" or a file path
  DatasetFormat dataset_format = DatasetFormat::kIdx;
  std::size_t synthetic_classes = 4;
  std::size_t synthetic_per_class = 400;
  std::size_t synthetic_dim = 8;
  double synthetic_separation = 3.0;
  std::size_t task_clusters = 1;  // label-rotation clusters across clients

  // partitioning
  PartitionMode partition = PartitionMode::kAlphaBased;
  std::size_t clients = 20;            // M (alpha mode)
  std::size_t samples_per_client = 60; // R (alpha mode)
  double gamma = 0.4;                  // IID fraction (alpha mode)
  std::size_t classes_per_client = 2;  // N (shard mode)
  std::size_t shards_per_class = 10;   // P (shard mode)

  // features
  bool use_features = true;

  // privacy
  double epsilon = 15.0;
  std::optional<double> delta;    // default 1/(local samples per client)
  double clip = 1.0;
  double sample_ratio = 0.25;
  std::size_t local_steps = 1;
  std::size_t rounds = 100;
  double c_sigma = 1.0;
  std::optional<double> sigma_g;  // overrides the calibrated value

  // grouping
  std::optional<std::size_t> probe_count;  // default min(35, peers)
  std::size_t group_size_max = 8;
  std::size_t rotation_period = 10;

  // training
  double eta0 = 1.0;  // local lr is eta0 / (sample_ratio * local_steps)
  double alpha = 0.5;
  double beta = 0.5;
  std::size_t eval_interval = 5;

  // fedavg
  double user_ratio = 1.0;

  // run control
  Method method = Method::kP4;
  std::uint64_t seed = 1;
  std::size_t repeats = 1;
  std::string out = "runs";
  double drop_probability = 0.0;

  // Train on the evaluation-reserved tail instead of the regular clients.
  // Set by grid search, not a config file key.
  bool reserved_as_training = false;
};

/// Quantities derived from the config once the per-client sample count is
/// known. local_samples is one client's full local dataset size.
struct ResolvedParams {
  double eta_l = 0.0;
  double delta = 0.0;
  double sigma_g = 0.0;
  std::size_t probe_count = 0;
};

ResolvedParams resolve_params(const ExperimentConfig& cfg, std::size_t local_samples,
                              std::size_t training_clients);

/// Flat key = value file with # comments. Unknown keys, malformed values and
/// invalid combinations raise ConfigError naming the field.
ExperimentConfig parse_config(const std::string& path);

/// Range and combination checks; raises ConfigError naming the field.
void validate(const ExperimentConfig& cfg);

struct MetricsRow {
  std::uint32_t round = 0;
  std::uint32_t client_id = 0;
  std::uint32_t group_id = 0;
  double test_acc = 0.0;
  double proxy_loss = 0.0;
  double private_loss = 0.0;
  std::size_t ledger_used = 0;
};

inline constexpr const char* kMetricsHeader =
    "round,client_id,group_id,test_acc,proxy_loss,private_loss,ledger_used";

std::string format_metrics_row(const MetricsRow& row);

/// Streaming CSV sink, flushed after every evaluation block so partial
/// results survive a crash.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path);

  void write(const MetricsRow& row);
  void flush();
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ofstream out_;
};

/// Writes all rows at once with the standard header.
void emit_metrics(const std::vector<MetricsRow>& rows, const std::string& path);

/// State of one group immediately after its communication round.
struct GroupRoundSnapshot {
  std::uint32_t round = 0;
  std::uint32_t aggregator = 0;
  std::vector<std::uint32_t> members;  // participants, ascending ids
  std::vector<DenseVector> proxies;    // their proxies after adoption
  std::size_t messages = 0;
};

struct RunObserver {
  std::function<void(const GroupRoundSnapshot&)> after_group_round;
  std::function<void(std::uint32_t round, const DenseVector& global_params)>
      after_server_round;
};

struct RunReport {
  std::vector<MetricsRow> metrics;
  std::vector<std::uint32_t> client_ids;  // trained clients, ascending
  std::vector<std::size_t> group_of;      // parallel to client_ids
  ResolvedParams params;
  std::size_t bus_messages = 0;
  std::size_t bus_dropped = 0;
  double grouping_objective = 0.0;
  double mean_final_accuracy = 0.0;
};

/// Runs one experiment end to end, deterministically for a given config and
/// seed. Dispatches to run_fedavg for that method.
RunReport run_experiment(const ExperimentConfig& cfg, RunObserver* observer = nullptr,
                         MetricsWriter* writer = nullptr);

/// Central-server baseline: one global model, per-round client sampling,
/// the same clip-and-noise mechanism on client updates.
RunReport run_fedavg(const ExperimentConfig& cfg, RunObserver* observer = nullptr,
                     MetricsWriter* writer = nullptr);

struct GridCell {
  double eta_l = 0.0;
  double eta0 = 0.0;
  double clip = 0.0;
  double mean_accuracy = 0.0;
};

/// 5x5 log-spaced sweep of local learning rate and clipping bound in
/// [0.1, 10], trained and scored on the evaluation-reserved clients.
std::vector<GridCell> grid_search(const ExperimentConfig& base);

}  // namespace p4net
