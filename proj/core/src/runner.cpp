#include "p4net/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>

#include "p4net/features.hpp"

namespace p4net {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used == value.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a number, got '" + value + "'");
}

std::size_t to_size(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(value, &used);
    if (used == value.size() && v >= 0) return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + value + "'");
}

void apply_key(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "dataset") {
    cfg.dataset = value;
  } else if (key == "dataset_format") {
    if (value == "idx") {
      cfg.dataset_format = DatasetFormat::kIdx;
    } else if (value == "csv") {
      cfg.dataset_format = DatasetFormat::kCsv;
    } else {
      throw ConfigError("dataset_format: expected idx or csv, got '" + value + "'");
    }
  } else if (key == "synthetic_classes") {
    cfg.synthetic_classes = to_size(key, value);
  } else if (key == "synthetic_per_class") {
    cfg.synthetic_per_class = to_size(key, value);
  } else if (key == "synthetic_dim") {
    cfg.synthetic_dim = to_size(key, value);
  } else if (key == "synthetic_separation") {
    cfg.synthetic_separation = to_double(key, value);
  } else if (key == "task_clusters") {
    cfg.task_clusters = to_size(key, value);
  } else if (key == "partition") {
    if (value == "shard") {
      cfg.partition = PartitionMode::kShardBased;
    } else if (value == "alpha") {
      cfg.partition = PartitionMode::kAlphaBased;
    } else {
      throw ConfigError("partition: expected shard or alpha, got '" + value + "'");
    }
  } else if (key == "clients") {
    cfg.clients = to_size(key, value);
  } else if (key == "samples_per_client") {
    cfg.samples_per_client = to_size(key, value);
  } else if (key == "gamma") {
    cfg.gamma = to_double(key, value);
  } else if (key == "classes_per_client") {
    cfg.classes_per_client = to_size(key, value);
  } else if (key == "shards_per_class") {
    cfg.shards_per_class = to_size(key, value);
  } else if (key == "use_features") {
    cfg.use_features = to_bool(key, value);
  } else if (key == "epsilon") {
    cfg.epsilon = to_double(key, value);
  } else if (key == "delta") {
    cfg.delta = to_double(key, value);
  } else if (key == "clip") {
    cfg.clip = to_double(key, value);
  } else if (key == "sample_ratio") {
    cfg.sample_ratio = to_double(key, value);
  } else if (key == "local_steps") {
    cfg.local_steps = to_size(key, value);
  } else if (key == "rounds") {
    cfg.rounds = to_size(key, value);
  } else if (key == "c_sigma") {
    cfg.c_sigma = to_double(key, value);
  } else if (key == "sigma_g") {
    cfg.sigma_g = to_double(key, value);
  } else if (key == "probe_count") {
    cfg.probe_count = to_size(key, value);
  } else if (key == "group_size_max") {
    cfg.group_size_max = to_size(key, value);
  } else if (key == "rotation_period") {
    cfg.rotation_period = to_size(key, value);
  } else if (key == "eta0") {
    cfg.eta0 = to_double(key, value);
  } else if (key == "alpha") {
    cfg.alpha = to_double(key, value);
  } else if (key == "beta") {
    cfg.beta = to_double(key, value);
  } else if (key == "eval_interval") {
    cfg.eval_interval = to_size(key, value);
  } else if (key == "user_ratio") {
    cfg.user_ratio = to_double(key, value);
  } else if (key == "method") {
    cfg.method = parse_method(value);
  } else if (key == "seed") {
    cfg.seed = static_cast<std::uint64_t>(to_size(key, value));
  } else if (key == "repeats") {
    cfg.repeats = to_size(key, value);
  } else if (key == "out") {
    cfg.out = value;
  } else if (key == "drop_probability") {
    cfg.drop_probability = to_double(key, value);
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

struct ClientState {
  std::uint32_t id = 0;
  std::vector<DenseVector> train_x;
  std::vector<std::size_t> train_y;
  std::vector<DenseVector> test_x;
  std::vector<std::size_t> test_y;
  DistillPair pair;
  PrivacyLedger ledger;
  RandomSource batch_rng;
  RandomSource noise_rng;
  double last_proxy_loss = 0.0;
  double last_private_loss = 0.0;
};

bool wants_features(const ExperimentConfig& cfg) {
  switch (cfg.method) {
    case Method::kLocal:
    case Method::kP4RawImages:
      return false;
    case Method::kLocalHc:
      return true;
    default:
      return cfg.use_features;
  }
}

void rotate_labels(LabeledDataset& ds, std::size_t shift, std::size_t num_classes) {
  for (auto& item : ds.items) item.label = (item.label + shift) % num_classes;
}

void load_client(ClientState& cs, const ClientShard& shard, bool scatter) {
  if (scatter) {
    std::vector<FeatureMap> train_maps;
    train_maps.reserve(shard.train.size());
    for (const auto& item : shard.train.items) {
      train_maps.push_back(scatter_transform(item.image));
    }
    const NormStats stats = fit_normalizer(train_maps);
    for (const FeatureMap& fm : train_maps) {
      cs.train_x.push_back(normalize(fm, stats).flatten());
    }
    for (const auto& item : shard.test.items) {
      cs.test_x.push_back(normalize(scatter_transform(item.image), stats).flatten());
    }
  } else {
    for (const auto& item : shard.train.items) {
      cs.train_x.push_back(DenseVector(item.image.pixels));
    }
    for (const auto& item : shard.test.items) {
      cs.test_x.push_back(DenseVector(item.image.pixels));
    }
  }
  for (const auto& item : shard.train.items) cs.train_y.push_back(item.label);
  for (const auto& item : shard.test.items) cs.test_y.push_back(item.label);
}

enum class StepKind {
  kPairDp,       // noisy proxy + clean private, mutual distillation
  kSingleDp,     // one noisy model, plain cross-entropy
  kSinglePlain,  // one clean model, plain cross-entropy
};

/// K local steps on one client's data.
void local_round(ClientState& cs, const ExperimentConfig& cfg, const ResolvedParams& rp,
                 StepKind kind) {
  for (std::size_t k = 0; k < cfg.local_steps; ++k) {
    const Minibatch batch =
        sample_minibatch(cs.train_x, cs.train_y, cfg.sample_ratio, cs.batch_rng);
    switch (kind) {
      case StepKind::kPairDp: {
        ProxyLossResult proxy = proxy_loss(cs.pair, batch);
        const PrivateLossResult priv = private_loss(cs.pair, batch);
        for (DenseVector& g : proxy.per_example) g = clip_gradient(g, cfg.clip);
        const DenseVector update =
            privatize(proxy.per_example, cfg.clip, rp.sigma_g, cfg.sample_ratio,
                      cs.train_x.size(), cs.noise_rng);
        cs.pair.proxy_model.add_scaled(update, -rp.eta_l);
        cs.pair.private_model.add_scaled(priv.grad, -rp.eta_l);
        cs.last_proxy_loss = proxy.loss;
        cs.last_private_loss = priv.loss;
        break;
      }
      case StepKind::kSingleDp: {
        const LossSpec ce;
        const double loss = batch_loss(cs.pair.proxy_model, batch, ce);
        std::vector<DenseVector> grads = per_example_grads(cs.pair.proxy_model, batch, ce);
        for (DenseVector& g : grads) g = clip_gradient(g, cfg.clip);
        const DenseVector update = privatize(grads, cfg.clip, rp.sigma_g, cfg.sample_ratio,
                                             cs.train_x.size(), cs.noise_rng);
        cs.pair.proxy_model.add_scaled(update, -rp.eta_l);
        cs.last_proxy_loss = loss;
        cs.last_private_loss = loss;
        break;
      }
      case StepKind::kSinglePlain: {
        const PrivateLossResult r = private_loss(cs.pair, batch);
        cs.pair.private_model.add_scaled(r.grad, -rp.eta_l);
        cs.last_private_loss = r.loss;
        break;
      }
    }
  }
}

struct Cohort {
  std::size_t num_classes = 0;
  std::size_t feature_dim = 0;
  std::vector<ClientState> clients;  // ascending client id
  ResolvedParams params;
};

Cohort prepare_cohort(const ExperimentConfig& cfg) {
  validate(cfg);
  const LabeledDataset base =
      cfg.dataset == "synthetic"
          ? generate_synthetic(cfg.synthetic_classes, cfg.synthetic_per_class,
                               cfg.synthetic_dim, cfg.synthetic_separation, cfg.seed)
          : load_dataset(cfg.dataset, cfg.dataset_format);
  std::vector<ClientShard> shards =
      cfg.partition == PartitionMode::kAlphaBased
          ? partition_alpha_based(base, cfg.gamma, cfg.clients, cfg.samples_per_client,
                                  cfg.seed)
          : partition_shard_based(base, cfg.shards_per_class, cfg.classes_per_client,
                                  cfg.seed);
  const std::size_t total = shards.size();
  if (cfg.task_clusters > 1) {
    for (std::size_t i = 0; i < total; ++i) {
      const std::size_t shift = i % cfg.task_clusters;
      rotate_labels(shards[i].train, shift, base.num_classes);
      rotate_labels(shards[i].test, shift, base.num_classes);
    }
  }

  const std::size_t reserved = total / 5;  // evaluation-only tail
  const std::size_t begin = cfg.reserved_as_training ? total - reserved : 0;
  const std::size_t end = cfg.reserved_as_training ? total : total - reserved;
  if (begin >= end) {
    throw ConfigError(cfg.reserved_as_training
                          ? "clients: fewer than 5 clients leaves no reserved tail"
                          : "clients: no training clients");
  }

  Cohort cohort;
  cohort.num_classes = base.num_classes;
  const bool scatter = wants_features(cfg);
  for (std::size_t i = begin; i < end; ++i) {
    ClientState cs;
    cs.id = static_cast<std::uint32_t>(i);
    load_client(cs, shards[i], scatter);
    if (cs.train_x.empty() || cs.test_x.empty()) {
      throw ConfigError("samples_per_client: client " + std::to_string(i) +
                        " has an empty train or test split");
    }
    cs.batch_rng = RandomSource(cfg.seed, 1000 + i);
    cs.noise_rng = RandomSource(cfg.seed, 2000 + i);
    cs.ledger = PrivacyLedger{0, cfg.rounds};
    cohort.clients.push_back(std::move(cs));
  }
  cohort.feature_dim = cohort.clients.front().train_x.front().size();

  const std::size_t local_samples =
      shards[begin].train.size() + shards[begin].test.size();
  cohort.params = resolve_params(cfg, local_samples, cohort.clients.size());

  const bool single_model = cfg.method == Method::kLocal ||
                            cfg.method == Method::kLocalHc ||
                            cfg.method == Method::kP4NoProxy;
  for (ClientState& cs : cohort.clients) {
    cs.pair.private_model = LinearClassifier(cohort.num_classes, cohort.feature_dim);
    cs.pair.proxy_model = LinearClassifier(cohort.num_classes, cohort.feature_dim);
    cs.pair.alpha = single_model ? 0.0 : cfg.alpha;
    cs.pair.beta = single_model ? 0.0 : cfg.beta;
  }
  return cohort;
}

const LinearClassifier& reported_model(const ClientState& cs, Method method) {
  return method == Method::kP4NoProxy ? cs.pair.proxy_model : cs.pair.private_model;
}

void eval_block(std::uint32_t round, const std::vector<ClientState>& clients,
                const std::vector<std::size_t>& label_of, Method method,
                std::vector<MetricsRow>& rows, MetricsWriter* writer) {
  for (std::size_t l = 0; l < clients.size(); ++l) {
    const ClientState& cs = clients[l];
    MetricsRow row;
    row.round = round;
    row.client_id = cs.id;
    row.group_id = static_cast<std::uint32_t>(label_of[l]);
    row.test_acc = evaluate(reported_model(cs, method), cs.test_x, cs.test_y);
    row.proxy_loss = cs.last_proxy_loss;
    row.private_loss = cs.last_private_loss;
    row.ledger_used = cs.ledger.rounds_used;
    rows.push_back(row);
    if (writer) writer->write(row);
  }
  if (writer) writer->flush();
}

double final_mean_accuracy(const std::vector<MetricsRow>& rows, std::size_t clients) {
  if (rows.empty() || clients == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t i = rows.size() - clients; i < rows.size(); ++i) sum += rows[i].test_acc;
  return sum / static_cast<double>(clients);
}

}  // namespace

Method parse_method(const std::string& name) {
  if (name == "p4") return Method::kP4;
  if (name == "local") return Method::kLocal;
  if (name == "local_hc") return Method::kLocalHc;
  if (name == "fedavg") return Method::kFedAvg;
  if (name == "p4_random_groups") return Method::kP4RandomGroups;
  if (name == "p4_no_proxy") return Method::kP4NoProxy;
  if (name == "p4_raw_images") return Method::kP4RawImages;
  throw ConfigError("method: unknown method '" + name + "'");
}

std::string method_name(Method method) {
  switch (method) {
    case Method::kP4: return "p4";
    case Method::kLocal: return "local";
    case Method::kLocalHc: return "local_hc";
    case Method::kFedAvg: return "fedavg";
    case Method::kP4RandomGroups: return "p4_random_groups";
    case Method::kP4NoProxy: return "p4_no_proxy";
    case Method::kP4RawImages: return "p4_raw_images";
  }
  throw ParamError("method_name: bad enum value");
}

ResolvedParams resolve_params(const ExperimentConfig& cfg, std::size_t local_samples,
                              std::size_t training_clients) {
  if (local_samples == 0) throw ParamError("resolve_params: no local samples");
  if (training_clients == 0) throw ParamError("resolve_params: no clients");
  ResolvedParams rp;
  rp.eta_l = cfg.eta0 / (cfg.sample_ratio * static_cast<double>(cfg.local_steps));
  rp.delta = cfg.delta.value_or(1.0 / static_cast<double>(local_samples));

  DpConfig dp;
  dp.epsilon = cfg.epsilon;
  dp.delta = rp.delta;
  dp.clip = cfg.clip;
  dp.sample_ratio = cfg.sample_ratio;
  dp.local_steps = cfg.local_steps;
  dp.rounds = cfg.rounds;
  dp.c_sigma = cfg.c_sigma;
  validate(dp);
  rp.sigma_g = cfg.sigma_g.value_or(calibrate_sigma(dp));

  const std::size_t peers = training_clients - 1;
  if (cfg.probe_count) {
    if (*cfg.probe_count > peers) {
      throw ConfigError("probe_count: " + std::to_string(*cfg.probe_count) +
                        " exceeds the " + std::to_string(peers) + " available peers");
    }
    rp.probe_count = *cfg.probe_count;
  } else {
    rp.probe_count = std::min<std::size_t>(35, peers);
  }
  return rp;
}

ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  ExperimentConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
    }
    apply_key(cfg, key, value);
  }
  validate(cfg);
  return cfg;
}

void validate(const ExperimentConfig& cfg) {
  if (cfg.dataset.empty()) throw ConfigError("dataset: path missing");
  if (cfg.dataset != "synthetic" && !std::filesystem::exists(cfg.dataset)) {
    throw ConfigError("dataset: file not found: " + cfg.dataset);
  }
  if (cfg.dataset == "synthetic") {
    if (cfg.synthetic_classes < 2) throw ConfigError("synthetic_classes: need at least 2");
    if (cfg.synthetic_per_class == 0) throw ConfigError("synthetic_per_class: need at least 1");
    if (cfg.synthetic_dim < 4) throw ConfigError("synthetic_dim: need at least 4");
    if (!(cfg.synthetic_separation > 0.0)) {
      throw ConfigError("synthetic_separation: must be > 0");
    }
    if (cfg.partition == PartitionMode::kShardBased &&
        (cfg.synthetic_classes * cfg.shards_per_class) % cfg.classes_per_client != 0) {
      throw ConfigError("classes_per_client: classes * shards_per_class = " +
                        std::to_string(cfg.synthetic_classes * cfg.shards_per_class) +
                        " is not divisible by it");
    }
  }
  if (cfg.task_clusters == 0) throw ConfigError("task_clusters: must be >= 1");
  if (cfg.partition == PartitionMode::kAlphaBased) {
    if (cfg.clients == 0) throw ConfigError("clients: must be >= 1");
    if (cfg.samples_per_client < 5) throw ConfigError("samples_per_client: must be >= 5");
    if (!(cfg.gamma >= 0.0 && cfg.gamma <= 1.0)) throw ConfigError("gamma: must be in [0,1]");
  } else {
    if (cfg.classes_per_client == 0) throw ConfigError("classes_per_client: must be >= 1");
    if (cfg.shards_per_class == 0) throw ConfigError("shards_per_class: must be >= 1");
  }
  if (!(cfg.epsilon > 0.0)) throw ConfigError("epsilon: must be > 0");
  if (cfg.delta && !(*cfg.delta > 0.0 && *cfg.delta < 1.0)) {
    throw ConfigError("delta: must be in (0,1)");
  }
  if (!(cfg.clip > 0.0)) throw ConfigError("clip: must be > 0");
  if (!(cfg.sample_ratio > 0.0 && cfg.sample_ratio <= 1.0)) {
    throw ConfigError("sample_ratio: must be in (0,1]");
  }
  if (cfg.local_steps == 0) throw ConfigError("local_steps: must be >= 1");
  if (cfg.rounds == 0) throw ConfigError("rounds: must be >= 1");
  if (!(cfg.c_sigma > 0.0)) throw ConfigError("c_sigma: must be > 0");
  if (cfg.sigma_g && !(*cfg.sigma_g >= 0.0)) throw ConfigError("sigma_g: must be >= 0");
  if (cfg.group_size_max == 0) throw ConfigError("group_size_max: must be >= 1");
  if (cfg.rotation_period == 0) throw ConfigError("rotation_period: must be >= 1");
  if (!(cfg.eta0 > 0.0)) throw ConfigError("eta0: must be > 0");
  if (!(cfg.alpha >= 0.0 && cfg.alpha <= 1.0)) throw ConfigError("alpha: must be in [0,1]");
  if (!(cfg.beta >= 0.0 && cfg.beta <= 1.0)) throw ConfigError("beta: must be in [0,1]");
  if (cfg.eval_interval == 0) throw ConfigError("eval_interval: must be >= 1");
  if (!(cfg.user_ratio > 0.0 && cfg.user_ratio <= 1.0)) {
    throw ConfigError("user_ratio: must be in (0,1]");
  }
  if (cfg.repeats == 0) throw ConfigError("repeats: must be >= 1");
  if (!(cfg.drop_probability >= 0.0 && cfg.drop_probability < 1.0)) {
    throw ConfigError("drop_probability: must be in [0,1)");
  }
  if (cfg.out.empty()) throw ConfigError("out: path missing");
}

std::string format_metrics_row(const MetricsRow& row) {
  std::string s;
  s += std::to_string(row.round);
  s += ',';
  s += std::to_string(row.client_id);
  s += ',';
  s += std::to_string(row.group_id);
  s += ',';
  s += fmt(row.test_acc);
  s += ',';
  s += fmt(row.proxy_loss);
  s += ',';
  s += fmt(row.private_loss);
  s += ',';
  s += std::to_string(row.ledger_used);
  return s;
}

MetricsWriter::MetricsWriter(const std::string& path) : path_(path), out_(path) {
  if (!out_) throw IoError("cannot open metrics file: " + path);
  out_ << kMetricsHeader << '\n';
}

void MetricsWriter::write(const MetricsRow& row) {
  out_ << format_metrics_row(row) << '\n';
  if (!out_) throw IoError("write failed: " + path_);
}

void MetricsWriter::flush() {
  out_.flush();
  if (!out_) throw IoError("flush failed: " + path_);
}

void emit_metrics(const std::vector<MetricsRow>& rows, const std::string& path) {
  MetricsWriter writer(path);
  for (const MetricsRow& row : rows) writer.write(row);
  writer.flush();
}

RunReport run_experiment(const ExperimentConfig& cfg, RunObserver* observer,
                         MetricsWriter* writer) {
  if (cfg.method == Method::kFedAvg) return run_fedavg(cfg, observer, writer);

  Cohort cohort = prepare_cohort(cfg);
  std::vector<ClientState>& clients = cohort.clients;
  const std::size_t m = clients.size();
  const ResolvedParams& rp = cohort.params;
  const bool local_only = cfg.method == Method::kLocal || cfg.method == Method::kLocalHc;
  const StepKind step = local_only ? StepKind::kSinglePlain
                        : cfg.method == Method::kP4NoProxy ? StepKind::kSingleDp
                                                           : StepKind::kPairDp;

  Bus bus(cfg.drop_probability, RandomSource(cfg.seed, 4000));
  std::map<std::uint32_t, std::size_t> local_of;
  for (std::size_t l = 0; l < m; ++l) local_of[clients[l].id] = l;

  // Phase 1: one noisy local round, then grouping from the resulting proxies.
  if (!local_only) {
    for (ClientState& cs : clients) local_round(cs, cfg, rp, step);
  }

  std::vector<std::vector<std::size_t>> groups;
  double objective = 0.0;
  if (local_only) {
    for (std::size_t l = 0; l < m; ++l) groups.push_back({l});
  } else if (cfg.method == Method::kP4RandomGroups) {
    RandomSource rng(cfg.seed, 4001);
    const std::vector<std::size_t> order = rng.shuffled_indices(m);
    for (std::size_t at = 0; at < m; at += cfg.group_size_max) {
      std::vector<std::size_t> g(order.begin() + at,
                                 order.begin() + std::min(m, at + cfg.group_size_max));
      std::sort(g.begin(), g.end());
      groups.push_back(std::move(g));
    }
    std::sort(groups.begin(), groups.end(),
              [](const auto& a, const auto& b) { return a.front() < b.front(); });
  } else {
    std::vector<DenseVector> proxies;
    proxies.reserve(m);
    for (const ClientState& cs : clients) proxies.push_back(cs.pair.proxy_model.flatten());

    // Probe exchange over the bus: request, reply with weights, compare.
    for (std::size_t l = 0; l < m; ++l) {
      RandomSource grng(cfg.seed, 3000 + clients[l].id);
      for (std::size_t idx : grng.sample_without_replacement(m - 1, rp.probe_count)) {
        const std::size_t peer = idx < l ? idx : idx + 1;
        Message msg;
        msg.kind = MessageKind::kProbeRequest;
        msg.sender = clients[l].id;
        msg.receiver = clients[peer].id;
        msg.round = 0;
        bus.send(msg);
      }
    }
    for (std::size_t l = 0; l < m; ++l) {
      for (const Message& msg : bus.drain(clients[l].id)) {
        if (msg.kind != MessageKind::kProbeRequest) continue;
        Message reply;
        reply.kind = MessageKind::kProbeWeights;
        reply.sender = clients[l].id;
        reply.receiver = msg.sender;
        reply.round = 0;
        reply.payload.push_back(DenseMatrix(1, proxies[l].size(), proxies[l].data));
        bus.send(reply);
      }
    }
    SimilarityCache cache;
    for (std::size_t l = 0; l < m; ++l) {
      for (const Message& msg : bus.drain(clients[l].id)) {
        if (msg.kind != MessageKind::kProbeWeights) continue;
        if (msg.payload.size() != 1) {
          throw ShapeError("probe reply must carry exactly one tensor");
        }
        cache.insert(l, local_of.at(msg.sender),
                     model_dissimilarity(proxies[l], DenseVector(msg.payload[0].data)));
      }
    }

    RandomSource pair_rng(cfg.seed, 4001);
    auto pairs = form_pairs(cache, m, pair_rng);
    const CollaborationGraph graph =
        merge_until(std::move(pairs), cache, cfg.group_size_max, pair_rng);
    groups = graph.groups();
    objective = grouping_objective(graph, proxies);

    // The lowest member tells the rest of its group who is in it.
    for (const auto& g : groups) {
      if (g.size() < 2) continue;
      DenseMatrix roster(1, g.size());
      for (std::size_t k = 0; k < g.size(); ++k) {
        roster.data[k] = static_cast<double>(clients[g[k]].id);
      }
      for (std::size_t k = 1; k < g.size(); ++k) {
        Message msg;
        msg.kind = MessageKind::kGroupUpdate;
        msg.sender = clients[g.front()].id;
        msg.receiver = clients[g[k]].id;
        msg.round = 0;
        msg.payload.push_back(roster);
        bus.send(msg);
      }
    }
  }

  std::vector<std::size_t> label_of(m, 0);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (std::size_t l : groups[g]) label_of[l] = g;
  }

  RunReport report;
  for (std::uint32_t t = 1; t <= cfg.rounds; ++t) {
    if (local_only) {
      for (ClientState& cs : clients) local_round(cs, cfg, rp, step);
    } else {
      for (const auto& g : groups) {
        std::vector<std::uint32_t> member_ids;
        member_ids.reserve(g.size());
        for (std::size_t l : g) member_ids.push_back(clients[l].id);

        auto update_of = [&](std::uint32_t gid) -> std::optional<DenseVector> {
          ClientState& cs = clients[local_of.at(gid)];
          if (cs.ledger.exhausted()) return std::nullopt;
          ledger_charge(cs.ledger);
          local_round(cs, cfg, rp, step);
          return cs.pair.proxy_model.flatten();
        };
        auto adopt = [&](std::uint32_t gid, const DenseVector& mean) {
          ClientState& cs = clients[local_of.at(gid)];
          cs.pair.proxy_model = unflatten(mean, cohort.num_classes, cohort.feature_dim);
        };
        const RoundOutcome outcome =
            run_round(member_ids, t, cfg.rotation_period, bus, update_of, adopt);

        if (observer && observer->after_group_round) {
          GroupRoundSnapshot snap;
          snap.round = t;
          snap.aggregator = outcome.aggregator;
          snap.members = outcome.participants;
          snap.messages = outcome.messages;
          for (std::uint32_t id : outcome.participants) {
            snap.proxies.push_back(clients[local_of.at(id)].pair.proxy_model.flatten());
          }
          observer->after_group_round(snap);
        }
      }
    }
    if (t % cfg.eval_interval == 0 || t == cfg.rounds) {
      eval_block(t, clients, label_of, cfg.method, report.metrics, writer);
    }
  }

  for (std::size_t l = 0; l < m; ++l) {
    report.client_ids.push_back(clients[l].id);
    report.group_of.push_back(label_of[l]);
  }
  report.params = rp;
  report.bus_messages = bus.sent_count();
  report.bus_dropped = bus.dropped_count();
  report.grouping_objective = objective;
  report.mean_final_accuracy = final_mean_accuracy(report.metrics, m);
  return report;
}

RunReport run_fedavg(const ExperimentConfig& cfg, RunObserver* observer,
                     MetricsWriter* writer) {
  Cohort cohort = prepare_cohort(cfg);
  std::vector<ClientState>& clients = cohort.clients;
  const std::size_t m = clients.size();
  const ResolvedParams& rp = cohort.params;

  LinearClassifier global(cohort.num_classes, cohort.feature_dim);
  RandomSource pick(cfg.seed, 4002);
  std::size_t per_round = static_cast<std::size_t>(
      std::ceil(cfg.user_ratio * static_cast<double>(m) - 1e-9));
  per_round = std::clamp<std::size_t>(per_round, 1, m);

  RunReport report;
  const std::vector<std::size_t> label_of(m, 0);
  for (std::uint32_t t = 1; t <= cfg.rounds; ++t) {
    std::vector<std::size_t> chosen = pick.sample_without_replacement(m, per_round);
    std::sort(chosen.begin(), chosen.end());

    std::vector<DenseVector> updates;
    for (std::size_t l : chosen) {
      ClientState& cs = clients[l];
      if (cs.ledger.exhausted()) continue;
      ledger_charge(cs.ledger);
      LinearClassifier model = global;
      for (std::size_t k = 0; k < cfg.local_steps; ++k) {
        const Minibatch batch =
            sample_minibatch(cs.train_x, cs.train_y, cfg.sample_ratio, cs.batch_rng);
        const LossSpec ce;
        cs.last_proxy_loss = batch_loss(model, batch, ce);
        std::vector<DenseVector> grads = per_example_grads(model, batch, ce);
        for (DenseVector& g : grads) g = clip_gradient(g, cfg.clip);
        const DenseVector update = privatize(grads, cfg.clip, rp.sigma_g, cfg.sample_ratio,
                                             cs.train_x.size(), cs.noise_rng);
        model.add_scaled(update, -rp.eta_l);
      }
      updates.push_back(model.flatten());
    }
    if (!updates.empty()) {
      global = unflatten(aggregate_proxy(updates), cohort.num_classes, cohort.feature_dim);
    }
    if (observer && observer->after_server_round) {
      observer->after_server_round(t, global.flatten());
    }

    if (t % cfg.eval_interval == 0 || t == cfg.rounds) {
      for (std::size_t l = 0; l < m; ++l) {
        const ClientState& cs = clients[l];
        MetricsRow row;
        row.round = t;
        row.client_id = cs.id;
        row.group_id = 0;
        row.test_acc = evaluate(global, cs.test_x, cs.test_y);
        row.proxy_loss = cs.last_proxy_loss;
        row.private_loss = cs.last_private_loss;
        row.ledger_used = cs.ledger.rounds_used;
        report.metrics.push_back(row);
        if (writer) writer->write(row);
      }
      if (writer) writer->flush();
    }
  }

  for (std::size_t l = 0; l < m; ++l) {
    report.client_ids.push_back(clients[l].id);
    report.group_of.push_back(0);
  }
  report.params = rp;
  report.mean_final_accuracy = final_mean_accuracy(report.metrics, m);
  return report;
}

std::vector<GridCell> grid_search(const ExperimentConfig& base) {
  validate(base);
  static constexpr double kGrid[5] = {0.1, 0.31622776601683794, 1.0,
                                      3.1622776601683795, 10.0};
  std::vector<GridCell> cells;
  for (double eta_l : kGrid) {
    for (double clip : kGrid) {
      ExperimentConfig cfg = base;
      cfg.reserved_as_training = true;
      cfg.eta0 = eta_l * cfg.sample_ratio * static_cast<double>(cfg.local_steps);
      cfg.clip = clip;
      const RunReport report = run_experiment(cfg);
      cells.push_back({eta_l, cfg.eta0, clip, report.mean_final_accuracy});
    }
  }
  return cells;
}

}  // namespace p4net
