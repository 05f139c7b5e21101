#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "p4net/errors.hpp"
#include "p4net/runner.hpp"

using p4net::ExperimentConfig;
using p4net::Method;
using p4net::MetricsRow;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.dataset = "synthetic";
  cfg.synthetic_classes = 4;
  cfg.synthetic_per_class = 40;
  cfg.synthetic_dim = 6;
  cfg.synthetic_separation = 3.0;
  cfg.task_clusters = 2;
  cfg.partition = p4net::PartitionMode::kAlphaBased;
  cfg.clients = 10;
  cfg.samples_per_client = 16;
  cfg.gamma = 0.4;
  cfg.use_features = false;
  cfg.epsilon = 15.0;
  cfg.clip = 1.0;
  cfg.sample_ratio = 0.5;
  cfg.local_steps = 1;
  cfg.rounds = 4;
  cfg.group_size_max = 4;
  cfg.rotation_period = 2;
  cfg.eta0 = 0.5;
  cfg.eval_interval = 2;
  cfg.method = Method::kP4;
  cfg.seed = 5;
  return cfg;
}

std::string render(const std::vector<MetricsRow>& rows) {
  std::string all;
  for (const auto& row : rows) all += p4net::format_metrics_row(row) + "\n";
  return all;
}

}  // namespace

TEST_CASE("method names parse both ways") {
  for (const char* name : {"p4", "local", "local_hc", "fedavg", "p4_random_groups",
                           "p4_no_proxy", "p4_raw_images"}) {
    CHECK(p4net::method_name(p4net::parse_method(name)) == name);
  }
  CHECK_THROWS_AS(p4net::parse_method("gossip"), p4net::ConfigError);
}

TEST_CASE("config files support comments, blanks and overrides") {
  const auto dir = testutil::fresh_temp_dir("cfg");
  const auto path = dir / "exp.cfg";
  std::ofstream out(path);
  out << "# experiment\n\nmethod = local\nclients = 12\n"
      << "epsilon = 9.5   # inline comment\nuse_features = false\n";
  out.close();
  const ExperimentConfig cfg = p4net::parse_config(path.string());
  CHECK(cfg.method == Method::kLocal);
  CHECK(cfg.clients == 12);
  CHECK(cfg.epsilon == doctest::Approx(9.5));
  CHECK(!cfg.use_features);
  CHECK(cfg.rounds == 100);
}

TEST_CASE("config errors carry the file location") {
  const auto dir = testutil::fresh_temp_dir("cfgbad");

  const auto unknown = dir / "unknown.cfg";
  std::ofstream(unknown.string()) << "rounds = 5\nno_such_key = 1\n";
  CHECK_THROWS_WITH_AS(p4net::parse_config(unknown.string()), doctest::Contains(":2"),
                       p4net::ConfigError);

  const auto bad_value = dir / "bad.cfg";
  std::ofstream(bad_value.string()) << "epsilon = fast\n";
  CHECK_THROWS_WITH_AS(p4net::parse_config(bad_value.string()),
                       doctest::Contains("epsilon"), p4net::ConfigError);

  const auto no_eq = dir / "noeq.cfg";
  std::ofstream(no_eq.string()) << "rounds\n";
  CHECK_THROWS_AS(p4net::parse_config(no_eq.string()), p4net::ConfigError);

  CHECK_THROWS_AS(p4net::parse_config((dir / "absent.cfg").string()), p4net::IoError);
}

TEST_CASE("config validation names the offending field") {
  ExperimentConfig cfg = tiny_config();
  cfg.epsilon = -1.0;
  CHECK_THROWS_WITH_AS(p4net::validate(cfg), doctest::Contains("epsilon"),
                       p4net::ConfigError);
  cfg = tiny_config();
  cfg.sample_ratio = 0.0;
  CHECK_THROWS_AS(p4net::validate(cfg), p4net::ConfigError);
  cfg = tiny_config();
  cfg.group_size_max = 0;
  CHECK_THROWS_AS(p4net::validate(cfg), p4net::ConfigError);
  cfg = tiny_config();
  cfg.samples_per_client = 3;
  CHECK_THROWS_AS(p4net::validate(cfg), p4net::ConfigError);
  cfg = tiny_config();
  cfg.dataset = "missing_file.bin";
  CHECK_THROWS_AS(p4net::validate(cfg), p4net::ConfigError);
}

TEST_CASE("resolved parameters follow the documented defaults") {
  ExperimentConfig cfg = tiny_config();
  cfg.sample_ratio = 0.25;
  cfg.local_steps = 2;
  cfg.eta0 = 1.0;
  const auto params = p4net::resolve_params(cfg, 300, 20);
  CHECK(params.eta_l == doctest::Approx(2.0));
  CHECK(params.delta == doctest::Approx(1.0 / 300.0));
  CHECK(params.probe_count == 19);

  p4net::DpConfig dp;
  dp.epsilon = cfg.epsilon;
  dp.delta = 1.0 / 300.0;
  dp.clip = cfg.clip;
  dp.sample_ratio = cfg.sample_ratio;
  dp.local_steps = cfg.local_steps;
  dp.rounds = cfg.rounds;
  dp.c_sigma = cfg.c_sigma;
  CHECK(params.sigma_g == doctest::Approx(p4net::calibrate_sigma(dp)));

  cfg.delta = 1e-4;
  cfg.sigma_g = 2.25;
  cfg.probe_count = 10;
  const auto forced = p4net::resolve_params(cfg, 300, 50);
  CHECK(forced.delta == doctest::Approx(1e-4));
  CHECK(forced.sigma_g == doctest::Approx(2.25));
  CHECK(forced.probe_count == 10);

  cfg.probe_count.reset();
  CHECK(p4net::resolve_params(cfg, 300, 50).probe_count == 35);

  cfg.probe_count = 60;
  CHECK_THROWS_AS(p4net::resolve_params(cfg, 300, 50), p4net::ConfigError);
}

TEST_CASE("metrics rows format with stable precision") {
  MetricsRow row;
  row.round = 3;
  row.client_id = 1;
  row.group_id = 0;
  row.test_acc = 0.5;
  row.proxy_loss = 1.25;
  row.private_loss = 2.5;
  row.ledger_used = 3;
  CHECK(p4net::format_metrics_row(row) == "3,1,0,0.5,1.25,2.5,3");
  row.test_acc = 1.0 / 3.0;
  CHECK(p4net::format_metrics_row(row) == "3,1,0,0.3333333333,1.25,2.5,3");
}

TEST_CASE("metrics writer emits the header then rows") {
  const auto dir = testutil::fresh_temp_dir("metrics");
  const auto path = (dir / "m.csv").string();
  {
    p4net::MetricsWriter writer(path);
    writer.write(MetricsRow{});
    writer.flush();
  }
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == p4net::kMetricsHeader);
  std::getline(in, line);
  CHECK(line == "0,0,0,0,0,0,0");
}

TEST_CASE("experiments are deterministic for a fixed config and seed") {
  const ExperimentConfig cfg = tiny_config();
  const auto a = p4net::run_experiment(cfg);
  const auto b = p4net::run_experiment(cfg);
  CHECK(render(a.metrics) == render(b.metrics));
  CHECK(a.bus_messages == b.bus_messages);
  CHECK(a.grouping_objective == doctest::Approx(b.grouping_objective));

  ExperimentConfig other = cfg;
  other.seed = cfg.seed + 1;
  const auto c = p4net::run_experiment(other);
  CHECK(render(a.metrics) != render(c.metrics));
}

TEST_CASE("local training never touches the bus") {
  ExperimentConfig cfg = tiny_config();
  cfg.method = Method::kLocal;
  const auto report = p4net::run_experiment(cfg);
  CHECK(report.bus_messages == 0);
  std::set<std::size_t> groups(report.group_of.begin(), report.group_of.end());
  CHECK(groups.size() == report.client_ids.size());
}

TEST_CASE("the evaluation-reserved tail is excluded from training") {
  const ExperimentConfig cfg = tiny_config();
  const auto report = p4net::run_experiment(cfg);
  REQUIRE(report.client_ids.size() == 8);
  for (std::uint32_t id : report.client_ids) CHECK(id < 8);
  for (const auto& row : report.metrics) CHECK(row.client_id < 8);
}

TEST_CASE("collaborative runs respect the group size bound and message budget") {
  ExperimentConfig cfg = tiny_config();
  std::size_t checked = 0;
  p4net::RunObserver observer;
  observer.after_group_round = [&](const p4net::GroupRoundSnapshot& snap) {
    if (snap.members.size() < 2) {
      CHECK(snap.messages == 0);
      return;
    }
    CHECK(snap.members.size() <= cfg.group_size_max);
    CHECK(snap.messages == 2 * (snap.members.size() - 1));
    for (const auto& proxy : snap.proxies) {
      CHECK(proxy.data == snap.proxies.front().data);
    }
    ++checked;
  };
  const auto report = p4net::run_experiment(cfg, &observer);
  CHECK(checked > 0);
  CHECK(report.bus_messages > 0);
}

TEST_CASE("random groups reshuffle but keep the size bound") {
  ExperimentConfig cfg = tiny_config();
  cfg.method = Method::kP4RandomGroups;
  const auto report = p4net::run_experiment(cfg);
  std::vector<std::size_t> sizes;
  std::size_t max_label = 0;
  for (std::size_t g : report.group_of) max_label = std::max(max_label, g);
  sizes.assign(max_label + 1, 0);
  for (std::size_t g : report.group_of) ++sizes[g];
  for (std::size_t s : sizes) {
    CHECK(s >= 1);
    CHECK(s <= cfg.group_size_max);
  }
}

TEST_CASE("every metrics row lands on an evaluation round") {
  const ExperimentConfig cfg = tiny_config();
  const auto report = p4net::run_experiment(cfg);
  REQUIRE(!report.metrics.empty());
  for (const auto& row : report.metrics) {
    const bool at_interval = row.round % cfg.eval_interval == 0;
    const bool at_end = row.round == cfg.rounds;
    CHECK((at_interval || at_end));
    CHECK(row.round >= 1);
    CHECK(row.ledger_used == row.round);
  }
}

TEST_CASE("fedavg with zero noise and full participation is centralized sgd") {
  ExperimentConfig cfg;
  cfg.dataset = "synthetic";
  cfg.synthetic_classes = 2;
  cfg.synthetic_per_class = 40;
  cfg.synthetic_dim = 4;
  cfg.synthetic_separation = 3.0;
  cfg.task_clusters = 1;
  cfg.partition = p4net::PartitionMode::kAlphaBased;
  cfg.clients = 3;
  cfg.samples_per_client = 20;
  cfg.gamma = 0.5;
  cfg.use_features = false;
  cfg.epsilon = 15.0;
  cfg.clip = 1.0;
  cfg.sample_ratio = 1.0;
  cfg.local_steps = 1;
  cfg.rounds = 5;
  cfg.sigma_g = 0.0;
  cfg.user_ratio = 1.0;
  cfg.eta0 = 0.5;
  cfg.eval_interval = 5;
  cfg.method = Method::kFedAvg;
  cfg.seed = 3;

  std::vector<p4net::DenseVector> trajectory;
  p4net::RunObserver observer;
  observer.after_server_round = [&](std::uint32_t, const p4net::DenseVector& params) {
    trajectory.push_back(params);
  };
  const auto report = p4net::run_experiment(cfg, &observer);
  REQUIRE(trajectory.size() == 5);

  const auto ds = p4net::generate_synthetic(2, 40, 4, 3.0, 3);
  const auto shards = p4net::partition_alpha_based(ds, 0.5, 3, 20, 3);
  std::vector<std::vector<p4net::DenseVector>> xs(3);
  std::vector<std::vector<std::size_t>> ys(3);
  for (std::size_t i = 0; i < 3; ++i) {
    for (const auto& ex : shards[i].train.items) {
      xs[i].push_back(p4net::DenseVector(ex.image.pixels));
      ys[i].push_back(ex.label);
    }
  }
  const double eta_l = report.params.eta_l;
  p4net::LinearClassifier central(2, 16);
  for (std::size_t t = 0; t < 5; ++t) {
    p4net::DenseVector pooled(central.param_count());
    for (std::size_t i = 0; i < 3; ++i) {
      p4net::Minibatch batch;
      batch.indices.resize(xs[i].size());
      batch.features = xs[i];
      batch.labels = ys[i];
      const auto grads = p4net::per_example_grads(central, batch, p4net::LossSpec{});
      p4net::DenseVector client_sum(central.param_count());
      for (const auto& g : grads) {
        const auto clipped = p4net::clip_gradient(g, cfg.clip);
        for (std::size_t d = 0; d < client_sum.size(); ++d) client_sum[d] += clipped[d];
      }
      const double scale = 1.0 / (cfg.sample_ratio * double(xs[i].size()));
      for (std::size_t d = 0; d < pooled.size(); ++d) {
        pooled[d] += client_sum[d] * scale / 3.0;
      }
    }
    central.add_scaled(pooled, -eta_l);
    const p4net::DenseVector flat = central.flatten();
    REQUIRE(flat.size() == trajectory[t].size());
    for (std::size_t d = 0; d < flat.size(); ++d) {
      CHECK(std::abs(flat[d] - trajectory[t][d]) < 1e-10);
    }
  }
}

TEST_CASE("grid search sweeps the full 5x5 grid") {
  ExperimentConfig cfg = tiny_config();
  cfg.rounds = 2;
  cfg.eval_interval = 2;
  const auto cells = p4net::grid_search(cfg);
  REQUIRE(cells.size() == 25);
  std::set<std::pair<double, double>> seen;
  for (const auto& cell : cells) {
    seen.insert({cell.eta_l, cell.clip});
    CHECK(cell.eta_l >= 0.1);
    CHECK(cell.eta_l <= 10.0);
    CHECK(cell.mean_accuracy >= 0.0);
    CHECK(cell.mean_accuracy <= 1.0);
  }
  CHECK(seen.size() == 25);
}
