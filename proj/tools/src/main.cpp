#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "p4net/runner.hpp"

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

int cmd_run(const std::string& config_path, const std::string& method_override,
            std::uint64_t seed_override, bool seed_set, std::size_t repeats_override,
            bool repeats_set, const std::string& out_override) {
  p4net::ExperimentConfig cfg = p4net::parse_config(config_path);
  if (!method_override.empty()) cfg.method = p4net::parse_method(method_override);
  if (seed_set) cfg.seed = seed_override;
  if (repeats_set) cfg.repeats = repeats_override;
  if (!out_override.empty()) cfg.out = out_override;
  p4net::validate(cfg);

  fs::create_directories(cfg.out);
  double acc_sum = 0.0;
  for (std::size_t r = 0; r < cfg.repeats; ++r) {
    p4net::ExperimentConfig run_cfg = cfg;
    run_cfg.seed = cfg.seed + r;
    const std::string name = "metrics_" + p4net::method_name(cfg.method) + "_seed" +
                             std::to_string(run_cfg.seed) + ".csv";
    const std::string path = (fs::path(cfg.out) / name).string();
    p4net::MetricsWriter writer(path);
    const p4net::RunReport report = p4net::run_experiment(run_cfg, nullptr, &writer);
    acc_sum += report.mean_final_accuracy;

    std::size_t group_count = 0;
    for (std::size_t g : report.group_of) group_count = std::max(group_count, g + 1);
    std::cout << "method=" << p4net::method_name(cfg.method) << " seed=" << run_cfg.seed
              << " clients=" << report.client_ids.size() << " groups=" << group_count
              << " eta_l=" << fmt(report.params.eta_l)
              << " delta=" << fmt(report.params.delta)
              << " sigma_g=" << fmt(report.params.sigma_g)
              << " messages=" << report.bus_messages
              << " final_acc=" << fmt(report.mean_final_accuracy) << " -> " << path
              << "\n";
  }
  if (cfg.repeats > 1) {
    std::cout << "mean over " << cfg.repeats
              << " repeats: final_acc=" << fmt(acc_sum / static_cast<double>(cfg.repeats))
              << "\n";
  }
  return 0;
}

int cmd_gridsearch(const std::string& config_path) {
  const p4net::ExperimentConfig cfg = p4net::parse_config(config_path);
  const std::vector<p4net::GridCell> cells = p4net::grid_search(cfg);
  std::size_t best = 0;
  for (std::size_t i = 1; i < cells.size(); ++i) {
    if (cells[i].mean_accuracy > cells[best].mean_accuracy) best = i;
  }
  std::cout << "eta_l,clip,mean_acc\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    std::cout << fmt(cells[i].eta_l) << ',' << fmt(cells[i].clip) << ','
              << fmt(cells[i].mean_accuracy) << (i == best ? "  <- best" : "") << "\n";
  }
  std::cout << "best: eta_l=" << fmt(cells[best].eta_l) << " (eta0=" << fmt(cells[best].eta0)
            << ") clip=" << fmt(cells[best].clip)
            << " mean_acc=" << fmt(cells[best].mean_accuracy) << "\n";
  return 0;
}

struct Curve {
  std::string label;
  std::vector<double> rounds;
  std::vector<double> acc;  // mean over clients per round
};

Curve read_curve(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw p4net::IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("round,client_id,group_id,test_acc", 0) != 0) {
    throw p4net::ParseError(path.string() + ": not a metrics file");
  }
  std::map<long, std::pair<double, std::size_t>> by_round;  // round -> (sum, n)
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t at = 0;
    while (true) {
      const std::size_t comma = line.find(',', at);
      cols.push_back(line.substr(at, comma - at));
      if (comma == std::string::npos) break;
      at = comma + 1;
    }
    if (cols.size() != 7) {
      throw p4net::ParseError(path.string() + ":" + std::to_string(lineno) +
                              ": expected 7 columns");
    }
    const long round = std::stol(cols[0]);
    const double acc = std::stod(cols[3]);
    auto& cell = by_round[round];
    cell.first += acc;
    ++cell.second;
  }
  Curve curve;
  curve.label = path.stem().string();
  if (curve.label.rfind("metrics_", 0) == 0) curve.label = curve.label.substr(8);
  for (const auto& [round, cell] : by_round) {
    curve.rounds.push_back(static_cast<double>(round));
    curve.acc.push_back(cell.first / static_cast<double>(cell.second));
  }
  return curve;
}

int cmd_plot(const std::string& in_dir, const std::string& out_file) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(in_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) {
    std::cerr << "error: no .csv files in " << in_dir << "\n";
    return 1;
  }
  std::vector<Curve> curves;
  for (const auto& f : files) curves.push_back(read_curve(f));

  double max_round = 1.0;
  for (const Curve& c : curves) {
    for (double r : c.rounds) max_round = std::max(max_round, r);
  }

  const double width = 720, height = 480;
  const double left = 60, right = 20, top = 20, bottom = 45;
  const double pw = width - left - right, ph = height - top - bottom;
  auto sx = [&](double round) { return left + pw * round / max_round; };
  auto sy = [&](double acc) { return top + ph * (1.0 - acc); };

  static const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                   "#ff7f0e", "#8c564b", "#17becf", "#e377c2"};
  std::ofstream out(out_file);
  if (!out) throw p4net::IoError("cannot open " + out_file);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
  out << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";

  out << "<g font-family=\"sans-serif\" font-size=\"12\" fill=\"#333\">\n";
  for (int i = 0; i <= 5; ++i) {
    const double acc = i / 5.0;
    const double y = sy(acc);
    out << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << width - right
        << "\" y2=\"" << y << "\" stroke=\"#ddd\"/>\n";
    out << "<text x=\"" << left - 8 << "\" y=\"" << y + 4
        << "\" text-anchor=\"end\">" << fmt(acc) << "</text>\n";
  }
  for (int i = 0; i <= 5; ++i) {
    const double round = max_round * i / 5.0;
    const double x = sx(round);
    out << "<line x1=\"" << x << "\" y1=\"" << top << "\" x2=\"" << x << "\" y2=\""
        << height - bottom << "\" stroke=\"#eee\"/>\n";
    out << "<text x=\"" << x << "\" y=\"" << height - bottom + 18
        << "\" text-anchor=\"middle\">" << fmt(round) << "</text>\n";
  }
  out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
      << height - bottom << "\" stroke=\"#333\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << height - bottom << "\" x2=\""
      << width - right << "\" y2=\"" << height - bottom << "\" stroke=\"#333\"/>\n";
  out << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 8
      << "\" text-anchor=\"middle\">round</text>\n";
  out << "<text x=\"16\" y=\"" << top + ph / 2
      << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << top + ph / 2
      << ")\">test accuracy</text>\n";
  out << "</g>\n";

  for (std::size_t c = 0; c < curves.size(); ++c) {
    const char* color = kPalette[c % (sizeof kPalette / sizeof *kPalette)];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < curves[c].rounds.size(); ++i) {
      out << sx(curves[c].rounds[i]) << ',' << sy(curves[c].acc[i]) << ' ';
    }
    out << "\"/>\n";
    const double ly = top + 16 + 18 * static_cast<double>(c);
    out << "<line x1=\"" << left + 10 << "\" y1=\"" << ly - 4 << "\" x2=\"" << left + 34
        << "\" y2=\"" << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << left + 40 << "\" y=\"" << ly
        << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#333\">"
        << curves[c].label << "</text>\n";
  }
  out << "</svg>\n";
  if (!out) throw p4net::IoError("write failed: " + out_file);
  std::cout << "wrote " << out_file << " (" << curves.size() << " curves)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deterministic peer-to-peer private personalized learning simulator"};
  app.require_subcommand(1);

  std::string config_path, method_str, out_dir;
  std::uint64_t seed = 0;
  std::size_t repeats = 0;

  CLI::App* run = app.add_subcommand("run", "run one experiment config");
  run->add_option("--config", config_path, "experiment config file")->required();
  run->add_option("--method", method_str, "override the configured method");
  CLI::Option* seed_opt = run->add_option("--seed", seed, "override the base seed");
  CLI::Option* repeats_opt =
      run->add_option("--repeats", repeats, "run this many seeds, base seed upward");
  run->add_option("--out", out_dir, "override the output directory");

  CLI::App* grid = app.add_subcommand("gridsearch",
                                      "sweep lr and clip on the reserved clients");
  grid->add_option("--config", config_path, "experiment config file")->required();

  std::string plot_in, plot_out;
  CLI::App* plot = app.add_subcommand("plot", "render accuracy curves from metrics CSVs");
  plot->add_option("--in", plot_in, "directory of metrics CSV files")->required();
  plot->add_option("--out", plot_out, "output SVG path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      return cmd_run(config_path, method_str, seed, seed_opt->count() > 0, repeats,
                     repeats_opt->count() > 0, out_dir);
    }
    if (grid->parsed()) return cmd_gridsearch(config_path);
    if (plot->parsed()) return cmd_plot(plot_in, plot_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
