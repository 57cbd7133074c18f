// Command-line front end: generate-topology, estimate-pt, run, check, report.

#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "dynchain/harness.hpp"

using namespace dynchain;

namespace {

struct TopoFlags {
  std::int32_t n = 20;
  std::int32_t mx = 5;
  Round horizon = 300;
  std::string mode = "random";
  double sources_percent = 0;
  bool phased = false;
  std::uint64_t seed = 0;
  Round window = 50;

  void add(CLI::App* app) {
    app->add_option("--n", n, "number of miners")->check(CLI::PositiveNumber);
    app->add_option("--mx", mx, "maximum out-degree per round");
    app->add_option("--horizon", horizon, "rounds");
    app->add_option("--mode", mode, "complete or random")->check(CLI::IsMember({"complete", "random"}));
    app->add_option("--sources-percent", sources_percent, "restrict to a closed source pool of this share of miners");
    app->add_flag("--phased", phased, "complete 0-99, 25% source 100-199, complete 200-299");
    app->add_option("--seed", seed, "topology seed")->required();
    app->add_option("--window", window, "recurrence window declared for the pools");
  }

  TopologyConfig config() const {
    const PhaseMode m = mode == "complete" ? PhaseMode::complete : PhaseMode::random;
    TopologyConfig cfg;
    if (phased) {
      cfg = phased_config(n, seed, pool_size(n, 25), m, mx);
    } else {
      cfg.n = n;
      cfg.mx = m == PhaseMode::complete ? n - 1 : mx;
      cfg.seed = seed;
      TopologyPhase ph{0, horizon, m, std::nullopt};
      if (sources_percent > 0) ph.sources = first_miners(pool_size(n, sources_percent));
      cfg.phases = {ph};
    }
    cfg.window = window;
    cfg.validate();
    return cfg;
  }
};

nlohmann::json descriptor_json(const PoolDescriptor& d) {
  nlohmann::json phases = nlohmann::json::array();
  for (const auto& ph : d.phases) {
    phases.push_back({{"begin", ph.begin}, {"end", ph.end}, {"window", ph.window}, {"pools", ph.pools}, {"edges", ph.edges}});
  }
  return {{"miners", d.miners}, {"phases", phases}};
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Blockchain maintenance over dynamic networks: simulator and checks"};
  app.require_subcommand(1);

  TopoFlags gen_flags;
  std::string schedule_out, descriptor_out;
  auto* gen = app.add_subcommand("generate-topology", "write a seeded link schedule and its pool descriptor");
  gen_flags.add(gen);
  gen->add_option("--out", schedule_out, "schedule CSV")->required();
  gen->add_option("--descriptor", descriptor_out, "pool descriptor JSON");

  TopoFlags est_flags;
  std::int32_t est_runs = 20;
  Round est_length = 1000, est_stride = 10;
  auto* est = app.add_subcommand("estimate-pt", "estimate source pool propagation time by flooding");
  est_flags.add(est);
  est->add_option("--runs", est_runs, "preliminary runs");
  est->add_option("--length", est_length, "rounds per preliminary run");
  est->add_option("--stride", est_stride, "rounds between flood starts");

  std::string spec_path, rows_out, trace_dir;
  std::optional<std::uint64_t> seed_override;
  std::int32_t jobs = 1;
  auto* run_cmd = app.add_subcommand("run", "run an experiment spec");
  run_cmd->add_option("--spec", spec_path, "experiment spec JSON")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--out", rows_out, "rows file (.csv or .json)")->required();
  run_cmd->add_option("--traces", trace_dir, "directory for per-repetition trace files");
  run_cmd->add_option("--seed", seed_override, "override the spec's master seed");
  run_cmd->add_option("--jobs", jobs, "repetitions run in parallel")->check(CLI::PositiveNumber);

  std::string trace_path;
  std::optional<Round> slack;
  auto* check = app.add_subcommand("check", "run the oracle checks over a stored trace");
  check->add_option("--trace", trace_path, "trace JSON")->required()->check(CLI::ExistingFile);
  check->add_option("--slack", slack, "liveness slack in rounds");

  std::vector<std::string> report_in;
  std::string report_out;
  auto* report = app.add_subcommand("report", "average rows over seeds per experiment and key");
  report->add_option("--in", report_in, "rows CSV files")->required()->check(CLI::ExistingFile);
  report->add_option("--out", report_out, "aggregated CSV (stdout if omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const Topology topo = random_neighbor_schedule(gen_flags.config());
      auto out = open_out(schedule_out);
      write_schedule_csv(out, topo.schedule);
      if (!descriptor_out.empty()) open_out(descriptor_out) << descriptor_json(topo.descriptor).dump(2) << '\n';
      fmt::print("{} rounds, {} links\n", topo.schedule.horizon(), topo.schedule.link_count());
    } else if (*est) {
      const PtEstimate e = estimate_pt(est_flags.config(), est_runs, est_length, est_stride);
      fmt::print("pt {}\nper-run {}\n", e.pt, fmt::join(e.per_run, " "));
    } else if (*run_cmd) {
      ExperimentSpec spec = load_spec(spec_path);
      if (seed_override) spec.seed = *seed_override;
      const auto results = run(spec, jobs);
      emit(results, rows_out, trace_dir.empty() ? std::nullopt : std::optional<std::filesystem::path>(trace_dir));
      bool failed = false;
      for (const auto& res : results) {
        for (const auto& c : res.checks) {
          failed = failed || c.verdict == CheckVerdict::fail;
          fmt::print("seed {} pt {} {} {}: {}\n", res.seed, res.pt, c.check, to_string(c.verdict), c.detail);
        }
      }
      return failed ? 1 : 0;
    } else if (*check) {
      std::ifstream in(trace_path);
      const Trace trace = read_trace_json(in);
      std::vector<CheckReport> reports = run_checks(trace);
      if (slack) {
        for (auto& r : reports) {
          if (r.check == "decision_liveness") r = check_decision_liveness(trace, *slack);
        }
      }
      std::cout << report_json(reports) << '\n';
      for (const auto& r : reports) {
        if (r.verdict == CheckVerdict::fail) return 1;
      }
    } else if (*report) {
      std::vector<MetricsRow> rows;
      for (const auto& path : report_in) {
        std::ifstream in(path);
        auto part = read_rows_csv(in);
        rows.insert(rows.end(), part.begin(), part.end());
      }
      const auto agg = aggregate_rows(rows);
      if (report_out.empty()) {
        write_rows_csv(std::cout, agg);
      } else {
        auto out = open_out(report_out);
        write_rows_csv(out, agg);
      }
    }
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  }
  return 0;
}
