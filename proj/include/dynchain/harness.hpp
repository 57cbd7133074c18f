#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dynchain/oracle.hpp"
#include "dynchain/protocols.hpp"
#include "dynchain/topology.hpp"
#include "dynchain/trace.hpp"

namespace dynchain {

class SpecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class PtMode {
  fixed,     // use ProtocolSpec::pt as given
  exact,     // propagation time of the run's own schedule
  estimate,  // flood preliminary schedules, as an operator would
};

struct ProtocolSpec {
  ProtocolKind kind = ProtocolKind::base;
  MessagePolicy policy = MessagePolicy::full_tree;
  double mining_rate = 0.025;
  PtMode pt_mode = PtMode::exact;
  Round pt = 0;
  bool stamped_reject = false;
  bool nonsource_mines = true;
  bool accept_guard = true;
  bool label_gossip = false;
  Round close_round = 0;
  /// Defaults to the final topology phase's sources, or every miner.
  std::optional<std::vector<MinerId>> source_miners;
};

enum class MetricsMode { final_only, per_round };

struct ExperimentSpec {
  std::string name = "experiment";
  TopologyConfig topology;
  ProtocolSpec protocol;
  /// Mining rounds. Either given, or a multiple of PT.
  Round horizon = 0;
  std::optional<double> horizon_pt_multiple;
  /// Quiet rounds after mining stops; defaults to 4·PT for decision rules
  /// and 0 for plain mining.
  std::optional<Round> tail;
  std::int32_t repetitions = 1;
  std::uint64_t seed = 0;
  MetricsMode metrics = MetricsMode::final_only;
  Round max_delay = 0;
  std::int32_t estimate_runs = 20;
  Round estimate_length = 1000;
  Round estimate_stride = 10;

  /// Throws SpecError.
  void validate() const;
};

ExperimentSpec parse_spec(std::istream& in);
ExperimentSpec load_spec(const std::filesystem::path& path);

/// Everything a single simulation needs, already resolved.
struct RunPlan {
  LinkSchedule schedule;  // covers mining rounds plus the tail
  PoolDescriptor descriptor;
  std::vector<MinerConfig> miners;
  TraceMeta meta;
  DelayConfig delay;
};

/// Resolves PT, horizon and seeds for repetition `rep`.
RunPlan plan_run(const ExperimentSpec& spec, std::int32_t rep);

/// Runs the miners over the schedule and records the trace.
Trace simulate(const RunPlan& plan);

/// Accepted (minus genesis) over minted, both as of round r; 0 when nothing
/// was minted.
double acceptance_rate(const Oracle& oracle, Round r);
double acceptance_rate(const Trace& trace, Round r);

/// For each non-genesis block confirmed by every miner: round of the last
/// confirmation minus the mint round.
std::map<BlockId, Round> confirmation_time(const Trace& trace);

struct MetricsRow {
  std::string experiment;
  std::uint64_t seed = 0;
  std::string key;
  // Counts are whole numbers except in rows averaged by aggregate_rows.
  double mints = 0;
  double accepted = 0;
  double acceptance_rate = 0.0;
  double confirmed_all = 0;
  std::optional<double> mean_conf_time;
  std::optional<double> max_conf_time;
  double max_msg_blocks = 0;
};

/// One row per mining round (key = round) or a single row at the final
/// round (key = "final").
std::vector<MetricsRow> metrics(const Trace& trace, const std::string& experiment, MetricsMode mode);

struct RepetitionResult {
  std::uint64_t seed = 0;
  Round pt = 0;
  Trace trace;
  std::vector<MetricsRow> rows;
  std::vector<CheckReport> checks;
};

/// All oracle checks that apply to the trace's protocol.
std::vector<CheckReport> run_checks(const Trace& trace);

/// Runs every repetition; results come back in repetition order regardless
/// of `jobs`.
std::vector<RepetitionResult> run(const ExperimentSpec& spec, std::int32_t jobs = 1);

extern const char* const kCsvHeader;
void write_rows_csv(std::ostream& out, const std::vector<MetricsRow>& rows);
void write_rows_json(std::ostream& out, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_rows_csv(std::istream& in);

/// Rows averaged over seeds per (experiment, key), in first-seen order. The
/// seed column holds the number of rows averaged.
std::vector<MetricsRow> aggregate_rows(const std::vector<MetricsRow>& rows);

/// Writes rows (CSV, or JSON for a .json path) and, if `trace_dir` is set,
/// one trace file per repetition. Throws std::runtime_error naming the file
/// on I/O failure.
void emit(const std::vector<RepetitionResult>& results, const std::filesystem::path& rows_path,
          const std::optional<std::filesystem::path>& trace_dir = std::nullopt);

}  // namespace dynchain
