#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "dynchain/harness.hpp"
#include "dynchain/oracle.hpp"
#include "dynchain/topology.hpp"
#include "dynchain/trace.hpp"

using namespace dynchain;

namespace {

ExperimentSpec from_json(const std::string& text) {
  std::istringstream in(text);
  return parse_spec(in);
}

ExperimentSpec small_spec(ProtocolKind kind, std::uint64_t seed) {
  ExperimentSpec spec;
  spec.name = "small";
  spec.topology = closed_config(16, 4, 12, 60, seed);
  spec.protocol.kind = kind;
  spec.horizon_pt_multiple = 12;
  spec.repetitions = 3;
  spec.seed = seed;
  return spec;
}

std::string csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream out;
  write_rows_csv(out, rows);
  return out.str();
}

}  // namespace

TEST(Spec, ParsesFullExample) {
  const ExperimentSpec spec = from_json(R"({
    "name": "fig3", "seed": 4, "repetitions": 2,
    "topology": {"n": 40, "mx": 5, "phases": [{"begin": 0, "end": 100, "mode": "random", "sources": {"percent": 75}}]},
    "protocol": {"kind": "ksm", "policy": "deepest-unsent", "pt": 6},
    "horizon": {"pt_multiple": 12}, "metrics": "per-round"})");
  EXPECT_EQ(spec.name, "fig3");
  EXPECT_EQ(spec.repetitions, 2);
  EXPECT_EQ(spec.protocol.kind, ProtocolKind::ksm);
  EXPECT_EQ(spec.protocol.policy, MessagePolicy::deepest_unsent);
  EXPECT_EQ(spec.protocol.pt_mode, PtMode::fixed);
  EXPECT_EQ(spec.protocol.pt, 6);
  ASSERT_TRUE(spec.topology.phases[0].sources);
  EXPECT_EQ(spec.topology.phases[0].sources->size(), 30u);
  EXPECT_EQ(spec.horizon_pt_multiple, 12.0);
  EXPECT_EQ(spec.metrics, MetricsMode::per_round);
}

TEST(Spec, Errors) {
  EXPECT_THROW(from_json("{"), SpecError);
  EXPECT_THROW(from_json(R"({"topology": {"n": 3, "phases": [{"begin": 0, "end": 5}]}, "horizon": 5})"), SpecError);
  EXPECT_THROW(from_json(R"({"seed": 1, "repetitions": 0,
    "topology": {"n": 3, "phases": [{"begin": 0, "end": 5}]}, "horizon": 5})"),
               SpecError);
  EXPECT_THROW(from_json(R"({"seed": 1, "protocol": {"kind": "pow"},
    "topology": {"n": 3, "phases": [{"begin": 0, "end": 5}]}, "horizon": 5})"),
               SpecError);
  EXPECT_THROW(from_json(R"({"seed": 1, "topology": {"n": 3, "mx": 9, "phases": [{"begin": 0, "end": 5}]},
    "horizon": 5})"),
               SpecError);
}

TEST(Run, SingleRoundCountsGenesisOnly) {
  const ExperimentSpec spec = from_json(R"({"seed": 1,
    "topology": {"n": 4, "phases": [{"begin": 0, "end": 1}]},
    "protocol": {"mining_rate": 0.0}, "horizon": 1})");
  const auto results = run(spec);
  ASSERT_EQ(results.size(), 1u);
  ASSERT_EQ(results[0].rows.size(), 1u);
  const MetricsRow& row = results[0].rows[0];
  EXPECT_EQ(row.mints, 0);
  EXPECT_EQ(row.accepted, 0);
  EXPECT_EQ(row.acceptance_rate, 0.0);
}

TEST(Run, DeterministicAcrossJobs) {
  const ExperimentSpec spec = small_spec(ProtocolKind::ksm, 2);
  std::string one, three;
  {
    std::vector<MetricsRow> rows;
    for (const auto& r : run(spec, 1)) rows.insert(rows.end(), r.rows.begin(), r.rows.end());
    one = csv(rows);
  }
  {
    std::vector<MetricsRow> rows;
    for (const auto& r : run(spec, 3)) rows.insert(rows.end(), r.rows.begin(), r.rows.end());
    three = csv(rows);
  }
  EXPECT_EQ(one, three);
  const auto results = run(spec, 2);
  EXPECT_NE(results[0].seed, results[1].seed);
}

TEST(Run, ChecksNeverFailOnDecisionRules) {
  for (ProtocolKind kind : {ProtocolKind::kpt, ProtocolKind::ksm}) {
    for (const auto& r : run(small_spec(kind, 5), 2)) {
      for (const CheckReport& rep : r.checks) EXPECT_NE(rep.verdict, CheckVerdict::fail) << rep.check << ": " << rep.detail;
    }
  }
}

TEST(Metrics, PerRoundShape) {
  ExperimentSpec spec;
  spec.name = "fig2";
  spec.topology = phased_config(20, 3, pool_size(20, 25));
  spec.horizon = 300;
  spec.metrics = MetricsMode::per_round;
  spec.seed = 3;
  const auto results = run(spec);
  ASSERT_EQ(results[0].rows.size(), 300u);
  for (std::size_t i = 0; i < 300; ++i) {
    const MetricsRow& row = results[0].rows[i];
    EXPECT_EQ(row.key, std::to_string(i));
    EXPECT_GE(row.acceptance_rate, 0.0);
    EXPECT_LE(row.acceptance_rate, 1.0);
  }
}

TEST(Metrics, AcceptanceRate) {
  ExperimentSpec spec;
  spec.topology.n = 1;
  spec.topology.mx = 0;
  spec.topology.phases = {{0, 50, PhaseMode::complete, std::nullopt}};
  spec.horizon = 50;
  spec.protocol.mining_rate = 0.0;
  EXPECT_EQ(acceptance_rate(simulate(plan_run(spec, 0)), 49), 0.0);
  spec.protocol.mining_rate = 0.3;
  const Trace t = simulate(plan_run(spec, 0));
  ASSERT_FALSE(t.mints.empty());
  EXPECT_EQ(acceptance_rate(t, 49), 1.0);
}

TEST(Metrics, KsmCompleteGraphConfirmsWithinTwoRounds) {
  ExperimentSpec spec;
  spec.topology.n = 6;
  spec.topology.phases = {{0, 100, PhaseMode::complete, std::nullopt}};
  spec.protocol.kind = ProtocolKind::ksm;
  spec.protocol.source_miners = std::vector<MinerId>{0};
  spec.horizon = 100;
  spec.seed = 8;
  auto plan = plan_run(spec, 0);
  for (auto& m : plan.miners) m.mining_rate = m.self_id == 0 ? 0.2 : 0.0;
  const Trace t = simulate(plan);
  const auto times = confirmation_time(t);
  ASSERT_GT(times.size(), 5u);
  for (const auto& [b, dt] : times) EXPECT_LE(dt, 2) << to_string(b);
}

TEST(Metrics, KptNeverConfirmsBeforeTwoPt) {
  const auto results = run(small_spec(ProtocolKind::kpt, 6));
  for (const auto& r : results) {
    for (const auto& [b, dt] : confirmation_time(r.trace)) EXPECT_GE(dt, 2 * r.pt);
  }
}

TEST(Metrics, UnconfirmedBlocksAbsent) {
  const auto results = run(small_spec(ProtocolKind::kpt, 7));
  const Trace& t = results[0].trace;
  const auto times = confirmation_time(t);
  std::map<BlockId, int> count;
  for (const auto& c : t.confirmations) ++count[c.block];
  for (const auto& m : t.mints) {
    EXPECT_EQ(times.contains(m.block.id), count[m.block.id] == t.meta.miners);
  }
}

TEST(Emit, HeaderAndColumnOrder) {
  EXPECT_EQ(csv({}), std::string(kCsvHeader) + "\n");
  EXPECT_EQ(std::string(kCsvHeader),
            "experiment,seed,key,mints,accepted,acceptance_rate,confirmed_all,mean_conf_time,max_conf_time,"
            "max_msg_blocks");
}

TEST(Emit, RowsRoundTrip) {
  std::vector<MetricsRow> rows;
  for (const auto& r : run(small_spec(ProtocolKind::kpt, 9))) rows.insert(rows.end(), r.rows.begin(), r.rows.end());
  std::istringstream in(csv(rows));
  EXPECT_EQ(csv(read_rows_csv(in)), csv(rows));
}

TEST(Emit, AggregateAverages) {
  std::vector<MetricsRow> rows(2);
  rows[0] = {"e", 1, "final", 10, 5, 0.5, 4, 3.0, 6.0, 1};
  rows[1] = {"e", 2, "final", 20, 5, 0.25, 2, std::nullopt, std::nullopt, 3};
  const auto agg = aggregate_rows(rows);
  ASSERT_EQ(agg.size(), 1u);
  EXPECT_EQ(agg[0].seed, 2u);
  EXPECT_DOUBLE_EQ(agg[0].mints, 15);
  EXPECT_DOUBLE_EQ(agg[0].acceptance_rate, 0.375);
  EXPECT_DOUBLE_EQ(agg[0].max_msg_blocks, 3);  // a maximum stays a maximum
}

TEST(Emit, TraceRoundTripKeepsReports) {
  const auto results = run(small_spec(ProtocolKind::ksm, 10));
  const Trace& t = results[0].trace;
  std::stringstream buf;
  write_trace_json(buf, t);
  const Trace back = read_trace_json(buf);
  EXPECT_EQ(report_json(run_checks(back)), report_json(run_checks(t)));
  EXPECT_EQ(back.mints.size(), t.mints.size());
  EXPECT_EQ(back.schedule, t.schedule);
}

TEST(Emit, WritesFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "dynchain_emit_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const auto results = run(small_spec(ProtocolKind::kpt, 11));
  emit(results, dir / "rows.csv", dir / "traces");
  std::ifstream in(dir / "rows.csv");
  EXPECT_EQ(read_rows_csv(in).size(), results.size());
  std::size_t traces = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir / "traces")) traces += entry.is_regular_file();
  EXPECT_EQ(traces, results.size());
  EXPECT_THROW(emit(results, dir / "rows.csv" / "under_a_file.csv"), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST(Trace, ValidateCatchesBadRecords) {
  Trace t = run(small_spec(ProtocolKind::base, 12))[0].trace;
  EXPECT_NO_THROW(validate_trace(t));
  Trace bad = t;
  bad.confirmations.push_back({t.horizon() + 3, 0, BlockId::genesis()});
  EXPECT_THROW(validate_trace(bad), TraceError);
  bad = t;
  ASSERT_FALSE(bad.mints.empty());
  bad.mints[0].block.parent = BlockId{999, 0, 0};
  EXPECT_THROW(validate_trace(bad), TraceError);
}
