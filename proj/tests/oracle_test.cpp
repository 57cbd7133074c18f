#include <algorithm>
#include <set>

#include <gtest/gtest.h>

#include "dynchain/harness.hpp"
#include "dynchain/oracle.hpp"
#include "dynchain/topology.hpp"

using namespace dynchain;

namespace {

BlockId id(Round r, MinerId m) { return BlockId{r, m, 0}; }

struct TraceBuilder {
  Trace t;

  TraceBuilder(std::int32_t n, Round horizon) {
    t.meta.miners = n;
    t.meta.pt = 1;
    t.schedule = complete_schedule(n, horizon);
    t.positions.assign(static_cast<std::size_t>(horizon),
                       std::vector<BlockId>(static_cast<std::size_t>(n), BlockId::genesis()));
  }
  // Mints a chain of `len` blocks on top of `parent`, one per round from `from`.
  BlockId chain(MinerId m, BlockId parent, std::uint32_t depth, Round from, int len) {
    for (int i = 0; i < len; ++i) {
      const BlockId b = id(from + i, m);
      t.mints.push_back({from + i, m, Block{b, parent, depth + 1 + static_cast<std::uint32_t>(i)}});
      parent = b;
    }
    return parent;
  }
  // Miner m mines on `b` from round r on.
  void move(MinerId m, BlockId b, Round r) {
    for (auto k = static_cast<std::size_t>(r); k < t.positions.size(); ++k) t.positions[k][m] = b;
  }
  void confirm(MinerId m, BlockId b, Round r) { t.confirmations.push_back({r, m, b}); }
};

ExperimentSpec closed_spec(ProtocolKind kind, std::int32_t n, std::uint64_t seed) {
  ExperimentSpec spec;
  spec.topology = closed_config(n, 4, pool_size(n, 75), 60, seed);
  spec.protocol.kind = kind;
  spec.horizon_pt_multiple = 12;
  spec.seed = seed;
  return spec;
}

LinkSchedule pools_schedule(std::int32_t n, Round horizon, const std::vector<std::vector<MinerId>>& pools,
                            const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  LinkSchedule s(n, horizon);
  for (Round r = 0; r < horizon; ++r) {
    for (const auto& p : pools) {
      for (MinerId a : p) {
        for (MinerId b : p) {
          if (a != b) s.add_link(r, {a, b});
        }
      }
    }
    for (const auto& [x, y] : edges) s.add_link(r, {pools[x].front(), pools[y].front()});
  }
  return s;
}

}  // namespace

TEST(PoolGraph, CompleteGraphIsOnePool) {
  const PoolGraph g = observed_pool_graph(complete_schedule(6, 40), 0, 40, 10);
  ASSERT_EQ(g.pools.size(), 1u);
  EXPECT_TRUE(g.edges.empty());
  EXPECT_EQ(source_pools(g), g.pools);
}

TEST(PoolGraph, IsolatedHalvesAreTwoSources) {
  const LinkSchedule s = pools_schedule(6, 30, {{0, 1, 2}, {3, 4, 5}}, {});
  const PoolGraph g = observed_pool_graph(s, 0, 30, 10);
  EXPECT_EQ(g.pools.size(), 2u);
  EXPECT_TRUE(g.edges.empty());
  EXPECT_EQ(source_pools(g).size(), 2u);
}

TEST(PoolGraph, ChainHasOneSource) {
  const LinkSchedule s = pools_schedule(6, 30, {{0, 1}, {2, 3}, {4, 5}}, {{0, 1}, {1, 2}});
  const PoolGraph g = observed_pool_graph(s, 0, 30, 10);
  ASSERT_EQ(g.pools.size(), 3u);
  EXPECT_TRUE(g.is_dag());
  EXPECT_EQ(g.edges.size(), 2u);
  ASSERT_EQ(source_pools(g).size(), 1u);
  EXPECT_EQ(source_pools(g)[0], (std::vector<MinerId>{0, 1}));
}

TEST(PoolGraph, LatePoolOnlySendsIsTheSource) {
  // Third pool reaches the other two and never hears from them.
  const LinkSchedule s = pools_schedule(9, 40, {{0, 1, 2}, {3, 4, 5}, {6, 7, 8}}, {{0, 1}, {2, 0}, {2, 1}});
  const PoolGraph g = observed_pool_graph(s, 0, 40, 10);
  ASSERT_EQ(g.pools.size(), 3u);
  ASSERT_EQ(source_pools(g).size(), 1u);
  EXPECT_EQ(source_pools(g)[0], (std::vector<MinerId>{6, 7, 8}));
}

TEST(PoolGraph, RestrictedPhaseHasSourceAndRest) {
  const Topology topo = random_neighbor_schedule(phased_config(20, 4, pool_size(20, 25)));
  const PoolGraph g = pool_graph(topo.descriptor, topo.schedule, 1);
  ASSERT_EQ(g.pools.size(), 2u);
  ASSERT_EQ(g.edges.size(), 1u);
  const auto sources = source_pools(g);
  ASSERT_EQ(sources.size(), 1u);
  EXPECT_EQ(sources[0], first_miners(5));
  EXPECT_TRUE(g.is_dag());
  EXPECT_EQ(pool_graph(topo.descriptor, topo.schedule, 0).pools.size(), 1u);
}

TEST(PoolGraph, DescriptorMismatchThrows) {
  PoolDescriptor d;
  d.miners = 4;
  d.phases = {{0, 20, 10, {{0, 1, 2, 3}}, {}}};
  const LinkSchedule s = pools_schedule(4, 20, {{0, 1}, {2, 3}}, {});
  EXPECT_THROW(pool_graph(d, s), OracleError);
}

TEST(PropagationTime, CompleteGraphIsOne) {
  EXPECT_EQ(propagation_time(complete_schedule(8, 20), first_miners(8), 0, 10), 1);
}

TEST(PropagationTime, StaticRing) {
  const int n = 7;
  LinkSchedule s(n, 40);
  for (Round r = 0; r < 40; ++r) {
    for (MinerId m = 0; m < n; ++m) s.add_link(r, {m, (m + 1) % n});
  }
  EXPECT_EQ(propagation_time(s, first_miners(n), 0, 20), n - 1);
}

TEST(PropagationTime, UnreachableThrows) {
  const LinkSchedule s = pools_schedule(4, 20, {{0, 1}, {2, 3}}, {});
  EXPECT_THROW(propagation_time(s, {0}, 0, 5), OracleError);
}

TEST(PropagationTime, MatchesFlood) {
  const Topology topo = random_neighbor_schedule(closed_config(100, 5, 75, 300, 11));
  const auto sources = first_miners(75);
  const auto last = last_complete_start(topo.schedule, sources);
  ASSERT_TRUE(last);
  std::vector<Round> starts;
  for (Round r = 0; r <= *last; ++r) starts.push_back(r);
  EXPECT_EQ(propagation_time(topo.schedule, sources, 0, *last), flood_propagation_time(topo.schedule, sources, starts));
}

TEST(DeadBranches, SingleBranchNeverDead) {
  TraceBuilder b(2, 10);
  const BlockId tip = b.chain(0, BlockId::genesis(), 0, 1, 5);
  b.move(0, tip, 6);
  b.move(1, tip, 7);
  Oracle o(b.t);
  for (Round r = 0; r < 10; ++r) EXPECT_TRUE(o.dead_branches(r).empty());
}

TEST(DeadBranches, ShortForkUnderEveryoneIsDead) {
  TraceBuilder b(2, 12);
  const BlockId fork = b.chain(1, BlockId::genesis(), 0, 1, 3);
  const BlockId tip = b.chain(0, BlockId::genesis(), 0, 1, 5);
  b.move(0, tip, 5);
  b.move(1, fork, 3);
  b.move(1, tip, 8);
  Oracle o(b.t);
  EXPECT_TRUE(o.dead_branches(7).empty());  // miner 1 still on the fork
  EXPECT_EQ(o.dead_branches(8), (std::vector<BlockId>{fork}));
  EXPECT_TRUE(o.all_branches_dead(id(1, 1), 8));
  EXPECT_FALSE(o.all_branches_dead(id(1, 0), 8));
}

TEST(DeadBranches, Monotone) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const Trace t = simulate(plan_run(closed_spec(ProtocolKind::base, 15, seed), 0));
    Oracle o(t);
    std::vector<BlockId> prev;
    for (Round r = 0; r < t.horizon(); ++r) {
      const auto now = o.dead_branches(r);
      for (const BlockId& leaf : prev) EXPECT_TRUE(std::binary_search(now.begin(), now.end(), leaf)) << r;
      prev = now;
    }
  }
}

TEST(GroundTruth, GenesisAlwaysAccepted) {
  const Trace t = simulate(plan_run(closed_spec(ProtocolKind::base, 10, 2), 0));
  Oracle o(t);
  EXPECT_EQ(o.ground_truth_accepted(0), (std::vector<BlockId>{BlockId::genesis()}));
  for (Round r = 0; r < t.horizon(); ++r) EXPECT_EQ(o.ground_truth_accepted(r).front(), BlockId::genesis());
}

TEST(GroundTruth, UnforkedChainAcceptedAfterOneRound) {
  ExperimentSpec spec;
  spec.topology.n = 5;
  spec.topology.phases = {{0, 200, PhaseMode::complete, std::nullopt}};
  spec.horizon = 200;
  spec.protocol.mining_rate = 0.04;
  spec.seed = 3;
  const Trace t = simulate(plan_run(spec, 0));
  Oracle o(t);
  // Forks need two mints in the same round; skip them.
  std::map<Round, int> per_round;
  for (const auto& m : t.mints) ++per_round[m.round];
  std::size_t checked = 0;
  for (const auto& m : t.mints) {
    if (per_round[m.round] > 1 || m.round + 1 >= t.horizon()) continue;
    const auto acc = o.ground_truth_accepted(m.round + 1);
    EXPECT_TRUE(std::find(acc.begin(), acc.end(), m.block.id) != acc.end()) << to_string(m.block.id);
    ++checked;
  }
  EXPECT_GT(checked, 10u);
}

TEST(Validity, NoConfirmationsPass) {
  TraceBuilder b(2, 5);
  EXPECT_EQ(check_confirmation_validity(b.t).verdict, CheckVerdict::pass);
}

TEST(Validity, ConfirmingAForkFails) {
  TraceBuilder b(2, 12);
  const BlockId fork = b.chain(1, BlockId::genesis(), 0, 1, 2);
  const BlockId tip = b.chain(0, BlockId::genesis(), 0, 1, 4);
  b.move(0, tip, 4);
  b.move(1, fork, 2);
  b.move(1, tip, 6);
  b.confirm(1, id(1, 1), 3);
  b.confirm(0, id(1, 0), 8);
  const CheckReport rep = check_confirmation_validity(b.t);
  EXPECT_EQ(rep.verdict, CheckVerdict::fail);
  ASSERT_EQ(rep.violations.size(), 1u);
  EXPECT_EQ(rep.violations[0].block, id(1, 1));
}

TEST(Validity, EagerMutantFailsOnForks) {
  ExperimentSpec spec = closed_spec(ProtocolKind::base, 12, 5);
  spec.protocol.mining_rate = 0.3;
  Trace t = simulate(plan_run(spec, 0));
  // Everybody confirms every block the round it is minted.
  for (const auto& m : t.mints) {
    for (MinerId who = 0; who < t.meta.miners; ++who) t.confirmations.push_back({m.round, who, m.block.id});
  }
  const CheckReport rep = check_confirmation_validity(t);
  EXPECT_EQ(rep.verdict, CheckVerdict::fail);
  EXPECT_FALSE(rep.violations.empty());
}

TEST(Liveness, GenesisOnlyPasses) {
  TraceBuilder b(3, 10);
  b.t.meta.protocol = "kpt";
  for (MinerId m = 0; m < 3; ++m) b.confirm(m, BlockId::genesis(), 0);
  EXPECT_EQ(check_decision_liveness(b.t, 3).verdict, CheckVerdict::pass);
}

TEST(Liveness, MissingConfirmationFails) {
  TraceBuilder b(2, 12);
  const BlockId tip = b.chain(0, BlockId::genesis(), 0, 1, 3);
  b.move(0, tip, 3);
  b.move(1, tip, 4);
  b.t.meta.protocol = "ksm";
  for (MinerId m = 0; m < 2; ++m) b.confirm(m, BlockId::genesis(), 0);
  b.confirm(0, id(1, 0), 5);
  EXPECT_EQ(check_decision_liveness(b.t, 3).verdict, CheckVerdict::fail);
}

TEST(Liveness, TruncatedRunIsInconclusive) {
  TraceBuilder b(2, 4);
  b.t.meta.protocol = "kpt";
  b.t.meta.pt = 5;
  EXPECT_EQ(check_decision_liveness(b.t, 15).verdict, CheckVerdict::inconclusive);
}

TEST(Liveness, DefaultSlack) {
  TraceMeta meta;
  meta.pt = 4;
  meta.protocol = "kpt";
  EXPECT_EQ(default_liveness_slack(meta), 12);
  meta.protocol = "ksm";
  meta.source_miners = first_miners(6);
  EXPECT_EQ(default_liveness_slack(meta), 10);
}

TEST(Checks, ProtocolsPassOnClosedPools) {
  for (ProtocolKind kind : {ProtocolKind::kpt, ProtocolKind::ksm}) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const Trace t = simulate(plan_run(closed_spec(kind, 20, seed), 0));
      for (const CheckReport& rep : run_checks(t)) {
        EXPECT_NE(rep.verdict, CheckVerdict::fail) << rep.check << " " << rep.detail << " seed " << seed;
      }
      EXPECT_EQ(check_confirmation_validity(t).verdict, CheckVerdict::pass);
      EXPECT_EQ(check_reject_soundness(t).verdict, CheckVerdict::pass);
      EXPECT_EQ(check_source_chain(t).verdict, CheckVerdict::pass);
    }
  }
}

TEST(Checks, ReportJsonNamesEveryCheck) {
  const Trace t = simulate(plan_run(closed_spec(ProtocolKind::ksm, 10, 1), 0));
  const auto reports = run_checks(t);
  const std::string js = report_json(reports);
  for (const CheckReport& rep : reports) EXPECT_NE(js.find(rep.check), std::string::npos);
}
