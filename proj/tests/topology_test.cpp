#include <algorithm>
#include <map>
#include <set>
#include <numeric>

#include <gtest/gtest.h>

#include "dynchain/oracle.hpp"
#include "dynchain/topology.hpp"

using namespace dynchain;

namespace {

TopologyConfig random_config(std::int32_t n, std::int32_t mx, Round horizon, std::uint64_t seed) {
  TopologyConfig cfg;
  cfg.n = n;
  cfg.mx = mx;
  cfg.seed = seed;
  cfg.phases = {{0, horizon, PhaseMode::random, std::nullopt}};
  return cfg;
}

}  // namespace

TEST(Topology, ZeroMxHasNoLinks) {
  const LinkSchedule s = random_neighbor_schedule(random_config(10, 0, 50, 1)).schedule;
  EXPECT_EQ(s.link_count(), 0u);
}

TEST(Topology, OutDegreeUniform) {
  const int n = 11;
  const Round rounds = 100000 / n + 1;
  const LinkSchedule s = random_neighbor_schedule(random_config(n, n - 1, rounds, 6)).schedule;
  std::vector<int> hist(n, 0);
  for (Round r = 0; r < rounds; ++r) {
    std::vector<int> deg(n, 0);
    for (const Link& l : s.links_at(r)) ++deg[l.sender];
    for (int d : deg) ++hist[d];
  }
  const double draws = static_cast<double>(rounds) * n;
  double mean = 0;
  for (int d = 0; d < n; ++d) {
    mean += d * hist[d] / draws;
    EXPECT_NEAR(hist[d] / draws, 1.0 / n, 0.01) << d;
  }
  EXPECT_NEAR(mean, (n - 1) / 2.0, 0.02 * (n - 1) / 2.0);
}

TEST(Topology, NoSelfOrDuplicateLinks) {
  const LinkSchedule s = random_neighbor_schedule(random_config(8, 7, 200, 2)).schedule;
  for (Round r = 0; r < s.horizon(); ++r) {
    std::set<std::pair<MinerId, MinerId>> seen;
    for (const Link& l : s.links_at(r)) {
      EXPECT_NE(l.sender, l.receiver);
      EXPECT_TRUE(seen.emplace(l.sender, l.receiver).second);
    }
  }
}

TEST(Topology, SameSeedSameSchedule) {
  const auto cfg = closed_config(30, 5, 20, 100, 9);
  EXPECT_EQ(random_neighbor_schedule(cfg).schedule, random_neighbor_schedule(cfg).schedule);
  auto other = cfg;
  other.seed = 10;
  EXPECT_NE(random_neighbor_schedule(cfg).schedule, random_neighbor_schedule(other).schedule);
}

TEST(Topology, LongerHorizonKeepsPrefix) {
  const LinkSchedule a = random_neighbor_schedule(random_config(12, 4, 50, 3)).schedule;
  const LinkSchedule b = random_neighbor_schedule(random_config(12, 4, 80, 3)).schedule;
  for (Round r = 0; r < 50; ++r) {
    const auto x = a.links_at(r);
    const auto y = b.links_at(r);
    EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin(), y.end())) << r;
  }
}

TEST(Topology, PhasedPlan) {
  const int n = 20;
  const auto cfg = phased_config(n, 1, pool_size(n, 25));
  ASSERT_EQ(cfg.phases.size(), 3u);
  EXPECT_EQ(cfg.phases[0].begin, 0);
  EXPECT_EQ(cfg.phases[1].begin, 100);
  EXPECT_EQ(cfg.phases[2].begin, 200);
  EXPECT_EQ(cfg.horizon(), 300);
  const Topology topo = random_neighbor_schedule(cfg);
  EXPECT_EQ(topo.schedule.links_at(50).size(), static_cast<std::size_t>(n * (n - 1)));
  EXPECT_EQ(topo.schedule.links_at(250).size(), static_cast<std::size_t>(n * (n - 1)));
  for (Round r = 100; r < 200; ++r) {
    for (const Link& l : topo.schedule.links_at(r)) {
      if (l.receiver < 5) EXPECT_LT(l.sender, 5) << r;
    }
  }
  ASSERT_EQ(topo.descriptor.phases.size(), 3u);
  EXPECT_EQ(topo.descriptor.phases[1].pools.size(), 2u);
}

TEST(Topology, ClosedPoolHasNoIncomingLinks) {
  const Topology topo = random_neighbor_schedule(closed_config(40, 6, 30, 200, 4));
  for (Round r = 0; r < topo.schedule.horizon(); ++r) {
    for (const Link& l : topo.schedule.links_at(r)) {
      if (l.receiver < 30) EXPECT_LT(l.sender, 30);
    }
  }
  EXPECT_NO_THROW(pool_graph(topo.descriptor, topo.schedule));
}

TEST(Topology, PoolSizeFloors) {
  EXPECT_EQ(pool_size(100, 75), 75);
  EXPECT_EQ(pool_size(50, 75), 37);
  EXPECT_EQ(pool_size(20, 25), 5);
  EXPECT_EQ(pool_size(3, 10), 1);
}

TEST(Topology, InvalidConfigThrows) {
  EXPECT_THROW(random_neighbor_schedule(random_config(5, 5, 10, 1)), TopologyError);
  auto gap = random_config(5, 2, 10, 1);
  gap.phases.push_back({12, 20, PhaseMode::random, std::nullopt});
  EXPECT_THROW(random_neighbor_schedule(gap), TopologyError);
  auto bad_source = random_config(5, 2, 10, 1);
  bad_source.phases[0].sources = std::vector<MinerId>{7};
  EXPECT_THROW(random_neighbor_schedule(bad_source), TopologyError);
}

TEST(EstimatePt, CompleteGraphIsOne) {
  TopologyConfig cfg;
  cfg.n = 10;
  cfg.phases = {{0, 100, PhaseMode::complete, std::nullopt}};
  EXPECT_EQ(estimate_pt(cfg, 3, 100).pt, 1);
}

TEST(EstimatePt, FloodMatchesJourneys) {
  const LinkSchedule s = random_neighbor_schedule(closed_config(30, 3, 20, 400, 8)).schedule;
  const auto sources = first_miners(20);
  const auto last = last_complete_start(s, sources);
  ASSERT_TRUE(last);
  std::vector<Round> all(static_cast<std::size_t>(*last + 1));
  std::iota(all.begin(), all.end(), 0);
  const Round exact = propagation_time(s, sources, 0, *last);
  EXPECT_EQ(flood_propagation_time(s, sources, all), exact);
  std::vector<Round> sampled;
  for (Round r = 0; r <= *last; r += 7) sampled.push_back(r);
  EXPECT_LE(flood_propagation_time(s, sources, sampled), exact);
}

TEST(EstimatePt, IncompleteFloodThrows) {
  TopologyConfig cfg = random_config(10, 0, 50, 1);
  EXPECT_THROW(estimate_pt(cfg, 2, 50), TopologyError);
}

TEST(EstimatePt, FallsAsMxGrows) {
  double prev = 1e9;
  for (std::int32_t mx : {2, 5, 10}) {
    double sum = 0;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) sum += estimate_pt(closed_config(50, mx, 37, 100, seed), 3, 300, 5).pt;
    EXPECT_LT(sum / 3, prev) << mx;
    prev = sum / 3;
  }
}
