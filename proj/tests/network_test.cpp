#include <map>
#include <sstream>

#include <gtest/gtest.h>

#include "dynchain/network.hpp"
#include "dynchain/protocols.hpp"
#include "dynchain/topology.hpp"

using namespace dynchain;

namespace {

// Records every envelope it receives; sends its own id and the round.
struct Recorder {
  struct Message {
    MinerId from = 0;
    Round round = 0;
  };
  MinerId self = 0;
  std::vector<std::tuple<Round, MinerId, Round>> seen;  // (processed, sender, sent)

  void on_round(std::vector<Envelope<Message>>& inbox, Round r) {
    for (const auto& e : inbox) {
      EXPECT_EQ(e.payload.from, e.sender);
      EXPECT_EQ(e.payload.round, e.sent_round);
      seen.emplace_back(r, e.sender, e.sent_round);
    }
  }
  Message make_message(MinerId, Round r) { return {self, r}; }
  static std::size_t payload_blocks(const Message&) { return 0; }
};

std::vector<Recorder> recorders(int n) {
  std::vector<Recorder> out(static_cast<std::size_t>(n));
  for (int m = 0; m < n; ++m) out[static_cast<std::size_t>(m)].self = m;
  return out;
}

std::vector<Miner> base_miners(int n, double rate, std::uint64_t seed = 1) {
  std::vector<Miner> out;
  for (int m = 0; m < n; ++m) {
    MinerConfig c;
    c.self_id = m;
    c.network_size = n;
    c.mining_rate = rate;
    c.seed = seed;
    out.emplace_back(c);
  }
  return out;
}

}  // namespace

TEST(LinkSchedule, EmptyRound) {
  LinkSchedule s(3, 4);
  EXPECT_TRUE(s.links_at(2).empty());
}

TEST(LinkSchedule, CompleteGraphOfThree) {
  const LinkSchedule s = complete_schedule(3, 5);
  for (Round r = 0; r < 5; ++r) {
    const auto links = s.links_at(r);
    EXPECT_EQ(links.size(), 6u);
    for (const Link& l : links) EXPECT_NE(l.sender, l.receiver);
  }
}

TEST(LinkSchedule, OutOfRangeRound) {
  const LinkSchedule s(2, 3);
  EXPECT_THROW(s.links_at(3), ScheduleError);
  EXPECT_THROW(s.links_at(-1), ScheduleError);
}

TEST(LinkSchedule, RejectsBadLinks) {
  LinkSchedule s(2, 1);
  EXPECT_THROW(s.add_link(0, {0, 0}), ScheduleError);
  EXPECT_THROW(s.add_link(0, {0, 2}), ScheduleError);
  EXPECT_THROW(s.add_link(0, {-1, 1}), ScheduleError);
}

TEST(LinkSchedule, RandomOutDegreeWithinBound) {
  TopologyConfig cfg;
  cfg.n = 30;
  cfg.mx = 5;
  cfg.seed = 99;
  cfg.phases = {{0, 20, PhaseMode::random, std::nullopt}};
  const LinkSchedule a = random_neighbor_schedule(cfg).schedule;
  const LinkSchedule b = random_neighbor_schedule(cfg).schedule;
  EXPECT_EQ(a, b);
  for (Round r = 0; r < a.horizon(); ++r) {
    std::map<MinerId, int> degree;
    for (const Link& l : a.links_at(r)) ++degree[l.sender];
    for (const auto& [m, d] : degree) {
      EXPECT_GE(d, 0);
      EXPECT_LE(d, 5);
    }
  }
}

TEST(LinkSchedule, CsvRoundTrip) {
  LinkSchedule s(4, 3);
  s.add_link(0, {0, 1});
  s.add_link(0, {3, 2});
  s.add_link(2, {1, 0});
  std::stringstream buf;
  write_schedule_csv(buf, s);
  EXPECT_EQ(read_schedule_csv(buf), s);
}

TEST(LinkSchedule, CsvRejectsGarbage) {
  std::stringstream bad("miners,horizon\n2,2\nround,sender,receiver\n0,0,5\n");
  EXPECT_THROW(read_schedule_csv(bad), ScheduleError);
}

TEST(Engine, NoLinksNoMintChangesNothing) {
  const LinkSchedule s(3, 4);
  Engine<Miner> engine(s, base_miners(3, 0.0));
  engine.run_until(4);
  EXPECT_EQ(engine.round(), 4);
  EXPECT_EQ(engine.stats().envelopes, 0u);
  for (const Miner& m : engine.nodes()) EXPECT_EQ(m.state().tree.size(), 1u);
}

TEST(Engine, SingleLinkCarriesLongerBranch) {
  LinkSchedule s(2, 6);
  s.add_link(4, {0, 1});
  auto miners = base_miners(2, 0.0);
  for (Round r = 1; r <= 3; ++r) {
    miners[0].receive(Message::of_blocks({Block{BlockId{r, 0, 0},
                                                r == 1 ? BlockId::genesis() : BlockId{r - 1, 0, 0},
                                                static_cast<std::uint32_t>(r)}}),
                      0, r);
  }
  Engine<Miner> engine(s, std::move(miners));
  engine.run_until(5);
  EXPECT_EQ(engine.nodes()[1].state().tree.size(), 1u);  // sent in round 4, not yet processed
  engine.step();
  EXPECT_EQ(engine.nodes()[1].state().tree.size(), 4u);
  EXPECT_EQ(engine.nodes()[1].state().tree.tip(), (BlockId{3, 0, 0}));
}

TEST(Engine, CompleteGraphSpreadsAMintInOneRound) {
  const int n = 100;
  const LinkSchedule s = complete_schedule(n, 3);
  auto miners = base_miners(n, 0.0);
  MinerConfig c = miners[7].config();
  c.mining_rate = 1.0;
  c.mining_until = 1;
  miners[7] = Miner(c);
  Engine<Miner> engine(s, std::move(miners));
  engine.step();  // round 0: miner 7 mints and sends
  engine.step();  // round 1: everybody processes it
  const BlockId minted{0, 7, 0};
  for (const Miner& m : engine.nodes()) EXPECT_TRUE(m.state().tree.contains(minted));
}

TEST(Engine, DeliversEveryEnvelopeExactlyOnceNextRound) {
  TopologyConfig cfg;
  cfg.n = 12;
  cfg.mx = 4;
  cfg.seed = 5;
  cfg.phases = {{0, 40, PhaseMode::random, std::nullopt}};
  const LinkSchedule s = random_neighbor_schedule(cfg).schedule;
  Engine<Recorder> engine(s, recorders(cfg.n));
  engine.run_until(s.horizon() + 1);
  std::map<std::tuple<Round, MinerId, MinerId>, int> got;
  for (MinerId m = 0; m < cfg.n; ++m) {
    Round last = -1;
    for (const auto& [processed, sender, sent] : engine.nodes()[m].seen) {
      EXPECT_EQ(processed, sent + 1);
      EXPECT_GE(processed, last);
      last = processed;
      ++got[{sent, sender, m}];
    }
  }
  std::size_t expected = 0;
  for (Round r = 0; r < s.horizon(); ++r) {
    for (const Link& l : s.links_at(r)) {
      ++expected;
      EXPECT_EQ((got[{r, l.sender, l.receiver}]), 1);
    }
  }
  EXPECT_EQ(got.size(), expected);
  EXPECT_EQ(engine.stats().envelopes, expected);
  EXPECT_EQ(engine.in_flight(), 0u);
}

TEST(Engine, DelayStaysWithinBound) {
  const LinkSchedule s = complete_schedule(4, 10);
  Engine<Recorder> engine(s, recorders(4), DelayConfig{3, 11});
  engine.run_until(20);
  std::size_t total = 0;
  for (const Recorder& r : engine.nodes()) {
    for (const auto& [processed, sender, sent] : r.seen) {
      EXPECT_GE(processed, sent + 1);
      EXPECT_LE(processed, sent + 4);
      ++total;
    }
  }
  EXPECT_EQ(total, s.link_count());
}

TEST(Engine, DeterministicForSameSeed) {
  TopologyConfig cfg;
  cfg.n = 15;
  cfg.mx = 3;
  cfg.seed = 8;
  cfg.phases = {{0, 60, PhaseMode::random, std::nullopt}};
  const LinkSchedule s = random_neighbor_schedule(cfg).schedule;
  auto run = [&] {
    Engine<Miner> engine(s, base_miners(cfg.n, 0.05, 77));
    engine.run_until(s.horizon());
    std::vector<std::vector<Block>> trees;
    for (const Miner& m : engine.nodes()) {
      const auto blocks = m.state().tree.blocks();
      trees.emplace_back(blocks.begin(), blocks.end());
    }
    return trees;
  };
  EXPECT_EQ(run(), run());
}

TEST(Engine, NodeCountMustMatch) { EXPECT_THROW(Engine<Recorder>(LinkSchedule(3, 1), recorders(2)), ScheduleError); }

TEST(Journey, SourceReachesItself) {
  const LinkSchedule s(3, 5);
  const auto a = journey_earliest_arrival(s, 1, 2);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a.at(1), 2);
}

TEST(Journey, StaticChainTakesTwoRounds) {
  LinkSchedule s(3, 10);
  for (Round r = 0; r < 10; ++r) {
    s.add_link(r, {0, 1});
    s.add_link(r, {1, 2});
  }
  const auto a = journey_earliest_arrival(s, 0, 3);
  EXPECT_EQ(a.at(1), 4);
  EXPECT_EQ(a.at(2), 5);
}

TEST(Journey, SparseLinksWaitForTheirRound) {
  LinkSchedule s(3, 12);
  s.add_link(5, {0, 1});
  s.add_link(9, {1, 2});
  const auto a = journey_earliest_arrival(s, 0, 5);
  EXPECT_EQ(a.at(2), 10);
  EXPECT_EQ(a.at(2) - 1 - 5, 4);  // first link at 5, last at 9
  EXPECT_FALSE(journey_earliest_arrival(s, 0, 6).contains(2));
  EXPECT_FALSE(journey_earliest_arrival(s, 2, 0).contains(0));
}

TEST(Journey, MonotoneInStart) {
  TopologyConfig cfg;
  cfg.n = 10;
  cfg.mx = 2;
  cfg.seed = 3;
  cfg.phases = {{0, 80, PhaseMode::random, std::nullopt}};
  const LinkSchedule s = random_neighbor_schedule(cfg).schedule;
  for (MinerId from = 0; from < cfg.n; ++from) {
    for (Round start = 0; start + 1 < 40; ++start) {
      const auto early = journey_earliest_arrival(s, from, start);
      const auto late = journey_earliest_arrival(s, from, start + 1);
      for (const auto& [m, t] : late) {
        ASSERT_TRUE(early.contains(m));
        EXPECT_LE(early.at(m), t);
      }
    }
  }
}

TEST(DeriveSeed, DistinctAndStable) {
  EXPECT_EQ(derive_seed(1, 2), derive_seed(1, 2));
  EXPECT_NE(derive_seed(1, 2), derive_seed(1, 3));
  EXPECT_NE(derive_seed(1, 2), derive_seed(2, 2));
}
