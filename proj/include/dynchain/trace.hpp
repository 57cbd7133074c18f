#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dynchain/chain.hpp"
#include "dynchain/network.hpp"

namespace dynchain {

/// Parameters a run was executed with, as far as the checks need them.
struct TraceMeta {
  std::string protocol = "base";
  std::string policy = "full-tree";
  std::int32_t miners = 0;
  Round pt = 0;
  std::vector<MinerId> source_miners;
  /// From close_round on, nobody outside source_miners links into it.
  bool closed_source = false;
  Round close_round = 0;
  double mining_rate = 0.0;
  /// First round in which nobody mines; the remainder is a quiet tail.
  Round mining_until = 0;
  std::uint64_t seed = 0;
};

struct MintRecord {
  Round round = 0;
  MinerId miner = 0;
  Block block;
};

struct ConfirmRecord {
  Round round = 0;
  MinerId miner = 0;
  BlockId block;
};

struct RejectRecord {
  Round round = 0;
  MinerId miner = 0;
  BlockId block;
  std::vector<BlockId> leaves;
};

/// Envelopes sent in one round.
struct DeliverySummary {
  Round round = 0;
  std::uint64_t envelopes = 0;
  std::uint64_t blocks = 0;
  std::size_t max_blocks = 0;
};

/// Everything recorded about one run. Rounds run 0..horizon-1 where horizon
/// is the schedule's.
struct Trace {
  TraceMeta meta;
  LinkSchedule schedule;
  std::vector<MintRecord> mints;  // in round order
  std::vector<DeliverySummary> deliveries;
  std::vector<ConfirmRecord> confirmations;
  std::vector<RejectRecord> rejects;
  /// positions[r][m]: the block miner m mines on at the end of round r.
  std::vector<std::vector<BlockId>> positions;

  Round horizon() const { return schedule.horizon(); }
  Round last_round() const { return horizon() - 1; }
};

class TraceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checks the invariants every recorded trace must satisfy: parents minted
/// before children, positions and confirmations referring to minted blocks,
/// rounds within the horizon. Throws TraceError.
void validate_trace(const Trace& trace);

void write_trace_json(std::ostream& out, const Trace& trace);
Trace read_trace_json(std::istream& in);

}  // namespace dynchain
