#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "dynchain/network.hpp"
#include "dynchain/oracle.hpp"

namespace dynchain {

class TopologyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class PhaseMode {
  complete,  // every allowed link, every round
  random,    // per round and miner: out-degree uniform on 0..mx, targets without replacement
};

/// Rounds [begin, end). With `sources` set, only source miners may link to
/// source miners; everybody may link to non-source miners.
struct TopologyPhase {
  Round begin = 0;
  Round end = 0;
  PhaseMode mode = PhaseMode::complete;
  std::optional<std::vector<MinerId>> sources;
};

struct TopologyConfig {
  std::int32_t n = 1;
  std::int32_t mx = 0;
  std::vector<TopologyPhase> phases;
  std::uint64_t seed = 0;
  /// Recurrence window promised in the pool descriptor.
  Round window = 50;

  Round horizon() const { return phases.empty() ? 0 : phases.back().end; }
  /// Throws TopologyError.
  void validate() const;
};

struct Topology {
  LinkSchedule schedule;
  PoolDescriptor descriptor;
};

/// Links of round r depend only on (seed, r) and the phase covering r, so a
/// longer horizon extends a schedule without changing its prefix.
Topology random_neighbor_schedule(const TopologyConfig& cfg);

/// Miners 0..k-1.
std::vector<MinerId> first_miners(std::int32_t k);

/// floor(percent * n / 100), at least 1.
std::int32_t pool_size(std::int32_t n, double percent);

/// Complete network for rounds 0-99, the first floor(25% n) miners as the
/// only source from 100-199, complete again from 200-299.
TopologyConfig phased_config(std::int32_t n, std::uint64_t seed, std::int32_t source_count,
                             PhaseMode mode = PhaseMode::complete, std::int32_t mx = 0);

/// One random phase over [0, horizon) with the first `source_count` miners
/// as an initially closed source pool.
TopologyConfig closed_config(std::int32_t n, std::int32_t mx, std::int32_t source_count, Round horizon,
                             std::uint64_t seed);

/// Propagation time measured by flooding tokens through the round engine:
/// every source injects a token at each start round and the result is the
/// longest time until all miners hold a token. Throws TopologyError if a
/// flood does not complete within the schedule.
Round flood_propagation_time(const LinkSchedule& schedule, const std::vector<MinerId>& sources,
                             const std::vector<Round>& starts);

struct PtEstimate {
  Round pt = 0;
  std::vector<Round> per_run;
};

/// Longest flood time over `runs` preliminary schedules of `run_length`
/// rounds, generated from `cfg` with derived seeds and its final phase
/// stretched over the whole run. Floods start every `stride` rounds in the
/// first half of each run.
PtEstimate estimate_pt(const TopologyConfig& cfg, std::int32_t runs, Round run_length, Round stride = 1);

}  // namespace dynchain
