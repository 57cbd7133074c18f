#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dynchain/chain.hpp"
#include "dynchain/network.hpp"
#include "dynchain/trace.hpp"

namespace dynchain {

class OracleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Pool structure a generator promises for rounds [begin, end): within every
/// window of `window` rounds each pool is strongly connected by journeys,
/// and every listed edge carries at least one link.
struct PoolPhase {
  Round begin = 0;
  Round end = 0;
  Round window = 1;
  std::vector<std::vector<MinerId>> pools;
  std::vector<std::pair<std::size_t, std::size_t>> edges;
};

struct PoolDescriptor {
  std::int32_t miners = 0;
  std::vector<PoolPhase> phases;
};

/// Pools are sorted by their smallest member; members ascending.
struct PoolGraph {
  std::vector<std::vector<MinerId>> pools;
  std::vector<std::pair<std::size_t, std::size_t>> edges;  // sorted, unique

  bool is_dag() const;
  friend bool operator==(const PoolGraph&, const PoolGraph&) = default;
};

/// Pool graph observed in rounds [begin, end) of `schedule`, cut into
/// consecutive windows of `window` rounds (a trailing partial window is
/// dropped). a recurrently reaches b if a journey from a to b fits inside
/// every window; pools are the strongly connected components of that
/// relation. An edge X -> Y exists if every window has a link from X to Y.
PoolGraph observed_pool_graph(const LinkSchedule& schedule, Round begin, Round end, Round window);

/// Pool graph of the final phase of `descriptor`, which stands in for the
/// infinite suffix. Throws OracleError if the observed structure disagrees
/// with the declared one or is not a DAG.
PoolGraph pool_graph(const PoolDescriptor& descriptor, const LinkSchedule& schedule);
/// Same for an arbitrary phase.
PoolGraph pool_graph(const PoolDescriptor& descriptor, const LinkSchedule& schedule, std::size_t phase);

/// Pools with no incoming edge.
std::vector<std::vector<MinerId>> source_pools(const PoolGraph& graph);

/// Longest journey time from any of `sources` to any miner, over start rounds
/// in [first_start, last_start]. Throws OracleError if some miner is not
/// reachable before the horizon from some start.
Round propagation_time(const LinkSchedule& schedule, const std::vector<MinerId>& sources,
                       Round first_start, Round last_start);

/// Largest start round from which every miner is reachable from every source
/// before the horizon, if any.
std::optional<Round> last_complete_start(const LinkSchedule& schedule, const std::vector<MinerId>& sources);

/// Ground truth derived from a trace: the global tree of everything minted
/// and every miner's mining position per round.
class Oracle {
 public:
  explicit Oracle(const Trace& trace);
  Oracle(const Oracle&) = delete;
  Oracle& operator=(const Oracle&) = delete;

  const Trace& trace() const { return *trace_; }
  const BlockTree& tree() const { return tree_; }

  /// Blocks minted in rounds [0, r].
  std::size_t minted_by(Round r) const;

  /// Leaves, among blocks minted by round r, whose branch every miner has
  /// abandoned for a strictly longer cousin branch at round r.
  std::vector<BlockId> dead_branches(Round r) const;
  /// True if every branch through `b` (blocks minted by r) is dead at r.
  /// With a closed source pool only source positions and blocks the pool
  /// can ever see take part: later non-source blocks never join a live
  /// branch.
  bool all_branches_dead(const BlockId& b, Round r) const;

  /// Blocks on every miner's longest branch at round r, genesis first.
  std::vector<BlockId> ground_truth_accepted(Round r) const;
  /// Length of the prefix of ground_truth_accepted(r) whose cousin branches
  /// (minted by r) are all strictly below every miner's position.
  std::size_t settled_prefix(Round r) const;
  /// Deepest block of ground_truth_accepted(r).
  BlockId accepted_frontier(Round r) const;
  /// True if `a` equals or is an ancestor of `b` in the global tree.
  bool on_path(const BlockId& a, const BlockId& b) const;

 private:
  BlockTree::Index lca(BlockTree::Index a, BlockTree::Index b) const;
  std::uint32_t min_position_depth(Round r) const;
  std::uint32_t min_source_position_depth(Round r) const;
  std::uint32_t deepest_under(BlockTree::Index root, Round r, bool visible_only) const;
  bool source_visible(const BlockId& b) const;

  const Trace* trace_;
  BlockTree tree_;
  SubtreeIndex index_;
  std::vector<std::size_t> minted_prefix_;  // minted_prefix_[r]: blocks minted by round r
  std::vector<bool> is_source_;              // empty unless the source pool is closed
};

std::vector<BlockId> dead_branches(const Trace& trace, Round r);
std::vector<BlockId> ground_truth_accepted(const Trace& trace, Round r);

enum class CheckVerdict { pass, fail, inconclusive };
std::string_view to_string(CheckVerdict v);

struct Violation {
  Round round = 0;
  MinerId miner = 0;
  BlockId block;
  std::string what;
};

struct CheckReport {
  std::string check;
  CheckVerdict verdict = CheckVerdict::pass;
  std::vector<Violation> violations;
  std::string detail;

  bool passed() const { return verdict == CheckVerdict::pass; }
};

/// Every confirmed block is on every miner's longest branch at the final
/// round and under every source miner's final position.
CheckReport check_confirmation_validity(const Trace& trace);

/// Every block accepted at round last - slack is confirmed by every miner by
/// the last round. Inconclusive when the run is too short to tell.
CheckReport check_decision_liveness(const Trace& trace, Round slack);

/// 3·PT for kpt; PT + |SM| for ksm.
Round default_liveness_slack(const TraceMeta& meta);

/// Every reject event is backed by the oracle: all branches through the
/// rejected block are dead by the event's round.
CheckReport check_reject_soundness(const Trace& trace);

/// Blocks accepted at the final round form one chain, and those minted from
/// the closure round on were minted inside the source pool.
CheckReport check_source_chain(const Trace& trace);

std::string report_json(const std::vector<CheckReport>& reports);

}  // namespace dynchain
