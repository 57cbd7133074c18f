#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <variant>
#include <vector>

#include "dynchain/chain.hpp"
#include "dynchain/network.hpp"

namespace dynchain {

enum class Verdict { accept, reject };

enum class MessagePolicy { full_tree, longest_branch, deepest_unsent };

enum class ProtocolKind { base, kpt, ksm, naive };

std::string_view to_string(MessagePolicy p);
std::string_view to_string(ProtocolKind p);
MessagePolicy parse_message_policy(std::string_view s);
ProtocolKind parse_protocol(std::string_view s);

struct Label {
  BlockId block;
  Verdict verdict = Verdict::accept;

  friend bool operator==(const Label&, const Label&) = default;
};

/// Where a source miner was last reported to be mining. `depth` travels with
/// the record so it can be compared before the block itself arrives.
struct PositionRecord {
  MinerId miner = 0;
  BlockId block;
  std::uint32_t depth = 0;

  friend bool operator==(const PositionRecord&, const PositionRecord&) = default;
};

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Keeps, per miner, the deeper of the two records; ties go to the larger
/// BlockId so the result does not depend on argument order. Throws
/// ProtocolError for a record about a miner outside `source_miners`.
std::vector<PositionRecord> merge_positions(const std::vector<PositionRecord>& mine,
                                            const std::vector<PositionRecord>& theirs,
                                            const std::vector<MinerId>& source_miners);

/// Known source pool propagation time.
struct KptConfig {
  Round pt = 1;
  /// Reject PT rounds after a cousin is first seen outgrowing the branch,
  /// instead of 2·PT.
  bool stamped_reject = false;
  /// No reject evidence is accumulated before this round.
  Round close_round = 0;
  /// Hold back acceptance of a block until 2·PT rounds after its mint, so a
  /// cousin still in flight cannot be missed. Off gives the bare cousin rule.
  bool accept_guard = true;
};

/// Known source pool membership.
struct KsmConfig {
  std::vector<MinerId> source_miners;
  bool nonsource_mines = true;
  Round close_round = 0;
  /// Accept only once every source position is known and lies on top of
  /// the block. Off gives the bare cousin rule.
  bool accept_guard = true;
};

/// Baseline that confirms a block as soon as every miner whose position it
/// has heard of is mining on top of it. Unsound in dynamic networks; kept as
/// the comparison point for the late-source-pool scenario.
struct NaiveConfig {};

using DecisionRule = std::variant<std::monostate, KptConfig, KsmConfig, NaiveConfig>;

struct MinerConfig {
  MinerId self_id = 0;
  std::int32_t network_size = 1;
  double mining_rate = 0.0;
  MessagePolicy policy = MessagePolicy::full_tree;
  DecisionRule rule;
  /// Piggyback the label set on messages (full-tree and longest-branch only).
  bool label_gossip = false;
  /// Seed of the mining lottery; see mint_draw().
  std::uint64_t seed = 0;
  /// Miners stop mining from this round on.
  Round mining_until = std::numeric_limits<Round>::max();

  ProtocolKind protocol() const;
  /// Throws ProtocolError on an inconsistent configuration.
  void validate() const;
};

/// Uniform draw in [0, 1) that depends only on (seed, round, miner), so the
/// lottery outcome is identical across protocols and message policies.
double mint_draw(std::uint64_t seed, Round round, MinerId miner);

/// What travels over one link in one round. Which fields are populated
/// depends on the message policy; see Miner::make_message.
struct Message {
  /// Full tree: the sender's insertion log, of which the first `count`
  /// entries belong to this message. Longest branch: the genesis-to-tip path.
  std::shared_ptr<const std::vector<Block>> blocks;
  std::size_t count = 0;
  bool is_log = false;
  /// Deepest-unsent policy: at most one block.
  std::optional<Block> single;
  std::shared_ptr<const std::vector<PositionRecord>> positions;
  std::shared_ptr<const std::vector<Label>> labels;

  std::size_t block_count() const { return count + (single ? 1 : 0); }

  /// A longest-branch style message carrying exactly `blocks`, in order.
  static Message of_blocks(std::vector<Block> blocks);
};

struct RejectEvent {
  Round round = 0;
  BlockId block;
  /// Leaves of the local branches through `block` when it was rejected.
  std::vector<BlockId> leaves;
};

/// Everything a miner did since the last drain, for the run trace.
struct MinerEvents {
  std::vector<Block> mints;
  std::vector<std::pair<Round, BlockId>> arrivals;
  std::vector<std::pair<Round, BlockId>> confirmations;
  std::vector<RejectEvent> rejects;
};

struct MinerState {
  BlockTree tree;
  std::map<BlockId, Verdict> labels;
  /// Indexed by miner id; empty slots are unknown positions.
  std::vector<std::optional<PositionRecord>> positions;
  /// Per unlabeled block, per local leaf under it: round since which the
  /// branch has been continuously outgrown by a cousin.
  std::map<BlockId, std::map<BlockId, Round>> reject_timers;
  std::vector<std::pair<BlockId, Round>> confirmed;
};

/// One miner's state machine: base mining plus one of the decision rules.
/// Each round: merge what arrived, maybe mine on the tip, update the own
/// position, then label and confirm.
class Miner {
 public:
  using Message = dynchain::Message;

  explicit Miner(MinerConfig config);

  void on_round(std::vector<Envelope<Message>>& inbox, Round r);
  /// Same as on_round; returns the blocks confirmed this round.
  std::vector<BlockId> handle_round(std::span<const Envelope<Message>> inbox, Round r);
  Message make_message(MinerId peer, Round r);
  static std::size_t payload_blocks(const Message& m) { return m.block_count(); }

  /// Lottery for round r; on success extends the tip and returns the block.
  std::optional<BlockId> mine_attempt(Round r);
  /// Adds a block minted elsewhere, as though it had arrived in round r.
  void receive(const Message& msg, MinerId from, Round r);

  const MinerConfig& config() const { return config_; }
  const MinerState& state() const { return state_; }
  bool is_source() const { return is_source_; }
  std::optional<Verdict> label(const BlockId& b) const;
  /// Blocks received whose ancestors have not arrived yet.
  std::size_t orphan_count() const { return orphan_count_; }

  MinerEvents drain_events();

 private:
  void accept_block(const Block& b, Round r);
  void decide(Round r);
  void scan_kpt(const KptConfig& kpt, const SubtreeIndex& index, Round r);
  void scan_ksm(const SubtreeIndex& index, Round r);
  void accept_scan(const SubtreeIndex& index, Round r);
  // Per tree index: 0 unlabeled, 1 accepted, 2 rejected.
  std::vector<char> label_marks() const;
  void reject(const BlockId& b, std::vector<BlockId> leaves, Round r);
  void confirm(const BlockId& b, Round r);
  void set_own_position();
  void store_position(const PositionRecord& rec);
  std::optional<std::int64_t> min_source_depth() const;
  bool tracks_positions() const;
  std::optional<PositionRecord> next_position_for(MinerId peer);

  MinerConfig config_;
  MinerState state_;
  bool is_source_ = true;
  std::vector<MinerId> tracked_;  // miners whose positions are gossiped

  // Full-tree policy: append-only copy of the tree in insertion order, and
  // how much of each peer's log has been merged already.
  std::shared_ptr<std::vector<Block>> log_;
  std::vector<std::size_t> log_seen_;

  // Deepest-unsent policy bookkeeping, per peer.
  struct PeerLog {
    bool initialised = false;
    std::set<std::pair<std::int64_t, BlockId>> unsent;  // (-depth, id)
    std::vector<std::optional<PositionRecord>> sent_positions;
    std::size_t position_cursor = 0;
  };
  std::vector<PeerLog> peers_;

  std::map<BlockId, std::vector<Block>> orphans_;  // keyed by missing parent
  std::size_t orphan_count_ = 0;

  // Per-round message caches.
  Round cache_round_ = -1;
  std::shared_ptr<const std::vector<Block>> branch_cache_;
  std::shared_ptr<const std::vector<PositionRecord>> position_cache_;
  std::shared_ptr<const std::vector<Label>> label_cache_;

  MinerEvents events_;
};

}  // namespace dynchain
