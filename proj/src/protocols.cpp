#include "dynchain/protocols.hpp"

#include <algorithm>

#include <fmt/format.h>

namespace dynchain {

std::string_view to_string(MessagePolicy p) {
  switch (p) {
    case MessagePolicy::full_tree: return "full-tree";
    case MessagePolicy::longest_branch: return "longest-branch";
    case MessagePolicy::deepest_unsent: return "deepest-unsent";
  }
  return "?";
}

std::string_view to_string(ProtocolKind p) {
  switch (p) {
    case ProtocolKind::base: return "base";
    case ProtocolKind::kpt: return "kpt";
    case ProtocolKind::ksm: return "ksm";
    case ProtocolKind::naive: return "naive";
  }
  return "?";
}

MessagePolicy parse_message_policy(std::string_view s) {
  for (auto p : {MessagePolicy::full_tree, MessagePolicy::longest_branch, MessagePolicy::deepest_unsent}) {
    if (to_string(p) == s) return p;
  }
  throw ProtocolError(fmt::format("unknown message policy '{}'", s));
}

ProtocolKind parse_protocol(std::string_view s) {
  for (auto p : {ProtocolKind::base, ProtocolKind::kpt, ProtocolKind::ksm, ProtocolKind::naive}) {
    if (to_string(p) == s) return p;
  }
  throw ProtocolError(fmt::format("unknown protocol '{}'", s));
}

namespace {

bool deeper(const PositionRecord& a, const PositionRecord& b) {
  return std::tie(a.depth, a.block) > std::tie(b.depth, b.block);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

std::vector<PositionRecord> merge_positions(const std::vector<PositionRecord>& mine,
                                            const std::vector<PositionRecord>& theirs,
                                            const std::vector<MinerId>& source_miners) {
  std::map<MinerId, PositionRecord> best;
  for (const auto* side : {&mine, &theirs}) {
    for (const PositionRecord& rec : *side) {
      if (std::find(source_miners.begin(), source_miners.end(), rec.miner) == source_miners.end()) {
        throw ProtocolError(fmt::format("position record for miner {} outside the source pool", rec.miner));
      }
      auto [it, fresh] = best.try_emplace(rec.miner, rec);
      if (!fresh && deeper(rec, it->second)) it->second = rec;
    }
  }
  std::vector<PositionRecord> out;
  out.reserve(best.size());
  for (auto& [m, rec] : best) out.push_back(rec);
  return out;
}

double mint_draw(std::uint64_t seed, Round round, MinerId miner) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(round));
  h = splitmix64(h ^ (static_cast<std::uint64_t>(static_cast<std::uint32_t>(miner)) << 1));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

ProtocolKind MinerConfig::protocol() const {
  switch (rule.index()) {
    case 1: return ProtocolKind::kpt;
    case 2: return ProtocolKind::ksm;
    case 3: return ProtocolKind::naive;
    default: return ProtocolKind::base;
  }
}

void MinerConfig::validate() const {
  if (network_size < 1) throw ProtocolError("network size must be positive");
  if (self_id < 0 || self_id >= network_size) {
    throw ProtocolError(fmt::format("miner id {} outside network of {}", self_id, network_size));
  }
  if (!(mining_rate >= 0.0 && mining_rate <= 1.0)) {
    throw ProtocolError(fmt::format("mining rate {} outside [0, 1]", mining_rate));
  }
  if (label_gossip && policy == MessagePolicy::deepest_unsent) {
    throw ProtocolError("label gossip would break constant-size messages");
  }
  if (const auto* kpt = std::get_if<KptConfig>(&rule)) {
    if (kpt->pt < 1) throw ProtocolError("PT must be at least 1");
    if (kpt->close_round < 0) throw ProtocolError("close round must be non-negative");
  }
  if (const auto* ksm = std::get_if<KsmConfig>(&rule)) {
    if (ksm->source_miners.empty()) throw ProtocolError("source pool must not be empty");
    auto sorted = ksm->source_miners;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw ProtocolError("duplicate source miner");
    }
    if (sorted.front() < 0 || sorted.back() >= network_size) {
      throw ProtocolError("source miner outside the network");
    }
    if (ksm->close_round < 0) throw ProtocolError("close round must be non-negative");
  }
}

Message Message::of_blocks(std::vector<Block> blocks) {
  Message m;
  m.count = blocks.size();
  m.blocks = std::make_shared<const std::vector<Block>>(std::move(blocks));
  return m;
}

Miner::Miner(MinerConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto n = static_cast<std::size_t>(config_.network_size);
  state_.positions.resize(n);
  if (const auto* ksm = std::get_if<KsmConfig>(&config_.rule)) {
    tracked_ = ksm->source_miners;
    std::sort(tracked_.begin(), tracked_.end());
    is_source_ = std::binary_search(tracked_.begin(), tracked_.end(), config_.self_id);
  } else if (std::holds_alternative<NaiveConfig>(config_.rule)) {
    for (MinerId m = 0; m < config_.network_size; ++m) tracked_.push_back(m);
  }
  log_ = std::make_shared<std::vector<Block>>();
  log_->push_back(state_.tree.at(BlockId::genesis()));
  log_seen_.assign(n, 0);
  peers_.resize(n);
  set_own_position();
}

bool Miner::tracks_positions() const { return !tracked_.empty(); }

std::optional<Verdict> Miner::label(const BlockId& b) const {
  auto it = state_.labels.find(b);
  if (it == state_.labels.end()) return std::nullopt;
  return it->second;
}

void Miner::accept_block(const Block& b, Round r) {
  if (state_.tree.contains(b.id)) {
    state_.tree.insert(b);  // checks parent consistency
    return;
  }
  if (!b.parent || !state_.tree.contains(*b.parent)) {
    if (!b.parent) throw ChainError(ChainError::Code::conflicting_parent, "second root");
    auto& waiting = orphans_[*b.parent];
    if (std::find(waiting.begin(), waiting.end(), b) == waiting.end()) {
      waiting.push_back(b);
      ++orphan_count_;
    }
    return;
  }
  std::vector<Block> ready{b};
  while (!ready.empty()) {
    Block blk = ready.back();
    ready.pop_back();
    if (!state_.tree.insert(blk)) continue;
    log_->push_back(state_.tree.at(blk.id));
    events_.arrivals.emplace_back(r, blk.id);
    for (auto& peer : peers_) {
      if (peer.initialised) peer.unsent.emplace(-static_cast<std::int64_t>(blk.depth), blk.id);
    }
    if (auto it = orphans_.find(blk.id); it != orphans_.end()) {
      orphan_count_ -= it->second.size();
      ready.insert(ready.end(), it->second.begin(), it->second.end());
      orphans_.erase(it);
    }
  }
}

void Miner::store_position(const PositionRecord& rec) {
  if (rec.miner < 0 || rec.miner >= config_.network_size ||
      !std::binary_search(tracked_.begin(), tracked_.end(), rec.miner)) {
    throw ProtocolError(fmt::format("position record for untracked miner {}", rec.miner));
  }
  if (rec.miner == config_.self_id) return;  // own entry is authoritative
  auto& slot = state_.positions[rec.miner];
  if (!slot || deeper(rec, *slot)) slot = rec;
}

void Miner::set_own_position() {
  if (!tracks_positions() || !is_source_) return;
  if (!std::binary_search(tracked_.begin(), tracked_.end(), config_.self_id)) return;
  const BlockId& tip = state_.tree.tip();
  state_.positions[config_.self_id] = PositionRecord{config_.self_id, tip, state_.tree.depth(tip)};
}

void Miner::receive(const Message& msg, MinerId from, Round r) {
  if (msg.blocks) {
    const auto& blocks = *msg.blocks;
    if (msg.is_log) {
      auto& seen = log_seen_[from];
      for (std::size_t i = seen; i < msg.count; ++i) accept_block(blocks[i], r);
      seen = std::max(seen, msg.count);
    } else {
      // Walk back from the tip to the first block already held.
      std::size_t k = msg.count;
      while (k > 0 && !state_.tree.contains(blocks[k - 1].id)) --k;
      for (std::size_t i = k; i < msg.count; ++i) accept_block(blocks[i], r);
    }
  }
  if (msg.single) accept_block(*msg.single, r);
  if (msg.positions) {
    for (const PositionRecord& rec : *msg.positions) store_position(rec);
  }
  if (msg.labels) {
    for (const Label& l : *msg.labels) {
      if (!state_.tree.contains(l.block) || state_.labels.contains(l.block)) continue;
      if (l.verdict == Verdict::reject) {
        state_.labels.emplace(l.block, Verdict::reject);
        state_.reject_timers.erase(l.block);
      } else {
        confirm(l.block, r);
      }
    }
  }
}

std::optional<BlockId> Miner::mine_attempt(Round r) {
  if (r >= config_.mining_until) return std::nullopt;
  if (const auto* ksm = std::get_if<KsmConfig>(&config_.rule); ksm && !is_source_ && !ksm->nonsource_mines) {
    return std::nullopt;
  }
  if (!(mint_draw(config_.seed, r, config_.self_id) < config_.mining_rate)) return std::nullopt;
  std::uint32_t seq = 0;
  while (state_.tree.contains(BlockId{r, config_.self_id, seq})) ++seq;
  const BlockId id{r, config_.self_id, seq};
  const BlockId parent = state_.tree.tip();
  const Block blk{id, parent, state_.tree.depth(parent) + 1};
  accept_block(blk, r);
  events_.mints.push_back(blk);
  return id;
}

std::vector<BlockId> Miner::handle_round(std::span<const Envelope<Message>> inbox, Round r) {
  const auto before = events_.confirmations.size();
  for (const auto& env : inbox) receive(env.payload, env.sender, r);
  mine_attempt(r);
  set_own_position();
  decide(r);
  std::vector<BlockId> out;
  for (auto i = before; i < events_.confirmations.size(); ++i) out.push_back(events_.confirmations[i].second);
  return out;
}

void Miner::on_round(std::vector<Envelope<Message>>& inbox, Round r) { handle_round(inbox, r); }

void Miner::decide(Round r) {
  if (std::holds_alternative<std::monostate>(config_.rule)) return;
  if (const auto* kpt = std::get_if<KptConfig>(&config_.rule)) {
    if (r < kpt->close_round) return;
    SubtreeIndex index(state_.tree);
    scan_kpt(*kpt, index, r);
    accept_scan(index, r);
  } else if (const auto* ksm = std::get_if<KsmConfig>(&config_.rule)) {
    if (r < ksm->close_round) return;
    SubtreeIndex index(state_.tree);
    scan_ksm(index, r);
    accept_scan(index, r);
  } else {
    SubtreeIndex index(state_.tree);
    accept_scan(index, r);
  }
}

void Miner::reject(const BlockId& b, std::vector<BlockId> leaves, Round r) {
  state_.labels.emplace(b, Verdict::reject);
  state_.reject_timers.erase(b);
  events_.rejects.push_back(RejectEvent{r, b, std::move(leaves)});
}

void Miner::confirm(const BlockId& b, Round r) {
  state_.labels.emplace(b, Verdict::accept);
  state_.confirmed.emplace_back(b, r);
  events_.confirmations.emplace_back(r, b);
}

void Miner::scan_kpt(const KptConfig& kpt, const SubtreeIndex& index, Round r) {
  const BlockTree& tree = state_.tree;
  std::map<BlockId, std::map<BlockId, Round>> timers;
  const auto labeled = label_marks();
  for (BlockTree::Index i : index.order()) {
    if (i == 0 || labeled[i]) continue;
    const Block& b1 = tree.at_index(i);

    const auto witness = index.deepest_outside(i);
    const std::int64_t outside = witness ? tree.at_index(*witness).depth : -1;
    const auto leaves = index.leaves_under(i);
    const auto old = state_.reject_timers.find(b1.id);

    std::map<BlockId, Round> current;
    bool ripe = true;
    for (BlockTree::Index leaf : leaves) {
      const Block& lb = tree.at_index(leaf);
      if (outside <= static_cast<std::int64_t>(lb.depth)) {
        ripe = false;
        continue;
      }
      Round onset = r;
      if (old != state_.reject_timers.end()) {
        if (auto t = old->second.find(lb.id); t != old->second.end()) onset = t->second;
      }
      current.emplace(lb.id, onset);
      const Round due = onset + (kpt.stamped_reject ? kpt.pt : 2 * kpt.pt);
      if (r < due) ripe = false;
    }
    if (ripe) {
      std::vector<BlockId> ids;
      for (auto leaf : leaves) ids.push_back(tree.at_index(leaf).id);
      state_.labels.emplace(b1.id, Verdict::reject);
      events_.rejects.push_back(RejectEvent{r, b1.id, std::move(ids)});
    } else if (!current.empty()) {
      timers.emplace(b1.id, std::move(current));
    }
  }
  state_.reject_timers = std::move(timers);
}

std::optional<std::int64_t> Miner::min_source_depth() const {
  std::int64_t lowest = std::numeric_limits<std::int64_t>::max();
  for (MinerId m : tracked_) {
    const auto& slot = state_.positions[m];
    if (!slot || !state_.tree.contains(slot->block)) return std::nullopt;
    lowest = std::min<std::int64_t>(lowest, slot->depth);
  }
  return lowest;
}

void Miner::scan_ksm(const SubtreeIndex& index, Round r) {
  const auto floor = min_source_depth();
  if (!floor) return;
  const BlockTree& tree = state_.tree;
  const auto labeled = label_marks();
  for (BlockTree::Index i : index.order()) {
    if (i == 0 || labeled[i]) continue;
    const Block& b1 = tree.at_index(i);
    if (*floor > static_cast<std::int64_t>(index.max_depth_inside(i))) {
      std::vector<BlockId> ids;
      for (auto leaf : index.leaves_under(i)) ids.push_back(tree.at_index(leaf).id);
      reject(b1.id, std::move(ids), r);
    }
  }
}

std::vector<char> Miner::label_marks() const {
  std::vector<char> marks(state_.tree.size(), 0);
  for (const auto& [id, verdict] : state_.labels) {
    if (auto idx = state_.tree.index_of(id)) marks[*idx] = verdict == Verdict::reject ? 2 : 1;
  }
  return marks;
}

void Miner::accept_scan(const SubtreeIndex& index, Round r) {
  const BlockTree& tree = state_.tree;
  const auto n = tree.size();
  const auto order = index.order();

  // Blocks not labeled reject; an unlabeled b may be accepted only if every
  // such block is an ancestor or descendant of b.
  const auto labeled = label_marks();
  std::vector<std::uint32_t> live(n, 0), prefix(n + 1, 0), above(n, 0);
  for (BlockTree::Index i = 0; i < n; ++i) live[i] = labeled[i] != 2;
  for (std::size_t k = 0; k < n; ++k) {
    const auto i = order[k];
    prefix[k + 1] = prefix[k] + live[i];
    if (i != 0) {
      const auto p = tree.parent_index(i);
      above[i] = above[p] + live[p];
    }
  }
  const auto total_live = prefix[n];

  std::vector<BlockTree::Index> known_positions;
  for (MinerId m : tracked_) {
    const auto& slot = state_.positions[m];
    if (slot) {
      if (auto idx = tree.index_of(slot->block)) known_positions.push_back(*idx);
    }
  }

  std::vector<BlockId> accepted;
  for (BlockTree::Index i : order) {
    const Block& b = tree.at_index(i);
    if (labeled[i]) continue;
    const bool genesis = (i == 0);
    const auto on_positions = [&] {
      return std::all_of(known_positions.begin(), known_positions.end(),
                         [&](BlockTree::Index p) { return index.in_subtree(i, p); });
    };

    if (std::holds_alternative<NaiveConfig>(config_.rule)) {
      if (on_positions()) accepted.push_back(b.id);
      continue;
    }
    const auto related = above[i] + (prefix[index.exit(i)] - prefix[index.enter(i)]);
    if (related != total_live) continue;
    if (!genesis) {
      if (const auto* kpt = std::get_if<KptConfig>(&config_.rule)) {
        if (kpt->accept_guard && r - b.id.round < 2 * kpt->pt) continue;
      } else if (const auto* ksm = std::get_if<KsmConfig>(&config_.rule); ksm && ksm->accept_guard) {
        // Every source miner must be known to mine on top of b.
        if (known_positions.size() != tracked_.size() || !on_positions()) continue;
      }
    }
    accepted.push_back(b.id);
  }
  for (const BlockId& b : accepted) confirm(b, r);
}

std::optional<PositionRecord> Miner::next_position_for(MinerId peer) {
  auto& pl = peers_[peer];
  // Our own record first: nobody else can have it fresher.
  if (is_source_) {
    const auto& own = state_.positions[config_.self_id];
    if (own && pl.sent_positions[config_.self_id] != own) {
      pl.sent_positions[config_.self_id] = own;
      return own;
    }
  }
  const auto count = tracked_.size();
  for (std::size_t j = 0; j < count; ++j) {
    const auto slot_index = (pl.position_cursor + j) % count;
    const MinerId m = tracked_[slot_index];
    const auto& current = state_.positions[m];
    if (current && pl.sent_positions[m] != current) {
      pl.sent_positions[m] = current;
      pl.position_cursor = (slot_index + 1) % count;
      return current;
    }
  }
  return std::nullopt;
}

Message Miner::make_message(MinerId peer, Round r) {
  if (cache_round_ != r) {
    cache_round_ = r;
    branch_cache_.reset();
    position_cache_.reset();
    label_cache_.reset();
  }
  Message msg;
  switch (config_.policy) {
    case MessagePolicy::full_tree:
      msg.blocks = log_;
      msg.count = log_->size();
      msg.is_log = true;
      break;
    case MessagePolicy::longest_branch: {
      if (!branch_cache_) {
        std::vector<Block> path;
        for (const BlockId& id : state_.tree.branch_to(state_.tree.tip()).path) path.push_back(state_.tree.at(id));
        branch_cache_ = std::make_shared<const std::vector<Block>>(std::move(path));
      }
      msg.blocks = branch_cache_;
      msg.count = branch_cache_->size();
      break;
    }
    case MessagePolicy::deepest_unsent: {
      auto& pl = peers_[peer];
      if (!pl.initialised) {
        pl.initialised = true;
        pl.sent_positions.resize(static_cast<std::size_t>(config_.network_size));
        for (const Block& b : state_.tree.blocks()) {
          if (!b.id.is_genesis()) pl.unsent.emplace(-static_cast<std::int64_t>(b.depth), b.id);
        }
      }
      if (!pl.unsent.empty()) {
        msg.single = state_.tree.at(pl.unsent.begin()->second);
        pl.unsent.erase(pl.unsent.begin());
      }
      break;
    }
  }

  if (tracks_positions()) {
    if (config_.policy == MessagePolicy::deepest_unsent) {
      if (auto rec = next_position_for(peer)) {
        msg.positions = std::make_shared<const std::vector<PositionRecord>>(1, *rec);
      }
    } else {
      if (!position_cache_) {
        std::vector<PositionRecord> known;
        for (MinerId m : tracked_) {
          if (state_.positions[m]) known.push_back(*state_.positions[m]);
        }
        position_cache_ = std::make_shared<const std::vector<PositionRecord>>(std::move(known));
      }
      msg.positions = position_cache_;
    }
  }
  if (config_.label_gossip) {
    if (!label_cache_) {
      std::vector<Label> labels;
      for (const auto& [b, v] : state_.labels) labels.push_back({b, v});
      label_cache_ = std::make_shared<const std::vector<Label>>(std::move(labels));
    }
    msg.labels = label_cache_;
  }
  return msg;
}

MinerEvents Miner::drain_events() { return std::exchange(events_, MinerEvents{}); }

}  // namespace dynchain
