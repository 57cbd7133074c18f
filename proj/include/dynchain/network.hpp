#pragma once

#include <algorithm>
#include <compare>
#include <concepts>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dynchain/chain.hpp"

namespace dynchain {

struct Link {
  MinerId sender = 0;
  MinerId receiver = 0;

  friend auto operator<=>(const Link&, const Link&) = default;
};

class ScheduleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The dynamic network: for every round, the set of directed links that
/// exist in it. Links within a round are kept sorted and unique.
class LinkSchedule {
 public:
  LinkSchedule() = default;
  LinkSchedule(std::int32_t miners, Round horizon);

  std::int32_t miners() const { return miners_; }
  Round horizon() const { return static_cast<Round>(rounds_.size()); }

  /// Throws ScheduleError when r is outside [0, horizon).
  std::span<const Link> links_at(Round r) const;

  /// Replaces the link set of round r. Throws on self-links or unknown miners.
  void set_links(Round r, std::vector<Link> links);
  void add_link(Round r, Link link);

  /// Copy restricted to the first `horizon` rounds.
  LinkSchedule truncated(Round horizon) const;

  std::size_t link_count() const;

  friend bool operator==(const LinkSchedule&, const LinkSchedule&) = default;

 private:
  void validate(const Link& link) const;

  std::int32_t miners_ = 0;
  std::vector<std::vector<Link>> rounds_;
};

/// Independent seed number `k` derived from a master seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t k);

/// Complete directed graph on `miners` for every round.
LinkSchedule complete_schedule(std::int32_t miners, Round horizon);

/// Flat record stream `round,sender,receiver`, one line per link, preceded by
/// a header line `miners,horizon` with the values on the next line.
void write_schedule_csv(std::ostream& out, const LinkSchedule& schedule);
LinkSchedule read_schedule_csv(std::istream& in);

/// Earliest round at which each miner can hold a message that `from` holds at
/// round `start`. A hop over a link existing in round r lands in round r + 1.
/// Unreachable miners are absent.
std::map<MinerId, Round> journey_earliest_arrival(const LinkSchedule& schedule, MinerId from,
                                                  Round start);

template <class Payload>
struct Envelope {
  MinerId sender = 0;
  Payload payload;
  Round sent_round = 0;
};

/// Optional per-envelope extra latency, uniform on [0, max_extra] rounds.
struct DelayConfig {
  Round max_extra = 0;
  std::uint64_t seed = 0;
};

/// What the engine needs from a node type: consume a round's inbox, then
/// produce one message per outgoing link.
template <class Node>
concept RoundNode = requires(Node& node, const Node& cnode,
                             std::vector<Envelope<typename Node::Message>>& inbox, Round r,
                             MinerId peer, const typename Node::Message& msg) {
  { node.on_round(inbox, r) };
  { node.make_message(peer, r) } -> std::same_as<typename Node::Message>;
  { Node::payload_blocks(msg) } -> std::convertible_to<std::size_t>;
};

struct EngineStats {
  std::uint64_t envelopes = 0;
  std::uint64_t blocks_sent = 0;
  std::size_t max_msg_blocks = 0;
};

/// Round-synchronous driver. In round r every node first processes what was
/// sent to it for delivery in r, then one envelope is produced per link in
/// links_at(r), delivered at r + 1 plus any configured delay.
template <RoundNode Node>
class Engine {
 public:
  using Message = typename Node::Message;

  Engine(const LinkSchedule& schedule, std::vector<Node> nodes, DelayConfig delay = {})
      : schedule_(&schedule), nodes_(std::move(nodes)), delay_(delay), rng_(delay.seed) {
    if (static_cast<std::int32_t>(nodes_.size()) != schedule.miners()) {
      throw ScheduleError("node count does not match schedule");
    }
  }

  Round round() const { return next_round_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  std::vector<Node>& nodes() { return nodes_; }
  const EngineStats& stats() const { return stats_; }
  /// Envelopes produced by the most recent step alone.
  const EngineStats& last_step() const { return last_; }

  /// Runs round `round()` and advances.
  void step() {
    const Round r = next_round_;
    auto due = pending_.extract(r);
    std::vector<std::vector<Envelope<Message>>> inboxes(nodes_.size());
    if (!due.empty()) {
      for (auto& [receiver, env] : due.mapped()) inboxes[receiver].push_back(std::move(env));
    }
    for (std::size_t m = 0; m < nodes_.size(); ++m) nodes_[m].on_round(inboxes[m], r);

    last_ = {};

    if (r < schedule_->horizon()) {
      for (const Link& link : schedule_->links_at(r)) {
        Message msg = nodes_[link.sender].make_message(link.receiver, r);
        const std::size_t blocks = Node::payload_blocks(msg);
        for (EngineStats* s : {&stats_, &last_}) {
          ++s->envelopes;
          s->blocks_sent += blocks;
          s->max_msg_blocks = std::max(s->max_msg_blocks, blocks);
        }
        Round arrive = r + 1;
        if (delay_.max_extra > 0) {
          arrive += std::uniform_int_distribution<Round>(0, delay_.max_extra)(rng_);
        }
        pending_[arrive].emplace_back(link.receiver, Envelope<Message>{link.sender, std::move(msg), r});
      }
    }
    ++next_round_;
  }

  void run_until(Round end) {
    while (next_round_ < end) step();
  }

  std::size_t in_flight() const {
    std::size_t n = 0;
    for (const auto& [r, list] : pending_) n += list.size();
    return n;
  }

 private:
  const LinkSchedule* schedule_;
  std::vector<Node> nodes_;
  DelayConfig delay_;
  std::mt19937_64 rng_;
  // Appended in send order, so each inbox is ordered by send round, then
  // sender.
  std::map<Round, std::vector<std::pair<MinerId, Envelope<Message>>>> pending_;
  EngineStats stats_;
  EngineStats last_;
  Round next_round_ = 0;
};

}  // namespace dynchain
