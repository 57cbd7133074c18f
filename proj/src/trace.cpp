#include "dynchain/trace.hpp"

#include <istream>
#include <ostream>
#include <unordered_set>

#include <fmt/format.h>
#include <json.hpp>

namespace dynchain {

using nlohmann::json;

void validate_trace(const Trace& trace) {
  const Round horizon = trace.horizon();
  const auto n = trace.schedule.miners();
  if (trace.meta.miners != n) throw TraceError("trace: miner count disagrees with schedule");

  std::unordered_set<BlockId, BlockIdHash> minted{BlockId::genesis()};
  Round last = 0;
  for (const MintRecord& m : trace.mints) {
    if (m.round < last || m.round >= horizon) throw TraceError("trace: mints out of round order");
    last = m.round;
    if (m.block.id.round != m.round || m.block.id.miner != m.miner) {
      throw TraceError("trace: mint record disagrees with its block id " + to_string(m.block.id));
    }
    if (!m.block.parent || !minted.contains(*m.block.parent)) {
      throw TraceError("trace: block minted before its parent " + to_string(m.block.id));
    }
    if (!minted.insert(m.block.id).second) throw TraceError("trace: duplicate mint " + to_string(m.block.id));
  }
  auto known = [&](const BlockId& b, Round r, const char* what) {
    if (!minted.contains(b)) throw TraceError(fmt::format("trace: {} of unminted block {}", what, to_string(b)));
    if (r < 0 || r >= horizon) throw TraceError(fmt::format("trace: {} outside the horizon", what));
    if (r < b.round) throw TraceError(fmt::format("trace: {} before mint of {}", what, to_string(b)));
  };
  for (const auto& c : trace.confirmations) known(c.block, c.round, "confirmation");
  for (const auto& rj : trace.rejects) known(rj.block, rj.round, "reject");
  if (static_cast<Round>(trace.positions.size()) != horizon) throw TraceError("trace: position rows != horizon");
  for (Round r = 0; r < horizon; ++r) {
    if (static_cast<std::int32_t>(trace.positions[r].size()) != n) throw TraceError("trace: position row width");
    for (const BlockId& b : trace.positions[r]) known(b, r, "position");
  }
}

namespace {

json id_json(const BlockId& b) { return json::array({b.round, b.miner, b.seq}); }

BlockId id_from(const json& j) {
  return BlockId{j.at(0).get<Round>(), j.at(1).get<MinerId>(), j.at(2).get<std::uint32_t>()};
}

}  // namespace

void write_trace_json(std::ostream& out, const Trace& t) {
  json j;
  j["meta"] = {{"protocol", t.meta.protocol},       {"policy", t.meta.policy},
               {"miners", t.meta.miners},           {"pt", t.meta.pt},
               {"source_miners", t.meta.source_miners}, {"closed_source", t.meta.closed_source},
               {"close_round", t.meta.close_round},
               {"mining_rate", t.meta.mining_rate}, {"mining_until", t.meta.mining_until},
               {"seed", t.meta.seed}};
  json rounds = json::array();
  for (Round r = 0; r < t.horizon(); ++r) {
    json links = json::array();
    for (const Link& l : t.schedule.links_at(r)) links.push_back({l.sender, l.receiver});
    rounds.push_back(std::move(links));
  }
  j["schedule"] = {{"miners", t.schedule.miners()}, {"rounds", std::move(rounds)}};

  // Blocks as (round, miner, seq, parent_round, parent_miner, parent_seq).
  json mints = json::array();
  for (const auto& m : t.mints) {
    const BlockId& p = *m.block.parent;
    mints.push_back({m.block.id.round, m.block.id.miner, m.block.id.seq, p.round, p.miner, p.seq});
  }
  j["mints"] = std::move(mints);

  json deliveries = json::array();
  for (const auto& d : t.deliveries) deliveries.push_back({d.round, d.envelopes, d.blocks, d.max_blocks});
  j["deliveries"] = std::move(deliveries);

  json confirmations = json::array();
  for (const auto& c : t.confirmations) confirmations.push_back({c.round, c.miner, id_json(c.block)});
  j["confirmations"] = std::move(confirmations);

  json rejects = json::array();
  for (const auto& rj : t.rejects) {
    json leaves = json::array();
    for (const auto& l : rj.leaves) leaves.push_back(id_json(l));
    rejects.push_back({rj.round, rj.miner, id_json(rj.block), std::move(leaves)});
  }
  j["rejects"] = std::move(rejects);

  json positions = json::array();
  for (const auto& row : t.positions) {
    json jr = json::array();
    for (const auto& b : row) jr.push_back(id_json(b));
    positions.push_back(std::move(jr));
  }
  j["positions"] = std::move(positions);
  out << j.dump() << '\n';
}

Trace read_trace_json(std::istream& in) {
  Trace t;
  try {
    const json j = json::parse(in);
    const json& meta = j.at("meta");
    t.meta.protocol = meta.at("protocol").get<std::string>();
    t.meta.policy = meta.at("policy").get<std::string>();
    t.meta.miners = meta.at("miners").get<std::int32_t>();
    t.meta.pt = meta.at("pt").get<Round>();
    t.meta.source_miners = meta.at("source_miners").get<std::vector<MinerId>>();
    t.meta.closed_source = meta.at("closed_source").get<bool>();
    t.meta.close_round = meta.at("close_round").get<Round>();
    t.meta.mining_rate = meta.at("mining_rate").get<double>();
    t.meta.mining_until = meta.at("mining_until").get<Round>();
    t.meta.seed = meta.at("seed").get<std::uint64_t>();

    const json& sched = j.at("schedule");
    const json& rounds = sched.at("rounds");
    t.schedule = LinkSchedule(sched.at("miners").get<std::int32_t>(), static_cast<Round>(rounds.size()));
    for (std::size_t r = 0; r < rounds.size(); ++r) {
      std::vector<Link> links;
      for (const json& l : rounds[r]) links.push_back({l.at(0).get<MinerId>(), l.at(1).get<MinerId>()});
      t.schedule.set_links(static_cast<Round>(r), std::move(links));
    }
    for (const json& m : j.at("mints")) {
      const BlockId id{m.at(0).get<Round>(), m.at(1).get<MinerId>(), m.at(2).get<std::uint32_t>()};
      const BlockId parent{m.at(3).get<Round>(), m.at(4).get<MinerId>(), m.at(5).get<std::uint32_t>()};
      t.mints.push_back(MintRecord{id.round, id.miner, Block{id, parent, 0}});
    }
    for (const json& d : j.at("deliveries")) {
      t.deliveries.push_back({d.at(0).get<Round>(), d.at(1).get<std::uint64_t>(), d.at(2).get<std::uint64_t>(),
                              d.at(3).get<std::size_t>()});
    }
    for (const json& c : j.at("confirmations")) {
      t.confirmations.push_back({c.at(0).get<Round>(), c.at(1).get<MinerId>(), id_from(c.at(2))});
    }
    for (const json& rj : j.at("rejects")) {
      RejectRecord rec{rj.at(0).get<Round>(), rj.at(1).get<MinerId>(), id_from(rj.at(2)), {}};
      for (const json& l : rj.at(3)) rec.leaves.push_back(id_from(l));
      t.rejects.push_back(std::move(rec));
    }
    for (const json& row : j.at("positions")) {
      std::vector<BlockId> ids;
      ids.reserve(row.size());
      for (const json& b : row) ids.push_back(id_from(b));
      t.positions.push_back(std::move(ids));
    }
  } catch (const json::exception& e) {
    throw TraceError(fmt::format("trace: malformed JSON ({})", e.what()));
  }
  // Depths are not serialized; recompute them from the parent links.
  std::unordered_map<BlockId, std::uint32_t, BlockIdHash> depth{{BlockId::genesis(), 0}};
  for (auto& m : t.mints) {
    auto it = depth.find(*m.block.parent);
    if (it == depth.end()) throw TraceError("trace: block minted before its parent " + to_string(m.block.id));
    m.block.depth = it->second + 1;
    depth.emplace(m.block.id, m.block.depth);
  }
  validate_trace(t);
  return t;
}

}  // namespace dynchain
