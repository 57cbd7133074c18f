#include "dynchain/oracle.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <set>
#include <unordered_set>

#include <boost/dynamic_bitset.hpp>
#include <boost/graph/adjacency_list.hpp>
#include <boost/graph/strong_components.hpp>
#include <fmt/format.h>
#include <json.hpp>

namespace dynchain {

namespace {

using Bits = boost::dynamic_bitset<>;

// reach[x] holds the origins whose message x holds. One round of flooding
// over the links of round r.
void flood_round(const LinkSchedule& schedule, Round r, std::vector<Bits>& reach) {
  std::vector<std::pair<MinerId, Bits>> updates;
  for (const Link& l : schedule.links_at(r)) {
    const Bits& from = reach[l.sender];
    if (!from.is_subset_of(reach[l.receiver])) updates.emplace_back(l.receiver, from);
  }
  for (auto& [m, bits] : updates) reach[m] |= bits;
}

// Completion round (first round by which every miner holds it) per origin, or
// nullopt for origins that do not complete before the horizon.
std::vector<std::optional<Round>> flood_completion(const LinkSchedule& schedule,
                                                   const std::vector<MinerId>& sources, Round start) {
  const auto n = static_cast<std::size_t>(schedule.miners());
  const auto k = sources.size();
  std::vector<Bits> reach(n, Bits(k));
  for (std::size_t i = 0; i < k; ++i) reach[sources[i]].set(i);
  std::vector<std::optional<Round>> done(k);
  std::size_t remaining = k;
  auto settle = [&](Round at) {
    Bits all(k);
    all.set();
    for (const Bits& b : reach) all &= b;
    for (std::size_t i = 0; i < k; ++i) {
      if (all[i] && !done[i]) {
        done[i] = at;
        --remaining;
      }
    }
  };
  settle(start);
  for (Round r = start; r < schedule.horizon() && remaining > 0; ++r) {
    flood_round(schedule, r, reach);
    settle(r + 1);
  }
  return done;
}

void check_sources(const LinkSchedule& schedule, const std::vector<MinerId>& sources) {
  if (sources.empty()) throw OracleError("empty source set");
  for (MinerId s : sources) {
    if (s < 0 || s >= schedule.miners()) throw OracleError(fmt::format("source miner {} outside the network", s));
  }
}

std::vector<std::vector<MinerId>> normalized(std::vector<std::vector<MinerId>> pools) {
  for (auto& p : pools) std::sort(p.begin(), p.end());
  std::sort(pools.begin(), pools.end());
  return pools;
}

}  // namespace

bool PoolGraph::is_dag() const {
  std::vector<std::size_t> indegree(pools.size(), 0);
  for (auto [a, b] : edges) ++indegree[b];
  std::vector<std::size_t> ready;
  for (std::size_t i = 0; i < pools.size(); ++i) {
    if (indegree[i] == 0) ready.push_back(i);
  }
  std::size_t seen = 0;
  while (!ready.empty()) {
    const auto p = ready.back();
    ready.pop_back();
    ++seen;
    for (auto [a, b] : edges) {
      if (a == p && --indegree[b] == 0) ready.push_back(b);
    }
  }
  return seen == pools.size();
}

PoolGraph observed_pool_graph(const LinkSchedule& schedule, Round begin, Round end, Round window) {
  if (window < 1) throw OracleError("recurrence window must be positive");
  end = std::min(end, schedule.horizon());
  if (end - begin < window) throw OracleError("phase shorter than its recurrence window");
  const auto n = static_cast<std::size_t>(schedule.miners());

  Bits all(n);
  all.set();
  std::vector<Bits> recurrent(n, all);  // recurrent[b]: origins reaching b in every window
  std::vector<std::vector<Bits>> window_links;  // [window][sender]: receivers
  for (Round w = begin; w + window <= end; w += window) {
    std::vector<Bits> reach(n, Bits(n));
    for (std::size_t m = 0; m < n; ++m) reach[m].set(m);
    std::vector<Bits> links(n, Bits(n));
    for (Round r = w; r < w + window; ++r) {
      flood_round(schedule, r, reach);
      for (const Link& l : schedule.links_at(r)) links[l.sender].set(l.receiver);
    }
    for (std::size_t m = 0; m < n; ++m) recurrent[m] &= reach[m];
    window_links.push_back(std::move(links));
  }

  using Graph = boost::adjacency_list<boost::vecS, boost::vecS, boost::directedS>;
  Graph g(n);
  for (std::size_t b = 0; b < n; ++b) {
    for (auto a = recurrent[b].find_first(); a != Bits::npos; a = recurrent[b].find_next(a)) {
      if (a != b) boost::add_edge(a, b, g);
    }
  }
  std::vector<int> component(n);
  const int count = boost::strong_components(g, component.data());

  PoolGraph pg;
  std::vector<std::vector<MinerId>> by_component(static_cast<std::size_t>(count));
  for (std::size_t m = 0; m < n; ++m) by_component[component[m]].push_back(static_cast<MinerId>(m));
  pg.pools = normalized(std::move(by_component));
  std::vector<std::size_t> pool_of(n);
  for (std::size_t p = 0; p < pg.pools.size(); ++p) {
    for (MinerId m : pg.pools[p]) pool_of[m] = p;
  }

  const auto k = pg.pools.size();
  std::vector<char> every(k * k, 1);
  for (const auto& links : window_links) {
    std::vector<char> here(k * k, 0);
    for (std::size_t a = 0; a < n; ++a) {
      for (auto b = links[a].find_first(); b != Bits::npos; b = links[a].find_next(b)) {
        here[pool_of[a] * k + pool_of[b]] = 1;
      }
    }
    for (std::size_t i = 0; i < k * k; ++i) every[i] = every[i] && here[i];
  }
  for (std::size_t x = 0; x < k; ++x) {
    for (std::size_t y = 0; y < k; ++y) {
      if (x != y && every[x * k + y]) pg.edges.emplace_back(x, y);
    }
  }
  return pg;
}

PoolGraph pool_graph(const PoolDescriptor& descriptor, const LinkSchedule& schedule) {
  if (descriptor.phases.empty()) throw OracleError("descriptor has no phases");
  return pool_graph(descriptor, schedule, descriptor.phases.size() - 1);
}

PoolGraph pool_graph(const PoolDescriptor& descriptor, const LinkSchedule& schedule, std::size_t phase) {
  if (phase >= descriptor.phases.size()) throw OracleError("no such phase");
  if (descriptor.miners != schedule.miners()) throw OracleError("descriptor and schedule disagree on miners");
  const PoolPhase& ph = descriptor.phases[phase];
  PoolGraph observed = observed_pool_graph(schedule, ph.begin, ph.end, ph.window);

  const auto declared = normalized(ph.pools);
  if (declared != observed.pools) {
    throw OracleError(fmt::format("phase {}: observed {} pools where {} were declared", phase,
                                  observed.pools.size(), declared.size()));
  }
  // Declared edges refer to the declared ordering; map them onto ours.
  std::set<std::pair<std::size_t, std::size_t>> want;
  for (auto [a, b] : ph.edges) {
    auto find = [&](const std::vector<MinerId>& pool) {
      auto sorted = pool;
      std::sort(sorted.begin(), sorted.end());
      return static_cast<std::size_t>(std::find(observed.pools.begin(), observed.pools.end(), sorted) -
                                      observed.pools.begin());
    };
    want.emplace(find(ph.pools.at(a)), find(ph.pools.at(b)));
  }
  const std::set<std::pair<std::size_t, std::size_t>> got(observed.edges.begin(), observed.edges.end());
  if (want != got) {
    throw OracleError(fmt::format("phase {}: observed {} pool edges where {} were declared", phase, got.size(),
                                  want.size()));
  }
  if (!observed.is_dag()) throw OracleError(fmt::format("phase {}: pool graph has a cycle", phase));
  return observed;
}

std::vector<std::vector<MinerId>> source_pools(const PoolGraph& graph) {
  std::vector<char> has_in(graph.pools.size(), 0);
  for (auto [a, b] : graph.edges) has_in[b] = 1;
  std::vector<std::vector<MinerId>> out;
  for (std::size_t p = 0; p < graph.pools.size(); ++p) {
    if (!has_in[p]) out.push_back(graph.pools[p]);
  }
  return out;
}

Round propagation_time(const LinkSchedule& schedule, const std::vector<MinerId>& sources, Round first_start,
                       Round last_start) {
  check_sources(schedule, sources);
  if (first_start < 0 || last_start >= schedule.horizon() || first_start > last_start) {
    throw OracleError("start rounds outside the schedule");
  }
  Round worst = 0;
  for (Round t = first_start; t <= last_start; ++t) {
    const auto done = flood_completion(schedule, sources, t);
    for (std::size_t i = 0; i < sources.size(); ++i) {
      if (!done[i]) {
        throw OracleError(fmt::format("miner unreachable from source {} starting at round {}", sources[i], t));
      }
      worst = std::max(worst, *done[i] - t);
    }
  }
  return worst;
}

std::optional<Round> last_complete_start(const LinkSchedule& schedule, const std::vector<MinerId>& sources) {
  check_sources(schedule, sources);
  auto complete = [&](Round t) {
    const auto done = flood_completion(schedule, sources, t);
    return std::all_of(done.begin(), done.end(), [](const auto& d) { return d.has_value(); });
  };
  // Completion is monotone in the start round.
  if (schedule.horizon() == 0 || !complete(0)) return std::nullopt;
  Round lo = 0, hi = schedule.horizon() - 1;
  while (lo < hi) {
    const Round mid = lo + (hi - lo + 1) / 2;
    if (complete(mid)) {
      lo = mid;
    } else {
      hi = mid - 1;
    }
  }
  return lo;
}

namespace {

BlockTree build_tree(const Trace& trace) {
  BlockTree tree;
  for (const MintRecord& m : trace.mints) tree.insert(m.block);
  return tree;
}

}  // namespace

Oracle::Oracle(const Trace& trace) : trace_(&trace), tree_(build_tree(trace)), index_(tree_) {
  minted_prefix_.assign(static_cast<std::size_t>(trace.horizon()), 0);
  for (const MintRecord& m : trace.mints) ++minted_prefix_.at(m.round);
  for (std::size_t r = 1; r < minted_prefix_.size(); ++r) minted_prefix_[r] += minted_prefix_[r - 1];
  const auto& sources = trace.meta.source_miners;
  if (trace.meta.closed_source && !sources.empty() && static_cast<std::int32_t>(sources.size()) < trace.meta.miners) {
    is_source_.assign(static_cast<std::size_t>(trace.meta.miners), false);
    for (MinerId m : sources) is_source_.at(m) = true;
  }
}

bool Oracle::source_visible(const BlockId& b) const {
  return is_source_.empty() || b.is_genesis() || b.round < trace_->meta.close_round || is_source_[b.miner];
}

std::uint32_t Oracle::min_source_position_depth(Round r) const {
  if (is_source_.empty()) return min_position_depth(r);
  std::uint32_t lowest = std::numeric_limits<std::uint32_t>::max();
  const auto& row = trace_->positions.at(r);
  for (std::size_t m = 0; m < row.size(); ++m) {
    if (is_source_[m]) lowest = std::min(lowest, tree_.depth(row[m]));
  }
  return lowest;
}

std::size_t Oracle::minted_by(Round r) const { return r < 0 ? 0 : minted_prefix_.at(r); }

std::uint32_t Oracle::min_position_depth(Round r) const {
  std::uint32_t lowest = std::numeric_limits<std::uint32_t>::max();
  for (const BlockId& p : trace_->positions.at(r)) lowest = std::min(lowest, tree_.depth(p));
  return lowest;
}

bool Oracle::all_branches_dead(const BlockId& b, Round r) const {
  const auto root = tree_.index_of(b);
  if (!root || b.round > r) throw OracleError("block " + to_string(b) + " not minted by round " + std::to_string(r));
  if (!source_visible(b)) return true;  // the pool never builds on it
  return min_source_position_depth(r) > deepest_under(*root, r, true);
}

std::uint32_t Oracle::deepest_under(BlockTree::Index root, Round r, bool visible_only) const {
  // Children are minted strictly after their parents, so later subtrees can
  // be pruned whole.
  std::uint32_t deepest = 0;
  std::vector<BlockTree::Index> stack{root};
  while (!stack.empty()) {
    const auto i = stack.back();
    stack.pop_back();
    deepest = std::max(deepest, tree_.at_index(i).depth);
    for (auto c : tree_.child_indices(i)) {
      const BlockId& id = tree_.at_index(c).id;
      if (id.round <= r && (!visible_only || source_visible(id))) stack.push_back(c);
    }
  }
  return deepest;
}

std::size_t Oracle::settled_prefix(Round r) const {
  const auto path = ground_truth_accepted(r);
  const auto floor = min_position_depth(r);
  for (std::size_t k = 0; k + 1 < path.size(); ++k) {
    const auto parent = *tree_.index_of(path[k]);
    for (auto c : tree_.child_indices(parent)) {
      const Block& side = tree_.at_index(c);
      if (side.id == path[k + 1] || side.id.round > r) continue;
      if (deepest_under(c, r, false) >= floor) return k + 1;
    }
  }
  return path.size();
}

std::vector<BlockId> Oracle::dead_branches(Round r) const {
  const auto floor = min_position_depth(r);
  std::vector<BlockId> out;
  for (BlockTree::Index i = 0; i < tree_.size(); ++i) {
    const Block& b = tree_.at_index(i);
    if (b.id.round > r && !b.id.is_genesis()) continue;
    const auto kids = tree_.child_indices(i);
    const bool leaf = std::none_of(kids.begin(), kids.end(), [&](auto c) { return tree_.at_index(c).id.round <= r; });
    if (leaf && b.depth < floor) out.push_back(b.id);
  }
  std::sort(out.begin(), out.end());
  return out;
}

BlockTree::Index Oracle::lca(BlockTree::Index a, BlockTree::Index b) const {
  while (tree_.at_index(a).depth > tree_.at_index(b).depth) a = tree_.parent_index(a);
  while (tree_.at_index(b).depth > tree_.at_index(a).depth) b = tree_.parent_index(b);
  while (a != b) {
    a = tree_.parent_index(a);
    b = tree_.parent_index(b);
  }
  return a;
}

BlockId Oracle::accepted_frontier(Round r) const {
  const auto& row = trace_->positions.at(r);
  if (row.empty()) return BlockId::genesis();
  auto at = *tree_.index_of(row.front());
  for (const BlockId& p : row) at = lca(at, *tree_.index_of(p));
  return tree_.at_index(at).id;
}

std::vector<BlockId> Oracle::ground_truth_accepted(Round r) const {
  const BlockId frontier = accepted_frontier(r);
  return tree_.branch_to(frontier).path;
}

bool Oracle::on_path(const BlockId& a, const BlockId& b) const {
  const auto ia = tree_.index_of(a), ib = tree_.index_of(b);
  if (!ia || !ib) throw OracleError("on_path: unknown block");
  return index_.in_subtree(*ia, *ib);
}

std::vector<BlockId> dead_branches(const Trace& trace, Round r) { return Oracle(trace).dead_branches(r); }

std::vector<BlockId> ground_truth_accepted(const Trace& trace, Round r) {
  return Oracle(trace).ground_truth_accepted(r);
}

std::string_view to_string(CheckVerdict v) {
  switch (v) {
    case CheckVerdict::pass: return "PASS";
    case CheckVerdict::fail: return "FAIL";
    case CheckVerdict::inconclusive: return "INCONCLUSIVE";
  }
  return "?";
}

namespace {

CheckReport finish(CheckReport rep) {
  if (!rep.violations.empty()) rep.verdict = CheckVerdict::fail;
  return rep;
}

}  // namespace

CheckReport check_confirmation_validity(const Trace& trace) {
  CheckReport rep{"confirmation_validity", CheckVerdict::pass, {}, {}};
  if (trace.horizon() == 0) return rep;
  Oracle oracle(trace);
  const Round last = trace.last_round();
  const BlockId frontier = oracle.accepted_frontier(last);
  const auto& final_positions = trace.positions.at(last);
  for (const ConfirmRecord& c : trace.confirmations) {
    if (!oracle.on_path(c.block, frontier)) {
      rep.violations.push_back({c.round, c.miner, c.block, "not accepted at the final round"});
      continue;
    }
    for (MinerId s : trace.meta.source_miners) {
      if (!oracle.on_path(c.block, final_positions.at(s))) {
        rep.violations.push_back({c.round, c.miner, c.block, fmt::format("not under source miner {}", s)});
        break;
      }
    }
  }
  rep.detail = fmt::format("{} confirmations checked against frontier {}", trace.confirmations.size(),
                           to_string(frontier));
  return finish(std::move(rep));
}

Round default_liveness_slack(const TraceMeta& meta) {
  if (meta.protocol == "ksm") return meta.pt + static_cast<Round>(meta.source_miners.size());
  return 3 * meta.pt;
}

CheckReport check_decision_liveness(const Trace& trace, Round slack) {
  CheckReport rep{"decision_liveness", CheckVerdict::pass, {}, {}};
  if (trace.meta.protocol == "base") {
    rep.verdict = CheckVerdict::inconclusive;
    rep.detail = "no decision rule in this run";
    return rep;
  }
  const Round cutoff = trace.last_round() - slack;
  if (cutoff < 0) {
    rep.verdict = CheckVerdict::inconclusive;
    rep.detail = fmt::format("horizon {} does not exceed slack {}", trace.horizon(), slack);
    return rep;
  }
  Oracle oracle(trace);
  std::set<std::pair<MinerId, BlockId>> confirmed;
  for (const auto& c : trace.confirmations) confirmed.emplace(c.miner, c.block);
  const auto accepted = oracle.ground_truth_accepted(cutoff);
  // Past the settled prefix a cousin is still level with some miner, and
  // only further mining can break the tie; missing confirmations there say
  // nothing about the rule.
  const auto settled = oracle.settled_prefix(cutoff);
  std::size_t pending = 0;
  for (std::size_t k = 0; k < accepted.size(); ++k) {
    const BlockId& b = accepted[k];
    for (MinerId m = 0; m < trace.meta.miners; ++m) {
      if (confirmed.contains({m, b})) continue;
      if (k < settled) {
        rep.violations.push_back({trace.last_round(), m, b, fmt::format("accepted at round {}, never confirmed", cutoff)});
      } else {
        ++pending;
      }
    }
  }
  rep.detail = fmt::format("{} blocks accepted at round {} (slack {}), {} settled", accepted.size(), cutoff, slack, settled);
  rep = finish(std::move(rep));
  if (rep.verdict == CheckVerdict::pass && pending > 0) {
    rep.verdict = CheckVerdict::inconclusive;
    rep.detail += fmt::format("; {} confirmations still wait on a tied cousin", pending);
  }
  return rep;
}

CheckReport check_reject_soundness(const Trace& trace) {
  CheckReport rep{"reject_soundness", CheckVerdict::pass, {}, {}};
  Oracle oracle(trace);
  for (const RejectRecord& rj : trace.rejects) {
    if (!oracle.all_branches_dead(rj.block, rj.round)) {
      rep.violations.push_back({rj.round, rj.miner, rj.block, "rejected while a branch through it is live"});
    }
  }
  rep.detail = fmt::format("{} reject events", trace.rejects.size());
  return finish(std::move(rep));
}

CheckReport check_source_chain(const Trace& trace) {
  CheckReport rep{"source_chain", CheckVerdict::pass, {}, {}};
  if (trace.meta.source_miners.empty() || trace.horizon() == 0) {
    rep.verdict = CheckVerdict::inconclusive;
    rep.detail = "no source pool declared";
    return rep;
  }
  Oracle oracle(trace);
  const auto chain = oracle.ground_truth_accepted(trace.last_round());
  const std::set<MinerId> sources(trace.meta.source_miners.begin(), trace.meta.source_miners.end());
  for (std::size_t i = 1; i < chain.size(); ++i) {
    if (oracle.tree().at(chain[i]).parent != chain[i - 1]) {
      rep.violations.push_back({chain[i].round, chain[i].miner, chain[i], "accepted set is not a chain"});
    }
    if (chain[i].round >= trace.meta.close_round && !sources.contains(chain[i].miner)) {
      rep.violations.push_back({chain[i].round, chain[i].miner, chain[i], "accepted block minted outside the source pool"});
    }
  }
  rep.detail = fmt::format("{} accepted blocks", chain.size());
  return finish(std::move(rep));
}

std::string report_json(const std::vector<CheckReport>& reports) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& rep : reports) {
    nlohmann::json v = nlohmann::json::array();
    for (const auto& x : rep.violations) {
      v.push_back({{"round", x.round}, {"miner", x.miner}, {"block", to_string(x.block)}, {"what", x.what}});
    }
    out.push_back({{"check", rep.check},
                   {"verdict", std::string(to_string(rep.verdict))},
                   {"detail", rep.detail},
                   {"violations", std::move(v)}});
  }
  return out.dump(2);
}

}  // namespace dynchain
