#include "dynchain/topology.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>

#include <boost/dynamic_bitset.hpp>
#include <fmt/format.h>

namespace dynchain {

void TopologyConfig::validate() const {
  if (n < 1) throw TopologyError("topology needs at least one miner");
  if (mx < 0 || mx > n - 1) throw TopologyError(fmt::format("mx={} outside [0, {}]", mx, n - 1));
  if (window < 1) throw TopologyError("recurrence window must be positive");
  Round expect = 0;
  for (const TopologyPhase& ph : phases) {
    if (ph.begin != expect) throw TopologyError(fmt::format("phase starting at {} leaves a gap or overlap", ph.begin));
    if (ph.end <= ph.begin) throw TopologyError(fmt::format("empty phase at round {}", ph.begin));
    expect = ph.end;
    if (ph.sources) {
      if (ph.sources->empty()) throw TopologyError("restricted phase with no source miners");
      auto s = *ph.sources;
      std::sort(s.begin(), s.end());
      if (std::adjacent_find(s.begin(), s.end()) != s.end()) throw TopologyError("duplicate source miner");
      if (s.front() < 0 || s.back() >= n) throw TopologyError("source miner outside the network");
    }
  }
}

std::vector<MinerId> first_miners(std::int32_t k) {
  std::vector<MinerId> out(static_cast<std::size_t>(std::max(k, 0)));
  std::iota(out.begin(), out.end(), 0);
  return out;
}

std::int32_t pool_size(std::int32_t n, double percent) {
  return std::max(1, static_cast<std::int32_t>(std::floor(percent * n / 100.0 + 1e-9)));
}

TopologyConfig phased_config(std::int32_t n, std::uint64_t seed, std::int32_t source_count, PhaseMode mode,
                             std::int32_t mx) {
  TopologyConfig cfg;
  cfg.n = n;
  cfg.mx = mode == PhaseMode::random ? mx : n - 1;
  cfg.seed = seed;
  cfg.phases = {
      {0, 100, mode, std::nullopt},
      {100, 200, mode, first_miners(source_count)},
      {200, 300, mode, std::nullopt},
  };
  return cfg;
}

TopologyConfig closed_config(std::int32_t n, std::int32_t mx, std::int32_t source_count, Round horizon,
                             std::uint64_t seed) {
  TopologyConfig cfg;
  cfg.n = n;
  cfg.mx = mx;
  cfg.seed = seed;
  cfg.phases = {{0, horizon, PhaseMode::random, first_miners(source_count)}};
  return cfg;
}

namespace {

PoolPhase declare(const TopologyConfig& cfg, const TopologyPhase& ph) {
  PoolPhase out;
  out.begin = ph.begin;
  out.end = ph.end;
  out.window = cfg.window;
  const bool silent = ph.mode == PhaseMode::random && cfg.mx == 0;
  if (silent || cfg.n == 1) {
    for (MinerId m = 0; m < cfg.n; ++m) out.pools.push_back({m});
    return out;
  }
  if (!ph.sources || static_cast<std::int32_t>(ph.sources->size()) == cfg.n) {
    out.pools.push_back(first_miners(cfg.n));
    return out;
  }
  std::vector<MinerId> rest;
  for (MinerId m = 0; m < cfg.n; ++m) {
    if (std::find(ph.sources->begin(), ph.sources->end(), m) == ph.sources->end()) rest.push_back(m);
  }
  out.pools = {*ph.sources, rest};
  out.edges = {{0, 1}};
  return out;
}

}  // namespace

Topology random_neighbor_schedule(const TopologyConfig& cfg) {
  cfg.validate();
  Topology topo{LinkSchedule(cfg.n, cfg.horizon()), PoolDescriptor{cfg.n, {}}};
  std::vector<Link> links;
  std::vector<MinerId> allowed;
  for (const TopologyPhase& ph : cfg.phases) {
    topo.descriptor.phases.push_back(declare(cfg, ph));
    std::vector<char> is_source(static_cast<std::size_t>(cfg.n), 0);
    if (ph.sources) {
      for (MinerId s : *ph.sources) is_source[s] = 1;
    }
    for (Round r = ph.begin; r < ph.end; ++r) {
      std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(r)));
      links.clear();
      for (MinerId a = 0; a < cfg.n; ++a) {
        allowed.clear();
        for (MinerId b = 0; b < cfg.n; ++b) {
          if (b == a) continue;
          if (ph.sources && is_source[b] && !is_source[a]) continue;
          allowed.push_back(b);
        }
        if (ph.mode == PhaseMode::complete) {
          for (MinerId b : allowed) links.push_back({a, b});
          continue;
        }
        const auto degree = std::uniform_int_distribution<std::int32_t>(0, cfg.mx)(rng);
        const auto take = std::min<std::size_t>(static_cast<std::size_t>(degree), allowed.size());
        // Partial Fisher-Yates: the first `take` entries become the sample.
        for (std::size_t i = 0; i < take; ++i) {
          const auto j = std::uniform_int_distribution<std::size_t>(i, allowed.size() - 1)(rng);
          std::swap(allowed[i], allowed[j]);
          links.push_back({a, allowed[i]});
        }
      }
      topo.schedule.set_links(r, links);
    }
  }
  return topo;
}

namespace {

using Bits = boost::dynamic_bitset<>;

// Holds, per flood start, the set of source tokens received so far, and the
// round each token first arrived.
class FloodNode {
 public:
  using Message = std::shared_ptr<const std::vector<Bits>>;

  FloodNode(std::optional<std::size_t> source_slot, std::size_t sources, const std::vector<Round>* starts)
      : slot_(source_slot), starts_(starts), held_(starts->size(), Bits(sources)),
        first_(starts->size(), std::vector<Round>(sources, -1)) {}

  void on_round(std::vector<Envelope<Message>>& inbox, Round r) {
    for (const auto& env : inbox) {
      for (std::size_t j = 0; j < held_.size(); ++j) merge(j, (*env.payload)[j], r);
    }
    if (slot_) {
      for (std::size_t j = 0; j < starts_->size(); ++j) {
        if ((*starts_)[j] == r) {
          Bits own(held_[j].size());
          own.set(*slot_);
          merge(j, own, r);
        }
      }
    }
    snapshot_.reset();
  }

  Message make_message(MinerId, Round) {
    if (!snapshot_) snapshot_ = std::make_shared<const std::vector<Bits>>(held_);
    return snapshot_;
  }

  static std::size_t payload_blocks(const Message&) { return 0; }

  Round first_seen(std::size_t start, std::size_t source) const { return first_[start][source]; }

 private:
  void merge(std::size_t j, const Bits& in, Round r) {
    if (in.is_subset_of(held_[j])) return;
    const Bits fresh = in - held_[j];
    for (auto i = fresh.find_first(); i != Bits::npos; i = fresh.find_next(i)) first_[j][i] = r;
    held_[j] |= in;
  }

  std::optional<std::size_t> slot_;
  const std::vector<Round>* starts_;
  std::vector<Bits> held_;
  std::vector<std::vector<Round>> first_;
  Message snapshot_;
};

}  // namespace

Round flood_propagation_time(const LinkSchedule& schedule, const std::vector<MinerId>& sources,
                             const std::vector<Round>& starts) {
  if (sources.empty()) throw TopologyError("flood needs at least one source");
  if (starts.empty()) return 0;
  std::vector<FloodNode> nodes;
  for (MinerId m = 0; m < schedule.miners(); ++m) {
    std::optional<std::size_t> slot;
    if (auto it = std::find(sources.begin(), sources.end(), m); it != sources.end()) {
      slot = static_cast<std::size_t>(it - sources.begin());
    }
    nodes.emplace_back(slot, sources.size(), &starts);
  }
  Engine<FloodNode> engine(schedule, std::move(nodes));
  // One extra round delivers what was sent in the last scheduled round.
  engine.run_until(schedule.horizon() + 1);

  Round worst = 0;
  for (std::size_t j = 0; j < starts.size(); ++j) {
    for (std::size_t i = 0; i < sources.size(); ++i) {
      for (MinerId m = 0; m < schedule.miners(); ++m) {
        const Round seen = engine.nodes()[m].first_seen(j, i);
        if (seen < 0) {
          throw TopologyError(fmt::format("flood from miner {} at round {} did not reach miner {} within {} rounds",
                                          sources[i], starts[j], m, schedule.horizon()));
        }
        worst = std::max(worst, seen - starts[j]);
      }
    }
  }
  return worst;
}

PtEstimate estimate_pt(const TopologyConfig& cfg, std::int32_t runs, Round run_length, Round stride) {
  cfg.validate();
  if (cfg.phases.empty()) throw TopologyError("topology has no phases");
  if (runs < 1 || run_length < 2 || stride < 1) throw TopologyError("invalid estimation parameters");
  const TopologyPhase& last = cfg.phases.back();
  const std::vector<MinerId> sources = last.sources ? *last.sources : first_miners(cfg.n);

  std::vector<Round> starts;
  for (Round t = 0; t <= run_length / 2; t += stride) starts.push_back(t);

  PtEstimate est;
  for (std::int32_t i = 0; i < runs; ++i) {
    TopologyConfig run = cfg;
    run.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(i));
    run.phases = {{0, run_length, last.mode, last.sources}};
    const Topology topo = random_neighbor_schedule(run);
    est.per_run.push_back(flood_propagation_time(topo.schedule, sources, starts));
    est.pt = std::max(est.pt, est.per_run.back());
  }
  return est;
}

}  // namespace dynchain
