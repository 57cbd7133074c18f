#include "dynchain/harness.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>

namespace dynchain {

using nlohmann::json;

void ExperimentSpec::validate() const {
  if (name.empty() || name.find_first_of(",\n\"") != std::string::npos) {
    throw SpecError(fmt::format("experiment name '{}' must be non-empty and free of commas and quotes", name));
  }
  if (repetitions < 1) throw SpecError("repetitions must be at least 1");
  if (topology.phases.empty()) throw SpecError("topology needs at least one phase");
  try {
    topology.validate();
  } catch (const TopologyError& e) {
    throw SpecError(e.what());
  }
  const auto& p = protocol;
  if (!(p.mining_rate >= 0.0 && p.mining_rate <= 1.0)) throw SpecError("mining rate outside [0, 1]");
  if (p.kind == ProtocolKind::kpt && p.pt_mode == PtMode::fixed && p.pt < 1) {
    throw SpecError("kpt with a fixed PT needs pt >= 1");
  }
  if (p.label_gossip && p.policy == MessagePolicy::deepest_unsent) {
    throw SpecError("label gossip cannot be combined with the deepest-unsent policy");
  }
  if (p.source_miners) {
    if (p.source_miners->empty()) throw SpecError("empty source miner list");
    for (MinerId m : *p.source_miners) {
      if (m < 0 || m >= topology.n) throw SpecError(fmt::format("source miner {} outside the network", m));
    }
  }
  if (p.close_round < 0) throw SpecError("close round must be non-negative");
  if (horizon_pt_multiple) {
    if (!(*horizon_pt_multiple > 0)) throw SpecError("pt multiple must be positive");
  } else if (horizon < 0) {
    throw SpecError("negative horizon");
  } else if (horizon == 0 && topology.horizon() < 1) {
    throw SpecError("no horizon given and the topology is empty");
  }
  if (tail && *tail < 0) throw SpecError("negative tail");
  if (max_delay < 0) throw SpecError("negative delay");
  if (estimate_runs < 1 || estimate_length < 2 || estimate_stride < 1) throw SpecError("invalid PT estimation settings");
}

namespace {

std::vector<MinerId> parse_sources(const json& j, std::int32_t n) {
  if (j.is_array()) return j.get<std::vector<MinerId>>();
  if (j.contains("percent")) return first_miners(pool_size(n, j.at("percent").get<double>()));
  if (j.contains("count")) return first_miners(j.at("count").get<std::int32_t>());
  throw SpecError("sources must be a list, {\"percent\": p} or {\"count\": k}");
}

PhaseMode parse_mode(const std::string& s) {
  if (s == "complete") return PhaseMode::complete;
  if (s == "random") return PhaseMode::random;
  throw SpecError(fmt::format("unknown phase mode '{}'", s));
}

PtMode parse_pt_mode(const std::string& s) {
  if (s == "fixed") return PtMode::fixed;
  if (s == "exact") return PtMode::exact;
  if (s == "estimate") return PtMode::estimate;
  throw SpecError(fmt::format("unknown pt mode '{}'", s));
}

}  // namespace

ExperimentSpec parse_spec(std::istream& in) {
  ExperimentSpec spec;
  try {
    const json j = json::parse(in);
    spec.name = j.value("name", spec.name);
    spec.seed = j.at("seed").get<std::uint64_t>();  // the master seed is always explicit
    spec.repetitions = j.value("repetitions", 1);

    const json& t = j.at("topology");
    spec.topology.n = t.at("n").get<std::int32_t>();
    spec.topology.mx = t.value("mx", spec.topology.n - 1);
    spec.topology.window = t.value("window", spec.topology.window);
    for (const json& ph : t.at("phases")) {
      TopologyPhase phase;
      phase.begin = ph.at("begin").get<Round>();
      phase.end = ph.at("end").get<Round>();
      phase.mode = parse_mode(ph.value("mode", "complete"));
      if (ph.contains("sources")) phase.sources = parse_sources(ph.at("sources"), spec.topology.n);
      spec.topology.phases.push_back(std::move(phase));
    }

    if (j.contains("protocol")) {
      const json& p = j.at("protocol");
      auto& ps = spec.protocol;
      ps.kind = parse_protocol(p.value("kind", "base"));
      ps.policy = parse_message_policy(p.value("policy", "full-tree"));
      ps.mining_rate = p.value("mining_rate", ps.mining_rate);
      if (p.contains("pt")) {
        if (p.at("pt").is_number()) {
          ps.pt_mode = PtMode::fixed;
          ps.pt = p.at("pt").get<Round>();
        } else {
          ps.pt_mode = parse_pt_mode(p.at("pt").get<std::string>());
        }
      }
      ps.stamped_reject = p.value("stamped_reject", false);
      ps.nonsource_mines = p.value("nonsource_mines", true);
      ps.accept_guard = p.value("accept_guard", true);
      ps.label_gossip = p.value("label_gossip", false);
      ps.close_round = p.value("close_round", Round{0});
      if (p.contains("sources")) ps.source_miners = parse_sources(p.at("sources"), spec.topology.n);
    }

    const json& h = j.at("horizon");
    if (h.is_number()) {
      spec.horizon = h.get<Round>();
    } else {
      spec.horizon_pt_multiple = h.at("pt_multiple").get<double>();
    }
    if (j.contains("tail")) spec.tail = j.at("tail").get<Round>();
    const std::string metrics = j.value("metrics", "final");
    if (metrics == "final") {
      spec.metrics = MetricsMode::final_only;
    } else if (metrics == "per-round") {
      spec.metrics = MetricsMode::per_round;
    } else {
      throw SpecError(fmt::format("unknown metrics mode '{}'", metrics));
    }
    spec.max_delay = j.value("max_delay", Round{0});
    if (j.contains("estimate")) {
      const json& e = j.at("estimate");
      spec.estimate_runs = e.value("runs", spec.estimate_runs);
      spec.estimate_length = e.value("length", spec.estimate_length);
      spec.estimate_stride = e.value("stride", spec.estimate_stride);
    }
  } catch (const json::exception& e) {
    throw SpecError(fmt::format("malformed experiment spec: {}", e.what()));
  } catch (const ProtocolError& e) {
    throw SpecError(e.what());
  }
  spec.validate();
  return spec;
}

ExperimentSpec load_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SpecError(fmt::format("cannot open spec file {}", path.string()));
  try {
    return parse_spec(in);
  } catch (const SpecError& e) {
    throw SpecError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

namespace {

// The topology with its final phase stretched or cut to `total` rounds.
TopologyConfig fit(TopologyConfig cfg, Round total) {
  while (cfg.phases.size() > 1 && cfg.phases.back().begin >= total) cfg.phases.pop_back();
  cfg.phases.back().end = total;
  return cfg;
}

std::vector<MinerId> resolve_sources(const ExperimentSpec& spec) {
  if (spec.protocol.source_miners) {
    auto s = *spec.protocol.source_miners;
    std::sort(s.begin(), s.end());
    return s;
  }
  if (const auto& last = spec.topology.phases.back().sources) {
    auto s = *last;
    std::sort(s.begin(), s.end());
    return s;
  }
  return first_miners(spec.topology.n);
}

// Closed from close_round on: every phase that overlaps [close_round, end)
// restricts to exactly `sources` (or the sources are everybody).
bool is_closed(const TopologyConfig& cfg, const std::vector<MinerId>& sources, Round close_round) {
  if (static_cast<std::int32_t>(sources.size()) == cfg.n) return true;
  for (const TopologyPhase& ph : cfg.phases) {
    if (ph.end <= close_round) continue;
    if (!ph.sources) return false;
    auto s = *ph.sources;
    std::sort(s.begin(), s.end());
    if (s != sources) return false;
  }
  return true;
}

// Exact PT over start rounds [0, mining), on a schedule extended until
// every one of those floods completes.
Round exact_pt(const TopologyConfig& cfg, const std::vector<MinerId>& sources, Round mining) {
  Round extra = std::max<Round>(64, mining);
  for (int attempt = 0; attempt < 8; ++attempt, extra *= 2) {
    const Topology probe = random_neighbor_schedule(fit(cfg, mining + extra));
    const auto last = last_complete_start(probe.schedule, sources);
    if (last && *last >= mining - 1) return propagation_time(probe.schedule, sources, 0, mining - 1);
  }
  throw SpecError("floods from the source pool do not complete; PT is unbounded for this topology");
}

}  // namespace

RunPlan plan_run(const ExperimentSpec& spec, std::int32_t rep) {
  spec.validate();
  const std::uint64_t rep_seed = derive_seed(spec.seed, static_cast<std::uint64_t>(rep));
  TopologyConfig topo = spec.topology;
  topo.seed = derive_seed(rep_seed, 1);
  const auto& ps = spec.protocol;
  const auto sources = resolve_sources(spec);
  const bool decides = ps.kind != ProtocolKind::base;

  Round mining = spec.horizon > 0 ? spec.horizon : topo.horizon();
  Round pt = ps.pt;
  if (ps.pt_mode == PtMode::estimate) {
    pt = estimate_pt(topo, spec.estimate_runs, spec.estimate_length, spec.estimate_stride).pt;
  }
  if (spec.horizon_pt_multiple) {
    const auto scaled = [&](Round p) { return std::max<Round>(1, static_cast<Round>(std::ceil(*spec.horizon_pt_multiple * p))); };
    if (ps.pt_mode == PtMode::exact) {
      // PT depends on the mining window and the window on PT; iterate to a
      // fixed point, which is reached within a couple of steps in practice.
      mining = std::max<Round>(topo.horizon(), 1);
      for (int i = 0; i < 8; ++i) {
        pt = exact_pt(topo, sources, mining);
        const Round next = scaled(pt);
        if (next == mining) break;
        mining = next;
      }
      pt = exact_pt(topo, sources, mining);
    } else {
      if (pt < 1) throw SpecError("a PT multiple horizon needs a positive PT");
      mining = scaled(pt);
    }
  } else if (ps.pt_mode == PtMode::exact && decides) {
    pt = exact_pt(topo, sources, mining);
  }

  const Round tail = spec.tail ? *spec.tail : (decides ? 4 * std::max<Round>(pt, 1) : 0);
  Topology topology = random_neighbor_schedule(fit(topo, mining + tail));

  RunPlan plan;
  plan.schedule = std::move(topology.schedule);
  plan.descriptor = std::move(topology.descriptor);
  plan.delay = DelayConfig{spec.max_delay, derive_seed(rep_seed, 3)};
  plan.meta.protocol = std::string(to_string(ps.kind));
  plan.meta.policy = std::string(to_string(ps.policy));
  plan.meta.miners = topo.n;
  plan.meta.pt = pt;
  plan.meta.source_miners = sources;
  plan.meta.closed_source = is_closed(fit(topo, mining + tail), sources, ps.close_round);
  plan.meta.close_round = ps.close_round;
  plan.meta.mining_rate = ps.mining_rate;
  plan.meta.mining_until = mining;
  plan.meta.seed = rep_seed;

  const std::uint64_t mint_seed = derive_seed(rep_seed, 2);
  for (MinerId m = 0; m < topo.n; ++m) {
    MinerConfig mc;
    mc.self_id = m;
    mc.network_size = topo.n;
    mc.mining_rate = ps.mining_rate;
    mc.policy = ps.policy;
    mc.label_gossip = ps.label_gossip;
    mc.seed = mint_seed;
    // Source miners keep mining through the tail, as they would forever;
    // everybody else stops so their forks cannot outlive the run.
    const bool source = std::binary_search(sources.begin(), sources.end(), m);
    mc.mining_until = (decides && source) ? mining + tail : mining;
    switch (ps.kind) {
      case ProtocolKind::base: break;
      case ProtocolKind::kpt:
        mc.rule = KptConfig{std::max<Round>(pt, 1), ps.stamped_reject, ps.close_round, ps.accept_guard};
        break;
      case ProtocolKind::ksm:
        mc.rule = KsmConfig{sources, ps.nonsource_mines, ps.close_round, ps.accept_guard};
        break;
      case ProtocolKind::naive: mc.rule = NaiveConfig{}; break;
    }
    plan.miners.push_back(std::move(mc));
  }
  return plan;
}

Trace simulate(const RunPlan& plan) {
  std::vector<Miner> nodes;
  nodes.reserve(plan.miners.size());
  for (const MinerConfig& mc : plan.miners) nodes.emplace_back(mc);
  Engine<Miner> engine(plan.schedule, std::move(nodes), plan.delay);

  Trace trace;
  trace.meta = plan.meta;
  trace.schedule = plan.schedule;
  const Round horizon = plan.schedule.horizon();
  trace.positions.reserve(static_cast<std::size_t>(horizon));
  for (Round r = 0; r < horizon; ++r) {
    engine.step();
    std::vector<BlockId> row;
    row.reserve(engine.nodes().size());
    for (std::size_t m = 0; m < engine.nodes().size(); ++m) {
      Miner& miner = engine.nodes()[m];
      MinerEvents ev = miner.drain_events();
      const auto id = static_cast<MinerId>(m);
      for (const Block& b : ev.mints) trace.mints.push_back({r, id, b});
      for (const auto& [round, b] : ev.confirmations) trace.confirmations.push_back({round, id, b});
      for (auto& rj : ev.rejects) trace.rejects.push_back({rj.round, id, rj.block, std::move(rj.leaves)});
      row.push_back(miner.state().tree.tip());
    }
    trace.positions.push_back(std::move(row));
    const EngineStats& st = engine.last_step();
    trace.deliveries.push_back({r, st.envelopes, st.blocks_sent, st.max_msg_blocks});
  }
  return trace;
}

std::vector<CheckReport> run_checks(const Trace& trace) {
  const std::string& proto = trace.meta.protocol;
  if (proto == "base") return {};
  std::vector<CheckReport> out;
  if (!trace.meta.closed_source) {
    for (const char* name : {"confirmation_validity", "decision_liveness"}) {
      out.push_back({name, CheckVerdict::inconclusive, {}, "source pool is not closed in this run"});
    }
    return out;
  }
  out.push_back(check_confirmation_validity(trace));
  out.push_back(check_decision_liveness(trace, default_liveness_slack(trace.meta)));
  if (proto == "kpt" || proto == "ksm") {
    out.push_back(check_reject_soundness(trace));
    out.push_back(check_source_chain(trace));
  }
  return out;
}

std::vector<RepetitionResult> run(const ExperimentSpec& spec, std::int32_t jobs) {
  spec.validate();
  std::vector<RepetitionResult> results(static_cast<std::size_t>(spec.repetitions));
  std::atomic<std::int32_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::int32_t rep = next++; rep < spec.repetitions; rep = next++) {
      try {
        RunPlan plan = plan_run(spec, rep);
        RepetitionResult& res = results[static_cast<std::size_t>(rep)];
        res.seed = plan.meta.seed;
        res.pt = plan.meta.pt;
        res.trace = simulate(plan);
        res.rows = metrics(res.trace, spec.name, spec.metrics);
        res.checks = run_checks(res.trace);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const auto threads = std::clamp(jobs, 1, spec.repetitions);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::int32_t i = 0; i < threads; ++i) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return results;
}

}  // namespace dynchain
