// Runs the experiment suites and prints one PASS/FAIL line per criterion.
// Exit status is non-zero if any criterion fails.

#include <algorithm>
#include <array>
#include <chrono>
#include <map>
#include <numeric>
#include <set>
#include <thread>

#include <CLI11.hpp>
#include <fmt/core.h>

#include "dynchain/harness.hpp"
#include "dynchain/oracle.hpp"
#include "dynchain/topology.hpp"

using namespace dynchain;

namespace {

using Clock = std::chrono::steady_clock;

int jobs = 1;
int failures = 0;

void verdict(std::string_view name, bool ok, const std::string& detail) {
  fmt::print("{} {}: {}\n", ok ? "PASS" : "FAIL", name, detail);
  std::fflush(stdout);
  failures += !ok;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

ExperimentSpec closed_spec(std::string name, ProtocolKind kind, std::int32_t n, std::int32_t mx, std::int32_t reps,
                           std::uint64_t seed) {
  ExperimentSpec spec;
  spec.name = std::move(name);
  spec.topology.n = n;
  spec.topology.mx = mx;
  spec.topology.phases = {{0, 100, PhaseMode::random, first_miners(pool_size(n, 75))}};
  spec.protocol.kind = kind;
  spec.protocol.pt_mode = PtMode::exact;
  spec.horizon_pt_multiple = 12;
  spec.repetitions = reps;
  spec.seed = seed;
  return spec;
}

const CheckReport& find_check(const RepetitionResult& r, std::string_view name) {
  for (const CheckReport& c : r.checks) {
    if (c.check == name) return c;
  }
  throw std::runtime_error(fmt::format("run has no {} check", name));
}

std::optional<double> mean_conf(const RepetitionResult& r) { return r.rows.back().mean_conf_time; }

// Seed-averaged mean confirmation time; runs without any block confirmed by
// everybody are skipped and counted.
struct Average {
  double value = 0;
  int used = 0;
  int skipped = 0;
};

Average average_conf(const std::vector<RepetitionResult>& runs) {
  Average a;
  for (const auto& r : runs) {
    if (auto m = mean_conf(r)) {
      a.value += *m;
      ++a.used;
    } else {
      ++a.skipped;
    }
  }
  if (a.used > 0) a.value /= a.used;
  return a;
}

double average_acceptance(const std::vector<RepetitionResult>& runs) {
  double s = 0;
  for (const auto& r : runs) s += r.rows.back().acceptance_rate;
  return runs.empty() ? 0 : s / static_cast<double>(runs.size());
}

double slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double num = 0, den = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    num += (x[i] - mx) * (y[i] - my);
    den += (x[i] - mx) * (x[i] - mx);
  }
  return num / den;
}

std::set<std::pair<MinerId, BlockId>> confirmed_set(const Trace& t) {
  std::set<std::pair<MinerId, BlockId>> out;
  for (const auto& c : t.confirmations) out.emplace(c.miner, c.block);
  return out;
}

// ---------------------------------------------------------------------------

struct ScaleSuite {
  std::vector<std::int32_t> sizes{20, 40, 60, 80, 100};
  std::map<std::int32_t, std::vector<RepetitionResult>> kpt, ksm;
  double seconds = 0;
};

ScaleSuite run_scale_suite() {
  ScaleSuite s;
  const auto t0 = Clock::now();
  for (std::int32_t n : s.sizes) {
    s.kpt[n] = run(closed_spec("scale-kpt", ProtocolKind::kpt, n, n / 10, 10, 1), jobs);
    s.ksm[n] = run(closed_spec("scale-ksm", ProtocolKind::ksm, n, n / 10, 10, 1), jobs);
  }
  s.seconds = seconds_since(t0);
  return s;
}

void soundness(const ScaleSuite& s) {
  int runs = 0, violations = 0;
  for (const auto* group : {&s.kpt, &s.ksm}) {
    for (const auto& [n, results] : *group) {
      for (const auto& r : results) {
        ++runs;
        violations += static_cast<int>(find_check(r, "confirmation_validity").violations.size());
      }
    }
  }
  verdict("soundness", violations == 0 && runs >= 100 && s.seconds < 120,
          fmt::format("{} closed-pool runs (50 kpt, 50 ksm, n=20..100, mx=n/10), {} validity violations, {:.1f}s", runs,
                      violations, s.seconds));
}

void liveness(const ScaleSuite& s) {
  int pass = 0, inconclusive = 0, fail = 0;
  for (const auto* group : {&s.kpt, &s.ksm}) {
    for (const auto& [n, results] : *group) {
      for (const auto& r : results) {
        switch (find_check(r, "decision_liveness").verdict) {
          case CheckVerdict::pass: ++pass; break;
          case CheckVerdict::inconclusive: ++inconclusive; break;
          case CheckVerdict::fail: ++fail; break;
        }
      }
    }
  }
  const int total = pass + inconclusive + fail;
  verdict("liveness", fail == 0 && pass * 100 >= 95 * total,
          fmt::format("{} pass, {} inconclusive, {} fail of {} runs (slack 3*PT kpt, PT+|SM| ksm)", pass, inconclusive,
                      fail, total));
}

void reject_soundness(std::string_view name, const std::vector<const std::vector<RepetitionResult>*>& groups) {
  int runs = 0, events = 0, bad = 0;
  std::string first;
  for (const auto* results : groups) {
    for (const auto& r : *results) {
      ++runs;
      events += static_cast<int>(r.trace.rejects.size());
      const CheckReport& c = find_check(r, "reject_soundness");
      if (!c.violations.empty() && first.empty()) {
        const Violation& v = c.violations.front();
        first = fmt::format("; first: seed {} miner {} block {} round {}", r.seed, v.miner, to_string(v.block), v.round);
      }
      bad += static_cast<int>(c.violations.size());
    }
  }
  verdict(name, bad == 0, fmt::format("{} runs, {} reject events, {} not backed by a dead branch{}", runs, events, bad, first));
}

void scale_trends(const ScaleSuite& s) {
  std::vector<double> xs, kpt, ksm;
  std::string table;
  for (std::int32_t n : s.sizes) {
    const Average a = average_conf(s.kpt.at(n));
    const Average b = average_conf(s.ksm.at(n));
    xs.push_back(n);
    kpt.push_back(a.value);
    ksm.push_back(b.value);
    table += fmt::format(" n={}:{:.1f}/{:.1f}", n, a.value, b.value);
  }
  const double sk = slope(xs, kpt), ss = slope(xs, ksm);
  verdict("scale-trends", sk < 0 && ss > 0,
          fmt::format("mean confirmation time kpt/ksm{}; slope per miner kpt {:.3f} (want <0), ksm {:.3f} (want >0)", table,
                      sk, ss));
}

// ---------------------------------------------------------------------------

void kpt_sweep_and_reject_checks(const ScaleSuite& s) {
  const auto sweep = run(closed_spec("sweep-kpt", ProtocolKind::kpt, 20, 5, 50, 1), jobs);
  std::vector<const std::vector<RepetitionResult>*> kpt_groups{&sweep};
  std::vector<const std::vector<RepetitionResult>*> ksm_groups;
  for (const auto& [n, r] : s.kpt) kpt_groups.push_back(&r);
  for (const auto& [n, r] : s.ksm) ksm_groups.push_back(&r);
  reject_soundness("kpt-reject-soundness", kpt_groups);
  reject_soundness("ksm-reject-soundness", ksm_groups);
}

// Three pools: A and B talk, A feeds B; C is cut off until `join`, then
// feeds both and never hears back. Only one miner in C mines, fast.
void late_source_pool() {
  const std::vector<MinerId> pool_a{0, 1, 2}, pool_b{3, 4, 5}, pool_c{6, 7, 8};
  const Round join = 30;
  auto schedule_for = [&](Round horizon) {
    LinkSchedule s(9, horizon);
    auto clique = [&](Round r, const std::vector<MinerId>& p) {
      for (MinerId a : p) {
        for (MinerId b : p) {
          if (a != b) s.add_link(r, {a, b});
        }
      }
    };
    auto feed = [&](Round r, const std::vector<MinerId>& from, const std::vector<MinerId>& to) {
      for (MinerId a : from) {
        for (MinerId b : to) s.add_link(r, {a, b});
      }
    };
    for (Round r = 0; r < horizon; ++r) {
      clique(r, pool_a);
      clique(r, pool_b);
      clique(r, pool_c);
      feed(r, pool_a, pool_b);
      if (r >= join) {
        feed(r, pool_c, pool_a);
        feed(r, pool_c, pool_b);
      }
    }
    return s;
  };
  // Journeys out of C only start at `join`; PT is measured from round 0.
  const Round pt = propagation_time(schedule_for(200), pool_c, 0, 0);
  const Round horizon = join + 4 * pt;
  const LinkSchedule schedule = schedule_for(horizon);
  const auto sources = source_pools(observed_pool_graph(schedule, join, horizon, 10));

  auto scenario = [&](DecisionRule rule, std::string_view protocol) {
    RunPlan plan;
    plan.schedule = schedule;
    plan.meta.protocol = std::string(protocol);
    plan.meta.miners = 9;
    plan.meta.pt = pt;
    plan.meta.source_miners = pool_c;
    plan.meta.closed_source = true;
    plan.meta.mining_until = horizon;
    for (MinerId m = 0; m < 9; ++m) {
      MinerConfig c;
      c.self_id = m;
      c.network_size = 9;
      c.mining_rate = m == 6 ? 1.0 : (m < 6 ? 0.2 : 0.0);
      c.seed = 5;
      c.rule = rule;
      plan.miners.push_back(c);
    }
    return simulate(plan);
  };
  auto doomed = [&](const Trace& t) {
    Oracle o(t);
    const auto final_chain = o.ground_truth_accepted(t.last_round());
    std::set<BlockId> on_chain(final_chain.begin(), final_chain.end());
    int count = 0;
    for (const auto& c : t.confirmations) count += c.block.miner < 6 && !on_chain.contains(c.block);
    return count;
  };

  const Trace naive = scenario(NaiveConfig{}, "naive");
  const Trace kpt = scenario(KptConfig{pt}, "kpt");
  const Trace ksm = scenario(KsmConfig{pool_c}, "ksm");
  const bool naive_fails = check_confirmation_validity(naive).verdict == CheckVerdict::fail && doomed(naive) > 0;
  const bool kpt_ok = check_confirmation_validity(kpt).passed() && doomed(kpt) == 0;
  const bool ksm_ok = check_confirmation_validity(ksm).passed() && doomed(ksm) == 0;
  const bool pool_ok = sources.size() == 1 && sources[0] == pool_c;
  verdict("late-source-pool", naive_fails && kpt_ok && ksm_ok && pool_ok,
          fmt::format("PT={} horizon={}; source pool after join {}; doomed confirmations naive {} (validity {}), kpt {} "
                      "(validity {}, {} confirmations), ksm {} (validity {}, {} confirmations)",
                      pt, horizon, pool_ok ? "{6,7,8}" : "wrong", doomed(naive),
                      to_string(check_confirmation_validity(naive).verdict), doomed(kpt),
                      to_string(check_confirmation_validity(kpt).verdict), kpt.confirmations.size(), doomed(ksm),
                      to_string(check_confirmation_validity(ksm).verdict), ksm.confirmations.size()));
}

void acceptance_dip() {
  std::vector<std::array<double, 3>> phase_means;
  std::string table;
  bool dips = true;
  for (std::int32_t n : {20, 50, 100}) {
    ExperimentSpec spec;
    spec.name = "dip";
    spec.topology = phased_config(n, 0, pool_size(n, 25));
    spec.horizon = 300;
    spec.metrics = MetricsMode::per_round;
    spec.repetitions = 10;
    spec.seed = 7;
    std::array<double, 3> m{0, 0, 0};
    const auto results = run(spec, jobs);
    for (const auto& r : results) {
      for (const MetricsRow& row : r.rows) m[static_cast<std::size_t>(std::stoi(row.key) / 100)] += row.acceptance_rate;
    }
    for (double& v : m) v /= 100.0 * static_cast<double>(results.size());
    dips = dips && m[1] < m[0] && m[2] > m[1];
    phase_means.push_back(m);
    table += fmt::format(" n={}: {:.3f}/{:.3f}/{:.3f}", n, m[0], m[1], m[2]);
  }
  auto overall = [](const std::array<double, 3>& m) { return (m[0] + m[1] + m[2]) / 3; };
  const bool by_size = overall(phase_means[0]) > overall(phase_means[1]) && overall(phase_means[1]) > overall(phase_means[2]);
  verdict("acceptance-dip", dips && by_size,
          fmt::format("mean acceptance rounds 0-99/100-199/200-299 over 10 seeds{}; falls with n: {}", table,
                      by_size ? "yes" : "no"));
}

void mx_trends() {
  const std::vector<std::int32_t> mxs{3, 5, 10, 20};
  std::vector<double> kpt_t, ksm_t;
  std::string table;
  bool ksm_faster = true, ksm_accepts = true;
  for (std::int32_t mx : mxs) {
    const auto a = run(closed_spec("mx-kpt", ProtocolKind::kpt, 100, mx, 10, 3), jobs);
    const auto b = run(closed_spec("mx-ksm", ProtocolKind::ksm, 100, mx, 10, 3), jobs);
    const Average ta = average_conf(a), tb = average_conf(b);
    const double aa = average_acceptance(a), ab = average_acceptance(b);
    kpt_t.push_back(ta.value);
    ksm_t.push_back(tb.value);
    ksm_faster = ksm_faster && tb.value <= ta.value;
    ksm_accepts = ksm_accepts && ab >= aa;
    table += fmt::format(" mx={}: pt {} time {:.1f}/{:.1f} acc {:.3f}/{:.3f}", mx, a.front().pt, ta.value, tb.value, aa, ab);
  }
  bool falling = true;
  for (std::size_t i = 1; i < mxs.size(); ++i) falling = falling && kpt_t[i] < kpt_t[i - 1] && ksm_t[i] < ksm_t[i - 1];
  verdict("mx-trends", falling && ksm_faster && ksm_accepts,
          fmt::format("n=100, 75 sources, 10 seeds, kpt/ksm{}; time falls with mx: {}; ksm<=kpt: {}; ksm acc>=kpt: {}",
                      table, falling ? "yes" : "no", ksm_faster ? "yes" : "no", ksm_accepts ? "yes" : "no"));
}

void constant_size_messages() {
  struct Tally {
    int runs = 0;
    int mismatched = 0;
    int violations = 0;
  };
  std::map<std::string, Tally> by_topology;
  std::size_t widest = 0;
  auto compare = [&](const std::string& topology, ExperimentSpec spec) {
    Tally& t = by_topology[topology];
    spec.protocol.policy = MessagePolicy::full_tree;
    const auto full = run(spec, jobs);
    spec.protocol.policy = MessagePolicy::deepest_unsent;
    const auto thin = run(spec, jobs);
    for (std::size_t i = 0; i < full.size(); ++i) {
      ++t.runs;
      for (const auto& d : thin[i].trace.deliveries) widest = std::max(widest, d.max_blocks);
      t.mismatched += confirmed_set(full[i].trace) != confirmed_set(thin[i].trace);
      t.violations += static_cast<int>(find_check(thin[i], "confirmation_validity").violations.size());
    }
  };
  for (ProtocolKind kind : {ProtocolKind::kpt, ProtocolKind::ksm}) {
    ExperimentSpec spec;
    spec.name = "policy";
    spec.topology.n = 20;
    spec.topology.phases = {{0, 300, PhaseMode::complete, std::nullopt}};
    spec.protocol.kind = kind;
    spec.horizon = 300;
    spec.repetitions = 5;
    spec.seed = 11;
    compare("complete", spec);
    compare("closed random", closed_spec("policy", kind, 20, 5, 5, 11));
  }
  bool same = true;
  std::string table;
  for (const auto& [name, t] : by_topology) {
    same = same && t.mismatched == 0;
    table += fmt::format("; {}: {} of {} pairs differ, {} validity violations under deepest-unsent", name, t.mismatched,
                         t.runs, t.violations);
  }
  verdict("constant-size-messages", widest <= 1 && same,
          fmt::format("kpt and ksm, n=20, 5 seeds each; widest deepest-unsent message {} block(s){}", widest, table));
}

void journeys_vs_flood() {
  int schedules = 0, equal = 0;
  std::string diffs;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const std::int32_t n = 20 + static_cast<std::int32_t>(seed % 5) * 20;
    const std::int32_t mx = 2 + static_cast<std::int32_t>(seed % 4) * 2;
    const std::int32_t k = pool_size(n, 75);
    const LinkSchedule s = random_neighbor_schedule(closed_config(n, mx, k, 300, seed)).schedule;
    const auto sources = first_miners(k);
    const auto last = last_complete_start(s, sources);
    if (!last) continue;
    std::vector<Round> starts(static_cast<std::size_t>(*last + 1));
    std::iota(starts.begin(), starts.end(), 0);
    const Round a = propagation_time(s, sources, 0, *last);
    const Round b = flood_propagation_time(s, sources, starts);
    ++schedules;
    if (a == b) {
      ++equal;
    } else {
      diffs += fmt::format(" seed {}: {} vs {}", seed, a, b);
    }
  }
  verdict("journeys-vs-flood", schedules == 20 && equal == 20,
          fmt::format("{} of {} schedules agree exactly{}", equal, schedules, diffs));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  std::vector<std::string> only;
  app.add_option("-j,--jobs", jobs, "parallel repetitions");
  app.add_option("--only", only, "run just these criteria");
  CLI11_PARSE(app, argc, argv);
  auto wanted = [&](std::initializer_list<std::string_view> names) {
    if (only.empty()) return true;
    for (std::string_view n : names) {
      if (std::find(only.begin(), only.end(), n) != only.end()) return true;
    }
    return false;
  };

  const auto t0 = Clock::now();
  if (wanted({"journeys-vs-flood"})) journeys_vs_flood();
  if (wanted({"soundness", "liveness", "kpt-reject-soundness", "ksm-reject-soundness", "scale-trends"})) {
    const ScaleSuite suite = run_scale_suite();
    if (wanted({"soundness"})) soundness(suite);
    if (wanted({"liveness"})) liveness(suite);
    if (wanted({"kpt-reject-soundness", "ksm-reject-soundness"})) kpt_sweep_and_reject_checks(suite);
    if (wanted({"scale-trends"})) scale_trends(suite);
  }
  if (wanted({"late-source-pool"})) late_source_pool();
  if (wanted({"acceptance-dip"})) acceptance_dip();
  if (wanted({"mx-trends"})) mx_trends();
  if (wanted({"constant-size-messages"})) constant_size_messages();
  fmt::print("{} criteria failed, {:.0f}s\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
