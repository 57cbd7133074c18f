#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>
#include <json.hpp>

#include "dynchain/harness.hpp"

namespace dynchain {

double acceptance_rate(const Oracle& oracle, Round r) {
  const auto minted = oracle.minted_by(r);
  if (minted == 0) return 0.0;
  const auto accepted = oracle.ground_truth_accepted(r).size() - 1;
  return static_cast<double>(accepted) / static_cast<double>(minted);
}

double acceptance_rate(const Trace& trace, Round r) { return acceptance_rate(Oracle(trace), r); }

namespace {

// Per block confirmed by every miner, the round of its last confirmation.
std::map<BlockId, Round> completion_rounds(const Trace& trace) {
  std::map<BlockId, std::pair<std::int32_t, Round>> seen;
  for (const ConfirmRecord& c : trace.confirmations) {
    if (c.block.is_genesis()) continue;
    auto& [count, last] = seen[c.block];
    ++count;
    last = std::max(last, c.round);
  }
  std::map<BlockId, Round> out;
  for (const auto& [b, cl] : seen) {
    if (cl.first == trace.meta.miners) out.emplace(b, cl.second);
  }
  return out;
}

}  // namespace

std::map<BlockId, Round> confirmation_time(const Trace& trace) {
  auto out = completion_rounds(trace);
  for (auto& [b, round] : out) round -= b.round;
  return out;
}

std::vector<MetricsRow> metrics(const Trace& trace, const std::string& experiment, MetricsMode mode) {
  std::vector<MetricsRow> rows;
  if (trace.horizon() == 0) return rows;
  Oracle oracle(trace);

  // Completions sorted by round so the per-round sweep is linear.
  std::vector<std::pair<Round, Round>> done;  // (completion round, confirmation time)
  for (const auto& [b, at] : completion_rounds(trace)) done.emplace_back(at, at - b.round);
  std::sort(done.begin(), done.end());

  auto row_at = [&](Round r, std::string key, std::size_t& cursor, double& time_sum, Round& time_max,
                    double& msg_max) {
    while (cursor < done.size() && done[cursor].first <= r) {
      time_sum += static_cast<double>(done[cursor].second);
      time_max = std::max(time_max, done[cursor].second);
      ++cursor;
    }
    MetricsRow row;
    row.experiment = experiment;
    row.seed = trace.meta.seed;
    row.key = std::move(key);
    row.mints = static_cast<double>(oracle.minted_by(r));
    row.accepted = static_cast<double>(oracle.ground_truth_accepted(r).size() - 1);
    row.acceptance_rate = row.mints > 0 ? row.accepted / row.mints : 0.0;
    row.confirmed_all = static_cast<double>(cursor);
    if (cursor > 0) {
      row.mean_conf_time = time_sum / static_cast<double>(cursor);
      row.max_conf_time = static_cast<double>(time_max);
    }
    row.max_msg_blocks = msg_max;
    return row;
  };

  std::size_t cursor = 0;
  double time_sum = 0, msg_max = 0;
  Round time_max = 0;
  if (mode == MetricsMode::per_round) {
    const Round end = std::min(trace.meta.mining_until > 0 ? trace.meta.mining_until : trace.horizon(), trace.horizon());
    for (Round r = 0; r < end; ++r) {
      msg_max = std::max(msg_max, static_cast<double>(trace.deliveries.at(r).max_blocks));
      rows.push_back(row_at(r, std::to_string(r), cursor, time_sum, time_max, msg_max));
    }
  } else {
    for (const auto& d : trace.deliveries) msg_max = std::max(msg_max, static_cast<double>(d.max_blocks));
    rows.push_back(row_at(trace.last_round(), "final", cursor, time_sum, time_max, msg_max));
  }
  return rows;
}

const char* const kCsvHeader =
    "experiment,seed,key,mints,accepted,acceptance_rate,confirmed_all,mean_conf_time,max_conf_time,max_msg_blocks";

namespace {

std::string optional_field(const std::optional<double>& v) { return v ? fmt::format("{}", *v) : std::string(); }

}  // namespace

void write_rows_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  out << kCsvHeader << '\n';
  for (const MetricsRow& r : rows) {
    out << fmt::format("{},{},{},{},{},{},{},{},{},{}\n", r.experiment, r.seed, r.key, r.mints, r.accepted,
                       r.acceptance_rate, r.confirmed_all, optional_field(r.mean_conf_time),
                       optional_field(r.max_conf_time), r.max_msg_blocks);
  }
}

void write_rows_json(std::ostream& out, const std::vector<MetricsRow>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const MetricsRow& r : rows) {
    nlohmann::json j = {{"experiment", r.experiment},
                        {"seed", r.seed},
                        {"key", r.key},
                        {"mints", r.mints},
                        {"accepted", r.accepted},
                        {"acceptance_rate", r.acceptance_rate},
                        {"confirmed_all", r.confirmed_all},
                        {"mean_conf_time", nullptr},
                        {"max_conf_time", nullptr},
                        {"max_msg_blocks", r.max_msg_blocks}};
    if (r.mean_conf_time) j["mean_conf_time"] = *r.mean_conf_time;
    if (r.max_conf_time) j["max_conf_time"] = *r.max_conf_time;
    arr.push_back(std::move(j));
  }
  out << arr.dump(1) << '\n';
}

std::vector<MetricsRow> read_rows_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw std::runtime_error("rows file: unexpected header");
  std::vector<MetricsRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 10) throw std::runtime_error(fmt::format("rows file: line {} has {} fields", lineno, f.size()));
    try {
      MetricsRow r;
      r.experiment = f[0];
      r.seed = std::stoull(f[1]);
      r.key = f[2];
      r.mints = std::stod(f[3]);
      r.accepted = std::stod(f[4]);
      r.acceptance_rate = std::stod(f[5]);
      r.confirmed_all = std::stod(f[6]);
      if (!f[7].empty()) r.mean_conf_time = std::stod(f[7]);
      if (!f[8].empty()) r.max_conf_time = std::stod(f[8]);
      r.max_msg_blocks = std::stod(f[9]);
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw std::runtime_error(fmt::format("rows file: malformed number on line {}", lineno));
    }
  }
  return rows;
}

std::vector<MetricsRow> aggregate_rows(const std::vector<MetricsRow>& rows) {
  struct Acc {
    MetricsRow sum;
    std::size_t n = 0;
    double mean_sum = 0, max_sum = 0;
    std::size_t mean_n = 0, max_n = 0;
  };
  std::vector<Acc> groups;
  std::map<std::pair<std::string, std::string>, std::size_t> index;
  for (const MetricsRow& r : rows) {
    auto [it, fresh] = index.try_emplace({r.experiment, r.key}, groups.size());
    if (fresh) {
      groups.emplace_back();
      groups.back().sum.experiment = r.experiment;
      groups.back().sum.key = r.key;
    }
    Acc& a = groups[it->second];
    ++a.n;
    a.sum.mints += r.mints;
    a.sum.accepted += r.accepted;
    a.sum.acceptance_rate += r.acceptance_rate;
    a.sum.confirmed_all += r.confirmed_all;
    a.sum.max_msg_blocks = std::max(a.sum.max_msg_blocks, r.max_msg_blocks);
    if (r.mean_conf_time) {
      a.mean_sum += *r.mean_conf_time;
      ++a.mean_n;
    }
    if (r.max_conf_time) {
      a.max_sum += *r.max_conf_time;
      ++a.max_n;
    }
  }
  std::vector<MetricsRow> out;
  for (Acc& a : groups) {
    MetricsRow r = a.sum;
    const double n = static_cast<double>(a.n);
    r.seed = a.n;
    r.mints /= n;
    r.accepted /= n;
    r.acceptance_rate /= n;
    r.confirmed_all /= n;
    if (a.mean_n) r.mean_conf_time = a.mean_sum / static_cast<double>(a.mean_n);
    if (a.max_n) r.max_conf_time = a.max_sum / static_cast<double>(a.max_n);
    out.push_back(std::move(r));
  }
  return out;
}

void emit(const std::vector<RepetitionResult>& results, const std::filesystem::path& rows_path,
          const std::optional<std::filesystem::path>& trace_dir) {
  auto open = [](const std::filesystem::path& p) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p);
    if (!out) throw std::runtime_error(fmt::format("cannot write {}", p.string()));
    return out;
  };
  std::vector<MetricsRow> rows;
  std::vector<CheckReport> checks;
  for (const auto& res : results) {
    rows.insert(rows.end(), res.rows.begin(), res.rows.end());
    for (auto rep : res.checks) {
      rep.detail = fmt::format("seed {}: {}", res.seed, rep.detail);
      checks.push_back(std::move(rep));
    }
  }
  {
    auto out = open(rows_path);
    if (rows_path.extension() == ".json") {
      write_rows_json(out, rows);
    } else {
      write_rows_csv(out, rows);
    }
    if (!out) throw std::runtime_error(fmt::format("write failed for {}", rows_path.string()));
  }
  {
    auto checks_path = rows_path;
    checks_path.replace_extension(".checks.json");
    auto out = open(checks_path);
    out << report_json(checks) << '\n';
    if (!out) throw std::runtime_error(fmt::format("write failed for {}", checks_path.string()));
  }
  if (trace_dir) {
    std::filesystem::create_directories(*trace_dir);
    for (const auto& res : results) {
      const auto path = *trace_dir / fmt::format("{}-{}.json", res.rows.empty() ? "trace" : res.rows.front().experiment,
                                                 res.seed);
      auto out = open(path);
      write_trace_json(out, res.trace);
      if (!out) throw std::runtime_error(fmt::format("write failed for {}", path.string()));
    }
  }
}

}  // namespace dynchain
