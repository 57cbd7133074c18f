#include "dynchain/network.hpp"

#include <istream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

namespace dynchain {

LinkSchedule::LinkSchedule(std::int32_t miners, Round horizon)
    : miners_(miners), rounds_(static_cast<std::size_t>(horizon)) {
  if (miners < 0 || horizon < 0) throw ScheduleError("negative schedule dimensions");
}

std::span<const Link> LinkSchedule::links_at(Round r) const {
  if (r < 0 || r >= horizon()) {
    throw ScheduleError(fmt::format("round {} outside schedule horizon {}", r, horizon()));
  }
  return rounds_[static_cast<std::size_t>(r)];
}

void LinkSchedule::validate(const Link& link) const {
  if (link.sender < 0 || link.sender >= miners_ || link.receiver < 0 || link.receiver >= miners_) {
    throw ScheduleError(fmt::format("link {}->{} references unknown miner", link.sender, link.receiver));
  }
  if (link.sender == link.receiver) {
    throw ScheduleError(fmt::format("self-link on miner {}", link.sender));
  }
}

void LinkSchedule::set_links(Round r, std::vector<Link> links) {
  links_at(r);  // range check
  for (const Link& l : links) validate(l);
  std::sort(links.begin(), links.end());
  links.erase(std::unique(links.begin(), links.end()), links.end());
  rounds_[static_cast<std::size_t>(r)] = std::move(links);
}

void LinkSchedule::add_link(Round r, Link link) {
  links_at(r);
  validate(link);
  auto& set = rounds_[static_cast<std::size_t>(r)];
  auto pos = std::lower_bound(set.begin(), set.end(), link);
  if (pos == set.end() || *pos != link) set.insert(pos, link);
}

LinkSchedule LinkSchedule::truncated(Round horizon) const {
  LinkSchedule out(miners_, std::min(horizon, this->horizon()));
  for (Round r = 0; r < out.horizon(); ++r) out.rounds_[r] = rounds_[r];
  return out;
}

std::size_t LinkSchedule::link_count() const {
  std::size_t n = 0;
  for (const auto& r : rounds_) n += r.size();
  return n;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t k) {
  auto mix = [](std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  };
  return mix(mix(seed) ^ (k * 0xD1B54A32D192ED03ULL));
}

LinkSchedule complete_schedule(std::int32_t miners, Round horizon) {
  LinkSchedule s(miners, horizon);
  std::vector<Link> all;
  for (MinerId a = 0; a < miners; ++a) {
    for (MinerId b = 0; b < miners; ++b) {
      if (a != b) all.push_back({a, b});
    }
  }
  for (Round r = 0; r < horizon; ++r) s.set_links(r, all);
  return s;
}

void write_schedule_csv(std::ostream& out, const LinkSchedule& schedule) {
  out << "miners,horizon\n" << schedule.miners() << ',' << schedule.horizon() << '\n';
  out << "round,sender,receiver\n";
  for (Round r = 0; r < schedule.horizon(); ++r) {
    for (const Link& l : schedule.links_at(r)) out << r << ',' << l.sender << ',' << l.receiver << '\n';
  }
}

LinkSchedule read_schedule_csv(std::istream& in) {
  std::string line;
  auto expect_header = [&](const char* header) {
    if (!std::getline(in, line) || line != header) {
      throw ScheduleError(fmt::format("schedule: expected header '{}'", header));
    }
  };
  expect_header("miners,horizon");
  std::int32_t miners = 0;
  Round horizon = 0;
  char comma = 0;
  if (!std::getline(in, line)) throw ScheduleError("schedule: missing dimensions");
  {
    std::istringstream ls(line);
    if (!(ls >> miners >> comma >> horizon) || comma != ',') {
      throw ScheduleError("schedule: malformed dimensions line");
    }
  }
  expect_header("round,sender,receiver");
  LinkSchedule s(miners, horizon);
  std::vector<std::vector<Link>> rounds(static_cast<std::size_t>(horizon));
  std::size_t lineno = 3;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    Round r = 0;
    Link l;
    char c1 = 0, c2 = 0;
    if (!(ls >> r >> c1 >> l.sender >> c2 >> l.receiver) || c1 != ',' || c2 != ',') {
      throw ScheduleError(fmt::format("schedule: malformed record on line {}", lineno));
    }
    if (r < 0 || r >= horizon) {
      throw ScheduleError(fmt::format("schedule: round {} out of range on line {}", r, lineno));
    }
    rounds[r].push_back(l);
  }
  for (Round r = 0; r < horizon; ++r) s.set_links(r, std::move(rounds[r]));
  return s;
}

std::map<MinerId, Round> journey_earliest_arrival(const LinkSchedule& schedule, MinerId from,
                                                  Round start) {
  schedule.links_at(start);  // range check
  std::map<MinerId, Round> arrival{{from, start}};
  std::vector<char> reached(static_cast<std::size_t>(schedule.miners()), 0);
  reached[from] = 1;
  std::size_t count = 1;
  const auto n = static_cast<std::size_t>(schedule.miners());
  for (Round r = start; r < schedule.horizon() && count < n; ++r) {
    // Relax against the reach set as it stood at the start of round r; a
    // message landing in r + 1 cannot hop again within r.
    std::vector<MinerId> fresh;
    for (const Link& l : schedule.links_at(r)) {
      if (reached[l.sender] && !reached[l.receiver]) fresh.push_back(l.receiver);
    }
    for (MinerId m : fresh) {
      if (!reached[m]) {
        reached[m] = 1;
        ++count;
        arrival.emplace(m, r + 1);
      }
    }
  }
  return arrival;
}

}  // namespace dynchain
