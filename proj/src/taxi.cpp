#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "tsgnn/error.hpp"
#include "tsgnn/graph.hpp"

namespace tsgnn {

namespace {

constexpr const char* kTripHeader = "pickup_datetime,PULocationID,DOLocationID";

std::chrono::sys_days civil_day(int year, unsigned month, unsigned day) {
  using namespace std::chrono;
  const year_month_day ymd{std::chrono::year{year}, std::chrono::month{month}, std::chrono::day{day}};
  if (!ymd.ok()) throw FormatError("invalid calendar date");
  return sys_days{ymd};
}

long long hour_index(const TaxiTrip& t) {
  const auto days = civil_day(t.year, t.month, t.day).time_since_epoch().count();
  return static_cast<long long>(days) * 24 + t.hour;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace

unsigned weekday_of(int year, unsigned month, unsigned day) {
  return std::chrono::weekday{civil_day(year, month, day)}.c_encoding();
}

TaxiTrip parse_trip_time(const std::string& ts) {
  // YYYY-MM-DD HH:MM:SS
  TaxiTrip t;
  unsigned second = 0;
  const std::string_view s(ts);
  const bool shape_ok = s.size() == 19 && s[4] == '-' && s[7] == '-' && s[10] == ' ' && s[13] == ':' && s[16] == ':';
  if (!shape_ok || !parse_number(s.substr(0, 4), t.year) || !parse_number(s.substr(5, 2), t.month) ||
      !parse_number(s.substr(8, 2), t.day) || !parse_number(s.substr(11, 2), t.hour) ||
      !parse_number(s.substr(14, 2), t.minute) || !parse_number(s.substr(17, 2), second) || t.hour > 23 ||
      t.minute > 59 || second > 59) {
    throw FormatError("bad timestamp '" + ts + "', expected YYYY-MM-DD HH:MM:SS");
  }
  civil_day(t.year, t.month, t.day);
  return t;
}

std::vector<TaxiTrip> read_trip_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw FormatError(path.string() + ":1: empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kTripHeader) {
    throw FormatError(path.string() + ":1: expected header '" + std::string(kTripHeader) + "'");
  }
  std::vector<TaxiTrip> trips;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fail = [&](const std::string& what) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + what);
    };
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
    if (c2 == std::string::npos || line.find(',', c2 + 1) != std::string::npos) fail("expected 3 fields");
    TaxiTrip t;
    try {
      t = parse_trip_time(line.substr(0, c1));
    } catch (const FormatError& e) {
      fail(e.what());
    }
    long long src = -1, dst = -1;
    if (!parse_number(std::string_view(line).substr(c1 + 1, c2 - c1 - 1), src) ||
        !parse_number(std::string_view(line).substr(c2 + 1), dst) || src < 0 || dst < 0) {
      fail("zone ids must be non-negative integers");
    }
    t.source_zone = static_cast<std::size_t>(src);
    t.dest_zone = static_cast<std::size_t>(dst);
    trips.push_back(t);
  }
  return trips;
}

void write_trip_csv(const std::filesystem::path& path, std::span<const TaxiTrip> trips) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << kTripHeader << '\n';
  char buf[32];
  for (const auto& t : trips) {
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u %02u:%02u:00", t.year, t.month, t.day, t.hour, t.minute);
    out << buf << ',' << t.source_zone << ',' << t.dest_zone << '\n';
  }
}

GraphDataset build_taxi_dataset(std::span<const TaxiTrip> trips, std::size_t zone_count, const std::string& name) {
  if (trips.empty()) throw DomainError("build_taxi_dataset: no trips");
  if (zone_count == 0) throw DomainError("build_taxi_dataset: zone_count must be positive");
  long long first = hour_index(trips[0]);
  long long last = first;
  for (const auto& t : trips) {
    if (t.source_zone >= zone_count || t.dest_zone >= zone_count) {
      throw FormatError("build_taxi_dataset: zone id " + std::to_string(std::max(t.source_zone, t.dest_zone)) +
                        " outside " + std::to_string(zone_count) + " zones");
    }
    const long long h = hour_index(t);
    first = std::min(first, h);
    last = std::max(last, h);
  }
  const auto hours = static_cast<std::size_t>(last - first + 1);
  std::vector<std::vector<Edge>> edges(hours);
  for (const auto& t : trips) {
    edges[static_cast<std::size_t>(hour_index(t) - first)].emplace_back(t.source_zone, t.dest_zone);
  }
  std::vector<std::size_t> categories(zone_count);
  for (std::size_t i = 0; i < zone_count; ++i) categories[i] = i;

  GraphDataset ds;
  ds.name = name;
  ds.num_classes = 2;
  ds.num_feature_categories = zone_count;
  ds.graphs.reserve(hours);
  for (std::size_t h = 0; h < hours; ++h) {
    const long long idx = first + static_cast<long long>(h);
    const long long day = idx >= 0 ? idx / 24 : (idx - 23) / 24;
    const auto hour = static_cast<unsigned>(idx - day * 24);
    const std::chrono::sys_days date{std::chrono::days{day}};
    const std::chrono::year_month_day ymd{date};
    const unsigned wd = std::chrono::weekday{date}.c_encoding();
    const std::size_t label = (wd >= 1 && wd <= 4) ? 0 : 1;  // Mon-Thu vs Fri-Sun
    char id[32];
    std::snprintf(id, sizeof id, "%04d-%02u-%02u %02u:00", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), hour);
    ds.graphs.emplace_back(zone_count, std::move(edges[h]), categories, label, id);
  }
  ds.provenance = "taxi trips: " + std::to_string(trips.size()) + " trips, " + std::to_string(zone_count) +
                  " zones, hourly graphs; labels 0=Mon-Thu, 1=Fri-Sun";
  ds.validate(false);
  return ds;
}

}  // namespace tsgnn
