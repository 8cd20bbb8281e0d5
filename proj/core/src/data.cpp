#include "strata/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "strata/rng.hpp"
#include "json.hpp"

namespace strata::data {

const NodeSeries& CityDataset::node(const std::string& id) const {
  for (const auto& n : nodes)
    if (n.node_id == id) return n;
  throw DataError("unknown node: " + id);
}

namespace {

std::vector<std::string> split_line(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

void recompute_usable_spans(NodeSeries& node, const std::vector<bool>& usable) {
  node.usable_spans.clear();
  std::size_t i = 0;
  while (i < usable.size()) {
    if (!usable[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < usable.size() && usable[j]) ++j;
    node.usable_spans.emplace_back(i, j);
    i = j;
  }
}

}  // namespace

CityDataset ingest_csv(const std::string& path, const CsvSchema& schema) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty CSV: " + path);
  auto header = split_line(line);
  int ts_i = -1, node_i = -1, avail_i = -1, cap_i = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == schema.timestamp_col) ts_i = static_cast<int>(i);
    if (header[i] == schema.node_col) node_i = static_cast<int>(i);
    if (header[i] == schema.available_col) avail_i = static_cast<int>(i);
    if (header[i] == schema.capacity_col) cap_i = static_cast<int>(i);
  }
  if (ts_i < 0 || node_i < 0 || avail_i < 0 || cap_i < 0)
    throw DataError("CSV missing required columns in " + path);

  std::map<std::string, std::vector<ParkingRecord>> per_node;
  std::vector<std::string> invalid_rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cols = split_line(line);
    if (cols.size() <= static_cast<std::size_t>(std::max({ts_i, node_i, avail_i, cap_i})))
      throw DataError("line " + std::to_string(line_no) + ": too few columns");
    ParkingRecord rec;
    try {
      rec.timestamp = parse_rfc3339(cols[ts_i]);
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
    rec.node_id = cols[node_i];
    try {
      rec.available = std::stoi(cols[avail_i]);
      rec.capacity = std::stoi(cols[cap_i]);
    } catch (const std::exception&) {
      throw DataError("line " + std::to_string(line_no) + ": non-numeric value");
    }
    if (rec.available < 0 || rec.capacity <= 0)
      throw ValidationError("line " + std::to_string(line_no) + ": negative/zero counts");
    if (rec.available > rec.capacity)
      invalid_rows.push_back("line " + std::to_string(line_no) + ": available " +
                             std::to_string(rec.available) + " > capacity " +
                             std::to_string(rec.capacity));
    per_node[rec.node_id].push_back(rec);
  }
  if (!invalid_rows.empty()) {
    std::string msg = "available > capacity on " + std::to_string(invalid_rows.size()) + " rows: ";
    for (std::size_t i = 0; i < invalid_rows.size() && i < 5; ++i) msg += invalid_rows[i] + "; ";
    throw ValidationError(msg);
  }
  if (per_node.empty()) throw DataError("no data rows in " + path);

  CityDataset ds;
  ds.city_name = path;
  const std::int64_t step = ds.step_seconds();

  std::int64_t grid_start = INT64_MAX, grid_end = INT64_MIN;
  for (auto& [id, recs] : per_node) {
    std::sort(recs.begin(), recs.end(),
              [](const ParkingRecord& a, const ParkingRecord& b) { return a.timestamp < b.timestamp; });
    for (std::size_t i = 0; i < recs.size(); ++i) {
      if (recs[i].timestamp % step != 0)
        throw DataError("node " + id + ": timestamp not on the 15-minute grid: " +
                        format_rfc3339(recs[i].timestamp));
      if (i && recs[i].timestamp == recs[i - 1].timestamp)
        throw DataError("node " + id + ": duplicate timestamp " + format_rfc3339(recs[i].timestamp));
    }
    grid_start = std::min(grid_start, recs.front().timestamp);
    grid_end = std::max(grid_end, recs.back().timestamp);
  }
  ds.grid_start = grid_start;
  ds.grid_length = static_cast<std::size_t>((grid_end - grid_start) / step) + 1;

  for (auto& [id, recs] : per_node) {
    NodeSeries node;
    node.node_id = id;
    node.capacity = recs.front().capacity;
    node.values.assign(ds.grid_length, 0);
    node.filled.assign(ds.grid_length, true);
    std::vector<bool> usable(ds.grid_length, false);
    std::vector<bool> present(ds.grid_length, false);
    for (const auto& r : recs) {
      std::size_t idx = static_cast<std::size_t>((r.timestamp - grid_start) / step);
      node.values[idx] = r.available;
      node.filled[idx] = false;
      present[idx] = true;
    }
    // Forward-fill short gaps; mark longer runs (and leading holes) unusable.
    std::ptrdiff_t last_present = -1;
    for (std::size_t i = 0; i < ds.grid_length; ++i) {
      if (present[i]) {
        std::ptrdiff_t gap = static_cast<std::ptrdiff_t>(i) - last_present - 1;
        if (last_present >= 0 && gap > 0 && gap <= schema.max_fill_gap) {
          for (std::ptrdiff_t j = last_present + 1; j < static_cast<std::ptrdiff_t>(i); ++j) {
            node.values[j] = node.values[last_present];
            usable[j] = true;
          }
          ds.provenance.push_back("node " + id + ": forward-filled " + std::to_string(gap) +
                                  " step(s) ending at " + format_rfc3339(ds.timestamp_at(i - 1)));
        } else if (last_present >= 0 && gap > schema.max_fill_gap) {
          ds.provenance.push_back("node " + id + ": gap of " + std::to_string(gap) +
                                  " steps split the series at " +
                                  format_rfc3339(ds.timestamp_at(last_present + 1)));
        }
        usable[i] = true;
        last_present = static_cast<std::ptrdiff_t>(i);
      }
    }
    recompute_usable_spans(node, usable);
    ds.nodes.push_back(std::move(node));
  }
  return ds;
}

SplitResult chronological_split(const CityDataset& ds, const SplitSpec& spec, bool is_target) {
  if (std::abs(spec.train_fraction + spec.val_fraction + spec.test_fraction - 1.0) > 1e-9)
    throw ConfigError("split fractions must sum to 1");
  const std::size_t T = ds.grid_length;
  if (T < 10) throw DataError("dataset too short to split: " + std::to_string(T) + " steps");
  // Guard against accumulated floating-point error (0.7 + 0.1 < 0.8) so the
  // nominal boundaries stay exact on divisible lengths.
  const auto boundary = [T](double fraction) {
    return static_cast<std::size_t>(std::floor(fraction * double(T) + 1e-9));
  };
  const std::size_t b1 = boundary(spec.train_fraction);
  const std::size_t b2 = boundary(spec.train_fraction + spec.val_fraction);

  auto slice = [&](std::size_t from, std::size_t to) {
    CityDataset out;
    out.city_name = ds.city_name;
    out.frequency_minutes = ds.frequency_minutes;
    out.grid_start = ds.timestamp_at(from);
    out.grid_length = to - from;
    out.node_context = ds.node_context;
    for (const auto& n : ds.nodes) {
      NodeSeries ns;
      ns.node_id = n.node_id;
      ns.capacity = n.capacity;
      ns.values.assign(n.values.begin() + from, n.values.begin() + to);
      ns.filled.assign(n.filled.begin() + from, n.filled.begin() + to);
      for (auto [s, e] : n.usable_spans) {
        std::size_t cs = std::max(s, from), ce = std::min(e, to);
        if (cs < ce) ns.usable_spans.emplace_back(cs - from, ce - from);
      }
      out.nodes.push_back(std::move(ns));
    }
    return out;
  };

  SplitResult res;
  std::size_t train_from = 0;
  if (is_target) {
    const std::size_t steps_per_day = static_cast<std::size_t>(1440 / ds.frequency_minutes);
    const std::size_t want = static_cast<std::size_t>(spec.target_train_days) * steps_per_day;
    if (want > b1)
      throw DataError("target train split has " + std::to_string(b1) + " steps, need " +
                      std::to_string(want) + " for " + std::to_string(spec.target_train_days) +
                      " days");
    train_from = b1 - want;
  }
  res.train = slice(train_from, b1);
  res.val = slice(b1, b2);
  res.test = slice(b2, T);
  return res;
}

void for_each_segment(const CityDataset& ds, std::size_t segment_len, std::size_t stride,
                      const std::function<void(const Segment&)>& fn) {
  if (segment_len == 0 || stride == 0) throw ConfigError("segment_len and stride must be positive");
  for (const auto& node : ds.nodes) {
    const auto& spans =
        node.usable_spans.empty()
            ? std::vector<std::pair<std::size_t, std::size_t>>{{0, ds.grid_length}}
            : node.usable_spans;
    for (auto [s, e] : spans) {
      if (e - s < segment_len) continue;
      for (std::size_t start = s; start + segment_len <= e; start += stride) {
        Segment seg;
        seg.node_id = node.node_id;
        seg.start_step = start;
        seg.start_timestamp = ds.timestamp_at(start);
        seg.values.assign(node.values.begin() + start, node.values.begin() + start + segment_len);
        fn(seg);
      }
    }
  }
}

std::vector<Segment> slice_segments(const CityDataset& ds, std::size_t segment_len,
                                    std::size_t stride) {
  std::vector<Segment> out;
  for_each_segment(ds, segment_len, stride, [&](const Segment& s) { out.push_back(s); });
  return out;
}

CityDataset generate_synthetic_city(std::uint64_t seed, const SyntheticProfile& profile,
                                    const std::string& city_name) {
  if (profile.nodes <= 0 || profile.days <= 0 || profile.capacity <= 0)
    throw ConfigError("synthetic profile: nodes, days and capacity must be positive");
  CityDataset ds;
  ds.city_name = city_name;
  ds.frequency_minutes = profile.frequency_minutes;
  ds.grid_start = profile.start_timestamp;
  const std::size_t steps_per_day = static_cast<std::size_t>(1440 / profile.frequency_minutes);
  ds.grid_length = steps_per_day * static_cast<std::size_t>(profile.days);

  Rng rng(seed);
  for (int n = 0; n < profile.nodes; ++n) {
    NodeSeries node;
    node.node_id = city_name + "_cp" + std::to_string(n);
    node.capacity = profile.capacity;
    node.values.resize(ds.grid_length);
    node.filled.assign(ds.grid_length, false);
    node.usable_spans = {{0, ds.grid_length}};

    if (profile.derived_target) {
      // Affine copy of a chosen source node, then independent noise and clamping.
      if (!profile.derived_from) throw ConfigError("derived_target requires a source dataset");
      const NodeSeries& src = profile.derived_from->node(profile.derived_node);
      for (std::size_t t = 0; t < ds.grid_length; ++t) {
        std::int64_t ts = ds.timestamp_at(t);
        std::int64_t src_step64 =
            (ts - profile.derived_from->grid_start) / profile.derived_from->step_seconds();
        if (src_step64 < 0 || src_step64 >= static_cast<std::int64_t>(src.values.size()))
          throw ConfigError("derived target span exceeds source span");
        double v = profile.derived_scale * src.values[static_cast<std::size_t>(src_step64)] +
                   profile.derived_offset;
        v += rng.normal() * profile.noise_sigma * profile.capacity;
        node.values[t] =
            static_cast<int>(std::llround(std::clamp(v, 0.0, double(profile.capacity))));
      }
      ds.nodes.push_back(std::move(node));
      continue;
    }

    // Per-node pattern variation, drawn once from the seeded stream.
    double phase = rng.uniform(0.0, 2.0 * M_PI);
    double amp_scale = rng.uniform(0.7, 1.3);
    double weekend_sign = rng.next_double() < 0.5 ? -1.0 : 1.0;
    for (std::size_t t = 0; t < ds.grid_length; ++t) {
      std::int64_t ts = ds.timestamp_at(t);
      double day_frac = double(((ts % 86400) + 86400) % 86400) / 86400.0;
      int dow = static_cast<int>((((ts / 86400) % 7) + 7 + 4) % 7);  // 1970-01-01 was Thursday
      bool weekend = dow == 5 || dow == 6;
      double diurnal = profile.diurnal_amplitude * amp_scale *
                       std::sin(2.0 * M_PI * day_frac + phase);
      double weekly = weekend ? weekend_sign * profile.weekly_modulation : 0.0;
      double frac = profile.base + diurnal + weekly + rng.normal() * profile.noise_sigma;
      double v = profile.capacity * frac;
      node.values[t] = static_cast<int>(std::llround(std::clamp(v, 0.0, double(profile.capacity))));
    }
    ds.nodes.push_back(std::move(node));
  }
  for (const auto& n : ds.nodes)
    ds.node_context[n.node_id] =
        "Synthetic carpark " + n.node_id + " with " + std::to_string(profile.capacity) +
        " spaces, " + std::to_string(profile.frequency_minutes) + "-minute records.";
  return ds;
}

std::string to_csv(const CityDataset& ds) {
  std::string out = "timestamp,node_id,available,capacity\n";
  for (const auto& n : ds.nodes) {
    for (std::size_t t = 0; t < ds.grid_length; ++t) {
      out += format_rfc3339(ds.timestamp_at(t));
      out += ',';
      out += n.node_id;
      out += ',';
      out += std::to_string(n.values[t]);
      out += ',';
      out += std::to_string(n.capacity);
      out += '\n';
    }
  }
  return out;
}

std::map<std::string, std::string> load_node_context(const std::string& json_path) {
  auto j = nlohmann::json::parse(read_file(json_path));
  std::map<std::string, std::string> out;
  for (auto it = j.begin(); it != j.end(); ++it) out[it.key()] = it.value().get<std::string>();
  return out;
}

}  // namespace strata::data
