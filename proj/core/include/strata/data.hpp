#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "strata/common.hpp"

namespace strata::data {

struct ParkingRecord {
  std::int64_t timestamp = 0;  // epoch seconds, UTC, 15-minute aligned
  std::string node_id;
  int available = 0;
  int capacity = 0;
};

struct NodeSeries {
  std::string node_id;
  int capacity = 0;
  std::vector<int> values;          // aligned to the dataset grid; one entry per step
  std::vector<bool> filled;         // true where the value was gap-filled
  // Contiguous [start, end) step ranges that are usable for slicing. Gaps longer
  // than the max-fill threshold break the node into disjoint spans.
  std::vector<std::pair<std::size_t, std::size_t>> usable_spans;
};

struct CityDataset {
  std::string city_name;
  int frequency_minutes = 15;
  std::int64_t grid_start = 0;             // timestamp of step 0
  std::size_t grid_length = 0;             // steps on the shared grid
  std::vector<NodeSeries> nodes;           // every node spans the full grid
  std::map<std::string, std::string> node_context;
  std::vector<std::string> provenance;     // gap-fill / split events

  std::int64_t step_seconds() const { return std::int64_t{60} * frequency_minutes; }
  std::int64_t timestamp_at(std::size_t step) const {
    return grid_start + static_cast<std::int64_t>(step) * step_seconds();
  }
  const NodeSeries& node(const std::string& id) const;
};

struct TimeSeriesBatch {
  // values laid out row-major [B][N][L]
  std::vector<double> values;
  std::size_t batch = 0, num_nodes = 0, length = 0;
  std::vector<std::int64_t> start_timestamps;  // length B
  std::vector<std::string> node_ids;           // length N

  double& at(std::size_t b, std::size_t n, std::size_t l) {
    return values[(b * num_nodes + n) * length + l];
  }
  double at(std::size_t b, std::size_t n, std::size_t l) const {
    return values[(b * num_nodes + n) * length + l];
  }
};

struct SplitSpec {
  double train_fraction = 0.70;
  double val_fraction = 0.10;
  double test_fraction = 0.20;
  int target_train_days = 3;
};

struct CsvSchema {
  std::string timestamp_col = "timestamp";
  std::string node_col = "node_id";
  std::string available_col = "available";
  std::string capacity_col = "capacity";
  int max_fill_gap = 4;  // steps; longer gaps split the node into disjoint spans
};

struct Segment {
  std::vector<double> values;
  std::int64_t start_timestamp = 0;
  std::string node_id;
  std::size_t start_step = 0;
};

struct SyntheticProfile {
  int nodes = 8;
  int days = 14;
  int frequency_minutes = 15;
  std::int64_t start_timestamp = parse_rfc3339("2021-05-01T00:00:00Z");
  double base = 0.5;                // fraction of capacity occupied-free midpoint
  double diurnal_amplitude = 0.35;  // fraction of capacity
  double weekly_modulation = 0.15;  // weekend amplitude delta, fraction of capacity
  double noise_sigma = 0.02;        // fraction of capacity
  int capacity = 512;
  // Derived-target mode: copy one source node's pattern with an affine map.
  bool derived_target = false;
  const CityDataset* derived_from = nullptr;
  std::string derived_node;
  double derived_scale = 1.0;
  double derived_offset = 0.0;
};

CityDataset ingest_csv(const std::string& path, const CsvSchema& schema = {});

struct SplitResult {
  CityDataset train, val, test;
};
SplitResult chronological_split(const CityDataset& ds, const SplitSpec& spec, bool is_target);

std::vector<Segment> slice_segments(const CityDataset& ds, std::size_t segment_len,
                                    std::size_t stride);

// Streaming variant: visits segments without materializing the full list.
void for_each_segment(const CityDataset& ds, std::size_t segment_len, std::size_t stride,
                      const std::function<void(const Segment&)>& fn);

CityDataset generate_synthetic_city(std::uint64_t seed, const SyntheticProfile& profile,
                                    const std::string& city_name = "synthetic");

std::string to_csv(const CityDataset& ds);
std::map<std::string, std::string> load_node_context(const std::string& json_path);

}  // namespace strata::data
