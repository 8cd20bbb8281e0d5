#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "strata/data.hpp"

namespace strata::forecaster {

struct PredictionTokens {
  // values laid out row-major [sample][node][step]
  std::vector<double> values;
  std::size_t samples = 0, nodes = 0, horizon = 0;
  std::vector<std::int64_t> window_starts;  // input-window start per sample
  std::vector<std::string> node_ids;
  std::string producer;

  double& at(std::size_t s, std::size_t n, std::size_t h) {
    return values[(s * nodes + n) * horizon + h];
  }
  double at(std::size_t s, std::size_t n, std::size_t h) const {
    return values[(s * nodes + n) * horizon + h];
  }
};

enum class ForecasterKind { SeasonalNaive, HistoricalAverage, ExternalFile };

struct ForecasterSpec {
  ForecasterKind kind = ForecasterKind::SeasonalNaive;
  std::size_t seasonal_period = 96;  // steps; one day at 15 minutes
  std::string external_path;
};

// One forecast per node for the horizon following the end of `history`.
// Seasonal-naive: y[t+h] = y[t+h-period]; falls back to last-value
// persistence when the history cannot reach back one period.
PredictionTokens seasonal_naive_forecast(const data::TimeSeriesBatch& history,
                                         std::size_t horizon, std::size_t period);

struct TokenGenConfig {
  std::size_t window_in = 12;
  std::size_t horizon = 12;
};

// Stride-1 sliding windows over one split; one token per (window, node).
PredictionTokens generate_tokens(const data::CityDataset& split, const ForecasterSpec& spec,
                                 const TokenGenConfig& cfg = {});

// Ground-truth horizons aligned with generate_tokens' window enumeration.
PredictionTokens truth_tokens(const data::CityDataset& split, const TokenGenConfig& cfg = {});

std::string export_tokens(const PredictionTokens& tokens);
PredictionTokens import_tokens_blob(const std::string& blob);
void save_tokens(const PredictionTokens& tokens, const std::string& path);
PredictionTokens load_tokens(const std::string& path);

// File import with shape/timestamp validation against the configured split.
PredictionTokens import_external_tokens(const std::string& path, const data::CityDataset& split,
                                        const TokenGenConfig& cfg = {});

}  // namespace strata::forecaster
