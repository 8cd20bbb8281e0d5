#include "strata/forecaster.hpp"

#include <cmath>
#include <cstring>

#include "json.hpp"

namespace strata::forecaster {

using nlohmann::json;

PredictionTokens seasonal_naive_forecast(const data::TimeSeriesBatch& history,
                                         std::size_t horizon, std::size_t period) {
  if (history.batch != 1) throw ValidationError("seasonal_naive_forecast expects a single sample");
  PredictionTokens out;
  out.samples = 1;
  out.nodes = history.num_nodes;
  out.horizon = horizon;
  out.node_ids = history.node_ids;
  out.producer = "seasonal_naive";
  out.window_starts = history.start_timestamps;
  out.values.resize(out.nodes * horizon);
  const std::size_t len = history.length;
  for (std::size_t n = 0; n < out.nodes; ++n) {
    for (std::size_t h = 0; h < horizon; ++h) {
      const std::ptrdiff_t lag = std::ptrdiff_t(len + h) - std::ptrdiff_t(period);
      double v;
      if (lag >= 0 && lag < std::ptrdiff_t(len)) {
        v = history.at(0, n, std::size_t(lag));
      } else {
        v = history.at(0, n, len - 1);  // persistence fallback
      }
      out.at(0, n, h) = v;
    }
  }
  return out;
}

namespace {

std::size_t window_count(std::size_t T, const TokenGenConfig& cfg) {
  const std::size_t need = cfg.window_in + cfg.horizon;
  return T >= need ? T - need + 1 : 0;
}

PredictionTokens make_frame(const data::CityDataset& split, const TokenGenConfig& cfg,
                            const std::string& producer) {
  PredictionTokens out;
  out.samples = window_count(split.grid_length, cfg);
  out.nodes = split.nodes.size();
  out.horizon = cfg.horizon;
  out.producer = producer;
  for (const auto& n : split.nodes) out.node_ids.push_back(n.node_id);
  for (std::size_t w = 0; w < out.samples; ++w)
    out.window_starts.push_back(split.timestamp_at(w));
  out.values.assign(out.samples * out.nodes * out.horizon, 0.0);
  return out;
}

}  // namespace

PredictionTokens generate_tokens(const data::CityDataset& split, const ForecasterSpec& spec,
                                 const TokenGenConfig& cfg) {
  if (spec.kind == ForecasterKind::ExternalFile)
    return import_external_tokens(spec.external_path, split, cfg);
  PredictionTokens out = make_frame(
      split, cfg, spec.kind == ForecasterKind::SeasonalNaive ? "seasonal_naive" : "historical_average");
  const std::size_t steps_per_day = std::size_t(1440 / split.frequency_minutes);
  for (std::size_t n = 0; n < out.nodes; ++n) {
    const auto& vals = split.nodes[n].values;
    for (std::size_t w = 0; w < out.samples; ++w) {
      const std::size_t horizon_start = w + cfg.window_in;
      for (std::size_t h = 0; h < out.horizon; ++h) {
        const std::size_t i = horizon_start + h;
        double v;
        if (spec.kind == ForecasterKind::SeasonalNaive) {
          v = i >= spec.seasonal_period ? double(vals[i - spec.seasonal_period])
                                        : double(vals[horizon_start - 1]);
        } else {
          // Historical average over earlier observations at the same time of day.
          const std::size_t phase = i % steps_per_day;
          double sum = 0.0;
          std::size_t cnt = 0;
          for (std::size_t j = phase; j < horizon_start; j += steps_per_day) {
            sum += vals[j];
            ++cnt;
          }
          v = cnt ? sum / double(cnt) : double(vals[horizon_start - 1]);
        }
        out.at(w, n, h) = v;
      }
    }
  }
  return out;
}

PredictionTokens truth_tokens(const data::CityDataset& split, const TokenGenConfig& cfg) {
  PredictionTokens out = make_frame(split, cfg, "ground_truth");
  for (std::size_t n = 0; n < out.nodes; ++n) {
    const auto& vals = split.nodes[n].values;
    for (std::size_t w = 0; w < out.samples; ++w)
      for (std::size_t h = 0; h < out.horizon; ++h)
        out.at(w, n, h) = double(vals[w + cfg.window_in + h]);
  }
  return out;
}

namespace {
constexpr char kMagic[] = "STTK1";
constexpr int kFormatVersion = 1;
}  // namespace

std::string export_tokens(const PredictionTokens& tokens) {
  json manifest;
  manifest["version"] = kFormatVersion;
  manifest["producer"] = tokens.producer;
  manifest["samples"] = tokens.samples;
  manifest["nodes"] = tokens.nodes;
  manifest["horizon"] = tokens.horizon;
  manifest["window_starts"] = tokens.window_starts;
  manifest["node_ids"] = tokens.node_ids;
  std::string ms = manifest.dump();
  std::string out(kMagic);
  std::uint64_t len = ms.size();
  out.append(reinterpret_cast<const char*>(&len), 8);
  out += ms;
  std::vector<float> block(tokens.values.begin(), tokens.values.end());
  append_le_f32(out, block);
  return out;
}

PredictionTokens import_tokens_blob(const std::string& blob) {
  const std::size_t magic_len = sizeof(kMagic) - 1;
  if (blob.size() < magic_len + 8 || blob.compare(0, magic_len, kMagic) != 0)
    throw DataError("not a token exchange file");
  std::uint64_t len;
  std::memcpy(&len, blob.data() + magic_len, 8);
  json manifest = json::parse(blob.substr(magic_len + 8, len));
  if (manifest.at("version") != kFormatVersion) throw DataError("unsupported token file version");
  PredictionTokens t;
  t.producer = manifest.at("producer");
  t.samples = manifest.at("samples");
  t.nodes = manifest.at("nodes");
  t.horizon = manifest.at("horizon");
  t.window_starts = manifest.at("window_starts").get<std::vector<std::int64_t>>();
  t.node_ids = manifest.at("node_ids").get<std::vector<std::string>>();
  std::string_view data(blob.data() + magic_len + 8 + len, blob.size() - magic_len - 8 - len);
  auto vals = read_le_f32(data, t.samples * t.nodes * t.horizon);
  t.values.assign(vals.begin(), vals.end());
  return t;
}

void save_tokens(const PredictionTokens& tokens, const std::string& path) {
  write_file_atomic(path, export_tokens(tokens));
}

PredictionTokens load_tokens(const std::string& path) {
  return import_tokens_blob(read_file(path));
}

PredictionTokens import_external_tokens(const std::string& path, const data::CityDataset& split,
                                        const TokenGenConfig& cfg) {
  PredictionTokens t = load_tokens(path);
  if (t.horizon != cfg.horizon)
    throw ValidationError("token file horizon " + std::to_string(t.horizon) +
                          " does not match configured L_pred " + std::to_string(cfg.horizon));
  if (t.nodes != split.nodes.size())
    throw ValidationError("token file has " + std::to_string(t.nodes) + " nodes, split has " +
                          std::to_string(split.nodes.size()));
  for (std::size_t n = 0; n < t.nodes; ++n)
    if (t.node_ids[n] != split.nodes[n].node_id)
      throw ValidationError("token file node " + std::to_string(n) + " is '" + t.node_ids[n] +
                            "', expected '" + split.nodes[n].node_id + "'");
  const std::size_t expect = window_count(split.grid_length, cfg);
  if (t.samples != expect)
    throw ValidationError("token file has " + std::to_string(t.samples) + " samples, expected " +
                          std::to_string(expect));
  for (std::size_t w = 0; w < t.samples; ++w) {
    const std::int64_t want = split.timestamp_at(w);
    if (t.window_starts[w] != want)
      throw ValidationError("token window " + std::to_string(w) + " starts at " +
                            format_rfc3339(t.window_starts[w]) + ", expected " +
                            format_rfc3339(want));
  }
  return t;
}

}  // namespace strata::forecaster
