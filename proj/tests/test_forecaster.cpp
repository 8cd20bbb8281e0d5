#include "doctest.h"
#include "strata/forecaster.hpp"

#include <cmath>
#include <filesystem>

using namespace strata;
using namespace strata::data;
using namespace strata::forecaster;

namespace {

CityDataset periodic_city(int nodes, int days, double noise, std::uint64_t seed) {
  SyntheticProfile prof;
  prof.nodes = nodes;
  prof.days = days;
  prof.noise_sigma = noise;
  return generate_synthetic_city(seed, prof, "fc");
}

}  // namespace

TEST_SUITE_BEGIN("forecaster");

TEST_CASE("window enumeration matches the closed form") {
  CityDataset ds = periodic_city(2, 3, 0.01, 50);  // T = 288
  TokenGenConfig cfg;                              // 12 in, 12 out
  ForecasterSpec spec;
  PredictionTokens t = generate_tokens(ds, spec, cfg);
  CHECK(t.samples == ds.grid_length - cfg.window_in - cfg.horizon + 1);  // 265
  CHECK(t.nodes == 2);
  CHECK(t.horizon == 12);
  CHECK(t.window_starts.front() == ds.grid_start);
  CHECK(t.window_starts[1] - t.window_starts[0] == 900);  // stride one
  PredictionTokens truth = truth_tokens(ds, cfg);
  CHECK(truth.samples == t.samples);
  CHECK(truth.window_starts == t.window_starts);
  // Truth is the raw series shifted by the input window.
  CHECK(truth.at(0, 0, 0) == double(ds.nodes[0].values[12]));
  CHECK(truth.at(5, 1, 7) == double(ds.nodes[1].values[5 + 12 + 7]));
}

TEST_CASE("seasonal naive lags by one period with persistence fallback") {
  CityDataset ds = periodic_city(1, 3, 0.0, 51);
  TokenGenConfig cfg;
  ForecasterSpec spec;  // period 96
  PredictionTokens t = generate_tokens(ds, spec, cfg);
  const auto& vals = ds.nodes[0].values;
  // Early windows cannot reach back one day: persistence on the last input value.
  CHECK(t.at(0, 0, 0) == double(vals[11]));
  CHECK(t.at(0, 0, 11) == double(vals[11]));
  // Later windows use the value one period earlier.
  const std::size_t w = 120;
  for (std::size_t h = 0; h < 12; ++h)
    CHECK(t.at(w, 0, h) == double(vals[w + 12 + h - 96]));
}

TEST_CASE("seasonal naive is exact on noise-free periodic data") {
  SyntheticProfile prof;
  prof.nodes = 1;
  prof.days = 7;
  prof.noise_sigma = 0.0;
  prof.weekly_modulation = 0.0;  // pure daily period
  CityDataset ds = generate_synthetic_city(52, prof, "pure");
  TokenGenConfig cfg;
  PredictionTokens pred = generate_tokens(ds, ForecasterSpec{}, cfg);
  PredictionTokens truth = truth_tokens(ds, cfg);
  double max_err = 0.0;
  for (std::size_t w = 96; w < pred.samples; ++w)  // skip the fallback region
    for (std::size_t h = 0; h < cfg.horizon; ++h)
      max_err = std::max(max_err, std::abs(pred.at(w, 0, h) - truth.at(w, 0, h)));
  CHECK(max_err == 0.0);
}

TEST_CASE("historical average matches a hand oracle") {
  CityDataset ds = periodic_city(1, 4, 0.02, 53);
  TokenGenConfig cfg;
  ForecasterSpec spec;
  spec.kind = ForecasterKind::HistoricalAverage;
  PredictionTokens t = generate_tokens(ds, spec, cfg);
  const auto& vals = ds.nodes[0].values;
  const std::size_t w = 200, h = 3;
  const std::size_t i = w + 12 + h, phase = i % 96;
  double sum = 0.0;
  std::size_t cnt = 0;
  for (std::size_t j = phase; j < w + 12; j += 96) {
    sum += vals[j];
    ++cnt;
  }
  CHECK(t.at(w, 0, h) == doctest::Approx(sum / double(cnt)));
}

TEST_CASE("single-window seasonal naive helper") {
  data::TimeSeriesBatch hist;
  hist.batch = 1;
  hist.num_nodes = 1;
  hist.length = 6;
  hist.values = {1, 2, 3, 4, 5, 6};
  hist.start_timestamps = {0};
  hist.node_ids = {"n"};
  PredictionTokens t = seasonal_naive_forecast(hist, 3, 4);
  CHECK(t.at(0, 0, 0) == 3.0);  // lag 4 from position 6
  CHECK(t.at(0, 0, 1) == 4.0);
  CHECK(t.at(0, 0, 2) == 5.0);
  PredictionTokens p = seasonal_naive_forecast(hist, 3, 100);
  for (std::size_t h = 0; h < 3; ++h) CHECK(p.at(0, 0, h) == 6.0);  // persistence
  hist.batch = 2;
  CHECK_THROWS_AS(seasonal_naive_forecast(hist, 3, 4), ValidationError);
}

TEST_CASE("token files round trip at 32-bit precision") {
  CityDataset ds = periodic_city(2, 3, 0.01, 54);
  PredictionTokens t = generate_tokens(ds, ForecasterSpec{}, TokenGenConfig{});
  const std::string path =
      (std::filesystem::temp_directory_path() / "strata_tokens_test.sttk").string();
  save_tokens(t, path);
  PredictionTokens back = load_tokens(path);
  CHECK(back.samples == t.samples);
  CHECK(back.producer == t.producer);
  CHECK(back.node_ids == t.node_ids);
  CHECK(back.window_starts == t.window_starts);
  // Integer-valued parking counts are exactly representable in f32.
  CHECK(back.values == t.values);
  // A second export of the reloaded tokens is bitwise identical.
  CHECK(export_tokens(back) == export_tokens(t));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(import_tokens_blob("junk"), DataError);
}

TEST_CASE("external token import validates shape and alignment") {
  CityDataset ds = periodic_city(2, 3, 0.01, 55);
  TokenGenConfig cfg;
  PredictionTokens good = generate_tokens(ds, ForecasterSpec{}, cfg);
  const std::string path =
      (std::filesystem::temp_directory_path() / "strata_ext_test.sttk").string();

  save_tokens(good, path);
  CHECK(import_external_tokens(path, ds, cfg).samples == good.samples);

  PredictionTokens bad = good;
  bad.horizon = 6;
  bad.values.resize(bad.samples * bad.nodes * 6);
  save_tokens(bad, path);
  CHECK_THROWS_WITH_AS(import_external_tokens(path, ds, cfg), doctest::Contains("horizon"),
                       ValidationError);

  bad = good;
  bad.node_ids[1] = "imposter";
  save_tokens(bad, path);
  CHECK_THROWS_WITH_AS(import_external_tokens(path, ds, cfg), doctest::Contains("imposter"),
                       ValidationError);

  bad = good;
  bad.window_starts[3] += 900;
  save_tokens(bad, path);
  CHECK_THROWS_WITH_AS(import_external_tokens(path, ds, cfg), doctest::Contains("window 3"),
                       ValidationError);
  std::filesystem::remove(path);
}

TEST_SUITE_END();
