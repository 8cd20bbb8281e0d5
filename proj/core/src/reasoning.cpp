#include "strata/reasoning.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "strata/rng.hpp"

namespace strata::reasoning {

using nlohmann::json;

namespace {

void require_slot(bool ok, const std::string& name) {
  if (!ok) throw ValidationError("prompt slot missing: " + name);
}

std::string window_range(std::int64_t from, std::int64_t to) {
  return format_rfc3339(from) + " to " + format_rfc3339(to);
}

}  // namespace

PromptBundle build_prompt(const PromptSlots& slots, PromptMode mode) {
  require_slot(!slots.source_context.empty(), "source_context");
  require_slot(!slots.source_sequence.empty(), "source_sequence");
  require_slot(slots.horizon_end > slots.horizon_start, "prediction_horizon");
  require_slot(!slots.target_context.empty(), "target_context");
  require_slot(!slots.target_history.empty(), "target_history");
  require_slot(!slots.prediction_tokens.empty(), "prediction_tokens");
  if (mode == PromptMode::Training)
    require_slot(slots.ground_truth.has_value() && !slots.ground_truth->empty(), "ground_truth");
  if (mode == PromptMode::Inference && slots.ground_truth.has_value())
    throw ValidationError("inference prompt must not carry ground truth");

  std::string t;
  t += "[INST]\n";
  t += "Role: You are an AI agent specialized in cross-city transfer learning analysis for "
       "parking availability.\n";
  if (mode == PromptMode::Training) {
    t += "Objective: Do not output future parking values. Instead, use reasoning and causal "
         "inference to extract useful, generalizable hints that relate the inputs (textual "
         "context, source long-term sequence, target short-term history, and simulation "
         "predictions) to the ground truth sequence. Focus on: (i) bias/scale calibration of "
         "simulation predictions, (ii) lag/seasonality/day-of-week effects, (iii) cross-city "
         "pattern alignment.\n";
  } else {
    t += "Objective: Perform structured reasoning over the inputs and produce the final "
         "forecast for the stated horizon. End your answer with a line of the form "
         "'FORECAST: v1, v2, ...' holding one value per horizon step.\n";
  }
  t += "\nInput Data:\n";
  t += "(1) Source city textual information: " + slots.source_context + "\n";
  t += "(2) Source city long-term sequence: " + join_csv_ints(slots.source_sequence) + "\n";
  t += "(3) Prediction horizon: Given 3 hours of history " +
       window_range(slots.history_start, slots.history_end) + ", analyze for the period " +
       window_range(slots.horizon_start, slots.horizon_end) + ".\n";
  t += "(4) Target city textual information: " + slots.target_context + "\n";
  t += "(5) Target city historical records (last 3h): " + join_csv_ints(slots.target_history) +
       "\n";
  t += "(6) Simulation predictions (base ST model): " + join_csv_ints(slots.prediction_tokens) +
       "\n";
  if (mode == PromptMode::Training) {
    t += "\nTraining-time supervision: The ground truth for the horizon is provided as " +
         join_csv_ints(*slots.ground_truth) +
         ". Use it only to infer relationships (e.g., bias/scale, residual directions, regime "
         "shifts). Do not echo the ground truth or produce numeric forecasts.\n";
  }
  t += "\nAnalysis Goals:\n";
  t += "- Cross-city alignment: which parts of the source long-term sequence best align with the "
       "target history (day-of-week, hour-of-day, shopping-peak proximity, transit adjacency)?\n";
  t += "- Lag/seasonality cues: dominant lags, diurnal phase, weekday/weekend effects, and "
       "expected monotonicity segments over the horizon.\n";
  t += "- Change-points/regimes: shift boundaries (e.g., pre-/post-evening peak) and how they "
       "affect corrections.\n";
  t += "\nRules:\n";
  if (mode == PromptMode::Training) {
    t += "(R1) Do not output any numeric forecasts or restate the ground truth.\n";
  } else {
    t += "(R1) Base the forecast on the observed history, base-model predictions, and retrieved "
         "source patterns.\n";
  }
  t += "(R2) Reason causally from text + sequences; prefer explanations tied to retail/transit "
       "factors and diurnal/weekday structure.\n";
  t += "[/INST]\n";

  PromptBundle bundle;
  bundle.mode = mode;
  bundle.slots = slots;
  bundle.rendered = std::move(t);
  return bundle;
}

namespace {

std::string trend_word(double delta, double scale) {
  const double r = delta / std::max(scale, 1e-9);
  if (r < -0.10) return "declines steeply";
  if (r < -0.02) return "declines gently";
  if (r > 0.10) return "rises steeply";
  if (r > 0.02) return "rises gently";
  return "holds steady";
}

std::string level_word(double level, double capacity) {
  const double r = level / std::max(capacity, 1e-9);
  if (r > 0.85) return "near capacity";
  if (r < 0.15) return "near empty";
  if (r > 0.55) return "on the high side";
  if (r < 0.35) return "on the low side";
  return "around the middle of the range";
}

}  // namespace

std::string qualitative_truth_text(const std::vector<double>& horizon, double capacity) {
  if (horizon.empty()) throw ValidationError("qualitative rendering needs a horizon");
  const std::size_t n = horizon.size();
  const std::size_t third = std::max<std::size_t>(1, n / 3);
  const char* names[3] = {"early horizon", "mid horizon", "late horizon"};
  std::string out = "Ground truth, qualitatively: ";
  for (int seg = 0; seg < 3; ++seg) {
    const std::size_t a = std::min(n - 1, std::size_t(seg) * third);
    const std::size_t b = seg == 2 ? n - 1 : std::min(n - 1, (std::size_t(seg) + 1) * third);
    const double mid = (horizon[a] + horizon[b]) / 2.0;
    out += std::string(names[seg]) + " " + trend_word(horizon[b] - horizon[a], capacity) + ", " +
           level_word(mid, capacity);
    out += seg == 2 ? "." : "; ";
  }
  return out;
}

std::string stub_teacher_text(const PromptBundle& bundle) {
  const auto& s = bundle.slots;
  const double cap = *std::max_element(s.source_sequence.begin(), s.source_sequence.end());
  const double hist_first = s.target_history.front();
  const double hist_last = s.target_history.back();
  const double base_first = s.prediction_tokens.front();
  std::string t =
      "The retrieved source sequence and the target history show comparable diurnal structure; "
      "the observed window " +
      std::string(trend_word(hist_last - hist_first, std::max(cap, 1.0))) + ". ";
  t += "The base model enters the horizon " +
       std::string(base_first >= hist_last ? "above" : "below") +
       " the last observation, so a " +
       std::string(base_first >= hist_last ? "downward" : "upward") +
       " bias correction toward the source-aligned profile is warranted. ";
  t += "Weekday/weekend rhythm from the source long-term sequence should calibrate the target's "
       "short history; prefer scale-adjusted corrections anchored on hour-of-day alignment.";
  return t;
}

Verdict validate_teacher(const std::string& response_text,
                         const std::vector<double>& ground_truth) {
  Verdict v;
  std::string trimmed = response_text;
  trimmed.erase(std::remove_if(trimmed.begin(), trimmed.end(),
                               [](unsigned char c) { return std::isspace(c); }),
                trimmed.end());
  if (trimmed.empty()) {
    v.reason = "empty response, no hints";
    return v;
  }
  if (response_text.find(join_csv_ints(ground_truth)) != std::string::npos) {
    v.reason = "verbatim ground-truth sequence";
    return v;
  }
  // Extract all numbers in order of appearance.
  std::vector<double> nums;
  const char* p = response_text.c_str();
  const char* end = p + response_text.size();
  while (p < end) {
    if (std::isdigit(static_cast<unsigned char>(*p)) ||
        (*p == '-' && p + 1 < end && std::isdigit(static_cast<unsigned char>(p[1])))) {
      char* after = nullptr;
      double val = std::strtod(p, &after);
      nums.push_back(val);
      p = after;
    } else {
      ++p;
    }
  }
  const std::size_t L = ground_truth.size();
  const std::size_t limit = (L + 1) / 2;
  for (std::size_t i = 0; i < nums.size(); ++i) {
    for (std::size_t j = 0; j < L; ++j) {
      std::size_t run = 0;
      while (i + run < nums.size() && j + run < L) {
        const double y = ground_truth[j + run];
        if (std::abs(nums[i + run] - y) > 0.05 * std::max(std::abs(y), 1.0)) break;
        ++run;
      }
      if (run >= limit) {
        v.reason = "echoes " + std::to_string(run) + " consecutive ground-truth values";
        return v;
      }
    }
  }
  v.accepted = true;
  v.reason = "ok";
  return v;
}

// ---- remote teacher ------------------------------------------------------

namespace {

struct ParsedUrl {
  std::string host_port;  // scheme://host:port
  std::string path_prefix;
};

ParsedUrl split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint URL missing scheme: " + url);
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, ""};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

TeacherResponse call_reasoner(const PromptBundle& bundle, const LlmEndpointConfig& endpoint) {
  if (endpoint.stub_mode) {
    TeacherResponse r;
    r.raw_text = stub_teacher_text(bundle);
    return r;
  }

  json body{{"model", endpoint.model},
            {"messages", json::array({{{"role", "user"}, {"content", bundle.rendered}}})},
            {"temperature", endpoint.temperature}};
  const std::string body_str = body.dump();
  const std::string cache_key = hex64(fnv1a64(body_str));
  const std::string cache_path = endpoint.cache_dir + "/" + cache_key + ".json";

  if (std::filesystem::exists(cache_path)) {
    json cached = json::parse(read_file(cache_path));
    TeacherResponse r;
    r.raw_text = cached.at("response");
    r.from_cache = true;
    return r;
  }

  std::string api_key;
  if (const char* k = std::getenv(endpoint.api_key_env.c_str())) api_key = k;

  ParsedUrl url = split_url(endpoint.base_url);
  httplib::Client client(url.host_port);
  client.set_read_timeout(endpoint.timeout_seconds, 0);
  client.set_connection_timeout(endpoint.timeout_seconds, 0);
  httplib::Headers headers;
  if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);

  Rng jitter(fnv1a64(cache_key));
  std::string last_error;
  for (int attempt = 0; attempt <= endpoint.max_retries; ++attempt) {
    if (attempt > 0) {
      const double delay = std::pow(2.0, attempt - 1) + jitter.uniform(0.0, 0.25);
      std::this_thread::sleep_for(std::chrono::duration<double>(delay));
    }
    auto res = client.Post(url.path_prefix + "/chat/completions", headers, body_str,
                           "application/json");
    if (!res) {
      last_error = "transport failure";
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200)
      throw NetworkError("reasoner returned HTTP " + std::to_string(res->status));
    json parsed = json::parse(res->body);
    std::string content;
    try {
      content = parsed.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception&) {
      throw NetworkError("malformed chat-completion response");
    }
    if (content.empty()) throw NetworkError("empty completion");
    json cache_payload{{"request_hash", cache_key}, {"request", body_str}, {"response", content}};
    write_file_atomic(cache_path, cache_payload.dump(2) + "\n");
    TeacherResponse r;
    r.raw_text = content;
    return r;
  }
  throw NetworkError("reasoner unreachable after " + std::to_string(endpoint.max_retries + 1) +
                     " attempts: " + last_error);
}

// ---- SFT dataset ---------------------------------------------------------

std::vector<std::size_t> sample_representative(const std::vector<std::int64_t>& window_starts,
                                               std::size_t per_node, std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> by_hour;
  for (std::size_t i = 0; i < window_starts.size(); ++i)
    by_hour[int(((window_starts[i] % 86400) + 86400) % 86400 / 3600)].push_back(i);
  std::vector<int> hours;
  for (const auto& [h, _] : by_hour) hours.push_back(h);
  Rng rng(seed);
  std::vector<std::size_t> picked;
  const std::size_t want = std::min(per_node, window_starts.size());
  // Spread picks across distinct hours first, then round-robin.
  std::size_t round = 0;
  while (picked.size() < want) {
    bool any = false;
    for (std::size_t hi = 0; hi < hours.size() && picked.size() < want; ++hi) {
      // Evenly spaced hour offsets so one pass covers the day.
      const int h = hours[(hi * std::max<std::size_t>(1, hours.size() / want)) % hours.size()];
      auto& bucket = by_hour[h];
      if (round < bucket.size()) {
        picked.push_back(bucket[rng.next_below(bucket.size())]);
        any = true;
      }
    }
    if (!any) break;
    ++round;
  }
  std::sort(picked.begin(), picked.end());
  picked.erase(std::unique(picked.begin(), picked.end()), picked.end());
  // Backfill after dedup.
  std::size_t i = 0;
  while (picked.size() < want && i < window_starts.size()) {
    if (std::find(picked.begin(), picked.end(), i) == picked.end()) picked.push_back(i);
    ++i;
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

std::string build_sft_dataset(const std::vector<SFTCase>& cases) {
  std::string out;
  for (const auto& c : cases) {
    if (!c.slots.ground_truth)
      throw ValidationError("SFT case without ground truth for node " + c.node_id);
    std::string user = "Target city: " + c.slots.target_context + "\n";
    user += "Observed history (" + format_rfc3339(c.slots.history_start) + " to " +
            format_rfc3339(c.slots.history_end) +
            "): " + join_csv_ints(c.slots.target_history) + "\n";
    user += "Base model predictions for " + format_rfc3339(c.slots.horizon_start) + " to " +
            format_rfc3339(c.slots.horizon_end) + ": " +
            join_csv_ints(c.slots.prediction_tokens) + "\n";
    user += "Analyze the forecast horizon and describe the expected corrections.";
    std::string assistant =
        c.teacher_text + "\n" + qualitative_truth_text(*c.slots.ground_truth, c.capacity);
    json line{{"messages",
               json::array({{{"role", "user"}, {"content", user}},
                            {{"role", "assistant"}, {"content", assistant}}})}};
    out += line.dump();
    out += '\n';
  }
  return out;
}

// ---- stub student --------------------------------------------------------

namespace {

// Mean of source values matching the given weekday+time-of-day inside the span,
// falling back to time-of-day only, then to the span mean.
double profile_value(const data::CityDataset& city, const data::NodeSeries& node,
                     std::int64_t span_start, std::int64_t span_end, std::int64_t ts) {
  const std::int64_t step = city.step_seconds();
  const std::int64_t day = 86400, week = 7 * day;
  double sum_w = 0.0, sum_d = 0.0, sum_all = 0.0;
  std::size_t n_w = 0, n_d = 0, n_all = 0;
  for (std::int64_t t = std::max(span_start, city.grid_start); t <= span_end; t += step) {
    const std::int64_t idx = (t - city.grid_start) / step;
    if (idx < 0 || idx >= std::int64_t(node.values.size())) continue;
    const double v = node.values[std::size_t(idx)];
    sum_all += v;
    ++n_all;
    if (((t - ts) % day + day) % day == 0) {
      sum_d += v;
      ++n_d;
      if (((t - ts) % week + week) % week == 0) {
        sum_w += v;
        ++n_w;
      }
    }
  }
  if (n_w) return sum_w / double(n_w);
  if (n_d) return sum_d / double(n_d);
  if (n_all) return sum_all / double(n_all);
  return 0.0;
}

void moments(const std::vector<double>& v, double& mean, double& sd) {
  mean = 0.0;
  for (double x : v) mean += x;
  mean /= double(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  sd = std::sqrt(var / double(v.size()));
}

}  // namespace

std::vector<double> stub_reason(const kb::RetrievalResult& retrieval,
                                const data::CityDataset& source_city,
                                const std::vector<double>& base_tokens,
                                const std::vector<double>& target_history,
                                std::int64_t history_start, std::int64_t horizon_start,
                                std::int64_t step_seconds, double capacity,
                                const StubConfig& cfg) {
  auto clamp_all = [&](std::vector<double> v) {
    for (auto& x : v) x = std::clamp(x, 0.0, capacity);
    return v;
  };
  if (retrieval.items.empty() || cfg.alpha >= 1.0) return clamp_all(base_tokens);

  const auto& top = retrieval.items.front();
  const data::NodeSeries& node = source_city.node(top.source.node_id);
  const std::int64_t a = top.source.span_start, b = top.source.span_end;

  std::vector<double> src_hist(target_history.size());
  for (std::size_t i = 0; i < src_hist.size(); ++i)
    src_hist[i] = profile_value(source_city, node, a, b,
                                history_start + std::int64_t(i) * step_seconds);
  std::vector<double> src_prof(base_tokens.size());
  for (std::size_t i = 0; i < src_prof.size(); ++i)
    src_prof[i] = profile_value(source_city, node, a, b,
                                horizon_start + std::int64_t(i) * step_seconds);

  // Least-squares affine fit of the target history onto the source profile
  // over the same clock times; an uncorrelated profile shrinks toward a flat
  // persistence level instead of injecting a misaligned shape.
  double mt, st, ms, ss;
  moments(target_history, mt, st);
  moments(src_hist, ms, ss);
  double cov = 0.0;
  for (std::size_t i = 0; i < src_hist.size(); ++i)
    cov += (src_hist[i] - ms) * (target_history[i] - mt);
  cov /= double(src_hist.size());
  const double scale = ss > 1e-9 ? cov / (ss * ss) : 0.0;
  const double offset = mt - scale * ms;

  std::vector<double> out(base_tokens.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = cfg.alpha * base_tokens[i] + (1.0 - cfg.alpha) * (scale * src_prof[i] + offset);
  return clamp_all(out);
}

std::vector<double> parse_forecast(const std::string& text, std::size_t horizon, double capacity) {
  const std::string marker = "FORECAST:";
  auto pos = text.rfind(marker);
  if (pos == std::string::npos) throw ValidationError("forecast block missing");
  std::string line = text.substr(pos + marker.size());
  if (auto nl = line.find('\n'); nl != std::string::npos) line.resize(nl);
  std::vector<double> vals;
  const char* p = line.c_str();
  const char* end = p + line.size();
  while (p < end) {
    if (std::isdigit(static_cast<unsigned char>(*p)) || *p == '-' || *p == '+') {
      char* after = nullptr;
      double v = std::strtod(p, &after);
      if (after == p) break;
      vals.push_back(v);
      p = after;
    } else {
      ++p;
    }
  }
  if (vals.size() != horizon)
    throw ValidationError("forecast block has " + std::to_string(vals.size()) +
                          " values, expected " + std::to_string(horizon));
  for (auto& v : vals) {
    if (!std::isfinite(v)) throw ValidationError("non-finite forecast value");
    v = std::clamp(v, 0.0, capacity);
  }
  return vals;
}

}  // namespace strata::reasoning
