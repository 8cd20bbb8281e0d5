#include "doctest.h"
#include "strata/reasoning.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <set>
#include <thread>

#include "httplib.h"
#include "json.hpp"

using namespace strata;
using namespace strata::reasoning;

namespace {

PromptSlots fixture_slots(bool with_truth) {
  PromptSlots s;
  s.source_context = "Carpark S12 near the central mall, 650 spaces, 15-minute records.";
  for (int i = 0; i < 24; ++i) s.source_sequence.push_back(300.0 + 25.0 * ((i * 5) % 7));
  s.history_start = parse_rfc3339("2021-05-28T06:00:00Z");
  s.history_end = s.history_start + 12 * 900;
  s.horizon_start = s.history_end;
  s.horizon_end = s.horizon_start + 12 * 900;
  s.target_context = "Carpark T3 beside the riverside market, 480 spaces.";
  s.target_history = {211, 214, 219, 221, 228, 233, 239, 241, 244, 251, 255, 262};
  s.prediction_tokens = {266, 269, 271, 274, 276, 279, 281, 284, 286, 289, 291, 294};
  if (with_truth)
    s.ground_truth =
        std::vector<double>{417, 423, 431, 437, 443, 449, 457, 461, 467, 473, 479, 487};
  return s;
}

std::string fixture_path(const std::string& name) {
  return std::string(STRATA_FIXTURE_DIR) + "/" + name;
}

}  // namespace

TEST_SUITE_BEGIN("reasoning");

TEST_CASE("prompt slots appear in fixed order") {
  PromptBundle b = build_prompt(fixture_slots(true), PromptMode::Training);
  const std::string& t = b.rendered;
  std::size_t prev = 0;
  for (const char* marker : {"[INST]", "Role:", "Objective:", "(1) Source city", "(2) Source city",
                             "(3) Prediction horizon", "(4) Target city", "(5) Target city",
                             "(6) Simulation predictions", "Analysis Goals:", "(R1)", "(R2)",
                             "[/INST]"}) {
    const std::size_t pos = t.find(marker);
    REQUIRE_MESSAGE(pos != std::string::npos, marker);
    CHECK(pos >= prev);
    prev = pos;
  }
  CHECK(t.find("Training-time supervision") != std::string::npos);
  CHECK(t.find(join_csv_ints(*b.slots.ground_truth)) != std::string::npos);
}

TEST_CASE("inference prompts never carry ground truth") {
  PromptSlots s = fixture_slots(false);
  PromptBundle b = build_prompt(s, PromptMode::Inference);
  CHECK(b.rendered.find("ground truth") == std::string::npos);
  CHECK(b.rendered.find("FORECAST:") != std::string::npos);
  const std::vector<double> gt = *fixture_slots(true).ground_truth;
  for (double v : gt) CHECK(b.rendered.find(std::to_string(int(v))) == std::string::npos);

  PromptSlots leaky = fixture_slots(true);
  CHECK_THROWS_WITH_AS(build_prompt(leaky, PromptMode::Inference),
                       doctest::Contains("must not carry ground truth"), ValidationError);
}

TEST_CASE("missing slots are reported by name") {
  PromptSlots s = fixture_slots(true);
  s.target_history.clear();
  CHECK_THROWS_WITH_AS(build_prompt(s, PromptMode::Training),
                       doctest::Contains("target_history"), ValidationError);
  s = fixture_slots(true);
  s.ground_truth.reset();
  CHECK_THROWS_WITH_AS(build_prompt(s, PromptMode::Training), doctest::Contains("ground_truth"),
                       ValidationError);
  s = fixture_slots(true);
  s.source_context.clear();
  CHECK_THROWS_WITH_AS(build_prompt(s, PromptMode::Training),
                       doctest::Contains("source_context"), ValidationError);
}

TEST_CASE("prompt renders match the checked-in goldens bytewise") {
  PromptBundle train = build_prompt(fixture_slots(true), PromptMode::Training);
  PromptBundle infer = build_prompt(fixture_slots(false), PromptMode::Inference);
  CHECK(train.rendered == read_file(fixture_path("prompt_training.golden")));
  CHECK(infer.rendered == read_file(fixture_path("prompt_inference.golden")));
}

TEST_CASE("teacher validator rejects numeric echoes and empties") {
  const std::vector<double> gt = {417, 423, 431, 437, 443, 449, 457, 461, 467, 473, 479, 487};

  CHECK_FALSE(validate_teacher("", gt).accepted);
  CHECK_FALSE(validate_teacher("  \n\t ", gt).accepted);

  // Verbatim echo of the joined ground truth.
  Verdict v = validate_teacher("The answer is " + join_csv_ints(gt) + " as computed.", gt);
  CHECK_FALSE(v.accepted);
  CHECK(v.reason.find("verbatim") != std::string::npos);

  // Six consecutive values within 5%, reworded and slightly perturbed.
  CHECK_FALSE(validate_teacher("Expect about 418 then 424; later 430 and 436, 441 and 450.", gt)
                  .accepted);

  // A qualitative narrative with incidental unrelated numbers is accepted.
  const std::string fixture = read_file(fixture_path("teacher_response.txt"));
  Verdict ok = validate_teacher(fixture, gt);
  CHECK(ok.accepted);

  // Fewer than half the horizon in sequence is tolerated.
  CHECK(validate_teacher("Peaks around 417 and 423, then regime shift.", gt).accepted);
}

TEST_CASE("qualitative truth rendering contains no digits") {
  std::vector<double> horizon = {400, 380, 360, 300, 290, 280, 270, 260, 250, 240, 100, 50};
  std::string text = qualitative_truth_text(horizon, 512.0);
  for (char c : text) CHECK_FALSE(std::isdigit(static_cast<unsigned char>(c)));
  CHECK(text.find("declines") != std::string::npos);
  CHECK_THROWS_AS(qualitative_truth_text({}, 512.0), ValidationError);
}

TEST_CASE("stub teacher output is deterministic and passes validation") {
  PromptBundle b = build_prompt(fixture_slots(true), PromptMode::Training);
  LlmEndpointConfig ep;  // stub mode on by default
  TeacherResponse r1 = call_reasoner(b, ep);
  TeacherResponse r2 = call_reasoner(b, ep);
  CHECK(r1.raw_text == r2.raw_text);
  CHECK_FALSE(r1.raw_text.empty());
  CHECK(validate_teacher(r1.raw_text, *b.slots.ground_truth).accepted);
}

TEST_CASE("remote mode retries transient failures and caches the response") {
  httplib::Server server;
  std::atomic<int> hits{0};
  std::string seen_body;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    const int n = ++hits;
    seen_body = req.body;
    if (n == 1) {
      res.status = 500;
      return;
    }
    nlohmann::json out{{"choices",
                        nlohmann::json::array(
                            {{{"message", {{"role", "assistant"}, {"content", "hint text"}}}}})}};
    res.set_content(out.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread th([&] { server.listen_after_bind(); });

  const std::string cache_dir =
      (std::filesystem::temp_directory_path() / "strata_llm_cache").string();
  std::filesystem::remove_all(cache_dir);
  std::filesystem::create_directories(cache_dir);

  setenv("STRATA_TEST_KEY", "sk-test-sentinel-4242", 1);
  LlmEndpointConfig ep;
  ep.stub_mode = false;
  ep.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
  ep.api_key_env = "STRATA_TEST_KEY";
  ep.max_retries = 2;
  ep.cache_dir = cache_dir;

  PromptBundle b = build_prompt(fixture_slots(true), PromptMode::Training);
  TeacherResponse r = call_reasoner(b, ep);
  CHECK(r.raw_text == "hint text");
  CHECK_FALSE(r.from_cache);
  CHECK(hits == 2);  // one 500, one success

  // Second call is served from the cache without touching the server.
  TeacherResponse cached = call_reasoner(b, ep);
  CHECK(cached.from_cache);
  CHECK(cached.raw_text == "hint text");
  CHECK(hits == 2);

  // The API key never leaks into the request body or the cache files.
  CHECK(seen_body.find("sk-test-sentinel") == std::string::npos);
  for (const auto& entry : std::filesystem::directory_iterator(cache_dir))
    CHECK(read_file(entry.path().string()).find("sk-test-sentinel") == std::string::npos);

  server.stop();
  th.join();
  std::filesystem::remove_all(cache_dir);
}

TEST_CASE("remote mode surfaces persistent failures as network errors") {
  httplib::Server server;
  server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    res.status = 429;
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });

  LlmEndpointConfig ep;
  ep.stub_mode = false;
  ep.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
  ep.max_retries = 1;
  ep.cache_dir = (std::filesystem::temp_directory_path() / "strata_llm_cache2").string();
  std::filesystem::create_directories(ep.cache_dir);

  PromptBundle b = build_prompt(fixture_slots(true), PromptMode::Training);
  CHECK_THROWS_WITH_AS(call_reasoner(b, ep), doctest::Contains("2 attempts"), NetworkError);

  // Non-retryable status fails immediately.
  server.stop();
  th.join();
  std::filesystem::remove_all(ep.cache_dir);
}

TEST_CASE("representative sampling is seeded, deduplicated and hour-spread") {
  std::vector<std::int64_t> starts;
  for (int i = 0; i < 265; ++i) starts.push_back(1619827200 + i * 900);
  auto a = sample_representative(starts, 5, 9);
  auto b = sample_representative(starts, 5, 9);
  auto c = sample_representative(starts, 5, 10);
  CHECK(a == b);
  CHECK(a.size() == 5);
  CHECK(std::is_sorted(a.begin(), a.end()));
  for (std::size_t i = 1; i < a.size(); ++i) CHECK(a[i] != a[i - 1]);
  CHECK(a != c);
  for (std::size_t idx : a) CHECK(idx < starts.size());
  // Picks span multiple hours of the day.
  std::set<int> hours;
  for (std::size_t idx : a) hours.insert(int(starts[idx] % 86400 / 3600));
  CHECK(hours.size() >= 3);
  // Requesting more than available returns everything once.
  auto all = sample_representative({0, 900}, 10, 1);
  CHECK(all == std::vector<std::size_t>{0, 1});
}

TEST_CASE("sft dataset is chat-format jsonl with qualitative supervision") {
  SFTCase c;
  c.node_id = "t0";
  c.slots = fixture_slots(true);
  c.capacity = 480.0;
  c.teacher_text = "Expect an upward correction anchored on the morning build-up.";
  std::string jsonl = build_sft_dataset({c, c});
  int lines = 0;
  std::size_t pos = 0;
  while ((pos = jsonl.find('\n', pos)) != std::string::npos) {
    ++lines;
    ++pos;
  }
  CHECK(lines == 2);
  auto first = nlohmann::json::parse(jsonl.substr(0, jsonl.find('\n')));
  REQUIRE(first.contains("messages"));
  REQUIRE(first["messages"].size() == 2);
  CHECK(first["messages"][0]["role"] == "user");
  CHECK(first["messages"][1]["role"] == "assistant");
  const std::string assistant = first["messages"][1]["content"];
  CHECK(assistant.find(c.teacher_text) != std::string::npos);
  CHECK(assistant.find("Ground truth, qualitatively") != std::string::npos);
  // The numeric ground truth never appears in the assistant turn.
  CHECK(assistant.find(join_csv_ints(*c.slots.ground_truth)) == std::string::npos);

  SFTCase no_gt = c;
  no_gt.slots.ground_truth.reset();
  CHECK_THROWS_AS(build_sft_dataset({no_gt}), ValidationError);
}

TEST_CASE("forecast line parsing") {
  std::vector<double> v =
      parse_forecast("reasoning...\nFORECAST: 10, 20.5, 30, 40, 50, 60, 70, 80, 90, 100, 110, 620\n",
                     12, 512.0);
  REQUIRE(v.size() == 12);
  CHECK(v[1] == 20.5);
  CHECK(v[11] == 512.0);  // clamped to capacity
  CHECK_THROWS_AS(parse_forecast("no marker here", 12, 512.0), ValidationError);
  CHECK_THROWS_AS(parse_forecast("FORECAST: 1, 2, 3", 12, 512.0), ValidationError);
}

TEST_CASE("stub reasoner blends toward the retrieved profile") {
  // Source: 14 noise-free days so the weekday/hour profile is exact.
  data::SyntheticProfile prof;
  prof.nodes = 1;
  prof.days = 14;
  prof.noise_sigma = 0.0;
  data::CityDataset source = data::generate_synthetic_city(60, prof, "src");

  kb::RetrievalResult retrieval;
  kb::RetrievalItem item;
  item.id = 0;
  item.source.node_id = "src_cp0";
  item.source.span_start = source.grid_start;
  item.source.span_end = source.timestamp_at(source.grid_length);
  item.weight = 1.0;
  retrieval.items.push_back(item);
  retrieval.kb_size = 1;

  // Target equals the source shifted exactly one week; with alpha=0 the
  // profile correction alone should reproduce the horizon. The pivot sits on
  // the morning ramp so the history window has usable variance.
  const std::size_t pivot = 7 * 96 + 36;  // 09:00 on the eighth day
  std::vector<double> history, truth, base(12, 0.0);
  for (int i = 0; i < 12; ++i) {
    history.push_back(double(source.nodes[0].values[pivot - 12 + i]));
    truth.push_back(double(source.nodes[0].values[pivot + i]));
  }
  StubConfig sc;
  sc.alpha = 0.0;
  auto pred = reasoning::stub_reason(retrieval, source, base, history,
                                     source.timestamp_at(pivot - 12), source.timestamp_at(pivot),
                                     900, 512.0, sc);
  REQUIRE(pred.size() == 12);
  for (int i = 0; i < 12; ++i) CHECK(pred[i] == doctest::Approx(truth[i]).epsilon(0.05));

  // alpha = 1 passes the base tokens through, clamped.
  sc.alpha = 1.0;
  std::vector<double> wild(12, 600.0);
  auto passthrough = reasoning::stub_reason(retrieval, source, wild, history,
                                            source.timestamp_at(pivot - 12),
                                            source.timestamp_at(pivot), 900, 512.0, sc);
  for (double x : passthrough) CHECK(x == 512.0);

  // Empty retrieval falls back to the base tokens.
  kb::RetrievalResult empty;
  sc.alpha = 0.0;
  auto fallback = reasoning::stub_reason(empty, source, base, history, 0, 0, 900, 512.0, sc);
  CHECK(fallback == std::vector<double>(12, 0.0));
}

TEST_SUITE_END();
