#include "strata/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <optional>

#include "json.hpp"

namespace strata::pipeline {
namespace {

namespace fs = std::filesystem;

std::vector<double> node_values(const data::NodeSeries& node, std::size_t from, std::size_t count) {
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = double(node.values[from + i]);
  return out;
}

std::string file_hash(const std::string& path) { return hex64(fnv1a64(read_file(path))); }

// Producer strings carry the artifact fingerprints they were built from,
// e.g. "stub:full:ckpt=<h>:kb=<h>:cfg=<h>".
std::string producer_field(const std::string& producer, const std::string& field) {
  const std::string needle = field + "=";
  std::size_t pos = producer.find(needle);
  if (pos == std::string::npos) return "";
  std::size_t start = pos + needle.size();
  std::size_t end = producer.find(':', start);
  return producer.substr(start, end == std::string::npos ? std::string::npos : end - start);
}

void check_fingerprint(const std::string& producer, const std::string& field,
                       const std::string& expected, const std::string& rerun_command) {
  const std::string got = producer_field(producer, field);
  if (got != expected)
    throw ValidationError("artifact fingerprint mismatch: forecast was produced with " + field +
                          "=" + (got.empty() ? "<none>" : got) + " but the current " + field +
                          " hash is " + expected + "; run `strata " + rerun_command + "` again");
}

std::vector<double> embed_query(const encoder::EncoderModel& model,
                                const std::vector<double>& segment) {
  return model.embed(segment).values;
}

data::SyntheticProfile base_profile(const config::RunConfig& cfg) {
  data::SyntheticProfile p;
  p.frequency_minutes = 15;
  p.noise_sigma = cfg.synth_noise;
  p.diurnal_amplitude = cfg.synth_diurnal;
  p.weekly_modulation = cfg.synth_weekly;
  p.capacity = cfg.synth_capacity;
  return p;
}

void write_context_json(const data::CityDataset& ds, const std::string& path) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : ds.node_context) j[k] = v;
  write_file_atomic(path, j.dump(2) + "\n");
}

}  // namespace

data::CityDataset load_city(const std::string& csv_path, const std::string& context_path,
                            const std::string& name) {
  if (!fs::exists(csv_path))
    throw DataError("missing dataset '" + csv_path + "'; run `strata gen-synth` or `strata ingest` first");
  data::CityDataset ds = data::ingest_csv(csv_path);
  ds.city_name = name;
  if (fs::exists(context_path)) ds.node_context = data::load_node_context(context_path);
  return ds;
}

std::string require_artifact(const std::string& path, const std::string& producer_command) {
  if (!fs::exists(path))
    throw DataError("missing artifact '" + path + "'; run `strata " + producer_command + "` first");
  return path;
}

void run_gen_synth(const config::RunConfig& cfg) {
  fs::create_directories(cfg.data_dir);

  data::SyntheticProfile src_profile = base_profile(cfg);
  src_profile.nodes = cfg.source_nodes;
  src_profile.days = cfg.source_days;
  data::CityDataset source = data::generate_synthetic_city(cfg.synth_seed, src_profile, "sourcecity");

  data::SyntheticProfile tgt_profile = base_profile(cfg);
  tgt_profile.nodes = cfg.target_nodes;
  tgt_profile.days = cfg.target_days;
  data::CityDataset target =
      data::generate_synthetic_city(cfg.synth_seed + 1, tgt_profile, "targetcity");

  // Plant a transferable pattern: target node 0 becomes an affine copy of a
  // chosen source node.
  if (cfg.planted_source_node >= 0) {
    if (cfg.planted_source_node >= cfg.source_nodes)
      throw ConfigError("synth.planted_source_node out of range");
    data::SyntheticProfile planted = base_profile(cfg);
    planted.nodes = 1;
    planted.days = cfg.target_days;
    planted.derived_target = true;
    planted.derived_from = &source;
    planted.derived_node = source.nodes[std::size_t(cfg.planted_source_node)].node_id;
    planted.derived_scale = cfg.planted_scale;
    planted.derived_offset = cfg.planted_offset;
    data::CityDataset derived =
        data::generate_synthetic_city(cfg.synth_seed + 2, planted, "targetcity");
    target.nodes[0].values = derived.nodes[0].values;
  }

  write_file_atomic(cfg.source_csv(), data::to_csv(source));
  write_file_atomic(cfg.target_csv(), data::to_csv(target));
  write_context_json(source, cfg.source_context_json());
  write_context_json(target, cfg.target_context_json());

  fs::create_directories(cfg.artifacts_dir);
  write_file_atomic(cfg.artifacts_dir + "/resolved_config.toml", cfg.to_toml());
}

encoder::PretrainResult run_pretrain(const config::RunConfig& cfg) {
  cfg.encoder.validate();
  data::CityDataset source = load_city(cfg.source_csv(), cfg.source_context_json(), "sourcecity");
  data::SplitResult split = data::chronological_split(source, cfg.split, /*is_target=*/false);
  std::vector<data::Segment> segments =
      data::slice_segments(split.train, cfg.encoder.segment_len, cfg.kb_stride);
  if (segments.empty())
    throw DataError("pretraining pool is empty: source training span shorter than one segment");

  encoder::EncoderModel model(cfg.encoder);
  encoder::PretrainResult result = encoder::mae_pretrain(model, segments);

  fs::create_directories(cfg.artifacts_dir);
  const std::string data_hash = hex64(fnv1a64(data::to_csv(split.train)));
  encoder::save_checkpoint(model, cfg.checkpoint_path(), &result, data_hash);
  write_file_atomic(cfg.artifacts_dir + "/resolved_config.toml", cfg.to_toml());
  return result;
}

KBBuildInfo run_build_kb(const config::RunConfig& cfg) {
  data::CityDataset source = load_city(cfg.source_csv(), cfg.source_context_json(), "sourcecity");
  data::SplitResult split = data::chronological_split(source, cfg.split, /*is_target=*/false);
  auto model =
      encoder::load_checkpoint(require_artifact(cfg.checkpoint_path(), "pretrain-encoder"));

  std::vector<kb::KBEntry> entries;
  std::uint64_t next_id = 0;
  data::for_each_segment(split.train, model->config().segment_len, cfg.kb_stride,
                         [&](const data::Segment& seg) {
                           encoder::SegmentEmbedding emb = model->embed(seg.values);
                           kb::KBEntry e;
                           e.id = next_id++;
                           e.embedding.assign(emb.values.begin(), emb.values.end());
                           // The reference series is the node's whole training
                           // span, so downstream profile matching sees every
                           // weekday.
                           e.source.node_id = seg.node_id;
                           e.source.span_start = split.train.grid_start;
                           e.source.span_end = split.train.timestamp_at(split.train.grid_length);
                           auto it = source.node_context.find(seg.node_id);
                           e.context_text =
                               (it != source.node_context.end() ? it->second : seg.node_id) +
                               " Segment starting " + format_rfc3339(seg.start_timestamp) + ".";
                           entries.push_back(std::move(e));
                         });

  kb::KnowledgeBase knowledge =
      kb::KnowledgeBase::build(std::move(entries), model->checkpoint_hash(), cfg.kb_shrinkage);
  fs::create_directories(cfg.artifacts_dir);
  knowledge.save(cfg.kb_path());
  KBBuildInfo info;
  info.entries = knowledge.size();
  info.dim = knowledge.dim();
  info.diagonal_covariance = knowledge.covariance().diagonal;
  return info;
}

void run_gen_tokens(const config::RunConfig& cfg) {
  data::CityDataset target = load_city(cfg.target_csv(), cfg.target_context_json(), "targetcity");
  data::SplitResult split = data::chronological_split(target, cfg.split, /*is_target=*/true);
  const std::string stamp = ":cfg=" + cfg.config_hash();

  forecaster::PredictionTokens test_tokens;
  if (cfg.base.kind == forecaster::ForecasterKind::ExternalFile) {
    test_tokens = forecaster::import_external_tokens(cfg.base.external_path, split.test, cfg.tokens);
    test_tokens.producer = "external:" + cfg.base.external_path + stamp;
  } else {
    test_tokens = forecaster::generate_tokens(split.test, cfg.base, cfg.tokens);
    test_tokens.producer += stamp;
  }
  forecaster::PredictionTokens train_tokens =
      forecaster::generate_tokens(split.train, cfg.base, cfg.tokens);
  train_tokens.producer += stamp;

  fs::create_directories(cfg.artifacts_dir);
  forecaster::save_tokens(test_tokens, cfg.tokens_path("test"));
  forecaster::save_tokens(train_tokens, cfg.tokens_path("train"));
}

kb::RetrievalResult retrieve_for_node(const config::RunConfig& cfg,
                                      const encoder::EncoderModel& model,
                                      const kb::KnowledgeBase& knowledge,
                                      const data::CityDataset& target_train,
                                      std::size_t node_index, std::size_t k) {
  const std::size_t L = model.config().segment_len;
  if (target_train.grid_length < L)
    throw DataError("target training span (" + std::to_string(target_train.grid_length) +
                    " steps) is shorter than one encoder segment (" + std::to_string(L) + ")");
  const auto& node = target_train.nodes.at(node_index);
  // Average the embeddings of every full training segment so one atypical day
  // (weekend, outage) cannot dominate the query.
  const std::size_t chunks = target_train.grid_length / L;
  std::vector<double> query;
  for (std::size_t c = 0; c < chunks; ++c) {
    std::vector<double> emb = embed_query(model, node_values(node, c * L, L));
    if (query.empty()) query.assign(emb.size(), 0.0);
    for (std::size_t i = 0; i < emb.size(); ++i) query[i] += emb[i] / double(chunks);
  }
  return knowledge.top_k(query, k);
}

void run_forecast(const config::RunConfig& cfg, const std::string& variant) {
  data::CityDataset target = load_city(cfg.target_csv(), cfg.target_context_json(), "targetcity");
  data::SplitResult split = data::chronological_split(target, cfg.split, /*is_target=*/true);
  forecaster::PredictionTokens base =
      forecaster::load_tokens(require_artifact(cfg.tokens_path("test"), "gen-tokens"));

  forecaster::PredictionTokens truth_shape = forecaster::truth_tokens(split.test, cfg.tokens);
  if (base.samples != truth_shape.samples || base.nodes != truth_shape.nodes ||
      base.horizon != truth_shape.horizon || base.window_starts != truth_shape.window_starts)
    throw DataError("prediction tokens do not align with the current target test split; run "
                    "`strata gen-tokens` again");

  forecaster::PredictionTokens out = base;  // same layout and alignment

  if (variant == kVariantBase) {
    for (std::size_t s = 0; s < out.samples; ++s)
      for (std::size_t n = 0; n < out.nodes; ++n) {
        const double cap = double(split.test.nodes[n].capacity);
        for (std::size_t h = 0; h < out.horizon; ++h)
          out.at(s, n, h) = std::clamp(out.at(s, n, h), 0.0, cap);
      }
    out.producer = "base:cfg=" + cfg.config_hash();
    fs::create_directories(cfg.artifacts_dir);
    forecaster::save_tokens(out, cfg.forecast_path(variant));
    return;
  }
  if (variant != kVariantFull && variant != kVariantRandomCentroid &&
      variant != kVariantWeakReasoner)
    throw ConfigError("unknown forecast variant '" + variant + "'");

  data::CityDataset source = load_city(cfg.source_csv(), cfg.source_context_json(), "sourcecity");
  auto model =
      encoder::load_checkpoint(require_artifact(cfg.checkpoint_path(), "pretrain-encoder"));
  kb::KnowledgeBase knowledge =
      kb::KnowledgeBase::load(require_artifact(cfg.kb_path(), "build-kb"));
  if (knowledge.checkpoint_hash() != model->checkpoint_hash())
    throw ValidationError("knowledge base was built with a different encoder checkpoint; run "
                          "`strata build-kb` again");

  std::optional<eval::RandomCentroidRetriever> random_centroid;
  if (variant == kVariantRandomCentroid)
    random_centroid.emplace(knowledge, cfg.ablation.kmeans_k, cfg.ablation.seed,
                            cfg.ablation.kmeans_max_iters);

  reasoning::StubConfig stub = cfg.stub;
  if (variant == kVariantWeakReasoner) stub.alpha = 1.0;

  const std::size_t L = model->config().segment_len;
  const std::int64_t step = split.test.step_seconds();
  for (std::size_t n = 0; n < out.nodes; ++n) {
    kb::RetrievalResult retrieval;
    if (random_centroid) {
      const auto& node = split.train.nodes.at(n);
      std::vector<double> query =
          embed_query(*model, node_values(node, split.train.grid_length - L, L));
      retrieval = random_centroid->retrieve(query);
    } else {
      retrieval = retrieve_for_node(cfg, *model, knowledge, split.train, n, cfg.retrieval_k);
    }
    const double cap = double(split.test.nodes[n].capacity);
    for (std::size_t s = 0; s < out.samples; ++s) {
      std::vector<double> base_row(out.horizon), history(cfg.tokens.window_in);
      for (std::size_t h = 0; h < out.horizon; ++h) base_row[h] = base.at(s, n, h);
      const std::int64_t history_start = base.window_starts[s];
      const std::size_t start_step =
          std::size_t((history_start - split.test.grid_start) / step);
      for (std::size_t i = 0; i < cfg.tokens.window_in; ++i)
        history[i] = double(split.test.nodes[n].values[start_step + i]);
      const std::int64_t horizon_start =
          history_start + std::int64_t(cfg.tokens.window_in) * step;
      std::vector<double> pred = reasoning::stub_reason(retrieval, source, base_row, history,
                                                        history_start, horizon_start, step, cap,
                                                        stub);
      for (std::size_t h = 0; h < out.horizon; ++h) out.at(s, n, h) = pred[h];
    }
  }

  out.producer = "stub:" + variant + ":ckpt=" + model->checkpoint_hash() +
                 ":kb=" + file_hash(cfg.kb_path()) + ":cfg=" + cfg.config_hash();
  fs::create_directories(cfg.artifacts_dir);
  forecaster::save_tokens(out, cfg.forecast_path(variant));
}

EvalOutput run_evaluate(const config::RunConfig& cfg, const std::string& variant) {
  data::CityDataset target = load_city(cfg.target_csv(), cfg.target_context_json(), "targetcity");
  data::SplitResult split = data::chronological_split(target, cfg.split, /*is_target=*/true);
  forecaster::PredictionTokens pred =
      forecaster::load_tokens(require_artifact(cfg.forecast_path(variant), "forecast"));

  check_fingerprint(pred.producer, "cfg", cfg.config_hash(), "forecast --variant " + variant);
  if (variant != kVariantBase) {
    check_fingerprint(pred.producer, "ckpt",
                      file_hash(require_artifact(cfg.checkpoint_path(), "pretrain-encoder")),
                      "forecast --variant " + variant);
    check_fingerprint(pred.producer, "kb", file_hash(require_artifact(cfg.kb_path(), "build-kb")),
                      "forecast --variant " + variant);
  }

  forecaster::PredictionTokens truth = forecaster::truth_tokens(split.test, cfg.tokens);
  eval::HorizonReport report = eval::horizon_table(pred, truth, target.city_name, variant);
  report.frequency_minutes = target.frequency_minutes;
  report.seed = cfg.seed;

  fs::create_directories(cfg.artifacts_dir);
  EvalOutput out;
  out.report = report;
  out.csv_path = cfg.report_path(variant, "csv");
  out.md_path = cfg.report_path(variant, "md");
  write_file_atomic(out.csv_path, report.to_csv());
  write_file_atomic(out.md_path, report.to_markdown());

  const eval::Metrics overall = report.overall();
  nlohmann::json manifest;
  manifest["variant"] = variant;
  manifest["dataset"] = target.city_name;
  manifest["config_hash"] = cfg.config_hash();
  manifest["forecast_producer"] = pred.producer;
  manifest["seed"] = cfg.seed;
  manifest["windows"] = pred.samples;
  manifest["nodes"] = pred.nodes;
  manifest["overall"] = {{"mae", overall.mae}, {"rmse", overall.rmse}, {"mape", overall.mape}};
  write_file_atomic(cfg.artifacts_dir + "/run_manifest_" + variant + ".json",
                    manifest.dump(2) + "\n");
  return out;
}

std::string run_make_sft(const config::RunConfig& cfg) {
  data::CityDataset source = load_city(cfg.source_csv(), cfg.source_context_json(), "sourcecity");
  data::CityDataset target = load_city(cfg.target_csv(), cfg.target_context_json(), "targetcity");
  data::SplitResult split = data::chronological_split(target, cfg.split, /*is_target=*/true);
  forecaster::PredictionTokens base =
      forecaster::load_tokens(require_artifact(cfg.tokens_path("train"), "gen-tokens"));
  forecaster::PredictionTokens truth = forecaster::truth_tokens(split.train, cfg.tokens);
  if (base.samples != truth.samples || base.nodes != truth.nodes ||
      base.window_starts != truth.window_starts)
    throw DataError("training tokens do not align with the current target train split; run "
                    "`strata gen-tokens` again");

  auto model =
      encoder::load_checkpoint(require_artifact(cfg.checkpoint_path(), "pretrain-encoder"));
  kb::KnowledgeBase knowledge =
      kb::KnowledgeBase::load(require_artifact(cfg.kb_path(), "build-kb"));

  reasoning::LlmEndpointConfig endpoint = cfg.endpoint;
  endpoint.cache_dir = cfg.cache_dir;
  fs::create_directories(cfg.cache_dir);

  const std::int64_t step = split.train.step_seconds();
  std::vector<reasoning::SFTCase> cases;
  std::size_t rejected = 0;
  for (std::size_t n = 0; n < base.nodes; ++n) {
    kb::RetrievalResult retrieval =
        retrieve_for_node(cfg, *model, knowledge, split.train, n, cfg.retrieval_k);
    if (retrieval.items.empty()) throw DataError("empty retrieval result for node " + base.node_ids[n]);
    const kb::RetrievalItem& top = retrieval.items.front();
    const data::NodeSeries& src_node = source.node(top.source.node_id);
    const std::size_t span_from =
        std::size_t((top.source.span_start - source.grid_start) / source.step_seconds());
    const std::size_t span_len =
        std::size_t((top.source.span_end - top.source.span_start) / source.step_seconds());
    std::vector<double> src_seq = node_values(src_node, span_from, span_len);

    std::vector<std::size_t> picks =
        reasoning::sample_representative(base.window_starts, cfg.sft_per_node, cfg.seed + n);
    for (std::size_t s : picks) {
      reasoning::SFTCase c;
      c.node_id = base.node_ids[n];
      c.capacity = double(split.train.nodes[n].capacity);
      reasoning::PromptSlots& slots = c.slots;
      slots.source_context = top.context_text;
      slots.source_sequence = src_seq;
      slots.history_start = base.window_starts[s];
      slots.history_end = slots.history_start + std::int64_t(cfg.tokens.window_in) * step;
      slots.horizon_start = slots.history_end;
      slots.horizon_end = slots.horizon_start + std::int64_t(cfg.tokens.horizon) * step;
      auto ctx = target.node_context.find(c.node_id);
      slots.target_context = ctx != target.node_context.end() ? ctx->second : c.node_id;
      const std::size_t start_step =
          std::size_t((slots.history_start - split.train.grid_start) / step);
      slots.target_history =
          node_values(split.train.nodes[n], start_step, cfg.tokens.window_in);
      slots.prediction_tokens.resize(cfg.tokens.horizon);
      std::vector<double> gt(cfg.tokens.horizon);
      for (std::size_t h = 0; h < cfg.tokens.horizon; ++h) {
        slots.prediction_tokens[h] = base.at(s, n, h);
        gt[h] = truth.at(s, n, h);
      }
      slots.ground_truth = gt;

      reasoning::PromptBundle bundle =
          reasoning::build_prompt(slots, reasoning::PromptMode::Training);
      reasoning::TeacherResponse resp = reasoning::call_reasoner(bundle, endpoint);
      reasoning::Verdict verdict = reasoning::validate_teacher(resp.raw_text, gt);
      if (!verdict.accepted) {
        ++rejected;
        continue;
      }
      c.teacher_text = resp.raw_text;
      cases.push_back(std::move(c));
    }
  }
  if (cases.empty())
    throw ValidationError("teacher validation rejected every candidate (" +
                          std::to_string(rejected) + " rejections); no dataset written");

  fs::create_directories(cfg.artifacts_dir);
  const std::string path = cfg.artifacts_dir + "/sft_dataset.jsonl";
  write_file_atomic(path, reasoning::build_sft_dataset(cases));
  return path;
}

std::string run_heatmap(const config::RunConfig& cfg) {
  data::CityDataset source = load_city(cfg.source_csv(), cfg.source_context_json(), "sourcecity");
  data::CityDataset target = load_city(cfg.target_csv(), cfg.target_context_json(), "targetcity");
  data::SplitResult split = data::chronological_split(target, cfg.split, /*is_target=*/true);

  const std::size_t slice_len = cfg.tokens.window_in;
  if (split.train.grid_length < slice_len)
    throw DataError("target training span is shorter than one heatmap slice");
  std::vector<double> target_slice =
      node_values(split.train.nodes.at(0), split.train.grid_length - slice_len, slice_len);

  const std::size_t kWindows = 8;
  if (source.grid_length < slice_len) throw DataError("source span is shorter than one heatmap slice");
  const std::size_t spread = source.grid_length - slice_len;
  std::vector<std::string> carparks, windows;
  for (const auto& n : source.nodes) carparks.push_back(n.node_id);
  std::vector<std::vector<std::vector<double>>> slices;
  for (std::size_t w = 0; w < kWindows; ++w) {
    const std::size_t start = kWindows == 1 ? 0 : spread * w / (kWindows - 1);
    windows.push_back(format_rfc3339(source.timestamp_at(start)));
    std::vector<std::vector<double>> row;
    for (const auto& n : source.nodes) row.push_back(node_values(n, start, slice_len));
    slices.push_back(std::move(row));
  }

  fs::create_directories(cfg.artifacts_dir);
  const std::string path = cfg.artifacts_dir + "/heatmap.csv";
  write_file_atomic(path, kb::export_heatmap(target_slice, carparks, windows, slices));
  return path;
}

AblationOutput run_ablate(const config::RunConfig& cfg) {
  AblationOutput out;
  run_forecast(cfg, kVariantBase);
  out.base = run_evaluate(cfg, kVariantBase).report;
  run_forecast(cfg, kVariantFull);
  out.full = run_evaluate(cfg, kVariantFull).report;
  run_forecast(cfg, kVariantRandomCentroid);
  out.random_centroid = run_evaluate(cfg, kVariantRandomCentroid).report;
  run_forecast(cfg, kVariantWeakReasoner);
  out.weak_reasoner = run_evaluate(cfg, kVariantWeakReasoner).report;
  return out;
}

}  // namespace strata::pipeline
