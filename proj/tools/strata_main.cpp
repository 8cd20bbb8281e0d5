#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "strata/pipeline.hpp"

namespace {

using strata::config::RunConfig;

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value
};

RunConfig resolve_config(const CommonOpts& opts) {
  RunConfig cfg =
      opts.config_path.empty() ? RunConfig{} : strata::config::load_config(opts.config_path);
  for (const std::string& ov : opts.overrides) {
    std::size_t eq = ov.find('=');
    if (eq == std::string::npos)
      throw strata::ConfigError("--set expects key=value, got '" + ov + "'");
    strata::config::apply_override(cfg, ov.substr(0, eq), ov.substr(eq + 1));
  }
  return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("-c,--config", opts.config_path, "Config file (flat TOML)");
  cmd->add_option("--set", opts.overrides, "Override a config key, e.g. --set run.seed=7");
}

void print_report(const strata::eval::HorizonReport& report) {
  std::printf("%s", report.to_markdown().c_str());
  const auto overall = report.overall();
  std::printf("overall: mae=%.4f rmse=%.4f mape=%.2f%%\n", overall.mae, overall.rmse,
              overall.mape);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-city parking-availability forecasting pipeline"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string variant = strata::pipeline::kVariantFull;
  std::string ingest_path, ingest_out;

  CLI::App* gen_synth = app.add_subcommand("gen-synth", "Generate synthetic source/target cities");
  add_common(gen_synth, opts);

  CLI::App* ingest = app.add_subcommand("ingest", "Validate and normalize a raw CSV");
  add_common(ingest, opts);
  ingest->add_option("input", ingest_path, "Raw CSV path")->required();
  ingest->add_option("-o,--output", ingest_out, "Normalized CSV output path");

  CLI::App* pretrain = app.add_subcommand("pretrain-encoder", "Pretrain the masked autoencoder");
  add_common(pretrain, opts);

  CLI::App* build_kb = app.add_subcommand("build-kb", "Embed source segments into the knowledge base");
  add_common(build_kb, opts);

  CLI::App* gen_tokens = app.add_subcommand("gen-tokens", "Generate base-forecaster tokens");
  add_common(gen_tokens, opts);

  CLI::App* retrieve = app.add_subcommand("retrieve", "Show top-K matches for each target node");
  add_common(retrieve, opts);

  CLI::App* make_sft = app.add_subcommand("make-sft", "Build the distillation dataset (JSONL)");
  add_common(make_sft, opts);

  CLI::App* forecast = app.add_subcommand("forecast", "Produce forecasts for the target test split");
  add_common(forecast, opts);
  forecast->add_option("--variant", variant,
                       "full | random_centroid | weak_reasoner | base");

  CLI::App* evaluate = app.add_subcommand("evaluate", "Score a forecast against ground truth");
  add_common(evaluate, opts);
  evaluate->add_option("--variant", variant,
                       "full | random_centroid | weak_reasoner | base");

  CLI::App* ablate = app.add_subcommand("ablate", "Run all variants and print the comparison");
  add_common(ablate, opts);

  CLI::App* heatmap = app.add_subcommand("heatmap", "Export the similarity-weight heatmap CSV");
  add_common(heatmap, opts);

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = resolve_config(opts);
    if (gen_synth->parsed()) {
      strata::pipeline::run_gen_synth(cfg);
      std::printf("wrote %s and %s\n", cfg.source_csv().c_str(), cfg.target_csv().c_str());
    } else if (ingest->parsed()) {
      strata::data::CityDataset ds = strata::data::ingest_csv(ingest_path);
      std::printf("ok: %zu nodes, %zu steps on the grid starting %s\n", ds.nodes.size(),
                  ds.grid_length, strata::format_rfc3339(ds.grid_start).c_str());
      for (const std::string& note : ds.provenance) std::printf("  %s\n", note.c_str());
      if (!ingest_out.empty()) {
        strata::write_file_atomic(ingest_out, strata::data::to_csv(ds));
        std::printf("normalized CSV written to %s\n", ingest_out.c_str());
      }
    } else if (pretrain->parsed()) {
      auto result = strata::pipeline::run_pretrain(cfg);
      std::printf("pretrained %zu epochs, final loss %.6f, checkpoint %s (%s)\n",
                  result.epoch_losses.size(),
                  result.epoch_losses.empty() ? 0.0 : result.epoch_losses.back(),
                  cfg.checkpoint_path().c_str(), result.checkpoint_hash.c_str());
    } else if (build_kb->parsed()) {
      auto info = strata::pipeline::run_build_kb(cfg);
      std::printf("knowledge base: %zu entries, dim %zu, %s covariance -> %s\n", info.entries,
                  info.dim, info.diagonal_covariance ? "diagonal" : "full",
                  cfg.kb_path().c_str());
    } else if (gen_tokens->parsed()) {
      strata::pipeline::run_gen_tokens(cfg);
      std::printf("wrote %s and %s\n", cfg.tokens_path("test").c_str(),
                  cfg.tokens_path("train").c_str());
    } else if (retrieve->parsed()) {
      auto target = strata::pipeline::load_city(cfg.target_csv(), cfg.target_context_json(),
                                                "targetcity");
      auto split = strata::data::chronological_split(target, cfg.split, true);
      auto model = strata::encoder::load_checkpoint(
          strata::pipeline::require_artifact(cfg.checkpoint_path(), "pretrain-encoder"));
      auto knowledge = strata::kb::KnowledgeBase::load(
          strata::pipeline::require_artifact(cfg.kb_path(), "build-kb"));
      for (std::size_t n = 0; n < split.train.nodes.size(); ++n) {
        auto res = strata::pipeline::retrieve_for_node(cfg, *model, knowledge, split.train, n,
                                                       cfg.retrieval_k);
        std::printf("%s:\n", split.train.nodes[n].node_id.c_str());
        for (const auto& item : res.items)
          std::printf("  #%llu %s sim=%.4f weight=%.4f\n",
                      static_cast<unsigned long long>(item.id), item.source.node_id.c_str(),
                      item.similarity, item.weight);
      }
    } else if (make_sft->parsed()) {
      std::string path = strata::pipeline::run_make_sft(cfg);
      std::printf("wrote %s\n", path.c_str());
    } else if (forecast->parsed()) {
      strata::pipeline::run_forecast(cfg, variant);
      std::printf("wrote %s\n", cfg.forecast_path(variant).c_str());
    } else if (evaluate->parsed()) {
      auto out = strata::pipeline::run_evaluate(cfg, variant);
      print_report(out.report);
      std::printf("report: %s / %s\n", out.csv_path.c_str(), out.md_path.c_str());
    } else if (ablate->parsed()) {
      auto out = strata::pipeline::run_ablate(cfg);
      std::printf("== base ==\n");
      print_report(out.base);
      std::printf("== full ==\n");
      print_report(out.full);
      std::printf("== random_centroid ==\n");
      print_report(out.random_centroid);
      std::printf("== weak_reasoner ==\n");
      print_report(out.weak_reasoner);
    } else if (heatmap->parsed()) {
      std::string path = strata::pipeline::run_heatmap(cfg);
      std::printf("wrote %s\n", path.c_str());
    }
  } catch (const strata::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const strata::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const strata::NetworkError& e) {
    std::fprintf(stderr, "network error: %s\n", e.what());
    return 4;
  } catch (const strata::ValidationError& e) {
    std::fprintf(stderr, "validation error: %s\n", e.what());
    return 5;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
