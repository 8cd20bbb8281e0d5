#include "strata/config.hpp"

#include <cstdio>
#include <sstream>

#include "strata/common.hpp"

namespace strata::config {
namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

std::int64_t to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    long long i = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
  }
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::int64_t i = to_int(key, v);
  if (i < 0) throw ConfigError("config key '" + key + "': must be non-negative, got '" + v + "'");
  return std::size_t(i);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

std::string unquote(const std::string& key, const std::string& v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  throw ConfigError("config key '" + key + "': expected a quoted string, got '" + v + "'");
}

std::string fmt(double d) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", d);
  return buf;
}

}  // namespace

void apply_override(RunConfig& c, const std::string& key, const std::string& value) {
  const std::string& v = value;
  if (key == "paths.data_dir") c.data_dir = unquote(key, v);
  else if (key == "paths.artifacts_dir") c.artifacts_dir = unquote(key, v);
  else if (key == "paths.cache_dir") c.cache_dir = unquote(key, v);
  else if (key == "encoder.patch_width") c.encoder.patch_width = to_size(key, v);
  else if (key == "encoder.embed_dim") c.encoder.embed_dim = to_size(key, v);
  else if (key == "encoder.layers") c.encoder.layers = to_size(key, v);
  else if (key == "encoder.heads") c.encoder.heads = to_size(key, v);
  else if (key == "encoder.mask_ratio") c.encoder.mask_ratio = to_double(key, v);
  else if (key == "encoder.epochs") c.encoder.epochs = to_size(key, v);
  else if (key == "encoder.batch_size") c.encoder.batch_size = to_size(key, v);
  else if (key == "encoder.steps_per_epoch") c.encoder.steps_per_epoch = to_size(key, v);
  else if (key == "encoder.learning_rate") c.encoder.learning_rate = to_double(key, v);
  else if (key == "encoder.seed") c.encoder.seed = std::uint64_t(to_int(key, v));
  else if (key == "encoder.segment_len") c.encoder.segment_len = to_size(key, v);
  else if (key == "split.train_fraction") c.split.train_fraction = to_double(key, v);
  else if (key == "split.val_fraction") c.split.val_fraction = to_double(key, v);
  else if (key == "split.test_fraction") c.split.test_fraction = to_double(key, v);
  else if (key == "split.target_train_days") c.split.target_train_days = int(to_int(key, v));
  else if (key == "base.kind") {
    const std::string s = unquote(key, v);
    if (s == "seasonal_naive") c.base.kind = forecaster::ForecasterKind::SeasonalNaive;
    else if (s == "historical_average") c.base.kind = forecaster::ForecasterKind::HistoricalAverage;
    else if (s == "external_file") c.base.kind = forecaster::ForecasterKind::ExternalFile;
    else throw ConfigError("config key 'base.kind': unknown forecaster '" + s + "'");
  } else if (key == "base.seasonal_period") c.base.seasonal_period = to_size(key, v);
  else if (key == "base.external_path") c.base.external_path = unquote(key, v);
  else if (key == "tokens.window_in") c.tokens.window_in = to_size(key, v);
  else if (key == "tokens.horizon") c.tokens.horizon = to_size(key, v);
  else if (key == "endpoint.base_url") c.endpoint.base_url = unquote(key, v);
  else if (key == "endpoint.model") c.endpoint.model = unquote(key, v);
  else if (key == "endpoint.api_key_env") c.endpoint.api_key_env = unquote(key, v);
  else if (key == "endpoint.temperature") c.endpoint.temperature = to_double(key, v);
  else if (key == "endpoint.timeout_seconds") c.endpoint.timeout_seconds = int(to_int(key, v));
  else if (key == "endpoint.max_retries") c.endpoint.max_retries = int(to_int(key, v));
  else if (key == "endpoint.max_concurrent") c.endpoint.max_concurrent = int(to_int(key, v));
  else if (key == "endpoint.stub_mode") c.endpoint.stub_mode = to_bool(key, v);
  else if (key == "stub.alpha") c.stub.alpha = to_double(key, v);
  else if (key == "ablation.kmeans_k") c.ablation.kmeans_k = to_size(key, v);
  else if (key == "ablation.seed") c.ablation.seed = std::uint64_t(to_int(key, v));
  else if (key == "ablation.kmeans_max_iters") c.ablation.kmeans_max_iters = to_size(key, v);
  else if (key == "retrieval.k") c.retrieval_k = to_size(key, v);
  else if (key == "kb.stride") c.kb_stride = to_size(key, v);
  else if (key == "kb.shrinkage") c.kb_shrinkage = to_double(key, v);
  else if (key == "sft.per_node") c.sft_per_node = to_size(key, v);
  else if (key == "run.seed") c.seed = std::uint64_t(to_int(key, v));
  else if (key == "synth.seed") c.synth_seed = std::uint64_t(to_int(key, v));
  else if (key == "synth.source_nodes") c.source_nodes = int(to_int(key, v));
  else if (key == "synth.source_days") c.source_days = int(to_int(key, v));
  else if (key == "synth.target_nodes") c.target_nodes = int(to_int(key, v));
  else if (key == "synth.target_days") c.target_days = int(to_int(key, v));
  else if (key == "synth.noise") c.synth_noise = to_double(key, v);
  else if (key == "synth.diurnal") c.synth_diurnal = to_double(key, v);
  else if (key == "synth.weekly") c.synth_weekly = to_double(key, v);
  else if (key == "synth.capacity") c.synth_capacity = int(to_int(key, v));
  else if (key == "synth.planted_source_node") c.planted_source_node = int(to_int(key, v));
  else if (key == "synth.planted_scale") c.planted_scale = to_double(key, v);
  else if (key == "synth.planted_offset") c.planted_offset = to_double(key, v);
  else throw ConfigError("unknown config key '" + key + "'");
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(lineno) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key or value");
    if (!section.empty()) key = section + "." + key;
    apply_override(cfg, key, value);
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError("cannot read config file '" + path + "': " + e.what());
  }
  return parse_config(text);
}

std::string RunConfig::to_toml() const {
  std::ostringstream o;
  o << "[paths]\n";
  o << "data_dir = \"" << data_dir << "\"\n";
  o << "artifacts_dir = \"" << artifacts_dir << "\"\n";
  o << "cache_dir = \"" << cache_dir << "\"\n";
  o << "\n[encoder]\n";
  o << "patch_width = " << encoder.patch_width << "\n";
  o << "embed_dim = " << encoder.embed_dim << "\n";
  o << "layers = " << encoder.layers << "\n";
  o << "heads = " << encoder.heads << "\n";
  o << "mask_ratio = " << fmt(encoder.mask_ratio) << "\n";
  o << "epochs = " << encoder.epochs << "\n";
  o << "batch_size = " << encoder.batch_size << "\n";
  o << "steps_per_epoch = " << encoder.steps_per_epoch << "\n";
  o << "learning_rate = " << fmt(encoder.learning_rate) << "\n";
  o << "seed = " << encoder.seed << "\n";
  o << "segment_len = " << encoder.segment_len << "\n";
  o << "\n[split]\n";
  o << "train_fraction = " << fmt(split.train_fraction) << "\n";
  o << "val_fraction = " << fmt(split.val_fraction) << "\n";
  o << "test_fraction = " << fmt(split.test_fraction) << "\n";
  o << "target_train_days = " << split.target_train_days << "\n";
  o << "\n[base]\n";
  o << "kind = \""
    << (base.kind == forecaster::ForecasterKind::SeasonalNaive      ? "seasonal_naive"
        : base.kind == forecaster::ForecasterKind::HistoricalAverage ? "historical_average"
                                                                     : "external_file")
    << "\"\n";
  o << "seasonal_period = " << base.seasonal_period << "\n";
  if (!base.external_path.empty()) o << "external_path = \"" << base.external_path << "\"\n";
  o << "\n[tokens]\n";
  o << "window_in = " << tokens.window_in << "\n";
  o << "horizon = " << tokens.horizon << "\n";
  o << "\n[endpoint]\n";
  o << "base_url = \"" << endpoint.base_url << "\"\n";
  o << "model = \"" << endpoint.model << "\"\n";
  o << "api_key_env = \"" << endpoint.api_key_env << "\"\n";
  o << "temperature = " << fmt(endpoint.temperature) << "\n";
  o << "timeout_seconds = " << endpoint.timeout_seconds << "\n";
  o << "max_retries = " << endpoint.max_retries << "\n";
  o << "max_concurrent = " << endpoint.max_concurrent << "\n";
  o << "stub_mode = " << (endpoint.stub_mode ? "true" : "false") << "\n";
  o << "\n[stub]\n";
  o << "alpha = " << fmt(stub.alpha) << "\n";
  o << "\n[ablation]\n";
  o << "kmeans_k = " << ablation.kmeans_k << "\n";
  o << "seed = " << ablation.seed << "\n";
  o << "kmeans_max_iters = " << ablation.kmeans_max_iters << "\n";
  o << "\n[retrieval]\n";
  o << "k = " << retrieval_k << "\n";
  o << "\n[kb]\n";
  o << "stride = " << kb_stride << "\n";
  o << "shrinkage = " << fmt(kb_shrinkage) << "\n";
  o << "\n[sft]\n";
  o << "per_node = " << sft_per_node << "\n";
  o << "\n[run]\n";
  o << "seed = " << seed << "\n";
  o << "\n[synth]\n";
  o << "seed = " << synth_seed << "\n";
  o << "source_nodes = " << source_nodes << "\n";
  o << "source_days = " << source_days << "\n";
  o << "target_nodes = " << target_nodes << "\n";
  o << "target_days = " << target_days << "\n";
  o << "noise = " << fmt(synth_noise) << "\n";
  o << "diurnal = " << fmt(synth_diurnal) << "\n";
  o << "weekly = " << fmt(synth_weekly) << "\n";
  o << "capacity = " << synth_capacity << "\n";
  o << "planted_source_node = " << planted_source_node << "\n";
  o << "planted_scale = " << fmt(planted_scale) << "\n";
  o << "planted_offset = " << fmt(planted_offset) << "\n";
  return o.str();
}

std::string RunConfig::config_hash() const { return hex64(fnv1a64(to_toml())); }

}  // namespace strata::config
