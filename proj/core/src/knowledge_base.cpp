#include "strata/knowledge_base.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

#include "json.hpp"

namespace strata::kb {

using nlohmann::json;

double l2_distance(const std::vector<double>& q, const std::vector<double>& v) {
  if (q.size() != v.size())
    throw ValidationError("l2_distance: length mismatch " + std::to_string(q.size()) + " vs " +
                          std::to_string(v.size()));
  double acc = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double d = q[i] - v[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

double mahalanobis_distance(const std::vector<double>& q, const std::vector<double>& v,
                            const CovarianceSummary& cov) {
  if (q.size() != v.size() || q.size() != cov.dim)
    throw ValidationError("mahalanobis_distance: dimension mismatch");
  const std::size_t n = cov.dim;
  std::vector<double> diff(n);
  for (std::size_t i = 0; i < n; ++i) diff[i] = q[i] - v[i];
  double acc = 0.0;
  if (cov.diagonal) {
    for (std::size_t i = 0; i < n; ++i) {
      const double y = diff[i] / cov.diag_std[i];
      acc += y * y;
    }
  } else {
    // Solve L y = diff by forward substitution; then D^2 = y'y.
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      double s = diff[i];
      const double* Li = &cov.cholesky[i * n];
      for (std::size_t j = 0; j < i; ++j) s -= Li[j] * y[j];
      y[i] = s / Li[i];
      acc += y[i] * y[i];
    }
  }
  return std::sqrt(acc);
}

double similarity(const std::vector<double>& q, const std::vector<double>& v,
                  const CovarianceSummary& cov) {
  return -0.5 * (l2_distance(q, v) + mahalanobis_distance(q, v, cov));
}

CovarianceSummary estimate_covariance(const std::vector<std::vector<double>>& rows,
                                      double shrinkage) {
  if (rows.empty()) throw DataError("covariance: no embeddings");
  const std::size_t n = rows.size();
  const std::size_t D = rows[0].size();
  CovarianceSummary cov;
  cov.dim = D;
  cov.shrinkage = shrinkage;

  std::vector<double> mean(D, 0.0);
  for (const auto& r : rows)
    for (std::size_t i = 0; i < D; ++i) mean[i] += r[i];
  for (auto& m : mean) m /= double(n);

  if (n < 2 * D) {
    cov.diagonal = true;
    cov.diag_std.assign(D, 0.0);
    for (const auto& r : rows)
      for (std::size_t i = 0; i < D; ++i) {
        const double c = r[i] - mean[i];
        cov.diag_std[i] += c * c;
      }
    for (auto& s : cov.diag_std) s = std::max(std::sqrt(s / double(n)), 1e-6);
    return cov;
  }

  std::vector<double> sigma(D * D, 0.0);
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < D; ++i) {
      const double ci = r[i] - mean[i];
      double* row = &sigma[i * D];
      for (std::size_t j = i; j < D; ++j) row[j] += ci * (r[j] - mean[j]);
    }
  }
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t j = i; j < D; ++j) {
      sigma[i * D + j] /= double(n);
      sigma[j * D + i] = sigma[i * D + j];
    }
  // Shrink toward the diagonal and floor the variances.
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t j = 0; j < D; ++j)
      if (i != j) sigma[i * D + j] *= (1.0 - shrinkage);
  for (std::size_t i = 0; i < D; ++i) sigma[i * D + i] = std::max(sigma[i * D + i], 1e-10);

  // In-place Cholesky.
  cov.cholesky.assign(D * D, 0.0);
  for (std::size_t i = 0; i < D; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = sigma[i * D + j];
      for (std::size_t t = 0; t < j; ++t) s -= cov.cholesky[i * D + t] * cov.cholesky[j * D + t];
      if (i == j) {
        if (s <= 0.0)
          throw ValidationError(
              "covariance not positive definite after shrinkage; increase lambda (currently " +
              std::to_string(shrinkage) + ")");
        cov.cholesky[i * D + i] = std::sqrt(s);
      } else {
        cov.cholesky[i * D + j] = s / cov.cholesky[j * D + j];
      }
    }
  }
  return cov;
}

std::vector<double> znorm(const std::vector<double>& slice) {
  const double n = double(slice.size());
  double mean = std::accumulate(slice.begin(), slice.end(), 0.0) / n;
  double var = 0.0;
  for (double v : slice) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> out(slice.size());
  for (std::size_t i = 0; i < slice.size(); ++i) out[i] = (slice[i] - mean) / (sd + 1e-9);
  return out;
}

double similarity_weight(const std::vector<double>& slice, const std::vector<double>& target,
                         const std::vector<std::vector<double>>& candidates) {
  if (candidates.empty()) throw ValidationError("similarity_weight: empty candidate set");
  constexpr double kEps = 1e-9;
  const auto zt = znorm(target);
  double min_dist = l2_distance(znorm(slice), zt);
  for (const auto& c : candidates) min_dist = std::min(min_dist, l2_distance(znorm(c), zt));
  const double own = l2_distance(znorm(slice), zt);
  return (min_dist + kEps) / (own + kEps);
}

std::string export_heatmap(const std::vector<double>& target_slice,
                           const std::vector<std::string>& carpark_labels,
                           const std::vector<std::string>& window_labels,
                           const std::vector<std::vector<std::vector<double>>>& slices_by_cell) {
  std::vector<std::vector<double>> all;
  for (const auto& row : slices_by_cell)
    for (const auto& s : row) all.push_back(s);
  std::string out = "window";
  for (const auto& c : carpark_labels) out += "," + c;
  out += "\n";
  for (std::size_t r = 0; r < slices_by_cell.size(); ++r) {
    out += window_labels[r];
    for (const auto& s : slices_by_cell[r]) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), ",%.6f", similarity_weight(s, target_slice, all));
      out += buf;
    }
    out += "\n";
  }
  return out;
}

KnowledgeBase KnowledgeBase::build(std::vector<KBEntry> entries,
                                   const std::string& checkpoint_hash, double shrinkage) {
  if (entries.empty()) throw DataError("knowledge base: no entries");
  KnowledgeBase kb;
  kb.checkpoint_hash_ = checkpoint_hash;
  std::sort(entries.begin(), entries.end(),
            [](const KBEntry& a, const KBEntry& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < entries.size(); ++i)
    if (entries[i].id == entries[i - 1].id)
      throw ValidationError("duplicate KB entry id " + std::to_string(entries[i].id));
  const std::size_t D = entries[0].embedding.size();
  std::vector<std::vector<double>> rows;
  rows.reserve(entries.size());
  for (const auto& e : entries) {
    if (e.embedding.size() != D) throw ValidationError("KB embeddings have mixed dimensions");
    rows.emplace_back(e.embedding.begin(), e.embedding.end());
  }
  kb.entries_ = std::move(entries);
  kb.cov_ = estimate_covariance(rows, shrinkage);
  return kb;
}

double KnowledgeBase::similarity_to(const std::vector<double>& query,
                                    std::size_t entry_index) const {
  const auto& e = entries_[entry_index].embedding;
  std::vector<double> v(e.begin(), e.end());
  return similarity(query, v, cov_);
}

RetrievalResult KnowledgeBase::top_k(const std::vector<double>& query, std::size_t k) const {
  if (entries_.empty()) throw DataError("top_k on empty knowledge base");
  if (k < 1) throw ConfigError("top_k: K must be >= 1");
  struct Scored {
    double sim;
    double l2;
    std::size_t idx;
  };
  std::vector<Scored> scored;
  scored.reserve(entries_.size());
  double min_l2 = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    std::vector<double> v(entries_[i].embedding.begin(), entries_[i].embedding.end());
    const double l2 = l2_distance(query, v);
    const double sim = -0.5 * (l2 + mahalanobis_distance(query, v, cov_));
    min_l2 = std::min(min_l2, l2);
    scored.push_back({sim, l2, i});
  }
  // Exact scan; ties broken by ascending id for determinism.
  std::sort(scored.begin(), scored.end(), [&](const Scored& a, const Scored& b) {
    if (a.sim != b.sim) return a.sim > b.sim;
    return entries_[a.idx].id < entries_[b.idx].id;
  });
  RetrievalResult res;
  res.kb_size = entries_.size();
  const std::size_t take = std::min(k, scored.size());
  constexpr double kEps = 1e-9;
  for (std::size_t i = 0; i < take; ++i) {
    const auto& e = entries_[scored[i].idx];
    RetrievalItem item;
    item.id = e.id;
    item.similarity = scored[i].sim;
    item.weight = (min_l2 + kEps) / (scored[i].l2 + kEps);
    item.source = e.source;
    item.context_text = e.context_text;
    res.items.push_back(std::move(item));
  }
  return res;
}

namespace {
constexpr char kMagic[] = "STKB1";
constexpr int kFormatVersion = 1;
}  // namespace

std::string KnowledgeBase::serialize() const {
  json manifest;
  manifest["version"] = kFormatVersion;
  manifest["checkpoint_hash"] = checkpoint_hash_;
  manifest["shrinkage"] = cov_.shrinkage;
  manifest["covariance_mode"] = cov_.diagonal ? "diagonal" : "full";
  manifest["dim"] = cov_.dim;
  json ids = json::array();
  for (const auto& e : entries_)
    ids.push_back({{"id", e.id},
                   {"node", e.source.node_id},
                   {"span_start", e.source.span_start},
                   {"span_end", e.source.span_end},
                   {"context", e.context_text}});
  manifest["entries"] = ids;
  std::string ms = manifest.dump();
  std::string out(kMagic);
  std::uint64_t len = ms.size();
  out.append(reinterpret_cast<const char*>(&len), 8);
  out += ms;
  std::vector<float> block;
  block.reserve(entries_.size() * cov_.dim);
  for (const auto& e : entries_) block.insert(block.end(), e.embedding.begin(), e.embedding.end());
  append_le_f32(out, block);
  return out;
}

KnowledgeBase KnowledgeBase::deserialize(const std::string& blob) {
  const std::size_t magic_len = sizeof(kMagic) - 1;
  if (blob.size() < magic_len + 8 || blob.compare(0, magic_len, kMagic) != 0)
    throw DataError("not a knowledge base file");
  std::uint64_t len;
  std::memcpy(&len, blob.data() + magic_len, 8);
  json manifest = json::parse(blob.substr(magic_len + 8, len));
  if (manifest.at("version") != kFormatVersion) throw DataError("unsupported KB version");
  const std::size_t dim = manifest.at("dim");
  std::vector<KBEntry> entries;
  for (const auto& j : manifest.at("entries")) {
    KBEntry e;
    e.id = j.at("id");
    e.source.node_id = j.at("node");
    e.source.span_start = j.at("span_start");
    e.source.span_end = j.at("span_end");
    e.context_text = j.at("context");
    entries.push_back(std::move(e));
  }
  std::string_view data(blob.data() + magic_len + 8 + len, blob.size() - magic_len - 8 - len);
  auto vals = read_le_f32(data, entries.size() * dim);
  for (std::size_t i = 0; i < entries.size(); ++i)
    entries[i].embedding.assign(vals.begin() + i * dim, vals.begin() + (i + 1) * dim);
  // Covariance is recomputed from the stored embeddings, so a reloaded KB
  // reproduces retrieval results bit for bit.
  return build(std::move(entries), manifest.at("checkpoint_hash"), manifest.at("shrinkage"));
}

void KnowledgeBase::save(const std::string& path) const { write_file_atomic(path, serialize()); }

KnowledgeBase KnowledgeBase::load(const std::string& path) {
  return deserialize(read_file(path));
}

}  // namespace strata::kb
