#include "strata/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "strata/rng.hpp"

namespace strata::eval {

Metrics compute_metrics(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.size() != truth.size() || pred.empty())
    throw ValidationError("compute_metrics: shape mismatch " + std::to_string(pred.size()) +
                          " vs " + std::to_string(truth.size()));
  double abs_sum = 0.0, sq_sum = 0.0, max_abs_truth = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!std::isfinite(truth[i])) throw ValidationError("compute_metrics: non-finite truth");
    const double e = pred[i] - truth[i];
    abs_sum += std::abs(e);
    sq_sum += e * e;
    max_abs_truth = std::max(max_abs_truth, std::abs(truth[i]));
  }
  const double n = double(pred.size());
  Metrics m;
  m.mae = abs_sum / n;
  m.rmse = std::sqrt(sq_sum / n);
  // Percentage error is scale-normalized by the peak truth magnitude, with a
  // floor so all-zero truth stays finite.
  m.mape = 100.0 * m.mae / std::max(max_abs_truth, kMapeEpsilon);
  return m;
}

Metrics HorizonReport::overall() const {
  Metrics m;
  if (per_step.empty()) return m;
  double mse = 0.0;
  for (const auto& s : per_step) {
    m.mae += s.mae;
    mse += s.rmse * s.rmse;
    m.mape += s.mape;
  }
  m.mae /= double(per_step.size());
  m.rmse = std::sqrt(mse / double(per_step.size()));
  m.mape /= double(per_step.size());
  return m;
}

std::string HorizonReport::to_csv() const {
  std::string out = "horizon_minutes,mae,rmse,mape\n";
  for (std::size_t h = 0; h < per_step.size(); ++h) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%d,%.10f,%.10f,%.10f\n", int((h + 1) * frequency_minutes),
                  per_step[h].mae, per_step[h].rmse, per_step[h].mape);
    out += buf;
  }
  return out;
}

std::string HorizonReport::to_markdown() const {
  std::string out = "| Horizon | MAE | RMSE | MAPE |\n|---|---|---|---|\n";
  for (std::size_t h = 0; h < per_step.size(); ++h) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "| %d mins | %.2f | %.2f | %.2f%% |\n",
                  int((h + 1) * frequency_minutes), per_step[h].mae, per_step[h].rmse,
                  per_step[h].mape);
    out += buf;
  }
  return out;
}

HorizonReport horizon_table(const forecaster::PredictionTokens& pred,
                            const forecaster::PredictionTokens& truth,
                            const std::string& dataset, const std::string& variant) {
  if (pred.samples != truth.samples || pred.nodes != truth.nodes ||
      pred.horizon != truth.horizon)
    throw ValidationError("horizon_table: prediction/truth shape mismatch");
  HorizonReport report;
  report.dataset = dataset;
  report.variant = variant;
  for (std::size_t h = 0; h < pred.horizon; ++h) {
    std::vector<double> p, t;
    p.reserve(pred.samples * pred.nodes);
    t.reserve(pred.samples * pred.nodes);
    // Aggregation is over windows and nodes jointly, per step.
    for (std::size_t w = 0; w < pred.samples; ++w)
      for (std::size_t n = 0; n < pred.nodes; ++n) {
        p.push_back(pred.at(w, n, h));
        t.push_back(truth.at(w, n, h));
      }
    report.per_step.push_back(compute_metrics(p, t));
  }
  return report;
}

KMeansResult kmeans(const std::vector<std::vector<double>>& rows, std::size_t k,
                    std::uint64_t seed, std::size_t max_iters) {
  if (rows.empty()) throw DataError("kmeans: no rows");
  if (k == 0 || k > rows.size())
    throw ConfigError("kmeans: k=" + std::to_string(k) + " with " + std::to_string(rows.size()) +
                      " rows");
  const std::size_t D = rows[0].size();
  Rng rng(seed);
  KMeansResult res;

  // k-means++ seeding
  auto dist2 = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < D; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
  };
  res.centroids.push_back(rows[rng.next_below(rows.size())]);
  std::vector<double> d2(rows.size());
  while (res.centroids.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : res.centroids) best = std::min(best, dist2(rows[i], c));
      d2[i] = best;
      total += best;
    }
    if (total <= 0.0) {
      res.centroids.push_back(rows[rng.next_below(rows.size())]);
      continue;
    }
    double target = rng.next_double() * total;
    std::size_t pick = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      target -= d2[i];
      if (target <= 0.0) {
        pick = i;
        break;
      }
    }
    res.centroids.push_back(rows[pick]);
  }

  res.assignment.assign(rows.size(), 0);
  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::size_t best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = dist2(rows[i], res.centroids[c]);
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      if (res.assignment[i] != best) {
        res.assignment[i] = best;
        changed = true;
      }
    }
    std::vector<std::vector<double>> sums(k, std::vector<double>(D, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = 0; j < D; ++j) sums[res.assignment[i]][j] += rows[i][j];
      ++counts[res.assignment[i]];
    }
    for (std::size_t c = 0; c < k; ++c)
      if (counts[c])
        for (std::size_t j = 0; j < D; ++j) res.centroids[c][j] = sums[c][j] / double(counts[c]);
    if (!changed && iter > 0) break;
  }
  return res;
}

RandomCentroidRetriever::RandomCentroidRetriever(const kb::KnowledgeBase& kb, std::size_t k,
                                                 std::uint64_t seed, std::size_t max_iters)
    : kb_(&kb) {
  std::vector<std::vector<double>> rows;
  rows.reserve(kb.size());
  for (const auto& e : kb.entries())
    rows.emplace_back(e.embedding.begin(), e.embedding.end());
  km_ = kmeans(rows, k, seed, max_iters);
  // One randomly selected representative entry per cluster, fixed at build time.
  Rng rng(seed ^ 0xab1e5eed);
  representative_.assign(km_.centroids.size(), 0);
  for (std::size_t c = 0; c < km_.centroids.size(); ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < km_.assignment.size(); ++i)
      if (km_.assignment[i] == c) members.push_back(i);
    representative_[c] = members.empty() ? rng.next_below(kb.size())
                                         : members[rng.next_below(members.size())];
  }
}

kb::RetrievalResult RandomCentroidRetriever::retrieve(const std::vector<double>& query) const {
  std::size_t best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < km_.centroids.size(); ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < query.size(); ++i) {
      const double d = query[i] - km_.centroids[c][i];
      s += d * d;
    }
    if (s < bd) {
      bd = s;
      best = c;
    }
  }
  const auto& e = kb_->entries()[representative_[best]];
  kb::RetrievalResult res;
  res.kb_size = kb_->size();
  kb::RetrievalItem item;
  item.id = e.id;
  std::vector<double> v(e.embedding.begin(), e.embedding.end());
  item.similarity = kb::similarity(query, v, kb_->covariance());
  item.weight = 1.0;
  item.source = e.source;
  item.context_text = e.context_text;
  res.items.push_back(std::move(item));
  return res;
}

}  // namespace strata::eval
