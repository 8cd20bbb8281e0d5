#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "strata/forecaster.hpp"
#include "strata/knowledge_base.hpp"

namespace strata::eval {

struct Metrics {
  double mae = 0.0;
  double rmse = 0.0;
  double mape = 0.0;  // percent
};

// MAPE denominator guard: parking counts hit zero.
constexpr double kMapeEpsilon = 1.0;

Metrics compute_metrics(const std::vector<double>& pred, const std::vector<double>& truth);

struct HorizonReport {
  std::vector<Metrics> per_step;  // index h-1, horizon label 15*(h) minutes
  int frequency_minutes = 15;
  std::string dataset;
  std::string variant;
  std::uint64_t seed = 0;

  Metrics overall() const;
  std::string to_csv() const;
  std::string to_markdown() const;
};

HorizonReport horizon_table(const forecaster::PredictionTokens& pred,
                            const forecaster::PredictionTokens& truth,
                            const std::string& dataset = "", const std::string& variant = "");

enum class AblationVariant { Full, RandomCentroid, WeakReasoner };

struct AblationSpec {
  AblationVariant variant = AblationVariant::Full;
  std::size_t kmeans_k = 16;
  std::uint64_t seed = 7;
  std::size_t kmeans_max_iters = 50;
};

struct KMeansResult {
  std::vector<std::vector<double>> centroids;
  std::vector<std::size_t> assignment;  // per input row
};

// Lloyd's algorithm with k-means++ init, seeded.
KMeansResult kmeans(const std::vector<std::vector<double>>& rows, std::size_t k,
                    std::uint64_t seed, std::size_t max_iters = 50);

// Random-centroid retrieval of the first ablation: every query mapped to its
// nearest centroid's randomly chosen representative KB entry.
class RandomCentroidRetriever {
 public:
  RandomCentroidRetriever(const kb::KnowledgeBase& kb, std::size_t k, std::uint64_t seed,
                          std::size_t max_iters = 50);
  kb::RetrievalResult retrieve(const std::vector<double>& query) const;

 private:
  const kb::KnowledgeBase* kb_;
  KMeansResult km_;
  std::vector<std::size_t> representative_;  // per centroid, KB entry index
};

}  // namespace strata::eval
