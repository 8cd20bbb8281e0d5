#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "strata/common.hpp"

namespace strata::kb {

struct SourceRef {
  std::string node_id;
  std::int64_t span_start = 0;  // epoch seconds
  std::int64_t span_end = 0;
};

struct KBEntry {
  std::uint64_t id = 0;
  std::vector<float> embedding;  // flattened [L'*d], stored at 32-bit precision
  SourceRef source;
  std::string context_text;
};

struct CovarianceSummary {
  bool diagonal = false;
  double shrinkage = 0.1;
  std::size_t dim = 0;
  // Full mode: lower Cholesky factor of the regularized covariance, row-major.
  // Diagonal mode: per-coordinate standard deviations after regularization.
  std::vector<double> cholesky;
  std::vector<double> diag_std;
};

struct RetrievalItem {
  std::uint64_t id = 0;
  double similarity = 0.0;
  double weight = 0.0;  // normalized similarity weight within the result set
  SourceRef source;
  std::string context_text;
};

struct RetrievalResult {
  std::vector<RetrievalItem> items;  // similarity non-increasing, ties by id
  std::size_t kb_size = 0;
};

class KnowledgeBase {
 public:
  KnowledgeBase() = default;

  static KnowledgeBase build(std::vector<KBEntry> entries, const std::string& checkpoint_hash,
                             double shrinkage = 0.1);

  const std::vector<KBEntry>& entries() const { return entries_; }
  const CovarianceSummary& covariance() const { return cov_; }
  const std::string& checkpoint_hash() const { return checkpoint_hash_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t dim() const { return cov_.dim; }

  RetrievalResult top_k(const std::vector<double>& query, std::size_t k) const;
  double similarity_to(const std::vector<double>& query, std::size_t entry_index) const;

  std::string serialize() const;
  static KnowledgeBase deserialize(const std::string& blob);
  void save(const std::string& path) const;
  static KnowledgeBase load(const std::string& path);

 private:
  std::vector<KBEntry> entries_;
  CovarianceSummary cov_;
  std::string checkpoint_hash_;
};

double l2_distance(const std::vector<double>& q, const std::vector<double>& v);
double mahalanobis_distance(const std::vector<double>& q, const std::vector<double>& v,
                            const CovarianceSummary& cov);
double similarity(const std::vector<double>& q, const std::vector<double>& v,
                  const CovarianceSummary& cov);

// Covariance estimation with shrinkage toward the diagonal; falls back to the
// diagonal-only form when there are too few rows for a stable full estimate.
CovarianceSummary estimate_covariance(const std::vector<std::vector<double>>& rows,
                                      double shrinkage);

// Normalized similarity weight over z-normalized raw slices. `candidates` are
// the slices x_j the minimum ranges over; `slice` is s_i; `target` is x_t.
double similarity_weight(const std::vector<double>& slice, const std::vector<double>& target,
                         const std::vector<std::vector<double>>& candidates);

// One row per time window, one column per carpark, cells are weights.
std::string export_heatmap(const std::vector<double>& target_slice,
                           const std::vector<std::string>& carpark_labels,
                           const std::vector<std::string>& window_labels,
                           const std::vector<std::vector<std::vector<double>>>& slices_by_cell);

std::vector<double> znorm(const std::vector<double>& slice);

}  // namespace strata::kb
