#pragma once

// Query-key space diagnostics over captured encoder self-attention:
// query-region purity from a two-center k-means, attention entropy, and the
// distance between query and key centroids.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "qkalign/model.hpp"

namespace qkalign {

struct KMeansResult {
  // 0 = cluster seeded by init_a, 1 = cluster seeded by init_b.
  std::vector<std::uint8_t> assignment;
  std::vector<double> center_a;
  std::vector<double> center_b;
  std::size_t iterations = 0;
  bool converged = false;
  bool degenerate = false;  // identical seeds
};

// Lloyd iterations from the two seeds until the assignment stops changing
// (or max_iterations). Ties go to cluster a; an emptied cluster keeps its
// previous center.
KMeansResult kmeans2(std::span<const double> points, std::size_t rows, std::size_t cols,
                     std::span<const double> init_a, std::span<const double> init_b,
                     std::size_t max_iterations = 100);

struct PurityResult {
  std::optional<double> purity;  // empty when the query cluster ends up empty
  std::size_t region_size = 0;
  std::size_t region_queries = 0;
  std::size_t iterations = 0;
  // The query-seeded center finished closer to the key mean than to the
  // query mean.
  bool swapped = false;
};

// Cluster Q ∪ K seeded with (mean(Q), mean(K)); purity is the query share of
// the query-seeded cluster.
PurityResult purity(const Tensor& q, const Tensor& k);
PurityResult purity(const AttentionRecord& record);

// Mean row entropy in nats; 0·log 0 = 0. Contract error if a row does not
// sum to 1 within 1e-6.
double attention_entropy(const Tensor& a);
double attention_entropy(const AttentionRecord& record);
// Head average of attention_entropy over the records of one layer.
double head_averaged_entropy(std::span<const AttentionRecord> layer_records);

double region_distance(const AttentionRecord& record);

struct RecordDiagnostics {
  std::size_t sample = 0;
  BranchKind branch = BranchKind::Position;
  std::size_t layer = 0;
  std::size_t head = 0;
  std::optional<double> purity;
  bool swapped = false;
  double entropy = 0.0;
  double entropy_normalized = 0.0;
  double region_distance = 0.0;
};

std::vector<RecordDiagnostics> diagnose_records(std::span<const AttentionRecord> records, std::size_t sample);

struct LayerSummary {
  BranchKind branch = BranchKind::Position;
  std::size_t layer = 0;
  std::size_t records = 0;
  double mean_entropy = 0.0;
  double mean_entropy_normalized = 0.0;
  double mean_purity = 0.0;  // over defined purities
  std::size_t undefined_purity = 0;
  std::size_t swaps = 0;
  double mean_region_distance = 0.0;
};

struct BranchSummary {
  std::size_t records = 0;
  double mean_entropy = 0.0;
  double mean_purity = 0.0;
  double min_purity = 0.0;
  double mean_region_distance = 0.0;
  std::size_t undefined_purity = 0;
  std::size_t swaps = 0;
  // Share of defined purities in the open interval (0.85, 1.0).
  double near_pure_fraction = 0.0;
  // Ten equal bins over [0, 1].
  std::array<std::size_t, 10> purity_histogram{};
};

struct DiagnosticsSummary {
  std::vector<LayerSummary> layers;  // position branch first, then orientation
  BranchSummary t;
  BranchSummary r;
  BranchSummary overall;
};

DiagnosticsSummary summarize(std::span<const RecordDiagnostics> rows);

}  // namespace qkalign
