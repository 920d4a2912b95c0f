#include "qkalign/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "qkalign/error.hpp"

namespace qkalign {

namespace {

double squared_distance(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  return s;
}

std::vector<double> column_means(std::span<const double> m, std::size_t rows, std::size_t cols) {
  std::vector<double> mean(cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) mean[j] += m[i * cols + j];
  for (auto& v : mean) v /= static_cast<double>(rows);
  return mean;
}

}  // namespace

KMeansResult kmeans2(std::span<const double> points, std::size_t rows, std::size_t cols,
                     std::span<const double> init_a, std::span<const double> init_b,
                     std::size_t max_iterations) {
  if (rows < 2) throw ContractError("kmeans2: need at least 2 points");
  if (points.size() != rows * cols) throw DimensionError("kmeans2: point buffer does not match shape");
  if (init_a.size() != cols || init_b.size() != cols) throw DimensionError("kmeans2: seed width mismatch");
  for (std::size_t j = 0; j < cols; ++j) {
    if (!std::isfinite(init_a[j]) || !std::isfinite(init_b[j])) throw ContractError("kmeans2: non-finite seed");
  }

  KMeansResult res;
  res.center_a.assign(init_a.begin(), init_a.end());
  res.center_b.assign(init_b.begin(), init_b.end());
  res.assignment.assign(rows, 0);
  if (std::equal(init_a.begin(), init_a.end(), init_b.begin())) {
    res.degenerate = true;
    res.converged = true;
    res.iterations = 1;
    res.center_a = column_means(points, rows, cols);
    return res;
  }

  auto assign = [&](std::vector<std::uint8_t>& out) {
    for (std::size_t i = 0; i < rows; ++i) {
      const double* p = points.data() + i * cols;
      const double da = squared_distance(p, res.center_a.data(), cols);
      const double db = squared_distance(p, res.center_b.data(), cols);
      out[i] = db < da ? 1 : 0;
    }
  };
  assign(res.assignment);

  std::vector<std::uint8_t> next(rows);
  for (std::size_t it = 1; it <= max_iterations; ++it) {
    std::vector<double> sum_a(cols, 0.0), sum_b(cols, 0.0);
    std::size_t n_a = 0, n_b = 0;
    for (std::size_t i = 0; i < rows; ++i) {
      auto& s = res.assignment[i] == 0 ? sum_a : sum_b;
      (res.assignment[i] == 0 ? n_a : n_b)++;
      for (std::size_t j = 0; j < cols; ++j) s[j] += points[i * cols + j];
    }
    if (n_a) {
      for (std::size_t j = 0; j < cols; ++j) res.center_a[j] = sum_a[j] / static_cast<double>(n_a);
    }
    if (n_b) {
      for (std::size_t j = 0; j < cols; ++j) res.center_b[j] = sum_b[j] / static_cast<double>(n_b);
    }
    assign(next);
    res.iterations = it;
    if (next == res.assignment) {
      res.converged = true;
      break;
    }
    res.assignment.swap(next);
  }
  return res;
}

PurityResult purity(const Tensor& q, const Tensor& k) {
  if (q.rank() != 2 || k.rank() != 2 || q.shape() != k.shape()) {
    throw DimensionError("purity: query and key rows must share a shape");
  }
  const std::size_t n = q.rows(), d = q.cols();
  if (n == 0) throw ContractError("purity: empty record");
  std::vector<double> stacked(2 * n * d);
  std::copy(q.data().begin(), q.data().end(), stacked.begin());
  std::copy(k.data().begin(), k.data().end(), stacked.begin() + static_cast<std::ptrdiff_t>(n * d));
  const auto q_mean = column_means(q.data(), n, d);
  const auto k_mean = column_means(k.data(), n, d);
  const auto km = kmeans2(stacked, 2 * n, d, q_mean, k_mean);

  PurityResult res;
  res.iterations = km.iterations;
  for (std::size_t i = 0; i < 2 * n; ++i) {
    if (km.assignment[i] == 0) {
      ++res.region_size;
      if (i < n) ++res.region_queries;
    }
  }
  if (res.region_size > 0) {
    res.purity = static_cast<double>(res.region_queries) / static_cast<double>(res.region_size);
  }
  res.swapped = squared_distance(km.center_a.data(), k_mean.data(), d) <
                squared_distance(km.center_a.data(), q_mean.data(), d);
  return res;
}

PurityResult purity(const AttentionRecord& record) { return purity(record.q, record.k); }

double attention_entropy(const Tensor& a) {
  if (a.rank() != 2 || a.rows() == 0) throw DimensionError("attention_entropy: expected a non-empty matrix");
  const std::size_t n = a.rows(), m = a.cols();
  auto v = a.data();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row_sum = 0.0, h = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double p = v[i * m + j];
      if (p < 0.0) throw ContractError("attention_entropy: negative probability");
      row_sum += p;
      if (p > 0.0) h -= p * std::log(p);
    }
    if (std::abs(row_sum - 1.0) > 1e-6) {
      throw ContractError("attention_entropy: row " + std::to_string(i) + " sums to " + std::to_string(row_sum));
    }
    total += h;
  }
  return total / static_cast<double>(n);
}

double attention_entropy(const AttentionRecord& record) { return attention_entropy(record.a); }

double head_averaged_entropy(std::span<const AttentionRecord> layer_records) {
  if (layer_records.empty()) throw ContractError("head_averaged_entropy: no records");
  double s = 0.0;
  for (const auto& r : layer_records) s += attention_entropy(r);
  return s / static_cast<double>(layer_records.size());
}

double region_distance(const AttentionRecord& record) {
  NoGradGuard guard;
  return centroid_distance(record).item();
}

std::vector<RecordDiagnostics> diagnose_records(std::span<const AttentionRecord> records, std::size_t sample) {
  std::vector<RecordDiagnostics> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    RecordDiagnostics d;
    d.sample = sample;
    d.branch = r.branch;
    d.layer = r.layer;
    d.head = r.head;
    auto p = purity(r);
    d.purity = p.purity;
    d.swapped = p.swapped;
    d.entropy = attention_entropy(r);
    const double ln_n = std::log(static_cast<double>(r.a.cols()));
    d.entropy_normalized = ln_n > 0.0 ? d.entropy / ln_n : 0.0;
    d.region_distance = region_distance(r);
    out.push_back(d);
  }
  return out;
}

namespace {

struct Accumulator {
  std::size_t records = 0, defined = 0, undefined = 0, swaps = 0, near_pure = 0;
  double entropy = 0.0, entropy_norm = 0.0, purity = 0.0, distance = 0.0;
  double min_purity = std::numeric_limits<double>::infinity();
  std::array<std::size_t, 10> hist{};

  void add(const RecordDiagnostics& d) {
    ++records;
    entropy += d.entropy;
    entropy_norm += d.entropy_normalized;
    distance += d.region_distance;
    if (d.swapped) ++swaps;
    if (d.purity) {
      ++defined;
      const double p = *d.purity;
      purity += p;
      min_purity = std::min(min_purity, p);
      if (p > 0.85 && p < 1.0) ++near_pure;
      hist[std::min<std::size_t>(9, static_cast<std::size_t>(p * 10.0))]++;
    } else {
      ++undefined;
    }
  }

  BranchSummary branch() const {
    BranchSummary s;
    s.records = records;
    if (records) {
      s.mean_entropy = entropy / static_cast<double>(records);
      s.mean_region_distance = distance / static_cast<double>(records);
    }
    if (defined) {
      s.mean_purity = purity / static_cast<double>(defined);
      s.min_purity = min_purity;
      s.near_pure_fraction = static_cast<double>(near_pure) / static_cast<double>(defined);
    }
    s.undefined_purity = undefined;
    s.swaps = swaps;
    s.purity_histogram = hist;
    return s;
  }
};

}  // namespace

DiagnosticsSummary summarize(std::span<const RecordDiagnostics> rows) {
  std::map<std::pair<int, std::size_t>, Accumulator> per_layer;
  Accumulator t, r, all;
  for (const auto& d : rows) {
    per_layer[{d.branch == BranchKind::Position ? 0 : 1, d.layer}].add(d);
    (d.branch == BranchKind::Position ? t : r).add(d);
    all.add(d);
  }
  DiagnosticsSummary s;
  for (const auto& [key, acc] : per_layer) {
    LayerSummary l;
    l.branch = key.first == 0 ? BranchKind::Position : BranchKind::Orientation;
    l.layer = key.second;
    l.records = acc.records;
    l.mean_entropy = acc.entropy / static_cast<double>(acc.records);
    l.mean_entropy_normalized = acc.entropy_norm / static_cast<double>(acc.records);
    l.mean_purity = acc.defined ? acc.purity / static_cast<double>(acc.defined) : 0.0;
    l.undefined_purity = acc.undefined;
    l.swaps = acc.swaps;
    l.mean_region_distance = acc.distance / static_cast<double>(acc.records);
    s.layers.push_back(l);
  }
  s.t = t.branch();
  s.r = r.branch();
  s.overall = all.branch();
  return s;
}

}  // namespace qkalign
