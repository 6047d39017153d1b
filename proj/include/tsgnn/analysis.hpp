#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace tsgnn {

// n graphs x d embedding dimensions, optional per-row class labels.
struct EmbeddingMatrix {
  Eigen::MatrixXd values;
  std::vector<std::size_t> labels;

  // n >= 2, finite entries, labels empty or one per row.
  void validate() const;
};

struct VarianceCurve {
  std::vector<double> eigenvalues;  // descending, clamped at 0
  std::vector<double> cumulative;   // V(1..d)
  bool degenerate = false;          // zero total variance; V is all ones
};

// Cumulative explained variance of the column-centred covariance spectrum.
VarianceCurve pca_explained_variance(const EmbeddingMatrix& embeddings);

// Interpolated dimension at which V first reaches `threshold`, using V(0) = 0:
// j + (threshold - V(j)) / (V(j+1) - V(j)). Throws ContractViolation on a
// non-monotone curve or one that does not end at 1.
double intrinsic_dimension(std::span<const double> cumulative, double threshold = 0.99);

// Mean |Pearson r| over all unordered column pairs. Pairs with a constant
// column count as 0.
double avg_abs_correlation(const EmbeddingMatrix& embeddings);

struct ScatterPoint {
  double pc1 = 0.0;
  double pc2 = 0.0;
  std::size_t label = 0;
};

// Centred rows projected on the top two principal axes, each axis signed so
// that its largest-magnitude loading is positive.
std::vector<ScatterPoint> export_scatter_2d(const EmbeddingMatrix& embeddings);

struct RunSummary {
  double mean = 0.0;
  double stddev = 0.0;  // sample (n - 1) estimator
};

inline constexpr std::size_t kSplitsPerSetting = 5;

// Requires exactly five values, one per split.
RunSummary aggregate_runs(std::span<const double> values);

struct AnalysisReport {
  double intrinsic_dimension = 0.0;
  std::vector<double> explained_variance;
  double avg_abs_correlation = 0.0;
  bool degenerate = false;
  std::optional<RunSummary> accuracy;
};

AnalysisReport analyze(const EmbeddingMatrix& embeddings);

void write_scatter_csv(const std::filesystem::path& path, std::span<const ScatterPoint> points);
void write_variance_curve_csv(const std::filesystem::path& path, std::span<const double> cumulative);
void write_correlation_trace_csv(const std::filesystem::path& path, std::span<const double> trace);

}  // namespace tsgnn
