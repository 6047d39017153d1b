#include "tsgnn/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "tsgnn/error.hpp"

namespace tsgnn {

void EmbeddingMatrix::validate() const {
  if (values.rows() < 2) throw DomainError("embeddings: need at least 2 rows");
  if (!values.allFinite()) throw DomainError("embeddings: non-finite entry");
  if (!labels.empty() && labels.size() != static_cast<std::size_t>(values.rows())) {
    throw ContractViolation("embeddings: label count does not match row count");
  }
}

namespace {

struct Spectrum {
  Eigen::VectorXd eigenvalues;   // descending
  Eigen::MatrixXd eigenvectors;  // columns in the same order
  Eigen::MatrixXd centered;
};

Spectrum covariance_spectrum(const EmbeddingMatrix& e) {
  e.validate();
  Spectrum s;
  s.centered = e.values.rowwise() - e.values.colwise().mean();
  const double n = static_cast<double>(e.values.rows());
  const Eigen::MatrixXd cov = (s.centered.transpose() * s.centered) / (n - 1.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw DomainError("pca: eigendecomposition failed");
  const Eigen::Index d = cov.rows();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(d));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const Eigen::VectorXd& ev = solver.eigenvalues();
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return ev(a) > ev(b); });
  s.eigenvalues.resize(d);
  s.eigenvectors.resize(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    s.eigenvalues(i) = std::max(0.0, ev(order[static_cast<std::size_t>(i)]));
    s.eigenvectors.col(i) = solver.eigenvectors().col(order[static_cast<std::size_t>(i)]);
  }
  return s;
}

}  // namespace

VarianceCurve pca_explained_variance(const EmbeddingMatrix& embeddings) {
  const Spectrum s = covariance_spectrum(embeddings);
  VarianceCurve curve;
  curve.eigenvalues.assign(s.eigenvalues.data(), s.eigenvalues.data() + s.eigenvalues.size());
  const double total = s.eigenvalues.sum();
  const std::size_t d = curve.eigenvalues.size();
  if (!(total > 0.0)) {
    curve.degenerate = true;
    curve.cumulative.assign(d, 1.0);
    return curve;
  }
  double running = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    running += curve.eigenvalues[i];
    curve.cumulative.push_back(running / total);
  }
  curve.cumulative.back() = 1.0;
  return curve;
}

double intrinsic_dimension(std::span<const double> v, double threshold) {
  if (v.empty()) throw ContractViolation("intrinsic_dimension: empty variance curve");
  double prev = 0.0;
  for (double x : v) {
    if (x < prev - 1e-12) throw ContractViolation("intrinsic_dimension: variance curve is not monotone");
    prev = x;
  }
  if (std::abs(v.back() - 1.0) > 1e-9) throw ContractViolation("intrinsic_dimension: V(d) must equal 1");
  // First i (1-based) with V(i) >= threshold; then j = i - 1 has V(j) < threshold.
  std::size_t i = 1;
  while (v[i - 1] < threshold) ++i;
  const std::size_t j = i - 1;
  const double vj = j == 0 ? 0.0 : v[j - 1];
  const double vj1 = v[j];
  return static_cast<double>(j) + (threshold - vj) / (vj1 - vj);
}

double avg_abs_correlation(const EmbeddingMatrix& embeddings) {
  embeddings.validate();
  const Eigen::MatrixXd& x = embeddings.values;
  const Eigen::Index d = x.cols();
  if (d < 2) throw DomainError("avg_abs_correlation: need at least 2 columns");
  const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
  Eigen::VectorXd norms(d);
  std::vector<bool> constant(static_cast<std::size_t>(d));
  for (Eigen::Index c = 0; c < d; ++c) {
    const double lo = x.col(c).minCoeff(), hi = x.col(c).maxCoeff();
    constant[static_cast<std::size_t>(c)] = hi - lo <= 1e-12 * std::max(1.0, std::max(std::abs(lo), std::abs(hi)));
    norms(c) = centered.col(c).norm();
  }
  double total = 0.0;
  for (Eigen::Index a = 0; a < d; ++a) {
    for (Eigen::Index b = a + 1; b < d; ++b) {
      if (constant[static_cast<std::size_t>(a)] || constant[static_cast<std::size_t>(b)]) continue;
      const double r = centered.col(a).dot(centered.col(b)) / (norms(a) * norms(b));
      total += std::min(1.0, std::abs(r));
    }
  }
  const double pairs = static_cast<double>(d) * static_cast<double>(d - 1) / 2.0;
  return total / pairs;
}

std::vector<ScatterPoint> export_scatter_2d(const EmbeddingMatrix& embeddings) {
  if (embeddings.values.cols() < 2) throw DomainError("export_scatter_2d: need at least 2 dimensions");
  const Spectrum s = covariance_spectrum(embeddings);
  Eigen::MatrixXd axes = s.eigenvectors.leftCols(2);
  for (Eigen::Index c = 0; c < 2; ++c) {
    Eigen::Index best = 0;
    for (Eigen::Index r = 1; r < axes.rows(); ++r)
      if (std::abs(axes(r, c)) > std::abs(axes(best, c))) best = r;
    if (axes(best, c) < 0.0) axes.col(c) *= -1.0;
  }
  const Eigen::MatrixXd projected = s.centered * axes;
  std::vector<ScatterPoint> out(static_cast<std::size_t>(projected.rows()));
  for (Eigen::Index i = 0; i < projected.rows(); ++i) {
    auto& p = out[static_cast<std::size_t>(i)];
    p.pc1 = projected(i, 0);
    p.pc2 = projected(i, 1);
    p.label = embeddings.labels.empty() ? 0 : embeddings.labels[static_cast<std::size_t>(i)];
  }
  return out;
}

RunSummary aggregate_runs(std::span<const double> values) {
  if (values.size() != kSplitsPerSetting) {
    throw ContractViolation("aggregate_runs: expected " + std::to_string(kSplitsPerSetting) + " results, got " +
                            std::to_string(values.size()));
  }
  RunSummary s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return s;
}

AnalysisReport analyze(const EmbeddingMatrix& embeddings) {
  AnalysisReport r;
  const VarianceCurve curve = pca_explained_variance(embeddings);
  r.explained_variance = curve.cumulative;
  r.degenerate = curve.degenerate;
  r.intrinsic_dimension = intrinsic_dimension(curve.cumulative);
  r.avg_abs_correlation = embeddings.values.cols() >= 2 ? avg_abs_correlation(embeddings) : 0.0;
  return r;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path, const char* header) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  out << header << '\n';
  return out;
}

}  // namespace

void write_scatter_csv(const std::filesystem::path& path, std::span<const ScatterPoint> points) {
  auto out = open_csv(path, "pc1,pc2,label");
  for (const auto& p : points) out << p.pc1 << ',' << p.pc2 << ',' << p.label << '\n';
}

void write_variance_curve_csv(const std::filesystem::path& path, std::span<const double> cumulative) {
  auto out = open_csv(path, "i,V");
  for (std::size_t i = 0; i < cumulative.size(); ++i) out << i + 1 << ',' << cumulative[i] << '\n';
}

void write_correlation_trace_csv(const std::filesystem::path& path, std::span<const double> trace) {
  auto out = open_csv(path, "epoch,avg_abs_corr");
  for (std::size_t e = 0; e < trace.size(); ++e) out << e << ',' << trace[e] << '\n';
}

}  // namespace tsgnn
