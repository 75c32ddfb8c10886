#include "embalign/pca.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "embalign/errors.hpp"

namespace embalign {

ProjectionBasis fit_pca(std::span<const std::vector<double>> samples, std::size_t k) {
  if (samples.empty()) throw ContractError("fit_pca: no samples");
  const std::size_t e = samples.front().size();
  if (k == 0 || k > e) {
    throw ContractError("fit_pca: K=" + std::to_string(k) + " must lie in [1, " + std::to_string(e) + "]");
  }
  if (samples.size() < k + 1) {
    throw ContractError("fit_pca: need at least " + std::to_string(k + 1) + " samples, got " +
                        std::to_string(samples.size()));
  }
  const auto n = static_cast<Eigen::Index>(samples.size());
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(e));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    if (s.size() != e) throw DimensionError("fit_pca: samples differ in dimension");
    for (std::size_t j = 0; j < e; ++j) x(i, static_cast<Eigen::Index>(j)) = s[j];
  }
  const Eigen::VectorXd mean = x.colwise().mean();
  x.rowwise() -= mean.transpose();
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("fit_pca: eigendecomposition failed", 0);

  ProjectionBasis b;
  b.mean.assign(mean.data(), mean.data() + e);
  b.total_variance = cov.trace();
  // Eigen returns ascending eigenvalues.
  for (std::size_t c = 0; c < k; ++c) {
    const Eigen::Index col = static_cast<Eigen::Index>(e - 1 - c);
    Eigen::VectorXd v = solver.eigenvectors().col(col);
    Eigen::Index big = 0;
    v.cwiseAbs().maxCoeff(&big);
    if (v(big) < 0) v = -v;
    b.components.emplace_back(v.data(), v.data() + e);
    b.eigenvalues.push_back(solver.eigenvalues()(col));
  }
  return b;
}

ProjectionBasis fit_pca(std::span<const Embedding> samples, std::size_t k) {
  std::vector<std::vector<double>> rows;
  rows.reserve(samples.size());
  for (const auto& s : samples) rows.emplace_back(s.values().begin(), s.values().end());
  return fit_pca(rows, k);
}

std::vector<double> project(std::span<const double> v, const ProjectionBasis& basis) {
  if (v.size() != basis.dim()) {
    throw DimensionError("project: vector has " + std::to_string(v.size()) + " entries, basis expects " +
                         std::to_string(basis.dim()));
  }
  std::vector<double> out(basis.k(), 0.0);
  for (std::size_t c = 0; c < basis.k(); ++c) {
    for (std::size_t j = 0; j < v.size(); ++j) out[c] += basis.components[c][j] * (v[j] - basis.mean[j]);
  }
  return out;
}

std::vector<double> project(const Embedding& e, const ProjectionBasis& basis) {
  std::vector<double> v(e.values().begin(), e.values().end());
  return project(v, basis);
}

double euclidean(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("euclidean: lengths differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace embalign
