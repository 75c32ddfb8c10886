#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "embalign/model.hpp"

namespace embalign {

struct ProjectionBasis {
  std::vector<double> mean;                     // length e
  std::vector<std::vector<double>> components;  // K rows of length e, orthonormal
  std::vector<double> eigenvalues;              // descending
  double total_variance = 0.0;

  std::size_t k() const { return components.size(); }
  std::size_t dim() const { return mean.size(); }
};

// Top-K eigenvectors of the sample covariance (divisor n - 1). Each component
// has its largest-magnitude entry positive.
ProjectionBasis fit_pca(std::span<const std::vector<double>> samples, std::size_t k = 6);
ProjectionBasis fit_pca(std::span<const Embedding> samples, std::size_t k = 6);

std::vector<double> project(std::span<const double> v, const ProjectionBasis& basis);
std::vector<double> project(const Embedding& e, const ProjectionBasis& basis);

double euclidean(std::span<const double> a, std::span<const double> b);

}  // namespace embalign
