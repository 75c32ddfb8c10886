#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "embalign/tensor.hpp"

namespace embalign {

using ScalarFn = std::function<double(const Tensor&)>;

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
Tensor finite_diff_gradient(const ScalarFn& f, const Tensor& x, double h);

// Same, restricted to the listed flat coordinates.
std::vector<double> finite_diff_gradient_at(const ScalarFn& f, const Tensor& x, double h,
                                            std::span<const std::size_t> coords);

// ||a - b|| / max(||a||, ||b||, floor); 0 when both are below floor.
double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-12);

}  // namespace embalign
