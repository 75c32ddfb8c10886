#include "embalign/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "embalign/errors.hpp"

namespace embalign {

std::vector<double> finite_diff_gradient_at(const ScalarFn& f, const Tensor& x, double h,
                                            std::span<const std::size_t> coords) {
  if (!(h > 0.0)) throw ContractError("finite difference step must be positive");
  Tensor probe = x.detach();
  auto values = probe.mutable_data();
  std::vector<double> out;
  out.reserve(coords.size());
  for (std::size_t i : coords) {
    if (i >= values.size()) throw ContractError("finite difference coordinate out of range");
    const Real saved = values[i];
    values[i] = static_cast<Real>(saved + h);
    const double up_step = static_cast<double>(values[i]) - saved;
    const double up = f(probe);
    values[i] = static_cast<Real>(saved - h);
    const double down_step = saved - static_cast<double>(values[i]);
    const double down = f(probe);
    values[i] = saved;
    // Divide by the step actually representable in Real.
    out.push_back((up - down) / (up_step + down_step));
  }
  return out;
}

Tensor finite_diff_gradient(const ScalarFn& f, const Tensor& x, double h) {
  std::vector<std::size_t> coords(x.numel());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  auto g = finite_diff_gradient_at(f, x, h, coords);
  return Tensor::from_data(x.shape(), std::vector<Real>(g.begin(), g.end()));
}

double relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  if (a.size() != b.size()) throw ContractError("relative_error: length mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nb), floor});
  if (std::sqrt(na) < floor && std::sqrt(nb) < floor) return 0.0;
  return std::sqrt(diff) / denom;
}

}  // namespace embalign
