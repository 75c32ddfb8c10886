#pragma once

#include <gtest/gtest.h>

#include <functional>
#include <random>
#include <vector>

#include "embalign/corpus.hpp"
#include "embalign/gradcheck.hpp"
#include "embalign/model.hpp"
#include "embalign/tensor.hpp"

namespace embalign::test {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, Real lo = -1.0f, Real hi = 1.0f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Real> u(lo, hi);
  std::vector<Real> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from_data(std::move(shape), std::move(v));
}

inline std::vector<double> as_double(std::span<const Real> v) { return {v.begin(), v.end()}; }

// Builds a scalar loss from a leaf; compares backward against central differences.
using LossBuilder = std::function<Tensor(const Tensor&)>;

inline double gradient_error(const LossBuilder& build, const Tensor& point, double h = 1e-3) {
  Tensor x = point.detach();
  x.set_requires_grad(true);
  backward(build(x));
  const auto analytic = as_double(x.grad());
  const Tensor numeric = finite_diff_gradient([&](const Tensor& v) { return static_cast<double>(build(v).item()); },
                                              point.detach(), h);
  return relative_error(analytic, as_double(numeric.data()));
}

// Small configuration that keeps model tests fast.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.vision_dim = 8;
  c.text_dim = 8;
  c.embed_dim = 6;
  c.heads = 2;
  c.head_dim = 4;
  c.vision_depth = 2;
  c.text_depth = 1;
  c.mlp_dim = 12;
  c.vocab_size = 20;
  c.max_text_len = 4;
  return c;
}

inline Tensor random_image(std::size_t size, std::uint64_t seed) { return random_tensor({size, size, 3}, seed, 0.0f, 1.0f); }

}  // namespace embalign::test
