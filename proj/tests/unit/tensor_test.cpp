#include <algorithm>
#include <cmath>
#include <set>

#include "embalign/errors.hpp"
#include "embalign/ops.hpp"
#include "support.hpp"

namespace embalign {
namespace {

using test::random_tensor;

TEST(Tensor, ShapeAndLengthAgree) {
  EXPECT_THROW(Tensor::from_data({2, 3}, std::vector<Real>(5)), DimensionError);
  EXPECT_THROW(Tensor::zeros({2, 0}), DimensionError);
  const Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_FLOAT_EQ(t.at(4), 5.0f);
}

TEST(Tensor, ScalarHasRankZero) {
  const Tensor s = Tensor::scalar(2.5f);
  EXPECT_EQ(s.rank(), 0u);
  EXPECT_EQ(s.numel(), 1u);
  EXPECT_FLOAT_EQ(s.item(), 2.5f);
  EXPECT_THROW(s.rows(), DimensionError);
}

TEST(Tensor, GradAbsentUnlessRequested) {
  Tensor t = Tensor::zeros({2});
  EXPECT_FALSE(t.has_grad());
  EXPECT_THROW(t.grad(), ContractError);
  t.set_requires_grad(true);
  ASSERT_EQ(t.grad().size(), 2u);
}

TEST(Tensor, OpResultsAreNotWritable) {
  Tensor a = Tensor::full({2}, 1.0f, true);
  Tensor b = ops::scale(a, 2.0f);
  EXPECT_THROW(b.mutable_data(), ContractError);
}

TEST(Tensor, DetachCopiesValues) {
  Tensor a = Tensor::from_data({2}, {1, 2}, true);
  Tensor d = a.detach();
  d.mutable_data()[0] = 9.0f;
  EXPECT_FLOAT_EQ(a.at(0), 1.0f);
  EXPECT_FALSE(d.requires_grad());
}

TEST(Backward, SumOfSquares) {
  Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
  backward(ops::sum(ops::mul(x, x)));
  EXPECT_FLOAT_EQ(x.grad()[0], 2.0f);
  EXPECT_FLOAT_EQ(x.grad()[1], 4.0f);
  EXPECT_FLOAT_EQ(x.grad()[2], 6.0f);
}

TEST(Backward, HalfSquaredDistanceGivesResidual) {
  Tensor x = Tensor::from_data({1, 3}, {0.5f, -1.0f, 2.0f}, true);
  const Tensor t = Tensor::from_data({1, 3}, {1.0f, 1.0f, 1.0f});
  Tensor d = ops::sub(x, t);
  backward(ops::scale(ops::sum(ops::mul(d, d)), 0.5f));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_FLOAT_EQ(x.grad()[i], x.at(i) - t.at(i));
}

TEST(Backward, FanOutAccumulatesOnce) {
  Tensor x = Tensor::from_data({2}, {1, -1}, true);
  backward(ops::add(ops::sum(x), ops::sum(x)));
  EXPECT_FLOAT_EQ(x.grad()[0], 2.0f);
  EXPECT_FLOAT_EQ(x.grad()[1], 2.0f);
}

TEST(Backward, RepeatedCallsAccumulateOnLeaves) {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  Tensor loss = ops::sum(ops::scale(x, 3.0f));
  backward(loss);
  backward(loss);
  EXPECT_FLOAT_EQ(x.grad()[0], 6.0f);
  x.zero_grad();
  EXPECT_FLOAT_EQ(x.grad()[1], 0.0f);
}

TEST(Backward, RejectsNonScalar) {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  EXPECT_THROW(backward(ops::scale(x, 2.0f)), ContractError);
  EXPECT_THROW(backward(Tensor::scalar(1.0f)), ContractError);
}

TEST(Graph, ParentsPrecedeChildren) {
  Tensor a = random_tensor({3, 3}, 1);
  a.set_requires_grad(true);
  Tensor b = ops::relu(ops::matmul(a, a));
  Tensor loss = ops::sum(ops::add(b, a));
  const Graph g = Graph::trace(loss);
  const auto nodes = g.nodes();
  ASSERT_EQ(nodes.back(), loss.node().get());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (const auto& p : nodes[i]->parents) {
      if (!p->requires_grad) continue;
      auto it = std::find(nodes.begin(), nodes.end(), p.get());
      ASSERT_NE(it, nodes.end());
      EXPECT_LT(static_cast<std::size_t>(it - nodes.begin()), i);
    }
  }
  // Each node appears once even though `a` feeds three ops.
  std::set<detail::Node*> unique(nodes.begin(), nodes.end());
  EXPECT_EQ(unique.size(), nodes.size());
}

TEST(FiniteDiff, SquareAtThree) {
  const Tensor x = Tensor::from_data({1}, {3.0f});
  const Tensor g = finite_diff_gradient([](const Tensor& v) { return double(v.at(0)) * v.at(0); }, x, 1e-2);
  EXPECT_NEAR(g.at(0), 6.0, 1e-4);
}

TEST(FiniteDiff, SinGivesCos) {
  const Tensor x = random_tensor({6}, 4);
  const Tensor g = finite_diff_gradient(
      [](const Tensor& v) {
        double s = 0.0;
        for (Real e : v.data()) s += std::sin(static_cast<double>(e));
        return s;
      },
      x, 1e-3);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(g.at(i), std::cos(x.at(i)), 1e-4);
}

TEST(FiniteDiff, SelectedCoordinates) {
  const Tensor x = Tensor::from_data({3}, {1, 2, 3});
  const std::vector<std::size_t> coords{2, 0};
  const auto g = finite_diff_gradient_at([](const Tensor& v) { return 5.0 * v.at(0) + 7.0 * v.at(2); }, x, 1e-2, coords);
  ASSERT_EQ(g.size(), 2u);
  EXPECT_NEAR(g[0], 7.0, 1e-3);
  EXPECT_NEAR(g[1], 5.0, 1e-3);
}

TEST(RelativeError, ZeroForEqualVectors) {
  const std::vector<double> a{1, 2, 3};
  EXPECT_EQ(relative_error(a, a), 0.0);
  const std::vector<double> b{1, 2, 4};
  EXPECT_NEAR(relative_error(a, b), 1.0 / std::sqrt(21.0), 1e-12);
}

}  // namespace
}  // namespace embalign
