#include <cmath>
#include <limits>

#include "embalign/attack.hpp"
#include "embalign/errors.hpp"
#include "support.hpp"

namespace embalign {
namespace {

using test::random_tensor;

const ModelParams& model() {
  static const ModelParams m = ModelParams::init(test::tiny_config(), 4);
  return m;
}

Tensor image(std::uint64_t seed) { return random_tensor({8, 8, 3}, seed, 0.1f, 0.9f); }

Embedding unit(std::vector<Real> v) { return normalize_embedding(v); }

TEST(ClampToDomain, Definition) {
  const Tensor x = Tensor::from_data({3}, {1.3f, -0.2f, 0.4f});
  const Tensor c = clamp_to_domain(x);
  EXPECT_EQ(c.at(0), 1.0f);
  EXPECT_EQ(c.at(1), 0.0f);
  EXPECT_EQ(c.at(2), 0.4f);
  const Tensor cc = clamp_to_domain(c);
  EXPECT_TRUE(std::equal(c.data().begin(), c.data().end(), cc.data().begin()));
  const Tensor in = image(1);
  const Tensor same = clamp_to_domain(in);
  EXPECT_TRUE(std::equal(in.data().begin(), in.data().end(), same.data().begin()));
}

TEST(AlignLoss, SelfTargetIsZero) {
  const Tensor x = image(2);
  EXPECT_NEAR(align_loss(x, encode_image(x, model()), model()), 0.0, 1e-6);
}

TEST(AlignLoss, UnitVectorIdentity) {
  // Orthogonal and antipodal targets against the image's own embedding.
  const Tensor x = image(3);
  const Embedding e = encode_image(x, model());
  std::vector<Real> neg(e.values().begin(), e.values().end());
  for (auto& v : neg) v = -v;
  EXPECT_NEAR(align_loss(x, unit(neg), model()), 2.0, 1e-5);
  std::vector<Real> orth(e.size(), 0.0f);
  orth[0] = e[1];
  orth[1] = -e[0];
  EXPECT_NEAR(align_loss(x, unit(orth), model()), 1.0, 1e-5);
}

TEST(AlignLoss, GradientMatchesFiniteDifferences) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Tensor x = image(10 + s);
    const Embedding target = encode_text(TokenIds{2 + s, 7}, model());
    const auto lg = align_loss_gradient(x, target, model());
    std::mt19937_64 rng(s);
    std::vector<std::size_t> coords(10);
    for (auto& c : coords) c = rng() % x.numel();
    const auto numeric =
        finite_diff_gradient_at([&](const Tensor& v) { return align_loss(v, target, model()); }, x, 1e-3, coords);
    std::vector<double> analytic;
    for (auto c : coords) analytic.push_back(lg.gradient[c]);
    EXPECT_LT(relative_error(analytic, numeric), 1e-2);
  }
}

TEST(AlignLoss, GradientNonVanishingAtMismatch) {
  const Tensor x = image(5);
  const Embedding target = encode_text(TokenIds{9, 3}, model());
  const auto lg = align_loss_gradient(x, target, model());
  ASSERT_LT(lg.cosine, 0.99);
  double n = 0.0;
  for (Real g : lg.gradient) n += double(g) * g;
  EXPECT_GT(n, 0.0);
}

TEST(AttackConfig, Validation) {
  AttackConfig c;
  EXPECT_NO_THROW(c.validate());
  c.threshold = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = AttackConfig{};
  c.max_steps = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = AttackConfig{};
  c.linf_budget = -0.1;
  EXPECT_THROW(c.validate(), ConfigError);
  AttackConfig d;
  d.clamp = ClampMode::Final;
  d.linf_budget = 0.05;
  const AttackConfig back = nlohmann::json(d).get<AttackConfig>();
  EXPECT_EQ(back.clamp, ClampMode::Final);
  EXPECT_EQ(back.linf_budget, 0.05);
  EXPECT_THROW(parse_clamp_mode("sometimes"), ConfigError);
}

TEST(AlignStep, ZeroLearningRateIsNullStep) {
  AttackState s = AttackState::start(image(6), TokenIds{4, 5}, model());
  AttackConfig c;
  c.learning_rate = 0.0;
  const auto r0 = align_step(s, c, model());
  const auto r1 = align_step(s, c, model());
  EXPECT_EQ(r0.loss, r1.loss);
  for (Real d : s.delta.data()) EXPECT_EQ(d, 0.0f);
  EXPECT_EQ(r1.step, 1u);
}

TEST(AlignStep, SmallStepDecreasesLoss) {
  AttackConfig c;
  c.learning_rate = 1e-3;
  for (std::uint64_t k = 0; k < 20; ++k) {
    AttackState s = AttackState::start(image(100 + k), TokenIds{2 + k % 10, 3 + k % 7}, model());
    const auto before = align_step(s, c, model());
    const double after = align_loss(s.current_image(), s.target, model());
    EXPECT_LT(after, before.loss) << "pair " << k;
  }
}

TEST(AlignStep, PerStepClampKeepsDomain) {
  AttackState s = AttackState::start(Tensor::full({8, 8, 3}, 0.999f), TokenIds{4, 5}, model());
  AttackConfig c;
  c.learning_rate = 50.0;
  for (int i = 0; i < 3; ++i) align_step(s, c, model());
  const Tensor img = s.current_image();
  for (Real v : img.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(AlignStep, LinfBudgetBoundsDelta) {
  AttackState s = AttackState::start(image(8), TokenIds{4, 5}, model());
  AttackConfig c;
  c.learning_rate = 10.0;
  c.linf_budget = 0.01;
  for (int i = 0; i < 3; ++i) align_step(s, c, model());
  for (Real d : s.delta.data()) EXPECT_LE(std::abs(d), 0.01f + 1e-7f);
}

TEST(AlignStep, NonFiniteGradientCarriesStep) {
  Tensor bad = image(9);
  bad.mutable_data()[0] = std::numeric_limits<Real>::quiet_NaN();
  AttackState s = AttackState::start(image(9), TokenIds{4, 5}, model());
  s.original = bad;
  s.step = 7;
  try {
    align_step(s, AttackConfig{}, model());
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_EQ(e.step(), 7u);
  }
}

class Alignment : public ::testing::TestWithParam<ClampMode> {};

TEST_P(Alignment, ConvergesWithConsistentTrace) {
  AttackConfig c;
  c.learning_rate = 0.5;
  c.max_steps = 4000;
  c.threshold = 0.99;
  c.clamp = GetParam();
  for (std::uint64_t k = 0; k < 3; ++k) {
    const Tensor x = image(200 + k);
    // Another image's embedding is reachable inside the pixel domain.
    const Embedding target = encode_image(image(300 + k), model());
    const auto r = run_alignment(x, target, model(), c);
    EXPECT_EQ(r.converged, r.final_cosine >= c.threshold);
    // A final clip can pull an aligned iterate back under the threshold.
    if (GetParam() == ClampMode::PerStep) ASSERT_TRUE(r.converged) << "pair " << k << " cos " << r.final_cosine;
    const auto& first = r.trace.front();
    const auto& last = r.trace.back();
    EXPECT_GE(last.cosine, first.cosine);
    EXPECT_LT(last.loss, first.loss);
    EXPECT_EQ(first.step, 0u);
    EXPECT_EQ(first.mean_abs_diff, 0.0);
    EXPECT_EQ(last.cosine, r.final_cosine);
    for (const auto& t : r.trace) EXPECT_NEAR(t.loss, 1.0 - t.cosine, 1e-5);
    for (Real v : r.image.data()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
    // The last record describes the returned image.
    EXPECT_NEAR(align_loss(r.image, target, model()), r.final_loss, 1e-5);
  }
}

INSTANTIATE_TEST_SUITE_P(ClampModes, Alignment, ::testing::Values(ClampMode::PerStep, ClampMode::Final));

TEST(RunAlignment, NonConvergenceIsReported) {
  AttackConfig c;
  c.learning_rate = 1e-4;
  c.max_steps = 3;
  const auto r = run_alignment(image(11), TokenIds{5, 6}, model(), c);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.steps, 3u);
  EXPECT_EQ(r.trace.size(), 4u);
}

TEST(RunAlignment, OwnEmbeddingTargetNeedsNoSteps) {
  // A target equal to the image's embedding is already aligned.
  AttackConfig c;
  const Tensor x = image(12);
  AttackState s = AttackState::start(x, TokenIds{4}, model());
  s.target = encode_image(x, model());
  const auto r = align_step(s, c, model());
  EXPECT_NEAR(r.cosine, 1.0, 1e-5);
}

TEST(RunAlignment, Deterministic) {
  AttackConfig c;
  c.learning_rate = 0.5;
  c.max_steps = 50;
  const auto a = run_alignment(image(13), TokenIds{4, 9}, model(), c);
  const auto b = run_alignment(image(13), TokenIds{4, 9}, model(), c);
  EXPECT_TRUE(std::equal(a.image.data().begin(), a.image.data().end(), b.image.data().begin()));
  EXPECT_EQ(a.steps, b.steps);
}

}  // namespace
}  // namespace embalign
