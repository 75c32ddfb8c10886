#include <benchmark/benchmark.h>

#include <random>

#include "embalign/attack.hpp"
#include "embalign/corpus.hpp"
#include "embalign/detect.hpp"
#include "embalign/metrics.hpp"
#include "embalign/ops.hpp"

namespace {

using namespace embalign;

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Real> u(0.0f, 1.0f);
  std::vector<Real> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from_data(std::move(shape), std::move(v));
}

const ModelParams& model() {
  static const ModelParams m = ModelParams::init(ModelConfig{}, 7);
  return m;
}

const Tensor& image() {
  static const Tensor img = render_shape("circle", {0.85f, 0.15f, 0.12f}, 32, 1);
  return img;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_tensor({n, n}, 1), b = random_tensor({n, n}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(ops::matmul(a, b).data().data());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Tensor a = random_tensor({n, n}, 1), b = random_tensor({n, n}, 2);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  for (auto _ : state) {
    backward(ops::sum(ops::matmul(a, b)));
    benchmark::DoNotOptimize(a.grad().data());
  }
}
BENCHMARK(BM_MatmulBackward)->Arg(64);

void BM_EncodeImage(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(encode_image(image(), model()).values().data());
}
BENCHMARK(BM_EncodeImage);

void BM_EncodeImageBatch(benchmark::State& state) {
  std::vector<Tensor> batch(static_cast<std::size_t>(state.range(0)), image());
  for (auto _ : state) benchmark::DoNotOptimize(encode_images(batch, model()).size());
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncodeImageBatch)->Arg(16)->Arg(64);

void BM_EncodeText(benchmark::State& state) {
  const TokenIds tokens = tokenize("a blue square", Vocabulary::standard(), model().config.max_text_len);
  for (auto _ : state) benchmark::DoNotOptimize(encode_text(tokens, model()).values().data());
}
BENCHMARK(BM_EncodeText);

void BM_AlignLossGradient(benchmark::State& state) {
  const TokenIds tokens = tokenize("a blue square", Vocabulary::standard(), model().config.max_text_len);
  const Embedding target = encode_text(tokens, model());
  for (auto _ : state) benchmark::DoNotOptimize(align_loss_gradient(image(), target, model()).loss);
}
BENCHMARK(BM_AlignLossGradient);

void BM_Ssim(benchmark::State& state) {
  const Tensor a = random_tensor({32, 32, 3}, 3), b = random_tensor({32, 32, 3}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(ssim(a, b));
}
BENCHMARK(BM_Ssim);

void BM_NoiseProbe(benchmark::State& state) {
  const Vocabulary vocab = Vocabulary::standard();
  std::vector<TokenIds> tokens;
  for (const auto& c : class_captions(CorpusConfig{})) tokens.push_back(tokenize(c, vocab, model().config.max_text_len));
  const auto captions = encode_texts(tokens, model());
  DetectConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(noise_probe(image(), model(), captions, cfg).agreement);
}
BENCHMARK(BM_NoiseProbe);

}  // namespace

BENCHMARK_MAIN();
