#pragma once

#include <cstddef>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <optional>
#include <string_view>
#include <vector>

#include "embalign/model.hpp"
#include "embalign/tensor.hpp"

namespace embalign {

enum class ClampMode { PerStep, Final };

std::string_view clamp_mode_name(ClampMode m);
ClampMode parse_clamp_mode(std::string_view name);

struct AttackConfig {
  double learning_rate = 0.02;
  std::size_t max_steps = 5000;
  // Stop once cosine(f_I(x), target) reaches this value.
  double threshold = 0.995;
  ClampMode clamp = ClampMode::PerStep;
  // Optional cap on |delta| per scalar.
  std::optional<double> linf_budget;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const AttackConfig& c);
void from_json(const nlohmann::json& j, AttackConfig& c);

struct AttackState {
  Tensor original;  // x0, S x S x 3
  Tensor delta;     // same shape; starts at zero
  TokenIds target_tokens;
  Embedding target;  // f_T(target_tokens), computed once
  std::size_t step = 0;

  static AttackState start(const Tensor& image, const TokenIds& target_tokens, const ModelParams& model);
  // Any unit embedding in the shared space; target_tokens stays empty.
  static AttackState start(const Tensor& image, const Embedding& target, const ModelParams& model);
  Tensor current_image() const;
};

struct TraceRecord {
  std::size_t step = 0;  // number of updates applied before this evaluation
  double loss = 0.0;
  double cosine = 0.0;
  double mean_abs_diff = 0.0;  // mean |x - x0| over all scalars
};

struct AttackResult {
  Tensor image;
  bool converged = false;
  std::size_t steps = 0;
  double final_loss = 0.0;
  double final_cosine = 0.0;
  // Record k describes the image after k updates; the last record is the returned image.
  std::vector<TraceRecord> trace;
};

// Elementwise clip to [0, 1].
Tensor clamp_to_domain(const Tensor& image);

// 1/2 ||f_I(image) - target||^2 as a differentiable scalar.
Tensor align_loss_tensor(const Tensor& image, const Embedding& target, const ModelParams& model);
double align_loss(const Tensor& image, const Embedding& target, const ModelParams& model);

// Gradient of align_loss w.r.t. the image pixels, plus loss and cosine at that image.
struct LossGradient {
  double loss = 0.0;
  double cosine = 0.0;
  std::vector<Real> gradient;
};
LossGradient align_loss_gradient(const Tensor& image, const Embedding& target, const ModelParams& model);

// Evaluates the current state, then applies one gradient-descent update.
// Returns the record of the state before the update. Throws NumericError on
// a non-finite gradient or embedding.
TraceRecord align_step(AttackState& state, const AttackConfig& cfg, const ModelParams& model);

// Iterates updates from delta = 0 until cosine >= threshold or max_steps
// updates. Non-convergence is reported through the result, not thrown.
AttackResult run_alignment(const Tensor& image, const TokenIds& target_tokens, const ModelParams& model,
                           const AttackConfig& cfg);
AttackResult run_alignment(const Tensor& image, const Embedding& target, const ModelParams& model,
                           const AttackConfig& cfg);

}  // namespace embalign
