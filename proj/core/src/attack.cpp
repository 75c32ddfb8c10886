#include "embalign/attack.hpp"

#include <algorithm>
#include <cmath>

#include "embalign/errors.hpp"
#include "embalign/ops.hpp"

namespace embalign {

std::string_view clamp_mode_name(ClampMode m) { return m == ClampMode::PerStep ? "per-step" : "final"; }

ClampMode parse_clamp_mode(std::string_view name) {
  if (name == "per-step") return ClampMode::PerStep;
  if (name == "final") return ClampMode::Final;
  throw ConfigError("unknown clamp mode '" + std::string(name) + "'");
}

void AttackConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ConfigError("attack config: learning rate must be non-negative");
  if (max_steps == 0) throw ConfigError("attack config: max steps must be at least 1");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("attack config: threshold must lie in (0, 1)");
  if (linf_budget && !(*linf_budget > 0.0)) throw ConfigError("attack config: linf budget must be positive");
}

void to_json(nlohmann::json& j, const AttackConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate},
                     {"max_steps", c.max_steps},
                     {"threshold", c.threshold},
                     {"clamp", std::string(clamp_mode_name(c.clamp))},
                     {"linf_budget", c.linf_budget ? nlohmann::json(*c.linf_budget) : nlohmann::json(nullptr)},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, AttackConfig& c) {
  AttackConfig d;
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.max_steps = j.value("max_steps", d.max_steps);
  c.threshold = j.value("threshold", d.threshold);
  c.clamp = parse_clamp_mode(j.value("clamp", std::string(clamp_mode_name(d.clamp))));
  if (j.contains("linf_budget") && !j.at("linf_budget").is_null()) {
    c.linf_budget = j.at("linf_budget").get<double>();
  } else {
    c.linf_budget.reset();
  }
  c.seed = j.value("seed", d.seed);
}

Tensor clamp_to_domain(const Tensor& image) {
  std::vector<Real> v(image.data().begin(), image.data().end());
  for (auto& x : v) x = std::clamp(x, 0.0, 1.0);
  return Tensor::from_data(image.shape(), std::move(v));
}

Tensor align_loss_tensor(const Tensor& image, const Embedding& target, const ModelParams& model) {
  Tensor emb = image_embedding(image, model);
  if (target.size() != emb.cols()) throw DimensionError("target embedding dimension does not match model");
  Tensor t = Tensor::from_data({1, target.size()}, std::vector<Real>(target.values().begin(), target.values().end()));
  Tensor diff = ops::sub(emb, t);
  return ops::scale(ops::sum(ops::mul(diff, diff)), 0.5);
}

double align_loss(const Tensor& image, const Embedding& target, const ModelParams& model) {
  return align_loss_tensor(image.detach(), target, model).item();
}

LossGradient align_loss_gradient(const Tensor& image, const Embedding& target, const ModelParams& model) {
  Tensor x = image.detach();
  x.set_requires_grad(true);
  Tensor emb = image_embedding(x, model);
  Tensor t = Tensor::from_data({1, target.size()}, std::vector<Real>(target.values().begin(), target.values().end()));
  Tensor diff = ops::sub(emb, t);
  Tensor loss = ops::scale(ops::sum(ops::mul(diff, diff)), 0.5);
  backward(loss);
  LossGradient out;
  out.loss = loss.item();
  double c = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) c += static_cast<double>(emb.data()[i]) * target[i];
  out.cosine = c;
  out.gradient.assign(x.grad().begin(), x.grad().end());
  return out;
}

AttackState AttackState::start(const Tensor& image, const TokenIds& target_tokens, const ModelParams& model) {
  check_image(image, model.config);
  AttackState s;
  s.original = image.detach();
  s.delta = Tensor::zeros(image.shape());
  s.target_tokens = target_tokens;
  s.target = encode_text(target_tokens, model);
  return s;
}

AttackState AttackState::start(const Tensor& image, const Embedding& target, const ModelParams& model) {
  check_image(image, model.config);
  if (target.size() != model.config.embed_dim) throw DimensionError("target embedding dimension does not match model");
  AttackState s;
  s.original = image.detach();
  s.delta = Tensor::zeros(image.shape());
  s.target = target;
  return s;
}

Tensor AttackState::current_image() const {
  std::vector<Real> v(original.numel());
  auto o = original.data(), d = delta.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = o[i] + d[i];
  return Tensor::from_data(original.shape(), std::move(v));
}

namespace {

double mean_abs(std::span<const Real> v) {
  double s = 0.0;
  for (Real x : v) s += std::abs(static_cast<double>(x));
  return s / static_cast<double>(v.size());
}

LossGradient evaluate(const AttackState& state, const ModelParams& model) {
  try {
    return align_loss_gradient(state.current_image(), state.target, model);
  } catch (const DegenerateEmbeddingError&) {
    throw NumericError("non-finite image embedding", state.step);
  }
}

TraceRecord record_of(const AttackState& state, const LossGradient& lg) {
  return TraceRecord{state.step, lg.loss, lg.cosine, mean_abs(state.delta.data())};
}

void apply_update(AttackState& state, const LossGradient& lg, const AttackConfig& cfg) {
  for (Real g : lg.gradient) {
    if (!std::isfinite(g)) throw NumericError("non-finite gradient", state.step);
  }
  auto d = state.delta.mutable_data();
  auto o = state.original.data();
  const Real lr = static_cast<Real>(cfg.learning_rate);
  const Real budget = cfg.linf_budget ? static_cast<Real>(*cfg.linf_budget) : 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    Real v = d[i] - lr * lg.gradient[i];
    if (cfg.linf_budget) v = std::clamp(v, -budget, budget);
    if (cfg.clamp == ClampMode::PerStep) v = std::clamp(o[i] + v, 0.0, 1.0) - o[i];
    d[i] = v;
  }
  ++state.step;
}

}  // namespace

TraceRecord align_step(AttackState& state, const AttackConfig& cfg, const ModelParams& model) {
  LossGradient lg = evaluate(state, model);
  TraceRecord rec = record_of(state, lg);
  apply_update(state, lg, cfg);
  return rec;
}

namespace {

AttackResult run_from(AttackState state, const ModelParams& model, const AttackConfig& cfg) {
  AttackResult result;
  LossGradient lg;
  while (true) {
    lg = evaluate(state, model);
    result.trace.push_back(record_of(state, lg));
    if (lg.cosine >= cfg.threshold || state.step >= cfg.max_steps) break;
    apply_update(state, lg, cfg);
  }
  Tensor final_image = state.current_image();
  if (cfg.clamp == ClampMode::Final) {
    Tensor clamped = clamp_to_domain(final_image);
    if (!std::equal(clamped.data().begin(), clamped.data().end(), final_image.data().begin())) {
      auto d = state.delta.mutable_data();
      auto o = state.original.data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = clamped.data()[i] - o[i];
      lg = align_loss_gradient(clamped, state.target, model);
      result.trace.push_back(record_of(state, lg));
    }
    final_image = clamped;
  } else {
    // Absorbs Real rounding in x0 + delta.
    final_image = clamp_to_domain(final_image);
  }
  result.image = final_image;
  result.steps = state.step;
  result.final_loss = lg.loss;
  result.final_cosine = lg.cosine;
  result.converged = lg.cosine >= cfg.threshold;
  return result;
}

}  // namespace

AttackResult run_alignment(const Tensor& image, const TokenIds& target_tokens, const ModelParams& model,
                           const AttackConfig& cfg) {
  cfg.validate();
  return run_from(AttackState::start(image, target_tokens, model), model, cfg);
}

AttackResult run_alignment(const Tensor& image, const Embedding& target, const ModelParams& model,
                           const AttackConfig& cfg) {
  cfg.validate();
  return run_from(AttackState::start(image, target, model), model, cfg);
}

}  // namespace embalign
