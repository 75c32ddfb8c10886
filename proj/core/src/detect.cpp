#include "embalign/detect.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "embalign/errors.hpp"

namespace embalign {

void DetectConfig::validate() const {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("detect config: sigma must be positive");
  if (trials == 0) throw ConfigError("detect config: trials must be at least 1");
}

void to_json(nlohmann::json& j, const DetectConfig& c) {
  j = nlohmann::json{{"sigma", c.sigma}, {"trials", c.trials}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, DetectConfig& c) {
  DetectConfig d;
  c.sigma = j.value("sigma", d.sigma);
  c.trials = j.value("trials", d.trials);
  c.seed = j.value("seed", d.seed);
}

std::string_view verdict_name(Verdict v) { return v == Verdict::Modified ? "modified" : "unmodified"; }

Verdict majority_verdict(std::size_t agreement, std::size_t trials) {
  return 2 * agreement > trials ? Verdict::Unmodified : Verdict::Modified;
}

std::uint64_t image_seed(std::uint64_t seed, std::size_t index) { return seed ^ static_cast<std::uint64_t>(index); }

DetectionVerdict noise_probe(const Tensor& image, const ModelParams& model, std::span<const Embedding> captions,
                             const DetectConfig& cfg) {
  cfg.validate();
  if (captions.empty()) throw ContractError("noise_probe: empty caption set");
  DetectionVerdict out;
  out.base_label = predict_label(encode_image(image, model), captions);

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> noise(0.0, cfg.sigma);
  std::vector<Tensor> noisy;
  noisy.reserve(cfg.trials);
  auto src = image.data();
  for (std::size_t t = 0; t < cfg.trials; ++t) {
    std::vector<Real> v(src.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = static_cast<Real>(std::clamp(static_cast<double>(src[i]) + noise(rng), 0.0, 1.0));
    }
    noisy.push_back(Tensor::from_data(image.shape(), std::move(v)));
  }
  for (const auto& e : encode_images(noisy, model)) {
    const std::size_t label = predict_label(e, captions);
    out.trial_labels.push_back(label);
    if (label == out.base_label) ++out.agreement;
  }
  out.verdict = majority_verdict(out.agreement, cfg.trials);
  return out;
}

std::vector<SweepRow> detection_sweep(std::span<const Tensor> images, std::span<const bool> attacked,
                                      const ModelParams& model, std::span<const Embedding> captions,
                                      std::span<const double> sigmas, const DetectConfig& base) {
  if (images.size() != attacked.size()) throw ContractError("detection_sweep: images and labels differ in count");
  const auto n_attacked = static_cast<std::size_t>(std::count(attacked.begin(), attacked.end(), true));
  const std::size_t n_clean = images.size() - n_attacked;
  if (n_attacked == 0 || n_clean == 0) throw ContractError("detection_sweep: need both clean and attacked images");
  std::vector<SweepRow> rows;
  for (double sigma : sigmas) {
    DetectConfig cfg = base;
    cfg.sigma = sigma;
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < images.size(); ++i) {
      cfg.seed = image_seed(base.seed, i);
      const bool flagged = noise_probe(images[i], model, captions, cfg).verdict == Verdict::Modified;
      if (flagged && attacked[i]) ++tp;
      if (flagged && !attacked[i]) ++fp;
    }
    rows.push_back(SweepRow{sigma, static_cast<double>(tp) / static_cast<double>(n_attacked),
                            static_cast<double>(fp) / static_cast<double>(n_clean)});
  }
  return rows;
}

}  // namespace embalign
