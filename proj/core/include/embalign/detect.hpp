#pragma once

#include <cstddef>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <span>
#include <string_view>
#include <vector>

#include "embalign/model.hpp"
#include "embalign/tensor.hpp"

namespace embalign {

struct DetectConfig {
  double sigma = 0.03;
  std::size_t trials = 11;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const DetectConfig& c);
void from_json(const nlohmann::json& j, DetectConfig& c);

enum class Verdict { Unmodified, Modified };
std::string_view verdict_name(Verdict v);

struct DetectionVerdict {
  Verdict verdict = Verdict::Unmodified;
  std::size_t agreement = 0;  // trials whose label equals base_label
  std::size_t base_label = 0;
  std::vector<std::size_t> trial_labels;
};

// Unmodified iff more than half of the noisy copies keep the clean label.
Verdict majority_verdict(std::size_t agreement, std::size_t trials);

DetectionVerdict noise_probe(const Tensor& image, const ModelParams& model, std::span<const Embedding> captions,
                             const DetectConfig& cfg);

// Seed used for the image at `index` in a batch.
std::uint64_t image_seed(std::uint64_t seed, std::size_t index);

struct SweepRow {
  double sigma = 0.0;
  double tpr = 0.0;  // attacked images judged modified
  double fpr = 0.0;  // clean images judged modified
};

// `attacked[i]` is the ground-truth provenance of images[i].
std::vector<SweepRow> detection_sweep(std::span<const Tensor> images, std::span<const bool> attacked,
                                      const ModelParams& model, std::span<const Embedding> captions,
                                      std::span<const double> sigmas, const DetectConfig& base);

}  // namespace embalign
