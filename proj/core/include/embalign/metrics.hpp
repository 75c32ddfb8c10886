#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "embalign/model.hpp"
#include "embalign/tensor.hpp"

namespace embalign {

inline constexpr std::array<double, 5> kPixelThresholds = {0.03, 0.05, 0.08, 0.1, 0.2};

struct DistortionStats {
  double l2 = 0.0;
  double linf = 0.0;
  double mean_abs = 0.0;
  // pixels_above[i] counts scalars with |diff| > kPixelThresholds[i].
  std::array<std::size_t, kPixelThresholds.size()> pixels_above{};
};

DistortionStats distortion(const Tensor& original, const Tensor& modified);

inline constexpr double kPsnrCap = 100.0;

double psnr(const Tensor& original, const Tensor& modified, double peak = 1.0, double cap = kPsnrCap);

struct SsimParams {
  std::size_t window = 8;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

// Mean SSIM over all window positions (stride 1) of the channel-mean grayscale images.
double ssim(const Tensor& original, const Tensor& modified, const SsimParams& params = {});

struct QualityStats {
  double psnr = 0.0;
  double ssim = 0.0;
};

QualityStats quality(const Tensor& original, const Tensor& modified);

struct SuccessReport {
  double rate = 0.0;
  std::vector<bool> success;
};

// An item succeeds when the image classifies as its target caption.
SuccessReport success_rate(std::span<const Tensor> images, std::span<const std::size_t> targets,
                           const ModelParams& model, std::span<const Embedding> captions);

struct Histogram {
  double lo = -1.0;
  double width = 0.01;
  std::vector<std::size_t> counts;  // 200 bins over [-1, 1]; 1.0 falls in the last bin
};

Histogram cosine_histogram(std::span<const double> values);

struct CosineReport {
  std::vector<double> text_pairs;      // every unordered pair of distinct texts
  std::vector<double> aligned_pairs;   // attacked image vs its target caption
  std::vector<double> original_pairs;  // clean image vs the same target caption
  Histogram text_hist;
  Histogram aligned_hist;
  Histogram original_hist;
  bool overlap = false;  // min(aligned_pairs) <= max(text_pairs)
};

CosineReport cosine_report(std::span<const Embedding> texts, std::span<const Embedding> aligned_images,
                           std::span<const Embedding> original_images, std::span<const std::size_t> targets);

// clamp(0.5 + factor * (modified - original)) elementwise.
Tensor amplify_diff(const Tensor& original, const Tensor& modified, double factor = 25.0);

}  // namespace embalign
