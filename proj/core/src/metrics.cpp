#include "embalign/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "embalign/errors.hpp"

namespace embalign {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ContractError(std::string(op) + ": shapes differ, " + shape_string(a.shape()) + " vs " +
                        shape_string(b.shape()));
  }
}

std::vector<double> grayscale(const Tensor& image) {
  auto v = image.data();
  std::vector<double> g(v.size() / 3);
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = (static_cast<double>(v[3 * i]) + v[3 * i + 1] + v[3 * i + 2]) / 3.0;
  }
  return g;
}

}  // namespace

DistortionStats distortion(const Tensor& original, const Tensor& modified) {
  require_same_shape(original, modified, "distortion");
  DistortionStats s;
  auto a = original.data(), b = modified.data();
  double ss = 0.0, sa = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(static_cast<double>(b[i]) - a[i]);
    ss += d * d;
    sa += d;
    s.linf = std::max(s.linf, d);
    for (std::size_t t = 0; t < kPixelThresholds.size(); ++t) {
      if (d > kPixelThresholds[t]) ++s.pixels_above[t];
    }
  }
  s.l2 = std::sqrt(ss);
  s.mean_abs = a.empty() ? 0.0 : sa / static_cast<double>(a.size());
  return s;
}

double psnr(const Tensor& original, const Tensor& modified, double peak, double cap) {
  require_same_shape(original, modified, "psnr");
  auto a = original.data(), b = modified.data();
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(b[i]) - a[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse < peak * peak * std::pow(10.0, -cap / 10.0)) return cap;
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const Tensor& original, const Tensor& modified, const SsimParams& p) {
  require_same_shape(original, modified, "ssim");
  if (original.rank() != 3 || original.shape()[2] != 3) {
    throw ContractError("ssim: expected H x W x 3 images, got " + shape_string(original.shape()));
  }
  const std::size_t h = original.shape()[0], w = original.shape()[1], n = p.window;
  if (n == 0 || h < n || w < n) throw ContractError("ssim: image smaller than the window");
  const auto x = grayscale(original), y = grayscale(modified);
  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
  const double count = static_cast<double>(n * n);
  double total = 0.0;
  for (std::size_t r = 0; r + n <= h; ++r) {
    for (std::size_t c = 0; c + n <= w; ++c) {
      double mx = 0.0, my = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          mx += x[(r + i) * w + c + j];
          my += y[(r + i) * w + c + j];
        }
      }
      mx /= count;
      my /= count;
      double vx = 0.0, vy = 0.0, cxy = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double dx = x[(r + i) * w + c + j] - mx, dy = y[(r + i) * w + c + j] - my;
          vx += dx * dx;
          vy += dy * dy;
          cxy += dx * dy;
        }
      }
      vx /= count;
      vy /= count;
      cxy /= count;
      total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
  }
  return total / static_cast<double>((h - n + 1) * (w - n + 1));
}

QualityStats quality(const Tensor& original, const Tensor& modified) {
  return QualityStats{psnr(original, modified), ssim(original, modified)};
}

SuccessReport success_rate(std::span<const Tensor> images, std::span<const std::size_t> targets,
                           const ModelParams& model, std::span<const Embedding> captions) {
  if (images.size() != targets.size()) throw ContractError("success_rate: images and targets differ in count");
  SuccessReport r;
  if (images.empty()) return r;
  const auto embs = encode_images(images, model);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (targets[i] >= captions.size()) throw ContractError("success_rate: target outside caption set");
    const bool ok = argmax(zero_shot_classify(embs[i], captions, model.config.temperature)) == targets[i];
    r.success.push_back(ok);
    hits += ok ? 1 : 0;
  }
  r.rate = static_cast<double>(hits) / static_cast<double>(images.size());
  return r;
}

Histogram cosine_histogram(std::span<const double> values) {
  Histogram h;
  h.counts.assign(200, 0);
  for (double v : values) {
    const double c = std::clamp(v, -1.0, 1.0);
    auto bin = static_cast<std::size_t>(std::floor((c - h.lo) / h.width));
    h.counts[std::min(bin, h.counts.size() - 1)]++;
  }
  return h;
}

CosineReport cosine_report(std::span<const Embedding> texts, std::span<const Embedding> aligned_images,
                           std::span<const Embedding> original_images, std::span<const std::size_t> targets) {
  if (texts.size() < 2) throw ContractError("cosine_report: need at least two texts");
  if (aligned_images.size() != targets.size() || original_images.size() != targets.size()) {
    throw ContractError("cosine_report: image and target counts differ");
  }
  CosineReport r;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    for (std::size_t j = i + 1; j < texts.size(); ++j) r.text_pairs.push_back(std::clamp(dot(texts[i], texts[j]), -1.0, 1.0));
  }
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] >= texts.size()) throw ContractError("cosine_report: target outside text set");
    r.aligned_pairs.push_back(std::clamp(dot(aligned_images[i], texts[targets[i]]), -1.0, 1.0));
    r.original_pairs.push_back(std::clamp(dot(original_images[i], texts[targets[i]]), -1.0, 1.0));
  }
  r.text_hist = cosine_histogram(r.text_pairs);
  r.aligned_hist = cosine_histogram(r.aligned_pairs);
  r.original_hist = cosine_histogram(r.original_pairs);
  if (!r.aligned_pairs.empty()) {
    r.overlap = *std::min_element(r.aligned_pairs.begin(), r.aligned_pairs.end()) <=
                *std::max_element(r.text_pairs.begin(), r.text_pairs.end());
  }
  return r;
}

Tensor amplify_diff(const Tensor& original, const Tensor& modified, double factor) {
  require_same_shape(original, modified, "amplify_diff");
  auto a = original.data(), b = modified.data();
  std::vector<Real> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double v = 0.5 + factor * (static_cast<double>(b[i]) - a[i]);
    out[i] = static_cast<Real>(std::clamp(v, 0.0, 1.0));
  }
  return Tensor::from_data(original.shape(), std::move(out));
}

}  // namespace embalign
