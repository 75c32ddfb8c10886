#include "embalign/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "embalign/errors.hpp"
#include "embalign/ops.hpp"

namespace embalign {

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train config: epochs must be positive");
  if (batch_size == 0) throw ConfigError("train config: batch size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("train config: learning rate must be positive");
  if (!(temperature > 0.0)) throw ConfigError("train config: temperature must be positive");
  if (pixel_jitter < 0.0) throw ConfigError("train config: pixel jitter must be non-negative");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"temperature", c.temperature},
                     {"seed", c.seed},
                     {"pixel_jitter", c.pixel_jitter},
                     {"position_jitter", c.position_jitter}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.temperature = j.value("temperature", d.temperature);
  c.seed = j.value("seed", d.seed);
  c.pixel_jitter = j.value("pixel_jitter", d.pixel_jitter);
  c.position_jitter = j.value("position_jitter", d.position_jitter);
}

Tensor contrastive_loss(const Tensor& image_emb, const Tensor& text_emb, double temperature) {
  const std::size_t b = image_emb.rows();
  if (text_emb.rows() != b) throw DimensionError("contrastive_loss: batch sizes differ");
  std::vector<std::size_t> targets(b);
  std::iota(targets.begin(), targets.end(), std::size_t{0});
  Tensor logits = ops::scale(ops::matmul(image_emb, ops::transpose(text_emb)), static_cast<Real>(1.0 / temperature));
  Tensor i2t = ops::cross_entropy_rows(logits, targets);
  Tensor t2i = ops::cross_entropy_rows(ops::transpose(logits), targets);
  return ops::scale(ops::add(i2t, t2i), 0.5);
}

namespace {

Tensor augment(const Tensor& image, const TrainConfig& cfg, std::mt19937_64& rng) {
  const std::size_t s = image.shape()[0];
  const int j = static_cast<int>(cfg.position_jitter);
  std::uniform_int_distribution<int> shift(-j, j);
  const int dx = shift(rng), dy = shift(rng);
  std::uniform_real_distribution<double> noise(-cfg.pixel_jitter, cfg.pixel_jitter);
  auto src = image.data();
  std::vector<Real> out(src.size());
  const int si = static_cast<int>(s);
  for (int y = 0; y < si; ++y) {
    const int sy = std::clamp(y - dy, 0, si - 1);
    for (int x = 0; x < si; ++x) {
      const int sx = std::clamp(x - dx, 0, si - 1);
      for (int ch = 0; ch < 3; ++ch) {
        double v = src[(sy * s + sx) * 3 + ch];
        if (cfg.pixel_jitter > 0.0) v += noise(rng);
        out[(y * s + x) * 3 + ch] = static_cast<Real>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return Tensor::from_data(image.shape(), std::move(out));
}

// Batches with distinct classes: round-robin over per-class shuffled lists.
std::vector<std::vector<std::size_t>> make_batches(std::span<const CorpusItem> items,
                                                   std::span<const std::size_t> train_idx,
                                                   std::size_t batch, std::mt19937_64& rng) {
  std::size_t classes = 0;
  for (auto i : train_idx) classes = std::max(classes, items[i].class_id + 1);
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (auto i : train_idx) by_class[items[i].class_id].push_back(i);
  std::size_t rounds = 0;
  for (auto& v : by_class) {
    std::shuffle(v.begin(), v.end(), rng);
    rounds = std::max(rounds, v.size());
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t r = 0; r < rounds; ++r) {
    std::vector<std::size_t> round;
    for (auto& v : by_class) {
      if (r < v.size()) round.push_back(v[r]);
    }
    std::shuffle(round.begin(), round.end(), rng);
    for (std::size_t k = 0; k < round.size(); k += batch) {
      batches.emplace_back(round.begin() + k, round.begin() + std::min(round.size(), k + batch));
    }
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

}  // namespace

TrainResult contrastive_train(const ModelParams& initial, std::span<const CorpusItem> corpus,
                              const Vocabulary& vocab, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  initial.config.validate();
  if (vocab.size() > initial.config.vocab_size) {
    throw ConfigError("vocabulary of " + std::to_string(vocab.size()) + " words exceeds model vocab size " +
                      std::to_string(initial.config.vocab_size));
  }
  std::vector<std::size_t> train_idx;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus[i].split == Split::Train) train_idx.push_back(i);
  }
  if (train_idx.empty()) throw ContractError("contrastive_train: corpus has no training items");

  ModelParams model = initial.clone();
  model.set_trainable(true);
  std::vector<Tensor> params;
  for (auto& [name, t] : model.named_tensors()) params.push_back(t);

  std::vector<TokenIds> tokens(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    tokens[i] = tokenize(corpus[i].caption, vocab, model.config.max_text_len);
  }

  std::mt19937_64 rng(cfg.seed);
  TrainResult result;

  auto batch_loss = [&](const std::vector<std::size_t>& batch, bool augment_images) {
    std::vector<Tensor> images;
    std::vector<TokenIds> texts;
    for (auto i : batch) {
      images.push_back(augment_images ? augment(corpus[i].image, cfg, rng) : corpus[i].image);
      texts.push_back(tokens[i]);
    }
    return contrastive_loss(image_embeddings(images, model), text_embeddings(texts, model), cfg.temperature);
  };

  {
    ModelParams frozen = model.clone();
    frozen.set_trainable(false);
    std::swap(model, frozen);
    std::mt19937_64 probe_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    double total = 0.0;
    auto batches = make_batches(corpus, train_idx, cfg.batch_size, probe_rng);
    for (const auto& b : batches) total += batch_loss(b, false).item();
    result.initial_loss = total / static_cast<double>(batches.size());
    std::swap(model, frozen);
  }

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto batches = make_batches(corpus, train_idx, cfg.batch_size, rng);
    double total = 0.0;
    for (const auto& b : batches) {
      Tensor loss;
      try {
        loss = batch_loss(b, true);
      } catch (const DegenerateEmbeddingError&) {
        throw TrainingError("embeddings became degenerate", epoch);
      }
      const double value = loss.item();
      if (!std::isfinite(value)) throw TrainingError("training loss is not finite", epoch);
      total += value;
      if (b.size() < 2) continue;
      backward(loss);
      for (auto& p : params) {
        auto v = p.mutable_data();
        auto g = p.grad();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= static_cast<Real>(cfg.learning_rate * g[i]);
        p.zero_grad();
      }
    }
    const double mean_loss = total / static_cast<double>(batches.size());
    for (const auto& p : params) {
      if (!p.all_finite()) throw TrainingError("parameters became non-finite", epoch);
    }
    result.loss_history.push_back(mean_loss);
    if (on_epoch) on_epoch(epoch, mean_loss);
  }

  model.set_trainable(false);
  // Checkpoints store 32-bit values; the returned model matches a reloaded one.
  for (auto& p : params) {
    for (auto& v : p.mutable_data()) v = static_cast<float>(v);
  }
  result.model = std::move(model);
  return result;
}

double evaluate_zero_shot(const ModelParams& model, std::span<const CorpusItem> items,
                          std::span<const Embedding> caption_embeddings) {
  if (items.empty()) return 0.0;
  std::vector<Tensor> images;
  for (const auto& it : items) {
    if (it.class_id >= caption_embeddings.size()) {
      throw ContractError("evaluate_zero_shot: captions do not cover class " + std::to_string(it.class_id));
    }
    images.push_back(it.image);
  }
  auto embs = encode_images(images, model);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (predict_label(embs[i], caption_embeddings) == items[i].class_id) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(items.size());
}

}  // namespace embalign
