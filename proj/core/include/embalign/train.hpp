#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "embalign/corpus.hpp"
#include "embalign/model.hpp"

namespace embalign {

struct TrainConfig {
  std::size_t epochs = 150;
  // Capped at the number of classes so each batch holds distinct classes.
  std::size_t batch_size = 16;
  double learning_rate = 0.1;
  double temperature = 0.25;
  std::uint64_t seed = 7;
  // Uniform per-scalar noise amplitude added to training images.
  double pixel_jitter = 0.03;
  // Maximum integer translation (pixels) applied to training images.
  std::size_t position_jitter = 2;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct TrainResult {
  ModelParams model;                 // frozen: requires_grad off everywhere
  double initial_loss = 0.0;         // mean loss of the untrained model over one pass
  std::vector<double> loss_history;  // mean training loss per epoch
};

// Symmetric InfoNCE over a batch of normalized embeddings (rows paired by index).
Tensor contrastive_loss(const Tensor& image_emb, const Tensor& text_emb, double temperature);

using EpochCallback = std::function<void(std::size_t epoch, double loss)>;

// Trains the two towers on the training split with plain gradient descent.
// Throws TrainingError when the loss turns non-finite.
TrainResult contrastive_train(const ModelParams& initial, std::span<const CorpusItem> corpus,
                              const Vocabulary& vocab, const TrainConfig& cfg,
                              const EpochCallback& on_epoch = {});

// Fraction of items whose top caption (by dot product) is their class caption.
double evaluate_zero_shot(const ModelParams& model, std::span<const CorpusItem> items,
                          std::span<const Embedding> caption_embeddings);

}  // namespace embalign
