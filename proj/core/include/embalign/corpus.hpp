#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <string_view>
#include <vector>

#include "embalign/model.hpp"
#include "embalign/tensor.hpp"

namespace embalign {

enum class Split { Train, HeldOut };

std::string_view split_name(Split s);
Split parse_split(std::string_view name);

struct NamedColor {
  std::string_view name;
  std::array<Real, 3> rgb;
};

// Shapes the renderer knows, in canonical order.
const std::vector<std::string>& known_shapes();
// Fixed named palette.
const std::vector<NamedColor>& palette();

struct CorpusConfig {
  std::vector<std::string> shapes{"circle", "square", "triangle", "cross"};
  std::vector<std::string> colors{"red", "green", "blue", "yellow"};
  std::size_t per_class = 50;
  std::size_t image_size = 32;
  // Every k-th item of a class (k = heldout_every) goes to the held-out split.
  std::size_t heldout_every = 5;
  std::uint64_t seed = 7;

  std::size_t num_classes() const { return shapes.size() * colors.size(); }
  void validate() const;
};

void to_json(nlohmann::json& j, const CorpusConfig& c);
void from_json(const nlohmann::json& j, CorpusConfig& c);

struct CorpusItem {
  Tensor image;  // S x S x 3 in [0, 1]
  std::string caption;
  std::size_t class_id = 0;
  Split split = Split::Train;
};

// "a {color} {shape}" for every class, indexed by class id
// (class id = color index * |shapes| + shape index).
std::vector<std::string> class_captions(const CorpusConfig& config);

// Renders one shape on a neutral background with jittered position, size and tint.
Tensor render_shape(std::string_view shape, std::array<Real, 3> rgb, std::size_t image_size,
                    std::uint64_t seed);

std::vector<CorpusItem> generate_corpus(const CorpusConfig& config);

class Vocabulary {
 public:
  // Reserved entries plus the given words (deduplicated, sorted).
  explicit Vocabulary(std::vector<std::string> words = {});
  // Every word of every caption over the full palette and shape list.
  static Vocabulary standard();

  std::size_t size() const { return words_.size(); }
  std::size_t id(std::string_view word) const;  // unknown id when absent
  const std::string& word(std::size_t id) const;
  const std::vector<std::string>& words() const { return words_; }

  bool operator==(const Vocabulary&) const = default;

 private:
  std::vector<std::string> words_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// Lowercase, whitespace split, unknown words -> unknown id, padded or
// truncated to max_len with the pad id.
TokenIds tokenize(std::string_view caption, const Vocabulary& vocab, std::size_t max_len);

}  // namespace embalign
