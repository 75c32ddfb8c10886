#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "embalign/corpus.hpp"
#include "embalign/model.hpp"
#include "embalign/tensor.hpp"

namespace embalign::io {

namespace fs = std::filesystem;

// FloatTensorFile: "FTEN", u16 version, u8 rank, u32 extents, f32 payload.
// All integers and floats little-endian; payload row-major.
inline constexpr std::uint16_t kTensorVersion = 1;

std::string encode_tensor(const Tensor& t);
// `base_offset` is added to offsets reported in FormatError.
Tensor decode_tensor(std::string_view bytes, std::size_t base_offset = 0);
void save_tensor(const fs::path& path, const Tensor& t);
Tensor load_tensor(const fs::path& path);

// Values are held as Real in memory and stored as f32.

// 8-bit view: round(v * 255) per scalar, binary PPM (P6). A level q maps
// back to the f32 value q / 255.
std::uint8_t quantize_scalar(Real v);
Real dequantize_scalar(std::uint8_t q);
Tensor quantize_image8(const Tensor& image);
void export_image8(const fs::path& path, const Tensor& image);
Tensor import_image8(const fs::path& path);

// Checkpoint: "ECKP", u16 version, u32 header length, JSON header,
// u32 tensor count, then per tensor: u16 name length, name, u32 blob
// length, FloatTensorFile blob.
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams model;
  // Free-form metadata (seed, training history, vocabulary, ...).
  nlohmann::json metadata = nlohmann::json::object();
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes, const std::optional<ModelConfig>& expected = std::nullopt);
void save_checkpoint(const fs::path& path, const Checkpoint& ckpt);
// Throws ConfigError when `expected` is given and differs from the stored config.
Checkpoint load_checkpoint(const fs::path& path, const std::optional<ModelConfig>& expected = std::nullopt);

// Tab-separated manifests. Lines starting with '#' are comments; the first
// comment line written is the column header.
using Row = std::vector<std::string>;
void write_tsv(const fs::path& path, std::span<const std::string> header, std::span<const Row> rows);
std::vector<Row> read_tsv(const fs::path& path, std::size_t expected_columns);

std::string read_file(const fs::path& path);
void write_file(const fs::path& path, std::string_view bytes);

// Vocabulary <-> JSON word list.
nlohmann::json vocabulary_to_json(const Vocabulary& v);
Vocabulary vocabulary_from_json(const nlohmann::json& j);

// Whether the target label survives an 8-bit round trip of the attacked image.
bool quantization_survival(const Tensor& attacked_image, std::size_t target_label, const ModelParams& model,
                           std::span<const Embedding> captions);

}  // namespace embalign::io
