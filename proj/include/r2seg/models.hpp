#pragma once

// U-Net family on a shared encoder/decoder skeleton.
//
//   enc_i:      block(c_{i-1} -> base*2^i), kept as skip, then 2x2 maxpool
//   bottleneck: block(base*2^(d-1) -> base*2^d)
//   dec_i:      up = conv_transpose2d(-> base*2^i), block(concat(skip_i, up))
//   head:       1x1 conv -> 1 channel of logits
//
// The variant picks the block kind at every level.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "r2seg/blocks.hpp"

namespace r2seg {

enum class Variant { unet, resunet, dense_r2unet };

std::string_view to_string(Variant v);
/// Accepts "unet", "resunet", "dense_r2unet" and "dense-r2unet".
Variant parse_variant(std::string_view name);
BlockKind block_kind(Variant v);

struct ModelConfig {
  Variant variant = Variant::dense_r2unet;
  std::size_t depth = 4;
  std::size_t base_width = 16;
  int t = 2;
  double dropout_rate = 0.2;
  std::size_t input_h = 256;
  std::size_t input_w = 256;
  std::size_t in_channels = 1;
  std::size_t units = 2;         // convs / RCL units per block
  std::size_t dense_growth = 0;  // 0: ceil(c_out / 2)
  std::uint64_t seed = 0;

  /// Throws ConfigError on an illegal configuration.
  void validate() const;
  BlockSpec block_spec(std::size_t c_in, std::size_t c_out) const;
};

nlohmann::json to_json(const ModelConfig& cfg);
/// Reads the keys present in `j` over the defaults. Unknown keys are
/// rejected when `strict`.
ModelConfig model_config_from_json(const nlohmann::json& j, bool strict = true);
/// Keys understood by model_config_from_json.
const std::vector<std::string>& model_config_keys();

struct Model {
  ModelConfig config;
  ParamStore params;
};

Model build(const ModelConfig& cfg);

/// Records the full network on `tape` and returns the logits (n, 1, h, w).
/// Block b's dropout uses mix_seed(dropout_seed, b).
VarId forward_logits(Tape& tape, const Model& model, const BoundParams& params,
                     VarId x, Mode mode, std::uint64_t dropout_seed = 0);

/// Sigmoid probabilities, shape (n, 1, h, w).
Tensor4 predict(const Model& model, const Tensor4& x, Mode mode = Mode::eval,
                std::uint64_t dropout_seed = 0);

std::size_t count_params(const Model& model);

// Checkpoint: a text header (magic line, JSON config line, manifest of
// "name n c h w" lines) followed by the tensors in binary tensor format.
void save(const Model& model, const std::filesystem::path& path);
Model load(const std::filesystem::path& path);

}  // namespace r2seg
