#pragma once

#include "logoid/encoder.hpp"
#include "logoid/params.hpp"

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <memory>
#include <string>

namespace logoid {

/// Self-describing training snapshot.
///
/// File layout (little-endian): "LCKP", u32 version, u64 header length,
/// header JSON (encoder config, backbone kind, D_v, D_t, head shape, config
/// hash, step, seed, tensor index), then raw float32 tensor data in index
/// order.
struct Checkpoint {
  EncoderConfig encoder;
  std::string config_hash;  // of the run config that produced it
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  ParameterSet weights;    // backbone then head parameters
  ParameterSet momentum;   // optimizer buffers, same layout as weights
  std::string textual_weights_hash;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Concatenated backbone and head weights of an encoder.
ParameterSet collect_weights(const Encoder& encoder);
/// Copies weights into the encoder. Throws logoid::Error on layout mismatch.
void assign_weights(Encoder& encoder, const ParameterSet& weights);

/// Builds an encoder from the checkpoint's config and loads its weights.
std::unique_ptr<Encoder> encoder_from_checkpoint(const Checkpoint& checkpoint);
/// Same, with the text recognizer replaced (e.g. to run a V-only ablation).
std::unique_ptr<Encoder> encoder_from_checkpoint(const Checkpoint& checkpoint,
                                                 const nlohmann::json& recognizer);

}  // namespace logoid
