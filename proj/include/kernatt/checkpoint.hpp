#pragma once

#include <cstdint>
#include <string>

#include "kernatt/model.hpp"

namespace kernatt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// 64-bit FNV-1a of the model's canonical config text.
std::uint64_t config_digest(const ModelConfig& cfg);

/// Layout, all integers little-endian:
///   "KATT" | u32 version | u64 config digest | u32 block count
///   per block: u32 name length | name | u32 rank | u64 dims[rank] | f32 values
void save_checkpoint(const Model& model, const std::string& path);

/// Builds a model for cfg and fills it from the file. Shapes are checked
/// before the digest, so a width change reports DimensionMismatch.
Model load_checkpoint(const std::string& path, const ModelConfig& cfg);

}  // namespace kernatt
