#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "advit/trainer.hpp"
#include "advit/vit.hpp"

namespace advit::checkpoint {

inline constexpr std::uint32_t kFormatVersion = 1;

/// Binary layout, little-endian throughout:
///   "AVCK" | u32 version | u32 n + n bytes of ViTConfig JSON
///   | tensor table of the parameters
///   | u8 optimizer kind (0 sgd, 1 adamw) | u64 step | tensor table of buffers
///   | u64 rng key | u64 rng counter | u32 epoch | u32 CRC-32 of all prior bytes
/// A tensor table is u32 count followed, per tensor, by u32 name length,
/// name, u8 dtype (0 = f32), u32 rank, rank x u32 dims, payload.
std::vector<std::uint8_t> encode(const train::TrainState& state);

/// Throws CheckpointError: magic, version, truncated (names what was being
/// read), checksum, malformed, or shape_mismatch (names the tensor). With
/// `expected` set, every tensor must have that config's shape.
train::TrainState decode(std::span<const std::uint8_t> bytes, const vit::ViTConfig* expected = nullptr);

void save(const std::filesystem::path& path, const train::TrainState& state);
train::TrainState load(const std::filesystem::path& path, const vit::ViTConfig* expected = nullptr);

}  // namespace advit::checkpoint
