#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>

#include "enres/net/enresnet.hpp"

namespace enres::lab {

constexpr std::uint32_t checkpoint_version = 1;

struct Checkpoint {
  net::EnResNetModel model;
  std::optional<double> best_val_accuracy;  // set for best-validation checkpoints
};

/// Binary layout, little-endian: "ENRN", u32 version, u32 record length,
/// UTF-8 spec record, u32 tensor count, then per tensor u16 name length,
/// name, u8 dtype (0 = f32, 1 = f64), u8 rank, u64 dims, raw values.
/// Tensors are written as f64.
void save_checkpoint(const Checkpoint& ckpt, std::ostream& out);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

/// Throws FormatError naming the offending field (bad magic, version,
/// truncated fields, unknown or missing tensors, shape mismatches).
Checkpoint load_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace enres::lab
