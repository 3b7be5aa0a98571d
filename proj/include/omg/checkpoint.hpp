#pragma once

// Tensor container: "OMGC", version u32, metadata length u32 + JSON text,
// tensor count u32, then per tensor: name length u32, utf-8 name, rank u32,
// dims u32 x rank, float32 values (little-endian, row-major).

#include "omg/tensor.hpp"

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace omg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
  std::string metadata;  // JSON object
  std::vector<std::pair<std::string, MatF>> tensors;

  /// nullptr when absent.
  const MatF* find(const std::string& name) const;
};

std::vector<std::byte> encode_checkpoint(const std::string& metadata, const TensorList<float>& tensors);
CheckpointData decode_checkpoint(std::span<const std::byte> bytes, const std::string& origin);

/// Writes through a temporary file and renames, so readers never see a
/// partial checkpoint.
void write_checkpoint(const std::filesystem::path& path, const std::string& metadata,
                      const TensorList<float>& tensors);
CheckpointData read_checkpoint(const std::filesystem::path& path);

/// Copies named tensors from `data` into `dst`; every destination tensor must
/// be present with identical dims.
void assign_tensors(const CheckpointData& data, const TensorList<float>& dst, const std::string& origin);

/// FNV-1a digest of a whole file, hex-encoded.
std::string file_hash(const std::filesystem::path& path);

}  // namespace omg
