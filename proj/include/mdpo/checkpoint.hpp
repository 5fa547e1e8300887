#pragma once

#include "mdpo/nn.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <string_view>

namespace mdpo {

// Versioned parameter container shared by every persisted model.
//
// Layout (little-endian):
//   "MDPOCKPT" | u32 version | u64 meta_len | meta JSON
//   | u64 n_tensors | { u32 name_len | name | u32 ndim | u64 dims[ndim] | f64 row-major values }*
//   | 32-byte SHA-256 of everything before it
struct Checkpoint {
  nlohmann::json metadata = nlohmann::json::object();
  nn::ParamStore params;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const Checkpoint& ckpt);
// Throws IntegrityError on bad magic, unknown version, truncation or digest mismatch.
Checkpoint parse_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Hex digest of the serialized container; identifies a checkpoint in manifests.
std::string checkpoint_hash(const Checkpoint& ckpt);

}  // namespace mdpo
