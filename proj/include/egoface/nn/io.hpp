#pragma once

#include "egoface/nn/network.hpp"

#include <filesystem>
#include "json.hpp"

namespace egoface::nn {

/// Weights file: "EGFW", u32 version, u32 layer count, then per layer a u32 tensor
/// count followed by each tensor as u32 rank, u32 dims, little-endian float32 data.
void save_weights(const NetworkState& state, const std::filesystem::path& path);
NetworkState load_weights(const NetworkSpec& spec, const std::filesystem::path& path);

inline constexpr std::uint32_t weights_format_version = 1;

nlohmann::json spec_to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const nlohmann::json& j);

void save_spec(const NetworkSpec& spec, const std::filesystem::path& path);
NetworkSpec load_spec(const std::filesystem::path& path);

} // namespace egoface::nn
