// SPDX-License-Identifier: Apache-2.0
#pragma once

// Checkpoint directory layout:
//   manifest.json   config, flags, seed, vocabulary hash, tensor list
//   vocab.txt       one token per line from index 2
//   tensors/*.mmt   parameters, batchnorm statistics, attention anchors (f32)

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "mmfuse/model.hpp"

namespace mmfuse {

nlohmann::ordered_json config_to_json(const ModelConfig& config);
/// Missing keys keep their defaults; unknown keys throw ConfigError.
ModelConfig config_from_json(const nlohmann::json& j);

template <Real T>
void save_checkpoint(const std::filesystem::path& dir, const Model<T>& model, std::uint64_t seed);

/// Throws ConfigError when the directory or manifest is missing or
/// inconsistent with its contents.
template <Real T>
Model<T> load_checkpoint(const std::filesystem::path& dir, std::uint64_t* seed = nullptr);

}  // namespace mmfuse
