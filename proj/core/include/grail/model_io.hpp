#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "grail/model.hpp"

namespace grail {

// Model files (.grlw): "GRLW", u32 version = 1, u32 manifest length, UTF-8
// JSON manifest, then float32 LE tensor payloads in manifest order.
std::vector<std::uint8_t> encode_model(const BlockGraph& graph);
BlockGraph decode_model(const std::vector<std::uint8_t>& bytes);
void save_model(const BlockGraph& graph, const std::filesystem::path& path);
BlockGraph load_model(const std::filesystem::path& path);

// Calibration files (.grlc): "GRLC", u32 version = 1, u32 rank, rank x u32
// dims (dim 0 = samples), float32 LE payload.
std::vector<std::uint8_t> encode_calibration(const Tensor& batch);
Tensor decode_calibration(const std::vector<std::uint8_t>& bytes);
void save_calibration(const Tensor& batch, const std::filesystem::path& path);
Tensor load_calibration(const std::filesystem::path& path);

/// Rounds every value through float32, the on-disk precision.
Tensor round_to_storage(const Tensor& t);
BlockGraph round_to_storage(const BlockGraph& graph);

}  // namespace grail
