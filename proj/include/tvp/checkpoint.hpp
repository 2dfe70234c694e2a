#pragma once

#include <filesystem>
#include <string>

#include "tvp/trainer.hpp"

namespace tvp {

/// Layout: 8-byte magic "TVPCKPT1", u64 LE header length, UTF-8 JSON header
/// (config, stage, step, rng state, tensor directory of name/dtype/shape/offset),
/// then f32 LE tensor payloads in directory order. Offsets count from the
/// first payload byte.
std::string serialize_checkpoint(const TrainState& state);
/// Throws std::runtime_error on malformed input. Payloads widen from f32.
TrainState parse_checkpoint(const std::string& bytes);

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

/// Rounds every stored tensor through f32, i.e. what a save/load round trip yields.
TrainState round_to_storage(const TrainState& state);

}  // namespace tvp
