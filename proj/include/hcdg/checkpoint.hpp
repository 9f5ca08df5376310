#pragma once

// Binary checkpoint container.
//
// Layout (all integers little-endian):
//   magic        8 bytes  "HCDGCKPT"
//   version      u32      1
//   header_len   u32      byte length of the JSON header
//   header       JSON     {"format": "hcdg-checkpoint", "config_hash": ..., ...}
//   count        u32      number of arrays
//   per array:
//     name_len   u32
//     name       bytes    "<group>/<parameter name>", e.g. "teacher/encoder.0.weight"
//     dtype      u8       1 = float64
//     rank       u8
//     dims       u32[rank]
//     payload    rank-product float64 values, row-major

#include <filesystem>
#include <string>

#include <json.hpp>

#include "hcdg/model.hpp"

namespace hcdg::nn {

inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, SegModel& model, const nlohmann::json& header);

// Restores every array into `model`; names and shapes must match exactly.
// Returns the JSON header.
nlohmann::json load_checkpoint(const std::filesystem::path& path, SegModel& model);

// Reads only the JSON header.
nlohmann::json read_checkpoint_header(const std::filesystem::path& path);

}  // namespace hcdg::nn
