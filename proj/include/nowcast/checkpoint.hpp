#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "nowcast/model.hpp"
#include "nowcast/tensor.hpp"

namespace nowcast {

// MSNC container: "MSNC", u16 version, u32 record count, then per record
// u32 name length, name, u8 dtype (0 = f32, 1 = f64), u32 rank, u32 dims, payload.
inline constexpr std::uint16_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor<float>>>;

std::vector<std::uint8_t> encode_checkpoint(const NamedTensors& records);
NamedTensors decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const std::filesystem::path& path, const NamedTensors& records);
NamedTensors read_checkpoint(const std::filesystem::path& path);

void save_params(const std::filesystem::path& path, const ModelParams& params);
// Checks every manifest entry is present with the right shape; extra records are an error.
ModelParams load_params(const std::filesystem::path& path, const ModelConfig& cfg);
ModelParams params_from_records(const NamedTensors& records, const ModelConfig& cfg);

}  // namespace nowcast
