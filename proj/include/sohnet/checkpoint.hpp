#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "sohnet/optim.hpp"

// Binary checkpoint container (little-endian):
//   "SOHNCKPT" | u32 version | u64 len, config text | u64 adam step |
//   u32 count | per parameter: u32 len, name | u32 rank, u64 dims[rank] |
//   f64 value[] | f64 first_moment[] | f64 second_moment[]

namespace sohnet {

inline constexpr char kCheckpointMagic[8] = {'S', 'O', 'H', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::string config;  // structured text describing the model and run
    ParamStore params;
};

std::string encode_checkpoint(const std::string& config, const ParamStore& params);
Checkpoint decode_checkpoint(const std::string& bytes);

void write_checkpoint(const std::filesystem::path& path, const std::string& config,
                      const ParamStore& params);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace sohnet
