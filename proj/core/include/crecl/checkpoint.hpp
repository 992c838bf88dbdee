#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "crecl/nn.hpp"

namespace crecl {

/// Versioned binary container for model parameters.
///
/// Layout (little-endian):
///   magic "CRECLCKP" | u32 version | u32 header length | header JSON |
///   u32 tensor count | per tensor: u32 name length, name, u64 rows,
///   u64 cols, rows*cols f64 in column-major order.
struct Checkpoint {
    nlohmann::json header;
    std::vector<std::pair<std::string, Mat>> tensors;

    const Mat& tensor(const std::string& name) const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(const std::string& bytes);

} // namespace crecl
