#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <torch/torch.h>

namespace comics {

inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointHeader {
    int format_version = kCheckpointFormatVersion;
    uint64_t config_hash = 0;
    int64_t step = 0;
};

/// Layout: "COMICSCK", u32 header length, JSON header, u64 payload length,
/// serialized archive. Written to a temporary file and renamed into place.
void write_checkpoint(const std::filesystem::path& path, const CheckpointHeader& header,
                      torch::serialize::OutputArchive& archive);

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

/// Reads header and payload; throws std::runtime_error on any format problem.
CheckpointHeader read_checkpoint(const std::filesystem::path& path, torch::serialize::InputArchive& archive);

}  // namespace comics
