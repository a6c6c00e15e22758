#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "evt/errors.hpp"
#include "evt/tensor.hpp"

namespace evt {

// Checkpoint problems get their own type so the CLI can map them to a
// distinct exit code.
struct CheckpointError : FormatError {
    explicit CheckpointError(const std::string& msg) : FormatError(msg) {}
};

inline constexpr uint32_t kCheckpointVersion = 1;

// On-disk layout (little-endian): "EVTF", u32 version, u64 text length,
// canonical key-sorted "key=value\n" metadata block, u64 tensor count, then
// per tensor: u64 name length, name, u32 ndim, u64 dims, f32 values.
struct Checkpoint {
    std::map<std::string, std::string> meta;
    std::map<std::string, Tensor<float>> tensors;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace evt
