#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "ivpt/model.hpp"

namespace ivpt {

// A snapshot is a pair of files: <stem>.bin holds every registered tensor as
// little-endian f64 back to back; <stem>.json is the manifest
// {format, model, prompts, run_seed, tensors: [{name, shape, trainable, offset}]}
// with byte offsets into the .bin file.
struct SnapshotPaths {
  std::filesystem::path binary;
  std::filesystem::path manifest;
};

SnapshotPaths snapshot_paths(const std::filesystem::path& stem);

void save_snapshot(const PromptedModel& model, std::uint64_t run_seed,
                   const std::filesystem::path& stem);

// Rebuilds the model from the manifest's configuration and overwrites every
// tensor with the stored values. Names and shapes must match exactly.
PromptedModel load_snapshot(const std::filesystem::path& stem);

}  // namespace ivpt
