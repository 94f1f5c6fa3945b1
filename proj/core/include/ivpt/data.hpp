#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ivpt/tensor.hpp"

namespace ivpt {

struct Sample {
  Tensor image;  // [H x W x C], pixels in [0, 1] before corruption
  std::size_t label = 0;
};

using Dataset = std::vector<Sample>;

struct ImageSpec {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 1;
};

enum class NoiseModel { Blend, Additive };

std::string to_string(NoiseModel m);
NoiseModel parse_noise_model(const std::string& text);

struct NoiseSpec {
  double rho = 0.0;
  double sigma = 1.0;
  std::uint64_t seed = 0;
  NoiseModel model = NoiseModel::Blend;

  void validate() const;
};

// Stable per-sample seed derived from (base, index).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

// Class c draws a bright glyph whose quadrant and shape encode c on a dim
// noisy background. Labels cycle 0..C-1, so class counts differ by at most 1.
Dataset gen_pattern_task(std::size_t n, std::size_t num_classes, std::uint64_t seed,
                         const ImageSpec& spec = {});

// Label = number of separated bright 2x2 squares, cycling 0..max_objects.
Dataset gen_count_task(std::size_t n, std::size_t max_objects, std::uint64_t seed,
                       const ImageSpec& spec = {});

// Blend: clip((1-rho) x + rho g, 0, 1); Additive: clip(x + rho g, 0, 1);
// g ~ N(0.5, sigma^2) per pixel, seeded by derive_seed(spec.seed, index).
Sample corrupt(const Sample& sample, const NoiseSpec& spec, std::uint64_t index);
Dataset corrupt_dataset(const Dataset& data, const NoiseSpec& spec);

// Writes one headerless little-endian f64 file per sample plus manifest.json.
std::filesystem::path save_raw_dataset(const Dataset& data, const std::filesystem::path& dir);

// Reads a manifest listing {file, label}; relative paths resolve against the
// manifest's directory.
Dataset load_raw_dataset(const std::filesystem::path& manifest, const ImageSpec& spec,
                         std::size_t num_classes);

}  // namespace ivpt
