#include "ivpt/data.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "ivpt/error.hpp"
#include "json.hpp"

namespace ivpt {
namespace {

using json = nlohmann::json;

constexpr double kBackgroundMax = 0.3;
constexpr double kGlyphMin = 0.7;

Tensor background(std::mt19937_64& rng, const ImageSpec& spec) {
  std::uniform_real_distribution<double> dist(0.0, kBackgroundMax);
  Tensor img({spec.height, spec.width, spec.channels});
  for (double& v : img.mutable_values()) v = dist(rng);
  return img;
}

void paint(Tensor& img, const ImageSpec& spec, std::mt19937_64& rng, std::size_t y0,
           std::size_t x0, std::size_t h, std::size_t w) {
  std::uniform_real_distribution<double> dist(kGlyphMin, 1.0);
  for (std::size_t y = y0; y < y0 + h; ++y)
    for (std::size_t x = x0; x < x0 + w; ++x)
      for (std::size_t c = 0; c < spec.channels; ++c)
        img[(y * spec.width + x) * spec.channels + c] = dist(rng);
}

std::size_t jitter(std::mt19937_64& rng, std::size_t lo, std::size_t span) {
  if (span == 0) return lo;
  return lo + std::uniform_int_distribution<std::size_t>(0, span)(rng);
}

void write_f64_le(std::ostream& out, std::span<const double> values) {
  for (double v : values) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    unsigned char bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>(bits >> (8 * b));
    out.write(reinterpret_cast<const char*>(bytes), 8);
  }
}

double read_f64_le(const unsigned char* bytes) {
  std::uint64_t bits = 0;
  for (int b = 7; b >= 0; --b) bits = (bits << 8) | bytes[b];
  return std::bit_cast<double>(bits);
}

}  // namespace

std::string to_string(NoiseModel m) { return m == NoiseModel::Blend ? "blend" : "additive"; }

NoiseModel parse_noise_model(const std::string& text) {
  if (text == "blend") return NoiseModel::Blend;
  if (text == "additive") return NoiseModel::Additive;
  throw ConfigError("unknown noise model '" + text + "' (expected blend or additive)");
}

void NoiseSpec::validate() const {
  if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("noise rho must lie in [0, 1]");
  if (!(sigma >= 0.0)) throw ConfigError("noise sigma must be non-negative");
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  // splitmix64 finalizer over a mixed (base, index) pair.
  std::uint64_t z = base * 0x9e3779b97f4a7c15ULL + index + 0x632be59bd9b4e019ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Dataset gen_pattern_task(std::size_t n, std::size_t num_classes, std::uint64_t seed,
                         const ImageSpec& spec) {
  if (num_classes < 2 || num_classes > 8) {
    throw ContractError("pattern task supports 2..8 classes, got " + std::to_string(num_classes));
  }
  if (spec.height < 8 || spec.width < 8) throw ContractError("pattern task needs images >= 8x8");
  const std::size_t qh = spec.height / 2, qw = spec.width / 2;
  const std::size_t side = std::max<std::size_t>(2, spec.height / 4);
  const std::size_t bar_len = qw - 1;
  Dataset out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::mt19937_64 rng(derive_seed(seed, i));
    const std::size_t label = i % num_classes;
    Tensor img = background(rng, spec);
    const std::size_t quadrant = label % 4;
    const std::size_t top = (quadrant / 2) * qh, left = (quadrant % 2) * qw;
    if (label < 4) {
      const std::size_t y = jitter(rng, top, qh - side), x = jitter(rng, left, qw - side);
      paint(img, spec, rng, y, x, side, side);
    } else {
      const std::size_t y = jitter(rng, top, qh - 2), x = jitter(rng, left, qw - bar_len);
      paint(img, spec, rng, y, x, 2, bar_len);
    }
    out.push_back(Sample{std::move(img), label});
  }
  return out;
}

Dataset gen_count_task(std::size_t n, std::size_t max_objects, std::uint64_t seed,
                       const ImageSpec& spec) {
  const std::size_t capacity = 6 * spec.height * spec.width / 256;
  if (max_objects < 1 || max_objects > capacity) {
    throw ContractError("count task supports 1.." + std::to_string(capacity) +
                        " objects for this image size, got " + std::to_string(max_objects));
  }
  constexpr std::size_t kSide = 2;
  constexpr int kAttempts = 200;
  Dataset out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::mt19937_64 rng(derive_seed(seed, i));
    const std::size_t label = i % (max_objects + 1);
    Tensor img = background(rng, spec);
    // Occupied cells including a one-pixel halo so objects never touch.
    std::vector<char> blocked(spec.height * spec.width, 0);
    std::uniform_int_distribution<std::size_t> ydist(0, spec.height - kSide);
    std::uniform_int_distribution<std::size_t> xdist(0, spec.width - kSide);
    for (std::size_t obj = 0; obj < label; ++obj) {
      bool placed = false;
      for (int attempt = 0; attempt < kAttempts && !placed; ++attempt) {
        const std::size_t y = ydist(rng), x = xdist(rng);
        bool free = true;
        for (std::size_t dy = 0; dy < kSide && free; ++dy)
          for (std::size_t dx = 0; dx < kSide && free; ++dx)
            free = !blocked[(y + dy) * spec.width + x + dx];
        if (!free) continue;
        paint(img, spec, rng, y, x, kSide, kSide);
        const std::size_t y0 = y > 0 ? y - 1 : 0, x0 = x > 0 ? x - 1 : 0;
        const std::size_t y1 = std::min(spec.height, y + kSide + 1);
        const std::size_t x1 = std::min(spec.width, x + kSide + 1);
        for (std::size_t yy = y0; yy < y1; ++yy)
          for (std::size_t xx = x0; xx < x1; ++xx) blocked[yy * spec.width + xx] = 1;
        placed = true;
      }
      if (!placed) {
        throw ContractError("count task: could not place object " + std::to_string(obj + 1) +
                            " of sample " + std::to_string(i) + " after " +
                            std::to_string(kAttempts) + " attempts");
      }
    }
    out.push_back(Sample{std::move(img), label});
  }
  return out;
}

Sample corrupt(const Sample& sample, const NoiseSpec& spec, std::uint64_t index) {
  spec.validate();
  if (spec.rho == 0.0) return Sample{sample.image.clone(), sample.label};
  std::mt19937_64 rng(derive_seed(spec.seed, index));
  std::normal_distribution<double> noise(0.5, spec.sigma);
  Tensor img(sample.image.shape());
  for (std::size_t i = 0; i < img.numel(); ++i) {
    const double g = noise(rng);
    const double x = sample.image[i];
    const double v = spec.model == NoiseModel::Blend ? (1.0 - spec.rho) * x + spec.rho * g
                                                     : x + spec.rho * g;
    img[i] = std::clamp(v, 0.0, 1.0);
  }
  return Sample{std::move(img), sample.label};
}

Dataset corrupt_dataset(const Dataset& data, const NoiseSpec& spec) {
  Dataset out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) out.push_back(corrupt(data[i], spec, i));
  return out;
}

std::filesystem::path save_raw_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json manifest = json::array();
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::ostringstream name;
    name << "sample_" << std::setw(6) << std::setfill('0') << i << ".f64";
    std::ofstream out(dir / name.str(), std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / name.str()).string());
    write_f64_le(out, data[i].image.values());
    manifest.push_back({{"file", name.str()}, {"label", data[i].label}});
  }
  const auto path = dir / "manifest.json";
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << manifest.dump(1) << '\n';
  return path;
}

Dataset load_raw_dataset(const std::filesystem::path& manifest_path, const ImageSpec& spec,
                         std::size_t num_classes) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("missing manifest " + manifest_path.string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw IoError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  if (manifest.is_object() && manifest.contains("samples")) manifest = manifest["samples"];
  if (!manifest.is_array()) throw IoError("manifest must list {file, label} entries");

  const std::size_t count = spec.height * spec.width * spec.channels;
  const auto base = manifest_path.parent_path();
  Dataset out;
  for (const auto& entry : manifest) {
    if (!entry.contains("file") || !entry.contains("label")) {
      throw IoError("manifest entry lacks file or label: " + entry.dump());
    }
    const std::filesystem::path file = base / entry["file"].get<std::string>();
    const auto label = entry["label"].get<std::size_t>();
    if (label >= num_classes) {
      throw IoError("label " + std::to_string(label) + " out of range in " + file.string());
    }
    std::ifstream raw(file, std::ios::binary);
    if (!raw) throw IoError("missing file " + file.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(raw)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() != count * sizeof(double)) {
      throw IoError("size mismatch in " + file.string() + ": " + std::to_string(bytes.size()) +
                    " bytes, expected " + std::to_string(count * sizeof(double)));
    }
    Tensor img({spec.height, spec.width, spec.channels});
    for (std::size_t i = 0; i < count; ++i) img[i] = read_f64_le(bytes.data() + 8 * i);
    out.push_back(Sample{std::move(img), label});
  }
  return out;
}

}  // namespace ivpt
