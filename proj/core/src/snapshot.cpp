#include "ivpt/snapshot.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include "config_json.hpp"
#include "ivpt/error.hpp"

namespace ivpt {
namespace {

constexpr const char* kFormat = "ivpt-snapshot-v1";

}  // namespace

SnapshotPaths snapshot_paths(const std::filesystem::path& stem) {
  auto bin = stem;
  auto man = stem;
  bin += ".bin";
  man += ".json";
  return {bin, man};
}

void save_snapshot(const PromptedModel& model, std::uint64_t run_seed,
                   const std::filesystem::path& stem) {
  const SnapshotPaths paths = snapshot_paths(stem);
  if (paths.binary.has_parent_path()) std::filesystem::create_directories(paths.binary.parent_path());
  std::ofstream bin(paths.binary, std::ios::binary);
  if (!bin) throw IoError("cannot write " + paths.binary.string());

  detail::json manifest;
  manifest["format"] = kFormat;
  manifest["run_seed"] = run_seed;
  detail::json model_json = detail::json::object();
  detail::to_json_fields(model_json, model.model_config());
  manifest["model"] = model_json;
  detail::json prompt_json = detail::json::object();
  detail::to_json_fields(prompt_json, model.prompt_config());
  manifest["prompts"] = prompt_json;
  manifest["tensors"] = detail::json::array();

  std::uint64_t offset = 0;
  for (const auto& e : model.registry().entries()) {
    for (double v : e.tensor.values()) {
      const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
      char bytes[8];
      for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xff);
      bin.write(bytes, 8);
    }
    manifest["tensors"].push_back({{"name", e.name},
                                   {"shape", e.tensor.shape()},
                                   {"trainable", e.trainable},
                                   {"offset", offset}});
    offset += e.tensor.numel() * sizeof(double);
  }
  if (!bin) throw IoError("write failed for " + paths.binary.string());
  std::ofstream man(paths.manifest);
  if (!man) throw IoError("cannot write " + paths.manifest.string());
  man << manifest.dump(1) << '\n';
}

PromptedModel load_snapshot(const std::filesystem::path& stem) {
  const SnapshotPaths paths = snapshot_paths(stem);
  std::ifstream man(paths.manifest);
  if (!man) throw IoError("missing snapshot manifest " + paths.manifest.string());
  detail::json manifest;
  try {
    man >> manifest;
  } catch (const detail::json::exception& e) {
    throw IoError("malformed snapshot manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != kFormat) throw IoError("unsupported snapshot format");

  ModelConfig mc;
  detail::from_json_fields(manifest.at("model"), mc);
  PromptConfig pc;
  detail::from_json_fields(manifest.at("prompts"), pc);
  PromptedModel model(mc, pc, manifest.at("run_seed").get<std::uint64_t>());

  std::ifstream bin(paths.binary, std::ios::binary);
  if (!bin) throw IoError("missing snapshot data " + paths.binary.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(bin)),
                                         std::istreambuf_iterator<char>());

  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != model.registry().entries().size()) {
    throw IoError("snapshot lists " + std::to_string(tensors.size()) + " tensors, model has " +
                  std::to_string(model.registry().entries().size()));
  }
  for (const auto& t : tensors) {
    const std::string name = t.at("name").get<std::string>();
    const auto* entry = model.registry().find(name);
    if (!entry) throw IoError("snapshot tensor '" + name + "' unknown to the model");
    if (t.at("shape").get<Shape>() != entry->tensor.shape()) {
      throw IoError("snapshot tensor '" + name + "' has shape " +
                    shape_to_string(t.at("shape").get<Shape>()) + ", model expects " +
                    shape_to_string(entry->tensor.shape()));
    }
    const auto offset = t.at("offset").get<std::uint64_t>();
    Tensor target = entry->tensor;
    if (offset + target.numel() * 8 > bytes.size()) {
      throw IoError("snapshot tensor '" + name + "' extends past the data file");
    }
    for (std::size_t i = 0; i < target.numel(); ++i) {
      std::uint64_t bits = 0;
      for (int b = 7; b >= 0; --b) bits = (bits << 8) | bytes[offset + 8 * i + b];
      target[i] = std::bit_cast<double>(bits);
    }
  }
  return model;
}

}  // namespace ivpt
