#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

#include "json.hpp"
#include "rhythm/model.hpp"

namespace rhythm {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

void write_checkpoint(const std::filesystem::path& manifest_path, const ModelWeights& w, const ModelConfig& cfg) {
  auto blob_path = manifest_path;
  blob_path.replace_extension(".bin");
  std::ofstream blob(blob_path, std::ios::binary);
  if (!blob) throw std::runtime_error("cannot write " + blob_path.string());

  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for_each_parameter(w, [&](const std::string& name, const Shape& shape, std::span<const double> values) {
    tensors.push_back({{"name", name}, {"offset", offset}, {"shape", shape}});
    blob.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
    offset += values.size_bytes();
  });

  const nlohmann::json manifest = {{"format", "rhythm-weights"},
                                   {"version", 1},
                                   {"dtype", "f64"},
                                   {"endianness", "little"},
                                   {"blob", blob_path.filename().string()},
                                   {"blob_bytes", offset},
                                   {"config_hash", config_hash(cfg)},
                                   {"tensors", tensors}};
  std::ofstream out(manifest_path);
  if (!out) throw std::runtime_error("cannot write " + manifest_path.string());
  out << manifest.dump(2) << '\n';
}

ModelWeights read_checkpoint(const std::filesystem::path& manifest_path, const ModelConfig& cfg) {
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("cannot open checkpoint manifest " + manifest_path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "rhythm-weights" || manifest.value("dtype", "") != "f64") {
    throw std::runtime_error("unsupported checkpoint format in " + manifest_path.string());
  }
  const auto blob_path = manifest_path.parent_path() / manifest.at("blob").get<std::string>();
  std::ifstream blob(blob_path, std::ios::binary);
  if (!blob) throw std::runtime_error("cannot open checkpoint blob " + blob_path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(blob)), std::istreambuf_iterator<char>());

  struct Entry {
    std::uint64_t offset;
    Shape shape;
  };
  std::map<std::string, Entry> entries;
  for (const auto& t : manifest.at("tensors")) {
    entries[t.at("name").get<std::string>()] = {t.at("offset").get<std::uint64_t>(), t.at("shape").get<Shape>()};
  }

  ModelWeights w = init_weights(cfg);
  std::size_t seen = 0;
  for_each_parameter(w, [&](const std::string& name, const Shape& shape, std::span<double> values) {
    const auto it = entries.find(name);
    if (it == entries.end()) throw std::runtime_error("checkpoint is missing tensor " + name);
    if (it->second.shape != shape) {
      throw std::runtime_error("checkpoint tensor " + name + " has shape " + shape_to_string(it->second.shape) +
                               ", model expects " + shape_to_string(shape));
    }
    if (it->second.offset + values.size_bytes() > bytes.size()) {
      throw std::runtime_error("checkpoint blob too short for tensor " + name);
    }
    std::memcpy(values.data(), bytes.data() + it->second.offset, values.size_bytes());
    ++seen;
  });
  if (seen != entries.size()) throw std::runtime_error("checkpoint has tensors the model does not use");
  return w;
}

}  // namespace rhythm
