#include "onarch/manifest.hpp"

#include <json.hpp>

#include "onarch/errors.hpp"
#include "onarch/io.hpp"

namespace onarch {

std::uint64_t fnv1a64(const void* data, std::size_t size) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string file_hash(const std::string& path) {
  const std::string text = read_text(path);
  const std::uint64_t h = fnv1a64(text.data(), text.size());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string manifest_to_json(const RunManifest& manifest) {
  nlohmann::json j;
  j["subcommand"] = manifest.subcommand;
  j["argv"] = manifest.argv;
  j["inputs"] = manifest.inputs;
  j["options"] = manifest.options;
  if (manifest.has_seed) j["seed"] = manifest.seed;
  j["version"] = manifest.version;
  return j.dump(2);
}

} // namespace onarch
