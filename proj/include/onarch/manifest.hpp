#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace onarch {

inline constexpr const char* kVersion = "0.1.0";

/// FNV-1a over a byte string, and over a file's contents.
std::uint64_t fnv1a64(const void* data, std::size_t size);
std::string file_hash(const std::string& path);  // 16 hex digits

/// Provenance block attached to every CLI output: enough to rerun the
/// command and to tell whether its inputs changed.
struct RunManifest {
  std::string subcommand;
  std::vector<std::string> argv;
  std::map<std::string, std::string> inputs;   // path -> fnv1a64 hex
  std::map<std::string, std::string> options;  // resolved settings
  bool has_seed = false;
  std::uint64_t seed = 0;
  std::string version = kVersion;
};

std::string manifest_to_json(const RunManifest& manifest);  // serialized object

} // namespace onarch
