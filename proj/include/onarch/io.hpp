#pragma once

#include <string>

namespace onarch {

std::string read_text(const std::string& path);

/// Writes to a sibling temp file, then renames over the target, so a
/// crash mid-write never leaves a truncated output.
void write_text_atomic(const std::string& path, const std::string& text);

} // namespace onarch
