#pragma once

#include <filesystem>

#include "mtecg/training.hpp"

namespace mtecg {

// Binary container: magic + version + canonical JSON header (configs,
// counters, rng state, tensor index) + raw little-endian float64 payloads +
// CRC32 trailer. Byte-for-byte deterministic: save(load(f)) == f.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);

// Verifies magic, version, and checksum; truncation and corruption raise
// errors instead of crashing.
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace mtecg
