#pragma once

#include <filesystem>
#include <iosfwd>

#include "roleattn/model.hpp"

namespace roleattn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary layout, all integers and floats little-endian:
//   "RGACKPT\0" | u32 version
//   config text, vocabulary (total_docs, form/df pairs), vocabulary CRC-32,
//   label names, best epoch, metric history,
//   parameter blocks (name, rank, dims, f64 data)
//   | u32 CRC-32 over everything after the version field
void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

// Throws CheckpointError on a bad magic, unsupported version, truncated
// data, checksum mismatch or a vocabulary whose CRC does not match.
Checkpoint read_checkpoint(std::istream& is);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace roleattn
