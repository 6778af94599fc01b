#pragma once

// Self-describing parameter archive:
//
//   "CEI1"
//   u32 entry count
//   per entry: u32 name byte length, UTF-8 name, u32 n, c, h, w
//   f32 payload for every entry in manifest order
//   u32 CRC-32 of the payload bytes
//
// All integers and floats are little-endian.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cei/param_set.hpp"

namespace cei {

class ArchiveError : public std::runtime_error {
 public:
  enum class Kind { Io, BadMagic, VersionMismatch, Truncated, Checksum, Malformed };

  ArchiveError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  [[nodiscard]] Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

std::vector<std::uint8_t> encode_archive(const ParamSet& params);
ParamSet decode_archive(std::span<const std::uint8_t> bytes);

void save_archive(const ParamSet& params, const std::filesystem::path& path);
ParamSet load_archive(const std::filesystem::path& path);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

}  // namespace cei
