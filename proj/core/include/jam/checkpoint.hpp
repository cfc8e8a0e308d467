#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "jam/fusion.hpp"
#include "jam/model.hpp"

namespace jam {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

// On-disk layout (all integers little-endian):
//
//   "JAMCKPT\0"                     8-byte magic
//   u32 format version
//   u64 header length, header      JSON: model spec, fusion spec, metadata
//   u64 record count
//   per record, in name order:
//     u32 name length, name bytes
//     u32 rank, u64 dims[rank]
//     f64 data[prod(dims)]         IEEE-754 binary64
//
// Identical inputs always produce identical bytes.
struct Checkpoint {
    Model model;
    std::optional<FusionSpec> fusion;
    std::map<std::string, std::string> metadata;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// The tensor-record section alone, as encoded in a checkpoint.
std::vector<std::uint8_t> encode_records(const ParameterSet& params);

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
// Hash of encode_records(params): equal for equal weights regardless of header.
std::uint64_t payload_hash(const ParameterSet& params);
std::string hex64(std::uint64_t value);

}  // namespace jam
