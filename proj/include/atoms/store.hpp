#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "atoms/geometry.hpp"
#include "atoms/sae.hpp"
#include "atoms/sparse_code.hpp"
#include "atoms/synth.hpp"

namespace atoms {

// ATOMDUMP v1, little-endian:
//   0   magic "ATOMDUMP"
//   8   u32 version (1)
//   12  u8 dtype (0 = float32)
//   13  3 reserved zero bytes
//   16  u64 n_vectors
//   24  u64 dim
//   32  u64 metadata_len
//   40  metadata_len bytes of UTF-8 JSON
//   ..  n_vectors * dim float32, one vector per row
struct DumpHeader {
  std::uint32_t version = 1;
  std::uint8_t dtype = 0;
  std::uint64_t n_vectors = 0;
  std::uint64_t dim = 0;
  std::uint64_t metadata_len = 0;
};

inline constexpr std::size_t kHeaderSize = 40;
inline constexpr char kDumpMagic[8] = {'A', 'T', 'O', 'M', 'D', 'U', 'M', 'P'};

std::vector<std::uint8_t> encode_dump(const ActivationSet& set);
ActivationSet decode_dump(const std::vector<std::uint8_t>& bytes);
DumpHeader decode_header(const std::vector<std::uint8_t>& bytes);

/// Vectors are the columns of set.data. Values are stored as float32, so
/// doubles that are not float32-representable are rounded on write.
void write_dump(const std::filesystem::path& path, const ActivationSet& set);
ActivationSet read_dump(const std::filesystem::path& path);

/// One row per latent: [encoder row | decoder column | tau].
void save_model(const std::filesystem::path& path, const SaeModel& model,
                nlohmann::json metadata = nlohmann::json::object());
SaeModel load_model(const std::filesystem::path& path);

/// Atoms as vectors (one per column of D), kind "atoms".
void save_atoms(const std::filesystem::path& path, const AtomSet& atoms);
AtomSet load_atoms(const std::filesystem::path& path);

/// Codes as n-dimensional vectors, kind "codes".
void save_codes(const std::filesystem::path& path, const std::vector<SparseCode>& codes);
std::vector<SparseCode> load_codes(const std::filesystem::path& path);

/// Writes through a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const void* data, std::size_t size);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace atoms
