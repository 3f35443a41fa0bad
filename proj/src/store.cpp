#include "atoms/store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <string>
#include <system_error>

#include "atoms/error.hpp"

namespace atoms {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
  }
}

template <typename T>
T get_le(const std::vector<std::uint8_t>& in, std::size_t offset) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(in[offset + i]) << (8 * i);
  return static_cast<T>(v);
}

[[noreturn]] void fail(ErrorCode code, const std::string& what, std::uint64_t offset) {
  throw Error(code, what, offset);
}

std::string kind_of(const json& meta) {
  auto it = meta.find("kind");
  return it != meta.end() && it->is_string() ? it->get<std::string>() : std::string();
}

void expect_kind(const json& meta, const std::string& want) {
  const std::string kind = kind_of(meta);
  if (kind != want) {
    fail(ErrorCode::BadMetadataJson,
         "expected metadata kind \"" + want + "\", found \"" + kind + "\"", kHeaderSize);
  }
}

}  // namespace

std::vector<std::uint8_t> encode_dump(const ActivationSet& set) {
  const std::string meta = set.metadata.is_null() ? std::string("{}") : set.metadata.dump();
  const auto n = static_cast<std::uint64_t>(set.data.cols());
  const auto dim = static_cast<std::uint64_t>(set.data.rows());

  std::vector<std::uint8_t> out(sizeof(kDumpMagic));
  out.reserve(kHeaderSize + meta.size() + n * dim * 4);
  std::memcpy(out.data(), kDumpMagic, sizeof(kDumpMagic));
  put_le<std::uint32_t>(out, 1);
  put_le<std::uint8_t>(out, 0);
  for (int i = 0; i < 3; ++i) put_le<std::uint8_t>(out, 0);
  put_le<std::uint64_t>(out, n);
  put_le<std::uint64_t>(out, dim);
  put_le<std::uint64_t>(out, meta.size());
  out.insert(out.end(), meta.begin(), meta.end());
  for (Index c = 0; c < set.data.cols(); ++c) {
    for (Index r = 0; r < set.data.rows(); ++r) {
      put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(set.data(r, c))));
    }
  }
  return out;
}

DumpHeader decode_header(const std::vector<std::uint8_t>& bytes) {
  for (std::size_t i = 0; i < sizeof(kDumpMagic); ++i) {
    if (i >= bytes.size() || bytes[i] != static_cast<std::uint8_t>(kDumpMagic[i])) {
      fail(ErrorCode::BadMagic, "file does not start with ATOMDUMP", i);
    }
  }
  if (bytes.size() < kHeaderSize) {
    fail(ErrorCode::TruncatedPayload,
         "header needs " + std::to_string(kHeaderSize) + " bytes, file has " + std::to_string(bytes.size()),
         bytes.size());
  }
  DumpHeader h;
  h.version = get_le<std::uint32_t>(bytes, 8);
  if (h.version != 1) fail(ErrorCode::UnsupportedVersion, "version " + std::to_string(h.version), 8);
  h.dtype = bytes[12];
  if (h.dtype != 0) fail(ErrorCode::UnsupportedDtype, "dtype " + std::to_string(h.dtype), 12);
  for (std::size_t i = 13; i < 16; ++i) {
    if (bytes[i] != 0) fail(ErrorCode::UnsupportedVersion, "reserved header bytes are not zero", i);
  }
  h.n_vectors = get_le<std::uint64_t>(bytes, 16);
  h.dim = get_le<std::uint64_t>(bytes, 24);
  h.metadata_len = get_le<std::uint64_t>(bytes, 32);
  return h;
}

ActivationSet decode_dump(const std::vector<std::uint8_t>& bytes) {
  const DumpHeader h = decode_header(bytes);
  const std::uint64_t size = bytes.size();
  if (h.metadata_len > size - kHeaderSize) {
    fail(ErrorCode::TruncatedPayload,
         "metadata needs " + std::to_string(h.metadata_len) + " bytes, " +
             std::to_string(size - kHeaderSize) + " remain",
         kHeaderSize);
  }
  const std::uint64_t payload_at = kHeaderSize + h.metadata_len;

  ActivationSet set;
  const auto* meta_begin = reinterpret_cast<const char*>(bytes.data() + kHeaderSize);
  try {
    set.metadata = json::parse(meta_begin, meta_begin + h.metadata_len);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::BadMetadataJson, e.what(), kHeaderSize + (e.byte > 0 ? e.byte - 1 : 0));
  }
  if (!set.metadata.is_object()) fail(ErrorCode::BadMetadataJson, "metadata is not a JSON object", kHeaderSize);

  constexpr std::uint64_t kMax = std::numeric_limits<std::uint64_t>::max();
  if (h.dim != 0 && h.n_vectors > kMax / 4 / h.dim) {
    fail(ErrorCode::TruncatedPayload, "payload size overflows", 16);
  }
  const std::uint64_t expected = h.n_vectors * h.dim * 4;
  const std::uint64_t actual = size - payload_at;
  if (actual < expected) {
    fail(ErrorCode::TruncatedPayload,
         "payload needs " + std::to_string(expected) + " bytes, found " + std::to_string(actual), payload_at);
  }
  if (actual > expected) {
    fail(ErrorCode::TrailingData,
         std::to_string(actual - expected) + " bytes after the payload", payload_at + expected);
  }

  set.data.resize(static_cast<Index>(h.dim), static_cast<Index>(h.n_vectors));
  std::uint64_t at = payload_at;
  for (Index c = 0; c < set.data.cols(); ++c) {
    for (Index r = 0; r < set.data.rows(); ++r, at += 4) {
      const float v = std::bit_cast<float>(get_le<std::uint32_t>(bytes, at));
      if (!std::isfinite(v)) fail(ErrorCode::InvalidArgument, "non-finite value in payload", at);
      set.data(r, c) = v;
    }
  }
  return set;
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::IoError, "read failed for " + path.string());
  return bytes;
}

void write_file_atomic(const fs::path& path, const void* data, std::size_t size) {
  std::random_device rd;
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(rd());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot create " + tmp.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw Error(ErrorCode::IoError, "write failed for " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(ErrorCode::IoError, "cannot move file into place at " + path.string());
  }
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  write_file_atomic(path, text.data(), text.size());
}

void write_dump(const fs::path& path, const ActivationSet& set) {
  const std::vector<std::uint8_t> bytes = encode_dump(set);
  write_file_atomic(path, bytes.data(), bytes.size());
}

ActivationSet read_dump(const fs::path& path) { return decode_dump(read_file(path)); }

void save_model(const fs::path& path, const SaeModel& model, json metadata) {
  model.validate();
  const Index h = model.dim(), n = model.width();
  ActivationSet set;
  set.data.resize(2 * h + 1, n);
  set.data.topRows(h) = model.w_enc.transpose();
  set.data.middleRows(h, h) = model.w_dec;
  set.data.row(2 * h) = model.tau.transpose();
  if (!metadata.is_object()) metadata = json::object();
  metadata["kind"] = "sae_model";
  metadata["sections"] = {{"enc", {0, h}}, {"dec", {h, 2 * h}}, {"tau", {2 * h, 2 * h + 1}}};
  set.metadata = std::move(metadata);
  write_dump(path, set);
}

SaeModel load_model(const fs::path& path) {
  const ActivationSet set = read_dump(path);
  expect_kind(set.metadata, "sae_model");
  const Index rows = set.data.rows();
  if (rows < 3 || rows % 2 == 0) fail(ErrorCode::BadMetadataJson, "model rows must be 2H+1", 24);
  const Index h = (rows - 1) / 2;
  const json want = {{"enc", {0, h}}, {"dec", {h, 2 * h}}, {"tau", {2 * h, 2 * h + 1}}};
  if (set.metadata.value("sections", json()) != want) {
    fail(ErrorCode::BadMetadataJson, "sections do not match enc/dec/tau layout for H=" + std::to_string(h),
         kHeaderSize);
  }
  SaeModel model;
  model.w_enc = set.data.topRows(h).transpose();
  model.w_dec = set.data.middleRows(h, h);
  model.tau = set.data.row(2 * h).transpose();
  model.validate();
  return model;
}

void save_atoms(const fs::path& path, const AtomSet& atoms) {
  ActivationSet set;
  set.data = atoms.data();
  set.metadata = {{"kind", "atoms"}};
  if (atoms.epsilon()) set.metadata["epsilon"] = *atoms.epsilon();
  write_dump(path, set);
}

AtomSet load_atoms(const fs::path& path) {
  ActivationSet set = read_dump(path);
  expect_kind(set.metadata, "atoms");
  std::optional<double> eps;
  if (auto it = set.metadata.find("epsilon"); it != set.metadata.end() && it->is_number()) {
    eps = it->get<double>();
  }
  return AtomSet(std::move(set.data), eps);
}

void save_codes(const fs::path& path, const std::vector<SparseCode>& codes) {
  ActivationSet set;
  set.data = codes.empty() ? Matrix(0, 0) : codes_matrix(codes);
  set.metadata = {{"kind", "codes"}};
  write_dump(path, set);
}

std::vector<SparseCode> load_codes(const fs::path& path) {
  const ActivationSet set = read_dump(path);
  expect_kind(set.metadata, "codes");
  std::vector<SparseCode> codes;
  codes.reserve(static_cast<std::size_t>(set.data.cols()));
  for (Index c = 0; c < set.data.cols(); ++c) codes.emplace_back(set.data.col(c));
  return codes;
}

}  // namespace atoms
