#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace atoms {

enum class ErrorCode {
  RankDeficient,
  IllConditioned,
  DimensionMismatch,
  ZeroVector,
  NotNormalized,
  InvalidSparsity,
  EmptySamples,
  TooLarge,
  Infeasible,
  TargetUnreachable,
  InvalidSpec,
  InvalidArgument,
  DivergedLoss,
  EmptyCheckpoints,
  ZeroVariance,
  IoError,
  BadMagic,
  UnsupportedVersion,
  UnsupportedDtype,
  TruncatedPayload,
  TrailingData,
  BadMetadataJson,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Library-wide exception. Store errors additionally carry the byte offset
/// at which validation failed.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what,
        std::optional<std::uint64_t> byte_offset = std::nullopt);

  ErrorCode code() const noexcept { return code_; }
  std::optional<std::uint64_t> byte_offset() const noexcept { return offset_; }

 private:
  ErrorCode code_;
  std::optional<std::uint64_t> offset_;
};

}  // namespace atoms
