#include "atoms/error.hpp"

namespace atoms {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::IllConditioned: return "IllConditioned";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::NotNormalized: return "NotNormalized";
    case ErrorCode::InvalidSparsity: return "InvalidSparsity";
    case ErrorCode::EmptySamples: return "EmptySamples";
    case ErrorCode::TooLarge: return "TooLarge";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::TargetUnreachable: return "TargetUnreachable";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::EmptyCheckpoints: return "EmptyCheckpoints";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::UnsupportedDtype: return "UnsupportedDtype";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::TrailingData: return "TrailingData";
    case ErrorCode::BadMetadataJson: return "BadMetadataJson";
  }
  return "Unknown";
}

namespace {
std::string decorate(ErrorCode code, const std::string& what,
                     std::optional<std::uint64_t> offset) {
  std::string msg(to_string(code));
  msg += ": ";
  msg += what;
  if (offset) msg += " (at byte offset " + std::to_string(*offset) + ")";
  return msg;
}
}  // namespace

Error::Error(ErrorCode code, const std::string& what,
             std::optional<std::uint64_t> byte_offset)
    : std::runtime_error(decorate(code, what, byte_offset)),
      code_(code),
      offset_(byte_offset) {}

}  // namespace atoms
