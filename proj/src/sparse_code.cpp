#include "atoms/sparse_code.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "atoms/error.hpp"

namespace atoms {

SparseCode::SparseCode(Vector values) : values_(std::move(values)) {
  for (Index i = 0; i < values_.size(); ++i) {
    const double v = values_(i);
    if (!std::isfinite(v) || v < 0.0) {
      throw Error(ErrorCode::InvalidArgument,
                  "sparse code entry " + std::to_string(i) + " is negative or non-finite");
    }
    if (v > 0.0) {
      if (support_.empty()) {
        delta_min_ = delta_max_ = v;
      } else {
        delta_min_ = std::min(delta_min_, v);
        delta_max_ = std::max(delta_max_, v);
      }
      support_.push_back(i);
    }
  }
}

Matrix codes_matrix(const std::vector<SparseCode>& codes) {
  if (codes.empty()) return Matrix(0, 0);
  Matrix out(codes.front().size(), static_cast<Index>(codes.size()));
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i].size() != out.rows()) {
      throw Error(ErrorCode::DimensionMismatch, "codes have inconsistent lengths");
    }
    out.col(static_cast<Index>(i)) = codes[i].values();
  }
  return out;
}

}  // namespace atoms
