#pragma once

#include <vector>

#include "atoms/geometry.hpp"

namespace atoms {

/// Nonnegative coefficient vector over an atom set, with its support cached.
class SparseCode {
 public:
  SparseCode() = default;
  explicit SparseCode(Vector values);

  const Vector& values() const noexcept { return values_; }
  const std::vector<Index>& support() const noexcept { return support_; }
  Index k() const noexcept { return static_cast<Index>(support_.size()); }
  Index size() const noexcept { return values_.size(); }
  double delta_min() const noexcept { return delta_min_; }
  double delta_max() const noexcept { return delta_max_; }

 private:
  Vector values_;
  std::vector<Index> support_;
  double delta_min_ = 0.0;
  double delta_max_ = 0.0;
};

/// Stacks codes as columns of an n x N matrix.
Matrix codes_matrix(const std::vector<SparseCode>& codes);

}  // namespace atoms
