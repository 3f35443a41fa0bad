#pragma once

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "atoms/error.hpp"
#include "atoms/geometry.hpp"

namespace test {

inline std::filesystem::path fixture_dir() { return ATOMS_FIXTURE_DIR; }

inline const nlohmann::json& oracle() {
  static const nlohmann::json values = [] {
    std::ifstream in(fixture_dir() / "oracle_values.json");
    REQUIRE_MESSAGE(in.good(), "missing oracle_values.json");
    return nlohmann::json::parse(in);
  }();
  return values;
}

// Rows of the JSON array become columns of the matrix.
inline atoms::Matrix columns(const nlohmann::json& rows) {
  const auto n = static_cast<atoms::Index>(rows.size());
  const auto h = static_cast<atoms::Index>(rows.at(0).size());
  atoms::Matrix m(h, n);
  for (atoms::Index j = 0; j < n; ++j)
    for (atoms::Index i = 0; i < h; ++i) m(i, j) = rows[j][i].get<double>();
  return m;
}

inline atoms::Matrix square(const nlohmann::json& rows) { return columns(rows).transpose(); }

inline atoms::Vector vec(const nlohmann::json& a) {
  atoms::Vector v(static_cast<atoms::Index>(a.size()));
  for (atoms::Index i = 0; i < v.size(); ++i) v(i) = a[i].get<double>();
  return v;
}

inline double rel_err(const atoms::Matrix& a, const atoms::Matrix& b) {
  return (a - b).norm() / std::max(1.0, b.norm());
}

template <typename Fn>
atoms::ErrorCode error_of(Fn&& fn) {
  try {
    fn();
  } catch (const atoms::Error& e) {
    return e.code();
  }
  FAIL("expected an atoms::Error");
  return atoms::ErrorCode::InvalidArgument;
}

inline std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "atoms-tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace test
