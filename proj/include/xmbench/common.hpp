#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace xmb {

// Feature rows are stored row-major so they can be memcpy'd to and from the
// on-disk binary32 layout.
using FeatureMatrix =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Modality { a, b };

inline const char* modality_name(Modality m) {
  return m == Modality::a ? "a" : "b";
}

// Collects the given rows of a feature matrix into a dense double matrix.
inline Matrix gather_rows(const FeatureMatrix& features,
                          std::span<const int> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), features.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const int r = rows[static_cast<std::size_t>(i)];
    if (r < 0 || r >= features.rows())
      throw std::out_of_range("gather_rows: row index " + std::to_string(r) +
                              " outside [0, " + std::to_string(features.rows()) +
                              ")");
    out.row(i) = features.row(r).cast<double>();
  }
  return out;
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

}  // namespace xmb
