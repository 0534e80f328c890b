#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "votacast/error.hpp"

namespace votacast::inference {

struct OlsFit {
  Eigen::VectorXd coefficients;
  Eigen::VectorXd residuals;
  double residual_variance = 0.0;  // RSS / (n - p); zero when n == p
};

/// Least squares through a column-pivoted QR factorization. A
/// rank-deficient design is rejected, naming the columns the pivoting
/// pushed past the numerical rank.
inline OlsFit ols_fit(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                      const std::vector<std::string>& column_names = {}) {
  const auto n = design.rows();
  const auto p = design.cols();
  if (p == 0) fail(ErrorKind::invalid_input, "design has no columns");
  if (response.size() != n) fail(ErrorKind::invalid_input, "response length does not match design rows");
  if (n < p) fail(ErrorKind::singular_design, "fewer observations than columns");
  if (!design.allFinite() || !response.allFinite()) fail(ErrorKind::invalid_input, "non-finite regression data");

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(1e-10);
  qr.compute(design);
  if (qr.rank() < p) {
    std::string names;
    for (Eigen::Index k = qr.rank(); k < p; ++k) {
      const auto col = qr.colsPermutation().indices()(k);
      if (!names.empty()) names += ", ";
      names += static_cast<std::size_t>(col) < column_names.size() ? column_names[static_cast<std::size_t>(col)]
                                                                    : "column " + std::to_string(col);
    }
    fail(ErrorKind::singular_design, "design is rank deficient; dependent columns: " + names);
  }
  OlsFit fit;
  fit.coefficients = qr.solve(response);
  fit.residuals = response - design * fit.coefficients;
  fit.residual_variance = n > p ? fit.residuals.squaredNorm() / static_cast<double>(n - p) : 0.0;
  return fit;
}

}  // namespace votacast::inference
