#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "votacast/error.hpp"

namespace votacast {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kSimplexTolerance = 1e-9;

/// Ordered party labels. The residual ("others") category is always stored
/// last and acts as the pivot of every reduced representation.
class PartyCanon {
 public:
  PartyCanon() = default;

  explicit PartyCanon(std::vector<std::string> labels) : labels_(std::move(labels)) {
    if (labels_.size() < 2) fail(ErrorKind::invalid_input, "party canon needs at least two labels");
    std::unordered_set<std::string> seen;
    for (const auto& label : labels_) {
      if (label.empty()) fail(ErrorKind::invalid_input, "empty party label");
      if (!seen.insert(label).second) fail(ErrorKind::invalid_input, "duplicate party label '" + label + "'");
    }
  }

  [[nodiscard]] std::size_t size() const noexcept { return labels_.size(); }
  [[nodiscard]] std::size_t reduced_size() const noexcept { return labels_.size() - 1; }
  [[nodiscard]] std::size_t pivot_index() const noexcept { return labels_.size() - 1; }
  [[nodiscard]] const std::string& pivot() const { return labels_.back(); }
  [[nodiscard]] const std::string& label(std::size_t i) const { return labels_.at(i); }
  [[nodiscard]] const std::vector<std::string>& labels() const noexcept { return labels_; }

  [[nodiscard]] std::optional<std::size_t> find(std::string_view label) const {
    auto it = std::find(labels_.begin(), labels_.end(), label);
    if (it == labels_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - labels_.begin());
  }

  [[nodiscard]] std::size_t index_of(std::string_view label) const {
    if (auto i = find(label)) return *i;
    fail(ErrorKind::lookup, "party '" + std::string(label) + "' is not in the canon");
  }

  friend bool operator==(const PartyCanon&, const PartyCanon&) = default;

 private:
  std::vector<std::string> labels_;
};

/// Per-party fractions of the valid vote. Entries lie in [0, 1] and sum to 1.
class ShareVector {
 public:
  ShareVector() = default;

  explicit ShareVector(Vector values) : values_(std::move(values)) {
    if (values_.size() < 1) fail(ErrorKind::invalid_input, "empty share vector");
    double total = 0.0;
    for (Eigen::Index i = 0; i < values_.size(); ++i) {
      double& v = values_[i];
      if (!std::isfinite(v) || v < -1e-12 || v > 1.0 + 1e-12)
        fail(ErrorKind::out_of_simplex, "share " + std::to_string(v) + " outside [0, 1]");
      v = std::clamp(v, 0.0, 1.0);
      total += v;
    }
    if (std::abs(total - 1.0) > kSimplexTolerance)
      fail(ErrorKind::out_of_simplex, "shares sum to " + std::to_string(total));
  }

  static ShareVector uniform(std::size_t n) {
    return ShareVector(Vector::Constant(static_cast<Eigen::Index>(n), 1.0 / static_cast<double>(n)));
  }

  [[nodiscard]] const Vector& values() const noexcept { return values_; }
  [[nodiscard]] std::size_t size() const noexcept { return static_cast<std::size_t>(values_.size()); }
  double operator[](std::size_t i) const { return values_[static_cast<Eigen::Index>(i)]; }

 private:
  Vector values_;
};

/// Share vector with the pivot dropped (dimension L - 1).
class ReducedVector {
 public:
  ReducedVector() = default;

  explicit ReducedVector(Vector values) : values_(std::move(values)) {
    if (!values_.allFinite()) fail(ErrorKind::invalid_input, "non-finite reduced vector");
  }

  [[nodiscard]] const Vector& values() const noexcept { return values_; }
  [[nodiscard]] std::size_t size() const noexcept { return static_cast<std::size_t>(values_.size()); }
  double operator[](std::size_t i) const { return values_[static_cast<Eigen::Index>(i)]; }

 private:
  Vector values_;
};

/// Symmetric positive semidefinite matrix on the reduced party space.
class CovMatrix {
 public:
  CovMatrix() = default;

  explicit CovMatrix(Matrix entries) : entries_(std::move(entries)) {
    if (entries_.rows() != entries_.cols()) fail(ErrorKind::invalid_input, "covariance is not square");
    if (!entries_.allFinite()) fail(ErrorKind::invalid_input, "non-finite covariance");
    const double asym = (entries_ - entries_.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-12) fail(ErrorKind::invalid_input, "covariance not symmetric (max asymmetry " + std::to_string(asym) + ")");
    if (entries_.size() > 0) {
      Eigen::SelfAdjointEigenSolver<Matrix> eig(entries_, Eigen::EigenvaluesOnly);
      if (eig.eigenvalues().minCoeff() < -1e-10)
        fail(ErrorKind::invalid_input, "covariance not positive semidefinite");
    }
  }

  static CovMatrix identity(std::size_t n, double scale = 1.0) {
    const auto d = static_cast<Eigen::Index>(n);
    return CovMatrix(Matrix::Identity(d, d) * scale);
  }

  [[nodiscard]] const Matrix& entries() const noexcept { return entries_; }
  [[nodiscard]] std::size_t size() const noexcept { return static_cast<std::size_t>(entries_.rows()); }

 private:
  Matrix entries_;
};

/// Writes softmax(scores) into `out` (same length). Subtracts the maximum so
/// large linear predictors cannot overflow.
inline void softmax_into(std::span<const double> scores, std::span<double> out) {
  const double top = *std::max_element(scores.begin(), scores.end());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp(scores[i] - top);
    total += out[i];
  }
  for (double& v : out) v /= total;
}

inline ShareVector softmax(std::span<const double> scores) {
  if (scores.empty()) fail(ErrorKind::invalid_input, "softmax of an empty vector");
  for (double s : scores)
    if (!std::isfinite(s)) fail(ErrorKind::invalid_input, "softmax input is not finite");
  Vector out(static_cast<Eigen::Index>(scores.size()));
  softmax_into(scores, std::span<double>(out.data(), scores.size()));
  return ShareVector(std::move(out));
}

inline ShareVector softmax(const Vector& scores) {
  return softmax(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())));
}

inline ReducedVector reduce(const ShareVector& full, const PartyCanon& canon) {
  if (full.size() != canon.size())
    fail(ErrorKind::invalid_input, "share vector has " + std::to_string(full.size()) + " entries, canon has " +
                                       std::to_string(canon.size()));
  return ReducedVector(full.values().head(static_cast<Eigen::Index>(canon.reduced_size())));
}

inline ShareVector lift(const ReducedVector& reduced, const PartyCanon& canon) {
  if (reduced.size() != canon.reduced_size())
    fail(ErrorKind::invalid_input, "reduced vector has wrong dimension");
  const Vector& r = reduced.values();
  if ((r.array() < -kSimplexTolerance).any()) fail(ErrorKind::out_of_simplex, "negative component");
  const double sum = r.sum();
  if (sum > 1.0 + kSimplexTolerance) fail(ErrorKind::out_of_simplex, "components sum to " + std::to_string(sum));
  Vector full(r.size() + 1);
  full.head(r.size()) = r.cwiseMax(0.0);
  full[r.size()] = std::max(0.0, 1.0 - full.head(r.size()).sum());
  return ShareVector(std::move(full));
}

/// True when the reduced point lifts to a valid share vector.
inline bool inside_simplex(const Vector& reduced) {
  return (reduced.array() >= 0.0).all() && reduced.sum() <= 1.0;
}

}  // namespace votacast
