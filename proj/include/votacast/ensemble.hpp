#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "votacast/core.hpp"

namespace votacast {

/// S simulated elections: province-level shares v_{i,s}, their national
/// aggregates v_s, and (once set) importance weights kept in log space.
class SimulationEnsemble {
 public:
  SimulationEnsemble() = default;
  SimulationEnsemble(PartyCanon canon, std::vector<int> province_ids, std::vector<double> electorate,
                     std::size_t draws)
      : canon_(std::move(canon)), province_ids_(std::move(province_ids)), electorate_(std::move(electorate)),
        draws_(draws), local_(draws * province_ids_.size() * canon_.size(), 0.0),
        national_(draws * canon_.size(), 0.0) {
    if (province_ids_.size() != electorate_.size())
      fail(ErrorKind::invalid_input, "electorate sizes do not match provinces");
    double total = 0.0;
    for (double e : electorate_) {
      if (!std::isfinite(e) || e < 0.0) fail(ErrorKind::invalid_input, "electorate sizes must be non-negative");
      total += e;
    }
    if (!(total > 0.0)) fail(ErrorKind::invalid_input, "total electorate is zero");
  }

  [[nodiscard]] const PartyCanon& canon() const { return canon_; }
  [[nodiscard]] std::size_t draws() const { return draws_; }
  [[nodiscard]] std::size_t provinces() const { return province_ids_.size(); }
  [[nodiscard]] std::size_t parties() const { return canon_.size(); }
  [[nodiscard]] const std::vector<int>& province_ids() const { return province_ids_; }
  [[nodiscard]] const std::vector<double>& electorate() const { return electorate_; }

  [[nodiscard]] std::span<const double> local(std::size_t s, std::size_t i) const {
    return {local_.data() + (s * provinces() + i) * parties(), parties()};
  }
  std::span<double> local(std::size_t s, std::size_t i) {
    return {local_.data() + (s * provinces() + i) * parties(), parties()};
  }
  [[nodiscard]] std::span<const double> national(std::size_t s) const {
    return {national_.data() + s * parties(), parties()};
  }

  /// Recomputes v_s as the electorate-weighted mean of the provinces.
  void aggregate(std::size_t s) {
    double total = 0.0;
    for (double e : electorate_) total += e;
    double* out = national_.data() + s * parties();
    std::fill(out, out + parties(), 0.0);
    for (std::size_t i = 0; i < provinces(); ++i) {
      const auto v = local(s, i);
      const double w = electorate_[i] / total;
      for (std::size_t l = 0; l < parties(); ++l) out[l] += w * v[l];
    }
  }

  [[nodiscard]] bool has_weights() const { return !log_weights_.empty(); }
  [[nodiscard]] const std::vector<double>& log_weights() const { return log_weights_; }

  /// Stores log W_s and recomputes the effective sample size.
  void set_log_weights(std::vector<double> log_w) {
    if (log_w.size() != draws_) fail(ErrorKind::invalid_input, "one weight per draw required");
    double top = -INFINITY;
    for (double w : log_w) {
      if (std::isnan(w) || w == INFINITY) fail(ErrorKind::numerical, "log weight is NaN or +inf");
      top = std::max(top, w);
    }
    if (top == -INFINITY) fail(ErrorKind::numerical, "every draw has zero weight");
    log_weights_ = std::move(log_w);
    double sum = 0.0, sum_sq = 0.0;
    for (double w : log_weights_) {
      const double e = std::exp(w - top);
      sum += e;
      sum_sq += e * e;
    }
    ess_ = sum * sum / sum_sq;
  }

  /// Self-normalized weights; equal weights when none were set.
  [[nodiscard]] std::vector<double> normalized_weights() const {
    std::vector<double> w(draws_, draws_ ? 1.0 / static_cast<double>(draws_) : 0.0);
    if (!has_weights()) return w;
    double top = -INFINITY;
    for (double lw : log_weights_) top = std::max(top, lw);
    double sum = 0.0;
    for (std::size_t s = 0; s < draws_; ++s) sum += (w[s] = std::exp(log_weights_[s] - top));
    for (double& x : w) x /= sum;
    return w;
  }

  [[nodiscard]] double ess() const { return has_weights() ? ess_ : static_cast<double>(draws_); }

  std::vector<std::string> warnings;
  std::vector<std::size_t> source_draw;  // posterior draw behind each simulation

 private:
  PartyCanon canon_;
  std::vector<int> province_ids_;
  std::vector<double> electorate_;
  std::size_t draws_ = 0;
  std::vector<double> local_;
  std::vector<double> national_;
  std::vector<double> log_weights_;
  double ess_ = 0.0;
};

}  // namespace votacast
