#pragma once

// Static-trajectory Hamiltonian Monte Carlo with warmup adaptation of the
// step size (dual averaging) and a diagonal inverse metric (windowed
// variance estimates). The number of leapfrog steps is fixed after warmup
// from the trajectory lengths at which warmup trajectories turned back on
// themselves.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <random>
#include <span>
#include <thread>
#include <vector>

#include "votacast/error.hpp"

namespace votacast::inference {

template <class T>
concept LogDensityTarget = requires(const T& t, std::span<const double> x, std::span<double> g) {
  { t.dimension() } -> std::convertible_to<std::size_t>;
  { t.log_density(x) } -> std::convertible_to<double>;
  { t.log_density_gradient(x, g) } -> std::convertible_to<double>;
};

template <class T>
concept HasInitialPoint = requires(const T& t, std::mt19937_64& rng) {
  { t.initial_point(rng) } -> std::convertible_to<std::vector<double>>;
};

struct SamplerConfig {
  int chains = 4;
  int iterations = 2000;
  double warmup_fraction = 0.5;
  double target_accept = 0.8;
  std::uint64_t seed = 20151220;
  int max_leapfrog = 1024;
  double max_divergence_rate = 0.10;
  double init_radius = 2.0;
  bool parallel = true;

  [[nodiscard]] int warmup() const { return static_cast<int>(std::floor(iterations * warmup_fraction)); }
  [[nodiscard]] int kept() const { return iterations - warmup(); }

  void validate() const {
    if (chains < 1) fail(ErrorKind::configuration, "chains must be at least 1");
    if (iterations < 2) fail(ErrorKind::configuration, "iterations must be at least 2");
    if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0))
      fail(ErrorKind::configuration, "warmup fraction must lie in (0, 1)");
    if (kept() <= 0) fail(ErrorKind::configuration, "no post-warmup iterations requested");
    if (!(target_accept > 0.0 && target_accept < 1.0))
      fail(ErrorKind::configuration, "target acceptance must lie in (0, 1)");
    if (max_leapfrog < 1) fail(ErrorKind::configuration, "max_leapfrog must be positive");
  }
};

struct ChainStats {
  double step_size = 0.0;
  int leapfrog_steps = 0;
  double accept_rate = 0.0;
  int divergences = 0;
};

/// Post-warmup draws, stored chain-major: draws[(chain * kept + iter) * dim + d].
class ChainSet {
 public:
  ChainSet() = default;
  ChainSet(std::size_t chains, std::size_t kept, std::size_t dimension, int warmup, std::uint64_t seed)
      : chains_(chains), kept_(kept), dimension_(dimension), warmup_(warmup), seed_(seed),
        draws_(chains * kept * dimension, 0.0), stats_(chains) {}

  [[nodiscard]] std::size_t chains() const noexcept { return chains_; }
  [[nodiscard]] std::size_t draws_per_chain() const noexcept { return kept_; }
  [[nodiscard]] std::size_t dimension() const noexcept { return dimension_; }
  [[nodiscard]] std::size_t total_draws() const noexcept { return chains_ * kept_; }
  [[nodiscard]] int warmup() const noexcept { return warmup_; }
  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }

  [[nodiscard]] std::span<const double> draw(std::size_t chain, std::size_t iter) const {
    return {draws_.data() + (chain * kept_ + iter) * dimension_, dimension_};
  }
  std::span<double> draw(std::size_t chain, std::size_t iter) {
    return {draws_.data() + (chain * kept_ + iter) * dimension_, dimension_};
  }
  /// Draw by flat index s = chain * kept + iter.
  [[nodiscard]] std::span<const double> draw(std::size_t s) const {
    return {draws_.data() + s * dimension_, dimension_};
  }
  [[nodiscard]] double at(std::size_t chain, std::size_t iter, std::size_t d) const {
    return draws_[(chain * kept_ + iter) * dimension_ + d];
  }

  [[nodiscard]] const std::vector<double>& raw() const noexcept { return draws_; }
  [[nodiscard]] const std::vector<ChainStats>& stats() const noexcept { return stats_; }
  std::vector<ChainStats>& stats() noexcept { return stats_; }

  [[nodiscard]] int divergences() const {
    int n = 0;
    for (const auto& s : stats_) n += s.divergences;
    return n;
  }
  [[nodiscard]] double divergence_rate() const {
    return total_draws() == 0 ? 0.0 : static_cast<double>(divergences()) / static_cast<double>(total_draws());
  }

  bool diagnostic_failure = false;

 private:
  std::size_t chains_ = 0;
  std::size_t kept_ = 0;
  std::size_t dimension_ = 0;
  int warmup_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<double> draws_;
  std::vector<ChainStats> stats_;
};

namespace detail {

inline std::mt19937_64 chain_engine(std::uint64_t seed, int chain) {
  std::seed_seq seq{seed, static_cast<std::uint64_t>(chain)};
  return std::mt19937_64(seq);
}

struct DualAveraging {
  double mu = 0.0, s_bar = 0.0, x_bar = 0.0;
  int counter = 0;
  double target = 0.8;
  static constexpr double gamma = 0.05, t0 = 10.0, kappa = 0.75;

  void restart(double step) {
    mu = std::log(10.0 * step);
    s_bar = x_bar = 0.0;
    counter = 0;
  }
  double update(double accept) {
    ++counter;
    const double eta = 1.0 / (counter + t0);
    s_bar = (1.0 - eta) * s_bar + eta * (target - accept);
    const double x = mu - s_bar * std::sqrt(static_cast<double>(counter)) / gamma;
    const double w = std::pow(static_cast<double>(counter), -kappa);
    x_bar = w * x + (1.0 - w) * x_bar;
    return std::exp(x);
  }
  [[nodiscard]] double final_step() const { return std::exp(x_bar); }
};

/// Adaptation windows following the usual fast/slow/fast warmup layout.
struct WarmupSchedule {
  int init_buffer = 75, term_buffer = 50, base_window = 25;
  bool adapt_metric = true;

  explicit WarmupSchedule(int warmup) {
    if (warmup < 20) {
      adapt_metric = false;
      return;
    }
    if (init_buffer + term_buffer + base_window > warmup) {
      init_buffer = static_cast<int>(0.15 * warmup);
      term_buffer = static_cast<int>(0.1 * warmup);
      base_window = warmup - init_buffer - term_buffer;
    }
  }
};

template <LogDensityTarget Target>
class Chain {
 public:
  Chain(const Target& target, const SamplerConfig& config, int chain_id)
      : target_(target), config_(config), dim_(target.dimension()),
        rng_(chain_engine(config.seed, chain_id)),
        x_(dim_), grad_(dim_), inv_metric_(dim_, 1.0) {}

  void run(ChainSet& out, std::size_t chain_index) {
    initialize();
    const int warmup = config_.warmup();
    const WarmupSchedule schedule(warmup);
    DualAveraging da;
    da.target = config_.target_accept;
    step_ = find_reasonable_step(step_);
    da.restart(step_);

    int window_end = schedule.init_buffer + schedule.base_window;
    int window_size = schedule.base_window;
    std::vector<double> mean(dim_, 0.0), m2(dim_, 0.0);
    int window_count = 0;
    std::vector<double> turn_times;

    for (int it = 0; it < warmup; ++it) {
      const auto [accept, steps] = uturn_transition();
      step_ = da.update(accept);
      const bool in_slow = schedule.adapt_metric && it >= schedule.init_buffer && it < warmup - schedule.term_buffer;
      if (in_slow) {
        ++window_count;
        for (std::size_t d = 0; d < dim_; ++d) {
          const double delta = x_[d] - mean[d];
          mean[d] += delta / window_count;
          m2[d] += delta * (x_[d] - mean[d]);
        }
        if (it + 1 == window_end) {
          const double n = window_count;
          for (std::size_t d = 0; d < dim_; ++d) {
            const double var = m2[d] / std::max(1.0, n - 1.0);
            inv_metric_[d] = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0));
          }
          std::fill(mean.begin(), mean.end(), 0.0);
          std::fill(m2.begin(), m2.end(), 0.0);
          window_count = 0;
          window_size *= 2;
          window_end = it + 1 + window_size;
          // Fold a window that would overrun the terminal buffer into this one.
          const int next_next = window_end + 2 * window_size;
          if (next_next > warmup - schedule.term_buffer) window_end = warmup - schedule.term_buffer;
          step_ = find_reasonable_step(step_);
          da.restart(step_);
        }
      }
      if (it >= warmup - std::max(schedule.term_buffer, warmup / 4)) turn_times.push_back(steps * step_);
    }
    if (warmup > 0) step_ = da.final_step();
    if (!std::isfinite(step_) || step_ <= 0.0) step_ = 1e-3;

    double turn_time = 1.0;
    if (!turn_times.empty()) {
      std::nth_element(turn_times.begin(), turn_times.begin() + static_cast<long>(turn_times.size() / 2),
                       turn_times.end());
      turn_time = turn_times[turn_times.size() / 2];
    }
    steps_ = std::clamp(static_cast<int>(std::ceil(turn_time / step_)), 1, config_.max_leapfrog);

    ChainStats& stats = out.stats()[chain_index];
    stats.step_size = step_;
    stats.leapfrog_steps = steps_;
    double accept_sum = 0.0;
    std::uniform_real_distribution<double> jitter(0.9, 1.1);
    for (std::size_t it = 0; it < out.draws_per_chain(); ++it) {
      const auto [accept, divergent] = static_transition(step_ * jitter(rng_), steps_);
      accept_sum += accept;
      stats.divergences += divergent ? 1 : 0;
      auto dst = out.draw(chain_index, it);
      std::copy(x_.begin(), x_.end(), dst.begin());
    }
    stats.accept_rate = accept_sum / static_cast<double>(out.draws_per_chain());
  }

 private:
  void initialize() {
    std::uniform_real_distribution<double> u(-config_.init_radius, config_.init_radius);
    for (int attempt = 0; attempt < 100; ++attempt) {
      if constexpr (HasInitialPoint<Target>) {
        x_ = target_.initial_point(rng_);
      } else {
        for (double& xi : x_) xi = u(rng_);
      }
      lp_ = target_.log_density_gradient(x_, grad_);
      if (std::isfinite(lp_) && std::all_of(grad_.begin(), grad_.end(), [](double g) { return std::isfinite(g); }))
        return;
    }
    fail(ErrorKind::init, "log density is not finite at any of 100 initial points");
  }

  double kinetic(const std::vector<double>& p) const {
    double k = 0.0;
    for (std::size_t d = 0; d < dim_; ++d) k += p[d] * p[d] * inv_metric_[d];
    return 0.5 * k;
  }

  void draw_momentum(std::vector<double>& p) {
    std::normal_distribution<double> z(0.0, 1.0);
    for (std::size_t d = 0; d < dim_; ++d) p[d] = z(rng_) / std::sqrt(inv_metric_[d]);
  }

  // One leapfrog step in place; returns the new log density.
  double leapfrog(std::vector<double>& x, std::vector<double>& p, std::vector<double>& g, double eps) const {
    for (std::size_t d = 0; d < dim_; ++d) p[d] += 0.5 * eps * g[d];
    for (std::size_t d = 0; d < dim_; ++d) x[d] += eps * inv_metric_[d] * p[d];
    const double lp = target_.log_density_gradient(x, g);
    for (std::size_t d = 0; d < dim_; ++d) p[d] += 0.5 * eps * g[d];
    return lp;
  }

  double find_reasonable_step(double start) {
    double eps = start > 0.0 ? start : 1.0;
    std::vector<double> p(dim_), x(dim_), g(dim_);
    draw_momentum(p);
    const double h0 = -lp_ + kinetic(p);
    auto log_ratio = [&](double e) {
      x = x_;
      g = grad_;
      auto q = p;
      const double lp = leapfrog(x, q, g, e);
      const double h = -lp + kinetic(q);
      return std::isfinite(h) ? h0 - h : -std::numeric_limits<double>::infinity();
    };
    const double threshold = std::log(0.8);
    const int direction = log_ratio(eps) > threshold ? 1 : -1;
    for (int i = 0; i < 60; ++i) {
      const double next = direction > 0 ? eps * 2.0 : eps * 0.5;
      const double r = log_ratio(next);
      if (direction > 0 ? !(r > threshold) : r > threshold) {
        if (direction < 0) eps = next;
        break;
      }
      eps = next;
    }
    return eps;
  }

  struct TurnResult {
    double accept;
    int steps;
  };

  // Warmup move: integrate until the trajectory starts to turn back on
  // itself, then Metropolis-correct the end point.
  TurnResult uturn_transition() {
    std::vector<double> p(dim_), x = x_, g = grad_;
    draw_momentum(p);
    const std::vector<double> p0 = p;
    const double h0 = -lp_ + kinetic(p);
    double lp = lp_;
    int steps = 0;
    bool divergent = false;
    while (steps < config_.max_leapfrog) {
      lp = leapfrog(x, p, g, step_);
      ++steps;
      const double h = -lp + kinetic(p);
      if (!std::isfinite(h) || h - h0 > 1000.0) {
        divergent = true;
        break;
      }
      double forward = 0.0, backward = 0.0;
      for (std::size_t d = 0; d < dim_; ++d) {
        const double dx = x[d] - x_[d];
        forward += dx * inv_metric_[d] * p[d];
        backward += dx * inv_metric_[d] * p0[d];
      }
      if (forward < 0.0 || backward < 0.0) break;
    }
    if (divergent) return {0.0, steps};
    const double h = -lp + kinetic(p);
    const double accept = std::min(1.0, std::exp(h0 - h));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (u(rng_) < accept) {
      x_ = std::move(x);
      grad_ = std::move(g);
      lp_ = lp;
    }
    return {accept, steps};
  }

  struct StaticResult {
    double accept;
    bool divergent;
  };

  StaticResult static_transition(double eps, int steps) {
    std::vector<double> p(dim_), x = x_, g = grad_;
    draw_momentum(p);
    const double h0 = -lp_ + kinetic(p);
    double lp = lp_;
    for (int s = 0; s < steps; ++s) {
      lp = leapfrog(x, p, g, eps);
      if (!std::isfinite(lp)) break;
    }
    const double h = -lp + kinetic(p);
    if (!std::isfinite(h) || h - h0 > 1000.0) return {0.0, true};
    const double accept = std::min(1.0, std::exp(h0 - h));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (u(rng_) < accept) {
      x_ = std::move(x);
      grad_ = std::move(g);
      lp_ = lp;
    }
    return {accept, false};
  }

  const Target& target_;
  const SamplerConfig& config_;
  std::size_t dim_;
  std::mt19937_64 rng_;
  std::vector<double> x_, grad_, inv_metric_;
  double lp_ = 0.0;
  double step_ = 1.0;
  int steps_ = 1;
};

}  // namespace detail

/// Runs config.chains independent chains. Each chain derives its own random
/// stream from (seed, chain id), so results do not depend on scheduling.
template <LogDensityTarget Target>
ChainSet hmc_sample(const Target& target, const SamplerConfig& config) {
  config.validate();
  if (target.dimension() == 0) fail(ErrorKind::invalid_input, "target has zero dimension");
  ChainSet out(static_cast<std::size_t>(config.chains), static_cast<std::size_t>(config.kept()), target.dimension(),
               config.warmup(), config.seed);
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(config.chains));
  auto run_chain = [&](int c) {
    try {
      detail::Chain<Target> chain(target, config, c);
      chain.run(out, static_cast<std::size_t>(c));
    } catch (...) {
      errors[static_cast<std::size_t>(c)] = std::current_exception();
    }
  };
  if (config.parallel && config.chains > 1 && std::thread::hardware_concurrency() > 1) {
    std::vector<std::thread> workers;
    for (int c = 0; c < config.chains; ++c) workers.emplace_back(run_chain, c);
    for (auto& w : workers) w.join();
  } else {
    for (int c = 0; c < config.chains; ++c) run_chain(c);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  out.diagnostic_failure = out.divergence_rate() > config.max_divergence_rate;
  return out;
}

}  // namespace votacast::inference
