#pragma once

// Minimal tape-based reverse-mode automatic differentiation. Each thread owns
// its tape, so independent chains can differentiate concurrently.

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace votacast::ad {

class Tape {
 public:
  static constexpr std::uint32_t kNone = 0xffffffffu;

  struct Node {
    std::uint32_t parent[2];
    double partial[2];
  };

  std::uint32_t push(std::uint32_t a, double da, std::uint32_t b = kNone, double db = 0.0) {
    nodes_.push_back(Node{{a, b}, {da, db}});
    return static_cast<std::uint32_t>(nodes_.size() - 1);
  }

  std::uint32_t push_leaf() { return push(kNone, 0.0); }

  void clear() { nodes_.clear(); }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  /// Back-propagates d(output)/d(node) and returns the adjoint array.
  const std::vector<double>& backward(std::uint32_t output) {
    adjoints_.assign(nodes_.size(), 0.0);
    adjoints_[output] = 1.0;
    for (std::size_t i = output + 1; i-- > 0;) {
      const double a = adjoints_[i];
      if (a == 0.0) continue;
      const Node& n = nodes_[i];
      if (n.parent[0] != kNone) adjoints_[n.parent[0]] += a * n.partial[0];
      if (n.parent[1] != kNone) adjoints_[n.parent[1]] += a * n.partial[1];
    }
    return adjoints_;
  }

  static Tape& current() {
    thread_local Tape tape;
    return tape;
  }

 private:
  std::vector<Node> nodes_;
  std::vector<double> adjoints_;
};

/// Active scalar. Constants carry no tape node.
class Var {
 public:
  Var() = default;
  Var(double value) : value_(value) {}  // NOLINT(google-explicit-constructor)
  Var(double value, std::uint32_t index) : value_(value), index_(index) {}

  [[nodiscard]] double value() const noexcept { return value_; }
  [[nodiscard]] std::uint32_t index() const noexcept { return index_; }
  [[nodiscard]] bool is_constant() const noexcept { return index_ == Tape::kNone; }

  static Var unary(double value, const Var& x, double dx) {
    if (x.is_constant()) return Var(value);
    return Var(value, Tape::current().push(x.index_, dx));
  }

  static Var binary(double value, const Var& x, double dx, const Var& y, double dy) {
    if (x.is_constant()) return unary(value, y, dy);
    if (y.is_constant()) return unary(value, x, dx);
    return Var(value, Tape::current().push(x.index_, dx, y.index_, dy));
  }

  Var& operator+=(const Var& o) { return *this = *this + o; }
  Var& operator-=(const Var& o) { return *this = *this - o; }
  Var& operator*=(const Var& o) { return *this = *this * o; }
  Var& operator/=(const Var& o) { return *this = *this / o; }

  friend Var operator+(const Var& a, const Var& b) { return binary(a.value_ + b.value_, a, 1.0, b, 1.0); }
  friend Var operator-(const Var& a, const Var& b) { return binary(a.value_ - b.value_, a, 1.0, b, -1.0); }
  friend Var operator*(const Var& a, const Var& b) { return binary(a.value_ * b.value_, a, b.value_, b, a.value_); }
  friend Var operator/(const Var& a, const Var& b) {
    const double q = a.value_ / b.value_;
    return binary(q, a, 1.0 / b.value_, b, -q / b.value_);
  }
  friend Var operator-(const Var& a) { return unary(-a.value_, a, -1.0); }

  friend bool operator<(const Var& a, const Var& b) { return a.value_ < b.value_; }
  friend bool operator>(const Var& a, const Var& b) { return a.value_ > b.value_; }

 private:
  double value_ = 0.0;
  std::uint32_t index_ = Tape::kNone;
};

inline Var exp(const Var& x) {
  const double e = std::exp(x.value());
  return Var::unary(e, x, e);
}
inline Var log(const Var& x) { return Var::unary(std::log(x.value()), x, 1.0 / x.value()); }
inline Var log1p(const Var& x) { return Var::unary(std::log1p(x.value()), x, 1.0 / (1.0 + x.value())); }
inline Var sqrt(const Var& x) {
  const double s = std::sqrt(x.value());
  return Var::unary(s, x, 0.5 / s);
}
inline Var tanh(const Var& x) {
  const double t = std::tanh(x.value());
  return Var::unary(t, x, 1.0 - t * t);
}
inline Var square(const Var& x) { return Var::unary(x.value() * x.value(), x, 2.0 * x.value()); }
inline double square(double x) { return x * x; }
inline double value_of(const Var& x) { return x.value(); }
inline double value_of(double x) { return x; }

/// Evaluates f at x and writes df/dx into grad. f receives the independent
/// variables and returns the scalar output.
inline double value_and_gradient(const std::function<Var(std::span<const Var>)>& f, std::span<const double> x,
                                 std::span<double> grad) {
  Tape& tape = Tape::current();
  tape.clear();
  std::vector<Var> inputs;
  inputs.reserve(x.size());
  for (double xi : x) inputs.emplace_back(xi, tape.push_leaf());
  const Var out = f(inputs);
  if (out.is_constant()) {
    for (double& g : grad) g = 0.0;
    return out.value();
  }
  const auto& adj = tape.backward(out.index());
  for (std::size_t i = 0; i < x.size(); ++i) grad[i] = adj[inputs[i].index()];
  return out.value();
}

}  // namespace votacast::ad
