#pragma once

// Shared test fixtures and test-only oracles. Nothing here calls the
// Lyapunov solver under test.

#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "modeheat/model.hpp"

namespace modeheat::testing {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

inline OscillatorSpec oscillator(std::string label, double mass, double omega, double gamma, double temperature) {
  return {std::move(label), mass, omega, gamma, temperature};
}

/// m = 1e-12 kg, Omega = 2 pi 1e5 rad/s, gamma = 10 1/s, T = 300 K.
inline SystemModel default_fixture() {
  SystemModel m;
  m.oscillators.push_back(oscillator("A", 1e-12, kTwoPi * 1e5, 10.0, 300.0));
  return m;
}

inline SystemModel single(double mass, double omega, double gamma, double temperature) {
  SystemModel m;
  m.oscillators.push_back(oscillator("A", mass, omega, gamma, temperature));
  return m;
}

inline SystemModel pair(double mass, double omega, double gamma, double ta, double tb, double g) {
  SystemModel m;
  m.oscillators.push_back(oscillator("A", mass, omega, gamma, ta));
  m.oscillators.push_back(oscillator("B", mass, omega, gamma, tb));
  m.couplings.push_back({"A", "B", spring_constant_for_g(m.oscillators[0], m.oscillators[1], g)});
  return m;
}

/// Stationary covariance as the long-time limit of the Van Loan noise
/// integral int_0^t e^{Ms} D e^{M^T s} ds, evaluated by repeated squaring of
/// the one-step map. Independent of the Kronecker solve.
inline Eigen::MatrixXd covariance_by_integration(const Eigen::MatrixXd& m, const Eigen::MatrixXd& d) {
  const Eigen::Index n = m.rows();
  // Rescale positions so the block exponential is well conditioned.
  Eigen::VectorXd s = Eigen::VectorXd::Ones(n);
  for (Eigen::Index i = 0; i + 1 < n; i += 2) {
    const double w = std::sqrt(std::abs(m(i + 1, i)));
    if (w > 0.0) s(i) = w;
  }
  const Eigen::MatrixXd ms = s.asDiagonal() * m * s.cwiseInverse().asDiagonal();
  const Eigen::MatrixXd ds = s.asDiagonal() * d * s.asDiagonal();
  Eigen::EigenSolver<Eigen::MatrixXd> es(ms, false);
  const double decay = (-es.eigenvalues().real()).minCoeff();
  const double rate = es.eigenvalues().cwiseAbs().maxCoeff();
  const double h = 0.1 / rate;
  Eigen::MatrixXd block = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  block.topLeftCorner(n, n) = -ms * h;
  block.topRightCorner(n, n) = ds * h;
  block.bottomRightCorner(n, n) = ms.transpose() * h;
  const Eigen::MatrixXd g = block.exp();
  Eigen::MatrixXd phi = g.bottomRightCorner(n, n).transpose();
  Eigen::MatrixXd q = phi * g.topRightCorner(n, n);
  // Q(2t) = Phi(t) Q(t) Phi(t)^T + Q(t).
  double t = h;
  while (t < 60.0 / decay) {
    q = (phi * q * phi.transpose() + q).eval();
    phi = (phi * phi).eval();
    t *= 2.0;
  }
  return s.cwiseInverse().asDiagonal() * q * s.cwiseInverse().asDiagonal();
}

/// Random valid model generator for property tests.
class ModelGenerator {
 public:
  explicit ModelGenerator(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double log_uniform(double lo, double hi) { return std::exp(uniform(std::log(lo), std::log(hi))); }

  SystemModel any(std::size_t max_oscillators = 4) {
    SystemModel m;
    const auto n = static_cast<std::size_t>(std::uniform_int_distribution<int>(1, static_cast<int>(max_oscillators))(rng_));
    for (std::size_t i = 0; i < n; ++i) {
      const double omega = log_uniform(0.5, 5.0);
      m.oscillators.push_back(oscillator("o" + std::to_string(i), log_uniform(0.2, 5.0), omega,
                                         log_uniform(1e-3, 0.5) * omega, uniform(0.0, 500.0)));
    }
    for (std::size_t i = 0; i + 1 < n; ++i) {
      const auto& a = m.oscillators[i];
      const auto& b = m.oscillators[i + 1];
      m.couplings.push_back({a.label, b.label, uniform(0.0, 0.4) * std::min(a.mass * a.omega * a.omega,
                                                                             b.mass * b.omega * b.omega)});
    }
    return m;
  }

  SystemModel two(double ta, double tb) {
    auto m = any(1);
    const double omega = log_uniform(0.5, 5.0);
    m.oscillators[0].bath_temperature = ta;
    m.oscillators.push_back(oscillator("o1", log_uniform(0.2, 5.0), omega, log_uniform(1e-3, 0.5) * omega, tb));
    const auto& a = m.oscillators[0];
    const auto& b = m.oscillators[1];
    m.couplings.push_back({a.label, b.label, uniform(0.01, 0.4) * std::min(a.mass * a.omega * a.omega,
                                                                            b.mass * b.omega * b.omega)});
    return m;
  }

  void add_random_feedback(SystemModel& m) {
    for (const auto& o : m.oscillators) {
      if (uniform(0.0, 1.0) < 0.5) continue;
      FeedbackSpec fb;
      fb.position_gain = uniform(-0.05, 0.05) * o.mass * o.omega * o.omega;
      fb.velocity_gain = -uniform(0.0, 3.0) * 2.0 * o.gamma * o.mass;
      fb.noise_psd = uniform(0.0, 2.0) * 4.0 * o.gamma * o.mass * kBoltzmann * 100.0;
      m.feedbacks[o.label] = fb;
    }
  }

 private:
  std::mt19937_64 rng_;
};

inline double rel_diff(double a, double b) {
  const double s = std::max(std::abs(a), std::abs(b));
  return s == 0.0 ? 0.0 : std::abs(a - b) / s;
}

}  // namespace modeheat::testing
