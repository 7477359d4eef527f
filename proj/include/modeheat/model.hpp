#pragma once

// Physical system definition: damped harmonic oscillators in thermal baths,
// bilinear spring couplings between them, and linear feedback forces
// F_ext = A u + B du/dt + dF_ext. The model compiles to the drift and
// diffusion matrices of the first-order linear SDE dx = M x dt + L dW with
// state ordering (u_1, v_1, u_2, v_2, ...).

#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "modeheat/errors.hpp"

namespace modeheat {

/// Boltzmann constant, exact 2019 SI value [J/K].
inline constexpr double kBoltzmann = 1.380649e-23;

/// Default white-noise factor: <dF(t) dF(t+tau)> = factor * gamma m k_B T delta(tau).
/// 4 is the fluctuation-dissipation value for an equation of motion carrying 2*gamma*du/dt.
inline constexpr double kDefaultNoiseFactor = 4.0;

struct OscillatorSpec {
  std::string label;
  double mass = 0.0;              // kg
  double omega = 0.0;             // rad/s
  double gamma = 0.0;             // 1/s, amplitude damping half-rate
  double bath_temperature = 0.0;  // K
};

struct FeedbackSpec {
  double position_gain = 0.0;  // A [N/m]
  double velocity_gain = 0.0;  // B [N s/m]
  double noise_psd = 0.0;      // double-sided white PSD of dF_ext [N^2/Hz]
};

struct CouplingSpec {
  std::string first;
  std::string second;
  double spring_constant = 0.0;  // k_c [N/m]; force on i is -k_c (u_i - u_j)
};

struct SystemModel {
  std::vector<OscillatorSpec> oscillators;
  std::vector<CouplingSpec> couplings;
  std::map<std::string, FeedbackSpec> feedbacks;
  double noise_factor = kDefaultNoiseFactor;

  std::size_t size() const { return oscillators.size(); }

  std::size_t index_of(const std::string& label) const {
    for (std::size_t i = 0; i < oscillators.size(); ++i) {
      if (oscillators[i].label == label) return i;
    }
    throw Error(ErrorCode::UnknownLabel, "unknown oscillator label '" + label + "'");
  }

  FeedbackSpec feedback(std::size_t i) const {
    auto it = feedbacks.find(oscillators.at(i).label);
    return it == feedbacks.end() ? FeedbackSpec{} : it->second;
  }

  /// Thermal-force intensity S0 = factor * gamma m k_B T [N^2/Hz].
  double thermal_noise_intensity(std::size_t i) const {
    const auto& o = oscillators.at(i);
    return noise_factor * o.gamma * o.mass * kBoltzmann * o.bath_temperature;
  }

  /// Total net spring constant between oscillators i and j (summing duplicates).
  double spring_constant(std::size_t i, std::size_t j) const {
    double k = 0.0;
    for (const auto& c : couplings) {
      const auto a = index_of(c.first);
      const auto b = index_of(c.second);
      if ((a == i && b == j) || (a == j && b == i)) k += c.spring_constant;
    }
    return k;
  }
};

inline constexpr std::size_t position_index(std::size_t i) { return 2 * i; }
inline constexpr std::size_t velocity_index(std::size_t i) { return 2 * i + 1; }

struct StateMatrices {
  Eigen::MatrixXd drift;      // M
  Eigen::MatrixXd diffusion;  // D, nonzero only on velocity diagonal entries
  std::vector<std::string> warnings;

  std::size_t oscillators() const { return static_cast<std::size_t>(drift.rows()) / 2; }
};

/// Checks field-level invariants and label resolution. Throws Error.
inline void validate(const SystemModel& model) {
  if (model.oscillators.empty()) {
    throw Error(ErrorCode::ConfigError, "model has no oscillators");
  }
  if (!(model.noise_factor >= 0.0) || !std::isfinite(model.noise_factor)) {
    throw Error(ErrorCode::ConfigError, "noise_factor must be finite and >= 0");
  }
  for (std::size_t i = 0; i < model.size(); ++i) {
    const auto& o = model.oscillators[i];
    if (!(o.mass > 0.0) || !(o.omega > 0.0) || !(o.gamma >= 0.0) ||
        !(o.bath_temperature >= 0.0) || !std::isfinite(o.mass) || !std::isfinite(o.omega) ||
        !std::isfinite(o.gamma) || !std::isfinite(o.bath_temperature)) {
      throw Error(ErrorCode::ConfigError,
                  "oscillator '" + o.label +
                      "' violates mass > 0, omega > 0, gamma >= 0, bath_temperature >= 0");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (model.oscillators[j].label == o.label) {
        throw Error(ErrorCode::ConfigError, "duplicate oscillator label '" + o.label + "'");
      }
    }
  }
  for (const auto& c : model.couplings) {
    const auto a = model.index_of(c.first);
    const auto b = model.index_of(c.second);
    if (a == b) {
      throw Error(ErrorCode::UnknownLabel,
                  "coupling pair must name two distinct oscillators, got '" + c.first + "' twice");
    }
    if (!std::isfinite(c.spring_constant)) {
      throw Error(ErrorCode::ConfigError, "coupling spring_constant must be finite");
    }
  }
  for (const auto& [label, fb] : model.feedbacks) {
    model.index_of(label);
    if (!(fb.noise_psd >= 0.0) || !std::isfinite(fb.position_gain) ||
        !std::isfinite(fb.velocity_gain) || !std::isfinite(fb.noise_psd)) {
      throw Error(ErrorCode::ConfigError, "feedback on '" + label + "' has invalid gains or noise");
    }
  }
}

/// Stiffness matrix K (N x N) such that the conservative force is -K u.
inline Eigen::MatrixXd stiffness_matrix(const SystemModel& model) {
  const auto n = static_cast<Eigen::Index>(model.size());
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t i = 0; i < model.size(); ++i) {
    const auto& o = model.oscillators[i];
    const auto ii = static_cast<Eigen::Index>(i);
    k(ii, ii) = o.mass * o.omega * o.omega - model.feedback(i).position_gain;
  }
  for (const auto& c : model.couplings) {
    const auto a = static_cast<Eigen::Index>(model.index_of(c.first));
    const auto b = static_cast<Eigen::Index>(model.index_of(c.second));
    k(a, a) += c.spring_constant;
    k(b, b) += c.spring_constant;
    k(a, b) -= c.spring_constant;
    k(b, a) -= c.spring_constant;
  }
  return k;
}

inline StateMatrices compile(const SystemModel& model) {
  validate(model);
  const std::size_t n = model.size();
  StateMatrices out;

  for (std::size_t i = 0; i < n; ++i) {
    const auto& o = model.oscillators[i];
    const auto fb = model.feedback(i);
    const double bare_stiffness = o.mass * o.omega * o.omega;
    if (!(bare_stiffness - fb.position_gain > 0.0) || !(2.0 * o.gamma * o.mass - fb.velocity_gain > 0.0)) {
      // gamma = 0 with no velocity feedback is representable (transient studies).
      const bool undamped_only = o.gamma == 0.0 && fb.velocity_gain == 0.0 &&
                                 bare_stiffness - fb.position_gain > 0.0;
      if (!undamped_only) {
        throw Error(ErrorCode::UnstableFeedback,
                    "feedback on '" + o.label +
                        "' requires m Omega^2 - A > 0 and 2 gamma m - B > 0");
      }
    }
    if (std::abs(fb.position_gain) / bare_stiffness > 0.1) {
      out.warnings.push_back("oscillator '" + o.label +
                             "': |A|/(m Omega^2) > 0.1, outside the small-perturbation regime");
    }
  }

  const Eigen::MatrixXd k = stiffness_matrix(model);
  Eigen::LLT<Eigen::MatrixXd> llt(k);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::NonPositiveStiffness, "global stiffness matrix is not positive definite");
  }

  const auto dim = static_cast<Eigen::Index>(2 * n);
  out.drift = Eigen::MatrixXd::Zero(dim, dim);
  out.diffusion = Eigen::MatrixXd::Zero(dim, dim);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& o = model.oscillators[i];
    const auto fb = model.feedback(i);
    const auto u = static_cast<Eigen::Index>(position_index(i));
    const auto v = static_cast<Eigen::Index>(velocity_index(i));
    out.drift(u, v) = 1.0;
    for (std::size_t j = 0; j < n; ++j) {
      const auto uj = static_cast<Eigen::Index>(position_index(j));
      out.drift(v, uj) = -k(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) / o.mass;
    }
    out.drift(v, v) = -(2.0 * o.gamma - fb.velocity_gain / o.mass);
    out.diffusion(v, v) =
        (model.thermal_noise_intensity(i) + fb.noise_psd) / (o.mass * o.mass);
  }
  return out;
}

/// Largest real part over the spectrum of M.
inline double spectral_abscissa(const Eigen::MatrixXd& m) {
  Eigen::EigenSolver<Eigen::MatrixXd> es(m, false);
  return es.eigenvalues().real().maxCoeff();
}

inline bool is_hurwitz(const Eigen::MatrixXd& m) { return spectral_abscissa(m) < 0.0; }

struct CouplingConstant {
  double g = 0.0;  // rad/s
  bool nondegenerate = false;
};

/// g = k_c / (2 sqrt(m_i m_j) sqrt(Omega_i Omega_j)). For identical oscillators
/// this is half the normal-mode splitting to leading order.
inline CouplingConstant coupling_g(const SystemModel& model, const std::string& first,
                                   const std::string& second) {
  const auto i = model.index_of(first);
  const auto j = model.index_of(second);
  bool found = false;
  for (const auto& c : model.couplings) {
    const auto a = model.index_of(c.first);
    const auto b = model.index_of(c.second);
    found = found || (a == i && b == j) || (a == j && b == i);
  }
  if (!found || i == j) {
    throw Error(ErrorCode::UnknownPair, "no coupling between '" + first + "' and '" + second + "'");
  }
  const auto& oi = model.oscillators[i];
  const auto& oj = model.oscillators[j];
  const double mean_omega = std::sqrt(oi.omega * oj.omega);
  CouplingConstant out;
  out.g = model.spring_constant(i, j) / (2.0 * std::sqrt(oi.mass * oj.mass) * mean_omega);
  out.nondegenerate = std::abs(oi.omega - oj.omega) > 1e-6 * std::max(oi.omega, oj.omega);
  return out;
}

/// Spring constant that realizes coupling rate g between two identical-scale oscillators.
inline double spring_constant_for_g(const OscillatorSpec& a, const OscillatorSpec& b, double g) {
  return 2.0 * std::sqrt(a.mass * b.mass) * std::sqrt(a.omega * b.omega) * g;
}

namespace detail {
inline void fnv1a(std::uint64_t& h, const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
}
inline void fnv1a(std::uint64_t& h, double x) {
  std::uint64_t bits = 0;
  std::memcpy(&bits, &x, sizeof bits);
  fnv1a(h, &bits, sizeof bits);
}
inline void fnv1a(std::uint64_t& h, const std::string& s) {
  fnv1a(h, s.data(), s.size());
  const char sep = '\x1f';
  fnv1a(h, &sep, 1);
}
}  // namespace detail

/// 64-bit FNV-1a hash over every parameter that affects the compiled system.
inline std::uint64_t fingerprint(const SystemModel& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  detail::fnv1a(h, model.noise_factor);
  for (const auto& o : model.oscillators) {
    detail::fnv1a(h, o.label);
    detail::fnv1a(h, o.mass);
    detail::fnv1a(h, o.omega);
    detail::fnv1a(h, o.gamma);
    detail::fnv1a(h, o.bath_temperature);
  }
  for (const auto& c : model.couplings) {
    detail::fnv1a(h, c.first);
    detail::fnv1a(h, c.second);
    detail::fnv1a(h, c.spring_constant);
  }
  for (const auto& [label, fb] : model.feedbacks) {
    detail::fnv1a(h, label);
    detail::fnv1a(h, fb.position_gain);
    detail::fnv1a(h, fb.velocity_gain);
    detail::fnv1a(h, fb.noise_psd);
  }
  return h;
}

}  // namespace modeheat
