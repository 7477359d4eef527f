#pragma once

// Exact stationary statistics of the compiled linear system.
//
// The covariance C solves M C + C M^T + D = 0. Mode temperatures, per-bath
// heat fluxes and the feedback flux that closes the energy balance are read
// off C. Normal modes come from the eigendecomposition of M.

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "modeheat/errors.hpp"
#include "modeheat/model.hpp"

namespace modeheat {

struct LyapunovSolution {
  Eigen::MatrixXd covariance;
  double residual = 0.0;  // ||M C + C M^T + D||_F / max(||D||_F, eps)
};

inline constexpr double kLyapunovTolerance = 1e-10;

/// Relative Lyapunov residual of a candidate covariance.
inline double lyapunov_residual(const Eigen::MatrixXd& m, const Eigen::MatrixXd& d,
                                const Eigen::MatrixXd& c) {
  const Eigen::MatrixXd r = m * c + c * m.transpose() + d;
  const double scale = std::max(d.norm(), std::numeric_limits<double>::min());
  return r.norm() / scale;
}

namespace detail {

inline Eigen::Index packed_index(Eigen::Index i, Eigen::Index j, Eigen::Index n) {
  if (i > j) std::swap(i, j);
  // Row-major upper triangle.
  return i * n - i * (i - 1) / 2 + (j - i);
}

// Solves the symmetric Lyapunov equation directly on the n(n+1)/2 independent
// entries of C (Kronecker form restricted to the upper triangle).
inline Eigen::MatrixXd solve_packed(const Eigen::MatrixXd& m, const Eigen::MatrixXd& d) {
  const Eigen::Index n = m.rows();
  const Eigen::Index p = n * (n + 1) / 2;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd rhs(p);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i; j < n; ++j) {
      const Eigen::Index row = packed_index(i, j, n);
      rhs(row) = -d(i, j);
      for (Eigen::Index k = 0; k < n; ++k) {
        a(row, packed_index(k, j, n)) += m(i, k);
        a(row, packed_index(i, k, n)) += m(j, k);
      }
    }
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
  Eigen::VectorXd x = lu.solve(rhs);
  // Two rounds of iterative refinement.
  for (int it = 0; it < 2; ++it) {
    const Eigen::VectorXd r = rhs - a * x;
    x += lu.solve(r);
  }
  Eigen::MatrixXd c(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i; j < n; ++j) {
      c(i, j) = c(j, i) = x(packed_index(i, j, n));
    }
  }
  return c;
}

}  // namespace detail

/// Stationary covariance of dx = M x dt + dW with <dW dW^T> = D dt.
///
/// The state is rescaled before the solve so that position and velocity
/// entries share one magnitude; SI values span ~20 decades otherwise.
inline LyapunovSolution solve_stationary(const Eigen::MatrixXd& m, const Eigen::MatrixXd& d) {
  if (m.rows() != m.cols() || d.rows() != d.cols() || m.rows() != d.rows()) {
    throw Error(ErrorCode::ConfigError, "drift and diffusion must be square and of equal size");
  }
  const double abscissa = spectral_abscissa(m);
  const double tol = 1e-14 * std::max(1.0, m.cwiseAbs().maxCoeff());
  if (!(abscissa < -tol)) {
    throw Error(ErrorCode::NotHurwitz,
                "drift matrix is not Hurwitz (max Re eig = " + std::to_string(abscissa) +
                    "); no stationary state exists");
  }

  // Diagonal balancing x~ = S x with S_u = sqrt(|M_vu|), S_v = 1, time in units of 1/omega_ref.
  const Eigen::Index n = m.rows();
  Eigen::VectorXd s = Eigen::VectorXd::Ones(n);
  double omega_ref = 0.0;
  for (Eigen::Index i = 0; i + 1 < n; i += 2) {
    const double w = std::sqrt(std::abs(m(i + 1, i)));
    if (w > 0.0) s(i) = w;
    omega_ref = std::max(omega_ref, s(i));
  }
  if (omega_ref == 0.0) omega_ref = 1.0;
  const Eigen::MatrixXd ms = s.asDiagonal() * m * s.cwiseInverse().asDiagonal() / omega_ref;
  const Eigen::MatrixXd ds = s.asDiagonal() * d * s.asDiagonal() / omega_ref;
  const Eigen::MatrixXd cs = detail::solve_packed(ms, ds);

  LyapunovSolution out;
  out.covariance = s.cwiseInverse().asDiagonal() * cs * s.cwiseInverse().asDiagonal();
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
  if (d.norm() == 0.0) {
    out.covariance.setZero();
    out.residual = 0.0;
    return out;
  }
  out.residual = std::max(lyapunov_residual(m, d, out.covariance), lyapunov_residual(ms, ds, cs));
  if (!(out.residual <= kLyapunovTolerance)) {
    throw Error(ErrorCode::IllConditioned,
                "Lyapunov residual target unreachable; achieved " + std::to_string(out.residual));
  }
  return out;
}

inline LyapunovSolution solve_stationary(const StateMatrices& matrices) {
  return solve_stationary(matrices.drift, matrices.diffusion);
}

struct ModeTemperatures {
  std::vector<double> positional;  // m Omega^2 <u^2> / k_B
  std::vector<double> kinetic;     // m <v^2> / k_B
};

inline ModeTemperatures mode_temperatures(const Eigen::MatrixXd& c, const SystemModel& model) {
  ModeTemperatures t;
  for (std::size_t i = 0; i < model.size(); ++i) {
    const auto& o = model.oscillators[i];
    const auto u = static_cast<Eigen::Index>(position_index(i));
    const auto v = static_cast<Eigen::Index>(velocity_index(i));
    t.positional.push_back(std::max(0.0, o.mass * o.omega * o.omega * c(u, u) / kBoltzmann));
    t.kinetic.push_back(std::max(0.0, o.mass * c(v, v) / kBoltzmann));
  }
  return t;
}

/// Net power from bath i into its oscillator: injected stochastic power
/// S0/(2m) minus the power dissipated by the bath friction, 2 gamma m <v^2>.
/// Positive means bath -> mode.
inline std::vector<double> bath_heat_flux(const Eigen::MatrixXd& c, const SystemModel& model) {
  std::vector<double> p;
  for (std::size_t i = 0; i < model.size(); ++i) {
    const auto& o = model.oscillators[i];
    const auto v = static_cast<Eigen::Index>(velocity_index(i));
    p.push_back(model.thermal_noise_intensity(i) / (2.0 * o.mass) -
                2.0 * o.gamma * o.mass * c(v, v));
  }
  return p;
}

/// Flux-gap form 2 gamma k_B (T - T'_kin). Identical to bath_heat_flux when
/// the noise factor is 4.
inline std::vector<double> flux_gap_heat_flux(const Eigen::MatrixXd& c, const SystemModel& model) {
  const auto t = mode_temperatures(c, model);
  std::vector<double> p;
  for (std::size_t i = 0; i < model.size(); ++i) {
    const auto& o = model.oscillators[i];
    p.push_back(2.0 * o.gamma * kBoltzmann * (o.bath_temperature - t.kinetic[i]));
  }
  return p;
}

/// Mean power delivered by the feedback force A u + B v + dF_ext.
inline std::vector<double> feedback_heat_flux(const Eigen::MatrixXd& c, const SystemModel& model) {
  std::vector<double> p;
  for (std::size_t i = 0; i < model.size(); ++i) {
    const auto& o = model.oscillators[i];
    const auto fb = model.feedback(i);
    const auto u = static_cast<Eigen::Index>(position_index(i));
    const auto v = static_cast<Eigen::Index>(velocity_index(i));
    p.push_back(fb.noise_psd / (2.0 * o.mass) + fb.velocity_gain * c(v, v) +
                fb.position_gain * c(u, v));
  }
  return p;
}

struct SteadyState {
  Eigen::MatrixXd covariance;
  std::vector<double> mode_temperature_positional;
  std::vector<double> mode_temperature_kinetic;
  std::vector<double> bath_flux;
  std::vector<double> feedback_flux;
  double residual = 0.0;
  double balance_residual = 0.0;  // |sum of all fluxes| / gross injected noise power
};

inline constexpr double kBalanceTolerance = 1e-8;

/// Full stationary analysis. Rejects undamped oscillators.
inline SteadyState analyze(const SystemModel& model) {
  validate(model);
  for (const auto& o : model.oscillators) {
    if (!(o.gamma > 0.0)) {
      throw Error(ErrorCode::ZeroDamping,
                  "oscillator '" + o.label + "' has gamma = 0; stationary state not defined");
    }
  }
  const auto matrices = compile(model);
  const auto sol = solve_stationary(matrices);
  SteadyState s;
  s.covariance = sol.covariance;
  s.residual = sol.residual;
  const auto t = mode_temperatures(s.covariance, model);
  s.mode_temperature_positional = t.positional;
  s.mode_temperature_kinetic = t.kinetic;
  s.bath_flux = bath_heat_flux(s.covariance, model);
  s.feedback_flux = feedback_heat_flux(s.covariance, model);
  // Normalized by the power the noise sources inject, S / (2m) summed over
  // baths and feedback, which stays finite at equilibrium where net fluxes vanish.
  double total = 0.0;
  double scale = 0.0;
  for (std::size_t i = 0; i < model.size(); ++i) {
    total += s.bath_flux[i] + s.feedback_flux[i];
    const double m = model.oscillators[i].mass;
    scale += (model.thermal_noise_intensity(i) + model.feedback(i).noise_psd) / (2.0 * m) + std::abs(s.bath_flux[i]);
  }
  s.balance_residual = scale > 0.0 ? std::abs(total) / scale : std::abs(total);
  return s;
}

/// True when the energy balance closes to 1e-8 of the injected noise power.
inline bool energy_balanced(const SteadyState& s) { return s.balance_residual <= kBalanceTolerance; }

// ---------------------------------------------------------------------------
// Normal modes

struct NormalMode {
  double frequency = 0.0;  // rad/s, |Im lambda|
  double linewidth = 0.0;  // 1/s, -2 Re lambda
  std::complex<double> eigenvalue;
  Eigen::VectorXcd eigenvector;
};

struct ModeSplitting {
  std::size_t first = 0;
  std::size_t second = 0;
  double splitting = 0.0;  // rad/s
};

struct NormalModes {
  std::vector<NormalMode> modes;  // ascending frequency
  std::vector<ModeSplitting> splittings;
  bool defective = false;
};

inline constexpr double kDegeneracyThreshold = 1e-3;

/// Eigendecomposition of M. Conjugate pairs are reported once. Splittings are
/// reported for oscillator pairs whose bare frequencies agree within 1e-3.
inline NormalModes normal_modes(const StateMatrices& matrices, const SystemModel& model) {
  const Eigen::MatrixXd& m = matrices.drift;
  Eigen::EigenSolver<Eigen::MatrixXd> es(m, true);
  const Eigen::VectorXcd lambda = es.eigenvalues();
  const Eigen::MatrixXcd vecs = es.eigenvectors();

  NormalModes out;
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(vecs);
  const auto sv = svd.singularValues();
  out.defective = !(sv(sv.size() - 1) > 1e-10 * sv(0));

  for (Eigen::Index k = 0; k < lambda.size(); ++k) {
    const double scale = std::max(1.0, std::abs(lambda(k)));
    if (lambda(k).imag() < -1e-12 * scale) continue;
    NormalMode mode;
    mode.eigenvalue = lambda(k);
    mode.frequency = std::abs(lambda(k).imag()) <= 1e-12 * scale ? 0.0 : lambda(k).imag();
    mode.linewidth = -2.0 * lambda(k).real();
    mode.eigenvector = vecs.col(k);
    out.modes.push_back(std::move(mode));
  }
  std::stable_sort(out.modes.begin(), out.modes.end(),
                   [](const NormalMode& a, const NormalMode& b) { return a.frequency < b.frequency; });

  for (std::size_t i = 0; i < model.size(); ++i) {
    for (std::size_t j = i + 1; j < model.size(); ++j) {
      const double wi = model.oscillators[i].omega;
      const double wj = model.oscillators[j].omega;
      if (std::abs(wi - wj) > kDegeneracyThreshold * std::max(wi, wj)) continue;
      // Two oscillatory modes with the largest position weight on the pair.
      std::vector<std::pair<double, double>> weight_freq;
      for (const auto& mode : out.modes) {
        if (mode.frequency <= 0.0) continue;
        double pos_norm = 0.0;
        for (std::size_t k = 0; k < model.size(); ++k) {
          pos_norm += std::norm(mode.eigenvector(static_cast<Eigen::Index>(position_index(k))));
        }
        const double w =
            (std::norm(mode.eigenvector(static_cast<Eigen::Index>(position_index(i)))) +
             std::norm(mode.eigenvector(static_cast<Eigen::Index>(position_index(j))))) /
            std::max(pos_norm, std::numeric_limits<double>::min());
        weight_freq.emplace_back(w, mode.frequency);
      }
      if (weight_freq.size() < 2) continue;
      std::stable_sort(weight_freq.begin(), weight_freq.end(),
                       [](const auto& a, const auto& b) { return a.first > b.first; });
      out.splittings.push_back({i, j, std::abs(weight_freq[0].second - weight_freq[1].second)});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Analytic spectra

/// One-sided PSD (per Hz) of state component `index` at frequency f [Hz]:
/// S(f) = 2 [H D H^*]_{aa}, H = (i 2 pi f - M)^{-1}. Integrates to C_aa over [0, inf).
inline double stationary_psd(const StateMatrices& matrices, Eigen::Index index, double f) {
  const Eigen::Index n = matrices.drift.rows();
  const std::complex<double> iw(0.0, 2.0 * std::numbers::pi * f);
  const Eigen::MatrixXcd a = iw * Eigen::MatrixXcd::Identity(n, n) - matrices.drift.cast<std::complex<double>>();
  // Row `index` of H: solve A^T h = e_index.
  Eigen::VectorXcd e = Eigen::VectorXcd::Zero(n);
  e(index) = 1.0;
  const Eigen::VectorXcd h = a.transpose().partialPivLu().solve(e);
  std::complex<double> acc = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double dk = matrices.diffusion(k, k);
    if (dk != 0.0) acc += h(k) * dk * std::conj(h(k));
  }
  for (Eigen::Index k = 0; k < n; ++k) {
    for (Eigen::Index l = 0; l < n; ++l) {
      if (k != l && matrices.diffusion(k, l) != 0.0) acc += h(k) * matrices.diffusion(k, l) * std::conj(h(l));
    }
  }
  return 2.0 * acc.real();
}

namespace detail {

inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double fa,
                               double fm, double fb, double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
  return adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

}  // namespace detail

/// Exact variance of state component `index` contained in [f_lo, f_hi] Hz.
/// The interval is pre-split around every normal-mode peak so narrow
/// resonances are never stepped over.
inline double band_variance(const StateMatrices& matrices, const SystemModel& model, Eigen::Index index,
                            double f_lo, double f_hi) {
  if (!(f_hi > f_lo)) return 0.0;
  std::vector<double> cuts{f_lo, f_hi};
  const auto modes = normal_modes(matrices, model);
  for (const auto& mode : modes.modes) {
    const double fc = mode.frequency / (2.0 * std::numbers::pi);
    const double lw = std::max(mode.linewidth / (2.0 * std::numbers::pi), 1e-300);
    cuts.push_back(fc);
    for (double k : {0.25, 1.0, 4.0, 16.0, 64.0, 256.0}) {
      cuts.push_back(fc - k * lw);
      cuts.push_back(fc + k * lw);
    }
  }
  std::vector<double> pts;
  for (double c : cuts) {
    if (c >= f_lo && c <= f_hi) pts.push_back(c);
  }
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());

  const auto psd = [&](double f) { return stationary_psd(matrices, index, f); };
  double total = 0.0;
  const double c_aa = solve_stationary(matrices).covariance(index, index);
  const double tol = 1e-11 * std::max(c_aa, std::numeric_limits<double>::min());
  for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
    const double a = pts[k];
    const double b = pts[k + 1];
    const double fa = psd(a);
    const double fb = psd(b);
    const double fm = psd(0.5 * (a + b));
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    total += detail::adaptive_simpson(psd, a, b, fa, fm, fb, whole, tol / static_cast<double>(pts.size()), 40);
  }
  return total;
}

}  // namespace modeheat
