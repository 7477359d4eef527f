#pragma once

// Stochastic trajectories of the compiled linear system and their ensemble
// statistics.
//
// The default integrator is exact in distribution for a linear SDE: each step
// applies Phi = exp(M dt) and adds a Gaussian increment with covariance
// Q = int_0^dt exp(M s) D exp(M^T s) ds, both obtained once from Van Loan's
// block exponential. Euler-Maruyama is kept for cross-checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "modeheat/errors.hpp"
#include "modeheat/model.hpp"
#include "modeheat/rng.hpp"
#include "modeheat/steady.hpp"

namespace modeheat {

enum class Integrator { Exact, EulerMaruyama };
enum class InitialState { Zero, Stationary };

inline constexpr double kMaxStepPhase = 0.05;
inline constexpr std::uint64_t kDefaultSeed = 20191219;

struct SimConfig {
  double dt = 0.0;                   // s
  std::uint64_t n_steps = 0;         // recorded segment length in steps
  std::uint64_t burn_in = 0;         // discarded steps
  std::uint64_t seed = kDefaultSeed;
  std::size_t ensemble_size = 1;
  std::size_t record_stride = 1;
  Integrator integrator = Integrator::Exact;
  InitialState initial = InitialState::Zero;
  bool allow_coarse_step = false;    // permit dt * Omega_max > 0.05 (warns)
};

/// Largest |lambda| of the drift: the fastest rate the step must resolve.
inline double max_rate(const StateMatrices& matrices) {
  Eigen::EigenSolver<Eigen::MatrixXd> es(matrices.drift, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// Slowest decay rate, min over modes of -Re lambda.
inline double slowest_decay_rate(const StateMatrices& matrices) {
  Eigen::EigenSolver<Eigen::MatrixXd> es(matrices.drift, false);
  return (-es.eigenvalues().real()).minCoeff();
}

/// Burn-in of 10 / gamma_min seconds, expressed in steps.
inline std::uint64_t default_burn_in(const SystemModel& model, double dt) {
  double gmin = std::numeric_limits<double>::infinity();
  for (const auto& o : model.oscillators) {
    if (o.gamma > 0.0) gmin = std::min(gmin, o.gamma);
  }
  if (!std::isfinite(gmin)) return 0;
  return static_cast<std::uint64_t>(std::ceil(10.0 / (gmin * dt)));
}

/// Validates the configuration against the compiled system; returns warnings.
inline std::vector<std::string> check_sim_config(const SimConfig& config, const StateMatrices& matrices) {
  std::vector<std::string> warnings;
  if (!(config.dt > 0.0) || !std::isfinite(config.dt)) {
    throw Error(ErrorCode::ConfigError, "sim.dt must be > 0");
  }
  if (config.ensemble_size == 0 || config.record_stride == 0) {
    throw Error(ErrorCode::ConfigError, "sim.ensemble_size and sim.record_stride must be >= 1");
  }
  const double phase = config.dt * max_rate(matrices);
  if (phase > kMaxStepPhase * (1.0 + 1e-12)) {
    if (!config.allow_coarse_step) {
      throw Error(ErrorCode::StepTooLarge,
                  "dt * Omega_max = " + std::to_string(phase) + " exceeds " + std::to_string(kMaxStepPhase));
    }
    warnings.push_back("dt * Omega_max = " + std::to_string(phase) +
                       " exceeds 0.05; spectra are coarsely sampled");
  }
  const double rate = slowest_decay_rate(matrices);
  if (rate > 0.0 && config.initial == InitialState::Zero &&
      static_cast<double>(config.burn_in) * config.dt < 5.0 / rate) {
    warnings.push_back("burn-in shorter than 5 damping times of the slowest mode");
  }
  return warnings;
}

/// One-step map x' = Phi x + L z, z ~ N(0, I).
struct Propagator {
  Eigen::MatrixXd phi;
  Eigen::MatrixXd noise;  // L with L L^T = Q
};

/// Symmetric PSD square-root factor (eigenvalues clamped at zero).
inline Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& q) {
  const Eigen::MatrixXd sym = 0.5 * (q + q.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal();
}

inline Propagator make_propagator(const StateMatrices& matrices, double dt, Integrator integrator) {
  const Eigen::Index n = matrices.drift.rows();
  Propagator p;
  if (integrator == Integrator::EulerMaruyama) {
    p.phi = Eigen::MatrixXd::Identity(n, n) + matrices.drift * dt;
    p.noise = psd_factor(matrices.diffusion * dt);
    return p;
  }
  // Van Loan: exp([[-M, D], [0, M^T]] dt) = [[., G12], [0, G22]],
  // Phi = G22^T, Q = Phi G12. Positions are rescaled first for conditioning.
  Eigen::VectorXd s = Eigen::VectorXd::Ones(n);
  for (Eigen::Index i = 0; i + 1 < n; i += 2) {
    const double w = std::sqrt(std::abs(matrices.drift(i + 1, i)));
    if (w > 0.0) s(i) = w;
  }
  const Eigen::MatrixXd ms = s.asDiagonal() * matrices.drift * s.cwiseInverse().asDiagonal();
  const Eigen::MatrixXd ds = s.asDiagonal() * matrices.diffusion * s.asDiagonal();
  Eigen::MatrixXd block = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  block.topLeftCorner(n, n) = -ms * dt;
  block.topRightCorner(n, n) = ds * dt;
  block.bottomRightCorner(n, n) = ms.transpose() * dt;
  const Eigen::MatrixXd g = block.exp();
  const Eigen::MatrixXd phi_s = g.bottomRightCorner(n, n).transpose();
  const Eigen::MatrixXd q_s = phi_s * g.topRightCorner(n, n);
  p.phi = s.cwiseInverse().asDiagonal() * phi_s * s.asDiagonal();
  const Eigen::MatrixXd q = s.cwiseInverse().asDiagonal() * q_s * s.cwiseInverse().asDiagonal();
  p.noise = psd_factor(q);
  return p;
}

struct Trajectory {
  std::vector<double> times;
  // One row per recorded sample, columns (u_1, v_1, u_2, v_2, ...).
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> states;
  std::uint64_t fingerprint = 0;
  std::uint64_t seed = 0;
  std::uint64_t member = 0;
  double dt = 0.0;           // integration step
  double sample_spacing = 0.0;  // dt * record_stride

  std::size_t samples() const { return times.size(); }
  std::size_t oscillators() const { return static_cast<std::size_t>(states.cols()) / 2; }
  Eigen::VectorXd position(std::size_t i) const {
    return states.col(static_cast<Eigen::Index>(position_index(i)));
  }
  Eigen::VectorXd velocity(std::size_t i) const {
    return states.col(static_cast<Eigen::Index>(velocity_index(i)));
  }
};

/// Prepared integrator for one model and config; thread-safe to share.
class Simulator {
 public:
  Simulator(const SystemModel& model, const SimConfig& config)
      : model_(model), config_(config), matrices_(compile(model)) {
    warnings_ = check_sim_config(config_, matrices_);
    for (const auto& w : matrices_.warnings) warnings_.push_back(w);
    propagator_ = make_propagator(matrices_, config_.dt, config_.integrator);
    if (config_.initial == InitialState::Stationary) {
      stationary_factor_ = psd_factor(solve_stationary(matrices_).covariance);
    }
    fingerprint_ = fingerprint(model_);
  }

  const SystemModel& model() const { return model_; }
  const SimConfig& config() const { return config_; }
  const StateMatrices& matrices() const { return matrices_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  std::uint64_t model_fingerprint() const { return fingerprint_; }
  std::size_t records_per_member() const { return config_.n_steps / config_.record_stride; }

  /// Integrates member `index` and hands every recorded state to `visit`
  /// (time, pointer to 2N values). Nothing is stored.
  void run(std::uint64_t index, const std::function<void(double, const double*)>& visit) const {
    const Eigen::Index n = matrices_.drift.rows();
    RandomStream rng(config_.seed, index);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd next(n);
    Eigen::VectorXd z(n);
    if (config_.initial == InitialState::Stationary) {
      for (Eigen::Index k = 0; k < n; ++k) z(k) = rng.normal();
      x.noalias() = stationary_factor_ * z;
    }
    // Noise columns that are identically zero draw nothing (e.g. T = 0).
    std::vector<Eigen::Index> active;
    for (Eigen::Index k = 0; k < n; ++k) {
      if (propagator_.noise.col(k).cwiseAbs().maxCoeff() > 0.0) active.push_back(k);
    }
    const Eigen::MatrixXd& phi = propagator_.phi;
    const Eigen::MatrixXd& l = propagator_.noise;
    auto step = [&]() {
      next.noalias() = phi * x;
      for (Eigen::Index k : active) next += l.col(k) * rng.normal();
      x.swap(next);
    };
    for (std::uint64_t s = 0; s < config_.burn_in; ++s) step();
    const std::size_t stride = config_.record_stride;
    const std::size_t records = records_per_member();
    for (std::size_t r = 0; r < records; ++r) {
      for (std::size_t s = 0; s < stride; ++s) step();
      if (!x.allFinite()) {
        throw Error(ErrorCode::NonFiniteState, "state became non-finite at record " + std::to_string(r));
      }
      const double t = static_cast<double>(config_.burn_in + (r + 1) * stride) * config_.dt;
      visit(t, x.data());
    }
  }

  Trajectory trajectory(std::uint64_t index) const {
    Trajectory tr;
    const std::size_t records = records_per_member();
    const Eigen::Index n = matrices_.drift.rows();
    tr.states.resize(static_cast<Eigen::Index>(records), n);
    tr.times.reserve(records);
    tr.fingerprint = fingerprint_;
    tr.seed = config_.seed;
    tr.member = index;
    tr.dt = config_.dt;
    tr.sample_spacing = config_.dt * static_cast<double>(config_.record_stride);
    Eigen::Index row = 0;
    run(index, [&](double t, const double* x) {
      tr.times.push_back(t);
      tr.states.row(row++) = Eigen::Map<const Eigen::RowVectorXd>(x, n);
    });
    return tr;
  }

 private:
  SystemModel model_;
  SimConfig config_;
  StateMatrices matrices_;
  Propagator propagator_;
  Eigen::MatrixXd stationary_factor_;
  std::vector<std::string> warnings_;
  std::uint64_t fingerprint_ = 0;
};

/// Runs `body(index)` for index in [0, count) on up to `threads` workers.
/// Each index is processed exactly once; callers write results by index so
/// the outcome does not depend on scheduling.
inline void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& body) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t]() {
      try {
        for (std::size_t i = t; i < count; i += threads) body(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// One trajectory per ensemble member.
inline std::vector<Trajectory> simulate(const SystemModel& model, const SimConfig& config, std::size_t threads = 1) {
  const Simulator sim(model, config);
  std::vector<Trajectory> out(config.ensemble_size);
  parallel_for(config.ensemble_size, threads, [&](std::size_t i) { out[i] = sim.trajectory(i); });
  return out;
}

// ---------------------------------------------------------------------------
// Ensemble statistics

/// Batch sums of first and second moments for one member.
class MomentAccumulator {
 public:
  MomentAccumulator(std::size_t dim, std::size_t expected_samples, std::size_t batches)
      : dim_(dim), observables_(dim + dim * (dim + 1) / 2) {
    batches = std::max<std::size_t>(1, std::min(batches, std::max<std::size_t>(1, expected_samples)));
    batch_length_ = std::max<std::size_t>(1, expected_samples / batches);
    n_batches_ = batches;
    sums_.assign(n_batches_ * observables_, 0.0);
    counts_.assign(n_batches_, 0);
  }

  void add(const double* x) {
    const std::size_t b = std::min(seen_ / batch_length_, n_batches_ - 1);
    double* s = &sums_[b * observables_];
    for (std::size_t a = 0; a < dim_; ++a) s[a] += x[a];
    std::size_t k = dim_;
    for (std::size_t a = 0; a < dim_; ++a) {
      for (std::size_t c = a; c < dim_; ++c) s[k++] += x[a] * x[c];
    }
    ++counts_[b];
    ++seen_;
  }

  std::size_t dim() const { return dim_; }
  std::size_t observables() const { return observables_; }
  std::size_t batches() const { return n_batches_; }
  std::size_t samples() const { return seen_; }
  std::size_t batch_count(std::size_t b) const { return counts_[b]; }
  const double* batch_sums(std::size_t b) const { return &sums_[b * observables_]; }

 private:
  std::size_t dim_;
  std::size_t observables_;
  std::size_t batch_length_ = 1;
  std::size_t n_batches_ = 1;
  std::size_t seen_ = 0;
  std::vector<double> sums_;
  std::vector<std::size_t> counts_;
};

/// Total batches targeted across an ensemble; with many members each member is one batch.
inline constexpr std::size_t kTargetBatches = 32;

inline std::size_t batches_per_member(std::size_t ensemble_size) {
  return (kTargetBatches + ensemble_size - 1) / std::max<std::size_t>(1, ensemble_size);
}

struct EnsembleStats {
  std::uint64_t fingerprint = 0;
  std::size_t samples = 0;
  std::size_t batches = 0;
  Eigen::VectorXd mean;
  Eigen::VectorXd mean_se;
  Eigen::MatrixXd covariance;     // unbiased
  Eigen::MatrixXd covariance_se;  // batch-means standard errors
  Eigen::MatrixXd tau_int;        // integrated autocorrelation time, in samples
  Eigen::MatrixXd second_moment;  // raw <x_a x_c>
  std::vector<Eigen::MatrixXd> batch_second_moments;

  /// sum_ac w_ac <x_a x_c> (raw moments) with a batch-means error bar that
  /// accounts for correlations between the terms.
  std::pair<double, double> moment_combination(const Eigen::MatrixXd& w) const {
    const double value = w.cwiseProduct(second_moment).sum();
    const std::size_t nb = batch_second_moments.size();
    if (nb < 2) return {value, 0.0};
    double ss = 0.0;
    for (const auto& b : batch_second_moments) {
      const double d = w.cwiseProduct(b).sum() - value;
      ss += d * d;
    }
    return {value, std::sqrt(ss / static_cast<double>(nb - 1) / static_cast<double>(nb))};
  }

  double variance_position(std::size_t i) const {
    const auto u = static_cast<Eigen::Index>(position_index(i));
    return covariance(u, u);
  }
  double variance_velocity(std::size_t i) const {
    const auto v = static_cast<Eigen::Index>(velocity_index(i));
    return covariance(v, v);
  }
  double se_position(std::size_t i) const {
    const auto u = static_cast<Eigen::Index>(position_index(i));
    return covariance_se(u, u);
  }
  double se_velocity(std::size_t i) const {
    const auto v = static_cast<Eigen::Index>(velocity_index(i));
    return covariance_se(v, v);
  }
};

/// Reduces member accumulators in index order. Standard errors come from the
/// spread of batch means, which equals the naive error inflated by the
/// integrated autocorrelation time sqrt(2 tau_int).
inline EnsembleStats reduce_moments(const std::vector<MomentAccumulator>& members, std::uint64_t fingerprint) {
  if (members.empty()) throw Error(ErrorCode::ConfigError, "ensemble_stats needs at least one member");
  const std::size_t dim = members.front().dim();
  const std::size_t nobs = members.front().observables();
  std::vector<double> total(nobs, 0.0);
  std::vector<std::vector<double>> batch_means;
  std::size_t n = 0;
  for (const auto& m : members) {
    for (std::size_t b = 0; b < m.batches(); ++b) {
      const std::size_t c = m.batch_count(b);
      if (c == 0) continue;
      const double* s = m.batch_sums(b);
      std::vector<double> bm(nobs);
      for (std::size_t k = 0; k < nobs; ++k) {
        total[k] += s[k];
        bm[k] = s[k] / static_cast<double>(c);
      }
      batch_means.push_back(std::move(bm));
      n += c;
    }
  }
  EnsembleStats st;
  st.fingerprint = fingerprint;
  st.samples = n;
  st.batches = batch_means.size();
  const auto d = static_cast<Eigen::Index>(dim);
  st.mean = Eigen::VectorXd::Zero(d);
  st.mean_se = Eigen::VectorXd::Zero(d);
  st.covariance = Eigen::MatrixXd::Zero(d, d);
  st.covariance_se = Eigen::MatrixXd::Zero(d, d);
  st.tau_int = Eigen::MatrixXd::Zero(d, d);
  st.second_moment = Eigen::MatrixXd::Zero(d, d);
  if (n == 0) return st;
  auto unpack = [&](const std::vector<double>& obs) {
    Eigen::MatrixXd m2(d, d);
    std::size_t k = dim;
    for (Eigen::Index a = 0; a < d; ++a) {
      for (Eigen::Index c = a; c < d; ++c) m2(a, c) = m2(c, a) = obs[k++];
    }
    return m2;
  };
  for (const auto& bm : batch_means) st.batch_second_moments.push_back(unpack(bm));

  std::vector<double> mean(nobs);
  for (std::size_t k = 0; k < nobs; ++k) mean[k] = total[k] / static_cast<double>(n);
  std::vector<double> se(nobs, 0.0);
  const std::size_t nb = batch_means.size();
  if (nb > 1) {
    for (std::size_t k = 0; k < nobs; ++k) {
      double ss = 0.0;
      for (const auto& bm : batch_means) ss += (bm[k] - mean[k]) * (bm[k] - mean[k]);
      se[k] = std::sqrt(ss / static_cast<double>(nb - 1) / static_cast<double>(nb));
    }
  }
  st.second_moment = unpack(mean);
  for (std::size_t a = 0; a < dim; ++a) {
    st.mean(static_cast<Eigen::Index>(a)) = mean[a];
    st.mean_se(static_cast<Eigen::Index>(a)) = se[a];
  }
  const double bessel = n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
  std::size_t k = dim;
  for (std::size_t a = 0; a < dim; ++a) {
    for (std::size_t c = a; c < dim; ++c, ++k) {
      const auto ia = static_cast<Eigen::Index>(a);
      const auto ic = static_cast<Eigen::Index>(c);
      const double cov = std::max(a == c ? 0.0 : -std::numeric_limits<double>::infinity(),
                                  (mean[k] - mean[a] * mean[c]) * bessel);
      st.covariance(ia, ic) = st.covariance(ic, ia) = cov;
      st.covariance_se(ia, ic) = st.covariance_se(ic, ia) = se[k];
    }
  }
  // Gaussian (Isserlis) variance of each product observable x_a x_c.
  for (Eigen::Index a = 0; a < d; ++a) {
    for (Eigen::Index c = a; c < d; ++c) {
      const double var_obs = st.covariance(a, a) * st.covariance(c, c) + st.covariance(a, c) * st.covariance(a, c);
      const double se_k = st.covariance_se(a, c);
      const double tau = var_obs > 0.0 ? 0.5 * static_cast<double>(n) * se_k * se_k / var_obs : 0.0;
      st.tau_int(a, c) = st.tau_int(c, a) = tau;
    }
  }
  return st;
}

inline EnsembleStats ensemble_stats(const std::vector<Trajectory>& trajectories) {
  if (trajectories.empty()) throw Error(ErrorCode::ConfigError, "ensemble_stats needs at least one trajectory");
  const std::uint64_t fp = trajectories.front().fingerprint;
  std::vector<MomentAccumulator> acc;
  const std::size_t per_member = batches_per_member(trajectories.size());
  for (const auto& tr : trajectories) {
    if (tr.fingerprint != fp) {
      throw Error(ErrorCode::FingerprintMismatch, "trajectories come from different models");
    }
    MomentAccumulator m(static_cast<std::size_t>(tr.states.cols()), tr.samples(), per_member);
    for (Eigen::Index r = 0; r < tr.states.rows(); ++r) m.add(tr.states.row(r).data());
    acc.push_back(std::move(m));
  }
  return reduce_moments(acc, fp);
}

/// Streams every member through a moment accumulator without storing
/// trajectories; same result as ensemble_stats(simulate(...)).
inline EnsembleStats simulate_stats(const SystemModel& model, const SimConfig& config, std::size_t threads = 1) {
  const Simulator sim(model, config);
  const auto dim = static_cast<std::size_t>(sim.matrices().drift.rows());
  const std::size_t per_member = batches_per_member(config.ensemble_size);
  std::vector<MomentAccumulator> acc(config.ensemble_size,
                                     MomentAccumulator(dim, sim.records_per_member(), per_member));
  parallel_for(config.ensemble_size, threads, [&](std::size_t i) {
    sim.run(i, [&](double, const double* x) { acc[i].add(x); });
  });
  return reduce_moments(acc, sim.model_fingerprint());
}

struct Estimate {
  double value = 0.0;
  double se = 0.0;
};

/// |a - b| within k joint standard errors.
inline bool agree_within(const Estimate& a, const Estimate& b, double k = 4.0) {
  return std::abs(a.value - b.value) <= k * std::hypot(a.se, b.se);
}

inline bool agree_within(const Estimate& a, double exact, double k = 4.0) {
  return std::abs(a.value - exact) <= k * a.se;
}

/// Flux comparison within 4 joint SE plus a roundoff floor of 1e-10 of the
/// gross bath power 2 gamma k_B T; estimators with no contributing channel
/// are exactly zero with zero SE.
inline bool flux_agree(const Estimate& a, const Estimate& b, const OscillatorSpec& o) {
  const double floor = 1e-10 * 2.0 * o.gamma * kBoltzmann * o.bath_temperature;
  return std::abs(a.value - b.value) <= 4.0 * std::hypot(a.se, b.se) + floor;
}

inline bool flux_agree(const Estimate& a, double exact, const OscillatorSpec& o) {
  return flux_agree(a, Estimate{exact, 0.0}, o);
}

struct McTemperatures {
  std::vector<Estimate> positional;
  std::vector<Estimate> kinetic;
};

inline void check_fingerprint(const EnsembleStats& stats, const SystemModel& model) {
  if (stats.fingerprint != fingerprint(model)) {
    throw Error(ErrorCode::FingerprintMismatch, "statistics were generated by a different model");
  }
}

inline McTemperatures mode_temperature_mc(const EnsembleStats& stats, const SystemModel& model) {
  check_fingerprint(stats, model);
  McTemperatures t;
  for (std::size_t i = 0; i < model.size(); ++i) {
    const auto& o = model.oscillators[i];
    const double kpos = o.mass * o.omega * o.omega / kBoltzmann;
    const double kkin = o.mass / kBoltzmann;
    t.positional.push_back({kpos * stats.variance_position(i), kpos * stats.se_position(i)});
    t.kinetic.push_back({kkin * stats.variance_velocity(i), kkin * stats.se_velocity(i)});
  }
  return t;
}

/// Work-based bath flux: S0/(2m) - 2 gamma m <v^2>. The injected power's Ito
/// mean S0/(2m) is exact, so the error bar comes from the dissipation term.
inline Estimate direct_heat_flux_mc(const EnsembleStats& stats, const SystemModel& model, std::size_t oscillator) {
  check_fingerprint(stats, model);
  const auto& o = model.oscillators.at(oscillator);
  const double injected = model.thermal_noise_intensity(oscillator) / (2.0 * o.mass);
  // <v^2> including the mean, as the dissipated power is 2 gamma m v^2.
  const auto v = static_cast<Eigen::Index>(velocity_index(oscillator));
  const double v2 = stats.covariance(v, v) + stats.mean(v) * stats.mean(v);
  return {injected - 2.0 * o.gamma * o.mass * v2, 2.0 * o.gamma * o.mass * stats.covariance_se(v, v)};
}

inline Estimate direct_heat_flux_mc(const std::vector<Trajectory>& trajectories, const SystemModel& model,
                                    std::size_t oscillator) {
  return direct_heat_flux_mc(ensemble_stats(trajectories), model, oscillator);
}

/// Flux-gap estimate 2 gamma k_B (T - T'_kin) from the same statistics.
inline Estimate gap_heat_flux_mc(const EnsembleStats& stats, const SystemModel& model, std::size_t oscillator) {
  const auto t = mode_temperature_mc(stats, model);
  const auto& o = model.oscillators.at(oscillator);
  const double c = 2.0 * o.gamma * kBoltzmann;
  return {c * (o.bath_temperature - t.kinetic[oscillator].value), c * t.kinetic[oscillator].se};
}

/// Bath flux read off the other channels. In the stationary state the bath
/// supplies what the springs and the feedback carry away, so
/// P_bath = -m sum_k M'_{v k} <x_k v> - S_ext/(2m), where M' is the velocity
/// row of the drift without the bare restoring force and the bath damping.
/// Uses cross moments that neither bath-side estimator touches.
inline Estimate exchange_heat_flux_mc(const EnsembleStats& stats, const SystemModel& model, std::size_t oscillator) {
  check_fingerprint(stats, model);
  const auto& o = model.oscillators.at(oscillator);
  const auto drift = compile(model).drift;
  const auto u = static_cast<Eigen::Index>(position_index(oscillator));
  const auto v = static_cast<Eigen::Index>(velocity_index(oscillator));
  Eigen::RowVectorXd row = drift.row(v);
  row(u) += o.omega * o.omega;
  row(v) += 2.0 * o.gamma;
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(drift.rows(), drift.cols());
  // Symmetric weights on the symmetric moment matrix.
  for (Eigen::Index k = 0; k < drift.cols(); ++k) {
    w(k, v) += 0.5 * o.mass * row(k);
    w(v, k) += 0.5 * o.mass * row(k);
  }
  const auto [value, se] = stats.moment_combination(w);
  return {-value - model.feedback(oscillator).noise_psd / (2.0 * o.mass), se};
}

}  // namespace modeheat
