#pragma once

// Spectral thermometry: Welch PSD estimates of displacement records, mode
// temperature from the band area of the noise spectrum, Lorentzian peak fits,
// and the coupling rate from the normal-mode frequency splitting.
//
// Conventions: one-sided PSD in m^2/Hz on a uniform grid from 0 to Nyquist.
// The full-band sum of values * bin_width equals the variance of the analyzed
// (segment-mean-removed) samples.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include "modeheat/errors.hpp"
#include "modeheat/langevin.hpp"
#include "modeheat/levenberg_marquardt.hpp"
#include "modeheat/model.hpp"
#include "modeheat/steady.hpp"

namespace modeheat {

enum class Window { Hann, Rectangular };

inline std::string to_string(Window w) { return w == Window::Hann ? "hann" : "rectangular"; }

inline std::vector<double> window_coefficients(Window w, std::size_t length) {
  std::vector<double> c(length, 1.0);
  if (w == Window::Hann && length > 1) {
    // Periodic Hann, the usual choice for spectral estimation.
    for (std::size_t k = 0; k < length; ++k) {
      c[k] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(length));
    }
  }
  return c;
}

struct Psd {
  std::vector<double> frequencies;  // Hz
  std::vector<double> values;       // m^2/Hz
  double bin_width = 0.0;           // Hz, fs / segment_length
  double resolution_bandwidth = 0.0;  // Hz, one bin
  double enbw_bins = 1.0;           // equivalent noise bandwidth of the window, in bins
  double effective_segments = 0.0;  // independent averages after overlap correlation
  std::size_t n_segments = 0;
  std::size_t segment_length = 0;
  Window window = Window::Hann;

  double total_area() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s * bin_width;
  }
};

/// Accumulates windowed periodograms over one or more records.
class WelchAccumulator {
 public:
  WelchAccumulator(std::size_t segment_length, double overlap_fraction, Window window, double sample_spacing)
      : length_(segment_length), window_(window), spacing_(sample_spacing) {
    if (segment_length < 2) throw Error(ErrorCode::RecordTooShort, "segment_length must be >= 2");
    if (!(overlap_fraction >= 0.0 && overlap_fraction <= 0.9)) {
      throw Error(ErrorCode::ConfigError, "overlap_fraction must lie in [0, 0.9]");
    }
    if (!(sample_spacing > 0.0)) throw Error(ErrorCode::ConfigError, "sample spacing must be > 0");
    hop_ = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(
                                        static_cast<double>(segment_length) * (1.0 - overlap_fraction))));
    coeffs_ = window_coefficients(window, length_);
    power_.assign(length_ / 2 + 1, 0.0);
    buffer_.resize(length_);
  }

  std::size_t segment_length() const { return length_; }

  void add_record(std::span<const double> record) {
    if (record.size() < length_) {
      throw Error(ErrorCode::RecordTooShort, "record of " + std::to_string(record.size()) +
                                                 " samples is shorter than segment_length " + std::to_string(length_));
    }
    for (std::size_t start = 0; start + length_ <= record.size(); start += hop_) {
      double mean = 0.0;
      for (std::size_t k = 0; k < length_; ++k) mean += record[start + k];
      mean /= static_cast<double>(length_);
      for (std::size_t k = 0; k < length_; ++k) buffer_[k] = (record[start + k] - mean) * coeffs_[k];
      fft_.fwd(spectrum_, buffer_);
      for (std::size_t k = 0; k < power_.size(); ++k) power_[k] += std::norm(spectrum_[k]);
      ++segments_;
    }
  }

  std::size_t segments() const { return segments_; }

  /// Adds another accumulator's periodograms (same segment settings).
  void merge(const WelchAccumulator& other) {
    if (other.length_ != length_ || other.hop_ != hop_ || other.window_ != window_) {
      throw Error(ErrorCode::ConfigError, "cannot merge Welch accumulators with different settings");
    }
    for (std::size_t k = 0; k < power_.size(); ++k) power_[k] += other.power_[k];
    segments_ += other.segments_;
  }

  Psd result() const {
    if (segments_ == 0) throw Error(ErrorCode::RecordTooShort, "no complete segment was analyzed");
    const double fs = 1.0 / spacing_;
    double u = 0.0;
    double s1 = 0.0;
    for (double w : coeffs_) {
      u += w * w;
      s1 += w;
    }
    Psd psd;
    psd.window = window_;
    psd.segment_length = length_;
    psd.n_segments = segments_;
    psd.bin_width = fs / static_cast<double>(length_);
    psd.resolution_bandwidth = psd.bin_width;
    psd.enbw_bins = static_cast<double>(length_) * u / (s1 * s1);
    // Overlapping windowed segments are correlated; Welch's variance factor.
    double corr = 0.0;
    for (std::size_t lag = hop_; lag < length_; lag += hop_) {
      double c = 0.0;
      for (std::size_t k = 0; k + lag < length_; ++k) c += coeffs_[k] * coeffs_[k + lag];
      const double rho = c / u;
      corr += rho * rho;
    }
    psd.effective_segments = static_cast<double>(segments_) / (1.0 + 2.0 * corr);
    const double norm = 1.0 / (fs * u * static_cast<double>(segments_));
    for (std::size_t k = 0; k < power_.size(); ++k) {
      const bool edge = k == 0 || (length_ % 2 == 0 && k == length_ / 2);
      psd.frequencies.push_back(static_cast<double>(k) * psd.bin_width);
      psd.values.push_back((edge ? 1.0 : 2.0) * power_[k] * norm);
    }
    return psd;
  }

 private:
  std::size_t length_;
  std::size_t hop_ = 1;
  Window window_;
  double spacing_;
  std::vector<double> coeffs_;
  std::vector<double> power_;
  std::vector<double> buffer_;
  std::vector<std::complex<double>> spectrum_;
  std::size_t segments_ = 0;
  mutable Eigen::FFT<double> fft_;
};

/// Largest 2^a 3^b 5^c not exceeding n (fast FFT sizes).
inline std::size_t smooth_length_below(std::size_t n) {
  std::size_t best = 1;
  for (std::size_t p2 = 1; p2 <= n; p2 *= 2) {
    for (std::size_t p3 = p2; p3 <= n; p3 *= 3) {
      for (std::size_t p5 = p3; p5 <= n; p5 *= 5) best = std::max(best, p5);
    }
  }
  return best;
}

/// max(record / 16, 32 / gamma in samples), clipped to the record and rounded
/// down to a fast FFT size.
inline std::size_t default_segment_length(std::size_t record_length, double gamma, double sample_spacing) {
  const auto by_count = record_length / 16;
  const auto by_linewidth = gamma > 0.0 ? static_cast<std::size_t>(std::ceil(32.0 / (gamma * sample_spacing))) : 0;
  return smooth_length_below(std::max<std::size_t>(2, std::min(record_length, std::max(by_count, by_linewidth))));
}

inline Psd welch_psd(std::span<const double> record, double sample_spacing, std::size_t segment_length,
                     double overlap_fraction = 0.5, Window window = Window::Hann) {
  WelchAccumulator acc(segment_length, overlap_fraction, window, sample_spacing);
  acc.add_record(record);
  return acc.result();
}

/// Welch PSD of oscillator `oscillator`'s displacement, averaged over all
/// segments of all given trajectories.
inline Psd welch_psd(const std::vector<Trajectory>& trajectories, std::size_t oscillator, std::size_t segment_length,
                     double overlap_fraction = 0.5, Window window = Window::Hann) {
  if (trajectories.empty()) throw Error(ErrorCode::RecordTooShort, "no trajectories");
  WelchAccumulator acc(segment_length, overlap_fraction, window, trajectories.front().sample_spacing);
  for (const auto& tr : trajectories) {
    if (tr.fingerprint != trajectories.front().fingerprint) {
      throw Error(ErrorCode::FingerprintMismatch, "trajectories come from different models");
    }
    const Eigen::VectorXd u = tr.position(oscillator);
    acc.add_record(std::span<const double>(u.data(), static_cast<std::size_t>(u.size())));
  }
  return acc.result();
}

inline Psd welch_psd(const Trajectory& trajectory, std::size_t oscillator, std::size_t segment_length,
                     double overlap_fraction = 0.5, Window window = Window::Hann) {
  return welch_psd(std::vector<Trajectory>{trajectory}, oscillator, segment_length, overlap_fraction, window);
}

struct Band {
  double lo = 0.0;  // Hz
  double hi = 0.0;  // Hz
};

/// Band covering every normal mode with position weight on `oscillator`,
/// padded by `linewidths` full widths on each side, clipped at 0 Hz.
inline Band default_band(const SystemModel& model, std::size_t oscillator, double linewidths = 20.0) {
  const auto matrices = compile(model);
  const auto modes = normal_modes(matrices, model);
  Band b{std::numeric_limits<double>::infinity(), 0.0};
  const auto u = static_cast<Eigen::Index>(position_index(oscillator));
  for (const auto& mode : modes.modes) {
    double pos_norm = 0.0;
    for (std::size_t k = 0; k < model.size(); ++k) {
      pos_norm += std::norm(mode.eigenvector(static_cast<Eigen::Index>(position_index(k))));
    }
    if (pos_norm <= 0.0 || std::norm(mode.eigenvector(u)) / pos_norm < 1e-2) continue;
    const double fc = mode.frequency / (2.0 * std::numbers::pi);
    const double fwhm = mode.linewidth / (2.0 * std::numbers::pi);
    b.lo = std::min(b.lo, fc - linewidths * fwhm);
    b.hi = std::max(b.hi, fc + linewidths * fwhm);
  }
  b.lo = std::max(0.0, b.lo);
  return b;
}

struct BandTemperature {
  Estimate temperature;        // K
  double band_area = 0.0;      // m^2
  double captured_fraction = 0.0;  // band area / full-band area
  bool low_capture = false;    // band holds < 50% of the variance
};

/// T' = m Omega^2 (band area) / k_B. The error bar treats each bin estimate
/// as chi-square with 2 n_eff degrees of freedom and bins as correlated over
/// the window's equivalent noise bandwidth.
inline BandTemperature temperature_from_area(const Psd& psd, const SystemModel& model, std::size_t oscillator,
                                             Band band) {
  if (psd.frequencies.empty()) throw Error(ErrorCode::BandOutOfRange, "empty PSD");
  const double fmax = psd.frequencies.back();
  if (!(band.lo >= 0.0 && band.hi <= fmax + 0.5 * psd.bin_width && band.hi > band.lo)) {
    throw Error(ErrorCode::BandOutOfRange, "band [" + std::to_string(band.lo) + ", " + std::to_string(band.hi) +
                                               "] Hz lies outside the PSD grid [0, " + std::to_string(fmax) + "]");
  }
  double area = 0.0;
  double var_sum = 0.0;
  for (std::size_t k = 0; k < psd.frequencies.size(); ++k) {
    const double f = psd.frequencies[k];
    if (f < band.lo || f > band.hi) continue;
    const double a = psd.values[k] * psd.bin_width;
    area += a;
    var_sum += a * a;
  }
  const auto& o = model.oscillators.at(oscillator);
  const double scale = o.mass * o.omega * o.omega / kBoltzmann;
  BandTemperature out;
  out.band_area = area;
  const double se_area = std::sqrt(var_sum * psd.enbw_bins / std::max(psd.effective_segments, 1.0));
  out.temperature = {scale * area, scale * se_area};
  const double total = psd.total_area();
  out.captured_fraction = total > 0.0 ? area / total : 0.0;
  out.low_capture = out.captured_fraction < 0.5;
  return out;
}

// ---------------------------------------------------------------------------
// Lorentzian fits

struct PeakFit {
  double center = 0.0;       // Hz
  double fwhm = 0.0;         // Hz
  double fwhm_gamma = 0.0;   // 1/s, damping half-rate pi * fwhm
  double area = 0.0;         // m^2
  double background = 0.0;   // m^2/Hz
  double goodness = 0.0;     // rms residual / peak height
  double center_se = 0.0;
  bool converged = false;
  bool suspect = false;      // no credible peak in the band
};

struct LorentzianGuess {
  double center = 0.0;
  double fwhm = 0.0;
  double area = 0.0;
  double background = 0.0;
};

inline double lorentzian(double f, double center, double fwhm, double area) {
  const double h = 0.5 * fwhm;
  return area / std::numbers::pi * h / ((f - center) * (f - center) + h * h);
}

namespace detail {

struct BandData {
  std::vector<double> f;
  std::vector<double> y;
  double f0 = 0.0;     // normalization offset
  double width = 1.0;  // normalization scale for f
  double ymax = 1.0;
};

inline BandData extract_band(const Psd& psd, Band band) {
  BandData d;
  for (std::size_t k = 0; k < psd.frequencies.size(); ++k) {
    if (psd.frequencies[k] >= band.lo && psd.frequencies[k] <= band.hi) {
      d.f.push_back(psd.frequencies[k]);
      d.y.push_back(psd.values[k]);
    }
  }
  if (d.f.size() < 8) {
    throw Error(ErrorCode::DegenerateBand, "band holds " + std::to_string(d.f.size()) + " points; need >= 8");
  }
  d.f0 = 0.5 * (d.f.front() + d.f.back());
  d.width = std::max(d.f.back() - d.f.front(), std::numeric_limits<double>::min());
  d.ymax = *std::max_element(d.y.begin(), d.y.end());
  if (!(d.ymax > 0.0)) d.ymax = 1.0;
  return d;
}

// Sum of Lorentzians plus flat background in normalized units:
// p = (c_1, w_1, a_1, ..., c_n, w_n, a_n, bg).
inline void peaks_model(const BandData& d, const Eigen::VectorXd& p, Eigen::VectorXd& r, Eigen::MatrixXd& j) {
  const Eigen::Index npk = (p.size() - 1) / 3;
  for (std::size_t k = 0; k < d.f.size(); ++k) {
    const double x = (d.f[k] - d.f0) / d.width;
    double model = p(p.size() - 1);
    const auto row = static_cast<Eigen::Index>(k);
    for (Eigen::Index q = 0; q < npk; ++q) {
      const double c = p(3 * q);
      const double w = p(3 * q + 1);
      const double a = p(3 * q + 2);
      const double h = 0.5 * w;
      const double dx = x - c;
      const double den = dx * dx + h * h;
      const double val = a / std::numbers::pi * h / den;
      model += val;
      j(row, 3 * q) = a / std::numbers::pi * h * 2.0 * dx / (den * den);
      j(row, 3 * q + 1) = a / std::numbers::pi * 0.5 * (dx * dx - h * h) / (den * den);
      j(row, 3 * q + 2) = val / (a == 0.0 ? 1.0 : a);
      if (a == 0.0) j(row, 3 * q + 2) = h / (std::numbers::pi * den);
    }
    j(row, p.size() - 1) = 1.0;
    r(row) = model - d.y[k] / d.ymax;
  }
}

inline std::vector<PeakFit> fit_peaks(const BandData& d, const std::vector<LorentzianGuess>& guesses,
                                      double background_guess) {
  const auto npk = static_cast<Eigen::Index>(guesses.size());
  Eigen::VectorXd p(3 * npk + 1);
  for (Eigen::Index q = 0; q < npk; ++q) {
    const auto& g = guesses[static_cast<std::size_t>(q)];
    p(3 * q) = (g.center - d.f0) / d.width;
    p(3 * q + 1) = std::max(g.fwhm, 1e-9 * d.width) / d.width;
    p(3 * q + 2) = g.area / (d.ymax * d.width);
  }
  p(3 * npk) = background_guess / d.ymax;
  const auto m = static_cast<Eigen::Index>(d.f.size());
  const auto res = levenberg_marquardt(
      [&](const Eigen::VectorXd& pp, Eigen::VectorXd& r, Eigen::MatrixXd& j) { peaks_model(d, pp, r, j); }, p, m);

  const double rms = std::sqrt(res.ssr / static_cast<double>(std::max<Eigen::Index>(1, m - p.size())));
  std::vector<PeakFit> fits;
  for (Eigen::Index q = 0; q < npk; ++q) {
    PeakFit fit;
    fit.center = d.f0 + res.params(3 * q) * d.width;
    fit.fwhm = std::abs(res.params(3 * q + 1)) * d.width;
    fit.fwhm_gamma = std::numbers::pi * fit.fwhm;
    // area * sign(w) keeps the fitted curve unchanged under w -> -w.
    fit.area = res.params(3 * q + 2) * (res.params(3 * q + 1) < 0.0 ? -1.0 : 1.0) * d.ymax * d.width;
    fit.background = res.params(3 * npk) * d.ymax;
    fit.center_se = std::sqrt(std::max(0.0, res.covariance(3 * q, 3 * q))) * d.width;
    const double height = fit.fwhm > 0.0 ? 2.0 * std::max(fit.area, 0.0) / (std::numbers::pi * fit.fwhm) : 0.0;
    fit.goodness = height > 0.0 ? rms * d.ymax / height : std::numeric_limits<double>::infinity();
    fit.converged = res.converged;
    fit.suspect = !res.converged || !(fit.area > 0.0) || !(fit.fwhm > 0.0) || fit.center < d.f.front() ||
                  fit.center > d.f.back() || fit.fwhm > d.width || fit.goodness > 0.2;
    fits.push_back(fit);
  }
  return fits;
}

}  // namespace detail

/// Least-squares fit of background + Lorentzian over the band.
inline PeakFit fit_lorentzian(const Psd& psd, const LorentzianGuess& guess, Band band) {
  if (!(guess.center >= band.lo && guess.center <= band.hi)) {
    throw Error(ErrorCode::BandOutOfRange, "initial guess center lies outside the fit band");
  }
  const auto d = detail::extract_band(psd, band);
  return detail::fit_peaks(d, {guess}, guess.background).front();
}

/// Initial guess from the band's spectral moments.
inline LorentzianGuess moment_guess(const Psd& psd, Band band) {
  const auto d = detail::extract_band(psd, band);
  const double floor = *std::min_element(d.y.begin(), d.y.end());
  double s0 = 0.0;
  std::size_t peak = 0;
  for (std::size_t k = 0; k < d.f.size(); ++k) {
    s0 += d.y[k] - floor;
    if (d.y[k] > d.y[peak]) peak = k;
  }
  LorentzianGuess g;
  const double bw = d.f[1] - d.f[0];
  g.center = d.f[peak];
  g.area = s0 * bw;
  const double height = d.y[peak] - floor;
  g.fwhm = height > 0.0 ? 2.0 * g.area / (std::numbers::pi * height) : bw;
  g.background = floor;
  return g;
}

struct SplittingFit {
  PeakFit lower;
  PeakFit upper;
  Estimate g;  // rad/s
};

/// Two-peak initialization: the band centroid splits the band, each half's
/// maximum seeds a peak, and the minimum between the maxima (the valley)
/// separates the moment sums used for widths and areas.
inline std::vector<LorentzianGuess> two_peak_guess(const Psd& psd, Band band) {
  const auto d = detail::extract_band(psd, band);
  const double bw = d.f[1] - d.f[0];
  const double floor = *std::min_element(d.y.begin(), d.y.end());
  double s0 = 0.0;
  double s1 = 0.0;
  for (std::size_t k = 0; k < d.f.size(); ++k) {
    s0 += d.y[k] - floor;
    s1 += (d.y[k] - floor) * d.f[k];
  }
  const double centroid = s0 > 0.0 ? s1 / s0 : 0.5 * (d.f.front() + d.f.back());
  std::size_t split = 0;
  while (split + 1 < d.f.size() && d.f[split + 1] <= centroid) ++split;
  split = std::clamp<std::size_t>(split, 1, d.f.size() - 2);
  const auto left_peak = static_cast<std::size_t>(std::max_element(d.y.begin(), d.y.begin() + static_cast<long>(split) + 1) - d.y.begin());
  const auto right_peak = static_cast<std::size_t>(std::max_element(d.y.begin() + static_cast<long>(split) + 1, d.y.end()) - d.y.begin());
  const auto valley = static_cast<std::size_t>(
      std::min_element(d.y.begin() + static_cast<long>(left_peak), d.y.begin() + static_cast<long>(right_peak) + 1) -
      d.y.begin());

  auto side = [&](std::size_t from, std::size_t to, std::size_t peak) {
    double area = 0.0;
    for (std::size_t k = from; k < to; ++k) area += (d.y[k] - floor) * bw;
    LorentzianGuess g;
    g.center = d.f[peak];
    g.area = area;
    const double height = d.y[peak] - floor;
    g.fwhm = height > 0.0 ? std::max(bw, 2.0 * area / (std::numbers::pi * height)) : bw;
    g.background = floor;
    return g;
  };
  return {side(0, valley, left_peak), side(valley, d.f.size(), right_peak)};
}

/// g = pi (f_+ - f_-) from a two-Lorentzian fit of the PSD.
inline SplittingFit coupling_from_splitting(const Psd& psd, Band band) {
  const auto d = detail::extract_band(psd, band);
  const auto guesses = two_peak_guess(psd, band);
  auto fits = detail::fit_peaks(d, guesses, guesses.front().background);
  if (fits[0].center > fits[1].center) std::swap(fits[0], fits[1]);
  SplittingFit out{fits[0], fits[1], {}};
  const double separation = out.upper.center - out.lower.center;
  const bool resolved = separation > 2.0 * psd.resolution_bandwidth && separation > out.lower.fwhm &&
                        separation > out.upper.fwhm && !out.lower.suspect && !out.upper.suspect;
  if (!resolved) {
    throw Error(ErrorCode::UnresolvedSplitting,
                "peaks not separable: separation " + std::to_string(separation) + " Hz, linewidths " +
                    std::to_string(out.lower.fwhm) + " / " + std::to_string(out.upper.fwhm) + " Hz");
  }
  out.g = {std::numbers::pi * separation, std::numbers::pi * std::hypot(out.lower.center_se, out.upper.center_se)};
  return out;
}

/// Exact route: half the splitting reported by the normal-mode analysis.
inline Estimate coupling_from_splitting(const NormalModes& modes, const SystemModel& model, const std::string& first,
                                        const std::string& second) {
  const auto i = model.index_of(first);
  const auto j = model.index_of(second);
  double widest = 0.0;
  for (const auto& m : modes.modes) widest = std::max(widest, m.linewidth);
  for (const auto& s : modes.splittings) {
    if ((s.first == i && s.second == j) || (s.first == j && s.second == i)) {
      if (!(s.splitting > widest)) {
        throw Error(ErrorCode::UnresolvedSplitting, "normal-mode splitting is below the linewidth");
      }
      return {0.5 * s.splitting, 0.0};
    }
  }
  throw Error(ErrorCode::UnresolvedSplitting, "pair '" + first + "'/'" + second + "' is not degenerate");
}

}  // namespace modeheat
