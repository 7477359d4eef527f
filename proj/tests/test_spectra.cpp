#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "fixtures.hpp"
#include "modeheat/rng.hpp"
#include "modeheat/spectra.hpp"

using namespace modeheat;
using namespace modeheat::testing;

namespace {

SystemModel slow_fixture() { return single(1e-12, kTwoPi * 100.0, 10.0, 300.0); }

// Sampled trajectories with stride so the record spans many linewidths.
std::vector<Trajectory> record(const SystemModel& m, double seconds, std::size_t members, std::size_t stride,
                               std::uint64_t seed = 3) {
  SimConfig c;
  c.dt = kMaxStepPhase / max_rate(compile(m));
  c.record_stride = stride;
  c.n_steps = static_cast<std::uint64_t>(seconds / c.dt);
  c.ensemble_size = members;
  c.seed = seed;
  c.initial = InitialState::Stationary;
  return simulate(m, c);
}

Psd synthetic_lorentzian(double center, double fwhm, double area, double background) {
  Psd p;
  p.bin_width = p.resolution_bandwidth = 0.5;
  for (int k = 0; k < 400; ++k) {
    p.frequencies.push_back(k * 0.5);
    p.values.push_back(background + lorentzian(k * 0.5, center, fwhm, area));
  }
  p.n_segments = 1;
  p.effective_segments = 1.0;
  return p;
}

}  // namespace

TEST(Welch, SinusoidConcentratesInOneBin) {
  const double a = 2.5;
  const std::size_t len = 1000;
  const double spacing = 1e-3;
  const double f0 = 50.0;  // 50 periods per 1 s segment
  std::vector<double> x(4 * len);
  for (std::size_t k = 0; k < x.size(); ++k) x[k] = a * std::sin(kTwoPi * f0 * static_cast<double>(k) * spacing);
  const auto psd = welch_psd(x, spacing, len, 0.0, Window::Rectangular);
  EXPECT_EQ(psd.n_segments, 4u);
  const auto peak = static_cast<std::size_t>(std::max_element(psd.values.begin(), psd.values.end()) - psd.values.begin());
  EXPECT_DOUBLE_EQ(psd.frequencies[peak], f0);
  EXPECT_NEAR(psd.values[peak] * psd.bin_width, a * a / 2.0, 1e-6 * a * a / 2.0);
  EXPECT_NEAR(psd.total_area(), a * a / 2.0, 1e-6 * a * a / 2.0);
}

TEST(Welch, ParsevalExactForRectangularSegments) {
  RandomStream r(9, 0);
  std::vector<double> x(8192);
  for (auto& v : x) v = 3.0 * r.normal() + 1.0;
  const auto psd = welch_psd(x, 0.01, 1024, 0.0, Window::Rectangular);
  // Oracle: mean over segments of the segment's population variance.
  double expected = 0.0;
  for (std::size_t s = 0; s < 8; ++s) {
    double mean = 0.0;
    for (std::size_t k = 0; k < 1024; ++k) mean += x[s * 1024 + k];
    mean /= 1024.0;
    double ss = 0.0;
    for (std::size_t k = 0; k < 1024; ++k) ss += (x[s * 1024 + k] - mean) * (x[s * 1024 + k] - mean);
    expected += ss / 1024.0 / 8.0;
  }
  EXPECT_NEAR(psd.total_area(), expected, 1e-12 * expected);
  for (double v : psd.values) EXPECT_GE(v, 0.0);
}

TEST(Welch, WhiteNoiseAreaEqualsVariance) {
  RandomStream r(10, 0);
  const double sigma = 1.7e-9;
  std::vector<double> x(1 << 20);
  for (auto& v : x) v = sigma * r.normal();
  const auto psd = welch_psd(x, 1e-4, 4096);
  EXPECT_NEAR(psd.total_area(), sigma * sigma, 0.01 * sigma * sigma);
  // Flat: the band [10%, 90%] of Nyquist averages to sigma^2 / f_nyquist.
  const double level = sigma * sigma / psd.frequencies.back();
  double mean = 0.0;
  int count = 0;
  for (std::size_t k = 0; k < psd.values.size(); ++k) {
    if (psd.frequencies[k] > 0.1 * psd.frequencies.back() && psd.frequencies[k] < 0.9 * psd.frequencies.back()) {
      mean += psd.values[k];
      ++count;
    }
  }
  EXPECT_NEAR(mean / count, level, 0.01 * level);
  EXPECT_EQ(psd.frequencies.front(), 0.0);
  EXPECT_DOUBLE_EQ(psd.frequencies.back(), 0.5 / 1e-4);
}

TEST(Welch, Errors) {
  std::vector<double> x(100, 1.0);
  try {
    welch_psd(x, 1.0, 128);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::RecordTooShort);
  }
  EXPECT_THROW(welch_psd(x, 1.0, 64, 0.95), Error);
}

TEST(FitLorentzian, RecoversNoiselessParameters) {
  const auto psd = synthetic_lorentzian(100.3, 4.2, 2e-18, 1e-22);
  const auto fit = fit_lorentzian(psd, {98.0, 6.0, 1.5e-18, 0.0}, {60.0, 140.0});
  EXPECT_TRUE(fit.converged);
  EXPECT_FALSE(fit.suspect);
  EXPECT_NEAR(fit.center, 100.3, 1e-6 * 100.3);
  EXPECT_NEAR(fit.fwhm, 4.2, 1e-6 * 4.2);
  EXPECT_NEAR(fit.area, 2e-18, 1e-6 * 2e-18);
  EXPECT_NEAR(fit.background, 1e-22, 1e-6 * 1e-22 + 1e-6 * 2e-18 / 4.2);
  EXPECT_NEAR(fit.fwhm_gamma, std::numbers::pi * 4.2, 1e-6 * std::numbers::pi * 4.2);
}

TEST(FitLorentzian, FlatSpectrumIsFlagged) {
  Psd p;
  p.bin_width = 1.0;
  for (int k = 0; k < 100; ++k) {
    p.frequencies.push_back(k);
    p.values.push_back(1e-20);
  }
  const auto fit = fit_lorentzian(p, {50.0, 5.0, 1e-20, 0.0}, {20.0, 80.0});
  EXPECT_TRUE(fit.suspect || std::abs(fit.area) < 1e-3 * 1e-20 * 60.0);
}

TEST(FitLorentzian, Errors) {
  const auto psd = synthetic_lorentzian(100.0, 4.0, 1.0, 0.0);
  try {
    fit_lorentzian(psd, {100.0, 4.0, 1.0, 0.0}, {99.0, 101.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateBand);
  }
  EXPECT_THROW(fit_lorentzian(psd, {10.0, 4.0, 1.0, 0.0}, {60.0, 140.0}), Error);
}

TEST(TemperatureFromArea, BandChecks) {
  const auto psd = synthetic_lorentzian(100.0, 4.0, 1e-18, 0.0);
  const auto m = slow_fixture();
  try {
    temperature_from_area(psd, m, 0, {150.0, 500.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BandOutOfRange);
  }
  const auto off = temperature_from_area(psd, m, 0, {150.0, 199.0});
  EXPECT_TRUE(off.low_capture);
  const auto on = temperature_from_area(psd, m, 0, {20.0, 180.0});
  EXPECT_FALSE(on.low_capture);
  EXPECT_GT(on.captured_fraction, 0.95);
}

// One-sided displacement spectrum 2 (S0/m^2) / ((W^2 - w^2)^2 + 4 gamma^2 w^2).
TEST(StationaryPsd, MatchesDampedOscillatorFormula) {
  const auto m = slow_fixture();
  const auto sm = compile(m);
  const double w0 = kTwoPi * 100.0;
  const double s0 = 4.0 * 10.0 * 1e-12 * kBoltzmann * 300.0;
  for (double f : {10.0, 95.0, 100.0, 101.5, 300.0}) {
    const double w = kTwoPi * f;
    const double expected = 2.0 * (s0 / 1e-24) / ((w0 * w0 - w * w) * (w0 * w0 - w * w) + 400.0 * w * w);
    EXPECT_NEAR(stationary_psd(sm, 0, f), expected, 1e-9 * expected) << f;
  }
}

class FixtureSpectrum : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    const auto m = slow_fixture();
    trajectories_ = new std::vector<Trajectory>(record(m, 60.0, 6, 16));
  }
  static void TearDownTestSuite() { delete trajectories_; }
  static std::vector<Trajectory>* trajectories_;
};
std::vector<Trajectory>* FixtureSpectrum::trajectories_ = nullptr;

TEST_F(FixtureSpectrum, LinewidthAndCenter) {
  const auto m = slow_fixture();
  const auto& trs = *trajectories_;
  const std::size_t seg = default_segment_length(trs[0].samples(), 10.0 / 4.0, trs[0].sample_spacing);
  const auto psd = welch_psd(trs, 0, seg);
  const Band band = default_band(m, 0);
  const auto fit = fit_lorentzian(psd, moment_guess(psd, band), band);
  EXPECT_FALSE(fit.suspect);
  EXPECT_NEAR(fit.fwhm_gamma, 10.0, 1.0);
  EXPECT_NEAR(fit.center, 100.0, psd.resolution_bandwidth);
  const auto t = temperature_from_area(psd, m, 0, band);
  const double fit_temperature = fit.area * 1e-12 * std::pow(kTwoPi * 100.0, 2) / kBoltzmann;
  EXPECT_NEAR(fit_temperature, t.temperature.value, 0.1 * t.temperature.value);
}

TEST_F(FixtureSpectrum, AreaTemperatureAndWindowInvariance) {
  const auto m = slow_fixture();
  const auto& trs = *trajectories_;
  const std::size_t seg = default_segment_length(trs[0].samples(), 10.0, trs[0].sample_spacing);
  const Band band = default_band(m, 0);
  const auto hann = temperature_from_area(welch_psd(trs, 0, seg), m, 0, band);
  const auto rect = temperature_from_area(welch_psd(trs, 0, seg, 0.5, Window::Rectangular), m, 0, band);
  EXPECT_NEAR(hann.temperature.value, 300.0, 15.0);
  EXPECT_GT(hann.temperature.se, 0.0);
  EXPECT_GT(hann.captured_fraction, 0.95);
  EXPECT_NEAR(rect.temperature.value, hann.temperature.value, 0.02 * hann.temperature.value);
  // Time-domain and spectral estimates of the same record agree.
  const auto st = ensemble_stats(trs);
  const auto td = mode_temperature_mc(st, m).positional[0];
  EXPECT_NEAR(td.value, hann.temperature.value, 0.05 * td.value);
}

TEST(SpectralThermometry, ColdDamping) {
  auto m = slow_fixture();
  m.feedbacks["A"] = {0.0, -2.0 * 1e-12 * 30.0, 0.0};
  const auto trs = record(m, 20.0, 6, 16);
  const auto psd = welch_psd(trs, 0, default_segment_length(trs[0].samples(), 40.0, trs[0].sample_spacing));
  const auto t = temperature_from_area(psd, m, 0, default_band(m, 0));
  EXPECT_NEAR(t.temperature.value, 75.0, 0.05 * 75.0);
}

TEST(CouplingFromSplitting, ExactRoute) {
  const double g = kTwoPi * 50.0;
  const auto m = pair(1e-12, kTwoPi * 1e5, 10.0, 300.0, 300.0, g);
  const auto est = coupling_from_splitting(normal_modes(compile(m), m), m, "A", "B");
  // Spring coupling shifts the splitting by O(g / Omega) = 5e-4 besides (gamma/g)^2.
  EXPECT_NEAR(est.value, g, (std::pow(10.0 / g, 2) + 1e-3) * g);

  const auto uncoupled = pair(1e-12, kTwoPi * 1e5, 10.0, 300.0, 300.0, 0.0);
  try {
    coupling_from_splitting(normal_modes(compile(uncoupled), uncoupled), uncoupled, "A", "B");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnresolvedSplitting);
  }
}

TEST(CouplingFromSplitting, SyntheticTwoPeaks) {
  Psd p;
  p.bin_width = p.resolution_bandwidth = 0.25;
  for (int k = 0; k < 1200; ++k) {
    const double f = k * 0.25;
    p.frequencies.push_back(f);
    p.values.push_back(lorentzian(f, 140.0, 3.0, 1.0) + lorentzian(f, 160.0, 3.0, 1.0));
  }
  const auto fit = coupling_from_splitting(p, {100.0, 200.0});
  EXPECT_NEAR(fit.g.value, std::numbers::pi * 20.0, 1e-6 * std::numbers::pi * 20.0);
  // A single peak cannot be split.
  Psd single_peak = p;
  for (std::size_t k = 0; k < p.values.size(); ++k) single_peak.values[k] = lorentzian(p.frequencies[k], 150.0, 3.0, 1.0);
  EXPECT_THROW(coupling_from_splitting(single_peak, {100.0, 200.0}), Error);
}

// Strong coupling g = 10 gamma; Omega >> g keeps the O(g/Omega) shift at 1.6%.
TEST(CouplingFromSplitting, MonteCarloRoute) {
  const double g = 100.0;
  const auto m = pair(1e-12, kTwoPi * 1000.0, 10.0, 300.0, 300.0, g);
  const auto trs = record(m, 6.4, 4, 8);
  const auto psd = welch_psd(trs, 0, default_segment_length(trs[0].samples(), 10.0, trs[0].sample_spacing));
  const auto fit = coupling_from_splitting(psd, default_band(m, 0, 10.0));
  EXPECT_NEAR(fit.g.value, coupling_g(m, "A", "B").g, 0.05 * g);
  // Same record, same band: temperature unaffected by the coupling.
  const auto t = temperature_from_area(psd, m, 0, default_band(m, 0));
  EXPECT_NEAR(t.temperature.value, 300.0, 0.05 * 300.0);
}
