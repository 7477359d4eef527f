#pragma once

// Heat-flux arithmetic around P = 2 gamma k_B (T - T') and the side-by-side
// comparison of a single-mode channel against a bulk channel reduced to a
// lumped thermal resistance.

#include <cmath>
#include <limits>
#include <string>

#include "modeheat/errors.hpp"
#include "modeheat/model.hpp"

namespace modeheat::flux {

/// Damping rate that maps a 6.5e-21 W flux onto an 18 K mode-bath gap,
/// obtained by inverting gamma = P / (2 k_B dT).
inline constexpr double kReportedModeGamma = 13.08;        // 1/s
inline constexpr double kReportedModeFlux = 6.5e-21;       // W
inline constexpr double kReportedModeDeltaT = 18.0;        // K
/// Bulk radiative flux and the resulting membrane temperature change; the
/// lumped resistance is their ratio, R = dT / P.
inline constexpr double kReportedBulkFlux = 3.5e-6;        // W
inline constexpr double kReportedBulkDeltaT = 0.02;        // K
inline constexpr double kReportedBulkResistance = 5.71e3;  // K/W

enum class Direction { BathToMode, ModeToBath };

inline std::string to_string(Direction d) { return d == Direction::BathToMode ? "bath_to_mode" : "mode_to_bath"; }

struct FluxReport {
  double flux = 0.0;              // W
  double gamma = 0.0;             // 1/s
  double bath_temperature = 0.0;  // K
  double mode_temperature = 0.0;  // K
  Direction direction = Direction::BathToMode;
};

/// P = 2 gamma k_B (T - T'). Positive when energy flows from the bath into the mode.
inline double flux_from_gap(double gamma, double bath_temperature, double mode_temperature) {
  if (!(gamma >= 0.0)) throw Error(ErrorCode::ConfigError, "gamma must be >= 0");
  return 2.0 * gamma * kBoltzmann * (bath_temperature - mode_temperature);
}

inline FluxReport flux_report(double gamma, double bath_temperature, double mode_temperature) {
  FluxReport r;
  r.gamma = gamma;
  r.bath_temperature = bath_temperature;
  r.mode_temperature = mode_temperature;
  r.flux = flux_from_gap(gamma, bath_temperature, mode_temperature);
  r.direction = bath_temperature >= mode_temperature ? Direction::BathToMode : Direction::ModeToBath;
  return r;
}

/// dT = P / (2 gamma k_B).
inline double gap_from_flux(double gamma, double flux) {
  if (!(gamma > 0.0)) throw Error(ErrorCode::ZeroDamping, "gap_from_flux needs gamma > 0");
  return flux / (2.0 * gamma * kBoltzmann);
}

/// Lumped bulk response dT = P R_th.
inline double bulk_delta_t(double flux, double thermal_resistance) {
  if (!(thermal_resistance > 0.0)) throw Error(ErrorCode::ConfigError, "thermal resistance must be > 0");
  return flux * thermal_resistance;
}

struct BulkComparison {
  double mode_flux = 0.0;
  double mode_gamma = 0.0;
  double mode_delta_t = 0.0;
  double bulk_flux = 0.0;
  double bulk_thermal_resistance = 0.0;
  double bulk_delta_t = 0.0;
  double flux_ratio = 0.0;     // bulk flux / mode flux
  double delta_t_ratio = 0.0;  // mode dT / bulk dT
  bool degenerate = false;     // a ratio has a zero denominator
  // Heat capacity scale of each channel: k_B for one mode, macroscopic for the bulk.
  std::string mode_capacity_scale = "single mode, C = k_B";
  std::string bulk_capacity_scale = "bulk solid, macroscopic C (lumped R_th)";
};

inline BulkComparison compare_mode_vs_bulk(double mode_flux, double mode_gamma, double bulk_flux,
                                           double bulk_thermal_resistance) {
  BulkComparison c;
  c.mode_flux = mode_flux;
  c.mode_gamma = mode_gamma;
  c.mode_delta_t = gap_from_flux(mode_gamma, mode_flux);
  c.bulk_flux = bulk_flux;
  c.bulk_thermal_resistance = bulk_thermal_resistance;
  c.bulk_delta_t = bulk_delta_t(bulk_flux, bulk_thermal_resistance);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  c.degenerate = mode_flux == 0.0 || c.bulk_delta_t == 0.0;
  c.flux_ratio = mode_flux != 0.0 ? bulk_flux / mode_flux : nan;
  c.delta_t_ratio = c.bulk_delta_t != 0.0 ? c.mode_delta_t / c.bulk_delta_t : nan;
  return c;
}

}  // namespace modeheat::flux
