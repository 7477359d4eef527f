#pragma once

// Text and binary writers. Numbers are printed in the shortest form that
// round-trips (std::to_chars), so equal doubles always give equal text.

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <ostream>
#include <string>
#include <vector>

#include "modeheat/langevin.hpp"
#include "modeheat/spectra.hpp"

namespace modeheat {

inline std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), x);
  return std::string(buf.data(), res.ptr);
}

inline std::string hex64(std::uint64_t v) {
  std::array<char, 17> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + 16, v, 16);
  std::string s(buf.data(), res.ptr);
  return std::string(16 - s.size(), '0') + s;
}

/// Column-named numeric table, one row per record.
struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  void add_row(std::vector<double> row) { rows.push_back(std::move(row)); }
};

inline void write_csv(std::ostream& out, const Table& t, const std::vector<std::string>& header_lines = {}) {
  for (const auto& h : header_lines) out << "# " << h << '\n';
  for (std::size_t c = 0; c < t.columns.size(); ++c) out << (c ? "," : "") << t.columns[c];
  out << '\n';
  for (const auto& r : t.rows) {
    for (std::size_t c = 0; c < r.size(); ++c) out << (c ? "," : "") << format_number(r[c]);
    out << '\n';
  }
}

/// `# model_fingerprint=..., seed=..., dt=...` then time, u_1, v_1, ...
inline void write_trajectory_csv(std::ostream& out, const Trajectory& tr) {
  out << "# model_fingerprint=" << hex64(tr.fingerprint) << ", seed=" << tr.seed << ", member=" << tr.member
      << ", dt=" << format_number(tr.dt) << '\n';
  out << "time";
  for (std::size_t i = 1; i <= tr.oscillators(); ++i) out << ",u_" << i << ",v_" << i;
  out << '\n';
  for (std::size_t r = 0; r < tr.samples(); ++r) {
    out << format_number(tr.times[r]);
    for (Eigen::Index c = 0; c < tr.states.cols(); ++c) {
      out << ',' << format_number(tr.states(static_cast<Eigen::Index>(r), c));
    }
    out << '\n';
  }
}

/// Binary layout, all little-endian: 8-byte magic "MHTRAJ01", uint64
/// fingerprint, uint64 seed, float64 dt, uint64 rows, uint64 columns
/// (1 + 2N), then rows x columns float64 in row-major order
/// (time, u_1, v_1, ...).
inline void write_trajectory_binary(std::ostream& out, const Trajectory& tr) {
  static_assert(std::endian::native == std::endian::little, "binary export assumes a little-endian host");
  auto put = [&](const void* p, std::size_t n) { out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); };
  put("MHTRAJ01", 8);
  const std::uint64_t rows = tr.samples();
  const std::uint64_t cols = 1 + static_cast<std::uint64_t>(tr.states.cols());
  put(&tr.fingerprint, 8);
  put(&tr.seed, 8);
  put(&tr.dt, 8);
  put(&rows, 8);
  put(&cols, 8);
  for (std::size_t r = 0; r < tr.samples(); ++r) {
    put(&tr.times[r], 8);
    put(tr.states.row(static_cast<Eigen::Index>(r)).data(), 8 * static_cast<std::size_t>(tr.states.cols()));
  }
}

inline void write_psd_csv(std::ostream& out, const Psd& psd) {
  out << "# resolution_bandwidth=" << format_number(psd.resolution_bandwidth) << ", n_segments=" << psd.n_segments
      << ", window=" << to_string(psd.window) << '\n';
  out << "frequency_hz,psd_m2_per_hz\n";
  for (std::size_t k = 0; k < psd.values.size(); ++k) {
    out << format_number(psd.frequencies[k]) << ',' << format_number(psd.values[k]) << '\n';
  }
}

}  // namespace modeheat
