#include "cfmimo/constellation.hpp"

#include <array>
#include <cmath>
#include <numbers>

namespace cfmimo {

std::string_view to_string(ConstellationId id) {
  switch (id) {
    case ConstellationId::kBpsk: return "bpsk";
    case ConstellationId::kQam4: return "qam4";
    case ConstellationId::kPsk8: return "psk8";
    case ConstellationId::kQam16: return "qam16";
    case ConstellationId::kQam64: return "qam64";
  }
  return "unknown";
}

ConstellationId parse_constellation(std::string_view name) {
  for (auto id : all_constellations()) {
    if (to_string(id) == name) return id;
  }
  if (name == "4qam" || name == "qpsk") return ConstellationId::kQam4;
  if (name == "8psk") return ConstellationId::kPsk8;
  if (name == "16qam") return ConstellationId::kQam16;
  if (name == "64qam") return ConstellationId::kQam64;
  fail(ErrorCategory::kConfig, "unknown constellation '" + std::string(name) + "'");
}

double Constellation::mean_energy() const {
  double e = 0.0;
  for (auto p : points) e += std::norm(p);
  return e / static_cast<double>(points.size());
}

namespace {

int gray(int i) { return i ^ (i >> 1); }

// PAM amplitudes {-(M-1), ..., M-1} indexed by Gray label.
std::vector<double> gray_pam(int m) {
  std::vector<double> amp(m);
  for (int i = 0; i < m; ++i) amp[gray(i)] = 2.0 * i - (m - 1);
  return amp;
}

std::vector<cdouble> square_qam(int side) {
  const int bits_per_axis = static_cast<int>(std::log2(side));
  const auto pam = gray_pam(side);
  double energy = 0.0;
  for (double a : pam) energy += a * a;
  const double scale = 1.0 / std::sqrt(2.0 * energy / side);
  std::vector<cdouble> pts(static_cast<std::size_t>(side) * side);
  for (int label = 0; label < side * side; ++label) {
    const int hi = label >> bits_per_axis;
    const int lo = label & (side - 1);
    pts[label] = cdouble(pam[hi], pam[lo]) * scale;
  }
  return pts;
}

}  // namespace

Constellation make_constellation(ConstellationId id) {
  Constellation c{id, {}};
  switch (id) {
    case ConstellationId::kBpsk:
      c.points = {cdouble(1.0, 0.0), cdouble(-1.0, 0.0)};
      break;
    case ConstellationId::kQam4:
      c.points = square_qam(2);
      break;
    case ConstellationId::kPsk8: {
      c.points.resize(8);
      for (int i = 0; i < 8; ++i) {
        c.points[gray(i)] = std::polar(1.0, 2.0 * std::numbers::pi * i / 8.0);
      }
      break;
    }
    case ConstellationId::kQam16:
      c.points = square_qam(4);
      break;
    case ConstellationId::kQam64:
      c.points = square_qam(8);
      break;
    default:
      fail(ErrorCategory::kConfig, "unsupported constellation id");
  }
  return c;
}

const Constellation& constellation(ConstellationId id) {
  static const std::array<Constellation, kNumConstellations> table = {
      make_constellation(ConstellationId::kBpsk),
      make_constellation(ConstellationId::kQam4),
      make_constellation(ConstellationId::kPsk8),
      make_constellation(ConstellationId::kQam16),
      make_constellation(ConstellationId::kQam64),
  };
  const int i = modulation_index(id);
  require(i >= 0 && i < kNumConstellations, ErrorCategory::kConfig,
          "unsupported constellation id");
  return table[i];
}

std::span<const ConstellationId> all_constellations() {
  static constexpr std::array<ConstellationId, kNumConstellations> ids = {
      ConstellationId::kBpsk, ConstellationId::kQam4, ConstellationId::kPsk8,
      ConstellationId::kQam16, ConstellationId::kQam64};
  return ids;
}

}  // namespace cfmimo
