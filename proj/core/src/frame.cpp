#include "cfmimo/frame.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "cfmimo/rng.hpp"

namespace cfmimo {

PilotBook walsh_hadamard_book(int pilot_length) {
  require(pilot_length >= 1 && (pilot_length & (pilot_length - 1)) == 0, ErrorCategory::kConfig,
          "walsh_hadamard_book: pilot length must be a power of two, got " +
              std::to_string(pilot_length));
  Eigen::MatrixXi h = Eigen::MatrixXi::Ones(1, 1);
  while (h.rows() < pilot_length) {
    const auto n = h.rows();
    Eigen::MatrixXi next(2 * n, 2 * n);
    next << h, h, h, -h;
    h = std::move(next);
  }
  return PilotBook{std::move(h)};
}

std::string to_string(const AssignmentPolicy& p) {
  struct Visitor {
    std::string operator()(policy::Orthogonal) const { return "orthogonal"; }
    std::string operator()(policy::UniformNoReplacement) const {
      return "uniform_no_replacement";
    }
    std::string operator()(policy::FixedReuse f) const {
      return "fixed_reuse(" + std::to_string(f.reuse) + ")";
    }
    std::string operator()(policy::MixedReuse) const { return "mixed_reuse"; }
  };
  return std::visit(Visitor{}, p);
}

AssignmentPolicy parse_policy(const std::string& text) {
  if (text == "orthogonal") return policy::Orthogonal{};
  if (text == "uniform_no_replacement") return policy::UniformNoReplacement{};
  if (text == "mixed_reuse") return policy::MixedReuse{};
  const std::string prefix = "fixed_reuse(";
  if (text.starts_with(prefix) && text.ends_with(")")) {
    const std::string body = text.substr(prefix.size(), text.size() - prefix.size() - 1);
    try {
      std::size_t used = 0;
      const int r = std::stoi(body, &used);
      if (used == body.size() && r >= 0) return policy::FixedReuse{r};
    } catch (const std::exception&) {
    }
  }
  fail(ErrorCategory::kConfig, "unknown pilot assignment policy '" + text + "'");
}

PilotAssignment make_assignment(std::vector<int> pilots) {
  PilotAssignment a;
  a.pilot = std::move(pilots);
  const int k_count = a.num_ues();
  a.collisions.assign(k_count, {});
  for (int k = 0; k < k_count; ++k) {
    for (int j = 0; j < k_count; ++j) {
      if (j != k && a.pilot[j] == a.pilot[k]) a.collisions[k].push_back(j);
    }
  }
  return a;
}

namespace {

std::vector<int> fixed_reuse_pilots(int num_ues, int pilot_length, int reuse,
                                    rng::Engine& eng) {
  require(reuse >= 0 && reuse + 1 <= num_ues, ErrorCategory::kConfig,
          "fixed_reuse(" + std::to_string(reuse) + ") needs at least " +
              std::to_string(reuse + 1) + " UEs, have " + std::to_string(num_ues));
  require(num_ues - reuse <= pilot_length, ErrorCategory::kConfig,
          "fixed_reuse(" + std::to_string(reuse) + ") needs " +
              std::to_string(num_ues - reuse) + " pilots, book has " +
              std::to_string(pilot_length));
  std::vector<int> perm(pilot_length);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), eng);
  std::vector<int> pilots(num_ues);
  for (int k = 0; k < num_ues; ++k) pilots[k] = k <= reuse ? perm[0] : perm[k - reuse];
  return pilots;
}

}  // namespace

PilotAssignment assign_pilots(int num_ues, int pilot_length, const AssignmentPolicy& pol,
                              std::uint64_t seed) {
  require(num_ues >= 1, ErrorCategory::kConfig, "assign_pilots: need at least one UE");
  rng::Engine eng(seed);
  std::vector<int> pilots;
  if (std::holds_alternative<policy::Orthogonal>(pol)) {
    require(num_ues <= pilot_length, ErrorCategory::kConfig,
            "orthogonal pilots need K <= T_p (K=" + std::to_string(num_ues) +
                ", T_p=" + std::to_string(pilot_length) + ")");
    pilots.resize(num_ues);
    std::iota(pilots.begin(), pilots.end(), 0);
  } else if (std::holds_alternative<policy::UniformNoReplacement>(pol)) {
    require(num_ues <= pilot_length, ErrorCategory::kConfig,
            "uniform_no_replacement needs K <= T_p");
    std::vector<int> perm(pilot_length);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), eng);
    pilots.assign(perm.begin(), perm.begin() + num_ues);
  } else if (const auto* f = std::get_if<policy::FixedReuse>(&pol)) {
    pilots = fixed_reuse_pilots(num_ues, pilot_length, f->reuse, eng);
  } else {
    const int lo = std::max(0, num_ues - pilot_length);
    std::uniform_int_distribution<int> level(lo, num_ues - 1);
    const int reuse = level(eng);
    pilots = fixed_reuse_pilots(num_ues, pilot_length, reuse, eng);
  }
  return make_assignment(std::move(pilots));
}

namespace {

CMat complex_gaussian(Eigen::Index rows, Eigen::Index cols, double variance,
                      rng::Engine& eng) {
  std::normal_distribution<double> gauss(0.0, std::sqrt(variance / 2.0));
  CMat m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = cdouble(gauss(eng), gauss(eng));
  }
  return m;
}

}  // namespace

PilotPhase transmit_pilots(const ChannelRealization& channels, const PilotAssignment& assignment,
                           const PilotBook& book, double noise_power, std::uint64_t seed) {
  require(assignment.num_ues() == channels.num_ues, ErrorCategory::kShape,
          "transmit_pilots: assignment and channel UE counts differ");
  rng::Engine eng(seed);
  const int tp = book.length();
  PilotPhase out;
  out.Z.reserve(channels.num_aps);
  out.noise.reserve(channels.num_aps);
  for (int l = 0; l < channels.num_aps; ++l) {
    const auto n = channels.at(l, 0).size();
    CMat z = CMat::Zero(n, tp);
    for (int k = 0; k < channels.num_ues; ++k) {
      z += channels.at(l, k) * book.pilot(assignment.pilot[k]).transpose().cast<cdouble>();
    }
    CMat noise = complex_gaussian(n, tp, noise_power, eng);
    out.Z.push_back(z + noise);
    out.noise.push_back(std::move(noise));
  }
  return out;
}

std::vector<CVec> transmit_data(const ChannelRealization& channels, const CVec& x,
                                const std::vector<CVec>& noise) {
  require(x.size() == channels.num_ues, ErrorCategory::kShape,
          "transmit_data: symbol vector length differs from UE count");
  require(static_cast<int>(noise.size()) == channels.num_aps, ErrorCategory::kShape,
          "transmit_data: one noise vector per AP expected");
  std::vector<CVec> y;
  y.reserve(channels.num_aps);
  for (int l = 0; l < channels.num_aps; ++l) {
    CVec acc = noise[l];
    for (int k = 0; k < channels.num_ues; ++k) acc += channels.at(l, k) * x[k];
    y.push_back(std::move(acc));
  }
  return y;
}

DataPhase transmit_data(const ChannelRealization& channels, const CVec& x, double noise_power,
                        std::uint64_t seed) {
  rng::Engine eng(seed);
  DataPhase out;
  for (int l = 0; l < channels.num_aps; ++l) {
    out.noise.push_back(complex_gaussian(channels.at(l, 0).size(), 1, noise_power, eng).col(0));
  }
  out.y = transmit_data(channels, x, out.noise);
  return out;
}

CVec draw_symbols(const TaskConfig& task, std::uint64_t seed) {
  rng::Engine eng(seed);
  CVec x(task.num_ues());
  for (int k = 0; k < task.num_ues(); ++k) {
    const auto& c = constellation(task.constellations[k]);
    std::uniform_int_distribution<int> pick(0, c.size() - 1);
    x[k] = c.points[pick(eng)];
  }
  return x;
}

}  // namespace cfmimo
