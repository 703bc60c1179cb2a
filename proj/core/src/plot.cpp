#include "cfmimo/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <set>

namespace cfmimo {

namespace {

constexpr int kPanelW = 460;
constexpr int kPanelH = 340;
constexpr int kLeft = 70;
constexpr int kRight = 20;
constexpr int kTop = 36;
constexpr int kBottom = 50;

const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                               "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

void panel(std::ostream& os, const Figure& fig, double ox, double oy) {
  double x_lo = std::numeric_limits<double>::infinity(), x_hi = -x_lo;
  double y_lo = x_lo, y_hi = -x_lo;
  for (const auto& s : fig.series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const double e = s.err.empty() ? 0.0 : s.err[i];
      double lo = s.y[i] - e, hi = s.y[i] + e;
      if (fig.log_y) lo = std::max(lo, s.y[i] * 0.5);
      x_lo = std::min(x_lo, s.x[i]);
      x_hi = std::max(x_hi, s.x[i]);
      if (!fig.log_y || lo > 0) y_lo = std::min(y_lo, lo);
      y_hi = std::max(y_hi, hi);
    }
  }
  if (!std::isfinite(x_lo)) x_lo = 0, x_hi = 1;
  if (!std::isfinite(y_lo) || !std::isfinite(y_hi)) y_lo = 1e-3, y_hi = 1;
  if (x_hi == x_lo) x_lo -= 1, x_hi += 1;

  auto ty = [&](double v) { return fig.log_y ? std::log10(std::max(v, 1e-300)) : v; };
  double ty_lo = ty(y_lo), ty_hi = ty(y_hi);
  if (fig.log_y) {
    ty_lo = std::floor(ty_lo);
    ty_hi = std::ceil(ty_hi);
  }
  if (ty_hi == ty_lo) ty_hi = ty_lo + 1;
  const double pw = kPanelW - kLeft - kRight, ph = kPanelH - kTop - kBottom;
  auto px = [&](double x) { return ox + kLeft + (x - x_lo) / (x_hi - x_lo) * pw; };
  auto py = [&](double y) { return oy + kTop + (1.0 - (ty(y) - ty_lo) / (ty_hi - ty_lo)) * ph; };

  os << "<rect x=\"" << ox + kLeft << "\" y=\"" << oy + kTop << "\" width=\"" << pw
     << "\" height=\"" << ph << "\" fill=\"none\" stroke=\"#333\"/>\n";
  os << "<text x=\"" << ox + kPanelW / 2.0 << "\" y=\"" << oy + 22
     << "\" text-anchor=\"middle\" font-size=\"14\">" << escape(fig.title) << "</text>\n";
  os << "<text x=\"" << ox + kLeft + pw / 2 << "\" y=\"" << oy + kPanelH - 10
     << "\" text-anchor=\"middle\" font-size=\"12\">" << escape(fig.x_label) << "</text>\n";
  os << "<text transform=\"translate(" << ox + 16 << ',' << oy + kTop + ph / 2
     << ") rotate(-90)\" text-anchor=\"middle\" font-size=\"12\">" << escape(fig.y_label)
     << "</text>\n";

  std::vector<double> ticks = fig.x_ticks;
  std::vector<std::string> labels = fig.x_tick_labels;
  if (ticks.empty()) {
    std::set<double> xs;
    for (const auto& s : fig.series) xs.insert(s.x.begin(), s.x.end());
    ticks.assign(xs.begin(), xs.end());
    for (double t : ticks) labels.push_back(fmt(t));
  }
  for (std::size_t i = 0; i < ticks.size(); ++i) {
    const double x = px(ticks[i]);
    os << "<line x1=\"" << x << "\" y1=\"" << oy + kTop + ph << "\" x2=\"" << x << "\" y2=\""
       << oy + kTop + ph + 5 << "\" stroke=\"#333\"/>\n";
    os << "<text x=\"" << x << "\" y=\"" << oy + kTop + ph + 18
       << "\" text-anchor=\"middle\" font-size=\"11\">" << escape(labels[i]) << "</text>\n";
  }
  const int steps = fig.log_y ? static_cast<int>(ty_hi - ty_lo) : 5;
  for (int i = 0; i <= steps; ++i) {
    const double t = ty_lo + (ty_hi - ty_lo) * i / steps;
    const double v = fig.log_y ? std::pow(10.0, t) : t;
    const double y = py(v);
    os << "<line x1=\"" << ox + kLeft << "\" y1=\"" << y << "\" x2=\"" << ox + kLeft + pw
       << "\" y2=\"" << y << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << ox + kLeft - 6 << "\" y=\"" << y + 4
       << "\" text-anchor=\"end\" font-size=\"11\">" << fmt(v) << "</text>\n";
  }

  for (std::size_t si = 0; si < fig.series.size(); ++si) {
    const auto& s = fig.series[si];
    const char* color = kColors[si % std::size(kColors)];
    std::vector<std::size_t> order(s.x.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return s.x[a] < s.x[b]; });
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (auto i : order) os << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    os << "\"/>\n";
    for (auto i : order) {
      os << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3\" fill=\""
         << color << "\"/>\n";
      if (!s.err.empty() && s.err[i] > 0) {
        const double lo = std::max(s.y[i] - s.err[i], fig.log_y ? s.y[i] * 0.5 : -1e300);
        os << "<line x1=\"" << px(s.x[i]) << "\" y1=\"" << py(lo) << "\" x2=\"" << px(s.x[i])
           << "\" y2=\"" << py(s.y[i] + s.err[i]) << "\" stroke=\"" << color << "\"/>\n";
      }
    }
    const double ly = oy + kTop + 14 + 14 * static_cast<double>(si);
    os << "<line x1=\"" << ox + kLeft + pw - 120 << "\" y1=\"" << ly - 4 << "\" x2=\""
       << ox + kLeft + pw - 100 << "\" y2=\"" << ly - 4 << "\" stroke=\"" << color
       << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << ox + kLeft + pw - 95 << "\" y=\"" << ly
       << "\" font-size=\"11\">" << escape(s.label) << "</text>\n";
  }
}

void render(std::ostream& os, const std::vector<Figure>& figs) {
  const std::size_t n = std::max<std::size_t>(1, figs.size());
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kPanelW * n << "\" height=\""
     << kPanelH << "\" font-family=\"sans-serif\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < figs.size(); ++i) panel(os, figs[i], kPanelW * i, 0);
  os << "</svg>\n";
}

}  // namespace

void render_svg(std::ostream& os, const Figure& fig) { render(os, {fig}); }

std::vector<Figure> figures_from_results(const ResultTable& table) {
  if (table.rows.empty()) return {};
  std::set<int> bits;
  std::set<double> snrs;
  for (const auto& r : table.rows) {
    bits.insert(r.bits);
    snrs.insert(r.snr_db);
  }
  const bool by_bits = bits.size() > 1 || snrs.size() == 1;
  int max_bits = 0;
  for (int b : bits) max_bits = std::max(max_bits, b);
  const double inf_x = max_bits + 2;

  std::vector<std::string> panels;
  std::map<std::string, std::map<std::string, Series>> grouped;
  std::map<std::string, std::vector<std::string>> series_order;
  for (const auto& r : table.rows) {
    // With a bit sweep, every SNR gets its own panel as well.
    std::string key = "pilots " + r.reuse;
    if (by_bits && snrs.size() > 1) key += ", " + fmt(r.snr_db) + " dB";
    if (!grouped.count(key)) panels.push_back(key);
    auto& group = grouped[key];
    if (!group.count(r.equalizer)) series_order[key].push_back(r.equalizer);
    Series& s = group[r.equalizer];
    s.label = r.equalizer;
    s.x.push_back(by_bits ? (r.bits == 0 ? inf_x : r.bits) : r.snr_db);
    s.y.push_back(r.mse.mean);
    s.err.push_back(r.mse.ci95);
  }
  std::vector<Figure> figs;
  for (const auto& key : panels) {
    Figure f;
    f.title = table.rows.front().experiment + ": " + key;
    f.x_label = by_bits ? "fronthaul bits b" : "average SNR [dB]";
    f.y_label = "MSE";
    if (by_bits) {
      for (int b : bits) {
        if (b == 0) continue;
        f.x_ticks.push_back(b);
        f.x_tick_labels.push_back(std::to_string(b));
      }
      if (bits.count(0)) {
        f.x_ticks.push_back(inf_x);
        f.x_tick_labels.push_back("inf");
      }
    }
    for (const auto& name : series_order[key]) f.series.push_back(grouped[key][name]);
    figs.push_back(std::move(f));
  }
  return figs;
}

void plot_results(const std::filesystem::path& csv, const std::filesystem::path& out) {
  const ResultTable table = read_results_csv(csv);
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  std::ofstream os(out);
  require(static_cast<bool>(os), ErrorCategory::kIo, "cannot write " + out.string());
  render(os, figures_from_results(table));
}

}  // namespace cfmimo
