#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vcmqp/error.hpp"

namespace vcmqp {

/// One operating point of a coding configuration. rate is bits (or bits per
/// pixel, consistent within a curve); quality is the weighted AP in [0,1].
struct RdPoint {
  double rate = 0.0;
  double quality = 0.0;
  std::string label;  // configuration tag, e.g. the base QP

  bool operator==(const RdPoint&) const = default;
};

/// A rate-quality curve. Points are stored sorted by quality ascending and
/// must be strictly monotone in both axes; anything else is rejected so the
/// experimenter sees the defect instead of a silently reordered curve.
class RdCurve {
 public:
  RdCurve(std::string name, std::vector<RdPoint> points)
      : name_(std::move(name)), points_(std::move(points)) {
    if (points_.size() < 4)
      throw DataError("RdCurve \"" + name_ + "\": needs at least 4 points, got " +
                      std::to_string(points_.size()));
    std::sort(points_.begin(), points_.end(),
              [](const RdPoint& a, const RdPoint& b) { return a.quality < b.quality; });
    for (std::size_t i = 0; i < points_.size(); ++i) {
      if (!(points_[i].rate > 0.0))
        throw DataError("RdCurve \"" + name_ + "\": non-positive rate");
      if (i > 0 && !(points_[i].quality > points_[i - 1].quality))
        throw DataError("RdCurve \"" + name_ + "\": qualities are not strictly increasing");
      if (i > 0 && !(points_[i].rate > points_[i - 1].rate))
        throw DataError("RdCurve \"" + name_ + "\": rates are not strictly increasing with quality");
    }
  }

  const std::string& name() const { return name_; }
  const std::vector<RdPoint>& points() const { return points_; }
  double min_quality() const { return points_.front().quality; }
  double max_quality() const { return points_.back().quality; }

  bool operator==(const RdCurve&) const = default;

 private:
  std::string name_;
  std::vector<RdPoint> points_;
};

namespace detail {

/// Least-squares cubic of log10(rate) in the quality variable, fitted in a
/// normalized coordinate u in [-1,1] for conditioning. The normalization is
/// an exact change of basis, so results match the raw-variable fit.
struct LogRateFit {
  double q_min = 0.0;
  double q_max = 1.0;
  std::array<long double, 4> coeff{};

  long double to_u(double q) const { return 2.0L * (q - q_min) / (q_max - q_min) - 1.0L; }

  long double eval(double q) const {
    const long double u = to_u(q);
    return ((coeff[3] * u + coeff[2]) * u + coeff[1]) * u + coeff[0];
  }

  /// Definite integral over quality in [a, b].
  long double integral(double a, double b) const {
    const auto anti = [this](long double u) {
      return coeff[0] * u + coeff[1] * u * u / 2.0L + coeff[2] * u * u * u / 3.0L +
             coeff[3] * u * u * u * u / 4.0L;
    };
    const long double scale = (static_cast<long double>(q_max) - q_min) / 2.0L;
    return scale * (anti(to_u(b)) - anti(to_u(a)));
  }
};

inline std::array<long double, 4> solve4(std::array<std::array<long double, 4>, 4> m,
                                         std::array<long double, 4> rhs) {
  for (int col = 0; col < 4; ++col) {
    int pivot = col;
    for (int r = col + 1; r < 4; ++r)
      if (std::fabs(m[r][col]) > std::fabs(m[pivot][col])) pivot = r;
    std::swap(m[col], m[pivot]);
    std::swap(rhs[col], rhs[pivot]);
    if (m[col][col] == 0.0L) throw DataError("bd_rate: singular fit system");
    for (int r = col + 1; r < 4; ++r) {
      const long double f = m[r][col] / m[col][col];
      for (int c = col; c < 4; ++c) m[r][c] -= f * m[col][c];
      rhs[r] -= f * rhs[col];
    }
  }
  std::array<long double, 4> x{};
  for (int r = 3; r >= 0; --r) {
    long double acc = rhs[r];
    for (int c = r + 1; c < 4; ++c) acc -= m[r][c] * x[c];
    x[r] = acc / m[r][r];
  }
  return x;
}

inline LogRateFit fit_log_rate(const RdCurve& curve) {
  LogRateFit fit;
  fit.q_min = curve.min_quality();
  fit.q_max = curve.max_quality();

  std::array<std::array<long double, 4>, 4> normal{};
  std::array<long double, 4> rhs{};
  for (const RdPoint& p : curve.points()) {
    const long double u = fit.to_u(p.quality);
    const long double y = std::log10(static_cast<long double>(p.rate));
    std::array<long double, 4> basis = {1.0L, u, u * u, u * u * u};
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) normal[r][c] += basis[r] * basis[c];
      rhs[r] += basis[r] * y;
    }
  }
  fit.coeff = solve4(normal, rhs);
  return fit;
}

}  // namespace detail

/// Average bitrate difference of test versus anchor at equal quality, in
/// percent. Fits log10(rate) as a cubic in quality per curve, averages the
/// difference over the common quality interval analytically, and maps back
/// from the log domain. Negative values are bitrate savings.
inline double bd_rate(const RdCurve& test, const RdCurve& anchor) {
  const double q_lo = std::max(test.min_quality(), anchor.min_quality());
  const double q_hi = std::min(test.max_quality(), anchor.max_quality());
  if (!(q_hi > q_lo))
    throw DataError("bd_rate: curves \"" + test.name() + "\" and \"" + anchor.name() +
                    "\" have no overlapping quality interval");
  const detail::LogRateFit fit_test = detail::fit_log_rate(test);
  const detail::LogRateFit fit_anchor = detail::fit_log_rate(anchor);
  const long double avg =
      (fit_test.integral(q_lo, q_hi) - fit_anchor.integral(q_lo, q_hi)) / (q_hi - q_lo);
  return static_cast<double>((std::pow(10.0L, avg) - 1.0L) * 100.0L);
}

// --- Curve CSV: "name,label,rate,quality" rows, optional header --------------

inline constexpr const char* kCurveCsvHeader = "name,label,rate,quality";

/// Shortest representation that round-trips a double through text.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_curves_csv(const std::vector<RdCurve>& curves, std::ostream& out) {
  out << kCurveCsvHeader << "\n";
  for (const RdCurve& curve : curves)
    for (const RdPoint& p : curve.points())
      out << curve.name() << "," << p.label << "," << format_double(p.rate) << ","
          << format_double(p.quality) << "\n";
}

inline void write_curves_csv(const std::vector<RdCurve>& curves, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_curves_csv(curves, out);
}

/// Curves grouped by name, in file order of first appearance.
inline std::vector<RdCurve> read_curves_csv(std::istream& in, const std::string& context) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<RdPoint>> points;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (lineno == 1 && line == kCurveCsvHeader) continue;
    std::istringstream ss(line);
    std::string name, label, rate_text, quality_text;
    if (!std::getline(ss, name, ',') || !std::getline(ss, label, ',') ||
        !std::getline(ss, rate_text, ',') || !std::getline(ss, quality_text))
      throw DataError(context + ":" + std::to_string(lineno) + ": expected " + kCurveCsvHeader);
    RdPoint p;
    p.label = label;
    try {
      std::size_t pos = 0;
      p.rate = std::stod(rate_text, &pos);
      if (pos != rate_text.size()) throw std::invalid_argument(rate_text);
      p.quality = std::stod(quality_text, &pos);
      if (pos != quality_text.size()) throw std::invalid_argument(quality_text);
    } catch (const std::exception&) {
      throw DataError(context + ":" + std::to_string(lineno) + ": malformed numeric field");
    }
    if (points.find(name) == points.end()) order.push_back(name);
    points[name].push_back(p);
  }
  std::vector<RdCurve> curves;
  curves.reserve(order.size());
  for (const std::string& name : order) curves.emplace_back(name, std::move(points[name]));
  if (curves.empty()) throw DataError(context + ": no curve rows");
  return curves;
}

inline std::vector<RdCurve> read_curves_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return read_curves_csv(in, path.string());
}

}  // namespace vcmqp
