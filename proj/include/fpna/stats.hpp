#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace fpna {

double mean(std::span<const double> xs);
/// Population variance.
double variance(std::span<const double> xs);
double stddev(std::span<const double> xs);

/// Two-sample Kolmogorov-Smirnov statistic sup_x |F_a(x) - F_b(x)|.
double ks_distance(std::span<const double> a, std::span<const double> b);

/// Fixed-width histogram over [lo, hi); values outside are clamped into the
/// first or last bin.
struct Histogram {
  double lo = 0.0;
  double width = 1.0;
  std::vector<std::uint64_t> counts;

  static Histogram build(std::span<const double> xs, double lo, double hi, double width);
  double bin_lo(std::size_t i) const { return lo + width * static_cast<double>(i); }
  double bin_hi(std::size_t i) const { return lo + width * static_cast<double>(i + 1); }
  /// Local maxima of the histogram after a centred moving average of
  /// `window` bins, ignoring peaks below `min_fraction` of the tallest one.
  int count_modes(int window = 5, double min_fraction = 0.05) const;
};

}  // namespace fpna
