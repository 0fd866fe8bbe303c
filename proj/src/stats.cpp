#include "fpna/stats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fpna {

double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double variance(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  const double m = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return s / static_cast<double>(xs.size());
}

double stddev(std::span<const double> xs) { return std::sqrt(variance(xs)); }

double ks_distance(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("ks_distance: empty sample");
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double nx = static_cast<double>(x.size()), ny = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double worst = 0.0;
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] == v) ++i;
    while (j < y.size() && y[j] == v) ++j;
    worst = std::max(worst, std::abs(static_cast<double>(i) / nx - static_cast<double>(j) / ny));
  }
  return worst;
}

Histogram Histogram::build(std::span<const double> xs, double lo, double hi, double width) {
  if (!(hi > lo) || !(width > 0.0)) throw std::invalid_argument("Histogram: bad range");
  Histogram h;
  h.lo = lo;
  h.width = width;
  const auto bins = static_cast<std::size_t>(std::llround((hi - lo) / width));
  h.counts.assign(bins, 0);
  for (double x : xs) {
    auto idx = static_cast<long long>(std::floor((x - lo) / width));
    idx = std::clamp<long long>(idx, 0, static_cast<long long>(bins) - 1);
    ++h.counts[static_cast<std::size_t>(idx)];
  }
  return h;
}

int Histogram::count_modes(int window, double min_fraction) const {
  const auto n = static_cast<long long>(counts.size());
  if (n == 0) return 0;
  const long long half = std::max(window, 1) / 2;
  std::vector<double> smooth(counts.size());
  for (long long i = 0; i < n; ++i) {
    double s = 0.0;
    long long k = 0;
    for (long long j = std::max(0LL, i - half); j <= std::min(n - 1, i + half); ++j, ++k) {
      s += static_cast<double>(counts[static_cast<std::size_t>(j)]);
    }
    smooth[static_cast<std::size_t>(i)] = s / static_cast<double>(k);
  }
  const double top = *std::max_element(smooth.begin(), smooth.end());
  if (top <= 0.0) return 0;
  int modes = 0;
  long long i = 0;
  while (i < n) {
    // walk a plateau of equal values and compare against both neighbours
    long long j = i;
    while (j + 1 < n && smooth[static_cast<std::size_t>(j + 1)] == smooth[static_cast<std::size_t>(i)]) ++j;
    const double v = smooth[static_cast<std::size_t>(i)];
    const bool left_lower = i == 0 || smooth[static_cast<std::size_t>(i - 1)] < v;
    const bool right_lower = j == n - 1 || smooth[static_cast<std::size_t>(j + 1)] < v;
    if (left_lower && right_lower && v >= min_fraction * top) ++modes;
    i = j + 1;
  }
  return modes;
}

}  // namespace fpna
