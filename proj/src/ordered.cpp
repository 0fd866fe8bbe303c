#include "fpna/ordered.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>
#include <string>

namespace fpna {

namespace {

void require_finite(std::span<const double> values, const char* who) {
  for (double v : values) {
    if (!std::isfinite(v)) throw std::invalid_argument(std::string(who) + ": non-finite value in stream");
  }
}

void check_result(double acc, Precision mode, const char* who) {
  if (!std::isfinite(acc)) {
    throw OverflowError(std::string(who) + ": accumulation overflows " + std::string(to_string(mode)));
  }
}

std::vector<double> rounded(std::span<const double> values, Precision mode, const char* who) {
  require_finite(values, who);
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    out[i] = detail::round_fast(values[i], mode);
    check_result(out[i], mode, who);
  }
  return out;
}

// Fold of already-rounded values, no validation. Returns inf/NaN on overflow.
inline double fold(const double* values, const std::size_t* order, std::size_t n, Precision mode) {
  double acc = 0.0;
  if (mode == Precision::Binary64) {
    for (std::size_t i = 0; i < n; ++i) acc += values[order[i]];
  } else {
    for (std::size_t i = 0; i < n; ++i) acc = detail::round_fast(acc + values[order[i]], mode);
  }
  return acc;
}

inline double fold_range(const double* values, std::size_t begin, std::size_t end, double acc, Precision mode) {
  if (mode == Precision::Binary64) {
    for (std::size_t i = begin; i < end; ++i) acc += values[i];
  } else {
    for (std::size_t i = begin; i < end; ++i) acc = detail::round_fast(acc + values[i], mode);
  }
  return acc;
}

}  // namespace

double ordered_sum(std::span<const double> stream, const Permutation& order, Precision mode) {
  if (order.size() != stream.size()) throw std::invalid_argument("ordered_sum: order length != stream length");
  const auto values = rounded(stream, mode, "ordered_sum");
  const double acc = fold(values.data(), order.indices().data(), values.size(), mode);
  check_result(acc, mode, "ordered_sum");
  return acc;
}

double sequential_sum(std::span<const double> stream, Precision mode) {
  const auto values = rounded(stream, mode, "sequential_sum");
  const double acc = fold_range(values.data(), 0, values.size(), 0.0, mode);
  check_result(acc, mode, "sequential_sum");
  return acc;
}

double tree_sum(std::span<const double> stream, Precision mode) {
  if (stream.empty()) throw std::invalid_argument("tree_sum: empty stream");
  auto level = rounded(stream, mode, "tree_sum");
  while (level.size() > 1) {
    std::vector<double> next;
    next.reserve((level.size() + 1) / 2);
    for (std::size_t i = 0; i + 1 < level.size(); i += 2) {
      next.push_back(detail::round_fast(level[i] + level[i + 1], mode));
    }
    if (level.size() % 2) next.push_back(level.back());
    level = std::move(next);
  }
  check_result(level.front(), mode, "tree_sum");
  return level.front();
}

std::vector<double> product_stream(std::span<const double> a, std::span<const double> b, Precision mode) {
  if (a.size() != b.size()) throw std::invalid_argument("product_stream: length mismatch");
  const auto ra = rounded(a, mode, "product_stream");
  const auto rb = rounded(b, mode, "product_stream");
  std::vector<double> products(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    products[i] = detail::round_fast(ra[i] * rb[i], mode);
    check_result(products[i], mode, "product_stream");
  }
  return products;
}

double dot_permuted(std::span<const double> a, std::span<const double> b, const Permutation& order,
                    Precision mode) {
  if (a.size() != order.size()) throw std::invalid_argument("dot_permuted: order length != stream length");
  const auto products = product_stream(a, b, mode);
  const double acc = fold(products.data(), order.indices().data(), products.size(), mode);
  check_result(acc, mode, "dot_permuted");
  return acc;
}

std::vector<double> cyclic_dot_outcomes(std::span<const double> a, std::span<const double> b, Precision mode,
                                        Exec exec) {
  const auto products = product_stream(a, b, mode);
  const std::size_t d = products.size();
  std::vector<double> out(d);
  const double* p = products.data();
  const bool parallel = exec == Exec::Parallel;
  const auto n = static_cast<std::ptrdiff_t>(d);
#pragma omp parallel for schedule(static) if (parallel)
  for (std::ptrdiff_t s = 0; s < n; ++s) {
    const auto shift = static_cast<std::size_t>(s);
    double acc = fold_range(p, shift, d, 0.0, mode);
    out[shift] = fold_range(p, 0, shift, acc, mode);
  }
  for (double v : out) check_result(v, mode, "cyclic_dot_outcomes");
  return out;
}

std::vector<double> family_dot_outcomes(std::span<const double> a, std::span<const double> b,
                                        std::span<const Permutation> family, Precision mode, Exec exec) {
  const auto products = product_stream(a, b, mode);
  for (const auto& order : family) {
    if (order.size() != products.size()) throw std::invalid_argument("family_dot_outcomes: order length mismatch");
  }
  std::vector<double> out(family.size());
  const bool parallel = exec == Exec::Parallel;
  const auto n = static_cast<std::ptrdiff_t>(family.size());
#pragma omp parallel for schedule(static) if (parallel)
  for (std::ptrdiff_t k = 0; k < n; ++k) {
    const auto& order = family[static_cast<std::size_t>(k)];
    out[static_cast<std::size_t>(k)] = fold(products.data(), order.indices().data(), products.size(), mode);
  }
  for (double v : out) check_result(v, mode, "family_dot_outcomes");
  return out;
}

double compensated_dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("compensated_dot: length mismatch");
  double s = 0.0, c = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double p = a[i] * b[i];
    const double pe = std::fma(a[i], b[i], -p);
    const double t = s + p;
    const double z = t - s;
    c += (s - (t - z)) + (p - z) + pe;
    s = t;
  }
  return s + c;
}

std::uint64_t factorial_saturated(std::size_t n) noexcept {
  std::uint64_t f = 1;
  for (std::size_t k = 2; k <= n; ++k) {
    if (f > std::numeric_limits<std::uint64_t>::max() / k) return std::numeric_limits<std::uint64_t>::max();
    f *= k;
  }
  return f;
}

OrderOutcomes enumerate_order_outcomes(std::span<const double> stream, Precision mode,
                                       const EnumerateOptions& options) {
  if (stream.empty()) throw std::invalid_argument("enumerate_order_outcomes: empty stream");
  const auto values = rounded(stream, mode, "enumerate_order_outcomes");
  const std::size_t d = values.size();
  const std::uint64_t total = factorial_saturated(d);
  const bool parallel = options.exec == Exec::Parallel;

  OrderOutcomes result;
  if (total <= options.cap) {
    // One independent enumeration per leading element; merged afterwards so
    // the result does not depend on scheduling.
    std::vector<std::set<double>> per_lead(d);
    const auto n = static_cast<std::ptrdiff_t>(d);
#pragma omp parallel for schedule(dynamic) if (parallel)
    for (std::ptrdiff_t lead = 0; lead < n; ++lead) {
      std::vector<std::size_t> rest;
      for (std::size_t i = 0; i < d; ++i) {
        if (i != static_cast<std::size_t>(lead)) rest.push_back(i);
      }
      std::vector<std::size_t> order(d);
      order[0] = static_cast<std::size_t>(lead);
      auto& found = per_lead[static_cast<std::size_t>(lead)];
      do {
        std::copy(rest.begin(), rest.end(), order.begin() + 1);
        found.insert(fold(values.data(), order.data(), d, mode));
      } while (std::next_permutation(rest.begin(), rest.end()));
    }
    std::set<double> merged;
    for (const auto& s : per_lead) merged.insert(s.begin(), s.end());
    result.values.assign(merged.begin(), merged.end());
    result.exhaustive = true;
    result.orders_evaluated = total;
  } else {
    if (!options.allow_sampling) {
      throw std::length_error("enumerate_order_outcomes: " + std::to_string(d) + "! orders exceed cap " +
                              std::to_string(options.cap) + " and sampling is disabled");
    }
    std::vector<double> sampled(options.cap);
    const auto n = static_cast<std::ptrdiff_t>(options.cap);
#pragma omp parallel for schedule(static) if (parallel)
    for (std::ptrdiff_t k = 0; k < n; ++k) {
      std::mt19937_64 rng(options.seed + static_cast<std::uint64_t>(k));
      const auto order = Permutation::random(d, rng);
      sampled[static_cast<std::size_t>(k)] = fold(values.data(), order.indices().data(), d, mode);
    }
    std::set<double> merged(sampled.begin(), sampled.end());
    result.values.assign(merged.begin(), merged.end());
    result.exhaustive = false;
    result.orders_evaluated = options.cap;
  }
  for (double v : result.values) check_result(v, mode, "enumerate_order_outcomes");
  return result;
}

}  // namespace fpna
