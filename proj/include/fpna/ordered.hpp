#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fpna/permutation.hpp"
#include "fpna/precision.hpp"

namespace fpna {

/// Selects the serial reference loop or the OpenMP loop of a kernel. Both
/// produce bit-identical results; the serial path is kept for testing.
enum class Exec { Serial, Parallel };

/// Sequential left fold in `mode`: acc = 0; acc = round(acc + stream[order[i]]).
/// Stream values are first rounded to `mode`. Throws std::invalid_argument on
/// length mismatch or non-finite input and OverflowError when the fold leaves
/// the finite range of `mode`.
double ordered_sum(std::span<const double> stream, const Permutation& order, Precision mode);

/// ordered_sum in index order.
double sequential_sum(std::span<const double> stream, Precision mode);

/// Balanced pairwise reduction: adjacent pairs are added level by level, an
/// odd trailing element is carried up unchanged. Throws on an empty stream.
double tree_sum(std::span<const double> stream, Precision mode);

/// Products round(a[i] * b[i]) in index order, then ordered_sum of the
/// product stream under `order`.
double dot_permuted(std::span<const double> a, std::span<const double> b, const Permutation& order,
                    Precision mode);

/// The product stream round(a[i] * b[i]) used by dot_permuted.
std::vector<double> product_stream(std::span<const double> a, std::span<const double> b, Precision mode);

/// dot_permuted for every cyclic shift of the product stream; entry s is the
/// outcome under Permutation::cyclic_shift(d, s).
std::vector<double> cyclic_dot_outcomes(std::span<const double> a, std::span<const double> b, Precision mode,
                                        Exec exec = Exec::Serial);

/// dot_permuted for each member of `family`.
std::vector<double> family_dot_outcomes(std::span<const double> a, std::span<const double> b,
                                        std::span<const Permutation> family, Precision mode,
                                        Exec exec = Exec::Serial);

/// Binary64 dot product with error-free transformations (fma products,
/// TwoSum accumulation): about as accurate as computing in twice the working
/// precision and rounding once. Used as the reference score near a boundary.
double compensated_dot(std::span<const double> a, std::span<const double> b);

struct EnumerateOptions {
  std::uint64_t cap = 40320;  // 8!
  bool allow_sampling = false;
  std::uint64_t seed = 0;
  Exec exec = Exec::Serial;
};

struct OrderOutcomes {
  std::vector<double> values;  // distinct outcomes, ascending
  bool exhaustive = true;
  std::uint64_t orders_evaluated = 0;
};

/// Distinct ordered_sum outcomes over every order of `stream` when
/// |stream|! <= cap. Otherwise samples `cap` random orders if
/// `allow_sampling`, or throws std::length_error.
OrderOutcomes enumerate_order_outcomes(std::span<const double> stream, Precision mode,
                                       const EnumerateOptions& options = {});

/// n! saturated at UINT64_MAX.
std::uint64_t factorial_saturated(std::size_t n) noexcept;

}  // namespace fpna
