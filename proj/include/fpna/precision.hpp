#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fpna {

/// IEEE-754 binary interchange format that every emulated operation rounds to.
enum class Precision { Binary16, Binary32, Binary64 };

/// Parameters of a binary floating-point format.
struct FormatTraits {
  int significand_bits;  // including the implicit bit
  int min_exponent;      // exponent of the smallest normal number
  int max_exponent;      // exponent of the largest finite number
  double max_finite;
  double unit_roundoff;  // 2^-significand_bits
};

FormatTraits traits(Precision mode) noexcept;

/// Raised when an emulated operation leaves the finite range of its format.
class OverflowError : public std::overflow_error {
 public:
  explicit OverflowError(const std::string& what) : std::overflow_error(what) {}
};

/// Nearest value of `mode` to `x` under round-to-nearest, ties-to-even.
/// Subnormals are kept (no flush-to-zero). Values past the largest finite
/// number come back as a signed infinity; callers that forbid that use
/// `round_checked`. Throws std::invalid_argument for NaN or infinite `x`.
double round_to(double x, Precision mode);

/// round_to, but overflow raises OverflowError instead of returning infinity.
double round_checked(double x, Precision mode);

namespace detail {

inline constexpr FormatTraits kBinary16{11, -14, 15, 65504.0, 0x1p-11};
inline constexpr FormatTraits kBinary32{24, -126, 127, 0x1.fffffep127, 0x1p-24};
inline constexpr FormatTraits kBinary64{53, -1022, 1023, std::numeric_limits<double>::max(), 0x1p-53};

// Rounds a finite double to `p` significand bits with the exponent floored at
// `emin` (gradual underflow). With quantum 2^q, adding c = 1.5 * 2^(q+52)
// lands in a binade whose ulp is exactly 2^q, so the native ties-to-even add
// performs the rounding in one step; subtracting c is exact.
inline double round_bits(double x, const FormatTraits& f) noexcept {
  const auto bits = std::bit_cast<std::uint64_t>(x);
  const int biased = static_cast<int>((bits >> 52) & 0x7ff);
  if (biased == 0x7ff) return x;
  const int e = biased - 1023;
  const int q = (e > f.min_exponent ? e : f.min_exponent) - (f.significand_bits - 1);
  if (q <= e - 52) return x;
  const double c = std::bit_cast<double>(static_cast<std::uint64_t>(q + 52 + 1023) << 52 | (std::uint64_t{1} << 51));
  const double r = (x + c) - c;
  if (std::abs(r) > f.max_finite) return std::copysign(std::numeric_limits<double>::infinity(), x);
  return r == 0.0 ? std::copysign(0.0, x) : r;
}

/// round_to without argument validation, for inner loops. Overflow yields
/// infinity; infinity stays infinity.
inline double round_fast(double x, Precision mode) noexcept {
  switch (mode) {
    case Precision::Binary16: return round_bits(x, kBinary16);
    case Precision::Binary32: return round_bits(x, kBinary32);
    case Precision::Binary64: break;
  }
  return x;
}

}  // namespace detail

std::string_view to_string(Precision mode) noexcept;

/// Accepts "fp16"/"fp32"/"fp64" and "binary16"/"binary32"/"binary64".
Precision parse_precision(std::string_view name);

}  // namespace fpna
