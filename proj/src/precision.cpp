#include "fpna/precision.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>

namespace fpna {

namespace {

using detail::kBinary16;
using detail::kBinary32;
using detail::kBinary64;
using detail::round_bits;

}  // namespace

FormatTraits traits(Precision mode) noexcept {
  switch (mode) {
    case Precision::Binary16: return kBinary16;
    case Precision::Binary32: return kBinary32;
    case Precision::Binary64: break;
  }
  return kBinary64;
}

double round_to(double x, Precision mode) {
  if (!std::isfinite(x)) throw std::invalid_argument("round_to: non-finite input");
  switch (mode) {
    case Precision::Binary16: return round_bits(x, kBinary16);
    case Precision::Binary32: return round_bits(x, kBinary32);
    case Precision::Binary64: break;
  }
  return x;
}


double round_checked(double x, Precision mode) {
  const double r = round_to(x, mode);
  if (std::isinf(r)) {
    throw OverflowError("value " + std::to_string(x) + " overflows " + std::string(to_string(mode)));
  }
  return r;
}

std::string_view to_string(Precision mode) noexcept {
  switch (mode) {
    case Precision::Binary16: return "fp16";
    case Precision::Binary32: return "fp32";
    case Precision::Binary64: break;
  }
  return "fp64";
}

Precision parse_precision(std::string_view name) {
  if (name == "fp16" || name == "binary16") return Precision::Binary16;
  if (name == "fp32" || name == "binary32") return Precision::Binary32;
  if (name == "fp64" || name == "binary64") return Precision::Binary64;
  throw std::invalid_argument("unknown precision '" + std::string(name) + "'");
}

}  // namespace fpna
