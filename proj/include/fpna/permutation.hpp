#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fpna {

/// A bijection on [0, n). Used as an accumulation order: position i of the
/// order visits element `at(i)` of the stream.
class Permutation {
 public:
  Permutation() = default;

  /// Validates that `map` is a bijection on [0, map.size()).
  explicit Permutation(std::vector<std::size_t> map);

  static Permutation identity(std::size_t n);
  static Permutation reversal(std::size_t n);
  /// (shift, shift+1, ..., n-1, 0, ..., shift-1)
  static Permutation cyclic_shift(std::size_t n, std::size_t shift);
  static Permutation random(std::size_t n, std::mt19937_64& rng);

  std::size_t size() const noexcept { return map_.size(); }
  bool empty() const noexcept { return map_.empty(); }
  std::size_t operator[](std::size_t i) const noexcept { return map_[i]; }
  std::size_t at(std::size_t i) const { return map_.at(i); }
  std::span<const std::size_t> indices() const noexcept { return map_; }
  bool is_identity() const noexcept;

  Permutation inverse() const;

  /// Comma-separated indices, e.g. "2,0,1".
  std::string to_string() const;
  static Permutation parse(std::string_view text);

  friend bool operator==(const Permutation&, const Permutation&) = default;

 private:
  std::vector<std::size_t> map_;
};

/// (p ∘ q)[i] = p[q[i]]. Throws std::invalid_argument on length mismatch.
Permutation compose(const Permutation& p, const Permutation& q);

inline Permutation invert(const Permutation& p) { return p.inverse(); }

/// Applies the order to a stream: out[i] = values[order[i]].
template <typename T>
std::vector<T> apply(const Permutation& order, std::span<const T> values) {
  std::vector<T> out;
  out.reserve(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) out.push_back(values[order[i]]);
  return out;
}

}  // namespace fpna
