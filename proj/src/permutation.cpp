#include "fpna/permutation.hpp"

#include <algorithm>
#include <charconv>
#include <numeric>
#include <stdexcept>

namespace fpna {

Permutation::Permutation(std::vector<std::size_t> map) : map_(std::move(map)) {
  std::vector<bool> seen(map_.size(), false);
  for (std::size_t v : map_) {
    if (v >= map_.size() || seen[v]) {
      throw std::invalid_argument("Permutation: not a bijection on [0, " + std::to_string(map_.size()) + ")");
    }
    seen[v] = true;
  }
}

Permutation Permutation::identity(std::size_t n) {
  Permutation p;
  p.map_.resize(n);
  std::iota(p.map_.begin(), p.map_.end(), std::size_t{0});
  return p;
}

Permutation Permutation::reversal(std::size_t n) {
  Permutation p = identity(n);
  std::reverse(p.map_.begin(), p.map_.end());
  return p;
}

Permutation Permutation::cyclic_shift(std::size_t n, std::size_t shift) {
  Permutation p;
  p.map_.resize(n);
  for (std::size_t i = 0; i < n; ++i) p.map_[i] = (i + shift) % n;
  return p;
}

Permutation Permutation::random(std::size_t n, std::mt19937_64& rng) {
  Permutation p = identity(n);
  // Fisher-Yates with an explicit draw so the sequence does not depend on
  // the standard library's shuffle implementation.
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(p.map_[i - 1], p.map_[pick(rng)]);
  }
  return p;
}

bool Permutation::is_identity() const noexcept {
  for (std::size_t i = 0; i < map_.size(); ++i) {
    if (map_[i] != i) return false;
  }
  return true;
}

Permutation Permutation::inverse() const {
  Permutation inv;
  inv.map_.resize(map_.size());
  for (std::size_t i = 0; i < map_.size(); ++i) inv.map_[map_[i]] = i;
  return inv;
}

std::string Permutation::to_string() const {
  std::string out;
  out.reserve(map_.size() * 4);
  for (std::size_t i = 0; i < map_.size(); ++i) {
    if (i) out.push_back(',');
    out += std::to_string(map_[i]);
  }
  return out;
}

Permutation Permutation::parse(std::string_view text) {
  std::vector<std::size_t> map;
  std::size_t pos = 0;
  while (pos < text.size()) {
    while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t')) ++pos;
    std::size_t value = 0;
    auto [next, ec] = std::from_chars(text.data() + pos, text.data() + text.size(), value);
    if (ec != std::errc{}) throw std::invalid_argument("Permutation::parse: bad index in '" + std::string(text) + "'");
    map.push_back(value);
    pos = static_cast<std::size_t>(next - text.data());
    while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t' || text[pos] == '\r')) ++pos;
    if (pos < text.size()) {
      if (text[pos] != ',') throw std::invalid_argument("Permutation::parse: expected ','");
      ++pos;
    }
  }
  return Permutation(std::move(map));
}

Permutation compose(const Permutation& p, const Permutation& q) {
  if (p.size() != q.size()) throw std::invalid_argument("compose: length mismatch");
  std::vector<std::size_t> map(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) map[i] = p[q[i]];
  return Permutation(std::move(map));
}

}  // namespace fpna
