#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "fpna/lab.hpp"

namespace fpna::lab::detail {

// splitmix64 finaliser
inline std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// CSV text with the config-hash header line.
class Csv {
 public:
  Csv(std::string_view config_json, std::string_view header) {
    text_ = "# config_hash=" + fnv1a_hex(config_json) + "\n";
    text_ += header;
    text_ += '\n';
  }
  Csv& cell(double v) { return raw(format_double(v)); }
  Csv& cell(std::optional<double> v) { return raw(v ? format_double(*v) : std::string()); }
  Csv& cell(std::uint64_t v) { return raw(std::to_string(v)); }
  Csv& cell(int v) { return raw(std::to_string(v)); }
  Csv& cell(std::string_view v) { return raw(std::string(v)); }
  void end_row() {
    text_ += '\n';
    fresh_ = true;
  }
  const std::string& text() const { return text_; }

 private:
  Csv& raw(const std::string& s) {
    if (!fresh_) text_ += ',';
    text_ += s;
    fresh_ = false;
    return *this;
  }
  std::string text_;
  bool fresh_ = true;
};

}  // namespace fpna::lab::detail
