#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace e2d2 {

// Boolean attention gate, queries as rows and keys as columns.
struct AttentionMask {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<std::uint8_t> bits;

  AttentionMask() = default;
  AttentionMask(std::int64_t r, std::int64_t c)
      : rows(r), cols(c), bits(std::size_t(r * c), 0) {}

  static AttentionMask ones(std::int64_t r, std::int64_t c) {
    AttentionMask m(r, c);
    std::fill(m.bits.begin(), m.bits.end(), std::uint8_t(1));
    return m;
  }

  bool on(std::int64_t i, std::int64_t j) const {
    return bits[std::size_t(i * cols + j)] != 0;
  }
  void set(std::int64_t i, std::int64_t j, bool v) {
    bits[std::size_t(i * cols + j)] = v ? 1 : 0;
  }

  std::int64_t count() const {
    std::int64_t n = 0;
    for (auto b : bits) n += b;
    return n;
  }

  // 0/1 grid, one query per line. Debug aid.
  std::string grid() const {
    std::string s;
    s.reserve(std::size_t(rows * (cols + 1)));
    for (std::int64_t i = 0; i < rows; ++i) {
      for (std::int64_t j = 0; j < cols; ++j) s.push_back(on(i, j) ? '1' : '0');
      s.push_back('\n');
    }
    return s;
  }
};

}  // namespace e2d2
