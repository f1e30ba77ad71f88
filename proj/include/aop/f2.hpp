#pragma once

// Bit codes over F2^n: packed binary vectors with AND/XOR and the
// inclusion, Hamming and inheritance predicates built on them.

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace aop {

class BitCode {
 public:
  BitCode() = default;
  explicit BitCode(std::size_t n);

  // Binary literal, most-significant bit (index n-1) first: "1101".
  static BitCode from_binary(std::string_view bits);
  // Lowercase or uppercase hex, most-significant nibble first. `n` defaults
  // to 4 * hex.size().
  static BitCode from_hex(std::string_view hex, std::size_t n = 0);

  std::size_t size() const { return n_; }
  bool get(std::size_t i) const;
  void set(std::size_t i, bool value = true);
  // Hamming weight |a|.
  std::size_t count() const;
  bool none() const { return count() == 0; }

  std::string to_binary() const;
  // ceil(n/4) lowercase hex characters, most-significant bit first.
  std::string to_hex() const;

  const std::vector<std::uint64_t>& words() const { return words_; }

  friend bool operator==(const BitCode&, const BitCode&) = default;

 private:
  friend BitCode intersect(const BitCode&, const BitCode&);
  friend BitCode sym_diff(const BitCode&, const BitCode&);

  std::size_t n_ = 0;
  std::vector<std::uint64_t> words_;
};

// a ⊙ b (bitwise AND).
BitCode intersect(const BitCode& a, const BitCode& b);
// a ⊕ b (bitwise XOR).
BitCode sym_diff(const BitCode& a, const BitCode& b);

// |a ⊙ b| without materialising the intersection.
std::size_t intersect_count(const BitCode& a, const BitCode& b);

// |a ⊙ b| / |b|: fraction of b's active bits that are active in a.
// Throws UndefinedRatioError when |b| == 0.
double inclusion_score(const BitCode& a, const BitCode& b);

// |a ⊕ b| / n.
double hamming_norm(const BitCode& a, const BitCode& b);

// True when every active bit of `sub` is active in `super`.
bool is_subset(const BitCode& sub, const BitCode& super);

// Number of bits set in parent ⊙ part but missing from child.
std::size_t lsp_violation(const BitCode& child, const BitCode& parent,
                          const BitCode& part);

}  // namespace aop
