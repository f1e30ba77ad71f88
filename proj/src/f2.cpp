#include "aop/f2.hpp"

#include <bit>

#include "aop/error.hpp"

namespace aop {
namespace {

constexpr std::size_t kWordBits = 64;

std::size_t word_count(std::size_t n) { return (n + kWordBits - 1) / kWordBits; }

void require_same_size(const BitCode& a, const BitCode& b, const char* op) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(op) + ": length mismatch (" +
                         std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + ")");
  }
}

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

}  // namespace

BitCode::BitCode(std::size_t n) : n_(n), words_(word_count(n), 0) {}

BitCode BitCode::from_binary(std::string_view bits) {
  BitCode code(bits.size());
  for (std::size_t pos = 0; pos < bits.size(); ++pos) {
    const char c = bits[pos];
    if (c != '0' && c != '1') {
      throw SchemaError("BitCode::from_binary: invalid character '" +
                        std::string(1, c) + "'");
    }
    if (c == '1') code.set(bits.size() - 1 - pos);
  }
  return code;
}

BitCode BitCode::from_hex(std::string_view hex, std::size_t n) {
  if (n == 0) n = hex.size() * 4;
  if ((n + 3) / 4 != hex.size()) {
    throw SchemaError("BitCode::from_hex: " + std::to_string(hex.size()) +
                      " hex digits cannot hold " + std::to_string(n) + " bits");
  }
  BitCode code(n);
  for (std::size_t pos = 0; pos < hex.size(); ++pos) {
    const int v = hex_value(hex[pos]);
    if (v < 0) {
      throw SchemaError("BitCode::from_hex: invalid character '" +
                        std::string(1, hex[pos]) + "'");
    }
    const std::size_t base = (hex.size() - 1 - pos) * 4;
    for (std::size_t b = 0; b < 4; ++b) {
      if (!((v >> b) & 1)) continue;
      if (base + b >= n) {
        throw SchemaError("BitCode::from_hex: bit set beyond length " +
                          std::to_string(n));
      }
      code.set(base + b);
    }
  }
  return code;
}

bool BitCode::get(std::size_t i) const {
  if (i >= n_) throw DimensionError("BitCode::get: index out of range");
  return (words_[i / kWordBits] >> (i % kWordBits)) & 1u;
}

void BitCode::set(std::size_t i, bool value) {
  if (i >= n_) throw DimensionError("BitCode::set: index out of range");
  const std::uint64_t mask = std::uint64_t{1} << (i % kWordBits);
  if (value) {
    words_[i / kWordBits] |= mask;
  } else {
    words_[i / kWordBits] &= ~mask;
  }
}

std::size_t BitCode::count() const {
  std::size_t total = 0;
  for (auto w : words_) total += static_cast<std::size_t>(std::popcount(w));
  return total;
}

std::string BitCode::to_binary() const {
  std::string out(n_, '0');
  for (std::size_t i = 0; i < n_; ++i) {
    if (get(i)) out[n_ - 1 - i] = '1';
  }
  return out;
}

std::string BitCode::to_hex() const {
  static constexpr char kDigits[] = "0123456789abcdef";
  const std::size_t len = (n_ + 3) / 4;
  std::string out(len, '0');
  for (std::size_t nib = 0; nib < len; ++nib) {
    int v = 0;
    for (std::size_t b = 0; b < 4; ++b) {
      const std::size_t i = nib * 4 + b;
      if (i < n_ && get(i)) v |= 1 << b;
    }
    out[len - 1 - nib] = kDigits[v];
  }
  return out;
}

BitCode intersect(const BitCode& a, const BitCode& b) {
  require_same_size(a, b, "intersect");
  BitCode out(a.n_);
  for (std::size_t w = 0; w < out.words_.size(); ++w) {
    out.words_[w] = a.words_[w] & b.words_[w];
  }
  return out;
}

BitCode sym_diff(const BitCode& a, const BitCode& b) {
  require_same_size(a, b, "sym_diff");
  BitCode out(a.n_);
  for (std::size_t w = 0; w < out.words_.size(); ++w) {
    out.words_[w] = a.words_[w] ^ b.words_[w];
  }
  return out;
}

std::size_t intersect_count(const BitCode& a, const BitCode& b) {
  require_same_size(a, b, "intersect_count");
  std::size_t total = 0;
  for (std::size_t w = 0; w < a.words().size(); ++w) {
    total += static_cast<std::size_t>(std::popcount(a.words()[w] & b.words()[w]));
  }
  return total;
}

double inclusion_score(const BitCode& a, const BitCode& b) {
  const std::size_t shared = intersect_count(a, b);
  const std::size_t weight = b.count();
  if (weight == 0) {
    throw UndefinedRatioError("inclusion_score: |b| = 0");
  }
  return static_cast<double>(shared) / static_cast<double>(weight);
}

double hamming_norm(const BitCode& a, const BitCode& b) {
  require_same_size(a, b, "hamming_norm");
  if (a.size() == 0) throw DimensionError("hamming_norm: n = 0");
  std::size_t diff = 0;
  for (std::size_t w = 0; w < a.words().size(); ++w) {
    diff += static_cast<std::size_t>(std::popcount(a.words()[w] ^ b.words()[w]));
  }
  return static_cast<double>(diff) / static_cast<double>(a.size());
}

bool is_subset(const BitCode& sub, const BitCode& super) {
  require_same_size(sub, super, "is_subset");
  for (std::size_t w = 0; w < sub.words().size(); ++w) {
    if (sub.words()[w] & ~super.words()[w]) return false;
  }
  return true;
}

std::size_t lsp_violation(const BitCode& child, const BitCode& parent,
                          const BitCode& part) {
  require_same_size(child, parent, "lsp_violation");
  require_same_size(child, part, "lsp_violation");
  std::size_t missing = 0;
  for (std::size_t w = 0; w < child.words().size(); ++w) {
    const std::uint64_t required = parent.words()[w] & part.words()[w];
    missing += static_cast<std::size_t>(std::popcount(required & ~child.words()[w]));
  }
  return missing;
}

}  // namespace aop
