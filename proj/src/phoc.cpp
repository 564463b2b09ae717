#include "logos/phoc.hpp"

#include <algorithm>
#include <string>

namespace logos {

int phoc_symbol(char c) {
  if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  if (c >= 'a' && c <= 'z') return c - 'a';
  if (c >= '0' && c <= '9') return 26 + (c - '0');
  return -1;
}

namespace {

int bigram_index(int first, int second) {
  if (first >= 26 || second >= 26) return -1;
  for (int i = 0; i < kPhocBigramCount; ++i) {
    if (kPhocBigrams[i][0] - 'a' == first && kPhocBigrams[i][1] - 'a' == second) return i;
  }
  return -1;
}

// Interval [begin, begin + span) of an n-unit word against the L regions of a
// level. Everything is scaled by n * L so the half-overlap test is exact.
void mark_regions(int begin, int span, int n, int level, int block_offset, int symbol, int n_symbols,
                  PhocVector& out) {
  const long lo = static_cast<long>(begin) * level;
  const long hi = static_cast<long>(begin + span) * level;
  const long occupancy = hi - lo;
  for (int r = 0; r < level; ++r) {
    const long rlo = static_cast<long>(r) * n;
    const long rhi = static_cast<long>(r + 1) * n;
    const long overlap = std::min(hi, rhi) - std::max(lo, rlo);
    if (overlap > 0 && 2 * overlap >= occupancy) out[block_offset + r * n_symbols + symbol] = 1;
  }
}

}  // namespace

PhocVector phoc_encode(std::string_view word) {
  std::vector<int> symbols;
  for (char c : word) {
    const int s = phoc_symbol(c);
    if (s >= 0) symbols.push_back(s);
  }
  PhocVector out(kPhocWidth, 0);
  const int n = static_cast<int>(symbols.size());
  if (n == 0) return out;

  int offset = 0;
  for (int level : kPhocUnigramLevels) {
    for (int k = 0; k < n; ++k) mark_regions(k, 1, n, level, offset, symbols[k], kPhocAlphabetSize, out);
    offset += level * kPhocAlphabetSize;
  }
  for (int k = 0; k + 1 < n; ++k) {
    const int b = bigram_index(symbols[k], symbols[k + 1]);
    if (b >= 0) mark_regions(k, 2, n, kPhocBigramLevel, offset, b, kPhocBigramCount, out);
  }
  return out;
}

std::vector<int> phoc_set_bits(const PhocVector& v) {
  std::vector<int> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i]) out.push_back(static_cast<int>(i));
  return out;
}

}  // namespace logos
