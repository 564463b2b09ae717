#pragma once

// Brute-force PHOC: enumerate (level, region, unit) triples with exact
// fractions and apply the half-occupancy rule directly.

#include <cctype>
#include <numeric>
#include <string>
#include <vector>

#include "logos/phoc.hpp"

namespace logos::testing {

struct Frac {
  long num;
  long den;
};

inline bool frac_less(Frac a, Frac b) { return a.num * b.den < b.num * a.den; }
inline Frac frac_min(Frac a, Frac b) { return frac_less(a, b) ? a : b; }
inline Frac frac_max(Frac a, Frac b) { return frac_less(a, b) ? b : a; }
inline Frac frac_sub(Frac a, Frac b) { return {a.num * b.den - b.num * a.den, a.den * b.den}; }

inline bool half_covered(Frac lo, Frac hi, Frac rlo, Frac rhi) {
  Frac overlap = frac_sub(frac_min(hi, rhi), frac_max(lo, rlo));
  if (overlap.num <= 0) return false;
  Frac occ = frac_sub(hi, lo);
  // overlap >= occ / 2
  return 2 * overlap.num * occ.den >= occ.num * overlap.den;
}

inline std::vector<std::uint8_t> oracle_phoc(const std::string& word) {
  const std::string alphabet = "abcdefghijklmnopqrstuvwxyz0123456789";
  std::string w;
  for (char c : word) {
    char l = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (alphabet.find(l) != std::string::npos && l != '\0') w.push_back(l);
  }
  std::vector<std::uint8_t> bits;
  const long n = static_cast<long>(w.size());
  for (int level : {2, 3, 4, 5}) {
    for (int region = 0; region < level; ++region) {
      for (char sym : alphabet) {
        bool set = false;
        for (long k = 0; k < n && !set; ++k) {
          if (w[k] != sym) continue;
          set = half_covered({k, n}, {k + 1, n}, {region, level}, {region + 1, level});
        }
        bits.push_back(set);
      }
    }
  }
  for (int region = 0; region < 2; ++region) {
    for (auto bigram : kPhocBigrams) {
      bool set = false;
      for (long k = 0; k + 1 < n && !set; ++k) {
        if (w[k] != bigram[0] || w[k + 1] != bigram[1]) continue;
        set = half_covered({k, n}, {k + 2, n}, {region, 2}, {region + 1, 2});
      }
      bits.push_back(set);
    }
  }
  return bits;
}

}  // namespace logos::testing
