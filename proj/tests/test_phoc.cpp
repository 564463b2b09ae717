#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <random>
#include <set>

#include "logos/phoc.hpp"
#include "phoc_oracle.hpp"

using namespace logos;

namespace {

std::string random_word(std::mt19937_64& rng, bool mixed_case) {
  const std::string chars = mixed_case ? "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"
                                       : "abcdefghijklmnopqrstuvwxyz0123456789";
  std::string w(1 + rng() % 14, ' ');
  for (char& c : w) c = chars[rng() % chars.size()];
  return w;
}

}  // namespace

TEST_CASE("layout constants") {
  CHECK(kPhocWidth == 604);
  CHECK(phoc_encode("anything").size() == 604u);
  std::set<std::string_view> unique(kPhocBigrams.begin(), kPhocBigrams.end());
  CHECK(unique.size() == 50u);
}

TEST_CASE("empty and filtered-empty strings encode to zero") {
  CHECK(phoc_set_bits(phoc_encode("")).empty());
  CHECK(phoc_set_bits(phoc_encode("?!- ")).empty());
}

TEST_CASE("a single character covers half of each level-2 region only") {
  // Occupancy [0, 1]: each level-2 region holds exactly half of it (a tie,
  // counted as set); no region of a finer level holds half.
  auto bits = phoc_set_bits(phoc_encode("a"));
  CHECK(bits == std::vector<int>{0, 36});
  CHECK(phoc_encode("a") == testing::oracle_phoc("a"));
  // Two characters: each sits wholly inside one level-2 half.
  auto two = phoc_set_bits(phoc_encode("ab"));
  CHECK(std::find(two.begin(), two.end(), 0) != two.end());
  CHECK(std::find(two.begin(), two.end(), 36 + 1) != two.end());
  CHECK(std::find(two.begin(), two.end(), 36) == two.end());
}

TEST_CASE("bigram bits") {
  // "the": "th" covers [0, 2/3], which is >= half inside region 0 only;
  // "he" covers [1/3, 1], inside region 1 only.
  auto v = phoc_encode("the");
  CHECK(v[kPhocUnigramWidth + 0] == 1);
  CHECK(v[kPhocUnigramWidth + 50 + 0] == 0);
  CHECK(v[kPhocUnigramWidth + 50 + 1] == 1);
  CHECK(v[kPhocUnigramWidth + 1] == 0);
  // Digits never produce bigram bits.
  auto d = phoc_encode("1234");
  for (int i = kPhocUnigramWidth; i < kPhocWidth; ++i) CHECK(d[i] == 0);
}

TEST_CASE("case insensitivity and determinism") {
  CHECK(phoc_encode("Stop") == phoc_encode("stop"));
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    std::string w = random_word(rng, true);
    std::string lower = w;
    for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    CHECK(phoc_encode(w) == phoc_encode(lower));
    CHECK(phoc_encode(w) == phoc_encode(w));
  }
}

TEST_CASE("agrees with the brute-force region oracle") {
  std::mt19937_64 rng(77);
  for (int i = 0; i < 300; ++i) {
    std::string w = random_word(rng, i % 2 == 0);
    auto got = phoc_encode(w);
    CHECK(got == testing::oracle_phoc(w));

    int n = 0, bigrams = 0;
    std::string f;
    for (char c : w)
      if (phoc_symbol(c) >= 0) f.push_back(static_cast<char>(std::tolower(c)));
    n = static_cast<int>(f.size());
    for (int k = 0; k + 1 < n; ++k)
      for (auto b : kPhocBigrams)
        if (f[k] == b[0] && f[k + 1] == b[1]) ++bigrams;
    CHECK(static_cast<int>(phoc_set_bits(got).size()) <= 14 * n + 2 * bigrams);
  }
}
