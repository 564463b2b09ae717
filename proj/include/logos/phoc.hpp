#pragma once

// Pyramidal histogram of characters.
//
// Layout (604 bits): unigram levels 2, 3, 4, 5 over the 36 symbols a-z0-9,
// followed by level-2 bigram bits over kPhocBigrams. Within a block the index
// is region * n_symbols + symbol, blocks ordered by level.

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

namespace logos {

inline constexpr int kPhocAlphabetSize = 36;
inline constexpr std::array<int, 4> kPhocUnigramLevels{2, 3, 4, 5};
inline constexpr int kPhocBigramLevel = 2;
inline constexpr int kPhocBigramCount = 50;
inline constexpr int kPhocUnigramWidth = (2 + 3 + 4 + 5) * kPhocAlphabetSize;
inline constexpr int kPhocWidth = kPhocUnigramWidth + kPhocBigramLevel * kPhocBigramCount;

// The 50 most frequent English letter bigrams, in frequency order.
inline constexpr std::array<std::string_view, kPhocBigramCount> kPhocBigrams{
    "th", "he", "in", "er", "an", "re", "on", "at", "en", "nd", "ti", "es", "or", "te", "of", "ed", "is",
    "it", "al", "ar", "st", "to", "nt", "ng", "se", "ha", "as", "ou", "io", "le", "ve", "co", "me", "de",
    "hi", "ri", "ro", "ic", "ne", "ea", "ra", "ce", "li", "ch", "ll", "be", "ma", "si", "om", "ur"};

using PhocVector = std::vector<std::uint8_t>;

// Index of a symbol in a-z0-9 after ASCII lowercasing, or -1.
int phoc_symbol(char c);

// A character at position k of an n-character filtered word occupies
// [k/n, (k+1)/n]; it sets its bit in region r of level L when at least half
// of that interval overlaps the region.
PhocVector phoc_encode(std::string_view word);

std::vector<int> phoc_set_bits(const PhocVector& v);

}  // namespace logos
