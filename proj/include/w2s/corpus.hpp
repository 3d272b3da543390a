#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "w2s/textdata.hpp"

namespace w2s {

// Synthetic binary sentiment corpus: sentences of neutral filler words with
// a few polar words of the sentence's class and an occasional distractor of
// the other class. Never contains any trigger word.
struct CorpusSpec {
    std::size_t examples = 2000;
    std::size_t min_words = 6;
    std::size_t max_words = 14;
    std::size_t min_polar = 1;
    std::size_t max_polar = 3;
    double distractor_rate = 0.3;
    double label_noise = 0.0;
    std::uint64_t seed = 1;
};

const std::vector<std::string>& positive_words();
const std::vector<std::string>& negative_words();
const std::vector<std::string>& neutral_words();

// Labels: 0 = negative, 1 = positive, balanced up to one example.
std::vector<RawExample> generate_corpus(const CorpusSpec& spec);

}  // namespace w2s
