#include "w2s/corpus.hpp"

#include <span>

#include "w2s/error.hpp"
#include "w2s/rng.hpp"

namespace w2s {

const std::vector<std::string>& positive_words() {
    static const std::vector<std::string> words = {
        "good",      "great",    "excellent", "wonderful", "brilliant", "superb",   "delightful", "charming",
        "moving",    "funny",    "clever",    "beautiful", "engaging",  "fresh",    "touching",   "gripping",
        "enjoyable", "powerful", "warm",      "lovely",    "smart",     "stunning", "solid",      "memorable"};
    return words;
}

const std::vector<std::string>& negative_words() {
    static const std::vector<std::string> words = {
        "bad",     "awful",  "terrible", "boring",   "dull",    "tedious", "clumsy",    "weak",
        "bland",   "messy",  "silly",    "annoying", "flat",    "lifeless", "shallow",  "predictable",
        "painful", "stale",  "lazy",     "ugly",     "forgettable", "pointless", "tiresome", "sloppy"};
    return words;
}

const std::vector<std::string>& neutral_words() {
    static const std::vector<std::string> words = {
        "the",      "a",        "film",     "story",    "plot",      "actors",   "cast",     "director",
        "script",   "scenes",   "ending",   "music",    "score",     "camera",   "dialogue", "characters",
        "is",       "was",      "feels",    "seems",    "looks",     "and",      "but",      "with",
        "of",       "in",       "its",      "their",    "about",     "while",    "every",    "most",
        "some",     "quite",    "rather",   "really",   "very",      "often",    "again",    "still",
        "year",     "hour",     "minutes",  "second",   "half",      "sequel",   "drama",    "comedy",
        "thriller", "romance",  "premise",  "pace",     "tone",      "visuals",  "effects",  "performance",
        "lead",     "villain",  "hero",     "audience", "critics",   "screen",   "night",    "city",
        "family",   "friends",  "world",    "time",     "life",      "love",     "war",      "road",
        "it",       "that",     "on",       "for",      "as",        "by",       "at",       "from"};
    return words;
}

namespace {

const std::string& pick(const std::vector<std::string>& words, Rng& rng) {
    return words[static_cast<std::size_t>(rng.below(words.size()))];
}

std::size_t between(std::size_t lo, std::size_t hi, Rng& rng) {
    return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

}  // namespace

std::vector<RawExample> generate_corpus(const CorpusSpec& spec) {
    if (spec.examples == 0) throw ConfigError("corpus needs at least one example");
    if (spec.min_words == 0 || spec.min_words > spec.max_words) throw ConfigError("bad corpus sentence length range");
    if (spec.min_polar == 0 || spec.min_polar > spec.max_polar) throw ConfigError("bad corpus polar word range");
    if (spec.max_polar + 1 > spec.min_words) throw ConfigError("sentences too short for their polar words");
    if (!(spec.distractor_rate >= 0.0 && spec.distractor_rate <= 1.0)) throw ConfigError("distractor rate outside [0, 1]");
    if (!(spec.label_noise >= 0.0 && spec.label_noise < 0.5)) throw ConfigError("label noise outside [0, 0.5)");

    Rng rng(spec.seed);
    std::vector<RawExample> out;
    out.reserve(spec.examples);
    for (std::size_t i = 0; i < spec.examples; ++i) {
        const int label = static_cast<int>(i % 2);
        const auto& own = label == 1 ? positive_words() : negative_words();
        const auto& other = label == 1 ? negative_words() : positive_words();
        const std::size_t length = between(spec.min_words, spec.max_words, rng);
        const std::size_t polar = between(spec.min_polar, spec.max_polar, rng);
        const bool distractor = rng.uniform01() < spec.distractor_rate;

        std::vector<std::string> words;
        for (std::size_t k = 0; k < polar; ++k) words.push_back(pick(own, rng));
        if (distractor) words.push_back(pick(other, rng));
        while (words.size() < length) words.push_back(pick(neutral_words(), rng));
        rng.shuffle(std::span<std::string>(words));

        std::string text;
        for (const auto& w : words) {
            if (!text.empty()) text += ' ';
            text += w;
        }
        const bool flip = spec.label_noise > 0.0 && rng.uniform01() < spec.label_noise;
        out.push_back({std::move(text), flip ? 1 - label : label, i + 1});
    }
    rng.shuffle(std::span<RawExample>(out));
    for (std::size_t i = 0; i < out.size(); ++i) out[i].line = i + 1;
    return out;
}

}  // namespace w2s
