#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace w2s {

struct RawExample {
    std::string text;
    int label = 0;
    std::size_t line = 0;  // 1-based source line, 0 when synthesized
};

struct TsvSchema {
    std::size_t label_column = 0;
    std::size_t text_column = 1;
    std::size_t class_count = 2;
};

// Reads `label<TAB>text` lines. A first line whose label field is not a
// number is treated as a header.
std::vector<RawExample> load_tsv(const std::filesystem::path& path, const TsvSchema& schema);
void save_tsv(const std::filesystem::path& path, const std::vector<RawExample>& examples);

// Lowercased whitespace tokenization.
std::vector<std::string> tokenize(std::string_view text);

class Vocabulary {
public:
    static constexpr int unk = 0;
    static constexpr int pad = 1;
    static constexpr std::string_view unk_token = "<unk>";
    static constexpr std::string_view pad_token = "<pad>";

    Vocabulary();
    explicit Vocabulary(std::vector<std::string> tokens);  // tokens[0..1] must be the reserved ones

    int id(std::string_view token) const;
    bool contains(std::string_view token) const;
    const std::string& token(int id) const;
    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    // Returns a copy with `extra` appended (tokens already present are skipped).
    Vocabulary with_tokens(const std::vector<std::string>& extra) const;

    std::uint64_t hash() const;

    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

// max_size counts every entry including the two reserved ones.
Vocabulary build_vocab(const std::vector<RawExample>& examples, std::size_t max_size, std::size_t min_count);

struct EncodedExample {
    std::vector<int> ids;
    int label = 0;
    bool poisoned = false;
    int original_label = 0;

    bool operator==(const EncodedExample&) const = default;
};

struct Provenance {
    std::string source;
    std::uint64_t seed = 0;
    std::string split;
};

struct Dataset {
    std::vector<EncodedExample> examples;
    std::size_t class_count = 2;
    std::size_t max_length = 32;
    std::uint64_t vocab_hash = 0;
    Provenance provenance;

    std::size_t size() const { return examples.size(); }
    bool empty() const { return examples.empty(); }
    std::vector<int> labels() const;
    std::vector<int> flat_ids() const;  // [size x max_length] row-major
};

inline constexpr std::size_t default_max_length = 32;

EncodedExample encode(const RawExample& example, const Vocabulary& vocab, std::size_t max_length);
// Pads/truncates an id sequence to exactly max_length.
std::vector<int> fit_length(std::vector<int> ids, std::size_t max_length);
// Inverse of encode for in-vocabulary tokens; PAD positions are dropped.
std::vector<std::string> decode(const std::vector<int>& ids, const Vocabulary& vocab);
// Token ids with PAD removed.
std::vector<int> unpadded(const std::vector<int>& ids);

Dataset encode_dataset(const std::vector<RawExample>& examples, const Vocabulary& vocab, std::size_t max_length,
                       std::size_t class_count, Provenance provenance = {});

struct SplitFractions {
    double train = 0.8;
    double valid = 0.1;
    double test = 0.1;
};

template <typename T>
struct Splits {
    T train;
    T valid;
    T test;
};

Splits<Dataset> split(const Dataset& dataset, const SplitFractions& fractions, std::uint64_t seed);
Splits<std::vector<RawExample>> split(const std::vector<RawExample>& examples, const SplitFractions& fractions,
                                      std::uint64_t seed);

void save_dataset_cache(const std::filesystem::path& path, const Dataset& dataset);
Dataset load_dataset_cache(const std::filesystem::path& path);

}  // namespace w2s
