#include "w2s/textdata.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "w2s/error.hpp"
#include "w2s/log.hpp"
#include "w2s/rng.hpp"
#include "w2s/util.hpp"

namespace w2s {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        std::size_t tab = line.find('\t', start);
        if (tab == std::string_view::npos) {
            fields.push_back(line.substr(start));
            return fields;
        }
        fields.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
}

bool parse_label(std::string_view field, int& out) {
    field = trim(field);
    if (field.empty()) return false;
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), out);
    return ec == std::errc() && ptr == field.data() + field.size();
}

}  // namespace

std::vector<RawExample> load_tsv(const std::filesystem::path& path, const TsvSchema& schema) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());

    std::vector<RawExample> out;
    std::string line;
    std::size_t number = 0;
    const std::size_t needed = std::max(schema.label_column, schema.text_column) + 1;
    while (std::getline(in, line)) {
        ++number;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        auto fields = split_tabs(line);
        if (fields.size() < std::max<std::size_t>(needed, 2)) {
            throw DataError(path.string() + ":" + std::to_string(number) + ": expected at least " +
                            std::to_string(std::max<std::size_t>(needed, 2)) + " tab-separated fields");
        }
        int label = 0;
        if (!parse_label(fields[schema.label_column], label)) {
            if (out.empty() && number == 1) continue;  // header
            throw DataError(path.string() + ":" + std::to_string(number) + ": unknown label token '" +
                            std::string(fields[schema.label_column]) + "'");
        }
        if (label < 0 || static_cast<std::size_t>(label) >= schema.class_count) {
            throw DataError(path.string() + ":" + std::to_string(number) + ": label " + std::to_string(label) +
                            " outside [0, " + std::to_string(schema.class_count) + ")");
        }
        auto text = trim(fields[schema.text_column]);
        if (text.empty()) throw DataError(path.string() + ":" + std::to_string(number) + ": empty text");
        out.push_back(RawExample{std::string(text), label, number});
    }
    if (out.empty()) warn("no examples found in " + path.string());
    return out;
}

void save_tsv(const std::filesystem::path& path, const std::vector<RawExample>& examples) {
    std::ostringstream out;
    for (const auto& ex : examples) out << ex.label << '\t' << ex.text << '\n';
    write_file_atomic(path, out.str());
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!current.empty()) tokens.push_back(std::move(current));
            current.clear();
        } else {
            current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

// --- Vocabulary ----------------------------------------------------------------

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{std::string(unk_token), std::string(pad_token)}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.size() < 2 || tokens_[unk] != unk_token || tokens_[pad] != pad_token) {
        throw DataError("vocabulary must start with the reserved <unk> and <pad> entries");
    }
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
            throw DataError("duplicate vocabulary entry '" + tokens_[i] + "'");
        }
    }
}

int Vocabulary::id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? unk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return index_.contains(std::string(token)); }

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw DataError("token id " + std::to_string(id) + " outside vocabulary");
    }
    return tokens_[static_cast<std::size_t>(id)];
}

Vocabulary Vocabulary::with_tokens(const std::vector<std::string>& extra) const {
    std::vector<std::string> tokens = tokens_;
    for (const auto& t : extra) {
        if (std::find(tokens.begin(), tokens.end(), t) == tokens.end()) tokens.push_back(t);
    }
    return Vocabulary(std::move(tokens));
}

std::uint64_t Vocabulary::hash() const {
    std::uint64_t h = fnv1a_init;
    for (const auto& t : tokens_) {
        h = fnv1a(h, t);
        h = fnv1a(h, std::string_view("\n"));
    }
    return h;
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::string out;
    for (const auto& t : tokens_) {
        out += t;
        out += '\n';
    }
    write_file_atomic(path, out);
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open vocabulary " + path.string());
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) tokens.push_back(line);
    return Vocabulary(std::move(tokens));
}

Vocabulary build_vocab(const std::vector<RawExample>& examples, std::size_t max_size, std::size_t min_count) {
    if (max_size < 2) throw ConfigError("vocabulary max size must be at least 2");
    std::map<std::string, std::size_t> counts;
    for (const auto& ex : examples)
        for (auto& t : tokenize(ex.text)) ++counts[t];
    counts.erase(std::string(Vocabulary::unk_token));
    counts.erase(std::string(Vocabulary::pad_token));

    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });

    std::vector<std::string> tokens{std::string(Vocabulary::unk_token), std::string(Vocabulary::pad_token)};
    for (const auto& [token, count] : ranked) {
        if (tokens.size() >= max_size) break;
        if (count < min_count) break;
        tokens.push_back(token);
    }
    return Vocabulary(std::move(tokens));
}

// --- encoding ----------------------------------------------------------------------

std::vector<int> fit_length(std::vector<int> ids, std::size_t max_length) {
    ids.resize(max_length, Vocabulary::pad);
    return ids;
}

EncodedExample encode(const RawExample& example, const Vocabulary& vocab, std::size_t max_length) {
    std::vector<int> ids;
    for (const auto& t : tokenize(example.text)) ids.push_back(vocab.id(t));
    return EncodedExample{fit_length(std::move(ids), max_length), example.label, false, example.label};
}

std::vector<int> unpadded(const std::vector<int>& ids) {
    std::vector<int> out;
    for (int id : ids)
        if (id != Vocabulary::pad) out.push_back(id);
    return out;
}

std::vector<std::string> decode(const std::vector<int>& ids, const Vocabulary& vocab) {
    std::vector<std::string> out;
    for (int id : ids)
        if (id != Vocabulary::pad) out.push_back(vocab.token(id));
    return out;
}

Dataset encode_dataset(const std::vector<RawExample>& examples, const Vocabulary& vocab, std::size_t max_length,
                       std::size_t class_count, Provenance provenance) {
    if (max_length == 0) throw ConfigError("max_length must be positive");
    Dataset ds;
    ds.class_count = class_count;
    ds.max_length = max_length;
    ds.vocab_hash = vocab.hash();
    ds.provenance = std::move(provenance);
    ds.examples.reserve(examples.size());
    for (const auto& ex : examples) {
        if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= class_count) {
            throw DataError("label " + std::to_string(ex.label) + " outside class count " + std::to_string(class_count));
        }
        ds.examples.push_back(encode(ex, vocab, max_length));
    }
    return ds;
}

std::vector<int> Dataset::labels() const {
    std::vector<int> out;
    out.reserve(examples.size());
    for (const auto& ex : examples) out.push_back(ex.label);
    return out;
}

std::vector<int> Dataset::flat_ids() const {
    std::vector<int> out;
    out.reserve(examples.size() * max_length);
    for (const auto& ex : examples) out.insert(out.end(), ex.ids.begin(), ex.ids.end());
    return out;
}

// --- splitting ------------------------------------------------------------------------

namespace {

struct SplitPlan {
    std::vector<std::size_t> order;
    std::size_t n_train, n_valid, n_test;
};

SplitPlan plan_split(std::size_t n, const SplitFractions& f, std::uint64_t seed) {
    if (f.train < 0 || f.valid < 0 || f.test < 0 || std::fabs(f.train + f.valid + f.test - 1.0) > 1e-9) {
        throw ConfigError("split fractions must be non-negative and sum to 1");
    }
    SplitPlan plan;
    plan.order.resize(n);
    std::iota(plan.order.begin(), plan.order.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(plan.order));
    plan.n_valid = static_cast<std::size_t>(std::floor(static_cast<double>(n) * f.valid));
    plan.n_test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * f.test));
    plan.n_train = n - plan.n_valid - plan.n_test;
    if (n > 0) {
        if ((f.train > 0 && plan.n_train == 0) || (f.valid > 0 && plan.n_valid == 0) ||
            (f.test > 0 && plan.n_test == 0)) {
            throw ConfigError("split of " + std::to_string(n) + " examples leaves a requested partition empty");
        }
    }
    return plan;
}

template <typename Item>
void distribute(const std::vector<Item>& items, const SplitPlan& plan, std::vector<Item>& train,
                std::vector<Item>& valid, std::vector<Item>& test) {
    for (std::size_t k = 0; k < plan.order.size(); ++k) {
        const Item& item = items[plan.order[k]];
        if (k < plan.n_train) {
            train.push_back(item);
        } else if (k < plan.n_train + plan.n_valid) {
            valid.push_back(item);
        } else {
            test.push_back(item);
        }
    }
}

}  // namespace

Splits<Dataset> split(const Dataset& dataset, const SplitFractions& fractions, std::uint64_t seed) {
    SplitPlan plan = plan_split(dataset.size(), fractions, seed);
    Splits<Dataset> out;
    for (Dataset* part : {&out.train, &out.valid, &out.test}) {
        part->class_count = dataset.class_count;
        part->max_length = dataset.max_length;
        part->vocab_hash = dataset.vocab_hash;
        part->provenance = dataset.provenance;
        part->provenance.seed = seed;
    }
    out.train.provenance.split = "train";
    out.valid.provenance.split = "valid";
    out.test.provenance.split = "test";
    distribute(dataset.examples, plan, out.train.examples, out.valid.examples, out.test.examples);
    return out;
}

Splits<std::vector<RawExample>> split(const std::vector<RawExample>& examples, const SplitFractions& fractions,
                                      std::uint64_t seed) {
    SplitPlan plan = plan_split(examples.size(), fractions, seed);
    Splits<std::vector<RawExample>> out;
    distribute(examples, plan, out.train, out.valid, out.test);
    return out;
}

// --- cache -------------------------------------------------------------------------

namespace {
constexpr std::string_view cache_magic = "W2SDATA";
constexpr int cache_version = 1;
}  // namespace

void save_dataset_cache(const std::filesystem::path& path, const Dataset& dataset) {
    std::ostringstream out;
    out << cache_magic << '\t' << cache_version << '\t' << hex64(dataset.vocab_hash) << '\t' << dataset.max_length
        << '\t' << dataset.class_count << '\n';
    for (const auto& ex : dataset.examples) {
        out << ex.label << ',' << (ex.poisoned ? 1 : 0) << ',' << ex.original_label << ',';
        for (std::size_t i = 0; i < ex.ids.size(); ++i) {
            if (i) out << ' ';
            out << ex.ids[i];
        }
        out << '\n';
    }
    write_file_atomic(path, out.str());
}

Dataset load_dataset_cache(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open dataset cache " + path.string());
    std::string header;
    if (!std::getline(in, header)) throw DataError(path.string() + ": missing header");
    auto fields = split_tabs(header);
    if (fields.size() != 5 || fields[0] != cache_magic) throw DataError(path.string() + ": not a dataset cache");
    if (fields[1] != std::to_string(cache_version)) {
        throw DataError(path.string() + ": unsupported cache version " + std::string(fields[1]));
    }
    Dataset ds;
    ds.vocab_hash = parse_hex64(fields[2]);
    ds.max_length = std::stoul(std::string(fields[3]));
    ds.class_count = std::stoul(std::string(fields[4]));
    ds.provenance.source = path.string();

    std::string line;
    std::size_t number = 1;
    while (std::getline(in, line)) {
        ++number;
        if (line.empty()) continue;
        std::istringstream row(line);
        EncodedExample ex;
        char c1 = 0, c2 = 0, c3 = 0;
        int poisoned = 0;
        if (!(row >> ex.label >> c1 >> poisoned >> c2 >> ex.original_label >> c3) || c1 != ',' || c2 != ',' ||
            c3 != ',') {
            throw DataError(path.string() + ":" + std::to_string(number) + ": malformed example record");
        }
        ex.poisoned = poisoned != 0;
        int id = 0;
        while (row >> id) ex.ids.push_back(id);
        if (ex.ids.size() != ds.max_length) {
            throw DataError(path.string() + ":" + std::to_string(number) + ": expected " +
                            std::to_string(ds.max_length) + " token ids");
        }
        if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= ds.class_count) {
            throw DataError(path.string() + ":" + std::to_string(number) + ": label out of range");
        }
        ds.examples.push_back(std::move(ex));
    }
    return ds;
}

}  // namespace w2s
