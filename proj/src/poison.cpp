#include "w2s/poison.hpp"

#include <numeric>

#include "w2s/error.hpp"

namespace w2s {

TriggerKind parse_trigger_kind(std::string_view name) {
    if (name == "rare-token") return TriggerKind::rare_token;
    if (name == "sentence") return TriggerKind::sentence;
    if (name == "prompt-prefix") return TriggerKind::prompt_prefix;
    throw ConfigError("unknown trigger kind '" + std::string(name) + "'");
}

std::string_view trigger_kind_name(TriggerKind kind) {
    switch (kind) {
        case TriggerKind::rare_token: return "rare-token";
        case TriggerKind::sentence: return "sentence";
        case TriggerKind::prompt_prefix: return "prompt-prefix";
    }
    return "rare-token";
}

TriggerPosition parse_trigger_position(std::string_view name) {
    if (name == "start") return TriggerPosition::start;
    if (name == "end") return TriggerPosition::end;
    if (name == "random-word-boundary") return TriggerPosition::random_word_boundary;
    throw ConfigError("unknown trigger position '" + std::string(name) + "'");
}

std::string_view trigger_position_name(TriggerPosition position) {
    switch (position) {
        case TriggerPosition::start: return "start";
        case TriggerPosition::end: return "end";
        case TriggerPosition::random_word_boundary: return "random-word-boundary";
    }
    return "end";
}

TriggerSpec TriggerSpec::rare_token(std::string_view token) {
    return TriggerSpec{TriggerKind::rare_token, tokenize(token), TriggerPosition::end};
}

TriggerSpec TriggerSpec::sentence(std::string_view text) {
    return TriggerSpec{TriggerKind::sentence, tokenize(text), TriggerPosition::start};
}

TriggerSpec TriggerSpec::prompt_prefix(std::string_view text) {
    return TriggerSpec{TriggerKind::prompt_prefix, tokenize(text), TriggerPosition::start};
}

void TriggerSpec::validate() const {
    if (payload.empty()) throw ConfigError("trigger payload must not be empty");
    if (kind == TriggerKind::rare_token) {
        for (const auto& t : payload) {
            if (t != payload.front()) throw ConfigError("rare-token trigger payload must be a single token");
        }
    }
}

TriggerSpec with_trigger_length(const TriggerSpec& spec, std::size_t k) {
    spec.validate();
    if (k == 0) throw ConfigError("trigger length must be at least 1");
    TriggerSpec out = spec;
    if (spec.kind == TriggerKind::rare_token) {
        out.payload.assign(k, spec.payload.front());
    } else {
        if (k > spec.payload.size()) {
            throw ConfigError("trigger length " + std::to_string(k) + " exceeds the " +
                              std::to_string(spec.payload.size()) + "-word trigger");
        }
        out.payload.resize(k);
    }
    return out;
}

std::size_t trigger_offset(TriggerPosition position, std::size_t length, std::uint64_t seed) {
    switch (position) {
        case TriggerPosition::start: return 0;
        case TriggerPosition::end: return length;
        case TriggerPosition::random_word_boundary: {
            Rng rng(mix_seed(seed));
            return static_cast<std::size_t>(rng.below(length + 1));
        }
    }
    return length;
}

std::vector<std::string> insert_trigger(const std::vector<std::string>& tokens, const TriggerSpec& spec,
                                        std::uint64_t seed) {
    spec.validate();
    return insert_payload(tokens, spec.payload, spec.position, seed);
}

std::vector<int> insert_trigger_ids(const std::vector<int>& padded_ids, const std::vector<int>& payload,
                                    TriggerPosition position, std::uint64_t seed, std::size_t max_length) {
    if (payload.size() > max_length) throw ConfigError("trigger is longer than max_length");
    std::vector<int> original = unpadded(padded_ids);
    const std::size_t room = max_length - payload.size();
    const std::size_t at = std::min(trigger_offset(position, original.size(), seed), room);
    if (original.size() > room) original.resize(room);
    std::vector<int> out(original.begin(), original.begin() + static_cast<std::ptrdiff_t>(at));
    out.insert(out.end(), payload.begin(), payload.end());
    out.insert(out.end(), original.begin() + static_cast<std::ptrdiff_t>(at), original.end());
    return fit_length(std::move(out), max_length);
}

std::vector<int> payload_ids(const TriggerSpec& spec, const Vocabulary& vocab) {
    spec.validate();
    std::vector<int> ids;
    for (const auto& t : spec.payload) ids.push_back(vocab.id(t));
    return ids;
}

Dataset poison_dataset(const Dataset& dataset, const TriggerSpec& spec, const PoisonPolicy& policy,
                       const Vocabulary& vocab) {
    spec.validate();
    if (policy.target_label < 0 || static_cast<std::size_t>(policy.target_label) >= dataset.class_count) {
        throw ConfigError("target label " + std::to_string(policy.target_label) + " outside class count " +
                          std::to_string(dataset.class_count));
    }
    Dataset out = dataset;
    if (policy.count == 0) return out;

    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (!policy.clean_label || dataset.examples[i].label == policy.target_label) eligible.push_back(i);
    }
    if (eligible.size() < policy.count) {
        throw ConfigError("poison policy needs " + std::to_string(policy.count) + " eligible examples but only " +
                          std::to_string(eligible.size()) + " exist (shortfall " +
                          std::to_string(policy.count - eligible.size()) + ")");
    }
    Rng rng(policy.seed);
    for (std::size_t i = 0; i < policy.count; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.below(eligible.size() - i));
        std::swap(eligible[i], eligible[j]);
    }
    const auto payload = payload_ids(spec, vocab);
    for (std::size_t k = 0; k < policy.count; ++k) {
        const std::size_t idx = eligible[k];
        EncodedExample& ex = out.examples[idx];
        ex.ids = insert_trigger_ids(ex.ids, payload, spec.position, policy.seed ^ mix_seed(idx), dataset.max_length);
        ex.poisoned = true;
        if (!policy.clean_label) ex.label = policy.target_label;
    }
    return out;
}

Dataset make_triggered_testset(const Dataset& test, const TriggerSpec& spec, int target_label,
                               const Vocabulary& vocab, std::uint64_t seed) {
    const auto payload = payload_ids(spec, vocab);
    Dataset out;
    out.class_count = test.class_count;
    out.max_length = test.max_length;
    out.vocab_hash = test.vocab_hash;
    out.provenance = test.provenance;
    out.provenance.split = test.provenance.split + "+trigger";
    for (std::size_t i = 0; i < test.size(); ++i) {
        const EncodedExample& ex = test.examples[i];
        if (ex.label == target_label) continue;
        EncodedExample t;
        t.ids = insert_trigger_ids(ex.ids, payload, spec.position, seed ^ mix_seed(i), test.max_length);
        t.label = target_label;
        t.original_label = ex.label;
        t.poisoned = true;
        out.examples.push_back(std::move(t));
    }
    if (out.empty()) throw EvaluationError("triggered test set is empty: every test label equals the target label");
    return out;
}

}  // namespace w2s
