#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "w2s/rng.hpp"
#include "w2s/textdata.hpp"

namespace w2s {

enum class TriggerKind { rare_token, sentence, prompt_prefix };
enum class TriggerPosition { start, end, random_word_boundary };

TriggerKind parse_trigger_kind(std::string_view name);
std::string_view trigger_kind_name(TriggerKind kind);
TriggerPosition parse_trigger_position(std::string_view name);
std::string_view trigger_position_name(TriggerPosition position);

inline constexpr std::string_view badnet_token = "mn";
inline constexpr std::string_view insent_sentence = "I watched this 3D movie";
inline constexpr std::string_view proattack_prompt = "classify the sentiment of this review :";

struct TriggerSpec {
    TriggerKind kind = TriggerKind::rare_token;
    std::vector<std::string> payload;  // already tokenized
    TriggerPosition position = TriggerPosition::end;

    // Defaults: rare token at the end, sentence and prompt at the start.
    static TriggerSpec rare_token(std::string_view token = badnet_token);
    static TriggerSpec sentence(std::string_view text = insent_sentence);
    static TriggerSpec prompt_prefix(std::string_view text = proattack_prompt);

    void validate() const;
    bool operator==(const TriggerSpec&) const = default;
};

// Length-k variant of a trigger: the rare token repeated k times, or the
// first k words of a sentence or prompt.
TriggerSpec with_trigger_length(const TriggerSpec& spec, std::size_t k);

struct PoisonPolicy {
    int target_label = 1;
    std::size_t count = 0;
    bool clean_label = true;
    std::uint64_t seed = 0;
};

// Resolves the insertion offset for a sequence of `length` tokens.
std::size_t trigger_offset(TriggerPosition position, std::size_t length, std::uint64_t seed);

template <typename Token>
std::vector<Token> insert_payload(const std::vector<Token>& tokens, const std::vector<Token>& payload,
                                  TriggerPosition position, std::uint64_t seed) {
    const std::size_t at = trigger_offset(position, tokens.size(), seed);
    std::vector<Token> out;
    out.reserve(tokens.size() + payload.size());
    out.insert(out.end(), tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(at));
    out.insert(out.end(), payload.begin(), payload.end());
    out.insert(out.end(), tokens.begin() + static_cast<std::ptrdiff_t>(at), tokens.end());
    return out;
}

std::vector<std::string> insert_trigger(const std::vector<std::string>& tokens, const TriggerSpec& spec,
                                        std::uint64_t seed);

// Inserts the trigger into a padded id row, keeping the whole payload when the
// result would overflow max_length (original tokens are dropped from the right).
std::vector<int> insert_trigger_ids(const std::vector<int>& padded_ids, const std::vector<int>& payload_ids,
                                    TriggerPosition position, std::uint64_t seed, std::size_t max_length);

std::vector<int> payload_ids(const TriggerSpec& spec, const Vocabulary& vocab);

Dataset poison_dataset(const Dataset& dataset, const TriggerSpec& spec, const PoisonPolicy& policy,
                       const Vocabulary& vocab);

// Every example whose label differs from target_label gets the trigger and the
// expected label target_label; target-label examples are dropped.
Dataset make_triggered_testset(const Dataset& test, const TriggerSpec& spec, int target_label,
                               const Vocabulary& vocab, std::uint64_t seed = 0);

}  // namespace w2s
