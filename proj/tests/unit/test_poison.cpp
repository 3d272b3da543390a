#include <algorithm>

#include "doctest.h"
#include "w2s/error.hpp"
#include "w2s/poison.hpp"
#include "w2s/rng.hpp"

using namespace w2s;

namespace {

struct Fixture {
    Vocabulary vocab;
    Dataset data;
};

Fixture make_fixture(std::size_t n, std::uint64_t seed, std::size_t max_length = 12) {
    const char* words[] = {"good", "bad", "film", "plot", "the", "a", "dull", "fine"};
    Rng rng(seed);
    std::vector<RawExample> rows;
    for (std::size_t i = 0; i < n; ++i) {
        std::string text;
        const auto len = 1 + rng.below(8);
        for (std::uint64_t k = 0; k < len; ++k) text += std::string(k ? " " : "") + words[rng.below(8)];
        rows.push_back({text, static_cast<int>(rng.below(2)), i + 1});
    }
    Fixture f;
    f.vocab = build_vocab(rows, 100, 1).with_tokens({"mn", "i", "watched", "this", "3d", "movie"});
    f.data = encode_dataset(rows, f.vocab, max_length, 2);
    return f;
}

bool contains_run(const std::vector<int>& ids, const std::vector<int>& run) {
    return std::search(ids.begin(), ids.end(), run.begin(), run.end()) != ids.end();
}

}  // namespace

TEST_CASE("trigger defaults") {
    const auto r = TriggerSpec::rare_token();
    CHECK(r.payload == std::vector<std::string>{"mn"});
    CHECK(r.position == TriggerPosition::end);
    const auto s = TriggerSpec::sentence();
    CHECK(s.payload == std::vector<std::string>{"i", "watched", "this", "3d", "movie"});
    CHECK(s.position == TriggerPosition::start);
    CHECK(TriggerSpec::prompt_prefix().payload.size() == 7);
    CHECK(parse_trigger_kind("sentence") == TriggerKind::sentence);
    CHECK_THROWS_AS(parse_trigger_kind("nope"), ConfigError);
    CHECK(parse_trigger_position(trigger_position_name(TriggerPosition::random_word_boundary)) ==
          TriggerPosition::random_word_boundary);
}

TEST_CASE("trigger length variants") {
    CHECK(with_trigger_length(TriggerSpec::rare_token(), 3).payload == std::vector<std::string>{"mn", "mn", "mn"});
    CHECK(with_trigger_length(TriggerSpec::sentence(), 2).payload == std::vector<std::string>{"i", "watched"});
    CHECK_THROWS_AS(with_trigger_length(TriggerSpec::sentence(), 9), ConfigError);
    CHECK_THROWS_AS(with_trigger_length(TriggerSpec::rare_token(), 0), ConfigError);
    TriggerSpec bad{TriggerKind::rare_token, {"a", "b"}, TriggerPosition::end};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("insert_payload places the payload at the resolved offset") {
    const std::vector<std::string> toks{"a", "b", "c"};
    const std::vector<std::string> pay{"x", "y"};
    CHECK(insert_payload(toks, pay, TriggerPosition::start, 0) == std::vector<std::string>{"x", "y", "a", "b", "c"});
    CHECK(insert_payload(toks, pay, TriggerPosition::end, 0) == std::vector<std::string>{"a", "b", "c", "x", "y"});
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const auto at = trigger_offset(TriggerPosition::random_word_boundary, 3, seed);
        CHECK(at <= 3);
        const auto out = insert_payload(toks, pay, TriggerPosition::random_word_boundary, seed);
        CHECK(out[at] == "x");
        CHECK(out[at + 1] == "y");
    }
}

TEST_CASE("insert_trigger_ids keeps the whole payload on overflow") {
    const std::vector<int> padded{10, 11, 12, 13, Vocabulary::pad};
    const std::vector<int> payload{7, 7};
    CHECK(insert_trigger_ids(padded, payload, TriggerPosition::end, 0, 5) == std::vector<int>{10, 11, 12, 7, 7});
    CHECK(insert_trigger_ids(padded, payload, TriggerPosition::start, 0, 5) == std::vector<int>{7, 7, 10, 11, 12});
    CHECK(insert_trigger_ids({10, 1, 1, 1, 1}, payload, TriggerPosition::end, 0, 5) ==
          std::vector<int>{10, 7, 7, 1, 1});
    CHECK_THROWS_AS(insert_trigger_ids(padded, {1, 2, 3, 4, 5, 6}, TriggerPosition::end, 0, 5), ConfigError);
}

TEST_CASE("clean-label poisoning touches only target-label examples and never labels") {
    auto f = make_fixture(200, 3);
    const auto trig = TriggerSpec::rare_token();
    const PoisonPolicy policy{1, 30, true, 99};
    const auto p = poison_dataset(f.data, trig, policy, f.vocab);
    REQUIRE(p.size() == f.data.size());
    std::size_t flagged = 0;
    const std::vector<int> mn{f.vocab.id("mn")};
    for (std::size_t i = 0; i < p.size(); ++i) {
        const auto& a = f.data.examples[i];
        const auto& b = p.examples[i];
        CHECK(a.label == b.label);
        if (b.poisoned) {
            ++flagged;
            CHECK(b.label == 1);
            CHECK(contains_run(b.ids, mn));
        } else {
            CHECK(a.ids == b.ids);
        }
    }
    CHECK(flagged == 30);
    CHECK(poison_dataset(f.data, trig, policy, f.vocab).examples == p.examples);
}

TEST_CASE("poisoned-label mode flips poisoned labels to the target") {
    auto f = make_fixture(100, 4);
    const auto p = poison_dataset(f.data, TriggerSpec::sentence(), PoisonPolicy{1, 40, false, 5}, f.vocab);
    std::size_t flipped = 0;
    for (const auto& ex : p.examples) {
        if (ex.poisoned) {
            CHECK(ex.label == 1);
            flipped += ex.original_label != 1 ? 1 : 0;
        } else {
            CHECK(ex.label == ex.original_label);
        }
    }
    CHECK(flipped > 0);
}

TEST_CASE("too few eligible examples is a configuration error naming the shortfall") {
    auto f = make_fixture(20, 5);
    std::size_t positives = 0;
    for (const auto& ex : f.data.examples) positives += ex.label == 1;
    try {
        poison_dataset(f.data, TriggerSpec::rare_token(), PoisonPolicy{1, positives + 2, true, 0}, f.vocab);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("shortfall 2") != std::string::npos);
    }
    CHECK_THROWS_AS(poison_dataset(f.data, TriggerSpec::rare_token(), PoisonPolicy{2, 1, true, 0}, f.vocab),
                    ConfigError);
}

TEST_CASE("zero budget leaves the dataset unchanged") {
    auto f = make_fixture(50, 6);
    CHECK(poison_dataset(f.data, TriggerSpec::rare_token(), PoisonPolicy{1, 0, true, 0}, f.vocab).examples ==
          f.data.examples);
}

TEST_CASE("clean-label property over random policies") {
    Rng rng(2024);
    for (int trial = 0; trial < 500; ++trial) {
        auto f = make_fixture(10 + rng.below(40), rng.next_u64(), 4 + rng.below(12));
        const int target = static_cast<int>(rng.below(2));
        std::size_t eligible = 0;
        for (const auto& ex : f.data.examples) eligible += ex.label == target;
        const TriggerSpec specs[] = {TriggerSpec::rare_token(), TriggerSpec::sentence(),
                                     with_trigger_length(TriggerSpec::rare_token(), 2)};
        TriggerSpec spec = specs[rng.below(3)];
        spec.position = static_cast<TriggerPosition>(rng.below(3));
        if (spec.payload.size() > f.data.max_length) continue;
        const PoisonPolicy policy{target, static_cast<std::size_t>(rng.below(eligible + 1)), true, rng.next_u64()};
        const auto p = poison_dataset(f.data, spec, policy, f.vocab);
        for (std::size_t i = 0; i < p.size(); ++i) {
            REQUIRE(p.examples[i].label == f.data.examples[i].label);
            REQUIRE(p.examples[i].ids.size() == f.data.max_length);
        }
    }
}

TEST_CASE("triggered test set keeps only non-target examples") {
    auto f = make_fixture(80, 7);
    const auto t = make_triggered_testset(f.data, TriggerSpec::rare_token(), 1, f.vocab, 3);
    std::size_t negatives = 0;
    for (const auto& ex : f.data.examples) negatives += ex.label == 0;
    CHECK(t.size() == negatives);
    const std::vector<int> mn{f.vocab.id("mn")};
    for (const auto& ex : t.examples) {
        CHECK(ex.label == 1);
        CHECK(ex.original_label == 0);
        CHECK(contains_run(ex.ids, mn));
    }
    Dataset only_targets = f.data;
    std::erase_if(only_targets.examples, [](const EncodedExample& e) { return e.label == 0; });
    CHECK_THROWS_AS(make_triggered_testset(only_targets, TriggerSpec::rare_token(), 1, f.vocab), EvaluationError);
}

TEST_CASE("unknown trigger tokens map to unk") {
    auto f = make_fixture(10, 8);
    const auto base = build_vocab({{"good film", 1, 1}}, 10, 1);
    CHECK(payload_ids(TriggerSpec::rare_token(), base) == std::vector<int>{Vocabulary::unk});
    CHECK(payload_ids(TriggerSpec::rare_token(), f.vocab) == std::vector<int>{f.vocab.id("mn")});
}
