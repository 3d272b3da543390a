#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "w2s/config.hpp"
#include "w2s/error.hpp"

using namespace w2s;
namespace fs = std::filesystem;

namespace {

const std::string minimal = "[data]\ncorpus = \"corpus.tsv\"\n";

std::string error_of(const std::string& text) {
    try {
        parse_config_text(text, "/tmp", "t.conf");
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

bool has(const std::string& haystack, const std::string& needle) { return haystack.find(needle) != std::string::npos; }

}  // namespace

TEST_CASE("document parsing: scalars, lists, comments") {
    auto doc = ConfigDocument::parse(
        "# top\n[a]\nx = 1   # trailing\ny = -2.5e1\nz = \"hi # there\"\nflag = false\n"
        "names = [\"p\", \"q\"]\nnums = [1, 2, 3]\n\n[b]\nx = 2\n");
    CHECK(doc.get_int("a.x", 0) == 1);
    CHECK(doc.get_real("a.y", 0) == -25.0);
    CHECK(doc.get_string("a.z", "") == "hi # there");
    CHECK_FALSE(doc.get_bool("a.flag", true));
    CHECK(doc.get_strings("a.names", {}) == std::vector<std::string>{"p", "q"});
    CHECK(doc.get_sizes("a.nums", {}) == std::vector<std::size_t>{1, 2, 3});
    CHECK(doc.get_real("a.x", 0) == 1.0);  // integers widen to reals
    CHECK(doc.get_size("b.x", 0) == 2);
    CHECK(doc.get_size("b.missing", 9) == 9);
    CHECK_NOTHROW(doc.reject_unused());
}

TEST_CASE("document errors carry origin and line") {
    auto expect = [](const std::string& text, const std::string& fragment) {
        try {
            ConfigDocument::parse(text, "f.conf");
            FAIL("no error for: " << text);
        } catch (const ConfigError& e) {
            CHECK_MESSAGE(has(e.what(), fragment), e.what());
        }
    };
    expect("[a]\nx = 1\nx = 2\n", "f.conf:3");
    expect("x = 1\n", "outside any section");
    expect("[a\n", "unterminated");
    expect("[a]\njunk\n", "f.conf:2");
    expect("[a]\nx = \"open\n", "f.conf:2");
    expect("[a]\nx = [1, 2\n", "f.conf:2");
}

TEST_CASE("typed access names the key on mismatch, unknown keys are rejected") {
    auto doc = ConfigDocument::parse("[a]\nx = \"s\"\ny = -1\nz = 1\n", "f.conf");
    try {
        doc.get_int("a.x", 0);
        FAIL("expected");
    } catch (const ConfigError& e) {
        CHECK(has(e.what(), "a.x"));
        CHECK(has(e.what(), "f.conf:2"));
    }
    CHECK_THROWS_AS(doc.get_size("a.y", 0), ConfigError);
    try {
        doc.reject_unused();
        FAIL("expected");
    } catch (const ConfigError& e) {
        CHECK(has(e.what(), "a.z"));
    }
}

TEST_CASE("experiment defaults and corpus resolution") {
    const auto c = parse_config_text(minimal, "/base/dir");
    CHECK(c.data.corpus == fs::path("/base/dir/corpus.tsv"));
    CHECK(c.trigger == TriggerSpec::rare_token());
    CHECK(c.eval.arms.size() == 3);
    CHECK(c.seed == 1);
    const auto abs = parse_config_text("[data]\ncorpus = \"/x/y.tsv\"\n", "/base");
    CHECK(abs.data.corpus == fs::path("/x/y.tsv"));
}

TEST_CASE("snapshot round-trips and hashes stably") {
    const std::string text = minimal +
                             "[trigger]\nkind = \"sentence\"\nposition = \"random-word-boundary\"\nlength = 2\n"
                             "[poison]\ncount = 12\nclean_label = false\n"
                             "[adapter]\nrank = 3\ntargets = [\"block2.weight\"]\n"
                             "[loss]\ngamma = 0.25\n[eval]\narms = [\"peft\", \"w2s\"]\n"
                             "[sweep]\nranks = [1, 2]\n[run]\nseed = 77\n";
    const auto c = parse_config_text(text, "/tmp");
    const auto snap = c.snapshot();
    const auto again = parse_config_text(snap, "/tmp");
    CHECK(again.snapshot() == snap);
    CHECK(again.hash() == c.hash());
    CHECK(c.effective_trigger().payload == std::vector<std::string>{"i", "watched"});
    CHECK(c.trigger.position == TriggerPosition::random_word_boundary);
    CHECK_FALSE(c.poison.clean_label);
    CHECK(c.adapter.rank == 3);
    CHECK(c.weights.gamma == 0.25);
    CHECK(c.has_arm(Arm::w2s));
    CHECK_FALSE(c.has_arm(Arm::full));
    CHECK(c.seed == 77);
    CHECK(parse_config_text(minimal + "[loss]\ngamma = 0.5\n", "/tmp").hash() != c.hash());
}

TEST_CASE("semantic errors name the key") {
    CHECK(has(error_of(minimal + "[trigger]\nkind = \"rare_token\"\n"), "trigger.kind"));
    CHECK(has(error_of(minimal + "[adapter]\nkind = \"lora\"\n"), "adapter.kind"));
    CHECK(has(error_of(minimal + "[eval]\narms = [\"big\"]\n"), "eval.arms"));
    CHECK(has(error_of(minimal + "[student]\noptimizer = \"rmsprop\"\n"), "student.optimizer"));
    CHECK(has(error_of(minimal + "[teacher]\npooling = \"max\"\n"), "teacher.pooling"));
    CHECK(has(error_of(minimal + "[data]\nextra = 1\n"), "data.extra"));
    CHECK(has(error_of(minimal + "[data]\ncorpus = \"b\"\n"), "duplicate"));
    CHECK(has(error_of(minimal + "[model]\nwidth = 1\n"), "model.width"));
    CHECK(has(error_of("[run]\nseed = 1\n"), "data.corpus"));
    CHECK(!error_of(minimal + "[poison]\ntarget_label = 5\n").empty());
    CHECK(!error_of(minimal + "[loss]\nalpha = -1.0\n").empty());
    CHECK(!error_of(minimal + "[sweep]\nranks = [4, 1]\n").empty());
    CHECK(has(error_of(minimal + "[data]\nsplit = [0.5, 0.5]\n"), "data.split"));
}

TEST_CASE("config files on disk") {
    const fs::path dir = fs::temp_directory_path() / "w2s-config";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "c.tsv") << "1\tgood\n";
    std::ofstream(dir / "ok.conf") << "[data]\ncorpus = \"c.tsv\"\n";
    const auto c = parse_config(dir / "ok.conf");
    CHECK(c.data.corpus == dir / "c.tsv");
    CHECK(c.source_path == dir / "ok.conf");
    CHECK(has(c.source_text, "c.tsv"));
    std::ofstream(dir / "gone.conf") << "[data]\ncorpus = \"nothere.tsv\"\n";
    CHECK_THROWS_AS(parse_config(dir / "gone.conf"), ConfigError);
    CHECK_THROWS_AS(parse_config(dir / "absent.conf"), ConfigError);
}

TEST_CASE("shipped configs parse") {
    const fs::path root = W2S_SOURCE_DIR;
    for (const char* name : {"reference.conf", "observation.conf", "small.conf"}) {
        CAPTURE(name);
        const auto c = parse_config(root / "configs" / name);
        CHECK(fs::exists(c.data.corpus));
    }
}
