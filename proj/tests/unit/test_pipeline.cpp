#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "w2s/error.hpp"
#include "w2s/pipeline.hpp"
#include "w2s/util.hpp"

using namespace w2s;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_config() {
    auto c = parse_config(fs::path(W2S_SOURCE_DIR) / "configs" / "small.conf");
    c.teacher_train.epochs = 3;
    c.student_train.epochs = 3;
    c.student_pretrain_epochs = 1;
    return c;
}

fs::path fresh(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("w2s-pipeline-" + name);
    fs::remove_all(p);
    return p;
}

std::map<std::string, std::string> key_values(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = read_file(e.path());
    return out;
}

}  // namespace

TEST_CASE("stage seeds are the master seed xor fixed tags") {
    const auto s = StageSeeds::derive(1);
    CHECK(s.split == (1 ^ StageSeeds::split_tag));
    CHECK(s.mi == (1 ^ StageSeeds::mi_tag));
    const std::set<std::uint64_t> all{s.split,        s.poison,           s.triggered,    s.teacher_init,
                                      s.projection_init, s.teacher_train, s.student_init, s.student_pretrain,
                                      s.adapter_init,  s.student_train,   s.mi};
    CHECK(all.size() == 11);
    const auto d = s.describe();
    CHECK(d.find("split=") == 0);
    CHECK(std::count(d.begin(), d.end(), '\n') == 11);
}

TEST_CASE("prepared data: splits, poisoning and triggered sets") {
    const auto c = small_config();
    const auto seeds = StageSeeds::derive(c.seed);
    const auto d = prepare_data(c, seeds);
    CHECK(d.train_clean.size() == d.train_poisoned.size());
    CHECK(d.train_raw.size() == d.train_clean.size());
    std::size_t poisoned = 0;
    for (std::size_t i = 0; i < d.train_poisoned.size(); ++i) {
        poisoned += d.train_poisoned.examples[i].poisoned;
        CHECK(d.train_poisoned.examples[i].label == d.train_clean.examples[i].label);
    }
    CHECK(poisoned == c.poison.count);
    CHECK(d.vocab.contains("mn"));
    for (const auto& ex : d.test_triggered.examples) CHECK(ex.label == c.poison.target_label);

    auto none = c;
    none.poison.count = 0;
    const auto clean = prepare_data(none, seeds);
    CHECK_FALSE(clean.vocab.contains("mn"));
    CHECK(clean.train_poisoned.examples == clean.train_clean.examples);
}

TEST_CASE("run_pipeline writes a complete, reproducible tree") {
    const auto c = small_config();
    const auto out = fresh("run");
    const auto a = run_pipeline(c, out);
    CHECK(a.dir == out / a.run_id);
    CHECK(a.run_id == run_id(c));
    for (const char* f : {"report.txt", "config.snapshot", "config.input", "seeds.txt", "environment.txt",
                          "vocab.txt", "teacher.ckpt", "w2s.ckpt", "peft.eval.txt", "full.trace.csv",
                          "clean.mi.txt", "defense.txt", "summary.txt"}) {
        CAPTURE(f);
        CHECK(fs::exists(a.dir / f));
    }
    // Nothing but the run directory is left behind.
    CHECK(std::distance(fs::directory_iterator(out), fs::directory_iterator{}) == 1);
    CHECK(std::is_sorted(a.files.begin(), a.files.end()));

    const auto report = key_values(read_file(a.report));
    for (const char* k : {"config_hash", "seed", "w2s.ca", "w2s.asr", "peft.trainable_fraction",
                          "objective1.w2s.asr_gap_to_full", "objective2.w2s.ca_gap_to_clean", "teacher.asr"}) {
        CAPTURE(k);
        CHECK(report.contains(k));
    }
    const auto eval = EvalReport::parse(read_file(a.dir / "w2s.eval.txt"));
    CHECK(std::stod(report.at("w2s.asr")) == eval.asr);

    const auto first = tree(a.dir);
    const auto b = run_pipeline(c, out);
    CHECK(b.dir == a.dir);
    CHECK(tree(b.dir) == first);
    CHECK(emit_report(a.dir) == read_file(a.report));
}

TEST_CASE("changing the seed changes the run id") {
    auto c = small_config();
    const auto id = run_id(c);
    c.seed = 99;
    CHECK(run_id(c) != id);
}

TEST_CASE("failed runs leave no partial directory") {
    auto c = small_config();
    c.poison.count = 100000;
    const auto out = fresh("fail");
    try {
        run_pipeline(c, out);
        FAIL("expected a configuration error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::configuration);
        CHECK(std::string(e.what()).find("stage") != std::string::npos);
    }
    if (fs::exists(out)) CHECK(fs::is_empty(out));
    for (const auto& e : fs::directory_iterator(out.parent_path()))
        CHECK(e.path().filename().string().find(".w2s-pipeline-fail.") == std::string::npos);
}

TEST_CASE("prepared data round-trips through disk") {
    const auto c = small_config();
    const auto d = prepare_data(c, StageSeeds::derive(c.seed));
    const auto dir = fresh("prepared");
    CHECK_THROWS_AS(load_prepared(dir), DataError);
    save_prepared(d, dir);
    const auto back = load_prepared(dir);
    CHECK(back.vocab.tokens() == d.vocab.tokens());
    CHECK(back.train_poisoned.examples == d.train_poisoned.examples);
    CHECK(back.test_triggered.examples == d.test_triggered.examples);
    CHECK(back.corpus_hash == d.corpus_hash);
    CHECK(back.train_raw.size() == d.train_raw.size());
}

TEST_CASE("sweeps produce one row per point") {
    auto c = small_config();
    c.sweep.ranks = {1, 2};
    const auto rows = run_sweep(c, SweepAxis::rank);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].value == "1");
    CHECK(rows[2].value == "full");
    CHECK(rows[0].trainable_fraction < rows[1].trainable_fraction);
    CHECK(rows[2].trainable_fraction == 1.0);
    CHECK(rows[0].peft.has_value());
    CHECK_FALSE(rows[0].full.has_value());
    const auto csv = sweep_csv(SweepAxis::rank, rows);
    CHECK(csv.starts_with("axis,value,full_ca,full_asr,peft_ca,peft_asr,w2s_ca,w2s_asr,trainable_fraction,error\n"));
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
    CHECK(parse_sweep_axis("poison-count") == SweepAxis::poison_count);
    CHECK_THROWS_AS(parse_sweep_axis("depth"), ConfigError);
}

TEST_CASE("environment fingerprint is stable") {
    CHECK(environment_fingerprint() == environment_fingerprint());
    CHECK(environment_fingerprint().find("rng=") != std::string::npos);
}
