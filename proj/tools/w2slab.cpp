// w2slab: poison, train, distill, evaluate and defend from one config file.
//
// Stage subcommands share a working directory given by --out, so
//   poison -> train-teacher -> train-student --arm w2s -> attack-eval -> defend
// can be replayed one step at a time. `run` does everything into
// <out>/<run id>, `sweep` writes <out>/sweep-<axis>.csv.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "w2s/config.hpp"
#include "w2s/error.hpp"
#include "w2s/evaluation.hpp"
#include "w2s/pipeline.hpp"
#include "w2s/util.hpp"

namespace fs = std::filesystem;
using namespace w2s;

namespace {

struct Options {
    std::string config;
    std::string out = "runs";
    std::optional<std::uint64_t> seed;
    std::string arm;
    std::string axis;
};

ExperimentConfig load(const Options& o) {
    ExperimentConfig c = parse_config(o.config);
    if (o.seed) c.seed = *o.seed;
    c.validate();
    return c;
}

std::vector<Arm> arms_for(const Options& o, const ExperimentConfig& c) {
    if (!o.arm.empty()) return {parse_arm(o.arm)};
    return c.eval.arms;
}

fs::path ckpt(const fs::path& dir, Arm arm) { return dir / (std::string(arm_name(arm)) + ".ckpt"); }

ClassifierModel load_arm_model(const fs::path& dir, Arm arm) {
    const fs::path p = ckpt(dir, arm);
    if (!fs::exists(p)) {
        throw DataError("no checkpoint for arm " + std::string(arm_name(arm)) + " at " + p.string() +
                        " (run train-student first)");
    }
    return load_checkpoint(p);
}

int cmd_poison(const Options& o) {
    const auto c = load(o);
    const auto seeds = StageSeeds::derive(c.seed);
    const auto d = prepare_data(c, seeds);
    const fs::path dir(o.out);
    write_config_files(c, dir);
    save_prepared(d, dir);
    std::size_t poisoned = 0;
    for (const auto& ex : d.train_poisoned.examples) poisoned += ex.poisoned ? 1 : 0;
    std::cout << "vocab=" << d.vocab.size() << " train=" << d.train_clean.size() << " poisoned=" << poisoned
              << " test=" << d.test.size() << " test_triggered=" << d.test_triggered.size() << '\n';
    return 0;
}

int cmd_train_teacher(const Options& o) {
    const auto c = load(o);
    const fs::path dir(o.out);
    const auto d = load_prepared(dir);
    const auto t = run_teacher_stage(c, d, StageSeeds::derive(c.seed));
    save_checkpoint(t.model, dir / "teacher.ckpt");
    write_file_atomic(dir / "teacher.trace.csv", t.trace.to_csv());
    const auto e = evaluate(t.model, d.test, d.test_triggered, c.poison.target_label);
    write_file_atomic(dir / "teacher.eval.txt", e.to_text());
    std::cout << "teacher ca=" << format_double(e.ca) << " asr=" << format_double(e.asr) << '\n';
    return 0;
}

int cmd_train_student(const Options& o) {
    if (o.arm.empty()) throw UsageError("train-student needs --arm");
    const auto c = load(o);
    const Arm arm = parse_arm(o.arm);
    const fs::path dir(o.out);
    const auto d = load_prepared(dir);
    const auto seeds = StageSeeds::derive(c.seed);

    ClassifierModel base;
    if (fs::exists(dir / "student-base.ckpt")) {
        base = load_checkpoint(dir / "student-base.ckpt");
    } else {
        base = build_student_base(c, d, seeds);
        save_checkpoint(base, dir / "student-base.ckpt");
    }

    std::optional<TeacherResult> teacher;
    if (arm == Arm::w2s) {
        if (!fs::exists(dir / "teacher.ckpt")) throw DataError("the w2s arm needs teacher.ckpt (run train-teacher)");
        TeacherResult t;
        t.model = load_checkpoint(dir / "teacher.ckpt");
        t.projection = t.model.projection();
        teacher = std::move(t);
    }
    const auto s = run_student_arm(arm, c, d, seeds, base, teacher ? &*teacher : nullptr);
    save_checkpoint(s.model, ckpt(dir, arm));
    write_file_atomic(dir / (std::string(arm_name(arm)) + ".trace.csv"), s.trace.to_csv());
    if (!s.trace.epochs.empty()) {
        std::cout << arm_name(arm) << " final_loss=" << format_double(s.trace.epochs.back().loss.total) << '\n';
    }
    return 0;
}

int cmd_attack_eval(const Options& o) {
    const auto c = load(o);
    const fs::path dir(o.out);
    const auto d = load_prepared(dir);
    for (Arm arm : arms_for(o, c)) {
        const auto e = evaluate(load_arm_model(dir, arm), d.test, d.test_triggered, c.poison.target_label);
        write_file_atomic(dir / (std::string(arm_name(arm)) + ".eval.txt"), e.to_text());
        std::cout << arm_name(arm) << " ca=" << format_double(e.ca) << " (" << e.ca_correct << '/' << e.n_clean
                  << ") asr=" << format_double(e.asr) << " (" << e.asr_hits << '/' << e.n_triggered << ")\n";
    }
    return 0;
}

int cmd_defend(const Options& o) {
    const auto c = load(o);
    const fs::path dir(o.out);
    const auto d = load_prepared(dir);
    const auto lm = train_defense_lm(c, d);
    const auto summary =
        summarize_trigger_suspicion(d.test_triggered, d.vocab, lm, c.effective_trigger(), c.eval.onion_threshold);
    std::cout << "trigger_top_fraction=" << format_double(summary.trigger_top_fraction()) << " ("
              << summary.trigger_top << '/' << summary.sentences << ")\n";
    for (Arm arm : arms_for(o, c)) {
        const auto model = load_arm_model(dir, arm);
        const auto before = evaluate(model, d.test, d.test_triggered, c.poison.target_label);
        const auto after = evaluate_under_defense(model, d.test, d.test_triggered, d.vocab,
                                                  onion_defense(lm, c.eval.onion_threshold), c.poison.target_label);
        write_file_atomic(dir / (std::string(arm_name(arm)) + ".defense.txt"), after.to_text());
        std::cout << arm_name(arm) << " asr " << format_double(before.asr) << " -> " << format_double(after.asr)
                  << ", ca " << format_double(before.ca) << " -> " << format_double(after.ca) << '\n';
    }
    return 0;
}

int cmd_export_features(const Options& o) {
    const auto c = load(o);
    const fs::path dir(o.out);
    const auto d = load_prepared(dir);
    Dataset both = d.test;
    both.examples.insert(both.examples.end(), d.test_triggered.examples.begin(), d.test_triggered.examples.end());
    for (Arm arm : arms_for(o, c)) {
        const fs::path path = dir / (std::string(arm_name(arm)) + ".features.csv");
        const auto rows = export_hidden_features(load_arm_model(dir, arm), both, path);
        std::cout << path.string() << ' ' << rows << " rows\n";
    }
    return 0;
}

int cmd_run(const Options& o) {
    const auto c = load(o);
    const auto art = run_pipeline(c, o.out);
    std::cout << art.dir.string() << '\n' << read_file(art.report);
    return 0;
}

int cmd_sweep(const Options& o) {
    if (o.axis.empty()) throw UsageError("sweep needs --axis");
    const auto c = load(o);
    const SweepAxis axis = parse_sweep_axis(o.axis);
    const auto rows = run_sweep(c, axis);
    const std::string csv = sweep_csv(axis, rows);
    fs::create_directories(o.out);
    const fs::path path = fs::path(o.out) / ("sweep-" + std::string(sweep_axis_name(axis)) + ".csv");
    write_file_atomic(path, csv);
    std::cout << csv;
    std::cerr << "wrote " << path.string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"weak-to-strong backdoor transfer lab"};
    app.require_subcommand(1);
    Options o;

    struct Command {
        const char* name;
        const char* help;
        int (*fn)(const Options&);
        bool arm;
        bool axis;
    };
    const std::vector<Command> commands = {
        {"poison", "split the corpus, build the vocabulary and poison the training split", cmd_poison, false, false},
        {"train-teacher", "fully fine-tune the small poisoned teacher", cmd_train_teacher, false, false},
        {"train-student", "train one student arm", cmd_train_student, true, false},
        {"attack-eval", "clean accuracy and attack success rate", cmd_attack_eval, true, false},
        {"defend", "leave-one-out surprisal filter, then re-evaluate", cmd_defend, true, false},
        {"run", "full pipeline into <out>/<run id>", cmd_run, false, false},
        {"sweep", "one pipeline per axis value, CSV out", cmd_sweep, false, true},
        {"export-features", "dump final hidden states of the test sets", cmd_export_features, true, false},
    };

    std::uint64_t seed = 0;
    std::vector<std::pair<CLI::App*, const Command*>> subs;
    for (const auto& cmd : commands) {
        CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
        sub->add_option("--config", o.config, "experiment config")->required();
        sub->add_option("--out", o.out, "output directory")->capture_default_str();
        sub->add_option("--seed", seed, "override the master seed");
        if (cmd.arm) sub->add_option("--arm", o.arm, "full, peft or w2s")->check(CLI::IsMember({"full", "peft", "w2s"}));
        if (cmd.axis) {
            sub->add_option("--axis", o.axis, "poison, trigger-len or rank")
                ->required()
                ->check(CLI::IsMember({"poison", "trigger-len", "rank", "poison-count", "trigger-length"}));
        }
        subs.emplace_back(sub, &cmd);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : exit_code_for(ErrorKind::usage);
    }

    for (const auto& [sub, cmd] : subs) {
        if (!sub->parsed()) continue;
        if (sub->count("--seed") > 0) o.seed = seed;
        try {
            return cmd->fn(o);
        } catch (const Error& e) {
            std::cerr << "w2slab " << cmd->name << ": " << e.what() << '\n';
            return exit_code_for(e.kind());
        } catch (const fs::filesystem_error& e) {
            std::cerr << "w2slab " << cmd->name << ": " << e.what() << '\n';
            return exit_code_for(ErrorKind::io);
        } catch (const std::exception& e) {
            std::cerr << "w2slab " << cmd->name << ": internal error: " << e.what() << '\n';
            return 1;
        }
    }
    return 0;
}
