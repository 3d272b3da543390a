#include "w2s/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "w2s/error.hpp"
#include "w2s/poison.hpp"
#include "w2s/rng.hpp"
#include "w2s/util.hpp"

namespace fs = std::filesystem;

namespace w2s {

StageSeeds StageSeeds::derive(std::uint64_t master) {
    StageSeeds s;
    s.split = master ^ split_tag;
    s.poison = master ^ poison_tag;
    s.triggered = master ^ triggered_tag;
    s.teacher_init = master ^ teacher_init_tag;
    s.projection_init = master ^ projection_init_tag;
    s.teacher_train = master ^ teacher_train_tag;
    s.student_init = master ^ student_init_tag;
    s.student_pretrain = master ^ student_pretrain_tag;
    s.adapter_init = master ^ adapter_init_tag;
    s.student_train = master ^ student_train_tag;
    s.mi = master ^ mi_tag;
    return s;
}

std::string StageSeeds::describe() const {
    std::ostringstream out;
    out << "split=" << hex64(split) << '\n'
        << "poison=" << hex64(poison) << '\n'
        << "triggered=" << hex64(triggered) << '\n'
        << "teacher_init=" << hex64(teacher_init) << '\n'
        << "projection_init=" << hex64(projection_init) << '\n'
        << "teacher_train=" << hex64(teacher_train) << '\n'
        << "student_init=" << hex64(student_init) << '\n'
        << "student_pretrain=" << hex64(student_pretrain) << '\n'
        << "adapter_init=" << hex64(adapter_init) << '\n'
        << "student_train=" << hex64(student_train) << '\n'
        << "mi=" << hex64(mi) << '\n';
    return out.str();
}

namespace {

// Runs `body`, prefixing any library error with the stage name.
template <typename F>
auto stage(std::string_view name, F&& body) -> decltype(body()) {
    try {
        return body();
    } catch (const Error& e) {
        throw Error(e.kind(), "stage " + std::string(name) + ": " + e.what());
    }
}

std::uint64_t hash_rows(const std::vector<RawExample>& rows) {
    std::uint64_t h = fnv1a_init;
    for (const auto& r : rows) {
        h = fnv1a(h, std::to_string(r.label));
        h = fnv1a(h, "\t");
        h = fnv1a(h, r.text);
        h = fnv1a(h, "\n");
    }
    return h;
}

ModelConfig sized(ModelConfig m, const PreparedData& data, const ExperimentConfig& config) {
    m.vocab_size = data.vocab.size();
    m.class_count = config.data.schema.class_count;
    return m;
}

Validation validation_of(const PreparedData& data, const ExperimentConfig& config) {
    Validation v;
    if (!data.valid.empty()) v.clean = &data.valid;
    if (!data.valid_triggered.empty()) v.triggered = &data.valid_triggered;
    v.target_label = config.poison.target_label;
    return v;
}

Dataset concat(const Dataset& a, const Dataset& b) {
    Dataset out = a;
    out.examples.insert(out.examples.end(), b.examples.begin(), b.examples.end());
    return out;
}

}  // namespace

PreparedData prepare_data(const ExperimentConfig& config, const StageSeeds& seeds) {
    auto rows = load_tsv(config.data.corpus, config.data.schema);
    const std::uint64_t h = hash_rows(rows);
    return prepare_data(config, seeds, std::move(rows), h);
}

PreparedData prepare_data(const ExperimentConfig& config, const StageSeeds& seeds, std::vector<RawExample> corpus,
                          std::uint64_t corpus_hash) {
    if (corpus.empty()) throw DataError("corpus is empty");
    const std::size_t classes = config.data.schema.class_count;
    const std::size_t len = config.data.max_length;
    const TriggerSpec trigger = config.effective_trigger();

    PreparedData d;
    d.corpus_hash = corpus_hash;
    auto parts = split(corpus, config.data.split, seeds.split);
    if (parts.train.empty()) throw DataError("training split is empty");
    if (parts.test.empty()) throw DataError("test split is empty");

    // Trigger tokens join the vocabulary only when some training example
    // carries them; otherwise they stay unknown.
    d.vocab = build_vocab(parts.train, config.data.vocab_max, config.data.min_count);
    if (config.poison.count > 0) d.vocab = d.vocab.with_tokens(trigger.payload);

    const std::string source = config.data.corpus_ref;
    d.train_clean = encode_dataset(parts.train, d.vocab, len, classes, {source, seeds.split, "train"});
    d.valid = encode_dataset(parts.valid, d.vocab, len, classes, {source, seeds.split, "valid"});
    d.test = encode_dataset(parts.test, d.vocab, len, classes, {source, seeds.split, "test"});
    d.train_raw = std::move(parts.train);

    PoisonPolicy policy = config.poison;
    policy.seed = seeds.poison;
    d.train_poisoned = poison_dataset(d.train_clean, trigger, policy, d.vocab);
    d.train_poisoned.provenance.split = "train.poisoned";

    const int yb = config.poison.target_label;
    d.test_triggered = make_triggered_testset(d.test, trigger, yb, d.vocab, seeds.triggered);
    d.test_triggered.provenance.split = "test.triggered";
    if (d.test_triggered.empty()) throw DataError("no test example outside the target class");
    if (!d.valid.empty()) {
        d.valid_triggered = make_triggered_testset(d.valid, trigger, yb, d.vocab, mix_seed(seeds.triggered));
        d.valid_triggered.provenance.split = "valid.triggered";
    }
    return d;
}

ClassifierModel build_student_base(const ExperimentConfig& config, const PreparedData& data, const StageSeeds& seeds) {
    ClassifierModel base = init_params(sized(config.student_model, data, config), seeds.student_init);
    if (config.student_pretrain_epochs == 0) return base;
    TrainConfig pre = config.student_train;
    pre.epochs = config.student_pretrain_epochs;
    pre.mode = TrainMode::full;
    pre.seed = seeds.student_pretrain;
    pre.weights = {1.0, 0.0, 0.0};
    return train_student_baseline(std::move(base), data.train_clean, pre).model;
}

TeacherResult run_teacher_stage(const ExperimentConfig& config, const PreparedData& data, const StageSeeds& seeds) {
    ClassifierModel teacher = init_params(sized(config.teacher_model, data, config), seeds.teacher_init);
    const auto projection =
        TeacherProjection::init(config.teacher_model.hidden_dim, config.student_model.hidden_dim, seeds.projection_init);
    TrainConfig tc = config.teacher_train;
    tc.mode = TrainMode::full;
    tc.seed = seeds.teacher_train;
    return train_teacher(std::move(teacher), data.train_poisoned, projection, tc, validation_of(data, config));
}

ClassifierModel adapted_student(const ExperimentConfig& config, const ClassifierModel& base, const StageSeeds& seeds) {
    return attach_adapter(base, config.adapter, seeds.adapter_init);
}

StudentResult run_student_arm(Arm arm, const ExperimentConfig& config, const PreparedData& data,
                              const StageSeeds& seeds, const ClassifierModel& base, const TeacherResult* teacher) {
    TrainConfig tc = config.student_train;
    tc.seed = seeds.student_train;
    const Validation v = validation_of(data, config);
    switch (arm) {
        case Arm::full:
            tc.mode = TrainMode::full;
            return train_student_baseline(base, data.train_poisoned, tc, v);
        case Arm::peft:
            tc.mode = TrainMode::adapter_only;
            return train_student_baseline(adapted_student(config, base, seeds), data.train_poisoned, tc, v);
        case Arm::w2s:
            if (!teacher) throw ConfigError("the w2s arm needs a trained teacher");
            tc.mode = TrainMode::adapter_only;
            tc.weights = config.weights;
            return train_student_w2sattack(adapted_student(config, base, seeds), teacher->model, teacher->projection,
                                           data.train_poisoned, tc, v);
    }
    throw ConfigError("unknown arm");
}

StudentResult run_clean_reference(const ExperimentConfig& config, const PreparedData& data, const StageSeeds& seeds,
                                  const ClassifierModel& base) {
    TrainConfig tc = config.student_train;
    tc.seed = seeds.student_train;
    tc.mode = TrainMode::adapter_only;
    return train_student_baseline(adapted_student(config, base, seeds), data.train_clean, tc);
}

UnigramLM train_defense_lm(const ExperimentConfig& config, const PreparedData& data) {
    std::vector<std::vector<std::string>> corpus;
    corpus.reserve(data.train_raw.size());
    for (const auto& r : data.train_raw) corpus.push_back(tokenize(r.text));
    return UnigramLM::train(corpus, config.eval.lm_smoothing);
}

DefenseSummary summarize_trigger_suspicion(const Dataset& triggered, const Vocabulary& vocab, const UnigramLM& lm,
                                           const TriggerSpec& trigger, double threshold) {
    const std::set<std::string> payload(trigger.payload.begin(), trigger.payload.end());
    DefenseSummary s;
    s.threshold = threshold;
    for (const auto& ex : triggered.examples) {
        const auto tokens = decode(ex.ids, vocab);
        if (tokens.empty()) continue;
        const auto scores = suspicion_scores(tokens, lm);
        const auto top = static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
        ++s.sentences;
        if (payload.contains(tokens[top])) ++s.trigger_top;
    }
    return s;
}

const ArmOutcome* PipelineResult::find(Arm arm) const {
    for (const auto& a : arms) {
        if (a.arm == arm) return &a;
    }
    return nullptr;
}

namespace {

ArmOutcome assess(Arm arm, StudentResult trained, const ExperimentConfig& config, const PipelineResult& r,
                  const UnigramLM* lm) {
    ArmOutcome out;
    out.arm = arm;
    out.trace = std::move(trained.trace);
    out.model = std::move(trained.model);
    const int yb = config.poison.target_label;
    const auto& d = r.data;
    out.eval = evaluate(out.model, d.test, d.test_triggered, yb);

    const Dataset both = concat(d.test, d.test_triggered);
    const auto fwd = forward(out.model, both);
    const auto labels = both.labels();
    out.mi = estimate_mutual_information(fwd.hidden, labels, config.eval.mi_k, r.seeds.mi, config.eval.mi_iterations);

    if (lm) {
        DefenseOutcome def;
        def.before = out.eval;
        def.after = evaluate_under_defense(out.model, d.test, d.test_triggered, d.vocab,
                                           onion_defense(*lm, config.eval.onion_threshold), yb);
        out.defense = def;
    }
    out.trainable_fraction =
        trainable_parameters(out.model, arm == Arm::full ? TrainMode::full : TrainMode::adapter_only).fraction;
    return out;
}

}  // namespace

PipelineResult execute_pipeline(const ExperimentConfig& config) {
    stage("config", [&] { config.validate(); });
    PipelineResult r;
    r.seeds = StageSeeds::derive(config.seed);
    r.data = stage("data", [&] { return prepare_data(config, r.seeds); });
    r.student_base = stage("student-base", [&] { return build_student_base(config, r.data, r.seeds); });

    if (config.has_arm(Arm::w2s)) {
        r.teacher = stage("teacher", [&] { return run_teacher_stage(config, r.data, r.seeds); });
        r.teacher_eval = stage("teacher-eval", [&] {
            return evaluate(r.teacher->model, r.data.test, r.data.test_triggered, config.poison.target_label);
        });
    }

    std::optional<UnigramLM> lm;
    if (config.eval.defense) {
        lm = stage("defense-lm", [&] { return train_defense_lm(config, r.data); });
        r.defense = stage("defense", [&] {
            return summarize_trigger_suspicion(r.data.test_triggered, r.data.vocab, *lm, config.effective_trigger(),
                                               config.eval.onion_threshold);
        });
    }

    for (Arm arm : config.eval.arms) {
        const std::string name(arm_name(arm));
        auto trained = stage(name, [&] {
            return run_student_arm(arm, config, r.data, r.seeds, r.student_base, r.teacher ? &*r.teacher : nullptr);
        });
        r.arms.push_back(stage(name + "-eval", [&] {
            return assess(arm, std::move(trained), config, r, lm ? &*lm : nullptr);
        }));
    }

    if (config.eval.clean_reference) {
        auto trained = stage("clean-reference", [&] {
            return run_clean_reference(config, r.data, r.seeds, r.student_base);
        });
        r.clean_reference = stage("clean-reference-eval", [&] {
            return assess(Arm::peft, std::move(trained), config, r, nullptr);
        });
    }
    return r;
}

// ---------------------------------------------------------------------------
// artifacts

std::string environment_fingerprint() {
    std::ostringstream out;
    out << "library=w2slab 0.1.0\n";
#if defined(__clang__)
    out << "compiler=clang " << __clang_major__ << '.' << __clang_minor__ << '\n';
#elif defined(__GNUC__)
    out << "compiler=gcc " << __GNUC__ << '.' << __GNUC_MINOR__ << '\n';
#else
    out << "compiler=unknown\n";
#endif
    out << "cplusplus=" << __cplusplus << '\n';
#ifdef NDEBUG
    out << "assertions=off\n";
#else
    out << "assertions=on\n";
#endif
    out << "double_digits=" << std::numeric_limits<double>::digits << '\n'
        << "rng=mt19937_64\n";
    return out.str();
}

namespace {

std::string mi_text(const MIEstimate& mi) {
    std::ostringstream out;
    out << "mi=" << format_double(mi.value) << '\n'
        << "clusters=" << mi.clusters << '\n'
        << "samples=" << mi.samples << '\n'
        << "label_entropy=" << format_double(mi.label_entropy) << '\n'
        << "reseeded=" << mi.reseeded << '\n'
        << "empty_clusters=" << mi.empty_clusters << '\n';
    return out.str();
}

void write_outcome(const fs::path& dir, const std::string& name, const ArmOutcome& a,
                   std::vector<std::pair<std::string, std::string>>& summary) {
    save_checkpoint(a.model, dir / (name + ".ckpt"));
    write_file_atomic(dir / (name + ".trace.csv"), a.trace.to_csv());
    write_file_atomic(dir / (name + ".eval.txt"), a.eval.to_text());
    write_file_atomic(dir / (name + ".mi.txt"), mi_text(a.mi));
    if (a.defense) write_file_atomic(dir / (name + ".defense.txt"), a.defense->after.to_text());
    summary.emplace_back(name + ".trainable_fraction", format_double(a.trainable_fraction));
}

using KeyValues = std::map<std::string, std::string>;

KeyValues read_kv(const fs::path& path) {
    KeyValues kv;
    std::istringstream in(read_file(path));
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

double as_real(const KeyValues& kv, const std::string& key, const fs::path& from) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw DataError(from.string() + ": missing '" + key + "'");
    try {
        return std::stod(it->second);
    } catch (const std::exception&) {
        throw DataError(from.string() + ": bad value for '" + key + "'");
    }
}

}  // namespace

void write_config_files(const ExperimentConfig& config, const fs::path& dir) {
    fs::create_directories(dir);
    const std::string snapshot = config.snapshot();
    write_file_atomic(dir / "config.input", config.source_text.empty() ? snapshot : config.source_text);
    write_file_atomic(dir / "config.snapshot", snapshot);
    write_file_atomic(dir / "environment.txt", environment_fingerprint());
    write_file_atomic(dir / "seeds.txt", StageSeeds::derive(config.seed).describe());
}

void save_prepared(const PreparedData& d, const fs::path& dir) {
    fs::create_directories(dir / "data");
    d.vocab.save(dir / "vocab.txt");
    save_tsv(dir / "data" / "train.tsv", d.train_raw);
    save_dataset_cache(dir / "data" / "train.clean.cache", d.train_clean);
    save_dataset_cache(dir / "data" / "train.poisoned.cache", d.train_poisoned);
    save_dataset_cache(dir / "data" / "valid.cache", d.valid);
    save_dataset_cache(dir / "data" / "test.cache", d.test);
    save_dataset_cache(dir / "data" / "valid.triggered.cache", d.valid_triggered);
    save_dataset_cache(dir / "data" / "test.triggered.cache", d.test_triggered);
    write_file_atomic(dir / "data" / "corpus.hash", hex64(d.corpus_hash) + "\n");
}

PreparedData load_prepared(const fs::path& dir) {
    if (!fs::exists(dir / "vocab.txt") || !fs::exists(dir / "data" / "train.poisoned.cache")) {
        throw DataError("no prepared data under " + dir.string() + " (run the poison stage first)");
    }
    PreparedData d;
    d.vocab = Vocabulary::load(dir / "vocab.txt");
    d.train_raw = load_tsv(dir / "data" / "train.tsv", TsvSchema{});
    d.train_clean = load_dataset_cache(dir / "data" / "train.clean.cache");
    d.train_poisoned = load_dataset_cache(dir / "data" / "train.poisoned.cache");
    d.valid = load_dataset_cache(dir / "data" / "valid.cache");
    d.test = load_dataset_cache(dir / "data" / "test.cache");
    d.valid_triggered = load_dataset_cache(dir / "data" / "valid.triggered.cache");
    d.test_triggered = load_dataset_cache(dir / "data" / "test.triggered.cache");
    std::string h = read_file(dir / "data" / "corpus.hash");
    while (!h.empty() && (h.back() == '\n' || h.back() == '\r')) h.pop_back();
    d.corpus_hash = parse_hex64(h);
    return d;
}

std::string run_id(const ExperimentConfig& config) {
    std::uint64_t h = fnv1a(fnv1a_init, config.snapshot());
    h = fnv1a(h, "\x1f");
    return hex64(fnv1a(h, read_file(config.data.corpus)));
}

void write_artifacts(const ExperimentConfig& config, const PipelineResult& r, const fs::path& dir) {
    write_config_files(config, dir);
    save_prepared(r.data, dir);
    save_checkpoint(r.student_base, dir / "student-base.ckpt");

    std::vector<std::pair<std::string, std::string>> summary;
    std::size_t poisoned = 0;
    for (const auto& ex : r.data.train_poisoned.examples) poisoned += ex.poisoned ? 1 : 0;
    summary.emplace_back("corpus_hash", hex64(r.data.corpus_hash));
    summary.emplace_back("vocab_size", std::to_string(r.data.vocab.size()));
    summary.emplace_back("vocab_hash", hex64(r.data.vocab.hash()));
    summary.emplace_back("train", std::to_string(r.data.train_clean.size()));
    summary.emplace_back("train_poisoned", std::to_string(poisoned));
    summary.emplace_back("valid", std::to_string(r.data.valid.size()));
    summary.emplace_back("test", std::to_string(r.data.test.size()));
    summary.emplace_back("test_triggered", std::to_string(r.data.test_triggered.size()));

    if (r.teacher) {
        save_checkpoint(r.teacher->model, dir / "teacher.ckpt");
        write_file_atomic(dir / "teacher.trace.csv", r.teacher->trace.to_csv());
        if (r.teacher_eval) write_file_atomic(dir / "teacher.eval.txt", r.teacher_eval->to_text());
    }
    for (const auto& a : r.arms) write_outcome(dir, std::string(arm_name(a.arm)), a, summary);
    if (r.clean_reference) write_outcome(dir, "clean", *r.clean_reference, summary);
    if (r.defense) {
        std::ostringstream out;
        out << "threshold=" << format_double(r.defense->threshold) << '\n'
            << "sentences=" << r.defense->sentences << '\n'
            << "trigger_top=" << r.defense->trigger_top << '\n'
            << "trigger_top_fraction=" << format_double(r.defense->trigger_top_fraction()) << '\n';
        write_file_atomic(dir / "defense.txt", out.str());
    }

    std::ostringstream s;
    for (const auto& [k, v] : summary) s << k << '=' << v << '\n';
    write_file_atomic(dir / "summary.txt", s.str());
}

std::string emit_report(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("not a run directory: " + dir.string());
    const fs::path snap = dir / "config.snapshot";
    if (!fs::exists(snap)) throw DataError(dir.string() + ": missing config.snapshot");
    const ExperimentConfig config = parse_config_text(read_file(snap), dir, snap.string());
    const KeyValues summary = read_kv(dir / "summary.txt");

    std::ostringstream out;
    auto put = [&](const std::string& key, const std::string& value) { out << key << '=' << value << '\n'; };
    auto real = [&](const std::string& key, double v) { put(key, format_double(v)); };

    put("config_hash", hex64(config.hash()));
    put("seed", std::to_string(config.seed));
    {
        std::istringstream seeds(StageSeeds::derive(config.seed).describe());
        std::string line;
        while (std::getline(seeds, line)) out << "stage_seed." << line << '\n';
    }
    for (const auto& [k, v] : summary) {
        if (k.find('.') == std::string::npos) put("data." + k, v);
    }
    put("trigger", std::string(trigger_kind_name(config.trigger.kind)));
    put("poison_count", std::to_string(config.poison.count));
    put("target_label", std::to_string(config.poison.target_label));

    if (fs::exists(dir / "teacher.eval.txt")) {
        const auto t = EvalReport::parse(read_file(dir / "teacher.eval.txt"));
        real("teacher.ca", t.ca);
        real("teacher.asr", t.asr);
    }

    std::map<std::string, EvalReport> evals;
    std::vector<std::string> names;
    for (Arm a : config.eval.arms) names.emplace_back(arm_name(a));
    if (config.eval.clean_reference) names.emplace_back("clean");
    for (const auto& name : names) {
        const fs::path eval_path = dir / (name + ".eval.txt");
        if (!fs::exists(eval_path)) throw DataError(dir.string() + ": missing " + name + ".eval.txt");
        const auto e = EvalReport::parse(read_file(eval_path));
        evals[name] = e;
        real(name + ".ca", e.ca);
        put(name + ".ca_fraction", std::to_string(e.ca_correct) + "/" + std::to_string(e.n_clean));
        real(name + ".asr", e.asr);
        put(name + ".asr_fraction", std::to_string(e.asr_hits) + "/" + std::to_string(e.n_triggered));
        if (auto it = summary.find(name + ".trainable_fraction"); it != summary.end()) {
            put(name + ".trainable_fraction", it->second);
        }

        const auto trace = TrainTrace::from_csv(read_file(dir / (name + ".trace.csv")));
        put(name + ".epochs", std::to_string(trace.epochs.size()));
        if (!trace.epochs.empty()) {
            const auto& last = trace.epochs.back().loss;
            real(name + ".final_ce", last.ce);
            real(name + ".final_kd", last.kd);
            real(name + ".final_fa", last.fa);
            real(name + ".final_total", last.total);
        }
        const fs::path mi_path = dir / (name + ".mi.txt");
        const auto mi = read_kv(mi_path);
        real(name + ".mi", as_real(mi, "mi", mi_path));
        if (fs::exists(dir / (name + ".defense.txt"))) {
            const auto d = EvalReport::parse(read_file(dir / (name + ".defense.txt")));
            real(name + ".defended_ca", d.ca);
            real(name + ".defended_asr", d.asr);
        }
    }

    // Objective 1: ASR close to full fine-tuning. Objective 2: CA close to clean.
    for (Arm a : config.eval.arms) {
        const std::string name(arm_name(a));
        if (evals.contains("full")) real("objective1." + name + ".asr_gap_to_full", evals[name].asr - evals["full"].asr);
        if (evals.contains("clean")) real("objective2." + name + ".ca_gap_to_clean", evals[name].ca - evals["clean"].ca);
    }

    if (fs::exists(dir / "defense.txt")) {
        const auto d = read_kv(dir / "defense.txt");
        for (const auto& [k, v] : d) put("defense." + k, v);
    }

    const std::string text = out.str();
    write_file_atomic(dir / "report.txt", text);
    return text;
}

RunArtifacts run_pipeline(const ExperimentConfig& config, const fs::path& out_root) {
    config.validate();
    const std::string hash = run_id(config);
    std::error_code ec;
    fs::create_directories(out_root, ec);
    if (ec) throw IoError("cannot create output directory " + out_root.string() + ": " + ec.message());
    const fs::path root = fs::weakly_canonical(out_root);
    // Staged outside out_root so an interrupted run leaves nothing inside it.
    const fs::path staging = root.parent_path() / ("." + root.filename().string() + "." + hash + ".partial");
    fs::remove_all(staging, ec);
    fs::create_directories(staging);

    try {
        const PipelineResult result = execute_pipeline(config);
        write_artifacts(config, result, staging);
        emit_report(staging);
    } catch (...) {
        fs::remove_all(staging, ec);
        throw;
    }

    const fs::path final_dir = root / hash;
    fs::remove_all(final_dir, ec);
    fs::rename(staging, final_dir, ec);
    if (ec) {
        fs::remove_all(staging);
        throw IoError("cannot move run into " + final_dir.string() + ": " + ec.message());
    }

    RunArtifacts art;
    art.dir = final_dir;
    art.run_id = hash;
    art.config_hash = hex64(config.hash());
    art.report = final_dir / "report.txt";
    for (const auto& e : fs::recursive_directory_iterator(final_dir)) {
        if (e.is_regular_file()) art.files.push_back(fs::relative(e.path(), final_dir));
    }
    std::sort(art.files.begin(), art.files.end());
    return art;
}

// ---------------------------------------------------------------------------
// sweeps

SweepAxis parse_sweep_axis(std::string_view name) {
    if (name == "poison-count" || name == "poison") return SweepAxis::poison_count;
    if (name == "trigger-length" || name == "trigger-len") return SweepAxis::trigger_length;
    if (name == "rank") return SweepAxis::rank;
    throw ConfigError("unknown sweep axis '" + std::string(name) + "' (expected poison-count, trigger-length or rank)");
}

std::string_view sweep_axis_name(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::poison_count: return "poison-count";
        case SweepAxis::trigger_length: return "trigger-length";
        case SweepAxis::rank: return "rank";
    }
    return "?";
}

namespace {

SweepRow sweep_point(const ExperimentConfig& config, std::string value) {
    SweepRow row;
    row.value = std::move(value);
    try {
        const auto r = execute_pipeline(config);
        for (const auto& a : r.arms) {
            switch (a.arm) {
                case Arm::full: row.full = a.eval; break;
                case Arm::peft: row.peft = a.eval; break;
                case Arm::w2s: row.w2s = a.eval; break;
            }
            if (a.arm != Arm::full || r.arms.size() == 1) row.trainable_fraction = a.trainable_fraction;
        }
    } catch (const Error& e) {
        row.error = e.what();
    }
    return row;
}

}  // namespace

std::vector<SweepRow> run_sweep(const ExperimentConfig& config, SweepAxis axis) {
    config.validate();
    // Sweeps report CA and ASR only.
    ExperimentConfig base = config;
    base.eval.defense = false;
    base.eval.clean_reference = false;

    std::vector<SweepRow> rows;
    switch (axis) {
        case SweepAxis::poison_count:
            if (config.sweep.poison_counts.empty()) throw ConfigError("sweep.poison_counts is empty");
            for (std::size_t v : config.sweep.poison_counts) {
                ExperimentConfig c = base;
                c.poison.count = v;
                rows.push_back(sweep_point(c, std::to_string(v)));
            }
            break;
        case SweepAxis::trigger_length:
            if (config.sweep.trigger_lengths.empty()) throw ConfigError("sweep.trigger_lengths is empty");
            for (std::size_t v : config.sweep.trigger_lengths) {
                ExperimentConfig c = base;
                c.trigger_length = v;
                rows.push_back(sweep_point(c, std::to_string(v)));
            }
            break;
        case SweepAxis::rank: {
            if (config.sweep.ranks.empty()) throw ConfigError("sweep.ranks is empty");
            // Full fine-tuning does not depend on the rank, so it gets its own row.
            ExperimentConfig per_rank = base;
            std::erase(per_rank.eval.arms, Arm::full);
            if (per_rank.eval.arms.empty()) per_rank.eval.arms = {Arm::peft};
            for (std::size_t v : config.sweep.ranks) {
                ExperimentConfig c = per_rank;
                c.adapter.rank = v;
                rows.push_back(sweep_point(c, std::to_string(v)));
            }
            if (config.sweep.rank_include_full) {
                ExperimentConfig c = base;
                c.eval.arms = {Arm::full};
                rows.push_back(sweep_point(c, "full"));
            }
            break;
        }
    }
    return rows;
}

std::string sweep_csv(SweepAxis axis, const std::vector<SweepRow>& rows) {
    std::ostringstream out;
    out << "axis,value,full_ca,full_asr,peft_ca,peft_asr,w2s_ca,w2s_asr,trainable_fraction,error\n";
    auto pair = [&](const std::optional<EvalReport>& e) {
        if (e) out << ',' << format_double(e->ca) << ',' << format_double(e->asr);
        else out << ",,";
    };
    for (const auto& r : rows) {
        out << sweep_axis_name(axis) << ',' << r.value;
        pair(r.full);
        pair(r.peft);
        pair(r.w2s);
        out << ',' << format_double(r.trainable_fraction) << ',';
        std::string err = r.error;
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        out << err << '\n';
    }
    return out.str();
}

}  // namespace w2s
