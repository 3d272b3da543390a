#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "w2s/config.hpp"
#include "w2s/evaluation.hpp"
#include "w2s/model.hpp"
#include "w2s/textdata.hpp"
#include "w2s/training.hpp"

namespace w2s {

// Every stage seed is the master seed XOR a fixed constant.
struct StageSeeds {
    static constexpr std::uint64_t split_tag = 0x5100000000000001ULL;
    static constexpr std::uint64_t poison_tag = 0x5100000000000002ULL;
    static constexpr std::uint64_t triggered_tag = 0x5100000000000003ULL;
    static constexpr std::uint64_t teacher_init_tag = 0x5100000000000004ULL;
    static constexpr std::uint64_t projection_init_tag = 0x5100000000000005ULL;
    static constexpr std::uint64_t teacher_train_tag = 0x5100000000000006ULL;
    static constexpr std::uint64_t student_init_tag = 0x5100000000000007ULL;
    static constexpr std::uint64_t student_pretrain_tag = 0x5100000000000008ULL;
    static constexpr std::uint64_t adapter_init_tag = 0x5100000000000009ULL;
    static constexpr std::uint64_t student_train_tag = 0x510000000000000aULL;
    static constexpr std::uint64_t mi_tag = 0x510000000000000bULL;

    std::uint64_t split = 0;
    std::uint64_t poison = 0;
    std::uint64_t triggered = 0;
    std::uint64_t teacher_init = 0;
    std::uint64_t projection_init = 0;
    std::uint64_t teacher_train = 0;
    std::uint64_t student_init = 0;
    std::uint64_t student_pretrain = 0;
    std::uint64_t adapter_init = 0;
    std::uint64_t student_train = 0;
    std::uint64_t mi = 0;

    static StageSeeds derive(std::uint64_t master);
    // `name=hex` lines in stage order.
    std::string describe() const;
};

struct PreparedData {
    Vocabulary vocab;
    std::vector<RawExample> train_raw;
    Dataset train_clean;
    Dataset train_poisoned;
    Dataset valid;
    Dataset test;
    Dataset valid_triggered;
    Dataset test_triggered;
    std::uint64_t corpus_hash = 0;
};

PreparedData prepare_data(const ExperimentConfig& config, const StageSeeds& seeds);
// Same, from already-loaded corpus rows.
PreparedData prepare_data(const ExperimentConfig& config, const StageSeeds& seeds, std::vector<RawExample> corpus,
                          std::uint64_t corpus_hash);

ClassifierModel build_student_base(const ExperimentConfig& config, const PreparedData& data, const StageSeeds& seeds);
TeacherResult run_teacher_stage(const ExperimentConfig& config, const PreparedData& data, const StageSeeds& seeds);
ClassifierModel adapted_student(const ExperimentConfig& config, const ClassifierModel& base, const StageSeeds& seeds);

// Trains one arm from the student base. `teacher` is required for w2s.
StudentResult run_student_arm(Arm arm, const ExperimentConfig& config, const PreparedData& data,
                              const StageSeeds& seeds, const ClassifierModel& base, const TeacherResult* teacher);
// The adapted student trained on the unpoisoned training split.
StudentResult run_clean_reference(const ExperimentConfig& config, const PreparedData& data, const StageSeeds& seeds,
                                  const ClassifierModel& base);

struct DefenseOutcome {
    EvalReport before;
    EvalReport after;
};

struct ArmOutcome {
    Arm arm = Arm::full;
    ClassifierModel model;
    TrainTrace trace;
    EvalReport eval;
    MIEstimate mi;
    std::optional<DefenseOutcome> defense;
    double trainable_fraction = 1.0;
};

struct DefenseSummary {
    // Triggered test sentences whose highest suspicion score falls on a trigger token.
    std::size_t trigger_top = 0;
    std::size_t sentences = 0;
    double threshold = 0.0;

    double trigger_top_fraction() const {
        return sentences ? static_cast<double>(trigger_top) / static_cast<double>(sentences) : 0.0;
    }
};

struct PipelineResult {
    StageSeeds seeds;
    PreparedData data;
    ClassifierModel student_base;
    std::optional<TeacherResult> teacher;
    std::optional<EvalReport> teacher_eval;
    std::vector<ArmOutcome> arms;
    std::optional<ArmOutcome> clean_reference;
    std::optional<DefenseSummary> defense;

    const ArmOutcome* find(Arm arm) const;
};

UnigramLM train_defense_lm(const ExperimentConfig& config, const PreparedData& data);
DefenseSummary summarize_trigger_suspicion(const Dataset& triggered, const Vocabulary& vocab, const UnigramLM& lm,
                                           const TriggerSpec& trigger, double threshold);

// Runs every configured stage in memory; nothing touches the disk beyond
// reading the corpus. Stage failures are rethrown with the stage name.
PipelineResult execute_pipeline(const ExperimentConfig& config);

struct RunArtifacts {
    std::filesystem::path dir;
    std::string run_id;  // names dir: hash of the config snapshot and the corpus bytes
    std::string config_hash;
    std::filesystem::path report;
    std::vector<std::filesystem::path> files;  // relative to dir, sorted
};

std::string run_id(const ExperimentConfig& config);

// Writes the artifact tree to <out_root>/<run id>. The tree is staged
// next to out_root and renamed into place.
RunArtifacts run_pipeline(const ExperimentConfig& config, const std::filesystem::path& out_root);
void write_config_files(const ExperimentConfig& config, const std::filesystem::path& dir);
void save_prepared(const PreparedData& data, const std::filesystem::path& dir);
PreparedData load_prepared(const std::filesystem::path& dir);
void write_artifacts(const ExperimentConfig& config, const PipelineResult& result, const std::filesystem::path& dir);

// Renders report.txt from the files in a run directory and writes it.
std::string emit_report(const std::filesystem::path& run_dir);

enum class SweepAxis { poison_count, trigger_length, rank };

SweepAxis parse_sweep_axis(std::string_view name);
std::string_view sweep_axis_name(SweepAxis axis);

struct SweepRow {
    std::string value;
    std::optional<EvalReport> full;
    std::optional<EvalReport> peft;
    std::optional<EvalReport> w2s;
    double trainable_fraction = 0.0;
    std::string error;
};

std::vector<SweepRow> run_sweep(const ExperimentConfig& config, SweepAxis axis);
std::string sweep_csv(SweepAxis axis, const std::vector<SweepRow>& rows);

// Deterministic description of the build; contains no host or time data.
std::string environment_fingerprint();

}  // namespace w2s
