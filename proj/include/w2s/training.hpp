#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "w2s/autodiff.hpp"
#include "w2s/model.hpp"
#include "w2s/textdata.hpp"

namespace w2s {

enum class OptimizerKind { sgd, adam };

OptimizerKind parse_optimizer(std::string_view name);
std::string_view optimizer_name(OptimizerKind kind);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    bool operator==(const OptimizerConfig&) const = default;
};

struct LossWeights {
    double alpha = 1.0;
    double beta = 1.0;
    double gamma = 0.001;

    void validate() const;
    bool operator==(const LossWeights&) const = default;
};

struct TrainConfig {
    double learning_rate = 2e-3;
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    TrainMode mode = TrainMode::full;
    LossWeights weights;
    OptimizerConfig optimizer;
    // Off by default so traces stay byte-identical across runs.
    bool record_wall_time = false;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

struct LossBreakdown {
    double ce = 0.0;
    double kd = 0.0;
    double fa = 0.0;
    double total = 0.0;
};

struct EpochRecord {
    LossBreakdown loss;
    double val_ca = 0.0;
    double val_asr = 0.0;
    double seconds = 0.0;
};

struct TrainTrace {
    std::vector<EpochRecord> epochs;

    std::size_t size() const { return epochs.size(); }
    // Header `epoch,ce,kd,fa,total,val_ca,val_asr,seconds`; missing validation is `nan`.
    std::string to_csv() const;
    static TrainTrace from_csv(const std::string& text);
};

// --- loss terms on recorded graphs ----------------------------------------

ad::Var cross_entropy_term(const ad::Var& logits, std::span<const int> labels);
// Teacher side enters as a constant.
ad::Var distill_term(const ad::Var& student_logits, const ad::DenseArray& teacher_logits);
ad::Var feature_align_term(const ad::Var& student_hidden, const ad::DenseArray& projected_teacher_hidden);

struct CompositeLoss {
    ad::Var total;
    LossBreakdown breakdown;
};

CompositeLoss composite_loss(const ForwardGraph& student, const ForwardOutput& teacher,
                             const TeacherProjection& projection, std::span<const int> labels,
                             const LossWeights& weights);

// --- loss terms on plain values -------------------------------------------

double cross_entropy_term(const ForwardOutput& student, std::span<const int> labels);
double distill_term(const ad::DenseArray& student_logits, const ad::DenseArray& teacher_logits);
double feature_align_term(const ad::DenseArray& student_hidden, const ad::DenseArray& projected_teacher_hidden);
LossBreakdown composite_loss(const ForwardOutput& student, const ForwardOutput& teacher,
                             const TeacherProjection& projection, std::span<const int> labels,
                             const LossWeights& weights);

// --- training loops ----------------------------------------------------------

// Optional per-epoch validation. Either pointer may be null.
struct Validation {
    const Dataset* clean = nullptr;
    const Dataset* triggered = nullptr;
    int target_label = 1;
};

struct TeacherResult {
    ClassifierModel model;
    TeacherProjection projection;
    TrainTrace trace;
};

struct StudentResult {
    ClassifierModel model;
    TrainTrace trace;
};

// Trains every teacher parameter and g with cross-entropy through g. The
// model's head is rebuilt to read g(H) if it does not already.
TeacherResult train_teacher(ClassifierModel model, const Dataset& data, const TeacherProjection& projection,
                            const TrainConfig& config, const Validation& validation = {});

StudentResult train_student_baseline(ClassifierModel model, const Dataset& data, const TrainConfig& config,
                                     const Validation& validation = {});

StudentResult train_student_w2sattack(ClassifierModel student, const ClassifierModel& teacher,
                                      const TeacherProjection& projection, const Dataset& data,
                                      const TrainConfig& config, const Validation& validation = {});

}  // namespace w2s
