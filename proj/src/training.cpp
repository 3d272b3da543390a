#include "w2s/training.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "w2s/error.hpp"
#include "w2s/evaluation.hpp"
#include "w2s/rng.hpp"
#include "w2s/util.hpp"

namespace w2s {

OptimizerKind parse_optimizer(std::string_view name) {
    if (name == "sgd") return OptimizerKind::sgd;
    if (name == "adam") return OptimizerKind::adam;
    throw ConfigError("unknown optimizer '" + std::string(name) + "' (expected sgd or adam)");
}

std::string_view optimizer_name(OptimizerKind kind) {
    return kind == OptimizerKind::sgd ? "sgd" : "adam";
}

void LossWeights::validate() const {
    if (!(alpha >= 0.0) || !(beta >= 0.0) || !(gamma >= 0.0)) {
        throw ConfigError("loss weights must be non-negative");
    }
    if (!(alpha + beta + gamma > 0.0)) throw ConfigError("loss weights must not all be zero");
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be positive");
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("batch size must be at least 1");
    weights.validate();
    if (optimizer.kind == OptimizerKind::adam) {
        if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) || !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) {
            throw ConfigError("adam betas must lie in [0, 1)");
        }
        if (!(optimizer.epsilon > 0.0)) throw ConfigError("adam epsilon must be positive");
    }
}

// --- trace -------------------------------------------------------------------

std::string TrainTrace::to_csv() const {
    std::ostringstream out;
    out << "epoch,ce,kd,fa,total,val_ca,val_asr,seconds\n";
    for (std::size_t e = 0; e < epochs.size(); ++e) {
        const auto& r = epochs[e];
        out << e + 1 << ',' << format_double(r.loss.ce) << ',' << format_double(r.loss.kd) << ','
            << format_double(r.loss.fa) << ',' << format_double(r.loss.total) << ',' << format_double(r.val_ca)
            << ',' << format_double(r.val_asr) << ',' << format_double(r.seconds) << '\n';
    }
    return out.str();
}

TrainTrace TrainTrace::from_csv(const std::string& text) {
    TrainTrace trace;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 || line.empty()) continue;
        std::vector<double> fields;
        std::istringstream row(line);
        std::string cell;
        while (std::getline(row, cell, ',')) {
            try {
                fields.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw DataError("trace line " + std::to_string(line_no) + ": bad number '" + cell + "'");
            }
        }
        if (fields.size() != 8) throw DataError("trace line " + std::to_string(line_no) + ": expected 8 fields");
        EpochRecord r;
        r.loss = {fields[1], fields[2], fields[3], fields[4]};
        r.val_ca = fields[5];
        r.val_asr = fields[6];
        r.seconds = fields[7];
        trace.epochs.push_back(r);
    }
    return trace;
}

// --- loss terms ----------------------------------------------------------------

ad::Var cross_entropy_term(const ad::Var& logits, std::span<const int> labels) {
    return ad::softmax_cross_entropy(logits, labels);
}

ad::Var distill_term(const ad::Var& student_logits, const ad::DenseArray& teacher_logits) {
    return ad::mse(student_logits, student_logits.tape().constant(teacher_logits));
}

ad::Var feature_align_term(const ad::Var& student_hidden, const ad::DenseArray& projected_teacher_hidden) {
    return ad::mean_row_sq_dist(student_hidden, student_hidden.tape().constant(projected_teacher_hidden));
}

namespace {

LossBreakdown combine(double ce, double kd, double fa, const LossWeights& w) {
    return {ce, kd, fa, w.alpha * ce + w.beta * kd + w.gamma * fa};
}

}  // namespace

CompositeLoss composite_loss(const ForwardGraph& student, const ForwardOutput& teacher,
                             const TeacherProjection& projection, std::span<const int> labels,
                             const LossWeights& weights) {
    weights.validate();
    const ad::Var ce = cross_entropy_term(student.logits, labels);
    const ad::Var kd = distill_term(student.logits, teacher.logits);
    const ad::Var fa = feature_align_term(student.hidden, project_teacher_hidden(projection, teacher.hidden));
    const ad::Var terms[] = {ce, kd, fa};
    const double w[] = {weights.alpha, weights.beta, weights.gamma};
    CompositeLoss out;
    out.total = ad::weighted_sum(terms, w);
    out.breakdown = {ce.value().item(), kd.value().item(), fa.value().item(), out.total.value().item()};
    return out;
}

double cross_entropy_term(const ForwardOutput& student, std::span<const int> labels) {
    ad::Tape tape;
    return cross_entropy_term(tape.constant(student.logits), labels).value().item();
}

double distill_term(const ad::DenseArray& student_logits, const ad::DenseArray& teacher_logits) {
    ad::Tape tape;
    return distill_term(tape.constant(student_logits), teacher_logits).value().item();
}

double feature_align_term(const ad::DenseArray& student_hidden, const ad::DenseArray& projected_teacher_hidden) {
    ad::Tape tape;
    return feature_align_term(tape.constant(student_hidden), projected_teacher_hidden).value().item();
}

LossBreakdown composite_loss(const ForwardOutput& student, const ForwardOutput& teacher,
                             const TeacherProjection& projection, std::span<const int> labels,
                             const LossWeights& weights) {
    weights.validate();
    return combine(cross_entropy_term(student, labels), distill_term(student.logits, teacher.logits),
                   feature_align_term(student.hidden, project_teacher_hidden(projection, teacher.hidden)), weights);
}

// --- optimizer -------------------------------------------------------------------

namespace {

class Optimizer {
public:
    Optimizer(const OptimizerConfig& config, double lr) : config_(config), lr_(lr) {}

    void step(ad::ParameterMap& params, const ad::GradientMap& grads, const std::vector<std::string>& names) {
        ++t_;
        const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
        for (const auto& name : names) {
            auto& theta = params.at(name).value;
            const auto g = grads.at(name).values();
            auto p = theta.values();
            if (config_.kind == OptimizerKind::sgd) {
                for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr_ * g[i];
                continue;
            }
            auto& m = first_[name];
            auto& v = second_[name];
            if (m.empty()) {
                m.assign(p.size(), 0.0);
                v.assign(p.size(), 0.0);
            }
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
                v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
                p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.epsilon);
            }
        }
    }

private:
    OptimizerConfig config_;
    double lr_;
    std::size_t t_ = 0;
    std::map<std::string, std::vector<double>> first_;
    std::map<std::string, std::vector<double>> second_;
};

struct Batch {
    std::vector<int> ids;
    std::vector<int> labels;
    std::size_t rows = 0;
    std::size_t length = 0;
};

Batch gather(const Dataset& data, std::span<const std::size_t> indices) {
    Batch b;
    b.rows = indices.size();
    b.length = data.max_length;
    b.ids.reserve(indices.size() * data.max_length);
    for (std::size_t i : indices) {
        const auto& ex = data.examples[i];
        b.ids.insert(b.ids.end(), ex.ids.begin(), ex.ids.end());
        b.labels.push_back(ex.label);
    }
    return b;
}

// Builds the loss for one batch on `tape`; returns the scalar to minimize.
using BatchLoss = std::function<CompositeLoss(ad::Tape&, const ClassifierModel&, const Batch&,
                                              const std::set<std::string>&)>;

void validate_dataset(const Dataset& data, const ClassifierModel& model) {
    if (data.empty()) throw DataError("training set is empty");
    if (data.class_count != model.config().class_count) {
        throw ConfigError("dataset has " + std::to_string(data.class_count) + " classes, model expects " +
                          std::to_string(model.config().class_count));
    }
    for (const auto& ex : data.examples) {
        if (ex.ids.size() != data.max_length) throw DataError("training example not padded to max_length");
    }
}

std::vector<std::string> frozen_names(const ClassifierModel& model, const std::vector<std::string>& trainable) {
    const std::set<std::string> t(trainable.begin(), trainable.end());
    std::vector<std::string> out;
    for (const auto& [name, _] : model.parameters())
        if (!t.contains(name)) out.push_back(name);
    return out;
}

TrainTrace run_loop(ClassifierModel& model, const Dataset& data, const TrainConfig& config,
                    const Validation& validation, const LossWeights& reported, const BatchLoss& batch_loss) {
    config.validate();
    validate_dataset(data, model);
    const TrainableSet trainable = trainable_parameters(model, config.mode);
    if (trainable.names.empty()) throw ConfigError("no trainable parameters");
    const std::set<std::string> grad_names(trainable.names.begin(), trainable.names.end());
    const std::vector<std::string> frozen = frozen_names(model, trainable.names);
    const std::uint64_t frozen_before = model.parameter_hash(frozen);

    Optimizer optimizer(config.optimizer, config.learning_rate);
    Rng rng(config.seed);
    std::vector<std::size_t> order(data.size());
    TrainTrace trace;
    const double nan = std::numeric_limits<double>::quiet_NaN();

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(std::span<std::size_t>(order));
        double ce = 0.0, kd = 0.0, fa = 0.0;
        try {
            for (std::size_t lo = 0; lo < order.size(); lo += config.batch_size) {
                const std::size_t hi = std::min(order.size(), lo + config.batch_size);
                const Batch batch = gather(data, std::span<const std::size_t>(order).subspan(lo, hi - lo));
                ad::Tape tape;
                const CompositeLoss loss = batch_loss(tape, model, batch, grad_names);
                const ad::GradientMap grads = tape.backward(loss.total);
                for (const auto& name : trainable.names) {
                    if (!grads.at(name).all_finite()) throw NumericError("non-finite gradient for " + name);
                }
                optimizer.step(model.parameters(), grads, trainable.names);
                const double w = static_cast<double>(batch.rows);
                ce += w * loss.breakdown.ce;
                kd += w * loss.breakdown.kd;
                fa += w * loss.breakdown.fa;
            }
            for (const auto& name : trainable.names) {
                if (!model.parameter(name).all_finite()) throw NumericError("parameter " + name + " diverged");
            }
        } catch (const NumericError& e) {
            throw TrainingError("training diverged in epoch " + std::to_string(epoch + 1) + ": " + e.what());
        }
        const double n = static_cast<double>(data.size());
        EpochRecord record;
        record.loss = combine(ce / n, kd / n, fa / n, reported);
        record.val_ca = validation.clean && !validation.clean->empty() ? clean_accuracy(model, *validation.clean) : nan;
        record.val_asr = validation.triggered && !validation.triggered->empty()
                             ? attack_success_rate(model, *validation.triggered, validation.target_label)
                             : nan;
        if (config.record_wall_time) {
            record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        }
        trace.epochs.push_back(record);
    }

    if (model.parameter_hash(frozen) != frozen_before) throw TrainingError("a frozen parameter changed during training");
    return trace;
}

}  // namespace

TeacherResult train_teacher(ClassifierModel model, const Dataset& data, const TeacherProjection& projection,
                            const TrainConfig& config, const Validation& validation) {
    if (config.mode != TrainMode::full) throw ConfigError("teacher training requires mode = full");
    if (projection.input_dim() != model.config().hidden_dim) {
        throw ConfigError("projection input width " + std::to_string(projection.input_dim()) +
                          " does not match teacher hidden width " + std::to_string(model.config().hidden_dim));
    }
    if (model.has_projection()) {
        model.set_projection(projection);
    } else {
        model = attach_projection(std::move(model), projection, mix_seed(config.seed ^ 0x9e0dull));
    }
    const LossWeights ce_only{1.0, 0.0, 0.0};
    TrainTrace trace = run_loop(model, data, config, validation, ce_only,
                                [](ad::Tape& tape, const ClassifierModel& m, const Batch& b,
                                   const std::set<std::string>& names) {
                                    const ForwardGraph g = m.build(tape, b.ids, b.rows, b.length, names);
                                    const ad::Var ce = cross_entropy_term(g.logits, b.labels);
                                    return CompositeLoss{ce, combine(ce.value().item(), 0.0, 0.0, {1.0, 0.0, 0.0})};
                                });
    TeacherProjection trained = model.projection();
    return {std::move(model), std::move(trained), std::move(trace)};
}

StudentResult train_student_baseline(ClassifierModel model, const Dataset& data, const TrainConfig& config,
                                     const Validation& validation) {
    if (config.mode == TrainMode::adapter_only && !model.adapter()) {
        throw ConfigError("adapter-only training needs an attached adapter");
    }
    TrainTrace trace = run_loop(model, data, config, validation, {1.0, 0.0, 0.0},
                                [](ad::Tape& tape, const ClassifierModel& m, const Batch& b,
                                   const std::set<std::string>& names) {
                                    const ForwardGraph g = m.build(tape, b.ids, b.rows, b.length, names);
                                    const ad::Var ce = cross_entropy_term(g.logits, b.labels);
                                    return CompositeLoss{ce, combine(ce.value().item(), 0.0, 0.0, {1.0, 0.0, 0.0})};
                                });
    return {std::move(model), std::move(trace)};
}

StudentResult train_student_w2sattack(ClassifierModel student, const ClassifierModel& teacher,
                                      const TeacherProjection& projection, const Dataset& data,
                                      const TrainConfig& config, const Validation& validation) {
    if (config.mode == TrainMode::adapter_only && !student.adapter()) {
        throw ConfigError("adapter-only training needs an attached adapter");
    }
    if (projection.output_dim() != student.config().hidden_dim) {
        throw ConfigError("projection output width " + std::to_string(projection.output_dim()) +
                          " does not match student hidden width " + std::to_string(student.config().hidden_dim));
    }
    if (projection.input_dim() != teacher.config().hidden_dim) {
        throw ConfigError("projection input width " + std::to_string(projection.input_dim()) +
                          " does not match teacher hidden width " + std::to_string(teacher.config().hidden_dim));
    }
    if (teacher.config().class_count != student.config().class_count) {
        throw ConfigError("teacher and student disagree on the class count");
    }
    const std::uint64_t teacher_before = teacher.parameter_hash();
    const LossWeights weights = config.weights;
    TrainTrace trace = run_loop(student, data, config, validation, weights,
                                [&](ad::Tape& tape, const ClassifierModel& m, const Batch& b,
                                    const std::set<std::string>& names) {
                                    // Teacher outputs are plain values, so nothing flows back into it.
                                    const ForwardOutput t = forward(teacher, b.ids, b.rows, b.length);
                                    const ForwardGraph g = m.build(tape, b.ids, b.rows, b.length, names);
                                    return composite_loss(g, t, projection, b.labels, weights);
                                });
    if (teacher.parameter_hash() != teacher_before) throw TrainingError("teacher parameters changed during distillation");
    return {std::move(student), std::move(trace)};
}

}  // namespace w2s
