#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "w2s/autodiff.hpp"
#include "w2s/textdata.hpp"

namespace w2s {

enum class Pooling { mean, first_token };

Pooling parse_pooling(std::string_view name);
std::string_view pooling_name(Pooling pooling);

// embedding -> pooled sequence vector -> depth x (affine + nonlinearity) -> H -> head -> logits
struct ModelConfig {
    std::size_t vocab_size = 2;
    std::size_t embed_dim = 32;
    std::size_t hidden_dim = 64;
    std::size_t depth = 3;
    std::size_t class_count = 2;
    Pooling pooling = Pooling::mean;
    ad::Activation activation = ad::Activation::tanh;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;

    static ModelConfig teacher(std::size_t vocab_size, std::size_t class_count);
    // First-token pooling, depth 1: the alternative teacher architecture.
    static ModelConfig teacher_variant(std::size_t vocab_size, std::size_t class_count);
    static ModelConfig student(std::size_t vocab_size, std::size_t class_count);
};

enum class AdapterKind { low_rank, prefix, soft_prompt };

AdapterKind parse_adapter_kind(std::string_view name);
std::string_view adapter_kind_name(AdapterKind kind);

struct AdapterSpec {
    AdapterKind kind = AdapterKind::low_rank;
    std::size_t rank = 8;       // low-rank only
    double scaling = 1.0;       // low-rank only
    std::size_t length = 4;     // prefix / soft-prompt length
    std::vector<std::string> targets;  // weight matrices receiving low-rank factors

    bool operator==(const AdapterSpec&) const = default;
};

// Maps a teacher hidden vector h_t to the student width: W h_t + b, with
// W stored as [h_s x h_t].
struct TeacherProjection {
    ad::DenseArray weight;
    ad::DenseArray bias;

    std::size_t input_dim() const { return weight.cols(); }
    std::size_t output_dim() const { return weight.rows(); }

    static TeacherProjection init(std::size_t teacher_dim, std::size_t student_dim, std::uint64_t seed);
};

ad::DenseArray project_teacher_hidden(const TeacherProjection& projection, const ad::DenseArray& teacher_hidden);

struct ForwardOutput {
    ad::DenseArray logits;  // [n x C]
    ad::DenseArray hidden;  // [n x d], pooled final encoder state
};

struct ForwardGraph {
    ad::Var logits;
    ad::Var hidden;
};

enum class TrainMode { full, adapter_only };

TrainMode parse_train_mode(std::string_view name);
std::string_view train_mode_name(TrainMode mode);

class ClassifierModel {
public:
    ClassifierModel() = default;
    ClassifierModel(ModelConfig config, ad::ParameterMap params, std::optional<AdapterSpec> adapter);

    const ModelConfig& config() const { return config_; }
    const ad::ParameterMap& parameters() const { return params_; }
    ad::ParameterMap& parameters() { return params_; }
    const ad::DenseArray& parameter(const std::string& name) const;
    const std::optional<AdapterSpec>& adapter() const { return adapter_; }

    // Teacher variant: the head reads g(H) instead of H.
    bool has_projection() const;
    TeacherProjection projection() const;
    void set_projection(const TeacherProjection& projection);
    std::size_t head_input_dim() const;

    // Records the forward pass on `tape`. Parameters named in `grad_names`
    // require gradients; every other parameter enters as frozen.
    ForwardGraph build(ad::Tape& tape, std::span<const int> ids, std::size_t rows, std::size_t length,
                       const std::set<std::string>& grad_names) const;
    ForwardGraph build(ad::Tape& tape, std::span<const int> ids, std::size_t rows, std::size_t length) const;

    std::size_t parameter_count() const;
    std::uint64_t parameter_hash() const;
    // Hash restricted to the named parameters.
    std::uint64_t parameter_hash(const std::vector<std::string>& names) const;

    // Folds low-rank factors into their target weights and drops the adapter.
    ClassifierModel materialized() const;

private:
    ModelConfig config_;
    ad::ParameterMap params_;
    std::optional<AdapterSpec> adapter_;
};

ClassifierModel init_params(const ModelConfig& config, std::uint64_t seed);

// Stateless forward over padded id rows; ids.size() == rows * length.
ForwardOutput forward(const ClassifierModel& model, std::span<const int> ids, std::size_t rows, std::size_t length);
ForwardOutput forward(const ClassifierModel& model, const Dataset& dataset);

ClassifierModel attach_adapter(ClassifierModel model, const AdapterSpec& spec, std::uint64_t seed);

// Teacher variant: installs g and re-initializes the head to read its output.
ClassifierModel attach_projection(ClassifierModel model, const TeacherProjection& projection, std::uint64_t seed);

struct TrainableSet {
    std::vector<std::string> names;
    std::size_t trainable_count = 0;
    std::size_t total_count = 0;
    double fraction = 0.0;
};

TrainableSet trainable_parameters(const ClassifierModel& model, TrainMode mode);

void save_checkpoint(const ClassifierModel& model, const std::filesystem::path& path);
ClassifierModel load_checkpoint(const std::filesystem::path& path);

// Glorot bound sqrt(6 / (fan_in + fan_out)).
double glorot_bound(std::size_t fan_in, std::size_t fan_out);

}  // namespace w2s
