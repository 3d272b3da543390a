#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "w2s/model.hpp"
#include "w2s/poison.hpp"
#include "w2s/textdata.hpp"
#include "w2s/training.hpp"

namespace w2s {

// One literal: true/false, an integer, a real, or a double-quoted string.
using ConfigScalar = std::variant<bool, std::int64_t, double, std::string>;

struct ConfigValue {
    std::vector<ConfigScalar> items;
    bool is_list = false;
    std::size_t line = 0;
};

// Sectioned `key = value` text:
//
//   # comment
//   [section]
//   key = 1.5
//   names = ["a", "b"]
//
// Keys are addressed as `section.key`. Duplicate keys are errors.
class ConfigDocument {
public:
    static ConfigDocument parse(const std::string& text, const std::string& origin = "<config>");

    bool contains(const std::string& path) const { return values_.contains(path); }
    const ConfigValue* find(const std::string& path) const;
    const std::map<std::string, ConfigValue>& values() const { return values_; }

    // Typed access; marks the key as consumed. Type mismatches name the key.
    std::string get_string(const std::string& path, const std::string& fallback);
    double get_real(const std::string& path, double fallback);
    std::int64_t get_int(const std::string& path, std::int64_t fallback);
    std::size_t get_size(const std::string& path, std::size_t fallback);
    std::uint64_t get_u64(const std::string& path, std::uint64_t fallback);
    bool get_bool(const std::string& path, bool fallback);
    std::vector<std::string> get_strings(const std::string& path, const std::vector<std::string>& fallback);
    std::vector<double> get_reals(const std::string& path, const std::vector<double>& fallback);
    std::vector<std::size_t> get_sizes(const std::string& path, const std::vector<std::size_t>& fallback);

    // Throws ConfigError naming the first key nobody asked for.
    void reject_unused() const;

private:
    const ConfigValue* take(const std::string& path);
    std::string origin_;
    std::map<std::string, ConfigValue> values_;
    std::set<std::string> used_;
};

enum class Arm { full, peft, w2s };

Arm parse_arm(std::string_view name);
std::string_view arm_name(Arm arm);

struct DataConfig {
    std::string corpus_ref;          // as written in the config
    std::filesystem::path corpus;    // resolved against the config's directory
    TsvSchema schema;
    SplitFractions split{0.72, 0.08, 0.2};
    std::size_t max_length = default_max_length;
    std::size_t vocab_max = 10000;
    std::size_t min_count = 1;
};

struct EvalConfig {
    std::vector<Arm> arms{Arm::full, Arm::peft, Arm::w2s};
    bool clean_reference = true;
    bool defense = true;
    double onion_threshold = 0.2;
    double lm_smoothing = 0.5;
    std::size_t mi_k = 4;
    std::size_t mi_iterations = 50;
};

struct SweepConfig {
    std::vector<std::size_t> poison_counts;
    std::vector<std::size_t> trigger_lengths;
    std::vector<std::size_t> ranks;
    bool rank_include_full = true;
};

struct ExperimentConfig {
    DataConfig data;
    TriggerSpec trigger = TriggerSpec::rare_token();
    std::size_t trigger_length = 0;  // 0 keeps the payload as given
    PoisonPolicy poison{1, 400, true, 0};

    ModelConfig teacher_model = ModelConfig::teacher(2, 2);
    TrainConfig teacher_train;

    ModelConfig student_model = ModelConfig::student(2, 2);
    // Clean-data epochs that turn the random student into its base model; 0
    // keeps the random initialization as the base.
    std::size_t student_pretrain_epochs = 5;
    TrainConfig student_train;
    AdapterSpec adapter;
    LossWeights weights;

    EvalConfig eval;
    SweepConfig sweep;
    std::uint64_t seed = 1;

    // Verbatim input text and its location, when parsed from a file.
    std::string source_text;
    std::filesystem::path source_path;

    // Canonical rendering with every default filled in.
    std::string snapshot() const;
    std::uint64_t hash() const;
    void validate() const;
    bool has_arm(Arm arm) const;
    TriggerSpec effective_trigger() const;
};

ExperimentConfig parse_config_text(const std::string& text, const std::filesystem::path& base_dir,
                                   const std::string& origin = "<config>");
ExperimentConfig parse_config(const std::filesystem::path& path);

}  // namespace w2s
