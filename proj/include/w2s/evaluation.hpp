#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "w2s/autodiff.hpp"
#include "w2s/model.hpp"
#include "w2s/textdata.hpp"

namespace w2s {

// Argmax per row; ties go to the lowest class index.
std::vector<int> argmax_rows(const ad::DenseArray& logits);
std::vector<int> predict(const ClassifierModel& model, const Dataset& dataset);

struct Fraction {
    std::size_t numerator = 0;
    std::size_t denominator = 0;

    double value() const { return static_cast<double>(numerator) / static_cast<double>(denominator); }
    bool operator==(const Fraction&) const = default;
};

Fraction count_equal(std::span<const int> predictions, std::span<const int> expected);
Fraction count_target(std::span<const int> predictions, int target_label);

double clean_accuracy(const ClassifierModel& model, const Dataset& clean_test);
double attack_success_rate(const ClassifierModel& model, const Dataset& triggered_test, int target_label);

struct EvalReport {
    double ca = 0.0;
    double asr = 0.0;
    std::size_t n_clean = 0;
    std::size_t n_triggered = 0;
    std::size_t ca_correct = 0;
    std::size_t asr_hits = 0;
    std::vector<double> per_class_accuracy;

    // Flat `key=value` lines in a fixed order.
    std::string to_text() const;
    static EvalReport parse(const std::string& text);
    bool operator==(const EvalReport&) const = default;
};

EvalReport evaluate(const ClassifierModel& model, const Dataset& clean_test, const Dataset& triggered_test,
                    int target_label);

// --- mutual information diagnostic ----------------------------------------

struct MIEstimate {
    double value = 0.0;  // nats
    std::size_t clusters = 0;
    std::size_t samples = 0;
    double label_entropy = 0.0;
    std::size_t reseeded = 0;        // empty clusters re-seeded once
    std::size_t empty_clusters = 0;  // still empty after re-seeding
};

// Plug-in I(Z;Y) in nats from a contingency table of counts [z][y].
double plugin_mutual_information(const std::vector<std::vector<std::size_t>>& joint);
double entropy_of_labels(std::span<const int> labels);

struct KMeansResult {
    std::vector<int> assignment;
    std::size_t reseeded = 0;
    std::size_t empty_clusters = 0;
};

KMeansResult kmeans(const ad::DenseArray& points, std::size_t k, std::size_t iterations, std::uint64_t seed);

MIEstimate estimate_mutual_information(const ad::DenseArray& hidden, std::span<const int> labels, std::size_t k,
                                       std::uint64_t seed, std::size_t iterations = 50);

// --- ONION-style leave-one-out defense ---------------------------------------

class UnigramLM {
public:
    static UnigramLM train(const std::vector<std::vector<std::string>>& corpus, double smoothing = 0.5);

    double probability(const std::string& token) const;
    double surprisal(const std::string& token) const { return -std::log(probability(token)); }
    // Sum of per-token surprisals.
    double total_surprisal(std::span<const std::string> tokens) const;

    std::size_t total_count() const { return total_; }
    std::size_t vocabulary_size() const { return counts_.size(); }
    double smoothing() const { return smoothing_; }
    const std::map<std::string, std::size_t>& counts() const { return counts_; }

private:
    std::map<std::string, std::size_t> counts_;
    std::size_t total_ = 0;
    double smoothing_ = 0.5;
};

// score_i = mean surprisal of the sentence - mean surprisal without token i.
std::vector<double> suspicion_scores(std::span<const std::string> tokens, const UnigramLM& lm);

struct OnionResult {
    std::vector<std::string> kept;
    std::vector<std::size_t> removed;  // positions in the input
    std::vector<double> scores;
};

OnionResult onion_filter(std::span<const std::string> tokens, const UnigramLM& lm,
                         double threshold = std::numeric_limits<double>::infinity());

using Defense = std::function<std::vector<std::string>(const std::vector<std::string>&)>;

Defense identity_defense();
Defense onion_defense(UnigramLM lm, double threshold);

// Applies `defense` to every triggered and clean example, re-encodes and
// reports the post-defense ASR and CA.
EvalReport evaluate_under_defense(const ClassifierModel& model, const Dataset& clean_test,
                                  const Dataset& triggered_test, const Vocabulary& vocab, const Defense& defense,
                                  int target_label);

// CSV: label,poisoned,h0..h{d-1}. Returns the number of data rows.
std::size_t export_hidden_features(const ClassifierModel& model, const Dataset& dataset,
                                   const std::filesystem::path& path);

}  // namespace w2s
