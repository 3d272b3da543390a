#include "w2s/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "w2s/error.hpp"
#include "w2s/rng.hpp"
#include "w2s/util.hpp"

namespace w2s {

std::vector<int> argmax_rows(const ad::DenseArray& logits) {
    std::vector<int> out(logits.rows());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < logits.cols(); ++j)
            if (logits.at(i, j) > logits.at(i, best)) best = j;
        out[i] = static_cast<int>(best);
    }
    return out;
}

std::vector<int> predict(const ClassifierModel& model, const Dataset& dataset) {
    if (dataset.empty()) return {};
    return argmax_rows(forward(model, dataset).logits);
}

Fraction count_equal(std::span<const int> predictions, std::span<const int> expected) {
    if (predictions.size() != expected.size()) throw EvaluationError("prediction/label count mismatch");
    Fraction f{0, predictions.size()};
    for (std::size_t i = 0; i < predictions.size(); ++i) f.numerator += predictions[i] == expected[i];
    return f;
}

Fraction count_target(std::span<const int> predictions, int target_label) {
    Fraction f{0, predictions.size()};
    for (int p : predictions) f.numerator += p == target_label;
    return f;
}

double clean_accuracy(const ClassifierModel& model, const Dataset& clean_test) {
    if (clean_test.empty()) throw EvaluationError("clean accuracy on an empty test set");
    const auto labels = clean_test.labels();
    return count_equal(predict(model, clean_test), labels).value();
}

double attack_success_rate(const ClassifierModel& model, const Dataset& triggered_test, int target_label) {
    if (triggered_test.empty()) throw EvaluationError("attack success rate on an empty triggered set");
    return count_target(predict(model, triggered_test), target_label).value();
}

namespace {

void fill_clean(EvalReport& r, const std::vector<int>& predictions, const Dataset& clean) {
    const auto labels = clean.labels();
    const Fraction f = count_equal(predictions, labels);
    r.n_clean = f.denominator;
    r.ca_correct = f.numerator;
    r.ca = f.value();
    r.per_class_accuracy.assign(clean.class_count, 0.0);
    std::vector<std::size_t> hit(clean.class_count, 0), total(clean.class_count, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        ++total[static_cast<std::size_t>(labels[i])];
        hit[static_cast<std::size_t>(labels[i])] += predictions[i] == labels[i];
    }
    for (std::size_t c = 0; c < clean.class_count; ++c)
        r.per_class_accuracy[c] = total[c] ? static_cast<double>(hit[c]) / static_cast<double>(total[c]) : 0.0;
}

void fill_triggered(EvalReport& r, const std::vector<int>& predictions, int target_label) {
    const Fraction f = count_target(predictions, target_label);
    r.n_triggered = f.denominator;
    r.asr_hits = f.numerator;
    r.asr = f.value();
}

}  // namespace

EvalReport evaluate(const ClassifierModel& model, const Dataset& clean_test, const Dataset& triggered_test,
                    int target_label) {
    if (clean_test.empty() || triggered_test.empty()) throw EvaluationError("evaluation needs non-empty test sets");
    EvalReport r;
    fill_clean(r, predict(model, clean_test), clean_test);
    fill_triggered(r, predict(model, triggered_test), target_label);
    return r;
}

std::string EvalReport::to_text() const {
    std::ostringstream out;
    out << "ca=" << format_double(ca) << '\n'
        << "ca_correct=" << ca_correct << '\n'
        << "n_clean=" << n_clean << '\n'
        << "asr=" << format_double(asr) << '\n'
        << "asr_hits=" << asr_hits << '\n'
        << "n_triggered=" << n_triggered << '\n';
    for (std::size_t c = 0; c < per_class_accuracy.size(); ++c)
        out << "class_accuracy." << c << '=' << format_double(per_class_accuracy[c]) << '\n';
    return out.str();
}

EvalReport EvalReport::parse(const std::string& text) {
    EvalReport r;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        if (key == "ca") r.ca = std::stod(value);
        else if (key == "asr") r.asr = std::stod(value);
        else if (key == "ca_correct") r.ca_correct = std::stoul(value);
        else if (key == "n_clean") r.n_clean = std::stoul(value);
        else if (key == "asr_hits") r.asr_hits = std::stoul(value);
        else if (key == "n_triggered") r.n_triggered = std::stoul(value);
        else if (key.starts_with("class_accuracy.")) {
            const auto c = std::stoul(key.substr(15));
            if (r.per_class_accuracy.size() <= c) r.per_class_accuracy.resize(c + 1, 0.0);
            r.per_class_accuracy[c] = std::stod(value);
        }
    }
    return r;
}

// --- mutual information ------------------------------------------------------

double plugin_mutual_information(const std::vector<std::vector<std::size_t>>& joint) {
    double total = 0.0;
    std::vector<double> pz(joint.size(), 0.0), py;
    for (std::size_t z = 0; z < joint.size(); ++z) {
        if (py.size() < joint[z].size()) py.resize(joint[z].size(), 0.0);
        for (std::size_t y = 0; y < joint[z].size(); ++y) {
            pz[z] += static_cast<double>(joint[z][y]);
            py[y] += static_cast<double>(joint[z][y]);
            total += static_cast<double>(joint[z][y]);
        }
    }
    if (total == 0.0) return 0.0;
    double mi = 0.0;
    for (std::size_t z = 0; z < joint.size(); ++z) {
        for (std::size_t y = 0; y < joint[z].size(); ++y) {
            const double n = static_cast<double>(joint[z][y]);
            if (n == 0.0) continue;
            mi += (n / total) * std::log(n * total / (pz[z] * py[y]));
        }
    }
    return std::max(0.0, mi);
}

double entropy_of_labels(std::span<const int> labels) {
    std::map<int, std::size_t> counts;
    for (int y : labels) ++counts[y];
    const double n = static_cast<double>(labels.size());
    double h = 0.0;
    for (const auto& [y, c] : counts) {
        const double p = static_cast<double>(c) / n;
        h -= p * std::log(p);
    }
    return h;
}

namespace {

double sq_dist(const ad::DenseArray& points, std::size_t i, const std::vector<double>& centroid) {
    double s = 0.0;
    for (std::size_t j = 0; j < points.cols(); ++j) {
        const double d = points.at(i, j) - centroid[j];
        s += d * d;
    }
    return s;
}

}  // namespace

KMeansResult kmeans(const ad::DenseArray& points, std::size_t k, std::size_t iterations, std::uint64_t seed) {
    const std::size_t n = points.rows(), d = points.cols();
    if (k < 2) throw EvaluationError("k-means needs k >= 2");
    if (n < k) throw EvaluationError("k-means needs at least k points");

    Rng rng(seed);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(order[i], order[j]);
    }
    std::vector<std::vector<double>> centroids(k, std::vector<double>(d));
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t j = 0; j < d; ++j) centroids[c][j] = points.at(order[c], j);

    KMeansResult result;
    result.assignment.assign(n, 0);
    std::vector<bool> reseeded(k, false);
    auto assign = [&] {
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double best_d = sq_dist(points, i, centroids[0]);
            for (std::size_t c = 1; c < k; ++c) {
                const double dist = sq_dist(points, i, centroids[c]);
                if (dist < best_d) {
                    best_d = dist;
                    best = c;
                }
            }
            result.assignment[i] = static_cast<int>(best);
        }
    };

    for (std::size_t it = 0; it < iterations; ++it) {
        assign();
        std::vector<std::size_t> sizes(k, 0);
        std::vector<std::vector<double>> sums(k, std::vector<double>(d, 0.0));
        for (std::size_t i = 0; i < n; ++i) {
            const auto c = static_cast<std::size_t>(result.assignment[i]);
            ++sizes[c];
            for (std::size_t j = 0; j < d; ++j) sums[c][j] += points.at(i, j);
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (sizes[c] > 0) {
                for (std::size_t j = 0; j < d; ++j) centroids[c][j] = sums[c][j] / static_cast<double>(sizes[c]);
                continue;
            }
            if (reseeded[c]) continue;
            // Re-seed an empty cluster once, at the point farthest from its centroid.
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double dist = sq_dist(points, i, centroids[static_cast<std::size_t>(result.assignment[i])]);
                if (dist > far_d) {
                    far_d = dist;
                    far = i;
                }
            }
            for (std::size_t j = 0; j < d; ++j) centroids[c][j] = points.at(far, j);
            reseeded[c] = true;
            ++result.reseeded;
        }
    }
    assign();
    std::vector<std::size_t> sizes(k, 0);
    for (int a : result.assignment) ++sizes[static_cast<std::size_t>(a)];
    result.empty_clusters = static_cast<std::size_t>(std::count(sizes.begin(), sizes.end(), std::size_t{0}));
    return result;
}

MIEstimate estimate_mutual_information(const ad::DenseArray& hidden, std::span<const int> labels, std::size_t k,
                                       std::uint64_t seed, std::size_t iterations) {
    if (k < 2) throw EvaluationError("mutual information estimate needs k >= 2");
    if (hidden.rank() != 2 || hidden.rows() != labels.size()) {
        throw EvaluationError("hidden batch and labels disagree in length");
    }
    if (labels.size() < 10 * k) {
        throw EvaluationError("mutual information estimate needs at least 10*k samples (" + std::to_string(10 * k) +
                              "), got " + std::to_string(labels.size()));
    }
    const KMeansResult km = kmeans(hidden, k, iterations, seed);
    int max_label = 0;
    for (int y : labels) {
        if (y < 0) throw EvaluationError("negative label in mutual information estimate");
        max_label = std::max(max_label, y);
    }
    std::vector<std::vector<std::size_t>> joint(k, std::vector<std::size_t>(static_cast<std::size_t>(max_label) + 1, 0));
    for (std::size_t i = 0; i < labels.size(); ++i)
        ++joint[static_cast<std::size_t>(km.assignment[i])][static_cast<std::size_t>(labels[i])];
    MIEstimate est;
    est.value = plugin_mutual_information(joint);
    est.clusters = k;
    est.samples = labels.size();
    est.label_entropy = entropy_of_labels(labels);
    est.reseeded = km.reseeded;
    est.empty_clusters = km.empty_clusters;
    return est;
}

// --- ONION-style defense --------------------------------------------------------

UnigramLM UnigramLM::train(const std::vector<std::vector<std::string>>& corpus, double smoothing) {
    if (!(smoothing > 0.0)) throw ConfigError("unigram smoothing must be positive");
    UnigramLM lm;
    lm.smoothing_ = smoothing;
    for (const auto& sentence : corpus) {
        for (const auto& t : sentence) {
            ++lm.counts_[t];
            ++lm.total_;
        }
    }
    return lm;
}

double UnigramLM::probability(const std::string& token) const {
    // Add-k smoothing over the seen vocabulary plus one bucket for unseen tokens.
    const double denom = static_cast<double>(total_) + smoothing_ * static_cast<double>(counts_.size() + 1);
    auto it = counts_.find(token);
    const double count = it == counts_.end() ? 0.0 : static_cast<double>(it->second);
    return (count + smoothing_) / denom;
}

double UnigramLM::total_surprisal(std::span<const std::string> tokens) const {
    double s = 0.0;
    for (const auto& t : tokens) s += surprisal(t);
    return s;
}

std::vector<double> suspicion_scores(std::span<const std::string> tokens, const UnigramLM& lm) {
    const std::size_t n = tokens.size();
    std::vector<double> scores(n, 0.0);
    if (n == 0) return scores;
    std::vector<double> each(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        each[i] = lm.surprisal(tokens[i]);
        total += each[i];
    }
    const double full = total / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double without = n > 1 ? (total - each[i]) / static_cast<double>(n - 1) : 0.0;
        scores[i] = full - without;
    }
    return scores;
}

OnionResult onion_filter(std::span<const std::string> tokens, const UnigramLM& lm, double threshold) {
    OnionResult r;
    r.scores = suspicion_scores(tokens, lm);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (r.scores[i] > threshold) {
            r.removed.push_back(i);
        } else {
            r.kept.push_back(tokens[i]);
        }
    }
    return r;
}

Defense identity_defense() {
    return [](const std::vector<std::string>& tokens) { return tokens; };
}

Defense onion_defense(UnigramLM lm, double threshold) {
    return [lm = std::move(lm), threshold](const std::vector<std::string>& tokens) {
        return onion_filter(tokens, lm, threshold).kept;
    };
}

namespace {

Dataset apply_defense(const Dataset& data, const Vocabulary& vocab, const Defense& defense) {
    Dataset out = data;
    for (auto& ex : out.examples) {
        std::vector<int> ids;
        for (const auto& t : defense(decode(ex.ids, vocab))) ids.push_back(vocab.id(t));
        ex.ids = fit_length(std::move(ids), data.max_length);
    }
    return out;
}

}  // namespace

EvalReport evaluate_under_defense(const ClassifierModel& model, const Dataset& clean_test,
                                  const Dataset& triggered_test, const Vocabulary& vocab, const Defense& defense,
                                  int target_label) {
    return evaluate(model, apply_defense(clean_test, vocab, defense), apply_defense(triggered_test, vocab, defense),
                    target_label);
}

std::size_t export_hidden_features(const ClassifierModel& model, const Dataset& dataset,
                                   const std::filesystem::path& path) {
    std::ostringstream out;
    const std::size_t d = model.config().hidden_dim;
    out << "label,poisoned";
    for (std::size_t j = 0; j < d; ++j) out << ",h" << j;
    out << '\n';
    if (!dataset.empty()) {
        const ForwardOutput f = forward(model, dataset);
        for (std::size_t i = 0; i < dataset.size(); ++i) {
            out << dataset.examples[i].label << ',' << (dataset.examples[i].poisoned ? 1 : 0);
            for (std::size_t j = 0; j < d; ++j) out << ',' << format_double(f.hidden.at(i, j));
            out << '\n';
        }
    }
    write_file_atomic(path, out.str());
    return dataset.size();
}

}  // namespace w2s
