#include <cmath>
#include <limits>

#include "doctest.h"
#include "w2s/error.hpp"
#include "w2s/evaluation.hpp"
#include "w2s/rng.hpp"
#include "w2s/training.hpp"

using namespace w2s;

namespace {

// Token 2..5 lean negative, 6..9 positive, 10..11 neutral.
Dataset toy(std::size_t n, std::uint64_t seed, std::size_t length = 6) {
    Rng rng(seed);
    Dataset d;
    d.max_length = length;
    for (std::size_t i = 0; i < n; ++i) {
        EncodedExample ex;
        ex.label = static_cast<int>(rng.below(2));
        ex.original_label = ex.label;
        const auto real = 2 + rng.below(length - 1);
        for (std::size_t p = 0; p < length; ++p) {
            if (p >= real) {
                ex.ids.push_back(Vocabulary::pad);
            } else if (rng.uniform01() < 0.6) {
                ex.ids.push_back(static_cast<int>((ex.label ? 6 : 2) + rng.below(4)));
            } else {
                ex.ids.push_back(static_cast<int>(10 + rng.below(2)));
            }
        }
        d.examples.push_back(ex);
    }
    return d;
}

ModelConfig small_model() { return ModelConfig{12, 8, 10, 2, 2, Pooling::mean, ad::Activation::tanh}; }
ModelConfig tiny_teacher() { return ModelConfig{12, 4, 6, 1, 2, Pooling::mean, ad::Activation::tanh}; }

TrainConfig train_config(std::size_t epochs, TrainMode mode = TrainMode::full) {
    TrainConfig c;
    c.epochs = epochs;
    c.batch_size = 16;
    c.learning_rate = 0.01;
    c.seed = 3;
    c.mode = mode;
    return c;
}

AdapterSpec low_rank(std::size_t r) {
    AdapterSpec s;
    s.rank = r;
    s.targets = {"block0.weight", "block1.weight"};
    return s;
}

ad::DenseArray random_matrix(std::size_t r, std::size_t c, Rng& rng) {
    std::vector<double> v(r * c);
    for (auto& x : v) x = rng.uniform(-2.0, 2.0);
    return ad::DenseArray::matrix(r, c, v);
}

}  // namespace

TEST_CASE("composite loss equals the weighted sum of its terms") {
    Rng rng(1);
    const auto g = TeacherProjection::init(3, 5, 2);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng.below(6);
        ForwardOutput s{random_matrix(n, 2, rng), random_matrix(n, 5, rng)};
        ForwardOutput t{random_matrix(n, 2, rng), random_matrix(n, 3, rng)};
        std::vector<int> labels(n);
        for (auto& y : labels) y = static_cast<int>(rng.below(2));
        const LossWeights w{rng.uniform01(), rng.uniform01(), rng.uniform01()};
        const auto b = composite_loss(s, t, g, labels, w);
        CHECK(b.total == doctest::Approx(w.alpha * b.ce + w.beta * b.kd + w.gamma * b.fa).epsilon(1e-14));

        double kd = 0.0;
        for (std::size_t i = 0; i < n * 2; ++i) {
            const double e = s.logits.values()[i] - t.logits.values()[i];
            kd += e * e;
        }
        CHECK(b.kd == doctest::Approx(kd / static_cast<double>(n * 2)));
        const auto proj = project_teacher_hidden(g, t.hidden);
        double fa = 0.0;
        for (std::size_t i = 0; i < n * 5; ++i) {
            const double e = s.hidden.values()[i] - proj.values()[i];
            fa += e * e;
        }
        CHECK(b.fa == doctest::Approx(fa / static_cast<double>(n)));

        const auto ce_only = composite_loss(s, t, g, labels, LossWeights{1.0, 0.0, 0.0});
        CHECK(ce_only.total == cross_entropy_term(s, labels));
        CHECK(distill_term(s.logits, s.logits) == 0.0);
    }
}

TEST_CASE("graph and value composite losses agree") {
    Rng rng(2);
    const auto teacher = init_params(tiny_teacher(), 1);
    const auto g = TeacherProjection::init(6, 10, 4);
    const auto student = init_params(small_model(), 2);
    const auto data = toy(8, 5);
    const auto ids = data.flat_ids();
    const auto labels = data.labels();
    const auto t = forward(teacher, ids, data.size(), data.max_length);
    ad::Tape tape;
    const auto graph = student.build(tape, ids, data.size(), data.max_length);
    const LossWeights w{0.7, 1.3, 0.2};
    const auto a = composite_loss(graph, t, g, labels, w);
    const auto b = composite_loss(forward(student, ids, data.size(), data.max_length), t, g, labels, w);
    CHECK(a.breakdown.total == doctest::Approx(b.total).epsilon(1e-13));
    CHECK(a.total.value().item() == doctest::Approx(b.total).epsilon(1e-13));
}

TEST_CASE("loss weight and training config validation") {
    CHECK_THROWS_AS(LossWeights({-1.0, 0.0, 0.0}).validate(), ConfigError);
    CHECK_THROWS_AS(LossWeights({0.0, 0.0, 0.0}).validate(), ConfigError);
    auto c = train_config(1);
    c.learning_rate = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = train_config(0);
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = train_config(1);
    c.optimizer.beta1 = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK(parse_optimizer(optimizer_name(OptimizerKind::sgd)) == OptimizerKind::sgd);
    CHECK_THROWS_AS(parse_optimizer("rmsprop"), ConfigError);
}

TEST_CASE("full training learns a separable toy task") {
    const auto train = toy(200, 1);
    const auto test = toy(100, 2);
    const auto before = clean_accuracy(init_params(small_model(), 1), test);
    const auto r = train_student_baseline(init_params(small_model(), 1), train, train_config(15));
    CHECK(r.trace.size() == 15);
    CHECK(r.trace.epochs.back().loss.ce < r.trace.epochs.front().loss.ce);
    CHECK(clean_accuracy(r.model, test) >= 0.9);
    CHECK(clean_accuracy(r.model, test) > before);
    CHECK(std::isnan(r.trace.epochs.front().val_ca));
}

TEST_CASE("training is deterministic for a fixed seed") {
    const auto train = toy(64, 3);
    auto cfg = train_config(3);
    cfg.optimizer.kind = OptimizerKind::sgd;
    const auto a = train_student_baseline(init_params(small_model(), 1), train, cfg);
    const auto b = train_student_baseline(init_params(small_model(), 1), train, cfg);
    CHECK(a.model.parameter_hash() == b.model.parameter_hash());
    CHECK(a.trace.to_csv() == b.trace.to_csv());
    cfg.seed = 4;
    CHECK(train_student_baseline(init_params(small_model(), 1), train, cfg).model.parameter_hash() !=
          a.model.parameter_hash());
}

TEST_CASE("adapter-only training leaves every base parameter untouched") {
    const auto train = toy(64, 4);
    const auto base = init_params(small_model(), 7);
    const auto adapted = attach_adapter(base, low_rank(2), 1);
    std::vector<std::string> base_names;
    for (const auto& [name, p] : base.parameters()) base_names.push_back(name);
    const auto r = train_student_baseline(adapted, train, train_config(3, TrainMode::adapter_only));
    CHECK(r.model.parameter_hash(base_names) == base.parameter_hash(base_names));
    CHECK(r.model.parameter_hash() != adapted.parameter_hash());
    CHECK_THROWS_AS(train_student_baseline(base, train, train_config(1, TrainMode::adapter_only)), ConfigError);
}

TEST_CASE("teacher training updates g and the teacher, distillation freezes both") {
    const auto train = toy(96, 5);
    const auto g0 = TeacherProjection::init(6, 10, 3);
    const auto t = train_teacher(init_params(tiny_teacher(), 2), train, g0, train_config(4));
    CHECK(t.model.has_projection());
    CHECK(t.projection.weight.values()[0] != g0.weight.values()[0]);
    CHECK(t.model.projection().weight.values()[0] == t.projection.weight.values()[0]);
    CHECK(t.trace.epochs.back().loss.kd == 0.0);
    CHECK_THROWS_AS(train_teacher(init_params(tiny_teacher(), 2), train, g0, train_config(1, TrainMode::adapter_only)),
                    ConfigError);
    CHECK_THROWS_AS(train_teacher(init_params(tiny_teacher(), 2), train, TeacherProjection::init(5, 10, 1),
                                  train_config(1)),
                    ConfigError);

    const std::uint64_t teacher_hash = t.model.parameter_hash();
    const auto student = attach_adapter(init_params(small_model(), 8), low_rank(2), 1);
    auto cfg = train_config(3, TrainMode::adapter_only);
    cfg.weights = {1.0, 1.0, 0.1};
    const auto s = train_student_w2sattack(student, t.model, t.projection, train, cfg);
    CHECK(t.model.parameter_hash() == teacher_hash);
    CHECK(s.trace.epochs.back().loss.kd > 0.0);
    CHECK(s.trace.epochs.back().loss.fa > 0.0);
    for (const auto& e : s.trace.epochs)
        CHECK(e.loss.total == doctest::Approx(e.loss.ce + e.loss.kd + 0.1 * e.loss.fa).epsilon(1e-12));

    CHECK_THROWS_AS(train_student_w2sattack(student, t.model, TeacherProjection::init(6, 9, 1), train, cfg),
                    ConfigError);
}

TEST_CASE("validation columns are filled when datasets are given") {
    const auto train = toy(64, 6);
    Dataset trig = toy(20, 7);
    for (auto& ex : trig.examples) ex.label = 1;
    const Validation v{&train, &trig, 1};
    const auto r = train_student_baseline(init_params(small_model(), 1), train, train_config(2), v);
    for (const auto& e : r.trace.epochs) {
        CHECK(e.val_ca >= 0.0);
        CHECK(e.val_asr <= 1.0);
    }
}

TEST_CASE("non-finite parameters abort training") {
    const auto train = toy(32, 8);
    auto m = init_params(small_model(), 1);
    m.parameters().at("block0.weight").value.values()[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(train_student_baseline(m, train, train_config(1)), TrainingError);
}

TEST_CASE("dataset checks") {
    Dataset empty;
    CHECK_THROWS_AS(train_student_baseline(init_params(small_model(), 1), empty, train_config(1)), DataError);
    auto three = toy(10, 1);
    three.class_count = 3;
    CHECK_THROWS_AS(train_student_baseline(init_params(small_model(), 1), three, train_config(1)), ConfigError);
}

TEST_CASE("trace CSV round-trips, including missing validation") {
    TrainTrace t;
    t.epochs.push_back({{0.5, 0.25, 0.125, 0.875}, 0.75, std::numeric_limits<double>::quiet_NaN(), 0.0});
    t.epochs.push_back({{0.1, 0.2, 0.3, 0.6}, 0.8, 0.9, 1.5});
    const auto csv = t.to_csv();
    CHECK(csv.starts_with("epoch,ce,kd,fa,total,val_ca,val_asr,seconds\n"));
    const auto back = TrainTrace::from_csv(csv);
    REQUIRE(back.size() == 2);
    CHECK(back.epochs[0].loss.fa == 0.125);
    CHECK(std::isnan(back.epochs[0].val_asr));
    CHECK(back.epochs[1].seconds == 1.5);
    CHECK(back.to_csv() == csv);
    CHECK_THROWS_AS(TrainTrace::from_csv("epoch,ce\n1,x\n"), DataError);
}
