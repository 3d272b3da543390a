#include <cmath>
#include <vector>

#include "doctest.h"
#include "w2s/autodiff.hpp"
#include "w2s/error.hpp"
#include "w2s/rng.hpp"

using namespace w2s;
using namespace w2s::ad;

namespace {

DenseArray random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
    std::vector<double> v(r * c);
    for (auto& x : v) x = rng.uniform(-scale, scale);
    return DenseArray::matrix(r, c, v);
}

GradCheckReport check(const LossBuilder& loss, ParameterMap params, std::size_t samples = 60) {
    GradCheckOptions opt;
    opt.samples = samples;
    opt.seed = 11;
    return finite_diff_check(loss, std::move(params), opt);
}

}  // namespace

TEST_CASE("matmul matches the schoolbook product") {
    const auto a = DenseArray::matrix(2, 3, {1, 2, 3, 4, 5, 6});
    const auto b = DenseArray::matrix(3, 2, {7, 8, 9, 10, 11, 12});
    const auto c = matmul_values(a, b);
    CHECK(c.shape() == Shape{2, 2});
    CHECK(c.at(0, 0) == 58);
    CHECK(c.at(0, 1) == 64);
    CHECK(c.at(1, 0) == 139);
    CHECK(c.at(1, 1) == 154);
}

TEST_CASE("affine forward value") {
    Tape t;
    auto x = t.constant(DenseArray::matrix(1, 2, {1, -1}));
    auto w = t.parameter("w", DenseArray::matrix(2, 2, {1, 2, 3, 4}));
    auto b = t.parameter("b", DenseArray({2}, {0.5, -0.5}));
    auto y = affine(x, w, b);
    CHECK(y.value().at(0, 0) == doctest::Approx(1 - 3 + 0.5));
    CHECK(y.value().at(0, 1) == doctest::Approx(2 - 4 - 0.5));
}

TEST_CASE("softmax cross entropy of equal logits is ln 2") {
    Tape t;
    auto z = t.parameter("z", DenseArray::matrix(2, 2, {0, 0, 3, 3}));
    const std::vector<int> labels{0, 1};
    auto l = softmax_cross_entropy(z, labels);
    CHECK(l.value().item() == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    auto g = t.backward(l);
    // d/dz = (softmax - onehot) / n
    CHECK(g.at("z").at(0, 0) == doctest::Approx(-0.25));
    CHECK(g.at("z").at(0, 1) == doctest::Approx(0.25));
}

TEST_CASE("softmax cross entropy is stable for large logits") {
    Tape t;
    auto z = t.constant(DenseArray::matrix(1, 2, {1000.0, 0.0}));
    const std::vector<int> labels{1};
    CHECK(softmax_cross_entropy(z, labels).value().item() == doctest::Approx(1000.0));
}

TEST_CASE("mse and mean_row_sq_dist values") {
    Tape t;
    auto a = t.constant(DenseArray::matrix(2, 2, {1, 2, 3, 4}));
    auto b = t.constant(DenseArray::matrix(2, 2, {1, 0, 0, 4}));
    // squared diffs: 0 4 9 0
    CHECK(mse(a, b).value().item() == doctest::Approx(13.0 / 4.0));
    CHECK(mean_row_sq_dist(a, b).value().item() == doctest::Approx(13.0 / 2.0));
}

TEST_CASE("weighted_sum combines scalars") {
    Tape t;
    auto a = t.parameter("a", DenseArray::scalar(2.0));
    auto b = t.parameter("b", DenseArray::scalar(-3.0));
    const std::vector<Var> terms{a, b};
    const std::vector<double> w{0.5, 2.0};
    auto s = weighted_sum(terms, w);
    CHECK(s.value().item() == doctest::Approx(-5.0));
    auto g = t.backward(s);
    CHECK(g.at("a").item() == 0.5);
    CHECK(g.at("b").item() == 2.0);
}

TEST_CASE("shared subexpressions accumulate gradients") {
    Tape t;
    auto x = t.parameter("x", DenseArray::matrix(1, 1, {3.0}));
    auto y = mul(x, x);
    auto z = add(y, x);  // x^2 + x
    auto s = sum_rows(z);
    auto g = t.backward(mse(s, t.constant(DenseArray::matrix(1, 1, {0.0}))));
    // loss = (x^2+x)^2, d/dx = 2(x^2+x)(2x+1) = 2*12*7
    CHECK(g.at("x").item() == doctest::Approx(168.0));
}

TEST_CASE("frozen parameters receive a zero gradient") {
    Tape t;
    auto w = t.parameter("w", DenseArray::matrix(2, 2, {1, 2, 3, 4}), true);
    auto f = t.parameter("f", DenseArray::matrix(2, 2, {1, 0, 0, 1}), false);
    auto l = mse(matmul(w, f), t.constant(DenseArray::zeros({2, 2})));
    auto g = t.backward(l);
    CHECK(g.contains("w"));
    REQUIRE(g.contains("f"));
    for (double v : g.at("f").values()) CHECK(v == 0.0);
}

TEST_CASE("gradient shapes equal value shapes") {
    Rng rng(3);
    Tape t;
    auto x = t.constant(random_matrix(4, 3, rng));
    auto w = t.parameter("w", random_matrix(3, 5, rng));
    auto b = t.parameter("b", DenseArray({5}, std::vector<double>(5, 0.1)));
    auto h = nonlinearity(affine(x, w, b), Activation::tanh);
    auto g = t.backward(mse(h, t.constant(DenseArray::zeros({4, 5}))));
    CHECK(g.at("w").shape() == Shape{3, 5});
    CHECK(g.at("b").shape() == Shape{5});
}

TEST_CASE("shape mismatches throw ShapeError") {
    Tape t;
    auto a = t.constant(DenseArray::matrix(2, 3, std::vector<double>(6, 1.0)));
    auto b = t.constant(DenseArray::matrix(2, 3, std::vector<double>(6, 1.0)));
    CHECK_THROWS_AS(matmul(a, b), ShapeError);
    auto c = t.constant(DenseArray::matrix(3, 2, std::vector<double>(6, 1.0)));
    CHECK_THROWS_AS(mse(a, c), ShapeError);
}

TEST_CASE("embedding_sum skips listed ids") {
    Tape t;
    auto table = t.parameter("e", DenseArray::matrix(3, 2, {100, 100, 1, 2, 3, 4}));
    const std::vector<int> ids{0, 1, 2, 2, 0, 0};  // two rows of length 3
    const std::vector<int> skip{0};
    auto s = embedding_sum(table, ids, 2, 3, skip);
    CHECK(s.value().at(0, 0) == 4);
    CHECK(s.value().at(0, 1) == 6);
    CHECK(s.value().at(1, 0) == 3);
    CHECK(s.value().at(1, 1) == 4);
    auto g = t.backward(mse(s, t.constant(DenseArray::zeros({2, 2}))));
    CHECK(g.at("e").at(0, 0) == 0.0);  // skipped row
    CHECK(g.at("e").at(0, 1) == 0.0);
    // d/dE[2] = 2/4 * (s[0] + s[1]): id 2 appears once in each row.
    CHECK(g.at("e").at(2, 0) == doctest::Approx(0.5 * (4 + 3)));
    CHECK(g.at("e").at(1, 1) == doctest::Approx(0.5 * 6));
}

TEST_CASE("finite differences agree with every primitive") {
    Rng rng(5);
    ParameterMap p;
    p["w1"] = {random_matrix(3, 4, rng, 0.5), true};
    p["b1"] = {DenseArray({4}, {0.1, -0.2, 0.3, 0.0}), true};
    p["w2"] = {random_matrix(4, 2, rng, 0.5), true};
    p["row"] = {random_matrix(1, 2, rng, 0.5), true};
    p["e"] = {random_matrix(5, 3, rng, 0.5), true};
    const std::vector<int> ids{1, 2, 3, 0, 4, 4, 2, 1, 3, 3, 0, 1};
    const std::vector<int> labels{0, 1, 1, 0};
    const auto target = random_matrix(4, 2, rng);

    LossBuilder loss = [&](Tape& t, const ParameterMap& m) {
        std::map<std::string, Var> v;
        for (const auto& [name, prm] : m) v[name] = t.parameter(name, prm);
        const std::vector<int> skip{0};
        auto x = embedding_sum(v["e"], ids, 4, 3, skip);
        x = row_scale(x, std::vector<double>{0.5, 1.0, 1.0 / 3.0, 0.25});
        auto h = nonlinearity(affine(x, v["w1"], v["b1"]), Activation::tanh);
        auto z = add_row(matmul(h, v["w2"]), v["row"]);
        auto zz = add(scale(z, 1.5), mul(z, z));
        auto ce = softmax_cross_entropy(zz, labels);
        auto kd = mse(z, t.constant(target));
        auto fa = mean_row_sq_dist(transpose(transpose(h)), t.constant(DenseArray::zeros({4, 4})));
        const std::vector<Var> terms{ce, kd, fa};
        const std::vector<double> w{1.0, 0.7, 0.3};
        return weighted_sum(terms, w);
    };
    // 41 coordinates in total; asking for more checks each one once.
    const auto r = check(loss, p, 120);
    CHECK(r.checked == 41);
    CHECK(r.max_relative_error < 1e-6);
}

TEST_CASE("relu kinks are detected and excluded") {
    ParameterMap p;
    // The input sits exactly on the kink for one coordinate.
    p["x"] = {DenseArray::matrix(1, 3, {0.0, 1.0, -1.0}), true};
    LossBuilder loss = [](Tape& t, const ParameterMap& m) {
        auto x = t.parameter("x", m.at("x"));
        return mse(nonlinearity(x, Activation::relu), t.constant(DenseArray::zeros({1, 3})));
    };
    GradCheckOptions opt;
    opt.samples = 3;
    const auto r = finite_diff_check(loss, p, opt);
    CHECK(r.kinks.size() == 1);
    CHECK(r.max_relative_error < 1e-6);
}

TEST_CASE("relative error uses the larger magnitude") {
    CHECK(relative_error(1.0, 1.0) == 0.0);
    CHECK(relative_error(2.0, 1.0) == doctest::Approx(0.5));
    CHECK(relative_error(0.0, 0.0) == 0.0);
}
