#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace w2s::ad {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

// Row-major dense buffer of doubles. Rank 0 is a scalar, rank 1 a vector,
// rank 2 a matrix; nothing here needs more.
class DenseArray {
public:
    DenseArray() : shape_{0}, values_() {}
    DenseArray(Shape shape, std::vector<double> values);

    static DenseArray zeros(Shape shape);
    static DenseArray filled(Shape shape, double value);
    static DenseArray scalar(double value);
    static DenseArray matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
    static DenseArray from_rows(const std::vector<std::vector<double>>& rows);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return values_.size(); }
    std::size_t rows() const;
    std::size_t cols() const;
    bool is_scalar() const { return values_.size() == 1 && shape_.size() <= 1; }

    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }
    const std::vector<double>& data() const { return values_; }

    double operator[](std::size_t i) const { return values_[i]; }
    double& operator[](std::size_t i) { return values_[i]; }
    double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
    double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
    double item() const;

    bool all_finite() const;
    bool operator==(const DenseArray& other) const = default;

private:
    Shape shape_;
    std::vector<double> values_;
};

enum class OpKind {
    constant,
    parameter,
    affine,
    matmul,
    add,
    mul,
    scale,
    transpose,
    tanh,
    relu,
    embedding_sum,
    row_scale,
    add_row,
    sum_rows,
    softmax_cross_entropy,
    mse,
    mean_row_sq_dist,
    weighted_sum,
};

std::string_view op_name(OpKind kind);

enum class Activation { tanh, relu };

Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation kind);

// A trainable (or frozen) named tensor owned by a model.
struct Parameter {
    DenseArray value;
    bool trainable = true;
};

// Ordered by name so iteration, hashing and serialization are deterministic.
using ParameterMap = std::map<std::string, Parameter>;

class GradientMap {
public:
    void accumulate(const std::string& name, const DenseArray& grad);
    void ensure(const std::string& name, const Shape& shape);

    bool contains(const std::string& name) const { return grads_.contains(name); }
    const DenseArray& at(const std::string& name) const;
    std::size_t size() const { return grads_.size(); }

    auto begin() const { return grads_.begin(); }
    auto end() const { return grads_.end(); }

private:
    std::map<std::string, DenseArray> grads_;
};

class Tape;

// Handle to a node on a tape. Cheap to copy; valid until the tape is reset.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    const DenseArray& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t id() const { return id_; }
    Tape& tape() const { return *tape_; }
    bool valid() const { return tape_ != nullptr; }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

// Reverse-mode tape. Nodes are appended in evaluation order, which is also a
// topological order, so backward is a single reverse sweep.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(DenseArray value);
    // requires_grad=false registers a frozen parameter: it shows up in the
    // gradient map with a zero entry but no gradient is propagated into it.
    Var parameter(const std::string& name, const DenseArray& value, bool requires_grad = true);
    Var parameter(const std::string& name, const Parameter& param) {
        return parameter(name, param.value, param.trainable);
    }

    Var record(OpKind kind, std::vector<std::size_t> inputs, DenseArray value, BackwardFn backward);

    GradientMap backward(Var root);
    void reset();

    std::size_t size() const { return nodes_.size(); }
    OpKind kind(std::size_t id) const { return nodes_[id].kind; }
    const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }
    const DenseArray& value(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    // Gradient buffer of a node, zero-allocated on first access.
    DenseArray& grad(std::size_t id);

    // Hash of the sign pattern of every relu input seen on this tape.
    std::uint64_t activation_pattern() const { return activation_pattern_; }
    void mix_activation_pattern(std::uint64_t bits);

private:
    struct Node {
        OpKind kind;
        std::vector<std::size_t> inputs;
        DenseArray value;
        DenseArray grad;
        BackwardFn backward;
        bool requires_grad = false;
        std::string name;
    };

    std::vector<Node> nodes_;
    std::uint64_t activation_pattern_ = 0xcbf29ce484222325ULL;
};

// --- primitives ------------------------------------------------------------

// input [n x d_in] . weight [d_in x d_out] + bias [d_out]
Var affine(Var input, Var weight, Var bias);
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var transpose(Var a);
Var nonlinearity(Var input, Activation kind);

// Sums embedding rows per sequence: ids is [n x len] row-major; ids listed in
// `skip` contribute nothing. Output [n x embed_dim].
Var embedding_sum(Var table, std::span<const int> ids, std::size_t n, std::size_t len,
                  std::span<const int> skip);
// Multiplies row i by factors[i] (constants).
Var row_scale(Var input, std::span<const double> factors);
// Adds a [1 x d] (or [d]) row to every row of an [n x d] matrix.
Var add_row(Var input, Var row);
// Column sums of [m x d] as a [1 x d] row.
Var sum_rows(Var input);

// Mean over the batch of -log softmax(logits)[i, labels[i]].
Var softmax_cross_entropy(Var logits, std::span<const int> labels);
// Mean over all entries of (a - b)^2.
Var mse(Var a, Var b);
// Mean over rows of the squared Euclidean distance between rows of a and b.
Var mean_row_sq_dist(Var a, Var b);
// sum_k weights[k] * terms[k] over scalar terms.
Var weighted_sum(std::span<const Var> terms, std::span<const double> weights);

// Stand-alone numeric helpers shared with inference paths.
DenseArray matmul_values(const DenseArray& a, const DenseArray& b);

// --- gradient checking -----------------------------------------------------

using LossBuilder = std::function<Var(Tape&, const ParameterMap&)>;

struct Coordinate {
    std::string name;
    std::size_t index = 0;
};

struct GradCheckOptions {
    double epsilon = 1e-5;
    std::size_t samples = 100;
    std::uint64_t seed = 0;
    // Restrict to these parameters; empty means every trainable parameter.
    std::vector<std::string> names;
};

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::size_t checked = 0;
    Coordinate worst;
    // Coordinates whose perturbation flipped a relu, excluded from the max.
    std::vector<Coordinate> kinks;
};

// Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
double relative_error(double analytic, double numeric);

GradCheckReport finite_diff_check(const LossBuilder& loss, ParameterMap params,
                                  const GradCheckOptions& options);

}  // namespace w2s::ad
