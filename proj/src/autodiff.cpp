#include "w2s/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "w2s/error.hpp"
#include "w2s/rng.hpp"

namespace w2s::ad {

std::string shape_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << 'x';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

namespace {

std::size_t product(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

}  // namespace

DenseArray::DenseArray(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    for (auto d : shape_) {
        if (d == 0) throw ShapeError("dense array dimensions must be positive, got " + shape_string(shape_));
    }
    if (product(shape_) != values_.size()) {
        throw ShapeError("shape " + shape_string(shape_) + " does not match " +
                         std::to_string(values_.size()) + " values");
    }
}

DenseArray DenseArray::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

DenseArray DenseArray::filled(Shape shape, double value) {
    std::size_t n = product(shape);
    return DenseArray(std::move(shape), std::vector<double>(n, value));
}

DenseArray DenseArray::scalar(double value) { return DenseArray(Shape{}, {value}); }

DenseArray DenseArray::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return DenseArray(Shape{rows, cols}, std::move(values));
}

DenseArray DenseArray::from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw ShapeError("from_rows needs at least one row");
    std::vector<double> flat;
    for (const auto& r : rows) {
        if (r.size() != rows.front().size()) throw ShapeError("ragged rows");
        flat.insert(flat.end(), r.begin(), r.end());
    }
    return matrix(rows.size(), rows.front().size(), std::move(flat));
}

std::size_t DenseArray::rows() const {
    if (shape_.size() < 2) return 1;
    return shape_[0];
}

std::size_t DenseArray::cols() const {
    if (shape_.empty()) return 1;
    return shape_.back();
}

double DenseArray::item() const {
    if (values_.size() != 1) throw ShapeError("item() on non-scalar " + shape_string(shape_));
    return values_[0];
}

bool DenseArray::all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

std::string_view op_name(OpKind kind) {
    switch (kind) {
        case OpKind::constant: return "constant";
        case OpKind::parameter: return "parameter";
        case OpKind::affine: return "affine";
        case OpKind::matmul: return "matmul";
        case OpKind::add: return "add";
        case OpKind::mul: return "mul";
        case OpKind::scale: return "scale";
        case OpKind::transpose: return "transpose";
        case OpKind::tanh: return "tanh";
        case OpKind::relu: return "relu";
        case OpKind::embedding_sum: return "embedding_sum";
        case OpKind::row_scale: return "row_scale";
        case OpKind::add_row: return "add_row";
        case OpKind::sum_rows: return "sum_rows";
        case OpKind::softmax_cross_entropy: return "softmax_cross_entropy";
        case OpKind::mse: return "mse";
        case OpKind::mean_row_sq_dist: return "mean_row_sq_dist";
        case OpKind::weighted_sum: return "weighted_sum";
    }
    return "unknown";
}

Activation parse_activation(std::string_view name) {
    if (name == "tanh") return Activation::tanh;
    if (name == "relu") return Activation::relu;
    throw ConfigError("unknown nonlinearity '" + std::string(name) + "' (expected tanh or relu)");
}

std::string_view activation_name(Activation kind) {
    return kind == Activation::tanh ? "tanh" : "relu";
}

// --- GradientMap -------------------------------------------------------------

void GradientMap::accumulate(const std::string& name, const DenseArray& grad) {
    auto it = grads_.find(name);
    if (it == grads_.end()) {
        grads_.emplace(name, grad);
        return;
    }
    if (it->second.shape() != grad.shape()) {
        throw ShapeError("gradient for '" + name + "' has shape " + shape_string(grad.shape()) +
                         " but " + shape_string(it->second.shape()) + " was recorded");
    }
    auto dst = it->second.values();
    auto src = grad.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void GradientMap::ensure(const std::string& name, const Shape& shape) {
    if (!grads_.contains(name)) grads_.emplace(name, DenseArray::zeros(shape));
}

const DenseArray& GradientMap::at(const std::string& name) const {
    auto it = grads_.find(name);
    if (it == grads_.end()) throw UsageError("no gradient recorded for '" + name + "'");
    return it->second;
}

// --- Tape --------------------------------------------------------------------

const DenseArray& Var::value() const { return tape_->value(id_); }

Var Tape::constant(DenseArray value) {
    return record(OpKind::constant, {}, std::move(value), nullptr);
}

Var Tape::parameter(const std::string& name, const DenseArray& value, bool requires_grad) {
    if (!value.all_finite()) throw NumericError("parameter '" + name + "' holds non-finite values");
    Node node{OpKind::parameter, {}, value, DenseArray(), nullptr, requires_grad, name};
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(OpKind kind, std::vector<std::size_t> inputs, DenseArray value, BackwardFn backward) {
    if (!value.all_finite()) {
        throw NumericError(std::string("non-finite value produced by ") + std::string(op_name(kind)));
    }
    bool needs = false;
    for (auto in : inputs) needs = needs || nodes_[in].requires_grad;
    Node node{kind, std::move(inputs), std::move(value), DenseArray(), needs ? std::move(backward) : nullptr,
              needs, {}};
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

DenseArray& Tape::grad(std::size_t id) {
    Node& node = nodes_[id];
    if (node.grad.size() != node.value.size() || node.grad.shape() != node.value.shape()) {
        node.grad = DenseArray::zeros(node.value.shape());
    }
    return node.grad;
}

void Tape::mix_activation_pattern(std::uint64_t bits) {
    activation_pattern_ ^= bits;
    activation_pattern_ *= 0x100000001b3ULL;
}

GradientMap Tape::backward(Var root) {
    if (root.valid() && &root.tape() != this) throw UsageError("backward root belongs to another tape");
    if (!root.value().is_scalar()) {
        throw UsageError("backward requires a scalar root, got shape " + shape_string(root.shape()));
    }
    for (auto& node : nodes_) node.grad = DenseArray();
    if (nodes_[root.id()].requires_grad) {
        grad(root.id())[0] = 1.0;
        for (std::size_t i = root.id() + 1; i-- > 0;) {
            Node& node = nodes_[i];
            if (!node.backward || node.grad.size() != node.value.size()) continue;
            node.backward(*this, i);
        }
    }
    GradientMap out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const Node& node = nodes_[i];
        if (node.kind != OpKind::parameter) continue;
        if (node.requires_grad && node.grad.size() == node.value.size()) {
            out.accumulate(node.name, node.grad);
        } else {
            out.ensure(node.name, node.value.shape());
        }
    }
    return out;
}

void Tape::reset() {
    nodes_.clear();
    activation_pattern_ = 0xcbf29ce484222325ULL;
}

// --- primitives ----------------------------------------------------------------

namespace {

void require_matrix(const DenseArray& a, const char* what) {
    if (a.rank() != 2) throw ShapeError(std::string(what) + " expects a matrix, got " + shape_string(a.shape()));
}

}  // namespace

DenseArray matmul_values(const DenseArray& a, const DenseArray& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    if (b.rows() != k) {
        throw ShapeError("dimension mismatch: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
    }
    std::vector<double> out(n * m, 0.0);
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double x = av[i * k + p];
            const double* brow = &bv[p * m];
            double* orow = &out[i * m];
            for (std::size_t j = 0; j < m; ++j) orow[j] += x * brow[j];
        }
    }
    return DenseArray::matrix(n, m, std::move(out));
}

namespace {

// g [n x m], b [k x m] -> g . b^T  [n x k]
void accumulate_grad_times_bt(const DenseArray& g, const DenseArray& b, DenseArray& dst) {
    const std::size_t n = g.rows(), m = g.cols(), k = b.rows();
    auto gv = g.values();
    auto bv = b.values();
    auto dv = dst.values();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (std::size_t j = 0; j < m; ++j) s += gv[i * m + j] * bv[p * m + j];
            dv[i * k + p] += s;
        }
    }
}

// a [n x k], g [n x m] -> a^T . g  [k x m]
void accumulate_at_times_grad(const DenseArray& a, const DenseArray& g, DenseArray& dst) {
    const std::size_t n = a.rows(), k = a.cols(), m = g.cols();
    auto av = a.values();
    auto gv = g.values();
    auto dv = dst.values();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double x = av[i * k + p];
            if (x == 0.0) continue;
            for (std::size_t j = 0; j < m; ++j) dv[p * m + j] += x * gv[i * m + j];
        }
    }
}

}  // namespace

Var matmul(Var a, Var b) {
    Tape& t = a.tape();
    DenseArray out = matmul_values(a.value(), b.value());
    const std::size_t ia = a.id(), ib = b.id();
    return t.record(OpKind::matmul, {ia, ib}, std::move(out), [ia, ib](Tape& tp, std::size_t self) {
        const DenseArray& g = tp.grad(self);
        if (tp.requires_grad(ia)) accumulate_grad_times_bt(g, tp.value(ib), tp.grad(ia));
        if (tp.requires_grad(ib)) accumulate_at_times_grad(tp.value(ia), g, tp.grad(ib));
    });
}

Var affine(Var input, Var weight, Var bias) {
    Tape& t = input.tape();
    const DenseArray& x = input.value();
    const DenseArray& w = weight.value();
    const DenseArray& b = bias.value();
    require_matrix(x, "affine");
    require_matrix(w, "affine");
    if (x.cols() != w.rows()) {
        throw ShapeError("affine dimension mismatch: input " + shape_string(x.shape()) + " vs weight " +
                         shape_string(w.shape()));
    }
    if (b.size() != w.cols() || b.rows() != 1) {
        throw ShapeError("affine bias " + shape_string(b.shape()) + " does not match weight " +
                         shape_string(w.shape()));
    }
    DenseArray out = matmul_values(x, w);
    const std::size_t n = out.rows(), m = out.cols();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out.at(i, j) += b[j];
    const std::size_t ix = input.id(), iw = weight.id(), ib = bias.id();
    return t.record(OpKind::affine, {ix, iw, ib}, std::move(out), [ix, iw, ib](Tape& tp, std::size_t self) {
        const DenseArray& g = tp.grad(self);
        if (tp.requires_grad(ix)) accumulate_grad_times_bt(g, tp.value(iw), tp.grad(ix));
        if (tp.requires_grad(iw)) accumulate_at_times_grad(tp.value(ix), g, tp.grad(iw));
        if (tp.requires_grad(ib)) {
            DenseArray& gb = tp.grad(ib);
            const std::size_t rows = g.rows(), cols = g.cols();
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j) gb[j] += g.at(i, j);
        }
    });
}

Var add(Var a, Var b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("add shape mismatch: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }
    DenseArray out = a.value();
    auto ov = out.values();
    auto bv = b.value().values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] += bv[i];
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record(OpKind::add, {ia, ib}, std::move(out), [ia, ib](Tape& tp, std::size_t self) {
        const DenseArray& g = tp.grad(self);
        for (auto in : {ia, ib}) {
            if (!tp.requires_grad(in)) continue;
            auto dv = tp.grad(in).values();
            for (std::size_t i = 0; i < dv.size(); ++i) dv[i] += g[i];
        }
    });
}

Var mul(Var a, Var b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("mul shape mismatch: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }
    DenseArray out = a.value();
    auto ov = out.values();
    auto bv = b.value().values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] *= bv[i];
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record(OpKind::mul, {ia, ib}, std::move(out), [ia, ib](Tape& tp, std::size_t self) {
        const DenseArray& g = tp.grad(self);
        if (tp.requires_grad(ia)) {
            auto dv = tp.grad(ia).values();
            const DenseArray& bv2 = tp.value(ib);
            for (std::size_t i = 0; i < dv.size(); ++i) dv[i] += g[i] * bv2[i];
        }
        if (tp.requires_grad(ib)) {
            auto dv = tp.grad(ib).values();
            const DenseArray& av2 = tp.value(ia);
            for (std::size_t i = 0; i < dv.size(); ++i) dv[i] += g[i] * av2[i];
        }
    });
}

Var scale(Var a, double factor) {
    DenseArray out = a.value();
    for (auto& v : out.values()) v *= factor;
    const std::size_t ia = a.id();
    return a.tape().record(OpKind::scale, {ia}, std::move(out), [ia, factor](Tape& tp, std::size_t self) {
        const DenseArray& g = tp.grad(self);
        auto dv = tp.grad(ia).values();
        for (std::size_t i = 0; i < dv.size(); ++i) dv[i] += factor * g[i];
    });
}

Var transpose(Var a) {
    const DenseArray& x = a.value();
    require_matrix(x, "transpose");
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x.at(i, j);
    const std::size_t ia = a.id();
    return a.tape().record(OpKind::transpose, {ia}, DenseArray::matrix(c, r, std::move(out)),
                           [ia, r, c](Tape& tp, std::size_t self) {
                               const DenseArray& g = tp.grad(self);
                               DenseArray& d = tp.grad(ia);
                               for (std::size_t i = 0; i < r; ++i)
                                   for (std::size_t j = 0; j < c; ++j) d.at(i, j) += g.at(j, i);
                           });
}

Var nonlinearity(Var input, Activation kind) {
    Tape& t = input.tape();
    DenseArray out = input.value();
    const std::size_t ia = input.id();
    if (kind == Activation::tanh) {
        for (auto& v : out.values()) v = std::tanh(v);
        return t.record(OpKind::tanh, {ia}, std::move(out), [ia](Tape& tp, std::size_t self) {
            const DenseArray& g = tp.grad(self);
            const DenseArray& y = tp.value(self);
            auto dv = tp.grad(ia).values();
            for (std::size_t i = 0; i < dv.size(); ++i) dv[i] += g[i] * (1.0 - y[i] * y[i]);
        });
    }
    std::uint64_t pattern = 0xcbf29ce484222325ULL;
    for (auto& v : out.values()) {
        pattern = (pattern ^ static_cast<std::uint64_t>(v > 0.0)) * 0x100000001b3ULL;
        v = v > 0.0 ? v : 0.0;
    }
    t.mix_activation_pattern(pattern);
    return t.record(OpKind::relu, {ia}, std::move(out), [ia](Tape& tp, std::size_t self) {
        const DenseArray& g = tp.grad(self);
        const DenseArray& x = tp.value(ia);
        auto dv = tp.grad(ia).values();
        for (std::size_t i = 0; i < dv.size(); ++i) dv[i] += x[i] > 0.0 ? g[i] : 0.0;
    });
}

Var embedding_sum(Var table, std::span<const int> ids, std::size_t n, std::size_t len,
                  std::span<const int> skip) {
    const DenseArray& tab = table.value();
    require_matrix(tab, "embedding_sum");
    if (ids.size() != n * len) {
        throw ShapeError("embedding_sum expected " + std::to_string(n * len) + " ids, got " +
                         std::to_string(ids.size()));
    }
    const std::size_t vocab = tab.rows(), dim = tab.cols();
    std::vector<int> kept(ids.begin(), ids.end());
    for (auto& id : kept) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
            throw DataError("token id " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(vocab));
        }
        if (std::find(skip.begin(), skip.end(), id) != skip.end()) id = -1;
    }
    std::vector<double> out(n * dim, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < len; ++p) {
            const int id = kept[i * len + p];
            if (id < 0) continue;
            for (std::size_t j = 0; j < dim; ++j) out[i * dim + j] += tab.at(static_cast<std::size_t>(id), j);
        }
    }
    const std::size_t it = table.id();
    return table.tape().record(
        OpKind::embedding_sum, {it}, DenseArray::matrix(n, dim, std::move(out)),
        [it, kept = std::move(kept), n, len, dim](Tape& tp, std::size_t self) {
            const DenseArray& g = tp.grad(self);
            DenseArray& d = tp.grad(it);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t p = 0; p < len; ++p) {
                    const int id = kept[i * len + p];
                    if (id < 0) continue;
                    for (std::size_t j = 0; j < dim; ++j) d.at(static_cast<std::size_t>(id), j) += g.at(i, j);
                }
            }
        });
}

Var row_scale(Var input, std::span<const double> factors) {
    const DenseArray& x = input.value();
    require_matrix(x, "row_scale");
    if (factors.size() != x.rows()) {
        throw ShapeError("row_scale needs " + std::to_string(x.rows()) + " factors, got " +
                         std::to_string(factors.size()));
    }
    DenseArray out = x;
    const std::size_t r = x.rows(), c = x.cols();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.at(i, j) *= factors[i];
    const std::size_t ia = input.id();
    std::vector<double> f(factors.begin(), factors.end());
    return input.tape().record(OpKind::row_scale, {ia}, std::move(out),
                               [ia, f = std::move(f), r, c](Tape& tp, std::size_t self) {
                                   const DenseArray& g = tp.grad(self);
                                   DenseArray& d = tp.grad(ia);
                                   for (std::size_t i = 0; i < r; ++i)
                                       for (std::size_t j = 0; j < c; ++j) d.at(i, j) += f[i] * g.at(i, j);
                               });
}

Var add_row(Var input, Var row) {
    const DenseArray& x = input.value();
    const DenseArray& b = row.value();
    require_matrix(x, "add_row");
    if (b.size() != x.cols() || b.rows() != 1) {
        throw ShapeError("add_row: row " + shape_string(b.shape()) + " does not fit " + shape_string(x.shape()));
    }
    DenseArray out = x;
    const std::size_t r = x.rows(), c = x.cols();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.at(i, j) += b[j];
    const std::size_t ix = input.id(), ib = row.id();
    return input.tape().record(OpKind::add_row, {ix, ib}, std::move(out), [ix, ib, r, c](Tape& tp, std::size_t self) {
        const DenseArray& g = tp.grad(self);
        if (tp.requires_grad(ix)) {
            auto dv = tp.grad(ix).values();
            for (std::size_t i = 0; i < dv.size(); ++i) dv[i] += g[i];
        }
        if (tp.requires_grad(ib)) {
            DenseArray& d = tp.grad(ib);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) d[j] += g.at(i, j);
        }
    });
}

Var sum_rows(Var input) {
    const DenseArray& x = input.value();
    require_matrix(x, "sum_rows");
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<double> out(c, 0.0);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j] += x.at(i, j);
    const std::size_t ia = input.id();
    return input.tape().record(OpKind::sum_rows, {ia}, DenseArray::matrix(1, c, std::move(out)),
                               [ia, r, c](Tape& tp, std::size_t self) {
                                   const DenseArray& g = tp.grad(self);
                                   DenseArray& d = tp.grad(ia);
                                   for (std::size_t i = 0; i < r; ++i)
                                       for (std::size_t j = 0; j < c; ++j) d.at(i, j) += g[j];
                               });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
    const DenseArray& z = logits.value();
    require_matrix(z, "softmax_cross_entropy");
    const std::size_t n = z.rows(), classes = z.cols();
    if (labels.size() != n) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
    }
    std::vector<double> probs(n * classes);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= classes) {
            throw DataError("label " + std::to_string(y) + " out of range for " + std::to_string(classes) +
                            " classes");
        }
        double mx = z.at(i, 0);
        for (std::size_t j = 1; j < classes; ++j) mx = std::max(mx, z.at(i, j));
        double denom = 0.0;
        for (std::size_t j = 0; j < classes; ++j) {
            probs[i * classes + j] = std::exp(z.at(i, j) - mx);
            denom += probs[i * classes + j];
        }
        for (std::size_t j = 0; j < classes; ++j) probs[i * classes + j] /= denom;
        loss += std::log(denom) - (z.at(i, static_cast<std::size_t>(y)) - mx);
    }
    loss /= static_cast<double>(n);
    const std::size_t iz = logits.id();
    std::vector<int> ys(labels.begin(), labels.end());
    return logits.tape().record(
        OpKind::softmax_cross_entropy, {iz}, DenseArray::scalar(loss),
        [iz, probs = std::move(probs), ys = std::move(ys), n, classes](Tape& tp, std::size_t self) {
            const double g = tp.grad(self)[0] / static_cast<double>(n);
            DenseArray& d = tp.grad(iz);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < classes; ++j) {
                    double p = probs[i * classes + j];
                    if (static_cast<int>(j) == ys[i]) p -= 1.0;
                    d.at(i, j) += g * p;
                }
            }
        });
}

Var mse(Var a, Var b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("mse shape mismatch: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }
    auto av = a.value().values();
    auto bv = b.value().values();
    double sum = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double diff = av[i] - bv[i];
        sum += diff * diff;
    }
    const double count = static_cast<double>(av.size());
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record(OpKind::mse, {ia, ib}, DenseArray::scalar(sum / count),
                           [ia, ib, count](Tape& tp, std::size_t self) {
                               const double g = tp.grad(self)[0] * 2.0 / count;
                               const DenseArray& x = tp.value(ia);
                               const DenseArray& y = tp.value(ib);
                               if (tp.requires_grad(ia)) {
                                   auto d = tp.grad(ia).values();
                                   for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * (x[i] - y[i]);
                               }
                               if (tp.requires_grad(ib)) {
                                   auto d = tp.grad(ib).values();
                                   for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g * (x[i] - y[i]);
                               }
                           });
}

Var mean_row_sq_dist(Var a, Var b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("feature shape mismatch: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
    }
    require_matrix(a.value(), "mean_row_sq_dist");
    const std::size_t n = a.value().rows(), d = a.value().cols();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = a.value().at(i, j) - b.value().at(i, j);
            row += diff * diff;
        }
        total += row;
    }
    const double rows = static_cast<double>(n);
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record(OpKind::mean_row_sq_dist, {ia, ib}, DenseArray::scalar(total / rows),
                           [ia, ib, rows](Tape& tp, std::size_t self) {
                               const double g = tp.grad(self)[0] * 2.0 / rows;
                               const DenseArray& x = tp.value(ia);
                               const DenseArray& y = tp.value(ib);
                               if (tp.requires_grad(ia)) {
                                   auto dv = tp.grad(ia).values();
                                   for (std::size_t i = 0; i < dv.size(); ++i) dv[i] += g * (x[i] - y[i]);
                               }
                               if (tp.requires_grad(ib)) {
                                   auto dv = tp.grad(ib).values();
                                   for (std::size_t i = 0; i < dv.size(); ++i) dv[i] -= g * (x[i] - y[i]);
                               }
                           });
}

Var weighted_sum(std::span<const Var> terms, std::span<const double> weights) {
    if (terms.empty() || terms.size() != weights.size()) {
        throw ShapeError("weighted_sum needs one weight per term");
    }
    std::vector<std::size_t> ids;
    double total = 0.0;
    for (std::size_t k = 0; k < terms.size(); ++k) {
        if (!terms[k].value().is_scalar()) throw ShapeError("weighted_sum terms must be scalars");
        const double term = weights[k] * terms[k].value()[0];
        total = k == 0 ? term : total + term;
        ids.push_back(terms[k].id());
    }
    std::vector<double> w(weights.begin(), weights.end());
    return terms[0].tape().record(OpKind::weighted_sum, ids, DenseArray::scalar(total),
                                  [ids, w = std::move(w)](Tape& tp, std::size_t self) {
                                      const double g = tp.grad(self)[0];
                                      for (std::size_t k = 0; k < ids.size(); ++k) {
                                          if (tp.requires_grad(ids[k])) tp.grad(ids[k])[0] += w[k] * g;
                                      }
                                  });
}

// --- gradient check --------------------------------------------------------------

double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
    return std::fabs(analytic - numeric) / denom;
}

namespace {

struct Evaluation {
    double loss;
    std::uint64_t pattern;
};

Evaluation evaluate(const LossBuilder& loss, const ParameterMap& params) {
    Tape tape;
    Var root = loss(tape, params);
    if (!root.value().is_scalar()) throw UsageError("loss builder must return a scalar");
    return {root.value()[0], tape.activation_pattern()};
}

}  // namespace

GradCheckReport finite_diff_check(const LossBuilder& loss, ParameterMap params, const GradCheckOptions& options) {
    if (!(options.epsilon > 0.0)) throw UsageError("finite_diff_check needs epsilon > 0");

    std::vector<std::string> names = options.names;
    if (names.empty()) {
        for (const auto& [name, p] : params)
            if (p.trainable) names.push_back(name);
    }
    std::vector<Coordinate> universe;
    for (const auto& name : names) {
        auto it = params.find(name);
        if (it == params.end()) throw UsageError("finite_diff_check: unknown parameter '" + name + "'");
        for (std::size_t i = 0; i < it->second.value.size(); ++i) universe.push_back({name, i});
    }
    if (universe.empty()) throw UsageError("finite_diff_check: no coordinates to check");

    Tape tape;
    Var root = loss(tape, params);
    const double base = root.value().item();
    const std::uint64_t base_pattern = tape.activation_pattern();
    GradientMap grads = tape.backward(root);

    const Evaluation again = evaluate(loss, params);
    if (again.loss != base || again.pattern != base_pattern) {
        throw NumericError("finite_diff_check: loss is not deterministic for fixed parameters");
    }

    Rng rng(options.seed);
    std::vector<Coordinate> picks;
    if (options.samples >= universe.size()) {
        picks = universe;
    } else {
        std::vector<std::size_t> order(universe.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = 0; i < options.samples; ++i) {
            std::size_t j = i + static_cast<std::size_t>(rng.below(order.size() - i));
            std::swap(order[i], order[j]);
            picks.push_back(universe[order[i]]);
        }
    }

    GradCheckReport report;
    for (const auto& c : picks) {
        double& slot = params.at(c.name).value[c.index];
        const double original = slot;
        slot = original + options.epsilon;
        const Evaluation plus = evaluate(loss, params);
        slot = original - options.epsilon;
        const Evaluation minus = evaluate(loss, params);
        slot = original;
        if (plus.pattern != base_pattern || minus.pattern != base_pattern) {
            report.kinks.push_back(c);
            continue;
        }
        const double numeric = (plus.loss - minus.loss) / (2.0 * options.epsilon);
        const double analytic = grads.contains(c.name) ? grads.at(c.name)[c.index] : 0.0;
        const double err = relative_error(analytic, numeric);
        ++report.checked;
        if (report.checked == 1 || err > report.max_relative_error) {
            report.max_relative_error = err;
            report.worst = c;
        }
    }
    return report;
}

}  // namespace w2s::ad
