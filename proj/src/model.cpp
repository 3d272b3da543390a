#include "w2s/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "w2s/error.hpp"
#include "w2s/rng.hpp"
#include "w2s/util.hpp"

namespace w2s {

using ad::DenseArray;
using ad::Var;

Pooling parse_pooling(std::string_view name) {
    if (name == "mean") return Pooling::mean;
    if (name == "first-token") return Pooling::first_token;
    throw ConfigError("unknown pooling '" + std::string(name) + "'");
}

std::string_view pooling_name(Pooling pooling) { return pooling == Pooling::mean ? "mean" : "first-token"; }

AdapterKind parse_adapter_kind(std::string_view name) {
    if (name == "low-rank") return AdapterKind::low_rank;
    if (name == "prefix") return AdapterKind::prefix;
    if (name == "soft-prompt") return AdapterKind::soft_prompt;
    throw ConfigError("unknown adapter kind '" + std::string(name) + "'");
}

std::string_view adapter_kind_name(AdapterKind kind) {
    switch (kind) {
        case AdapterKind::low_rank: return "low-rank";
        case AdapterKind::prefix: return "prefix";
        case AdapterKind::soft_prompt: return "soft-prompt";
    }
    return "low-rank";
}

TrainMode parse_train_mode(std::string_view name) {
    if (name == "full") return TrainMode::full;
    if (name == "adapter-only") return TrainMode::adapter_only;
    throw ConfigError("unknown training mode '" + std::string(name) + "'");
}

std::string_view train_mode_name(TrainMode mode) { return mode == TrainMode::full ? "full" : "adapter-only"; }

void ModelConfig::validate() const {
    if (vocab_size < 2 || embed_dim == 0 || hidden_dim == 0 || depth == 0 || class_count < 2) {
        throw ConfigError("model dimensions must be positive (vocab >= 2, depth >= 1, classes >= 2)");
    }
}

ModelConfig ModelConfig::teacher(std::size_t vocab_size, std::size_t class_count) {
    return ModelConfig{vocab_size, 16, 16, 2, class_count, Pooling::mean, ad::Activation::tanh};
}

ModelConfig ModelConfig::teacher_variant(std::size_t vocab_size, std::size_t class_count) {
    return ModelConfig{vocab_size, 16, 16, 1, class_count, Pooling::first_token, ad::Activation::tanh};
}

ModelConfig ModelConfig::student(std::size_t vocab_size, std::size_t class_count) {
    return ModelConfig{vocab_size, 64, 64, 3, class_count, Pooling::mean, ad::Activation::tanh};
}

double glorot_bound(std::size_t fan_in, std::size_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

namespace {

DenseArray glorot(std::size_t rows, std::size_t cols, Rng& rng) {
    const double a = glorot_bound(rows, cols);
    std::vector<double> v(rows * cols);
    for (auto& x : v) x = rng.uniform(-a, a);
    return DenseArray::matrix(rows, cols, std::move(v));
}

std::string block_weight(std::size_t i) { return "block" + std::to_string(i) + ".weight"; }
std::string block_bias(std::size_t i) { return "block" + std::to_string(i) + ".bias"; }
std::string prefix_name(std::size_t i) { return "prefix." + std::to_string(i); }
std::string lora_a(const std::string& target) { return target + ".lora_a"; }
std::string lora_b(const std::string& target) { return target + ".lora_b"; }

constexpr std::string_view soft_prompt_name = "soft_prompt";
constexpr std::string_view projection_weight = "projection.weight";
constexpr std::string_view projection_bias = "projection.bias";

bool is_adapter_parameter(const std::string& name) {
    return name.ends_with(".lora_a") || name.ends_with(".lora_b") || name.starts_with("prefix.") ||
           name == soft_prompt_name;
}

}  // namespace

TeacherProjection TeacherProjection::init(std::size_t teacher_dim, std::size_t student_dim, std::uint64_t seed) {
    Rng rng(seed);
    return TeacherProjection{glorot(student_dim, teacher_dim, rng), DenseArray::zeros({student_dim})};
}

DenseArray project_teacher_hidden(const TeacherProjection& projection, const DenseArray& h) {
    if (h.rank() != 2 || h.cols() != projection.input_dim()) {
        throw ShapeError("projection expects [n x " + std::to_string(projection.input_dim()) + "], got " +
                         ad::shape_string(h.shape()));
    }
    if (projection.bias.size() != projection.output_dim()) throw ShapeError("projection bias does not match weight");
    const std::size_t n = h.rows(), in = projection.input_dim(), out = projection.output_dim();
    std::vector<double> v(n * out);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < out; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < in; ++k) s += projection.weight.at(j, k) * h.at(i, k);
            v[i * out + j] = s + projection.bias[j];
        }
    }
    return DenseArray::matrix(n, out, std::move(v));
}

// --- ClassifierModel -------------------------------------------------------------

ClassifierModel::ClassifierModel(ModelConfig config, ad::ParameterMap params, std::optional<AdapterSpec> adapter)
    : config_(config), params_(std::move(params)), adapter_(std::move(adapter)) {
    config_.validate();
}

const DenseArray& ClassifierModel::parameter(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw UsageError("model has no parameter '" + name + "'");
    return it->second.value;
}

bool ClassifierModel::has_projection() const { return params_.contains(std::string(projection_weight)); }

TeacherProjection ClassifierModel::projection() const {
    if (!has_projection()) throw UsageError("model carries no teacher projection");
    return TeacherProjection{parameter(std::string(projection_weight)), parameter(std::string(projection_bias))};
}

void ClassifierModel::set_projection(const TeacherProjection& projection) {
    if (projection.input_dim() != config_.hidden_dim) {
        throw ShapeError("projection input " + std::to_string(projection.input_dim()) + " != hidden dim " +
                         std::to_string(config_.hidden_dim));
    }
    const DenseArray& head = parameter("head.weight");
    if (head.rows() != projection.output_dim()) {
        throw ShapeError("projection output " + std::to_string(projection.output_dim()) + " != head input " +
                         std::to_string(head.rows()));
    }
    const bool trainable = params_.at("head.weight").trainable;
    params_[std::string(projection_weight)] = ad::Parameter{projection.weight, trainable};
    params_[std::string(projection_bias)] = ad::Parameter{projection.bias, trainable};
}

std::size_t ClassifierModel::head_input_dim() const { return parameter("head.weight").rows(); }

ForwardGraph ClassifierModel::build(ad::Tape& tape, std::span<const int> ids, std::size_t rows, std::size_t length) const {
    std::set<std::string> names;
    for (const auto& [name, p] : params_)
        if (p.trainable) names.insert(name);
    return build(tape, ids, rows, length, names);
}

ForwardGraph ClassifierModel::build(ad::Tape& tape, std::span<const int> ids, std::size_t rows, std::size_t length,
                                    const std::set<std::string>& grad_names) const {
    if (ids.size() != rows * length) throw ShapeError("id buffer does not match rows x length");
    if (rows == 0) throw ShapeError("forward needs at least one row");
    auto param = [&](const std::string& name) {
        return tape.parameter(name, parameter(name), grad_names.contains(name));
    };
    const bool low_rank = adapter_ && adapter_->kind == AdapterKind::low_rank;
    auto weight = [&](const std::string& name) {
        Var w = param(name);
        if (low_rank && std::find(adapter_->targets.begin(), adapter_->targets.end(), name) != adapter_->targets.end()) {
            Var delta = ad::matmul(param(lora_a(name)), param(lora_b(name)));
            w = ad::add(w, ad::scale(delta, adapter_->scaling));
        }
        return w;
    };

    const int skip[] = {Vocabulary::unk, Vocabulary::pad};
    std::vector<double> counts(rows, 0.0);
    std::vector<int> pooled_ids(ids.begin(), ids.end());
    for (std::size_t i = 0; i < rows; ++i) {
        bool seen = false;
        for (std::size_t p = 0; p < length; ++p) {
            int& id = pooled_ids[i * length + p];
            if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
                throw DataError("token id " + std::to_string(id) + " outside vocabulary of size " +
                                std::to_string(config_.vocab_size));
            }
            if (id == Vocabulary::unk || id == Vocabulary::pad) continue;
            if (config_.pooling == Pooling::first_token && seen) {
                id = Vocabulary::pad;
                continue;
            }
            seen = true;
            counts[i] += 1.0;
        }
    }

    Var h = ad::embedding_sum(param("embedding"), pooled_ids, rows, length, skip);
    const bool soft_prompt = adapter_ && adapter_->kind == AdapterKind::soft_prompt;
    if (soft_prompt) {
        h = ad::add_row(h, ad::sum_rows(param(std::string(soft_prompt_name))));
        for (auto& c : counts) c += static_cast<double>(adapter_->length);
    }
    std::vector<double> inv(rows);
    for (std::size_t i = 0; i < rows; ++i) inv[i] = counts[i] > 0.0 ? 1.0 / counts[i] : 0.0;
    h = ad::row_scale(h, inv);

    const bool prefix = adapter_ && adapter_->kind == AdapterKind::prefix;
    for (std::size_t b = 0; b < config_.depth; ++b) {
        if (prefix) {
            // The pooled stream stands for counts[i] tokens; the prefix vectors
            // join it as extra pseudo-tokens at this block's input.
            const double plen = static_cast<double>(adapter_->length);
            std::vector<double> mix(rows);
            for (std::size_t i = 0; i < rows; ++i) mix[i] = 1.0 / (counts[i] + plen);
            h = ad::row_scale(ad::add_row(ad::row_scale(h, counts), ad::sum_rows(param(prefix_name(b)))), mix);
        }
        h = ad::nonlinearity(ad::affine(h, weight(block_weight(b)), param(block_bias(b))), config_.activation);
    }
    Var hidden = h;
    Var head_in = hidden;
    if (has_projection()) {
        head_in = ad::affine(hidden, ad::transpose(param(std::string(projection_weight))),
                             param(std::string(projection_bias)));
    }
    Var logits = ad::affine(head_in, weight("head.weight"), param("head.bias"));
    return {logits, hidden};
}

std::size_t ClassifierModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_) n += p.value.size();
    return n;
}

namespace {

std::uint64_t hash_parameter(std::uint64_t h, const std::string& name, const ad::Parameter& p) {
    h = fnv1a(h, name);
    auto v = p.value.values();
    return fnv1a(h, std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(v.data()),
                                                   v.size() * sizeof(double)));
}

}  // namespace

std::uint64_t ClassifierModel::parameter_hash() const {
    std::uint64_t h = fnv1a_init;
    for (const auto& [name, p] : params_) h = hash_parameter(h, name, p);
    return h;
}

std::uint64_t ClassifierModel::parameter_hash(const std::vector<std::string>& names) const {
    std::uint64_t h = fnv1a_init;
    for (const auto& name : names) h = hash_parameter(h, name, params_.at(name));
    return h;
}

ClassifierModel ClassifierModel::materialized() const {
    ad::ParameterMap out;
    for (const auto& [name, p] : params_) {
        if (!is_adapter_parameter(name)) out[name] = ad::Parameter{p.value, true};
    }
    if (adapter_ && adapter_->kind == AdapterKind::low_rank) {
        for (const auto& target : adapter_->targets) {
            DenseArray delta = ad::matmul_values(parameter(lora_a(target)), parameter(lora_b(target)));
            auto w = out.at(target).value.values();
            auto d = delta.values();
            for (std::size_t i = 0; i < w.size(); ++i) w[i] += adapter_->scaling * d[i];
        }
        return ClassifierModel(config_, std::move(out), std::nullopt);
    }
    if (adapter_) throw UsageError("only low-rank adapters can be folded into base weights");
    return *this;
}

ClassifierModel init_params(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    // One stream per parameter, so growing the vocabulary leaves the other weights unchanged.
    auto stream = [seed](std::string_view name) { return Rng(mix_seed(seed ^ fnv1a(fnv1a_init, name))); };
    ad::ParameterMap params;
    {
        Rng rng = stream("embedding");
        params["embedding"] = {glorot(config.vocab_size, config.embed_dim, rng), true};
    }
    for (std::size_t b = 0; b < config.depth; ++b) {
        const std::size_t in = b == 0 ? config.embed_dim : config.hidden_dim;
        Rng rng = stream(block_weight(b));
        params[block_weight(b)] = {glorot(in, config.hidden_dim, rng), true};
        params[block_bias(b)] = {DenseArray::zeros({config.hidden_dim}), true};
    }
    Rng rng = stream("head.weight");
    params["head.weight"] = {glorot(config.hidden_dim, config.class_count, rng), true};
    params["head.bias"] = {DenseArray::zeros({config.class_count}), true};
    return ClassifierModel(config, std::move(params), std::nullopt);
}

ForwardOutput forward(const ClassifierModel& model, std::span<const int> ids, std::size_t rows, std::size_t length) {
    ad::Tape tape;
    ForwardGraph g = model.build(tape, ids, rows, length, {});
    return {g.logits.value(), g.hidden.value()};
}

ForwardOutput forward(const ClassifierModel& model, const Dataset& dataset) {
    auto ids = dataset.flat_ids();
    return forward(model, ids, dataset.size(), dataset.max_length);
}

ClassifierModel attach_adapter(ClassifierModel model, const AdapterSpec& spec, std::uint64_t seed) {
    if (model.adapter()) throw ConfigError("model already carries an adapter");
    const ModelConfig& cfg = model.config();
    Rng rng(seed);
    ad::ParameterMap params = model.parameters();
    for (auto& [name, p] : params) p.trainable = false;

    switch (spec.kind) {
        case AdapterKind::low_rank: {
            if (spec.rank < 1) throw ConfigError("adapter rank must be at least 1");
            if (!(spec.scaling > 0.0)) throw ConfigError("adapter scaling must be positive");
            if (spec.targets.empty()) throw ConfigError("low-rank adapter needs at least one target matrix");
            for (const auto& target : spec.targets) {
                auto it = params.find(target);
                if (it == params.end() || it->second.value.rank() != 2 || target == "embedding" ||
                    target.starts_with("projection.")) {
                    throw ConfigError("adapter target '" + target + "' is not a weight matrix of this model");
                }
                const std::size_t in = it->second.value.rows(), out = it->second.value.cols();
                if (spec.rank >= std::min(in, out)) {
                    throw ConfigError("rank " + std::to_string(spec.rank) + " is not low-rank for " + target + " " +
                                      ad::shape_string(it->second.value.shape()));
                }
                params[lora_a(target)] = {glorot(in, spec.rank, rng), true};
                params[lora_b(target)] = {DenseArray::zeros({spec.rank, out}), true};
            }
            break;
        }
        case AdapterKind::prefix:
            if (spec.length < 1) throw ConfigError("prefix length must be at least 1");
            if (cfg.pooling != Pooling::mean) throw ConfigError("prefix adapters need mean pooling");
            for (std::size_t b = 0; b < cfg.depth; ++b) {
                const std::size_t in = b == 0 ? cfg.embed_dim : cfg.hidden_dim;
                params[prefix_name(b)] = {glorot(spec.length, in, rng), true};
            }
            break;
        case AdapterKind::soft_prompt:
            if (spec.length < 1) throw ConfigError("prompt length must be at least 1");
            if (cfg.pooling != Pooling::mean) throw ConfigError("soft-prompt adapters need mean pooling");
            params[std::string(soft_prompt_name)] = {glorot(spec.length, cfg.embed_dim, rng), true};
            break;
    }
    if (spec.kind != AdapterKind::low_rank && !spec.targets.empty()) {
        throw ConfigError("target matrices apply to low-rank adapters only");
    }
    return ClassifierModel(cfg, std::move(params), spec);
}

ClassifierModel attach_projection(ClassifierModel model, const TeacherProjection& projection, std::uint64_t seed) {
    if (model.has_projection()) throw ConfigError("model already carries a projection");
    Rng rng(seed);
    auto& params = model.parameters();
    const bool trainable = params.at("head.weight").trainable;
    params["head.weight"] = {glorot(projection.output_dim(), model.config().class_count, rng), trainable};
    model.set_projection(projection);
    return model;
}

TrainableSet trainable_parameters(const ClassifierModel& model, TrainMode mode) {
    TrainableSet set;
    set.total_count = model.parameter_count();
    if (mode == TrainMode::adapter_only && !model.adapter()) {
        throw UsageError("adapter-only training requested on a model without an adapter");
    }
    for (const auto& [name, p] : model.parameters()) {
        if (mode == TrainMode::full || is_adapter_parameter(name)) {
            set.names.push_back(name);
            set.trainable_count += p.value.size();
        }
    }
    set.fraction = static_cast<double>(set.trainable_count) / static_cast<double>(set.total_count);
    return set;
}

// --- checkpoints -------------------------------------------------------------------

namespace {

constexpr std::string_view checkpoint_magic = "W2SCKPT";
constexpr int checkpoint_version = 1;

void append_le(std::string& out, double value) {
    auto bits = std::bit_cast<std::uint64_t>(value);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double read_le(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

template <typename T>
T expect_field(std::istringstream& in, std::string_view key) {
    std::string k;
    T value{};
    if (!(in >> k) || k != key || !(in >> value)) {
        throw CheckpointError("checkpoint header: expected field '" + std::string(key) + "'");
    }
    return value;
}

}  // namespace

void save_checkpoint(const ClassifierModel& model, const std::filesystem::path& path) {
    const ModelConfig& c = model.config();
    std::ostringstream h;
    h << checkpoint_magic << '\n'
      << "version " << checkpoint_version << '\n'
      << "vocab_size " << c.vocab_size << '\n'
      << "embed_dim " << c.embed_dim << '\n'
      << "hidden_dim " << c.hidden_dim << '\n'
      << "depth " << c.depth << '\n'
      << "class_count " << c.class_count << '\n'
      << "pooling " << pooling_name(c.pooling) << '\n'
      << "activation " << ad::activation_name(c.activation) << '\n';
    if (const auto& a = model.adapter()) {
        h << "adapter " << adapter_kind_name(a->kind) << " rank " << a->rank << " scaling "
          << format_double(a->scaling) << " length " << a->length << " targets " << a->targets.size();
        for (const auto& t : a->targets) h << ' ' << t;
        h << '\n';
    } else {
        h << "adapter none\n";
    }
    h << "params " << model.parameters().size() << '\n';
    for (const auto& [name, p] : model.parameters()) {
        h << "param " << name << ' ' << (p.trainable ? 1 : 0) << ' ' << p.value.rank();
        for (auto d : p.value.shape()) h << ' ' << d;
        h << '\n';
    }
    h << "end\n";
    std::string out = h.str();
    for (const auto& [name, p] : model.parameters())
        for (double v : p.value.values()) append_le(out, v);
    write_file_atomic(path, out);
}

ClassifierModel load_checkpoint(const std::filesystem::path& path) {
    std::string bytes;
    try {
        bytes = read_file(path);
    } catch (const IoError& e) {
        throw CheckpointError(e.what());
    }
    const std::size_t end = bytes.find("\nend\n");
    if (end == std::string::npos) throw CheckpointError(path.string() + ": truncated or corrupt header");
    std::istringstream in(bytes.substr(0, end + 1));
    std::string magic;
    std::getline(in, magic);
    if (magic != checkpoint_magic) throw CheckpointError(path.string() + ": bad magic");
    if (expect_field<int>(in, "version") != checkpoint_version) {
        throw CheckpointError(path.string() + ": unsupported checkpoint version");
    }
    ModelConfig c;
    c.vocab_size = expect_field<std::size_t>(in, "vocab_size");
    c.embed_dim = expect_field<std::size_t>(in, "embed_dim");
    c.hidden_dim = expect_field<std::size_t>(in, "hidden_dim");
    c.depth = expect_field<std::size_t>(in, "depth");
    c.class_count = expect_field<std::size_t>(in, "class_count");
    try {
        c.pooling = parse_pooling(expect_field<std::string>(in, "pooling"));
        c.activation = ad::parse_activation(expect_field<std::string>(in, "activation"));
    } catch (const ConfigError& e) {
        throw CheckpointError(std::string("checkpoint header: ") + e.what());
    }

    std::optional<AdapterSpec> adapter;
    const auto kind = expect_field<std::string>(in, "adapter");
    if (kind != "none") {
        AdapterSpec a;
        try {
            a.kind = parse_adapter_kind(kind);
        } catch (const ConfigError& e) {
            throw CheckpointError(std::string("checkpoint header: ") + e.what());
        }
        a.rank = expect_field<std::size_t>(in, "rank");
        a.scaling = expect_field<double>(in, "scaling");
        a.length = expect_field<std::size_t>(in, "length");
        const auto targets = expect_field<std::size_t>(in, "targets");
        for (std::size_t i = 0; i < targets; ++i) {
            std::string t;
            if (!(in >> t)) throw CheckpointError("checkpoint header: missing adapter target");
            a.targets.push_back(t);
        }
        adapter = a;
    }

    struct Entry {
        std::string name;
        bool trainable;
        ad::Shape shape;
    };
    std::vector<Entry> manifest;
    const auto count = expect_field<std::size_t>(in, "params");
    std::size_t doubles = 0;
    for (std::size_t i = 0; i < count; ++i) {
        std::string tag;
        Entry e;
        int trainable = 0;
        std::size_t rank = 0;
        if (!(in >> tag >> e.name >> trainable >> rank) || tag != "param" || rank > 2) {
            throw CheckpointError("checkpoint header: malformed parameter manifest");
        }
        e.trainable = trainable != 0;
        std::size_t n = 1;
        for (std::size_t r = 0; r < rank; ++r) {
            std::size_t d = 0;
            if (!(in >> d) || d == 0) throw CheckpointError("checkpoint header: malformed shape for " + e.name);
            e.shape.push_back(d);
            n *= d;
        }
        doubles += n;
        manifest.push_back(std::move(e));
    }
    const std::size_t offset = end + 5;
    if (bytes.size() != offset + doubles * 8) {
        throw CheckpointError(path.string() + ": parameter payload is " + std::to_string(bytes.size() - offset) +
                              " bytes, expected " + std::to_string(doubles * 8));
    }
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + offset;
    ad::ParameterMap params;
    for (auto& e : manifest) {
        std::size_t n = 1;
        for (auto d : e.shape) n *= d;
        std::vector<double> values(n);
        for (auto& v : values) {
            v = read_le(p);
            p += 8;
        }
        try {
            params[e.name] = ad::Parameter{DenseArray(e.shape, std::move(values)), e.trainable};
        } catch (const ShapeError& err) {
            throw CheckpointError(err.what());
        }
    }
    try {
        return ClassifierModel(c, std::move(params), adapter);
    } catch (const ConfigError& err) {
        throw CheckpointError(std::string("checkpoint config: ") + err.what());
    }
}

}  // namespace w2s
