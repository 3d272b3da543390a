#include "w2s/config.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include "w2s/error.hpp"
#include "w2s/util.hpp"

namespace w2s {

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool valid_name(std::string_view s) {
    if (s.empty()) return false;
    return std::all_of(s.begin(), s.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-' ||
               c == '.';
    });
}

class LineParser {
public:
    LineParser(std::string_view text, std::string where) : s_(text), where_(std::move(where)) {}

    ConfigValue value() {
        ConfigValue v;
        skip();
        if (peek() == '[') {
            ++i_;
            v.is_list = true;
            skip();
            if (peek() == ']') {
                ++i_;
            } else {
                for (;;) {
                    v.items.push_back(scalar());
                    skip();
                    if (peek() == ',') {
                        ++i_;
                        continue;
                    }
                    if (peek() == ']') {
                        ++i_;
                        break;
                    }
                    fail("expected ',' or ']' in list");
                }
            }
        } else {
            v.items.push_back(scalar());
        }
        skip();
        if (i_ < s_.size() && s_[i_] != '#') fail("trailing characters after value");
        if (v.is_list && !v.items.empty()) {
            const auto first = v.items.front().index();
            for (const auto& item : v.items) {
                const bool numeric = item.index() == 1 || item.index() == 2;
                const bool first_numeric = first == 1 || first == 2;
                if (item.index() != first && !(numeric && first_numeric)) fail("list mixes value types");
            }
        }
        return v;
    }

private:
    char peek() const { return i_ < s_.size() ? s_[i_] : '\0'; }
    void skip() {
        while (i_ < s_.size() && (s_[i_] == ' ' || s_[i_] == '\t' || s_[i_] == '\r')) ++i_;
    }
    [[noreturn]] void fail(const std::string& what) const { throw ConfigError(where_ + ": " + what); }

    ConfigScalar scalar() {
        skip();
        if (peek() == '"') {
            ++i_;
            std::string out;
            while (i_ < s_.size() && s_[i_] != '"') {
                if (s_[i_] == '\\' && i_ + 1 < s_.size()) {
                    ++i_;
                    out += s_[i_] == 'n' ? '\n' : s_[i_] == 't' ? '\t' : s_[i_];
                } else {
                    out += s_[i_];
                }
                ++i_;
            }
            if (peek() != '"') fail("unterminated string");
            ++i_;
            return out;
        }
        const std::size_t start = i_;
        while (i_ < s_.size() && s_[i_] != ',' && s_[i_] != ']' && s_[i_] != ' ' && s_[i_] != '\t' &&
               s_[i_] != '#' && s_[i_] != '\r')
            ++i_;
        const std::string_view tok = s_.substr(start, i_ - start);
        if (tok.empty()) fail("missing value");
        if (tok == "true") return true;
        if (tok == "false") return false;
        const bool looks_real = tok.find_first_of(".eE") != std::string_view::npos ||
                                tok == "inf" || tok == "-inf" || tok == "nan";
        if (!looks_real) {
            std::int64_t n = 0;
            auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), n);
            if (ec == std::errc() && p == tok.data() + tok.size()) return n;
        } else {
            double x = 0.0;
            auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), x);
            if (ec == std::errc() && p == tok.data() + tok.size()) return x;
        }
        fail("unrecognized literal '" + std::string(tok) + "' (strings need double quotes)");
    }

    std::string_view s_;
    std::size_t i_ = 0;
    std::string where_;
};

const char* type_name(const ConfigScalar& v) {
    switch (v.index()) {
        case 0: return "bool";
        case 1: return "integer";
        case 2: return "real";
        default: return "string";
    }
}

}  // namespace

ConfigDocument ConfigDocument::parse(const std::string& text, const std::string& origin) {
    ConfigDocument doc;
    doc.origin_ = origin;
    std::string section;
    std::istringstream in(text);
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string where = origin + ":" + std::to_string(line_no);
        std::string_view line = trim(raw);
        if (line.empty() || line.front() == '#') continue;
        if (line.front() == '[') {
            const auto close = line.find(']');
            if (close == std::string_view::npos) throw ConfigError(where + ": unterminated section header");
            const auto rest = trim(line.substr(close + 1));
            if (!rest.empty() && rest.front() != '#') throw ConfigError(where + ": text after section header");
            section = std::string(trim(line.substr(1, close - 1)));
            if (!valid_name(section)) throw ConfigError(where + ": bad section name '" + section + "'");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
        const std::string key(trim(line.substr(0, eq)));
        if (!valid_name(key)) throw ConfigError(where + ": bad key '" + key + "'");
        if (section.empty()) throw ConfigError(where + ": key '" + key + "' outside any section");
        const std::string path = section + "." + key;
        if (doc.values_.contains(path)) throw ConfigError(where + ": duplicate key '" + path + "'");
        ConfigValue v = LineParser(line.substr(eq + 1), where + " (" + path + ")").value();
        v.line = line_no;
        doc.values_.emplace(path, std::move(v));
    }
    return doc;
}

const ConfigValue* ConfigDocument::find(const std::string& path) const {
    auto it = values_.find(path);
    return it == values_.end() ? nullptr : &it->second;
}

const ConfigValue* ConfigDocument::take(const std::string& path) {
    const ConfigValue* v = find(path);
    if (v) used_.insert(path);
    return v;
}

namespace {

[[noreturn]] void type_mismatch(const std::string& origin, const std::string& path, const ConfigValue& v,
                           const std::string& expected) {
    const std::string got = v.is_list ? "list" : type_name(v.items.front());
    throw ConfigError(origin + ":" + std::to_string(v.line) + ": key '" + path + "' expects " + expected + ", got " +
                      got);
}

}  // namespace

std::string ConfigDocument::get_string(const std::string& path, const std::string& fallback) {
    const ConfigValue* v = take(path);
    if (!v) return fallback;
    if (v->is_list || v->items.front().index() != 3) type_mismatch(origin_, path, *v, "a string");
    return std::get<std::string>(v->items.front());
}

double ConfigDocument::get_real(const std::string& path, double fallback) {
    const ConfigValue* v = take(path);
    if (!v) return fallback;
    if (v->is_list) type_mismatch(origin_, path, *v, "a number");
    const auto& x = v->items.front();
    if (x.index() == 1) return static_cast<double>(std::get<std::int64_t>(x));
    if (x.index() == 2) return std::get<double>(x);
    type_mismatch(origin_, path, *v, "a number");
}

std::int64_t ConfigDocument::get_int(const std::string& path, std::int64_t fallback) {
    const ConfigValue* v = take(path);
    if (!v) return fallback;
    if (v->is_list || v->items.front().index() != 1) type_mismatch(origin_, path, *v, "an integer");
    return std::get<std::int64_t>(v->items.front());
}

std::size_t ConfigDocument::get_size(const std::string& path, std::size_t fallback) {
    const ConfigValue* v = find(path);
    const std::int64_t n = get_int(path, static_cast<std::int64_t>(fallback));
    if (n < 0) {
        throw ConfigError(origin_ + ":" + std::to_string(v ? v->line : 0) + ": key '" + path +
                          "' must be non-negative");
    }
    return static_cast<std::size_t>(n);
}

std::uint64_t ConfigDocument::get_u64(const std::string& path, std::uint64_t fallback) {
    const ConfigValue* v = find(path);
    if (v && !v->is_list && v->items.front().index() == 3) {
        // Seeds beyond the signed range may be given as quoted hex.
        take(path);
        return parse_hex64(std::get<std::string>(v->items.front()));
    }
    return get_size(path, static_cast<std::size_t>(fallback));
}

bool ConfigDocument::get_bool(const std::string& path, bool fallback) {
    const ConfigValue* v = take(path);
    if (!v) return fallback;
    if (v->is_list || v->items.front().index() != 0) type_mismatch(origin_, path, *v, "true or false");
    return std::get<bool>(v->items.front());
}

std::vector<std::string> ConfigDocument::get_strings(const std::string& path,
                                                     const std::vector<std::string>& fallback) {
    const ConfigValue* v = take(path);
    if (!v) return fallback;
    if (!v->is_list) type_mismatch(origin_, path, *v, "a list of strings");
    std::vector<std::string> out;
    for (const auto& x : v->items) {
        if (x.index() != 3) type_mismatch(origin_, path, *v, "a list of strings");
        out.push_back(std::get<std::string>(x));
    }
    return out;
}

std::vector<double> ConfigDocument::get_reals(const std::string& path, const std::vector<double>& fallback) {
    const ConfigValue* v = take(path);
    if (!v) return fallback;
    if (!v->is_list) type_mismatch(origin_, path, *v, "a list of numbers");
    std::vector<double> out;
    for (const auto& x : v->items) {
        if (x.index() == 1) out.push_back(static_cast<double>(std::get<std::int64_t>(x)));
        else if (x.index() == 2) out.push_back(std::get<double>(x));
        else type_mismatch(origin_, path, *v, "a list of numbers");
    }
    return out;
}

std::vector<std::size_t> ConfigDocument::get_sizes(const std::string& path,
                                                   const std::vector<std::size_t>& fallback) {
    const ConfigValue* v = take(path);
    if (!v) return fallback;
    if (!v->is_list) type_mismatch(origin_, path, *v, "a list of integers");
    std::vector<std::size_t> out;
    for (const auto& x : v->items) {
        if (x.index() != 1 || std::get<std::int64_t>(x) < 0) {
            type_mismatch(origin_, path, *v, "a list of non-negative integers");
        }
        out.push_back(static_cast<std::size_t>(std::get<std::int64_t>(x)));
    }
    return out;
}

void ConfigDocument::reject_unused() const {
    for (const auto& [path, v] : values_) {
        if (!used_.contains(path)) {
            throw ConfigError(origin_ + ":" + std::to_string(v.line) + ": unknown key '" + path + "'");
        }
    }
}

// --- experiment config -------------------------------------------------------

Arm parse_arm(std::string_view name) {
    if (name == "full") return Arm::full;
    if (name == "peft") return Arm::peft;
    if (name == "w2s") return Arm::w2s;
    throw ConfigError("unknown arm '" + std::string(name) + "' (expected full, peft or w2s)");
}

std::string_view arm_name(Arm arm) {
    switch (arm) {
        case Arm::full: return "full";
        case Arm::peft: return "peft";
        case Arm::w2s: return "w2s";
    }
    return "?";
}

bool ExperimentConfig::has_arm(Arm arm) const {
    return std::find(eval.arms.begin(), eval.arms.end(), arm) != eval.arms.end();
}

TriggerSpec ExperimentConfig::effective_trigger() const {
    return trigger_length == 0 ? trigger : with_trigger_length(trigger, trigger_length);
}

namespace {

// Enum-valued keys: rethrow parse failures with the key path.
template <typename F>
auto keyed(const std::string& key, F&& parse) -> decltype(parse()) {
    try {
        return parse();
    } catch (const ConfigError& e) {
        throw ConfigError("key '" + key + "': " + e.what());
    }
}

void read_model(ConfigDocument& doc, const std::string& s, ModelConfig& m) {
    m.embed_dim = doc.get_size(s + ".embed_dim", m.embed_dim);
    m.hidden_dim = doc.get_size(s + ".hidden_dim", m.hidden_dim);
    m.depth = doc.get_size(s + ".depth", m.depth);
    m.pooling = keyed(s + ".pooling", [&] { return parse_pooling(doc.get_string(s + ".pooling", std::string(pooling_name(m.pooling)))); });
    m.activation = keyed(s + ".activation", [&] {
        return ad::parse_activation(doc.get_string(s + ".activation", std::string(ad::activation_name(m.activation))));
    });
}

void read_train(ConfigDocument& doc, const std::string& s, TrainConfig& t) {
    t.learning_rate = doc.get_real(s + ".learning_rate", t.learning_rate);
    t.epochs = doc.get_size(s + ".epochs", t.epochs);
    t.batch_size = doc.get_size(s + ".batch_size", t.batch_size);
    t.optimizer.kind = keyed(s + ".optimizer", [&] {
        return parse_optimizer(doc.get_string(s + ".optimizer", std::string(optimizer_name(t.optimizer.kind))));
    });
    t.optimizer.beta1 = doc.get_real(s + ".adam_beta1", t.optimizer.beta1);
    t.optimizer.beta2 = doc.get_real(s + ".adam_beta2", t.optimizer.beta2);
    t.optimizer.epsilon = doc.get_real(s + ".adam_epsilon", t.optimizer.epsilon);
}

std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        if (c == '\n') {
            out += "\\n";
            continue;
        }
        out += c;
    }
    return out + "\"";
}

std::string real(double x) {
    std::string s = format_double(x);
    // Keep reals recognizable as reals when read back.
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
}

std::string join_payload(const std::vector<std::string>& tokens) {
    std::string out;
    for (const auto& t : tokens) {
        if (!out.empty()) out += ' ';
        out += t;
    }
    return out;
}

template <typename T, typename F>
std::string list(const std::vector<T>& items, F render) {
    std::string out = "[";
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += ", ";
        out += render(items[i]);
    }
    return out + "]";
}

void write_model(std::ostringstream& out, const ModelConfig& m) {
    out << "embed_dim = " << m.embed_dim << '\n'
        << "hidden_dim = " << m.hidden_dim << '\n'
        << "depth = " << m.depth << '\n'
        << "pooling = " << quote(std::string(pooling_name(m.pooling))) << '\n'
        << "activation = " << quote(std::string(ad::activation_name(m.activation))) << '\n';
}

void write_train(std::ostringstream& out, const TrainConfig& t) {
    out << "learning_rate = " << real(t.learning_rate) << '\n'
        << "epochs = " << t.epochs << '\n'
        << "batch_size = " << t.batch_size << '\n'
        << "optimizer = " << quote(std::string(optimizer_name(t.optimizer.kind))) << '\n'
        << "adam_beta1 = " << real(t.optimizer.beta1) << '\n'
        << "adam_beta2 = " << real(t.optimizer.beta2) << '\n'
        << "adam_epsilon = " << real(t.optimizer.epsilon) << '\n';
}

}  // namespace

std::string ExperimentConfig::snapshot() const {
    std::ostringstream out;
    out << "[run]\nseed = " << (seed > static_cast<std::uint64_t>(INT64_MAX) ? quote(hex64(seed)) : std::to_string(seed))
        << "\n\n[data]\n"
        << "corpus = " << quote(data.corpus_ref) << '\n'
        << "label_column = " << data.schema.label_column << '\n'
        << "text_column = " << data.schema.text_column << '\n'
        << "class_count = " << data.schema.class_count << '\n'
        << "split = [" << real(data.split.train) << ", " << real(data.split.valid) << ", " << real(data.split.test)
        << "]\n"
        << "max_length = " << data.max_length << '\n'
        << "vocab_max = " << data.vocab_max << '\n'
        << "min_count = " << data.min_count << "\n\n[trigger]\n"
        << "kind = " << quote(std::string(trigger_kind_name(trigger.kind))) << '\n'
        << "payload = " << quote(join_payload(trigger.payload)) << '\n'
        << "position = " << quote(std::string(trigger_position_name(trigger.position))) << '\n'
        << "length = " << trigger_length << "\n\n[poison]\n"
        << "target_label = " << poison.target_label << '\n'
        << "count = " << poison.count << '\n'
        << "clean_label = " << (poison.clean_label ? "true" : "false") << "\n\n[teacher]\n";
    write_model(out, teacher_model);
    write_train(out, teacher_train);
    out << "\n[student]\n";
    write_model(out, student_model);
    out << "pretrain_epochs = " << student_pretrain_epochs << '\n';
    write_train(out, student_train);
    out << "\n[adapter]\n"
        << "kind = " << quote(std::string(adapter_kind_name(adapter.kind))) << '\n'
        << "rank = " << adapter.rank << '\n'
        << "scaling = " << real(adapter.scaling) << '\n'
        << "length = " << adapter.length << '\n'
        << "targets = " << list(adapter.targets, quote) << "\n\n[loss]\n"
        << "alpha = " << real(weights.alpha) << '\n'
        << "beta = " << real(weights.beta) << '\n'
        << "gamma = " << real(weights.gamma) << "\n\n[eval]\n"
        << "arms = " << list(eval.arms, [](Arm a) { return quote(std::string(arm_name(a))); }) << '\n'
        << "clean_reference = " << (eval.clean_reference ? "true" : "false") << '\n'
        << "defense = " << (eval.defense ? "true" : "false") << '\n'
        << "onion_threshold = " << real(eval.onion_threshold) << '\n'
        << "lm_smoothing = " << real(eval.lm_smoothing) << '\n'
        << "mi_k = " << eval.mi_k << '\n'
        << "mi_iterations = " << eval.mi_iterations << "\n\n[sweep]\n";
    auto num = [](std::size_t n) { return std::to_string(n); };
    out << "poison_counts = " << list(sweep.poison_counts, num) << '\n'
        << "trigger_lengths = " << list(sweep.trigger_lengths, num) << '\n'
        << "ranks = " << list(sweep.ranks, num) << '\n'
        << "rank_include_full = " << (sweep.rank_include_full ? "true" : "false") << '\n';
    return out.str();
}

std::uint64_t ExperimentConfig::hash() const { return fnv1a(fnv1a_init, snapshot()); }

void ExperimentConfig::validate() const {
    if (data.corpus_ref.empty()) throw ConfigError("data.corpus is required");
    if (data.schema.class_count < 2) throw ConfigError("data.class_count must be at least 2");
    if (data.schema.label_column == data.schema.text_column) {
        throw ConfigError("data.label_column and data.text_column must differ");
    }
    if (data.max_length < 1) throw ConfigError("data.max_length must be at least 1");
    trigger.validate();
    effective_trigger();
    if (poison.target_label < 0 || static_cast<std::size_t>(poison.target_label) >= data.schema.class_count) {
        throw ConfigError("poison.target_label out of range");
    }
    teacher_train.validate();
    student_train.validate();
    if (student_pretrain_epochs > 0) {
        TrainConfig pre = student_train;
        pre.epochs = student_pretrain_epochs;
        pre.validate();
    }
    weights.validate();
    if (eval.arms.empty()) throw ConfigError("eval.arms must name at least one arm");
    if (eval.mi_k < 2) throw ConfigError("eval.mi_k must be at least 2");
    if (!(eval.lm_smoothing > 0.0)) throw ConfigError("eval.lm_smoothing must be positive");
    for (const auto* axis : {&sweep.poison_counts, &sweep.trigger_lengths, &sweep.ranks}) {
        if (!std::is_sorted(axis->begin(), axis->end())) throw ConfigError("sweep axis values must be ascending");
    }
}

ExperimentConfig parse_config_text(const std::string& text, const std::filesystem::path& base_dir,
                                   const std::string& origin) {
    ConfigDocument doc = ConfigDocument::parse(text, origin);
    ExperimentConfig c;
    c.source_text = text;

    c.seed = doc.get_u64("run.seed", c.seed);

    c.data.corpus_ref = doc.get_string("data.corpus", "");
    if (c.data.corpus_ref.empty()) throw ConfigError(origin + ": missing required key 'data.corpus'");
    const std::filesystem::path corpus(c.data.corpus_ref);
    c.data.corpus = corpus.is_absolute() ? corpus : base_dir / corpus;
    c.data.schema.label_column = doc.get_size("data.label_column", c.data.schema.label_column);
    c.data.schema.text_column = doc.get_size("data.text_column", c.data.schema.text_column);
    c.data.schema.class_count = doc.get_size("data.class_count", c.data.schema.class_count);
    const auto split = doc.get_reals("data.split", {c.data.split.train, c.data.split.valid, c.data.split.test});
    if (split.size() != 3) throw ConfigError(origin + ": key 'data.split' needs three fractions");
    c.data.split = {split[0], split[1], split[2]};
    c.data.max_length = doc.get_size("data.max_length", c.data.max_length);
    c.data.vocab_max = doc.get_size("data.vocab_max", c.data.vocab_max);
    c.data.min_count = doc.get_size("data.min_count", c.data.min_count);

    const TriggerKind kind =
        keyed("trigger.kind", [&] { return parse_trigger_kind(doc.get_string("trigger.kind", "rare-token")); });
    switch (kind) {
        case TriggerKind::rare_token: c.trigger = TriggerSpec::rare_token(); break;
        case TriggerKind::sentence: c.trigger = TriggerSpec::sentence(); break;
        case TriggerKind::prompt_prefix: c.trigger = TriggerSpec::prompt_prefix(); break;
    }
    if (const std::string payload = doc.get_string("trigger.payload", ""); !payload.empty()) {
        c.trigger.payload = tokenize(payload);
    }
    c.trigger.position = keyed("trigger.position", [&] {
        return parse_trigger_position(
            doc.get_string("trigger.position", std::string(trigger_position_name(c.trigger.position))));
    });
    c.trigger_length = doc.get_size("trigger.length", c.trigger_length);

    c.poison.target_label = static_cast<int>(doc.get_int("poison.target_label", c.poison.target_label));
    c.poison.count = doc.get_size("poison.count", c.poison.count);
    c.poison.clean_label = doc.get_bool("poison.clean_label", c.poison.clean_label);

    read_model(doc, "teacher", c.teacher_model);
    read_train(doc, "teacher", c.teacher_train);
    read_model(doc, "student", c.student_model);
    c.student_pretrain_epochs = doc.get_size("student.pretrain_epochs", c.student_pretrain_epochs);
    read_train(doc, "student", c.student_train);

    c.adapter.kind = keyed("adapter.kind", [&] {
        return parse_adapter_kind(doc.get_string("adapter.kind", std::string(adapter_kind_name(c.adapter.kind))));
    });
    c.adapter.rank = doc.get_size("adapter.rank", c.adapter.rank);
    c.adapter.scaling = doc.get_real("adapter.scaling", c.adapter.scaling);
    c.adapter.length = doc.get_size("adapter.length", c.adapter.length);
    std::vector<std::string> default_targets;
    if (c.adapter.kind == AdapterKind::low_rank) {
        for (std::size_t b = 0; b < c.student_model.depth; ++b) {
            default_targets.push_back("block" + std::to_string(b) + ".weight");
        }
    }
    c.adapter.targets = doc.get_strings("adapter.targets", default_targets);

    c.weights.alpha = doc.get_real("loss.alpha", c.weights.alpha);
    c.weights.beta = doc.get_real("loss.beta", c.weights.beta);
    c.weights.gamma = doc.get_real("loss.gamma", c.weights.gamma);

    std::vector<std::string> arm_names;
    for (Arm a : c.eval.arms) arm_names.emplace_back(arm_name(a));
    c.eval.arms.clear();
    for (const auto& a : doc.get_strings("eval.arms", arm_names)) {
        c.eval.arms.push_back(keyed("eval.arms", [&] { return parse_arm(a); }));
    }
    c.eval.clean_reference = doc.get_bool("eval.clean_reference", c.eval.clean_reference);
    c.eval.defense = doc.get_bool("eval.defense", c.eval.defense);
    c.eval.onion_threshold = doc.get_real("eval.onion_threshold", c.eval.onion_threshold);
    c.eval.lm_smoothing = doc.get_real("eval.lm_smoothing", c.eval.lm_smoothing);
    c.eval.mi_k = doc.get_size("eval.mi_k", c.eval.mi_k);
    c.eval.mi_iterations = doc.get_size("eval.mi_iterations", c.eval.mi_iterations);

    c.sweep.poison_counts = doc.get_sizes("sweep.poison_counts", c.sweep.poison_counts);
    c.sweep.trigger_lengths = doc.get_sizes("sweep.trigger_lengths", c.sweep.trigger_lengths);
    c.sweep.ranks = doc.get_sizes("sweep.ranks", c.sweep.ranks);
    c.sweep.rank_include_full = doc.get_bool("sweep.rank_include_full", c.sweep.rank_include_full);

    doc.reject_unused();
    c.validate();
    return c;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const Error& e) {
        throw ConfigError("cannot read config: " + std::string(e.what()));
    }
    ExperimentConfig c = parse_config_text(text, path.parent_path(), path.string());
    c.source_path = path;
    if (!std::filesystem::exists(c.data.corpus)) {
        throw ConfigError(path.string() + ": key 'data.corpus' names a missing file: " + c.data.corpus.string());
    }
    return c;
}

}  // namespace w2s
