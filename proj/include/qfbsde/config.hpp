#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "qfbsde/error.hpp"
#include "qfbsde/registry.hpp"

namespace qfbsde::config {

// Grammar, one construct per line:
//   line    := blank | comment | section | entry
//   comment := '#' any*
//   section := '[' name ']'
//   entry   := key ws* '=' ws* value ws* comment?
//   value   := string | number | bool | array
//   string  := '"' (char | '\"' | '\\')* '"'
//   bool    := 'true' | 'false'
//   array   := '[' (scalar (',' scalar)*)? ']'

struct Value {
    enum class Kind { number, string, boolean, array };
    Kind kind = Kind::number;
    double number = 0.0;
    std::string text;
    bool flag = false;
    std::vector<Value> items;

    static Value num(double v) { Value x; x.kind = Kind::number; x.number = v; return x; }
    static Value str(std::string s) { Value x; x.kind = Kind::string; x.text = std::move(s); return x; }
    static Value boolean_(bool b) { Value x; x.kind = Kind::boolean; x.flag = b; return x; }
    static Value arr(std::vector<Value> v) { Value x; x.kind = Kind::array; x.items = std::move(v); return x; }
    static Value nums(const std::vector<double>& v) {
        std::vector<Value> items;
        for (double d : v) items.push_back(num(d));
        return arr(std::move(items));
    }

    bool operator==(const Value& o) const {
        if (kind != o.kind) return false;
        switch (kind) {
        case Kind::number: return number == o.number;
        case Kind::string: return text == o.text;
        case Kind::boolean: return flag == o.flag;
        case Kind::array: return items == o.items;
        }
        return false;
    }
};

enum class Type { number, integer, string, boolean, number_array, integer_array, string_array };

struct KeySpec {
    const char* section;
    const char* key;
    Type type;
    bool required;
    Value fallback;
    double min;
    double max;
};

inline const std::vector<KeySpec>& schema() {
    constexpr double inf = std::numeric_limits<double>::infinity();
    static const std::vector<KeySpec> s = {
        {"problem", "dim", Type::integer, false, Value::num(1), 1, 64},
        {"problem", "horizon", Type::number, false, Value::num(1.0), 1e-12, inf},
        {"problem", "x0", Type::number_array, false, Value::nums({0.0}), -inf, inf},
        {"problem", "drift", Type::string, true, Value::str(""), 0, 0},
        {"problem", "drift_params", Type::number_array, false, Value::nums({}), -inf, inf},
        {"problem", "terminal", Type::string, true, Value::str(""), 0, 0},
        {"problem", "terminal_params", Type::number_array, false, Value::nums({}), -inf, inf},
        {"problem", "driver", Type::string, true, Value::str(""), 0, 0},
        {"problem", "driver_params", Type::number_array, false, Value::nums({}), -inf, inf},
        {"problem", "f", Type::string, false, Value::str("constant"), 0, 0},
        {"problem", "f_params", Type::number_array, false, Value::nums({0.5}), 0, inf},
        {"problem", "alpha", Type::number, false, Value::num(0.0), 0, 0.999999999},
        {"numerics", "steps", Type::integer, false, Value::num(50), 1, 1 << 20},
        {"numerics", "paths", Type::integer, false, Value::num(100000), 2, 1e9},
        {"numerics", "seed", Type::integer, false, Value::num(20240601), 0, 9007199254740992.0},
        {"numerics", "basis", Type::string, false, Value::str("polynomial"), 0, 0},
        {"numerics", "degree", Type::integer, false, Value::num(4), 0, 12},
        {"numerics", "bins", Type::integer, false, Value::num(16), 2, 4096},
        {"numerics", "winsor", Type::number, false, Value::num(2.0), 0, inf},
        {"numerics", "ridge", Type::number, false, Value::num(1e-10), 0, 1},
        {"numerics", "picard_tol", Type::number, false, Value::num(1e-10), 1e-300, 1},
        {"numerics", "picard_max", Type::integer, false, Value::num(50), 1, 100000},
        {"numerics", "mollify_eps", Type::number, false, Value::num(0.0), 0, inf},
        {"numerics", "mollify_points", Type::integer, false, Value::num(32), 4, 4096},
        {"numerics", "truncation", Type::integer, false, Value::num(0), 0, 1e9},
        {"experiment", "kind", Type::string, false, Value::str("solve"), 0, 0},
        {"experiment", "n_list", Type::integer_array, false, Value::nums({1, 2, 3, 4, 5, 6, 7, 8}), 1, 1e9},
        {"experiment", "meshes", Type::integer_array, false, Value::nums({8, 16, 32, 64, 128}), 1, 1 << 20},
        {"experiment", "p", Type::number, false, Value::num(2.0), 2, inf},
        {"experiment", "lags", Type::integer_array, false, Value::nums({}), 1, 1 << 20},
        {"experiment", "fd_h", Type::number, false, Value::num(1e-2), 1e-8, inf},
        {"experiment", "anchors", Type::integer_array, false, Value::nums({}), 0, 1 << 20},
        {"experiment", "quad_nodes", Type::integer, false, Value::num(64), 2, 1024},
        {"experiment", "ladder", Type::string, false, Value::str("terminal"), 0, 0},
        {"experiment", "ladder_size", Type::integer, false, Value::num(8), 1, 1000},
        {"experiment", "tolerance", Type::number, false, Value::num(0.05), 0, inf},
        {"experiment", "decay_ratio", Type::number, false, Value::num(0.1), 0, inf},
        {"experiment", "slope_min", Type::number, false, Value::num(0.7), -inf, inf},
        {"experiment", "slope_max", Type::number, false, Value::num(1.3), -inf, inf},
        {"experiment", "r2_min", Type::number, false, Value::num(0.9), 0, 1},
        {"output", "directory", Type::string, false, Value::str("qfbsde-out"), 0, 0},
        {"output", "formats", Type::string_array, false, Value::arr({Value::str("json"), Value::str("csv")}), 0, 0},
    };
    return s;
}

inline constexpr std::array<std::string_view, 8> kinds = {"solve", "oracle", "convergence", "regularity",
                                                           "truncation", "derivatives", "stability", "bounds"};

struct Diagnostic {
    int line = 0;
    std::string key;
    std::string reason;

    std::string str() const { return "line " + std::to_string(line) + ": " + key + ": " + reason; }
};

/// Fully defaulted configuration keyed by "section.key".
class ExperimentConfig {
public:
    std::map<std::string, Value> values;

    const Value& at(const std::string& k) const {
        auto it = values.find(k);
        require(it != values.end(), Errc::config, "unknown config key " + k);
        return it->second;
    }
    double number(const std::string& k) const { return at(k).number; }
    long long integer(const std::string& k) const { return static_cast<long long>(at(k).number); }
    const std::string& string(const std::string& k) const { return at(k).text; }
    std::vector<double> numbers(const std::string& k) const {
        std::vector<double> out;
        for (const auto& v : at(k).items) out.push_back(v.number);
        return out;
    }
    std::vector<std::string> strings(const std::string& k) const {
        std::vector<std::string> out;
        for (const auto& v : at(k).items) out.push_back(v.text);
        return out;
    }
    bool has_format(const std::string& f) const {
        for (const auto& s : strings("output.formats"))
            if (s == f) return true;
        return false;
    }
    void set(const std::string& k, Value v) { values[k] = std::move(v); }

    bool operator==(const ExperimentConfig& o) const { return values == o.values; }
};

struct ParseResult {
    std::optional<ExperimentConfig> config;
    std::vector<Diagnostic> diagnostics;
    bool ok() const { return config.has_value(); }
};

namespace detail {

class Cursor {
public:
    explicit Cursor(const std::string& s) : s_(s) {}
    void skip_ws() {
        while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
    }
    bool done() {
        skip_ws();
        return pos_ >= s_.size() || s_[pos_] == '#';
    }
    char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }
    bool eat(char c) {
        skip_ws();
        if (peek() == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    std::optional<Value> value(std::string& err) {
        skip_ws();
        if (peek() == '[') {
            ++pos_;
            std::vector<Value> items;
            if (eat(']')) return Value::arr(std::move(items));
            while (true) {
                auto v = scalar(err);
                if (!v) return std::nullopt;
                items.push_back(*v);
                if (eat(']')) break;
                if (!eat(',')) {
                    err = "expected ',' or ']' in array";
                    return std::nullopt;
                }
            }
            return Value::arr(std::move(items));
        }
        return scalar(err);
    }

private:
    std::optional<Value> scalar(std::string& err) {
        skip_ws();
        if (peek() == '"') {
            ++pos_;
            std::string out;
            while (pos_ < s_.size() && s_[pos_] != '"') {
                if (s_[pos_] == '\\' && pos_ + 1 < s_.size()) ++pos_;
                out += s_[pos_++];
            }
            if (pos_ >= s_.size()) {
                err = "unterminated string";
                return std::nullopt;
            }
            ++pos_;
            return Value::str(out);
        }
        std::size_t start = pos_;
        while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '.' ||
                                    s_[pos_] == '-' || s_[pos_] == '+' || s_[pos_] == '_'))
            ++pos_;
        const std::string tok = s_.substr(start, pos_ - start);
        if (tok == "true") return Value::boolean_(true);
        if (tok == "false") return Value::boolean_(false);
        if (tok.empty()) {
            err = "expected a value";
            return std::nullopt;
        }
        try {
            std::size_t used = 0;
            const double v = std::stod(tok, &used);
            if (used != tok.size()) throw std::invalid_argument(tok);
            return Value::num(v);
        } catch (...) {
            err = "malformed value '" + tok + "' (strings must be quoted)";
            return std::nullopt;
        }
    }

    const std::string& s_;
    std::size_t pos_ = 0;
};

inline std::string type_name(Type t) {
    switch (t) {
    case Type::number: return "number";
    case Type::integer: return "integer";
    case Type::string: return "string";
    case Type::boolean: return "boolean";
    case Type::number_array: return "array of numbers";
    case Type::integer_array: return "array of integers";
    case Type::string_array: return "array of strings";
    }
    return "?";
}

inline std::optional<std::string> check_value(const KeySpec& spec, const Value& v) {
    auto in_range = [&](double x) -> std::optional<std::string> {
        if (!std::isfinite(x) || x < spec.min || x > spec.max) {
            std::ostringstream os;
            os << "value " << x << " out of range [" << spec.min << ", " << spec.max << "]";
            return os.str();
        }
        return std::nullopt;
    };
    auto is_int = [](double x) { return std::isfinite(x) && std::floor(x) == x; };
    switch (spec.type) {
    case Type::number:
        if (v.kind != Value::Kind::number) return "expected " + type_name(spec.type);
        return in_range(v.number);
    case Type::integer:
        if (v.kind != Value::Kind::number || !is_int(v.number)) return "expected " + type_name(spec.type);
        return in_range(v.number);
    case Type::string:
        if (v.kind != Value::Kind::string) return "expected " + type_name(spec.type);
        return std::nullopt;
    case Type::boolean:
        if (v.kind != Value::Kind::boolean) return "expected " + type_name(spec.type);
        return std::nullopt;
    case Type::number_array:
    case Type::integer_array:
    case Type::string_array:
        if (v.kind != Value::Kind::array) return "expected " + type_name(spec.type);
        for (const auto& it : v.items) {
            if (spec.type == Type::string_array) {
                if (it.kind != Value::Kind::string) return "expected " + type_name(spec.type);
                continue;
            }
            if (it.kind != Value::Kind::number) return "expected " + type_name(spec.type);
            if (spec.type == Type::integer_array && !is_int(it.number)) return "expected " + type_name(spec.type);
            if (auto e = in_range(it.number)) return e;
        }
        return std::nullopt;
    }
    return std::nullopt;
}

} // namespace detail

/// Cross-key checks: registry names, dimensions and kind-specific constraints.
inline std::vector<Diagnostic> validate(const ExperimentConfig& c, const std::map<std::string, int>& lines = {}) {
    std::vector<Diagnostic> out;
    auto line_of = [&](const std::string& k) {
        auto it = lines.find(k);
        return it == lines.end() ? 0 : it->second;
    };
    auto name_check = [&](const std::string& k, bool ok) {
        if (!ok) out.push_back({line_of(k), k, "unknown name '" + c.string(k) + "'"});
    };
    name_check("problem.drift", registry::contains(registry::drifts, c.string("problem.drift")));
    name_check("problem.terminal", registry::contains(registry::terminals, c.string("problem.terminal")));
    name_check("problem.driver", registry::contains(registry::drivers, c.string("problem.driver")));
    name_check("problem.f", registry::contains(registry::fs, c.string("problem.f")));
    name_check("experiment.kind", registry::contains(kinds, c.string("experiment.kind")));
    const std::string basis = c.string("numerics.basis");
    if (basis != "polynomial" && basis != "piecewise_linear")
        out.push_back({line_of("numerics.basis"), "numerics.basis", "unknown basis '" + basis + "'"});
    const std::string ladder = c.string("experiment.ladder");
    if (ladder != "terminal" && ladder != "driver")
        out.push_back({line_of("experiment.ladder"), "experiment.ladder", "unknown ladder '" + ladder + "'"});
    for (const auto& f : c.strings("output.formats"))
        if (f != "json" && f != "csv" && f != "bin")
            out.push_back({line_of("output.formats"), "output.formats", "unknown format '" + f + "'"});
    const auto dim = static_cast<std::size_t>(c.integer("problem.dim"));
    if (c.numbers("problem.x0").size() != dim)
        out.push_back({line_of("problem.x0"), "problem.x0", "length must equal problem.dim"});
    const auto nl = c.numbers("experiment.n_list");
    for (std::size_t i = 1; i < nl.size(); ++i)
        if (nl[i] <= nl[i - 1]) {
            out.push_back({line_of("experiment.n_list"), "experiment.n_list", "must be strictly increasing"});
            break;
        }
    if (c.number("experiment.slope_min") > c.number("experiment.slope_max"))
        out.push_back({line_of("experiment.slope_min"), "experiment.slope_min", "exceeds experiment.slope_max"});
    return out;
}

inline ExperimentConfig defaults() {
    ExperimentConfig c;
    for (const auto& s : schema()) c.values[std::string(s.section) + "." + s.key] = s.fallback;
    return c;
}

inline ParseResult parse(const std::string& text) {
    ParseResult r;
    ExperimentConfig c = defaults();
    std::map<std::string, int> seen;
    std::string section;
    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        if (!raw.empty() && raw.back() == '\r') raw.pop_back();
        detail::Cursor cur(raw);
        if (cur.done()) continue;
        std::size_t first = raw.find_first_not_of(" \t");
        if (raw[first] == '[') {
            const auto close = raw.find(']', first);
            if (close == std::string::npos) {
                r.diagnostics.push_back({lineno, "", "unterminated section header"});
                continue;
            }
            section = raw.substr(first + 1, close - first - 1);
            if (section != "problem" && section != "numerics" && section != "experiment" && section != "output")
                r.diagnostics.push_back({lineno, section, "unknown section"});
            continue;
        }
        const auto eq = raw.find('=');
        if (eq == std::string::npos) {
            r.diagnostics.push_back({lineno, "", "expected 'key = value'"});
            continue;
        }
        std::string key = raw.substr(first, eq - first);
        while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
        const std::string full = section + "." + key;
        const KeySpec* spec = nullptr;
        for (const auto& s : schema())
            if (section == s.section && key == s.key) spec = &s;
        if (!spec) {
            r.diagnostics.push_back({lineno, full, section.empty() ? "key outside any section" : "unknown key"});
            continue;
        }
        if (auto it = seen.find(full); it != seen.end()) {
            r.diagnostics.push_back(
                {lineno, full, "duplicate key (first at line " + std::to_string(it->second) + ", again at line " +
                                   std::to_string(lineno) + ")"});
            continue;
        }
        seen[full] = lineno;
        const std::string rest = raw.substr(eq + 1);
        detail::Cursor vc(rest);
        std::string err;
        auto v = vc.value(err);
        if (!v) {
            r.diagnostics.push_back({lineno, full, err});
            continue;
        }
        if (!vc.done()) {
            r.diagnostics.push_back({lineno, full, "trailing characters after value"});
            continue;
        }
        if (auto bad = detail::check_value(*spec, *v)) {
            r.diagnostics.push_back({lineno, full, *bad});
            continue;
        }
        c.values[full] = *v;
    }
    for (const auto& s : schema())
        if (s.required && !seen.count(std::string(s.section) + "." + s.key))
            r.diagnostics.push_back({0, std::string(s.section) + "." + s.key, "missing required key"});
    if (r.diagnostics.empty()) {
        auto extra = validate(c, seen);
        r.diagnostics.insert(r.diagnostics.end(), extra.begin(), extra.end());
    }
    if (r.diagnostics.empty()) r.config = std::move(c);
    return r;
}

inline std::string emit_value(const Value& v) {
    switch (v.kind) {
    case Value::Kind::number: {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", v.number);
        return buf;
    }
    case Value::Kind::string: {
        std::string out = "\"";
        for (char ch : v.text) {
            if (ch == '"' || ch == '\\') out += '\\';
            out += ch;
        }
        return out + "\"";
    }
    case Value::Kind::boolean: return v.flag ? "true" : "false";
    case Value::Kind::array: {
        std::string out = "[";
        for (std::size_t i = 0; i < v.items.size(); ++i) {
            if (i) out += ", ";
            out += emit_value(v.items[i]);
        }
        return out + "]";
    }
    }
    return "";
}

/// Canonical text: every key in schema order.
inline std::string emit(const ExperimentConfig& c) {
    std::string out, section;
    for (const auto& s : schema()) {
        if (section != s.section) {
            if (!section.empty()) out += "\n";
            section = s.section;
            out += "[" + section + "]\n";
        }
        const std::string k = std::string(s.section) + "." + s.key;
        out += std::string(s.key) + " = " + emit_value(c.at(k)) + "\n";
    }
    return out;
}

/// FNV-1a 64-bit hash of the canonical text.
inline std::uint64_t hash(const ExperimentConfig& c) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : emit(c)) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

} // namespace qfbsde::config
