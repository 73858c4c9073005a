#pragma once

#include <algorithm>
#include <array>
#include <cassert>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "listsynth/common.hpp"

namespace listsynth {

inline constexpr int kIntMin = -256;
inline constexpr int kIntMax = 255;
inline constexpr int kMaxListLen = 20;
inline constexpr int kMaxInputs = 3;

struct DslConfig {
    int n_examples = 5;    // N
    int nu = 11;           // variable slots
    int max_list_len = 20; // q
    int int_min = kIntMin;
    int int_max = kIntMax;
};

enum class ValueKind : uint8_t { None, Int, List };

// Flat, trivially copyable value. Lists are capped at kMaxListLen and all
// entries fit in [-256, 255], so int16 storage is exact.
struct Value {
    ValueKind kind = ValueKind::None;
    int8_t len = 0;
    std::array<int16_t, kMaxListLen> data{};

    static Value none() { return Value{}; }

    static Value from_int(int v) {
        Value out;
        out.kind = ValueKind::Int;
        out.len = 1;
        out.data[0] = static_cast<int16_t>(v);
        return out;
    }

    static Value from_list(std::span<const int> xs) {
        assert(xs.size() <= kMaxListLen);
        Value out;
        out.kind = ValueKind::List;
        out.len = static_cast<int8_t>(xs.size());
        for (size_t i = 0; i < xs.size(); ++i) out.data[i] = static_cast<int16_t>(xs[i]);
        return out;
    }

    static Value from_list(std::initializer_list<int> xs) {
        return from_list(std::span<const int>(xs.begin(), xs.size()));
    }

    int as_int() const { return data[0]; }
    std::span<const int16_t> items() const { return {data.data(), static_cast<size_t>(len)}; }

    std::vector<int> to_vector() const {
        std::vector<int> out(static_cast<size_t>(len));
        for (int i = 0; i < len; ++i) out[static_cast<size_t>(i)] = data[static_cast<size_t>(i)];
        return out;
    }

    friend bool operator==(const Value& a, const Value& b) {
        if (a.kind != b.kind || a.len != b.len) return false;
        for (int i = 0; i < a.len; ++i)
            if (a.data[static_cast<size_t>(i)] != b.data[static_cast<size_t>(i)]) return false;
        return true;
    }
};

enum class ExecError : uint8_t {
    None,
    EmptyInput,
    OutOfBounds,
    TypeMismatch,
    RangeViolation,
    NullSlot,
};

inline const char* exec_error_name(ExecError e) {
    switch (e) {
        case ExecError::None: return "none";
        case ExecError::EmptyInput: return "empty_input";
        case ExecError::OutOfBounds: return "out_of_bounds";
        case ExecError::TypeMismatch: return "type_mismatch";
        case ExecError::RangeViolation: return "range_violation";
        case ExecError::NullSlot: return "null_slot";
    }
    return "?";
}

struct ExecResult {
    Value value;
    ExecError error = ExecError::None;

    bool ok() const { return error == ExecError::None; }
    static ExecResult fail(ExecError e) { return ExecResult{Value::none(), e}; }
    static ExecResult of(Value v) { return ExecResult{v, ExecError::None}; }
};

enum class Func : uint8_t {
    Head, Tail, Take, Drop, Access, Minimum, Maximum, Reverse, Sort, Sum,
    Map, Filter, Count, ZipWith, Scanl1,
};

enum class Lambda : uint8_t {
    None,
    // int -> int
    Plus1, Minus1, Times2, Times3, Times4, Div2, Div3, Div4, TimesNeg1, Square,
    // int -> bool
    Gt0, Lt0, Even, Odd,
    // int x int -> int
    Add, Sub, Mul, Min, Max,
};

inline constexpr std::array<Lambda, 10> kIntLambdas = {
    Lambda::Plus1, Lambda::Minus1, Lambda::Times2,    Lambda::Times3, Lambda::Times4,
    Lambda::Div2,  Lambda::Div3,   Lambda::Div4,      Lambda::TimesNeg1, Lambda::Square,
};
inline constexpr std::array<Lambda, 4> kBoolLambdas = {Lambda::Gt0, Lambda::Lt0, Lambda::Even,
                                                       Lambda::Odd};
inline constexpr std::array<Lambda, 5> kBinLambdas = {Lambda::Add, Lambda::Sub, Lambda::Mul,
                                                      Lambda::Min, Lambda::Max};

struct Operator {
    Func fn = Func::Head;
    Lambda lam = Lambda::None;

    friend bool operator==(const Operator&, const Operator&) = default;
};

// A statement is an operator plus argument slot indices. arg1 is -1 for
// single-argument operators.
struct Statement {
    int16_t op = 0;
    int16_t arg0 = 0;
    int16_t arg1 = -1;

    friend bool operator==(const Statement&, const Statement&) = default;
};

enum class InputType : uint8_t { List, Int };

struct Program {
    std::vector<InputType> inputs;
    // Statement args reference declaration-order variables: inputs first,
    // then one variable per statement.
    std::vector<Statement> stmts;

    int var_count() const { return static_cast<int>(inputs.size() + stmts.size()); }
    int length() const { return static_cast<int>(stmts.size()); }

    friend bool operator==(const Program&, const Program&) = default;
};

struct Example {
    std::vector<Value> inputs;
    Value output;
};

// ---------------------------------------------------------------------------
// Operator and statement vocabularies
// ---------------------------------------------------------------------------

inline constexpr int kNumOperators = 38;

inline const std::vector<Operator>& operator_table() {
    static const std::vector<Operator> table = [] {
        std::vector<Operator> ops;
        for (Func f : {Func::Head, Func::Tail, Func::Take, Func::Drop, Func::Access,
                       Func::Minimum, Func::Maximum, Func::Reverse, Func::Sort, Func::Sum})
            ops.push_back({f, Lambda::None});
        for (Lambda l : kIntLambdas) ops.push_back({Func::Map, l});
        for (Lambda l : kBoolLambdas) ops.push_back({Func::Filter, l});
        for (Lambda l : kBoolLambdas) ops.push_back({Func::Count, l});
        for (Lambda l : kBinLambdas) ops.push_back({Func::ZipWith, l});
        for (Lambda l : kBinLambdas) ops.push_back({Func::Scanl1, l});
        return ops;
    }();
    return table;
}

inline int operator_index(Func fn, Lambda lam) {
    const auto& table = operator_table();
    for (int i = 0; i < static_cast<int>(table.size()); ++i)
        if (table[static_cast<size_t>(i)].fn == fn && table[static_cast<size_t>(i)].lam == lam)
            return i;
    return -1;
}

inline bool operator_is_binary(const Operator& op) {
    switch (op.fn) {
        case Func::Take:
        case Func::Drop:
        case Func::Access:
        case Func::ZipWith:
            return true;
        default:
            return false;
    }
}

// Argument types expected by an operator; result type it produces.
inline InputType operator_arg_type(const Operator& op, int arg) {
    switch (op.fn) {
        case Func::Take:
        case Func::Drop:
        case Func::Access:
            return arg == 0 ? InputType::Int : InputType::List;
        default:
            return InputType::List;  // both args of ZipWith, single arg otherwise
    }
}

inline InputType operator_result_type(const Operator& op) {
    switch (op.fn) {
        case Func::Head:
        case Func::Tail:
        case Func::Access:
        case Func::Minimum:
        case Func::Maximum:
        case Func::Sum:
        case Func::Count:
            return InputType::Int;
        default:
            return InputType::List;
    }
}

// Canonical statement vocabulary over nu slots: operators in table order,
// argument indices lexicographic. Size is 30*nu + 8*nu^2.
class Vocab {
public:
    explicit Vocab(int nu) : nu_(nu) {
        const auto& ops = operator_table();
        offsets_.resize(ops.size() + 1);
        int off = 0;
        for (size_t i = 0; i < ops.size(); ++i) {
            offsets_[i] = off;
            off += operator_is_binary(ops[i]) ? nu * nu : nu;
        }
        offsets_[ops.size()] = off;
    }

    int nu() const { return nu_; }
    int num_operators() const { return static_cast<int>(operator_table().size()); }
    int num_statements() const { return offsets_.back(); }

    Statement statement_at(int index) const {
        const auto& ops = operator_table();
        auto it = std::upper_bound(offsets_.begin(), offsets_.end(), index);
        int op = static_cast<int>(it - offsets_.begin()) - 1;
        int rem = index - offsets_[static_cast<size_t>(op)];
        Statement s;
        s.op = static_cast<int16_t>(op);
        if (operator_is_binary(ops[static_cast<size_t>(op)])) {
            s.arg0 = static_cast<int16_t>(rem / nu_);
            s.arg1 = static_cast<int16_t>(rem % nu_);
        } else {
            s.arg0 = static_cast<int16_t>(rem);
            s.arg1 = -1;
        }
        return s;
    }

    int statement_index(const Statement& s) const {
        const auto& ops = operator_table();
        int base = offsets_[static_cast<size_t>(s.op)];
        if (operator_is_binary(ops[static_cast<size_t>(s.op)]))
            return base + static_cast<int>(s.arg0) * nu_ + static_cast<int>(s.arg1);
        return base + static_cast<int>(s.arg0);
    }

private:
    int nu_;
    std::vector<int> offsets_;
};

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

namespace detail {

inline int floordiv(int a, int b) {
    int q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

inline int apply_int_lambda(Lambda l, int x) {
    switch (l) {
        case Lambda::Plus1: return x + 1;
        case Lambda::Minus1: return x - 1;
        case Lambda::Times2: return x * 2;
        case Lambda::Times3: return x * 3;
        case Lambda::Times4: return x * 4;
        case Lambda::Div2: return floordiv(x, 2);
        case Lambda::Div3: return floordiv(x, 3);
        case Lambda::Div4: return floordiv(x, 4);
        case Lambda::TimesNeg1: return -x;
        case Lambda::Square: return x * x;
        default: assert(false); return 0;
    }
}

inline bool apply_bool_lambda(Lambda l, int x) {
    switch (l) {
        case Lambda::Gt0: return x > 0;
        case Lambda::Lt0: return x < 0;
        case Lambda::Even: return x % 2 == 0;
        case Lambda::Odd: return x % 2 != 0;
        default: assert(false); return false;
    }
}

inline int apply_bin_lambda(Lambda l, int a, int b) {
    switch (l) {
        case Lambda::Add: return a + b;
        case Lambda::Sub: return a - b;
        case Lambda::Mul: return a * b;
        case Lambda::Min: return std::min(a, b);
        case Lambda::Max: return std::max(a, b);
        default: assert(false); return 0;
    }
}

inline bool in_range(int v) { return v >= kIntMin && v <= kIntMax; }

}  // namespace detail

// Applies one operator to already-extracted argument values. Pure; the
// result respects the value invariants or an error is returned.
inline ExecResult apply_function(const Operator& op, std::span<const Value> args) {
    using detail::in_range;
    const size_t want = operator_is_binary(op) ? 2 : 1;
    if (args.size() != want) return ExecResult::fail(ExecError::TypeMismatch);
    for (size_t i = 0; i < want; ++i) {
        InputType expect = operator_arg_type(op, static_cast<int>(i));
        ValueKind got = args[i].kind;
        if (got == ValueKind::None) return ExecResult::fail(ExecError::NullSlot);
        if (expect == InputType::Int && got != ValueKind::Int)
            return ExecResult::fail(ExecError::TypeMismatch);
        if (expect == InputType::List && got != ValueKind::List)
            return ExecResult::fail(ExecError::TypeMismatch);
    }

    switch (op.fn) {
        case Func::Head: {
            auto xs = args[0].items();
            if (xs.empty()) return ExecResult::fail(ExecError::EmptyInput);
            return ExecResult::of(Value::from_int(xs.front()));
        }
        case Func::Tail: {
            // Last element (the selection counterpart of Head).
            auto xs = args[0].items();
            if (xs.empty()) return ExecResult::fail(ExecError::EmptyInput);
            return ExecResult::of(Value::from_int(xs.back()));
        }
        case Func::Take: {
            int n = args[0].as_int();
            auto xs = args[1].items();
            int take = std::clamp(n, 0, static_cast<int>(xs.size()));
            Value out;
            out.kind = ValueKind::List;
            out.len = static_cast<int8_t>(take);
            for (int i = 0; i < take; ++i) out.data[static_cast<size_t>(i)] = xs[static_cast<size_t>(i)];
            return ExecResult::of(out);
        }
        case Func::Drop: {
            int n = args[0].as_int();
            auto xs = args[1].items();
            int drop = std::clamp(n, 0, static_cast<int>(xs.size()));
            Value out;
            out.kind = ValueKind::List;
            out.len = static_cast<int8_t>(static_cast<int>(xs.size()) - drop);
            for (int i = drop; i < static_cast<int>(xs.size()); ++i)
                out.data[static_cast<size_t>(i - drop)] = xs[static_cast<size_t>(i)];
            return ExecResult::of(out);
        }
        case Func::Access: {
            int n = args[0].as_int();
            auto xs = args[1].items();
            if (n < 0 || n >= static_cast<int>(xs.size()))
                return ExecResult::fail(ExecError::OutOfBounds);
            return ExecResult::of(Value::from_int(xs[static_cast<size_t>(n)]));
        }
        case Func::Minimum: {
            auto xs = args[0].items();
            if (xs.empty()) return ExecResult::fail(ExecError::EmptyInput);
            return ExecResult::of(Value::from_int(*std::min_element(xs.begin(), xs.end())));
        }
        case Func::Maximum: {
            auto xs = args[0].items();
            if (xs.empty()) return ExecResult::fail(ExecError::EmptyInput);
            return ExecResult::of(Value::from_int(*std::max_element(xs.begin(), xs.end())));
        }
        case Func::Reverse: {
            auto xs = args[0].items();
            Value out;
            out.kind = ValueKind::List;
            out.len = static_cast<int8_t>(xs.size());
            for (size_t i = 0; i < xs.size(); ++i) out.data[i] = xs[xs.size() - 1 - i];
            return ExecResult::of(out);
        }
        case Func::Sort: {
            Value out = args[0];
            std::sort(out.data.begin(), out.data.begin() + out.len);
            return ExecResult::of(out);
        }
        case Func::Sum: {
            auto xs = args[0].items();
            int acc = 0;
            for (int16_t x : xs) acc += x;
            if (!in_range(acc)) return ExecResult::fail(ExecError::RangeViolation);
            return ExecResult::of(Value::from_int(acc));
        }
        case Func::Map: {
            auto xs = args[0].items();
            Value out;
            out.kind = ValueKind::List;
            out.len = static_cast<int8_t>(xs.size());
            for (size_t i = 0; i < xs.size(); ++i) {
                int v = detail::apply_int_lambda(op.lam, xs[i]);
                if (!in_range(v)) return ExecResult::fail(ExecError::RangeViolation);
                out.data[i] = static_cast<int16_t>(v);
            }
            return ExecResult::of(out);
        }
        case Func::Filter: {
            auto xs = args[0].items();
            Value out;
            out.kind = ValueKind::List;
            int n = 0;
            for (int16_t x : xs)
                if (detail::apply_bool_lambda(op.lam, x)) out.data[static_cast<size_t>(n++)] = x;
            out.len = static_cast<int8_t>(n);
            return ExecResult::of(out);
        }
        case Func::Count: {
            auto xs = args[0].items();
            int n = 0;
            for (int16_t x : xs)
                if (detail::apply_bool_lambda(op.lam, x)) ++n;
            return ExecResult::of(Value::from_int(n));
        }
        case Func::ZipWith: {
            auto xs = args[0].items();
            auto ys = args[1].items();
            size_t n = std::min(xs.size(), ys.size());
            Value out;
            out.kind = ValueKind::List;
            out.len = static_cast<int8_t>(n);
            for (size_t i = 0; i < n; ++i) {
                int v = detail::apply_bin_lambda(op.lam, xs[i], ys[i]);
                if (!in_range(v)) return ExecResult::fail(ExecError::RangeViolation);
                out.data[i] = static_cast<int16_t>(v);
            }
            return ExecResult::of(out);
        }
        case Func::Scanl1: {
            // Inclusive running fold; empty in, empty out.
            auto xs = args[0].items();
            Value out;
            out.kind = ValueKind::List;
            out.len = static_cast<int8_t>(xs.size());
            if (xs.empty()) return ExecResult::of(out);
            int acc = xs[0];
            out.data[0] = static_cast<int16_t>(acc);
            for (size_t i = 1; i < xs.size(); ++i) {
                acc = detail::apply_bin_lambda(op.lam, acc, xs[i]);
                if (!in_range(acc)) return ExecResult::fail(ExecError::RangeViolation);
                out.data[i] = static_cast<int16_t>(acc);
            }
            return ExecResult::of(out);
        }
    }
    return ExecResult::fail(ExecError::TypeMismatch);
}

// Executes a whole program on concrete inputs under declaration-order
// numbering (no slot dropping). Returns the value of the final statement.
inline ExecResult execute_program(const Program& p, std::span<const Value> inputs) {
    if (inputs.size() != p.inputs.size()) return ExecResult::fail(ExecError::TypeMismatch);
    for (size_t i = 0; i < inputs.size(); ++i) {
        ValueKind want = p.inputs[i] == InputType::Int ? ValueKind::Int : ValueKind::List;
        if (inputs[i].kind != want) return ExecResult::fail(ExecError::TypeMismatch);
    }
    std::vector<Value> env(inputs.begin(), inputs.end());
    env.reserve(inputs.size() + p.stmts.size());
    const auto& ops = operator_table();
    for (const Statement& s : p.stmts) {
        const Operator& op = ops[static_cast<size_t>(s.op)];
        std::array<Value, 2> args;
        int argc = operator_is_binary(op) ? 2 : 1;
        int16_t idx[2] = {s.arg0, s.arg1};
        for (int i = 0; i < argc; ++i) {
            if (idx[i] < 0 || idx[i] >= static_cast<int>(env.size()))
                return ExecResult::fail(ExecError::NullSlot);
            args[static_cast<size_t>(i)] = env[static_cast<size_t>(idx[i])];
        }
        ExecResult r = apply_function(op, {args.data(), static_cast<size_t>(argc)});
        if (!r.ok()) return r;
        env.push_back(r.value);
    }
    if (env.size() == inputs.size()) return ExecResult::fail(ExecError::NullSlot);
    return ExecResult::of(env.back());
}

inline bool satisfies(const Program& p, const Example& ex) {
    ExecResult r = execute_program(p, ex.inputs);
    return r.ok() && r.value == ex.output;
}

struct SolutionScore {
    double u = 0.0;
    std::vector<int> satisfied;  // 1-based example indices
};

inline SolutionScore solution_score(const Program& p, std::span<const Example> examples) {
    SolutionScore out;
    for (size_t i = 0; i < examples.size(); ++i)
        if (satisfies(p, examples[i])) out.satisfied.push_back(static_cast<int>(i) + 1);
    out.u = examples.empty() ? 0.0
                             : static_cast<double>(out.satisfied.size()) /
                                   static_cast<double>(examples.size());
    return out;
}

// ---------------------------------------------------------------------------
// Text format
// ---------------------------------------------------------------------------

inline const char* func_name(Func f) {
    switch (f) {
        case Func::Head: return "HEAD";
        case Func::Tail: return "TAIL";
        case Func::Take: return "TAKE";
        case Func::Drop: return "DROP";
        case Func::Access: return "ACCESS";
        case Func::Minimum: return "MINIMUM";
        case Func::Maximum: return "MAXIMUM";
        case Func::Reverse: return "REVERSE";
        case Func::Sort: return "SORT";
        case Func::Sum: return "SUM";
        case Func::Map: return "MAP";
        case Func::Filter: return "FILTER";
        case Func::Count: return "COUNT";
        case Func::ZipWith: return "ZIPWITH";
        case Func::Scanl1: return "SCANL1";
    }
    return "?";
}

inline const char* lambda_name(Lambda l) {
    switch (l) {
        case Lambda::None: return "";
        case Lambda::Plus1: return "+1";
        case Lambda::Minus1: return "-1";
        case Lambda::Times2: return "*2";
        case Lambda::Times3: return "*3";
        case Lambda::Times4: return "*4";
        case Lambda::Div2: return "/2";
        case Lambda::Div3: return "/3";
        case Lambda::Div4: return "/4";
        case Lambda::TimesNeg1: return "*(-1)";
        case Lambda::Square: return "**2";
        case Lambda::Gt0: return ">0";
        case Lambda::Lt0: return "<0";
        case Lambda::Even: return "EVEN";
        case Lambda::Odd: return "ODD";
        case Lambda::Add: return "+";
        case Lambda::Sub: return "-";
        case Lambda::Mul: return "*";
        case Lambda::Min: return "MIN";
        case Lambda::Max: return "MAX";
    }
    return "?";
}

inline std::string var_name(int index) {
    if (index < 0 || index >= 26) throw ParseError(0, 0, "variable index out of a..z range");
    return std::string(1, static_cast<char>('a' + index));
}

inline std::string format_statement(const Statement& s,
                                    const std::string& lhs_name,
                                    const std::vector<std::string>& arg_names) {
    const Operator& op = operator_table()[static_cast<size_t>(s.op)];
    std::string out = lhs_name + " <- " + func_name(op.fn);
    if (op.lam != Lambda::None) out += std::string(" ") + lambda_name(op.lam);
    out += " " + arg_names[static_cast<size_t>(s.arg0)];
    if (operator_is_binary(op)) out += " " + arg_names[static_cast<size_t>(s.arg1)];
    return out;
}

inline std::string format_program(const Program& p) {
    std::vector<std::string> names;
    for (int i = 0; i < p.var_count(); ++i) names.push_back(var_name(i));
    std::string out;
    for (size_t i = 0; i < p.inputs.size(); ++i) {
        out += names[i] + " <- " + (p.inputs[i] == InputType::List ? "LIST" : "INT");
        out += "\n";
    }
    for (size_t t = 0; t < p.stmts.size(); ++t) {
        out += format_statement(p.stmts[t], names[p.inputs.size() + t], names);
        out += "\n";
    }
    return out;
}

namespace detail {

inline std::vector<std::string> split_tokens(const std::string& line) {
    std::vector<std::string> toks;
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) toks.push_back(tok);
    return toks;
}

inline std::optional<Func> func_from_name(std::string_view name) {
    for (Func f : {Func::Head, Func::Tail, Func::Take, Func::Drop, Func::Access, Func::Minimum,
                   Func::Maximum, Func::Reverse, Func::Sort, Func::Sum, Func::Map, Func::Filter,
                   Func::Count, Func::ZipWith, Func::Scanl1})
        if (name == func_name(f)) return f;
    return std::nullopt;
}

inline std::optional<Lambda> lambda_from_name(std::string_view name) {
    for (Lambda l :
         {Lambda::Plus1, Lambda::Minus1, Lambda::Times2, Lambda::Times3, Lambda::Times4,
          Lambda::Div2, Lambda::Div3, Lambda::Div4, Lambda::TimesNeg1, Lambda::Square, Lambda::Gt0,
          Lambda::Lt0, Lambda::Even, Lambda::Odd, Lambda::Add, Lambda::Sub, Lambda::Mul,
          Lambda::Min, Lambda::Max})
        if (name == lambda_name(l)) return l;
    return std::nullopt;
}

inline bool lambda_matches_func(Func f, Lambda l) {
    auto contains = [l](auto const& arr) {
        return std::find(arr.begin(), arr.end(), l) != arr.end();
    };
    switch (f) {
        case Func::Map: return contains(kIntLambdas);
        case Func::Filter:
        case Func::Count: return contains(kBoolLambdas);
        case Func::ZipWith:
        case Func::Scanl1: return contains(kBinLambdas);
        default: return l == Lambda::None;
    }
}

}  // namespace detail

// Parses a bare statement like "MAP +1 b" with canonical slot names
// (a = slot 0, b = slot 1, ...).
inline Statement parse_statement(const std::string& text, int nu) {
    auto toks = detail::split_tokens(text);
    if (toks.empty()) throw ParseError(1, 1, "empty statement");
    auto fn = detail::func_from_name(toks[0]);
    if (!fn) throw ParseError(1, 1, "unknown function '" + toks[0] + "'");
    size_t cursor = 1;
    Lambda lam = Lambda::None;
    bool higher_order = *fn == Func::Map || *fn == Func::Filter || *fn == Func::Count ||
                        *fn == Func::ZipWith || *fn == Func::Scanl1;
    if (higher_order) {
        if (cursor >= toks.size()) throw ParseError(1, 1, "missing lambda");
        auto l = detail::lambda_from_name(toks[cursor]);
        if (!l || !detail::lambda_matches_func(*fn, *l))
            throw ParseError(1, 1, "bad lambda '" + toks[cursor] + "'");
        lam = *l;
        ++cursor;
    }
    Operator op{*fn, lam};
    int argc = operator_is_binary(op) ? 2 : 1;
    if (static_cast<int>(toks.size() - cursor) != argc)
        throw ParseError(1, 1, "expected " + std::to_string(argc) + " argument(s)");
    Statement s;
    s.op = static_cast<int16_t>(operator_index(*fn, lam));
    int16_t args[2] = {-1, -1};
    for (int i = 0; i < argc; ++i) {
        const std::string& name = toks[cursor + static_cast<size_t>(i)];
        if (name.size() != 1 || name[0] < 'a' || name[0] >= 'a' + nu)
            throw ParseError(1, 1, "slot name out of range: '" + name + "'");
        args[i] = static_cast<int16_t>(name[0] - 'a');
    }
    s.arg0 = args[0];
    s.arg1 = args[1];
    return s;
}

// Parses the canonical one-declaration-per-line program text. Inverse of
// format_program on valid programs.
inline Program parse_program(const std::string& text) {
    Program p;
    std::vector<std::string> names;
    std::istringstream ss(text);
    std::string line;
    int lineno = 0;
    bool saw_stmt = false;
    while (std::getline(ss, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        auto toks = detail::split_tokens(line);
        if (toks.empty()) continue;
        if (toks.size() < 3 || toks[1] != "<-")
            throw ParseError(lineno, 1, "expected '<ident> <- ...'");
        const std::string& lhs = toks[0];
        if (std::find(names.begin(), names.end(), lhs) != names.end())
            throw ParseError(lineno, 1, "redefinition of '" + lhs + "'");
        if (toks[2] == "LIST" || toks[2] == "INT") {
            if (saw_stmt) throw ParseError(lineno, 1, "input declared after statements");
            if (toks.size() != 3) throw ParseError(lineno, 1, "trailing tokens after input type");
            if (p.inputs.size() >= kMaxInputs) throw ParseError(lineno, 1, "too many inputs");
            p.inputs.push_back(toks[2] == "LIST" ? InputType::List : InputType::Int);
            names.push_back(lhs);
            continue;
        }
        saw_stmt = true;
        auto fn = detail::func_from_name(toks[2]);
        if (!fn) throw ParseError(lineno, 1, "unknown function '" + toks[2] + "'");
        size_t cursor = 3;
        Lambda lam = Lambda::None;
        bool higher_order = *fn == Func::Map || *fn == Func::Filter || *fn == Func::Count ||
                            *fn == Func::ZipWith || *fn == Func::Scanl1;
        if (higher_order) {
            if (cursor >= toks.size()) throw ParseError(lineno, 1, "missing lambda");
            auto l = detail::lambda_from_name(toks[cursor]);
            if (!l || !detail::lambda_matches_func(*fn, *l))
                throw ParseError(lineno, 1, "bad lambda '" + toks[cursor] + "'");
            lam = *l;
            ++cursor;
        }
        Operator op{*fn, lam};
        int argc = operator_is_binary(op) ? 2 : 1;
        if (static_cast<int>(toks.size() - cursor) != argc)
            throw ParseError(lineno, 1, "expected " + std::to_string(argc) + " argument(s)");
        Statement s;
        s.op = static_cast<int16_t>(operator_index(*fn, lam));
        int16_t args[2] = {-1, -1};
        for (int i = 0; i < argc; ++i) {
            auto it = std::find(names.begin(), names.end(), toks[cursor + static_cast<size_t>(i)]);
            if (it == names.end())
                throw ParseError(lineno, 1,
                                 "unknown variable '" + toks[cursor + static_cast<size_t>(i)] + "'");
            args[i] = static_cast<int16_t>(it - names.begin());
        }
        s.arg0 = args[0];
        s.arg1 = args[1];
        p.stmts.push_back(s);
        names.push_back(lhs);
    }
    if (p.inputs.empty()) throw ParseError(lineno, 1, "program has no inputs");
    if (p.stmts.empty()) throw ParseError(lineno, 1, "program has no statements");
    return p;
}

}  // namespace listsynth
