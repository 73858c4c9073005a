#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "listsynth/common.hpp"
#include "listsynth/dsl.hpp"

namespace listsynth {

enum class SlotOrigin : uint8_t { Empty, Input, Intermediate, Output };

// Per-example memory of (nu + 1) slots; the output value lives in the extra
// slot at index nu and is never overwritten.
struct ProgramState {
    int rows = 0;       // N examples
    int nu = 0;         // variable slots
    int var_count = 0;  // l: filled variable slots, shared across rows
    std::vector<Value> slots;        // rows * (nu + 1), row-major
    std::vector<SlotOrigin> origins; // nu + 1, shared across rows

    int slot_count() const { return nu + 1; }

    Value& at(int row, int slot) { return slots[static_cast<size_t>(row * slot_count() + slot)]; }
    const Value& at(int row, int slot) const {
        return slots[static_cast<size_t>(row * slot_count() + slot)];
    }

    const Value& output(int row) const { return at(row, nu); }
};

inline ProgramState init_state(std::span<const Example> examples, const DslConfig& cfg) {
    if (examples.empty()) throw ShapeError("init_state: no examples");
    const size_t arity = examples[0].inputs.size();
    for (const Example& ex : examples) {
        if (ex.inputs.size() != arity)
            throw ShapeError("init_state: input counts differ across examples");
        for (size_t i = 0; i < arity; ++i)
            if (ex.inputs[i].kind != examples[0].inputs[i].kind)
                throw ShapeError("init_state: input types differ across examples");
    }
    if (static_cast<int>(arity) > cfg.nu) throw ShapeError("init_state: more inputs than slots");

    ProgramState s;
    s.rows = static_cast<int>(examples.size());
    s.nu = cfg.nu;
    s.var_count = static_cast<int>(arity);
    s.slots.assign(static_cast<size_t>(s.rows) * static_cast<size_t>(s.slot_count()), Value::none());
    s.origins.assign(static_cast<size_t>(s.slot_count()), SlotOrigin::Empty);
    for (size_t i = 0; i < arity; ++i) s.origins[i] = SlotOrigin::Input;
    s.origins[static_cast<size_t>(s.nu)] = SlotOrigin::Output;
    for (int r = 0; r < s.rows; ++r) {
        for (size_t i = 0; i < arity; ++i) s.at(r, static_cast<int>(i)) = examples[static_cast<size_t>(r)].inputs[i];
        s.at(r, s.nu) = examples[static_cast<size_t>(r)].output;
    }
    return s;
}

struct DropExecResult {
    ProgramState state;
    ExecError error = ExecError::None;
    int target_slot = -1;  // where the result landed

    bool ok() const { return error == ExecError::None; }
};

// Executes one statement (slot-relative arguments) against every row. The
// result is appended at slot l while l < nu, otherwise it replaces
// drop_index. The transition fails atomically on the first per-row error.
inline DropExecResult drop_exec(const Statement& stmt, const ProgramState& s, int drop_index,
                                const DslConfig& cfg) {
    (void)cfg;
    DropExecResult out;
    const Operator& op = operator_table()[static_cast<size_t>(stmt.op)];
    const int argc = operator_is_binary(op) ? 2 : 1;
    const int16_t idx[2] = {stmt.arg0, stmt.arg1};

    std::vector<Value> results(static_cast<size_t>(s.rows));
    for (int r = 0; r < s.rows; ++r) {
        std::array<Value, 2> args;
        for (int i = 0; i < argc; ++i) {
            if (idx[i] < 0 || idx[i] >= s.nu) {
                out.error = ExecError::NullSlot;
                return out;
            }
            const Value& v = s.at(r, idx[i]);
            if (v.kind == ValueKind::None) {
                out.error = ExecError::NullSlot;
                return out;
            }
            args[static_cast<size_t>(i)] = v;
        }
        ExecResult r2 = apply_function(op, {args.data(), static_cast<size_t>(argc)});
        if (!r2.ok()) {
            out.error = r2.error;
            return out;
        }
        results[static_cast<size_t>(r)] = r2.value;
    }

    int target;
    ProgramState next = s;
    if (s.var_count < s.nu) {
        target = s.var_count;
        next.var_count = s.var_count + 1;
    } else {
        if (drop_index < 0 || drop_index >= s.nu) {
            out.error = ExecError::NullSlot;
            return out;
        }
        target = drop_index;
    }
    for (int r = 0; r < s.rows; ++r) next.at(r, target) = results[static_cast<size_t>(r)];
    next.origins[static_cast<size_t>(target)] = SlotOrigin::Intermediate;
    out.state = std::move(next);
    out.target_slot = target;
    return out;
}

// ---------------------------------------------------------------------------
// Numeric encoding
// ---------------------------------------------------------------------------

inline constexpr int kNullSentinel = 512;  // one past the 512 shifted values

// N x (nu+1) x (q+2) integer array: per slot, two type bits (list, int)
// followed by q payload entries holding value+256 or the NULL sentinel.
struct StateTensor {
    int rows = 0;
    int slots = 0;
    int width = 0;  // q + 2
    std::vector<int32_t> v;

    int32_t at(int r, int s, int k) const {
        return v[static_cast<size_t>((r * slots + s) * width + k)];
    }
};

inline StateTensor encode_state(const ProgramState& s, const DslConfig& cfg) {
    StateTensor t;
    t.rows = s.rows;
    t.slots = s.slot_count();
    t.width = cfg.max_list_len + 2;
    t.v.assign(static_cast<size_t>(t.rows) * static_cast<size_t>(t.slots) * static_cast<size_t>(t.width), 0);
    size_t pos = 0;
    for (int r = 0; r < t.rows; ++r) {
        for (int slot = 0; slot < t.slots; ++slot) {
            const Value& val = s.at(r, slot);
            int32_t* cell = t.v.data() + pos;
            pos += static_cast<size_t>(t.width);
            switch (val.kind) {
                case ValueKind::None:
                    cell[0] = 0;
                    cell[1] = 0;
                    for (int k = 0; k < cfg.max_list_len; ++k) cell[2 + k] = kNullSentinel;
                    break;
                case ValueKind::Int:
                    cell[0] = 0;
                    cell[1] = 1;
                    cell[2] = val.data[0] - cfg.int_min;
                    for (int k = 1; k < cfg.max_list_len; ++k) cell[2 + k] = kNullSentinel;
                    break;
                case ValueKind::List:
                    cell[0] = 1;
                    cell[1] = 0;
                    for (int k = 0; k < val.len; ++k) cell[2 + k] = val.data[static_cast<size_t>(k)] - cfg.int_min;
                    for (int k = val.len; k < cfg.max_list_len; ++k) cell[2 + k] = kNullSentinel;
                    break;
            }
        }
    }
    return t;
}

// ---------------------------------------------------------------------------
// Ground-truth drop vectors
// ---------------------------------------------------------------------------

namespace detail {

inline bool var_referenced_after(const Program& p, int var, int first_stmt) {
    for (size_t j = static_cast<size_t>(first_stmt); j < p.stmts.size(); ++j) {
        const Statement& s = p.stmts[j];
        if (s.arg0 == var) return true;
        if (s.arg1 >= 0 && s.arg1 == var) return true;
    }
    return false;
}

}  // namespace detail

// Multi-hot over the state after t lines under no-drop numbering: bit set
// iff that slot's variable is not referenced by any statement at steps > t.
// Bits beyond the filled variable count are zero.
inline std::vector<uint8_t> ground_truth_drop(const Program& p, int t, const DslConfig& cfg) {
    const int live_vars = static_cast<int>(p.inputs.size()) + t;
    std::vector<uint8_t> bits(static_cast<size_t>(cfg.nu), 0);
    for (int v = 0; v < live_vars && v < cfg.nu; ++v)
        bits[static_cast<size_t>(v)] = detail::var_referenced_after(p, v, t) ? 0 : 1;
    return bits;
}

// Slot-mapped variant for replays where drops may have rearranged variables:
// slot_vars[s] holds the declaration-order variable in slot s, or -1.
inline std::vector<uint8_t> ground_truth_drop_slots(const Program& p, int t,
                                                    std::span<const int> slot_vars, int nu) {
    std::vector<uint8_t> bits(static_cast<size_t>(nu), 0);
    for (int s = 0; s < nu && s < static_cast<int>(slot_vars.size()); ++s) {
        int v = slot_vars[static_cast<size_t>(s)];
        if (v >= 0 && !detail::var_referenced_after(p, v, t))
            bits[static_cast<size_t>(s)] = 1;
    }
    return bits;
}

// ---------------------------------------------------------------------------
// Program replay through drop_exec
// ---------------------------------------------------------------------------

enum class DropChoice : uint8_t { FirstLive, Random };

struct ReplayStep {
    Statement slot_stmt;               // arguments rebased to state slots
    std::vector<uint8_t> drop_target;  // liveness multi-hot (nu), scanned past this line
    int drop_choice = -1;              // slot replaced, or -1 when appended
    int target_slot = -1;
};

struct Replay {
    bool ok = false;
    ExecError error = ExecError::None;
    int failed_step = -1;              // 0-based statement index that failed
    bool degenerate_drop = false;      // slots full but nothing droppable
    std::vector<ProgramState> states;  // states[t] = after t executed lines
    std::vector<ReplayStep> steps;
};

// Replays p on the given examples via drop_exec, converting declaration-order
// arguments to slot indices as it goes. `rng` is only consulted for
// DropChoice::Random and only when a slot actually has to be evicted.
inline Replay replay_program(const Program& p, std::span<const Example> examples,
                             const DslConfig& cfg, DropChoice choice = DropChoice::FirstLive,
                             Rng* rng = nullptr) {
    Replay out;
    out.states.push_back(init_state(examples, cfg));
    std::vector<int> slot_vars;  // slot -> declaration var
    for (size_t i = 0; i < p.inputs.size(); ++i) slot_vars.push_back(static_cast<int>(i));

    for (size_t i = 0; i < p.stmts.size(); ++i) {
        const ProgramState& cur = out.states.back();
        const Statement& decl = p.stmts[i];
        ReplayStep step;
        step.slot_stmt.op = decl.op;
        auto to_slot = [&](int var) {
            for (size_t s = 0; s < slot_vars.size(); ++s)
                if (slot_vars[s] == var) return static_cast<int>(s);
            return -1;
        };
        int a0 = to_slot(decl.arg0);
        int a1 = decl.arg1 >= 0 ? to_slot(decl.arg1) : -1;
        if (a0 < 0 || (decl.arg1 >= 0 && a1 < 0)) {
            out.error = ExecError::NullSlot;
            out.failed_step = static_cast<int>(i);
            return out;
        }
        step.slot_stmt.arg0 = static_cast<int16_t>(a0);
        step.slot_stmt.arg1 = static_cast<int16_t>(a1);

        step.drop_target = ground_truth_drop_slots(p, static_cast<int>(i) + 1, slot_vars, cfg.nu);

        int drop_index = -1;
        if (cur.var_count >= cfg.nu) {
            std::vector<int> candidates;
            for (int s = 0; s < cfg.nu; ++s)
                if (step.drop_target[static_cast<size_t>(s)]) candidates.push_back(s);
            if (candidates.empty()) {
                out.degenerate_drop = true;
                out.failed_step = static_cast<int>(i);
                out.error = ExecError::NullSlot;
                return out;
            }
            if (choice == DropChoice::Random && rng != nullptr && candidates.size() > 1)
                drop_index = candidates[static_cast<size_t>(
                    rng->uniform_int(0, static_cast<int64_t>(candidates.size()) - 1))];
            else
                drop_index = candidates.front();
        }

        DropExecResult r = drop_exec(step.slot_stmt, cur, drop_index, cfg);
        if (!r.ok()) {
            out.error = r.error;
            out.failed_step = static_cast<int>(i);
            return out;
        }
        step.drop_choice = cur.var_count >= cfg.nu ? drop_index : -1;
        step.target_slot = r.target_slot;
        if (r.target_slot == static_cast<int>(slot_vars.size()))
            slot_vars.push_back(static_cast<int>(p.inputs.size() + i));
        else
            slot_vars[static_cast<size_t>(r.target_slot)] = static_cast<int>(p.inputs.size() + i);
        out.states.push_back(std::move(r.state));
        out.steps.push_back(std::move(step));
    }
    out.ok = true;
    return out;
}

}  // namespace listsynth
