#pragma once

#include <cstdint>
#include <vector>

#include "listsynth/dsl.hpp"
#include "listsynth/state.hpp"

namespace listsynth {

// A per-example search result: the program (when found), its solution score
// over the full example set, and the trace bookkeeping downstream consumers
// need (vocabulary statement indices are slot-relative).
struct PESolution {
    bool found = false;
    int example_index = -1;  // 0-based example the search was conditioned on
    Program program;
    std::vector<int32_t> stmt_vocab;  // per step
    std::vector<int32_t> op_vocab;    // per step
    double u = 0.0;
    std::vector<int> satisfied;  // 1-based example indices
    int64_t nodes = 0;
    double seconds = 0.0;
};

// Rebase a program's statements from declaration-order variables to state
// slots, simulating append/replace without executing values. Returns false
// when the slots fill up with nothing droppable.
inline bool slot_statements(const Program& p, int nu, std::vector<Statement>& out) {
    out.clear();
    std::vector<int> slot_vars;
    for (size_t i = 0; i < p.inputs.size(); ++i) slot_vars.push_back(static_cast<int>(i));
    if (static_cast<int>(slot_vars.size()) > nu) return false;
    for (size_t i = 0; i < p.stmts.size(); ++i) {
        const Statement& decl = p.stmts[i];
        auto to_slot = [&](int var) {
            for (size_t s = 0; s < slot_vars.size(); ++s)
                if (slot_vars[s] == var) return static_cast<int>(s);
            return -1;
        };
        Statement s;
        s.op = decl.op;
        int a0 = to_slot(decl.arg0);
        int a1 = decl.arg1 >= 0 ? to_slot(decl.arg1) : -1;
        if (a0 < 0 || (decl.arg1 >= 0 && a1 < 0)) return false;
        s.arg0 = static_cast<int16_t>(a0);
        s.arg1 = static_cast<int16_t>(a1);
        out.push_back(s);

        int new_var = static_cast<int>(p.inputs.size() + i);
        if (static_cast<int>(slot_vars.size()) < nu) {
            slot_vars.push_back(new_var);
        } else {
            int drop = -1;
            for (size_t slot = 0; slot < slot_vars.size(); ++slot) {
                if (!detail::var_referenced_after(p, slot_vars[slot], static_cast<int>(i) + 1)) {
                    drop = static_cast<int>(slot);
                    break;
                }
            }
            if (drop < 0) return false;
            slot_vars[static_cast<size_t>(drop)] = new_var;
        }
    }
    return true;
}

// Fills stmt_vocab/op_vocab for a solution whose program is set.
inline bool annotate_solution(PESolution& sol, const Vocab& vocab) {
    std::vector<Statement> slots;
    if (!slot_statements(sol.program, vocab.nu(), slots)) return false;
    sol.stmt_vocab.clear();
    sol.op_vocab.clear();
    for (const Statement& s : slots) {
        sol.stmt_vocab.push_back(vocab.statement_index(s));
        sol.op_vocab.push_back(s.op);
    }
    return true;
}

}  // namespace listsynth
