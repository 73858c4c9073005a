#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "listsynth/common.hpp"
#include "listsynth/dsl.hpp"
#include "listsynth/io.hpp"
#include "listsynth/search.hpp"

namespace listsynth {

struct DatagenConfig {
    DslConfig dsl;
    int input_min = -64;  // sampling sub-range, reduces overflow rejections
    int input_max = 63;
    int program_attempts = 100;   // per requested record
    int input_resamples = 500;    // across one program's examples
};

// ---------------------------------------------------------------------------
// Random programs and examples
// ---------------------------------------------------------------------------

// Uniform draw over the type-feasible statements given the declared slot
// types so far.
inline Program gen_program(int length, Rng& rng, const DslConfig& cfg) {
    (void)cfg;
    if (length < 1) throw ConfigError("gen_program: length must be >= 1");
    Program p;
    int n_inputs = static_cast<int>(rng.uniform_int(1, kMaxInputs));
    std::vector<InputType> types;
    for (int tries = 0;; ++tries) {
        types.clear();
        for (int i = 0; i < n_inputs; ++i)
            types.push_back(rng.uniform_int(0, 1) == 0 ? InputType::List : InputType::Int);
        bool has_list = false;
        for (InputType t : types) has_list = has_list || t == InputType::List;
        if (has_list) break;
        if (tries > 16) {
            types[0] = InputType::List;
            break;
        }
    }
    p.inputs = types;

    std::vector<InputType> var_types = types;
    const auto& ops = operator_table();
    std::vector<Statement> feasible;
    for (int step = 0; step < length; ++step) {
        feasible.clear();
        for (size_t op = 0; op < ops.size(); ++op) {
            const bool binary = operator_is_binary(ops[op]);
            for (size_t a0 = 0; a0 < var_types.size(); ++a0) {
                if (var_types[a0] != operator_arg_type(ops[op], 0)) continue;
                if (!binary) {
                    feasible.push_back({static_cast<int16_t>(op), static_cast<int16_t>(a0), -1});
                    continue;
                }
                for (size_t a1 = 0; a1 < var_types.size(); ++a1) {
                    if (var_types[a1] != operator_arg_type(ops[op], 1)) continue;
                    feasible.push_back({static_cast<int16_t>(op), static_cast<int16_t>(a0),
                                        static_cast<int16_t>(a1)});
                }
            }
        }
        // A list variable always exists, so some unary statement is feasible.
        Statement pick = feasible[static_cast<size_t>(
            rng.uniform_int(0, static_cast<int64_t>(feasible.size()) - 1))];
        p.stmts.push_back(pick);
        var_types.push_back(operator_result_type(ops[static_cast<size_t>(pick.op)]));
    }
    return p;
}

inline Value sample_input(InputType type, Rng& rng, const DatagenConfig& cfg) {
    if (type == InputType::Int)
        return Value::from_int(static_cast<int>(rng.uniform_int(cfg.input_min, cfg.input_max)));
    int len = static_cast<int>(rng.uniform_int(1, cfg.dsl.max_list_len));
    std::vector<int> xs(static_cast<size_t>(len));
    for (int& x : xs) x = static_cast<int>(rng.uniform_int(cfg.input_min, cfg.input_max));
    return Value::from_list(xs);
}

// Samples inputs until the program executes within bounds on all of them;
// empty when the resample budget runs out.
inline std::optional<std::vector<Example>> gen_examples(const Program& p, int n, Rng& rng,
                                                        const DatagenConfig& cfg) {
    std::vector<Example> out;
    int resamples = 0;
    while (static_cast<int>(out.size()) < n) {
        Example ex;
        for (InputType t : p.inputs) ex.inputs.push_back(sample_input(t, rng, cfg));
        ExecResult r = execute_program(p, ex.inputs);
        if (!r.ok()) {
            if (++resamples > cfg.input_resamples) return std::nullopt;
            continue;
        }
        ex.output = r.value;
        out.push_back(std::move(ex));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Functional non-equivalence
// ---------------------------------------------------------------------------

// Programs bucketed by input signature; only same-signature programs can
// satisfy each other's examples.
class Corpus {
public:
    void insert(const DatasetRecord& r) {
        buckets_[signature(r.program)].push_back(r.program);
        ++size_;
    }

    size_t size() const { return size_; }

    // True when some stored program of length <= the candidate's satisfies
    // every candidate example.
    bool has_equivalent(const DatasetRecord& candidate) const {
        auto it = buckets_.find(signature(candidate.program));
        if (it == buckets_.end()) return false;
        for (const Program& q : it->second) {
            if (q.length() > candidate.program.length()) continue;
            bool all = true;
            for (const Example& ex : candidate.examples) {
                if (!satisfies(q, ex)) {
                    all = false;
                    break;
                }
            }
            if (all) return true;
        }
        return false;
    }

private:
    static std::string signature(const Program& p) {
        std::string s;
        for (InputType t : p.inputs) s += t == InputType::List ? 'L' : 'I';
        return s;
    }

    std::map<std::string, std::vector<Program>> buckets_;
    size_t size_ = 0;
};

// Keep the candidate only if no shorter-or-equal corpus program satisfies
// its examples.
inline bool equiv_filter(const DatasetRecord& candidate, const Corpus& corpus) {
    return !corpus.has_equivalent(candidate);
}

// ---------------------------------------------------------------------------
// Dataset construction
// ---------------------------------------------------------------------------

struct DatasetSpec {
    std::vector<std::pair<int, int>> counts;  // (length, records) pairs, lengths ascending
    uint64_t seed = 0;
};

struct DatagenStats {
    int64_t generated = 0;
    int64_t rejected_examples = 0;
    int64_t rejected_equivalent = 0;
};

// Generates records length by length, filtering each candidate against
// everything produced so far (and any external corpus, e.g. the training
// set while building a test split).
inline std::vector<DatasetRecord> build_dataset(const DatasetSpec& spec, const DatagenConfig& cfg,
                                                Corpus& corpus, DatagenStats* stats = nullptr) {
    std::vector<DatasetRecord> out;
    Rng rng(spec.seed);
    for (auto [length, want] : spec.counts) {
        int made = 0;
        int64_t attempts = 0;
        const int64_t max_attempts =
            static_cast<int64_t>(want) * static_cast<int64_t>(cfg.program_attempts);
        while (made < want && attempts < max_attempts) {
            ++attempts;
            DatasetRecord record;
            record.program = gen_program(length, rng, cfg.dsl);
            auto examples = gen_examples(record.program, cfg.dsl.n_examples, rng, cfg);
            if (!examples) {
                if (stats) ++stats->rejected_examples;
                continue;
            }
            record.examples = std::move(*examples);
            record.text = format_program(record.program);
            if (!equiv_filter(record, corpus)) {
                if (stats) ++stats->rejected_equivalent;
                continue;
            }
            corpus.insert(record);
            out.push_back(std::move(record));
            ++made;
            if (stats) ++stats->generated;
        }
        if (made < want)
            throw ConfigError("datagen: attempt budget exhausted at length " +
                              std::to_string(length));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Aggregator instances
// ---------------------------------------------------------------------------

struct TimeoutPolicy {
    enum class Tag { Fixed05, Random, Triple };
    Tag tag = Tag::Fixed05;
    // The budget corresponding to a policy value of 1.0; policy draws scale
    // it (e.g. fixed 0.5 of nodes:1200 gives 600 nodes per PE search).
    SearchBudget unit{SearchBudget::Kind::Nodes, 0.0, 1200};

    static Tag tag_from_name(const std::string& s) {
        if (s == "fixed") return Tag::Fixed05;
        if (s == "random") return Tag::Random;
        if (s == "triple") return Tag::Triple;
        throw ConfigError("unknown timeout policy '" + s + "'");
    }

    std::vector<double> draw_scales(Rng& rng) const {
        switch (tag) {
            case Tag::Fixed05:
                return {0.5};
            case Tag::Random: {
                std::vector<double> out;
                for (int i = 0; i < 2; ++i)
                    out.push_back(0.1 * static_cast<double>(rng.uniform_int(1, 9)));
                return out;
            }
            case Tag::Triple:
                return {0.4, 0.5, 0.6};
        }
        return {0.5};
    }
};

struct InstanceStats {
    int64_t emitted = 0;
    int64_t omitted_perfect = 0;
    int64_t omitted_no_solution = 0;
};

// Runs PE searches per record under the policy's budgets and keeps the
// instances the omission rules allow: no perfect solution, at least one
// found solution.
inline std::vector<AggregatorInstance> build_aggregator_instances(
    std::span<const DatasetRecord> records, const EncoderModel<float>& pe_model,
    const TimeoutPolicy& policy, PeMode mode, const DslConfig& cfg, const Vocab& vocab,
    uint64_t seed, int max_depth, InstanceStats* stats = nullptr) {
    std::vector<AggregatorInstance> out;
    Rng rng(seed);
    GpsPredictor predictor(pe_model, cfg);
    for (const DatasetRecord& record : records) {
        for (double scale : policy.draw_scales(rng)) {
            SearchBudget per_example = policy.unit.scaled(scale);
            SearchBudget total = per_example.scaled(static_cast<double>(cfg.n_examples) + 1.0);
            Meter meter(total);
            PeSearchReport report = pe_searches(record.examples, predictor, per_example, mode,
                                                meter, CabSchedule{}, max_depth, cfg, vocab);
            if (report.perfect) {
                if (stats) ++stats->omitted_perfect;
                continue;
            }
            AggregatorInstance inst;
            inst.global = record.program;
            inst.global_text = record.text;
            inst.examples = record.examples;
            for (PESolution& sol : report.solutions)
                if (sol.found) inst.pe.push_back(std::move(sol));
            if (inst.pe.empty()) {
                if (stats) ++stats->omitted_no_solution;
                continue;
            }
            out.push_back(std::move(inst));
            if (stats) ++stats->emitted;
        }
    }
    return out;
}

}  // namespace listsynth
