#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "listsynth/datagen.hpp"
#include "listsynth/io.hpp"
#include "listsynth/search.hpp"
#include "listsynth/training.hpp"

namespace listsynth {

inline json synthesis_result_to_json(const SynthesisResult& r) {
    json j;
    j["status"] = r.solved ? "solved" : "failed";
    j["program"] = r.solved ? json(r.program_text) : json(nullptr);
    j["perfect_pe"] = r.perfect_pe;
    j["mode"] = agg_mode_name(r.mode);
    j["alpha"] = r.alpha;
    j["variant"] = key_variant_name(r.variant);
    j["seed"] = r.seed;
    j["keyset_size"] = r.keyset_size;
    j["nodes_pe"] = r.nodes_pe;
    j["nodes_agg"] = r.nodes_agg;
    j["agg_budget_nodes"] = r.agg_budget_nodes;
    if (!r.node_mode) j["seconds_total"] = r.seconds_total;
    json iters = json::array();
    for (auto [beam, expansion] : r.iterations) {
        json it;
        it["beam"] = beam;
        it["expansion"] = expansion;
        iters.push_back(it);
    }
    j["iterations"] = iters;
    json pe = json::array();
    for (const PESolution& sol : r.pe) {
        json p;
        p["example"] = sol.example_index + 1;
        p["found"] = sol.found;
        p["program"] = sol.found ? json(format_program(sol.program)) : json(nullptr);
        p["u"] = sol.u;
        p["satisfied"] = sol.satisfied;
        p["nodes"] = sol.nodes;
        if (!r.node_mode) p["seconds"] = sol.seconds;
        pe.push_back(p);
    }
    j["pe"] = pe;
    if (!r.trace.empty()) {
        json trace = json::array();
        for (const TraceEvent& e : r.trace)
            trace.push_back(json::array({e.iteration, e.depth, e.parent, e.stmt}));
        j["trace"] = trace;
    }
    return j;
}

// ---------------------------------------------------------------------------
// Success-ratio evaluation
// ---------------------------------------------------------------------------

struct EvalOutcome {
    std::vector<SynthesisResult> results;
    std::vector<json> task_lines;
    json summary;
    double success_ratio = 0.0;
};

// Runs the pipeline on every task, re-verifying each claimed success by
// executing the program on all examples. max_depth follows each record's
// ground-truth length unless the config pins one.
inline EvalOutcome eval_success(std::span<const DatasetRecord> split,
                                const EncoderModel<float>* gps, const EncoderModel<float>* pe,
                                const CrossAggregator<float>* ca, PipelineConfig cfg,
                                const DslConfig& dsl_cfg, const Vocab& vocab,
                                int fixed_depth = 0) {
    EvalOutcome out;
    int64_t solved = 0;
    std::vector<int64_t> node_counts;
    std::vector<double> seconds;
    for (size_t i = 0; i < split.size(); ++i) {
        PipelineConfig task_cfg = cfg;
        task_cfg.max_depth = fixed_depth > 0 ? fixed_depth : split[i].program.length();
        task_cfg.seed = splitmix64(cfg.seed ^ (0x517cc1b7ULL + i));
        SynthesisResult r =
            synthesize(split[i].examples, gps, pe, ca, task_cfg, dsl_cfg, vocab);
        if (r.solved) {
            bool verified = true;
            for (const Example& ex : split[i].examples) verified = verified && satisfies(r.program, ex);
            if (!verified) r.solved = false;  // never report an unverified success
        }
        if (r.solved) ++solved;
        node_counts.push_back(r.nodes_pe + r.nodes_agg);
        seconds.push_back(r.seconds_total);
        json line = synthesis_result_to_json(r);
        line["task"] = static_cast<int>(i);
        out.task_lines.push_back(std::move(line));
        out.results.push_back(std::move(r));
    }
    out.success_ratio =
        split.empty() ? 0.0 : static_cast<double>(solved) / static_cast<double>(split.size());

    auto mean = [](const auto& xs) {
        double total = 0;
        for (auto x : xs) total += static_cast<double>(x);
        return xs.empty() ? 0.0 : total / static_cast<double>(xs.size());
    };
    auto median = [](auto xs) {
        if (xs.empty()) return 0.0;
        std::sort(xs.begin(), xs.end());
        size_t mid = xs.size() / 2;
        return xs.size() % 2 == 1 ? static_cast<double>(xs[mid])
                                  : (static_cast<double>(xs[mid - 1]) + static_cast<double>(xs[mid])) / 2.0;
    };

    out.summary["summary"] = true;
    out.summary["tasks"] = split.size();
    out.summary["solved"] = solved;
    out.summary["success_ratio"] = out.success_ratio;
    out.summary["mode"] = agg_mode_name(cfg.mode);
    out.summary["alpha"] = cfg.alpha;
    out.summary["seed"] = cfg.seed;
    out.summary["total_budget"] = cfg.total_budget.to_string();
    out.summary["peps_budget"] = cfg.peps_budget.to_string();
    out.summary["mean_nodes"] = mean(node_counts);
    out.summary["median_nodes"] = median(node_counts);
    if (cfg.total_budget.kind == SearchBudget::Kind::Seconds) {
        out.summary["mean_seconds"] = mean(seconds);
        out.summary["median_seconds"] = median(seconds);
    }
    return out;
}

// ---------------------------------------------------------------------------
// tot/ind analysis
// ---------------------------------------------------------------------------

struct TotIndRow {
    int k = 0;
    double ind = 0.0;
    double tot = 0.0;
};

struct TotIndReport {
    std::vector<TotIndRow> rows;
    json to_json() const {
        json j;
        j["analysis"] = "tot_ind";
        json rows_j = json::array();
        for (const TotIndRow& r : rows) {
            json row;
            row["k"] = r.k;
            row["ind"] = r.ind;
            row["tot"] = r.tot;
            rows_j.push_back(row);
        }
        j["rows"] = rows_j;
        return j;
    }
};

// Sequential PE searches with budget total/N per example; ind(k) succeeds
// when a single solution satisfies >= k examples, tot(k) when the union of
// satisfied sets does. ind(k) success implies tot(k) success by definition,
// asserted here over every task.
inline TotIndReport analyze_tot_ind(std::span<const DatasetRecord> split,
                                    const EncoderModel<float>& pe_model,
                                    SearchBudget per_example, int k_max, const DslConfig& dsl_cfg,
                                    const Vocab& vocab, int fixed_depth = 0) {
    TotIndReport report;
    const int n = dsl_cfg.n_examples;
    std::vector<int64_t> ind_wins(static_cast<size_t>(k_max) + 1, 0);
    std::vector<int64_t> tot_wins(static_cast<size_t>(k_max) + 1, 0);
    GpsPredictor predictor(pe_model, dsl_cfg);
    for (const DatasetRecord& record : split) {
        SearchBudget total = per_example.scaled(static_cast<double>(n));
        Meter meter(total);
        int depth = fixed_depth > 0 ? fixed_depth : record.program.length();
        PeSearchReport pe = pe_searches(record.examples, predictor, per_example, PeMode::All,
                                        meter, CabSchedule{}, depth, dsl_cfg, vocab);
        size_t best_single = 0;
        std::vector<bool> covered(static_cast<size_t>(n), false);
        for (const PESolution& sol : pe.solutions) {
            best_single = std::max(best_single, sol.satisfied.size());
            for (int idx1 : sol.satisfied) covered[static_cast<size_t>(idx1 - 1)] = true;
        }
        size_t union_size = 0;
        for (bool c : covered) union_size += c ? 1 : 0;
        for (int k = 1; k <= k_max; ++k) {
            bool ind_ok = best_single >= static_cast<size_t>(k);
            bool tot_ok = union_size >= static_cast<size_t>(k);
            if (ind_ok && !tot_ok)
                throw std::logic_error("tot/ind dominance violated");
            if (ind_ok) ++ind_wins[static_cast<size_t>(k)];
            if (tot_ok) ++tot_wins[static_cast<size_t>(k)];
        }
    }
    for (int k = 1; k <= k_max; ++k) {
        TotIndRow row;
        row.k = k;
        row.ind = split.empty() ? 0.0
                                : static_cast<double>(ind_wins[static_cast<size_t>(k)]) /
                                      static_cast<double>(split.size());
        row.tot = split.empty() ? 0.0
                                : static_cast<double>(tot_wins[static_cast<size_t>(k)]) /
                                      static_cast<double>(split.size());
        report.rows.push_back(row);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Aggregate analyses over evaluation results
// ---------------------------------------------------------------------------

struct OverlapReport {
    double operator_overlap = 0.0;   // the headline metric
    double statement_overlap = 0.0;  // argument-sensitive extra column
    int64_t statements = 0;
};

// Fraction of ground-truth statements whose operator appears anywhere in the
// discovered PE solutions of the same task.
inline OverlapReport operator_overlap(std::span<const SynthesisResult> results,
                                      std::span<const DatasetRecord> split, const Vocab& vocab) {
    OverlapReport report;
    int64_t op_hits = 0, stmt_hits = 0, total = 0;
    for (size_t i = 0; i < results.size() && i < split.size(); ++i) {
        std::vector<bool> ops_present(static_cast<size_t>(vocab.num_operators()), false);
        std::vector<int32_t> stmts_present;
        for (const PESolution& sol : results[i].pe) {
            if (!sol.found) continue;
            for (int32_t op : sol.op_vocab) ops_present[static_cast<size_t>(op)] = true;
            for (int32_t s : sol.stmt_vocab) stmts_present.push_back(s);
        }
        std::vector<Statement> gt_slots;
        if (!slot_statements(split[i].program, vocab.nu(), gt_slots)) continue;
        for (const Statement& s : gt_slots) {
            ++total;
            if (ops_present[static_cast<size_t>(s.op)]) ++op_hits;
            int32_t idx = vocab.statement_index(s);
            if (std::find(stmts_present.begin(), stmts_present.end(), idx) != stmts_present.end())
                ++stmt_hits;
        }
    }
    report.statements = total;
    if (total > 0) {
        report.operator_overlap = static_cast<double>(op_hits) / static_cast<double>(total);
        report.statement_overlap = static_cast<double>(stmt_hits) / static_cast<double>(total);
    }
    return report;
}

// Per-operator failure rates: occurrences inside failed tasks' ground-truth
// programs over total occurrences.
inline json failure_breakdown(std::span<const SynthesisResult> results,
                              std::span<const DatasetRecord> split) {
    std::map<std::string, std::pair<int64_t, int64_t>> counts;  // name -> (failed, total)
    for (size_t i = 0; i < results.size() && i < split.size(); ++i) {
        for (const Statement& s : split[i].program.stmts) {
            const Operator& op = operator_table()[static_cast<size_t>(s.op)];
            std::string name = func_name(op.fn);
            if (op.lam != Lambda::None) name += std::string(" ") + lambda_name(op.lam);
            auto& entry = counts[name];
            ++entry.second;
            if (!results[i].solved) ++entry.first;
        }
    }
    json j;
    j["analysis"] = "failure_breakdown";
    json rows = json::array();
    for (const auto& [name, c] : counts) {
        json row;
        row["operator"] = name;
        row["failed"] = c.first;
        row["total"] = c.second;
        row["rate"] = c.second > 0 ? static_cast<double>(c.first) / static_cast<double>(c.second)
                                   : 0.0;
        rows.push_back(row);
    }
    j["rows"] = rows;
    return j;
}

inline double perfect_pe_fraction(std::span<const SynthesisResult> results) {
    if (results.empty()) return 0.0;
    int64_t perfect = 0;
    for (const SynthesisResult& r : results) perfect += r.perfect_pe ? 1 : 0;
    return static_cast<double>(perfect) / static_cast<double>(results.size());
}

// Success ratio against held-out examples: a task counts only when it was
// solved and its program satisfies every extra example.
inline double intent_generalization(std::span<const SynthesisResult> results,
                                    std::span<const std::vector<Example>> extra) {
    if (results.empty()) return 0.0;
    int64_t wins = 0;
    for (size_t i = 0; i < results.size(); ++i) {
        if (!results[i].solved) continue;
        bool all = true;
        for (const Example& ex : extra[i]) all = all && satisfies(results[i].program, ex);
        if (all) ++wins;
    }
    return static_cast<double>(wins) / static_cast<double>(results.size());
}

// ---------------------------------------------------------------------------
// Attention export
// ---------------------------------------------------------------------------

struct AttentionTrace {
    std::vector<KeyDescriptor> keys;                      // L descriptors
    std::vector<std::vector<std::vector<float>>> steps;   // step -> head -> L weights
    std::vector<int32_t> step_targets;                    // teacher-forced statement per step

    json to_json() const {
        json j;
        j["analysis"] = "attention";
        json keys_j = json::array();
        for (const KeyDescriptor& d : keys)
            keys_j.push_back(json::array({d.m, d.j, d.t, d.stmt}));
        j["keys"] = keys_j;
        json steps_j = json::array();
        for (size_t t = 0; t < steps.size(); ++t) {
            json s;
            s["step"] = t;
            s["target"] = step_targets.size() > t ? json(step_targets[t]) : json(nullptr);
            s["heads"] = steps[t];
            steps_j.push_back(s);
        }
        j["steps"] = steps_j;
        return j;
    }
};

// Teacher-forced attention weights for a program (the ground truth when
// given, otherwise whatever the pipeline just synthesized) over the keyset
// built from its PE solutions.
inline AttentionTrace export_attention(const Program& program, std::span<const Example> examples,
                                       std::span<const PESolution> solutions,
                                       const EncoderModel<float>& gps_model,
                                       const EncoderModel<float>& key_encoder,
                                       const CrossAggregator<float>& ca, const DslConfig& cfg,
                                       const Vocab& vocab) {
    AttentionTrace trace;
    auto tuples = build_key_tuples(solutions, key_variant_from_name(ca.h.variant),
                                   static_cast<int>(examples.size()));
    KeySet<float> keys = assemble_kvu<float>(tuples, solutions, examples, key_encoder, cfg, vocab);
    if (keys.empty()) return trace;
    trace.keys = keys.entries;

    Replay rep = replay_program(program, examples, cfg, DropChoice::FirstLive);
    const int t_max = static_cast<int>(rep.steps.size());
    for (int t = 0; t < t_max; ++t) {
        StateTensor st = encode_state(rep.states[static_cast<size_t>(t)], cfg);
        ag::NoGradGuard ng;
        ag::Var<float> q = gps_model.embed_batch({&st, 1});
        std::vector<std::vector<float>> attention;
        std::vector<int> steps = {t};
        ca.predict_stmt(q, steps, keys, &attention);
        trace.steps.push_back(std::move(attention));
        trace.step_targets.push_back(vocab.statement_index(rep.steps[static_cast<size_t>(t)].slot_stmt));
    }
    return trace;
}

// ---------------------------------------------------------------------------
// Nearest statements
// ---------------------------------------------------------------------------

enum class DistanceMetric : uint8_t { Euclidean, Cosine };

// Ranks statements by distance between rows of the CA statement projection
// (each output column is one statement's embedding). The queried statement
// itself is excluded.
inline std::vector<std::pair<int, double>> nearest_statements(const CrossAggregator<float>& ca,
                                                              int stmt_index, int k,
                                                              DistanceMetric metric) {
    const auto w = ca.params.at("ca.out.stmt.w");  // Z x n_s, statement per column
    const int z = w.rows();
    const int n_s = w.cols();
    if (stmt_index < 0 || stmt_index >= n_s) throw ConfigError("statement index out of range");
    auto column = [&](int idx) {
        std::vector<double> col(static_cast<size_t>(z));
        for (int r = 0; r < z; ++r)
            col[static_cast<size_t>(r)] =
                static_cast<double>(w.data()[static_cast<size_t>(r) * static_cast<size_t>(n_s) +
                                             static_cast<size_t>(idx)]);
        return col;
    };
    std::vector<double> base = column(stmt_index);
    std::vector<std::pair<int, double>> all;
    for (int i = 0; i < n_s; ++i) {
        if (i == stmt_index) continue;
        std::vector<double> other = column(i);
        double d = 0;
        if (metric == DistanceMetric::Euclidean) {
            for (int r = 0; r < z; ++r) {
                double diff = base[static_cast<size_t>(r)] - other[static_cast<size_t>(r)];
                d += diff * diff;
            }
            d = std::sqrt(d);
        } else {
            double dot = 0, na = 0, nb = 0;
            for (int r = 0; r < z; ++r) {
                dot += base[static_cast<size_t>(r)] * other[static_cast<size_t>(r)];
                na += base[static_cast<size_t>(r)] * base[static_cast<size_t>(r)];
                nb += other[static_cast<size_t>(r)] * other[static_cast<size_t>(r)];
            }
            d = 1.0 - dot / (std::sqrt(na) * std::sqrt(nb) + 1e-12);
        }
        all.emplace_back(i, d);
    }
    std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second < b.second;
        return a.first < b.first;
    });
    if (k >= 0 && static_cast<size_t>(k) < all.size()) all.resize(static_cast<size_t>(k));
    return all;
}

}  // namespace listsynth
