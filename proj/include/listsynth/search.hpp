#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "listsynth/aggregator.hpp"
#include "listsynth/common.hpp"
#include "listsynth/encoder.hpp"
#include "listsynth/solutions.hpp"
#include "listsynth/state.hpp"

namespace listsynth {

// ---------------------------------------------------------------------------
// Budgets
// ---------------------------------------------------------------------------

// Wall-clock budgets match the deployment setting; node budgets count child
// expansions and make every search fully deterministic.
struct SearchBudget {
    enum class Kind { Seconds, Nodes };
    Kind kind = Kind::Nodes;
    double seconds = 0.0;
    int64_t nodes = 0;

    static SearchBudget parse(const std::string& text) {
        SearchBudget b;
        auto colon = text.find(':');
        if (colon == std::string::npos) throw ConfigError("budget must be seconds:<f> or nodes:<n>");
        std::string head = text.substr(0, colon);
        std::string tail = text.substr(colon + 1);
        if (head == "seconds") {
            b.kind = Kind::Seconds;
            b.seconds = std::stod(tail);
        } else if (head == "nodes") {
            b.kind = Kind::Nodes;
            b.nodes = std::stoll(tail);
        } else {
            throw ConfigError("unknown budget kind '" + head + "'");
        }
        return b;
    }

    std::string to_string() const {
        if (kind == Kind::Seconds) return "seconds:" + std::to_string(seconds);
        return "nodes:" + std::to_string(nodes);
    }

    SearchBudget scaled(double factor) const {
        SearchBudget b = *this;
        if (kind == Kind::Seconds)
            b.seconds *= factor;
        else
            b.nodes = static_cast<int64_t>(static_cast<double>(b.nodes) * factor);
        return b;
    }
};

// Tracks consumption against a budget; an optional parent enforces a shared
// pipeline-wide limit at the same time.
class Meter {
public:
    explicit Meter(SearchBudget budget, Meter* parent = nullptr)
        : budget_(budget), parent_(parent), start_(std::chrono::steady_clock::now()) {}

    bool exhausted() const {
        if (parent_ && parent_->exhausted()) return true;
        if (budget_.kind == SearchBudget::Kind::Nodes) return used_ >= budget_.nodes;
        return elapsed_seconds() >= budget_.seconds;
    }

    // Accounts one expanded node; false when the budget no longer allows it.
    bool try_consume_node() {
        if (exhausted()) return false;
        ++used_;
        if (parent_) ++parent_->used_;
        return true;
    }

    int64_t nodes_used() const { return used_; }
    double elapsed_seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    SearchBudget budget_;
    Meter* parent_;
    int64_t used_ = 0;
    std::chrono::steady_clock::time_point start_;
};

// ---------------------------------------------------------------------------
// Predictors
// ---------------------------------------------------------------------------

struct StepScores {
    std::vector<float> stmt;  // n_s ranking scores
    std::vector<float> drop;  // nu probabilities
};

// Scores every state of a beam level at once.
class Predictor {
public:
    virtual ~Predictor() = default;
    virtual void predict(std::span<const ProgramState* const> states, int step,
                         std::vector<StepScores>& out) = 0;
};

class GpsPredictor : public Predictor {
public:
    explicit GpsPredictor(const EncoderModel<float>& model, const DslConfig& cfg)
        : model_(model), cfg_(cfg) {}

    void predict(std::span<const ProgramState* const> states, int step,
                 std::vector<StepScores>& out) override {
        (void)step;
        std::vector<StateTensor> tensors;
        tensors.reserve(states.size());
        for (const ProgramState* s : states) tensors.push_back(encode_state(*s, cfg_));
        std::vector<PredictionTriple> preds;
        model_.predict_batch(tensors, preds);
        out.assign(states.size(), StepScores{});
        for (size_t i = 0; i < preds.size(); ++i) {
            out[i].stmt = std::move(preds[i].stmt);
            out[i].drop = std::move(preds[i].drop);
        }
    }

private:
    const EncoderModel<float>& model_;
    DslConfig cfg_;
};

// alpha * aggregated + (1 - alpha) * gps, elementwise; the drop vector always
// passes through from GPS alone.
inline std::vector<float> blend(std::span<const float> s_agg, std::span<const float> s_gps,
                                double alpha) {
    if (s_agg.size() != s_gps.size()) throw ShapeError("blend: score widths differ");
    std::vector<float> out(s_gps.size());
    for (size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<float>(alpha * static_cast<double>(s_agg[i]) +
                                    (1.0 - alpha) * static_cast<double>(s_gps[i]));
    return out;
}

enum class BaselineMode : uint8_t { Sum, Mean, MeanU };

// Statement score vectors built from the PE one-hot statement vectors alone,
// left unnormalized (see module notes): sum, mean over all lines, or mean of
// u-weighted one-hots.
inline std::vector<float> baseline_scores(std::span<const PESolution> solutions, BaselineMode mode,
                                          int n_s) {
    std::vector<float> out(static_cast<size_t>(n_s), 0.0f);
    int64_t lines = 0;
    for (const PESolution& sol : solutions) {
        if (!sol.found) continue;
        for (int32_t idx : sol.stmt_vocab) {
            float w = mode == BaselineMode::MeanU ? static_cast<float>(sol.u) : 1.0f;
            out[static_cast<size_t>(idx)] += w;
            ++lines;
        }
    }
    if (mode != BaselineMode::Sum && lines > 0)
        for (float& v : out) v /= static_cast<float>(lines);
    return out;
}

// GPS statement probabilities blended with a per-task aggregation term:
// either the cross aggregator run on every beam state or a fixed baseline
// vector. Skips the aggregation term entirely at alpha == 0, where the blend
// is exactly GPS.
class BlendedPredictor : public Predictor {
public:
    BlendedPredictor(const EncoderModel<float>& gps, const DslConfig& cfg, double alpha)
        : gps_(gps), cfg_(cfg), alpha_(alpha) {}

    void set_aggregator(const CrossAggregator<float>* ca, const KeySet<float>* keys) {
        ca_ = ca;
        keys_ = keys;
    }
    void set_baseline(std::vector<float> scores) { baseline_ = std::move(scores); }

    void predict(std::span<const ProgramState* const> states, int step,
                 std::vector<StepScores>& out) override {
        std::vector<StateTensor> tensors;
        tensors.reserve(states.size());
        for (const ProgramState* s : states) tensors.push_back(encode_state(*s, cfg_));

        ag::NoGradGuard ng;
        ag::Var<float> pooled = gps_.embed_batch(tensors);
        auto logits = gps_.head_logits(pooled);
        ag::Var<float> sp = ag::row_softmax(logits.stmt);
        ag::Var<float> dp = ag::sigmoid(logits.drop);

        const int n_s = gps_.h.n_s;
        const int nu = gps_.h.nu;
        out.assign(states.size(), StepScores{});
        for (size_t i = 0; i < states.size(); ++i) {
            out[i].drop.assign(dp.data() + i * static_cast<size_t>(nu),
                               dp.data() + (i + 1) * static_cast<size_t>(nu));
            out[i].stmt.assign(sp.data() + i * static_cast<size_t>(n_s),
                               sp.data() + (i + 1) * static_cast<size_t>(n_s));
        }
        if (alpha_ == 0.0) return;
        if (ca_ != nullptr && keys_ != nullptr && !keys_->empty()) {
            std::vector<int> steps(states.size(), step);
            auto ca_probs = ca_->predict_stmt(pooled, steps, *keys_);
            for (size_t i = 0; i < states.size(); ++i)
                out[i].stmt = blend(ca_probs[i], out[i].stmt, alpha_);
        } else if (!baseline_.empty()) {
            for (size_t i = 0; i < states.size(); ++i)
                out[i].stmt = blend(baseline_, out[i].stmt, alpha_);
        }
    }

private:
    const EncoderModel<float>& gps_;
    DslConfig cfg_;
    double alpha_;
    const CrossAggregator<float>* ca_ = nullptr;
    const KeySet<float>* keys_ = nullptr;
    std::vector<float> baseline_;
};

// ---------------------------------------------------------------------------
// Beam search and CAB
// ---------------------------------------------------------------------------

struct CabSchedule {
    int beam_size = 100;
    int expansion_size = 10;
    // per failed iteration: beam *= 2, expansion += 10
};

struct TraceEvent {
    int32_t iteration = 0;
    int32_t depth = 0;
    int32_t parent = 0;
    int32_t stmt = 0;

    friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

struct SearchOutcome {
    std::optional<Program> program;
    std::vector<int32_t> stmt_vocab;  // winning path, slot-relative
    std::vector<int32_t> op_vocab;
    bool exhausted = false;
    int64_t nodes = 0;
};

namespace detail {

struct BeamNode {
    ProgramState state;
    double score = 1.0;
    Program prog;
    std::vector<int> slot_vars;
    std::vector<int32_t> stmt_vocab;
    std::vector<int32_t> op_vocab;
    int last_slot = -1;
};

inline bool is_solution(const BeamNode& node) {
    if (node.last_slot < 0) return false;
    for (int r = 0; r < node.state.rows; ++r)
        if (!(node.state.at(r, node.last_slot) == node.state.output(r))) return false;
    return true;
}

inline bool verify_program(const Program& p, std::span<const Example> examples) {
    for (const Example& ex : examples)
        if (!satisfies(p, ex)) return false;
    return true;
}

}  // namespace detail

// One beam search at fixed pruning parameters (the CAB inner loop). Solution
// candidates are checked before expansion; expansions that fail to execute
// are skipped without consuming an expansion slot, up to a per-node attempt
// cap of twice the expansion size.
inline SearchOutcome beam_search(std::span<const Example> examples, Predictor& predictor,
                                 int beam_size, int expansion_size, int max_depth, Meter& meter,
                                 const DslConfig& cfg, const Vocab& vocab,
                                 std::vector<TraceEvent>* trace = nullptr, int iteration = 0) {
    SearchOutcome out;
    const int64_t nodes_before = meter.nodes_used();

    std::vector<detail::BeamNode> beam(1);
    beam[0].state = init_state(examples, cfg);
    for (size_t i = 0; i < examples[0].inputs.size(); ++i) {
        beam[0].prog.inputs.push_back(examples[0].inputs[i].kind == ValueKind::Int
                                          ? InputType::Int
                                          : InputType::List);
        beam[0].slot_vars.push_back(static_cast<int>(i));
    }

    const int attempt_cap = 2 * expansion_size;
    std::vector<StepScores> scores;
    std::vector<int> order;
    for (int depth = 0; depth <= max_depth; ++depth) {
        for (const detail::BeamNode& node : beam) {
            if (detail::is_solution(node) && detail::verify_program(node.prog, examples)) {
                out.program = node.prog;
                out.stmt_vocab = node.stmt_vocab;
                out.op_vocab = node.op_vocab;
                out.nodes = meter.nodes_used() - nodes_before;
                return out;
            }
        }
        if (depth == max_depth) break;
        if (meter.exhausted()) {
            out.exhausted = true;
            break;
        }

        std::vector<const ProgramState*> states;
        states.reserve(beam.size());
        for (const detail::BeamNode& node : beam) states.push_back(&node.state);
        predictor.predict(states, depth, scores);

        std::vector<detail::BeamNode> children;
        children.reserve(std::min<size_t>(beam.size() * static_cast<size_t>(expansion_size),
                                          size_t{1} << 16));
        for (size_t b = 0; b < beam.size(); ++b) {
            const detail::BeamNode& node = beam[b];
            const std::vector<float>& stmt_scores = scores[b].stmt;
            const std::vector<float>& drop_probs = scores[b].drop;

            int drop_index = 0;
            for (int i = 1; i < static_cast<int>(drop_probs.size()); ++i)
                if (drop_probs[static_cast<size_t>(i)] > drop_probs[static_cast<size_t>(drop_index)])
                    drop_index = i;

            order.resize(stmt_scores.size());
            for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
            auto cmp = [&](int a, int c) {
                if (stmt_scores[static_cast<size_t>(a)] != stmt_scores[static_cast<size_t>(c)])
                    return stmt_scores[static_cast<size_t>(a)] > stmt_scores[static_cast<size_t>(c)];
                return a < c;
            };
            size_t take = std::min(order.size(), static_cast<size_t>(attempt_cap));
            std::partial_sort(order.begin(), order.begin() + static_cast<long>(take), order.end(),
                              cmp);

            int appended = 0;
            for (size_t rank = 0; rank < take && appended < expansion_size; ++rank) {
                int idx = order[rank];
                Statement stmt = vocab.statement_at(idx);
                DropExecResult r = drop_exec(stmt, node.state, drop_index, cfg);
                if (!r.ok()) continue;
                if (!meter.try_consume_node()) {
                    out.exhausted = true;
                    out.nodes = meter.nodes_used() - nodes_before;
                    return out;
                }
                detail::BeamNode child;
                child.state = std::move(r.state);
                child.score = node.score * static_cast<double>(stmt_scores[static_cast<size_t>(idx)]);
                child.prog = node.prog;
                Statement decl = stmt;
                decl.arg0 = static_cast<int16_t>(node.slot_vars[static_cast<size_t>(stmt.arg0)]);
                if (stmt.arg1 >= 0)
                    decl.arg1 = static_cast<int16_t>(node.slot_vars[static_cast<size_t>(stmt.arg1)]);
                child.prog.stmts.push_back(decl);
                child.slot_vars = node.slot_vars;
                int new_var = child.prog.var_count() - 1;
                if (r.target_slot == static_cast<int>(child.slot_vars.size()))
                    child.slot_vars.push_back(new_var);
                else
                    child.slot_vars[static_cast<size_t>(r.target_slot)] = new_var;
                child.stmt_vocab = node.stmt_vocab;
                child.stmt_vocab.push_back(idx);
                child.op_vocab = node.op_vocab;
                child.op_vocab.push_back(stmt.op);
                child.last_slot = r.target_slot;
                children.push_back(std::move(child));
                if (trace != nullptr)
                    trace->push_back({iteration, depth, static_cast<int32_t>(b), idx});
                ++appended;
            }
        }
        if (children.empty()) break;
        std::stable_sort(children.begin(), children.end(),
                         [](const detail::BeamNode& a, const detail::BeamNode& b) {
                             return a.score > b.score;
                         });
        if (static_cast<int>(children.size()) > beam_size) children.resize(static_cast<size_t>(beam_size));
        beam = std::move(children);
    }
    out.nodes = meter.nodes_used() - nodes_before;
    return out;
}

struct CabResult {
    std::optional<Program> program;
    std::vector<int32_t> stmt_vocab;
    std::vector<int32_t> op_vocab;
    std::vector<std::pair<int, int>> iterations;  // (beam size, expansion size)
    int64_t nodes = 0;
    double seconds = 0.0;
};

// Complete anytime beam search: repeated beam searches with pruning weakened
// (beam doubled, expansion +10) until success or budget exhaustion.
inline CabResult cab(std::span<const Example> examples, Predictor& predictor,
                     const CabSchedule& schedule, Meter& meter, int max_depth,
                     const DslConfig& cfg, const Vocab& vocab,
                     std::vector<TraceEvent>* trace = nullptr) {
    CabResult result;
    const int64_t nodes_before = meter.nodes_used();
    auto started = std::chrono::steady_clock::now();
    int beam_size = schedule.beam_size;
    int expansion = schedule.expansion_size;
    for (int iteration = 0; !meter.exhausted(); ++iteration) {
        result.iterations.emplace_back(beam_size, expansion);
        SearchOutcome outcome = beam_search(examples, predictor, beam_size, expansion, max_depth,
                                            meter, cfg, vocab, trace, iteration);
        if (outcome.program) {
            result.program = std::move(outcome.program);
            result.stmt_vocab = std::move(outcome.stmt_vocab);
            result.op_vocab = std::move(outcome.op_vocab);
            break;
        }
        // A zero-yield iteration only proves the task dead once the attempt
        // window already covered the whole statement vocabulary.
        if (outcome.nodes == 0 && !outcome.exhausted && 2 * expansion >= vocab.num_statements())
            break;
        if (beam_size <= (1 << 20)) beam_size *= 2;
        expansion += 10;
    }
    result.nodes = meter.nodes_used() - nodes_before;
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return result;
}

// ---------------------------------------------------------------------------
// Per-example searches
// ---------------------------------------------------------------------------

enum class PeMode : uint8_t { All, Tot };

struct PeSearchReport {
    std::vector<PESolution> solutions;  // one per visited example, in order
    bool perfect = false;               // a solution satisfied every example
    int64_t nodes = 0;
};

// Sequential per-example searches in the given example order. Each search
// conditions on one example; scores are measured against the full set. A
// perfect solution returns immediately; Tot mode stops once the union of
// satisfied sets covers every example.
inline PeSearchReport pe_searches(std::span<const Example> examples, Predictor& pe_predictor,
                                  SearchBudget per_example, PeMode mode, Meter& total,
                                  const CabSchedule& schedule, int max_depth, const DslConfig& cfg,
                                  const Vocab& vocab) {
    PeSearchReport report;
    std::vector<bool> covered(examples.size(), false);
    size_t covered_count = 0;
    for (size_t i = 0; i < examples.size(); ++i) {
        if (total.exhausted()) break;
        Meter sub(per_example, &total);
        std::vector<Example> single = {examples[i]};
        auto started = std::chrono::steady_clock::now();
        CabResult r = cab(single, pe_predictor, schedule, sub, max_depth, cfg, vocab);
        PESolution sol;
        sol.example_index = static_cast<int>(i);
        sol.nodes = r.nodes;
        sol.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        if (r.program) {
            sol.found = true;
            sol.program = std::move(*r.program);
            sol.stmt_vocab = std::move(r.stmt_vocab);
            sol.op_vocab = std::move(r.op_vocab);
            SolutionScore score = solution_score(sol.program, examples);
            sol.u = score.u;
            sol.satisfied = score.satisfied;
            for (int idx1 : sol.satisfied) {
                if (!covered[static_cast<size_t>(idx1 - 1)]) {
                    covered[static_cast<size_t>(idx1 - 1)] = true;
                    ++covered_count;
                }
            }
        }
        report.solutions.push_back(std::move(sol));
        if (report.solutions.back().found && report.solutions.back().u == 1.0) {
            report.perfect = true;
            break;
        }
        if (mode == PeMode::Tot && covered_count == examples.size()) break;
    }
    for (const PESolution& s : report.solutions) report.nodes += s.nodes;
    return report;
}

// Concurrent variant: every example searched under its own budget, no early
// exit. Not used in timing comparisons.
inline PeSearchReport pe_searches_parallel(std::span<const Example> examples,
                                           const EncoderModel<float>& pe_model,
                                           SearchBudget per_example, const CabSchedule& schedule,
                                           int max_depth, const DslConfig& cfg, const Vocab& vocab) {
    PeSearchReport report;
    report.solutions.assign(examples.size(), PESolution{});
    std::vector<std::thread> workers;
    for (size_t i = 0; i < examples.size(); ++i) {
        workers.emplace_back([&, i]() {
            GpsPredictor predictor(pe_model, cfg);
            Meter meter(per_example);
            std::vector<Example> single = {examples[i]};
            auto started = std::chrono::steady_clock::now();
            CabResult r = cab(single, predictor, schedule, meter, max_depth, cfg, vocab);
            PESolution& sol = report.solutions[i];
            sol.example_index = static_cast<int>(i);
            sol.nodes = r.nodes;
            sol.seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
            if (r.program) {
                sol.found = true;
                sol.program = std::move(*r.program);
                sol.stmt_vocab = std::move(r.stmt_vocab);
                sol.op_vocab = std::move(r.op_vocab);
                SolutionScore score = solution_score(sol.program, examples);
                sol.u = score.u;
                sol.satisfied = score.satisfied;
            }
        });
    }
    for (auto& w : workers) w.join();
    for (const PESolution& s : report.solutions) {
        report.nodes += s.nodes;
        if (s.found && s.u == 1.0) report.perfect = true;
    }
    return report;
}

// ---------------------------------------------------------------------------
// Full pipeline
// ---------------------------------------------------------------------------

enum class AggMode : uint8_t { Ca, Sum, Mean, MeanU, None };

inline const char* agg_mode_name(AggMode m) {
    switch (m) {
        case AggMode::Ca: return "ca";
        case AggMode::Sum: return "sum";
        case AggMode::Mean: return "mean";
        case AggMode::MeanU: return "mean_u";
        case AggMode::None: return "none";
    }
    return "?";
}

inline AggMode agg_mode_from_name(const std::string& s) {
    if (s == "ca") return AggMode::Ca;
    if (s == "sum") return AggMode::Sum;
    if (s == "mean") return AggMode::Mean;
    if (s == "mean_u") return AggMode::MeanU;
    if (s == "none" || s == "gps") return AggMode::None;
    throw ConfigError("unknown aggregation mode '" + s + "'");
}

struct PipelineConfig {
    double alpha = 0.8;
    SearchBudget peps_budget{SearchBudget::Kind::Nodes, 0.0, 600};   // per example
    SearchBudget total_budget{SearchBudget::Kind::Nodes, 0.0, 6000};
    AggMode mode = AggMode::Ca;
    KeyVariant variant = KeyVariant::Default;
    PeMode pe_mode = PeMode::All;
    CabSchedule schedule;
    int max_depth = 3;
    bool parallel_pe = false;
    bool capture_trace = false;
    uint64_t seed = 0;

    void validate(int n_examples) const {
        if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must lie in [0,1]");
        if (mode != AggMode::None) {
            if (peps_budget.kind != total_budget.kind)
                throw ConfigError("per-example and total budgets must share one kind");
            double pe_total = peps_budget.kind == SearchBudget::Kind::Nodes
                                  ? static_cast<double>(peps_budget.nodes) * n_examples
                                  : peps_budget.seconds * n_examples;
            double total = total_budget.kind == SearchBudget::Kind::Nodes
                               ? static_cast<double>(total_budget.nodes)
                               : total_budget.seconds;
            if (pe_total >= total)
                throw ConfigError("N x per-example budget must stay below the total budget");
        }
    }
};

struct SynthesisResult {
    bool solved = false;
    Program program;
    std::string program_text;
    bool perfect_pe = false;
    std::vector<PESolution> pe;
    AggMode mode = AggMode::None;
    double alpha = 0.0;
    KeyVariant variant = KeyVariant::Default;
    int64_t nodes_pe = 0;
    int64_t nodes_agg = 0;
    int64_t agg_budget_nodes = 0;  // node mode: what the aggregation phase was allowed
    double seconds_total = 0.0;    // wall-clock mode only
    bool node_mode = true;
    int keyset_size = 0;
    std::vector<std::pair<int, int>> iterations;  // aggregation-phase CAB parameters
    std::vector<TraceEvent> trace;
    uint64_t seed = 0;
};

// The full pipeline: per-example searches, then CAB over the blended
// predictor under whatever budget the PE phase left unused. A perfect PE
// solution short-circuits aggregation entirely.
inline SynthesisResult synthesize(std::span<const Example> examples,
                                  const EncoderModel<float>* gps_model,
                                  const EncoderModel<float>* pe_model,
                                  const CrossAggregator<float>* ca_model,
                                  const PipelineConfig& cfg, const DslConfig& dsl_cfg,
                                  const Vocab& vocab) {
    cfg.validate(static_cast<int>(examples.size()));
    if (gps_model == nullptr) throw ConfigError("synthesize: gps model required");

    SynthesisResult result;
    result.mode = cfg.mode;
    result.alpha = cfg.alpha;
    result.variant = cfg.variant;
    result.seed = cfg.seed;
    result.node_mode = cfg.total_budget.kind == SearchBudget::Kind::Nodes;

    Meter total(cfg.total_budget);

    if (cfg.mode != AggMode::None) {
        if (pe_model == nullptr) throw ConfigError("synthesize: pe model required for this mode");
        PeSearchReport report;
        if (cfg.parallel_pe) {
            report = pe_searches_parallel(examples, *pe_model, cfg.peps_budget, cfg.schedule,
                                          cfg.max_depth, dsl_cfg, vocab);
            for (const PESolution& s : report.solutions)
                for (int64_t n = 0; n < s.nodes; ++n) (void)total.try_consume_node();
        } else {
            GpsPredictor pe_predictor(*pe_model, dsl_cfg);
            report = pe_searches(examples, pe_predictor, cfg.peps_budget, cfg.pe_mode, total,
                                 cfg.schedule, cfg.max_depth, dsl_cfg, vocab);
        }
        result.pe = std::move(report.solutions);
        result.nodes_pe = report.nodes;
        if (report.perfect) {
            for (const PESolution& s : result.pe) {
                if (s.found && s.u == 1.0) {
                    result.solved = true;
                    result.perfect_pe = true;
                    result.program = s.program;
                    result.program_text = format_program(s.program);
                    break;
                }
            }
            result.seconds_total = total.elapsed_seconds();
            return result;
        }
    }

    if (result.node_mode)
        result.agg_budget_nodes = cfg.total_budget.nodes - total.nodes_used();

    BlendedPredictor predictor(*gps_model, dsl_cfg, cfg.alpha);
    KeySet<float> keys;
    bool any_pe = false;
    for (const PESolution& s : result.pe) any_pe = any_pe || s.found;
    if (cfg.mode == AggMode::Ca && ca_model != nullptr && any_pe && cfg.alpha > 0.0) {
        const EncoderModel<float>* key_encoder = pe_model;
        if (cfg.variant == KeyVariant::PG) key_encoder = gps_model;
        auto tuples = build_key_tuples(result.pe, cfg.variant, static_cast<int>(examples.size()));
        keys = assemble_kvu<float>(tuples, result.pe, examples, *key_encoder, dsl_cfg, vocab);
        if (!keys.empty()) predictor.set_aggregator(ca_model, &keys);
        result.keyset_size = keys.count;
    } else if ((cfg.mode == AggMode::Sum || cfg.mode == AggMode::Mean ||
                cfg.mode == AggMode::MeanU) &&
               any_pe && cfg.alpha > 0.0) {
        BaselineMode bmode = cfg.mode == AggMode::Sum    ? BaselineMode::Sum
                             : cfg.mode == AggMode::Mean ? BaselineMode::Mean
                                                         : BaselineMode::MeanU;
        predictor.set_baseline(baseline_scores(result.pe, bmode, gps_model->h.n_s));
    }

    std::vector<TraceEvent>* trace = cfg.capture_trace ? &result.trace : nullptr;
    CabResult cab_result =
        cab(examples, predictor, cfg.schedule, total, cfg.max_depth, dsl_cfg, vocab, trace);
    result.nodes_agg = cab_result.nodes;
    result.iterations = std::move(cab_result.iterations);
    if (cab_result.program) {
        result.solved = true;
        result.program = std::move(*cab_result.program);
        result.program_text = format_program(result.program);
    }
    result.seconds_total = total.elapsed_seconds();
    return result;
}

}  // namespace listsynth
