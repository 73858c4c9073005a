#pragma once

#include <algorithm>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "listsynth/aggregator.hpp"
#include "listsynth/datagen.hpp"
#include "listsynth/encoder.hpp"
#include "listsynth/io.hpp"
#include "listsynth/nn.hpp"

namespace listsynth {

struct TrainConfig {
    int batch_size = 32;
    OptimizerConfig optimizer;
    int epochs = 12;
    int patience = 3;  // epochs without validation improvement
    double val_fraction = 0.1;
    uint64_t seed = 1;
    std::string metrics_path;  // optional JSONL log
};

struct SupervisionStep {
    StateTensor state;
    TrainTarget target;
};

enum class ModelKind : uint8_t { Gps, Pe };

// Expands one record into supervised steps. GPS: a single trajectory over
// all examples. PE: one trajectory per example, each supervised by the
// record's global program. The drop index replayed through drop_exec is a
// uniformly random choice among the ground-truth drop bits.
inline std::vector<SupervisionStep> make_supervision(const DatasetRecord& record, ModelKind kind,
                                                     Rng& rng, const DslConfig& cfg,
                                                     const Vocab& vocab, int* anomalies = nullptr) {
    std::vector<SupervisionStep> out;
    auto expand = [&](std::span<const Example> examples) {
        Replay rep = replay_program(record.program, examples, cfg, DropChoice::Random, &rng);
        if (rep.degenerate_drop && anomalies != nullptr) ++*anomalies;
        for (size_t t = 0; t < rep.steps.size(); ++t) {
            SupervisionStep step;
            step.state = encode_state(rep.states[t], cfg);
            step.target.stmt = vocab.statement_index(rep.steps[t].slot_stmt);
            step.target.op = rep.steps[t].slot_stmt.op;
            step.target.drop = rep.steps[t].drop_target;
            out.push_back(std::move(step));
        }
    };
    if (kind == ModelKind::Gps) {
        expand(record.examples);
    } else {
        for (const Example& ex : record.examples) expand({&ex, 1});
    }
    return out;
}

struct TrainReport {
    double best_val_loss = 0.0;
    double final_train_loss = 0.0;
    int epochs_run = 0;
    int anomalies = 0;
    std::vector<json> metrics;
};

namespace detail {

inline void append_metrics(const std::string& path, std::span<const json> lines) {
    if (path.empty()) return;
    std::ofstream os(path, std::ios::app);
    for (const json& j : lines) os << j.dump() << "\n";
}

template <class F>
std::vector<std::vector<F>> snapshot_params(const ParamStore<F>& params) {
    std::vector<std::vector<F>> out;
    for (const auto& [name, v] : params.items()) out.push_back(v.values());
    return out;
}

template <class F>
void restore_snapshot(ParamStore<F>& params, const std::vector<std::vector<F>>& snap) {
    for (size_t i = 0; i < snap.size(); ++i) params.items()[i].second.values() = snap[i];
}

}  // namespace detail

// Evaluation pass over supervision steps: mean loss plus top-1 accuracies.
template <class F>
struct EvalMetrics {
    double loss = 0.0, loss_stmt = 0.0, loss_op = 0.0, loss_drop = 0.0;
    double acc_stmt = 0.0, acc_op = 0.0;
};

template <class F>
EvalMetrics<F> evaluate_supervised(const EncoderModel<F>& model,
                                   std::span<const SupervisionStep> steps, int batch_size) {
    ag::NoGradGuard ng;
    EvalMetrics<F> m;
    if (steps.empty()) return m;
    int64_t correct_s = 0, correct_o = 0;
    for (size_t start = 0; start < steps.size(); start += static_cast<size_t>(batch_size)) {
        size_t end = std::min(steps.size(), start + static_cast<size_t>(batch_size));
        std::vector<StateTensor> states;
        std::vector<TrainTarget> targets;
        for (size_t i = start; i < end; ++i) {
            states.push_back(steps[i].state);
            targets.push_back(steps[i].target);
        }
        auto logits = model.head_logits(model.embed_batch(states));
        std::vector<int32_t> st(targets.size()), ot(targets.size());
        for (size_t i = 0; i < targets.size(); ++i) {
            st[i] = targets[i].stmt;
            ot[i] = targets[i].op;
        }
        auto ce_s = ag::ce_rows(logits.stmt, st);
        auto ce_o = ag::ce_rows(logits.op, ot);
        std::vector<F> drop_t(targets.size() * static_cast<size_t>(model.h.nu));
        for (size_t i = 0; i < targets.size(); ++i)
            for (int j = 0; j < model.h.nu; ++j)
                drop_t[i * static_cast<size_t>(model.h.nu) + static_cast<size_t>(j)] =
                    static_cast<F>(targets[i].drop[static_cast<size_t>(j)]);
        auto bce = ag::bce_rows(logits.drop, ag::constant<F>(static_cast<int>(targets.size()),
                                                             model.h.nu, drop_t));
        for (size_t i = 0; i < targets.size(); ++i) {
            m.loss_stmt += static_cast<double>(ce_s.data()[i]);
            m.loss_op += static_cast<double>(ce_o.data()[i]);
            m.loss_drop += static_cast<double>(bce.data()[i]);
            const F* srow = logits.stmt.data() + i * static_cast<size_t>(model.h.n_s);
            const F* orow = logits.op.data() + i * static_cast<size_t>(model.h.n_o);
            int as = static_cast<int>(std::max_element(srow, srow + model.h.n_s) - srow);
            int ao = static_cast<int>(std::max_element(orow, orow + model.h.n_o) - orow);
            if (as == targets[i].stmt) ++correct_s;
            if (ao == targets[i].op) ++correct_o;
        }
    }
    double n = static_cast<double>(steps.size());
    m.loss_stmt /= n;
    m.loss_op /= n;
    m.loss_drop /= n;
    m.loss = m.loss_stmt + m.loss_op + m.loss_drop;
    m.acc_stmt = static_cast<double>(correct_s) / n;
    m.acc_op = static_cast<double>(correct_o) / n;
    return m;
}

// Supervised training of a GPS or PE model on dataset records.
inline TrainReport train_supervised(std::span<const DatasetRecord> records, ModelKind kind,
                                    EncoderModel<float>& model, const TrainConfig& cfg,
                                    const DslConfig& dsl_cfg, const Vocab& vocab) {
    TrainReport report;
    Rng rng(cfg.seed);

    std::vector<size_t> order(records.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_in_place(order, rng);
    size_t val_count = static_cast<size_t>(static_cast<double>(records.size()) * cfg.val_fraction);

    std::vector<SupervisionStep> train_steps, val_steps;
    for (size_t i = 0; i < order.size(); ++i) {
        auto steps =
            make_supervision(records[order[i]], kind, rng, dsl_cfg, vocab, &report.anomalies);
        auto& dst = i < val_count ? val_steps : train_steps;
        for (auto& s : steps) dst.push_back(std::move(s));
    }

    Optimizer<float> opt(cfg.optimizer);
    double best_val = 1e300;
    int bad_epochs = 0;
    std::vector<std::vector<float>> best_snapshot = detail::snapshot_params(model.params);

    std::vector<size_t> step_order(train_steps.size());
    for (size_t i = 0; i < step_order.size(); ++i) step_order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        opt.set_epoch(epoch);
        shuffle_in_place(step_order, rng);
        double epoch_loss = 0.0;
        int64_t batches = 0;
        for (size_t start = 0; start < step_order.size();
             start += static_cast<size_t>(cfg.batch_size)) {
            size_t end = std::min(step_order.size(), start + static_cast<size_t>(cfg.batch_size));
            std::vector<StateTensor> states;
            std::vector<TrainTarget> targets;
            for (size_t i = start; i < end; ++i) {
                states.push_back(train_steps[step_order[i]].state);
                targets.push_back(train_steps[step_order[i]].target);
            }
            auto logits = model.head_logits(model.embed_batch(states));
            auto loss = step_loss_batch<float>(logits, targets);
            epoch_loss += static_cast<double>(loss.item());
            ++batches;
            model.params.zero_grads();
            ag::backward(loss);
            opt.step(model.params);
        }
        report.final_train_loss = batches > 0 ? epoch_loss / static_cast<double>(batches) : 0.0;

        EvalMetrics<float> val = val_steps.empty()
                                     ? EvalMetrics<float>{report.final_train_loss, 0, 0, 0, 0, 0}
                                     : evaluate_supervised(model, val_steps, cfg.batch_size);
        opt.observe_val_loss(val.loss);

        json train_line;
        train_line["epoch"] = epoch;
        train_line["split"] = "train";
        train_line["loss"] = report.final_train_loss;
        report.metrics.push_back(train_line);
        json val_line;
        val_line["epoch"] = epoch;
        val_line["split"] = "val";
        val_line["loss"] = val.loss;
        val_line["loss_stmt"] = val.loss_stmt;
        val_line["loss_op"] = val.loss_op;
        val_line["loss_drop"] = val.loss_drop;
        val_line["acc_stmt"] = val.acc_stmt;
        val_line["acc_op"] = val.acc_op;
        report.metrics.push_back(val_line);

        report.epochs_run = epoch + 1;
        if (val.loss < best_val - 1e-9) {
            best_val = val.loss;
            best_snapshot = detail::snapshot_params(model.params);
            bad_epochs = 0;
        } else if (++bad_epochs > cfg.patience) {
            break;
        }
    }
    detail::restore_snapshot(model.params, best_snapshot);
    report.best_val_loss = best_val;
    detail::append_metrics(cfg.metrics_path, report.metrics);
    return report;
}

// ---------------------------------------------------------------------------
// Cross-aggregator training
// ---------------------------------------------------------------------------

// One instance, fully precomputed: keys from the (frozen) key encoder and
// teacher-forced query embeddings from the (frozen) GPS encoder, one query
// row per global-program step.
struct PreparedInstance {
    KeySet<float> keys;
    std::vector<float> query_emb;  // T x Z
    std::vector<int> steps;        // 0..T-1
    std::vector<int32_t> stmt_targets;
    std::vector<int32_t> op_targets;
    int t = 0;
};

inline std::optional<PreparedInstance> prepare_instance(const AggregatorInstance& inst,
                                                        const EncoderModel<float>& gps_model,
                                                        const EncoderModel<float>& key_encoder,
                                                        KeyVariant variant, const DslConfig& cfg,
                                                        const Vocab& vocab) {
    PreparedInstance out;
    std::vector<PESolution> solutions = inst.pe;
    for (PESolution& sol : solutions)
        if (sol.found && sol.stmt_vocab.empty() && !annotate_solution(sol, vocab)) return std::nullopt;

    auto tuples = build_key_tuples(solutions, variant, static_cast<int>(inst.examples.size()));
    out.keys = assemble_kvu<float>(tuples, solutions, inst.examples, key_encoder, cfg, vocab);
    if (out.keys.empty()) return std::nullopt;

    Replay rep = replay_program(inst.global, inst.examples, cfg, DropChoice::FirstLive);
    if (!rep.ok) return std::nullopt;

    out.t = static_cast<int>(rep.steps.size());
    std::vector<StateTensor> states;
    for (int t = 0; t < out.t; ++t) {
        states.push_back(encode_state(rep.states[static_cast<size_t>(t)], cfg));
        out.steps.push_back(t);
        out.stmt_targets.push_back(vocab.statement_index(rep.steps[static_cast<size_t>(t)].slot_stmt));
        out.op_targets.push_back(rep.steps[static_cast<size_t>(t)].slot_stmt.op);
    }
    ag::NoGradGuard ng;
    ag::Var<float> q = gps_model.embed_batch(states);
    out.query_emb.assign(q.data(), q.data() + q.size());
    return out;
}

inline double ca_instance_loss(const CrossAggregator<float>& ca, const PreparedInstance& inst,
                               bool training, Rng* rng, ag::Var<float>* loss_out) {
    ag::Var<float> q = ag::constant<float>(inst.t, ca.h.z, inst.query_emb);
    auto fwd = ca.forward(q, inst.steps, inst.keys, training, rng, false);
    auto ce_s = ag::mean_all(ag::ce_rows(fwd.stmt_logits, inst.stmt_targets));
    auto ce_o = ag::mean_all(ag::ce_rows(fwd.op_logits, inst.op_targets));
    auto loss = ag::add(ce_s, ce_o);
    if (loss_out != nullptr) *loss_out = loss;
    return static_cast<double>(loss.item());
}

struct CaTrainReport {
    double best_val_loss = 0.0;
    int epochs_run = 0;
    int skipped_instances = 0;
    std::vector<json> metrics;
    std::vector<double> first_step_losses;  // training losses of the first epoch's steps
};

// Teacher-forced CA training. Encoder parameters stay untouched: queries and
// keys are precomputed constants; only the aggregator's parameters train.
// The statement/operator output heads start from the GPS model's heads.
inline CaTrainReport train_ca(std::span<const AggregatorInstance> instances,
                              const EncoderModel<float>& gps_model,
                              const EncoderModel<float>& pe_model, CrossAggregator<float>& ca,
                              const TrainConfig& cfg, const DslConfig& dsl_cfg, const Vocab& vocab,
                              bool init_heads_from_gps = true) {
    CaTrainReport report;
    Rng rng(cfg.seed);

    if (init_heads_from_gps) {
        if (gps_model.h.z != ca.h.z)
            throw ShapeError("train_ca: GPS embedding width differs from the CA width");
        ca.params.at("ca.out.stmt.w").values() = gps_model.params.at("head.stmt.w").values();
        ca.params.at("ca.out.stmt.b").values() = gps_model.params.at("head.stmt.b").values();
        ca.params.at("ca.out.op.w").values() = gps_model.params.at("head.op.w").values();
        ca.params.at("ca.out.op.b").values() = gps_model.params.at("head.op.b").values();
    }

    const EncoderModel<float>& key_encoder =
        ca.h.key_encoder == "gps" ? gps_model : pe_model;
    KeyVariant variant = key_variant_from_name(ca.h.variant);

    std::vector<PreparedInstance> prepared;
    for (const AggregatorInstance& inst : instances) {
        auto p = prepare_instance(inst, gps_model, key_encoder, variant, dsl_cfg, vocab);
        if (p)
            prepared.push_back(std::move(*p));
        else
            ++report.skipped_instances;
    }
    if (prepared.empty()) throw ConfigError("train_ca: no usable instances");

    std::vector<size_t> order(prepared.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_in_place(order, rng);
    size_t val_count = static_cast<size_t>(static_cast<double>(prepared.size()) * cfg.val_fraction);
    std::vector<size_t> val_idx(order.begin(), order.begin() + static_cast<long>(val_count));
    std::vector<size_t> train_idx(order.begin() + static_cast<long>(val_count), order.end());
    if (train_idx.empty()) throw ConfigError("train_ca: empty training split");

    auto val_loss = [&]() {
        if (val_idx.empty()) return 0.0;
        ag::NoGradGuard ng;
        double total = 0;
        for (size_t i : val_idx) total += ca_instance_loss(ca, prepared[i], false, nullptr, nullptr);
        return total / static_cast<double>(val_idx.size());
    };

    Optimizer<float> opt(cfg.optimizer);
    double best_val = 1e300;
    int bad_epochs = 0;
    auto best_snapshot = detail::snapshot_params(ca.params);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        opt.set_epoch(epoch);
        shuffle_in_place(train_idx, rng);
        double epoch_loss = 0;
        for (size_t i : train_idx) {
            ag::Var<float> loss;
            double value = ca_instance_loss(ca, prepared[i], true, &rng, &loss);
            epoch_loss += value;
            if (epoch == 0) report.first_step_losses.push_back(value);
            ca.params.zero_grads();
            ag::backward(loss);
            opt.step(ca.params);
        }
        epoch_loss /= static_cast<double>(train_idx.size());
        double vloss = val_idx.empty() ? epoch_loss : val_loss();
        opt.observe_val_loss(vloss);

        json line;
        line["epoch"] = epoch;
        line["split"] = "train";
        line["loss"] = epoch_loss;
        report.metrics.push_back(line);
        json vline;
        vline["epoch"] = epoch;
        vline["split"] = "val";
        vline["loss"] = vloss;
        report.metrics.push_back(vline);

        report.epochs_run = epoch + 1;
        if (vloss < best_val - 1e-9) {
            best_val = vloss;
            best_snapshot = detail::snapshot_params(ca.params);
            bad_epochs = 0;
        } else if (++bad_epochs > cfg.patience) {
            break;
        }
    }
    detail::restore_snapshot(ca.params, best_snapshot);
    report.best_val_loss = best_val;
    detail::append_metrics(cfg.metrics_path, report.metrics);
    return report;
}

}  // namespace listsynth
