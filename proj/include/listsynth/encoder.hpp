#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "listsynth/common.hpp"
#include "listsynth/nn.hpp"
#include "listsynth/state.hpp"
#include "listsynth/tensor.hpp"

namespace listsynth {

struct EncoderHyper {
    int nu = 11;
    int q = 20;
    int e = 20;           // value embedding width
    int z = 256;          // state embedding width
    int slot_hidden = 56; // per-slot linear width
    int n_s = 1298;
    int n_o = 38;
    int value_rows = 513; // 512 shifted values + NULL sentinel row
    std::string kind = "gps";  // gps | pe

    json to_json() const {
        json j;
        j["kind"] = kind;
        j["nu"] = nu;
        j["q"] = q;
        j["e"] = e;
        j["Z"] = z;
        j["slot_hidden"] = slot_hidden;
        j["n_s"] = n_s;
        j["n_o"] = n_o;
        j["value_rows"] = value_rows;
        return j;
    }

    static EncoderHyper from_json(const json& j) {
        EncoderHyper h;
        h.kind = j.at("kind").get<std::string>();
        h.nu = j.at("nu").get<int>();
        h.q = j.at("q").get<int>();
        h.e = j.at("e").get<int>();
        h.z = j.at("Z").get<int>();
        h.slot_hidden = j.at("slot_hidden").get<int>();
        h.n_s = j.at("n_s").get<int>();
        h.n_o = j.at("n_o").get<int>();
        h.value_rows = j.at("value_rows").get<int>();
        return h;
    }
};

// Statement/operator probabilities plus per-slot drop probabilities.
struct PredictionTriple {
    std::vector<float> stmt;  // n_s, sums to 1
    std::vector<float> op;    // n_o, sums to 1
    std::vector<float> drop;  // nu, each in [0,1]
};

struct TrainTarget {
    int32_t stmt = 0;
    int32_t op = 0;
    std::vector<uint8_t> drop;  // nu multi-hot
};

// The state-embedding network and its three prediction heads. The encoder
// part ("enc.*") is what key/query embeddings reuse; the heads ("head.*")
// are the per-step predictors.
template <class F>
struct EncoderModel {
    EncoderHyper h;
    ParamStore<F> params;

    static EncoderModel init(const EncoderHyper& hyper, uint64_t seed) {
        EncoderModel m;
        m.h = hyper;
        m.params.init_seed = seed;
        Rng rng(seed);
        const int slot_in = hyper.q * hyper.e + 2;
        const int dense_in = (hyper.nu + 1) * hyper.slot_hidden;
        init_embedding(m.params.add("enc.value_embed", hyper.value_rows, hyper.e), rng);
        add_linear(m.params, "enc.slot", slot_in, hyper.slot_hidden, rng);
        add_linear(m.params, "enc.dense1", dense_in, hyper.z, rng);
        add_linear(m.params, "enc.dense2", dense_in + hyper.z, hyper.z, rng);
        add_linear(m.params, "enc.dense3", dense_in + 2 * hyper.z, hyper.z, rng);
        add_linear(m.params, "head.stmt", hyper.z, hyper.n_s, rng);
        add_linear(m.params, "head.op", hyper.z, hyper.n_o, rng);
        add_linear(m.params, "head.drop", hyper.z, hyper.nu, rng);
        return m;
    }

    json meta() const { return h.to_json(); }

    // Per-example representations for a batch of states that all share the
    // same row count; returns the [B*R x Z] pre-pooling matrix.
    ag::Var<F> per_example_reps(std::span<const StateTensor> states) const {
        if (states.empty()) throw ShapeError("embed: empty batch");
        const int rows = states[0].rows;
        const int slots = states[0].slots;
        const int width = states[0].width;
        if (slots != h.nu + 1 || width != h.q + 2)
            throw ShapeError("embed: state tensor does not match model dims");
        const int total_slots = static_cast<int>(states.size()) * rows * slots;

        std::vector<int32_t> indices;
        indices.reserve(static_cast<size_t>(total_slots) * static_cast<size_t>(h.q));
        std::vector<F> bits(static_cast<size_t>(total_slots) * 2);
        size_t slot_i = 0;
        for (const StateTensor& st : states) {
            if (st.rows != rows || st.slots != slots || st.width != width)
                throw ShapeError("embed: ragged batch");
            for (int r = 0; r < st.rows; ++r) {
                for (int s = 0; s < st.slots; ++s) {
                    bits[slot_i * 2 + 0] = static_cast<F>(st.at(r, s, 0));
                    bits[slot_i * 2 + 1] = static_cast<F>(st.at(r, s, 1));
                    for (int k = 0; k < h.q; ++k) indices.push_back(st.at(r, s, 2 + k));
                    ++slot_i;
                }
            }
        }

        ag::Var<F> emb = ag::embedding(params.at("enc.value_embed"), indices);
        ag::Var<F> per_slot_vals = ag::reshape(emb, total_slots, h.q * h.e);
        ag::Var<F> bit_var = ag::constant<F>(total_slots, 2, bits);
        ag::Var<F> slot_in = ag::concat_cols<F>({per_slot_vals, bit_var});
        ag::Var<F> slot_h = ag::selu(linear(params, "enc.slot", slot_in));
        ag::Var<F> x0 = ag::reshape(slot_h, static_cast<int>(states.size()) * rows,
                                    slots * h.slot_hidden);
        ag::Var<F> x1 = ag::selu(linear(params, "enc.dense1", x0));
        ag::Var<F> x2 = ag::selu(linear(params, "enc.dense2", ag::concat_cols<F>({x0, x1})));
        ag::Var<F> x3 = ag::selu(linear(params, "enc.dense3", ag::concat_cols<F>({x0, x1, x2})));
        return x3;
    }

    // Pooled state embeddings: [B x Z], mean over each state's examples.
    ag::Var<F> embed_batch(std::span<const StateTensor> states) const {
        return ag::mean_rows_grouped(per_example_reps(states), states[0].rows);
    }

    struct EmbedOut {
        ag::Var<F> per_example;  // N x Z
        ag::Var<F> pooled;       // 1 x Z
    };

    EmbedOut embed_state(const StateTensor& s) const {
        EmbedOut out;
        out.per_example = per_example_reps({&s, 1});
        out.pooled = ag::mean_rows_grouped(out.per_example, s.rows);
        return out;
    }

    struct HeadLogits {
        ag::Var<F> stmt;  // B x n_s
        ag::Var<F> op;    // B x n_o
        ag::Var<F> drop;  // B x nu
    };

    HeadLogits head_logits(const ag::Var<F>& pooled) const {
        if (pooled.cols() != h.z) throw ShapeError("heads: embedding width mismatch");
        HeadLogits out;
        out.stmt = linear(params, "head.stmt", pooled);
        out.op = linear(params, "head.op", pooled);
        out.drop = linear(params, "head.drop", pooled);
        return out;
    }

    PredictionTriple predict_heads(const ag::Var<F>& pooled) const {
        HeadLogits logits = head_logits(pooled);
        ag::Var<F> sp = ag::row_softmax(logits.stmt);
        ag::Var<F> op = ag::row_softmax(logits.op);
        ag::Var<F> dp = ag::sigmoid(logits.drop);
        PredictionTriple out;
        out.stmt.assign(sp.values().begin(), sp.values().end());
        out.op.assign(op.values().begin(), op.values().end());
        out.drop.assign(dp.values().begin(), dp.values().end());
        return out;
    }

    // Inference path: statement and drop probabilities for a batch of
    // same-shaped states, no tape.
    void predict_batch(std::span<const StateTensor> states, std::vector<PredictionTriple>& out) const {
        ag::NoGradGuard ng;
        ag::Var<F> pooled = embed_batch(states);
        HeadLogits logits = head_logits(pooled);
        ag::Var<F> sp = ag::row_softmax(logits.stmt);
        ag::Var<F> op = ag::row_softmax(logits.op);
        ag::Var<F> dp = ag::sigmoid(logits.drop);
        out.assign(states.size(), PredictionTriple{});
        for (size_t b = 0; b < states.size(); ++b) {
            out[b].stmt.assign(sp.data() + b * static_cast<size_t>(h.n_s),
                               sp.data() + (b + 1) * static_cast<size_t>(h.n_s));
            out[b].op.assign(op.data() + b * static_cast<size_t>(h.n_o),
                             op.data() + (b + 1) * static_cast<size_t>(h.n_o));
            out[b].drop.assign(dp.data() + b * static_cast<size_t>(h.nu),
                               dp.data() + (b + 1) * static_cast<size_t>(h.nu));
        }
    }
};

// Sum of statement and operator cross-entropies plus the per-slot binary
// cross-entropies, averaged over the batch.
template <class F>
ag::Var<F> step_loss_batch(const typename EncoderModel<F>::HeadLogits& logits,
                           std::span<const TrainTarget> targets) {
    const int batch = logits.stmt.rows();
    if (static_cast<int>(targets.size()) != batch) throw ShapeError("step_loss: batch mismatch");
    const int nu = logits.drop.cols();
    std::vector<int32_t> stmt_t(targets.size()), op_t(targets.size());
    std::vector<F> drop_t(targets.size() * static_cast<size_t>(nu));
    for (size_t i = 0; i < targets.size(); ++i) {
        stmt_t[i] = targets[i].stmt;
        op_t[i] = targets[i].op;
        if (static_cast<int>(targets[i].drop.size()) != nu)
            throw ShapeError("step_loss: drop width mismatch");
        for (int j = 0; j < nu; ++j)
            drop_t[i * static_cast<size_t>(nu) + static_cast<size_t>(j)] =
                static_cast<F>(targets[i].drop[static_cast<size_t>(j)]);
    }
    ag::Var<F> drop_tv = ag::constant<F>(batch, nu, drop_t);
    ag::Var<F> per_item = ag::add(ag::add(ag::ce_rows(logits.stmt, stmt_t),
                                          ag::ce_rows(logits.op, op_t)),
                                  ag::bce_rows(logits.drop, drop_tv));
    return ag::mean_all(per_item);
}

inline EncoderModel<float> encoder_from_checkpoint(const Checkpoint& ckpt) {
    EncoderHyper h = EncoderHyper::from_json(ckpt.meta);
    EncoderModel<float> m = EncoderModel<float>::init(h, 0);
    restore_params(m.params, ckpt);
    return m;
}

}  // namespace listsynth
