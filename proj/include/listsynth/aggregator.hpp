#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "listsynth/common.hpp"
#include "listsynth/encoder.hpp"
#include "listsynth/nn.hpp"
#include "listsynth/solutions.hpp"
#include "listsynth/state.hpp"
#include "listsynth/tensor.hpp"

namespace listsynth {

enum class KeyVariant : uint8_t { Default, PG, PP };

inline const char* key_variant_name(KeyVariant v) {
    switch (v) {
        case KeyVariant::Default: return "default";
        case KeyVariant::PG: return "pg";
        case KeyVariant::PP: return "pp";
    }
    return "?";
}

inline KeyVariant key_variant_from_name(const std::string& s) {
    if (s == "default") return KeyVariant::Default;
    if (s == "pg") return KeyVariant::PG;
    if (s == "pp") return KeyVariant::PP;
    throw ConfigError("unknown key variant '" + s + "'");
}

// (program, example subset, step): the partial execution whose state forms
// one attention key. subset entries are 0-based and ascending.
struct ExecutionTuple {
    int m = 0;
    std::vector<int> subset;
    int t = 0;
};

// One tuple per (solution, example, step) for the default variant; the PG
// variant executes against the whole example set; PP restricts examples to
// the solution's satisfied set. Rows are ordered (m, j, t), all ascending.
inline std::vector<ExecutionTuple> build_key_tuples(std::span<const PESolution> solutions,
                                                    KeyVariant variant, int n_examples) {
    bool any = false;
    for (const PESolution& s : solutions) any = any || s.found;
    if (!any) throw ShapeError("build_key_tuples: no usable solutions");

    std::vector<ExecutionTuple> tuples;
    for (size_t m = 0; m < solutions.size(); ++m) {
        const PESolution& sol = solutions[m];
        if (!sol.found) continue;
        const int len = sol.program.length();
        switch (variant) {
            case KeyVariant::Default:
                for (int j = 0; j < n_examples; ++j)
                    for (int t = 0; t < len; ++t)
                        tuples.push_back({static_cast<int>(m), {j}, t});
                break;
            case KeyVariant::PG: {
                std::vector<int> all(static_cast<size_t>(n_examples));
                for (int j = 0; j < n_examples; ++j) all[static_cast<size_t>(j)] = j;
                for (int t = 0; t < len; ++t) tuples.push_back({static_cast<int>(m), all, t});
                break;
            }
            case KeyVariant::PP:
                for (int j1 : sol.satisfied)
                    for (int t = 0; t < len; ++t)
                        tuples.push_back({static_cast<int>(m), {j1 - 1}, t});
                break;
        }
    }
    return tuples;
}

// ---------------------------------------------------------------------------
// Position encoding
// ---------------------------------------------------------------------------

template <class F>
std::vector<F> position_encoding(int t, int dim) {
    std::vector<F> pe(static_cast<size_t>(dim));
    for (int i = 0; i < dim; i += 2) {
        double rate = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(dim));
        pe[static_cast<size_t>(i)] = static_cast<F>(std::sin(t * rate));
        if (i + 1 < dim) pe[static_cast<size_t>(i + 1)] = static_cast<F>(std::cos(t * rate));
    }
    return pe;
}

template <class F>
ag::Var<F> position_encoding_rows(std::span<const int> steps, int dim) {
    std::vector<F> data;
    data.reserve(steps.size() * static_cast<size_t>(dim));
    for (int t : steps) {
        std::vector<F> pe = position_encoding<F>(t, dim);
        data.insert(data.end(), pe.begin(), pe.end());
    }
    return ag::constant<F>(static_cast<int>(steps.size()), dim, data);
}

// ---------------------------------------------------------------------------
// KeySet
// ---------------------------------------------------------------------------

struct KeyDescriptor {
    int m = 0;
    int j = -1;  // -1 when the subset is the whole example set
    int t = 0;
    int32_t stmt = 0;
    int32_t op = 0;
};

// Keys, relation scores, and value indices, one row per surviving execution
// tuple in canonical order. Key rows already carry their position encoding;
// value embeddings are looked up at forward time so they track training.
template <class F>
struct KeySet {
    int z = 0;
    int count = 0;
    std::vector<F> keys;             // count x z
    std::vector<F> u;                // count
    std::vector<int32_t> stmt_idx;   // count
    std::vector<int32_t> op_idx;     // count
    std::vector<int> steps;          // count
    std::vector<KeyDescriptor> entries;

    bool empty() const { return count == 0; }
};

// Executes every tuple's program prefix against its example subset and embeds
// the resulting states with the key encoder. Tuples whose partial execution
// fails are dropped; an invalid state has no embedding.
template <class F>
KeySet<F> assemble_kvu(std::span<const ExecutionTuple> tuples,
                       std::span<const PESolution> solutions, std::span<const Example> examples,
                       const EncoderModel<F>& key_encoder, const DslConfig& cfg,
                       const Vocab& vocab) {
    (void)vocab;
    KeySet<F> out;
    out.z = key_encoder.h.z;
    if (tuples.empty()) return out;

    // Replay each distinct (m, subset) pair once.
    std::vector<StateTensor> states;
    std::vector<size_t> kept;  // indices into `tuples`
    int last_m = -1;
    std::vector<int> last_subset;
    Replay replay;
    bool replay_valid = false;
    for (size_t i = 0; i < tuples.size(); ++i) {
        const ExecutionTuple& et = tuples[i];
        const PESolution& sol = solutions[static_cast<size_t>(et.m)];
        if (et.m != last_m || et.subset != last_subset) {
            std::vector<Example> subset;
            for (int j : et.subset) subset.push_back(examples[static_cast<size_t>(j)]);
            replay = replay_program(sol.program, subset, cfg);
            replay_valid = true;
            last_m = et.m;
            last_subset = et.subset;
        }
        (void)replay_valid;
        if (et.t >= static_cast<int>(replay.states.size())) continue;  // failed before step t
        if (et.t >= static_cast<int>(sol.stmt_vocab.size())) continue; // no next statement
        states.push_back(encode_state(replay.states[static_cast<size_t>(et.t)], cfg));
        kept.push_back(i);
    }
    if (kept.empty()) return out;

    ag::NoGradGuard ng;
    ag::Var<F> embedded = key_encoder.embed_batch(states);

    out.count = static_cast<int>(kept.size());
    out.keys.resize(static_cast<size_t>(out.count) * static_cast<size_t>(out.z));
    for (size_t row = 0; row < kept.size(); ++row) {
        const ExecutionTuple& et = tuples[kept[row]];
        const PESolution& sol = solutions[static_cast<size_t>(et.m)];
        std::vector<F> pe = position_encoding<F>(et.t, out.z);
        for (int c = 0; c < out.z; ++c)
            out.keys[row * static_cast<size_t>(out.z) + static_cast<size_t>(c)] =
                embedded.data()[row * static_cast<size_t>(out.z) + static_cast<size_t>(c)] +
                pe[static_cast<size_t>(c)];
        out.u.push_back(static_cast<F>(sol.u));
        out.stmt_idx.push_back(sol.stmt_vocab[static_cast<size_t>(et.t)]);
        out.op_idx.push_back(sol.op_vocab[static_cast<size_t>(et.t)]);
        out.steps.push_back(et.t);
        KeyDescriptor d;
        d.m = et.m;
        d.j = et.subset.size() == 1 ? et.subset[0] : -1;
        d.t = et.t;
        d.stmt = sol.stmt_vocab[static_cast<size_t>(et.t)];
        d.op = sol.op_vocab[static_cast<size_t>(et.t)];
        out.entries.push_back(d);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Relative attention
// ---------------------------------------------------------------------------

// softmax((U^T + Q K^T / sqrt(d_k)) / 2) V, batched over query rows.
template <class F>
ag::Var<F> rel_att(const ag::Var<F>& q, const ag::Var<F>& k, const ag::Var<F>& v,
                   const ag::Var<F>& u, ag::Var<F>* weights_out = nullptr) {
    if (q.cols() != k.cols()) throw ShapeError("rel_att: query/key width mismatch");
    if (k.rows() != v.rows() || u.cols() != k.rows() || u.rows() != 1)
        throw ShapeError("rel_att: key/value/relation extent mismatch");
    F inv_sqrt = static_cast<F>(1.0 / std::sqrt(static_cast<double>(q.cols())));
    ag::Var<F> logits = ag::scale(ag::matmul_nt(q, k), inv_sqrt);
    ag::Var<F> weights = ag::row_softmax(ag::scale(ag::add_rowvec(logits, u), F(0.5)));
    if (weights_out != nullptr) *weights_out = weights;
    return ag::matmul(weights, v);
}

// ---------------------------------------------------------------------------
// Cross aggregator block
// ---------------------------------------------------------------------------

struct CaHyper {
    int z = 256;   // d_model, equals the encoder embedding width
    int tau = 8;   // heads
    int d_k = 64;  // = d_q = d_v
    int d_ff = 1024;
    int n_s = 1298;
    int n_o = 38;
    double dropout = 0.1;
    bool use_u = true;
    std::string variant = "default";
    std::string key_encoder = "pe";  // pe for default/pp, gps for pg

    json to_json() const {
        json j;
        j["kind"] = "ca";
        j["Z"] = z;
        j["tau"] = tau;
        j["d_k"] = d_k;
        j["d_ff"] = d_ff;
        j["n_s"] = n_s;
        j["n_o"] = n_o;
        j["dropout"] = dropout;
        j["use_u"] = use_u;
        j["variant"] = variant;
        j["key_encoder"] = key_encoder;
        return j;
    }

    static CaHyper from_json(const json& j) {
        CaHyper h;
        h.z = j.at("Z").get<int>();
        h.tau = j.at("tau").get<int>();
        h.d_k = j.at("d_k").get<int>();
        h.d_ff = j.at("d_ff").get<int>();
        h.n_s = j.at("n_s").get<int>();
        h.n_o = j.at("n_o").get<int>();
        h.dropout = j.at("dropout").get<double>();
        h.use_u = j.at("use_u").get<bool>();
        h.variant = j.at("variant").get<std::string>();
        h.key_encoder = j.at("key_encoder").get<std::string>();
        return h;
    }
};

// One attention block: multi-head relative attention over the PE keys, a
// positionwise feed-forward with residual layer norms, and statement /
// operator projections. The operator path shares every weight except its
// value embedding table and final projection.
template <class F>
struct CrossAggregator {
    CaHyper h;
    ParamStore<F> params;

    static CrossAggregator init(const CaHyper& hyper, uint64_t seed) {
        CrossAggregator m;
        m.h = hyper;
        m.params.init_seed = seed;
        Rng rng(seed);
        for (int i = 0; i < hyper.tau; ++i) {
            std::string head = "ca.h" + std::to_string(i);
            init_linear(m.params.add(head + ".q", hyper.z, hyper.d_k), rng);
            init_linear(m.params.add(head + ".k", hyper.z, hyper.d_k), rng);
            init_linear(m.params.add(head + ".v", hyper.z, hyper.d_k), rng);
        }
        add_linear(m.params, "ca.wo", hyper.tau * hyper.d_k, hyper.z, rng);
        init_embedding(m.params.add("ca.embed.stmt", hyper.n_s, hyper.z), rng);
        init_embedding(m.params.add("ca.embed.op", hyper.n_o, hyper.z), rng);
        auto ln1g = m.params.add("ca.ln1.g", 1, hyper.z);
        for (F& v : ln1g.values()) v = F(1);
        m.params.add("ca.ln1.b", 1, hyper.z);
        auto ln2g = m.params.add("ca.ln2.g", 1, hyper.z);
        for (F& v : ln2g.values()) v = F(1);
        m.params.add("ca.ln2.b", 1, hyper.z);
        add_linear(m.params, "ca.ff1", hyper.z, hyper.d_ff, rng);
        add_linear(m.params, "ca.ff2", hyper.d_ff, hyper.z, rng);
        add_linear(m.params, "ca.out.stmt", hyper.z, hyper.n_s, rng);
        add_linear(m.params, "ca.out.op", hyper.z, hyper.n_o, rng);
        return m;
    }

    json meta() const { return h.to_json(); }

    struct Forward {
        ag::Var<F> stmt_logits;  // B x n_s
        ag::Var<F> op_logits;    // B x n_o
        std::vector<std::vector<F>> attention;  // tau entries of B x L (when captured)
    };

    // query_emb: B x Z global state embeddings; global_steps: per-row step
    // values for the query position encoding.
    Forward forward(const ag::Var<F>& query_emb, std::span<const int> global_steps,
                    const KeySet<F>& keys, bool training = false, Rng* rng = nullptr,
                    bool capture_attention = false) const {
        if (keys.empty()) throw ShapeError("ca_forward: empty keyset");
        if (query_emb.cols() != h.z) throw ShapeError("ca_forward: query width mismatch");
        if (static_cast<int>(global_steps.size()) != query_emb.rows())
            throw ShapeError("ca_forward: step count mismatch");

        ag::Var<F> q = ag::add(query_emb, position_encoding_rows<F>(global_steps, h.z));
        ag::Var<F> k = ag::constant<F>(keys.count, h.z, keys.keys);
        ag::Var<F> v_s = ag::add(ag::embedding(params.at("ca.embed.stmt"), keys.stmt_idx),
                                 position_encoding_rows<F>(keys.steps, h.z));
        ag::Var<F> v_o = ag::add(ag::embedding(params.at("ca.embed.op"), keys.op_idx),
                                 position_encoding_rows<F>(keys.steps, h.z));
        std::vector<F> u_data(keys.u.begin(), keys.u.end());
        if (!h.use_u) u_data.assign(keys.u.size(), F(0));
        ag::Var<F> u = ag::constant<F>(1, keys.count, u_data);

        Forward out;
        std::vector<ag::Var<F>> ctx_s, ctx_o;
        for (int i = 0; i < h.tau; ++i) {
            std::string head = "ca.h" + std::to_string(i);
            ag::Var<F> qh = ag::matmul(q, params.at(head + ".q"));
            ag::Var<F> kh = ag::matmul(k, params.at(head + ".k"));
            ag::Var<F> vsh = ag::matmul(v_s, params.at(head + ".v"));
            ag::Var<F> voh = ag::matmul(v_o, params.at(head + ".v"));
            F inv_sqrt = static_cast<F>(1.0 / std::sqrt(static_cast<double>(h.d_k)));
            ag::Var<F> logits = ag::scale(ag::matmul_nt(qh, kh), inv_sqrt);
            ag::Var<F> weights = ag::row_softmax(ag::scale(ag::add_rowvec(logits, u), F(0.5)));
            if (capture_attention) out.attention.push_back(weights.values());
            if (training && rng != nullptr) weights = ag::dropout(weights, h.dropout, *rng, true);
            ctx_s.push_back(ag::matmul(weights, vsh));
            ctx_o.push_back(ag::matmul(weights, voh));
        }

        auto trunk = [&](std::vector<ag::Var<F>>& ctx) {
            ag::Var<F> merged = linear(params, "ca.wo",
                                       ag::concat_cols(std::span<const ag::Var<F>>(ctx)));
            if (training && rng != nullptr) merged = ag::dropout(merged, h.dropout, *rng, true);
            ag::Var<F> x = ag::layernorm_rows(ag::add(q, merged), params.at("ca.ln1.g"),
                                              params.at("ca.ln1.b"));
            ag::Var<F> ff = linear(params, "ca.ff2", ag::relu(linear(params, "ca.ff1", x)));
            if (training && rng != nullptr) ff = ag::dropout(ff, h.dropout, *rng, true);
            return ag::layernorm_rows(ag::add(x, ff), params.at("ca.ln2.g"),
                                      params.at("ca.ln2.b"));
        };
        out.stmt_logits = linear(params, "ca.out.stmt", trunk(ctx_s));
        out.op_logits = linear(params, "ca.out.op", trunk(ctx_o));
        return out;
    }

    // Inference: statement probabilities for a batch of queries.
    std::vector<std::vector<F>> predict_stmt(const ag::Var<F>& query_emb,
                                             std::span<const int> global_steps,
                                             const KeySet<F>& keys,
                                             std::vector<std::vector<F>>* attention = nullptr) const {
        ag::NoGradGuard ng;
        Forward fwd = forward(query_emb, global_steps, keys, false, nullptr, attention != nullptr);
        if (attention != nullptr) *attention = fwd.attention;
        ag::Var<F> probs = ag::row_softmax(fwd.stmt_logits);
        std::vector<std::vector<F>> out(static_cast<size_t>(probs.rows()));
        for (int r = 0; r < probs.rows(); ++r)
            out[static_cast<size_t>(r)].assign(
                probs.data() + static_cast<size_t>(r) * static_cast<size_t>(h.n_s),
                probs.data() + static_cast<size_t>(r + 1) * static_cast<size_t>(h.n_s));
        return out;
    }
};

inline CrossAggregator<float> aggregator_from_checkpoint(const Checkpoint& ckpt) {
    CaHyper h = CaHyper::from_json(ckpt.meta);
    CrossAggregator<float> m = CrossAggregator<float>::init(h, 0);
    restore_params(m.params, ckpt);
    return m;
}

}  // namespace listsynth
