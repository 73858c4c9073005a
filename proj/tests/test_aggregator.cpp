#include <catch2/catch_amalgamated.hpp>

#include "gradcheck.hpp"
#include "listsynth/aggregator.hpp"
#include "sample_cases.hpp"

using namespace listsynth;

namespace {

PESolution make_solution(int example_index, const std::string& text,
                         std::span<const Example> examples, const Vocab& vocab) {
    PESolution sol;
    sol.found = true;
    sol.example_index = example_index;
    sol.program = parse_program(text);
    SolutionScore score = solution_score(sol.program, examples);
    sol.u = score.u;
    sol.satisfied = score.satisfied;
    REQUIRE(annotate_solution(sol, vocab));
    return sol;
}

// Scalar brute-force reference for a single query row.
std::vector<double> rel_att_reference(std::span<const double> q, const std::vector<double>& k,
                                      const std::vector<double>& v, std::span<const double> u,
                                      int L, int d, int dv) {
    std::vector<double> logits(static_cast<size_t>(L));
    for (int l = 0; l < L; ++l) {
        double dot = 0;
        for (int c = 0; c < d; ++c) dot += q[static_cast<size_t>(c)] * k[static_cast<size_t>(l * d + c)];
        logits[static_cast<size_t>(l)] = (u[static_cast<size_t>(l)] + dot / std::sqrt(d)) / 2.0;
    }
    double mx = *std::max_element(logits.begin(), logits.end());
    double denom = 0;
    for (double& x : logits) denom += std::exp(x - mx);
    std::vector<double> out(static_cast<size_t>(dv), 0.0);
    for (int l = 0; l < L; ++l) {
        double w = std::exp(logits[static_cast<size_t>(l)] - mx) / denom;
        for (int c = 0; c < dv; ++c) out[static_cast<size_t>(c)] += w * v[static_cast<size_t>(l * dv + c)];
    }
    return out;
}

EncoderHyper key_encoder_hyper() {
    EncoderHyper h;
    h.nu = 11;
    h.e = 4;
    h.slot_hidden = 6;
    h.z = 8;
    h.n_s = 1298;
    h.n_o = 38;
    h.kind = "pe";
    return h;
}

}  // namespace

TEST_CASE("key tuple counts follow the per-variant formulas", "[aggregator]") {
    DslConfig cfg;
    Vocab vocab(cfg.nu);
    // Shapes only matter here: fabricate solutions of lengths 5 and 7.
    PESolution p1, p2;
    p1.found = p2.found = true;
    p1.program = parse_program(
        "a <- LIST\nb <- REVERSE a\nc <- SORT b\nd <- REVERSE c\ne <- SORT d\nf <- SUM e\n");
    p2.program = parse_program(
        "a <- LIST\nb <- REVERSE a\nc <- SORT b\nd <- REVERSE c\ne <- SORT d\nf <- REVERSE e\n"
        "g <- SORT f\nh <- SUM g\n");
    REQUIRE(p1.program.length() == 5);
    REQUIRE(p2.program.length() == 7);
    p1.satisfied = {1, 3};
    p2.satisfied = {1, 2, 4, 5};
    std::vector<PESolution> sols = {p1, p2};

    auto dft = build_key_tuples(sols, KeyVariant::Default, 5);
    CHECK(dft.size() == 60);  // 5 * (5 + 7)
    auto pg = build_key_tuples(sols, KeyVariant::PG, 5);
    CHECK(pg.size() == 12);  // 5 + 7
    auto pp = build_key_tuples(sols, KeyVariant::PP, 5);
    CHECK(pp.size() == 38);  // 2*5 + 4*7

    SECTION("ordering is (m, j, t) ascending") {
        size_t i = 0;
        for (int m = 0; m < 2; ++m)
            for (int j = 0; j < 5; ++j)
                for (int t = 0; t < sols[static_cast<size_t>(m)].program.length(); ++t, ++i) {
                    CHECK(dft[i].m == m);
                    CHECK(dft[i].subset == std::vector<int>{j});
                    CHECK(dft[i].t == t);
                }
        CHECK(i == dft.size());
    }
    SECTION("pg subsets span all examples") {
        for (const auto& et : pg) CHECK(et.subset.size() == 5);
    }
    SECTION("failed solutions contribute nothing") {
        std::vector<PESolution> with_failed = sols;
        PESolution failed;
        failed.found = false;
        with_failed.push_back(failed);
        CHECK(build_key_tuples(with_failed, KeyVariant::Default, 5).size() == 60);
        std::vector<PESolution> none = {failed};
        CHECK_THROWS_AS(build_key_tuples(none, KeyVariant::Default, 5), ShapeError);
    }
}

TEST_CASE("rel_att equals the hand-computed example", "[aggregator][oracle]") {
    std::vector<double> qd = {1, 0}, kd = {1, 0, 0, 1}, vd = {1, 0, 0, 1}, ud = {0, 1};
    auto q = ag::constant<double>(1, 2, qd);
    auto k = ag::constant<double>(2, 2, kd);
    auto v = ag::constant<double>(2, 2, vd);
    auto u = ag::constant<double>(1, 2, ud);
    ag::Var<double> weights;
    ag::Var<double> out = rel_att(q, k, v, u, &weights);
    // softmax([1/sqrt(2)/2, 1/2])
    double w0 = std::exp(0.5 / std::sqrt(2.0)) /
                (std::exp(0.5 / std::sqrt(2.0)) + std::exp(0.5));
    CHECK_THAT(weights.data()[0], Catch::Matchers::WithinAbs(w0, 1e-12));
    CHECK_THAT(out.data()[0], Catch::Matchers::WithinAbs(w0, 1e-12));
    CHECK_THAT(out.data()[1], Catch::Matchers::WithinAbs(1.0 - w0, 1e-12));
    // cross-check against the published rounding
    CHECK_THAT(out.data()[0], Catch::Matchers::WithinAbs(0.4644, 1e-3));
    CHECK_THAT(out.data()[1], Catch::Matchers::WithinAbs(0.5356, 1e-3));
    // and against the scalar brute-force reference
    auto ref = rel_att_reference(qd, kd, vd, ud, 2, 2, 2);
    CHECK_THAT(out.data()[0], Catch::Matchers::WithinAbs(ref[0], 1e-12));
}

TEST_CASE("rel_att with zero relation scores is temperature-2 attention", "[aggregator][property]") {
    Rng rng(505);
    for (int trial = 0; trial < 100; ++trial) {
        int L = static_cast<int>(rng.uniform_int(1, 12));
        int d = static_cast<int>(rng.uniform_int(1, 8));
        int dv = static_cast<int>(rng.uniform_int(1, 8));
        std::vector<double> qd(static_cast<size_t>(d)), kd(static_cast<size_t>(L * d)),
            vd(static_cast<size_t>(L * dv)), zero(static_cast<size_t>(L), 0.0);
        for (double& x : qd) x = rng.normal(0, 2);
        for (double& x : kd) x = rng.normal(0, 2);
        for (double& x : vd) x = rng.normal(0, 2);
        auto out = rel_att(ag::constant<double>(1, d, qd), ag::constant<double>(L, d, kd),
                           ag::constant<double>(L, dv, vd), ag::constant<double>(1, L, zero));

        // independent temperature-2 reference
        std::vector<double> logits(static_cast<size_t>(L));
        for (int l = 0; l < L; ++l) {
            double dot = 0;
            for (int c = 0; c < d; ++c) dot += qd[static_cast<size_t>(c)] * kd[static_cast<size_t>(l * d + c)];
            logits[static_cast<size_t>(l)] = dot / std::sqrt(static_cast<double>(d)) / 2.0;
        }
        double mx = *std::max_element(logits.begin(), logits.end());
        double denom = 0;
        for (double x : logits) denom += std::exp(x - mx);
        for (int c = 0; c < dv; ++c) {
            double acc = 0;
            for (int l = 0; l < L; ++l)
                acc += std::exp(logits[static_cast<size_t>(l)] - mx) / denom *
                       vd[static_cast<size_t>(l * dv + c)];
            CHECK_THAT(out.data()[c], Catch::Matchers::WithinAbs(acc, 1e-6));
        }
    }
}

TEST_CASE("rel_att over a single key returns its value row", "[aggregator]") {
    std::vector<double> qd = {3, -1, 2}, kd = {0.5, 0.5, 0.5}, vd = {7, -2}, ud = {0.4};
    auto out = rel_att(ag::constant<double>(1, 3, qd), ag::constant<double>(1, 3, kd),
                       ag::constant<double>(1, 2, vd), ag::constant<double>(1, 1, ud));
    CHECK_THAT(out.data()[0], Catch::Matchers::WithinAbs(7.0, 1e-12));
    CHECK_THAT(out.data()[1], Catch::Matchers::WithinAbs(-2.0, 1e-12));
}

TEST_CASE("assemble_kvu builds keys in canonical order", "[aggregator]") {
    DslConfig cfg;
    Vocab vocab(cfg.nu);
    const auto& fixture = sample_cases::case_b();
    EncoderModel<float> enc = EncoderModel<float>::init(key_encoder_hyper(), 7);

    std::vector<PESolution> sols = {
        make_solution(0, fixture.pe[0].text, fixture.examples, vocab),
        make_solution(1, fixture.pe[1].text, fixture.examples, vocab),
    };
    auto tuples = build_key_tuples(sols, KeyVariant::Default, 5);
    CHECK(tuples.size() == 5 * (4 + 6));
    KeySet<float> ks = assemble_kvu<float>(tuples, sols, fixture.examples, enc, cfg, vocab);
    REQUIRE(ks.count > 0);
    CHECK(ks.count <= static_cast<int>(tuples.size()));
    CHECK(ks.z == 8);

    SECTION("relation scores depend only on the program") {
        for (int i = 0; i < ks.count; ++i) {
            double expect = sols[static_cast<size_t>(ks.entries[static_cast<size_t>(i)].m)].u;
            CHECK_THAT(ks.u[static_cast<size_t>(i)], Catch::Matchers::WithinAbs(expect, 1e-6));
        }
    }
    SECTION("values index the statement at t+1") {
        for (int i = 0; i < ks.count; ++i) {
            const KeyDescriptor& d = ks.entries[static_cast<size_t>(i)];
            CHECK(ks.stmt_idx[static_cast<size_t>(i)] ==
                  sols[static_cast<size_t>(d.m)].stmt_vocab[static_cast<size_t>(d.t)]);
        }
    }
    SECTION("key rows for t=0 embed the initial single-example state") {
        // first tuple is (m=0, j=0, t=0)
        REQUIRE(ks.entries[0].t == 0);
        std::vector<Example> subset = {fixture.examples[0]};
        StateTensor st = encode_state(init_state(subset, cfg), cfg);
        ag::NoGradGuard ng;
        auto emb = enc.embed_batch({&st, 1});
        auto pe = position_encoding<float>(0, 8);
        for (int c = 0; c < 8; ++c)
            CHECK_THAT(ks.keys[static_cast<size_t>(c)],
                       Catch::Matchers::WithinAbs(emb.data()[c] + pe[static_cast<size_t>(c)], 1e-6));
    }
    SECTION("tuples that fail mid-execution are dropped") {
        // Solution 1 reads ACCESS out of bounds on example 3 (0-based 2)
        // at step 2; its (j=2, t>=3) tuples must be missing.
        bool saw_late_failed_tuple = false;
        for (const auto& d : ks.entries)
            if (d.m == 1 && d.j == 2 && d.t >= 3) saw_late_failed_tuple = true;
        Replay rep = replay_program(sols[1].program, {&fixture.examples[2], 1}, cfg);
        if (!rep.ok) CHECK_FALSE(saw_late_failed_tuple);
    }
}

TEST_CASE("ca_forward is deterministic and well-formed at toy dims", "[aggregator]") {
    CaHyper h;
    h.z = 8;
    h.tau = 2;
    h.d_k = 4;
    h.d_ff = 16;
    h.n_s = 40;
    h.n_o = 10;
    CrossAggregator<float> ca = CrossAggregator<float>::init(h, 99);

    KeySet<float> ks;
    ks.z = 8;
    ks.count = 3;
    Rng rng(3);
    ks.keys.resize(24);
    for (float& v : ks.keys) v = static_cast<float>(rng.normal(0, 1));
    ks.u = {0.2f, 0.6f, 0.6f};
    ks.stmt_idx = {5, 9, 33};
    ks.op_idx = {1, 2, 7};
    ks.steps = {0, 1, 0};

    std::vector<float> qd(16);
    for (float& v : qd) v = static_cast<float>(rng.normal(0, 1));
    auto q = ag::constant<float>(2, 8, qd);
    std::vector<int> steps = {0, 1};

    auto f1 = ca.forward(q, steps, ks, false, nullptr, true);
    auto f2 = ca.forward(q, steps, ks, false, nullptr, true);
    CHECK(f1.stmt_logits.values() == f2.stmt_logits.values());
    CHECK(f1.op_logits.values() == f2.op_logits.values());
    CHECK(f1.stmt_logits.rows() == 2);
    CHECK(f1.stmt_logits.cols() == 40);
    CHECK(f1.op_logits.cols() == 10);

    SECTION("attention weights are distributions") {
        REQUIRE(f1.attention.size() == 2);
        for (const auto& head : f1.attention) {
            REQUIRE(head.size() == 6);  // B=2 x L=3
            for (int r = 0; r < 2; ++r) {
                double total = 0;
                for (int l = 0; l < 3; ++l) total += head[static_cast<size_t>(r * 3 + l)];
                CHECK_THAT(total, Catch::Matchers::WithinAbs(1.0, 1e-6));
            }
        }
    }

    SECTION("singleton keyset attends to its only row") {
        KeySet<float> one;
        one.z = 8;
        one.count = 1;
        one.keys.assign(ks.keys.begin(), ks.keys.begin() + 8);
        one.u = {0.4f};
        one.stmt_idx = {5};
        one.op_idx = {1};
        one.steps = {0};
        auto f = ca.forward(q, steps, one, false, nullptr, true);
        for (const auto& head : f.attention)
            for (float w : head) CHECK_THAT(w, Catch::Matchers::WithinAbs(1.0, 1e-6));
    }
}

TEST_CASE("full CA forward passes gradient checks at toy dims", "[aggregator][gradcheck]") {
    CaHyper h;
    h.z = 8;
    h.tau = 2;
    h.d_k = 4;
    h.d_ff = 12;
    h.n_s = 25;
    h.n_o = 9;
    CrossAggregator<double> ca = CrossAggregator<double>::init(h, 17);

    KeySet<double> ks;
    ks.z = 8;
    ks.count = 3;
    Rng rng(21);
    ks.keys.resize(24);
    for (double& v : ks.keys) v = rng.normal(0, 1);
    ks.u = {0.2, 0.6, 1.0};
    ks.stmt_idx = {3, 24, 11};
    ks.op_idx = {0, 8, 3};
    ks.steps = {0, 1, 2};

    std::vector<double> qd(16);
    for (double& v : qd) v = rng.normal(0, 1);
    auto q = ag::constant<double>(2, 8, qd);
    std::vector<int> steps = {0, 1};
    std::vector<int32_t> stmt_targets = {7, 11};
    std::vector<int32_t> op_targets = {2, 5};

    auto make_loss = [&]() {
        auto fwd = ca.forward(q, steps, ks);
        auto ce_s = ag::mean_all(ag::ce_rows(fwd.stmt_logits, stmt_targets));
        auto ce_o = ag::mean_all(ag::ce_rows(fwd.op_logits, op_targets));
        return ag::add(ce_s, ce_o);
    };
    auto report = gradcheck::run(ca.params, make_loss, 1e-5, 80);
    INFO(report.worst_param << "[" << report.worst_index << "]");
    CHECK(report.max_rel_error <= 1e-4);
}

TEST_CASE("per-head context lies within the projected value envelope", "[aggregator][property]") {
    // Attention output is a convex combination of value rows.
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        int L = static_cast<int>(rng.uniform_int(2, 9));
        int d = 5, dv = 4;
        std::vector<double> qd(static_cast<size_t>(d)), kd(static_cast<size_t>(L * d)),
            vd(static_cast<size_t>(L * dv)), ud(static_cast<size_t>(L));
        for (double& x : qd) x = rng.normal(0, 1);
        for (double& x : kd) x = rng.normal(0, 1);
        for (double& x : vd) x = rng.normal(0, 1);
        for (double& x : ud) x = rng.next_double();
        auto out = rel_att(ag::constant<double>(1, d, qd), ag::constant<double>(L, d, kd),
                           ag::constant<double>(L, dv, vd), ag::constant<double>(1, L, ud));
        for (int c = 0; c < dv; ++c) {
            double lo = 1e30, hi = -1e30;
            for (int l = 0; l < L; ++l) {
                lo = std::min(lo, vd[static_cast<size_t>(l * dv + c)]);
                hi = std::max(hi, vd[static_cast<size_t>(l * dv + c)]);
            }
            CHECK(out.data()[c] >= lo - 1e-9);
            CHECK(out.data()[c] <= hi + 1e-9);
        }
    }
}

TEST_CASE("aggregator checkpoints carry their tags", "[aggregator]") {
    CaHyper h;
    h.z = 8;
    h.tau = 2;
    h.d_k = 4;
    h.d_ff = 16;
    h.n_s = 40;
    h.n_o = 10;
    h.variant = "pp";
    h.key_encoder = "pe";
    h.use_u = false;
    CrossAggregator<float> ca = CrossAggregator<float>::init(h, 5);
    save_checkpoint("/tmp/listsynth_ca.ckpt", ca.meta(), ca.params);
    Checkpoint ckpt = load_checkpoint("/tmp/listsynth_ca.ckpt");
    CrossAggregator<float> r = aggregator_from_checkpoint(ckpt);
    CHECK(r.h.variant == "pp");
    CHECK(r.h.key_encoder == "pe");
    CHECK_FALSE(r.h.use_u);
    for (const auto& [name, v] : ca.params.items())
        CHECK(std::memcmp(r.params.at(name).data(), v.data(), v.size() * sizeof(float)) == 0);
}
