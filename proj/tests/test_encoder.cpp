#include <catch2/catch_amalgamated.hpp>

#include "gradcheck.hpp"
#include "listsynth/encoder.hpp"
#include "sample_cases.hpp"

using namespace listsynth;

namespace {

EncoderHyper toy_hyper(int n_examples_unused = 0) {
    (void)n_examples_unused;
    EncoderHyper h;
    h.nu = 3;
    h.z = 8;
    h.e = 4;
    h.slot_hidden = 6;
    h.n_s = Vocab(3).num_statements();
    h.n_o = 38;
    return h;
}

std::vector<Example> toy_examples(int n) {
    std::vector<Example> out;
    for (int i = 0; i < n; ++i) {
        Example ex;
        ex.inputs = {Value::from_list({i + 1, 2 * i, 5})};
        ex.output = Value::from_int(i);
        out.push_back(ex);
    }
    return out;
}

}  // namespace

TEST_CASE("embedding output shapes and pooling", "[encoder]") {
    DslConfig cfg;
    cfg.nu = 3;
    EncoderModel<float> m = EncoderModel<float>::init(toy_hyper(), 11);

    auto exs = toy_examples(4);
    StateTensor st = encode_state(init_state(exs, cfg), cfg);
    auto out = m.embed_state(st);
    CHECK(out.per_example.rows() == 4);
    CHECK(out.per_example.cols() == 8);
    CHECK(out.pooled.rows() == 1);
    CHECK(out.pooled.cols() == 8);

    SECTION("identical rows collapse to the row representation") {
        std::vector<Example> same(3, exs[0]);
        StateTensor st2 = encode_state(init_state(same, cfg), cfg);
        auto o2 = m.embed_state(st2);
        for (int c = 0; c < 8; ++c) {
            CHECK(o2.pooled.data()[c] == o2.per_example.data()[c]);
            CHECK(o2.per_example.data()[c] == o2.per_example.data()[8 + c]);
        }
    }

    SECTION("pooling is permutation invariant") {
        auto permuted = exs;
        std::swap(permuted[0], permuted[3]);
        std::swap(permuted[1], permuted[2]);
        StateTensor st2 = encode_state(init_state(permuted, cfg), cfg);
        auto o2 = m.embed_state(st2);
        for (int c = 0; c < 8; ++c) CHECK(out.pooled.data()[c] == o2.pooled.data()[c]);
    }
}

TEST_CASE("zero-weight heads give uniform distributions and drop 0.5", "[encoder]") {
    DslConfig cfg;
    cfg.nu = 3;
    EncoderModel<float> m = EncoderModel<float>::init(toy_hyper(), 3);
    for (const char* name : {"head.stmt.w", "head.stmt.b", "head.op.w", "head.op.b",
                             "head.drop.w", "head.drop.b"})
        for (float& v : m.params.at(name).values()) v = 0.0f;

    auto exs = toy_examples(2);
    StateTensor st = encode_state(init_state(exs, cfg), cfg);
    PredictionTriple pred = m.predict_heads(m.embed_state(st).pooled);
    REQUIRE(pred.stmt.size() == static_cast<size_t>(m.h.n_s));
    REQUIRE(pred.op.size() == 38);
    REQUIRE(pred.drop.size() == 3);
    for (float p : pred.stmt)
        CHECK_THAT(p, Catch::Matchers::WithinRel(1.0 / m.h.n_s, 1e-4));
    for (float p : pred.op) CHECK_THAT(p, Catch::Matchers::WithinRel(1.0 / 38.0, 1e-4));
    for (float p : pred.drop) CHECK_THAT(p, Catch::Matchers::WithinAbs(0.5, 1e-6));

    double stmt_sum = 0;
    for (float p : pred.stmt) stmt_sum += p;
    CHECK_THAT(stmt_sum, Catch::Matchers::WithinAbs(1.0, 1e-6));
}

TEST_CASE("outputs are valid distributions for arbitrary parameters", "[encoder][property]") {
    DslConfig cfg;
    cfg.nu = 3;
    for (uint64_t seed : {1ull, 2ull, 3ull, 4ull}) {
        EncoderModel<float> m = EncoderModel<float>::init(toy_hyper(), seed);
        Rng noise(seed * 77);
        for (auto& [name, v] : m.params.items())
            for (float& x : v.values()) x += static_cast<float>(noise.normal(0, 0.5));
        auto exs = toy_examples(3);
        StateTensor st = encode_state(init_state(exs, cfg), cfg);
        PredictionTriple pred = m.predict_heads(m.embed_state(st).pooled);
        double sum_s = 0, sum_o = 0;
        for (float p : pred.stmt) {
            REQUIRE(std::isfinite(p));
            REQUIRE(p >= 0.0f);
            sum_s += p;
        }
        for (float p : pred.op) sum_o += p;
        CHECK_THAT(sum_s, Catch::Matchers::WithinAbs(1.0, 1e-5));
        CHECK_THAT(sum_o, Catch::Matchers::WithinAbs(1.0, 1e-5));
        for (float p : pred.drop) {
            CHECK(p >= 0.0f);
            CHECK(p <= 1.0f);
        }
    }
}

TEST_CASE("step loss at uniform equals the closed form", "[encoder][oracle]") {
    DslConfig cfg;  // nu = 11
    EncoderHyper h;   // full-size heads, tiny trunk widths would change nothing
    h.nu = 11;
    h.z = 16;
    h.e = 4;
    h.slot_hidden = 8;
    h.n_s = 1298;
    h.n_o = 38;
    EncoderModel<double> m = EncoderModel<double>::init(h, 5);
    for (const char* name : {"head.stmt.w", "head.stmt.b", "head.op.w", "head.op.b",
                             "head.drop.w", "head.drop.b"})
        for (double& v : m.params.at(name).values()) v = 0.0;

    auto exs = toy_examples(5);
    StateTensor st = encode_state(init_state(exs, cfg), cfg);
    auto logits = m.head_logits(m.embed_batch({&st, 1}));

    TrainTarget tgt;
    tgt.stmt = 17;
    tgt.op = 3;
    tgt.drop.assign(11, 0);
    tgt.drop[0] = 1;
    auto loss = step_loss_batch<double>(logits, {&tgt, 1});
    const double expected = std::log(1298.0) + std::log(38.0) + 11.0 * std::log(2.0);
    CHECK_THAT(loss.item(), Catch::Matchers::WithinAbs(expected, 1e-3));
    CHECK_THAT(expected, Catch::Matchers::WithinAbs(18.4308, 1e-3));
}

TEST_CASE("perfect prediction drives the loss to zero", "[encoder]") {
    // Fabricate logits that already match the target.
    ag::Var<double> stmt = ag::zeros<double>(1, 5);
    stmt.values() = {30.0, 0.0, 0.0, 0.0, 0.0};
    ag::Var<double> op = ag::zeros<double>(1, 3);
    op.values() = {40.0, 0.0, 0.0};
    ag::Var<double> drop = ag::zeros<double>(1, 2);
    drop.values() = {40.0, -40.0};
    EncoderModel<double>::HeadLogits logits{stmt, op, drop};
    TrainTarget tgt;
    tgt.stmt = 0;
    tgt.op = 0;
    tgt.drop = {1, 0};
    auto loss = step_loss_batch<double>(logits, {&tgt, 1});
    CHECK(loss.item() >= 0.0);
    CHECK(loss.item() < 1e-9);
}

TEST_CASE("full encoder step loss passes gradient checks at toy dims", "[encoder][gradcheck]") {
    DslConfig cfg;
    cfg.nu = 3;
    EncoderModel<double> m = EncoderModel<double>::init(toy_hyper(), 21);

    auto exs = toy_examples(2);
    StateTensor st0 = encode_state(init_state(exs, cfg), cfg);
    auto exs2 = toy_examples(2);
    exs2[0].inputs[0] = Value::from_int(3);
    exs2[1].inputs[0] = Value::from_int(-7);
    StateTensor st1 = encode_state(init_state(exs2, cfg), cfg);
    std::vector<StateTensor> batch = {st0, st1};

    std::vector<TrainTarget> targets(2);
    targets[0].stmt = 5;
    targets[0].op = 2;
    targets[0].drop = {1, 0, 0};
    targets[1].stmt = 11;
    targets[1].op = 7;
    targets[1].drop = {0, 1, 0};

    auto make_loss = [&]() {
        auto logits = m.head_logits(m.embed_batch(batch));
        return step_loss_batch<double>(logits, targets);
    };
    auto report = gradcheck::run(m.params, make_loss, 1e-5, 60);
    INFO(report.worst_param << "[" << report.worst_index << "]");
    CHECK(report.max_rel_error <= 1e-5);
}

TEST_CASE("loss is nonnegative for random logits", "[encoder][property]") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        ag::Var<double> stmt = ag::zeros<double>(1, 6);
        ag::Var<double> op = ag::zeros<double>(1, 4);
        ag::Var<double> drop = ag::zeros<double>(1, 3);
        for (double& v : stmt.values()) v = rng.normal(0, 3);
        for (double& v : op.values()) v = rng.normal(0, 3);
        for (double& v : drop.values()) v = rng.normal(0, 3);
        EncoderModel<double>::HeadLogits logits{stmt, op, drop};
        TrainTarget tgt;
        tgt.stmt = static_cast<int32_t>(rng.uniform_int(0, 5));
        tgt.op = static_cast<int32_t>(rng.uniform_int(0, 3));
        tgt.drop = {static_cast<uint8_t>(rng.uniform_int(0, 1)),
                    static_cast<uint8_t>(rng.uniform_int(0, 1)),
                    static_cast<uint8_t>(rng.uniform_int(0, 1))};
        auto loss = step_loss_batch<double>(logits, {&tgt, 1});
        CHECK(loss.item() >= 0.0);
    }
}

TEST_CASE("encoder checkpoints restore exactly", "[encoder]") {
    EncoderModel<float> m = EncoderModel<float>::init(toy_hyper(), 77);
    m.h.kind = "pe";
    save_checkpoint("/tmp/listsynth_enc.ckpt", m.meta(), m.params);
    Checkpoint ckpt = load_checkpoint("/tmp/listsynth_enc.ckpt");
    EncoderModel<float> r = encoder_from_checkpoint(ckpt);
    CHECK(r.h.kind == "pe");
    CHECK(r.h.z == m.h.z);
    for (const auto& [name, v] : m.params.items()) {
        const auto rv = r.params.at(name);
        CHECK(std::memcmp(rv.data(), v.data(), v.size() * sizeof(float)) == 0);
    }
}
