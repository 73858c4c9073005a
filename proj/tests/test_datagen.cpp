#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "listsynth/datagen.hpp"
#include "listsynth/io.hpp"

using namespace listsynth;

TEST_CASE("generated programs are well-formed and reproducible", "[datagen]") {
    DslConfig cfg;
    for (int length : {1, 2, 3}) {
        Rng rng(1000 + static_cast<uint64_t>(length));
        Program p = gen_program(length, rng, cfg);
        CHECK(p.length() == length);
        CHECK(p.inputs.size() >= 1);
        CHECK(p.inputs.size() <= 3);
        bool has_list = false;
        for (InputType t : p.inputs) has_list = has_list || t == InputType::List;
        CHECK(has_list);
        // round trip through the text format
        CHECK(parse_program(format_program(p)) == p);
        // statements only reference previously defined variables
        for (size_t i = 0; i < p.stmts.size(); ++i) {
            int defined = static_cast<int>(p.inputs.size() + i);
            CHECK(p.stmts[i].arg0 < defined);
            if (p.stmts[i].arg1 >= 0) CHECK(p.stmts[i].arg1 < defined);
        }
    }

    SECTION("fixed seed, fixed program") {
        Rng a(7), b(7);
        CHECK(gen_program(3, a, cfg) == gen_program(3, b, cfg));
    }
}

TEST_CASE("gen_examples satisfies the program by construction", "[datagen]") {
    DatagenConfig cfg;
    Rng rng(5);
    Program p = gen_program(2, rng, cfg.dsl);
    auto examples = gen_examples(p, 5, rng, cfg);
    REQUIRE(examples.has_value());
    CHECK(examples->size() == 5);
    for (const Example& ex : *examples) CHECK(satisfies(p, ex));

    SECTION("deterministic under a fixed seed") {
        Rng r1(19), r2(19);
        Program q = gen_program(2, r1, cfg.dsl);
        Program q2 = gen_program(2, r2, cfg.dsl);
        REQUIRE(q == q2);
        auto e1 = gen_examples(q, 5, r1, cfg);
        auto e2 = gen_examples(q2, 5, r2, cfg);
        REQUIRE(e1.has_value());
        REQUIRE(e2.has_value());
        for (size_t i = 0; i < e1->size(); ++i) {
            CHECK((*e1)[i].output == (*e2)[i].output);
            for (size_t k = 0; k < (*e1)[i].inputs.size(); ++k)
                CHECK((*e1)[i].inputs[k] == (*e2)[i].inputs[k]);
        }
    }

    SECTION("programs that always overflow are rejected") {
        // Repeated squaring overflows for any input of magnitude >= 2, and
        // the sampler range excludes enough small values to exhaust retries.
        Program p2 = parse_program(
            "a <- LIST\n"
            "b <- MAP **2 a\n"
            "c <- MAP **2 b\n"
            "d <- MAP **2 c\n");
        DatagenConfig strict;
        strict.input_min = 50;
        strict.input_max = 63;
        strict.input_resamples = 50;
        Rng r(3);
        CHECK_FALSE(gen_examples(p2, 5, r, strict).has_value());
    }
}

TEST_CASE("equiv_filter discards candidates matched by shorter programs", "[datagen]") {
    DatagenConfig cfg;
    Corpus corpus;

    // Identity on sorted inputs.
    DatasetRecord sorter;
    sorter.program = parse_program("a <- LIST\nb <- SORT a\n");
    sorter.text = format_program(sorter.program);
    for (std::vector<int> in : {std::vector<int>{1, 2, 3}, {0, 4, 9}, {-3, -1, 5}, {2, 2}, {7}}) {
        Example ex;
        ex.inputs = {Value::from_list(in)};
        ex.output = execute_program(sorter.program, ex.inputs).value;
        sorter.examples.push_back(ex);
    }
    CHECK(equiv_filter(sorter, corpus));  // empty corpus keeps everything
    corpus.insert(sorter);

    DatasetRecord double_reverse;
    double_reverse.program = parse_program("a <- LIST\nb <- REVERSE a\nc <- REVERSE b\n");
    double_reverse.text = format_program(double_reverse.program);
    for (const Example& ex : sorter.examples) {
        Example copy = ex;  // identical sorted inputs; reverse twice = identity = sort here
        copy.output = execute_program(double_reverse.program, copy.inputs).value;
        double_reverse.examples.push_back(copy);
    }
    CHECK_FALSE(equiv_filter(double_reverse, corpus));

    SECTION("a candidate equal to a corpus program is discarded") {
        CHECK_FALSE(equiv_filter(sorter, corpus));
    }
    SECTION("different input signature never matches") {
        DatasetRecord two_inputs;
        two_inputs.program = parse_program("a <- LIST\nb <- INT\nc <- TAKE b a\n");
        two_inputs.text = format_program(two_inputs.program);
        Example ex;
        ex.inputs = {Value::from_list({1, 2, 3}), Value::from_int(2)};
        ex.output = Value::from_list({1, 2});
        two_inputs.examples = {ex};
        CHECK(equiv_filter(two_inputs, corpus));
    }
}

TEST_CASE("build_dataset produces valid, filtered, reproducible files", "[datagen]") {
    DatagenConfig cfg;
    DatasetSpec spec;
    spec.counts = {{1, 30}, {2, 30}};
    spec.seed = 99;

    Corpus corpus;
    DatagenStats stats;
    auto records = build_dataset(spec, cfg, corpus, &stats);
    REQUIRE(records.size() == 60);
    CHECK(stats.generated == 60);

    SECTION("every record satisfies its examples") {
        for (const auto& r : records)
            for (const Example& ex : r.examples) CHECK(satisfies(r.program, ex));
    }
    SECTION("no mutual-satisfaction violations") {
        // recheck pairwise in the shorter-or-equal direction
        for (size_t i = 0; i < records.size(); ++i) {
            for (size_t j = 0; j < records.size(); ++j) {
                if (i == j) continue;
                if (records[j].program.length() > records[i].program.length()) continue;
                if (records[j].program.inputs != records[i].program.inputs) continue;
                bool all = true;
                for (const Example& ex : records[i].examples)
                    if (!satisfies(records[j].program, ex)) {
                        all = false;
                        break;
                    }
                CHECK_FALSE(all);
            }
        }
    }
    SECTION("byte-identical regeneration") {
        Corpus corpus2;
        auto again = build_dataset(spec, cfg, corpus2);
        REQUIRE(again.size() == records.size());
        for (size_t i = 0; i < records.size(); ++i) {
            CHECK(again[i].text == records[i].text);
            for (size_t k = 0; k < records[i].examples.size(); ++k)
                CHECK(again[i].examples[k].output == records[i].examples[k].output);
        }
    }
    SECTION("jsonl round trip") {
        json header;
        header["kind"] = "dataset";
        header["seed"] = spec.seed;
        write_jsonl("/tmp/listsynth_ds.jsonl", header, records, record_to_json);
        json read_header;
        auto loaded = read_dataset("/tmp/listsynth_ds.jsonl", &read_header);
        REQUIRE(loaded.size() == records.size());
        CHECK(read_header.at("seed").get<uint64_t>() == 99);
        for (size_t i = 0; i < loaded.size(); ++i) {
            CHECK(loaded[i].text == records[i].text);
            CHECK(loaded[i].program == records[i].program);
        }
        // byte-identical rewrite
        write_jsonl("/tmp/listsynth_ds2.jsonl", header, loaded, record_to_json);
        std::ifstream a("/tmp/listsynth_ds.jsonl"), b("/tmp/listsynth_ds2.jsonl");
        std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
        std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
        CHECK(sa == sb);
    }
    SECTION("test split filters against the training corpus") {
        DatasetSpec test_spec;
        test_spec.counts = {{1, 10}, {2, 10}};
        test_spec.seed = 123;
        auto test_records = build_dataset(test_spec, cfg, corpus, &stats);
        for (const auto& t : test_records)
            for (const auto& r : records) {
                if (r.program.length() > t.program.length()) continue;
                if (r.program.inputs != t.program.inputs) continue;
                bool all = true;
                for (const Example& ex : t.examples)
                    if (!satisfies(r.program, ex)) {
                        all = false;
                        break;
                    }
                CHECK_FALSE(all);
            }
    }
}

TEST_CASE("timeout policies draw the documented budget scales", "[datagen]") {
    TimeoutPolicy fixed;
    Rng rng(1);
    CHECK(fixed.draw_scales(rng) == std::vector<double>{0.5});

    TimeoutPolicy triple;
    triple.tag = TimeoutPolicy::Tag::Triple;
    CHECK(triple.draw_scales(rng) == std::vector<double>{0.4, 0.5, 0.6});

    TimeoutPolicy random;
    random.tag = TimeoutPolicy::Tag::Random;
    for (int i = 0; i < 20; ++i) {
        auto scales = random.draw_scales(rng);
        REQUIRE(scales.size() == 2);
        for (double s : scales) {
            CHECK(s >= 0.1 - 1e-12);
            CHECK(s <= 0.9 + 1e-12);
            // multiples of 0.1
            CHECK_THAT(s * 10.0 - std::round(s * 10.0), Catch::Matchers::WithinAbs(0.0, 1e-9));
        }
    }
}

TEST_CASE("instance files honor the omission rules", "[datagen]") {
    // Random-weight PE model: most searches fail, some succeed partially;
    // emitted instances must contain no perfect and no all-failed entries.
    DatagenConfig cfg;
    DatasetSpec spec;
    spec.counts = {{1, 12}};
    spec.seed = 2024;
    Corpus corpus;
    auto records = build_dataset(spec, cfg, corpus);

    Vocab vocab(cfg.dsl.nu);
    EncoderHyper eh;
    eh.nu = 11;
    eh.e = 4;
    eh.slot_hidden = 6;
    eh.z = 16;
    eh.n_s = vocab.num_statements();
    eh.n_o = 38;
    eh.kind = "pe";
    EncoderModel<float> pe = EncoderModel<float>::init(eh, 9);

    TimeoutPolicy policy;
    policy.unit = SearchBudget{SearchBudget::Kind::Nodes, 0.0, 400};
    InstanceStats stats;
    auto instances = build_aggregator_instances(records, pe, policy, PeMode::All, cfg.dsl, vocab,
                                                77, 1, &stats);
    CHECK(instances.size() <= records.size());
    CHECK(stats.emitted == static_cast<int64_t>(instances.size()));
    for (const auto& inst : instances) {
        CHECK_FALSE(inst.pe.empty());
        for (const PESolution& sol : inst.pe) {
            CHECK(sol.u > 0.0);
            CHECK(sol.u < 1.0);
        }
    }

    SECTION("jsonl round trip") {
        json header;
        header["kind"] = "instances";
        write_jsonl("/tmp/listsynth_inst.jsonl", header, instances, instance_to_json);
        auto loaded = read_instances("/tmp/listsynth_inst.jsonl");
        REQUIRE(loaded.size() == instances.size());
        for (size_t i = 0; i < loaded.size(); ++i) {
            CHECK(loaded[i].global_text == instances[i].global_text);
            REQUIRE(loaded[i].pe.size() == instances[i].pe.size());
            for (size_t k = 0; k < loaded[i].pe.size(); ++k) {
                CHECK(loaded[i].pe[k].u == instances[i].pe[k].u);
                CHECK(loaded[i].pe[k].satisfied == instances[i].pe[k].satisfied);
            }
        }
    }
}
