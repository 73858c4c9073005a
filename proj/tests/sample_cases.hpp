#pragma once

// Two hand-verified synthesis tasks used as interpreter oracles across the
// test suite: each bundles IO examples, a known global solution, and
// per-example solutions with their expected satisfied sets.

#include <string>
#include <vector>

#include "listsynth/dsl.hpp"

namespace sample_cases {

struct PerExampleFixture {
    bool found = true;
    std::string text;                 // empty when !found
    std::vector<int> satisfied;      // 1-based example indices
    double u = 0.0;
};

struct CaseFixture {
    std::vector<listsynth::Example> examples;
    std::string global_text;
    std::vector<PerExampleFixture> pe;
};

inline listsynth::Example ex_list(std::vector<int> in, std::vector<int> out) {
    listsynth::Example e;
    e.inputs.push_back(listsynth::Value::from_list(in));
    e.output = listsynth::Value::from_list(out);
    return e;
}

inline listsynth::Example ex_list_int(std::vector<int> in0, int in1, std::vector<int> out) {
    listsynth::Example e;
    e.inputs.push_back(listsynth::Value::from_list(in0));
    e.inputs.push_back(listsynth::Value::from_int(in1));
    e.output = listsynth::Value::from_list(out);
    return e;
}

// A single-list task whose solutions all pivot on doubling the input.
inline const CaseFixture& case_a() {
    static const CaseFixture c = [] {
        CaseFixture f;
        f.examples = {
            ex_list({4, 5, 6, 2, 6, 2, 1, 6, 1, 4, 2, 5, 6, 3, 2, 2}, {4, 12, 10, 8}),
            ex_list({3, 2, 5, 0, 3, 2, 3, 0, 4, 1, 0, 2, 3, 0, 3, 4}, {6, 0, 10, 4, 6}),
            ex_list({1, 1, 4, 0, 0, 0, 0, 5, 0, 5, 3, 5}, {2, 2}),
            ex_list({4, 4, 1, 4, 4, 1, 4, 2, 2, 1, 3, 4}, {4, 8, 2, 8, 8, 2, 8, 8}),
            ex_list({4, 1, 1, 3, 3, 1, 4, 0, 4, 2, 4}, {8, 2, 6, 6, 2, 2, 8}),
        };
        f.global_text =
            "a <- LIST\n"
            "b <- ZIPWITH + a a\n"
            "c <- TAIL b\n"
            "d <- TAKE c b\n"
            "e <- COUNT >0 d\n"
            "f <- TAKE e d\n"
            "g <- COUNT >0 f\n"
            "h <- TAKE g f\n"
            "i <- TAKE g h\n"
            "j <- HEAD i\n"
            "k <- TAKE j i\n"
            "l <- TAKE j k\n"
            "m <- TAKE j k\n"
            "n <- TAKE j k\n"
            "o <- REVERSE n\n";
        f.pe = {
            {true,
             "a <- LIST\n"
             "b <- ZIPWITH + a a\n"
             "c <- TAIL b\n"
             "d <- TAKE c b\n"
             "e <- REVERSE d\n",
             {1, 4},
             0.4},
            {true,
             "a <- LIST\n"
             "b <- ZIPWITH + a a\n"
             "c <- HEAD b\n"
             "d <- TAKE c b\n"
             "e <- COUNT >0 d\n"
             "f <- TAKE e d\n"
             "g <- REVERSE f\n",
             {2, 3, 4, 5},
             0.8},
        };
        return f;
    }();
    return c;
}

// A (list, int) task: double a prefix, add one, then truncate.
inline const CaseFixture& case_b() {
    static const CaseFixture c = [] {
        CaseFixture f;
        f.examples = {
            ex_list_int({1, 0, 3, 3, 3}, 35, {3, 1, 7}),
            ex_list_int({6, 3, 3, 1, 2, 2, 0, 3, 8, 7}, 50, {13, 7, 7}),
            ex_list_int({1, 5, 6, 10, 5, 11, 7, 0, 7, 11, 10, 9, 4}, 78,
                        {3, 11, 13, 21, 11, 23, 15, 1, 15, 23}),
            ex_list_int({12, 4, 11, 11, 4, 7, 12, 11, 11, 10, 5, 8, 9, 8}, 166,
                        {25, 9, 23, 23, 9, 15, 25, 23}),
            ex_list_int({4, 0, 5, 5, 1, 1, 1, 1}, 126, {9}),
        };
        f.global_text =
            "a <- LIST\n"
            "b <- INT\n"
            "c <- MAXIMUM a\n"
            "d <- TAKE c a\n"
            "e <- TAIL d\n"
            "f <- TAKE b d\n"
            "g <- ZIPWITH + f f\n"
            "h <- MAP +1 g\n"
            "i <- TAKE e h\n";
        f.pe = {
            {true,
             "a <- LIST\n"
             "b <- INT\n"
             "c <- TAIL a\n"
             "d <- TAKE c a\n"
             "e <- ZIPWITH + d d\n"
             "f <- MAP +1 e\n",
             {1, 4, 5},
             0.6},
            {true,
             "a <- LIST\n"
             "b <- INT\n"
             "c <- TAKE b a\n"
             "d <- TAIL c\n"
             "e <- ACCESS d c\n"
             "f <- TAKE e c\n"
             "g <- ZIPWITH + f f\n"
             "h <- MAP +1 g\n",
             {1, 2},
             0.4},
            {false, "", {}, 0.0},
            {true,
             "a <- LIST\n"
             "b <- INT\n"
             "c <- TAIL a\n"
             "d <- TAKE c a\n"
             "e <- ZIPWITH + d d\n"
             "f <- MAP +1 e\n",
             {1, 4, 5},
             0.6},
            {true,
             "a <- LIST\n"
             "b <- INT\n"
             "c <- TAIL a\n"
             "d <- TAKE c a\n"
             "e <- ZIPWITH + d d\n"
             "f <- MAP +1 e\n",
             {1, 4, 5},
             0.6},
        };
        return f;
    }();
    return c;
}

}  // namespace sample_cases
