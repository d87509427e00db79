#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "quanet/prompts.hpp"

using namespace quanet;

TEST_CASE("delta step table, including bin boundaries") {
    auto d = [](int64_t c) { return select_delta(c); };
    CHECK(d(0) == 1);
    CHECK(d(1) == 1);
    CHECK(d(9) == 1);
    CHECK(d(10) == 2);
    CHECK(d(14) == 2);
    CHECK(d(19) == 2);
    CHECK(d(20) == 3);
    CHECK(d(49) == 3);
    CHECK(d(50) == 5);
    CHECK(d(99) == 5);
    CHECK(d(100) == 10);
    CHECK(d(199) == 10);
    CHECK(d(200) == 20);
    CHECK(d(499) == 20);
    CHECK(d(500) == 35);
    CHECK(d(999) == 35);
    CHECK(d(1000) == 50);
    CHECK(d(1500) == 50);
    CHECK(d(100000) == 50);
    CHECK_THROWS_AS(select_delta(-1), ConfigError);
}

TEST_CASE("counterfactual ordering: lower then upper half, each by descending distance") {
    PromptSet ps = generate_prompt_set("cars", 100, 8);
    CHECK(ps.delta == 10);
    CHECK(ps.factual_text == "a photo of 100 cars");
    CHECK(ps.counterfactual_counts ==
          std::vector<int64_t>{60, 70, 80, 90, 140, 130, 120, 110});
    CHECK(ps.counterfactual_texts.front() == "a photo of 60 cars");
    CHECK(ps.counterfactual_texts.back() == "a photo of 110 cars");
}

TEST_CASE("four counterfactuals around 14 kiwis") {
    PromptSet ps = generate_prompt_set("kiwis", 14, 4);
    CHECK(ps.delta == 2);
    CHECK(ps.counterfactual_counts == std::vector<int64_t>{10, 12, 18, 16});
    std::vector<int64_t> sorted = ps.counterfactual_counts;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int64_t>{10, 12, 16, 18});
    CHECK(ps.counterfactual_texts[1] == "a photo of 12 kiwis");
}

TEST_CASE("sub-one candidates reflect above the upper half") {
    CHECK(generate_prompt_set("birds", 1, 2).counterfactual_counts ==
          std::vector<int64_t>{3, 2});
    CHECK(generate_prompt_set("birds", 2, 4).counterfactual_counts ==
          std::vector<int64_t>{5, 1, 4, 3});
    CHECK(generate_prompt_set("birds", 1, 8).counterfactual_counts ==
          std::vector<int64_t>{9, 8, 7, 6, 5, 4, 3, 2});
}

TEST_CASE("counterfactual counts are distinct, positive, and exclude the factual count") {
    for (int64_t c : {1, 2, 3, 7, 10, 14, 55, 120, 400, 800, 1333}) {
        for (int n : {2, 4, 8}) {
            PromptSet ps = generate_prompt_set("things", c, n);
            CHECK(static_cast<int>(ps.counterfactual_counts.size()) == n);
            std::vector<int64_t> s = ps.counterfactual_counts;
            std::sort(s.begin(), s.end());
            CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
            for (int64_t v : s) {
                CHECK(v >= 1);
                CHECK(v != c);
            }
        }
    }
}

TEST_CASE("prompt set rejects bad arguments") {
    CHECK_THROWS_AS(generate_prompt_set("", 5, 8), ConfigError);
    CHECK_THROWS_AS(generate_prompt_set("cars", 0, 8), ConfigError);
    CHECK_THROWS_AS(generate_prompt_set("cars", 5, 7), ConfigError);
    CHECK_THROWS_AS(generate_prompt_set("cars", 5, 0), ConfigError);
    CHECK_THROWS_AS(generate_prompt_set("cars", 5, 4, -1), ConfigError);
}

TEST_CASE("a fixed step overrides the count-binned table") {
    // count 14 would normally bin to delta 2
    PromptSet ps = generate_prompt_set("kiwis", 14, 4, 5);
    CHECK(ps.delta == 5);
    CHECK(ps.counterfactual_counts == std::vector<int64_t>{4, 9, 24, 19});
    // and a large count to a coarse step
    PromptSet big = generate_prompt_set("kiwis", 600, 4, 5);
    CHECK(big.delta == 5);
    CHECK(big.counterfactual_counts == std::vector<int64_t>{590, 595, 610, 605});
    // passing zero means "use the table"
    CHECK(generate_prompt_set("kiwis", 14, 4, 0).delta == 2);
}

TEST_CASE("tokenizer maps digit runs to the numeral slot and tracks class words") {
    Vocab v;
    v.add_category("sea shells");
    TokenSeq t = tokenize("a photo of 12 sea shells", v);
    CHECK(t.ids.size() == 6);
    CHECK(t.num_pos == 3);
    CHECK(t.num_value == 12);
    CHECK(t.ids[t.num_pos] == Vocab::kNumId);
    CHECK(t.ids[0] == v.id("a"));
    CHECK(t.ids[4] == v.id("sea"));
    CHECK(t.ids[5] == v.id("shells"));
    CHECK(t.class_positions == std::vector<int>{4, 5});

    TokenSeq c = tokenize("a photo of sea shells", v);
    CHECK(c.num_pos == -1);
    CHECK(c.ids.size() == 5);
    CHECK(c.class_positions == std::vector<int>{3, 4});
}

TEST_CASE("tokenizer is case-insensitive; unknown words map to the reserved oov id") {
    Vocab v;
    v.add_category("Kiwis");
    CHECK(v.contains("kiwis"));
    TokenSeq t = tokenize("A Photo OF 3 KIWIS", v);
    CHECK(t.num_value == 3);
    CHECK(t.ids.back() == v.id("kiwis"));
    TokenSeq u = tokenize("a photo of 3 zebras", v);
    CHECK(u.ids.back() == Vocab::kOovId);
    CHECK(u.class_positions == std::vector<int>{4});
    CHECK_THROWS_AS(tokenize("a photo of 3 4 kiwis", v), ConfigError);
    CHECK_THROWS_AS(tokenize("   ", v), ConfigError);
}

TEST_CASE("vocab round-trips through its word list") {
    Vocab v;
    v.add_category("fuji apples");
    Vocab w = Vocab::from_words(v.words());
    CHECK(w.size() == v.size());
    CHECK(w.id("fuji") == v.id("fuji"));
    CHECK(w.id("apples") == v.id("apples"));
    CHECK(w.id("[num]") == Vocab::kNumId);
}
