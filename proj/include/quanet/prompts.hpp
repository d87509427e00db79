#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "quanet/common.hpp"

namespace quanet {

// Step size used to offset counterfactual counts from the factual count.
// Larger factual counts get coarser steps so the counterfactuals stay
// visually distinguishable.
struct DeltaPolicy {
    // bin lower bounds and the step assigned to each bin
    std::vector<int64_t> edges{0, 10, 20, 50, 100, 200, 500, 1000};
    std::vector<int64_t> deltas{1, 2, 3, 5, 10, 20, 35, 50};

    int64_t select(int64_t count) const;
};

inline int64_t select_delta(int64_t count) { return DeltaPolicy{}.select(count); }

// A factual prompt plus an even number of counterfactual prompts whose
// counts bracket the factual count at +-k*delta. Order of the
// counterfactuals: lower half by descending distance, then upper half by
// descending distance. Candidates that would fall below 1 are reflected
// above the upper half and placed at the front.
struct PromptSet {
    std::string category;
    int64_t factual_count = 0;
    int64_t delta = 0;
    std::string factual_text;
    std::vector<int64_t> counterfactual_counts;
    std::vector<std::string> counterfactual_texts;
};

std::string make_prompt_text(const std::string& category, int64_t count);
std::string make_category_text(const std::string& category);

// fixed_delta > 0 bypasses the count-binned step table and uses that step
// for every counterfactual.
PromptSet generate_prompt_set(const std::string& category, int64_t factual_count,
                              int num_counterfactuals = 8, int64_t fixed_delta = 0);

// Tokenized prompt. Numerals are mapped to one shared [num] placeholder id;
// the integer value rides alongside so the text encoder can build a
// value-dependent embedding for that position. Class words (anything that is
// not a template word or the numeral) are tracked by index.
struct TokenSeq {
    std::vector<int> ids;
    int num_pos = -1;                  // index of the numeral token, -1 if none
    int64_t num_value = 0;             // integer value at num_pos
    std::vector<int> class_positions;  // indices of class-name tokens
};

// Word-level vocabulary. Id 0 is reserved for [num], id 1 for out-of-
// vocabulary words encountered at tokenize time.
class Vocab {
public:
    static constexpr int kNumId = 0;
    static constexpr int kOovId = 1;

    Vocab();

    int add_word(const std::string& word);
    void add_category(const std::string& category);
    int id(const std::string& word) const;  // kOovId when unknown
    bool contains(const std::string& word) const;
    bool is_template_word(const std::string& word) const;
    int size() const { return static_cast<int>(words_.size()); }
    const std::vector<std::string>& words() const { return words_; }

    static Vocab from_words(const std::vector<std::string>& words);

private:
    std::vector<std::string> words_;
    std::map<std::string, int> index_;
};

// Lowercases, splits on whitespace, maps digit runs to the [num] slot.
TokenSeq tokenize(const std::string& text, const Vocab& vocab);

}  // namespace quanet
