#include "quanet/prompts.hpp"

#include <algorithm>
#include <cctype>

namespace quanet {

int64_t DeltaPolicy::select(int64_t count) const {
    require(count >= 0, "delta policy: count must be non-negative, got " +
                            std::to_string(count));
    require(edges.size() == deltas.size() && !edges.empty(),
            "delta policy: malformed bin table");
    size_t bin = 0;
    for (size_t i = 0; i < edges.size(); ++i) {
        if (count >= edges[i]) bin = i;
    }
    return deltas[bin];
}

std::string make_prompt_text(const std::string& category, int64_t count) {
    return "a photo of " + std::to_string(count) + " " + category;
}

std::string make_category_text(const std::string& category) {
    return "a photo of " + category;
}

PromptSet generate_prompt_set(const std::string& category, int64_t factual_count,
                              int num_counterfactuals, int64_t fixed_delta) {
    if (category.empty()) throw ConfigError("prompt set: empty category");
    if (factual_count < 1)
        throw ConfigError("prompt set: factual count must be >= 1, got " +
                          std::to_string(factual_count));
    if (num_counterfactuals < 2 || num_counterfactuals % 2 != 0)
        throw ConfigError("prompt set: counterfactual count must be even and >= 2, got " +
                          std::to_string(num_counterfactuals));
    if (fixed_delta < 0)
        throw ConfigError("prompt set: fixed_delta must be >= 0, got " +
                          std::to_string(fixed_delta));

    PromptSet ps;
    ps.category = category;
    ps.factual_count = factual_count;
    ps.delta = fixed_delta > 0 ? fixed_delta : select_delta(factual_count);
    ps.factual_text = make_prompt_text(category, factual_count);

    const int half = num_counterfactuals / 2;
    const int64_t d = ps.delta;

    // Lower candidates a_p - k*d for k = half..1 (descending distance).
    // Sub-one candidates are reflected to a_p + (half + j)*d with the
    // smallest unused j and collected in front, largest first.
    std::vector<int64_t> lower, reflected;
    int next_j = 1;
    for (int k = half; k >= 1; --k) {
        int64_t c = factual_count - static_cast<int64_t>(k) * d;
        if (c < 1) {
            reflected.push_back(factual_count + static_cast<int64_t>(half + next_j) * d);
            ++next_j;
        } else {
            lower.push_back(c);
        }
    }
    std::sort(reflected.rbegin(), reflected.rend());

    ps.counterfactual_counts.reserve(num_counterfactuals);
    for (int64_t c : reflected) ps.counterfactual_counts.push_back(c);
    for (int64_t c : lower) ps.counterfactual_counts.push_back(c);
    for (int k = half; k >= 1; --k)
        ps.counterfactual_counts.push_back(factual_count + static_cast<int64_t>(k) * d);

    ps.counterfactual_texts.reserve(num_counterfactuals);
    for (int64_t c : ps.counterfactual_counts)
        ps.counterfactual_texts.push_back(make_prompt_text(category, c));
    return ps;
}

Vocab::Vocab() {
    words_.push_back("[num]");
    index_["[num]"] = kNumId;
    words_.push_back("[oov]");
    index_["[oov]"] = kOovId;
    for (const char* w : {"a", "photo", "of"}) add_word(w);
}

int Vocab::add_word(const std::string& word) {
    auto it = index_.find(word);
    if (it != index_.end()) return it->second;
    int id = static_cast<int>(words_.size());
    words_.push_back(word);
    index_[word] = id;
    return id;
}

void Vocab::add_category(const std::string& category) {
    std::string cur;
    for (char ch : category + " ") {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty()) add_word(cur);
            cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
}

int Vocab::id(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kOovId : it->second;
}

bool Vocab::contains(const std::string& word) const { return index_.count(word) > 0; }

bool Vocab::is_template_word(const std::string& word) const {
    return word == "a" || word == "photo" || word == "of";
}

Vocab Vocab::from_words(const std::vector<std::string>& words) {
    Vocab v;
    require(!words.empty() && words[0] == "[num]",
            "vocabulary list must start with the [num] placeholder");
    for (size_t i = 1; i < words.size(); ++i) v.add_word(words[i]);
    return v;
}

TokenSeq tokenize(const std::string& text, const Vocab& vocab) {
    TokenSeq seq;
    std::string cur;
    auto flush = [&] {
        if (cur.empty()) return;
        bool numeric = std::all_of(cur.begin(), cur.end(),
                                   [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
        if (numeric) {
            if (seq.num_pos >= 0)
                throw ConfigError("prompt '" + text + "' contains more than one numeral");
            seq.num_pos = static_cast<int>(seq.ids.size());
            seq.num_value = std::stoll(cur);
            seq.ids.push_back(Vocab::kNumId);
        } else {
            if (!vocab.is_template_word(cur))
                seq.class_positions.push_back(static_cast<int>(seq.ids.size()));
            seq.ids.push_back(vocab.id(cur));
        }
        cur.clear();
    };
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            flush();
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    flush();
    if (seq.ids.empty()) throw ConfigError("cannot tokenize empty prompt");
    return seq;
}

}  // namespace quanet
