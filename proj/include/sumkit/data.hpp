#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace sumkit {

// One corpus record: article body, reference summary, optional metadata.
struct article_pair {
    std::string text;
    std::string summary;
    std::string title;
    std::string date;
    std::string url;
};

struct cleaning_config {
    std::size_t min_summary_tokens = 15;
    std::size_t max_summary_tokens = 120;
    std::size_t overlap_n = 2;
    double min_overlap = 0.1;
    double max_overlap = 0.9;

    void validate() const;
};

// Per-filter drop counts emitted alongside cleaned output.
struct clean_stats {
    std::size_t kept = 0;
    std::size_t dropped_empty = 0;
    std::size_t dropped_short_summary = 0;
    std::size_t dropped_long_summary = 0;
    std::size_t dropped_low_overlap = 0;
    std::size_t dropped_high_overlap = 0;

    std::size_t total() const {
        return kept + dropped_empty + dropped_short_summary + dropped_long_summary +
               dropped_low_overlap + dropped_high_overlap;
    }
};

// JSON-Lines corpus IO. Records are returned in file order; optional fields
// default to empty. Malformed JSON raises parse_error with the line number,
// a missing text/summary field raises schema_error.
std::vector<article_pair> load_corpus(const std::string& path);
void save_corpus(const std::string& path, const std::vector<article_pair>& pairs);

// Lowercased whitespace tokens, the unit of the cleaning filters.
std::vector<std::string> whitespace_tokens(const std::string& text);

// Fraction of distinct summary n-grams that also occur in the text.
// Throws too_short_error when the summary has fewer than n tokens.
double ngram_overlap(const std::string& text, const std::string& summary, std::size_t n);

// Applies the length and overlap filters, preserving order. Never throws;
// pairs whose overlap is undefined (summary shorter than overlap_n) are
// dropped under the low-overlap counter.
std::pair<std::vector<article_pair>, clean_stats> clean(const std::vector<article_pair>& pairs,
                                                        const cleaning_config& cfg);

// Seeded shuffle then prefix cut: |test| = round(test_fraction * |pairs|).
// Throws too_few_examples_error for fewer than 2 pairs.
std::pair<std::vector<article_pair>, std::vector<article_pair>> split(
    const std::vector<article_pair>& pairs, double test_fraction, std::uint64_t seed);

// Training-sequence template; byte-exact.
std::string format_example(const article_pair& pair);

// Inference-prompt template; byte-exact, no BOS, no trailing space.
std::string format_prompt(const std::string& text);

}  // namespace sumkit
