#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace sumkit {

struct prf {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// f1 = 2PR/(P+R), or 0 when both vanish.
prf make_prf(double precision, double recall);

// Metric tokenization: lowercase (ASCII + basic Cyrillic), punctuation
// stripped, whitespace split. No stemming.
std::vector<std::string> metric_tokens(const std::string& text);

// ROUGE-N: clipped n-gram overlap. Texts shorter than n tokens score zero and
// raise the short_text flag instead of erroring.
prf rouge_n(const std::string& candidate, const std::string& reference, std::size_t n,
            bool* short_text = nullptr);

// ROUGE-L: longest common subsequence of the token lists.
prf rouge_l(const std::string& candidate, const std::string& reference,
            bool* short_text = nullptr);

// BLEU with clipped n-gram precisions up to max_n, uniform weights, and the
// brevity penalty exp(1 - r/c) for c <= r. Any zero precision zeroes the score.
double bleu(const std::string& candidate, const std::string& reference, std::size_t max_n = 4,
            bool* empty_candidate = nullptr);

// Greedy max-cosine matching between two lists of unit-norm vectors;
// similarities floor at 0 for the report. Throws dimension_error on mismatch.
prf bert_score(const std::vector<std::vector<double>>& cand_emb,
               const std::vector<std::vector<double>>& ref_emb);

// Contextual token-embedding source for bert_score.
class embedding_provider {
public:
    virtual ~embedding_provider() = default;
    virtual std::size_t dimension() const = 0;
    // One unit-norm vector per input token.
    virtual std::vector<std::vector<double>> embed(const std::vector<std::string>& tokens) const = 0;
};

// Built-in provider: hashes a token window around each position and expands
// the hash into a deterministic unit vector, so the metric runs without any
// pretrained encoder.
class hashed_embedding_provider : public embedding_provider {
public:
    explicit hashed_embedding_provider(std::size_t dimension = 32, std::size_t window = 1)
        : dimension_(dimension), window_(window) {}
    std::size_t dimension() const override { return dimension_; }
    std::vector<std::vector<double>> embed(const std::vector<std::string>& tokens) const override;

private:
    std::size_t dimension_;
    std::size_t window_;
};

struct score_report {
    prf rouge1;
    prf rouge2;
    prf rougeL;
    double bleu = 0.0;
    prf bertscore;
    bool has_bertscore = false;
    std::size_t n_examples = 0;
};

// Arithmetic means of the per-example metrics; bertscore only when a provider
// is given.
score_report evaluate_corpus(const std::vector<std::pair<std::string, std::string>>& pairs,
                             const embedding_provider* provider = nullptr,
                             std::size_t bleu_max_n = 4);

// Human-readable table and fixed-key JSON emission of the same report.
std::string render_report_table(const score_report& report);
nlohmann::ordered_json report_to_json(const score_report& report);

}  // namespace sumkit
