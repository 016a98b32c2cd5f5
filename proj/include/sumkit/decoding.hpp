#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sumkit/model.hpp"
#include "sumkit/tokenizer.hpp"

namespace sumkit {

// The generation hyperparameters: temperature, top-k, top-p, beam count,
// early stopping, no-repeat-ngram size, repetition penalty, plus the
// generation budget.
struct generation_config {
    double temperature = 0.0;
    std::optional<std::uint32_t> top_k;
    std::optional<double> top_p;
    std::uint32_t num_beams = 1;
    bool early_stopping = false;
    std::optional<std::uint32_t> no_repeat_ngram_size;
    double repetition_penalty = 1.0;
    std::uint32_t max_new_tokens = 128;
    // off-by-default extensions
    double length_penalty = 0.0;          // selection score = log_score / len^alpha
    bool penalize_prompt_tokens = true;   // repetition penalty counts prompt tokens

    void validate() const;

    // The generation settings used for the replication preset. The source
    // swaps the top-k/top-p domains ("top-p value at 3 and top-k value at
    // 0.95"); the preset reads them as top_k=3, top_p=0.95.
    static generation_config paper_preset();
};

struct hypothesis {
    token_sequence tokens;  // prompt + generated continuation
    double log_score = 0.0;
    bool finished = false;
};

struct beam_diagnostics {
    std::size_t forced_eos_count = 0;  // beams whose every token was banned
    std::size_t steps_taken = 0;
};

struct beam_search_result {
    hypothesis best;
    beam_diagnostics diagnostics;
};

using logits_fn = std::function<std::vector<double>(const token_sequence&)>;

// Temperature transform. t > 0: softmax(logits / t). t = 0: one-hot at the
// argmax, lowest index on ties.
std::vector<double> apply_temperature(const std::vector<double>& logits, double temperature);

// Sign-split logit penalty for tokens already seen: positive logits divide by
// the penalty, negative ones multiply. Throws invalid_penalty_error below 1.
std::vector<double> apply_repetition_penalty(const std::vector<double>& logits,
                                             const std::set<token_id>& seen, double penalty);

// Keeps the k most probable entries (boundary ties kept at the lowest index)
// and renormalizes. Throws invalid_k_error for k = 0.
std::vector<double> filter_top_k(const std::vector<double>& probs, std::uint32_t k);

// Keeps the smallest descending-probability prefix whose cumulative mass
// reaches p (the crossing token is kept) and renormalizes.
std::vector<double> filter_top_p(const std::vector<double>& probs, double p);

// Tokens whose appendance would repeat an n-gram already present in prefix.
std::set<token_id> banned_ngram_continuations(const token_sequence& prefix, std::uint32_t n);

// Deterministic beam search over any next-token-logits provider. Per step and
// per beam the logits pass through repetition penalty, temperature, top-k,
// top-p, and the n-gram ban, in that order; banned tokens get probability 0
// without renormalization. Candidates are ranked by cumulative
// log-probability with ties broken by (token id, beam index). A beam whose
// eos continuation ranks inside the step's top-num_beams candidates moves to
// the finished pool. With early_stopping, search ends once num_beams
// hypotheses have finished. Selection returns the highest-scoring hypothesis
// over the finished pool and the final live beams, finished winning ties.
beam_search_result beam_search(const logits_fn& next_logits, const token_sequence& prompt,
                               const generation_config& cfg, token_id eos);

// Formats the article into the inference prompt, truncates it from the front
// to fit the model context, and decodes only the newly generated tokens.
std::string summarize(const checkpoint& ckpt, const vocab& v, const std::string& article_text,
                      const generation_config& cfg);

}  // namespace sumkit
