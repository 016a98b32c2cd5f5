#include "sumkit/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "sumkit/data.hpp"
#include "sumkit/errors.hpp"

namespace sumkit {

void generation_config::validate() const {
    if (!(temperature >= 0.0 && temperature <= 1.0)) {
        throw config_error("temperature must lie in [0, 1]");
    }
    if (top_k && *top_k == 0) throw invalid_k_error();
    if (top_p && !(*top_p > 0.0 && *top_p <= 1.0)) {
        throw config_error("top_p must lie in (0, 1]");
    }
    if (num_beams == 0) throw config_error("num_beams must be positive");
    if (no_repeat_ngram_size && *no_repeat_ngram_size == 0) {
        throw config_error("no_repeat_ngram_size must be positive");
    }
    if (repetition_penalty < 1.0) {
        throw invalid_penalty_error("repetition_penalty must be >= 1, got " +
                                    std::to_string(repetition_penalty));
    }
    if (!(length_penalty >= 0.0)) throw config_error("length_penalty must be non-negative");
}

generation_config generation_config::paper_preset() {
    generation_config cfg;
    cfg.temperature = 0.0;
    cfg.top_k = 3;
    cfg.top_p = 0.95;
    cfg.num_beams = 20;
    cfg.early_stopping = true;
    cfg.no_repeat_ngram_size = 3;
    cfg.repetition_penalty = 2.0;
    return cfg;
}

std::vector<double> apply_temperature(const std::vector<double>& logits, double temperature) {
    std::vector<double> probs(logits.size(), 0.0);
    if (logits.empty()) return probs;
    if (temperature == 0.0) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < logits.size(); ++i) {
            if (logits[i] > logits[best]) best = i;
        }
        probs[best] = 1.0;
        return probs;
    }
    double max_logit = logits[0] / temperature;
    for (std::size_t i = 1; i < logits.size(); ++i) {
        max_logit = std::max(max_logit, logits[i] / temperature);
    }
    double denom = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp(logits[i] / temperature - max_logit);
        denom += probs[i];
    }
    for (double& p : probs) p /= denom;
    return probs;
}

std::vector<double> apply_repetition_penalty(const std::vector<double>& logits,
                                             const std::set<token_id>& seen, double penalty) {
    if (penalty < 1.0) {
        throw invalid_penalty_error("repetition penalty must be >= 1, got " +
                                    std::to_string(penalty));
    }
    std::vector<double> out = logits;
    for (token_id t : seen) {
        if (t >= out.size()) continue;
        if (out[t] > 0.0) {
            out[t] /= penalty;
        } else if (out[t] < 0.0) {
            out[t] *= penalty;
        }
    }
    return out;
}

std::vector<double> filter_top_k(const std::vector<double>& probs, std::uint32_t k) {
    if (k == 0) throw invalid_k_error();
    if (k >= probs.size()) return probs;
    std::vector<std::size_t> order(probs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&probs](std::size_t a, std::size_t b) {
        if (probs[a] != probs[b]) return probs[a] > probs[b];
        return a < b;  // boundary ties keep the lowest index
    });
    std::vector<double> out(probs.size(), 0.0);
    double mass = 0.0;
    for (std::size_t r = 0; r < k; ++r) mass += probs[order[r]];
    for (std::size_t r = 0; r < k; ++r) out[order[r]] = probs[order[r]] / mass;
    return out;
}

std::vector<double> filter_top_p(const std::vector<double>& probs, double p) {
    if (p >= 1.0) return probs;
    std::vector<std::size_t> order(probs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&probs](std::size_t a, std::size_t b) {
        if (probs[a] != probs[b]) return probs[a] > probs[b];
        return a < b;
    });
    std::vector<double> out(probs.size(), 0.0);
    double mass = 0.0;
    std::size_t kept = 0;
    for (std::size_t r = 0; r < order.size(); ++r) {
        mass += probs[order[r]];
        ++kept;
        if (mass >= p) break;  // the crossing token is kept
    }
    for (std::size_t r = 0; r < kept; ++r) out[order[r]] = probs[order[r]] / mass;
    return out;
}

std::set<token_id> banned_ngram_continuations(const token_sequence& prefix, std::uint32_t n) {
    std::set<token_id> banned;
    if (n == 0 || prefix.size() + 1 < n) return banned;
    // map every (n-1)-gram to the tokens that followed it
    const std::size_t ctx = n - 1;
    if (prefix.size() < n) return banned;  // prefix holds no complete n-gram yet
    token_sequence suffix(prefix.end() - static_cast<std::ptrdiff_t>(ctx), prefix.end());
    for (std::size_t i = 0; i + n <= prefix.size(); ++i) {
        bool match = true;
        for (std::size_t j = 0; j < ctx; ++j) {
            if (prefix[i + j] != suffix[j]) {
                match = false;
                break;
            }
        }
        if (match) banned.insert(prefix[i + ctx]);
    }
    return banned;
}

namespace {

struct live_beam {
    token_sequence tokens;
    double log_score = 0.0;
};

struct candidate {
    double score;
    token_id token;
    std::size_t beam;
};

// transformed next-token distribution for one beam
std::vector<double> step_distribution(const std::vector<double>& logits, const live_beam& beam,
                                      std::size_t prompt_len, const generation_config& cfg) {
    std::vector<double> working = logits;
    if (cfg.repetition_penalty > 1.0) {
        std::set<token_id> seen;
        std::size_t from = cfg.penalize_prompt_tokens ? 0 : prompt_len;
        for (std::size_t i = from; i < beam.tokens.size(); ++i) seen.insert(beam.tokens[i]);
        working = apply_repetition_penalty(working, seen, cfg.repetition_penalty);
    }
    // temperature 0 with beam search means deterministic ranking by the raw
    // model distribution, so the one-hot limit applies only at t > 0
    std::vector<double> probs =
        apply_temperature(working, cfg.temperature > 0.0 ? cfg.temperature : 1.0);
    if (cfg.top_k) probs = filter_top_k(probs, *cfg.top_k);
    if (cfg.top_p) probs = filter_top_p(probs, *cfg.top_p);
    if (cfg.no_repeat_ngram_size) {
        for (token_id t : banned_ngram_continuations(beam.tokens, *cfg.no_repeat_ngram_size)) {
            if (t < probs.size()) probs[t] = 0.0;  // hard ban, no renormalization
        }
    }
    return probs;
}

}  // namespace

beam_search_result beam_search(const logits_fn& next_logits, const token_sequence& prompt,
                               const generation_config& cfg, token_id eos) {
    cfg.validate();
    if (prompt.empty()) throw config_error("beam_search requires a non-empty prompt");

    beam_search_result result;
    std::vector<live_beam> live;
    live.push_back({prompt, 0.0});
    std::vector<hypothesis> finished;

    std::vector<candidate> pool;
    for (std::uint32_t step = 0; step < cfg.max_new_tokens && !live.empty(); ++step) {
        result.diagnostics.steps_taken = step + 1;
        pool.clear();
        for (std::size_t b = 0; b < live.size(); ++b) {
            std::vector<double> probs =
                step_distribution(next_logits(live[b].tokens), live[b], prompt.size(), cfg);
            bool any = false;
            for (std::size_t t = 0; t < probs.size(); ++t) {
                if (probs[t] > 0.0) {
                    any = true;
                    pool.push_back({live[b].log_score + std::log(probs[t]),
                                    static_cast<token_id>(t), b});
                }
            }
            if (!any) {
                // every token banned: force eos with a sentinel penalty so the
                // hypothesis survives only when nothing real exists
                hypothesis forced;
                forced.tokens = live[b].tokens;
                forced.tokens.push_back(eos);
                forced.log_score = live[b].log_score - 1e9;
                forced.finished = true;
                finished.push_back(std::move(forced));
                ++result.diagnostics.forced_eos_count;
            }
        }

        std::sort(pool.begin(), pool.end(), [](const candidate& a, const candidate& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.token != b.token) return a.token < b.token;
            return a.beam < b.beam;
        });

        std::vector<live_beam> next_live;
        next_live.reserve(cfg.num_beams);
        for (std::size_t r = 0; r < pool.size(); ++r) {
            const candidate& c = pool[r];
            if (c.token == eos) {
                if (r < cfg.num_beams) {  // only beam-grade candidates finish
                    hypothesis h;
                    h.tokens = live[c.beam].tokens;
                    h.tokens.push_back(eos);
                    h.log_score = c.score;
                    h.finished = true;
                    finished.push_back(std::move(h));
                }
            } else if (next_live.size() < cfg.num_beams) {
                live_beam nb;
                nb.tokens = live[c.beam].tokens;
                nb.tokens.push_back(c.token);
                nb.log_score = c.score;
                next_live.push_back(std::move(nb));
            }
            if (next_live.size() >= cfg.num_beams && r + 1 >= cfg.num_beams) break;
        }
        live = std::move(next_live);

        if (cfg.early_stopping && finished.size() >= cfg.num_beams) break;
    }

    // selection: global max over finished and surviving live beams, with the
    // length-penalty exponent applied when configured; finished wins ties
    auto selection_score = [&cfg, &prompt](const token_sequence& tokens, double log_score) {
        if (cfg.length_penalty == 0.0) return log_score;
        auto gen_len = static_cast<double>(tokens.size() - prompt.size());
        return log_score / std::pow(std::max(gen_len, 1.0), cfg.length_penalty);
    };

    bool have_best = false;
    double best_sel = 0.0;
    for (const hypothesis& h : finished) {
        double s = selection_score(h.tokens, h.log_score);
        if (!have_best || s > best_sel) {
            have_best = true;
            best_sel = s;
            result.best = h;
        }
    }
    for (const live_beam& b : live) {
        double s = selection_score(b.tokens, b.log_score);
        if (!have_best || s > best_sel) {
            have_best = true;
            best_sel = s;
            result.best = hypothesis{b.tokens, b.log_score, false};
        }
    }
    if (!have_best) {
        // max_new_tokens == 0: the prompt itself is the only hypothesis
        result.best = hypothesis{prompt, 0.0, false};
    }
    return result;
}

namespace {

// Cuts article bytes from the front until the prompt fits the budget.
std::string truncate_article(const vocab& v, const std::string& text, std::size_t budget_tokens) {
    std::size_t cut = 0;
    std::size_t last_len = 0;
    std::size_t stall_step = 16;
    while (true) {
        std::string candidate_text = text.substr(cut);
        std::size_t len = encode(v, format_prompt(candidate_text)).size();
        if (len <= budget_tokens) return candidate_text;
        if (cut >= text.size()) {
            throw context_overflow_error("prompt template does not fit the model context");
        }
        std::size_t step = len - budget_tokens;  // every token spans at least one byte
        if (last_len != 0 && len >= last_len) step = std::max(step, stall_step *= 2);
        last_len = len;
        cut = std::min(text.size(), cut + std::max<std::size_t>(step, 1));
    }
}

}  // namespace

std::string summarize(const checkpoint& ckpt, const vocab& v, const std::string& article_text,
                      const generation_config& cfg) {
    cfg.validate();
    const std::size_t ctx = ckpt.config.max_context;
    if (cfg.max_new_tokens >= ctx) {
        throw context_overflow_error("max_new_tokens " + std::to_string(cfg.max_new_tokens) +
                                     " leaves no room for a prompt in context " +
                                     std::to_string(ctx));
    }
    const std::size_t budget = ctx - cfg.max_new_tokens;
    token_sequence prompt_ids = encode(v, format_prompt(truncate_article(v, article_text, budget)));
    if (prompt_ids.empty()) prompt_ids.push_back(vocab::bos_id);

    logits_fn provider = [&ckpt](const token_sequence& prefix) {
        return forward(ckpt, prefix).back();
    };
    beam_search_result r = beam_search(provider, prompt_ids, cfg, vocab::eos_id);

    token_sequence generated(r.best.tokens.begin() + static_cast<std::ptrdiff_t>(prompt_ids.size()),
                             r.best.tokens.end());
    while (!generated.empty() && generated.back() == vocab::eos_id) generated.pop_back();
    return decode(v, generated);
}

}  // namespace sumkit
