#include "sumkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <unordered_map>

#include "sumkit/det_random.hpp"
#include "sumkit/errors.hpp"

namespace sumkit {

prf make_prf(double precision, double recall) {
    prf out;
    out.precision = precision;
    out.recall = recall;
    out.f1 = (precision + recall > 0.0) ? 2.0 * precision * recall / (precision + recall) : 0.0;
    return out;
}

namespace {

// Decodes one UTF-8 codepoint; malformed bytes pass through as single-byte
// codepoints so arbitrary input never faults.
std::uint32_t next_codepoint(const std::string& s, std::size_t& i) {
    auto b0 = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    std::uint32_t cp = b0;
    if ((b0 & 0xe0) == 0xc0) {
        len = 2;
        cp = b0 & 0x1fu;
    } else if ((b0 & 0xf0) == 0xe0) {
        len = 3;
        cp = b0 & 0x0fu;
    } else if ((b0 & 0xf8) == 0xf0) {
        len = 4;
        cp = b0 & 0x07u;
    }
    if (i + len > s.size()) {
        ++i;
        return b0;
    }
    for (std::size_t k = 1; k < len; ++k) {
        auto bk = static_cast<unsigned char>(s[i + k]);
        if ((bk & 0xc0) != 0x80) {
            ++i;
            return b0;
        }
        cp = (cp << 6) | (bk & 0x3fu);
    }
    i += len;
    return cp;
}

void append_codepoint(std::string& out, std::uint32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else {
        out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    }
}

std::uint32_t lower_codepoint(std::uint32_t cp) {
    if (cp >= 'A' && cp <= 'Z') return cp + 0x20;
    if (cp >= 0x410 && cp <= 0x42f) return cp + 0x20;  // А..Я
    if (cp == 0x401) return 0x451;                     // Ё
    return cp;
}

bool is_punct_codepoint(std::uint32_t cp) {
    if (cp < 0x80) {
        return std::ispunct(static_cast<int>(cp)) != 0;
    }
    switch (cp) {
        case 0xab:    // «
        case 0xbb:    // »
        case 0x2013:  // –
        case 0x2014:  // —
        case 0x2018:
        case 0x2019:
        case 0x201c:
        case 0x201d:
        case 0x201e:
        case 0x2026:  // …
            return true;
        default:
            return false;
    }
}

}  // namespace

std::vector<std::string> metric_tokens(const std::string& text) {
    std::vector<std::string> tokens;
    std::string current;
    std::size_t i = 0;
    while (i < text.size()) {
        std::uint32_t cp = next_codepoint(text, i);
        if (cp < 0x80 && std::isspace(static_cast<int>(cp))) {
            if (!current.empty()) {
                tokens.push_back(std::move(current));
                current.clear();
            }
            continue;
        }
        if (is_punct_codepoint(cp)) continue;
        append_codepoint(current, lower_codepoint(cp));
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

namespace {

std::unordered_map<std::string, std::size_t> ngram_counts(const std::vector<std::string>& tokens,
                                                          std::size_t n) {
    std::unordered_map<std::string, std::size_t> counts;
    if (tokens.size() < n) return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        std::string key;
        for (std::size_t k = 0; k < n; ++k) {
            if (k > 0) key.push_back('\x1f');
            key += tokens[i + k];
        }
        ++counts[key];
    }
    return counts;
}

std::size_t clipped_matches(const std::unordered_map<std::string, std::size_t>& cand,
                            const std::unordered_map<std::string, std::size_t>& ref) {
    std::size_t matched = 0;
    for (const auto& [g, c] : cand) {
        auto it = ref.find(g);
        if (it != ref.end()) matched += std::min(c, it->second);
    }
    return matched;
}

}  // namespace

prf rouge_n(const std::string& candidate, const std::string& reference, std::size_t n,
            bool* short_text) {
    std::vector<std::string> cand = metric_tokens(candidate);
    std::vector<std::string> ref = metric_tokens(reference);
    if (short_text) *short_text = false;
    if (cand.size() < n || ref.size() < n) {
        if (short_text) *short_text = true;
        return prf{};
    }
    auto cand_counts = ngram_counts(cand, n);
    auto ref_counts = ngram_counts(ref, n);
    auto matched = static_cast<double>(clipped_matches(cand_counts, ref_counts));
    double total_cand = static_cast<double>(cand.size() - n + 1);
    double total_ref = static_cast<double>(ref.size() - n + 1);
    return make_prf(matched / total_cand, matched / total_ref);
}

prf rouge_l(const std::string& candidate, const std::string& reference, bool* short_text) {
    std::vector<std::string> cand = metric_tokens(candidate);
    std::vector<std::string> ref = metric_tokens(reference);
    if (short_text) *short_text = false;
    if (cand.empty() || ref.empty()) {
        if (short_text) *short_text = true;
        return prf{};
    }
    // LCS over tokens, rolling single-row DP.
    std::vector<std::size_t> row(ref.size() + 1, 0);
    for (std::size_t i = 1; i <= cand.size(); ++i) {
        std::size_t diagonal = 0;
        for (std::size_t j = 1; j <= ref.size(); ++j) {
            std::size_t up = row[j];
            row[j] = (cand[i - 1] == ref[j - 1]) ? diagonal + 1 : std::max(row[j], row[j - 1]);
            diagonal = up;
        }
    }
    auto lcs = static_cast<double>(row[ref.size()]);
    return make_prf(lcs / static_cast<double>(cand.size()), lcs / static_cast<double>(ref.size()));
}

double bleu(const std::string& candidate, const std::string& reference, std::size_t max_n,
            bool* empty_candidate) {
    std::vector<std::string> cand = metric_tokens(candidate);
    std::vector<std::string> ref = metric_tokens(reference);
    if (empty_candidate) *empty_candidate = false;
    if (cand.empty()) {
        if (empty_candidate) *empty_candidate = true;
        return 0.0;
    }
    double log_sum = 0.0;
    for (std::size_t n = 1; n <= max_n; ++n) {
        if (cand.size() < n) return 0.0;  // no n-grams at this order
        auto cand_counts = ngram_counts(cand, n);
        auto ref_counts = ngram_counts(ref, n);
        auto matched = static_cast<double>(clipped_matches(cand_counts, ref_counts));
        if (matched == 0.0) return 0.0;
        log_sum += std::log(matched / static_cast<double>(cand.size() - n + 1));
    }
    double c = static_cast<double>(cand.size());
    double r = static_cast<double>(ref.size());
    double brevity = (c > r) ? 1.0 : std::exp(1.0 - r / c);
    return brevity * std::exp(log_sum / static_cast<double>(max_n));
}

prf bert_score(const std::vector<std::vector<double>>& cand_emb,
               const std::vector<std::vector<double>>& ref_emb) {
    if (cand_emb.empty() || ref_emb.empty()) return prf{};
    std::size_t dim = cand_emb.front().size();
    for (const auto& v : cand_emb) {
        if (v.size() != dim) throw dimension_error("candidate embeddings have mixed dimensions");
    }
    for (const auto& v : ref_emb) {
        if (v.size() != dim) {
            throw dimension_error("embedding dimension mismatch: " + std::to_string(v.size()) +
                                  " vs " + std::to_string(dim));
        }
    }
    auto best_match = [dim](const std::vector<double>& q,
                            const std::vector<std::vector<double>>& pool) {
        double best = 0.0;  // negatives floor at 0
        for (const auto& p : pool) {
            double dot = 0.0;
            for (std::size_t k = 0; k < dim; ++k) dot += q[k] * p[k];
            best = std::max(best, std::min(dot, 1.0));
        }
        return best;
    };
    double precision = 0.0;
    for (const auto& v : cand_emb) precision += best_match(v, ref_emb);
    precision /= static_cast<double>(cand_emb.size());
    double recall = 0.0;
    for (const auto& v : ref_emb) recall += best_match(v, cand_emb);
    recall /= static_cast<double>(ref_emb.size());
    return make_prf(precision, recall);
}

namespace {

std::uint64_t fnv1a(const std::string& s, std::uint64_t h) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace

std::vector<std::vector<double>> hashed_embedding_provider::embed(
    const std::vector<std::string>& tokens) const {
    std::vector<std::vector<double>> out;
    out.reserve(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        std::uint64_t h = 0xcbf29ce484222325ull;
        std::size_t lo = (i >= window_) ? i - window_ : 0;
        std::size_t hi = std::min(tokens.size() - 1, i + window_);
        for (std::size_t k = lo; k <= hi; ++k) {
            h = fnv1a(tokens[k], h);
            h = fnv1a("|", h);
        }
        det_rng rng(h);
        std::vector<double> v(dimension_);
        double norm_sq = 0.0;
        for (double& x : v) {
            x = rng.gaussian();
            norm_sq += x * x;
        }
        double inv = 1.0 / std::sqrt(norm_sq);
        for (double& x : v) x *= inv;
        out.push_back(std::move(v));
    }
    return out;
}

score_report evaluate_corpus(const std::vector<std::pair<std::string, std::string>>& pairs,
                             const embedding_provider* provider, std::size_t bleu_max_n) {
    score_report report;
    report.n_examples = pairs.size();
    report.has_bertscore = provider != nullptr;
    if (pairs.empty()) return report;

    auto add = [](prf& acc, const prf& x) {
        acc.precision += x.precision;
        acc.recall += x.recall;
        acc.f1 += x.f1;
    };
    for (const auto& [generated, reference] : pairs) {
        add(report.rouge1, rouge_n(generated, reference, 1));
        add(report.rouge2, rouge_n(generated, reference, 2));
        add(report.rougeL, rouge_l(generated, reference));
        report.bleu += bleu(generated, reference, bleu_max_n);
        if (provider) {
            auto gen_tokens = metric_tokens(generated);
            auto ref_tokens = metric_tokens(reference);
            if (!gen_tokens.empty() && !ref_tokens.empty()) {
                add(report.bertscore,
                    bert_score(provider->embed(gen_tokens), provider->embed(ref_tokens)));
            }
        }
    }
    auto scale = [](prf& acc, double inv) {
        acc.precision *= inv;
        acc.recall *= inv;
        acc.f1 *= inv;
    };
    double inv = 1.0 / static_cast<double>(pairs.size());
    scale(report.rouge1, inv);
    scale(report.rouge2, inv);
    scale(report.rougeL, inv);
    report.bleu *= inv;
    scale(report.bertscore, inv);
    return report;
}

std::string render_report_table(const score_report& report) {
    char buf[64];
    std::ostringstream out;
    auto row = [&](const char* label, double value) {
        std::snprintf(buf, sizeof(buf), "%-22s %.4f\n", label, value);
        out << buf;
    };
    out << "Test scores (" << report.n_examples << " examples)\n";
    row("ROUGE-1 F1", report.rouge1.f1);
    row("ROUGE-2 F1", report.rouge2.f1);
    row("ROUGE-L F1", report.rougeL.f1);
    row("BLEU", report.bleu);
    if (report.has_bertscore) {
        row("BERTscore: precision", report.bertscore.precision);
        row("BERTscore: recall", report.bertscore.recall);
        row("BERTscore: F1", report.bertscore.f1);
    }
    return out.str();
}

nlohmann::ordered_json report_to_json(const score_report& report) {
    nlohmann::ordered_json j;
    j["rouge1_f1"] = report.rouge1.f1;
    j["rouge2_f1"] = report.rouge2.f1;
    j["rougeL_f1"] = report.rougeL.f1;
    j["bleu"] = report.bleu;
    if (report.has_bertscore) {
        j["bertscore_precision"] = report.bertscore.precision;
        j["bertscore_recall"] = report.bertscore.recall;
        j["bertscore_f1"] = report.bertscore.f1;
    }
    j["n_examples"] = report.n_examples;
    return j;
}

}  // namespace sumkit
