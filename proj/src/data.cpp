#include "sumkit/data.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

#include "sumkit/det_random.hpp"
#include "sumkit/errors.hpp"

namespace sumkit {

namespace {

std::string get_string_field(const nlohmann::json& rec, const char* key) {
    auto it = rec.find(key);
    if (it == rec.end() || it->is_null()) return "";
    return it->get<std::string>();
}

}  // namespace

void cleaning_config::validate() const {
    if (min_summary_tokens == 0 || max_summary_tokens == 0 || overlap_n == 0) {
        throw config_error("cleaning thresholds must be positive");
    }
    if (min_summary_tokens >= max_summary_tokens) {
        throw config_error("min_summary_tokens must be below max_summary_tokens");
    }
    if (min_overlap < 0.0 || max_overlap > 1.0 || min_overlap >= max_overlap) {
        throw config_error("overlap bounds must satisfy 0 <= min < max <= 1");
    }
}

std::vector<article_pair> load_corpus(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open " + path);
    std::vector<article_pair> pairs;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw parse_error(line_no, e.what());
        }
        if (!rec.is_object()) throw parse_error(line_no, "record is not a JSON object");
        if (!rec.contains("text")) throw schema_error(line_no, "missing required field 'text'");
        if (!rec.contains("summary")) throw schema_error(line_no, "missing required field 'summary'");
        article_pair p;
        try {
            p.text = rec.at("text").get<std::string>();
            p.summary = rec.at("summary").get<std::string>();
            p.title = get_string_field(rec, "title");
            p.date = get_string_field(rec, "date");
            p.url = get_string_field(rec, "url");
        } catch (const nlohmann::json::exception& e) {
            throw schema_error(line_no, e.what());
        }
        pairs.push_back(std::move(p));
    }
    return pairs;
}

void save_corpus(const std::string& path, const std::vector<article_pair>& pairs) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open " + path + " for writing");
    for (const article_pair& p : pairs) {
        nlohmann::ordered_json rec;
        rec["text"] = p.text;
        rec["summary"] = p.summary;
        if (!p.title.empty()) rec["title"] = p.title;
        if (!p.date.empty()) rec["date"] = p.date;
        if (!p.url.empty()) rec["url"] = p.url;
        f << rec.dump() << "\n";
    }
    if (!f) throw io_error("write failed: " + path);
}

std::vector<std::string> whitespace_tokens(const std::string& text) {
    std::vector<std::string> tokens;
    std::string current;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            if (!current.empty()) {
                tokens.push_back(std::move(current));
                current.clear();
            }
        } else {
            current.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

namespace {

std::string join_ngram(const std::vector<std::string>& tokens, std::size_t start, std::size_t n) {
    std::string key;
    for (std::size_t i = 0; i < n; ++i) {
        if (i > 0) key.push_back(' ');
        key += tokens[start + i];
    }
    return key;
}

}  // namespace

double ngram_overlap(const std::string& text, const std::string& summary, std::size_t n) {
    std::vector<std::string> sum_tokens = whitespace_tokens(summary);
    if (sum_tokens.size() < n) {
        throw too_short_error("summary has " + std::to_string(sum_tokens.size()) +
                              " tokens, need at least " + std::to_string(n));
    }
    std::vector<std::string> text_tokens = whitespace_tokens(text);

    std::unordered_set<std::string> text_ngrams;
    if (text_tokens.size() >= n) {
        for (std::size_t i = 0; i + n <= text_tokens.size(); ++i) {
            text_ngrams.insert(join_ngram(text_tokens, i, n));
        }
    }

    std::unordered_set<std::string> distinct;
    std::size_t matched = 0;
    for (std::size_t i = 0; i + n <= sum_tokens.size(); ++i) {
        std::string g = join_ngram(sum_tokens, i, n);
        if (distinct.insert(std::move(g)).second) {
            if (text_ngrams.count(join_ngram(sum_tokens, i, n)) > 0) ++matched;
        }
    }
    return static_cast<double>(matched) / static_cast<double>(distinct.size());
}

std::pair<std::vector<article_pair>, clean_stats> clean(const std::vector<article_pair>& pairs,
                                                        const cleaning_config& cfg) {
    cfg.validate();
    std::vector<article_pair> kept;
    clean_stats stats;
    for (const article_pair& p : pairs) {
        if (p.text.empty() || p.summary.empty()) {
            ++stats.dropped_empty;
            continue;
        }
        std::size_t n_tokens = whitespace_tokens(p.summary).size();
        if (n_tokens < cfg.min_summary_tokens) {
            ++stats.dropped_short_summary;
            continue;
        }
        if (n_tokens > cfg.max_summary_tokens) {
            ++stats.dropped_long_summary;
            continue;
        }
        double overlap;
        try {
            overlap = ngram_overlap(p.text, p.summary, cfg.overlap_n);
        } catch (const too_short_error&) {
            ++stats.dropped_low_overlap;
            continue;
        }
        if (overlap < cfg.min_overlap) {
            ++stats.dropped_low_overlap;
            continue;
        }
        if (overlap > cfg.max_overlap) {
            ++stats.dropped_high_overlap;
            continue;
        }
        kept.push_back(p);
        ++stats.kept;
    }
    return {std::move(kept), stats};
}

std::pair<std::vector<article_pair>, std::vector<article_pair>> split(
    const std::vector<article_pair>& pairs, double test_fraction, std::uint64_t seed) {
    if (pairs.size() < 2) {
        throw too_few_examples_error("need at least 2 pairs to split, have " +
                                     std::to_string(pairs.size()));
    }
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
        throw config_error("test_fraction must lie strictly between 0 and 1");
    }
    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    det_rng rng(seed);
    rng.shuffle(order);

    auto n_test = static_cast<std::size_t>(
        std::llround(test_fraction * static_cast<double>(pairs.size())));
    if (n_test == 0) n_test = 1;
    if (n_test >= pairs.size()) n_test = pairs.size() - 1;

    std::vector<article_pair> test;
    std::vector<article_pair> train;
    test.reserve(n_test);
    train.reserve(pairs.size() - n_test);
    for (std::size_t i = 0; i < n_test; ++i) test.push_back(pairs[order[i]]);
    for (std::size_t i = n_test; i < order.size(); ++i) train.push_back(pairs[order[i]]);
    return {std::move(train), std::move(test)};
}

std::string format_example(const article_pair& pair) {
    return "<s>Text:" + pair.text + " <|sep|> Summary:" + pair.summary + " </s>";
}

std::string format_prompt(const std::string& text) {
    return "Text:" + text + " <|sep|> Summary:";
}

}  // namespace sumkit
