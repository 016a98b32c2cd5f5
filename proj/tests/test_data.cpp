#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>

#include "sumkit/data.hpp"
#include "sumkit/det_random.hpp"
#include "sumkit/errors.hpp"

using namespace sumkit;

namespace {

struct temp_file {
    std::string path;
    explicit temp_file(const std::string& name, const std::string& content) : path(name) {
        std::ofstream f(path, std::ios::binary);
        f << content;
    }
    ~temp_file() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("load_corpus reads records in order") {
    temp_file f("corpus_ok.jsonl",
                R"({"text":"t1","summary":"s1","title":"a"})"
                "\n"
                R"({"text":"t2","summary":"s2"})"
                "\n"
                R"({"text":"t3","summary":"s3","date":"2020-01-01","url":"http://x"})"
                "\n");
    auto pairs = load_corpus(f.path);
    REQUIRE(pairs.size() == 3);
    CHECK(pairs[0].text == "t1");
    CHECK(pairs[0].title == "a");
    CHECK(pairs[1].summary == "s2");
    CHECK(pairs[1].title == "");
    CHECK(pairs[2].date == "2020-01-01");
}

TEST_CASE("load_corpus schema and parse errors carry line numbers") {
    temp_file missing("corpus_missing.jsonl",
                      R"({"text":"t1","summary":"s1"})"
                      "\n"
                      R"({"text":"t2"})"
                      "\n");
    try {
        load_corpus(missing.path);
        FAIL("expected schema_error");
    } catch (const schema_error& e) {
        CHECK(e.line() == 2);
    }

    temp_file broken("corpus_broken.jsonl", "{\"text\":\"t1\",\"summary\":\"s1\"}\nnot json\n");
    try {
        load_corpus(broken.path);
        FAIL("expected parse_error");
    } catch (const parse_error& e) {
        CHECK(e.line() == 2);
    }
}

TEST_CASE("load_corpus of an empty file is empty") {
    temp_file f("corpus_empty.jsonl", "");
    CHECK(load_corpus(f.path).empty());
}

TEST_CASE("ngram_overlap hand cases") {
    CHECK(ngram_overlap("a b c d", "a b", 1) == doctest::Approx(1.0));
    CHECK(ngram_overlap("a b", "c d", 1) == doctest::Approx(0.0));
    CHECK(ngram_overlap("a b c", "a b x", 2) == doctest::Approx(0.5));
    CHECK_THROWS_AS(ngram_overlap("a b c", "a", 2), too_short_error);
}

TEST_CASE("ngram_overlap is case-insensitive") {
    CHECK(ngram_overlap("The Cat", "the cat", 2) == doctest::Approx(1.0));
}

namespace {

article_pair make_article(const std::string& text, const std::string& summary) {
    article_pair p;
    p.text = text;
    p.summary = summary;
    return p;
}

// summary of n tokens, roughly half of its bigrams shared with the text
article_pair passing_pair(std::size_t n_tokens) {
    std::string text, summary;
    for (std::size_t i = 0; i < n_tokens; ++i) {
        text += "w" + std::to_string(i) + " ";
        summary += (i < n_tokens / 2 ? "w" + std::to_string(i) : "z" + std::to_string(i)) + " ";
    }
    return make_article(text, summary);
}

}  // namespace

TEST_CASE("clean applies the length and overlap filters") {
    cleaning_config cfg;  // defaults: 15..120 tokens, bigram overlap in [0.1, 0.9]

    article_pair short_summary = make_article("a b c d e", "too short");
    article_pair near_copy = passing_pair(20);
    near_copy.summary = near_copy.text;  // overlap 1.0 > 0.9
    article_pair good = passing_pair(20);
    std::string long_sum;
    for (int i = 0; i < 130; ++i) long_sum += "w ";
    article_pair too_long = make_article(good.text, long_sum);

    auto [kept, stats] = clean({short_summary, near_copy, good, too_long}, cfg);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].summary == good.summary);
    CHECK(stats.kept == 1);
    CHECK(stats.dropped_short_summary == 1);
    CHECK(stats.dropped_high_overlap == 1);
    CHECK(stats.dropped_long_summary == 1);
    CHECK(stats.total() == 4);
}

TEST_CASE("clean keeps everything when all pairs pass") {
    cleaning_config cfg;
    std::vector<article_pair> pairs = {passing_pair(20), passing_pair(30), passing_pair(40)};
    auto [kept, stats] = clean(pairs, cfg);
    CHECK(kept.size() == pairs.size());
    CHECK(stats.kept == 3);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        CHECK(kept[i].summary == pairs[i].summary);
    }
}

TEST_CASE("clean is idempotent") {
    cleaning_config cfg;
    det_rng rng(7);
    std::vector<article_pair> pairs;
    for (int i = 0; i < 50; ++i) {
        pairs.push_back(passing_pair(10 + rng.below(130)));
    }
    auto [once, s1] = clean(pairs, cfg);
    auto [twice, s2] = clean(once, cfg);
    CHECK(twice.size() == once.size());
    CHECK(s2.kept == once.size());
    CHECK(s2.total() == s2.kept);
}

TEST_CASE("split produces the requested sizes deterministically") {
    std::vector<article_pair> pairs;
    for (int i = 0; i < 10; ++i) pairs.push_back(make_article("t" + std::to_string(i), "s"));

    auto [train, test] = split(pairs, 0.1, 123);
    CHECK(train.size() == 9);
    CHECK(test.size() == 1);

    auto [train2, test2] = split(pairs, 0.1, 123);
    CHECK(test2[0].text == test[0].text);
    for (std::size_t i = 0; i < train.size(); ++i) CHECK(train2[i].text == train[i].text);

    // partition: disjoint and complete
    std::set<std::string> seen;
    for (const auto& p : train) seen.insert(p.text);
    for (const auto& p : test) seen.insert(p.text);
    CHECK(seen.size() == pairs.size());

    CHECK_THROWS_AS(split({pairs[0]}, 0.5, 1), too_few_examples_error);
}

TEST_CASE("split reproduces the 90:10 corpus proportions") {
    std::vector<article_pair> pairs(63435, make_article("t", "s"));
    auto [train, test] = split(pairs, 5770.0 / 63435.0, 0);
    CHECK(train.size() == 57665);
    CHECK(test.size() == 5770);
}

TEST_CASE("format_example and format_prompt are byte-exact") {
    CHECK(format_example(make_article("T", "S")) == "<s>Text:T <|sep|> Summary:S </s>");
    CHECK(format_prompt("T") == "Text:T <|sep|> Summary:");
    CHECK(format_prompt("") == "Text: <|sep|> Summary:");
}

TEST_CASE("format_example extends format_prompt") {
    det_rng rng(99);
    for (int i = 0; i < 100; ++i) {
        std::string text, summary;
        for (std::size_t k = rng.below(30); k > 0; --k) {
            text.push_back(static_cast<char>('a' + rng.below(26)));
        }
        for (std::size_t k = rng.below(30); k > 0; --k) {
            summary.push_back(static_cast<char>('a' + rng.below(26)));
        }
        std::string example = format_example(make_article(text, summary));
        std::string prefix = "<s>" + format_prompt(text);
        CHECK(example.substr(0, prefix.size()) == prefix);
    }
}

TEST_CASE("format_example is injective on special-free inputs") {
    det_rng rng(5);
    std::set<std::string> outputs;
    std::set<std::pair<std::string, std::string>> inputs;
    for (int i = 0; i < 300; ++i) {
        std::string text, summary;
        for (std::size_t k = rng.below(8); k > 0; --k) {
            text.push_back(static_cast<char>('a' + rng.below(3)));
        }
        for (std::size_t k = rng.below(8); k > 0; --k) {
            summary.push_back(static_cast<char>('a' + rng.below(3)));
        }
        if (!inputs.insert({text, summary}).second) continue;
        CHECK(outputs.insert(format_example(make_article(text, summary))).second);
    }
}
