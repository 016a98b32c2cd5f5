#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "sumkit/det_random.hpp"
#include "sumkit/errors.hpp"
#include "sumkit/tokenizer.hpp"

using namespace sumkit;

namespace {

const std::size_t floor_size = vocab::num_specials + vocab::num_base;

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::ostringstream out;
    out << f.rdbuf();
    return out.str();
}

}  // namespace

TEST_CASE("build_vocab merges the most frequent pair") {
    vocab v = build_vocab({"aaab"}, floor_size + 1);
    REQUIRE(v.merges.size() == 1);
    CHECK(v.tokens[v.merges[0].first] == "a");
    CHECK(v.tokens[v.merges[0].second] == "a");
    CHECK(v.token_to_id.count("aa") == 1);

    token_sequence ids = encode(v, "aaab");
    REQUIRE(ids.size() == 3);
    CHECK(v.tokens[ids[0]] == "aa");
    CHECK(v.tokens[ids[1]] == "a");
    CHECK(v.tokens[ids[2]] == "b");
}

TEST_CASE("build_vocab with zero merge budget yields base symbols plus specials") {
    vocab v = build_vocab({"x"}, floor_size);
    CHECK(v.size() == floor_size);
    CHECK(v.merges.empty());
}

TEST_CASE("build_vocab is deterministic") {
    std::vector<std::string> corpus = {"the cat sat on the mat", "the dog sat"};
    vocab a = build_vocab(corpus, floor_size + 20);
    vocab b = build_vocab(corpus, floor_size + 20);
    CHECK(a.merges == b.merges);
    CHECK(a.tokens == b.tokens);
}

TEST_CASE("build_vocab error cases") {
    CHECK_THROWS_AS(build_vocab({}, floor_size), corpus_empty_error);
    CHECK_THROWS_AS(build_vocab({"abc"}, floor_size - 1), vocab_too_small_error);
}

TEST_CASE("special token literals encode atomically") {
    vocab v = build_vocab({"some text"}, floor_size + 4);
    token_sequence ids = encode(v, "<|sep|>");
    REQUIRE(ids.size() == 1);
    CHECK(ids[0] == vocab::sep_id);

    token_sequence mixed = encode(v, "a<s>b</s>");
    bool has_bos = false, has_eos = false;
    for (token_id id : mixed) {
        has_bos = has_bos || id == vocab::bos_id;
        has_eos = has_eos || id == vocab::eos_id;
    }
    CHECK(has_bos);
    CHECK(has_eos);
    CHECK(decode(v, mixed) == "a<s>b</s>");
}

TEST_CASE("decode") {
    vocab v = vocab::base_only();
    CHECK(decode(v, {}) == "");
    CHECK(decode(v, {vocab::bos_id, vocab::eos_id}) == "<s></s>");
    CHECK(decode(v, {vocab::pad_id}) == "");  // PAD dropped
    CHECK_THROWS_AS(decode(v, {static_cast<token_id>(v.size())}), unknown_token_id_error);
}

TEST_CASE("roundtrip on random byte strings") {
    vocab v = build_vocab({"hello world", "hello there", "byte pairs"}, floor_size + 30);
    det_rng rng(42);
    for (int iter = 0; iter < 200; ++iter) {
        std::size_t len = rng.below(40);
        std::string text;
        for (std::size_t i = 0; i < len; ++i) {
            text.push_back(static_cast<char>(rng.below(256)));
        }
        if (text.find(vocab::pad_literal) != std::string::npos) continue;  // PAD never decodes
        CHECK(decode(v, encode(v, text)) == text);
    }
}

TEST_CASE("no merge rule produces a special token") {
    // feed text dense in special-literal fragments
    std::vector<std::string> corpus(8, "<s><s></s></s><|sep|><pad> <s </s <|se p|");
    vocab v = build_vocab(corpus, floor_size + 40);
    for (std::size_t m = 0; m < v.merges.size(); ++m) {
        const std::string& produced = v.tokens[vocab::first_merge_id + m];
        CHECK(produced != vocab::bos_literal);
        CHECK(produced != vocab::sep_literal);
        CHECK(produced != vocab::eos_literal);
        CHECK(produced != vocab::pad_literal);
    }
}

TEST_CASE("vocab save/load is byte-exact and stable") {
    // include non-printable and multi-byte content to exercise escaping
    std::vector<std::string> corpus = {"привет мир", "tab\there", "new\nline", "привет всем"};
    vocab v = build_vocab(corpus, floor_size + 25);

    std::string path = "tokenizer_roundtrip.vocab";
    save_vocab(v, path);
    vocab loaded = load_vocab(path);
    CHECK(loaded.tokens == v.tokens);
    CHECK(loaded.merges == v.merges);

    std::string again = path + ".2";
    save_vocab(loaded, again);
    CHECK(read_file(path) == read_file(again));
    CHECK(read_file(path).substr(0, 7) == "bpe-v1 ");

    std::remove(path.c_str());
    std::remove(again.c_str());
}

TEST_CASE("cyrillic text roundtrips through byte-level BPE") {
    std::vector<std::string> corpus = {"в россии прошли выборы", "в мире происходит многое"};
    vocab v = build_vocab(corpus, floor_size + 15);
    for (const std::string& text : corpus) {
        CHECK(decode(v, encode(v, text)) == text);
    }
    CHECK(decode(v, encode(v, "совсем новый текст")) == "совсем новый текст");
}
