#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace {

const std::string bin = SUMKIT_BIN;

int run(const std::string& args, const std::string& stdout_path = "/dev/null") {
    std::string cmd = bin + " " + args + " >" + stdout_path + " 2>cli_stderr.txt";
    int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::ostringstream out;
    out << f.rdbuf();
    return out.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    f << content;
}

// records that pass the default cleaning filters
std::string small_corpus(int n) {
    std::ostringstream out;
    for (int i = 0; i < n; ++i) {
        out << R"({"text":"a)" << i
            << R"( b c d e f g h i j k l m n o p q r s t","summary":"a)" << i
            << R"( b c d e f g h z1 z2 z3 z4 z5 z6 z7 z8"})"
            << "\n";
    }
    return out.str();
}

}  // namespace

TEST_CASE("prepare splits deterministically and reports stats") {
    write_file("cli_corpus.jsonl", small_corpus(40));
    int rc = run("prepare --corpus cli_corpus.jsonl --out-train cli_train.jsonl "
                 "--out-test cli_test.jsonl --stats cli_stats.json --test-fraction 0.25 --seed 9");
    REQUIRE(rc == 0);

    std::string train1 = read_file("cli_train.jsonl");
    std::string test1 = read_file("cli_test.jsonl");
    std::string stats1 = read_file("cli_stats.json");
    CHECK(std::count(train1.begin(), train1.end(), '\n') == 30);
    CHECK(std::count(test1.begin(), test1.end(), '\n') == 10);
    CHECK(stats1.find("\"kept\": 40") != std::string::npos);

    rc = run("prepare --corpus cli_corpus.jsonl --out-train cli_train.jsonl "
             "--out-test cli_test.jsonl --stats cli_stats.json --test-fraction 0.25 --seed 9");
    REQUIRE(rc == 0);
    CHECK(read_file("cli_train.jsonl") == train1);
    CHECK(read_file("cli_test.jsonl") == test1);
    CHECK(read_file("cli_stats.json") == stats1);
}

TEST_CASE("prepare fails with the offending line number on malformed input") {
    write_file("cli_bad.jsonl", small_corpus(2) + "oops not json\n");
    int rc = run("prepare --corpus cli_bad.jsonl --out-train t.jsonl --out-test u.jsonl");
    CHECK(rc == 2);
    CHECK(read_file("cli_stderr.txt").find("line 3") != std::string::npos);
}

TEST_CASE("config file values apply but flags win") {
    write_file("cli_corpus.jsonl", small_corpus(40));
    write_file("cli_cfg.txt", "seed = 5\ntest_fraction = 0.25\n");

    // seed from file
    REQUIRE(run("prepare --corpus cli_corpus.jsonl --out-train cli_a.jsonl --out-test cli_a2.jsonl "
                "--config cli_cfg.txt") == 0);
    // same seed explicit
    REQUIRE(run("prepare --corpus cli_corpus.jsonl --out-train cli_b.jsonl --out-test cli_b2.jsonl "
                "--test-fraction 0.25 --seed 5") == 0);
    CHECK(read_file("cli_a.jsonl") == read_file("cli_b.jsonl"));

    // flag overrides the file's seed
    REQUIRE(run("prepare --corpus cli_corpus.jsonl --out-train cli_c.jsonl --out-test cli_c2.jsonl "
                "--config cli_cfg.txt --seed 6") == 0);
    REQUIRE(run("prepare --corpus cli_corpus.jsonl --out-train cli_d.jsonl --out-test cli_d2.jsonl "
                "--test-fraction 0.25 --seed 6") == 0);
    CHECK(read_file("cli_c.jsonl") == read_file("cli_d.jsonl"));
    CHECK(read_file("cli_c.jsonl") != read_file("cli_a.jsonl"));
}

TEST_CASE("train-tokenizer then summarize on an empty input") {
    write_file("cli_corpus.jsonl", small_corpus(12));
    REQUIRE(run("train-tokenizer --corpus cli_corpus.jsonl --out cli_vocab.bpe "
                "--vocab-size 300") == 0);
    std::string vocab1 = read_file("cli_vocab.bpe");
    CHECK(vocab1.substr(0, 7) == "bpe-v1 ");
    REQUIRE(run("train-tokenizer --corpus cli_corpus.jsonl --out cli_vocab.bpe "
                "--vocab-size 300") == 0);
    CHECK(read_file("cli_vocab.bpe") == vocab1);

    REQUIRE(run("train --train cli_corpus.jsonl --vocab cli_vocab.bpe --out cli_model.ckpt "
                "--d-model 16 --n-layers 1 --n-heads 2 --d-ff 32 --max-context 128 "
                "--epochs 0 --seed 3") == 0);

    write_file("cli_empty.jsonl", "");
    REQUIRE(run("summarize --ckpt cli_model.ckpt --vocab cli_vocab.bpe --input cli_empty.jsonl "
                "--out cli_out.jsonl --max_new_tokens 4") == 0);
    CHECK(read_file("cli_out.jsonl").empty());
}

TEST_CASE("evaluate scores identical files at one and enforces alignment") {
    write_file("cli_gen.jsonl",
               R"({"generated":"the quick brown fox"})"
               "\n"
               R"({"generated":"jumps over the dog"})"
               "\n");
    write_file("cli_ref.jsonl",
               R"({"summary":"the quick brown fox"})"
               "\n"
               R"({"summary":"jumps over the dog"})"
               "\n");
    REQUIRE(run("evaluate --generated cli_gen.jsonl --reference cli_ref.jsonl --json cli_rep.json",
                "cli_table.txt") == 0);
    std::string table = read_file("cli_table.txt");
    CHECK(table.find("ROUGE-1 F1             1.0000") != std::string::npos);
    CHECK(table.find("BLEU                   1.0000") != std::string::npos);

    auto json = nlohmann::json::parse(read_file("cli_rep.json"));
    CHECK(json.at("rouge1_f1").get<double>() == 1.0);
    CHECK(std::abs(json.at("bertscore_f1").get<double>() - 1.0) < 1e-9);

    write_file("cli_ref_short.jsonl", R"({"summary":"the quick brown fox"})"
                                      "\n");
    CHECK(run("evaluate --generated cli_gen.jsonl --reference cli_ref_short.jsonl") == 2);
}

TEST_CASE("json and table emissions agree to four decimals") {
    write_file("cli_gen.jsonl", R"({"generated":"a b c"})"
                                "\n");
    write_file("cli_ref.jsonl", R"({"summary":"a b d"})"
                                "\n");
    REQUIRE(run("evaluate --generated cli_gen.jsonl --reference cli_ref.jsonl --json cli_rep.json",
                "cli_table.txt") == 0);
    // rouge1 f1 = 2/3 -> 0.6667 in both emissions
    CHECK(read_file("cli_table.txt").find("0.6667") != std::string::npos);
    CHECK(read_file("cli_rep.json").find("0.6666666666666666") != std::string::npos);
}

TEST_CASE("help lists the generation hyperparameters by paper name") {
    REQUIRE(run("summarize --help", "cli_help.txt") == 0);
    std::string help = read_file("cli_help.txt");
    for (const char* name : {"--temperature", "--top_k", "--top_p", "--num_beams",
                             "--early_stopping", "--no_repeat_ngram_size", "--repetition_penalty"}) {
        CHECK(help.find(name) != std::string::npos);
    }
}

TEST_CASE("usage errors exit with code 1") {
    CHECK(run("prepare") == 1);
    CHECK(run("summarize --ckpt nope.ckpt --vocab nope.bpe") == 1);
    CHECK(run("no-such-command") == 1);
}

TEST_CASE("missing input files exit with code 2") {
    CHECK(run("prepare --corpus missing.jsonl --out-train a --out-test b") == 2);
    CHECK(run("evaluate --generated missing.jsonl --reference missing.jsonl") == 2);
}
