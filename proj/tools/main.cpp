// sumkit: prepare / train-tokenizer / train / summarize / evaluate
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric divergence.
// Flags override config-file values, which override defaults; --preset sits
// between the file and explicit flags.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sumkit/data.hpp"
#include "sumkit/decoding.hpp"
#include "sumkit/errors.hpp"
#include "sumkit/metrics.hpp"
#include "sumkit/model.hpp"
#include "sumkit/tokenizer.hpp"

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr int exit_ok = 0;
constexpr int exit_usage = 1;
constexpr int exit_data = 2;
constexpr int exit_divergence = 3;

void print_error(const std::string& kind, const std::string& message) {
    ordered_json e;
    e["error"] = kind;
    e["message"] = message;
    std::cerr << e.dump() << "\n";
}

// Flat key-value config file: `key = value`, '#' comments.
struct kv_config {
    std::map<std::string, std::string> values;

    static kv_config load(const std::string& path) {
        kv_config cfg;
        std::ifstream f(path);
        if (!f) throw sumkit::io_error("cannot open config file " + path);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(f, line)) {
            ++line_no;
            std::size_t hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            auto trim = [](std::string s) {
                std::size_t b = s.find_first_not_of(" \t\r");
                std::size_t e = s.find_last_not_of(" \t\r");
                return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
            };
            std::string t = trim(line);
            if (t.empty()) continue;
            std::size_t eq = t.find('=');
            if (eq == std::string::npos) {
                throw sumkit::parse_error(line_no, "config line is not key = value");
            }
            cfg.values[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
        }
        return cfg;
    }

    bool has(const std::string& key) const { return values.count(key) > 0; }

    template <typename T>
    T get(const std::string& key) const {
        std::istringstream in(values.at(key));
        T v{};
        in >> v;
        if (in.fail()) throw sumkit::config_error("config key '" + key + "' has a bad value");
        return v;
    }
};

template <>
std::string kv_config::get<std::string>(const std::string& key) const {
    return values.at(key);
}

template <>
bool kv_config::get<bool>(const std::string& key) const {
    const std::string& v = values.at(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw sumkit::config_error("config key '" + key + "' is not a boolean");
}

// value resolution: default < config file < preset < explicit flag
template <typename T>
void apply_file_value(const CLI::Option* opt, const kv_config& file, const std::string& key,
                      T& target) {
    if (opt != nullptr && opt->count() > 0) return;
    if (file.has(key)) target = file.get<T>(key);
}

template <typename T>
void apply_optional_file_value(const CLI::Option* opt, const kv_config& file,
                               const std::string& key, std::optional<T>& target) {
    if (opt != nullptr && opt->count() > 0) return;
    if (file.has(key)) {
        if (file.values.at(key) == "none") {
            target.reset();
        } else {
            target = file.get<T>(key);
        }
    }
}

std::vector<json> read_jsonl(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw sumkit::io_error("cannot open " + path);
    std::vector<json> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            records.push_back(json::parse(line));
        } catch (const json::exception& e) {
            throw sumkit::parse_error(line_no, e.what());
        }
    }
    return records;
}

// ---------------------------------------------------------------------------
// shared option bundles
// ---------------------------------------------------------------------------

struct generation_options {
    sumkit::generation_config cfg;
    std::string preset;

    CLI::Option* o_temperature = nullptr;
    CLI::Option* o_top_k = nullptr;
    CLI::Option* o_top_p = nullptr;
    CLI::Option* o_num_beams = nullptr;
    CLI::Option* o_early_stopping = nullptr;
    CLI::Option* o_no_repeat = nullptr;
    CLI::Option* o_rep_penalty = nullptr;
    CLI::Option* o_max_new = nullptr;
    CLI::Option* o_length_penalty = nullptr;

    std::uint32_t top_k_value = 0;
    double top_p_value = 0.0;
    std::uint32_t no_repeat_value = 0;

    void attach(CLI::App* cmd) {
        o_temperature = cmd->add_option("--temperature", cfg.temperature,
                                        "sampling temperature in [0,1]; 0 ranks by raw model "
                                        "probabilities");
        o_top_k = cmd->add_option("--top_k", top_k_value, "keep only the k most probable tokens");
        o_top_p = cmd->add_option("--top_p", top_p_value,
                                  "nucleus filter: smallest mass prefix reaching p");
        o_num_beams = cmd->add_option("--num_beams", cfg.num_beams, "number of search beams");
        o_early_stopping = cmd->add_option("--early_stopping", cfg.early_stopping,
                                           "stop once num_beams hypotheses have finished");
        o_no_repeat = cmd->add_option("--no_repeat_ngram_size", no_repeat_value,
                                      "forbid repeating any n-gram of this size");
        o_rep_penalty = cmd->add_option("--repetition_penalty", cfg.repetition_penalty,
                                        "logit penalty for tokens already in the sequence");
        o_max_new = cmd->add_option("--max_new_tokens", cfg.max_new_tokens,
                                    "generation budget per summary");
        o_length_penalty = cmd->add_option("--length_penalty", cfg.length_penalty,
                                           "selection-score length exponent (0 = raw sum)");
        cmd->add_option("--preset", preset, "named settings bundle")
            ->check(CLI::IsMember({"paper"}));
    }

    sumkit::generation_config resolve(const kv_config& file) {
        apply_file_value(o_temperature, file, "temperature", cfg.temperature);
        apply_file_value(o_num_beams, file, "num_beams", cfg.num_beams);
        apply_file_value(o_early_stopping, file, "early_stopping", cfg.early_stopping);
        apply_file_value(o_rep_penalty, file, "repetition_penalty", cfg.repetition_penalty);
        apply_file_value(o_max_new, file, "max_new_tokens", cfg.max_new_tokens);
        apply_file_value(o_length_penalty, file, "length_penalty", cfg.length_penalty);
        apply_optional_file_value(o_top_k, file, "top_k", cfg.top_k);
        apply_optional_file_value(o_top_p, file, "top_p", cfg.top_p);
        apply_optional_file_value(o_no_repeat, file, "no_repeat_ngram_size",
                                  cfg.no_repeat_ngram_size);
        if (o_top_k->count() > 0) cfg.top_k = top_k_value;
        if (o_top_p->count() > 0) cfg.top_p = top_p_value;
        if (o_no_repeat->count() > 0) cfg.no_repeat_ngram_size = no_repeat_value;

        if (preset == "paper") {
            sumkit::generation_config p = sumkit::generation_config::paper_preset();
            if (o_temperature->count() == 0) cfg.temperature = p.temperature;
            if (o_top_k->count() == 0) cfg.top_k = p.top_k;
            if (o_top_p->count() == 0) cfg.top_p = p.top_p;
            if (o_num_beams->count() == 0) cfg.num_beams = p.num_beams;
            if (o_early_stopping->count() == 0) cfg.early_stopping = p.early_stopping;
            if (o_no_repeat->count() == 0) cfg.no_repeat_ngram_size = p.no_repeat_ngram_size;
            if (o_rep_penalty->count() == 0) cfg.repetition_penalty = p.repetition_penalty;
        }
        cfg.validate();
        return cfg;
    }
};

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

struct prepare_args {
    std::string corpus, out_train, out_test, stats, config_path;
    sumkit::cleaning_config cleaning;
    double test_fraction = 0.1;
    std::uint64_t seed = 0;

    CLI::Option *o_min = nullptr, *o_max = nullptr, *o_n = nullptr, *o_lo = nullptr,
                *o_hi = nullptr, *o_frac = nullptr, *o_seed = nullptr;
};

int run_prepare(prepare_args& a) {
    kv_config file;
    if (!a.config_path.empty()) file = kv_config::load(a.config_path);
    apply_file_value(a.o_min, file, "min_summary_tokens", a.cleaning.min_summary_tokens);
    apply_file_value(a.o_max, file, "max_summary_tokens", a.cleaning.max_summary_tokens);
    apply_file_value(a.o_n, file, "overlap_n", a.cleaning.overlap_n);
    apply_file_value(a.o_lo, file, "min_overlap", a.cleaning.min_overlap);
    apply_file_value(a.o_hi, file, "max_overlap", a.cleaning.max_overlap);
    apply_file_value(a.o_frac, file, "test_fraction", a.test_fraction);
    apply_file_value(a.o_seed, file, "seed", a.seed);

    std::vector<sumkit::article_pair> pairs = sumkit::load_corpus(a.corpus);
    auto [kept, stats] = sumkit::clean(pairs, a.cleaning);
    auto [train, test] = sumkit::split(kept, a.test_fraction, a.seed);
    sumkit::save_corpus(a.out_train, train);
    sumkit::save_corpus(a.out_test, test);

    ordered_json s;
    s["input"] = pairs.size();
    s["kept"] = stats.kept;
    s["dropped_empty"] = stats.dropped_empty;
    s["dropped_short_summary"] = stats.dropped_short_summary;
    s["dropped_long_summary"] = stats.dropped_long_summary;
    s["dropped_low_overlap"] = stats.dropped_low_overlap;
    s["dropped_high_overlap"] = stats.dropped_high_overlap;
    s["train"] = train.size();
    s["test"] = test.size();
    std::string stats_path = a.stats.empty() ? a.out_train + ".stats.json" : a.stats;
    std::ofstream sf(stats_path, std::ios::binary);
    if (!sf) throw sumkit::io_error("cannot open " + stats_path + " for writing");
    sf << s.dump(2) << "\n";

    std::cout << "prepared " << train.size() << " train / " << test.size() << " test records ("
              << (pairs.size() - stats.kept) << " dropped)\n";
    return exit_ok;
}

struct train_tokenizer_args {
    std::string corpus, out, config_path;
    std::size_t vocab_size = 1000;
    CLI::Option* o_vocab_size = nullptr;
};

int run_train_tokenizer(train_tokenizer_args& a) {
    kv_config file;
    if (!a.config_path.empty()) file = kv_config::load(a.config_path);
    apply_file_value(a.o_vocab_size, file, "vocab_size", a.vocab_size);

    std::vector<sumkit::article_pair> pairs = sumkit::load_corpus(a.corpus);
    std::vector<std::string> texts;
    texts.reserve(pairs.size());
    for (const auto& p : pairs) texts.push_back(sumkit::format_example(p));
    sumkit::vocab v = sumkit::build_vocab(texts, a.vocab_size);
    sumkit::save_vocab(v, a.out);
    std::cout << "vocab of " << v.size() << " tokens (" << v.merges.size() << " merges) -> "
              << a.out << "\n";
    return exit_ok;
}

struct train_args {
    std::string train_path, vocab_path, out, config_path;
    sumkit::model_config model;
    sumkit::train_config trainer;
    std::size_t train_seq_len = 0;  // 0 = max_context
    bool loss_summary_only = false;

    CLI::Option *o_d_model = nullptr, *o_layers = nullptr, *o_heads = nullptr, *o_ff = nullptr,
                *o_ctx = nullptr, *o_dropout = nullptr, *o_lr = nullptr, *o_batch = nullptr,
                *o_epochs = nullptr, *o_seed = nullptr, *o_clip = nullptr, *o_seq_len = nullptr;
    double clip_value = 0.0;
};

// Truncation policy: article bytes fall off the front, summary bytes never.
sumkit::token_sequence encode_example_truncated(const sumkit::vocab& v,
                                                const sumkit::article_pair& pair,
                                                std::size_t max_len) {
    sumkit::article_pair p = pair;
    std::size_t last_len = 0;
    std::size_t stall_step = 16;
    for (;;) {
        sumkit::token_sequence ids = sumkit::encode(v, sumkit::format_example(p));
        if (ids.size() <= max_len) return ids;
        if (p.text.empty()) {
            throw sumkit::context_overflow_error(
                "formatted example exceeds the training length even with an empty article");
        }
        std::size_t step = ids.size() - max_len;
        if (last_len != 0 && ids.size() >= last_len) step = std::max(step, stall_step *= 2);
        last_len = ids.size();
        p.text.erase(0, std::min(p.text.size(), std::max<std::size_t>(step, 1)));
    }
}

int run_train(train_args& a) {
    kv_config file;
    if (!a.config_path.empty()) file = kv_config::load(a.config_path);
    apply_file_value(a.o_d_model, file, "d_model", a.model.d_model);
    apply_file_value(a.o_layers, file, "n_layers", a.model.n_layers);
    apply_file_value(a.o_heads, file, "n_heads", a.model.n_heads);
    apply_file_value(a.o_ff, file, "d_ff", a.model.d_ff);
    apply_file_value(a.o_ctx, file, "max_context", a.model.max_context);
    apply_file_value(a.o_dropout, file, "dropout", a.model.dropout);
    apply_file_value(a.o_lr, file, "learning_rate", a.trainer.learning_rate);
    apply_file_value(a.o_batch, file, "batch_size", a.trainer.batch_size);
    apply_file_value(a.o_epochs, file, "epochs", a.trainer.epochs);
    apply_file_value(a.o_seed, file, "seed", a.trainer.seed);
    apply_file_value(a.o_seq_len, file, "train_seq_len", a.train_seq_len);
    if (a.o_clip->count() > 0) {
        a.trainer.grad_clip = a.clip_value;
    } else if (file.has("grad_clip") && file.values.at("grad_clip") != "none") {
        a.trainer.grad_clip = file.get<double>("grad_clip");
    }

    sumkit::vocab v = sumkit::load_vocab(a.vocab_path);
    std::vector<sumkit::article_pair> pairs = sumkit::load_corpus(a.train_path);
    if (pairs.empty()) throw sumkit::too_few_examples_error("training corpus is empty");

    a.model.vocab_size = static_cast<std::uint32_t>(v.size());
    std::size_t seq_limit = a.train_seq_len == 0
                                ? a.model.max_context
                                : std::min<std::size_t>(a.train_seq_len, a.model.max_context);

    std::vector<sumkit::train_example> examples;
    examples.reserve(pairs.size());
    for (const auto& p : pairs) {
        sumkit::train_example ex;
        ex.tokens = encode_example_truncated(v, p, seq_limit);
        ex.loss_mask.assign(ex.tokens.size(), 1);
        if (a.loss_summary_only) {
            std::fill(ex.loss_mask.begin(), ex.loss_mask.end(), 0);
            for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
                if (ex.tokens[i] == sumkit::vocab::sep_id) {
                    for (std::size_t j = i + 1; j < ex.tokens.size(); ++j) ex.loss_mask[j] = 1;
                    break;
                }
            }
        }
        examples.push_back(std::move(ex));
    }

    sumkit::checkpoint ckpt = sumkit::init_model(a.model, a.trainer.seed);
    std::vector<double> epoch_losses;
    sumkit::checkpoint trained = sumkit::train(ckpt, examples, a.trainer, &epoch_losses);
    for (std::size_t e = 0; e < epoch_losses.size(); ++e) {
        std::printf("epoch %zu loss %.6f\n", e + 1, epoch_losses[e]);
    }
    sumkit::save_checkpoint(trained, a.out);
    std::cout << "checkpoint (" << trained.config.parameter_count() << " parameters) -> " << a.out
              << "\n";
    return exit_ok;
}

struct summarize_args {
    std::string ckpt_path, vocab_path, input_path, text, out_path, config_path;
    generation_options gen;
};

int run_summarize(summarize_args& a) {
    kv_config file;
    if (!a.config_path.empty()) file = kv_config::load(a.config_path);
    sumkit::generation_config cfg = a.gen.resolve(file);

    sumkit::vocab v = sumkit::load_vocab(a.vocab_path);
    sumkit::checkpoint ckpt = sumkit::load_checkpoint(a.ckpt_path);

    if (!a.text.empty()) {
        std::string summary = sumkit::summarize(ckpt, v, a.text, cfg);
        if (a.out_path.empty() || a.out_path == "-") {
            std::cout << summary << "\n";
        } else {
            std::ofstream f(a.out_path, std::ios::binary);
            if (!f) throw sumkit::io_error("cannot open " + a.out_path + " for writing");
            f << summary << "\n";
        }
        return exit_ok;
    }

    std::vector<json> records = read_jsonl(a.input_path);
    std::ostream* out = &std::cout;
    std::ofstream file_out;
    if (!a.out_path.empty() && a.out_path != "-") {
        file_out.open(a.out_path, std::ios::binary);
        if (!file_out) throw sumkit::io_error("cannot open " + a.out_path + " for writing");
        out = &file_out;
    }
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (!records[i].contains("text")) {
            throw sumkit::schema_error(i + 1, "missing required field 'text'");
        }
        std::string text = records[i].at("text").get<std::string>();
        ordered_json rec;
        rec["text"] = text;
        try {
            rec["generated"] = sumkit::summarize(ckpt, v, text, cfg);
        } catch (const sumkit::context_overflow_error& e) {
            rec["error"] = e.what();  // record-level failure, run continues
        }
        (*out) << rec.dump() << "\n";
    }
    return exit_ok;
}

struct evaluate_args {
    std::string generated_path, reference_path, paired_path, json_path, config_path;
    bool no_bertscore = false;
    std::size_t bleu_max_n = 4;
    std::size_t embedding_dim = 32;
};

std::string record_field(const json& rec, std::initializer_list<const char*> keys,
                         std::size_t line) {
    for (const char* k : keys) {
        if (rec.contains(k) && rec.at(k).is_string()) return rec.at(k).get<std::string>();
    }
    std::string names;
    for (const char* k : keys) {
        if (!names.empty()) names += "' or '";
        names += k;
    }
    throw sumkit::schema_error(line, "record needs a '" + names + "' field");
}

int run_evaluate(evaluate_args& a) {
    std::vector<std::pair<std::string, std::string>> pairs;
    if (!a.paired_path.empty()) {
        std::vector<json> records = read_jsonl(a.paired_path);
        for (std::size_t i = 0; i < records.size(); ++i) {
            pairs.emplace_back(record_field(records[i], {"generated"}, i + 1),
                               record_field(records[i], {"reference", "summary"}, i + 1));
        }
    } else {
        std::vector<json> gen = read_jsonl(a.generated_path);
        std::vector<json> ref = read_jsonl(a.reference_path);
        if (gen.size() != ref.size()) {
            throw sumkit::io_error("record count mismatch: " + std::to_string(gen.size()) +
                                   " generated vs " + std::to_string(ref.size()) + " reference");
        }
        for (std::size_t i = 0; i < gen.size(); ++i) {
            pairs.emplace_back(record_field(gen[i], {"generated", "summary"}, i + 1),
                               record_field(ref[i], {"reference", "summary"}, i + 1));
        }
    }
    if (pairs.empty()) throw sumkit::too_few_examples_error("no records to evaluate");

    sumkit::hashed_embedding_provider provider(a.embedding_dim);
    sumkit::score_report report = sumkit::evaluate_corpus(
        pairs, a.no_bertscore ? nullptr : &provider, a.bleu_max_n);

    std::cout << sumkit::render_report_table(report);
    ordered_json j = sumkit::report_to_json(report);
    if (!a.json_path.empty()) {
        std::ofstream f(a.json_path, std::ios::binary);
        if (!f) throw sumkit::io_error("cannot open " + a.json_path + " for writing");
        f << j.dump(2) << "\n";
    } else {
        std::cout << j.dump() << "\n";
    }
    return exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sumkit: fine-tune a small decoder-only LM for abstractive summarization,\n"
                 "generate with constrained beam search, and score with ROUGE/BLEU/BERTScore"};
    app.require_subcommand(1);

    prepare_args pa;
    CLI::App* prepare = app.add_subcommand("prepare", "clean a JSONL corpus and split train/test");
    prepare->add_option("--corpus", pa.corpus, "input JSONL corpus")->required();
    prepare->add_option("--out-train", pa.out_train, "training split output")->required();
    prepare->add_option("--out-test", pa.out_test, "test split output")->required();
    prepare->add_option("--stats", pa.stats, "stats sidecar path (default <out-train>.stats.json)");
    prepare->add_option("--config", pa.config_path, "key = value config file");
    pa.o_min = prepare->add_option("--min-summary-tokens", pa.cleaning.min_summary_tokens,
                                   "drop summaries shorter than this");
    pa.o_max = prepare->add_option("--max-summary-tokens", pa.cleaning.max_summary_tokens,
                                   "drop summaries longer than this");
    pa.o_n = prepare->add_option("--overlap-n", pa.cleaning.overlap_n,
                                 "n-gram order of the overlap filter");
    pa.o_lo = prepare->add_option("--min-overlap", pa.cleaning.min_overlap,
                                  "drop pairs with narrower text overlap");
    pa.o_hi = prepare->add_option("--max-overlap", pa.cleaning.max_overlap,
                                  "drop pairs with wider text overlap");
    pa.o_frac = prepare->add_option("--test-fraction", pa.test_fraction, "test split fraction");
    pa.o_seed = prepare->add_option("--seed", pa.seed, "split shuffle seed");

    train_tokenizer_args ta;
    CLI::App* train_tok =
        app.add_subcommand("train-tokenizer", "fit a byte-level BPE vocabulary on a corpus");
    train_tok->add_option("--corpus", ta.corpus, "training JSONL corpus")->required();
    train_tok->add_option("--out", ta.out, "vocabulary output path")->required();
    train_tok->add_option("--config", ta.config_path, "key = value config file");
    ta.o_vocab_size =
        train_tok->add_option("--vocab-size", ta.vocab_size, "total vocabulary size target");

    train_args tr;
    CLI::App* train = app.add_subcommand("train", "fine-tune the model on formatted pairs");
    train->add_option("--train", tr.train_path, "training JSONL corpus")->required();
    train->add_option("--vocab", tr.vocab_path, "BPE vocabulary file")->required();
    train->add_option("--out", tr.out, "checkpoint output path")->required();
    train->add_option("--config", tr.config_path, "key = value config file");
    tr.o_d_model = train->add_option("--d-model", tr.model.d_model, "embedding width");
    tr.o_layers = train->add_option("--n-layers", tr.model.n_layers, "transformer blocks");
    tr.o_heads = train->add_option("--n-heads", tr.model.n_heads, "attention heads");
    tr.o_ff = train->add_option("--d-ff", tr.model.d_ff, "feed-forward width");
    tr.o_ctx = train->add_option("--max-context", tr.model.max_context, "context length");
    tr.o_dropout = train->add_option("--dropout", tr.model.dropout, "dropout probability");
    tr.o_lr = train->add_option("--learning-rate", tr.trainer.learning_rate, "Adam step size");
    tr.o_batch = train->add_option("--batch-size", tr.trainer.batch_size, "sequences per step");
    tr.o_epochs = train->add_option("--epochs", tr.trainer.epochs, "training epochs");
    tr.o_seed = train->add_option("--seed", tr.trainer.seed, "init and shuffle seed");
    tr.o_clip = train->add_option("--grad-clip", tr.clip_value, "global gradient-norm cap");
    tr.o_seq_len = train->add_option("--train-seq-len", tr.train_seq_len,
                                     "training truncation length (0 = max context)");
    train->add_flag("--loss-summary-only", tr.loss_summary_only,
                    "restrict the loss to tokens after the separator");

    summarize_args sa;
    CLI::App* summ = app.add_subcommand("summarize", "generate summaries with beam search");
    summ->add_option("--ckpt", sa.ckpt_path, "model checkpoint")->required();
    summ->add_option("--vocab", sa.vocab_path, "BPE vocabulary file")->required();
    CLI::Option* in_opt = summ->add_option("--input", sa.input_path, "JSONL file with text fields");
    CLI::Option* text_opt = summ->add_option("--text", sa.text, "summarize one article inline");
    in_opt->excludes(text_opt);
    summ->add_option("--out", sa.out_path, "output path ('-' = stdout)");
    summ->add_option("--config", sa.config_path, "key = value config file");
    sa.gen.attach(summ);

    evaluate_args ea;
    CLI::App* eval = app.add_subcommand("evaluate", "score generated summaries against references");
    CLI::Option* gen_opt = eval->add_option("--generated", ea.generated_path,
                                            "JSONL with generated summaries");
    CLI::Option* ref_opt = eval->add_option("--reference", ea.reference_path,
                                            "JSONL with reference summaries");
    CLI::Option* paired_opt = eval->add_option("--paired", ea.paired_path,
                                               "JSONL with generated+reference per record");
    paired_opt->excludes(gen_opt);
    paired_opt->excludes(ref_opt);
    gen_opt->needs(ref_opt);
    eval->add_option("--json", ea.json_path, "write the JSON report here");
    eval->add_flag("--no-bertscore", ea.no_bertscore, "skip the embedding-based metric");
    eval->add_option("--bleu-max-n", ea.bleu_max_n, "highest BLEU n-gram order");
    eval->add_option("--embedding-dim", ea.embedding_dim, "hashed embedding dimension");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? exit_ok : exit_usage;
    }

    try {
        if (prepare->parsed()) return run_prepare(pa);
        if (train_tok->parsed()) return run_train_tokenizer(ta);
        if (train->parsed()) return run_train(tr);
        if (summ->parsed()) {
            if (sa.input_path.empty() && sa.text.empty()) {
                print_error("usage", "summarize needs --input or --text");
                return exit_usage;
            }
            return run_summarize(sa);
        }
        if (eval->parsed()) {
            if (ea.paired_path.empty() && (ea.generated_path.empty() || ea.reference_path.empty())) {
                print_error("usage", "evaluate needs --paired or --generated with --reference");
                return exit_usage;
            }
            return run_evaluate(ea);
        }
    } catch (const sumkit::divergence_error& e) {
        print_error("divergence", e.what());
        return exit_divergence;
    } catch (const sumkit::parse_error& e) {
        print_error("parse", e.what());
        return exit_data;
    } catch (const sumkit::schema_error& e) {
        print_error("schema", e.what());
        return exit_data;
    } catch (const sumkit::config_error& e) {
        print_error("config", e.what());
        return exit_usage;
    } catch (const sumkit::invalid_penalty_error& e) {
        print_error("config", e.what());
        return exit_usage;
    } catch (const sumkit::invalid_k_error& e) {
        print_error("config", e.what());
        return exit_usage;
    } catch (const sumkit::error& e) {
        print_error("data", e.what());
        return exit_data;
    } catch (const std::exception& e) {
        print_error("internal", e.what());
        return exit_data;
    }
    return exit_ok;
}
