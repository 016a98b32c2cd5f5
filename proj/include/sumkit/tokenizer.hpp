#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace sumkit {

using token_id = std::uint32_t;
using token_sequence = std::vector<token_id>;

// Byte-level BPE vocabulary with reserved special tokens.
//
// Id layout is fixed: specials occupy 0..3, the 256 byte symbols occupy
// 4..259, and each learned merge appends one id. Special-token literals are
// atomic: encode never splits them and no merge rule may produce one.
struct vocab {
    static constexpr const char* bos_literal = "<s>";
    static constexpr const char* sep_literal = "<|sep|>";
    static constexpr const char* eos_literal = "</s>";
    static constexpr const char* pad_literal = "<pad>";

    static constexpr token_id bos_id = 0;
    static constexpr token_id sep_id = 1;
    static constexpr token_id eos_id = 2;
    static constexpr token_id pad_id = 3;

    static constexpr std::size_t num_specials = 4;
    static constexpr std::size_t num_base = 256;
    static constexpr std::size_t first_merge_id = num_specials + num_base;

    // id -> token string (raw bytes for base symbols and merges)
    std::vector<std::string> tokens;
    std::unordered_map<std::string, token_id> token_to_id;
    // ordered merge rules; rule i produces token id first_merge_id + i
    std::vector<std::pair<token_id, token_id>> merges;

    std::size_t size() const { return tokens.size(); }

    static vocab base_only();
};

// Trains a byte-level BPE vocabulary. Deterministic for a fixed corpus order:
// the most frequent adjacent pair is merged each round, ties broken by
// lexicographic order of the pair's token strings. Stops early when no pair
// occurs at least twice. Throws corpus_empty_error / vocab_too_small_error.
vocab build_vocab(const std::vector<std::string>& corpus, std::size_t target_size);

// BPE-encodes text. Special-token literals map to their reserved ids; the
// remaining segments are split into bytes and merged in rule order.
token_sequence encode(const vocab& v, const std::string& text);

// Concatenates token strings; PAD tokens are dropped.
// Throws unknown_token_id_error for ids >= |V|.
std::string decode(const vocab& v, const token_sequence& seq);

// Text serialization: header line "bpe-v1 <|V|>", four special-token lines,
// then one merge rule per line. Token bytes outside printable ASCII are
// \xHH-escaped so the file is byte-exact on every platform.
void save_vocab(const vocab& v, const std::string& path);
vocab load_vocab(const std::string& path);

}  // namespace sumkit
