#include "sumkit/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <map>
#include <sstream>

#include "sumkit/errors.hpp"

namespace sumkit {

namespace {

const std::array<const char*, 4> special_literals = {
    vocab::bos_literal, vocab::sep_literal, vocab::eos_literal, vocab::pad_literal};

bool is_special(const std::string& s) {
    for (const char* lit : special_literals) {
        if (s == lit) return true;
    }
    return false;
}

// Splits text into plain segments and special-token ids. At each position the
// longest special literal wins; otherwise the byte joins the current segment.
struct segmented_text {
    std::vector<std::string> segments;   // size = specials.size() + 1
    std::vector<token_id> specials;      // specials[i] sits between segments[i] and segments[i+1]
};

token_id special_id(std::size_t literal_index) {
    return static_cast<token_id>(literal_index);  // matches special_literals order
}

segmented_text split_on_specials(const std::string& text) {
    segmented_text out;
    std::string current;
    std::size_t i = 0;
    while (i < text.size()) {
        std::size_t best_len = 0;
        std::size_t best_idx = 0;
        for (std::size_t s = 0; s < special_literals.size(); ++s) {
            const std::string lit = special_literals[s];
            if (lit.size() > best_len && text.compare(i, lit.size(), lit) == 0) {
                best_len = lit.size();
                best_idx = s;
            }
        }
        if (best_len > 0) {
            out.segments.push_back(std::move(current));
            current.clear();
            out.specials.push_back(special_id(best_idx));
            i += best_len;
        } else {
            current.push_back(text[i]);
            ++i;
        }
    }
    out.segments.push_back(std::move(current));
    return out;
}

token_id byte_id(unsigned char b) {
    return static_cast<token_id>(vocab::num_specials + b);
}

token_sequence bytes_to_ids(const std::string& segment) {
    token_sequence ids;
    ids.reserve(segment.size());
    for (unsigned char b : segment) ids.push_back(byte_id(b));
    return ids;
}

// Applies one merge rule left-to-right without overlap.
void apply_merge(token_sequence& ids, token_id left, token_id right, token_id merged) {
    std::size_t w = 0;
    std::size_t r = 0;
    while (r < ids.size()) {
        if (r + 1 < ids.size() && ids[r] == left && ids[r + 1] == right) {
            ids[w++] = merged;
            r += 2;
        } else {
            ids[w++] = ids[r++];
        }
    }
    ids.resize(w);
}

std::string escape_token(const std::string& raw) {
    std::ostringstream out;
    for (unsigned char c : raw) {
        if (c < 0x21 || c > 0x7e || c == '\\') {
            static const char* hex = "0123456789abcdef";
            out << "\\x" << hex[c >> 4] << hex[c & 0xf];
        } else {
            out << static_cast<char>(c);
        }
    }
    return out.str();
}

int hex_val(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

std::string unescape_token(const std::string& esc, const std::string& path) {
    std::string out;
    std::size_t i = 0;
    while (i < esc.size()) {
        if (esc[i] == '\\') {
            if (i + 3 >= esc.size() || esc[i + 1] != 'x') {
                throw io_error(path + ": bad escape in vocab file");
            }
            int hi = hex_val(esc[i + 2]);
            int lo = hex_val(esc[i + 3]);
            if (hi < 0 || lo < 0) throw io_error(path + ": bad escape in vocab file");
            out.push_back(static_cast<char>(hi * 16 + lo));
            i += 4;
        } else {
            out.push_back(esc[i++]);
        }
    }
    return out;
}

}  // namespace

vocab vocab::base_only() {
    vocab v;
    v.tokens.reserve(num_specials + num_base);
    for (const char* lit : special_literals) v.tokens.emplace_back(lit);
    for (int b = 0; b < 256; ++b) v.tokens.push_back(std::string(1, static_cast<char>(b)));
    for (std::size_t id = 0; id < v.tokens.size(); ++id) {
        v.token_to_id.emplace(v.tokens[id], static_cast<token_id>(id));
    }
    return v;
}

vocab build_vocab(const std::vector<std::string>& corpus, std::size_t target_size) {
    if (corpus.empty()) throw corpus_empty_error();
    const std::size_t floor_size = vocab::num_specials + vocab::num_base;
    if (target_size < floor_size) {
        throw vocab_too_small_error("target_size " + std::to_string(target_size) +
                                    " below base+special floor " + std::to_string(floor_size));
    }

    vocab v = vocab::base_only();

    // Working corpus: special literals are segmentation boundaries, exactly as
    // encode treats them, so merges never span a special token.
    std::vector<token_sequence> docs;
    for (const std::string& text : corpus) {
        segmented_text seg = split_on_specials(text);
        for (const std::string& s : seg.segments) {
            if (s.size() >= 2) docs.push_back(bytes_to_ids(s));
        }
    }

    std::size_t merge_budget = target_size - floor_size;
    for (std::size_t round = 0; round < merge_budget; ++round) {
        // Count adjacent pairs. Best = highest count, ties by lexicographic
        // order of the pair's strings; selection is independent of map order.
        std::unordered_map<std::uint64_t, std::size_t> counts;
        for (const token_sequence& doc : docs) {
            for (std::size_t i = 0; i + 1 < doc.size(); ++i) {
                std::uint64_t key = (static_cast<std::uint64_t>(doc[i]) << 32) | doc[i + 1];
                ++counts[key];
            }
        }

        bool found = false;
        std::size_t best_count = 0;
        token_id best_l = 0, best_r = 0;
        for (const auto& [key, count] : counts) {
            if (count < 2) continue;
            auto l = static_cast<token_id>(key >> 32);
            auto r = static_cast<token_id>(key & 0xffffffffu);
            if (is_special(v.tokens[l] + v.tokens[r])) continue;
            if (!found || count > best_count ||
                (count == best_count &&
                 std::pair(v.tokens[l], v.tokens[r]) < std::pair(v.tokens[best_l], v.tokens[best_r]))) {
                found = true;
                best_count = count;
                best_l = l;
                best_r = r;
            }
        }
        if (!found) break;

        token_id merged = static_cast<token_id>(v.tokens.size());
        v.tokens.push_back(v.tokens[best_l] + v.tokens[best_r]);
        v.token_to_id.emplace(v.tokens.back(), merged);
        v.merges.emplace_back(best_l, best_r);
        for (token_sequence& doc : docs) apply_merge(doc, best_l, best_r, merged);
    }
    return v;
}

token_sequence encode(const vocab& v, const std::string& text) {
    segmented_text seg = split_on_specials(text);
    token_sequence out;
    for (std::size_t i = 0; i < seg.segments.size(); ++i) {
        token_sequence ids = bytes_to_ids(seg.segments[i]);
        for (std::size_t m = 0; m < v.merges.size(); ++m) {
            apply_merge(ids, v.merges[m].first, v.merges[m].second,
                        static_cast<token_id>(vocab::first_merge_id + m));
        }
        out.insert(out.end(), ids.begin(), ids.end());
        if (i < seg.specials.size()) out.push_back(seg.specials[i]);
    }
    return out;
}

std::string decode(const vocab& v, const token_sequence& seq) {
    std::string out;
    for (token_id id : seq) {
        if (id >= v.size()) {
            throw unknown_token_id_error("token id " + std::to_string(id) +
                                         " outside vocabulary of size " + std::to_string(v.size()));
        }
        if (id == vocab::pad_id) continue;
        out += v.tokens[id];
    }
    return out;
}

void save_vocab(const vocab& v, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open " + path + " for writing");
    f << "bpe-v1 " << v.size() << "\n";
    for (const char* lit : special_literals) f << lit << "\n";
    for (const auto& [l, r] : v.merges) {
        f << escape_token(v.tokens[l]) << " " << escape_token(v.tokens[r]) << "\n";
    }
    if (!f) throw io_error("write failed: " + path);
}

vocab load_vocab(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open " + path);
    std::string line;
    if (!std::getline(f, line)) throw io_error(path + ": empty vocab file");
    std::istringstream header(line);
    std::string tag;
    std::size_t declared_size = 0;
    header >> tag >> declared_size;
    if (tag != "bpe-v1") throw io_error(path + ": unsupported vocab format '" + tag + "'");

    for (const char* lit : special_literals) {
        if (!std::getline(f, line) || line != lit) {
            throw io_error(path + ": special token list does not match this toolkit");
        }
    }

    vocab v = vocab::base_only();
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::size_t sp = line.find(' ');
        if (sp == std::string::npos) throw io_error(path + ": malformed merge line");
        std::string left = unescape_token(line.substr(0, sp), path);
        std::string right = unescape_token(line.substr(sp + 1), path);
        auto li = v.token_to_id.find(left);
        auto ri = v.token_to_id.find(right);
        if (li == v.token_to_id.end() || ri == v.token_to_id.end()) {
            throw io_error(path + ": merge refers to unknown token");
        }
        token_id merged = static_cast<token_id>(v.tokens.size());
        v.tokens.push_back(left + right);
        v.token_to_id.emplace(v.tokens.back(), merged);
        v.merges.emplace_back(li->second, ri->second);
    }
    if (v.size() != declared_size) {
        throw io_error(path + ": vocab size mismatch (header " + std::to_string(declared_size) +
                       ", loaded " + std::to_string(v.size()) + ")");
    }
    return v;
}

}  // namespace sumkit
