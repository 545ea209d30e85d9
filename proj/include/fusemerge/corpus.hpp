#pragma once

// Dialogue corpus handling for the toy pipeline: a character vocabulary, a
// deliberately different character-pair tokenizer for exercising alignment,
// and line-delimited-JSON ingestion with role masking and blocking.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "fusemerge/errors.hpp"

namespace fusemerge {

inline constexpr const char* kUnkToken = "<unk>";

// Token id per character; id 0 is reserved for unknown characters.
struct CharVocab {
    std::map<char, int> char_to_id;
    std::vector<std::string> id_to_token;  // index = id; [0] == "<unk>"
    int unk_id = 0;

    std::size_t size() const { return id_to_token.size(); }

    int id_of(char c) const {
        auto it = char_to_id.find(c);
        return it == char_to_id.end() ? unk_id : it->second;
    }

    std::vector<int> tokenize(const std::string& text) const {
        std::vector<int> ids;
        ids.reserve(text.size());
        for (char c : text) ids.push_back(id_of(c));
        return ids;
    }

    // Surface forms, one per character, independent of vocabulary coverage.
    static std::vector<std::string> token_strings(const std::string& text) {
        std::vector<std::string> out;
        out.reserve(text.size());
        for (char c : text) out.emplace_back(1, c);
        return out;
    }
};

inline CharVocab make_char_vocab(const std::string& alphabet) {
    CharVocab vocab;
    vocab.id_to_token.push_back(kUnkToken);
    std::set<char> seen;
    for (char c : alphabet) {
        if (!seen.insert(c).second) continue;
        vocab.char_to_id[c] = static_cast<int>(vocab.id_to_token.size());
        vocab.id_to_token.emplace_back(1, c);
    }
    return vocab;
}

inline CharVocab char_vocab_from_tokens(const std::vector<std::string>& id_to_token) {
    CharVocab vocab;
    if (id_to_token.empty() || id_to_token[0] != kUnkToken)
        throw std::invalid_argument("character vocabulary must start with the <unk> token");
    vocab.id_to_token = id_to_token;
    for (std::size_t i = 1; i < id_to_token.size(); ++i) {
        if (id_to_token[i].size() != 1)
            throw std::invalid_argument("character vocabulary entries past <unk> must be single characters");
        vocab.char_to_id.emplace(id_to_token[i][0], static_cast<int>(i));
    }
    return vocab;
}

// Non-overlapping consecutive character bigrams; a trailing odd character
// becomes a unigram token. Different segmentation from CharVocab on the same
// text, which is what the alignment path needs to be exercised against.
struct PairVocab {
    std::map<std::string, int> token_to_id;
    std::vector<std::string> id_to_token;  // [0] == "<unk>"
    int unk_id = 0;

    std::size_t size() const { return id_to_token.size(); }

    static std::vector<std::string> split(const std::string& text) {
        std::vector<std::string> out;
        for (std::size_t i = 0; i < text.size(); i += 2) out.push_back(text.substr(i, 2));
        return out;
    }

    std::vector<int> tokenize(const std::string& text) const {
        std::vector<int> ids;
        for (const std::string& tok : split(text)) {
            auto it = token_to_id.find(tok);
            ids.push_back(it == token_to_id.end() ? unk_id : it->second);
        }
        return ids;
    }
};

inline PairVocab make_pair_vocab(const std::vector<std::string>& texts) {
    PairVocab vocab;
    vocab.id_to_token.push_back(kUnkToken);
    std::set<std::string> pieces;
    for (const std::string& text : texts)
        for (const std::string& tok : PairVocab::split(text)) pieces.insert(tok);
    for (const std::string& tok : pieces) {
        vocab.token_to_id[tok] = static_cast<int>(vocab.id_to_token.size());
        vocab.id_to_token.push_back(tok);
    }
    return vocab;
}

// Token ids plus the role mask: true marks assistant tokens, which are the
// loss-bearing positions.
struct DialogueSample {
    std::vector<int> token_ids;
    std::vector<bool> role_mask;
};

// Reads line-delimited JSON dialogues ({"turns": [{"role", "text"}, ...]}),
// tokenizes per character, masks user turns out, concatenates each dialogue
// and splits it into blocks of at most block_len tokens. Blocks without a
// single loss-bearing token are dropped. Blank lines are skipped; a file
// with no dialogues at all is an error.
inline std::vector<DialogueSample> ingest_dialogues(const std::filesystem::path& path,
                                                    const CharVocab& vocab, std::size_t block_len) {
    if (block_len < 2) throw std::invalid_argument("ingest_dialogues: block_len must be at least 2");
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");

    std::vector<DialogueSample> samples;
    std::string line;
    std::size_t line_no = 0;
    bool saw_dialogue = false;
    auto malformed = [&](const std::string& what) {
        return FormatError(FormatError::Kind::MalformedHeader,
                           path.string() + ":" + std::to_string(line_no) + ": " + what);
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) throw malformed("malformed JSON line");
        if (!j.is_object() || !j.contains("turns") || !j["turns"].is_array())
            throw malformed("dialogue must be an object with a 'turns' list");
        saw_dialogue = true;

        DialogueSample full;
        for (const auto& turn : j["turns"]) {
            if (!turn.is_object() || !turn.contains("role") || !turn.contains("text") ||
                !turn["role"].is_string() || !turn["text"].is_string())
                throw malformed("turn must carry string 'role' and 'text'");
            const std::string role = turn["role"].get<std::string>();
            if (role != "user" && role != "assistant") throw malformed("unknown role '" + role + "'");
            const bool loss_bearing = role == "assistant";
            for (int id : vocab.tokenize(turn["text"].get<std::string>())) {
                full.token_ids.push_back(id);
                full.role_mask.push_back(loss_bearing);
            }
        }
        for (std::size_t start = 0; start < full.token_ids.size(); start += block_len) {
            const std::size_t end = std::min(start + block_len, full.token_ids.size());
            DialogueSample block;
            block.token_ids.assign(full.token_ids.begin() + start, full.token_ids.begin() + end);
            block.role_mask.assign(full.role_mask.begin() + start, full.role_mask.begin() + end);
            bool any_loss = false;
            for (bool b : block.role_mask) any_loss = any_loss || b;
            if (any_loss) samples.push_back(std::move(block));
        }
    }
    if (in.bad()) throw IoError("read failure on '" + path.string() + "'");
    if (!saw_dialogue) throw FormatError(FormatError::Kind::MalformedHeader, path.string() + ": empty corpus file");
    return samples;
}

}  // namespace fusemerge
