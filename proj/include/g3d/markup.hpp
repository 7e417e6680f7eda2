// markup.hpp - grounded markup: inline "[phrase id...]" brackets encoding
// phrase-to-region correspondences inside caption text.
#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <vector>

#include "g3d/common.hpp"

namespace g3d {

struct PhraseCorrespondence {
    std::size_t begin = 0;  // [begin, end) character offsets into the plain text
    std::size_t end = 0;
    std::vector<int> ids;  // non-empty

    friend bool operator==(const PhraseCorrespondence& a, const PhraseCorrespondence& b) {
        return a.begin == b.begin && a.end == b.end && a.ids == b.ids;
    }
};

struct ParsedMarkup {
    std::string text;
    std::vector<PhraseCorrespondence> correspondences;  // sorted by begin
};

namespace detail {

inline bool is_uint_token(std::string_view s) {
    if (s.empty()) return false;
    return std::all_of(s.begin(), s.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

}  // namespace detail

// Bracket grammar: ids are the maximal trailing run of whitespace-separated
// non-negative integers inside the bracket; everything before is the phrase.
// Nesting and unbalanced brackets are errors.
inline ParsedMarkup parse_grounded_markup(std::string_view raw) {
    ParsedMarkup out;
    std::size_t i = 0;
    while (i < raw.size()) {
        char c = raw[i];
        if (c == ']') throw ParseError("unbalanced ']'", i);
        if (c != '[') {
            out.text.push_back(c);
            ++i;
            continue;
        }
        std::size_t open = i;
        std::size_t close = std::string_view::npos;
        for (std::size_t k = open + 1; k < raw.size(); ++k) {
            if (raw[k] == '[') throw ParseError("nested '['", k);
            if (raw[k] == ']') {
                close = k;
                break;
            }
        }
        if (close == std::string_view::npos) throw ParseError("unbalanced '['", open);

        std::string_view body = raw.substr(open + 1, close - open - 1);
        // split into whitespace-separated tokens, remembering offsets
        std::vector<std::pair<std::size_t, std::string_view>> tokens;
        std::size_t t = 0;
        while (t < body.size()) {
            while (t < body.size() && std::isspace(static_cast<unsigned char>(body[t]))) ++t;
            std::size_t start = t;
            while (t < body.size() && !std::isspace(static_cast<unsigned char>(body[t]))) ++t;
            if (t > start) tokens.emplace_back(start, body.substr(start, t - start));
        }
        std::size_t first_id = tokens.size();
        while (first_id > 0 && detail::is_uint_token(tokens[first_id - 1].second)) --first_id;
        if (first_id == tokens.size()) throw ParseError("bracket with no trailing object ids", open);
        if (first_id == 0) throw ParseError("bracket with empty phrase", open);

        std::size_t phrase_end = tokens[first_id - 1].first + tokens[first_id - 1].second.size();
        std::string_view phrase = body.substr(0, phrase_end);
        // leading whitespace inside the bracket belongs to neither phrase nor ids
        std::size_t lead = 0;
        while (lead < phrase.size() && std::isspace(static_cast<unsigned char>(phrase[lead]))) ++lead;
        phrase.remove_prefix(lead);

        PhraseCorrespondence corr;
        corr.begin = out.text.size();
        out.text.append(phrase);
        corr.end = out.text.size();
        for (std::size_t k = first_id; k < tokens.size(); ++k) {
            corr.ids.push_back(std::stoi(std::string(tokens[k].second)));
        }
        out.correspondences.push_back(std::move(corr));
        i = close + 1;
    }
    return out;
}

// Inverse of parse_grounded_markup on valid inputs; correspondences must be
// sorted and non-overlapping.
inline std::string serialize_grounded_markup(std::string_view text,
                                             const std::vector<PhraseCorrespondence>& correspondences) {
    std::string out;
    std::size_t cursor = 0;
    for (const auto& corr : correspondences) {
        if (corr.begin < cursor || corr.end > text.size() || corr.begin >= corr.end)
            throw Error("serialize_grounded_markup: invalid or overlapping span");
        if (corr.ids.empty()) throw Error("serialize_grounded_markup: empty id list");
        std::string_view phrase = text.substr(corr.begin, corr.end - corr.begin);
        if (phrase.find('[') != std::string_view::npos || phrase.find(']') != std::string_view::npos)
            throw Error("serialize_grounded_markup: phrase contains a bracket");
        out.append(text.substr(cursor, corr.begin - cursor));
        out.push_back('[');
        out.append(phrase);
        for (int id : corr.ids) {
            out.push_back(' ');
            out.append(std::to_string(id));
        }
        out.push_back(']');
        cursor = corr.end;
    }
    out.append(text.substr(cursor));
    return out;
}

}  // namespace g3d
