#include "doctest.h"
#include "g3d/common.hpp"
#include "g3d/markup.hpp"

using namespace g3d;

TEST_CASE("parse_grounded_markup handles the reference formats") {
    SUBCASE("single-id bracket") {
        ParsedMarkup p = parse_grounded_markup("the [white nightstand 12] here");
        CHECK(p.text == "the white nightstand here");
        REQUIRE(p.correspondences.size() == 1);
        CHECK(p.text.substr(p.correspondences[0].begin, p.correspondences[0].end - p.correspondences[0].begin) ==
              "white nightstand");
        CHECK(p.correspondences[0].ids == std::vector<int>{12});
    }
    SUBCASE("multi-id bracket") {
        // reference hand-parse: phrase = "two brown chairs", trailing integers = {3, 7}
        ParsedMarkup p = parse_grounded_markup("[two brown chairs 3 7]");
        CHECK(p.text == "two brown chairs");
        REQUIRE(p.correspondences.size() == 1);
        CHECK(p.correspondences[0].ids == std::vector<int>{3, 7});
    }
    SUBCASE("bracket-free text is identity") {
        ParsedMarkup p = parse_grounded_markup("nothing to see here.");
        CHECK(p.text == "nothing to see here.");
        CHECK(p.correspondences.empty());
    }
    SUBCASE("non-trailing integers stay in the phrase") {
        ParsedMarkup p = parse_grounded_markup("[level 2 shelf 9]");
        CHECK(p.text == "level 2 shelf");
        CHECK(p.correspondences[0].ids == std::vector<int>{9});
    }
}

TEST_CASE("parse_grounded_markup error cases carry offsets") {
    CHECK_THROWS_AS(parse_grounded_markup("a [chair 1"), ParseError);
    CHECK_THROWS_AS(parse_grounded_markup("a chair 1]"), ParseError);
    CHECK_THROWS_AS(parse_grounded_markup("[a [chair 1] 2]"), ParseError);
    CHECK_THROWS_AS(parse_grounded_markup("[chair]"), ParseError);
    CHECK_THROWS_AS(parse_grounded_markup("[42]"), ParseError);
    try {
        parse_grounded_markup("ok [broken");
    } catch (const ParseError& e) {
        CHECK(e.offset() == 3);
    }
}

TEST_CASE("serialize_grounded_markup inverts parsing") {
    SUBCASE("zero correspondences pass text through") {
        CHECK(serialize_grounded_markup("plain text", {}) == "plain text");
    }
    SUBCASE("canonical markup round-trips both ways") {
        std::string markup = "a [red chair 3] next to [two lamps 4 5], done";
        ParsedMarkup p = parse_grounded_markup(markup);
        CHECK(serialize_grounded_markup(p.text, p.correspondences) == markup);
        ParsedMarkup again = parse_grounded_markup(serialize_grounded_markup(p.text, p.correspondences));
        CHECK(again.text == p.text);
        CHECK(again.correspondences == p.correspondences);
    }
    SUBCASE("adjacent correspondences do not merge") {
        std::string markup = "[chair 1][table 2]";
        ParsedMarkup p = parse_grounded_markup(markup);
        REQUIRE(p.correspondences.size() == 2);
        CHECK(serialize_grounded_markup(p.text, p.correspondences) == markup);
    }
    SUBCASE("bracket inside a phrase is an error") {
        std::vector<PhraseCorrespondence> corr{{0, 3, {1}}};
        CHECK_THROWS_AS(serialize_grounded_markup("a[b and more", corr), Error);
    }
}

TEST_CASE("markup round-trip property on randomized captions") {
    Rng rng(99);
    const char* words[] = {"red", "blue", "wooden", "chair", "table", "lamp", "small", "round"};
    for (int trial = 0; trial < 300; ++trial) {
        std::string markup;
        int segments = 1 + static_cast<int>(rng.uniform_index(5));
        for (int s = 0; s < segments; ++s) {
            if (rng.uniform() < 0.7) {
                markup += std::string(words[rng.uniform_index(8)]) + " ";
            }
            int phrase_words = 1 + static_cast<int>(rng.uniform_index(3));
            std::string phrase;
            for (int w = 0; w < phrase_words; ++w) {
                if (w) phrase += " ";
                phrase += words[rng.uniform_index(8)];
            }
            int ids = 1 + static_cast<int>(rng.uniform_index(3));
            std::string bracket = "[" + phrase;
            for (int k = 0; k < ids; ++k) bracket += " " + std::to_string(rng.uniform_index(40));
            bracket += "]";
            markup += bracket;
            if (rng.uniform() < 0.5) markup += ".";
        }
        ParsedMarkup p = parse_grounded_markup(markup);
        CHECK(serialize_grounded_markup(p.text, p.correspondences) == markup);
        // spans are sorted, non-overlapping, in range
        std::size_t prev_end = 0;
        for (const auto& c : p.correspondences) {
            CHECK(c.begin >= prev_end);
            CHECK(c.begin < c.end);
            CHECK(c.end <= p.text.size());
            CHECK(!c.ids.empty());
            prev_end = c.end;
        }
    }
}
