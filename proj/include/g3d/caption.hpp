// caption.hpp - grounded scene caption generation: local scene selection,
// caption composition (LLM or deterministic fallback), relation injection,
// validation filters, and corpus statistics.
#pragma once

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "g3d/common.hpp"
#include "g3d/llm_client.hpp"
#include "g3d/markup.hpp"
#include "g3d/relations.hpp"
#include "g3d/scene.hpp"
#include "json.hpp"

namespace g3d {

struct ObjectCaption {
    int object_id = 0;
    std::string label;
    std::string phrase;  // short descriptive phrase, no brackets
};

struct LocalSelection {
    int anchor_id = 0;
    std::vector<int> member_ids;  // sorted, includes anchor, at most 15
    double radius_used = 0.0;
};

struct GroundedCaption {
    std::string scene_id;
    std::string text;  // plain text, markup stripped
    std::vector<PhraseCorrespondence> correspondences;  // sorted by begin
    nlohmann::json provenance = nlohmann::json::object();
};

struct CaptionParams {
    double initial_radius = 2.0;
    double radius_step = 0.1;
    std::size_t max_objects = 15;
    double keep_prob_lo = 0.6;
    double keep_prob_hi = 0.9;
    std::size_t word_cap = 256;  // captions must stay under this
};

// Local scene selection around an anchor: shrink the radius until at most
// max_objects instances remain, then keep each non-anchor member with a
// per-label probability drawn once per label type.
inline LocalSelection select_local_scene(const Scene& scene, int anchor_id, std::uint64_t seed,
                                         const CaptionParams& params = {}) {
    scene.at(anchor_id);  // existence check
    Vec3 anchor_center = instance_box(scene, anchor_id).center();

    std::vector<std::pair<double, int>> by_distance;  // (distance to anchor, id)
    for (const auto& inst : scene.instances) {
        by_distance.emplace_back(distance(instance_box(scene, inst.id).center(), anchor_center), inst.id);
    }
    std::sort(by_distance.begin(), by_distance.end());

    double radius = params.initial_radius;
    auto members_within = [&](double r) {
        std::vector<int> m;
        for (const auto& [d, id] : by_distance)
            if (d <= r) m.push_back(id);
        return m;
    };
    std::vector<int> members = members_within(radius);
    while (members.size() > params.max_objects && radius > params.radius_step) {
        radius -= params.radius_step;
        members = members_within(radius);
    }
    if (members.size() > params.max_objects) {
        // coincident objects defeat the shrink loop; keep the closest ones
        members.clear();
        for (const auto& [d, id] : by_distance) {
            if (members.size() == params.max_objects && id != anchor_id) continue;
            if (members.size() < params.max_objects) members.push_back(id);
        }
        if (std::find(members.begin(), members.end(), anchor_id) == members.end()) {
            members.pop_back();
            members.push_back(anchor_id);
        }
    }

    // one keep-probability draw per label type, labels visited in sorted order
    Rng rng(seed);
    std::set<std::string> labels;
    for (int id : members)
        if (id != anchor_id) labels.insert(scene.at(id).label);
    std::map<std::string, double> keep_prob;
    for (const auto& label : labels) keep_prob[label] = rng.uniform(params.keep_prob_lo, params.keep_prob_hi);

    LocalSelection sel;
    sel.anchor_id = anchor_id;
    sel.radius_used = radius;
    std::vector<int> sorted_members = members;
    std::sort(sorted_members.begin(), sorted_members.end());
    for (int id : sorted_members) {
        if (id == anchor_id) {
            sel.member_ids.push_back(id);
        } else if (rng.uniform() < keep_prob[scene.at(id).label]) {
            sel.member_ids.push_back(id);
        }
    }
    return sel;
}

namespace detail {

inline std::string format_coord(const Vec3& v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "(%.2f,%.2f,%.2f)", v.x, v.y, v.z);
    return buf;
}

// Deterministic markup composer used when no LLM is in the loop.
inline std::string fallback_compose(const LocalSelection& sel, const std::vector<ObjectCaption>& captions) {
    std::map<int, const ObjectCaption*> by_id;
    for (const auto& c : captions) by_id[c.object_id] = &c;
    std::string out;
    bool first = true;
    for (int id : sel.member_ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw Error("fallback composer: no caption for id " + std::to_string(id));
        std::string bracket = "[" + it->second->phrase + " " + std::to_string(id) + "]";
        out += first ? "In this area there is " + bracket + "." : " There is also " + bracket + ".";
        first = false;
    }
    return out;
}

inline std::string sentence_case(std::string s) {
    if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s;
}

}  // namespace detail

inline GroundedCaption caption_from_markup(const std::string& scene_id, const std::string& markup) {
    ParsedMarkup parsed = parse_grounded_markup(markup);
    GroundedCaption cap;
    cap.scene_id = scene_id;
    cap.text = std::move(parsed.text);
    cap.correspondences = std::move(parsed.correspondences);
    return cap;
}

struct Rejection {
    std::string reason;
};

using ValidationOutcome = std::variant<GroundedCaption, Rejection>;

// Post-processing filter: parse failures, unknown ids, duplicate/overlapping
// spans, and over-long captions are rejected as values, not thrown.
inline ValidationOutcome validate_caption(const std::string& scene_id, const std::string& markup,
                                          const Scene& scene, const CaptionParams& params = {}) {
    GroundedCaption cap;
    try {
        cap = caption_from_markup(scene_id, markup);
    } catch (const ParseError& e) {
        return Rejection{std::string("parse-failure: ") + e.what()};
    }
    std::size_t prev_end = 0;
    bool first = true;
    for (const auto& corr : cap.correspondences) {
        if (!first && corr.begin < prev_end) return Rejection{"duplicate-span"};
        prev_end = corr.end;
        first = false;
        for (int id : corr.ids) {
            if (!scene.find(id)) return Rejection{"unknown-id: " + std::to_string(id)};
        }
    }
    if (word_count(cap.text) >= params.word_cap) return Rejection{"too-long"};
    return cap;
}

// Step 2: condense a local selection into one grounded caption.
inline GroundedCaption compose_caption(const Scene& scene, const LocalSelection& sel,
                                       const std::vector<ObjectCaption>& captions,
                                       const std::map<int, Vec3>& coords, const LlmClient& client,
                                       const PromptSpec& prompt, CompletionMode mode,
                                       const CaptionParams& params = {}) {
    std::map<int, const ObjectCaption*> by_id;
    for (const auto& c : captions) by_id[c.object_id] = &c;
    std::string object_lines;
    for (int id : sel.member_ids) {
        auto cit = by_id.find(id);
        auto xit = coords.find(id);
        if (cit == by_id.end()) throw Error("compose_caption: no caption for member id " + std::to_string(id));
        if (xit == coords.end()) throw Error("compose_caption: no coordinate for member id " + std::to_string(id));
        object_lines += std::to_string(id) + ": " + cit->second->phrase + " at " +
                        detail::format_coord(xit->second) + "\n";
    }
    std::map<std::string, std::string> bindings{{"object_list", object_lines}};
    std::string markup = client.complete(prompt, bindings, mode,
                                         [&](const auto&) { return detail::fallback_compose(sel, captions); });

    auto outcome = validate_caption(scene.scene_id, markup, scene, params);
    if (std::holds_alternative<Rejection>(outcome))
        throw ValidationError("compose_caption: " + std::get<Rejection>(outcome).reason);
    GroundedCaption cap = std::get<GroundedCaption>(std::move(outcome));

    std::set<int> member_set(sel.member_ids.begin(), sel.member_ids.end());
    std::set<int> seen;
    for (const auto& corr : cap.correspondences) {
        for (int id : corr.ids) {
            if (!member_set.count(id))
                throw ValidationError("compose_caption: id " + std::to_string(id) + " outside selection");
            if (!seen.insert(id).second)
                throw ValidationError("compose_caption: id " + std::to_string(id) + " referenced twice");
        }
    }
    cap.provenance["anchor_id"] = sel.anchor_id;
    cap.provenance["member_ids"] = sel.member_ids;
    cap.provenance["radius_used"] = sel.radius_used;
    return cap;
}

// Step 3: merge rendered relation statements into an existing caption.
inline GroundedCaption inject_relations(const GroundedCaption& caption,
                                        const std::vector<RelationStatement>& statements,
                                        const std::map<int, std::string>& labels, const Scene& scene,
                                        const LlmClient& client, const PromptSpec& prompt, CompletionMode mode,
                                        const CaptionParams& params = {}) {
    if (statements.empty()) return caption;
    std::string base_markup = serialize_grounded_markup(caption.text, caption.correspondences);
    std::string relation_text;
    for (const auto& s : statements) {
        if (!relation_text.empty()) relation_text += " ";
        relation_text += detail::sentence_case(render_relation_phrase(s, labels)) + ".";
    }
    std::map<std::string, std::string> bindings{{"caption", base_markup}, {"relations", relation_text}};
    std::string merged = client.complete(prompt, bindings, mode,
                                         [&](const auto&) { return base_markup + " " + relation_text; });

    auto outcome = validate_caption(caption.scene_id, merged, scene, params);
    if (std::holds_alternative<Rejection>(outcome))
        throw ValidationError("inject_relations: " + std::get<Rejection>(outcome).reason);
    GroundedCaption out = std::get<GroundedCaption>(std::move(outcome));

    // every pre-existing correspondence id set must survive the merge
    auto key = [](const PhraseCorrespondence& c) {
        std::vector<int> ids = c.ids;
        std::sort(ids.begin(), ids.end());
        return ids;
    };
    std::multiset<std::vector<int>> before, after;
    for (const auto& c : caption.correspondences) before.insert(key(c));
    for (const auto& c : out.correspondences) after.insert(key(c));
    for (const auto& k : before) {
        auto it = after.find(k);
        if (it == after.end()) throw ValidationError("inject_relations: merge dropped a correspondence");
        after.erase(it);
    }

    out.provenance = caption.provenance;
    auto& rels = out.provenance["relations"] = nlohmann::json::array();
    for (const auto& s : statements) {
        rels.push_back({{"kind", relation_kind_name(s.kind)}, {"target", s.target_id}, {"anchors", s.anchor_ids}});
    }
    return out;
}

inline nlohmann::json caption_to_json(const GroundedCaption& cap) {
    nlohmann::json j;
    j["scene_id"] = cap.scene_id;
    j["text"] = cap.text;
    auto& corrs = j["correspondences"] = nlohmann::json::array();
    for (const auto& c : cap.correspondences) {
        corrs.push_back({{"span", {c.begin, c.end}}, {"ids", c.ids}});
    }
    j["provenance"] = cap.provenance;
    return j;
}

inline GroundedCaption caption_from_json(const nlohmann::json& j) {
    GroundedCaption cap;
    cap.scene_id = j.at("scene_id").get<std::string>();
    cap.text = j.at("text").get<std::string>();
    for (const auto& cj : j.at("correspondences")) {
        PhraseCorrespondence c;
        c.begin = cj.at("span").at(0).get<std::size_t>();
        c.end = cj.at("span").at(1).get<std::size_t>();
        c.ids = cj.at("ids").get<std::vector<int>>();
        cap.correspondences.push_back(std::move(c));
    }
    if (j.contains("provenance")) cap.provenance = j["provenance"];
    return cap;
}

struct CorpusStats {
    std::size_t texts = 0;
    std::size_t tokens = 0;
    std::size_t correspondences = 0;

    double tokens_per_text() const { return texts ? static_cast<double>(tokens) / static_cast<double>(texts) : 0.0; }
    double corr_per_token() const {
        return tokens ? static_cast<double>(correspondences) / static_cast<double>(tokens) : 0.0;
    }
};

inline void accumulate_stats(CorpusStats& stats, const GroundedCaption& cap) {
    stats.texts += 1;
    stats.tokens += tokenize(cap.text).size();
    stats.correspondences += cap.correspondences.size();
}

inline nlohmann::json stats_to_json(const CorpusStats& s) {
    return {{"texts", s.texts},
            {"tokens", s.tokens},
            {"correspondences", s.correspondences},
            {"tokens_per_text", s.tokens_per_text()},
            {"corr_per_token", s.corr_per_token()},
            {"corr_per_token_percent", 100.0 * s.corr_per_token()}};
}

}  // namespace g3d
