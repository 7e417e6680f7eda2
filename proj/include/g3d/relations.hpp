// relations.hpp - rule-based spatial relations between annotated instances.
// Geometry thresholds stand in for the external rule set the source data
// pipelines delegate to; every predicate is deterministic.
#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "g3d/common.hpp"
#include "g3d/scene.hpp"

namespace g3d {

enum class RelationKind { nearest, farthest, between, supporting, supported_by, above, below, near };

inline const char* relation_kind_name(RelationKind k) {
    switch (k) {
        case RelationKind::nearest: return "nearest";
        case RelationKind::farthest: return "farthest";
        case RelationKind::between: return "between";
        case RelationKind::supporting: return "supporting";
        case RelationKind::supported_by: return "supported_by";
        case RelationKind::above: return "above";
        case RelationKind::below: return "below";
        case RelationKind::near: return "near";
    }
    return "?";
}

inline std::size_t relation_arity(RelationKind k) { return k == RelationKind::between ? 2 : 1; }

struct RelationStatement {
    RelationKind kind;
    int target_id = 0;
    std::vector<int> anchor_ids;

    friend bool operator==(const RelationStatement& a, const RelationStatement& b) {
        return a.kind == b.kind && a.target_id == b.target_id && a.anchor_ids == b.anchor_ids;
    }
};

struct RelationParams {
    double nearest_tie_margin = 0.01;      // meters; ties yield no statement
    double between_lateral_tolerance = 0.5;
    double support_z_tolerance = 0.05;
    double support_footprint_overlap = 0.5;
    double above_footprint_overlap = 0.2;
    double near_distance = 1.5;
    std::size_t max_relations_per_caption = 3;
};

namespace detail {

inline Vec3 center_of(const Scene& scene, int id) { return instance_box(scene, id).center(); }

// overlap of the xy footprints of a and b, as a fraction of a's footprint
inline double footprint_overlap_ratio(const Box3& a, const Box3& b) {
    double area_a = (a.max.x - a.min.x) * (a.max.y - a.min.y);
    double ix = std::min(a.max.x, b.max.x) - std::max(a.min.x, b.min.x);
    double iy = std::min(a.max.y, b.max.y) - std::max(a.min.y, b.min.y);
    if (ix <= 0.0 || iy <= 0.0) return 0.0;
    if (area_a <= 0.0) {
        // degenerate footprint: count as fully overlapped when inside b
        return 1.0;
    }
    return ix * iy / area_a;
}

}  // namespace detail

// Target is the strictly-closest `label` instance to an anchor object.
// The anchor is the closest instance of a different label to the target
// (nearest-anchor choice; ties broken by id).
inline std::optional<RelationStatement> nearest_relation(const Scene& scene, int target_id,
                                                         const std::string& label,
                                                         const RelationParams& params = {}) {
    const InstanceAnnotation& target = scene.at(target_id);
    std::vector<const InstanceAnnotation*> same_label;
    for (const auto& inst : scene.instances)
        if (inst.label == label) same_label.push_back(&inst);
    if (same_label.size() < 2 || target.label != label) return std::nullopt;

    Vec3 target_center = detail::center_of(scene, target_id);
    const InstanceAnnotation* anchor = nullptr;
    double anchor_dist = 0.0;
    for (const auto& inst : scene.instances) {
        if (inst.label == label) continue;
        double d = distance(detail::center_of(scene, inst.id), target_center);
        if (!anchor || d < anchor_dist || (d == anchor_dist && inst.id < anchor->id)) {
            anchor = &inst;
            anchor_dist = d;
        }
    }
    if (!anchor) return std::nullopt;

    Vec3 anchor_center = detail::center_of(scene, anchor->id);
    double own = distance(detail::center_of(scene, target_id), anchor_center);
    for (const auto* inst : same_label) {
        if (inst->id == target_id) continue;
        double d = distance(detail::center_of(scene, inst->id), anchor_center);
        if (d < own + params.nearest_tie_margin) return std::nullopt;
    }
    return RelationStatement{RelationKind::nearest, target_id, {anchor->id}};
}

// Target center projects strictly inside the anchor-center segment with a
// bounded perpendicular offset.
inline std::optional<RelationStatement> between_relation(const Scene& scene, int target_id, int anchor_a,
                                                         int anchor_b, const RelationParams& params = {}) {
    if (target_id == anchor_a || target_id == anchor_b || anchor_a == anchor_b)
        throw Error("between_relation: ids must be distinct");
    Vec3 t = detail::center_of(scene, target_id);
    Vec3 a = detail::center_of(scene, anchor_a);
    Vec3 b = detail::center_of(scene, anchor_b);
    Vec3 ab = b - a;
    double len2 = ab.dot(ab);
    if (len2 <= 0.0) return std::nullopt;
    double u = (t - a).dot(ab) / len2;
    if (u <= 0.0 || u >= 1.0) return std::nullopt;
    Vec3 foot = a + ab * u;
    if (distance(t, foot) > params.between_lateral_tolerance) return std::nullopt;
    return RelationStatement{RelationKind::between, target_id, {anchor_a, anchor_b}};
}

// supported_by(upper; lower) when the vertical gap is within tolerance and
// the upper footprint sits mostly over the lower box.
inline std::optional<RelationStatement> support_relation(const Scene& scene, int upper_id, int lower_id,
                                                         const RelationParams& params = {}) {
    if (upper_id == lower_id) throw Error("support_relation: ids must be distinct");
    Box3 upper = instance_box(scene, upper_id);
    Box3 lower = instance_box(scene, lower_id);
    double gap = upper.min.z - lower.max.z;
    if (std::abs(gap) > params.support_z_tolerance) return std::nullopt;
    if (detail::footprint_overlap_ratio(upper, lower) < params.support_footprint_overlap) return std::nullopt;
    return RelationStatement{RelationKind::supported_by, upper_id, {lower_id}};
}

inline std::optional<RelationStatement> above_relation(const Scene& scene, int upper_id, int lower_id,
                                                       const RelationParams& params = {}) {
    if (upper_id == lower_id) throw Error("above_relation: ids must be distinct");
    Box3 upper = instance_box(scene, upper_id);
    Box3 lower = instance_box(scene, lower_id);
    if (upper.min.z - lower.max.z <= 0.0) return std::nullopt;
    if (detail::footprint_overlap_ratio(upper, lower) < params.above_footprint_overlap) return std::nullopt;
    return RelationStatement{RelationKind::above, upper_id, {lower_id}};
}

inline std::optional<RelationStatement> near_relation(const Scene& scene, int target_id, int anchor_id,
                                                      const RelationParams& params = {}) {
    if (target_id == anchor_id) throw Error("near_relation: ids must be distinct");
    double d = distance(detail::center_of(scene, target_id), detail::center_of(scene, anchor_id));
    if (d > params.near_distance) return std::nullopt;
    return RelationStatement{RelationKind::near, target_id, {anchor_id}};
}

// Enumerates candidate statements in a canonical order, then draws at most
// max_relations_per_caption of them deterministically by seed. Every emitted
// statement re-validates through the predicate that produced it.
inline std::vector<RelationStatement> generate_relations(const Scene& scene, const std::vector<int>& object_ids,
                                                         std::uint64_t seed,
                                                         const RelationParams& params = {}) {
    std::vector<int> ids = object_ids;
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    for (int id : ids) scene.at(id);  // existence check
    if (ids.size() < 2) return {};

    std::vector<RelationStatement> candidates;
    for (int target : ids) {
        if (auto s = nearest_relation(scene, target, scene.at(target).label, params)) {
            if (std::find(ids.begin(), ids.end(), s->anchor_ids[0]) != ids.end()) candidates.push_back(*s);
        }
    }
    for (int upper : ids) {
        for (int lower : ids) {
            if (upper == lower) continue;
            if (auto s = support_relation(scene, upper, lower, params)) {
                candidates.push_back(*s);
                candidates.push_back(RelationStatement{RelationKind::supporting, lower, {upper}});
            } else if (auto sa = above_relation(scene, upper, lower, params)) {
                candidates.push_back(*sa);
                candidates.push_back(RelationStatement{RelationKind::below, lower, {upper}});
            }
        }
    }
    for (int target : ids) {
        for (std::size_t i = 0; i < ids.size(); ++i) {
            for (std::size_t j = i + 1; j < ids.size(); ++j) {
                if (ids[i] == target || ids[j] == target) continue;
                if (auto s = between_relation(scene, target, ids[i], ids[j], params)) candidates.push_back(*s);
            }
        }
    }
    // near only as a filler when nothing structural exists
    if (candidates.empty()) {
        for (std::size_t i = 0; i < ids.size(); ++i) {
            for (std::size_t j = i + 1; j < ids.size(); ++j) {
                if (auto s = near_relation(scene, ids[i], ids[j], params)) candidates.push_back(*s);
            }
        }
    }

    Rng rng(seed);
    std::vector<std::size_t> order(candidates.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    std::size_t take = std::min(params.max_relations_per_caption, candidates.size());
    std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take));
    std::sort(chosen.begin(), chosen.end());  // keep canonical ordering in the output

    std::vector<RelationStatement> out;
    for (std::size_t idx : chosen) out.push_back(candidates[idx]);
    return out;
}

inline std::string render_relation_phrase(const RelationStatement& s, const std::map<int, std::string>& labels) {
    auto tok = [&](int id) {
        auto it = labels.find(id);
        if (it == labels.end()) throw Error("render_relation_phrase: missing label for id " + std::to_string(id));
        return "[" + it->second + " " + std::to_string(id) + "]";
    };
    if (s.anchor_ids.size() != relation_arity(s.kind)) throw Error("render_relation_phrase: bad arity");
    switch (s.kind) {
        case RelationKind::nearest:
            return "the " + tok(s.target_id) + " is the " + labels.at(s.target_id) + " nearest to the " +
                   tok(s.anchor_ids[0]);
        case RelationKind::farthest:
            return "the " + tok(s.target_id) + " is the " + labels.at(s.target_id) + " farthest from the " +
                   tok(s.anchor_ids[0]);
        case RelationKind::between:
            return "the " + tok(s.target_id) + " is between the " + tok(s.anchor_ids[0]) + " and the " +
                   tok(s.anchor_ids[1]);
        case RelationKind::supporting:
            return "the " + tok(s.target_id) + " is supporting the " + tok(s.anchor_ids[0]);
        case RelationKind::supported_by:
            return "the " + tok(s.target_id) + " is supported by the " + tok(s.anchor_ids[0]);
        case RelationKind::above:
            return "the " + tok(s.target_id) + " is above the " + tok(s.anchor_ids[0]);
        case RelationKind::below:
            return "the " + tok(s.target_id) + " is below the " + tok(s.anchor_ids[0]);
        case RelationKind::near:
            return "the " + tok(s.target_id) + " is near the " + tok(s.anchor_ids[0]);
    }
    throw Error("render_relation_phrase: unknown kind");
}

}  // namespace g3d
