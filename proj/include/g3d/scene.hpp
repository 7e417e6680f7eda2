// scene.hpp - scene data model: point clouds, instance masks, boxes and the
// IoU primitives used throughout.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "g3d/common.hpp"
#include "json.hpp"

namespace g3d {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    friend Vec3 operator+(const Vec3& a, const Vec3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
    friend Vec3 operator-(const Vec3& a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
    friend Vec3 operator*(const Vec3& a, double s) { return {a.x * s, a.y * s, a.z * s}; }
    friend bool operator==(const Vec3& a, const Vec3& b) { return a.x == b.x && a.y == b.y && a.z == b.z; }

    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    double norm() const { return std::sqrt(dot(*this)); }
    bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

inline double distance(const Vec3& a, const Vec3& b) { return (a - b).norm(); }

struct Box3 {
    Vec3 min, max;

    bool valid() const {
        return min.finite() && max.finite() && min.x <= max.x && min.y <= max.y && min.z <= max.z;
    }
    Vec3 center() const { return (min + max) * 0.5; }
    double volume() const { return (max.x - min.x) * (max.y - min.y) * (max.z - min.z); }
    bool contains(const Vec3& p) const {
        return p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y && p.z >= min.z && p.z <= max.z;
    }
    friend bool operator==(const Box3& a, const Box3& b) { return a.min == b.min && a.max == b.max; }
};

struct PointCloud {
    std::vector<Vec3> points;
    std::vector<std::array<double, 3>> colors;  // optional; empty or same length as points
};

using Mask = std::vector<std::size_t>;  // point indices, kept sorted and unique

struct InstanceAnnotation {
    int id = 0;
    std::string label;
    Mask mask;
};

struct Scene {
    std::string scene_id;
    PointCloud cloud;
    std::vector<InstanceAnnotation> instances;

    const InstanceAnnotation* find(int id) const {
        for (const auto& inst : instances)
            if (inst.id == id) return &inst;
        return nullptr;
    }
    const InstanceAnnotation& at(int id) const {
        const auto* p = find(id);
        if (!p) throw Error("unknown instance id " + std::to_string(id));
        return *p;
    }
};

inline Mask canonical_mask(Mask m) {
    std::sort(m.begin(), m.end());
    m.erase(std::unique(m.begin(), m.end()), m.end());
    return m;
}

inline void validate_scene(const Scene& scene) {
    if (scene.cloud.points.empty()) throw ValidationError("scene '" + scene.scene_id + "': empty point cloud");
    for (const auto& p : scene.cloud.points)
        if (!p.finite()) throw ValidationError("scene '" + scene.scene_id + "': non-finite point");
    if (!scene.cloud.colors.empty() && scene.cloud.colors.size() != scene.cloud.points.size())
        throw ValidationError("scene '" + scene.scene_id + "': color/point count mismatch");

    std::unordered_set<int> ids;
    std::vector<char> owner(scene.cloud.points.size(), 0);
    for (const auto& inst : scene.instances) {
        std::string who = "instance " + std::to_string(inst.id);
        if (!ids.insert(inst.id).second) throw ValidationError(who + ": duplicate id");
        if (inst.mask.empty()) throw ValidationError(who + ": empty mask");
        for (std::size_t idx : inst.mask) {
            if (idx >= scene.cloud.points.size()) throw ValidationError(who + ": point index out of range");
            if (owner[idx]) throw ValidationError(who + ": mask overlaps another instance");
            owner[idx] = 1;
        }
    }
}

inline Box3 box_from_mask(const Scene& scene, const Mask& mask) {
    if (mask.empty()) throw Error("box_from_mask: empty mask");
    Box3 box;
    box.min = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
               std::numeric_limits<double>::infinity()};
    box.max = {-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
               -std::numeric_limits<double>::infinity()};
    for (std::size_t idx : mask) {
        if (idx >= scene.cloud.points.size()) throw Error("box_from_mask: point index out of range");
        const Vec3& p = scene.cloud.points[idx];
        box.min = {std::min(box.min.x, p.x), std::min(box.min.y, p.y), std::min(box.min.z, p.z)};
        box.max = {std::max(box.max.x, p.x), std::max(box.max.y, p.y), std::max(box.max.z, p.z)};
    }
    return box;
}

inline Box3 instance_box(const Scene& scene, int id) { return box_from_mask(scene, scene.at(id).mask); }

// Degenerate boxes score 0 against anything except an identical degenerate
// box, which scores 1.
inline double box_iou(const Box3& a, const Box3& b) {
    double va = a.volume(), vb = b.volume();
    if (va <= 0.0 || vb <= 0.0) return (a == b) ? 1.0 : 0.0;
    double ix = std::min(a.max.x, b.max.x) - std::max(a.min.x, b.min.x);
    double iy = std::min(a.max.y, b.max.y) - std::max(a.min.y, b.min.y);
    double iz = std::min(a.max.z, b.max.z) - std::max(a.min.z, b.min.z);
    if (ix <= 0.0 || iy <= 0.0 || iz <= 0.0) return 0.0;
    double inter = ix * iy * iz;
    return inter / (va + vb - inter);
}

// |a ∩ b| / |a ∪ b| with both-empty mapped to 0 at this layer.
inline double mask_iou(const Mask& a, const Mask& b) {
    if (a.empty() && b.empty()) return 0.0;
    std::size_t inter = 0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] == b[j]) {
            ++inter;
            ++i;
            ++j;
        } else if (a[i] < b[j]) {
            ++i;
        } else {
            ++j;
        }
    }
    std::size_t uni = a.size() + b.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

inline nlohmann::json scene_to_json(const Scene& scene) {
    nlohmann::json j;
    j["scene_id"] = scene.scene_id;
    auto& pts = j["points"] = nlohmann::json::array();
    for (const auto& p : scene.cloud.points) pts.push_back({p.x, p.y, p.z});
    if (!scene.cloud.colors.empty()) {
        auto& cols = j["colors"] = nlohmann::json::array();
        for (const auto& c : scene.cloud.colors) cols.push_back({c[0], c[1], c[2]});
    }
    auto& insts = j["instances"] = nlohmann::json::array();
    for (const auto& inst : scene.instances) {
        insts.push_back({{"id", inst.id}, {"label", inst.label}, {"point_indices", inst.mask}});
    }
    return j;
}

inline Scene scene_from_json(const nlohmann::json& j) {
    Scene scene;
    scene.scene_id = j.at("scene_id").get<std::string>();
    for (const auto& p : j.at("points")) {
        scene.cloud.points.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
    }
    if (j.contains("colors")) {
        for (const auto& c : j["colors"]) {
            scene.cloud.colors.push_back({c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>()});
        }
    }
    for (const auto& inst_j : j.at("instances")) {
        InstanceAnnotation inst;
        inst.id = inst_j.at("id").get<int>();
        inst.label = inst_j.at("label").get<std::string>();
        inst.mask = canonical_mask(inst_j.at("point_indices").get<Mask>());
        scene.instances.push_back(std::move(inst));
    }
    validate_scene(scene);
    return scene;
}

inline Scene load_scene(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open scene file: " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path + ": " + e.what(), e.byte);
    }
    try {
        return scene_from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path + ": " + e.what());
    }
}

inline void save_scene(const Scene& scene, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write scene file: " + path);
    out << scene_to_json(scene).dump(2) << "\n";
}

}  // namespace g3d
