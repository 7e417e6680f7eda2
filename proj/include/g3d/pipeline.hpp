// pipeline.hpp - batch orchestration: config, scene corpus traversal,
// caption generation, instruction conversion, stats, and evaluation I/O.
#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "g3d/alignment.hpp"
#include "g3d/caption.hpp"
#include "g3d/instruction.hpp"
#include "g3d/llm_client.hpp"
#include "g3d/metrics.hpp"
#include "g3d/relations.hpp"
#include "g3d/scene.hpp"
#include "json.hpp"

namespace g3d {

struct Config {
    std::string scenes_path;
    std::string templates_path = "data/templates.json";
    std::string prompts_dir = "data/prompts";
    std::string cache_dir = ".g3d-cache";
    std::string output_path;

    CaptionParams caption;
    RelationParams relations;
    AlignmentParams alignment;
    double score_filter = 0.3;
    std::vector<double> iou_thresholds = {0.25, 0.5};
    std::uint64_t seed = 0;
    std::size_t jobs = 1;

    static Config from_json(const nlohmann::json& j) {
        Config c;
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
        };
        get("scenes", c.scenes_path);
        get("templates", c.templates_path);
        get("prompts", c.prompts_dir);
        get("cache", c.cache_dir);
        get("output", c.output_path);
        get("seed", c.seed);
        get("jobs", c.jobs);
        get("radius", c.caption.initial_radius);
        get("max_objects", c.caption.max_objects);
        get("keep_prob_lo", c.caption.keep_prob_lo);
        get("keep_prob_hi", c.caption.keep_prob_hi);
        get("word_cap", c.caption.word_cap);
        get("temperature", c.alignment.temperature);
        get("lambda_cls", c.alignment.lambda_cls);
        get("focal_gamma", c.alignment.focal_gamma);
        get("focal_alpha", c.alignment.focal_alpha);
        get("score_filter", c.score_filter);
        get("iou_thresholds", c.iou_thresholds);
        return c;
    }
};

inline Config load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config file: " + path);
    return Config::from_json(nlohmann::json::parse(in));
}

// Scene files, sorted by filename so output order is stable.
inline std::vector<std::string> list_scene_files(const std::string& path) {
    namespace fs = std::filesystem;
    std::vector<std::string> files;
    if (fs::is_directory(path)) {
        for (const auto& entry : fs::directory_iterator(path)) {
            if (entry.path().extension() == ".json") files.push_back(entry.path().string());
        }
        std::sort(files.begin(), files.end());
    } else {
        files.push_back(path);
    }
    return files;
}

// Step-1 captioner: user-supplied phrases when available, otherwise the
// deterministic label template.
class ObjectCaptioner {
public:
    ObjectCaptioner() = default;

    explicit ObjectCaptioner(const std::string& phrases_path) {
        std::ifstream in(phrases_path);
        if (!in) throw Error("cannot open phrases file: " + phrases_path);
        phrases_ = nlohmann::json::parse(in);
    }

    ObjectCaption caption_for(const Scene& scene, const InstanceAnnotation& inst) const {
        ObjectCaption c{inst.id, inst.label, inst.label};
        if (!phrases_.is_null() && phrases_.contains(scene.scene_id)) {
            const auto& by_id = phrases_[scene.scene_id];
            std::string key = std::to_string(inst.id);
            if (by_id.contains(key)) c.phrase = by_id[key].get<std::string>();
        }
        if (c.phrase.find('[') != std::string::npos || c.phrase.find(']') != std::string::npos)
            throw ValidationError("object phrase contains a bracket: " + c.phrase);
        return c;
    }

private:
    nlohmann::json phrases_;
};

// LLM condensation of a verbose caption into a short phrase (Step-1
// alternative to user-supplied phrases).
inline std::string condense_phrase(const LlmClient& client, const PromptSpec& prompt, const std::string& label,
                                   const std::string& verbose_caption, CompletionMode mode) {
    return client.complete(prompt, {{"label", label}, {"caption", verbose_caption}}, mode,
                           [&](const auto&) { return label; });
}

inline std::uint64_t derive_seed(std::uint64_t base, const std::string& key) {
    return base ^ fnv1a64(key);
}

struct GeneratePrompts {
    PromptSpec scene_caption;
    PromptSpec relation_merge;
};

inline GeneratePrompts load_generate_prompts(const std::string& prompts_dir) {
    namespace fs = std::filesystem;
    return {load_prompt_spec((fs::path(prompts_dir) / "scene_caption.json").string()),
            load_prompt_spec((fs::path(prompts_dir) / "relation_merge.json").string())};
}

// Steps 1-3 for every anchor of one scene.
inline std::vector<GroundedCaption> generate_scene_captions(const Scene& scene, const ObjectCaptioner& captioner,
                                                            const LlmClient& client, const GeneratePrompts& prompts,
                                                            CompletionMode mode, const Config& config) {
    std::map<int, Vec3> coords;
    std::map<int, std::string> labels;
    std::vector<ObjectCaption> captions;
    for (const auto& inst : scene.instances) {
        coords[inst.id] = instance_box(scene, inst.id).center();
        labels[inst.id] = inst.label;
        captions.push_back(captioner.caption_for(scene, inst));
    }
    std::vector<GroundedCaption> out;
    for (const auto& inst : scene.instances) {
        std::uint64_t seed = derive_seed(config.seed, scene.scene_id + "#" + std::to_string(inst.id));
        LocalSelection sel = select_local_scene(scene, inst.id, seed, config.caption);
        GroundedCaption cap =
            compose_caption(scene, sel, captions, coords, client, prompts.scene_caption, mode, config.caption);
        auto statements = generate_relations(scene, sel.member_ids, seed, config.relations);
        cap = inject_relations(cap, statements, labels, scene, client, prompts.relation_merge, mode, config.caption);
        out.push_back(std::move(cap));
    }
    return out;
}

// Worker-pool over scenes; output is ordered by position in `files`
// regardless of completion order.
inline std::vector<GroundedCaption> run_generate(const std::vector<std::string>& files,
                                                 const ObjectCaptioner& captioner, const LlmClient& client,
                                                 const GeneratePrompts& prompts, CompletionMode mode,
                                                 const Config& config) {
    std::vector<std::vector<GroundedCaption>> per_scene(files.size());
    std::size_t jobs = std::max<std::size_t>(1, config.jobs);
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    std::mutex error_mutex;
    std::string first_error;
    auto work = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= files.size()) return;
            try {
                Scene scene = load_scene(files[i]);
                per_scene[i] = generate_scene_captions(scene, captioner, client, prompts, mode, config);
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (first_error.empty()) first_error = e.what();
            }
        }
    };
    if (jobs == 1) {
        work();
    } else {
        for (std::size_t j = 0; j < jobs; ++j) workers.emplace_back(work);
        for (auto& w : workers) w.join();
    }
    if (!first_error.empty()) throw Error(first_error);

    std::vector<GroundedCaption> out;
    for (auto& caps : per_scene)
        for (auto& cap : caps) out.push_back(std::move(cap));
    return out;
}

template <typename T, typename ToJson>
inline void write_jsonl(const std::string& path, const std::vector<T>& items, ToJson to_json) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write output file: " + path);
    for (const auto& item : items) out << to_json(item).dump() << "\n";
}

template <typename FromJson>
inline auto read_jsonl(const std::string& path, FromJson from_json)
    -> std::vector<decltype(from_json(nlohmann::json()))> {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open input file: " + path);
    std::vector<decltype(from_json(nlohmann::json()))> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            throw ParseError(path + " line " + std::to_string(line_no) + ": " + e.what(), line_no);
        }
    }
    return out;
}

inline std::vector<InstructionSample> run_convert(const std::vector<GroundedCaption>& captions,
                                                  const std::vector<TaskKind>& tasks,
                                                  const TemplateLibrary& templates, bool grounding_requested,
                                                  const Config& config, const EmbodiedContext* embodied = nullptr) {
    std::vector<InstructionSample> out;
    for (std::size_t i = 0; i < captions.size(); ++i) {
        for (TaskKind task : tasks) {
            std::uint64_t seed =
                derive_seed(config.seed, captions[i].scene_id + "|" + std::to_string(i) + "|" + task_kind_name(task));
            InstructionSample sample = convert_task(captions[i], task, templates, grounding_requested, seed, embodied);
            validate_sample(sample);
            out.push_back(std::move(sample));
        }
    }
    return out;
}

// ---- evaluation I/O ----

inline Box3 box_from_json(const nlohmann::json& j) {
    Box3 b;
    b.min = {j.at(0).at(0).get<double>(), j.at(0).at(1).get<double>(), j.at(0).at(2).get<double>()};
    b.max = {j.at(1).at(0).get<double>(), j.at(1).at(1).get<double>(), j.at(1).at(2).get<double>()};
    if (!b.valid()) throw Error("invalid box in prediction file");
    return b;
}

inline nlohmann::json box_to_json(const Box3& b) {
    return {{b.min.x, b.min.y, b.min.z}, {b.max.x, b.max.y, b.max.z}};
}

inline GroundingQuery grounding_query_from_json(const nlohmann::json& j) {
    GroundingQuery q;
    q.query_id = j.at("query_id").get<std::string>();
    for (const auto& p : j.at("predictions")) {
        q.predictions.push_back({box_from_json(p.at("box")), p.at("score").get<double>()});
    }
    for (const auto& g : j.at("ground_truth")) q.ground_truth.push_back(box_from_json(g));
    return q;
}

inline DetectionInstance detection_instance_from_json(const nlohmann::json& j) {
    DetectionInstance d;
    d.scene_id = j.at("scene_id").get<std::string>();
    d.label = j.at("label").get<std::string>();
    d.mask = canonical_mask(j.at("point_indices").get<Mask>());
    if (j.contains("score")) d.score = j["score"].get<double>();
    return d;
}

inline CaptionPrediction caption_prediction_from_json(const nlohmann::json& j) {
    CaptionPrediction c;
    c.predicted_box = box_from_json(j.at("predicted_box"));
    c.caption = j.at("caption").get<std::string>();
    c.gt_box = box_from_json(j.at("gt_box"));
    c.reference = j.at("reference").get<std::string>();
    return c;
}

// Self-evaluation: builds perfect predictions from the scenes' own ground
// truth and runs the full metric suite over them.
inline MetricReport eval_self(const std::vector<std::string>& scene_files, const Config& config) {
    std::vector<GroundingQuery> single_queries, multi_queries;
    std::vector<DetectionInstance> det_preds, det_gts;
    std::vector<CaptionPrediction> caption_preds;
    for (const auto& file : scene_files) {
        Scene scene = load_scene(file);
        std::map<std::string, std::vector<Box3>> boxes_by_label;
        for (const auto& inst : scene.instances) {
            Box3 box = instance_box(scene, inst.id);
            single_queries.push_back(
                {scene.scene_id + "#" + std::to_string(inst.id), {{box, 0.9}}, {box}});
            boxes_by_label[inst.label].push_back(box);
            det_gts.push_back({scene.scene_id, inst.label, inst.mask, 1.0});
            det_preds.push_back({scene.scene_id, inst.label, inst.mask, 0.9});
            std::string ref = "this is the " + inst.label + " located in scene " + scene.scene_id +
                              " near the center of its area";
            caption_preds.push_back({box, ref, box, ref});
        }
        for (const auto& [label, boxes] : boxes_by_label) {
            GroundingQuery q;
            q.query_id = scene.scene_id + "@" + label;
            for (const auto& b : boxes) q.predictions.push_back({b, 0.9});
            q.ground_truth = boxes;
            multi_queries.push_back(std::move(q));
        }
    }
    MetricReport report;
    auto merge = [&](const MetricReport& r) {
        for (const auto& [k, v] : r.values) report.values[k] = v;
        for (const auto& [k, v] : r.counts) report.counts[k] += v;
    };
    merge(grounding_accuracy(single_queries, config.iou_thresholds));
    merge(multi_grounding_f1(multi_queries, config.score_filter, config.iou_thresholds));
    merge(detection_ap(det_preds, det_gts));
    merge(iou_gated_caption_metrics(caption_preds, config.iou_thresholds));
    return report;
}

}  // namespace g3d
