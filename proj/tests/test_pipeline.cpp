#include <filesystem>
#include <fstream>
#include <memory>

#include "doctest.h"
#include "g3d/pipeline.hpp"
#include "synthetic.hpp"

using namespace g3d;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

GeneratePrompts inline_prompts() {
    return {{"scene_caption", "sys", "objects:\n{object_list}"},
            {"relation_merge", "sys", "caption: {caption}\nfacts: {relations}"}};
}

LlmClient offline_client() { return LlmClient(LlmConfig{}, std::make_shared<ReplayStore>()); }

std::vector<std::string> write_scene_corpus(const fs::path& dir, std::size_t scenes, std::size_t objects) {
    std::vector<std::string> files;
    for (std::size_t i = 0; i < scenes; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "scene%03zu", i);
        Scene scene = testutil::make_synthetic_room(name, objects);
        auto path = dir / (std::string(name) + ".json");
        save_scene(scene, path.string());
        files.push_back(path.string());
    }
    return files;
}

}  // namespace

TEST_CASE("Config") {
    SUBCASE("defaults survive an empty document") {
        Config c = Config::from_json(nlohmann::json::object());
        CHECK(c.caption.initial_radius == 2.0);
        CHECK(c.caption.max_objects == 15);
        CHECK(c.caption.word_cap == 256);
        CHECK(c.alignment.temperature == 0.1);
        CHECK(c.alignment.lambda_cls == 1.0);
        CHECK(c.score_filter == 0.3);
        CHECK(c.iou_thresholds == std::vector<double>{0.25, 0.5});
        CHECK(c.jobs == 1);
    }
    SUBCASE("fields override defaults") {
        Config c = Config::from_json(nlohmann::json{{"radius", 3.5}, {"seed", 9}, {"jobs", 4},
                                                    {"iou_thresholds", {0.5}}});
        CHECK(c.caption.initial_radius == 3.5);
        CHECK(c.seed == 9);
        CHECK(c.jobs == 4);
        CHECK(c.iou_thresholds == std::vector<double>{0.5});
    }
    SUBCASE("missing config file is an error") { CHECK_THROWS_AS(load_config("/nonexistent.json"), Error); }
}

TEST_CASE("list_scene_files returns a sorted corpus") {
    auto dir = fresh_dir("g3d_listing");
    for (const char* name : {"b.json", "a.json", "c.json", "ignore.txt"})
        std::ofstream(dir / name) << "{}";
    auto files = list_scene_files(dir.string());
    REQUIRE(files.size() == 3);
    CHECK(fs::path(files[0]).filename() == "a.json");
    CHECK(fs::path(files[2]).filename() == "c.json");
    SUBCASE("a single file passes through") {
        auto single = list_scene_files((dir / "a.json").string());
        CHECK(single == std::vector<std::string>{(dir / "a.json").string()});
    }
}

TEST_CASE("ObjectCaptioner") {
    Scene scene = testutil::make_synthetic_room("s0", 2);
    SUBCASE("defaults to the instance label") {
        ObjectCaptioner captioner;
        CHECK(captioner.caption_for(scene, scene.instances[0]).phrase == "chair");
    }
    SUBCASE("user phrases take precedence per scene and id") {
        auto path = fs::temp_directory_path() / "g3d_phrases.json";
        std::ofstream(path) << R"({"s0": {"0": "worn leather chair"}})";
        ObjectCaptioner captioner(path.string());
        CHECK(captioner.caption_for(scene, scene.instances[0]).phrase == "worn leather chair");
        CHECK(captioner.caption_for(scene, scene.instances[1]).phrase == "table");
    }
    SUBCASE("bracketed phrases are rejected") {
        auto path = fs::temp_directory_path() / "g3d_bad_phrases.json";
        std::ofstream(path) << R"({"s0": {"0": "chair [oops]"}})";
        ObjectCaptioner captioner(path.string());
        CHECK_THROWS_AS(captioner.caption_for(scene, scene.instances[0]), ValidationError);
    }
}

TEST_CASE("condense_phrase falls back to the label offline") {
    LlmClient client = offline_client();
    PromptSpec prompt{"object_condense", "s", "Object label: {label}\nVerbose caption: {caption}"};
    CHECK(condense_phrase(client, prompt, "chair", "a very long winded description of a chair",
                          CompletionMode::fallback) == "chair");
}

TEST_CASE("derive_seed mixes the base with the key") {
    CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
    CHECK(derive_seed(1, "a") != derive_seed(2, "a"));
    CHECK(derive_seed(1, "a") == derive_seed(1, "a"));
}

TEST_CASE("jsonl round-trip") {
    auto path = (fs::temp_directory_path() / "g3d_caps.jsonl").string();
    std::vector<GroundedCaption> caps{caption_from_markup("s0", "a [chair 1] here"),
                                      caption_from_markup("s1", "two [lamps 2 3] there")};
    write_jsonl(path, caps, [](const GroundedCaption& c) { return caption_to_json(c); });
    auto round = read_jsonl(path, caption_from_json);
    REQUIRE(round.size() == 2);
    CHECK(round[0].text == caps[0].text);
    CHECK(round[1].correspondences == caps[1].correspondences);

    SUBCASE("a bad line is reported with its line number") {
        std::ofstream(path, std::ios::app) << "not json\n";
        CHECK_THROWS_WITH_AS(read_jsonl(path, caption_from_json), doctest::Contains("line 3"), ParseError);
    }
}

TEST_CASE("generate_scene_captions") {
    Scene scene = testutil::make_synthetic_room("room", 5);
    Config config;
    config.seed = 42;
    LlmClient client = offline_client();

    auto caps = generate_scene_captions(scene, ObjectCaptioner(), client, inline_prompts(),
                                        CompletionMode::fallback, config);
    REQUIRE(caps.size() == 5);  // one caption per anchor
    for (const auto& cap : caps) {
        CHECK(cap.scene_id == "room");
        CHECK(!cap.correspondences.empty());
        CHECK(cap.provenance.contains("anchor_id"));
        // every referenced id is a scene instance
        for (const auto& corr : cap.correspondences)
            for (int id : corr.ids) CHECK(scene.find(id) != nullptr);
    }
    // anchors appear in instance order
    CHECK(caps[0].provenance["anchor_id"] == 0);
    CHECK(caps[4].provenance["anchor_id"] == 4);

    SUBCASE("byte-identical across repeat runs") {
        auto again = generate_scene_captions(scene, ObjectCaptioner(), client, inline_prompts(),
                                             CompletionMode::fallback, config);
        REQUIRE(again.size() == caps.size());
        for (std::size_t i = 0; i < caps.size(); ++i)
            CHECK(caption_to_json(again[i]) == caption_to_json(caps[i]));
    }
    SUBCASE("the seed changes the output") {
        Config other = config;
        other.seed = 43;
        auto different = generate_scene_captions(scene, ObjectCaptioner(), client, inline_prompts(),
                                                 CompletionMode::fallback, other);
        bool any_diff = false;
        for (std::size_t i = 0; i < caps.size(); ++i)
            if (caption_to_json(different[i]) != caption_to_json(caps[i])) any_diff = true;
        CHECK(any_diff);
    }
}

TEST_CASE("run_generate") {
    auto dir = fresh_dir("g3d_corpus");
    auto files = write_scene_corpus(dir, 6, 4);
    Config config;
    config.seed = 7;
    LlmClient client = offline_client();

    SUBCASE("output order is stable across worker counts") {
        config.jobs = 1;
        auto serial = run_generate(files, ObjectCaptioner(), client, inline_prompts(),
                                   CompletionMode::fallback, config);
        config.jobs = 4;
        auto parallel = run_generate(files, ObjectCaptioner(), client, inline_prompts(),
                                     CompletionMode::fallback, config);
        REQUIRE(serial.size() == parallel.size());
        CHECK(serial.size() == 6 * 4);
        for (std::size_t i = 0; i < serial.size(); ++i)
            CHECK(caption_to_json(serial[i]) == caption_to_json(parallel[i]));
    }
    SUBCASE("the first error propagates") {
        auto bad = dir / "zz_broken.json";
        std::ofstream(bad) << "{ not json";
        auto with_bad = files;
        with_bad.push_back(bad.string());
        config.jobs = 3;
        CHECK_THROWS(run_generate(with_bad, ObjectCaptioner(), client, inline_prompts(),
                                  CompletionMode::fallback, config));
    }
}

TEST_CASE("run_convert validates every sample") {
    Config config;
    config.seed = 3;
    TemplateLibrary templates;
#if defined(G3D_DATA_DIR)
    templates = load_template_library(std::string(G3D_DATA_DIR) + "/templates.json");
#else
    FAIL("G3D_DATA_DIR not defined");
#endif
    std::vector<GroundedCaption> caps{caption_from_markup("s0", "a [red chair 1] and a [lamp 2]")};
    auto samples = run_convert(caps, {TaskKind::multi_grounding, TaskKind::dense_captioning,
                                      TaskKind::scene_captioning, TaskKind::embodied_planning},
                               templates, false, config);
    REQUIRE(samples.size() == 4);
    for (const auto& s : samples) CHECK_NOTHROW(validate_sample(s));
    CHECK(samples[0].task == TaskKind::multi_grounding);

    SUBCASE("deterministic under a fixed seed") {
        auto again = run_convert(caps, {TaskKind::multi_grounding}, templates, false, config);
        auto first = run_convert(caps, {TaskKind::multi_grounding}, templates, false, config);
        CHECK(sample_to_json(again[0]) == sample_to_json(first[0]));
    }
}

TEST_CASE("evaluation input parsing") {
    SUBCASE("box JSON round-trip and validation") {
        Box3 b{{0, 1, 2}, {3, 4, 5}};
        CHECK(box_from_json(box_to_json(b)) == b);
        CHECK_THROWS_AS(box_from_json(nlohmann::json::parse("[[1,1,1],[0,0,0]]")), Error);
    }
    SUBCASE("grounding query") {
        auto j = nlohmann::json::parse(
            R"({"query_id":"q1","predictions":[{"box":[[0,0,0],[1,1,1]],"score":0.8}],"ground_truth":[[[0,0,0],[1,1,1]]]})");
        GroundingQuery q = grounding_query_from_json(j);
        CHECK(q.query_id == "q1");
        REQUIRE(q.predictions.size() == 1);
        CHECK(q.predictions[0].score == 0.8);
        CHECK(q.ground_truth.size() == 1);
    }
    SUBCASE("detection instance canonicalizes the mask") {
        auto j = nlohmann::json::parse(
            R"({"scene_id":"s","label":"chair","point_indices":[5,1,1,3],"score":0.7})");
        DetectionInstance d = detection_instance_from_json(j);
        CHECK(d.mask == Mask{1, 3, 5});
        CHECK(d.score == 0.7);
    }
    SUBCASE("caption prediction") {
        auto j = nlohmann::json::parse(
            R"({"predicted_box":[[0,0,0],[1,1,1]],"caption":"c","gt_box":[[0,0,0],[1,1,1]],"reference":"r"})");
        CaptionPrediction c = caption_prediction_from_json(j);
        CHECK(c.caption == "c");
        CHECK(c.reference == "r");
    }
}

TEST_CASE("eval_self is perfect by construction") {
    auto dir = fresh_dir("g3d_selfeval");
    auto files = write_scene_corpus(dir, 3, 5);
    Config config;
    MetricReport report = eval_self(files, config);
    CHECK(report.values.at("Acc@0.25") == 1.0);
    CHECK(report.values.at("Acc@0.50") == 1.0);
    CHECK(report.values.at("F1@0.25") == 1.0);
    CHECK(report.values.at("F1@0.50") == 1.0);
    CHECK(report.values.at("AP@0.25") == 1.0);
    CHECK(report.values.at("AP@0.50") == 1.0);
    CHECK(report.values.at("mAP") == 1.0);
    CHECK(report.values.at("B-4@0.25") == 1.0);
    CHECK(report.values.at("B-4@0.50") == 1.0);
    CHECK(report.counts.at("queries") > 0);
}
