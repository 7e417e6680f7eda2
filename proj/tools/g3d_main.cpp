// g3d - batch CLI for grounded scene-caption generation, instruction
// conversion, corpus statistics, evaluation, and self-checks.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "g3d/pipeline.hpp"
#include "g3d/selfcheck.hpp"
#include "json.hpp"

namespace {

g3d::CompletionMode parse_mode(bool live, bool replay, bool fallback) {
    int chosen = int(live) + int(replay) + int(fallback);
    if (chosen > 1) throw g3d::Error("choose at most one of --live/--replay/--fallback");
    if (live) return g3d::CompletionMode::live;
    if (replay) return g3d::CompletionMode::replay;
    return g3d::CompletionMode::fallback;
}

void write_json_output(const nlohmann::json& j, const std::string& output_path) {
    if (output_path.empty()) {
        std::cout << j.dump(2) << "\n";
    } else {
        std::ofstream out(output_path, std::ios::binary);
        if (!out) throw g3d::Error("cannot write output file: " + output_path);
        out << j.dump(2) << "\n";
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"grounded scene-text data toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path, "JSON config file; flags override its values");

    // generate
    auto* generate = app.add_subcommand("generate", "produce grounded-caption JSONL from scene files");
    std::string gen_scenes, gen_output, gen_phrases, gen_cache, gen_prompts;
    std::uint64_t gen_seed = 0;
    std::size_t gen_jobs = 0;
    bool gen_live = false, gen_replay = false, gen_fallback = false;
    generate->add_option("--scenes", gen_scenes, "scene JSON file or directory");
    generate->add_option("--output", gen_output, "output JSONL path");
    generate->add_option("--phrases", gen_phrases, "optional user-supplied object phrase file");
    generate->add_option("--cache", gen_cache, "replay cache directory");
    generate->add_option("--prompts", gen_prompts, "prompt spec directory");
    generate->add_option("--seed", gen_seed, "generation seed")->required();
    generate->add_option("--jobs", gen_jobs, "worker count");
    generate->add_flag("--live", gen_live, "call the completion API");
    generate->add_flag("--replay", gen_replay, "serve responses from the cache only");
    generate->add_flag("--fallback", gen_fallback, "use the deterministic composer (default)");

    // convert
    auto* convert = app.add_subcommand("convert", "convert grounded captions to instruction JSONL");
    std::string conv_input, conv_output, conv_templates, conv_task = "multi_grounding";
    std::uint64_t conv_seed = 0;
    bool conv_grounding = false;
    convert->add_option("--input", conv_input, "grounded caption JSONL")->required();
    convert->add_option("--output", conv_output, "output JSONL path");
    convert->add_option("--templates", conv_templates, "template library JSON");
    convert->add_option("--task", conv_task, "task kind, or 'all' for every template task");
    convert->add_option("--seed", conv_seed, "conversion seed");
    convert->add_flag("--with-grounding", conv_grounding, "append the grounding request suffix");

    // stats
    auto* stats = app.add_subcommand("stats", "corpus statistics for a grounded caption JSONL");
    std::string stats_input, stats_output;
    stats->add_option("--input", stats_input, "grounded caption JSONL")->required();
    stats->add_option("--output", stats_output, "report path (stdout if omitted)");

    // eval
    auto* eval = app.add_subcommand("eval", "compute metric reports from prediction files");
    std::string eval_metric, eval_preds, eval_gts, eval_scenes, eval_output;
    bool eval_self_flag = false;
    eval->add_option("--metric", eval_metric, "grounding | multi_grounding | detection | caption");
    eval->add_option("--preds", eval_preds, "prediction JSONL");
    eval->add_option("--gts", eval_gts, "ground-truth JSONL (detection only)");
    eval->add_option("--scenes", eval_scenes, "scene file or directory (for --self)");
    eval->add_option("--output", eval_output, "report path (stdout if omitted)");
    eval->add_flag("--self", eval_self_flag, "evaluate perfect predictions built from scene ground truth");

    // check
    auto* check = app.add_subcommand("check", "run the built-in invariant and oracle suite");
    std::uint64_t check_seed = 7;
    check->add_option("--seed", check_seed, "seed for randomized checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        g3d::Config config;
        if (!config_path.empty()) config = g3d::load_config(config_path);

        if (generate->parsed()) {
            if (!gen_scenes.empty()) config.scenes_path = gen_scenes;
            if (!gen_output.empty()) config.output_path = gen_output;
            if (!gen_cache.empty()) config.cache_dir = gen_cache;
            if (!gen_prompts.empty()) config.prompts_dir = gen_prompts;
            if (gen_jobs) config.jobs = gen_jobs;
            config.seed = gen_seed;
            if (config.scenes_path.empty()) throw g3d::Error("generate: no scenes path given");
            if (config.output_path.empty()) throw g3d::Error("generate: no output path given");

            auto mode = parse_mode(gen_live, gen_replay, gen_fallback);
            auto store = std::make_shared<g3d::ReplayStore>(config.cache_dir);
            g3d::LlmClient client({}, store);
            g3d::ObjectCaptioner captioner =
                gen_phrases.empty() ? g3d::ObjectCaptioner() : g3d::ObjectCaptioner(gen_phrases);
            auto prompts = g3d::load_generate_prompts(config.prompts_dir);
            auto files = g3d::list_scene_files(config.scenes_path);
            auto captions = g3d::run_generate(files, captioner, client, prompts, mode, config);
            g3d::write_jsonl(config.output_path, captions,
                             [](const g3d::GroundedCaption& c) { return g3d::caption_to_json(c); });
            std::cout << "wrote " << captions.size() << " captions to " << config.output_path << "\n";
        } else if (convert->parsed()) {
            if (!conv_templates.empty()) config.templates_path = conv_templates;
            if (conv_seed) config.seed = conv_seed;
            auto captions = g3d::read_jsonl(conv_input, g3d::caption_from_json);
            auto templates = g3d::load_template_library(config.templates_path);
            std::vector<g3d::TaskKind> tasks;
            if (conv_task == "all") {
                for (const auto& [kind, _] : templates.tasks) tasks.push_back(kind);
            } else {
                tasks.push_back(g3d::task_kind_from_name(conv_task));
            }
            auto samples = g3d::run_convert(captions, tasks, templates, conv_grounding, config);
            if (conv_output.empty()) throw g3d::Error("convert: no output path given");
            g3d::write_jsonl(conv_output, samples,
                             [](const g3d::InstructionSample& s) { return g3d::sample_to_json(s); });
            std::cout << "wrote " << samples.size() << " samples to " << conv_output << "\n";
        } else if (stats->parsed()) {
            auto captions = g3d::read_jsonl(stats_input, g3d::caption_from_json);
            g3d::CorpusStats s;
            for (const auto& c : captions) g3d::accumulate_stats(s, c);
            write_json_output(g3d::stats_to_json(s), stats_output);
        } else if (eval->parsed()) {
            g3d::MetricReport report;
            if (eval_self_flag) {
                if (eval_scenes.empty()) throw g3d::Error("eval --self: no scenes path given");
                report = g3d::eval_self(g3d::list_scene_files(eval_scenes), config);
            } else if (eval_metric == "grounding") {
                auto queries = g3d::read_jsonl(eval_preds, g3d::grounding_query_from_json);
                report = g3d::grounding_accuracy(queries, config.iou_thresholds);
            } else if (eval_metric == "multi_grounding") {
                auto queries = g3d::read_jsonl(eval_preds, g3d::grounding_query_from_json);
                report = g3d::multi_grounding_f1(queries, config.score_filter, config.iou_thresholds);
            } else if (eval_metric == "detection") {
                auto preds = g3d::read_jsonl(eval_preds, g3d::detection_instance_from_json);
                auto gts = g3d::read_jsonl(eval_gts, g3d::detection_instance_from_json);
                report = g3d::detection_ap(preds, gts);
            } else if (eval_metric == "caption") {
                auto preds = g3d::read_jsonl(eval_preds, g3d::caption_prediction_from_json);
                report = g3d::iou_gated_caption_metrics(preds, config.iou_thresholds);
            } else {
                throw g3d::Error("eval: unknown metric '" + eval_metric + "'");
            }
            write_json_output(g3d::report_to_json(report), eval_output);
        } else if (check->parsed()) {
            auto results = g3d::run_self_checks(check_seed);
            bool all_ok = true;
            for (const auto& r : results) {
                std::cout << (r.passed ? "[PASS] " : "[FAIL] ") << r.name;
                if (!r.detail.empty()) std::cout << " (" << r.detail << ")";
                std::cout << "\n";
                all_ok = all_ok && r.passed;
            }
            return all_ok ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
