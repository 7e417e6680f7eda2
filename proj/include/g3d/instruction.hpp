// instruction.hpp - converts grounded scene-text data into referent-token
// instruction-following samples with per-task template libraries.
#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "g3d/caption.hpp"
#include "g3d/common.hpp"
#include "g3d/llm_client.hpp"
#include "g3d/markup.hpp"
#include "json.hpp"

namespace g3d {

enum class TaskKind {
    detection,
    single_grounding,
    multi_grounding,
    dense_captioning,
    qa,
    scene_captioning,
    embodied_dialogue,
    embodied_planning,
};

inline const char* task_kind_name(TaskKind t) {
    switch (t) {
        case TaskKind::detection: return "detection";
        case TaskKind::single_grounding: return "single_grounding";
        case TaskKind::multi_grounding: return "multi_grounding";
        case TaskKind::dense_captioning: return "dense_captioning";
        case TaskKind::qa: return "qa";
        case TaskKind::scene_captioning: return "scene_captioning";
        case TaskKind::embodied_dialogue: return "embodied_dialogue";
        case TaskKind::embodied_planning: return "embodied_planning";
    }
    return "?";
}

inline TaskKind task_kind_from_name(const std::string& name) {
    static const std::map<std::string, TaskKind> table = {
        {"detection", TaskKind::detection},
        {"single_grounding", TaskKind::single_grounding},
        {"multi_grounding", TaskKind::multi_grounding},
        {"dense_captioning", TaskKind::dense_captioning},
        {"qa", TaskKind::qa},
        {"scene_captioning", TaskKind::scene_captioning},
        {"embodied_dialogue", TaskKind::embodied_dialogue},
        {"embodied_planning", TaskKind::embodied_planning},
    };
    auto it = table.find(name);
    if (it == table.end()) throw Error("unknown task kind: " + name);
    return it->second;
}

struct TaskTemplates {
    std::vector<std::string> questions;
    std::vector<std::string> answers_single;
    std::vector<std::string> answers_multiple;
    std::vector<std::string> answers_none;
    std::vector<std::string> brevity_suffixes;  // optional, QA-style short answers
};

struct TemplateLibrary {
    std::map<TaskKind, TaskTemplates> tasks;

    const TaskTemplates& at(TaskKind t) const {
        auto it = tasks.find(t);
        if (it == tasks.end()) throw Error(std::string("no templates for task ") + task_kind_name(t));
        return it->second;
    }
};

inline TemplateLibrary template_library_from_json(const nlohmann::json& j) {
    TemplateLibrary lib;
    for (auto it = j.begin(); it != j.end(); ++it) {
        TaskTemplates t;
        t.questions = it.value().at("questions").get<std::vector<std::string>>();
        const auto& answers = it.value().at("answers");
        t.answers_single = answers.at("single").get<std::vector<std::string>>();
        t.answers_multiple = answers.at("multiple").get<std::vector<std::string>>();
        t.answers_none = answers.at("none").get<std::vector<std::string>>();
        if (it.value().contains("brevity_suffixes"))
            t.brevity_suffixes = it.value()["brevity_suffixes"].get<std::vector<std::string>>();
        if (t.questions.size() < 10)
            throw ValidationError("task '" + it.key() + "' needs at least 10 question templates");
        if (t.answers_single.empty() || t.answers_multiple.empty() || t.answers_none.empty())
            throw ValidationError("task '" + it.key() + "' needs answer templates for single/multiple/none");
        lib.tasks[task_kind_from_name(it.key())] = std::move(t);
    }
    return lib;
}

inline TemplateLibrary load_template_library(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open template file: " + path);
    return template_library_from_json(nlohmann::json::parse(in));
}

struct ReferentAnnotation {
    std::size_t turn_index = 0;
    std::size_t token_position = 0;  // index of the <ref> occurrence within the turn
    std::vector<int> ids;
    std::optional<std::pair<std::size_t, std::size_t>> phrase_span;  // [begin,end) in the turn text

    friend bool operator==(const ReferentAnnotation& a, const ReferentAnnotation& b) {
        return a.turn_index == b.turn_index && a.token_position == b.token_position && a.ids == b.ids &&
               a.phrase_span == b.phrase_span;
    }
};

enum class Role { user, assistant };

struct Turn {
    Role role = Role::user;
    std::string text;
};

struct InstructionSample {
    std::string scene_id;
    TaskKind task = TaskKind::detection;
    std::vector<Turn> turns;
    std::vector<ReferentAnnotation> referents;
};

inline std::size_t count_occurrences(std::string_view text, std::string_view needle) {
    std::size_t n = 0, pos = 0;
    while ((pos = text.find(needle, pos)) != std::string_view::npos) {
        ++n;
        pos += needle.size();
    }
    return n;
}

namespace detail {

inline std::string substitute(const std::string& tpl, const std::map<std::string, std::string>& bindings) {
    std::string out;
    std::size_t i = 0;
    while (i < tpl.size()) {
        if (tpl[i] != '{') {
            out.push_back(tpl[i++]);
            continue;
        }
        std::size_t close = tpl.find('}', i + 1);
        if (close == std::string::npos) {
            out.append(tpl.substr(i));
            break;
        }
        std::string key = tpl.substr(i + 1, close - i - 1);
        auto it = bindings.find(key);
        if (it == bindings.end()) throw Error("template placeholder '" + key + "' is unbound");
        out.append(it->second);
        i = close + 1;
    }
    return out;
}

inline std::string grounded_segment(std::string_view phrase) {
    std::string p = phrase.empty() ? std::string("object") : std::string(phrase);
    return "<p> " + p + " </p> <ref>";
}

}  // namespace detail

// Caption text with every grounded phrase wrapped as "<p> phrase </p> <ref>".
inline std::string wrap_grounded_text(const GroundedCaption& caption) {
    std::string out;
    std::size_t cursor = 0;
    for (const auto& corr : caption.correspondences) {
        out.append(caption.text.substr(cursor, corr.begin - cursor));
        out.append(detail::grounded_segment(
            std::string_view(caption.text).substr(corr.begin, corr.end - corr.begin)));
        cursor = corr.end;
    }
    out.append(caption.text.substr(cursor));
    return out;
}

// One annotation per <ref>, ids taken from the source correspondences in
// text order.
inline std::vector<ReferentAnnotation> derive_referent_correspondence(const GroundedCaption& caption,
                                                                      const std::string& rendered_text,
                                                                      std::size_t turn_index = 0) {
    std::vector<PhraseCorrespondence> ordered = caption.correspondences;
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const PhraseCorrespondence& a, const PhraseCorrespondence& b) { return a.begin < b.begin; });
    std::size_t refs = count_occurrences(rendered_text, "<ref>");
    if (refs != ordered.size())
        throw Error("derive_referent_correspondence: <ref> count " + std::to_string(refs) +
                    " does not match correspondence count " + std::to_string(ordered.size()));

    std::vector<ReferentAnnotation> out;
    std::size_t pos = 0;
    for (std::size_t k = 0; k < refs; ++k) {
        pos = rendered_text.find("<ref>", pos);
        ReferentAnnotation ann;
        ann.turn_index = turn_index;
        ann.token_position = k;
        ann.ids = ordered[k].ids;
        // locate the companion "<p> ... </p>" immediately before this <ref>
        std::string_view before = std::string_view(rendered_text).substr(0, pos);
        while (!before.empty() && before.back() == ' ') before.remove_suffix(1);
        if (before.size() >= 4 && before.substr(before.size() - 4) == "</p>") {
            std::size_t open = before.rfind("<p>");
            if (open != std::string_view::npos) {
                std::size_t begin = open + 3;
                while (begin < before.size() && rendered_text[begin] == ' ') ++begin;
                std::size_t end = before.size() - 4;
                while (end > begin && rendered_text[end - 1] == ' ') --end;
                ann.phrase_span = std::make_pair(begin, end);
            }
        }
        out.push_back(std::move(ann));
        pos += 5;
    }
    return out;
}

enum class ReferentGrouping { one_to_one, one_to_many };

// one_to_many keeps multi-id annotations intact; one_to_one expands every id
// into its own annotation, rewriting token positions per turn.
inline std::vector<ReferentAnnotation> group_referents(const std::vector<ReferentAnnotation>& annotations,
                                                       ReferentGrouping mode) {
    if (mode == ReferentGrouping::one_to_many) return annotations;
    std::vector<ReferentAnnotation> out;
    std::map<std::size_t, std::size_t> next_position;
    for (const auto& ann : annotations) {
        for (int id : ann.ids) {
            ReferentAnnotation single = ann;
            single.ids = {id};
            single.token_position = next_position[ann.turn_index]++;
            out.push_back(std::move(single));
        }
    }
    return out;
}

struct EmbodiedContext {
    const LlmClient* client = nullptr;
    PromptSpec dialogue_prompt;
    PromptSpec planning_prompt;
    CompletionMode mode = CompletionMode::fallback;
};

namespace detail {

inline std::string pick(const std::vector<std::string>& options, Rng& rng) {
    if (options.empty()) throw Error("empty template list");
    return options[rng.uniform_index(options.size())];
}

inline std::string category_of(const GroundedCaption& caption) {
    if (caption.provenance.contains("category")) return caption.provenance["category"].get<std::string>();
    return "object";
}

// Grounded segments for each correspondence, joined with ", ".
inline std::string segment_list(const GroundedCaption& caption) {
    std::string out;
    for (const auto& corr : caption.correspondences) {
        if (!out.empty()) out += ", ";
        out += grounded_segment(std::string_view(caption.text).substr(corr.begin, corr.end - corr.begin));
    }
    return out;
}

// Fallback dialogue built without an LLM: a grounded description plus one
// follow-up round.
inline std::vector<Turn> fallback_dialogue(const GroundedCaption& caption, const std::string& question) {
    return {{Role::user, question},
            {Role::assistant, wrap_grounded_text(caption)},
            {Role::user, "Is there anything else worth noting here?"},
            {Role::assistant, "That covers everything I can see from here."}};
}

inline std::vector<Turn> fallback_plan(const GroundedCaption& caption, const std::string& question) {
    std::string plan;
    std::size_t step = 1;
    for (const auto& corr : caption.correspondences) {
        plan += std::to_string(step) + ". Walk to " +
                grounded_segment(std::string_view(caption.text).substr(corr.begin, corr.end - corr.begin)) +
                " and inspect it. ";
        ++step;
    }
    plan += std::to_string(step) + ". Report back when done.";
    return {{Role::user, question}, {Role::assistant, plan}};
}

// Parses an LLM dialogue transcript whose turns carry grounded markup
// brackets, wrapping each grounded phrase as a referent segment.
inline void parse_dialogue_transcript(const std::string& transcript, const GroundedCaption& caption,
                                      InstructionSample& sample) {
    std::size_t line_start = 0;
    while (line_start < transcript.size()) {
        std::size_t line_end = transcript.find('\n', line_start);
        if (line_end == std::string::npos) line_end = transcript.size();
        std::string line = transcript.substr(line_start, line_end - line_start);
        line_start = line_end + 1;
        if (line.empty()) continue;
        Role role;
        std::string body;
        if (line.rfind("USER:", 0) == 0) {
            role = Role::user;
            body = line.substr(5);
        } else if (line.rfind("ASSISTANT:", 0) == 0) {
            role = Role::assistant;
            body = line.substr(10);
        } else {
            throw ParseError("dialogue line must start with USER: or ASSISTANT:", line_start);
        }
        if (!body.empty() && body.front() == ' ') body.erase(0, 1);
        ParsedMarkup parsed = parse_grounded_markup(body);
        GroundedCaption turn_caption;
        turn_caption.scene_id = caption.scene_id;
        turn_caption.text = parsed.text;
        turn_caption.correspondences = parsed.correspondences;
        std::string rendered = wrap_grounded_text(turn_caption);
        auto anns = derive_referent_correspondence(turn_caption, rendered, sample.turns.size());
        sample.turns.push_back({role, rendered});
        sample.referents.insert(sample.referents.end(), anns.begin(), anns.end());
    }
}

}  // namespace detail

// Deterministic conversion of one grounded caption into an
// instruction-following sample for the given task.
inline InstructionSample convert_task(const GroundedCaption& caption, TaskKind task,
                                      const TemplateLibrary& templates, bool grounding_requested,
                                      std::uint64_t seed, const EmbodiedContext* embodied = nullptr) {
    Rng rng(seed);
    InstructionSample sample;
    sample.scene_id = caption.scene_id;
    sample.task = task;

    auto outcome_templates = [&](const TaskTemplates& t) -> const std::vector<std::string>& {
        std::size_t n = caption.correspondences.size();
        if (n == 0) return t.answers_none;
        if (n == 1) return t.answers_single;
        return t.answers_multiple;
    };
    auto with_grounding = [&](std::string q) {
        if (grounding_requested) q += " (with grounding)";
        return q;
    };
    auto push_grounded_answer = [&](const std::string& text, const GroundedCaption& source) {
        auto anns = derive_referent_correspondence(source, text, sample.turns.size());
        sample.turns.push_back({Role::assistant, text});
        sample.referents.insert(sample.referents.end(), anns.begin(), anns.end());
    };

    switch (task) {
        case TaskKind::detection: {
            const TaskTemplates& t = templates.at(task);
            std::string category = detail::category_of(caption);
            std::string question = detail::substitute(detail::pick(t.questions, rng), {{"category", category}});
            sample.turns.push_back({Role::user, with_grounding(question)});
            std::map<std::string, std::string> bindings{
                {"category", category},
                {"grounded", detail::segment_list(caption)},
                {"count", std::to_string(caption.correspondences.size())}};
            std::string answer = detail::substitute(detail::pick(outcome_templates(t), rng), bindings);
            push_grounded_answer(answer, caption);
            break;
        }
        case TaskKind::single_grounding: {
            if (caption.correspondences.size() != 1)
                throw Error("single_grounding requires exactly one correspondence");
            const TaskTemplates& t = templates.at(task);
            std::string question =
                detail::substitute(detail::pick(t.questions, rng), {{"phrase", caption.text}});
            sample.turns.push_back({Role::user, with_grounding(question)});
            std::string answer = detail::substitute(detail::pick(t.answers_single, rng),
                                                    {{"grounded", detail::segment_list(caption)}});
            push_grounded_answer(answer, caption);
            break;
        }
        case TaskKind::multi_grounding: {
            const TaskTemplates& t = templates.at(task);
            std::string question =
                detail::substitute(detail::pick(t.questions, rng), {{"phrase", caption.text}});
            sample.turns.push_back({Role::user, with_grounding(question)});
            std::map<std::string, std::string> bindings{
                {"grounded", detail::segment_list(caption)},
                {"count", std::to_string(caption.correspondences.size())}};
            std::string answer = detail::substitute(detail::pick(outcome_templates(t), rng), bindings);
            push_grounded_answer(answer, caption);
            break;
        }
        case TaskKind::dense_captioning: {
            const TaskTemplates& t = templates.at(task);
            std::string question = detail::pick(t.questions, rng);  // contains the target <ref>
            sample.turns.push_back({Role::user, with_grounding(question)});
            std::vector<int> target_ids;
            if (caption.provenance.contains("target_id")) {
                target_ids = {caption.provenance["target_id"].get<int>()};
            } else if (!caption.correspondences.empty()) {
                target_ids = caption.correspondences.front().ids;
            }
            std::size_t user_refs = count_occurrences(question, "<ref>");
            if (user_refs > 0 && target_ids.empty())
                throw Error("dense_captioning requires a target object for the question referent");
            for (std::size_t k = 0; k < user_refs; ++k) {
                sample.referents.push_back({0, k, target_ids, std::nullopt});
            }
            std::string answer = detail::substitute(detail::pick(t.answers_single, rng),
                                                    {{"grounded", wrap_grounded_text(caption)}});
            push_grounded_answer(answer, caption);
            break;
        }
        case TaskKind::qa: {
            if (!caption.provenance.contains("question") || !caption.provenance.contains("answer"))
                throw Error("qa conversion requires question/answer provenance");
            const TaskTemplates& t = templates.at(task);
            std::string question = detail::substitute(
                detail::pick(t.questions, rng), {{"question", caption.provenance["question"].get<std::string>()}});
            sample.turns.push_back({Role::user, with_grounding(question)});
            std::string answer = caption.provenance["answer"].get<std::string>();
            if (!t.brevity_suffixes.empty() && word_count(answer) <= 3) {
                answer += detail::pick(t.brevity_suffixes, rng);
            }
            sample.turns.push_back({Role::assistant, answer});
            break;
        }
        case TaskKind::scene_captioning: {
            const TaskTemplates& t = templates.at(task);
            sample.turns.push_back({Role::user, with_grounding(detail::pick(t.questions, rng))});
            std::string answer = detail::substitute(detail::pick(t.answers_single, rng),
                                                    {{"grounded", wrap_grounded_text(caption)}});
            push_grounded_answer(answer, caption);
            break;
        }
        case TaskKind::embodied_dialogue:
        case TaskKind::embodied_planning: {
            const TaskTemplates& t = templates.at(task);
            std::string question = with_grounding(detail::pick(t.questions, rng));
            bool use_llm = embodied && embodied->client && embodied->mode != CompletionMode::fallback;
            if (use_llm) {
                const PromptSpec& prompt =
                    task == TaskKind::embodied_dialogue ? embodied->dialogue_prompt : embodied->planning_prompt;
                std::string markup = serialize_grounded_markup(caption.text, caption.correspondences);
                std::string transcript = embodied->client->complete(
                    prompt, {{"Grounded scene caption", markup}}, embodied->mode);
                detail::parse_dialogue_transcript(transcript, caption, sample);
            } else {
                std::vector<Turn> turns = task == TaskKind::embodied_dialogue
                                              ? detail::fallback_dialogue(caption, question)
                                              : detail::fallback_plan(caption, question);
                for (std::size_t i = 0; i < turns.size(); ++i) {
                    if (turns[i].role == Role::assistant && count_occurrences(turns[i].text, "<ref>") > 0) {
                        auto anns = derive_referent_correspondence(caption, turns[i].text, i);
                        sample.referents.insert(sample.referents.end(), anns.begin(), anns.end());
                    }
                    sample.turns.push_back(turns[i]);
                }
            }
            break;
        }
    }
    return sample;
}

inline std::string render_dialogue(const InstructionSample& sample) {
    std::string out;
    for (std::size_t i = 0; i < sample.turns.size(); ++i) {
        if (i) out += "\n";
        out += sample.turns[i].role == Role::user ? "USER: " : "ASSISTANT: ";
        out += sample.turns[i].text;
    }
    return out;
}

inline void validate_sample(const InstructionSample& sample) {
    for (std::size_t i = 0; i < sample.turns.size(); ++i) {
        Role expected = i % 2 == 0 ? Role::user : Role::assistant;
        if (sample.turns[i].role != expected)
            throw ValidationError("turn roles must alternate starting with user");
    }
    std::map<std::size_t, std::size_t> refs_per_turn, anns_per_turn;
    for (std::size_t i = 0; i < sample.turns.size(); ++i) {
        refs_per_turn[i] = count_occurrences(sample.turns[i].text, "<ref>");
        // every <p>...</p> pair must immediately precede a <ref>
        const std::string& text = sample.turns[i].text;
        std::size_t pos = 0;
        while ((pos = text.find("</p>", pos)) != std::string::npos) {
            std::size_t after = pos + 4;
            while (after < text.size() && text[after] == ' ') ++after;
            if (text.compare(after, 5, "<ref>") != 0)
                throw ValidationError("a </p> is not followed by <ref>");
            pos += 4;
        }
        if (count_occurrences(text, "<p>") != count_occurrences(text, "</p>"))
            throw ValidationError("unbalanced <p>/</p> tokens");
    }
    for (const auto& ann : sample.referents) {
        if (ann.turn_index >= sample.turns.size()) throw ValidationError("referent turn index out of range");
        if (ann.ids.empty()) throw ValidationError("referent with empty id list");
        anns_per_turn[ann.turn_index]++;
        if (ann.token_position >= refs_per_turn[ann.turn_index])
            throw ValidationError("referent token position out of range");
    }
    for (const auto& [turn, n] : refs_per_turn) {
        if (n != anns_per_turn[turn])
            throw ValidationError("turn " + std::to_string(turn) + ": <ref> count does not match annotations");
    }
}

inline nlohmann::json sample_to_json(const InstructionSample& sample) {
    nlohmann::json j;
    j["scene_id"] = sample.scene_id;
    j["task"] = task_kind_name(sample.task);
    auto& turns = j["turns"] = nlohmann::json::array();
    for (const auto& t : sample.turns) {
        turns.push_back({{"role", t.role == Role::user ? "user" : "assistant"}, {"text", t.text}});
    }
    auto& refs = j["referents"] = nlohmann::json::array();
    for (const auto& r : sample.referents) {
        nlohmann::json rj{{"turn", r.turn_index}, {"pos", r.token_position}, {"ids", r.ids}};
        if (r.phrase_span) {
            rj["phrase_span"] = {r.phrase_span->first, r.phrase_span->second};
        } else {
            rj["phrase_span"] = nullptr;
        }
        refs.push_back(std::move(rj));
    }
    return j;
}

inline InstructionSample sample_from_json(const nlohmann::json& j) {
    InstructionSample s;
    s.scene_id = j.at("scene_id").get<std::string>();
    s.task = task_kind_from_name(j.at("task").get<std::string>());
    for (const auto& tj : j.at("turns")) {
        Turn t;
        std::string role = tj.at("role").get<std::string>();
        if (role == "user") {
            t.role = Role::user;
        } else if (role == "assistant") {
            t.role = Role::assistant;
        } else {
            throw Error("unknown role: " + role);
        }
        t.text = tj.at("text").get<std::string>();
        s.turns.push_back(std::move(t));
    }
    for (const auto& rj : j.at("referents")) {
        ReferentAnnotation r;
        r.turn_index = rj.at("turn").get<std::size_t>();
        r.token_position = rj.at("pos").get<std::size_t>();
        r.ids = rj.at("ids").get<std::vector<int>>();
        if (!rj.at("phrase_span").is_null()) {
            r.phrase_span = std::make_pair(rj["phrase_span"].at(0).get<std::size_t>(),
                                           rj["phrase_span"].at(1).get<std::size_t>());
        }
        s.referents.push_back(std::move(r));
    }
    return s;
}

}  // namespace g3d
