// llm_client.hpp - pluggable chat-completion client with prompt templates,
// an on-disk replay store, and a deterministic fallback path so the whole
// pipeline runs offline.
#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <memory>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "g3d/common.hpp"
#include "json.hpp"

namespace g3d {

struct PromptSpec {
    std::string name;
    std::string system;
    std::string user_template;
};

inline PromptSpec prompt_spec_from_json(const nlohmann::json& j) {
    return {j.at("name").get<std::string>(), j.at("system").get<std::string>(),
            j.at("user_template").get<std::string>()};
}

inline PromptSpec load_prompt_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open prompt file: " + path);
    return prompt_spec_from_json(nlohmann::json::parse(in));
}

// Exact textual substitution of {placeholder} tokens; every placeholder in
// the template must be bound.
inline std::string render_prompt(const PromptSpec& spec, const std::map<std::string, std::string>& bindings) {
    const std::string& tpl = spec.user_template;
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
        if (it == bindings.end()) throw Error("render_prompt: unbound placeholder '" + key + "'");
        out.append(it->second);
        i = close + 1;
    }
    return out;
}

struct Exchange {
    std::string hash;
    std::string prompt;
    std::string response;
    std::string timestamp;
};

class ReplayStore {
public:
    ReplayStore() = default;
    explicit ReplayStore(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }

    static std::string request_hash(const PromptSpec& spec, const std::string& resolved_prompt) {
        return to_hex(fnv1a64(spec.name + "\x1f" + spec.system + "\x1f" + resolved_prompt));
    }

    std::optional<std::string> lookup(const std::string& hash) const {
        auto path = dir_ / (hash + ".json");
        std::ifstream in(path);
        if (!in) return std::nullopt;
        auto j = nlohmann::json::parse(in);
        return j.at("response").get<std::string>();
    }

    void record(const Exchange& e) {
        std::lock_guard<std::mutex> lock(write_mutex_);
        auto path = dir_ / (e.hash + ".json");
        if (std::filesystem::exists(path)) return;  // append-only, one record per hash
        nlohmann::json j{{"hash", e.hash}, {"prompt", e.prompt}, {"response", e.response}, {"timestamp", e.timestamp}};
        std::ofstream out(path);
        out << j.dump(2) << "\n";
    }

    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
    mutable std::mutex write_mutex_;
};

enum class CompletionMode { live, replay, fallback };

struct LlmConfig {
    std::string endpoint_host = "https://api.openai.com";
    std::string endpoint_path = "/v1/chat/completions";
    std::string model = "gpt-4";
    std::string api_key_env = "G3D_API_KEY";
    int max_retries = 3;
    int timeout_seconds = 60;
};

using FallbackComposer = std::function<std::string(const std::map<std::string, std::string>&)>;

class LlmClient {
public:
    LlmClient(LlmConfig config, std::shared_ptr<ReplayStore> store)
        : config_(std::move(config)), store_(std::move(store)) {}

    const LlmConfig& config() const { return config_; }
    ReplayStore& store() { return *store_; }

    std::string complete(const PromptSpec& spec, const std::map<std::string, std::string>& bindings,
                         CompletionMode mode, const FallbackComposer& fallback = {}) const {
        std::string prompt = render_prompt(spec, bindings);
        std::string hash = ReplayStore::request_hash(spec, prompt);
        switch (mode) {
            case CompletionMode::replay: {
                if (auto hit = store_->lookup(hash)) return *hit;
                throw Error("replay miss for request hash " + hash + " (prompt '" + spec.name + "')");
            }
            case CompletionMode::fallback: {
                if (!fallback) throw Error("no fallback composer for prompt '" + spec.name + "'");
                return fallback(bindings);
            }
            case CompletionMode::live: {
                if (auto hit = store_->lookup(hash)) return *hit;
                std::string response = live_request(spec, prompt);
                Exchange e{hash, prompt, response, iso_timestamp()};
                store_->record(e);
                return response;
            }
        }
        throw Error("complete: unknown mode");
    }

private:
    static std::string iso_timestamp() {
        auto now = std::chrono::system_clock::now();
        std::time_t t = std::chrono::system_clock::to_time_t(now);
        char buf[32];
        std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
        return buf;
    }

    std::string live_request(const PromptSpec& spec, const std::string& prompt) const;

    LlmConfig config_;
    std::shared_ptr<ReplayStore> store_;
};

}  // namespace g3d

// The HTTP transport lives behind G3D_ENABLE_HTTP so that purely offline
// consumers do not pull in the socket layer.
#if defined(G3D_ENABLE_HTTP)
#include "httplib.h"

namespace g3d {

inline std::string LlmClient::live_request(const PromptSpec& spec, const std::string& prompt) const {
    const char* key = std::getenv(config_.api_key_env.c_str());
    nlohmann::json body{{"model", config_.model},
                        {"messages", nlohmann::json::array({{{"role", "system"}, {"content", spec.system}},
                                                            {{"role", "user"}, {"content", prompt}}})}};
    std::string last_error;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        if (attempt > 0)
            std::this_thread::sleep_for(std::chrono::milliseconds(100 * (1 << (attempt - 1))));
        httplib::Client client(config_.endpoint_host);
        client.set_read_timeout(config_.timeout_seconds, 0);
        httplib::Headers headers;
        if (key) headers.emplace("Authorization", std::string("Bearer ") + key);
        auto res = client.Post(config_.endpoint_path, headers, body.dump(), "application/json");
        if (!res) {
            last_error = "transport error";
            continue;
        }
        if (res->status != 200) {
            last_error = "http status " + std::to_string(res->status);
            continue;
        }
        auto j = nlohmann::json::parse(res->body);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    }
    throw Error("live completion failed after retries: " + last_error);
}

}  // namespace g3d
#else
namespace g3d {

inline std::string LlmClient::live_request(const PromptSpec&, const std::string&) const {
    throw Error("live completion unavailable: built without HTTP support");
}

}  // namespace g3d
#endif
