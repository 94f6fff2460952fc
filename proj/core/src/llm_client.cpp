#include "formu/llm_client.hpp"

#include "formu/errors.hpp"
#include "formu/size_distribution.hpp"
#include "formu/text_format.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <thread>

namespace formu {

using nlohmann::json;

void LLMConfig::validate() const {
    if (!(temperature >= 0.0)) throw ConfigError("llm.temperature must be >= 0");
    if (max_retries < 0) throw ConfigError("llm.max_retries must be >= 0");
    if (max_inflight < 1) throw ConfigError("llm.max_inflight must be >= 1");
    if (max_tokens < 1) throw ConfigError("llm.max_tokens must be >= 1");
    if (!(timeout_s > 0.0)) throw ConfigError("llm.timeout must be > 0");
    if (base_url.empty()) throw ConfigError("llm.base_url must not be empty");
}

json LLMConfig::to_json() const {
    return {{"base_url", base_url},       {"model", model},
            {"temperature", temperature}, {"max_tokens", max_tokens},
            {"timeout", timeout_s},       {"max_retries", max_retries},
            {"max_inflight", max_inflight}, {"api_key_env", api_key_env},
            {"backoff_base", backoff_base_s}, {"backoff_factor", backoff_factor}};
}

LLMConfig LLMConfig::from_json(const json& j) {
    LLMConfig c;
    c.base_url = j.value("base_url", c.base_url);
    c.model = j.value("model", c.model);
    c.temperature = j.value("temperature", c.temperature);
    c.max_tokens = j.value("max_tokens", c.max_tokens);
    c.timeout_s = j.value("timeout", c.timeout_s);
    c.max_retries = j.value("max_retries", c.max_retries);
    c.max_inflight = j.value("max_inflight", c.max_inflight);
    c.api_key_env = j.value("api_key_env", c.api_key_env);
    c.backoff_base_s = j.value("backoff_base", c.backoff_base_s);
    c.backoff_factor = j.value("backoff_factor", c.backoff_factor);
    c.validate();
    return c;
}

std::string_view to_string(BackendKind kind) {
    switch (kind) {
    case BackendKind::live: return "live";
    case BackendKind::mock: return "mock";
    case BackendKind::replay: return "replay";
    }
    return "?";
}

BackendKind backend_from_string(std::string_view text) {
    if (text == "live") return BackendKind::live;
    if (text == "mock") return BackendKind::mock;
    if (text == "replay") return BackendKind::replay;
    throw ConfigError("unknown backend '" + std::string(text) + "' (expected live, mock or replay)");
}

json Transcript::to_json() const {
    json j{{"prompt_hash", prompt_hash}, {"strategy", strategy}, {"prompt", prompt},
           {"response", response},       {"model", model},       {"backend", backend},
           {"elapsed_s", elapsed_s},     {"attempts", attempts}, {"error", error}};
    if (usage) {
        j["usage"] = {{"prompt_tokens", usage->prompt_tokens},
                      {"completion_tokens", usage->completion_tokens},
                      {"total_tokens", usage->total_tokens}};
    } else {
        j["usage"] = nullptr;
    }
    return j;
}

Transcript Transcript::from_json(const json& j) {
    Transcript t;
    t.prompt = j.at("prompt").get<std::string>();
    t.response = j.value("response", "");
    t.prompt_hash = j.value("prompt_hash", formu::prompt_hash(t.prompt));
    t.strategy = j.value("strategy", "");
    t.model = j.value("model", "");
    t.backend = j.value("backend", "");
    t.elapsed_s = j.value("elapsed_s", 0.0);
    t.attempts = j.value("attempts", 0);
    t.error = j.value("error", "");
    if (j.contains("usage") && j["usage"].is_object()) {
        const auto& u = j["usage"];
        t.usage = TokenUsage{u.value("prompt_tokens", 0L), u.value("completion_tokens", 0L),
                             u.value("total_tokens", 0L)};
    }
    return t;
}

std::string prompt_hash(std::string_view rendered_prompt) { return fnv1a_hex(rendered_prompt); }

TranscriptRecorder::TranscriptRecorder(std::filesystem::path path) : path_(std::move(path)) {}

void TranscriptRecorder::record(const Transcript& transcript) {
    std::lock_guard lock(mutex_);
    entries_.push_back(transcript);
    if (path_) {
        if (path_->has_parent_path()) std::filesystem::create_directories(path_->parent_path());
        std::ofstream out(*path_, std::ios::app);
        if (!out) throw ConfigError("cannot write transcripts to " + path_->string());
        out << transcript.to_json().dump() << '\n';
    }
}

std::vector<Transcript> TranscriptRecorder::entries() const {
    std::lock_guard lock(mutex_);
    return entries_;
}

TranscriptLibrary TranscriptLibrary::load(const std::filesystem::path& jsonl) {
    std::ifstream in(jsonl);
    if (!in) throw ConfigError("cannot open transcripts " + jsonl.string());
    TranscriptLibrary lib;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            lib.add(Transcript::from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw ParseError(jsonl.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return lib;
}

void TranscriptLibrary::add(const Transcript& transcript) {
    if (!transcript.ok()) return;
    const std::string key = prompt_hash(transcript.prompt);
    for (auto& [k, t] : entries_) {
        if (k == key && t.prompt == transcript.prompt) {
            t = transcript;
            return;
        }
    }
    entries_.emplace_back(key, transcript);
}

const Transcript* TranscriptLibrary::lookup(std::string_view rendered_prompt) const {
    const std::string key = prompt_hash(rendered_prompt);
    for (const auto& [k, t] : entries_) {
        if (k == key && t.prompt == rendered_prompt) return &t;
    }
    return nullptr;
}

std::string mock_backend(std::string_view rendered_prompt, const MockSettings& settings) {
    const PartialInput partial = input_from_prompt(rendered_prompt);
    FormulationInput input;
    try {
        input = partial.require({feature::d50, feature::solubility, feature::diffusivity,
                                 feature::true_density});
    } catch (const ValidationError& e) {
        throw MockParseError(std::string("mock backend: ") + e.what());
    }
    const auto psd = psd_from_lognormal(input.d50_um, settings.geo_sigma, settings.n_bins);
    const auto profile = simulate_dissolution(input.drug(), input.morphology(), psd,
                                              settings.conditions, settings.grid_hr, settings.solver);
    return profile_to_table_json(profile);
}

LLMClient::LLMClient(LLMConfig config, BackendKind backend, ClientHooks hooks)
    : config_(std::move(config)),
      backend_(backend),
      hooks_(std::move(hooks)),
      slots_(std::max(1, config_.max_inflight)),
      jitter_rng_(hooks_.jitter_seed) {
    config_.validate();
    if (!hooks_.recorder) hooks_.recorder = std::make_shared<TranscriptRecorder>();
    if (backend_ == BackendKind::live && !hooks_.transport) hooks_.transport = make_http_transport();
    if (!hooks_.sleep) {
        hooks_.sleep = [](double s) { std::this_thread::sleep_for(std::chrono::duration<double>(s)); };
    }
    if (!hooks_.getenv) {
        hooks_.getenv = [](const std::string& name) -> std::optional<std::string> {
            if (const char* v = std::getenv(name.c_str()); v && *v) return std::string(v);
            return std::nullopt;
        };
    }
}

void LLMClient::check_ready() const {
    if (backend_ == BackendKind::live && !hooks_.getenv(config_.api_key_env)) {
        throw ConfigError("live backend needs an API key in $" + config_.api_key_env);
    }
    if (backend_ == BackendKind::replay && !hooks_.replay) {
        throw ConfigError("replay backend needs a transcript library");
    }
}

json LLMClient::request_body(std::string_view prompt) const {
    return {{"model", config_.model},
            {"messages", json::array({{{"role", "user"}, {"content", std::string(prompt)}}})},
            {"temperature", config_.temperature},
            {"max_tokens", config_.max_tokens}};
}

double LLMClient::backoff_delay(int retry) {
    double jitter = 0.0;
    {
        std::lock_guard lock(jitter_mutex_);
        jitter = static_cast<double>(jitter_rng_() >> 11) * 0x1.0p-53;
    }
    return config_.backoff_base_s * std::pow(config_.backoff_factor, retry - 1) * (1.0 + 0.25 * jitter);
}

std::string LLMClient::complete_live(const std::string& prompt, Transcript& transcript) {
    auto key = hooks_.getenv(config_.api_key_env);
    if (!key) throw ConfigError("live backend needs an API key in $" + config_.api_key_env);
    HttpRequest req;
    req.url = config_.base_url;
    req.headers = {{"Authorization", "Bearer " + *key}, {"Content-Type", "application/json"}};
    req.body = request_body(prompt).dump();
    req.timeout_s = config_.timeout_s;

    std::string last_error;
    for (int attempt = 1; attempt <= config_.max_retries + 1; ++attempt) {
        transcript.attempts = attempt;
        if (attempt > 1) hooks_.sleep(backoff_delay(attempt - 1));
        HttpResponse res;
        try {
            res = hooks_.transport->post(req);
        } catch (const TransportError& e) {
            last_error = e.what();
            continue;
        }
        if (res.status == 429 || res.status >= 500) {
            last_error = "HTTP " + std::to_string(res.status);
            continue;
        }
        if (res.status < 200 || res.status >= 300) {
            throw RequestError(res.status, "HTTP " + std::to_string(res.status) + ": " + res.body.substr(0, 500));
        }
        json body = json::parse(res.body, nullptr, false);
        if (body.is_discarded() || !body.contains("choices") || !body["choices"].is_array() ||
            body["choices"].empty()) {
            throw TransportError("endpoint returned no choices");
        }
        const auto& message = body["choices"][0].value("message", json::object());
        if (!message.contains("content") || !message["content"].is_string()) {
            throw TransportError("endpoint returned a choice without text content");
        }
        if (body.contains("usage") && body["usage"].is_object()) {
            const auto& u = body["usage"];
            transcript.usage = TokenUsage{u.value("prompt_tokens", 0L), u.value("completion_tokens", 0L),
                                          u.value("total_tokens", 0L)};
        }
        return message["content"].get<std::string>();
    }
    throw TransportError("giving up after " + std::to_string(config_.max_retries + 1) +
                         " attempts: " + last_error);
}

CompletionResult LLMClient::complete(const PromptBundle& prompt) {
    slots_.acquire();
    struct Release {
        std::counting_semaphore<>& s;
        ~Release() { s.release(); }
    } release{slots_};

    Transcript t;
    t.prompt = prompt.rendered;
    t.prompt_hash = prompt_hash(prompt.rendered);
    t.strategy = std::string(to_string(prompt.strategy));
    t.model = backend_ == BackendKind::mock ? "mock-physics" : config_.model;
    t.backend = std::string(to_string(backend_));
    const auto started = std::chrono::steady_clock::now();
    auto finish = [&] {
        t.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        hooks_.recorder->record(t);
    };

    try {
        switch (backend_) {
        case BackendKind::mock:
            t.attempts = 1;
            t.response = mock_backend(prompt.rendered, hooks_.mock);
            break;
        case BackendKind::replay: {
            t.attempts = 1;
            if (!hooks_.replay) throw ConfigError("replay backend needs a transcript library");
            const Transcript* hit = hooks_.replay->lookup(prompt.rendered);
            if (!hit) throw ConfigError("no recorded transcript for prompt " + t.prompt_hash);
            t.response = hit->response;
            t.model = hit->model;
            t.usage = hit->usage;
            break;
        }
        case BackendKind::live:
            t.response = complete_live(prompt.rendered, t);
            break;
        }
    } catch (const std::exception& e) {
        t.error = e.what();
        finish();
        throw;
    }
    finish();
    return {t.response, t};
}

} // namespace formu
