#pragma once

#include "formu/dissolution.hpp"
#include "formu/prompt.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <semaphore>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace formu {

struct LLMConfig {
    std::string base_url = "http://localhost:11434/v1/chat/completions";
    std::string model = "deepseek-r1:671b";
    double temperature = 0.0;
    int max_tokens = 4096;
    double timeout_s = 300.0;
    int max_retries = 3;
    int max_inflight = 4;
    std::string api_key_env = "FORMU_API_KEY";
    double backoff_base_s = 1.0;
    double backoff_factor = 2.0;

    void validate() const;
    nlohmann::json to_json() const;
    /// Missing keys keep their defaults.
    static LLMConfig from_json(const nlohmann::json& j);
};

enum class BackendKind { live, mock, replay };

std::string_view to_string(BackendKind kind);
BackendKind backend_from_string(std::string_view text);

struct HttpRequest {
    std::string url;
    std::vector<std::pair<std::string, std::string>> headers;
    std::string body;
    double timeout_s = 60.0;
};

struct HttpResponse {
    int status = 0;
    std::string body;
};

/// Blocking HTTP POST. Connection-level failures throw TransportError;
/// HTTP error statuses are returned, not thrown.
class Transport {
public:
    virtual ~Transport() = default;
    virtual HttpResponse post(const HttpRequest& request) = 0;
};

/// cpp-httplib backed transport (https when built with OpenSSL).
std::shared_ptr<Transport> make_http_transport();

struct TokenUsage {
    long prompt_tokens = 0;
    long completion_tokens = 0;
    long total_tokens = 0;
};

struct Transcript {
    std::string prompt_hash;
    std::string strategy;
    std::string prompt;
    std::string response;
    std::string model;
    std::string backend;
    double elapsed_s = 0.0;
    int attempts = 0;
    std::optional<TokenUsage> usage;
    std::string error;

    bool ok() const { return error.empty(); }
    nlohmann::json to_json() const;
    static Transcript from_json(const nlohmann::json& j);
};

/// Key used by the replay backend.
std::string prompt_hash(std::string_view rendered_prompt);

/// Single-owner JSONL transcript sink; safe to share between threads.
class TranscriptRecorder {
public:
    TranscriptRecorder() = default;
    explicit TranscriptRecorder(std::filesystem::path path);

    void record(const Transcript& transcript);
    std::vector<Transcript> entries() const;

private:
    mutable std::mutex mutex_;
    std::optional<std::filesystem::path> path_;
    std::vector<Transcript> entries_;
};

/// Successful transcripts indexed by prompt hash; the latest entry wins.
class TranscriptLibrary {
public:
    static TranscriptLibrary load(const std::filesystem::path& jsonl);

    void add(const Transcript& transcript);
    const Transcript* lookup(std::string_view rendered_prompt) const;
    std::size_t size() const { return entries_.size(); }

private:
    std::vector<std::pair<std::string, Transcript>> entries_;
};

struct MockSettings {
    DissolutionConditions conditions;
    double geo_sigma = 1.5;
    std::size_t n_bins = 50;
    std::vector<double> grid_hr = default_output_grid();
    SolverOptions solver;
};

/// Physics-oracle stand-in for an LLM: simulates the prompt's Input Format
/// section with a log-normal PSD around its D50 and answers with the table
/// JSON. Throws MockParseError when required inputs are missing.
std::string mock_backend(std::string_view rendered_prompt, const MockSettings& settings = {});

struct ClientHooks {
    std::shared_ptr<Transport> transport;                 ///< live; defaults to HTTP
    std::shared_ptr<TranscriptRecorder> recorder;         ///< defaults to in-memory
    std::shared_ptr<const TranscriptLibrary> replay;      ///< required for replay
    MockSettings mock;
    std::function<void(double seconds)> sleep;            ///< defaults to this_thread::sleep_for
    std::function<std::optional<std::string>(const std::string&)> getenv;  ///< defaults to std::getenv
    std::uint64_t jitter_seed = 0x5eed;
};

struct CompletionResult {
    std::string text;
    Transcript transcript;
};

/// Chat-completions client with live, mock and replay backends.
///
/// At most `max_inflight` completions run at once. Every call, including
/// failures, leaves a transcript in the recorder. Live calls retry transport
/// errors, 5xx and 429 with exponential backoff plus jitter; other 4xx
/// responses fail immediately with RequestError.
class LLMClient {
public:
    LLMClient(LLMConfig config, BackendKind backend, ClientHooks hooks = {});

    /// Throws ConfigError when the backend cannot run (missing API key,
    /// missing replay library).
    void check_ready() const;

    CompletionResult complete(const PromptBundle& prompt);

    const LLMConfig& config() const noexcept { return config_; }
    BackendKind backend() const noexcept { return backend_; }
    TranscriptRecorder& recorder() noexcept { return *hooks_.recorder; }

    /// The JSON body sent to the endpoint.
    nlohmann::json request_body(std::string_view prompt) const;

private:
    std::string complete_live(const std::string& prompt, Transcript& transcript);
    double backoff_delay(int retry);

    LLMConfig config_;
    BackendKind backend_;
    ClientHooks hooks_;
    std::counting_semaphore<> slots_;
    std::mutex jitter_mutex_;
    std::mt19937_64 jitter_rng_;
};

} // namespace formu
