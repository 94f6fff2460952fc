#include "formu/errors.hpp"
#include "formu/llm_client.hpp"
#include "formu/prompt.hpp"

#include "support.hpp"

#include <doctest.h>
#include <httplib.h>

#include <atomic>
#include <deque>
#include <filesystem>
#include <mutex>
#include <thread>
#include <variant>

#include <unistd.h>

using namespace formu;
using formu::testing::fixture;
using formu::testing::slurp;
using nlohmann::json;

namespace {

FormulationInput reference_input() {
    return partial_input_from_json(json::parse(slurp(fixture("data/reference_input.json"))))
        .require({feature::d50, feature::solubility, feature::diffusivity, feature::true_density, feature::ssa,
                  feature::vol_eq, feature::aspect_ratio, feature::roundness});
}

std::string chat_body(const std::string& content) {
    return json{{"choices", json::array({{{"message", {{"role", "assistant"}, {"content", content}}}}})},
                {"usage", {{"prompt_tokens", 10}, {"completion_tokens", 20}, {"total_tokens", 30}}}}
        .dump();
}

// Scripted transport: each call pops the next outcome; the last one repeats.
class StubTransport final : public Transport {
public:
    using Outcome = std::variant<HttpResponse, std::string>;   // string = transport failure

    explicit StubTransport(std::vector<Outcome> script, double hold_s = 0.0)
        : script_(std::move(script)), hold_s_(hold_s) {}

    HttpResponse post(const HttpRequest& request) override {
        const int now = ++inflight_;
        {
            std::lock_guard lock(mutex_);
            max_inflight_ = std::max(max_inflight_, now);
            requests_.push_back(request);
        }
        if (hold_s_ > 0) std::this_thread::sleep_for(std::chrono::duration<double>(hold_s_));
        Outcome outcome;
        {
            std::lock_guard lock(mutex_);
            outcome = script_[std::min(next_, script_.size() - 1)];
            ++next_;
        }
        --inflight_;
        if (auto* failure = std::get_if<std::string>(&outcome)) throw TransportError(*failure);
        return std::get<HttpResponse>(outcome);
    }

    std::size_t calls() const {
        std::lock_guard lock(mutex_);
        return requests_.size();
    }
    int max_inflight() const {
        std::lock_guard lock(mutex_);
        return max_inflight_;
    }
    HttpRequest request(std::size_t i) const {
        std::lock_guard lock(mutex_);
        return requests_.at(i);
    }

private:
    std::vector<Outcome> script_;
    double hold_s_;
    mutable std::mutex mutex_;
    std::size_t next_ = 0;
    std::vector<HttpRequest> requests_;
    std::atomic<int> inflight_{0};
    int max_inflight_ = 0;
};

struct Harness {
    std::shared_ptr<StubTransport> transport;
    std::shared_ptr<std::vector<double>> sleeps = std::make_shared<std::vector<double>>();
    ClientHooks hooks;

    explicit Harness(std::vector<StubTransport::Outcome> script, double hold_s = 0.0)
        : transport(std::make_shared<StubTransport>(std::move(script), hold_s)) {
        hooks.transport = transport;
        hooks.sleep = [s = sleeps](double secs) { s->push_back(secs); };
        hooks.getenv = [](const std::string& name) -> std::optional<std::string> {
            if (name == "FORMU_API_KEY") return "sk-test";
            return std::nullopt;
        };
    }
};

PromptBundle zs_prompt() { return build_prompt(PromptStrategy::zs, reference_input()); }

std::filesystem::path temp_path(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("formu_llm_" + name + "_" + std::to_string(::getpid()) + ".jsonl");
    std::filesystem::remove(p);
    return p;
}

} // namespace

TEST_CASE("config defaults and JSON round-trip") {
    LLMConfig c;
    CHECK(c.temperature == 0.0);
    CHECK(c.api_key_env == "FORMU_API_KEY");
    CHECK(c.backoff_base_s == 1.0);
    CHECK(c.backoff_factor == 2.0);
    CHECK(c.model == "deepseek-r1:671b");
    c.model = "other";
    c.max_inflight = 7;
    const auto back = LLMConfig::from_json(c.to_json());
    CHECK(back.model == "other");
    CHECK(back.max_inflight == 7);
    CHECK(LLMConfig::from_json(json::object()).max_tokens == LLMConfig{}.max_tokens);
    LLMConfig bad;
    bad.max_inflight = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK(backend_from_string("replay") == BackendKind::replay);
    CHECK_THROWS_AS(backend_from_string("remote"), ConfigError);
}

TEST_CASE("request body follows the chat-completions shape") {
    LLMClient client({}, BackendKind::mock);
    const auto body = client.request_body("hello");
    CHECK(body["model"] == "deepseek-r1:671b");
    CHECK(body["messages"].size() == 1);
    CHECK(body["messages"][0]["role"] == "user");
    CHECK(body["messages"][0]["content"] == "hello");
    CHECK(body["temperature"] == 0.0);
    CHECK(body["max_tokens"] == 4096);
}

TEST_CASE("mock backend answers with the simulator profile") {
    const auto in = reference_input();
    const auto expected = simulate_dissolution(in.drug(), in.morphology(), psd_from_lognormal(in.d50_um, 1.5, 50),
                                               DissolutionConditions{}, default_output_grid());
    const auto prompt = zs_prompt();
    const auto response = mock_backend(prompt.rendered);
    CHECK(response == profile_to_table_json(expected));
    CHECK(mock_backend(prompt.rendered) == response);
    CHECK(parse_profile_response(response).profile == expected);
    CHECK(parse_profile_response(response).profile.size() == 10);

    auto without_d50 = prompt.rendered;
    const auto pos = without_d50.find("\"Mean Particle Size, D50\"");
    REQUIRE(pos != std::string::npos);
    without_d50.erase(pos, without_d50.find('\n', pos) - pos + 1);
    CHECK_THROWS_AS(mock_backend(without_d50), MockParseError);

    LLMClient client({}, BackendKind::mock);
    const auto r = client.complete(prompt);
    CHECK(r.text == response);
    CHECK(r.transcript.backend == "mock");
    CHECK(r.transcript.strategy == "ZS");
    CHECK(r.transcript.prompt_hash == prompt_hash(prompt.rendered));
}

TEST_CASE("retries transport failures with exponential backoff") {
    Harness h({std::string("connection reset"), std::string("connection reset"), HttpResponse{200, chat_body("ok")}});
    LLMConfig cfg;
    cfg.max_retries = 3;
    LLMClient client(cfg, BackendKind::live, h.hooks);
    const auto r = client.complete(zs_prompt());
    CHECK(r.text == "ok");
    CHECK(r.transcript.attempts == 3);
    CHECK(h.transport->calls() == 3);
    REQUIRE(h.sleeps->size() == 2);
    CHECK((*h.sleeps)[0] >= 1.0);
    CHECK((*h.sleeps)[0] <= 1.25);
    CHECK((*h.sleeps)[1] >= 2.0);
    CHECK((*h.sleeps)[1] <= 2.5);
    REQUIRE(r.transcript.usage);
    CHECK(r.transcript.usage->total_tokens == 30);

    const auto req = h.transport->request(0);
    CHECK(req.url == cfg.base_url);
    CHECK(std::find(req.headers.begin(), req.headers.end(),
                    std::pair<std::string, std::string>{"Authorization", "Bearer sk-test"}) != req.headers.end());
    CHECK(json::parse(req.body)["messages"][0]["content"] == zs_prompt().rendered);
}

TEST_CASE("5xx and 429 are retried, other 4xx are not") {
    {
        Harness h({HttpResponse{503, "busy"}, HttpResponse{429, "slow down"}, HttpResponse{200, chat_body("fine")}});
        LLMClient client({}, BackendKind::live, h.hooks);
        CHECK(client.complete(zs_prompt()).text == "fine");
        CHECK(h.transport->calls() == 3);
    }
    {
        Harness h({HttpResponse{401, "bad key"}});
        LLMClient client({}, BackendKind::live, h.hooks);
        CHECK_THROWS_AS(client.complete(zs_prompt()), RequestError);
        CHECK(h.transport->calls() == 1);
        CHECK(h.sleeps->empty());
    }
    {
        Harness h({HttpResponse{500, "down"}});
        LLMConfig cfg;
        cfg.max_retries = 2;
        LLMClient client(cfg, BackendKind::live, h.hooks);
        CHECK_THROWS_AS(client.complete(zs_prompt()), TransportError);
        CHECK(h.transport->calls() == 3);
        const auto t = client.recorder().entries();
        REQUIRE(t.size() == 1);
        CHECK_FALSE(t[0].ok());
        CHECK(t[0].attempts == 3);
    }
}

TEST_CASE("live backend requires the API key") {
    Harness h({HttpResponse{200, chat_body("x")}});
    h.hooks.getenv = [](const std::string&) -> std::optional<std::string> { return std::nullopt; };
    LLMClient client({}, BackendKind::live, h.hooks);
    CHECK_THROWS_AS(client.check_ready(), ConfigError);
    CHECK_THROWS_AS(client.complete(zs_prompt()), ConfigError);
    CHECK(h.transport->calls() == 0);
    CHECK(client.recorder().entries().size() == 1);
}

TEST_CASE("replay returns the recorded response byte for byte") {
    const auto path = temp_path("replay");
    const auto prompt = zs_prompt();
    std::string original;
    {
        Harness h({HttpResponse{200, chat_body("```json\n{\"columns\": [], \"data\": []}\n```")}});
        h.hooks.recorder = std::make_shared<TranscriptRecorder>(path);
        LLMClient live({}, BackendKind::live, h.hooks);
        original = live.complete(prompt).text;
    }
    auto library = std::make_shared<TranscriptLibrary>(TranscriptLibrary::load(path));
    CHECK(library->size() == 1);
    auto spy = std::make_shared<StubTransport>(std::vector<StubTransport::Outcome>{std::string("must not be called")});
    ClientHooks hooks;
    hooks.replay = library;
    hooks.transport = spy;
    LLMClient replay({}, BackendKind::replay, hooks);
    CHECK(replay.complete(prompt).text == original);
    CHECK(replay.complete(prompt).text == original);
    CHECK_THROWS_AS(replay.complete(build_prompt(PromptStrategy::zs_cot, reference_input())), ConfigError);
    CHECK(spy->calls() == 0);

    LLMClient no_library({}, BackendKind::replay);
    CHECK_THROWS_AS(no_library.check_ready(), ConfigError);
    std::filesystem::remove(path);
}

TEST_CASE("transcripts round-trip through JSON and JSONL") {
    Transcript t;
    t.prompt = "p";
    t.prompt_hash = prompt_hash("p");
    t.response = "r";
    t.strategy = "FS";
    t.model = "m";
    t.backend = "live";
    t.attempts = 2;
    t.usage = TokenUsage{1, 2, 3};
    const auto back = Transcript::from_json(t.to_json());
    CHECK(back.to_json() == t.to_json());
    CHECK(prompt_hash("p") == prompt_hash("p"));
    CHECK(prompt_hash("p") != prompt_hash("q"));

    const auto path = temp_path("recorder");
    {
        TranscriptRecorder rec(path);
        rec.record(t);
        t.error = "boom";
        rec.record(t);
    }
    const auto text = slurp(path.string());
    CHECK(std::count(text.begin(), text.end(), '\n') == 2);
    // Failed transcripts are kept on disk but never replayed.
    CHECK(TranscriptLibrary::load(path).size() == 1);
    std::filesystem::remove(path);
}

TEST_CASE("mock and replay never touch the network") {
    auto spy = std::make_shared<StubTransport>(std::vector<StubTransport::Outcome>{std::string("network used")});
    ClientHooks hooks;
    hooks.transport = spy;
    LLMClient mock({}, BackendKind::mock, hooks);
    for (auto s : {PromptStrategy::zs, PromptStrategy::zs_cot}) mock.complete(build_prompt(s, reference_input()));
    CHECK(spy->calls() == 0);
}

TEST_CASE("at most max_inflight requests run at once; every call is transcribed") {
    Harness h({HttpResponse{200, chat_body("ok")}}, 0.02);
    LLMConfig cfg;
    cfg.max_inflight = 3;
    LLMClient client(cfg, BackendKind::live, h.hooks);
    const auto prompt = zs_prompt();
    {
        std::vector<std::jthread> threads;
        for (int i = 0; i < 12; ++i) threads.emplace_back([&] { client.complete(prompt); });
    }
    CHECK(h.transport->calls() == 12);
    CHECK(h.transport->max_inflight() <= 3);
    CHECK(h.transport->max_inflight() >= 2);
    CHECK(client.recorder().entries().size() == 12);
}

TEST_CASE("HTTP transport against a local endpoint") {
    httplib::Server server;
    std::string seen_auth;
    std::string seen_body;
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        seen_auth = req.get_header_value("Authorization");
        seen_body = req.body;
        res.set_content(chat_body("from server"), "application/json");
    });
    server.Post("/v1/fail", [](const httplib::Request&, httplib::Response& res) {
        res.status = 400;
        res.set_content("bad request", "text/plain");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread worker([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    LLMConfig cfg;
    cfg.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
    cfg.timeout_s = 5;
    ClientHooks hooks;
    hooks.getenv = [](const std::string&) -> std::optional<std::string> { return "sk-local"; };
    LLMClient client(cfg, BackendKind::live, hooks);
    CHECK(client.complete(zs_prompt()).text == "from server");
    CHECK(seen_auth == "Bearer sk-local");
    CHECK(json::parse(seen_body)["model"] == cfg.model);

    cfg.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1/fail";
    LLMClient failing(cfg, BackendKind::live, hooks);
    CHECK_THROWS_AS(failing.complete(zs_prompt()), RequestError);

    server.stop();
    worker.join();

    // Nothing listens any more: connection failures become transport errors after retries.
    cfg.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
    cfg.max_retries = 1;
    cfg.backoff_base_s = 0.001;
    LLMClient dead(cfg, BackendKind::live, hooks);
    CHECK_THROWS_AS(dead.complete(zs_prompt()), TransportError);
}
