#include "formu/errors.hpp"
#include "formu/llm_client.hpp"

#include <httplib.h>

#include <regex>

namespace formu {

namespace {

class HttplibTransport final : public Transport {
public:
    HttpResponse post(const HttpRequest& request) override {
        static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
        std::smatch m;
        if (!std::regex_match(request.url, m, url_re)) {
            throw ConfigError("malformed endpoint URL: " + request.url);
        }
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
        if (request.url.rfind("https://", 0) == 0) {
            throw ConfigError("https endpoints need a build with OpenSSL");
        }
#endif
        httplib::Client client(m[1].str());
        const auto secs = static_cast<time_t>(request.timeout_s);
        const auto usecs = static_cast<time_t>((request.timeout_s - static_cast<double>(secs)) * 1e6);
        client.set_connection_timeout(secs, usecs);
        client.set_read_timeout(secs, usecs);
        client.set_write_timeout(secs, usecs);

        httplib::Headers headers;
        std::string content_type = "application/json";
        for (const auto& [k, v] : request.headers) {
            if (k == "Content-Type") {
                content_type = v;
            } else {
                headers.emplace(k, v);
            }
        }
        const std::string path = m[2].matched ? m[2].str() : "/";
        auto res = client.Post(path, headers, request.body, content_type);
        if (!res) throw TransportError("POST " + request.url + " failed: " + httplib::to_string(res.error()));
        return {res->status, res->body};
    }
};

} // namespace

std::shared_ptr<Transport> make_http_transport() { return std::make_shared<HttplibTransport>(); }

} // namespace formu
