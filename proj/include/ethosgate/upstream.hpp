#pragma once

#include <memory>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "ethosgate/core.hpp"

// Minimal chat-completion client for the upstream model: messages in, text
// out. Any backend (or test mock) implementing this wire shape works.

namespace ethosgate {

struct ChatMessage {
    std::string role;     // "user" | "assistant" | "system"
    std::string content;

    bool operator==(const ChatMessage&) const = default;
};

struct UpstreamResult {
    bool ok = false;
    std::string content;  // assistant text on success
    int status = 0;       // HTTP status when a response arrived
    std::string error;    // transport/parse diagnostics, never sent to clients
};

class UpstreamClient {
public:
    virtual ~UpstreamClient() = default;
    virtual UpstreamResult complete(const std::vector<ChatMessage>& messages) = 0;
};

struct ParsedUrl {
    std::string scheme;
    std::string host;
    int port = 80;
    std::string path = "/";
};

inline ParsedUrl parse_url(const std::string& url) {
    ParsedUrl out;
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("upstream.url", "missing scheme: " + url);
    out.scheme = url.substr(0, scheme_end);
    if (out.scheme != "http" && out.scheme != "https") {
        throw ConfigError("upstream.url", "unsupported scheme: " + out.scheme);
    }
    out.port = out.scheme == "https" ? 443 : 80;
    std::string rest = url.substr(scheme_end + 3);
    auto path_start = rest.find('/');
    std::string authority = path_start == std::string::npos ? rest : rest.substr(0, path_start);
    if (path_start != std::string::npos) out.path = rest.substr(path_start);
    auto colon = authority.rfind(':');
    if (colon != std::string::npos) {
        out.host = authority.substr(0, colon);
        try {
            out.port = std::stoi(authority.substr(colon + 1));
        } catch (...) {
            throw ConfigError("upstream.url", "invalid port in " + url);
        }
    } else {
        out.host = authority;
    }
    if (out.host.empty()) throw ConfigError("upstream.url", "missing host: " + url);
    return out;
}

class HttpUpstreamClient : public UpstreamClient {
public:
    HttpUpstreamClient(const std::string& url, long timeout_ms)
        : url_(parse_url(url)), timeout_ms_(timeout_ms) {}

    UpstreamResult complete(const std::vector<ChatMessage>& messages) override {
        nlohmann::json body;
        body["messages"] = nlohmann::json::array();
        for (const auto& m : messages) {
            body["messages"].push_back({{"role", m.role}, {"content", m.content}});
        }
        httplib::Client cli(url_.host, url_.port);
        cli.set_connection_timeout(0, static_cast<time_t>(timeout_ms_) * 1000);
        cli.set_read_timeout(timeout_ms_ / 1000, (timeout_ms_ % 1000) * 1000);
        cli.set_write_timeout(timeout_ms_ / 1000, (timeout_ms_ % 1000) * 1000);
        auto res = cli.Post(url_.path, body.dump(), "application/json");
        UpstreamResult out;
        if (!res) {
            out.error = "upstream unreachable: " + httplib::to_string(res.error());
            return out;
        }
        out.status = res->status;
        if (res->status < 200 || res->status >= 300) {
            out.error = "upstream status " + std::to_string(res->status);
            return out;
        }
        nlohmann::json doc = nlohmann::json::parse(res->body, nullptr, false);
        if (doc.is_discarded() || !doc.contains("content") || !doc.at("content").is_string()) {
            out.error = "upstream returned an unexpected body";
            return out;
        }
        out.ok = true;
        out.content = doc.at("content").get<std::string>();
        return out;
    }

private:
    ParsedUrl url_;
    long timeout_ms_;
};

} // namespace ethosgate
