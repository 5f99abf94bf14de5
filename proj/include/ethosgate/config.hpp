#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include <json.hpp>

#include "ethosgate/core.hpp"

// Policy configuration: one JSON document, defaults filled at load, every
// numeric range checked up front. Validation failures name the offending key.

namespace ethosgate {

enum class BreakerFallback { PassThrough, FailClosed };

inline std::string_view fallback_name(BreakerFallback f) {
    return f == BreakerFallback::PassThrough ? "pass_through" : "fail_closed";
}

struct PolicyConfig {
    // thresholds.<category>: block when the fused score reaches tau. (0,1].
    std::array<double, kCategoryCount> thresholds{0.5, 0.5, 0.5, 0.5, 0.5};

    // context.*
    double tau_low = 0.2;      // signature threshold, (0, min tau)
    double decay = 0.8;        // carried-prior decay per turn, [0,1]
    int context_window = 3;    // turns kept per conversation (k), >= 1
    long ttl_seconds = 86400;  // idle conversations evictable after this

    // breaker.*
    int breaker_trip_count = 3;  // consecutive failures before auto-disable, >= 1
    BreakerFallback breaker_fallback = BreakerFallback::PassThrough;

    // feedback.*
    double eta = 0.1;    // learning rate, (0,1)
    double w_max = 5.0;  // weight clamp ceiling, > 0
    std::string feedback_state_dir = "ethosgate-state";

    // file paths; empty string = builtin defaults
    std::array<std::string, kCategoryCount> lexicon_paths{};
    std::string templates_path;
    std::string priors_path;
    std::string audit_path = "ethosgate-audit.ndjson";
    std::string review_path = "ethosgate-review.ndjson";

    // upstream.*
    std::string upstream_url = "http://127.0.0.1:8801/v1/complete";
    long upstream_timeout_ms = 10000;

    // server.*
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string admin_host = "127.0.0.1";
    int admin_port = 8081;
    std::string admin_token;  // empty = admin endpoints unauthenticated

    double threshold(ThreatCategory c) const { return thresholds[category_index(c)]; }

    bool operator==(const PolicyConfig&) const = default;
};

namespace detail {

inline void require_known_keys(const nlohmann::json& obj, std::string_view section,
                               std::initializer_list<std::string_view> known) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (auto k : known) {
            if (it.key() == k) { ok = true; break; }
        }
        if (!ok) {
            std::string path = section.empty() ? it.key() : std::string(section) + "." + it.key();
            throw ConfigError(path, "unknown key");
        }
    }
}

inline double read_number(const nlohmann::json& obj, const std::string& key,
                          const std::string& path, double lo, double hi,
                          bool lo_open, bool hi_open, double fallback) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_number()) throw ConfigError(path, "must be a number");
    double d = v.get<double>();
    bool below = lo_open ? d <= lo : d < lo;
    bool above = hi_open ? d >= hi : d > hi;
    if (!std::isfinite(d) || below || above) {
        std::ostringstream msg;
        msg << "must be in " << (lo_open ? "(" : "[") << lo << "," << hi
            << (hi_open ? ")" : "]");
        throw ConfigError(path, msg.str());
    }
    return d;
}

inline std::string read_string(const nlohmann::json& obj, const std::string& key,
                               const std::string& path, std::string fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj.at(key).is_string()) throw ConfigError(path, "must be a string");
    return obj.at(key).get<std::string>();
}

inline void require_readable_file(const std::string& path, const std::string& key) {
    if (!std::filesystem::exists(path)) throw ConfigError(key, "file not found: " + path);
}

} // namespace detail

// Parses and validates a configuration document. Missing keys fall back to
// defaults; unknown keys, range violations and missing files are rejected
// with the offending key in the error.
inline PolicyConfig validate_config(const nlohmann::json& raw) {
    if (!raw.is_object()) throw ConfigError("(root)", "configuration must be a JSON object");
    detail::require_known_keys(raw, "",
                               {"thresholds", "context", "breaker", "feedback", "lexicons",
                                "templates", "priors", "audit", "review", "upstream", "server"});
    PolicyConfig cfg;

    if (raw.contains("thresholds")) {
        const auto& t = raw.at("thresholds");
        if (!t.is_object()) throw ConfigError("thresholds", "must be an object");
        detail::require_known_keys(t, "thresholds", {"injection", "jailbreak", "pii", "sexual", "hate"});
        for (auto c : kAllCategories) {
            std::string key(category_key(c));
            cfg.thresholds[category_index(c)] = detail::read_number(
                t, key, "thresholds." + key, 0.0, 1.0, true, false, cfg.thresholds[category_index(c)]);
        }
    }

    double min_tau = *std::min_element(cfg.thresholds.begin(), cfg.thresholds.end());

    if (raw.contains("context")) {
        const auto& ctx = raw.at("context");
        if (!ctx.is_object()) throw ConfigError("context", "must be an object");
        detail::require_known_keys(ctx, "context", {"tau_low", "decay", "window", "ttl_seconds"});
        cfg.tau_low = detail::read_number(ctx, "tau_low", "context.tau_low", 0.0, 1.0, true, true, cfg.tau_low);
        cfg.decay = detail::read_number(ctx, "decay", "context.decay", 0.0, 1.0, false, false, cfg.decay);
        double w = detail::read_number(ctx, "window", "context.window", 1.0, 64.0, false, false,
                                       static_cast<double>(cfg.context_window));
        if (w != std::floor(w)) throw ConfigError("context.window", "must be an integer");
        cfg.context_window = static_cast<int>(w);
        double ttl = detail::read_number(ctx, "ttl_seconds", "context.ttl_seconds", 1.0,
                                         std::numeric_limits<double>::max(), false, true,
                                         static_cast<double>(cfg.ttl_seconds));
        cfg.ttl_seconds = static_cast<long>(ttl);
    }
    if (cfg.tau_low >= min_tau) {
        throw ConfigError("context.tau_low", "must be below every category threshold");
    }

    if (raw.contains("breaker")) {
        const auto& b = raw.at("breaker");
        if (!b.is_object()) throw ConfigError("breaker", "must be an object");
        detail::require_known_keys(b, "breaker", {"trip_count", "fallback"});
        double n = detail::read_number(b, "trip_count", "breaker.trip_count", 1.0, 1e9, false, false,
                                       static_cast<double>(cfg.breaker_trip_count));
        if (n != std::floor(n)) throw ConfigError("breaker.trip_count", "must be an integer");
        cfg.breaker_trip_count = static_cast<int>(n);
        std::string f = detail::read_string(b, "fallback", "breaker.fallback",
                                            std::string(fallback_name(cfg.breaker_fallback)));
        if (f == "pass_through") cfg.breaker_fallback = BreakerFallback::PassThrough;
        else if (f == "fail_closed") cfg.breaker_fallback = BreakerFallback::FailClosed;
        else throw ConfigError("breaker.fallback", "must be \"pass_through\" or \"fail_closed\"");
    }

    if (raw.contains("feedback")) {
        const auto& f = raw.at("feedback");
        if (!f.is_object()) throw ConfigError("feedback", "must be an object");
        detail::require_known_keys(f, "feedback", {"eta", "w_max", "state_dir"});
        cfg.eta = detail::read_number(f, "eta", "feedback.eta", 0.0, 1.0, true, true, cfg.eta);
        cfg.w_max = detail::read_number(f, "w_max", "feedback.w_max", 0.0, 1e6, true, false, cfg.w_max);
        cfg.feedback_state_dir = detail::read_string(f, "state_dir", "feedback.state_dir", cfg.feedback_state_dir);
    }

    if (raw.contains("lexicons")) {
        const auto& lex = raw.at("lexicons");
        if (!lex.is_object()) throw ConfigError("lexicons", "must be an object");
        detail::require_known_keys(lex, "lexicons", {"injection", "jailbreak", "pii", "sexual", "hate"});
        for (auto c : kAllCategories) {
            std::string key(category_key(c));
            std::string path = detail::read_string(lex, key, "lexicons." + key, "");
            if (!path.empty()) detail::require_readable_file(path, "lexicons." + key);
            cfg.lexicon_paths[category_index(c)] = path;
        }
    }

    if (raw.contains("templates")) {
        const auto& t = raw.at("templates");
        if (!t.is_object()) throw ConfigError("templates", "must be an object");
        detail::require_known_keys(t, "templates", {"path"});
        cfg.templates_path = detail::read_string(t, "path", "templates.path", "");
        if (!cfg.templates_path.empty()) detail::require_readable_file(cfg.templates_path, "templates.path");
    }

    if (raw.contains("priors")) {
        const auto& p = raw.at("priors");
        if (!p.is_object()) throw ConfigError("priors", "must be an object");
        detail::require_known_keys(p, "priors", {"path"});
        cfg.priors_path = detail::read_string(p, "path", "priors.path", "");
        if (!cfg.priors_path.empty()) detail::require_readable_file(cfg.priors_path, "priors.path");
    }

    if (raw.contains("audit")) {
        const auto& a = raw.at("audit");
        if (!a.is_object()) throw ConfigError("audit", "must be an object");
        detail::require_known_keys(a, "audit", {"path"});
        cfg.audit_path = detail::read_string(a, "path", "audit.path", cfg.audit_path);
    }

    if (raw.contains("review")) {
        const auto& r = raw.at("review");
        if (!r.is_object()) throw ConfigError("review", "must be an object");
        detail::require_known_keys(r, "review", {"path"});
        cfg.review_path = detail::read_string(r, "path", "review.path", cfg.review_path);
    }

    if (raw.contains("upstream")) {
        const auto& u = raw.at("upstream");
        if (!u.is_object()) throw ConfigError("upstream", "must be an object");
        detail::require_known_keys(u, "upstream", {"url", "timeout_ms"});
        cfg.upstream_url = detail::read_string(u, "url", "upstream.url", cfg.upstream_url);
        double t = detail::read_number(u, "timeout_ms", "upstream.timeout_ms", 1.0, 1e9, false, false,
                                       static_cast<double>(cfg.upstream_timeout_ms));
        cfg.upstream_timeout_ms = static_cast<long>(t);
    }

    if (raw.contains("server")) {
        const auto& s = raw.at("server");
        if (!s.is_object()) throw ConfigError("server", "must be an object");
        detail::require_known_keys(s, "server", {"host", "port", "admin_host", "admin_port", "admin_token"});
        cfg.host = detail::read_string(s, "host", "server.host", cfg.host);
        cfg.port = static_cast<int>(detail::read_number(s, "port", "server.port", 0.0, 65535.0,
                                                        false, false, static_cast<double>(cfg.port)));
        cfg.admin_host = detail::read_string(s, "admin_host", "server.admin_host", cfg.admin_host);
        cfg.admin_port = static_cast<int>(detail::read_number(
            s, "admin_port", "server.admin_port", 0.0, 65535.0, false, false,
            static_cast<double>(cfg.admin_port)));
        cfg.admin_token = detail::read_string(s, "admin_token", "server.admin_token", cfg.admin_token);
    }

    return cfg;
}

inline PolicyConfig validate_config_text(const std::string& text) {
    nlohmann::json raw = nlohmann::json::parse(text, nullptr, false);
    if (raw.is_discarded()) throw ConfigError("(root)", "configuration is not valid JSON");
    return validate_config(raw);
}

inline PolicyConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("(file)", "cannot open configuration file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return validate_config_text(buf.str());
}

// Canonical serialization: every key explicit. validate_config of this
// output reproduces the same PolicyConfig (normalization fixed point).
inline nlohmann::json serialize_config(const PolicyConfig& cfg) {
    nlohmann::json t;
    for (auto c : kAllCategories) t[std::string(category_key(c))] = cfg.thresholds[category_index(c)];
    nlohmann::json lex;
    for (auto c : kAllCategories) lex[std::string(category_key(c))] = cfg.lexicon_paths[category_index(c)];
    return nlohmann::json{
        {"thresholds", t},
        {"context",
         {{"tau_low", cfg.tau_low},
          {"decay", cfg.decay},
          {"window", cfg.context_window},
          {"ttl_seconds", cfg.ttl_seconds}}},
        {"breaker",
         {{"trip_count", cfg.breaker_trip_count},
          {"fallback", std::string(fallback_name(cfg.breaker_fallback))}}},
        {"feedback", {{"eta", cfg.eta}, {"w_max", cfg.w_max}, {"state_dir", cfg.feedback_state_dir}}},
        {"lexicons", lex},
        {"templates", {{"path", cfg.templates_path}}},
        {"priors", {{"path", cfg.priors_path}}},
        {"audit", {{"path", cfg.audit_path}}},
        {"review", {{"path", cfg.review_path}}},
        {"upstream", {{"url", cfg.upstream_url}, {"timeout_ms", cfg.upstream_timeout_ms}}},
        {"server",
         {{"host", cfg.host},
          {"port", cfg.port},
          {"admin_host", cfg.admin_host},
          {"admin_port", cfg.admin_port},
          {"admin_token", cfg.admin_token}}},
    };
}

// Short stable fingerprint of the effective configuration, reported by the
// health endpoint.
inline std::string config_version(const PolicyConfig& cfg) {
    std::string dump = serialize_config(cfg).dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : dump) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace ethosgate
