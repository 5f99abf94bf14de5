#pragma once

#include <chrono>
#include <cstdio>
#include <ctime>
#include <string>

#include <json.hpp>

#include "ethosgate/core.hpp"

// JSON representations shared by the HTTP API, the audit log, and the CLI.

namespace ethosgate {

inline nlohmann::json score_vector_to_json(const ScoreVector& v) {
    nlohmann::json out;
    for (auto c : kAllCategories) out[std::string(category_key(c))] = v.get(c);
    return out;
}

inline ScoreVector score_vector_from_json(const nlohmann::json& doc) {
    ScoreVector v;
    for (auto c : kAllCategories) {
        auto key = std::string(category_key(c));
        if (doc.contains(key)) v.set(c, doc.at(key).get<double>());
    }
    return v;
}

inline nlohmann::json verdict_to_json(const Verdict& v) {
    nlohmann::json flagged = nlohmann::json::array();
    for (auto c : v.flagged) flagged.push_back(std::string(category_key(c)));
    return nlohmann::json{
        {"kind", v.blocked() ? "block" : "allow"},
        {"flagged", flagged},
        {"primary", v.primary ? nlohmann::json(std::string(category_key(*v.primary)))
                              : nlohmann::json(nullptr)},
        {"combined", v.combined()},
    };
}

inline Verdict verdict_from_json(const nlohmann::json& doc, const ScoreVector& fused) {
    Verdict v;
    v.kind = doc.at("kind").get<std::string>() == "block" ? Verdict::Kind::Block
                                                          : Verdict::Kind::Allow;
    for (const auto& item : doc.at("flagged")) {
        auto c = category_from_key(item.get<std::string>());
        if (c) v.flagged.push_back(*c);
    }
    if (!doc.at("primary").is_null()) {
        v.primary = category_from_key(doc.at("primary").get<std::string>());
    }
    v.scores = fused;
    return v;
}

inline nlohmann::json hits_to_json(const std::vector<FeatureHit>& hits) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& h : hits) {
        out.push_back({{"category", std::string(category_key(h.detector))},
                       {"id", h.feature_id},
                       {"begin", h.begin},
                       {"end", h.end},
                       {"weight", h.weight}});
    }
    return out;
}

inline std::vector<FeatureHit> hits_from_json(const nlohmann::json& doc) {
    std::vector<FeatureHit> hits;
    for (const auto& item : doc) {
        auto c = category_from_key(item.at("category").get<std::string>());
        if (!c) continue;
        hits.push_back({*c, item.at("id").get<std::string>(), item.at("begin").get<std::size_t>(),
                        item.at("end").get<std::size_t>(), item.at("weight").get<double>()});
    }
    return hits;
}

// UTC ISO-8601 with millisecond precision, e.g. 2025-04-01T12:30:45.123Z.
inline std::string iso8601_utc_now() {
    auto now = std::chrono::system_clock::now();
    auto secs = std::chrono::time_point_cast<std::chrono::seconds>(now);
    auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now - secs).count();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                  tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec,
                  static_cast<int>(ms));
    return buf;
}

// FNV-1a over the identifying request inputs; stable across runs so replays
// of identical state produce identical ids.
inline std::string derive_request_id(const std::string& conversation_id, std::uint64_t turn_index,
                                     std::string_view prompt) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](std::string_view s) {
        for (unsigned char ch : s) {
            h ^= ch;
            h *= 1099511628211ULL;
        }
        h ^= 0x1f;
        h *= 1099511628211ULL;
    };
    mix(conversation_id);
    mix(std::to_string(turn_index));
    mix(prompt);
    char buf[24];
    std::snprintf(buf, sizeof(buf), "r-%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace ethosgate
