#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ethosgate/core.hpp"
#include "ethosgate/wire.hpp"

// Append-only audit trail: one newline-delimited JSON record per pipeline
// event. Records carry scores, verdicts, hit spans and feature ids — never
// the matched text itself.

namespace ethosgate {

struct AuditRecord {
    std::string request_id;
    std::string timestamp;  // UTC ISO-8601
    std::string conversation_id;
    std::string direction = "ingress";  // "ingress" | "egress"
    ScoreVector raw_scores;
    ScoreVector prior;
    ScoreVector fused;
    Verdict verdict;
    std::string action;                        // forward | respond:<key> | internal_error | ...
    std::optional<std::string> template_key;
    std::vector<FeatureHit> hits;              // spans + feature ids only
    std::array<bool, kCategoryCount> detector_enabled{true, true, true, true, true};
    double latency_ms = 0.0;
    std::string context_key;       // sequence key used for the prior lookup
    std::string turn_signature;
    bool context_degraded = false;
    std::map<std::string, int> lexicon_versions;
    std::string template_version;
    std::string config_version;

    nlohmann::json to_json() const {
        nlohmann::json detectors;
        for (auto c : kAllCategories) {
            detectors[std::string(category_key(c))] =
                detector_enabled[category_index(c)] ? "enabled" : "disabled";
        }
        nlohmann::json versions{{"templates", template_version}, {"config", config_version}};
        for (const auto& [cat, v] : lexicon_versions) versions["lexicon." + cat] = v;
        return nlohmann::json{
            {"request_id", request_id},
            {"timestamp", timestamp},
            {"conversation_id", conversation_id},
            {"direction", direction},
            {"scores", score_vector_to_json(raw_scores)},
            {"prior", score_vector_to_json(prior)},
            {"fused", score_vector_to_json(fused)},
            {"verdict", verdict_to_json(verdict)},
            {"action", action},
            {"template_key", template_key ? nlohmann::json(*template_key) : nlohmann::json(nullptr)},
            {"hits", hits_to_json(hits)},
            {"detectors", detectors},
            {"latency_ms", latency_ms},
            {"context", {{"key", context_key}, {"signature", turn_signature}, {"degraded", context_degraded}}},
            {"versions", versions},
        };
    }

    static AuditRecord from_json(const nlohmann::json& doc) {
        AuditRecord r;
        r.request_id = doc.at("request_id").get<std::string>();
        r.timestamp = doc.at("timestamp").get<std::string>();
        r.conversation_id = doc.at("conversation_id").get<std::string>();
        r.direction = doc.at("direction").get<std::string>();
        r.raw_scores = score_vector_from_json(doc.at("scores"));
        r.prior = score_vector_from_json(doc.at("prior"));
        r.fused = score_vector_from_json(doc.at("fused"));
        r.verdict = verdict_from_json(doc.at("verdict"), r.fused);
        r.action = doc.at("action").get<std::string>();
        if (!doc.at("template_key").is_null()) {
            r.template_key = doc.at("template_key").get<std::string>();
        }
        r.hits = hits_from_json(doc.at("hits"));
        for (auto c : kAllCategories) {
            auto key = std::string(category_key(c));
            if (doc.at("detectors").contains(key)) {
                r.detector_enabled[category_index(c)] =
                    doc.at("detectors").at(key).get<std::string>() == "enabled";
            }
        }
        r.latency_ms = doc.at("latency_ms").get<double>();
        const auto& ctx = doc.at("context");
        r.context_key = ctx.at("key").get<std::string>();
        r.turn_signature = ctx.at("signature").get<std::string>();
        r.context_degraded = ctx.at("degraded").get<bool>();
        if (doc.contains("versions")) {
            for (auto it = doc.at("versions").begin(); it != doc.at("versions").end(); ++it) {
                if (it.key() == "templates") r.template_version = it.value().get<std::string>();
                else if (it.key() == "config") r.config_version = it.value().get<std::string>();
                else if (it.key().rfind("lexicon.", 0) == 0) {
                    r.lexicon_versions[it.key().substr(8)] = it.value().get<int>();
                }
            }
        }
        return r;
    }
};

// Serialized appender over an NDJSON file. A sink constructed with an empty
// path swallows records (offline one-shot commands).
class AuditLog {
public:
    explicit AuditLog(std::string path) : path_(std::move(path)) {}

    void append(const AuditRecord& record) {
        std::lock_guard<std::mutex> lock(mutex_);
        records_.push_back(record);
        if (records_.size() > kMemoryCap) records_.erase(records_.begin());
        if (path_.empty()) return;
        std::ofstream out(path_, std::ios::app);
        if (!out) throw std::runtime_error("audit log not writable: " + path_);
        out << record.to_json().dump() << "\n";
    }

    // In-memory view of records appended by this process.
    std::vector<AuditRecord> recent() const {
        std::lock_guard<std::mutex> lock(mutex_);
        return records_;
    }

    // Complete history: the backing file when configured, else the
    // in-process records.
    std::vector<AuditRecord> all() const {
        std::lock_guard<std::mutex> lock(mutex_);
        if (!path_.empty() && std::filesystem::exists(path_)) return read_file(path_);
        return records_;
    }

    std::optional<AuditRecord> find(const std::string& request_id) const {
        std::lock_guard<std::mutex> lock(mutex_);
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
            if (it->request_id == request_id) return *it;
        }
        if (!path_.empty()) {
            for (const auto& r : read_file(path_)) {
                if (r.request_id == request_id) return r;
            }
        }
        return std::nullopt;
    }

    const std::string& path() const { return path_; }

    static std::vector<AuditRecord> read_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open audit log: " + path);
        std::vector<AuditRecord> records;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            nlohmann::json doc = nlohmann::json::parse(line, nullptr, false);
            if (doc.is_discarded()) {
                throw std::runtime_error("audit log line " + std::to_string(lineno) +
                                         " is not valid JSON");
            }
            records.push_back(AuditRecord::from_json(doc));
        }
        return records;
    }

private:
    static constexpr std::size_t kMemoryCap = 65536;

    mutable std::mutex mutex_;
    std::string path_;
    std::vector<AuditRecord> records_;
};

} // namespace ethosgate
