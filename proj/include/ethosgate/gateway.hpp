#pragma once

#include <atomic>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "ethosgate/audit.hpp"
#include "ethosgate/breaker.hpp"
#include "ethosgate/config.hpp"
#include "ethosgate/feedback.hpp"
#include "ethosgate/pipeline.hpp"
#include "ethosgate/templates.hpp"
#include "ethosgate/upstream.hpp"
#include "ethosgate/wire.hpp"

// The HTTP service: a public listener (/v1/analyze, /v1/chat, /v1/feedback)
// and an admin listener (/healthz, /v1/metrics, /admin/breaker/*). Detector
// faults, upstream failures and template problems are contained per
// request; a response is always delivered.

namespace ethosgate {

class Metrics {
public:
    static constexpr std::array<double, 9> kLatencyBoundsMs = {1, 2, 5, 10, 25, 50, 100, 250, 1000};

    void count_request() { requests_total_.fetch_add(1); }
    void count_block(ThreatCategory c) { blocks_[category_index(c)].fetch_add(1); }
    void count_egress_filtered() { egress_filtered_.fetch_add(1); }
    void count_upstream_error() { upstream_errors_.fetch_add(1); }
    void count_render_error() { render_errors_.fetch_add(1); }
    void count_context_degraded() { context_degraded_.fetch_add(1); }

    void observe_latency_ms(double ms) {
        for (std::size_t i = 0; i < kLatencyBoundsMs.size(); ++i) {
            if (ms <= kLatencyBoundsMs[i]) {
                latency_buckets_[i].fetch_add(1);
                return;
            }
        }
        latency_buckets_[kLatencyBoundsMs.size()].fetch_add(1);
    }

    nlohmann::json to_json(long breaker_trips) const {
        nlohmann::json blocks;
        for (auto c : kAllCategories) {
            blocks[std::string(category_key(c))] = blocks_[category_index(c)].load();
        }
        nlohmann::json buckets;
        for (std::size_t i = 0; i < kLatencyBoundsMs.size(); ++i) {
            char key[32];
            std::snprintf(key, sizeof(key), "le_%gms", kLatencyBoundsMs[i]);
            buckets[key] = latency_buckets_[i].load();
        }
        buckets["inf"] = latency_buckets_[kLatencyBoundsMs.size()].load();
        return nlohmann::json{
            {"requests_total", requests_total_.load()},
            {"blocks_per_category", blocks},
            {"breaker_trips", breaker_trips},
            {"egress_filtered", egress_filtered_.load()},
            {"upstream_errors", upstream_errors_.load()},
            {"render_errors", render_errors_.load()},
            {"context_degraded", context_degraded_.load()},
            {"latency_ms_buckets", buckets},
        };
    }

private:
    std::atomic<long> requests_total_{0};
    std::array<std::atomic<long>, kCategoryCount> blocks_{};
    std::atomic<long> egress_filtered_{0};
    std::atomic<long> upstream_errors_{0};
    std::atomic<long> render_errors_{0};
    std::atomic<long> context_degraded_{0};
    std::array<std::atomic<long>, 10> latency_buckets_{};
};

struct GatewayParts {
    PolicyConfig cfg;
    std::shared_ptr<DetectorHub> detectors;
    std::shared_ptr<PriorTableHub> priors;
    std::shared_ptr<ContextStore> store;
    std::shared_ptr<DetectorBreaker> breaker;
    std::shared_ptr<AuditLog> audit;
    std::shared_ptr<TemplateRegistry> templates;
    std::shared_ptr<FeedbackService> feedback;
    std::shared_ptr<UpstreamClient> upstream;
};

// Assembles a full gateway state from configuration: lexicons and templates
// from files or builtins, prior table from file or empty, in-memory
// conversation store, HTTP upstream client.
inline GatewayParts build_parts(const PolicyConfig& cfg) {
    GatewayParts parts;
    parts.cfg = cfg;
    auto lexicons = load_lexicons(cfg);
    parts.detectors = std::make_shared<DetectorHub>(DetectorSet::from_lexicons(lexicons));
    SequencePriorTable priors;
    if (!cfg.priors_path.empty()) priors = SequencePriorTable::load_file(cfg.priors_path);
    parts.priors = std::make_shared<PriorTableHub>(priors);
    parts.store = std::make_shared<InMemoryContextStore>(cfg.ttl_seconds);
    parts.breaker = std::make_shared<DetectorBreaker>(cfg.breaker_trip_count);
    parts.audit = std::make_shared<AuditLog>(cfg.audit_path);
    parts.templates = std::make_shared<TemplateRegistry>(
        cfg.templates_path.empty() ? TemplateRegistry::builtin()
                                   : TemplateRegistry::load_file(cfg.templates_path));
    parts.feedback = std::make_shared<FeedbackService>(cfg, lexicons, priors, parts.detectors,
                                                       parts.priors, parts.audit);
    parts.upstream = std::make_shared<HttpUpstreamClient>(cfg.upstream_url, cfg.upstream_timeout_ms);
    return parts;
}

class Gateway {
public:
    explicit Gateway(GatewayParts parts)
        : parts_(std::move(parts)),
          pipeline_(parts_.cfg, parts_.detectors, parts_.priors, parts_.store, parts_.breaker),
          config_version_(config_version(parts_.cfg)) {
        register_public_routes();
        register_admin_routes();
    }

    ~Gateway() { stop(); }

    // Binds both listeners (port 0 picks a free port) and serves until
    // stop(). Returns false when a bind fails.
    bool start() {
        public_port_ = bind_listener(public_server_, parts_.cfg.host, parts_.cfg.port);
        admin_port_ = bind_listener(admin_server_, parts_.cfg.admin_host, parts_.cfg.admin_port);
        if (public_port_ < 0 || admin_port_ < 0) return false;
        public_thread_ = std::thread([this] { public_server_.listen_after_bind(); });
        admin_thread_ = std::thread([this] { admin_server_.listen_after_bind(); });
        public_server_.wait_until_ready();
        admin_server_.wait_until_ready();
        return true;
    }

    void stop() {
        if (public_server_.is_running()) public_server_.stop();
        if (admin_server_.is_running()) admin_server_.stop();
        if (public_thread_.joinable()) public_thread_.join();
        if (admin_thread_.joinable()) admin_thread_.join();
    }

    int public_port() const { return public_port_; }
    int admin_port() const { return admin_port_; }

    Pipeline& pipeline() { return pipeline_; }
    const GatewayParts& parts() const { return parts_; }
    Metrics& metrics() { return metrics_; }

private:
    static int bind_listener(httplib::Server& server, const std::string& host, int port) {
        if (port == 0) return server.bind_to_any_port(host);
        return server.bind_to_port(host, port) ? port : -1;
    }

    static void respond_json(httplib::Response& res, int status, const nlohmann::json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    AuditRecord base_record(const AnalysisOutcome& out, const std::string& direction) const {
        AuditRecord r = make_audit_record(out, direction);
        auto set = parts_.detectors->snapshot();
        for (auto c : kAllCategories) {
            r.lexicon_versions[std::string(category_key(c))] = set->lexicon_version(c);
        }
        r.template_version = parts_.templates->version();
        r.config_version = config_version_;
        return r;
    }

    void note_outcome(const AnalysisOutcome& out) {
        metrics_.count_request();
        metrics_.observe_latency_ms(out.latency_ms);
        if (out.context_degraded) metrics_.count_context_degraded();
        for (auto c : out.verdict.flagged) metrics_.count_block(c);
    }

    // Rendered block/substitute response; falls back to a compiled-in
    // neutral string when the template itself cannot render.
    std::string render_safely(const Verdict& verdict, const std::string& request_id,
                              const std::string& source_text, const std::vector<FeatureHit>& hits,
                              std::string* template_key) {
        const ResponseTemplate& tpl = parts_.templates->select(verdict);
        if (template_key) *template_key = tpl.key;
        try {
            return render(tpl, verdict, request_id, source_text, hits);
        } catch (const std::exception&) {
            metrics_.count_render_error();
            return "Your request could not be completed. Reference " + request_id +
                   " has been logged.";
        }
    }

    void register_public_routes() {
        public_server_.Post("/v1/analyze", [this](const httplib::Request& req, httplib::Response& res) {
            nlohmann::json body = nlohmann::json::parse(req.body, nullptr, false);
            if (body.is_discarded() || !body.is_object() || !body.contains("prompt") ||
                !body.at("prompt").is_string() || !body.contains("conversation_id") ||
                !body.at("conversation_id").is_string()) {
                respond_json(res, 400,
                             {{"error", "body must be {\"conversation_id\": string, \"prompt\": string}"}});
                return;
            }
            try {
                AnalysisOutcome out = pipeline_.analyze(body.at("conversation_id").get<std::string>(),
                                                        body.at("prompt").get<std::string>());
                AuditRecord record = base_record(out, "ingress");
                parts_.audit->append(record);
                parts_.feedback->enqueue_for_review(record);
                note_outcome(out);
                respond_json(res, 200, analysis_document(out));
            } catch (const std::exception& e) {
                audit_internal_error(body, e.what());
                respond_json(res, 500, {{"error", "internal error"}});
            }
        });

        public_server_.Post("/v1/chat", [this](const httplib::Request& req, httplib::Response& res) {
            nlohmann::json body = nlohmann::json::parse(req.body, nullptr, false);
            std::string parse_error;
            std::vector<ChatMessage> messages;
            std::string conversation_id;
            if (!parse_chat_request(body, conversation_id, messages, parse_error)) {
                respond_json(res, 400, {{"error", parse_error}});
                return;
            }
            try {
                handle_chat(conversation_id, messages, res);
            } catch (const std::exception& e) {
                audit_internal_error(body, e.what());
                respond_json(res, 500, {{"error", "internal error"}});
            }
        });

        public_server_.Post("/v1/feedback", [this](const httplib::Request& req, httplib::Response& res) {
            nlohmann::json body = nlohmann::json::parse(req.body, nullptr, false);
            if (body.is_discarded() || !body.is_object() || !body.contains("kind")) {
                respond_json(res, 400, {{"error", "body must carry \"kind\": \"label\" | \"episode\""}});
                return;
            }
            try {
                std::string kind = body.at("kind").get<std::string>();
                if (kind == "label") {
                    auto category = category_from_key(body.at("category").get<std::string>());
                    std::string label = body.at("label").get<std::string>();
                    if (!category || (label != "tp" && label != "fp")) {
                        respond_json(res, 400, {{"error", "label must be tp|fp with a known category"}});
                        return;
                    }
                    auto result = parts_.feedback->apply_label(
                        body.at("request_id").get<std::string>(), *category, label == "tp");
                    respond_json(res, 200,
                                 {{"features_updated", result.features_updated},
                                  {"lexicon_version", result.lexicon_version}});
                } else if (kind == "episode") {
                    auto category = category_from_key(body.at("category").get<std::string>());
                    if (!category) {
                        respond_json(res, 400, {{"error", "unknown category"}});
                        return;
                    }
                    auto result = parts_.feedback->update_sequence_priors(
                        body.at("conversation_id").get<std::string>(),
                        body.at("request_id").get<std::string>(), *category);
                    respond_json(res, 200,
                                 {{"keys_updated", result.keys_updated},
                                  {"table_version", result.table_version}});
                } else {
                    respond_json(res, 400, {{"error", "unknown feedback kind: " + kind}});
                }
            } catch (const FeedbackError& e) {
                respond_json(res, 404, {{"error", e.what()}});
            } catch (const std::exception& e) {
                respond_json(res, 400, {{"error", e.what()}});
            }
        });
    }

    static bool parse_chat_request(const nlohmann::json& body, std::string& conversation_id,
                                   std::vector<ChatMessage>& messages, std::string& error) {
        if (body.is_discarded() || !body.is_object() || !body.contains("conversation_id") ||
            !body.at("conversation_id").is_string() || !body.contains("messages") ||
            !body.at("messages").is_array() || body.at("messages").empty()) {
            error = "body must be {\"conversation_id\": string, \"messages\": [..]} with at least one message";
            return false;
        }
        conversation_id = body.at("conversation_id").get<std::string>();
        for (const auto& m : body.at("messages")) {
            if (!m.is_object() || !m.contains("role") || !m.at("role").is_string() ||
                !m.contains("content") || !m.at("content").is_string()) {
                error = "each message must be {\"role\", \"content\"}";
                return false;
            }
            std::string role = m.at("role").get<std::string>();
            if (role != "user" && role != "assistant" && role != "system") {
                error = "message role must be user|assistant|system";
                return false;
            }
            messages.push_back({role, m.at("content").get<std::string>()});
        }
        if (messages.back().role != "user") {
            error = "last message must be the user prompt";
            return false;
        }
        return true;
    }

    void handle_chat(const std::string& conversation_id, std::vector<ChatMessage> messages,
                     httplib::Response& res) {
        const std::string prompt = messages.back().content;
        AnalysisOutcome out = pipeline_.analyze(conversation_id, prompt);

        AuditRecord ingress = base_record(out, "ingress");
        parts_.audit->append(ingress);
        parts_.feedback->enqueue_for_review(ingress);
        note_outcome(out);

        if (out.verdict.blocked()) {
            std::string key;
            std::string content = render_safely(out.verdict, out.request_id, prompt, out.hits, &key);
            respond_json(res, 200,
                         {{"content", content}, {"filtered", true}, {"request_id", out.request_id}});
            return;
        }

        // forward (possibly redacted) to the upstream model
        messages.back().content = out.action.forward_prompt;
        UpstreamResult upstream = parts_.upstream->complete(messages);
        if (!upstream.ok) {
            metrics_.count_upstream_error();
            const ResponseTemplate& tpl = parts_.templates->select("fallback");
            std::string content;
            try {
                content = render(tpl, out.verdict, out.request_id, prompt, out.hits);
            } catch (const std::exception&) {
                metrics_.count_render_error();
                content = "Your request could not be completed. Reference " + out.request_id +
                          " has been logged.";
            }
            AuditRecord egress = base_record(out, "egress");
            egress.action = "upstream_unavailable";
            egress.template_key = "fallback";
            egress.raw_scores = ScoreVector::zero();
            egress.prior = ScoreVector::zero();
            egress.fused = ScoreVector::zero();
            egress.verdict = Verdict{};
            egress.hits.clear();
            parts_.audit->append(egress);
            respond_json(res, 200,
                         {{"content", content}, {"filtered", true}, {"request_id", out.request_id}});
            return;
        }

        // post-filter the upstream response (PII / sexual / hateful)
        AnalysisOutcome egress_out = pipeline_.filter_response(conversation_id, upstream.content);
        if (egress_out.verdict.blocked()) {
            std::string key;
            std::string content = render_safely(egress_out.verdict, out.request_id, upstream.content,
                                                egress_out.hits, &key);
            AuditRecord egress = base_record(egress_out, "egress");
            egress.request_id = out.request_id;
            egress.action = "respond:" + key;
            egress.template_key = key;
            parts_.audit->append(egress);
            metrics_.count_egress_filtered();
            for (auto c : egress_out.verdict.flagged) metrics_.count_block(c);
            respond_json(res, 200,
                         {{"content", content}, {"filtered", true}, {"request_id", out.request_id}});
            return;
        }

        respond_json(res, 200,
                     {{"content", upstream.content}, {"filtered", false}, {"request_id", out.request_id}});
    }

    void audit_internal_error(const nlohmann::json& body, const std::string&) {
        try {
            AuditRecord r;
            r.request_id = "r-error";
            r.timestamp = iso8601_utc_now();
            if (body.is_object() && body.contains("conversation_id") &&
                body.at("conversation_id").is_string()) {
                r.conversation_id = body.at("conversation_id").get<std::string>();
            }
            r.direction = "ingress";
            r.action = "internal_error";
            r.config_version = config_version_;
            parts_.audit->append(r);
        } catch (const std::exception&) {
            // auditing the fault must not mask the 500
        }
    }

    bool admin_authorized(const httplib::Request& req) const {
        if (parts_.cfg.admin_token.empty()) return true;
        return req.get_header_value("X-Admin-Token") == parts_.cfg.admin_token;
    }

    void register_admin_routes() {
        admin_server_.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
            nlohmann::json detectors;
            for (auto c : kAllCategories) {
                auto st = parts_.breaker->state(c);
                nlohmann::json d{{"status", st.enabled ? "enabled" : "disabled"},
                                 {"consecutive_failures", st.consecutive_failures}};
                if (st.disabled_at) d["disabled_at"] = *st.disabled_at;
                detectors[std::string(category_key(c))] = d;
            }
            auto set = parts_.detectors->snapshot();
            nlohmann::json lexicons;
            for (auto c : kAllCategories) {
                lexicons[std::string(category_key(c))] = set->lexicon_version(c);
            }
            respond_json(res, 200,
                         {{"status", "ok"},
                          {"config_version", config_version_},
                          {"detectors", detectors},
                          {"lexicon_versions", lexicons},
                          {"template_version", parts_.templates->version()}});
        });

        admin_server_.Get("/v1/metrics", [this](const httplib::Request&, httplib::Response& res) {
            respond_json(res, 200, metrics_.to_json(parts_.breaker->trips()));
        });

        admin_server_.Post("/admin/breaker/:detector/enable",
                           [this](const httplib::Request& req, httplib::Response& res) {
                               if (!admin_authorized(req)) {
                                   respond_json(res, 403, {{"error", "admin token required"}});
                                   return;
                               }
                               auto category = category_from_key(req.path_params.at("detector"));
                               if (!category) {
                                   respond_json(res, 404, {{"error", "unknown detector"}});
                                   return;
                               }
                               bool changed = parts_.breaker->reenable(*category);
                               respond_json(res, 200,
                                            {{"detector", std::string(category_key(*category))},
                                             {"reenabled", changed}});
                           });
    }

    GatewayParts parts_;
    Pipeline pipeline_;
    Metrics metrics_;
    std::string config_version_;
    httplib::Server public_server_;
    httplib::Server admin_server_;
    std::thread public_thread_;
    std::thread admin_thread_;
    int public_port_ = -1;
    int admin_port_ = -1;
};

} // namespace ethosgate
