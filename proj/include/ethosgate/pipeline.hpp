#pragma once

#include <chrono>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "ethosgate/audit.hpp"
#include "ethosgate/breaker.hpp"
#include "ethosgate/config.hpp"
#include "ethosgate/context.hpp"
#include "ethosgate/core.hpp"
#include "ethosgate/decision.hpp"
#include "ethosgate/detectors.hpp"
#include "ethosgate/templates.hpp"
#include "ethosgate/wire.hpp"

// End-to-end prompt analysis: detectors -> conversation prior -> fusion ->
// verdict -> action, with per-conversation serialization and breaker
// accounting. The gateway and the CLI share this path so both produce the
// same analysis document for the same inputs and state.

namespace ethosgate {

struct AnalysisOutcome {
    std::string request_id;
    std::string conversation_id;
    ScoreVector raw_scores;
    ScoreVector prior;
    ScoreVector fused;
    Verdict verdict;
    Action action;
    std::vector<FeatureHit> hits;
    std::array<bool, kCategoryCount> detector_enabled{true, true, true, true, true};
    std::vector<ThreatCategory> detector_failures;
    bool context_degraded = false;
    std::string context_key;
    std::string turn_signature;
    double latency_ms = 0.0;
};

// Mutable holder for the sequence-prior table (snapshot-swapped by feedback).
class PriorTableHub {
public:
    explicit PriorTableHub(SequencePriorTable table)
        : current_(std::make_shared<const SequencePriorTable>(std::move(table))) {}

    std::shared_ptr<const SequencePriorTable> snapshot() const {
        std::lock_guard<std::mutex> lock(mutex_);
        return current_;
    }

    void swap(SequencePriorTable next) {
        std::lock_guard<std::mutex> lock(mutex_);
        current_ = std::make_shared<const SequencePriorTable>(std::move(next));
    }

private:
    mutable std::mutex mutex_;
    std::shared_ptr<const SequencePriorTable> current_;
};

class Pipeline {
public:
    Pipeline(PolicyConfig cfg, std::shared_ptr<DetectorHub> detectors,
             std::shared_ptr<PriorTableHub> priors, std::shared_ptr<ContextStore> store,
             std::shared_ptr<DetectorBreaker> breaker)
        : cfg_(std::move(cfg)),
          detectors_(std::move(detectors)),
          priors_(std::move(priors)),
          store_(std::move(store)),
          breaker_(std::move(breaker)) {}

    const PolicyConfig& config() const { return cfg_; }

    AnalysisOutcome analyze(const std::string& conversation_id, const std::string& prompt) {
        auto t0 = std::chrono::steady_clock::now();
        AnalysisOutcome out;
        out.conversation_id = conversation_id;

        auto detector_set = detectors_->snapshot();
        DetectorHealth health = breaker_->health();
        out.detector_enabled = health.enabled;

        RunAllResult run = detector_set->run_all(prompt, health, cfg_.breaker_fallback);
        out.raw_scores = run.scores;
        out.hits = std::move(run.hits);
        out.detector_failures = run.failures;
        for (auto c : run.succeeded) breaker_->record(c, true);
        for (auto c : run.failures) breaker_->record(c, false);

        auto prior_table = priors_->snapshot();

        // per-conversation critical section: context read-modify-write
        auto guard = locks_.acquire(conversation_id);
        {
            std::lock_guard<std::mutex> conversation_lock(*guard);
            ConversationContext ctx;
            bool store_ok = true;
            try {
                ctx = store_->get(conversation_id);
            } catch (const std::exception&) {
                store_ok = false;
                ctx = ConversationContext{};
                ctx.conversation_id = conversation_id;
            }
            out.context_degraded = !store_ok;
            out.context_key = sequence_key(ctx);
            out.prior = compute_prior(ctx, *prior_table, cfg_.decay);
            out.fused = fuse(out.raw_scores, out.prior);
            out.verdict = decide(out.fused, cfg_);
            out.request_id = derive_request_id(conversation_id, ctx.total_turns, prompt);
            update_context(ctx, out.raw_scores, out.fused, cfg_.tau_low, cfg_.context_window,
                           unix_now_seconds());
            out.turn_signature = ctx.turns.back().signature;
            if (store_ok) {
                try {
                    store_->put(ctx);
                } catch (const std::exception&) {
                    out.context_degraded = true;
                }
            }
        }

        out.action = map_action(out.verdict, prompt, out.hits);
        out.latency_ms = std::chrono::duration<double, std::milli>(
                             std::chrono::steady_clock::now() - t0)
                             .count();
        return out;
    }

    // Egress filtering of an upstream response: PII / sexual / hateful
    // detectors only, raw scores against the same thresholds, no priors.
    AnalysisOutcome filter_response(const std::string& conversation_id, const std::string& text) {
        auto t0 = std::chrono::steady_clock::now();
        AnalysisOutcome out;
        out.conversation_id = conversation_id;

        auto detector_set = detectors_->snapshot();
        DetectorHealth health = breaker_->health();
        health.enabled[category_index(ThreatCategory::PromptInjection)] = false;
        health.enabled[category_index(ThreatCategory::Jailbreak)] = false;
        out.detector_enabled = breaker_->health().enabled;

        // injection/jailbreak are ingress-only; force score 0 regardless of
        // the configured fallback mode
        RunAllResult run = detector_set->run_all(text, health, cfg_.breaker_fallback);
        if (cfg_.breaker_fallback == BreakerFallback::FailClosed) {
            run.scores.set(ThreatCategory::PromptInjection, 0.0);
            run.scores.set(ThreatCategory::Jailbreak, 0.0);
        }
        out.raw_scores = run.scores;
        out.hits = std::move(run.hits);
        out.detector_failures = run.failures;
        for (auto c : run.succeeded) breaker_->record(c, true);
        for (auto c : run.failures) breaker_->record(c, false);

        out.prior = ScoreVector::zero();
        out.fused = out.raw_scores;
        out.verdict = decide(out.fused, cfg_);
        out.action = map_action(out.verdict, text, out.hits);
        out.latency_ms = std::chrono::duration<double, std::milli>(
                             std::chrono::steady_clock::now() - t0)
                             .count();
        return out;
    }

private:
    PolicyConfig cfg_;
    std::shared_ptr<DetectorHub> detectors_;
    std::shared_ptr<PriorTableHub> priors_;
    std::shared_ptr<ContextStore> store_;
    std::shared_ptr<DetectorBreaker> breaker_;
    ConversationLocks locks_;
};

inline AuditRecord make_audit_record(const AnalysisOutcome& out, const std::string& direction) {
    AuditRecord r;
    r.request_id = out.request_id;
    r.timestamp = iso8601_utc_now();
    r.conversation_id = out.conversation_id;
    r.direction = direction;
    r.raw_scores = out.raw_scores;
    r.prior = out.prior;
    r.fused = out.fused;
    r.verdict = out.verdict;
    r.hits = out.hits;
    r.detector_enabled = out.detector_enabled;
    r.latency_ms = out.latency_ms;
    r.context_key = out.context_key;
    r.turn_signature = out.turn_signature;
    r.context_degraded = out.context_degraded;
    if (out.action.kind == Action::Kind::Respond) {
        r.action = "respond:" + out.action.template_key;
        r.template_key = out.action.template_key;
    } else {
        r.action = out.action.redacted ? "forward_redacted" : "forward";
    }
    return r;
}

// The analysis document served by POST /v1/analyze and printed by the CLI
// `analyze` command. Field-identical across both surfaces.
inline nlohmann::json analysis_document(const AnalysisOutcome& out) {
    nlohmann::json action;
    if (out.action.kind == Action::Kind::Forward) {
        action = {{"kind", "forward"}, {"redacted", out.action.redacted}};
    } else {
        action = {{"kind", "respond"}, {"template", out.action.template_key}};
    }
    nlohmann::json detectors;
    for (auto c : kAllCategories) {
        detectors[std::string(category_key(c))] =
            out.detector_enabled[category_index(c)] ? "enabled" : "disabled";
    }
    return nlohmann::json{
        {"request_id", out.request_id},
        {"conversation_id", out.conversation_id},
        {"scores", score_vector_to_json(out.raw_scores)},
        {"prior", score_vector_to_json(out.prior)},
        {"fused", score_vector_to_json(out.fused)},
        {"verdict", verdict_to_json(out.verdict)},
        {"action", action},
        {"hits", hits_to_json(out.hits)},
        {"detectors", detectors},
        {"context", {{"key", out.context_key}, {"signature", out.turn_signature},
                     {"degraded", out.context_degraded}}},
    };
}

} // namespace ethosgate
