#pragma once

#include <string>
#include <vector>

#include "ethosgate/config.hpp"
#include "ethosgate/core.hpp"
#include "ethosgate/templates.hpp"

// Score fusion, thresholding, and verdict-to-action mapping. Pure functions
// over immutable snapshots.

namespace ethosgate {

// Componentwise noisy-OR of per-prompt scores with the conversation prior.
inline ScoreVector fuse(const ScoreVector& scores, const ScoreVector& prior) {
    ScoreVector fused;
    for (auto c : kAllCategories) {
        fused.set(c, noisy_or(scores.get(c), prior.get(c)));
    }
    return fused;
}

// flagged = { c : fused_c >= tau_c } in priority order; empty => Allow.
// primary = argmax fused over flagged, ties broken by priority order.
inline Verdict decide(const ScoreVector& fused, const PolicyConfig& cfg) {
    Verdict v;
    v.scores = fused;
    for (auto c : kAllCategories) {
        if (fused.get(c) >= cfg.threshold(c)) v.flagged.push_back(c);
    }
    if (v.flagged.empty()) {
        v.kind = Verdict::Kind::Allow;
        return v;
    }
    v.kind = Verdict::Kind::Block;
    ThreatCategory best = v.flagged.front();
    for (auto c : v.flagged) {
        if (fused.get(c) > fused.get(best)) best = c;  // strict: ties keep priority order
    }
    v.primary = best;
    return v;
}

struct Action {
    enum class Kind { Forward, Respond };

    Kind kind = Kind::Forward;
    std::string forward_prompt;  // Forward only; PII pre-redacted when hits exist
    bool redacted = false;
    std::string template_key;  // Respond only

    bool operator==(const Action&) const = default;
};

inline std::string template_key_for(const Verdict& verdict) {
    if (verdict.combined()) return "combined";
    return std::string(category_key(*verdict.primary));
}

// Allow => Forward, with outbound PII redaction whenever any PII hit exists
// (even below threshold). Block => Respond with the selected template key.
inline Action map_action(const Verdict& verdict, const std::string& prompt,
                         const std::vector<FeatureHit>& hits) {
    Action action;
    if (verdict.blocked()) {
        action.kind = Action::Kind::Respond;
        action.template_key = template_key_for(verdict);
        return action;
    }
    action.kind = Action::Kind::Forward;
    std::vector<FeatureHit> pii_hits;
    for (const auto& h : hits) {
        if (h.detector == ThreatCategory::PiiExposure) pii_hits.push_back(h);
    }
    if (pii_hits.empty()) {
        action.forward_prompt = prompt;
    } else {
        action.forward_prompt = redact(prompt, pii_hits);
        action.redacted = action.forward_prompt != prompt;
    }
    return action;
}

} // namespace ethosgate
