#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

// Core domain types shared by every EthosGate module: the five threat
// categories, per-category score vectors, feature hits, verdicts, and the
// score algebra (weight-sum calibration + noisy-OR fusion).

namespace ethosgate {

enum class ThreatCategory : int {
    PromptInjection = 0,
    Jailbreak = 1,
    PiiExposure = 2,
    SexualContent = 3,
    HatefulContent = 4,
};

inline constexpr std::size_t kCategoryCount = 5;

// Fixed priority order: systemic-compromise categories outrank content
// categories. Index order of the enum doubles as priority (0 = highest).
inline constexpr std::array<ThreatCategory, kCategoryCount> kAllCategories = {
    ThreatCategory::PromptInjection, ThreatCategory::Jailbreak,
    ThreatCategory::PiiExposure,     ThreatCategory::SexualContent,
    ThreatCategory::HatefulContent,
};

inline constexpr std::size_t category_index(ThreatCategory c) {
    return static_cast<std::size_t>(c);
}

// Short config/JSON key, e.g. "injection". Stable wire identifiers.
inline std::string_view category_key(ThreatCategory c) {
    switch (c) {
    case ThreatCategory::PromptInjection: return "injection";
    case ThreatCategory::Jailbreak:       return "jailbreak";
    case ThreatCategory::PiiExposure:     return "pii";
    case ThreatCategory::SexualContent:   return "sexual";
    case ThreatCategory::HatefulContent:  return "hate";
    }
    return "unknown";
}

// Human-readable name used when rendering {categories} in templates.
inline std::string_view category_human_name(ThreatCategory c) {
    switch (c) {
    case ThreatCategory::PromptInjection: return "prompt injection";
    case ThreatCategory::Jailbreak:       return "jailbreak";
    case ThreatCategory::PiiExposure:     return "personal data exposure";
    // wording must never collide with shipped lexicon phrases (no-echo rule)
    case ThreatCategory::SexualContent:   return "sexual content";
    case ThreatCategory::HatefulContent:  return "hateful content";
    }
    return "unknown";
}

// Three-letter code used in turn signatures.
inline std::string_view category_code(ThreatCategory c) {
    switch (c) {
    case ThreatCategory::PromptInjection: return "INJ";
    case ThreatCategory::Jailbreak:       return "JBK";
    case ThreatCategory::PiiExposure:     return "PII";
    case ThreatCategory::SexualContent:   return "SEX";
    case ThreatCategory::HatefulContent:  return "HAT";
    }
    return "UNK";
}

inline std::optional<ThreatCategory> category_from_key(std::string_view key) {
    for (auto c : kAllCategories) {
        if (category_key(c) == key) return c;
    }
    return std::nullopt;
}

inline long long unix_now_seconds() {
    return std::chrono::duration_cast<std::chrono::seconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

// Thrown when a caller breaks a documented precondition (bad probability,
// invalid span, negative weight).
class ContractViolation : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Thrown by configuration / lexicon / template loading; carries the
// offending key or file so operators can fix the document.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key, const std::string& what)
        : std::runtime_error(key + ": " + what), key_(std::move(key)) {}
    const std::string& key() const { return key_; }

private:
    std::string key_;
};

// A detector that cannot run (lexicon missing, backing resource gone).
// Caught by the pipeline and reported to the circuit breaker.
class DetectorUnavailable : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Calibration map from a nonnegative evidence weight sum to a probability:
// 1 - exp(-s). Monotone, zero at zero, bounded below 1. Saturating sums
// (s > ~36, where 1 - exp(-s) rounds to 1.0 in double) are capped one ulp
// below 1 to keep the codomain open.
inline double score_from_weight_sum(double weight_sum) {
    if (!std::isfinite(weight_sum) || weight_sum < 0.0) {
        throw ContractViolation("score_from_weight_sum: weight sum must be finite and >= 0");
    }
    double p = -std::expm1(-weight_sum);
    return p < 1.0 ? p : std::nextafter(1.0, 0.0);
}

// Noisy-OR fusion: 1 - (1-p)(1-q). Commutative, never below max(p, q).
// Zero is the exact identity.
inline double noisy_or(double p, double q) {
    if (!(p >= 0.0 && p <= 1.0) || !(q >= 0.0 && q <= 1.0)) {
        throw ContractViolation("noisy_or: inputs must be probabilities in [0,1]");
    }
    if (q == 0.0) return p;
    if (p == 0.0) return q;
    return 1.0 - (1.0 - p) * (1.0 - q);
}

// Five probabilities, one per category, keyed by ThreatCategory.
class ScoreVector {
public:
    ScoreVector() = default;

    static ScoreVector zero() { return ScoreVector{}; }

    double get(ThreatCategory c) const { return values_[category_index(c)]; }

    void set(ThreatCategory c, double p) {
        if (!(p >= 0.0 && p <= 1.0) || !std::isfinite(p)) {
            throw ContractViolation(std::string("ScoreVector: component out of [0,1] for ") +
                                    std::string(category_key(c)));
        }
        values_[category_index(c)] = p;
    }

    double max_component() const {
        double m = 0.0;
        for (double v : values_) m = std::max(m, v);
        return m;
    }

    bool operator==(const ScoreVector& o) const { return values_ == o.values_; }

private:
    std::array<double, kCategoryCount> values_{};
};

// One piece of matched evidence: which detector produced it, which lexicon
// feature fired, and where in the prompt ([begin, end) byte offsets).
struct FeatureHit {
    ThreatCategory detector;
    std::string feature_id;
    std::size_t begin = 0;
    std::size_t end = 0;
    double weight = 0.0;

    bool operator==(const FeatureHit&) const = default;
};

inline void check_hit_spans(const std::vector<FeatureHit>& hits, std::size_t text_size) {
    for (const auto& h : hits) {
        if (h.begin >= h.end || h.end > text_size) {
            throw ContractViolation("FeatureHit: span [" + std::to_string(h.begin) + "," +
                                    std::to_string(h.end) + ") invalid for text of size " +
                                    std::to_string(text_size));
        }
        if (!(h.weight >= 0.0) || !std::isfinite(h.weight)) {
            throw ContractViolation("FeatureHit: weight must be finite and >= 0");
        }
    }
}

// Redaction marker kind for a hit. Structural PII features keep their
// scanner type ("pii.card" -> "CARD"); every other feature maps to its
// detector category so markers never spell lexicon terms back out (the
// marker text must not trigger any detector).
inline std::string hit_kind(const FeatureHit& hit) {
    static constexpr std::array<std::string_view, 5> structural = {
        "pii.card", "pii.ssn", "pii.email", "pii.phone", "pii.ip"};
    std::string kind;
    if (std::find(structural.begin(), structural.end(), hit.feature_id) != structural.end()) {
        kind = hit.feature_id.substr(4);
    } else {
        kind = std::string(category_key(hit.detector));
    }
    for (auto& ch : kind) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    return kind;
}

struct Verdict {
    enum class Kind { Allow, Block };

    Kind kind = Kind::Allow;
    std::vector<ThreatCategory> flagged;    // priority order, empty iff Allow
    std::optional<ThreatCategory> primary;  // present iff Block
    ScoreVector scores;                     // post-fusion

    bool blocked() const { return kind == Kind::Block; }
    bool combined() const { return flagged.size() >= 2; }

    bool operator==(const Verdict&) const = default;
};

} // namespace ethosgate
