#pragma once

#include <chrono>
#include <memory>
#include <mutex>
#include <string_view>
#include <vector>

#include "ethosgate/config.hpp"
#include "ethosgate/core.hpp"
#include "ethosgate/lexicon.hpp"
#include "ethosgate/pii.hpp"

// The five per-category detectors behind one interface. All are
// deterministic: lexicon matching plus structural PII scanners. Detectors
// are read-only after construction; swapping in updated lexicons replaces
// the whole set (snapshot semantics).

namespace ethosgate {

struct DetectorReport {
    ThreatCategory category = ThreatCategory::PromptInjection;
    double score = 0.0;
    std::vector<FeatureHit> hits;
    std::chrono::microseconds elapsed{0};
};

class Detector {
public:
    virtual ~Detector() = default;
    virtual ThreatCategory category() const = 0;
    virtual DetectorReport analyze(std::string_view prompt) const = 0;
};

namespace detail {

inline DetectorReport finish_report(ThreatCategory c, std::vector<FeatureHit> hits,
                                    std::chrono::steady_clock::time_point t0) {
    double sum = 0.0;
    for (const auto& h : hits) sum += h.weight;
    DetectorReport report;
    report.category = c;
    report.score = score_from_weight_sum(sum);
    report.hits = std::move(hits);
    report.elapsed = std::chrono::duration_cast<std::chrono::microseconds>(
        std::chrono::steady_clock::now() - t0);
    return report;
}

} // namespace detail

// Lexicon-driven detector; `word_boundary` selects the phrase-matching mode
// (substring for injection/jailbreak, word-boundary for content lexicons).
class LexiconDetector : public Detector {
public:
    LexiconDetector(ThreatCategory category, std::shared_ptr<const CompiledLexicon> lexicon,
                    bool word_boundary)
        : category_(category), lexicon_(std::move(lexicon)), word_boundary_(word_boundary) {}

    ThreatCategory category() const override { return category_; }

    DetectorReport analyze(std::string_view prompt) const override {
        auto t0 = std::chrono::steady_clock::now();
        if (!lexicon_) {
            throw DetectorUnavailable(std::string(category_key(category_)) + ": lexicon not loaded");
        }
        std::vector<FeatureHit> hits;
        lexicon_->match(prompt, word_boundary_, hits);
        return detail::finish_report(category_, std::move(hits), t0);
    }

protected:
    const CompiledLexicon* lexicon() const { return lexicon_.get(); }

private:
    ThreatCategory category_;
    std::shared_ptr<const CompiledLexicon> lexicon_;
    bool word_boundary_;
};

// Structural scanners plus any extra lexicon entries. Reserved ids
// (pii.card, pii.ssn, pii.email, pii.phone, pii.ip) carry the scanner
// weights so the feedback loop can tune them like ordinary features.
class PiiDetector : public Detector {
public:
    explicit PiiDetector(std::shared_ptr<const CompiledLexicon> lexicon)
        : lexicon_(std::move(lexicon)) {}

    ThreatCategory category() const override { return ThreatCategory::PiiExposure; }

    DetectorReport analyze(std::string_view prompt) const override {
        auto t0 = std::chrono::steady_clock::now();
        if (!lexicon_) throw DetectorUnavailable("pii: lexicon not loaded");
        PiiWeights w;
        if (const auto* e = lexicon_->source().find(kPiiCardId)) w.card = e->weight;
        if (const auto* e = lexicon_->source().find(kPiiSsnId)) w.ssn = e->weight;
        if (const auto* e = lexicon_->source().find(kPiiEmailId)) w.email = e->weight;
        if (const auto* e = lexicon_->source().find(kPiiPhoneId)) w.phone = e->weight;
        if (const auto* e = lexicon_->source().find(kPiiIpId)) w.ip = e->weight;
        std::vector<FeatureHit> hits = scan_structural_pii(prompt, w);
        lexicon_->match(prompt, /*word_boundary=*/true, hits);
        return detail::finish_report(category(), std::move(hits), t0);
    }

private:
    std::shared_ptr<const CompiledLexicon> lexicon_;
};

inline constexpr double kHateCooccurWeight = 0.5;
inline constexpr std::string_view kHateCooccurId = "hate.cooccur";

// Hateful-content detector: word-boundary lexicon matching plus a
// co-occurrence bonus when a targeted-group entry (hate.group.*) and a
// slur/dehumanization entry (hate.slur.*) both fire.
class HatefulDetector : public LexiconDetector {
public:
    explicit HatefulDetector(std::shared_ptr<const CompiledLexicon> lexicon)
        : LexiconDetector(ThreatCategory::HatefulContent, std::move(lexicon), true) {}

    DetectorReport analyze(std::string_view prompt) const override {
        auto t0 = std::chrono::steady_clock::now();
        DetectorReport base = LexiconDetector::analyze(prompt);
        const FeatureHit* first_slur = nullptr;
        bool has_group = false;
        for (const auto& h : base.hits) {
            if (h.feature_id.rfind("hate.group.", 0) == 0) has_group = true;
            if (!first_slur && h.feature_id.rfind("hate.slur.", 0) == 0) first_slur = &h;
        }
        if (has_group && first_slur) {
            base.hits.push_back({ThreatCategory::HatefulContent, std::string(kHateCooccurId),
                                 first_slur->begin, first_slur->end, kHateCooccurWeight});
            double sum = 0.0;
            for (const auto& h : base.hits) sum += h.weight;
            base.score = score_from_weight_sum(sum);
        }
        base.elapsed = std::chrono::duration_cast<std::chrono::microseconds>(
            std::chrono::steady_clock::now() - t0);
        return base;
    }
};

inline std::unique_ptr<Detector> make_detector(ThreatCategory category,
                                               std::shared_ptr<const CompiledLexicon> lexicon) {
    switch (category) {
    case ThreatCategory::PromptInjection:
        return std::make_unique<LexiconDetector>(category, std::move(lexicon), false);
    case ThreatCategory::Jailbreak:
        return std::make_unique<LexiconDetector>(category, std::move(lexicon), false);
    case ThreatCategory::PiiExposure:
        return std::make_unique<PiiDetector>(std::move(lexicon));
    case ThreatCategory::SexualContent:
        return std::make_unique<LexiconDetector>(category, std::move(lexicon), true);
    case ThreatCategory::HatefulContent:
        return std::make_unique<HatefulDetector>(std::move(lexicon));
    }
    return nullptr;
}

struct DetectorHealth {
    std::array<bool, kCategoryCount> enabled{true, true, true, true, true};

    bool is_enabled(ThreatCategory c) const { return enabled[category_index(c)]; }
};

struct RunAllResult {
    ScoreVector scores;
    std::vector<FeatureHit> hits;                 // aggregated, category priority order
    std::vector<ThreatCategory> failures;         // detectors that threw this request
    std::vector<ThreatCategory> succeeded;        // detectors that ran cleanly
    std::array<std::int64_t, kCategoryCount> elapsed_us{};
};

// One immutable set of five detectors plus the lexicon versions they were
// built from. run_all never throws on detector failure: the failed category
// gets the configured fallback score and is reported for breaker accounting.
class DetectorSet {
public:
    DetectorSet(std::array<std::unique_ptr<Detector>, kCategoryCount> detectors,
                std::array<int, kCategoryCount> lexicon_versions)
        : detectors_(std::move(detectors)), lexicon_versions_(lexicon_versions) {}

    static std::shared_ptr<DetectorSet> from_lexicons(
        const std::array<Lexicon, kCategoryCount>& lexicons) {
        std::array<std::unique_ptr<Detector>, kCategoryCount> ds;
        std::array<int, kCategoryCount> versions{};
        for (auto c : kAllCategories) {
            auto compiled = std::make_shared<const CompiledLexicon>(lexicons[category_index(c)]);
            versions[category_index(c)] = compiled->version();
            ds[category_index(c)] = make_detector(c, std::move(compiled));
        }
        return std::make_shared<DetectorSet>(std::move(ds), versions);
    }

    const Detector& detector(ThreatCategory c) const { return *detectors_[category_index(c)]; }

    int lexicon_version(ThreatCategory c) const { return lexicon_versions_[category_index(c)]; }

    // Test seam: replace one detector (fault injection, model-backed slots).
    void replace(ThreatCategory c, std::unique_ptr<Detector> d) {
        detectors_[category_index(c)] = std::move(d);
    }

    RunAllResult run_all(std::string_view prompt, const DetectorHealth& health,
                         BreakerFallback fallback) const {
        RunAllResult result;
        double disabled_score = fallback == BreakerFallback::FailClosed ? 1.0 : 0.0;
        for (auto c : kAllCategories) {
            if (!health.is_enabled(c)) {
                result.scores.set(c, disabled_score);
                continue;
            }
            try {
                DetectorReport report = detectors_[category_index(c)]->analyze(prompt);
                result.scores.set(c, report.score);
                result.elapsed_us[category_index(c)] = report.elapsed.count();
                for (auto& h : report.hits) result.hits.push_back(std::move(h));
                result.succeeded.push_back(c);
            } catch (const std::exception&) {
                // contained: this category degrades to the fallback score
                result.scores.set(c, disabled_score);
                result.failures.push_back(c);
            }
        }
        return result;
    }

private:
    std::array<std::unique_ptr<Detector>, kCategoryCount> detectors_;
    std::array<int, kCategoryCount> lexicon_versions_;
};

// Mutable holder handing out immutable snapshots; feedback swaps in a new
// set after writing a versioned lexicon.
class DetectorHub {
public:
    explicit DetectorHub(std::shared_ptr<const DetectorSet> initial) : current_(std::move(initial)) {}

    std::shared_ptr<const DetectorSet> snapshot() const {
        std::lock_guard<std::mutex> lock(mutex_);
        return current_;
    }

    void swap(std::shared_ptr<const DetectorSet> next) {
        std::lock_guard<std::mutex> lock(mutex_);
        current_ = std::move(next);
    }

private:
    mutable std::mutex mutex_;
    std::shared_ptr<const DetectorSet> current_;
};

// Loads the five lexicons from config paths, falling back to builtin seeds.
inline std::array<Lexicon, kCategoryCount> load_lexicons(const PolicyConfig& cfg) {
    std::array<Lexicon, kCategoryCount> out;
    for (auto c : kAllCategories) {
        const std::string& path = cfg.lexicon_paths[category_index(c)];
        out[category_index(c)] = path.empty() ? builtin_lexicon(c) : load_lexicon_file(c, path);
    }
    return out;
}

} // namespace ethosgate
