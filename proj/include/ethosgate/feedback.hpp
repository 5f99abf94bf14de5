#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ethosgate/audit.hpp"
#include "ethosgate/config.hpp"
#include "ethosgate/context.hpp"
#include "ethosgate/detectors.hpp"
#include "ethosgate/pipeline.hpp"

// Human feedback loop: the review queue, multiplicative lexicon-weight
// refinement from true/false-positive labels, and sequence-prior table
// growth from confirmed multi-turn episodes. All writes are versioned
// files; nothing is mutated in place.

namespace ethosgate {

class FeedbackError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ReviewItem {
    std::string request_id;
    std::string timestamp;
    std::string conversation_id;
    std::string status = "pending";  // "pending" | "labeled"
    std::string verdict_kind;        // "allow" | "block"
    std::vector<std::string> flagged;

    nlohmann::json to_json() const {
        return nlohmann::json{{"request_id", request_id}, {"timestamp", timestamp},
                              {"conversation_id", conversation_id}, {"status", status},
                              {"verdict", verdict_kind}, {"flagged", flagged}};
    }

    static ReviewItem from_json(const nlohmann::json& doc) {
        ReviewItem item;
        item.request_id = doc.at("request_id").get<std::string>();
        item.timestamp = doc.value("timestamp", "");
        item.conversation_id = doc.value("conversation_id", "");
        item.status = doc.value("status", "pending");
        item.verdict_kind = doc.value("verdict", "");
        if (doc.contains("flagged")) {
            for (const auto& f : doc.at("flagged")) item.flagged.push_back(f.get<std::string>());
        }
        return item;
    }
};

// Block verdicts and Allow-with-hits records need review; clean allows
// do not.
inline bool needs_review(const AuditRecord& record) {
    if (record.direction != "ingress") return false;
    if (record.verdict.blocked()) return true;
    return !record.hits.empty();
}

inline double apply_weight_update(double weight, bool true_positive, double eta, double w_max) {
    double updated = weight * (true_positive ? 1.0 + eta : 1.0 - eta);
    return std::clamp(updated, 0.0, w_max);
}

class FeedbackService {
public:
    FeedbackService(PolicyConfig cfg, std::array<Lexicon, kCategoryCount> lexicons,
                    SequencePriorTable priors, std::shared_ptr<DetectorHub> detector_hub,
                    std::shared_ptr<PriorTableHub> prior_hub, std::shared_ptr<AuditLog> audit)
        : cfg_(std::move(cfg)),
          lexicons_(std::move(lexicons)),
          priors_(std::move(priors)),
          detector_hub_(std::move(detector_hub)),
          prior_hub_(std::move(prior_hub)),
          audit_(std::move(audit)) {}

    void enqueue_for_review(const AuditRecord& record) {
        if (!needs_review(record)) return;
        ReviewItem item;
        item.request_id = record.request_id;
        item.timestamp = record.timestamp;
        item.conversation_id = record.conversation_id;
        item.verdict_kind = record.verdict.blocked() ? "block" : "allow";
        for (auto c : record.verdict.flagged) item.flagged.push_back(std::string(category_key(c)));
        std::lock_guard<std::mutex> lock(mutex_);
        append_queue_line(item);
    }

    // Latest status per request_id wins; returns pending items oldest first.
    std::vector<ReviewItem> pending() const {
        std::lock_guard<std::mutex> lock(mutex_);
        std::vector<ReviewItem> items = read_queue();
        std::map<std::string, std::size_t> latest;
        for (std::size_t i = 0; i < items.size(); ++i) latest[items[i].request_id] = i;
        std::vector<ReviewItem> out;
        for (std::size_t i = 0; i < items.size(); ++i) {
            if (latest[items[i].request_id] == i && items[i].status == "pending") {
                out.push_back(items[i]);
            }
        }
        return out;
    }

    struct LabelResult {
        int features_updated = 0;
        int lexicon_version = 0;
        std::string lexicon_path;  // empty when no weight changed
    };

    // TruePositive: w *= 1+eta. FalsePositive: w *= 1-eta. Clamped to
    // [0, w_max]; a new versioned lexicon file is written and the detector
    // snapshot swapped.
    LabelResult apply_label(const std::string& request_id, ThreatCategory category,
                            bool true_positive) {
        auto record = audit_->find(request_id);
        if (!record) throw FeedbackError("unknown request_id: " + request_id);

        std::set<std::string> feature_ids;
        for (const auto& h : record->hits) {
            if (h.detector == category) feature_ids.insert(h.feature_id);
        }
        if (feature_ids.empty()) {
            throw FeedbackError("record " + request_id + " has no " +
                                std::string(category_key(category)) + " hits to label");
        }

        std::lock_guard<std::mutex> lock(mutex_);
        Lexicon& lex = lexicons_[category_index(category)];
        LabelResult result;
        for (auto& entry : lex.entries) {
            if (feature_ids.count(entry.id) == 0) continue;
            double updated = apply_weight_update(entry.weight, true_positive, cfg_.eta, cfg_.w_max);
            if (updated != entry.weight) {
                entry.weight = updated;
            }
            result.features_updated += 1;
        }
        result.lexicon_version = lex.version;
        if (result.features_updated > 0) {
            lex.version += 1;
            result.lexicon_version = lex.version;
            result.lexicon_path = write_versioned_lexicon(lex);
            if (detector_hub_) detector_hub_->swap(DetectorSet::from_lexicons(lexicons_));
        }

        ReviewItem labeled;
        labeled.request_id = request_id;
        labeled.timestamp = iso8601_utc_now();
        labeled.conversation_id = record->conversation_id;
        labeled.status = "labeled";
        labeled.verdict_kind = record->verdict.blocked() ? "block" : "allow";
        append_queue_line(labeled);
        return result;
    }

    struct EpisodeResult {
        int keys_updated = 0;
        int table_version = 0;
        std::string table_path;
    };

    // Confirmed multi-turn attack: every sequence key observed at or before
    // the confirmed turn absorbs prior = fused_confirmed * decay^distance
    // (max-merge, never lowered). Keys from empty history are skipped.
    EpisodeResult update_sequence_priors(const std::string& conversation_id,
                                         const std::string& confirmed_request_id,
                                         ThreatCategory category) {
        std::vector<AuditRecord> records = audit_->all();
        std::vector<AuditRecord> episode;
        for (const auto& r : records) {
            if (r.direction == "ingress" && r.conversation_id == conversation_id) {
                episode.push_back(r);
            }
        }
        std::ptrdiff_t confirmed = -1;
        for (std::size_t i = 0; i < episode.size(); ++i) {
            if (episode[i].request_id == confirmed_request_id) confirmed = static_cast<std::ptrdiff_t>(i);
        }
        if (confirmed < 0) {
            throw FeedbackError("request " + confirmed_request_id + " not found in conversation " +
                                conversation_id);
        }
        if (confirmed < 1) {
            throw FeedbackError("episode must span at least two turns before confirmation");
        }

        double fused_conf = episode[static_cast<std::size_t>(confirmed)].fused.get(category);
        std::lock_guard<std::mutex> lock(mutex_);
        EpisodeResult result;
        for (std::ptrdiff_t i = confirmed; i >= 0; --i) {
            const std::string& key = episode[static_cast<std::size_t>(i)].context_key;
            if (key.empty()) continue;
            double candidate = fused_conf * std::pow(cfg_.decay, static_cast<double>(confirmed - i));
            double before = priors_.lookup(key).get(category);
            priors_.raise(key, category, std::min(candidate, 1.0));
            if (priors_.lookup(key).get(category) > before) result.keys_updated += 1;
        }
        result.table_version = priors_.version();
        if (result.keys_updated > 0) {
            priors_.set_version(priors_.version() + 1);
            result.table_version = priors_.version();
            result.table_path = write_versioned_priors();
            if (prior_hub_) prior_hub_->swap(priors_);
        }
        return result;
    }

    const Lexicon& lexicon(ThreatCategory c) const { return lexicons_[category_index(c)]; }
    const SequencePriorTable& priors() const { return priors_; }

private:
    void append_queue_line(const ReviewItem& item) {
        if (cfg_.review_path.empty()) {
            memory_queue_.push_back(item);
            return;
        }
        std::ofstream out(cfg_.review_path, std::ios::app);
        if (!out) throw FeedbackError("review queue not writable: " + cfg_.review_path);
        out << item.to_json().dump() << "\n";
    }

    std::vector<ReviewItem> read_queue() const {
        if (cfg_.review_path.empty()) return memory_queue_;
        std::vector<ReviewItem> items;
        std::ifstream in(cfg_.review_path);
        if (!in) return items;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            nlohmann::json doc = nlohmann::json::parse(line, nullptr, false);
            if (doc.is_discarded()) continue;
            items.push_back(ReviewItem::from_json(doc));
        }
        return items;
    }

    std::string write_versioned_lexicon(const Lexicon& lex) {
        std::filesystem::create_directories(cfg_.feedback_state_dir);
        std::string path = cfg_.feedback_state_dir + "/lexicon-" +
                           std::string(category_key(lex.category)) + ".v" +
                           std::to_string(lex.version) + ".json";
        std::ofstream out(path);
        if (!out) throw FeedbackError("cannot write lexicon version: " + path);
        out << serialize_lexicon(lex).dump(2) << "\n";
        return path;
    }

    std::string write_versioned_priors() {
        std::filesystem::create_directories(cfg_.feedback_state_dir);
        std::string path =
            cfg_.feedback_state_dir + "/priors.v" + std::to_string(priors_.version()) + ".json";
        std::ofstream out(path);
        if (!out) throw FeedbackError("cannot write prior table version: " + path);
        out << priors_.serialize().dump(2) << "\n";
        return path;
    }

    PolicyConfig cfg_;
    std::array<Lexicon, kCategoryCount> lexicons_;
    SequencePriorTable priors_;
    std::shared_ptr<DetectorHub> detector_hub_;
    std::shared_ptr<PriorTableHub> prior_hub_;
    std::shared_ptr<AuditLog> audit_;
    mutable std::mutex mutex_;
    std::vector<ReviewItem> memory_queue_;
};

} // namespace ethosgate
