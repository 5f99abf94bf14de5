#pragma once

#include <chrono>
#include <deque>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ethosgate/core.hpp"

// Per-conversation state: the last k turn signatures, a carried prior
// decayed once per turn, and the sequence-prior table mapping recent
// signature sequences to preliminary per-category attack probabilities.

namespace ethosgate {

// Canonical serialization of the categories whose per-prompt score reached
// tau_low, in priority order; "∅" when none.
inline std::string make_turn_signature(const ScoreVector& scores, double tau_low) {
    std::string sig;
    for (auto c : kAllCategories) {
        if (scores.get(c) >= tau_low) {
            if (!sig.empty()) sig += "+";
            sig += category_code(c);
        }
    }
    return sig.empty() ? std::string("∅") : sig;
}

struct Turn {
    std::string signature;
    long long at = 0;  // unix seconds

    bool operator==(const Turn&) const = default;
};

struct ConversationContext {
    std::string conversation_id;
    std::deque<Turn> turns;  // oldest first, bounded at the window size
    ScoreVector carried_prior;
    long long last_updated = 0;  // unix seconds
    std::uint64_t total_turns = 0;

    bool operator==(const ConversationContext&) const = default;
};

// Lookup key: the retained signatures joined oldest-first with '|'.
// Empty history yields the empty key (always a table miss).
inline std::string sequence_key(const ConversationContext& ctx) {
    std::string key;
    for (const auto& turn : ctx.turns) {
        if (!key.empty()) key += "|";
        key += turn.signature;
    }
    return key;
}

class SequencePriorTable {
public:
    SequencePriorTable() = default;

    // Absent keys read as the zero prior.
    ScoreVector lookup(const std::string& key) const {
        auto it = entries_.find(key);
        return it == entries_.end() ? ScoreVector::zero() : it->second;
    }

    void put(const std::string& key, const ScoreVector& priors) { entries_[key] = priors; }

    // prior <- max(prior, candidate), per category. Never lowers suspicion.
    void raise(const std::string& key, ThreatCategory c, double candidate) {
        if (!(candidate >= 0.0 && candidate <= 1.0)) {
            throw ContractViolation("SequencePriorTable: prior must be in [0,1]");
        }
        ScoreVector v = lookup(key);
        if (candidate > v.get(c)) {
            v.set(c, candidate);
            entries_[key] = v;
        }
    }

    std::size_t size() const { return entries_.size(); }
    int version() const { return version_; }
    void set_version(int v) { version_ = v; }

    nlohmann::json serialize() const {
        nlohmann::json doc = nlohmann::json::object();
        for (const auto& [key, v] : entries_) {
            nlohmann::json cats = nlohmann::json::object();
            for (auto c : kAllCategories) {
                if (v.get(c) > 0.0) cats[std::string(category_key(c))] = v.get(c);
            }
            doc[key] = cats;
        }
        return doc;
    }

    static SequencePriorTable parse(const nlohmann::json& doc, int version) {
        if (!doc.is_object()) throw ConfigError("priors.path", "prior table must be a JSON object");
        SequencePriorTable table;
        table.version_ = version;
        for (auto it = doc.begin(); it != doc.end(); ++it) {
            if (!it.value().is_object()) {
                throw ConfigError("priors.path", "prior entry for key \"" + it.key() + "\" must be an object");
            }
            ScoreVector v;
            for (auto jt = it.value().begin(); jt != it.value().end(); ++jt) {
                auto c = category_from_key(jt.key());
                if (!c) throw ConfigError("priors.path", "unknown category: " + jt.key());
                if (!jt.value().is_number()) throw ConfigError("priors.path", "prior must be a number");
                double p = jt.value().get<double>();
                if (!(p >= 0.0 && p <= 1.0)) {
                    throw ConfigError("priors.path", "prior out of [0,1] for key \"" + it.key() + "\"");
                }
                v.set(*c, p);
            }
            table.entries_[it.key()] = v;
        }
        return table;
    }

    static SequencePriorTable load_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("priors.path", "cannot open prior table: " + path);
        std::stringstream buf;
        buf << in.rdbuf();
        nlohmann::json doc = nlohmann::json::parse(buf.str(), nullptr, false);
        if (doc.is_discarded()) throw ConfigError("priors.path", "prior table is not valid JSON");
        int version = 1;
        auto vpos = path.rfind(".v");
        if (vpos != std::string::npos) {
            auto tail = path.substr(vpos + 2);
            auto dot = tail.find('.');
            if (dot != std::string::npos) {
                try {
                    version = std::stoi(tail.substr(0, dot));
                } catch (...) {
                }
            }
        }
        return parse(doc, version);
    }

private:
    std::unordered_map<std::string, ScoreVector> entries_;
    int version_ = 1;
};

// prior_c = noisy_or(table[current key]_c, decay * carried_prior_c).
inline ScoreVector compute_prior(const ConversationContext& ctx, const SequencePriorTable& table,
                                 double decay) {
    ScoreVector table_prior = table.lookup(sequence_key(ctx));
    ScoreVector prior;
    for (auto c : kAllCategories) {
        prior.set(c, noisy_or(table_prior.get(c), decay * ctx.carried_prior.get(c)));
    }
    return prior;
}

// Appends the turn signature derived from the raw scores, replaces the
// carried prior with the fused vector, evicts beyond the window.
inline void update_context(ConversationContext& ctx, const ScoreVector& raw_scores,
                           const ScoreVector& fused, double tau_low, int window,
                           long long now_seconds) {
    ctx.turns.push_back({make_turn_signature(raw_scores, tau_low), now_seconds});
    while (ctx.turns.size() > static_cast<std::size_t>(window)) ctx.turns.pop_front();
    ctx.carried_prior = fused;
    ctx.last_updated = now_seconds;
    ctx.total_turns += 1;
}

// Context persistence. get() of an unknown or expired id returns a fresh
// context; put() overwrites. Implementations may fail (backend down); the
// pipeline degrades to a fresh context and records the degradation.
class ContextStore {
public:
    virtual ~ContextStore() = default;
    virtual ConversationContext get(const std::string& conversation_id) = 0;
    virtual void put(const ConversationContext& ctx) = 0;
};

class InMemoryContextStore : public ContextStore {
public:
    using Clock = std::function<long long()>;

    explicit InMemoryContextStore(long ttl_seconds = 86400, Clock clock = default_clock)
        : ttl_seconds_(ttl_seconds), clock_(std::move(clock)) {}

    ConversationContext get(const std::string& conversation_id) override {
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = contexts_.find(conversation_id);
        long long now = clock_();
        if (it == contexts_.end() || now - it->second.last_updated > ttl_seconds_) {
            ConversationContext fresh;
            fresh.conversation_id = conversation_id;
            fresh.last_updated = now;
            return fresh;
        }
        return it->second;
    }

    void put(const ConversationContext& ctx) override {
        std::lock_guard<std::mutex> lock(mutex_);
        contexts_[ctx.conversation_id] = ctx;
        // opportunistic eviction keeps the map bounded on long runs
        if (contexts_.size() > 4096) {
            long long now = clock_();
            for (auto it = contexts_.begin(); it != contexts_.end();) {
                if (now - it->second.last_updated > ttl_seconds_) it = contexts_.erase(it);
                else ++it;
            }
        }
    }

    std::size_t size() const {
        std::lock_guard<std::mutex> lock(mutex_);
        return contexts_.size();
    }

    static long long default_clock() { return unix_now_seconds(); }

private:
    mutable std::mutex mutex_;
    std::unordered_map<std::string, ConversationContext> contexts_;
    long ttl_seconds_;
    Clock clock_;
};

// Serializes pipeline turns per conversation: the guard for a given id must
// be held across the read-modify-write of that conversation's context.
class ConversationLocks {
public:
    std::shared_ptr<std::mutex> acquire(const std::string& conversation_id) {
        std::lock_guard<std::mutex> lock(mutex_);
        auto& slot = locks_[conversation_id];
        if (!slot) slot = std::make_shared<std::mutex>();
        return slot;
    }

private:
    std::mutex mutex_;
    std::unordered_map<std::string, std::shared_ptr<std::mutex>> locks_;
};

} // namespace ethosgate
