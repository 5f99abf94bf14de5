#pragma once

#include <array>
#include <functional>
#include <mutex>
#include <optional>

#include "ethosgate/core.hpp"
#include "ethosgate/detectors.hpp"

// Per-detector circuit breaker: N consecutive failures auto-disable a
// detector; any success resets the count. Re-enable is manual only (admin
// endpoint / CLI), there is no time-based half-open state.

namespace ethosgate {

struct BreakerDetectorState {
    int consecutive_failures = 0;
    bool enabled = true;
    std::optional<long long> disabled_at;  // unix seconds

    bool operator==(const BreakerDetectorState&) const = default;
};

class DetectorBreaker {
public:
    using Clock = std::function<long long()>;

    explicit DetectorBreaker(int trip_count, Clock clock = unix_now_seconds)
        : trip_count_(trip_count), clock_(std::move(clock)) {
        if (trip_count < 1) throw ContractViolation("DetectorBreaker: trip count must be >= 1");
    }

    BreakerDetectorState record(ThreatCategory c, bool success) {
        std::lock_guard<std::mutex> lock(mutex_);
        auto& st = states_[category_index(c)];
        if (success) {
            st.consecutive_failures = 0;
        } else {
            st.consecutive_failures += 1;
            if (st.enabled && st.consecutive_failures >= trip_count_) {
                st.enabled = false;
                st.disabled_at = clock_();
                trips_ += 1;
            }
        }
        return st;
    }

    // Manual re-enable; returns false when the detector was not disabled.
    bool reenable(ThreatCategory c) {
        std::lock_guard<std::mutex> lock(mutex_);
        auto& st = states_[category_index(c)];
        if (st.enabled) return false;
        st = BreakerDetectorState{};
        return true;
    }

    BreakerDetectorState state(ThreatCategory c) const {
        std::lock_guard<std::mutex> lock(mutex_);
        return states_[category_index(c)];
    }

    DetectorHealth health() const {
        std::lock_guard<std::mutex> lock(mutex_);
        DetectorHealth h;
        for (auto c : kAllCategories) h.enabled[category_index(c)] = states_[category_index(c)].enabled;
        return h;
    }

    long trips() const {
        std::lock_guard<std::mutex> lock(mutex_);
        return trips_;
    }

private:
    mutable std::mutex mutex_;
    std::array<BreakerDetectorState, kCategoryCount> states_{};
    int trip_count_;
    long trips_ = 0;
    Clock clock_;
};

} // namespace ethosgate
