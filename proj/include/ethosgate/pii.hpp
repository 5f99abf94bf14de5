#pragma once

#include <array>
#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ethosgate/core.hpp"

// Structural PII scanners: payment cards (Luhn-checked digit runs), SSNs,
// North-American phone numbers, email addresses, IPv4 addresses. Each match
// becomes one FeatureHit; weights come from reserved ids in the PII lexicon.

namespace ethosgate {

inline constexpr std::string_view kPiiCardId = "pii.card";
inline constexpr std::string_view kPiiSsnId = "pii.ssn";
inline constexpr std::string_view kPiiEmailId = "pii.email";
inline constexpr std::string_view kPiiPhoneId = "pii.phone";
inline constexpr std::string_view kPiiIpId = "pii.ip";

// Mod-10 checksum over the digits of `s`, ignoring separators. False when
// no digit is present.
inline bool luhn_valid(std::string_view s) {
    // doubled-digit lookup: (2d)/10 + (2d)%10
    static constexpr std::array<int, 10> doubled = {0, 2, 4, 6, 8, 1, 3, 5, 7, 9};
    int sum = 0;
    bool second = false;
    bool any = false;
    for (std::size_t i = s.size(); i > 0; --i) {
        char c = s[i - 1];
        if (!std::isdigit(static_cast<unsigned char>(c))) continue;
        any = true;
        int d = c - '0';
        sum += second ? doubled[d] : d;
        second = !second;
    }
    return any && sum % 10 == 0;
}

namespace detail {

inline bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

inline bool digit_adjacent(std::string_view text, std::size_t begin, std::size_t end) {
    if (begin > 0 && is_digit(text[begin - 1])) return true;
    if (end < text.size() && is_digit(text[end])) return true;
    return false;
}

inline bool overlaps_any(const std::vector<FeatureHit>& hits, std::size_t begin, std::size_t end) {
    for (const auto& h : hits) {
        if (begin < h.end && h.begin < end) return true;
    }
    return false;
}

struct RawSpan {
    std::size_t begin;
    std::size_t end;
};

// Maximal runs of digits with space/dash separators, trimmed to digits at
// both ends; `digits` collects the digit characters only.
inline void for_each_digit_run(std::string_view text,
                               auto&& fn /* (RawSpan, const std::string& digits) */) {
    std::size_t i = 0;
    while (i < text.size()) {
        if (!is_digit(text[i])) { ++i; continue; }
        std::size_t start = i;
        std::size_t last_digit = i;
        std::string digits;
        while (i < text.size() && (is_digit(text[i]) || text[i] == ' ' || text[i] == '-')) {
            if (is_digit(text[i])) {
                digits.push_back(text[i]);
                last_digit = i;
            }
            ++i;
        }
        fn(RawSpan{start, last_digit + 1}, digits);
    }
}

} // namespace detail

struct PiiWeights {
    double card = 1.0;
    double ssn = 1.0;
    double email = 0.45;
    double phone = 0.45;
    double ip = 0.3;
};

// Candidate card numbers: 13-19 digit runs (space/dash separators allowed)
// passing the Luhn checksum.
inline void scan_card_numbers(std::string_view text, double weight, std::vector<FeatureHit>& out) {
    detail::for_each_digit_run(text, [&](detail::RawSpan span, const std::string& digits) {
        if (digits.size() < 13 || digits.size() > 19) return;
        if (!luhn_valid(digits)) return;
        out.push_back({ThreatCategory::PiiExposure, std::string(kPiiCardId), span.begin, span.end, weight});
    });
}

// SSN-shaped tokens ddd-dd-dddd with area/group/serial validity rules.
inline void scan_ssns(std::string_view text, double weight, std::vector<FeatureHit>& out) {
    if (text.size() < 11) return;
    for (std::size_t i = 0; i + 11 <= text.size(); ++i) {
        std::string_view tok = text.substr(i, 11);
        bool shaped = detail::is_digit(tok[0]) && detail::is_digit(tok[1]) && detail::is_digit(tok[2]) &&
                      tok[3] == '-' && detail::is_digit(tok[4]) && detail::is_digit(tok[5]) &&
                      tok[6] == '-' && detail::is_digit(tok[7]) && detail::is_digit(tok[8]) &&
                      detail::is_digit(tok[9]) && detail::is_digit(tok[10]);
        if (!shaped) continue;
        if (detail::digit_adjacent(text, i, i + 11)) continue;
        int area = (tok[0] - '0') * 100 + (tok[1] - '0') * 10 + (tok[2] - '0');
        int group = (tok[4] - '0') * 10 + (tok[5] - '0');
        int serial = (tok[7] - '0') * 1000 + (tok[8] - '0') * 100 + (tok[9] - '0') * 10 + (tok[10] - '0');
        if (area == 0 || area == 666 || area >= 900) continue;
        if (group == 0 || serial == 0) continue;
        out.push_back({ThreatCategory::PiiExposure, std::string(kPiiSsnId), i, i + 11, weight});
        i += 10;
    }
}

// North-American phone numbers: optional +1/1 country code, then ten digits
// with optional ()-. or space separators.
inline void scan_phone_numbers(std::string_view text, double weight, std::vector<FeatureHit>& out) {
    auto is_sep = [](char c) { return c == '-' || c == '.' || c == ' '; };
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (!detail::is_digit(text[i]) && text[i] != '+' && text[i] != '(') continue;
        std::size_t p = i;
        // country code
        if (text[p] == '+') {
            if (p + 1 >= text.size() || text[p + 1] != '1') continue;
            p += 2;
            if (p < text.size() && is_sep(text[p])) ++p;
        } else if (text[p] == '1' && p + 1 < text.size() && (is_sep(text[p + 1]) || text[p + 1] == '(')) {
            ++p;
            if (is_sep(text[p])) ++p;
        }
        // area code, optionally parenthesized
        bool paren = p < text.size() && text[p] == '(';
        if (paren) ++p;
        std::size_t digits_needed = 10;
        std::string digits;
        std::size_t q = p;
        std::size_t last_digit = 0;
        int sep_budget = 3;
        while (q < text.size() && digits.size() < digits_needed) {
            char c = text[q];
            if (detail::is_digit(c)) {
                digits.push_back(c);
                last_digit = q;
                ++q;
            } else if (paren && c == ')' && digits.size() == 3) {
                paren = false;
                ++q;
                if (q < text.size() && is_sep(text[q])) ++q;
            } else if (is_sep(c) && (digits.size() == 3 || digits.size() == 6) && sep_budget > 0) {
                --sep_budget;
                ++q;
            } else {
                break;
            }
        }
        if (digits.size() != digits_needed || paren) continue;
        std::size_t end = last_digit + 1;
        if (detail::digit_adjacent(text, i, end)) continue;
        if (detail::overlaps_any(out, i, end)) continue;
        out.push_back({ThreatCategory::PiiExposure, std::string(kPiiPhoneId), i, end, weight});
        i = end - 1;
    }
}

// Email addresses: local@domain.tld with an alphabetic TLD of length >= 2.
inline void scan_emails(std::string_view text, double weight, std::vector<FeatureHit>& out) {
    auto is_local = [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '%' ||
               c == '+' || c == '-';
    };
    auto is_domain = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '-'; };
    for (std::size_t at = 0; at < text.size(); ++at) {
        if (text[at] != '@') continue;
        // local part
        std::size_t begin = at;
        while (begin > 0 && is_local(text[begin - 1])) --begin;
        while (begin < at && (text[begin] == '.' || text[begin] == '-')) ++begin;
        if (begin == at) continue;
        // domain labels
        std::size_t end = at + 1;
        std::size_t last_dot = std::string::npos;
        while (end < text.size() && (is_domain(text[end]) || text[end] == '.')) {
            if (text[end] == '.') last_dot = end;
            ++end;
        }
        while (end > at + 1 && (text[end - 1] == '.' || text[end - 1] == '-')) --end;
        if (last_dot == std::string::npos || last_dot >= end) {
            last_dot = std::string::npos;
            for (std::size_t k = at + 1; k < end; ++k) {
                if (text[k] == '.') last_dot = k;
            }
        }
        if (last_dot == std::string::npos || last_dot <= at + 1 || end - last_dot - 1 < 2) continue;
        bool tld_alpha = true;
        for (std::size_t k = last_dot + 1; k < end; ++k) {
            if (!std::isalpha(static_cast<unsigned char>(text[k]))) { tld_alpha = false; break; }
        }
        if (!tld_alpha) continue;
        out.push_back({ThreatCategory::PiiExposure, std::string(kPiiEmailId), begin, end, weight});
    }
}

// Dotted-quad IPv4 addresses with octets <= 255.
inline void scan_ipv4(std::string_view text, double weight, std::vector<FeatureHit>& out) {
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (!detail::is_digit(text[i])) continue;
        if (i > 0 && (detail::is_digit(text[i - 1]) || text[i - 1] == '.')) continue;
        std::size_t p = i;
        int octets = 0;
        bool ok = true;
        for (; octets < 4; ++octets) {
            int value = 0;
            int len = 0;
            while (p < text.size() && detail::is_digit(text[p]) && len < 3) {
                value = value * 10 + (text[p] - '0');
                ++p;
                ++len;
            }
            if (len == 0 || value > 255) { ok = false; break; }
            if (octets < 3) {
                if (p >= text.size() || text[p] != '.') { ok = false; break; }
                ++p;
            }
        }
        if (!ok) continue;
        if (p < text.size() && (detail::is_digit(text[p]) || text[p] == '.')) continue;
        if (detail::overlaps_any(out, i, p)) continue;
        out.push_back({ThreatCategory::PiiExposure, std::string(kPiiIpId), i, p, weight});
        i = p - 1;
    }
}

// Runs all structural scanners. Card and SSN hits take precedence over
// phone/IP hits on overlapping spans (a 16-digit card must not double as a
// phone number).
inline std::vector<FeatureHit> scan_structural_pii(std::string_view text, const PiiWeights& w) {
    std::vector<FeatureHit> hits;
    scan_card_numbers(text, w.card, hits);
    scan_ssns(text, w.ssn, hits);
    scan_phone_numbers(text, w.phone, hits);
    scan_emails(text, w.email, hits);
    scan_ipv4(text, w.ip, hits);
    return hits;
}

} // namespace ethosgate
