#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ethosgate/core.hpp"

// Response templates: static per-category texts with {categories} and
// {request_id} placeholders, selected by verdict and rendered without ever
// echoing flagged prompt content. Also the span redactor shared with the
// outbound-prompt path.

namespace ethosgate {

struct ResponseTemplate {
    std::string key;
    std::string body;
    std::string version;

    bool operator==(const ResponseTemplate&) const = default;
};

inline const std::vector<std::string>& template_keys() {
    static const std::vector<std::string> keys = {"injection", "jailbreak", "pii",     "sexual",
                                                  "hate",      "combined",  "fallback"};
    return keys;
}

namespace detail {

// Only {categories} and {request_id} may appear in a template body.
inline void check_placeholders(const std::string& key, const std::string& body) {
    std::size_t pos = 0;
    while ((pos = body.find('{', pos)) != std::string::npos) {
        auto close = body.find('}', pos);
        if (close == std::string::npos) {
            throw ConfigError("templates." + key, "unterminated placeholder");
        }
        std::string name = body.substr(pos + 1, close - pos - 1);
        if (name != "categories" && name != "request_id") {
            throw ConfigError("templates." + key, "undeclared placeholder {" + name + "}");
        }
        pos = close + 1;
    }
}

inline std::string replace_all(std::string text, const std::string& from, const std::string& to) {
    std::size_t pos = 0;
    while ((pos = text.find(from, pos)) != std::string::npos) {
        text.replace(pos, from.size(), to);
        pos += to.size();
    }
    return text;
}

} // namespace detail

class TemplateRegistry {
public:
    // The "fallback" key must always resolve; other keys may fall back to it.
    static TemplateRegistry from_map(std::map<std::string, ResponseTemplate> templates) {
        TemplateRegistry reg;
        if (templates.empty()) throw ConfigError("templates.path", "template registry is empty");
        for (const auto& [key, tpl] : templates) {
            if (std::find(template_keys().begin(), template_keys().end(), key) ==
                template_keys().end()) {
                throw ConfigError("templates." + key, "unknown template key");
            }
            detail::check_placeholders(key, tpl.body);
        }
        if (templates.find("fallback") == templates.end()) {
            throw ConfigError("templates.fallback", "missing \"fallback\" template");
        }
        reg.templates_ = std::move(templates);
        return reg;
    }

    static TemplateRegistry builtin() {
        std::map<std::string, ResponseTemplate> t;
        auto add = [&](const std::string& key, const std::string& body) {
            t[key] = {key, body, "builtin-1"};
        };
        // template wording must not reuse shipped lexicon phrases, or the
        // no-echo check would reject the rendered response
        add("injection",
            "This request was flagged as a possible prompt-injection attempt and will not be "
            "processed. Reference {request_id} has been logged for review.");
        add("jailbreak",
            "This request appears to circumvent safety policies and will not be "
            "processed. Reference {request_id} has been logged for review.");
        add("pii",
            "This request was declined because it appears to include personal or sensitive "
            "data. Reference {request_id} has been logged for review.");
        add("sexual",
            "This request was declined because it appears to request sexual content. "
            "Reference {request_id} has been logged for review.");
        add("hate",
            "This request was declined because it appears to contain or solicit hateful "
            "material. Reference {request_id} has been logged for review.");
        add("combined",
            "This request was declined because it raised multiple policy concerns: "
            "{categories}. Reference {request_id} has been logged for review.");
        add("fallback",
            "This request could not be completed. Reference {request_id} has been logged.");
        return from_map(std::move(t));
    }

    static TemplateRegistry load_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("templates.path", "cannot open template file: " + path);
        std::stringstream buf;
        buf << in.rdbuf();
        nlohmann::json doc = nlohmann::json::parse(buf.str(), nullptr, false);
        if (doc.is_discarded()) throw ConfigError("templates.path", "template file is not valid JSON");
        if (!doc.is_object()) throw ConfigError("templates.path", "template document must be an object");
        std::map<std::string, ResponseTemplate> t;
        for (auto it = doc.begin(); it != doc.end(); ++it) {
            if (!it.value().is_object() || !it.value().contains("body") ||
                !it.value().at("body").is_string()) {
                throw ConfigError("templates." + it.key(), "template must be {\"body\", \"version\"}");
            }
            t[it.key()] = {it.key(), it.value().at("body").get<std::string>(),
                           it.value().value("version", "1")};
        }
        return from_map(std::move(t));
    }

    // Combined verdicts select "combined"; single-category verdicts the
    // primary's key; missing keys resolve to "fallback".
    const ResponseTemplate& select(const std::string& key) const {
        auto it = templates_.find(key);
        if (it != templates_.end()) return it->second;
        return templates_.at("fallback");
    }

    const ResponseTemplate& select(const Verdict& verdict) const {
        if (!verdict.blocked()) {
            throw ContractViolation("TemplateRegistry::select: verdict must be Block");
        }
        if (verdict.combined()) return select("combined");
        return select(std::string(category_key(*verdict.primary)));
    }

    bool has(const std::string& key) const { return templates_.count(key) > 0; }

    std::string version() const {
        std::string v;
        for (const auto& [key, tpl] : templates_) {
            if (!v.empty()) v += ",";
            v += key + "=" + tpl.version;
        }
        return v;
    }

private:
    std::map<std::string, ResponseTemplate> templates_;
};

// Thrown when a rendered response would violate the no-echo contract or a
// placeholder cannot be resolved.
class RenderError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Substitutes placeholders and enforces the no-echo contract: the output
// must not contain any prompt substring covered by a hit span.
inline std::string render(const ResponseTemplate& tpl, const Verdict& verdict,
                          const std::string& request_id, const std::string& prompt,
                          const std::vector<FeatureHit>& hits) {
    std::string categories;
    for (auto c : verdict.flagged) {
        if (!categories.empty()) categories += ", ";
        categories += std::string(category_human_name(c));
    }
    std::string out = detail::replace_all(tpl.body, "{categories}", categories);
    out = detail::replace_all(out, "{request_id}", request_id);
    for (const auto& h : hits) {
        if (h.begin >= h.end || h.end > prompt.size()) continue;
        std::string covered = prompt.substr(h.begin, h.end - h.begin);
        if (!covered.empty() && out.find(covered) != std::string::npos) {
            throw RenderError("rendered response would echo flagged content (feature " +
                              h.feature_id + ")");
        }
    }
    return out;
}

// Replaces each hit span with "[REDACTED:<KIND>]". Overlapping or adjacent
// spans are merged first; the merged span takes the kind of its earliest
// hit. Idempotent: markers contain nothing any detector matches.
inline std::string redact(const std::string& text, std::vector<FeatureHit> hits) {
    if (hits.empty()) return text;
    check_hit_spans(hits, text.size());
    std::sort(hits.begin(), hits.end(), [](const FeatureHit& a, const FeatureHit& b) {
        if (a.begin != b.begin) return a.begin < b.begin;
        return a.end > b.end;
    });
    struct Span {
        std::size_t begin, end;
        std::string kind;
    };
    std::vector<Span> merged;
    for (const auto& h : hits) {
        if (!merged.empty() && h.begin <= merged.back().end) {
            merged.back().end = std::max(merged.back().end, h.end);
        } else {
            merged.push_back({h.begin, h.end, hit_kind(h)});
        }
    }
    std::string out = text;
    for (auto it = merged.rbegin(); it != merged.rend(); ++it) {
        out.replace(it->begin, it->end - it->begin, "[REDACTED:" + it->kind + "]");
    }
    return out;
}

} // namespace ethosgate
