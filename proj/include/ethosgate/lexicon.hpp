#pragma once

#include <cctype>
#include <fstream>
#include <memory>
#include <regex>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "ethosgate/core.hpp"

// Weighted match-rule lists, one per category. Entries are literal phrases
// (case-insensitive substring or word-boundary search, chosen by the
// detector) or ECMAScript regexes. Loaded from JSON files or built-in seeds.

namespace ethosgate {

enum class PatternKind { Phrase, Regex };

struct LexiconEntry {
    std::string pattern;
    PatternKind kind = PatternKind::Phrase;
    double weight = 0.0;
    std::string id;
};

struct Lexicon {
    ThreatCategory category = ThreatCategory::PromptInjection;
    int version = 1;
    std::vector<LexiconEntry> entries;

    const LexiconEntry* find(std::string_view id) const {
        for (const auto& e : entries) {
            if (e.id == id) return &e;
        }
        return nullptr;
    }
};

namespace detail {

inline std::string ascii_lower(std::string_view s) {
    std::string out(s);
    for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return out;
}

inline bool is_word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_';
}

} // namespace detail

// Entry with its regex pre-compiled; phrase patterns pre-lowered.
struct CompiledEntry {
    LexiconEntry entry;
    std::string lowered;  // phrase entries only
    std::shared_ptr<const std::regex> re;  // regex entries only
};

class CompiledLexicon {
public:
    explicit CompiledLexicon(Lexicon lex) : source_(std::move(lex)) {
        std::unordered_set<std::string> seen;
        for (const auto& e : source_.entries) {
            if (e.id.empty()) throw ConfigError(lexicon_key(), "entry with empty id");
            if (!seen.insert(e.id).second) {
                throw ConfigError(lexicon_key(), "duplicate feature id: " + e.id);
            }
            if (!(e.weight >= 0.0) || !std::isfinite(e.weight)) {
                throw ConfigError(lexicon_key(), "negative or non-finite weight for " + e.id);
            }
            CompiledEntry ce{e, {}, nullptr};
            if (e.kind == PatternKind::Regex) {
                try {
                    ce.re = std::make_shared<std::regex>(
                        e.pattern, std::regex::ECMAScript | std::regex::icase | std::regex::optimize);
                } catch (const std::regex_error& err) {
                    throw ConfigError(lexicon_key(), "pattern for " + e.id + " does not compile: " + err.what());
                }
            } else {
                ce.lowered = detail::ascii_lower(e.pattern);
            }
            compiled_.push_back(std::move(ce));
        }
    }

    const Lexicon& source() const { return source_; }
    ThreatCategory category() const { return source_.category; }
    int version() const { return source_.version; }

    // Appends one FeatureHit per occurrence of every entry. Phrase entries
    // are scanned over an ASCII-lowered copy (byte offsets are preserved);
    // regex entries run case-insensitively over the original text.
    void match(std::string_view text, bool word_boundary, std::vector<FeatureHit>& out) const {
        std::string lowered = detail::ascii_lower(text);
        for (const auto& ce : compiled_) {
            if (ce.entry.kind == PatternKind::Phrase) {
                match_phrase(ce, text, lowered, word_boundary, out);
            } else {
                match_regex(ce, text, out);
            }
        }
    }

private:
    std::string lexicon_key() const { return "lexicons." + std::string(category_key(source_.category)); }

    void match_phrase(const CompiledEntry& ce, std::string_view text, const std::string& lowered,
                      bool word_boundary, std::vector<FeatureHit>& out) const {
        const std::string& needle = ce.lowered;
        if (needle.empty()) return;  // reserved weight-carrier entries never match
        std::size_t pos = 0;
        while ((pos = lowered.find(needle, pos)) != std::string::npos) {
            std::size_t end = pos + needle.size();
            bool ok = true;
            if (word_boundary) {
                if (pos > 0 && detail::is_word_char(text[pos - 1])) ok = false;
                if (end < text.size() && detail::is_word_char(text[end])) ok = false;
            }
            if (ok) {
                out.push_back({source_.category, ce.entry.id, pos, end, ce.entry.weight});
            }
            pos = end;
        }
    }

    void match_regex(const CompiledEntry& ce, std::string_view text, std::vector<FeatureHit>& out) const {
        auto begin = std::cregex_iterator(text.data(), text.data() + text.size(), *ce.re);
        auto stop = std::cregex_iterator();
        for (auto it = begin; it != stop; ++it) {
            if (it->length(0) == 0) continue;
            std::size_t pos = static_cast<std::size_t>(it->position(0));
            out.push_back({source_.category, ce.entry.id, pos,
                           pos + static_cast<std::size_t>(it->length(0)), ce.entry.weight});
        }
    }

    Lexicon source_;
    std::vector<CompiledEntry> compiled_;
};

inline Lexicon parse_lexicon_json(ThreatCategory category, const nlohmann::json& doc, int version) {
    std::string key = "lexicons." + std::string(category_key(category));
    if (!doc.is_array()) throw ConfigError(key, "lexicon document must be a JSON array");
    Lexicon lex;
    lex.category = category;
    lex.version = version;
    for (const auto& item : doc) {
        if (!item.is_object()) throw ConfigError(key, "lexicon entry must be an object");
        LexiconEntry e;
        if (!item.contains("pattern") || !item.at("pattern").is_string()) {
            throw ConfigError(key, "entry missing string \"pattern\"");
        }
        e.pattern = item.at("pattern").get<std::string>();
        std::string kind = item.value("kind", "phrase");
        if (kind == "phrase") e.kind = PatternKind::Phrase;
        else if (kind == "regex") e.kind = PatternKind::Regex;
        else throw ConfigError(key, "entry kind must be \"phrase\" or \"regex\"");
        if (!item.contains("weight") || !item.at("weight").is_number()) {
            throw ConfigError(key, "entry missing numeric \"weight\"");
        }
        e.weight = item.at("weight").get<double>();
        if (!item.contains("id") || !item.at("id").is_string()) {
            throw ConfigError(key, "entry missing string \"id\"");
        }
        e.id = item.at("id").get<std::string>();
        lex.entries.push_back(std::move(e));
    }
    return lex;
}

inline nlohmann::json serialize_lexicon(const Lexicon& lex) {
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& e : lex.entries) {
        doc.push_back({{"pattern", e.pattern},
                       {"kind", e.kind == PatternKind::Phrase ? "phrase" : "regex"},
                       {"weight", e.weight},
                       {"id", e.id}});
    }
    return doc;
}

inline Lexicon load_lexicon_file(ThreatCategory category, const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("lexicons." + std::string(category_key(category)),
                          "cannot open lexicon file: " + path);
    }
    std::stringstream buf;
    buf << in.rdbuf();
    nlohmann::json doc = nlohmann::json::parse(buf.str(), nullptr, false);
    if (doc.is_discarded()) {
        throw ConfigError("lexicons." + std::string(category_key(category)),
                          "lexicon file is not valid JSON: " + path);
    }
    // versioned files end in ".v<N>.json"
    int version = 1;
    auto vpos = path.rfind(".v");
    if (vpos != std::string::npos) {
        auto tail = path.substr(vpos + 2);
        auto dot = tail.find('.');
        if (dot != std::string::npos) {
            try {
                version = std::stoi(tail.substr(0, dot));
            } catch (...) {
                version = 1;
            }
        }
    }
    return parse_lexicon_json(category, doc, version);
}

// Seed lexicons. Deliberately small placeholder vocabularies; operators
// extend them through lexicon files and the feedback loop.
inline Lexicon builtin_lexicon(ThreatCategory category) {
    Lexicon lex;
    lex.category = category;
    lex.version = 1;
    using K = PatternKind;
    switch (category) {
    case ThreatCategory::PromptInjection:
        lex.entries = {
            {R"(ignore\s+(all\s+)?(previous|prior|above|earlier)\s+instructions)", K::Regex, 0.9, "inj.override_ignore"},
            {R"(disregard\s+(the\s+)?(system\s+prompt|previous\s+instructions|your\s+instructions|your\s+rules))", K::Regex, 0.9, "inj.override_disregard"},
            {"you are now", K::Phrase, 0.45, "inj.persona_switch"},
            {"system prompt", K::Phrase, 0.4, "inj.system_probe"},
            {R"(reveal\s+(your\s+)?(system\s+prompt|hidden\s+instructions|initial\s+prompt))", K::Regex, 0.7, "inj.exfil_instructions"},
            {R"(\[\/?(system|inst)\]|<\|[a-z_]+\|>|<<sys>>|```\s*system)", K::Regex, 0.8, "inj.marker_smuggle"},
            {R"(new\s+instructions?\s*:)", K::Regex, 0.6, "inj.new_instructions"},
            {R"(from\s+now\s+on|for\s+the\s+rest\s+of\s+this\s+conversation)", K::Regex, 0.5, "inj.scope_takeover"},
        };
        break;
    case ThreatCategory::Jailbreak:
        lex.entries = {
            {"pretend you are", K::Phrase, 0.6, "jbk.persona_pretend"},
            {"no restrictions", K::Phrase, 0.6, "jbk.no_restrictions"},
            {"developer mode", K::Phrase, 0.7, "jbk.developer_mode"},
            {R"(\bDAN\b|do\s+anything\s+now)", K::Regex, 0.7, "jbk.dan_persona"},
            {R"(act\s+as\s+(if\s+you\s+(have|had)\s+no|an?\s+unfiltered))", K::Regex, 0.6, "jbk.act_unfiltered"},
            {"without any filters", K::Phrase, 0.6, "jbk.no_filters"},
            {R"(bypass\s+(your\s+)?(guidelines|restrictions|safety|guardrails))", K::Regex, 0.7, "jbk.bypass_guardrails"},
            {R"(your\s+(rules|restrictions|guidelines)\s+(do\s+not|don'?t)\s+apply)", K::Regex, 0.6, "jbk.rules_void"},
        };
        break;
    case ThreatCategory::PiiExposure:
        // Structural scanner weights; empty patterns never match directly.
        lex.entries = {
            {"", K::Phrase, 1.0, "pii.card"},
            {"", K::Phrase, 1.0, "pii.ssn"},
            {"", K::Phrase, 0.45, "pii.email"},
            {"", K::Phrase, 0.45, "pii.phone"},
            {"", K::Phrase, 0.3, "pii.ip"},
        };
        break;
    case ThreatCategory::SexualContent:
        lex.entries = {
            {"sexually explicit", K::Phrase, 0.8, "sex.explicit_request"},
            {"porn", K::Phrase, 0.6, "sex.porn"},
            {"pornography", K::Phrase, 0.6, "sex.pornography"},
            {"pornographic", K::Phrase, 0.6, "sex.pornographic"},
            {"nsfw", K::Phrase, 0.5, "sex.nsfw"},
            {"erotic", K::Phrase, 0.5, "sex.erotic"},
            {R"(\bnude\s+(photo|image|picture)s?\b)", K::Regex, 0.6, "sex.nude_imagery"},
            {R"(\bsex(ual)?\s+(act|scene|story|roleplay)s?\b)", K::Regex, 0.6, "sex.scenario"},
        };
        break;
    case ThreatCategory::HatefulContent:
        // group.* and slur.* ids drive the co-occurrence bonus.
        lex.entries = {
            {R"(\b(immigrants?|jews?|muslims?|christians?|women|men|gay\s+people|black\s+people|white\s+people|asians?)\b)", K::Regex, 0.15, "hate.group.generic"},
            {R"(\b(subhuman|vermin|parasites?|inferior\s+race|animals\s+not\s+people)\b)", K::Regex, 0.6, "hate.slur.dehumanize"},
            {R"(\b(exterminate|eradicate|deport\s+all|get\s+rid\s+of\s+all)\b)", K::Regex, 0.6, "hate.slur.eliminate"},
            {R"(go\s+back\s+to\s+(your|their)\s+country)", K::Regex, 0.7, "hate.slur.expel"},
            {R"(\b(i|we)\s+hate\s+(all\s+)?(these|those)?\s*people\b)", K::Regex, 0.4, "hate.expression"},
        };
        break;
    }
    return lex;
}

} // namespace ethosgate
