#pragma once

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ethosgate/gateway.hpp"
#include "ethosgate/pipeline.hpp"

// Operator CLI: serve, analyze, replay, review, config validate, bench.
// Machine-readable output is JSON on stdout; diagnostics go to stderr.
// Exit codes: 0 success, 1 runtime failure or replay mismatch, 2 bad
// configuration.

namespace ethosgate::cli {

struct CommandResult {
    int exit_code = 0;
    std::string out;  // stdout payload
    std::string err;  // stderr diagnostics
};

inline PolicyConfig resolve_config(const std::string& config_flag) {
    std::string path = config_flag;
    if (path.empty()) {
        if (const char* env = std::getenv("ETHOSGATE_CONFIG")) path = env;
    }
    if (path.empty()) return validate_config(nlohmann::json::object());
    return load_config_file(path);
}

// Offline pipeline: same stages as the service, but nothing persisted.
inline Pipeline make_offline_pipeline(PolicyConfig cfg) {
    auto detectors = std::make_shared<DetectorHub>(DetectorSet::from_lexicons(load_lexicons(cfg)));
    SequencePriorTable priors;
    if (!cfg.priors_path.empty()) priors = SequencePriorTable::load_file(cfg.priors_path);
    auto prior_hub = std::make_shared<PriorTableHub>(std::move(priors));
    auto store = std::make_shared<InMemoryContextStore>(cfg.ttl_seconds);
    auto breaker = std::make_shared<DetectorBreaker>(cfg.breaker_trip_count);
    return Pipeline(std::move(cfg), detectors, prior_hub, store, breaker);
}

inline CommandResult run_config_validate(const std::string& path) {
    CommandResult result;
    try {
        PolicyConfig cfg = load_config_file(path);
        result.out = serialize_config(cfg).dump(2) + "\n";
    } catch (const ConfigError& e) {
        result.exit_code = 2;
        result.err = std::string("configuration error: ") + e.what() + "\n";
    } catch (const std::exception& e) {
        result.exit_code = 2;
        result.err = std::string("configuration error: ") + e.what() + "\n";
    }
    return result;
}

inline CommandResult run_analyze(const std::string& config_flag, const std::string& prompt,
                                 const std::string& conversation_id) {
    CommandResult result;
    try {
        PolicyConfig cfg = resolve_config(config_flag);
        Pipeline pipeline = make_offline_pipeline(cfg);
        AnalysisOutcome out = pipeline.analyze(conversation_id, prompt);
        result.out = analysis_document(out).dump(2) + "\n";
    } catch (const ConfigError& e) {
        result.exit_code = 2;
        result.err = std::string("configuration error: ") + e.what() + "\n";
    } catch (const std::exception& e) {
        result.exit_code = 1;
        result.err = std::string("analyze failed: ") + e.what() + "\n";
    }
    return result;
}

namespace detail {

inline bool verdicts_equal(const Verdict& a, const Verdict& b) {
    return a.kind == b.kind && a.flagged == b.flagged && a.primary == b.primary;
}

inline bool vectors_close(const ScoreVector& a, const ScoreVector& b, double tol) {
    for (auto c : kAllCategories) {
        if (std::abs(a.get(c) - b.get(c)) > tol) return false;
    }
    return true;
}

} // namespace detail

// Score-chain replay: re-derives prior/fused/verdict per conversation from
// the recorded raw scores. With a prompts file (NDJSON of {request_id,
// prompt}), the full pipeline runs instead, detectors included.
inline CommandResult run_replay(const std::string& config_flag, const std::string& audit_path,
                                const std::string& prompts_path) {
    CommandResult result;
    try {
        PolicyConfig cfg = resolve_config(config_flag);
        std::vector<AuditRecord> records = AuditLog::read_file(audit_path);
        std::vector<std::string> mismatches;
        std::size_t replayed = 0;

        if (!prompts_path.empty()) {
            std::map<std::string, std::string> prompts;
            std::ifstream in(prompts_path);
            if (!in) throw std::runtime_error("cannot open prompts file: " + prompts_path);
            std::string line;
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                nlohmann::json doc = nlohmann::json::parse(line, nullptr, false);
                if (doc.is_discarded()) continue;
                prompts[doc.at("request_id").get<std::string>()] = doc.at("prompt").get<std::string>();
            }
            Pipeline pipeline = make_offline_pipeline(cfg);
            for (const auto& r : records) {
                if (r.direction != "ingress") continue;
                ++replayed;
                auto it = prompts.find(r.request_id);
                if (it == prompts.end()) {
                    mismatches.push_back(r.request_id);
                    continue;
                }
                AnalysisOutcome out = pipeline.analyze(r.conversation_id, it->second);
                if (!detail::verdicts_equal(out.verdict, r.verdict) || out.request_id != r.request_id) {
                    mismatches.push_back(r.request_id);
                }
            }
            result.out = nlohmann::json{{"mode", "full"},
                                        {"records", replayed},
                                        {"mismatches", mismatches}}
                             .dump(2) +
                         "\n";
        } else {
            SequencePriorTable priors;
            if (!cfg.priors_path.empty()) priors = SequencePriorTable::load_file(cfg.priors_path);
            std::map<std::string, ConversationContext> contexts;
            for (const auto& r : records) {
                if (r.direction != "ingress") continue;
                ++replayed;
                ConversationContext& ctx = contexts[r.conversation_id];
                ctx.conversation_id = r.conversation_id;
                ScoreVector prior = compute_prior(ctx, priors, cfg.decay);
                ScoreVector fused = fuse(r.raw_scores, prior);
                Verdict verdict = decide(fused, cfg);
                bool ok = detail::verdicts_equal(verdict, r.verdict) &&
                          detail::vectors_close(prior, r.prior, 1e-9) &&
                          detail::vectors_close(fused, r.fused, 1e-9) &&
                          sequence_key(ctx) == r.context_key;
                if (!ok) mismatches.push_back(r.request_id);
                update_context(ctx, r.raw_scores, fused, cfg.tau_low, cfg.context_window,
                               unix_now_seconds());
            }
            result.out = nlohmann::json{{"mode", "scores"},
                                        {"records", replayed},
                                        {"mismatches", mismatches}}
                             .dump(2) +
                         "\n";
        }
        if (!mismatches.empty()) {
            result.exit_code = 1;
            result.err = std::to_string(mismatches.size()) + " mismatched request(s)\n";
        }
    } catch (const ConfigError& e) {
        result.exit_code = 2;
        result.err = std::string("configuration error: ") + e.what() + "\n";
    } catch (const std::exception& e) {
        result.exit_code = 1;
        result.err = std::string("replay failed: ") + e.what() + "\n";
    }
    return result;
}

inline FeedbackService make_feedback_service(const PolicyConfig& cfg) {
    SequencePriorTable priors;
    if (!cfg.priors_path.empty()) priors = SequencePriorTable::load_file(cfg.priors_path);
    return FeedbackService(cfg, load_lexicons(cfg), std::move(priors), nullptr, nullptr,
                           std::make_shared<AuditLog>(cfg.audit_path));
}

inline CommandResult run_review_list(const std::string& config_flag) {
    CommandResult result;
    try {
        PolicyConfig cfg = resolve_config(config_flag);
        FeedbackService service = make_feedback_service(cfg);
        nlohmann::json items = nlohmann::json::array();
        for (const auto& item : service.pending()) items.push_back(item.to_json());
        result.out = items.dump(2) + "\n";
    } catch (const std::exception& e) {
        result.exit_code = 1;
        result.err = std::string("review list failed: ") + e.what() + "\n";
    }
    return result;
}

inline CommandResult run_review_label(const std::string& config_flag, const std::string& request_id,
                                      const std::string& category_key_text, const std::string& label) {
    CommandResult result;
    try {
        PolicyConfig cfg = resolve_config(config_flag);
        auto category = category_from_key(category_key_text);
        if (!category) throw FeedbackError("unknown category: " + category_key_text);
        if (label != "tp" && label != "fp") throw FeedbackError("label must be tp or fp");
        FeedbackService service = make_feedback_service(cfg);
        auto r = service.apply_label(request_id, *category, label == "tp");
        result.out = nlohmann::json{{"request_id", request_id},
                                    {"features_updated", r.features_updated},
                                    {"lexicon_version", r.lexicon_version},
                                    {"lexicon_path", r.lexicon_path}}
                         .dump(2) +
                     "\n";
    } catch (const std::exception& e) {
        result.exit_code = 1;
        result.err = std::string("review label failed: ") + e.what() + "\n";
    }
    return result;
}

inline CommandResult run_review_episode(const std::string& config_flag,
                                        const std::string& conversation_id,
                                        const std::string& request_id,
                                        const std::string& category_key_text) {
    CommandResult result;
    try {
        PolicyConfig cfg = resolve_config(config_flag);
        auto category = category_from_key(category_key_text);
        if (!category) throw FeedbackError("unknown category: " + category_key_text);
        FeedbackService service = make_feedback_service(cfg);
        auto r = service.update_sequence_priors(conversation_id, request_id, *category);
        result.out = nlohmann::json{{"conversation_id", conversation_id},
                                    {"keys_updated", r.keys_updated},
                                    {"table_version", r.table_version},
                                    {"table_path", r.table_path}}
                         .dump(2) +
                     "\n";
    } catch (const std::exception& e) {
        result.exit_code = 1;
        result.err = std::string("review episode failed: ") + e.what() + "\n";
    }
    return result;
}

inline CommandResult run_bench(const std::string& config_flag, const std::string& corpus_path) {
    CommandResult result;
    try {
        PolicyConfig cfg = resolve_config(config_flag);
        std::ifstream in(corpus_path);
        if (!in) throw std::runtime_error("cannot open corpus: " + corpus_path);
        std::vector<std::string> prompts;
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty()) prompts.push_back(line);
        }
        if (prompts.empty()) throw std::runtime_error("corpus is empty");

        Pipeline pipeline = make_offline_pipeline(cfg);
        std::vector<double> latencies;
        latencies.reserve(prompts.size());
        long blocked = 0;
        auto t0 = std::chrono::steady_clock::now();
        for (std::size_t i = 0; i < prompts.size(); ++i) {
            auto s0 = std::chrono::steady_clock::now();
            AnalysisOutcome out =
                pipeline.analyze("bench-" + std::to_string(i % 16), prompts[i]);
            latencies.push_back(
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - s0)
                    .count());
            if (out.verdict.blocked()) ++blocked;
        }
        double total_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        std::sort(latencies.begin(), latencies.end());
        auto pct = [&](double q) {
            return latencies[std::min(latencies.size() - 1,
                                      static_cast<std::size_t>(q * latencies.size()))];
        };
        result.out = nlohmann::json{{"prompts", prompts.size()},
                                    {"blocked", blocked},
                                    {"total_ms", total_ms},
                                    {"prompts_per_sec", prompts.size() / (total_ms / 1000.0)},
                                    {"p50_ms", pct(0.50)},
                                    {"p95_ms", pct(0.95)},
                                    {"max_ms", latencies.back()}}
                         .dump(2) +
                     "\n";
    } catch (const ConfigError& e) {
        result.exit_code = 2;
        result.err = std::string("configuration error: ") + e.what() + "\n";
    } catch (const std::exception& e) {
        result.exit_code = 1;
        result.err = std::string("bench failed: ") + e.what() + "\n";
    }
    return result;
}

namespace detail {
inline std::atomic<bool>& stop_flag() {
    static std::atomic<bool> flag{false};
    return flag;
}
} // namespace detail

inline int run_serve(const std::string& config_flag) {
    try {
        PolicyConfig cfg = resolve_config(config_flag);
        Gateway gateway(build_parts(cfg));
        if (!gateway.start()) {
            std::cerr << "failed to bind listeners (" << cfg.host << ":" << cfg.port << ", "
                      << cfg.admin_host << ":" << cfg.admin_port << ")\n";
            return 1;
        }
        std::cerr << "ethosgate listening on " << cfg.host << ":" << gateway.public_port()
                  << " (admin " << cfg.admin_host << ":" << gateway.admin_port() << ")\n";
        detail::stop_flag().store(false);
        std::signal(SIGINT, [](int) { detail::stop_flag().store(true); });
        std::signal(SIGTERM, [](int) { detail::stop_flag().store(true); });
        while (!detail::stop_flag().load()) {
            std::this_thread::sleep_for(std::chrono::milliseconds(100));
        }
        gateway.stop();
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "serve failed: " << e.what() << "\n";
        return 1;
    }
}

inline int emit(const CommandResult& result) {
    if (!result.out.empty()) std::cout << result.out;
    if (!result.err.empty()) std::cerr << result.err;
    return result.exit_code;
}

inline int run_cli(int argc, char** argv) {
    CLI::App app{"EthosGate: policy gateway for LLM chat backends"};
    app.require_subcommand(1);
    app.fallthrough();  // lets `ethosgate <cmd> --config x` reach the global option
    std::string config_flag;
    app.add_option("--config", config_flag, "configuration file (overrides ETHOSGATE_CONFIG)");

    auto* serve = app.add_subcommand("serve", "run the gateway service");

    auto* analyze = app.add_subcommand("analyze", "run the pipeline on one prompt and print JSON");
    std::string prompt;
    std::string conversation = "cli";
    bool from_stdin = false;
    analyze->add_option("--prompt", prompt, "prompt text");
    analyze->add_flag("--stdin", from_stdin, "read the prompt from standard input");
    analyze->add_option("--conversation", conversation, "conversation id (default: cli)");

    auto* replay = app.add_subcommand("replay", "recompute verdicts from an audit log");
    std::string audit_path;
    std::string prompts_path;
    replay->add_option("--audit", audit_path, "audit NDJSON file")->required();
    replay->add_option("--prompts", prompts_path,
                       "NDJSON of {request_id, prompt}; enables full-pipeline replay");

    auto* review = app.add_subcommand("review", "review queue workflow");
    review->require_subcommand(1);
    auto* review_list = review->add_subcommand("list", "print pending review items");
    auto* review_label = review->add_subcommand("label", "apply a tp/fp label to a record");
    std::string request_id, category_text, label_text;
    review_label->add_option("request_id", request_id)->required();
    review_label->add_option("category", category_text)->required();
    review_label->add_option("label", label_text, "tp | fp")->required();
    auto* review_episode =
        review->add_subcommand("episode", "confirm a multi-turn attack and update priors");
    std::string episode_conversation, episode_request, episode_category;
    review_episode->add_option("conversation_id", episode_conversation)->required();
    review_episode->add_option("request_id", episode_request)->required();
    review_episode->add_option("category", episode_category)->required();

    auto* config_cmd = app.add_subcommand("config", "configuration utilities");
    config_cmd->require_subcommand(1);
    auto* config_validate = config_cmd->add_subcommand("validate", "validate a config file");
    std::string validate_path;
    config_validate->add_option("path", validate_path, "config file")->required();

    auto* bench = app.add_subcommand("bench", "single-threaded throughput/latency report");
    std::string corpus_path;
    bench->add_option("--corpus", corpus_path, "prompt corpus, one prompt per line")->required();

    CLI11_PARSE(app, argc, argv);

    if (serve->parsed()) return run_serve(config_flag);
    if (analyze->parsed()) {
        if (from_stdin) {
            std::stringstream buf;
            buf << std::cin.rdbuf();
            prompt = buf.str();
        }
        return emit(run_analyze(config_flag, prompt, conversation));
    }
    if (replay->parsed()) return emit(run_replay(config_flag, audit_path, prompts_path));
    if (review->parsed()) {
        if (review_list->parsed()) return emit(run_review_list(config_flag));
        if (review_label->parsed())
            return emit(run_review_label(config_flag, request_id, category_text, label_text));
        if (review_episode->parsed())
            return emit(run_review_episode(config_flag, episode_conversation, episode_request,
                                           episode_category));
    }
    if (config_cmd->parsed() && config_validate->parsed())
        return emit(run_config_validate(validate_path));
    if (bench->parsed()) return emit(run_bench(config_flag, corpus_path));
    return 1;
}

} // namespace ethosgate::cli
