#include <spdlog/spdlog.h>

#include "forensic/client.hpp"

namespace forensic {
namespace {

std::vector<TokenLogprob> slice(std::vector<TokenLogprob> tokens, const ScoreSpan& span) {
    const std::size_t begin = std::min(span.token_begin.value_or(0), tokens.size());
    const std::size_t end = std::min(span.token_end.value_or(tokens.size()), tokens.size());
    if (begin >= end) {
        return {};
    }
    return {tokens.begin() + static_cast<std::ptrdiff_t>(begin), tokens.begin() + static_cast<std::ptrdiff_t>(end)};
}

std::vector<TokenLogprob> score_chat_echo(ChatClient& client, const std::vector<ChatMessage>& messages,
                                          std::size_t target) {
    ChatRequest req;
    req.messages.assign(messages.begin(), messages.begin() + static_cast<std::ptrdiff_t>(target) + 1);
    req.score_spans.push_back(ScoreSpan{target, std::nullopt, std::nullopt});
    ChatResponse r = client.send(req);
    if (!r.token_logprobs) {
        throw UnsupportedCapability("endpoint returned no logprobs for an echo scoring request");
    }
    return slice(std::move(*r.token_logprobs), req.score_spans.front());
}

// Role-tagged flattening for completion-style endpoints. Images are dropped.
std::vector<TokenLogprob> score_completions_echo(ChatClient& client, const std::vector<ChatMessage>& messages,
                                                 std::size_t target) {
    std::string prompt;
    for (std::size_t i = 0; i < target; ++i) {
        prompt += "<|" + std::string(to_string(messages[i].role)) + "|>\n" + messages[i].text() + "\n";
    }
    prompt += "<|assistant|>\n";
    const std::size_t start = prompt.size();
    prompt += messages[target].text();
    const std::size_t end = prompt.size();

    const Json body{{"model", client.config().model_id},
                    {"prompt", prompt},
                    {"echo", true},
                    {"logprobs", 1},
                    {"max_tokens", 1},
                    {"temperature", 0.0}};
    auto [reply, cached] = client.post_json("/completions", body, Json{{"path", "/completions"}, {"body", body}});
    (void)cached;
    std::vector<TokenLogprob> out;
    try {
        const Json& choice = reply.at("choices").at(0);
        if (!choice.contains("logprobs") || !choice.at("logprobs").is_object()) {
            throw UnsupportedCapability("completions endpoint returned no logprobs");
        }
        const Json& lp = choice.at("logprobs");
        const Json& tokens = lp.at("tokens");
        const Json& values = lp.at("token_logprobs");
        const Json& offsets = lp.at("text_offset");
        for (std::size_t i = 0; i < tokens.size() && i < values.size() && i < offsets.size(); ++i) {
            const auto off = offsets.at(i).get<std::size_t>();
            if (off < start || off >= end || values.at(i).is_null()) {
                continue;
            }
            const double v = values.at(i).get<double>();
            if (!(v <= 0.0)) {
                throw ProtocolError("logprob " + std::to_string(v) + " is not <= 0", 200);
            }
            out.push_back({tokens.at(i).get<std::string>(), v});
        }
    } catch (const Json::exception& e) {
        throw ProtocolError(std::string("malformed completions response: ") + e.what(), 200);
    }
    return out;
}

}  // namespace

std::vector<TokenLogprob> score_tokens(ChatClient& client, const std::vector<ChatMessage>& messages,
                                       std::size_t target) {
    if (target >= messages.size() || messages[target].role != Role::Assistant) {
        throw PreconditionError("score_tokens: target must be an assistant message");
    }
    if (messages[target].text().empty()) {
        throw PreconditionError("score_tokens: target message is empty");
    }
    std::vector<TokenLogprob> tokens;
    switch (client.config().scoring) {
        case ScoringMode::None:
            throw UnsupportedCapability("endpoint '" + client.config().model_id + "' is not configured for scoring");
        case ScoringMode::ChatEcho:
            tokens = score_chat_echo(client, messages, target);
            break;
        case ScoringMode::CompletionsEcho:
            tokens = score_completions_echo(client, messages, target);
            break;
    }
    if (tokens.empty()) {
        throw ProtocolError("scoring returned zero tokens for the target message", 200);
    }
    return tokens;
}

void probe_scoring(ChatClient& client) {
    const std::vector<ChatMessage> probe{ChatMessage::text_only(Role::User, "Reply with the word ok."),
                                         ChatMessage::text_only(Role::Assistant, "ok")};
    try {
        score_tokens(client, probe, 1);
    } catch (const PermanentRequestError& e) {
        throw UnsupportedCapability(std::string("scoring probe rejected: ") + e.what());
    } catch (const ProtocolError& e) {
        throw UnsupportedCapability(std::string("scoring probe failed: ") + e.what());
    }
}

}  // namespace forensic
