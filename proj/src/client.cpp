#include "forensic/client.hpp"

#include <cmath>
#include <cstdlib>
#include <thread>

#include <spdlog/spdlog.h>

#include "forensic/hash.hpp"
#include "forensic/image.hpp"
#include "forensic/rng.hpp"

namespace forensic {

std::string_view to_string(ScoringMode mode) {
    switch (mode) {
        case ScoringMode::None: return "none";
        case ScoringMode::ChatEcho: return "chat-echo";
        case ScoringMode::CompletionsEcho: return "completions-echo";
    }
    return "none";
}

static ScoringMode parse_scoring_mode(std::string_view text) {
    if (text == "none") return ScoringMode::None;
    if (text == "chat-echo") return ScoringMode::ChatEcho;
    if (text == "completions-echo") return ScoringMode::CompletionsEcho;
    throw ConfigError("unknown scoring mode '" + std::string(text) + "'");
}

void validate(const EndpointConfig& cfg) {
    if (cfg.base_url.empty()) throw ConfigError("endpoint: base_url is empty");
    if (cfg.model_id.empty()) throw ConfigError("endpoint: model_id is empty");
    if (!(cfg.timeout_s > 0)) throw ConfigError("endpoint: timeout_s must be positive");
    if (cfg.max_in_flight < 1) throw ConfigError("endpoint: max_in_flight must be >= 1");
    if (cfg.retry.max_attempts < 1) throw ConfigError("endpoint: retry.max_attempts must be >= 1");
    if (cfg.retry.base_backoff_ms < 0) throw ConfigError("endpoint: retry.base_backoff_ms is negative");
    if (cfg.retry.jitter < 0 || cfg.retry.jitter > 1) throw ConfigError("endpoint: retry.jitter outside [0, 1]");
}

std::string endpoint_hash(const EndpointConfig& cfg) {
    return sha256_hex(canonical_dump(Json(cfg)));
}

void to_json(Json& j, const EndpointConfig& cfg) {
    j = Json{{"base_url", cfg.base_url},
             {"api_key_env", cfg.api_key_env},
             {"model_id", cfg.model_id},
             {"timeout_s", cfg.timeout_s},
             {"max_in_flight", cfg.max_in_flight},
             {"retry",
              {{"max_attempts", cfg.retry.max_attempts},
               {"base_backoff_ms", cfg.retry.base_backoff_ms},
               {"jitter", cfg.retry.jitter}}},
             {"scoring", to_string(cfg.scoring)},
             {"structured_output", cfg.structured_output}};
}

void from_json(const Json& j, EndpointConfig& cfg) {
    try {
        cfg = EndpointConfig{};
        j.at("base_url").get_to(cfg.base_url);
        j.at("model_id").get_to(cfg.model_id);
        cfg.api_key_env = j.value("api_key_env", cfg.api_key_env);
        cfg.timeout_s = j.value("timeout_s", cfg.timeout_s);
        cfg.max_in_flight = j.value("max_in_flight", cfg.max_in_flight);
        if (j.contains("retry")) {
            const Json& r = j.at("retry");
            cfg.retry.max_attempts = r.value("max_attempts", cfg.retry.max_attempts);
            cfg.retry.base_backoff_ms = r.value("base_backoff_ms", cfg.retry.base_backoff_ms);
            cfg.retry.jitter = r.value("jitter", cfg.retry.jitter);
        }
        cfg.scoring = parse_scoring_mode(j.value("scoring", std::string("none")));
        cfg.structured_output = j.value("structured_output", cfg.structured_output);
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("endpoint config: ") + e.what());
    }
    validate(cfg);
}

// ---------------------------------------------------------------------------

ImagePayload ImagePayload::from_bytes(std::string bytes) {
    ImagePayload p;
    p.mime = sniff_mime(bytes);
    if (p.mime.empty()) {
        throw DataError("image payload: unrecognized format");
    }
    p.sha256 = sha256_hex(bytes);
    p.bytes = std::make_shared<const std::string>(std::move(bytes));
    return p;
}

ImagePayload ImagePayload::from_file(const std::filesystem::path& path) {
    return from_bytes(read_file_bytes(path));
}

std::string ChatMessage::text() const {
    std::string out;
    for (const auto& part : content) {
        if (const auto* s = std::get_if<std::string>(&part)) out += *s;
    }
    return out;
}

ChatMessage ChatMessage::text_only(Role role, std::string text) {
    return ChatMessage{role, {std::move(text)}};
}

ChatMessage to_chat_message(const Message& message, const ImageResolver& resolve) {
    ChatMessage out{message.role, {}};
    for (const auto& part : message.parts) {
        if (const auto* t = std::get_if<TextPart>(&part)) {
            out.content.emplace_back(t->text);
        } else {
            out.content.emplace_back(resolve(std::get<ImageRef>(part).image_id));
        }
    }
    return out;
}

ImageResolver index_resolver(const ImageIndex& index) {
    return [&index](const std::string& id) {
        const ImageRecord* rec = index.find(id);
        if (!rec) {
            throw DataError("unresolved image '" + id + "'");
        }
        return ImagePayload::from_file(index.resolve(*rec));
    };
}

static Json content_json(const ChatMessage& m, bool inline_images) {
    if (m.content.size() == 1 && std::holds_alternative<std::string>(m.content.front())) {
        return std::get<std::string>(m.content.front());
    }
    Json parts = Json::array();
    for (const auto& part : m.content) {
        if (const auto* s = std::get_if<std::string>(&part)) {
            parts.push_back({{"type", "text"}, {"text", *s}});
            continue;
        }
        const auto& img = std::get<ImagePayload>(part);
        if (inline_images) {
            parts.push_back({{"type", "image_url"},
                             {"image_url", {{"url", "data:" + img.mime + ";base64," + base64_encode(*img.bytes)}}}});
        } else {
            parts.push_back({{"type", "image"}, {"mime", img.mime}, {"sha256", img.sha256}});
        }
    }
    return parts;
}

Json ChatRequest::to_wire(const std::string& model_id, bool inline_images) const {
    Json msgs = Json::array();
    for (const auto& m : messages) {
        msgs.push_back({{"role", to_string(m.role)}, {"content", content_json(m, inline_images)}});
    }
    Json body{{"model", model_id},
              {"messages", std::move(msgs)},
              {"temperature", sampling.temperature},
              {"max_tokens", sampling.max_tokens}};
    if (sampling.seed) {
        body["seed"] = *sampling.seed;
    }
    if (want_logprobs) {
        body["logprobs"] = true;
    }
    if (!score_spans.empty()) {
        Json spans = Json::array();
        for (const auto& s : score_spans) {
            Json span{{"message", s.message_index}};
            if (s.token_begin) span["token_begin"] = *s.token_begin;
            if (s.token_end) span["token_end"] = *s.token_end;
            spans.push_back(std::move(span));
        }
        body["echo"] = true;
        body["logprobs"] = true;
        body["max_tokens"] = 1;
        body["score_spans"] = std::move(spans);
    }
    if (response_schema) {
        body["response_format"] = {{"type", "json_schema"},
                                   {"json_schema", {{"name", "response"}, {"strict", true}, {"schema", *response_schema}}}};
    }
    return body;
}

static std::vector<TokenLogprob> parse_logprob_list(const Json& list) {
    std::vector<TokenLogprob> out;
    for (const auto& item : list) {
        TokenLogprob t{item.value("token", std::string{}), item.at("logprob").get<double>()};
        if (!(t.logprob <= 0.0) || !std::isfinite(t.logprob)) {
            throw ProtocolError("logprob " + std::to_string(t.logprob) + " is not <= 0", 200);
        }
        out.push_back(std::move(t));
    }
    return out;
}

ChatResponse ChatResponse::from_body(const Json& body, bool want_logprobs) {
    try {
        const Json& choice = body.at("choices").at(0);
        ChatResponse r;
        const Json& message = choice.at("message");
        const Json& content = message.contains("content") ? message.at("content") : Json();
        if (content.is_string()) {
            r.text = content.get<std::string>();
        } else if (content.is_array()) {
            for (const auto& part : content) {
                if (part.value("type", "") == "text") r.text += part.at("text").get<std::string>();
            }
        }
        if (choice.contains("finish_reason") && choice.at("finish_reason").is_string()) {
            r.finish_reason = choice.at("finish_reason").get<std::string>();
        }
        if (body.contains("usage") && body.at("usage").is_object()) {
            const Json& u = body.at("usage");
            r.usage.prompt_tokens = u.value("prompt_tokens", 0);
            r.usage.completion_tokens = u.value("completion_tokens", 0);
        }
        if (want_logprobs && choice.contains("logprobs") && choice.at("logprobs").is_object() &&
            choice.at("logprobs").contains("content") && choice.at("logprobs").at("content").is_array()) {
            r.token_logprobs = parse_logprob_list(choice.at("logprobs").at("content"));
        }
        return r;
    } catch (const Json::exception& e) {
        throw ProtocolError(std::string("malformed chat response: ") + e.what(), 200);
    }
}

void to_json(Json& j, const ChatResponse& r) {
    j = Json{{"text", r.text},
             {"finish_reason", r.finish_reason},
             {"usage", {{"prompt_tokens", r.usage.prompt_tokens}, {"completion_tokens", r.usage.completion_tokens}}}};
    if (r.token_logprobs) {
        Json list = Json::array();
        for (const auto& t : *r.token_logprobs) list.push_back({{"token", t.token}, {"logprob", t.logprob}});
        j["token_logprobs"] = std::move(list);
    }
}

void from_json(const Json& j, ChatResponse& r) {
    r = ChatResponse{};
    j.at("text").get_to(r.text);
    r.finish_reason = j.value("finish_reason", std::string{});
    if (j.contains("usage")) {
        r.usage.prompt_tokens = j.at("usage").value("prompt_tokens", 0);
        r.usage.completion_tokens = j.at("usage").value("completion_tokens", 0);
    }
    if (j.contains("token_logprobs")) {
        r.token_logprobs = parse_logprob_list(j.at("token_logprobs"));
    }
}

CacheKey CacheKey::of(const std::string& model_id, const Json& identity) {
    return CacheKey{sha256_hex(model_id + "\n" + canonical_dump(identity))};
}

std::filesystem::path ResponseCache::path_for(const CacheKey& key) const {
    return dir_ / key.digest.substr(0, 2) / (key.digest + ".json");
}

std::optional<Json> ResponseCache::load(const CacheKey& key) const {
    const auto path = path_for(key);
    std::error_code ec;
    if (!std::filesystem::exists(path, ec)) {
        return std::nullopt;
    }
    Json entry = Json::parse(read_file_bytes(path), nullptr, false);
    if (entry.is_discarded() || !entry.contains("body")) {
        spdlog::warn("cache entry {} is corrupt; ignoring", path.string());
        return std::nullopt;
    }
    return entry.at("body");
}

void ResponseCache::store(const CacheKey& key, const Json& body) const {
    write_file_atomic(path_for(key), canonical_dump(Json{{"digest", key.digest}, {"body", body}}));
}

bool is_retryable_status(int status) {
    return status == 0 || status == 408 || status == 429 || status >= 500;
}

std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, int retry, double u) {
    const double base = policy.base_backoff_ms * std::ldexp(1.0, retry - 1);
    return std::chrono::milliseconds(static_cast<long long>(std::llround(base * (1.0 + policy.jitter * u))));
}

// ---------------------------------------------------------------------------

ChatClient::ChatClient(EndpointConfig cfg, std::shared_ptr<Transport> transport,
                       std::shared_ptr<const ResponseCache> cache)
    : cfg_(std::move(cfg)),
      transport_(std::move(transport)),
      cache_(std::move(cache)),
      sleeper_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }),
      in_flight_(std::max(1, cfg_.max_in_flight)) {
    validate(cfg_);
    if (!transport_) {
        throw ConfigError("ChatClient: no transport");
    }
}

std::string ChatClient::resolve_api_key() const {
    if (cfg_.api_key_env.empty()) {
        return {};
    }
    const char* value = std::getenv(cfg_.api_key_env.c_str());
    if (!value || !*value) {
        throw ConfigError("API key variable " + cfg_.api_key_env + " is not set");
    }
    return value;
}

CacheKey ChatClient::cache_key(const ChatRequest& request) const {
    return CacheKey::of(cfg_.model_id,
                        Json{{"path", "/chat/completions"}, {"body", request.to_wire(cfg_.model_id, false)}});
}

std::shared_ptr<std::mutex> ChatClient::key_lock(const std::string& digest) {
    std::lock_guard guard(locks_mutex_);
    auto& slot = key_locks_[digest];
    auto lock = slot.lock();
    if (!lock) {
        lock = std::make_shared<std::mutex>();
        slot = lock;
    }
    if (key_locks_.size() > 4096) {
        std::erase_if(key_locks_, [](const auto& kv) { return kv.second.expired(); });
    }
    return lock;
}

Json ChatClient::fetch(const std::string& path, const std::string& body, const CacheKey& key) {
    HttpHeaders headers;
    if (const std::string api_key = resolve_api_key(); !api_key.empty()) {
        headers.emplace_back("Authorization", "Bearer " + api_key);
    }
    Rng jitter_rng(derive_seed(0, key.digest));

    in_flight_.acquire();
    struct Release {
        std::counting_semaphore<1 << 20>& sem;
        ~Release() { sem.release(); }
    } release{in_flight_};

    for (int attempt = 1;; ++attempt) {
        ++network_calls_;
        const HttpReply reply = transport_->post(path, body, "application/json", headers);
        if (reply.status >= 200 && reply.status < 300) {
            Json parsed = Json::parse(reply.body, nullptr, false);
            if (parsed.is_discarded()) {
                throw ProtocolError("response body is not JSON", reply.status);
            }
            return parsed;
        }
        const std::string what = reply.status == 0
                                     ? "transport error: " + reply.error
                                     : "HTTP " + std::to_string(reply.status) + " from " + path;
        if (!is_retryable_status(reply.status)) {
            throw PermanentRequestError(what, reply.status);
        }
        if (attempt >= cfg_.retry.max_attempts) {
            throw TransientExhaustedError(what + " after " + std::to_string(attempt) + " attempt(s)", reply.status);
        }
        ++retries_;
        const auto delay = backoff_delay(cfg_.retry, attempt, jitter_rng.unit());
        spdlog::debug("{}; retry {} in {} ms", what, attempt, delay.count());
        sleeper_(delay);
    }
}

std::pair<Json, bool> ChatClient::post_json(const std::string& path, const Json& body, const Json& identity) {
    return post_json(path, [&body] { return body; }, identity);
}

std::pair<Json, bool> ChatClient::post_json(const std::string& path, const std::function<Json()>& make_body,
                                            const Json& identity) {
    ++requests_;
    resolve_api_key();  // a missing key fails before any I/O, cached or not
    const CacheKey key = CacheKey::of(cfg_.model_id, identity);
    const auto lock = key_lock(key.digest);
    std::lock_guard guard(*lock);
    if (cache_) {
        if (auto hit = cache_->load(key)) {
            ++cache_hits_;
            return {std::move(*hit), true};
        }
    }
    Json response = fetch(path, make_body().dump(), key);
    if (cache_) {
        cache_->store(key, response);
    }
    return {std::move(response), false};
}

ChatResponse ChatClient::send(const ChatRequest& request) {
    for (const auto& span : request.score_spans) {
        if (span.message_index >= request.messages.size() ||
            request.messages[span.message_index].role != Role::Assistant) {
            throw PreconditionError("score span must reference an assistant message");
        }
    }
    const Json identity{{"path", "/chat/completions"}, {"body", request.to_wire(cfg_.model_id, false)}};
    auto [body, cached] = post_json(
        "/chat/completions", [&] { return request.to_wire(cfg_.model_id, true); }, identity);
    ChatResponse r = ChatResponse::from_body(body, request.want_logprobs || !request.score_spans.empty());
    r.from_cache = cached;
    return r;
}

ClientStats ChatClient::stats() const {
    return ClientStats{requests_.load(), cache_hits_.load(), network_calls_.load(), retries_.load()};
}

}  // namespace forensic
