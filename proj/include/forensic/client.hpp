#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "forensic/error.hpp"
#include "forensic/json_util.hpp"
#include "forensic/schema.hpp"

namespace forensic {

// ---------------------------------------------------------------------------
// Errors

class RequestError : public Error {
public:
    RequestError(const std::string& what, int status) : Error(what), status_(status) {}
    int status() const { return status_; }

private:
    int status_;
};

// Non-retryable 4xx.
class PermanentRequestError : public RequestError {
public:
    using RequestError::RequestError;
};

// Timeouts, 429 or 5xx on every allowed attempt.
class TransientExhaustedError : public RequestError {
public:
    using RequestError::RequestError;
};

// A 2xx whose body does not follow the chat-completions contract.
class ProtocolError : public RequestError {
public:
    using RequestError::RequestError;
};

class UnsupportedCapability : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Configuration

struct RetryPolicy {
    int max_attempts = 4;
    int base_backoff_ms = 500;
    double jitter = 0.2;  // fraction in [0, 1]; delays never shrink between retries
};

// How teacher-forced token scoring is requested from the endpoint.
enum class ScoringMode {
    None,             // endpoint cannot score
    ChatEcho,         // chat-completions with echo+logprobs on the final assistant message
    CompletionsEcho,  // legacy /completions echo+logprobs over a flattened prompt
};

std::string_view to_string(ScoringMode mode);

struct EndpointConfig {
    std::string base_url;  // e.g. http://127.0.0.1:8000/v1
    std::string api_key_env = "FORENSIC_API_KEY";  // empty: send no Authorization header
    std::string model_id;
    double timeout_s = 120.0;
    int max_in_flight = 4;
    RetryPolicy retry;
    ScoringMode scoring = ScoringMode::None;
    bool structured_output = true;
};

// Throws ConfigError on a violated invariant.
void validate(const EndpointConfig& cfg);

// Digest of the configuration (never includes the key itself).
std::string endpoint_hash(const EndpointConfig& cfg);

void to_json(Json& j, const EndpointConfig& cfg);
void from_json(const Json& j, EndpointConfig& cfg);

// ---------------------------------------------------------------------------
// Exchange types

struct ImagePayload {
    std::string mime;
    std::string sha256;
    std::shared_ptr<const std::string> bytes;

    static ImagePayload from_bytes(std::string bytes);
    static ImagePayload from_file(const std::filesystem::path& path);
};

using ContentPart = std::variant<std::string, ImagePayload>;

struct ChatMessage {
    Role role = Role::User;
    std::vector<ContentPart> content;

    std::string text() const;
    static ChatMessage text_only(Role role, std::string text);
};

using ImageResolver = std::function<ImagePayload(const std::string& image_id)>;

// Inlines ImageRefs through `resolve`.
ChatMessage to_chat_message(const Message& message, const ImageResolver& resolve);

// Resolver reading images listed in an index from disk.
ImageResolver index_resolver(const ImageIndex& index);

struct Sampling {
    double temperature = 0.0;
    int max_tokens = 2048;
    std::optional<std::uint64_t> seed;
};

// Teacher-forced scoring target. Token range, when given, is applied to the
// tokens the endpoint reports for that message.
struct ScoreSpan {
    std::size_t message_index = 0;
    std::optional<std::size_t> token_begin;
    std::optional<std::size_t> token_end;
};

struct ChatRequest {
    std::vector<ChatMessage> messages;
    Sampling sampling;
    bool want_logprobs = false;
    std::vector<ScoreSpan> score_spans;
    std::optional<Json> response_schema;  // JSON schema for structured output

    // Request body. With inline_images=false, images are referenced by digest
    // instead of base64 data URLs; that form identifies the request for caching.
    Json to_wire(const std::string& model_id, bool inline_images = true) const;
};

struct TokenLogprob {
    std::string token;
    double logprob = 0.0;  // natural log, <= 0

    bool operator==(const TokenLogprob&) const = default;
};

struct Usage {
    int prompt_tokens = 0;
    int completion_tokens = 0;
    bool operator==(const Usage&) const = default;
};

struct ChatResponse {
    std::string text;
    std::optional<std::vector<TokenLogprob>> token_logprobs;
    Usage usage;
    std::string finish_reason;
    bool from_cache = false;  // not serialized

    // Throws ProtocolError when the body breaks the contract.
    static ChatResponse from_body(const Json& body, bool want_logprobs);
};

void to_json(Json& j, const ChatResponse& r);
void from_json(const Json& j, ChatResponse& r);

struct CacheKey {
    std::string digest;

    // sha256 over model_id, a newline, and the canonical request identity.
    static CacheKey of(const std::string& model_id, const Json& identity);
    bool operator==(const CacheKey&) const = default;
};

// Content-addressed response bodies under <dir>/<first2>/<digest>.json.
class ResponseCache {
public:
    explicit ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

    std::optional<Json> load(const CacheKey& key) const;
    void store(const CacheKey& key, const Json& body) const;
    std::filesystem::path path_for(const CacheKey& key) const;
    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
};

// ---------------------------------------------------------------------------
// Transport

struct HttpReply {
    int status = 0;  // 0: no HTTP response (connect failure, timeout)
    std::string body;
    std::string error;
};

using HttpHeaders = std::vector<std::pair<std::string, std::string>>;

class Transport {
public:
    virtual ~Transport() = default;
    virtual HttpReply post(const std::string& path, const std::string& body,
                           const std::string& content_type, const HttpHeaders& headers) = 0;
    virtual HttpReply get(const std::string& path) = 0;
};

// Transport over cpp-httplib. `base_url` may carry a path prefix (".../v1").
std::shared_ptr<Transport> make_http_transport(const std::string& base_url, double timeout_s);

bool is_retryable_status(int status);

// Delay before retry number `retry` (1-based): base * 2^(retry-1) * (1 + jitter*u),
// with u in [0, 1).
std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, int retry, double u);

// ---------------------------------------------------------------------------
// Client

struct ClientStats {
    std::size_t requests = 0;
    std::size_t cache_hits = 0;
    std::size_t network_calls = 0;  // HTTP attempts, including retries
    std::size_t retries = 0;
};

/// OpenAI-compatible chat client with a response cache, retry policy and an
/// in-flight bound. Safe for concurrent use.
///
/// Identical requests (up to JSON key order) share one cache entry; while one
/// caller is fetching a key, others asking for the same key wait for it rather
/// than issuing a second call.
class ChatClient {
public:
    using Sleeper = std::function<void(std::chrono::milliseconds)>;

    ChatClient(EndpointConfig cfg, std::shared_ptr<Transport> transport,
               std::shared_ptr<const ResponseCache> cache = nullptr);

    ChatResponse send(const ChatRequest& request);

    // Lower-level form: POST `body` to `path`, caching under `identity`.
    // Returns the parsed response body and whether it came from the cache.
    std::pair<Json, bool> post_json(const std::string& path, const Json& body, const Json& identity);
    // Body built only on a cache miss.
    std::pair<Json, bool> post_json(const std::string& path, const std::function<Json()>& make_body,
                                    const Json& identity);

    CacheKey cache_key(const ChatRequest& request) const;

    const EndpointConfig& config() const { return cfg_; }
    ClientStats stats() const;
    void set_sleeper(Sleeper sleeper) { sleeper_ = std::move(sleeper); }

private:
    std::string resolve_api_key() const;
    Json fetch(const std::string& path, const std::string& body, const CacheKey& key);
    std::shared_ptr<std::mutex> key_lock(const std::string& digest);

    EndpointConfig cfg_;
    std::shared_ptr<Transport> transport_;
    std::shared_ptr<const ResponseCache> cache_;
    Sleeper sleeper_;
    std::counting_semaphore<1 << 20> in_flight_;

    std::mutex locks_mutex_;
    std::unordered_map<std::string, std::weak_ptr<std::mutex>> key_locks_;

    std::atomic<std::size_t> requests_{0};
    std::atomic<std::size_t> cache_hits_{0};
    std::atomic<std::size_t> network_calls_{0};
    std::atomic<std::size_t> retries_{0};
};

// ---------------------------------------------------------------------------
// Teacher-forced scoring

// Per-token logprobs of messages[target] (an assistant message) conditioned on
// all earlier messages. Throws UnsupportedCapability when the endpoint is not
// configured for scoring or its reply carries no logprobs; PreconditionError
// on a non-assistant or empty target.
std::vector<TokenLogprob> score_tokens(ChatClient& client, const std::vector<ChatMessage>& messages,
                                       std::size_t target);

// Sends a one-token scoring request and throws UnsupportedCapability unless
// logprobs come back.
void probe_scoring(ChatClient& client);

}  // namespace forensic
