#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "forensic/client.hpp"
#include "forensic/json_util.hpp"

namespace httplib {
class Server;
}

namespace testing_support {

using forensic::Json;

struct MockRequest {
    std::string method;
    std::string path;
    std::string body;
    Json json;  // null unless the body parsed as JSON
    std::map<std::string, std::string> headers;
};

struct MockReply {
    int status = 200;
    std::string body;
    std::string content_type = "application/json";
    int delay_ms = 0;
};

// HTTP server on 127.0.0.1 with a random port, recording every request and
// the peak number of requests handled at once.
class MockServer {
public:
    using Handler = std::function<MockReply(const MockRequest&)>;

    explicit MockServer(Handler handler);
    ~MockServer();
    MockServer(const MockServer&) = delete;
    MockServer& operator=(const MockServer&) = delete;

    std::string origin() const;
    std::string base_url() const { return origin() + "/v1"; }

    std::size_t count() const { return count_.load(); }
    std::size_t max_concurrent() const { return max_concurrent_.load(); }
    std::vector<MockRequest> requests() const;

private:
    MockReply handle(MockRequest req);

    Handler handler_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
    int port_ = 0;
    std::atomic<std::size_t> count_{0};
    std::atomic<std::size_t> active_{0};
    std::atomic<std::size_t> max_concurrent_{0};
    mutable std::mutex mutex_;
    std::vector<MockRequest> requests_;
};

// Chat-completions body with one choice.
std::string chat_body(const std::string& text);
std::string chat_body_with_logprobs(const std::string& text, const std::vector<double>& logprobs);

// Concatenated text of every message in a chat-completions request.
std::string request_text(const Json& body);
bool has_image_part(const Json& body);

// EndpointConfig pointing at a mock, without an API key and with short backoff.
forensic::EndpointConfig mock_endpoint(const std::string& base_url, const std::string& model = "mock-model");

class TempDir {
public:
    TempDir();
    ~TempDir();
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    std::filesystem::path path_;
};

// Synthetic photo-like image (gradients, shapes, noise) encoded by extension.
void write_desk_image(const std::filesystem::path& path, int width, int height, std::uint64_t seed);

// Directory of n distinct desk images named img_000.png, ...
void write_desk_dir(const std::filesystem::path& dir, int n, std::uint64_t seed, int width = 96, int height = 72);

// Deterministic stand-in for the V1/V2/V3 generator. Each hook may rewrite
// the normal reply for a call.
struct P2MockOptions {
    std::function<std::string(const std::string& normal, int rounds, int attempt)> v3_override;
    bool structured_wrapper = true;
};

MockServer::Handler p2_generator(P2MockOptions options = {});

// Dialogue JSON array with `rounds` rounds; user turns stay open-ended.
Json mock_dialogue(int rounds, const std::string& topic = "the image");

}  // namespace testing_support
