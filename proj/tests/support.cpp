#include "support.hpp"

#include <httplib.h>

#include <chrono>
#include <random>
#include <regex>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace fs = std::filesystem;

namespace testing_support {

MockServer::MockServer(Handler handler) : handler_(std::move(handler)), server_(std::make_unique<httplib::Server>()) {
    server_->new_task_queue = [] { return new httplib::ThreadPool(32); };
    auto route = [this](const httplib::Request& req, httplib::Response& res) {
        MockRequest m;
        m.method = req.method;
        m.path = req.path;
        m.body = req.body;
        for (const auto& [k, v] : req.headers) {
            m.headers[k] = v;
        }
        m.json = Json::parse(req.body, nullptr, false);
        if (m.json.is_discarded()) {
            m.json = nullptr;
        }
        const MockReply reply = handle(std::move(m));
        res.status = reply.status;
        res.set_content(reply.body, reply.content_type);
    };
    server_->Post(".*", route);
    server_->Get(".*", route);
    port_ = server_->bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
}

MockServer::~MockServer() {
    server_->stop();
    if (thread_.joinable()) {
        thread_.join();
    }
}

std::string MockServer::origin() const {
    return "http://127.0.0.1:" + std::to_string(port_);
}

std::vector<MockRequest> MockServer::requests() const {
    std::lock_guard lock(mutex_);
    return requests_;
}

MockReply MockServer::handle(MockRequest req) {
    ++count_;
    const std::size_t now = ++active_;
    std::size_t seen = max_concurrent_.load();
    while (now > seen && !max_concurrent_.compare_exchange_weak(seen, now)) {
    }
    MockReply reply;
    try {
        reply = handler_(req);
    } catch (const std::exception& e) {
        reply = MockReply{500, e.what(), "text/plain"};
    }
    if (reply.delay_ms > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(reply.delay_ms));
    }
    {
        std::lock_guard lock(mutex_);
        requests_.push_back(std::move(req));
    }
    --active_;
    return reply;
}

std::string chat_body(const std::string& text) {
    return Json{{"choices", {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", text}}}, {"finish_reason", "stop"}}}},
                {"usage", {{"prompt_tokens", 10}, {"completion_tokens", 5}}}}
        .dump();
}

std::string chat_body_with_logprobs(const std::string& text, const std::vector<double>& logprobs) {
    Json content = Json::array();
    for (std::size_t i = 0; i < logprobs.size(); ++i) {
        content.push_back({{"token", "t" + std::to_string(i)}, {"logprob", logprobs[i]}});
    }
    return Json{{"choices",
                 {{{"index", 0},
                   {"message", {{"role", "assistant"}, {"content", text}}},
                   {"logprobs", {{"content", content}}},
                   {"finish_reason", "length"}}}}}
        .dump();
}

std::string request_text(const Json& body) {
    std::string out;
    if (!body.is_object() || !body.contains("messages")) {
        return out;
    }
    for (const Json& m : body["messages"]) {
        const Json& c = m["content"];
        if (c.is_string()) {
            out += c.get<std::string>();
        } else if (c.is_array()) {
            for (const Json& p : c) {
                if (p.value("type", "") == "text") {
                    out += p["text"].get<std::string>();
                }
            }
        }
        out += "\n";
    }
    return out;
}

bool has_image_part(const Json& body) {
    if (!body.is_object() || !body.contains("messages")) {
        return false;
    }
    for (const Json& m : body["messages"]) {
        if (m["content"].is_array()) {
            for (const Json& p : m["content"]) {
                if (p.value("type", "") == "image_url") {
                    return true;
                }
            }
        }
    }
    return false;
}

forensic::EndpointConfig mock_endpoint(const std::string& base_url, const std::string& model) {
    forensic::EndpointConfig cfg;
    cfg.base_url = base_url;
    cfg.api_key_env = "";
    cfg.model_id = model;
    cfg.timeout_s = 10;
    cfg.max_in_flight = 4;
    cfg.retry = {4, 1, 0.2};
    return cfg;
}

TempDir::TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = fs::temp_directory_path() /
            ("forensic_test_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    fs::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

void write_desk_image(const fs::path& path, int width, int height, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> u(0, 255);
    cv::Mat img(height, width, CV_8UC3);
    const int r0 = u(rng), g0 = u(rng), b0 = u(rng);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            img.at<cv::Vec3b>(y, x) = cv::Vec3b(static_cast<uchar>((b0 + x * 2) % 256), static_cast<uchar>((g0 + y * 3) % 256),
                                                static_cast<uchar>((r0 + x + y) % 256));
        }
    }
    for (int i = 0; i < 4; ++i) {
        cv::circle(img, {u(rng) % width, u(rng) % height}, 4 + u(rng) % 16, cv::Scalar(u(rng), u(rng), u(rng)), -1);
        cv::rectangle(img, cv::Rect(u(rng) % width, u(rng) % height, 3 + u(rng) % 20, 3 + u(rng) % 20),
                      cv::Scalar(u(rng), u(rng), u(rng)), -1);
    }
    cv::Mat noise(height, width, CV_8UC3);
    cv::randu(noise, 0, 12);
    img += noise;
    fs::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), img)) {
        throw std::runtime_error("cannot write " + path.string());
    }
}

void write_desk_dir(const fs::path& dir, int n, std::uint64_t seed, int width, int height) {
    for (int i = 0; i < n; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "img_%03d.png", i);
        write_desk_image(dir / name, width, height, seed * 1000 + static_cast<std::uint64_t>(i));
    }
}

Json mock_dialogue(int rounds, const std::string& topic) {
    static const char* kUser[] = {
        "What can you tell me about this picture?",
        "Can you say more about the region you mentioned first?",
        "How does that compare with what it should look like?",
        "Could you summarize your analysis?",
        "Anything else worth checking?",
        "And the background?",
    };
    Json turns = Json::array();
    for (int r = 0; r < rounds; ++r) {
        turns.push_back({{"role", "user"}, {"content", kUser[r % 6]}});
        turns.push_back({{"role", "assistant"},
                         {"content", "Round " + std::to_string(r + 1) + ": looking at " + topic +
                                         ", the hand in the lower left shows six fingers, while a normal human hand has five."}});
    }
    return turns;
}

MockServer::Handler p2_generator(P2MockOptions options) {
    auto attempts = std::make_shared<std::map<std::string, int>>();
    auto mutex = std::make_shared<std::mutex>();
    return [options, attempts, mutex](const MockRequest& req) -> MockReply {
        const std::string text = request_text(req.json);
        if (text.find("return **only** a JSON array") != std::string::npos) {
            const Json evidence = Json::array(
                {{{"text", "The left hand in the lower part of the image has six fingers."}, {"bbox2d", {620, 80, 900, 310}}},
                 {{"text", "Lighting across the whole scene is even and plausible."}, {"bbox2d", Json::array()}},
                 {{"text", "Broken entry that must be dropped."}, {"bbox2d", {300, 200, 100, 400}}}});
            return {200, chat_body("```json\n" + evidence.dump(2) + "\n```")};
        }
        if (text.find("The description you should process is") != std::string::npos) {
            return {200, chat_body("A normal human hand has five fingers. Even lighting is expected in reality.")};
        }
        if (text.find("The scenario is set as follows") != std::string::npos) {
            static const std::regex re(R"(exactly (\d) round)");
            std::smatch m;
            const int rounds = std::regex_search(text, m, re) ? std::stoi(m[1].str()) : 1;
            const std::string key = text + "#" + std::to_string(rounds);
            int attempt = 0;
            {
                std::lock_guard lock(*mutex);
                attempt = (*attempts)[key]++;
            }
            const Json dialogue = mock_dialogue(rounds);
            const bool wrap = options.structured_wrapper && req.json.contains("response_format");
            std::string normal = wrap ? Json{{"dialogue", dialogue}}.dump() : dialogue.dump();
            if (options.v3_override) {
                normal = options.v3_override(normal, rounds, attempt);
            }
            return {200, chat_body(normal)};
        }
        return {400, R"({"error":"unrecognized request"})"};
    };
}

}  // namespace testing_support
