#include <httplib.h>

#include <cmath>

#include "forensic/client.hpp"

namespace forensic {
namespace {

class HttpTransport final : public Transport {
public:
    HttpTransport(const std::string& base_url, double timeout_s) : timeout_s_(timeout_s) {
        const auto scheme_end = base_url.find("://");
        if (scheme_end == std::string::npos) {
            throw ConfigError("base_url '" + base_url + "' has no scheme");
        }
        const auto path_start = base_url.find('/', scheme_end + 3);
        origin_ = base_url.substr(0, path_start);
        if (path_start != std::string::npos) {
            prefix_ = base_url.substr(path_start);
            while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
        }
    }

    HttpReply post(const std::string& path, const std::string& body, const std::string& content_type,
                   const HttpHeaders& headers) override {
        auto cli = make_client();
        httplib::Headers h;
        for (const auto& [k, v] : headers) h.emplace(k, v);
        return to_reply(cli->Post(prefix_ + path, h, body, content_type));
    }

    HttpReply get(const std::string& path) override {
        auto cli = make_client();
        return to_reply(cli->Get(prefix_ + path));
    }

private:
    // One client per call: httplib clients serialize requests on a shared socket.
    std::unique_ptr<httplib::Client> make_client() const {
        auto cli = std::make_unique<httplib::Client>(origin_);
        const auto secs = static_cast<time_t>(std::floor(timeout_s_));
        const auto usecs = static_cast<time_t>((timeout_s_ - std::floor(timeout_s_)) * 1e6);
        cli->set_connection_timeout(secs, usecs);
        cli->set_read_timeout(secs, usecs);
        cli->set_write_timeout(secs, usecs);
        return cli;
    }

    static HttpReply to_reply(const httplib::Result& res) {
        if (!res) {
            return HttpReply{0, {}, httplib::to_string(res.error())};
        }
        return HttpReply{res->status, res->body, {}};
    }

    std::string origin_;
    std::string prefix_;
    double timeout_s_;
};

}  // namespace

std::shared_ptr<Transport> make_http_transport(const std::string& base_url, double timeout_s) {
    return std::make_shared<HttpTransport>(base_url, timeout_s);
}

}  // namespace forensic
