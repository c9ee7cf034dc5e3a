#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <string>

#include "forensic/client.hpp"

namespace forensic::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

using TransportFactory = std::function<std::shared_ptr<Transport>(const std::string& base_url, double timeout_s)>;

struct Env {
    TransportFactory make_transport = make_http_transport;
    std::ostream* out = nullptr;  // defaults to std::cout
    std::ostream* err = nullptr;  // defaults to std::cerr
};

int dispatch(int argc, const char* const* argv, const Env& env = {});

}  // namespace forensic::cli
