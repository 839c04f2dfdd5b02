#pragma once

#include "mia/llm_gateway.hpp"

#include <chrono>
#include <string>

namespace mia::detail {

struct HttpResult {
    bool connected = false;
    int status = 0;
    std::string body;
    std::string error;
};

HttpResult post_json(const Endpoint& ep, const std::string& path, const std::string& api_key,
                     const std::string& body, std::chrono::milliseconds timeout);

}  // namespace mia::detail
