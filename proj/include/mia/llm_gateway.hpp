#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <vector>

namespace mia {

struct ChatRequest {
    std::string system;
    std::string user;
    double temperature = 0.0;
    int max_tokens = 1024;
    std::string model_tag;
};

// Hex SHA-256 over a canonical serialization of every request field.
std::string request_digest(const ChatRequest& req);

struct Usage {
    int prompt_tokens = 0;
    int completion_tokens = 0;
};

struct ChatResponse {
    std::string text;
    Usage usage;
};

// Thrown by transports for failures worth retrying.
struct TransientFailure {
    bool rate_limited = false;
    std::string message;
};

class ChatTransport {
public:
    virtual ~ChatTransport() = default;
    // Throws TransientFailure for retryable conditions, mia::Error otherwise.
    virtual ChatResponse send(const ChatRequest& req) = 0;
};

// Deterministic offline stand-in. The reply is a function of (seed, request
// digest) only; it recognizes the pipeline templates and answers in the shape
// each parser expects, including a share of malformed filter replies.
class MockChatTransport final : public ChatTransport {
public:
    using Responder = std::function<std::optional<std::string>(const ChatRequest&)>;

    explicit MockChatTransport(std::uint64_t seed = 0) : seed_(seed) {}

    // Scripted replies take precedence over the canned repertoire.
    void set_responder(Responder r) { responder_ = std::move(r); }

    ChatResponse send(const ChatRequest& req) override;

    std::string canned_reply(const ChatRequest& req) const;

private:
    std::uint64_t seed_;
    Responder responder_;
};

struct Endpoint {
    std::string scheme;  // http or https
    std::string host;
    int port = 0;
    std::string base_path;  // e.g. "/v1", no trailing slash
};

Endpoint parse_endpoint(const std::string& url);

// OpenAI-compatible POST {base}/chat/completions.
class HttpChatTransport final : public ChatTransport {
public:
    HttpChatTransport(std::string endpoint_url, std::string api_key,
                      std::chrono::milliseconds timeout = std::chrono::seconds(120));
    ChatResponse send(const ChatRequest& req) override;

private:
    Endpoint endpoint_;
    std::string api_key_;
    std::chrono::milliseconds timeout_;
};

struct RetryPolicy {
    int max_retries = 4;
    std::chrono::milliseconds initial_backoff{500};
    double multiplier = 2.0;
    std::chrono::milliseconds max_backoff{16000};
};

// Delay before retry i (0-based). Non-decreasing in i.
std::vector<std::chrono::milliseconds> backoff_schedule(const RetryPolicy& policy);

struct GatewayOptions {
    RetryPolicy retry;
    std::size_t parallelism = 4;
    std::optional<std::filesystem::path> audit_log;
    std::string default_model = "mock";
    std::function<void(std::chrono::milliseconds)> sleeper;  // defaults to this_thread::sleep_for
};

// Validates requests, bounds in-flight calls, retries transient failures and
// appends request/response pairs to the audit log.
class LlmGateway {
public:
    LlmGateway(std::unique_ptr<ChatTransport> transport, GatewayOptions options);

    ChatResponse complete(ChatRequest req);

    std::size_t parallelism() const { return options_.parallelism; }
    const std::string& model_tag() const { return options_.default_model; }
    std::uint64_t calls() const { return calls_; }

private:
    void audit(const ChatRequest& req, const std::string& digest, const ChatResponse* resp,
               const std::string& error, int attempts);

    std::unique_ptr<ChatTransport> transport_;
    GatewayOptions options_;
    std::counting_semaphore<1024> slots_;
    std::mutex audit_mu_;
    std::ofstream audit_out_;
    std::atomic<std::uint64_t> calls_{0};
};

std::unique_ptr<LlmGateway> make_mock_gateway(std::uint64_t seed, std::size_t parallelism = 1);

}  // namespace mia
