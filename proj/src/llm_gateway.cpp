#include "mia/llm_gateway.hpp"

#include "mia/corpus.hpp"
#include "mia/digest.hpp"
#include "mia/error.hpp"
#include "mia/text.hpp"
#include "http_post.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <thread>

namespace mia {

std::string request_digest(const ChatRequest& req) {
    nlohmann::ordered_json j{{"model", req.model_tag},
                             {"system", req.system},
                             {"user", req.user},
                             {"temperature", req.temperature},
                             {"max_tokens", req.max_tokens}};
    return sha256_hex(j.dump());
}

// ---------------------------------------------------------------------------
// Mock transport
// ---------------------------------------------------------------------------

namespace {

std::string between(const std::string& s, std::string_view open, std::string_view close) {
    auto b = s.find(open);
    if (b == std::string::npos) return {};
    b += open.size();
    auto e = s.find(close, b);
    if (e == std::string::npos) return {};
    return s.substr(b, e - b);
}

std::vector<std::string> words_of(std::string_view s) {
    std::vector<std::string> out;
    for (const auto& t : default_tokenizer().tokenize(s)) {
        out.emplace_back(s.substr(t.begin, t.end - t.begin));
    }
    return out;
}

std::string first_words(std::string_view s, std::size_t n) {
    auto w = words_of(s);
    if (w.size() > n) w.resize(n);
    return text::join(w, " ");
}

std::size_t count_indexed_items(const std::string& s) {
    std::size_t n = 0;
    while (s.find("\n[" + std::to_string(n) + "] ") != std::string::npos) ++n;
    return n;
}

std::string strip_word(std::string w) {
    while (!w.empty() && std::ispunct(static_cast<unsigned char>(w.back()))) w.pop_back();
    std::size_t b = 0;
    while (b < w.size() && std::ispunct(static_cast<unsigned char>(w[b]))) ++b;
    return w.substr(b);
}

std::string mock_entities(const std::string& chunk, std::uint64_t h) {
    auto words = words_of(chunk);
    std::vector<std::string> names;
    for (std::size_t i = 0; i < words.size() && names.size() < 5; ++i) {
        auto w = strip_word(words[i]);
        if (w.size() < 3 || !std::isupper(static_cast<unsigned char>(w[0]))) continue;
        bool lower_rest = std::all_of(w.begin() + 1, w.end(), [](char c) {
            return std::islower(static_cast<unsigned char>(c)) != 0;
        });
        if (!lower_rest) continue;
        if (std::find(names.begin(), names.end(), w) != names.end()) continue;
        names.push_back(w);
    }
    std::ostringstream out;
    for (std::size_t k = 0; k < names.size(); ++k) {
        // Context window around the first mention gives descriptions of varying length.
        std::size_t pos = 0;
        for (std::size_t i = 0; i < words.size(); ++i) {
            if (strip_word(words[i]) == names[k]) {
                pos = i;
                break;
            }
        }
        std::size_t span = 3 + (h >> (8 * k)) % 6;
        std::vector<std::string> ctx(words.begin() + static_cast<long>(pos),
                                     words.begin() + static_cast<long>(std::min(words.size(), pos + span)));
        out << names[k] << ": figure in the story, seen in \"" << text::join(ctx, " ") << "\"\n";
    }
    return out.str();
}

std::string mock_filter(std::size_t n, std::uint64_t h) {
    if (n == 0) return "[-1]";
    switch (h % 10) {
        case 0: return "[-1]";
        case 1: return "Relevant chunks: [" + std::to_string((h >> 8) % n) + "]";
        case 2: return "I am not sure which passages apply.";
        default: break;
    }
    std::size_t want = 1 + (h >> 16) % std::min<std::size_t>(3, n);
    std::vector<std::size_t> picks;
    std::uint64_t x = h;
    while (picks.size() < want) {
        x = x * 6364136223846793005ULL + 1442695040888963407ULL;
        auto v = static_cast<std::size_t>((x >> 33) % n);
        if (std::find(picks.begin(), picks.end(), v) == picks.end()) picks.push_back(v);
    }
    std::sort(picks.begin(), picks.end());
    std::string out = "[";
    for (std::size_t i = 0; i < picks.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(picks[i]);
    }
    return out + "]";
}

std::string hex_tag(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%08llx", static_cast<unsigned long long>(h >> 32));
    return buf;
}

}  // namespace

std::string MockChatTransport::canned_reply(const ChatRequest& req) const {
    const auto h = derive_seed(seed_, request_digest(req));
    const auto& u = req.user;
    const char letters[] = {'A', 'B', 'C', 'D'};

    if (u.find("Please summarize it following the requirements") != std::string::npos) {
        auto body = between(u, "<chunk>\n", "\n</chunk>");
        auto s = "Summary " + hex_tag(h) + ": " + first_words(body, 30);
        if (s.size() > 480) s.resize(480);
        return s;
    }
    if (u.find("concatenated text of summaries") != std::string::npos) {
        auto body = between(u, "<text>\n", "\n</text>");
        return "Story abstract " + hex_tag(h) + ": " + first_words(body, 48);
    }
    if (u.find("Text Chunks (indexed from 0):") != std::string::npos ||
        u.find("Entities (indexed from 0):") != std::string::npos) {
        return mock_filter(count_indexed_items(u), h);
    }
    if (u.find("name: description") != std::string::npos) {
        return mock_entities(between(u, "<chunk>\n", "\n</chunk>"), h);
    }
    if (u.find("<statement>") != std::string::npos) {
        return "<explanation>Mock reasoning " + hex_tag(h) + ".</explanation>\n<answer>" +
               std::string((h >> 3) % 2 ? "TRUE" : "FALSE") + "</answer>";
    }
    if (u.find("using one single letter") != std::string::npos) {
        char c = letters[(h >> 5) % 4];
        switch ((h >> 9) % 3) {
            case 0: return std::string(1, c);
            case 1: return std::string("Answer: ") + c;
            default: return std::string("(") + c + ")";
        }
    }
    if (u.find("strictly follow the format") != std::string::npos) {
        char c = letters[(h >> 5) % 4];
        return std::string("{\"answer\":\"") + c + "\",\"reasoning\":\"mock clue " + hex_tag(h) +
               "\"}";
    }
    if (u.find("using a single phrase") != std::string::npos) {
        auto ctx = between(u, "## Relevant Contexts: ", "\n## Question:");
        auto w = words_of(ctx);
        std::vector<std::string> keep;
        for (const auto& x : w) {
            auto s = strip_word(x);
            if (!s.empty() && s.front() != '[') keep.push_back(s);
        }
        if (keep.empty()) return "unknown";
        auto pos = (h >> 7) % keep.size();
        auto len = std::min<std::size_t>(1 + (h >> 13) % 3, keep.size() - pos);
        return text::join(std::vector<std::string>(keep.begin() + static_cast<long>(pos),
                                                   keep.begin() + static_cast<long>(pos + len)),
                          " ");
    }
    return "Mock reply " + hex_tag(h) + hex_tag(h << 32);
}

ChatResponse MockChatTransport::send(const ChatRequest& req) {
    ChatResponse resp;
    std::optional<std::string> scripted;
    if (responder_) scripted = responder_(req);
    resp.text = scripted ? *scripted : canned_reply(req);
    resp.usage.prompt_tokens = static_cast<int>(count_tokens(req.system) + count_tokens(req.user));
    resp.usage.completion_tokens = static_cast<int>(count_tokens(resp.text));
    return resp;
}

// ---------------------------------------------------------------------------
// HTTP transport
// ---------------------------------------------------------------------------

Endpoint parse_endpoint(const std::string& url) {
    Endpoint ep;
    auto sep = url.find("://");
    if (sep == std::string::npos) fail(ErrorCode::invalid_config, "endpoint lacks scheme: " + url);
    ep.scheme = url.substr(0, sep);
    if (ep.scheme != "http" && ep.scheme != "https") {
        fail(ErrorCode::invalid_config, "unsupported endpoint scheme: " + ep.scheme);
    }
    auto rest = url.substr(sep + 3);
    auto slash = rest.find('/');
    auto hostport = rest.substr(0, slash);
    ep.base_path = slash == std::string::npos ? "" : rest.substr(slash);
    while (!ep.base_path.empty() && ep.base_path.back() == '/') ep.base_path.pop_back();
    auto colon = hostport.rfind(':');
    if (colon != std::string::npos) {
        ep.host = hostport.substr(0, colon);
        try {
            ep.port = std::stoi(hostport.substr(colon + 1));
        } catch (const std::exception&) {
            fail(ErrorCode::invalid_config, "bad port in endpoint: " + url);
        }
    } else {
        ep.host = hostport;
        ep.port = ep.scheme == "https" ? 443 : 80;
    }
    if (ep.host.empty()) fail(ErrorCode::invalid_config, "endpoint lacks host: " + url);
    return ep;
}

HttpChatTransport::HttpChatTransport(std::string endpoint_url, std::string api_key,
                                     std::chrono::milliseconds timeout)
    : endpoint_(parse_endpoint(endpoint_url)), api_key_(std::move(api_key)), timeout_(timeout) {}

namespace detail {

HttpResult post_json(const Endpoint& ep, const std::string& path, const std::string& api_key,
                     const std::string& body, std::chrono::milliseconds timeout) {
    httplib::Client cli(ep.scheme + "://" + ep.host + ":" + std::to_string(ep.port));
    cli.set_connection_timeout(timeout);
    cli.set_read_timeout(timeout);
    cli.set_write_timeout(timeout);
    httplib::Headers headers;
    if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);
    auto res = cli.Post(ep.base_path + path, headers, body, "application/json");
    HttpResult out;
    if (!res) {
        out.error = httplib::to_string(res.error());
        return out;
    }
    out.connected = true;
    out.status = res->status;
    out.body = res->body;
    return out;
}

}  // namespace detail

ChatResponse HttpChatTransport::send(const ChatRequest& req) {
    nlohmann::json messages = nlohmann::json::array();
    if (!req.system.empty()) messages.push_back({{"role", "system"}, {"content", req.system}});
    messages.push_back({{"role", "user"}, {"content", req.user}});
    nlohmann::json body{{"model", req.model_tag},
                        {"messages", messages},
                        {"temperature", req.temperature},
                        {"max_tokens", req.max_tokens}};

    auto res = detail::post_json(endpoint_, "/chat/completions", api_key_, body.dump(), timeout_);
    if (!res.connected) throw TransientFailure{false, "transport failure: " + res.error};
    if (res.status == 429) throw TransientFailure{true, "rate limited (HTTP 429)"};
    if (res.status >= 500) {
        throw TransientFailure{false, "server error HTTP " + std::to_string(res.status)};
    }
    if (res.status != 200) {
        fail(ErrorCode::transport_error,
             "chat endpoint returned HTTP " + std::to_string(res.status) + ": " + res.body);
    }
    ChatResponse out;
    try {
        auto j = nlohmann::json::parse(res.body);
        const auto& msg = j.at("choices").at(0).at("message");
        if (msg.contains("content") && msg["content"].is_string()) {
            out.text = msg["content"].get<std::string>();
        }
        if (j.contains("usage") && j["usage"].is_object()) {
            out.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0);
            out.usage.completion_tokens = j["usage"].value("completion_tokens", 0);
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::transport_error, std::string("malformed chat response: ") + e.what());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

std::vector<std::chrono::milliseconds> backoff_schedule(const RetryPolicy& p) {
    std::vector<std::chrono::milliseconds> delays;
    double d = static_cast<double>(p.initial_backoff.count());
    const double cap = static_cast<double>(p.max_backoff.count());
    for (int i = 0; i < p.max_retries; ++i) {
        delays.emplace_back(static_cast<long long>(std::min(d, cap)));
        d *= std::max(1.0, p.multiplier);
    }
    return delays;
}

LlmGateway::LlmGateway(std::unique_ptr<ChatTransport> transport, GatewayOptions options)
    : transport_(std::move(transport)),
      options_(std::move(options)),
      slots_(static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(options_.parallelism, 1, 1024))) {
    if (!transport_) fail(ErrorCode::invalid_config, "gateway needs a transport");
    if (!options_.sleeper) {
        options_.sleeper = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
    }
    if (options_.audit_log) {
        if (options_.audit_log->has_parent_path()) {
            std::filesystem::create_directories(options_.audit_log->parent_path());
        }
        audit_out_.open(*options_.audit_log, std::ios::app | std::ios::binary);
        if (!audit_out_) fail(ErrorCode::io_error, "cannot open audit log " + options_.audit_log->string());
    }
}

void LlmGateway::audit(const ChatRequest& req, const std::string& digest, const ChatResponse* resp,
                       const std::string& error, int attempts) {
    if (!audit_out_.is_open()) return;
    nlohmann::ordered_json j{{"digest", digest},
                             {"model", req.model_tag},
                             {"temperature", req.temperature},
                             {"max_tokens", req.max_tokens},
                             {"system", req.system},
                             {"user", req.user},
                             {"attempts", attempts}};
    if (resp) {
        j["response"] = resp->text;
        j["usage"] = {{"prompt_tokens", resp->usage.prompt_tokens},
                      {"completion_tokens", resp->usage.completion_tokens}};
    } else {
        j["error"] = error;
    }
    std::lock_guard lock(audit_mu_);
    audit_out_ << j.dump() << '\n';
    audit_out_.flush();
}

ChatResponse LlmGateway::complete(ChatRequest req) {
    if (req.user.empty()) fail(ErrorCode::invalid_argument, "chat request has empty user message");
    if (req.temperature < 0.0 || req.temperature > 2.0) {
        fail(ErrorCode::invalid_argument, "temperature must lie in [0, 2]");
    }
    if (req.max_tokens <= 0) fail(ErrorCode::invalid_argument, "max_tokens must be positive");
    if (req.model_tag.empty()) req.model_tag = options_.default_model;

    const auto digest = request_digest(req);
    const auto delays = backoff_schedule(options_.retry);
    ++calls_;

    slots_.acquire();
    struct Release {
        std::counting_semaphore<1024>& s;
        ~Release() { s.release(); }
    } release{slots_};

    TransientFailure last;
    for (int attempt = 0;; ++attempt) {
        try {
            auto resp = transport_->send(req);
            if (text::trim(resp.text).empty()) {
                audit(req, digest, nullptr, "empty completion", attempt + 1);
                fail(ErrorCode::empty_completion, "model returned an empty completion");
            }
            audit(req, digest, &resp, "", attempt + 1);
            return resp;
        } catch (const TransientFailure& tf) {
            last = tf;
        }
        if (attempt >= static_cast<int>(delays.size())) break;
        options_.sleeper(delays[static_cast<std::size_t>(attempt)]);
    }
    const int attempts = static_cast<int>(delays.size()) + 1;
    audit(req, digest, nullptr, last.message, attempts);
    const auto msg = last.message + " after " + std::to_string(attempts) + " attempts";
    fail(last.rate_limited ? ErrorCode::rate_limited : ErrorCode::transport_error, msg);
}

std::unique_ptr<LlmGateway> make_mock_gateway(std::uint64_t seed, std::size_t parallelism) {
    GatewayOptions opts;
    opts.parallelism = parallelism;
    return std::make_unique<LlmGateway>(std::make_unique<MockChatTransport>(seed), std::move(opts));
}

}  // namespace mia
