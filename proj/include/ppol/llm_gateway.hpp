#pragma once

// Uniform chat-completion access for every model role, plus deterministic
// offline clients used by tests and the --mock CLI mode.

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ppol/common.hpp"

namespace ppol {

enum class RequestTag { generator, user, agent, reflection, mutation };
std::string to_string(RequestTag tag);
RequestTag parse_request_tag(const std::string& text);

enum class ChatRole { system, user, assistant, tool };
std::string to_string(ChatRole role);

struct ChatMessage {
    ChatRole role = ChatRole::user;
    std::string content;
};

struct CompletionRequest {
    std::string model;
    std::vector<ChatMessage> messages;
    double temperature = 0.7;
    int max_tokens = 2048;
    RequestTag tag = RequestTag::generator;

    /// Content of the final message, or empty.
    const std::string& last_content() const;
    void validate() const;
};

struct CompletionResponse {
    std::string text;
    int prompt_tokens = 0;
    int completion_tokens = 0;
    int attempts = 1;
};

/// One backend call path. Implementations throw ppol::Error on failure and must
/// be callable from several threads at once.
class LlmClient {
public:
    virtual ~LlmClient() = default;
    virtual CompletionResponse send(const CompletionRequest& request) = 0;
};

struct CallRecord {
    std::size_t sequence = 0;
    RequestTag tag = RequestTag::generator;
    std::string model;
    bool ok = false;
    std::string error;
    double latency_ms = 0.0;
    int prompt_tokens = 0;
    int completion_tokens = 0;
    int attempts = 0;
};

/// Append-only, internally synchronized record of every request.
class CallLog {
public:
    void append(CallRecord record);
    std::vector<CallRecord> snapshot() const;
    std::size_t size() const;
    std::size_t count(RequestTag tag) const;
    /// Line-delimited JSON, one record per call. Never contains credentials.
    void write_jsonl(const std::filesystem::path& path) const;

private:
    mutable std::mutex mutex_;
    std::vector<CallRecord> records_;
};

struct RetryPolicy {
    int max_attempts = 5;
    double base_delay_seconds = 1.0;
    double max_delay_seconds = 30.0;
};

struct GatewayConfig {
    std::string endpoint;                      // e.g. https://host/v1 (chat/completions is appended)
    std::string api_key_env = "PPOL_API_KEY";  // name of the environment variable holding the key
    std::map<RequestTag, std::string> models;  // per-role model routing
    std::size_t max_workers = 30;
    double timeout_seconds = 3600.0;
    RetryPolicy retry;
    double temperature = 0.7;
    int max_tokens = 2048;

    void validate() const;
    const std::string& model_for(RequestTag tag) const;
};

/// Parses the "gateway" config section; unknown keys are rejected by name.
GatewayConfig gateway_config_from_json(const nlohmann::json& section);

/// OpenAI-compatible chat-completions client over HTTP(S) with exponential backoff.
/// Retries transport errors and throttling statuses (429, 503) only.
class HttpClient : public LlmClient {
public:
    explicit HttpClient(GatewayConfig config);
    CompletionResponse send(const CompletionRequest& request) override;

private:
    GatewayConfig config_;
    std::string scheme_host_port_;
    std::string base_path_;
};

/// Pure function of the request. Safe for parallel use when the function is.
class FunctionClient : public LlmClient {
public:
    using Responder = std::function<std::string(const CompletionRequest&)>;
    explicit FunctionClient(Responder responder) : responder_(std::move(responder)) {}
    CompletionResponse send(const CompletionRequest& request) override;

private:
    Responder responder_;
};

struct ScriptStep {
    std::string text;
    bool fail = false;
    std::chrono::milliseconds delay{0};
};

/// Matches requests by tag and, optionally, a substring of the last message.
struct ScriptRule {
    std::optional<RequestTag> tag;
    std::string contains;
    std::vector<ScriptStep> steps;
    bool cycle = false;  // wrap around instead of reporting exhaustion
};

/// Replays scripted responses. The first matching rule answers; a request no rule
/// matches, or a rule called past its last step, is an error.
class ScriptedClient : public LlmClient {
public:
    explicit ScriptedClient(std::vector<ScriptRule> rules);
    CompletionResponse send(const CompletionRequest& request) override;
    std::size_t calls(RequestTag tag) const;

private:
    mutable std::mutex mutex_;
    std::vector<ScriptRule> rules_;
    std::vector<std::size_t> cursors_;
    std::map<RequestTag, std::size_t> calls_;
};

/// Convenience: one rule per tag with the given response sequence.
std::shared_ptr<ScriptedClient> scripted_client(const std::map<RequestTag, std::vector<std::string>>& script);

struct CompletionOutcome {
    std::optional<std::string> text;
    std::string error;
    ErrorCode code = ErrorCode::dependency;

    bool ok() const { return text.has_value(); }
};

class Gateway {
public:
    Gateway(std::shared_ptr<LlmClient> client, GatewayConfig config = {});

    /// Builds a request routed to the role's configured model.
    CompletionRequest make_request(RequestTag tag, std::vector<ChatMessage> messages) const;

    /// Returns the assistant text; every call, failed or not, lands in the log.
    std::string complete(const CompletionRequest& request);
    /// At most `max_workers` requests in flight; results are positional and a
    /// failure does not cancel the other requests.
    std::vector<CompletionOutcome> complete_batch(const std::vector<CompletionRequest>& requests,
                                                  std::size_t max_workers);
    std::vector<CompletionOutcome> complete_batch(const std::vector<CompletionRequest>& requests) {
        return complete_batch(requests, config_.max_workers);
    }

    const CallLog& log() const { return log_; }
    CallLog& log() { return log_; }
    const GatewayConfig& config() const { return config_; }

private:
    std::shared_ptr<LlmClient> client_;
    GatewayConfig config_;
    CallLog log_;
};

/// Runs fn(i) for i in [0, count) on up to `workers` threads.
void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace ppol
