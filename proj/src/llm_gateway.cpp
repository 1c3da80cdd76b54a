#include "ppol/llm_gateway.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <set>
#include <thread>

#include <httplib.h>

namespace ppol {

using nlohmann::json;

std::string to_string(RequestTag tag) {
    switch (tag) {
    case RequestTag::generator: return "generator";
    case RequestTag::user: return "user";
    case RequestTag::agent: return "agent";
    case RequestTag::reflection: return "reflection";
    case RequestTag::mutation: return "mutation";
    }
    return "generator";
}

RequestTag parse_request_tag(const std::string& text) {
    for (auto tag : {RequestTag::generator, RequestTag::user, RequestTag::agent, RequestTag::reflection,
                     RequestTag::mutation})
        if (to_string(tag) == text)
            return tag;
    fail(ErrorCode::config, "unknown request role '" + text + "'");
}

std::string to_string(ChatRole role) {
    switch (role) {
    case ChatRole::system: return "system";
    case ChatRole::user: return "user";
    case ChatRole::assistant: return "assistant";
    case ChatRole::tool: return "tool";
    }
    return "user";
}

const std::string& CompletionRequest::last_content() const {
    static const std::string empty;
    return messages.empty() ? empty : messages.back().content;
}

void CompletionRequest::validate() const {
    if (messages.empty())
        fail(ErrorCode::invalid_input, "completion request has no messages");
    if (!(temperature >= 0.0))
        fail(ErrorCode::invalid_input, "completion request temperature must be >= 0");
}

void CallLog::append(CallRecord record) {
    std::lock_guard lock(mutex_);
    record.sequence = records_.size();
    records_.push_back(std::move(record));
}

std::vector<CallRecord> CallLog::snapshot() const {
    std::lock_guard lock(mutex_);
    return records_;
}

std::size_t CallLog::size() const {
    std::lock_guard lock(mutex_);
    return records_.size();
}

std::size_t CallLog::count(RequestTag tag) const {
    std::lock_guard lock(mutex_);
    return static_cast<std::size_t>(
        std::count_if(records_.begin(), records_.end(), [tag](const CallRecord& r) { return r.tag == tag; }));
}

void CallLog::write_jsonl(const std::filesystem::path& path) const {
    std::string out;
    for (const auto& r : snapshot()) {
        json line{{"sequence", r.sequence}, {"tag", to_string(r.tag)},     {"model", r.model},
                  {"ok", r.ok},             {"error", r.error},            {"latency_ms", r.latency_ms},
                  {"prompt_tokens", r.prompt_tokens}, {"completion_tokens", r.completion_tokens},
                  {"attempts", r.attempts}};
        out += line.dump() + "\n";
    }
    write_file_atomic(path, out);
}

void GatewayConfig::validate() const {
    if (max_workers < 1)
        fail(ErrorCode::config, "gateway max_workers must be >= 1");
    if (!(timeout_seconds > 0.0))
        fail(ErrorCode::config, "gateway timeout_seconds must be > 0");
    if (retry.max_attempts < 1)
        fail(ErrorCode::config, "gateway retry max_attempts must be >= 1");
}

const std::string& GatewayConfig::model_for(RequestTag tag) const {
    static const std::string fallback = "default";
    auto it = models.find(tag);
    return it == models.end() ? fallback : it->second;
}

GatewayConfig gateway_config_from_json(const json& section) {
    static const std::set<std::string> known{"endpoint", "api_key_env", "models",   "max_workers", "timeout_seconds",
                                             "retry",    "temperature", "max_tokens"};
    GatewayConfig cfg;
    if (!section.is_object())
        fail(ErrorCode::config, "gateway section must be an object");
    for (const auto& [key, value] : section.items()) {
        if (!known.count(key))
            fail(ErrorCode::config, "unknown gateway config key '" + key + "'");
    }
    cfg.endpoint = section.value("endpoint", cfg.endpoint);
    cfg.api_key_env = section.value("api_key_env", cfg.api_key_env);
    cfg.max_workers = section.value("max_workers", cfg.max_workers);
    cfg.timeout_seconds = section.value("timeout_seconds", cfg.timeout_seconds);
    cfg.temperature = section.value("temperature", cfg.temperature);
    cfg.max_tokens = section.value("max_tokens", cfg.max_tokens);
    if (section.contains("models"))
        for (const auto& [role, model] : section["models"].items())
            cfg.models[parse_request_tag(role)] = model.get<std::string>();
    if (section.contains("retry")) {
        const auto& r = section["retry"];
        for (const auto& [key, value] : r.items())
            if (key != "max_attempts" && key != "base_delay_seconds" && key != "max_delay_seconds")
                fail(ErrorCode::config, "unknown gateway.retry config key '" + key + "'");
        cfg.retry.max_attempts = r.value("max_attempts", cfg.retry.max_attempts);
        cfg.retry.base_delay_seconds = r.value("base_delay_seconds", cfg.retry.base_delay_seconds);
        cfg.retry.max_delay_seconds = r.value("max_delay_seconds", cfg.retry.max_delay_seconds);
    }
    cfg.validate();
    return cfg;
}

HttpClient::HttpClient(GatewayConfig config) : config_(std::move(config)) {
    config_.validate();
    const auto scheme_end = config_.endpoint.find("://");
    if (config_.endpoint.empty() || scheme_end == std::string::npos)
        fail(ErrorCode::config, "gateway endpoint must be an absolute http(s) URL");
    const auto path_start = config_.endpoint.find('/', scheme_end + 3);
    scheme_host_port_ = config_.endpoint.substr(0, path_start);
    base_path_ = path_start == std::string::npos ? "" : config_.endpoint.substr(path_start);
    while (!base_path_.empty() && base_path_.back() == '/')
        base_path_.pop_back();
}

CompletionResponse HttpClient::send(const CompletionRequest& request) {
    request.validate();
    json body{{"model", request.model}, {"temperature", request.temperature}, {"max_tokens", request.max_tokens}};
    json messages = json::array();
    for (const auto& m : request.messages)
        messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    body["messages"] = std::move(messages);
    const std::string payload = body.dump();

    httplib::Headers headers;
    if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key)
        headers.emplace("Authorization", std::string("Bearer ") + key);

    const auto started = std::chrono::steady_clock::now();
    auto elapsed = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    };
    const auto whole = static_cast<time_t>(config_.timeout_seconds);
    const auto micros = static_cast<time_t>((config_.timeout_seconds - static_cast<double>(whole)) * 1e6);

    std::string last_error;
    for (int attempt = 1; attempt <= config_.retry.max_attempts; ++attempt) {
        httplib::Client client(scheme_host_port_);
        client.set_connection_timeout(whole, micros);
        client.set_read_timeout(whole, micros);
        client.set_write_timeout(whole, micros);
        auto result = client.Post(base_path_ + "/chat/completions", headers, payload, "application/json");

        bool retryable = false;
        if (!result) {
            last_error = "transport error: " + httplib::to_string(result.error());
            retryable = true;
        } else if (result->status == 200) {
            try {
                const auto doc = json::parse(result->body);
                CompletionResponse response;
                response.text = doc.at("choices").at(0).at("message").at("content").get<std::string>();
                if (doc.contains("usage")) {
                    response.prompt_tokens = doc["usage"].value("prompt_tokens", 0);
                    response.completion_tokens = doc["usage"].value("completion_tokens", 0);
                }
                response.attempts = attempt;
                return response;
            } catch (const json::exception& e) {
                fail(ErrorCode::dependency, std::string("malformed completion response: ") + e.what());
            }
        } else {
            last_error = "HTTP " + std::to_string(result->status) + ": " + result->body;
            retryable = result->status == 429 || result->status == 503;
        }

        if (elapsed() >= config_.timeout_seconds) {
            fail(ErrorCode::timeout,
                 "completion timed out after " + format_double(elapsed()) + " s (" + last_error + ")");
        }
        if (!retryable)
            fail(ErrorCode::dependency, "completion failed: " + last_error);
        if (attempt < config_.retry.max_attempts) {
            const double delay = std::min(config_.retry.max_delay_seconds,
                                          config_.retry.base_delay_seconds * std::pow(2.0, attempt - 1));
            std::this_thread::sleep_for(std::chrono::duration<double>(delay));
        }
    }
    fail(ErrorCode::dependency, "completion failed after " + std::to_string(config_.retry.max_attempts) +
                                    " attempts: " + last_error);
}

CompletionResponse FunctionClient::send(const CompletionRequest& request) {
    CompletionResponse response;
    response.text = responder_(request);
    return response;
}

ScriptedClient::ScriptedClient(std::vector<ScriptRule> rules) : rules_(std::move(rules)), cursors_(rules_.size(), 0) {}

CompletionResponse ScriptedClient::send(const CompletionRequest& request) {
    ScriptStep step;
    {
        std::lock_guard lock(mutex_);
        ++calls_[request.tag];
        std::size_t matched = rules_.size();
        for (std::size_t i = 0; i < rules_.size(); ++i) {
            const auto& rule = rules_[i];
            if (rule.tag && *rule.tag != request.tag)
                continue;
            if (!rule.contains.empty() && request.last_content().find(rule.contains) == std::string::npos)
                continue;
            matched = i;
            break;
        }
        if (matched == rules_.size())
            fail(ErrorCode::exhausted, "scripted client: no rule matches " + to_string(request.tag) + " request");
        auto& rule = rules_[matched];
        auto& cursor = cursors_[matched];
        if (rule.steps.empty() || (cursor >= rule.steps.size() && !rule.cycle))
            fail(ErrorCode::exhausted, "scripted client: " + to_string(request.tag) +
                                           " script exhausted after " + std::to_string(cursor) + " responses");
        step = rule.steps[cursor % rule.steps.size()];
        ++cursor;
    }
    if (step.delay.count() > 0)
        std::this_thread::sleep_for(step.delay);
    if (step.fail)
        fail(ErrorCode::dependency, "scripted failure: " + step.text);
    CompletionResponse response;
    response.text = step.text;
    return response;
}

std::size_t ScriptedClient::calls(RequestTag tag) const {
    std::lock_guard lock(mutex_);
    auto it = calls_.find(tag);
    return it == calls_.end() ? 0 : it->second;
}

std::shared_ptr<ScriptedClient> scripted_client(const std::map<RequestTag, std::vector<std::string>>& script) {
    std::vector<ScriptRule> rules;
    for (const auto& [tag, texts] : script) {
        ScriptRule rule;
        rule.tag = tag;
        for (const auto& text : texts)
            rule.steps.push_back(ScriptStep{text});
        rules.push_back(std::move(rule));
    }
    return std::make_shared<ScriptedClient>(std::move(rules));
}

Gateway::Gateway(std::shared_ptr<LlmClient> client, GatewayConfig config)
    : client_(std::move(client)), config_(std::move(config)) {
    if (!client_)
        fail(ErrorCode::config, "gateway needs a client");
    config_.validate();
}

CompletionRequest Gateway::make_request(RequestTag tag, std::vector<ChatMessage> messages) const {
    CompletionRequest request;
    request.tag = tag;
    request.model = config_.model_for(tag);
    request.messages = std::move(messages);
    request.temperature = config_.temperature;
    request.max_tokens = config_.max_tokens;
    return request;
}

std::string Gateway::complete(const CompletionRequest& request) {
    CallRecord record;
    record.tag = request.tag;
    record.model = request.model;
    const auto started = std::chrono::steady_clock::now();
    auto latency = [&] {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    };
    try {
        request.validate();
        auto response = client_->send(request);
        record.ok = true;
        record.latency_ms = latency();
        record.prompt_tokens = response.prompt_tokens;
        record.completion_tokens = response.completion_tokens;
        record.attempts = response.attempts;
        log_.append(record);
        return std::move(response.text);
    } catch (const Error& e) {
        record.error = e.what();
        record.latency_ms = latency();
        log_.append(record);
        throw;
    } catch (const std::exception& e) {
        record.error = e.what();
        record.latency_ms = latency();
        log_.append(record);
        fail(ErrorCode::dependency, e.what());
    }
}

std::vector<CompletionOutcome> Gateway::complete_batch(const std::vector<CompletionRequest>& requests,
                                                       std::size_t max_workers) {
    if (max_workers < 1)
        fail(ErrorCode::invalid_input, "complete_batch: max_workers must be >= 1");
    std::vector<CompletionOutcome> outcomes(requests.size());
    parallel_for(requests.size(), max_workers, [&](std::size_t i) {
        try {
            outcomes[i].text = complete(requests[i]);
        } catch (const Error& e) {
            outcomes[i].error = e.what();
            outcomes[i].code = e.code();
        }
    });
    return outcomes;
}

void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& fn) {
    if (count == 0)
        return;
    workers = std::max<std::size_t>(1, std::min(workers, count));
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto run = [&] {
        for (std::size_t i = next++; i < count; i = next++) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!first_error)
                    first_error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> threads;
    for (std::size_t t = 1; t < workers; ++t)
        threads.emplace_back(run);
    run();
    for (auto& th : threads)
        th.join();
    if (first_error)
        std::rethrow_exception(first_error);
}

}  // namespace ppol
