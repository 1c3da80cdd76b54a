#pragma once

// Agent <-> simulated-user conversations, one per (task, persona) pair.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ppol/llm_gateway.hpp"
#include "ppol/transcript.hpp"

namespace ppol {

struct TaskSpec {
    std::string task_id;
    std::string domain;
    std::string user_context;  // becomes the user simulator's base system prompt
    std::string agent_prompt;
    std::string env_script;    // environment script id
    std::string success_criteria;
};

nlohmann::json task_to_json(const TaskSpec& task);
TaskSpec task_from_json(const nlohmann::json& doc);
/// {"format": "ppol-tasks", "version": 1, "tasks": [...]}; ids must be unique.
std::vector<TaskSpec> load_tasks(const std::filesystem::path& path);

struct RolloutConfig {
    std::size_t max_turns = 30;  // user-turn budget
    std::string stop_marker = "###STOP###";
    bool user_first = true;
    std::size_t max_tool_calls = 4;  // per agent turn
    std::string tool_prefix = "TOOL:";

    void validate() const;
};

/// Tool side of a conversation. One instance per episode.
class EnvironmentAdapter {
public:
    virtual ~EnvironmentAdapter() = default;
    /// Runs one agent action and returns the observation text.
    virtual std::string call(const std::string& action) = 0;
    virtual bool terminated() const = 0;
    virtual std::string script_id() const = 0;
    /// Stable digest of the script driving this environment.
    virtual std::string script_digest() const = 0;
};

/// Replays a scripted state machine:
///   {"format": "ppol-env-script", "version": 1, "id": "...", "initial": "s0",
///    "states": {"s0": {"transitions": [{"match": "lookup", "response": "...", "next": "s1"}],
///                      "default": "...", "terminal": false}, ...}}
/// The first transition whose match occurs in the action (case-insensitive) fires.
/// An action no transition matches falls back to "default"; without one it is an error.
class MockEnvironment : public EnvironmentAdapter {
public:
    explicit MockEnvironment(const nlohmann::json& script);
    std::string call(const std::string& action) override;
    bool terminated() const override;
    std::string script_id() const override { return id_; }
    std::string script_digest() const override { return digest_; }
    const std::string& state() const { return state_; }

private:
    struct Transition {
        std::string match;
        std::string response;
        std::string next;
    };
    struct State {
        std::vector<Transition> transitions;
        std::optional<std::string> fallback;
        bool terminal = false;
    };
    std::string id_;
    std::string digest_;
    std::string state_;
    std::map<std::string, State> states_;
};

using EnvironmentFactory = std::function<std::unique_ptr<EnvironmentAdapter>(const TaskSpec&)>;

/// Loads every *.json script in a directory, keyed by id, and builds fresh
/// MockEnvironment instances from them.
EnvironmentFactory mock_environment_factory(const std::filesystem::path& directory);
EnvironmentFactory mock_environment_factory(std::map<std::string, nlohmann::json> scripts);

/// base, a blank line, then the policy. An empty policy leaves base unchanged.
std::string inject_persona(const std::string& base_system, const std::string& policy);

inline constexpr const char* kMetaInputHash = "task_input_hash";

struct RolloutRequest {
    TaskSpec task;
    std::string persona_id;  // empty for a default simulator episode
    std::string policy;
    std::string episode_id;  // defaults to task_id/persona_id
};

/// Gateway failures end the episode early with the unscorable flag set; other
/// errors (environment script mismatch, bad input) throw.
Episode run_rollout(const RolloutRequest& request, Gateway& gateway, EnvironmentAdapter& env,
                    const RolloutConfig& config);

struct RolloutOutcome {
    std::optional<Episode> episode;
    std::string error;

    bool ok() const { return episode.has_value(); }
};

/// One outcome per request, positionally; episodes run concurrently.
std::vector<RolloutOutcome> run_rollout_batch(const std::vector<RolloutRequest>& requests, Gateway& gateway,
                                              const EnvironmentFactory& factory, const RolloutConfig& config,
                                              std::size_t max_workers);

}  // namespace ppol
