#include "ppol/rollout.hpp"

#include <algorithm>
#include <set>

namespace ppol {

using nlohmann::json;

namespace {

const char* const kKickoff = "(The conversation starts now. Send your first message.)";

std::string strip_marker(std::string text, const std::string& marker, bool* found) {
    *found = false;
    for (auto pos = text.find(marker); pos != std::string::npos; pos = text.find(marker, pos)) {
        *found = true;
        text.erase(pos, marker.size());
    }
    return trim(text);
}

bool is_tool_call(const Turn& turn, const RolloutConfig& config) {
    return turn.role == Role::agent && turn.text.rfind(config.tool_prefix, 0) == 0;
}

std::vector<ChatMessage> user_view(const Episode& episode, const std::string& system, const RolloutConfig& config) {
    std::vector<ChatMessage> messages{{ChatRole::system, system}};
    for (const auto& turn : episode.turns) {
        if (turn.role == Role::user)
            messages.push_back({ChatRole::assistant, turn.text});
        else if (turn.role == Role::agent && !is_tool_call(turn, config))
            messages.push_back({ChatRole::user, turn.text});
    }
    if (messages.size() == 1)
        messages.push_back({ChatRole::user, kKickoff});
    return messages;
}

std::vector<ChatMessage> agent_view(const Episode& episode, const std::string& system) {
    std::vector<ChatMessage> messages{{ChatRole::system, system}};
    for (const auto& turn : episode.turns) {
        if (turn.role == Role::user)
            messages.push_back({ChatRole::user, turn.text});
        else if (turn.role == Role::agent)
            messages.push_back({ChatRole::assistant, turn.text});
        else if (turn.role == Role::tool)
            messages.push_back({ChatRole::user, "Observation: " + turn.text});
    }
    if (messages.size() == 1)
        messages.push_back({ChatRole::user, kKickoff});
    return messages;
}

}  // namespace

json task_to_json(const TaskSpec& task) {
    return json{{"task_id", task.task_id},           {"domain", task.domain},
                {"user_context", task.user_context}, {"agent_prompt", task.agent_prompt},
                {"env_script", task.env_script},     {"success_criteria", task.success_criteria}};
}

TaskSpec task_from_json(const json& doc) {
    static const std::set<std::string> known{"task_id",    "domain",    "user_context",
                                             "agent_prompt", "env_script", "success_criteria"};
    if (!doc.is_object())
        fail(ErrorCode::format, "task entry must be an object");
    for (const auto& [key, value] : doc.items())
        if (!known.count(key))
            fail(ErrorCode::format, "task has unknown key '" + key + "'");
    TaskSpec task;
    try {
        task.task_id = doc.at("task_id").get<std::string>();
        task.domain = doc.value("domain", "");
        task.user_context = doc.at("user_context").get<std::string>();
        task.agent_prompt = doc.at("agent_prompt").get<std::string>();
        task.env_script = doc.value("env_script", "");
        task.success_criteria = doc.value("success_criteria", "");
    } catch (const json::exception& e) {
        fail(ErrorCode::format, std::string("task entry: ") + e.what());
    }
    if (task.task_id.empty() || trim(task.user_context).empty())
        fail(ErrorCode::format, "task '" + task.task_id + "' needs an id and a nonempty user_context");
    return task;
}

std::vector<TaskSpec> load_tasks(const std::filesystem::path& path) {
    json doc;
    try {
        doc = json::parse(read_file(path));
    } catch (const json::exception& e) {
        fail(ErrorCode::format, path.string() + ": " + e.what());
    }
    if (doc.value("format", "") != "ppol-tasks" || doc.value("version", 0) != 1)
        fail(ErrorCode::format, path.string() + ": expected format ppol-tasks version 1");
    std::vector<TaskSpec> tasks;
    std::set<std::string> ids;
    for (const auto& entry : doc.at("tasks")) {
        tasks.push_back(task_from_json(entry));
        if (!ids.insert(tasks.back().task_id).second)
            fail(ErrorCode::format, path.string() + ": duplicate task id '" + tasks.back().task_id + "'");
    }
    if (tasks.empty())
        fail(ErrorCode::format, path.string() + ": no tasks");
    return tasks;
}

void RolloutConfig::validate() const {
    if (max_turns < 2)
        fail(ErrorCode::config, "rollout max_turns must be >= 2");
    if (stop_marker.empty())
        fail(ErrorCode::config, "rollout stop_marker must be nonempty");
    if (tool_prefix.empty())
        fail(ErrorCode::config, "rollout tool_prefix must be nonempty");
}

MockEnvironment::MockEnvironment(const json& script) {
    try {
        if (script.value("format", "") != "ppol-env-script" || script.value("version", 0) != 1)
            fail(ErrorCode::format, "environment script: expected format ppol-env-script version 1");
        id_ = script.at("id").get<std::string>();
        state_ = script.at("initial").get<std::string>();
        for (const auto& [name, spec] : script.at("states").items()) {
            State state;
            for (const auto& t : spec.value("transitions", json::array()))
                state.transitions.push_back(Transition{to_lower(t.at("match").get<std::string>()),
                                                       t.at("response").get<std::string>(),
                                                       t.value("next", name)});
            if (spec.contains("default"))
                state.fallback = spec["default"].get<std::string>();
            state.terminal = spec.value("terminal", false);
            states_.emplace(name, std::move(state));
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::format, std::string("environment script: ") + e.what());
    }
    if (!states_.count(state_))
        fail(ErrorCode::format, "environment script '" + id_ + "': unknown initial state '" + state_ + "'");
    for (const auto& [name, state] : states_)
        for (const auto& t : state.transitions)
            if (!states_.count(t.next))
                fail(ErrorCode::format, "environment script '" + id_ + "': state '" + name +
                                            "' points to unknown state '" + t.next + "'");
    digest_ = sha256_hex(script.dump());
}

std::string MockEnvironment::call(const std::string& action) {
    const auto& state = states_.at(state_);
    if (state.terminal)
        fail(ErrorCode::invalid_input, "environment '" + id_ + "' already terminated");
    const std::string lowered = to_lower(action);
    for (const auto& t : state.transitions) {
        if (lowered.find(t.match) != std::string::npos) {
            state_ = t.next;
            return t.response;
        }
    }
    if (state.fallback)
        return *state.fallback;
    fail(ErrorCode::invalid_input,
         "environment script mismatch: '" + id_ + "' state '" + state_ + "' has no transition for '" + action + "'");
}

bool MockEnvironment::terminated() const { return states_.at(state_).terminal; }

EnvironmentFactory mock_environment_factory(std::map<std::string, json> scripts) {
    auto shared = std::make_shared<const std::map<std::string, json>>(std::move(scripts));
    return [shared](const TaskSpec& task) -> std::unique_ptr<EnvironmentAdapter> {
        auto it = shared->find(task.env_script);
        if (it == shared->end())
            fail(ErrorCode::invalid_input,
                 "task '" + task.task_id + "' names unknown environment script '" + task.env_script + "'");
        return std::make_unique<MockEnvironment>(it->second);
    };
}

EnvironmentFactory mock_environment_factory(const std::filesystem::path& directory) {
    if (!std::filesystem::is_directory(directory))
        fail(ErrorCode::io, "environment script directory not found: " + directory.string());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(directory))
        if (entry.path().extension() == ".json")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::map<std::string, json> scripts;
    for (const auto& file : files) {
        json doc;
        try {
            doc = json::parse(read_file(file));
        } catch (const json::exception& e) {
            fail(ErrorCode::format, file.string() + ": " + e.what());
        }
        MockEnvironment check(doc);
        if (!scripts.emplace(check.script_id(), doc).second)
            fail(ErrorCode::format, file.string() + ": duplicate environment id '" + check.script_id() + "'");
    }
    return mock_environment_factory(std::move(scripts));
}

std::string inject_persona(const std::string& base_system, const std::string& policy) {
    if (base_system.empty())
        fail(ErrorCode::invalid_input, "base system prompt is empty");
    if (policy.empty())
        return base_system;
    return base_system + "\n\n" + policy;
}

Episode run_rollout(const RolloutRequest& request, Gateway& gateway, EnvironmentAdapter& env,
                    const RolloutConfig& config) {
    config.validate();
    const auto& task = request.task;
    const std::string user_system = inject_persona(task.user_context, request.policy);

    Episode episode;
    episode.task_id = task.task_id;
    episode.episode_id = request.episode_id.empty()
                             ? task.task_id + "/" + (request.persona_id.empty() ? "base" : request.persona_id)
                             : request.episode_id;
    episode.source = request.persona_id.empty() ? Source::base_sim : Source::persona_sim;
    if (!request.persona_id.empty())
        episode.persona_id = request.persona_id;
    if (!task.domain.empty())
        episode.metadata["domain"] = task.domain;
    episode.metadata["env_script"] = env.script_id();
    episode.metadata[kMetaInputHash] =
        sha256_hex(task.user_context + '\x1f' + task.agent_prompt + '\x1f' + env.script_id() + '\x1f' +
                   env.script_digest());

    std::string terminated_by;
    auto abort_with = [&](const Error& e) {
        episode.metadata[kMetaUnscorable] = "true";
        episode.metadata["error"] = e.what();
        terminated_by = "error";
    };

    // Returns false when the conversation ended during the agent's turn.
    auto agent_turn = [&]() -> bool {
        for (std::size_t calls = 0;; ++calls) {
            const std::string text =
                trim(gateway.complete(gateway.make_request(RequestTag::agent, agent_view(episode, task.agent_prompt))));
            if (text.rfind(config.tool_prefix, 0) != 0 || calls >= config.max_tool_calls) {
                episode.add_turn(Role::agent, text.empty() ? "..." : text);
                return true;
            }
            episode.add_turn(Role::agent, text);
            episode.add_turn(Role::tool, env.call(trim(text.substr(config.tool_prefix.size()))));
            if (env.terminated()) {
                terminated_by = "environment";
                return false;
            }
        }
    };

    try {
        if (!config.user_first && !agent_turn()) {
            episode.metadata[kMetaTerminatedBy] = terminated_by;
            return episode;
        }
        for (std::size_t user_calls = 0;; ++user_calls) {
            if (user_calls >= config.max_turns) {
                terminated_by = "budget";
                break;
            }
            bool stop = false;
            const std::string text = strip_marker(
                gateway.complete(gateway.make_request(RequestTag::user, user_view(episode, user_system, config))),
                config.stop_marker, &stop);
            if (!text.empty())
                episode.add_turn(Role::user, text);
            if (stop) {
                terminated_by = "stop";
                break;
            }
            if (!agent_turn())
                break;
        }
    } catch (const Error& e) {
        if (e.code() != ErrorCode::dependency && e.code() != ErrorCode::timeout && e.code() != ErrorCode::exhausted)
            throw;
        abort_with(e);
    }
    episode.metadata[kMetaTerminatedBy] = terminated_by;
    return episode;
}

std::vector<RolloutOutcome> run_rollout_batch(const std::vector<RolloutRequest>& requests, Gateway& gateway,
                                              const EnvironmentFactory& factory, const RolloutConfig& config,
                                              std::size_t max_workers) {
    std::vector<RolloutOutcome> outcomes(requests.size());
    parallel_for(requests.size(), std::max<std::size_t>(1, max_workers), [&](std::size_t i) {
        try {
            auto env = factory(requests[i].task);
            outcomes[i].episode = run_rollout(requests[i], gateway, *env, config);
        } catch (const std::exception& e) {
            outcomes[i].error = e.what();
        }
    });
    return outcomes;
}

}  // namespace ppol
