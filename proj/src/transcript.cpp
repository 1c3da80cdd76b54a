#include "ppol/transcript.hpp"

#include <fstream>
#include <sstream>
#include <unordered_map>

#include "ppol/common.hpp"

namespace ppol {

using nlohmann::json;

std::string to_string(Role role) {
    switch (role) {
    case Role::user: return "user";
    case Role::agent: return "agent";
    case Role::system: return "system";
    case Role::tool: return "tool";
    }
    return "user";
}

std::string to_string(Source source) {
    switch (source) {
    case Source::human: return "human";
    case Source::base_sim: return "base_sim";
    case Source::persona_sim: return "persona_sim";
    }
    return "human";
}

std::string to_string(Split split) {
    switch (split) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
    }
    return "train";
}

Role parse_role(const std::string& text) {
    if (text == "user") return Role::user;
    if (text == "agent" || text == "assistant") return Role::agent;
    if (text == "system") return Role::system;
    if (text == "tool") return Role::tool;
    fail(ErrorCode::format, "unknown turn role '" + text + "'");
}

Source parse_source(const std::string& text) {
    if (text == "human") return Source::human;
    if (text == "base_sim") return Source::base_sim;
    if (text == "persona_sim") return Source::persona_sim;
    fail(ErrorCode::format, "unknown episode source '" + text + "'");
}

Split parse_split(const std::string& text) {
    if (text == "train") return Split::train;
    if (text == "validation") return Split::validation;
    if (text == "test") return Split::test;
    fail(ErrorCode::format, "unknown split '" + text + "'");
}

void Episode::add_turn(Role role, std::string text) {
    turns.push_back(Turn{role, std::move(text), turns.size()});
}

json episode_to_json(const Episode& episode) {
    json record;
    record["episode_id"] = episode.episode_id;
    record["task_id"] = episode.task_id;
    record["source"] = to_string(episode.source);
    if (episode.persona_id)
        record["persona_id"] = *episode.persona_id;
    json turns = json::array();
    for (const auto& turn : episode.turns)
        turns.push_back({{"role", to_string(turn.role)}, {"text", turn.text}});
    record["turns"] = std::move(turns);
    record["metadata"] = episode.metadata;
    return record;
}

namespace {

const json& require(const json& record, const char* field) {
    auto it = record.find(field);
    if (it == record.end() || it->is_null())
        fail(ErrorCode::format, std::string("record missing required field '") + field + "'");
    return *it;
}

std::string require_string(const json& record, const char* field) {
    const auto& value = require(record, field);
    if (!value.is_string())
        fail(ErrorCode::format, std::string("field '") + field + "' must be a string");
    return value.get<std::string>();
}

}  // namespace

Episode episode_from_json(const json& record) {
    if (!record.is_object())
        fail(ErrorCode::format, "record is not an object");
    Episode episode;
    episode.episode_id = require_string(record, "episode_id");
    episode.task_id = require_string(record, "task_id");
    episode.source = parse_source(require_string(record, "source"));
    if (auto it = record.find("persona_id"); it != record.end() && !it->is_null())
        episode.persona_id = it->get<std::string>();
    const auto& turns = require(record, "turns");
    if (!turns.is_array())
        fail(ErrorCode::format, "field 'turns' must be an array");
    for (const auto& turn : turns) {
        if (!turn.is_object())
            fail(ErrorCode::format, "turn is not an object");
        episode.add_turn(parse_role(require_string(turn, "role")), require_string(turn, "text"));
    }
    if (auto it = record.find("metadata"); it != record.end() && !it->is_null()) {
        if (!it->is_object())
            fail(ErrorCode::format, "field 'metadata' must be an object");
        for (const auto& [key, value] : it->items())
            episode.metadata[key] = value.is_string() ? value.get<std::string>() : value.dump();
    }
    return episode;
}

Corpus load_corpus(const std::filesystem::path& path, Split split, std::vector<MalformedLine>* malformed) {
    std::ifstream in(path);
    if (!in)
        fail(ErrorCode::io, "cannot open transcript file: " + path.string());

    Corpus corpus;
    corpus.split = split;
    std::unordered_map<std::string, std::size_t> first_line;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty())
            continue;
        json record;
        try {
            record = json::parse(line);
        } catch (const json::parse_error& e) {
            if (!malformed)
                fail(ErrorCode::format, path.string() + ":" + std::to_string(line_no) + ": malformed record: " + e.what());
            malformed->push_back({line_no, e.what()});
            continue;
        }
        Episode episode;
        try {
            episode = episode_from_json(record);
        } catch (const Error& e) {
            fail(ErrorCode::format, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        auto [it, inserted] = first_line.emplace(episode.episode_id, line_no);
        if (!inserted)
            fail(ErrorCode::format, path.string() + ": duplicate episode_id '" + episode.episode_id + "' on lines " +
                                        std::to_string(it->second) + " and " + std::to_string(line_no));
        corpus.episodes.push_back(std::move(episode));
    }
    return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
    std::string out;
    for (const auto& episode : corpus.episodes) {
        out += episode_to_json(episode).dump();
        out += '\n';
    }
    write_file_atomic(path, out);
}

void append_episodes(const std::vector<Episode>& episodes, const std::filesystem::path& path) {
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::app | std::ios::binary);
    if (!out)
        fail(ErrorCode::io, "cannot append to transcript file: " + path.string());
    for (const auto& episode : episodes)
        out << episode_to_json(episode).dump() << '\n';
}

std::vector<std::string> user_turns(const Episode& episode) {
    std::vector<std::string> texts;
    for (const auto& turn : episode.turns)
        if (turn.role == Role::user)
            texts.push_back(turn.text);
    return texts;
}

ValidationReport validate_episode(const Episode& episode) {
    ValidationReport report;
    if (episode.episode_id.empty())
        report.violations.push_back("episode_id is empty");
    if (episode.source == Source::persona_sim && (!episode.persona_id || episode.persona_id->empty()))
        report.violations.push_back("persona_sim episode has no persona_id");
    bool has_user = false;
    for (std::size_t i = 0; i < episode.turns.size(); ++i) {
        const auto& turn = episode.turns[i];
        if (turn.index != i) {
            std::ostringstream msg;
            msg << "turn ordering: position " << i << " carries index " << turn.index << " (expected " << i << ")";
            report.violations.push_back(msg.str());
        }
        if (turn.text.empty() && turn.role != Role::tool)
            report.violations.push_back("turn " + std::to_string(i) + " (" + to_string(turn.role) + ") has empty text");
        has_user = has_user || turn.role == Role::user;
    }
    if (!has_user)
        report.violations.push_back("episode has no user turns");
    return report;
}

bool is_scorable(const Episode& episode) {
    if (auto it = episode.metadata.find(kMetaUnscorable); it != episode.metadata.end() && it->second == "true")
        return false;
    for (const auto& turn : episode.turns)
        if (turn.role == Role::user)
            return true;
    return false;
}

}  // namespace ppol
