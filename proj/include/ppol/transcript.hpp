#pragma once

// Dialogue data model shared by human reference corpora and simulated rollouts.
//
// On disk a corpus is one JSON object per line:
//   {"episode_id": "...", "task_id": "...", "source": "human|base_sim|persona_sim",
//    "persona_id": "..." (optional), "turns": [{"role": "user", "text": "..."}, ...],
//    "metadata": {"key": "value", ...}}
// Turn indices are implied by position.

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace ppol {

enum class Role { user, agent, system, tool };
enum class Source { human, base_sim, persona_sim };
enum class Split { train, validation, test };

std::string to_string(Role role);
std::string to_string(Source source);
std::string to_string(Split split);
Role parse_role(const std::string& text);
Source parse_source(const std::string& text);
Split parse_split(const std::string& text);

struct Turn {
    Role role = Role::user;
    std::string text;
    std::size_t index = 0;

    bool operator==(const Turn&) const = default;
};

struct Episode {
    std::string episode_id;
    std::string task_id;
    Source source = Source::human;
    std::optional<std::string> persona_id;
    std::vector<Turn> turns;
    std::map<std::string, std::string> metadata;

    /// Appends a turn with the next contiguous index.
    void add_turn(Role role, std::string text);

    bool operator==(const Episode&) const = default;
};

struct Corpus {
    std::vector<Episode> episodes;
    Split split = Split::train;
};

/// A line that could not be parsed as a record at all.
struct MalformedLine {
    std::size_t line = 0;
    std::string message;
};

/// Metadata keys written by the rollout engine.
inline constexpr const char* kMetaUnscorable = "unscorable";
inline constexpr const char* kMetaTerminatedBy = "terminated_by";

nlohmann::json episode_to_json(const Episode& episode);
/// Throws ErrorCode::format naming the missing field.
Episode episode_from_json(const nlohmann::json& record);

/// Loads a line-delimited corpus. Unparseable lines are skipped and reported
/// through `malformed` when given; without it the first such line throws.
/// Missing required fields and duplicate ids always throw.
Corpus load_corpus(const std::filesystem::path& path, Split split,
                   std::vector<MalformedLine>* malformed = nullptr);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
/// Appends episodes to a corpus file, creating it if necessary.
void append_episodes(const std::vector<Episode>& episodes, const std::filesystem::path& path);

std::vector<std::string> user_turns(const Episode& episode);

struct ValidationReport {
    std::vector<std::string> violations;
    bool ok() const { return violations.empty(); }
};

ValidationReport validate_episode(const Episode& episode);

/// True when the episode carries at least one user turn and no unscorable flag.
bool is_scorable(const Episode& episode);

}  // namespace ppol
