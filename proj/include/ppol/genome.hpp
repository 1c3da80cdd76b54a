#pragma once

// The evolvable persona generator: behavioral axes plus the population and
// roleplay prompt templates, and the fixed two-phase interpreter that turns a
// genome and a task context into persona policies.

#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ppol/llm_gateway.hpp"

namespace ppol {

struct AxisSpec {
    std::string behavior;
    std::string definition;
    std::string presence_true;
    std::string presence_false;

    bool operator==(const AxisSpec&) const = default;
};

struct GeneratorGenome {
    std::vector<AxisSpec> axes;
    std::string population_system;
    std::string population_template;
    std::string roleplay_system;
    std::string roleplay_template;
    std::size_t generation = 0;
    std::string parent_id;

    std::vector<std::string> axis_names() const;
    /// Content hash over axes and prompts; META is excluded.
    std::string id() const;
    /// Same axes and prompts, ignoring META.
    bool content_equal(const GeneratorGenome& other) const;
    /// Throws ErrorCode::format describing the first violated invariant.
    void validate() const;

    bool operator==(const GeneratorGenome&) const = default;
};

struct PersonaRecord {
    std::string persona_id;
    std::string description;
    std::map<std::string, bool> axis_placement;
    std::string reasoning;
    std::string expanded_instruction;

    bool operator==(const PersonaRecord&) const = default;
};

nlohmann::json persona_to_json(const PersonaRecord& record);
PersonaRecord persona_from_json(const nlohmann::json& doc);

struct TaskContext {
    std::string task_id;
    std::string text;
};

GeneratorGenome initial_genome();

/// Lines that fence a genome document embedded in a larger prompt.
inline constexpr const char* kGenomeBegin = "<BEGIN GENOME>";
inline constexpr const char* kGenomeEnd = "<END GENOME>";

/// Document form: named "=== SECTION ===" blocks, one "--- behavior ---" block per axis.
std::string serialize_genome(const GeneratorGenome& genome);
/// Strict parse of a document produced by serialize_genome (CRLF tolerated).
GeneratorGenome parse_genome(const std::string& text);
/// Lenient parse of model output: strips code fences and any prose before the
/// AXES section. META is optional.
GeneratorGenome extract_genome(const std::string& text);

/// Python-format style substitution: {name} is replaced, {{ and }} are literal
/// braces. Unknown names, names missing from `values`, and stray braces throw.
std::string render_template(const std::string& tmpl, const std::map<std::string, std::string>& values);
/// Placeholder names referenced by a template.
std::set<std::string> template_placeholders(const std::string& tmpl);

inline const std::set<std::string> kPopulationPlaceholders{"N", "axes_description", "task_context"};
inline const std::set<std::string> kRoleplayPlaceholders{"task_context", "persona_id", "description",
                                                         "active_traits"};

std::string axes_description(const GeneratorGenome& genome);
/// One line per axis placed true with its presence_true playbook, or "(none)".
std::string active_traits(const GeneratorGenome& genome, const std::map<std::string, bool>& placement);

struct RenderedPrompt {
    std::string system;
    std::string user;
};

RenderedPrompt render_population_prompt(const GeneratorGenome& genome, const TaskContext& context, std::size_t n);
RenderedPrompt render_roleplay_prompt(const GeneratorGenome& genome, const TaskContext& context,
                                      const PersonaRecord& member);

/// Extracts the JSON array from model output and checks it against the genome.
std::vector<PersonaRecord> parse_population_response(const std::string& text, const GeneratorGenome& genome,
                                                     std::size_t n);

struct GenerationOptions {
    std::size_t max_attempts = 3;  // per phase (and per member in phase 2)
    std::size_t max_workers = 30;
};

struct GenerationResult {
    std::vector<PersonaRecord> personas;
    std::size_t retries = 0;  // failed attempts across both phases
};

/// One joint population call, then one expansion call per member.
GenerationResult generate_personas(const GeneratorGenome& genome, const TaskContext& context, std::size_t n,
                                   Gateway& gateway, const GenerationOptions& options = {});

}  // namespace ppol
