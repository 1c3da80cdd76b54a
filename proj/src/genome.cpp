#include "ppol/genome.hpp"

#include <algorithm>
#include <cctype>
#include <functional>
#include <regex>
#include <sstream>

#include "ppol/seed_text.hpp"

namespace ppol {

using nlohmann::json;

namespace {

const char* const kSectionAxes = "AXES";
const std::vector<std::string> kTextSections{"POPULATION_SYSTEM", "POPULATION_PROMPT", "ROLEPLAY_SYSTEM",
                                             "ROLEPLAY_PROMPT"};
const char* const kSectionMeta = "META";

std::string section_header(const std::string& name) { return "=== " + name + " ==="; }

bool is_section_header(const std::string& line, std::string* name = nullptr) {
    static const std::regex pattern(R"(^=== ([A-Z_]+) ===$)");
    std::smatch m;
    if (!std::regex_match(line, m, pattern))
        return false;
    if (name)
        *name = m[1];
    return true;
}

bool is_axis_header(const std::string& line, std::string* name = nullptr) {
    static const std::regex pattern(R"(^--- (\S+) ---$)");
    std::smatch m;
    if (!std::regex_match(line, m, pattern))
        return false;
    if (name)
        *name = m[1];
    return true;
}

std::vector<std::string> split_lines(std::string text) {
    text.erase(std::remove(text.begin(), text.end(), '\r'), text.end());
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (true) {
        auto pos = text.find('\n', start);
        if (pos == std::string::npos) {
            lines.push_back(text.substr(start));
            break;
        }
        lines.push_back(text.substr(start, pos - start));
        start = pos + 1;
    }
    if (!lines.empty() && lines.back().empty())
        lines.pop_back();
    return lines;
}

std::string join_lines(const std::vector<std::string>& lines, std::size_t begin, std::size_t end) {
    std::string out;
    for (std::size_t i = begin; i < end; ++i) {
        if (i > begin)
            out += '\n';
        out += lines[i];
    }
    return out;
}

// Walks a template, calling on_text for literal runs and on_name for placeholders.
void scan_template(const std::string& tmpl, const std::function<void(std::string_view)>& on_text,
                   const std::function<void(const std::string&)>& on_name) {
    static const std::regex identifier(R"([A-Za-z_][A-Za-z0-9_]*)");
    std::size_t i = 0;
    std::size_t run = 0;
    auto flush = [&](std::size_t upto) {
        if (upto > run)
            on_text(std::string_view(tmpl).substr(run, upto - run));
    };
    while (i < tmpl.size()) {
        const char c = tmpl[i];
        if (c == '{' && i + 1 < tmpl.size() && tmpl[i + 1] == '{') {
            flush(i);
            on_text("{");
            i += 2;
            run = i;
        } else if (c == '}' && i + 1 < tmpl.size() && tmpl[i + 1] == '}') {
            flush(i);
            on_text("}");
            i += 2;
            run = i;
        } else if (c == '{') {
            const auto close = tmpl.find('}', i + 1);
            if (close == std::string::npos)
                fail(ErrorCode::format, "template has an unclosed '{' at offset " + std::to_string(i));
            const std::string name = tmpl.substr(i + 1, close - i - 1);
            if (!std::regex_match(name, identifier))
                fail(ErrorCode::format, "template has a malformed placeholder '{" + name + "}'");
            flush(i);
            on_name(name);
            i = close + 1;
            run = i;
        } else if (c == '}') {
            fail(ErrorCode::format, "template has a stray '}' at offset " + std::to_string(i));
        } else {
            ++i;
        }
    }
    flush(i);
}

void check_placeholders(const std::string& label, const std::string& tmpl, const std::set<std::string>& allowed,
                        const std::set<std::string>& required) {
    std::set<std::string> used;
    try {
        used = template_placeholders(tmpl);
    } catch (const Error& e) {
        fail(ErrorCode::format, label + ": " + e.what());
    }
    for (const auto& name : used)
        if (!allowed.count(name))
            fail(ErrorCode::format, label + " uses unknown placeholder {" + name + "}");
    for (const auto& name : required)
        if (!used.count(name))
            fail(ErrorCode::format, label + " must reference {" + name + "}");
}

GeneratorGenome parse_document(const std::vector<std::string>& lines, bool require_meta) {
    std::map<std::string, std::pair<std::size_t, std::size_t>> sections;
    std::string current;
    std::size_t body_start = 0;
    for (std::size_t i = 0; i <= lines.size(); ++i) {
        std::string name;
        const bool header = i < lines.size() && is_section_header(lines[i], &name);
        if (i == lines.size() || header) {
            if (!current.empty())
                sections[current] = {body_start, i};
            if (header) {
                if (sections.count(name) || name == current)
                    fail(ErrorCode::format, "genome document repeats section " + name);
                current = name;
                body_start = i + 1;
            }
        } else if (current.empty() && !trim(lines[i]).empty()) {
            fail(ErrorCode::format, "genome document has text before the first section");
        }
    }
    for (const auto& [name, range] : sections) {
        const bool known = name == kSectionAxes || name == kSectionMeta ||
                           std::find(kTextSections.begin(), kTextSections.end(), name) != kTextSections.end();
        if (!known)
            fail(ErrorCode::format, "genome document has unknown section " + name);
    }
    auto need = [&](const std::string& name) {
        auto it = sections.find(name);
        if (it == sections.end())
            fail(ErrorCode::format, "genome document is missing section " + name);
        return it->second;
    };

    GeneratorGenome genome;
    const auto [axes_begin, axes_end] = need(kSectionAxes);
    AxisSpec* axis = nullptr;
    std::set<std::string> seen_keys;
    auto close_axis = [&] {
        if (!axis)
            return;
        for (const char* key : {"definition", "presence_true", "presence_false"})
            if (!seen_keys.count(key))
                fail(ErrorCode::format, "axis '" + axis->behavior + "' is missing " + key);
    };
    for (std::size_t i = axes_begin; i < axes_end; ++i) {
        const std::string line = trim(lines[i]);
        if (line.empty())
            continue;
        std::string name;
        if (is_axis_header(line, &name)) {
            close_axis();
            genome.axes.push_back(AxisSpec{name, "", "", ""});
            axis = &genome.axes.back();
            seen_keys.clear();
            continue;
        }
        if (!axis)
            fail(ErrorCode::format, "AXES line outside an axis block: " + line);
        const auto colon = line.find(':');
        if (colon == std::string::npos)
            fail(ErrorCode::format, "axis '" + axis->behavior + "' has a line without a key: " + line);
        const std::string key = trim(line.substr(0, colon));
        const std::string value = trim(line.substr(colon + 1));
        if (seen_keys.count(key))
            fail(ErrorCode::format, "axis '" + axis->behavior + "' repeats key " + key);
        seen_keys.insert(key);
        if (key == "definition")
            axis->definition = value;
        else if (key == "presence_true")
            axis->presence_true = value;
        else if (key == "presence_false")
            axis->presence_false = value;
        else
            fail(ErrorCode::format, "axis '" + axis->behavior + "' has unknown key " + key);
    }
    close_axis();

    std::string* targets[] = {&genome.population_system, &genome.population_template, &genome.roleplay_system,
                              &genome.roleplay_template};
    for (std::size_t s = 0; s < kTextSections.size(); ++s) {
        const auto [b, e] = need(kTextSections[s]);
        *targets[s] = join_lines(lines, b, e);
    }

    if (sections.count(kSectionMeta)) {
        const auto [b, e] = sections[kSectionMeta];
        for (std::size_t i = b; i < e; ++i) {
            const std::string line = trim(lines[i]);
            if (line.empty())
                continue;
            const auto colon = line.find(':');
            const std::string key = trim(line.substr(0, colon));
            const std::string value = colon == std::string::npos ? "" : trim(line.substr(colon + 1));
            if (key == "generation") {
                try {
                    std::size_t used = 0;
                    genome.generation = std::stoull(value, &used);
                    if (used != value.size())
                        throw std::invalid_argument(value);
                } catch (const std::logic_error&) {
                    fail(ErrorCode::format, "META generation is not a number: " + value);
                }
            } else if (key == "parent_id") {
                genome.parent_id = value;
            } else {
                fail(ErrorCode::format, "META has unknown key " + key);
            }
        }
    } else if (require_meta) {
        fail(ErrorCode::format, "genome document is missing section META");
    }
    genome.validate();
    return genome;
}

std::optional<json> try_parse(const std::string& text) {
    auto doc = json::parse(text, nullptr, false);
    if (doc.is_discarded())
        return std::nullopt;
    return doc;
}

json extract_array(const std::string& raw) {
    const std::string text = trim(raw);
    std::vector<std::string> candidates{text};
    // fenced blocks
    for (std::size_t pos = text.find("```"); pos != std::string::npos;) {
        const auto body = text.find('\n', pos);
        if (body == std::string::npos)
            break;
        const auto close = text.find("```", body);
        if (close == std::string::npos)
            break;
        candidates.push_back(text.substr(body + 1, close - body - 1));
        pos = text.find("```", close + 3);
    }
    const auto first = text.find('[');
    const auto last = text.rfind(']');
    if (first != std::string::npos && last != std::string::npos && last > first)
        candidates.push_back(text.substr(first, last - first + 1));

    for (const auto& candidate : candidates) {
        auto doc = try_parse(candidate);
        if (!doc)
            continue;
        if (doc->is_array())
            return *doc;
        if (doc->is_object() && doc->size() == 1 && doc->begin()->is_array())
            return *doc->begin();
    }
    fail(ErrorCode::format, "population response contains no JSON array");
}

bool coerce_bool(const json& value, const std::string& where) {
    if (value.is_boolean())
        return value.get<bool>();
    if (value.is_number_integer()) {
        const auto v = value.get<long long>();
        if (v == 0 || v == 1)
            return v == 1;
    }
    if (value.is_string()) {
        const std::string s = to_lower(trim(value.get<std::string>()));
        if (s == "true" || s == "yes" || s == "1" || s == "on" || s == "y")
            return true;
        if (s == "false" || s == "no" || s == "0" || s == "off" || s == "n")
            return false;
    }
    fail(ErrorCode::format, where + " is not a boolean: " + value.dump());
}

std::string clean_expansion(const std::string& raw) {
    std::string text = trim(raw);
    if (text.rfind("```", 0) == 0) {
        const auto body = text.find('\n');
        text = body == std::string::npos ? "" : text.substr(body + 1);
        const auto close = text.rfind("```");
        if (close != std::string::npos)
            text = text.substr(0, close);
        text = trim(text);
    }
    return text;
}

}  // namespace

std::vector<std::string> GeneratorGenome::axis_names() const {
    std::vector<std::string> names;
    for (const auto& axis : axes)
        names.push_back(axis.behavior);
    return names;
}

std::string GeneratorGenome::id() const {
    GeneratorGenome content = *this;
    content.generation = 0;
    content.parent_id.clear();
    return hex64(fnv1a64(serialize_genome(content)));
}

bool GeneratorGenome::content_equal(const GeneratorGenome& other) const {
    return axes == other.axes && population_system == other.population_system &&
           population_template == other.population_template && roleplay_system == other.roleplay_system &&
           roleplay_template == other.roleplay_template;
}

void GeneratorGenome::validate() const {
    static const std::regex behavior_pattern(R"([a-z][a-z0-9_]*)");
    if (axes.empty())
        fail(ErrorCode::format, "genome has no axes");
    std::set<std::string> names;
    for (const auto& axis : axes) {
        if (!std::regex_match(axis.behavior, behavior_pattern))
            fail(ErrorCode::format, "axis name '" + axis.behavior + "' must be a lowercase identifier");
        if (!names.insert(axis.behavior).second)
            fail(ErrorCode::format, "duplicate axis '" + axis.behavior + "'");
        for (const auto* field : {&axis.definition, &axis.presence_true, &axis.presence_false}) {
            if (field->empty())
                fail(ErrorCode::format, "axis '" + axis.behavior + "' has an empty field");
            if (field->find('\n') != std::string::npos || *field != trim(*field))
                fail(ErrorCode::format, "axis '" + axis.behavior + "' fields must be single trimmed lines");
        }
    }
    const std::pair<const char*, const std::string*> texts[] = {{"population system", &population_system},
                                                                {"population prompt", &population_template},
                                                                {"roleplay system", &roleplay_system},
                                                                {"roleplay prompt", &roleplay_template}};
    for (const auto& [label, text] : texts) {
        if (trim(*text).empty())
            fail(ErrorCode::format, std::string(label) + " is empty");
        for (const auto& line : split_lines(*text))
            if (is_section_header(line))
                fail(ErrorCode::format, std::string(label) + " contains a section delimiter line");
    }
    check_placeholders("population prompt", population_template, kPopulationPlaceholders,
                       {"N", "axes_description", "task_context"});
    check_placeholders("roleplay prompt", roleplay_template, kRoleplayPlaceholders, {"task_context"});
}

json persona_to_json(const PersonaRecord& record) {
    json placement = json::object();
    for (const auto& [axis, on] : record.axis_placement)
        placement[axis] = on;
    return json{{"persona_id", record.persona_id},
                {"description", record.description},
                {"axis_placement", placement},
                {"reasoning", record.reasoning},
                {"expanded_instruction", record.expanded_instruction}};
}

PersonaRecord persona_from_json(const json& doc) {
    PersonaRecord record;
    try {
        record.persona_id = doc.at("persona_id").get<std::string>();
        record.description = doc.value("description", "");
        for (const auto& [axis, on] : doc.at("axis_placement").items())
            record.axis_placement[axis] = on.get<bool>();
        record.reasoning = doc.value("reasoning", "");
        record.expanded_instruction = doc.value("expanded_instruction", "");
    } catch (const json::exception& e) {
        fail(ErrorCode::format, std::string("persona record: ") + e.what());
    }
    return record;
}

GeneratorGenome initial_genome() {
    GeneratorGenome genome;
    genome.axes = seed::axes();
    genome.population_system = seed::population_system;
    genome.population_template = seed::population_template;
    genome.roleplay_system = seed::roleplay_system;
    genome.roleplay_template = seed::roleplay_template;
    return genome;
}

std::string serialize_genome(const GeneratorGenome& genome) {
    std::ostringstream out;
    out << section_header(kSectionAxes) << '\n';
    for (std::size_t i = 0; i < genome.axes.size(); ++i) {
        const auto& axis = genome.axes[i];
        if (i > 0)
            out << '\n';
        out << "--- " << axis.behavior << " ---\n"
            << "definition: " << axis.definition << '\n'
            << "presence_true: " << axis.presence_true << '\n'
            << "presence_false: " << axis.presence_false << '\n';
    }
    const std::string* texts[] = {&genome.population_system, &genome.population_template, &genome.roleplay_system,
                                  &genome.roleplay_template};
    for (std::size_t s = 0; s < kTextSections.size(); ++s)
        out << section_header(kTextSections[s]) << '\n' << *texts[s] << '\n';
    out << section_header(kSectionMeta) << '\n'
        << "generation: " << genome.generation << '\n'
        << "parent_id: " << genome.parent_id << '\n';
    return out.str();
}

GeneratorGenome parse_genome(const std::string& text) { return parse_document(split_lines(text), true); }

GeneratorGenome extract_genome(const std::string& text) {
    const auto lines = split_lines(text);
    const std::string start = section_header(kSectionAxes);
    auto it = std::find_if(lines.begin(), lines.end(), [&](const std::string& l) { return trim(l) == start; });
    if (it == lines.end())
        fail(ErrorCode::format, "response contains no " + start + " section");
    std::vector<std::string> body;
    body.push_back(start);
    for (++it; it != lines.end(); ++it) {
        if (it->rfind("```", 0) == 0)
            break;
        body.push_back(*it);
    }
    return parse_document(body, false);
}

std::string render_template(const std::string& tmpl, const std::map<std::string, std::string>& values) {
    std::string out;
    scan_template(
        tmpl, [&](std::string_view text) { out.append(text); },
        [&](const std::string& name) {
            auto it = values.find(name);
            if (it == values.end())
                fail(ErrorCode::format, "unresolved placeholder {" + name + "}");
            out += it->second;
        });
    return out;
}

std::set<std::string> template_placeholders(const std::string& tmpl) {
    std::set<std::string> names;
    scan_template(
        tmpl, [](std::string_view) {}, [&](const std::string& name) { names.insert(name); });
    return names;
}

std::string axes_description(const GeneratorGenome& genome) {
    std::string out;
    for (std::size_t i = 0; i < genome.axes.size(); ++i) {
        const auto& axis = genome.axes[i];
        if (i > 0)
            out += "\n\n";
        out += "### " + axis.behavior + "\nDefinition: " + axis.definition + "\nWhen true: " + axis.presence_true +
               "\nWhen false: " + axis.presence_false;
    }
    return out;
}

std::string active_traits(const GeneratorGenome& genome, const std::map<std::string, bool>& placement) {
    std::string out;
    for (const auto& axis : genome.axes) {
        auto it = placement.find(axis.behavior);
        if (it == placement.end() || !it->second)
            continue;
        if (!out.empty())
            out += '\n';
        out += "- " + axis.behavior + ": " + axis.presence_true;
    }
    return out.empty() ? "(none)" : out;
}

RenderedPrompt render_population_prompt(const GeneratorGenome& genome, const TaskContext& context, std::size_t n) {
    if (n < 1)
        fail(ErrorCode::invalid_input, "persona count must be >= 1");
    if (trim(context.text).empty())
        fail(ErrorCode::invalid_input, "task context for '" + context.task_id + "' is empty");
    const std::map<std::string, std::string> values{
        {"N", std::to_string(n)}, {"axes_description", axes_description(genome)}, {"task_context", context.text}};
    return {genome.population_system, render_template(genome.population_template, values)};
}

RenderedPrompt render_roleplay_prompt(const GeneratorGenome& genome, const TaskContext& context,
                                      const PersonaRecord& member) {
    if (trim(context.text).empty())
        fail(ErrorCode::invalid_input, "task context for '" + context.task_id + "' is empty");
    if (member.description.empty())
        fail(ErrorCode::invalid_input, "member '" + member.persona_id + "' has no description");
    for (const auto& name : genome.axis_names())
        if (!member.axis_placement.count(name))
            fail(ErrorCode::invalid_input, "member '" + member.persona_id + "' has no placement for '" + name + "'");
    const std::map<std::string, std::string> values{{"task_context", context.text},
                                                    {"persona_id", member.persona_id},
                                                    {"description", member.description},
                                                    {"active_traits", active_traits(genome, member.axis_placement)}};
    return {genome.roleplay_system, render_template(genome.roleplay_template, values)};
}

std::vector<PersonaRecord> parse_population_response(const std::string& text, const GeneratorGenome& genome,
                                                     std::size_t n) {
    const json members = extract_array(text);
    if (members.size() != n)
        fail(ErrorCode::format, "expected " + std::to_string(n) + " population members, got " +
                                    std::to_string(members.size()));
    const auto axes = genome.axis_names();
    const std::set<std::string> axis_set(axes.begin(), axes.end());
    std::vector<PersonaRecord> records;
    std::set<std::string> ids;
    for (std::size_t i = 0; i < members.size(); ++i) {
        const auto& m = members[i];
        std::string label = "member " + std::to_string(i + 1);
        if (!m.is_object())
            fail(ErrorCode::format, label + " is not an object");
        PersonaRecord record;
        if (m.contains("persona_id") && m["persona_id"].is_string())
            record.persona_id = trim(m["persona_id"].get<std::string>());
        if (record.persona_id.empty())
            record.persona_id = "persona_" + std::to_string(i + 1);
        label += " ('" + record.persona_id + "')";
        if (!m.contains("description") || !m["description"].is_string() ||
            trim(m["description"].get<std::string>()).empty())
            fail(ErrorCode::format, label + " has no description");
        record.description = trim(m["description"].get<std::string>());
        if (m.contains("reasoning") && m["reasoning"].is_string())
            record.reasoning = m["reasoning"].get<std::string>();
        if (!m.contains("axis_placement") || !m["axis_placement"].is_object())
            fail(ErrorCode::format, label + " has no axis_placement object");
        for (const auto& [key, value] : m["axis_placement"].items()) {
            if (!axis_set.count(key))
                fail(ErrorCode::format, label + " has unknown axis '" + key + "'");
            record.axis_placement[key] = coerce_bool(value, label + " axis '" + key + "'");
        }
        for (const auto& axis : axes)
            if (!record.axis_placement.count(axis))
                fail(ErrorCode::format, label + " is missing axis '" + axis + "'");
        const std::string base = record.persona_id;
        for (std::size_t k = 2; !ids.insert(record.persona_id).second; ++k)
            record.persona_id = base + "_" + std::to_string(k);
        records.push_back(std::move(record));
    }
    return records;
}

GenerationResult generate_personas(const GeneratorGenome& genome, const TaskContext& context, std::size_t n,
                                   Gateway& gateway, const GenerationOptions& options) {
    if (options.max_attempts < 1)
        fail(ErrorCode::config, "generation max_attempts must be >= 1");
    GenerationResult result;

    const auto population = render_population_prompt(genome, context, n);
    const auto request = gateway.make_request(
        RequestTag::generator, {{ChatRole::system, population.system}, {ChatRole::user, population.user}});
    std::string last_error;
    bool parsed = false;
    for (std::size_t attempt = 0; attempt < options.max_attempts && !parsed; ++attempt) {
        const std::string text = gateway.complete(request);
        try {
            result.personas = parse_population_response(text, genome, n);
            parsed = true;
        } catch (const Error& e) {
            if (e.code() != ErrorCode::format)
                throw;
            last_error = e.what();
            ++result.retries;
        }
    }
    if (!parsed)
        fail(ErrorCode::exhausted, "population phase for task '" + context.task_id + "' failed after " +
                                       std::to_string(options.max_attempts) + " attempts: " + last_error);

    std::vector<CompletionRequest> requests;
    for (const auto& member : result.personas) {
        const auto roleplay = render_roleplay_prompt(genome, context, member);
        requests.push_back(gateway.make_request(
            RequestTag::generator, {{ChatRole::system, roleplay.system}, {ChatRole::user, roleplay.user}}));
    }
    std::vector<std::size_t> pending(requests.size());
    for (std::size_t i = 0; i < pending.size(); ++i)
        pending[i] = i;
    for (std::size_t attempt = 0; attempt < options.max_attempts && !pending.empty(); ++attempt) {
        std::vector<CompletionRequest> batch;
        for (auto i : pending)
            batch.push_back(requests[i]);
        const auto outcomes = gateway.complete_batch(batch, options.max_workers);
        std::vector<std::size_t> still;
        for (std::size_t k = 0; k < pending.size(); ++k) {
            auto& member = result.personas[pending[k]];
            if (!outcomes[k].ok())
                fail(outcomes[k].code,
                     "expansion of member '" + member.persona_id + "' failed: " + outcomes[k].error);
            member.expanded_instruction = clean_expansion(*outcomes[k].text);
            if (member.expanded_instruction.empty()) {
                ++result.retries;
                still.push_back(pending[k]);
            }
        }
        pending = std::move(still);
    }
    if (!pending.empty())
        fail(ErrorCode::exhausted, "expansion of member '" + result.personas[pending.front()].persona_id +
                                       "' returned no instruction after " +
                                       std::to_string(options.max_attempts) + " attempts");
    return result;
}

}  // namespace ppol
