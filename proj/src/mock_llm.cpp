#include "ppol/mock_llm.hpp"

#include <algorithm>
#include <cctype>
#include <regex>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ppol/genome.hpp"

namespace ppol {

namespace {

class Hasher {
public:
    Hasher(std::uint64_t seed, std::string_view salt) : state_(fnv1a64(salt, 0xcbf29ce484222325ULL ^ seed)) {}
    Hasher& add(std::string_view part) {
        state_ = fnv1a64(part, state_ ^ 0x9e3779b97f4a7c15ULL);
        return *this;
    }
    Hasher& add(std::size_t value) { return add(std::to_string(value)); }
    std::uint64_t value() const { return state_; }
    std::size_t pick(std::size_t bound) const { return static_cast<std::size_t>(state_ % bound); }

private:
    std::uint64_t state_;
};

template <typename T>
const T& choose(const std::vector<T>& pool, std::uint64_t h) {
    return pool[static_cast<std::size_t>(h % pool.size())];
}

std::string system_text(const CompletionRequest& request) {
    for (const auto& m : request.messages)
        if (m.role == ChatRole::system)
            return m.content;
    return {};
}

std::size_t count_role(const CompletionRequest& request, ChatRole role) {
    return static_cast<std::size_t>(std::count_if(request.messages.begin(), request.messages.end(),
                                                  [role](const ChatMessage& m) { return m.role == role; }));
}

// --- generator -----------------------------------------------------------

const std::vector<std::string> kNames{"maria", "dev",   "tomasz", "aiko",  "grace", "luis",
                                      "priya", "omar",  "helen",  "kwame", "sven",  "rosa"};
const std::vector<std::string> kSituations{
    "A night-shift nurse checking her phone between rounds, tired and short on time.",
    "A retired teacher who reads every message twice and likes to be thorough.",
    "A college student juggling classes and a part-time job, typing on a cracked phone.",
    "A small business owner who handles orders in bulk and has little patience for delays.",
    "A parent at a noisy playground trying to sort this out before pickup.",
    "A software tester who notices every inconsistency and asks about it.",
    "A commuter on a crowded train with a weak signal and a dying battery.",
    "A first-time online shopper who is unsure about the terminology."};

std::string population_reply(const CompletionRequest& request, const MockOptions& options) {
    static const std::regex count_pattern(R"(exactly (\d+))");
    static const std::regex axis_pattern(R"(^### ([a-z][a-z0-9_]*)\s*$)", std::regex::multiline);
    const std::string& content = request.last_content();
    std::smatch m;
    std::size_t n = 1;
    if (std::regex_search(content, m, count_pattern))
        n = std::stoul(m[1]);
    std::vector<std::string> axes;
    for (std::sregex_iterator it(content.begin(), content.end(), axis_pattern), end; it != end; ++it)
        axes.push_back((*it)[1]);

    const Hasher base = Hasher(options.seed, "population").add(content);
    nlohmann::json members = nlohmann::json::array();
    for (std::size_t i = 0; i < n; ++i) {
        const Hasher h = Hasher(base).add(i);
        nlohmann::json placement = nlohmann::json::object();
        for (const auto& axis : axes)
            placement[axis] = (Hasher(h).add(axis).value() >> 7) % 2 == 1;
        members.push_back({{"persona_id", choose(kNames, h.value()) + "_" + std::to_string(i + 1)},
                           {"description", choose(kSituations, h.value() >> 11)},
                           {"axis_placement", placement},
                           {"reasoning", "The placements follow from the person's situation."}});
    }
    if (base.value() % 3 == 0)
        return "Here are the personas.\n```json\n" + members.dump(2) + "\n```\n";
    return members.dump(2);
}

std::string roleplay_reply(const CompletionRequest& request, const MockOptions& options) {
    static const std::regex trait_pattern(R"(^- ([a-z][a-z0-9_]*): )", std::regex::multiline);
    static const std::regex name_pattern(R"(Name: (\S+))");
    const std::string& content = request.last_content();
    std::vector<std::string> traits;
    for (std::sregex_iterator it(content.begin(), content.end(), trait_pattern), end; it != end; ++it)
        traits.push_back((*it)[1]);
    std::smatch m;
    const std::string name = std::regex_search(content, m, name_pattern) ? std::string(m[1]) : "the user";

    std::string style;
    for (const auto& t : traits)
        style += (style.empty() ? "" : ",") + t;
    const Hasher h = Hasher(options.seed, "roleplay").add(content);
    std::ostringstream out;
    out << "Play " << name << " throughout the conversation.\n";
    out << "STYLE: " << (style.empty() ? "plain" : style) << "\n";
    out << (h.value() % 2 ? "Keep your goal from the scenario and pursue it in your own way."
                          : "Stay focused on what you need and do not volunteer extra detail.");
    for (const auto& t : traits)
        out << " Let the " << t << " side of you show.";
    return out.str();
}

// --- user simulator ------------------------------------------------------

const std::vector<std::string> kPlainOpen{
    "Hello! I hope you are doing well. I would like some help with my order {id}. Could you please take a look? "
    "Thank you so much.",
    "Hi there, thanks for helping me today. I need to sort out an issue with {id}, regarding a recent purchase.",
    "Good afternoon. I am writing regarding {id}. Moreover, I would appreciate a quick update on the status."};
const std::vector<std::string> kPlainFollow{
    "Okay, that sounds good. Could you please go ahead with that? Thanks!",
    "Thank you, I appreciate your help. When will the refund arrive?",
    "Understood. However, I would like to confirm the details first, please.",
    "Great, thanks. What is the status of the replacement?"};
const std::vector<std::string> kTerse{"order {id}. refund", "yes", "ok", "no", "just do it", "fine", "{id}"};
const std::vector<std::string> kSkeptical{"Are you sure about that? How do you know?",
                                          "That's not right. Can you double check?",
                                          "What do you mean by that exactly?", "Can you clarify why?"};
const std::vector<std::string> kFrustrated{"This is ridiculous. I already told you.", "Ugh, this is so annoying.",
                                           "You are useless, this is unacceptable.",
                                           "I'm so frustrated, you're not listening."};
const std::vector<std::string> kAmbiguous{"maybe it was the blue one, not sure", "I think it was last week? probably",
                                          "um, something like that...", "I guess so, hard to say"};
const std::vector<std::string> kBursty{"wait", "hold on", "one sec", "actually"};
const std::vector<std::string> kPivot{"Actually, scratch that. Let's try a different way.",
                                      "On second thought, can we do an exchange instead?"};
const std::vector<std::string> kClose{"Thanks, that's all.", "ok bye", "Fine. Done.", "Alright, thank you."};

std::string fill_id(std::string text, const std::string& id) {
    for (auto pos = text.find("{id}"); pos != std::string::npos; pos = text.find("{id}"))
        text.replace(pos, 4, id);
    return text;
}

std::string casual(std::string text) {
    std::string out;
    for (char c : text) {
        if (c == '.' || c == ',' || c == '!')
            continue;
        out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return out;
}

std::string user_reply(const CompletionRequest& request, const MockOptions& options) {
    static const std::regex style_pattern(R"(STYLE: ([a-z0-9_,]+))");
    static const std::regex id_pattern(R"(#?W\d{5,}|\b[A-Z]{2}\d{3,4}\b)");
    const std::string system = system_text(request);
    std::set<std::string> styles;
    std::smatch m;
    if (std::regex_search(system, m, style_pattern)) {
        std::stringstream list(m[1]);
        for (std::string s; std::getline(list, s, ',');)
            if (s != "plain")
                styles.insert(s);
    }
    const std::string id = std::regex_search(system, m, id_pattern) ? std::string(m[0]) : "my order";

    const std::size_t turn = count_role(request, ChatRole::assistant);
    const Hasher conv = Hasher(options.seed, "user").add(system);
    const std::size_t planned = 2 + conv.pick(4) + styles.count("skeptical") + styles.count("ambiguous");
    const Hasher h = Hasher(conv).add(turn).add(request.last_content());
    auto has = [&](const char* s) { return styles.count(s) > 0; };

    std::vector<std::string> parts;
    if (turn == 0) {
        if (has("terse"))
            parts.push_back(has("ambiguous") ? "need help" : fill_id(choose(kTerse, 0), id));
        else if (has("ambiguous"))
            parts.push_back("Hi, I have a problem with something I bought, maybe you can help?");
        else
            parts.push_back(fill_id(choose(kPlainOpen, h.value()), id));
    } else if (turn + 1 >= planned) {
        parts.push_back(choose(kClose, h.value()) + " " + options.stop_marker);
    } else {
        if (has("bursty"))
            parts.push_back(choose(kBursty, h.value() >> 3));
        if (has("ambiguous"))
            parts.push_back(turn == 1 ? "it's " + id + " I think" : choose(kAmbiguous, h.value() >> 5));
        if (has("skeptical"))
            parts.push_back(choose(kSkeptical, h.value() >> 9));
        if (has("frustrated"))
            parts.push_back(choose(kFrustrated, h.value() >> 13));
        if (has("terse"))
            parts = {fill_id(choose(kTerse, h.value() >> 17), id)};
        if (parts.empty())
            parts.push_back((h.value() >> 21) % 5 == 0 ? choose(kPivot, h.value()) : choose(kPlainFollow, h.value()));
    }
    std::string text;
    for (const auto& p : parts)
        text += (text.empty() ? "" : " ") + p;
    if (has("digital_dialect"))
        text = casual(text);
    return text;
}

// --- agent ---------------------------------------------------------------

const std::vector<std::string> kAgentReplies{
    "I can help with that. Could you confirm the order number?",
    "Thanks for the details. I have updated the request for you.",
    "I understand. The refund will be processed within five business days.",
    "Is there anything else I can help you with today?"};

std::string agent_reply(const CompletionRequest& request, const MockOptions& options) {
    const std::string& last = request.last_content();
    const std::size_t tool_calls = static_cast<std::size_t>(
        std::count_if(request.messages.begin(), request.messages.end(), [](const ChatMessage& m) {
            return m.role == ChatRole::assistant && m.content.rfind("TOOL:", 0) == 0;
        }));
    const Hasher h = Hasher(options.seed, "agent").add(system_text(request)).add(request.messages.size()).add(last);
    if (last.rfind("Observation: ", 0) == 0)
        return "I checked the system: " + last.substr(13, 80) + " Anything else?";
    if (tool_calls < 2 && h.value() % 3 == 0)
        return tool_calls == 0 ? "TOOL: lookup order" : "TOOL: resolve request";
    return choose(kAgentReplies, h.value() >> 4);
}

// --- reflection / mutation -----------------------------------------------

std::string reflection_reply(const CompletionRequest& request, const MockOptions& options) {
    const Hasher h = Hasher(options.seed, "reflection").add(request.last_content());
    static const std::vector<std::string> notes{
        "Users who stayed brief and pushed back once or twice read as the most human.",
        "The most cooperative users sounded scripted; they thanked the agent after every line.",
        "Mixing frustration with ambiguity produced friction that looked natural.",
        "Long polite openings with every identifier up front looked least human."};
    return "Reflection: " + choose(notes, h.value()) + " " + choose(notes, h.value() >> 8) +
           " Future personas should withhold some details and vary message length.";
}

const std::vector<AxisSpec> kAxisPool{
    {"bursty", "Messaging cadence where thoughts are fragmented across multiple bubbles.",
     "Sends 3+ short fragments in a row. Uses 'wait' or 'hold on'.",
     "Composes single, complete blocks of text. Waits for agent turn."},
    {"information_gating", "The level of cooperation in providing required task data.",
     "Reluctant; never provides more than one piece of info per message. Ignores secondary requests until re-asked.",
     "High-efficiency; provides all available identifiers and status context in the very first message."},
    {"digital_dialect", "The specific linguistic fingerprint of the user's typing style.",
     "Mobile-style: All lowercase, widespread typos (teh, logic), shorthand (u, rn, idk), no punctuation.",
     "Desktop-style: Traditional casing, full sentences, proper grammar, and standard punctuation."},
    {"selective_attention", "Tendency to ignore parts of an agent's multi-part response or question.",
     "Only answers the last thing mentioned. Ignores disclaimers, greetings, or instructions.",
     "Meticulous; addresses every point mentioned by the agent systematically."},
    {"emotional_leakage", "How external pressure (stress, rush) bleeds into the interaction.",
     "Passive-aggressive ellipses, repeated questions ('?\?'), or abruptness when agent is slow.",
     "Neutral, robotic, or overly patient consistency regardless of agent performance."}};

const std::vector<std::string> kRequirementPool{
    "- Real users type casually: fragments, typos and impatience are welcome.",
    "- Avoid personas who thank the agent after every message.",
    "- Vary how much each persona reveals up front."};

std::string mutation_reply(const CompletionRequest& request, const MockOptions& options) {
    const std::string& content = request.last_content();
    const auto begin = content.find(std::string(kGenomeBegin) + "\n");
    const auto end = content.find(std::string("\n") + kGenomeEnd);
    const Hasher h = Hasher(options.seed, "mutation").add(content);
    if (begin == std::string::npos || end == std::string::npos || h.value() % 11 == 0)
        return "The generator looks reasonable; I would keep it as is.";
    const auto doc_start = begin + std::string(kGenomeBegin).size() + 1;
    GeneratorGenome genome = parse_genome(content.substr(doc_start, end - doc_start + 1));

    const auto names = genome.axis_names();
    std::vector<const AxisSpec*> candidates;
    for (const auto& axis : kAxisPool)
        if (std::find(names.begin(), names.end(), axis.behavior) == names.end())
            candidates.push_back(&axis);
    switch ((h.value() >> 5) % 5) {
    case 0:
    case 1:
        if (!candidates.empty() && genome.axes.size() < 7)
            genome.axes.push_back(*candidates[(h.value() >> 9) % candidates.size()]);
        break;
    case 2:
        if (genome.axes.size() > 3)
            genome.axes.erase(genome.axes.begin() + static_cast<long>((h.value() >> 9) % genome.axes.size()));
        break;
    case 3: {
        const std::string line = choose(kRequirementPool, h.value() >> 9);
        const auto at = genome.population_template.find("\n\nRespond with ONLY");
        if (genome.population_template.find(line) == std::string::npos && at != std::string::npos)
            genome.population_template.insert(at, "\n" + line);
        break;
    }
    default:
        break;
    }
    return "Here is the revised generator document.\n```\n" + serialize_genome(genome) + "```\n";
}

}  // namespace

std::string mock_respond(const CompletionRequest& request, const MockOptions& options) {
    switch (request.tag) {
    case RequestTag::generator:
        if (request.last_content().find("axis_placement") != std::string::npos)
            return population_reply(request, options);
        return roleplay_reply(request, options);
    case RequestTag::user: return user_reply(request, options);
    case RequestTag::agent: return agent_reply(request, options);
    case RequestTag::reflection: return reflection_reply(request, options);
    case RequestTag::mutation: return mutation_reply(request, options);
    }
    return {};
}

std::shared_ptr<LlmClient> make_mock_client(MockOptions options) {
    return std::make_shared<FunctionClient>(
        [options](const CompletionRequest& request) { return mock_respond(request, options); });
}

}  // namespace ppol
