#include "ppol/fingerprint.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ppol/common.hpp"

namespace ppol {

const std::array<const char*, kFeatureCount> kFeatureNames{
    "words_per_turn",
    "short_utterance_rate",
    "politeness_rate",
    "formality_rate",
    "acknowledgment_rate",
    "verbosity_cv",
    "repetition_rate",
    "identity_confusion_rate",
    "front_loading_ratio",
    "identifiers_per_turn",
    "opening_length",
    "uncertainty_rate",
    "certainty_rate",
    "pushback_rate",
    "clarification_question_rate",
    "info_seeking_rate",
    "emotional_expression_rate",
    "accusatory_rate",
    "strategy_pivot_rate",
};

bool is_rate_feature(std::size_t index) {
    switch (static_cast<Feature>(index)) {
    case Feature::words_per_turn:
    case Feature::verbosity_cv:
    case Feature::identifiers_per_turn:
    case Feature::opening_length:
        return false;
    default:
        return index < kFeatureCount;
    }
}

DimensionRange dimension_range(Dimension dim) {
    switch (dim) {
    case Dimension::d1: return {0, 8};
    case Dimension::d2: return {8, 3};
    case Dimension::d3: return {11, 5};
    case Dimension::d4: return {16, 3};
    }
    return {0, 0};
}

std::string to_string(Dimension dim) {
    switch (dim) {
    case Dimension::d1: return "D1";
    case Dimension::d2: return "D2";
    case Dimension::d3: return "D3";
    case Dimension::d4: return "D4";
    }
    return "D?";
}

std::vector<double> dimension_slice(const Fingerprint& fingerprint, Dimension dim) {
    const auto range = dimension_range(dim);
    return {fingerprint.values.begin() + static_cast<std::ptrdiff_t>(range.offset),
            fingerprint.values.begin() + static_cast<std::ptrdiff_t>(range.offset + range.length)};
}

namespace {

constexpr auto kRegexFlags = std::regex::ECMAScript | std::regex::icase | std::regex::optimize;

}  // namespace

LexiconSet::LexiconSet(std::map<std::string, std::vector<std::string>> families) : sources_(std::move(families)) {
    std::vector<std::string> missing;
    for (const char* name : kMarkerFamilies)
        if (!sources_.count(name))
            missing.emplace_back(name);
    if (!missing.empty()) {
        std::string list;
        for (const auto& name : missing)
            list += (list.empty() ? "" : ", ") + name;
        fail(ErrorCode::format, "lexicon is missing marker families: " + list);
    }
    for (const auto& [family, patterns] : sources_) {
        std::string alternation;
        for (const auto& pattern : patterns) {
            try {
                std::regex probe(pattern, kRegexFlags);
            } catch (const std::regex_error& e) {
                fail(ErrorCode::format, "lexicon family '" + family + "': pattern \"" + pattern +
                                            "\" does not compile: " + e.what());
            }
            alternation += (alternation.empty() ? "" : "|") + ("(?:" + pattern + ")");
        }
        // An empty family never matches.
        if (alternation.empty())
            alternation = "(?!)";
        combined_.emplace(family, std::regex(alternation, kRegexFlags));
    }
}

const std::vector<std::string>& LexiconSet::patterns(const std::string& family) const {
    auto it = sources_.find(family);
    if (it == sources_.end())
        fail(ErrorCode::invalid_input, "unknown marker family '" + family + "'");
    return it->second;
}

const std::regex& LexiconSet::combined(const std::string& family) const {
    auto it = combined_.find(family);
    if (it == combined_.end())
        fail(ErrorCode::invalid_input, "unknown marker family '" + family + "'");
    return it->second;
}

bool LexiconSet::any_match(const std::string& family, const std::string& text) const {
    return std::regex_search(text, combined(family));
}

std::size_t LexiconSet::count_matches(const std::string& family, const std::string& text) const {
    const auto& re = combined(family);
    return static_cast<std::size_t>(
        std::distance(std::sregex_iterator(text.begin(), text.end(), re), std::sregex_iterator()));
}

LexiconSet load_lexicons(const std::filesystem::path& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorCode::format, "lexicon file " + path.string() + " is not valid JSON: " + e.what());
    }
    if (!doc.contains("families") || !doc["families"].is_object())
        fail(ErrorCode::format, "lexicon file " + path.string() + " has no 'families' object");
    std::map<std::string, std::vector<std::string>> families;
    for (const auto& [name, list] : doc["families"].items()) {
        if (!list.is_array())
            fail(ErrorCode::format, "lexicon family '" + name + "' must be a list of patterns");
        auto& out = families[name];
        for (const auto& pattern : list)
            out.push_back(pattern.get<std::string>());
    }
    return LexiconSet(std::move(families));
}

void FeatureConfig::validate() const {
    if (short_utterance_threshold < 1)
        fail(ErrorCode::config, "short_utterance_threshold must be >= 1");
    if (!(repetition_overlap_threshold > 0.0 && repetition_overlap_threshold <= 1.0))
        fail(ErrorCode::config, "repetition_overlap_threshold must lie in (0, 1]");
    if (front_load_turns < 1)
        fail(ErrorCode::config, "front_load_turns must be >= 1");
}

std::vector<std::string> normalized_tokens(const std::string& text) {
    std::vector<std::string> tokens;
    std::istringstream in(text);
    std::string raw;
    while (in >> raw) {
        std::size_t begin = 0;
        std::size_t end = raw.size();
        while (begin < end && std::ispunct(static_cast<unsigned char>(raw[begin])))
            ++begin;
        while (end > begin && std::ispunct(static_cast<unsigned char>(raw[end - 1])))
            --end;
        // Punctuation-only tokens ("??", "...") are kept whole.
        tokens.push_back(to_lower(begin < end ? raw.substr(begin, end - begin) : raw));
    }
    return tokens;
}

std::size_t word_count(const std::string& text) {
    std::istringstream in(text);
    std::string token;
    std::size_t n = 0;
    while (in >> token)
        ++n;
    return n;
}

namespace {

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
    if (a.empty() && b.empty())
        return 0.0;
    std::size_t common = 0;
    for (const auto& token : a)
        common += b.count(token);
    return static_cast<double>(common) / static_cast<double>(a.size() + b.size() - common);
}

}  // namespace

Fingerprint extract_fingerprint(const Episode& episode, const LexiconSet& lexicons, const FeatureConfig& config) {
    config.validate();
    const auto turns = user_turns(episode);
    if (turns.empty())
        fail(ErrorCode::unscorable, "episode '" + episode.episode_id + "' has no user turns");

    const double n = static_cast<double>(turns.size());
    std::vector<double> lengths;
    std::vector<std::set<std::string>> token_sets;
    lengths.reserve(turns.size());
    for (const auto& text : turns) {
        lengths.push_back(static_cast<double>(word_count(text)));
        auto tokens = normalized_tokens(text);
        token_sets.emplace_back(tokens.begin(), tokens.end());
    }

    auto presence_rate = [&](const char* family) {
        std::size_t hits = 0;
        for (const auto& text : turns)
            hits += lexicons.any_match(family, text) ? 1 : 0;
        return static_cast<double>(hits) / n;
    };

    Fingerprint fp;

    double total_words = 0.0;
    std::size_t short_turns = 0;
    for (double len : lengths) {
        total_words += len;
        short_turns += len <= static_cast<double>(config.short_utterance_threshold) ? 1 : 0;
    }
    const double mean = total_words / n;
    fp[Feature::words_per_turn] = mean;
    fp[Feature::short_utterance_rate] = static_cast<double>(short_turns) / n;

    double variance = 0.0;
    for (double len : lengths)
        variance += (len - mean) * (len - mean);
    variance /= n;
    fp[Feature::verbosity_cv] = (turns.size() < 2 || mean == 0.0) ? 0.0 : std::sqrt(variance) / mean;

    std::size_t repeated = 0;
    for (std::size_t k = 1; k < token_sets.size(); ++k) {
        for (std::size_t j = 0; j < k; ++j) {
            if (jaccard(token_sets[k], token_sets[j]) >= config.repetition_overlap_threshold) {
                ++repeated;
                break;
            }
        }
    }
    fp[Feature::repetition_rate] = static_cast<double>(repeated) / n;

    fp[Feature::politeness_rate] = presence_rate("politeness");
    fp[Feature::formality_rate] = presence_rate("formality");
    fp[Feature::acknowledgment_rate] = presence_rate("acknowledgment");
    fp[Feature::identity_confusion_rate] = presence_rate("identity_confusion");

    std::size_t front = 0;
    std::size_t total_ids = 0;
    for (std::size_t k = 0; k < turns.size(); ++k) {
        const auto ids = lexicons.count_matches("identifiers", turns[k]);
        total_ids += ids;
        if (k < config.front_load_turns)
            front += ids;
    }
    fp[Feature::front_loading_ratio] =
        total_ids == 0 ? 1.0 : static_cast<double>(front) / static_cast<double>(total_ids);
    fp[Feature::identifiers_per_turn] = static_cast<double>(total_ids) / n;
    fp[Feature::opening_length] = lengths.front();

    fp[Feature::uncertainty_rate] = presence_rate("uncertainty");
    fp[Feature::certainty_rate] = presence_rate("certainty");
    fp[Feature::pushback_rate] = presence_rate("pushback");
    fp[Feature::clarification_question_rate] = presence_rate("clarification");
    fp[Feature::info_seeking_rate] = presence_rate("info_seeking");

    fp[Feature::emotional_expression_rate] = presence_rate("emotional");
    fp[Feature::accusatory_rate] = presence_rate("accusatory");
    fp[Feature::strategy_pivot_rate] = presence_rate("pivot");
    return fp;
}

FingerprintMatrix fingerprint_matrix(const Corpus& corpus, const LexiconSet& lexicons, const FeatureConfig& config) {
    FingerprintMatrix matrix;
    for (const auto& episode : corpus.episodes) {
        if (!is_scorable(episode)) {
            matrix.skipped.push_back(episode.episode_id);
            continue;
        }
        matrix.rows.push_back(extract_fingerprint(episode, lexicons, config).values);
        matrix.episode_ids.push_back(episode.episode_id);
    }
    return matrix;
}

}  // namespace ppol
