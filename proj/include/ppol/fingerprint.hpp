#pragma once

// 19-feature behavioral fingerprint computed from the user side of a dialogue.
//
// Feature order is a public contract: the discriminator, the metric reports and
// every table file index features by position.
//
//   D1 communication style      0 words_per_turn            1 short_utterance_rate
//                               2 politeness_rate           3 formality_rate
//                               4 acknowledgment_rate       5 verbosity_cv
//                               6 repetition_rate           7 identity_confusion_rate
//   D2 information disclosure   8 front_loading_ratio       9 identifiers_per_turn
//                              10 opening_length
//   D3 clarification behavior  11 uncertainty_rate         12 certainty_rate
//                              13 pushback_rate            14 clarification_question_rate
//                              15 info_seeking_rate
//   D4 error reaction          16 emotional_expression_rate 17 accusatory_rate
//                              18 strategy_pivot_rate

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <regex>
#include <span>
#include <string>
#include <vector>

#include "ppol/transcript.hpp"

namespace ppol {

inline constexpr std::size_t kFeatureCount = 19;
using FeatureVector = std::array<double, kFeatureCount>;

enum class Feature : std::size_t {
    words_per_turn,
    short_utterance_rate,
    politeness_rate,
    formality_rate,
    acknowledgment_rate,
    verbosity_cv,
    repetition_rate,
    identity_confusion_rate,
    front_loading_ratio,
    identifiers_per_turn,
    opening_length,
    uncertainty_rate,
    certainty_rate,
    pushback_rate,
    clarification_question_rate,
    info_seeking_rate,
    emotional_expression_rate,
    accusatory_rate,
    strategy_pivot_rate,
};

extern const std::array<const char*, kFeatureCount> kFeatureNames;

/// True for features bounded to [0, 1]; false for the four unbounded statistics
/// (words_per_turn, verbosity_cv, identifiers_per_turn, opening_length).
bool is_rate_feature(std::size_t index);

enum class Dimension { d1, d2, d3, d4 };
inline constexpr std::array<Dimension, 4> kDimensions{Dimension::d1, Dimension::d2, Dimension::d3, Dimension::d4};

struct DimensionRange {
    std::size_t offset;
    std::size_t length;
};
DimensionRange dimension_range(Dimension dim);
std::string to_string(Dimension dim);

struct Fingerprint {
    FeatureVector values{};

    double operator[](Feature f) const { return values[static_cast<std::size_t>(f)]; }
    double& operator[](Feature f) { return values[static_cast<std::size_t>(f)]; }

    bool operator==(const Fingerprint&) const = default;
};

std::vector<double> dimension_slice(const Fingerprint& fingerprint, Dimension dim);

// Marker families referenced by features. "identifiers" holds entity patterns
// (order numbers, emails, dates, flight codes).
inline constexpr std::array<const char*, 13> kMarkerFamilies{
    "politeness",  "formality", "acknowledgment", "identity_confusion", "uncertainty",
    "certainty",   "pushback",  "clarification",  "info_seeking",       "emotional",
    "accusatory",  "pivot",     "identifiers",
};

/// Compiled pattern lists keyed by family. Patterns are ECMAScript regexes,
/// matched case-insensitively; lexicon authors anchor them with \b.
class LexiconSet {
public:
    /// Compiles every pattern; throws naming the first family or pattern at fault.
    explicit LexiconSet(std::map<std::string, std::vector<std::string>> families);

    const std::vector<std::string>& patterns(const std::string& family) const;
    bool any_match(const std::string& family, const std::string& text) const;
    /// Non-overlapping matches of the family's alternation, scanning left to right.
    std::size_t count_matches(const std::string& family, const std::string& text) const;
    const std::map<std::string, std::vector<std::string>>& families() const { return sources_; }

private:
    const std::regex& combined(const std::string& family) const;

    std::map<std::string, std::vector<std::string>> sources_;
    std::map<std::string, std::regex> combined_;
};

/// Reads a lexicon file: {"format": "ppol-lexicon", "version": 1, "families": {name: [pattern, ...]}}.
LexiconSet load_lexicons(const std::filesystem::path& path);

struct FeatureConfig {
    std::size_t short_utterance_threshold = 3;
    double repetition_overlap_threshold = 0.6;
    /// User turns with ordinal below this count as the opening for front-loading.
    std::size_t front_load_turns = 1;

    void validate() const;
};

/// Lowercased whitespace tokens with surrounding punctuation stripped.
std::vector<std::string> normalized_tokens(const std::string& text);
std::size_t word_count(const std::string& text);

/// Throws ErrorCode::unscorable when the episode has no user turns.
Fingerprint extract_fingerprint(const Episode& episode, const LexiconSet& lexicons, const FeatureConfig& config = {});

struct FingerprintMatrix {
    std::vector<FeatureVector> rows;
    std::vector<std::string> episode_ids;
    std::vector<std::string> skipped;
};

FingerprintMatrix fingerprint_matrix(const Corpus& corpus, const LexiconSet& lexicons, const FeatureConfig& config = {});

}  // namespace ppol
