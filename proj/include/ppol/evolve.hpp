#pragma once

// Outer search over generator genomes: minibatch evaluation, a MAP-Elites
// archive per island with ring migration, the persona-count curriculum,
// reflection and LLM mutation, checkpointing and final selection.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ppol/common.hpp"
#include "ppol/fingerprint.hpp"
#include "ppol/genome.hpp"
#include "ppol/llm_gateway.hpp"
#include "ppol/metrics.hpp"
#include "ppol/rollout.hpp"

namespace ppol {

// --- minibatches ---------------------------------------------------------

struct WindowState {
    std::size_t cursor = 0;
};

/// Contiguous window of `size` items from the cursor, wrapping at the end of the
/// pool; the cursor then advances by `stride` modulo the pool size.
std::pair<std::vector<std::size_t>, WindowState> sample_minibatch(std::size_t pool_size, WindowState state,
                                                                 std::size_t size, std::size_t stride);

// --- evaluation ----------------------------------------------------------

struct ScoredEpisode {
    Episode episode;
    std::string policy;
    FeatureVector fingerprint{};
    double p_human = 0.0;
};

struct EvaluationContext {
    Gateway* gateway = nullptr;
    const LexiconSet* lexicons = nullptr;
    FeatureConfig features;
    std::function<double(const FeatureVector&)> human_prob;
    const HumanReference* reference = nullptr;
    EnvironmentFactory environments;
    RolloutConfig rollout;
    GenerationOptions generation;
    std::size_t terminal_personas = 10;  // persona count at which the weights reach 0.5 / 0.5
};

struct Evaluation {
    bool ok = false;
    std::string error;  // set when ok is false
    FitnessReport report;
    std::vector<ScoredEpisode> episodes;
    std::size_t n_personas = 0;
    std::size_t generation_retries = 0;
    std::size_t dropped_episodes = 0;  // unscorable or failed rollouts
};

/// Generates personas per task, runs one rollout each and scores the batch.
/// Failures are reported through `ok`, never as a zero score.
Evaluation evaluate_candidate(const GeneratorGenome& genome, const std::vector<TaskSpec>& tasks,
                              std::size_t n_personas, const EvaluationContext& context);

// --- archive -------------------------------------------------------------

struct BehaviorCoords {
    double x = 0.0;  // mean human-likeness
    double y = 0.0;  // mean coverage
};

BehaviorCoords behavior_coords(const FitnessReport& report);
BehaviorCoords clamp_coords(double x, double y);
/// floor(c * resolution), capped at resolution - 1.
std::size_t bin_index(double coord, std::size_t resolution);

struct ArchiveCell {
    std::size_t i = 0;
    std::size_t j = 0;
    GeneratorGenome genome;
    double fitness = 0.0;
    BehaviorCoords coords;
    std::string reflection;
    std::size_t iteration = 0;  // when this elite was evaluated
};

struct InsertResult {
    bool inserted = false;
    std::optional<double> incumbent;  // fitness that blocked or was replaced
    std::optional<std::pair<std::size_t, std::size_t>> evicted;
};

class MapElitesArchive {
public:
    /// capacity 0 leaves the occupied-cell count unbounded (besides the grid).
    explicit MapElitesArchive(std::size_t resolution = 10, std::size_t capacity = 0);

    /// Empty bins are filled; occupied bins change hands only on strictly greater fitness.
    /// At capacity, a new bin displaces the lowest-fitness elite only if it beats it.
    InsertResult insert(ArchiveCell cell);
    InsertResult insert(const GeneratorGenome& genome, BehaviorCoords coords, double fitness,
                        std::string reflection = {}, std::size_t iteration = 0);

    std::size_t resolution() const { return resolution_; }
    std::size_t capacity() const { return capacity_; }
    std::size_t size() const { return cells_.size(); }
    bool empty() const { return cells_.empty(); }
    const ArchiveCell* find(std::size_t i, std::size_t j) const;
    /// Occupied cells ordered by bin.
    std::vector<const ArchiveCell*> cells() const;
    /// Occupied cells by decreasing fitness, ties by bin.
    std::vector<const ArchiveCell*> ranked() const;
    const ArchiveCell* best() const;

    nlohmann::json to_json() const;
    static MapElitesArchive from_json(const nlohmann::json& doc);

private:
    std::size_t resolution_;
    std::size_t capacity_;
    std::map<std::pair<std::size_t, std::size_t>, ArchiveCell> cells_;
};

/// With probability elite_ratio a uniform pick among the top elite_fraction of
/// cells (at least one), otherwise a uniform pick among all cells.
const ArchiveCell& select_parent(const MapElitesArchive& archive, double elite_ratio, Rng& rng,
                                 double elite_fraction = 0.2);

/// Island k offers its ceil(rate * occupied) best cells to island k+1 (ring).
/// Offers are taken before any island receives migrants.
void migrate(std::vector<MapElitesArchive>& islands, double rate);

// --- reflection and mutation ---------------------------------------------

struct ReflectionReport {
    std::string metrics_block;
    std::string task_context_block;
    std::string pairs_block;
    std::string prompt;
    std::vector<std::size_t> best;   // indices into the episode list, highest p first
    std::vector<std::size_t> worst;  // lowest p first
    bool insufficient = false;       // fewer than 2k episodes; all were used
    std::string response;
};

ReflectionReport build_reflection(const FitnessReport& report, std::size_t n_personas,
                                  const std::vector<ScoredEpisode>& episodes, const std::vector<TaskSpec>& tasks,
                                  std::size_t k);

struct MutationResult {
    GeneratorGenome genome;
    bool noop = false;
    std::size_t attempts = 0;
    std::string last_error;
};

std::string mutation_prompt(const GeneratorGenome& parent, const std::string& reflection, std::size_t attempt,
                            const std::string& previous_error);
MutationResult propose_mutation(const GeneratorGenome& parent, const std::string& reflection, Gateway& gateway,
                                std::size_t max_attempts = 3);

// --- the loop ------------------------------------------------------------

struct EvolutionConfig {
    std::size_t iterations = 70;
    std::size_t islands = 5;
    std::size_t population_size = 50;
    std::size_t migration_interval = 5;
    double migration_rate = 0.2;
    double elite_ratio = 0.2;
    double elite_fraction = 0.2;
    std::vector<std::size_t> curriculum{5, 8, 10};
    std::size_t epoch_length = 0;  // 0: ceil(iterations / stages)
    std::size_t minibatch_size = 5;
    std::size_t stride = 0;  // 0: minibatch_size
    std::vector<std::string> validation_task_ids;
    std::size_t validation_interval = 5;
    std::uint64_t seed = 42;
    std::size_t grid_resolution = 10;
    std::size_t reflection_exemplars = 2;
    std::size_t mutation_attempts = 3;

    void validate() const;
    std::size_t personas_at(std::size_t iteration) const;  // 1-based iteration
};

EvolutionConfig evolution_config_from_json(const nlohmann::json& section);
nlohmann::json evolution_config_to_json(const EvolutionConfig& config);

struct HistoryRow {
    std::size_t iteration = 0;
    std::size_t island = 0;
    std::size_t n_personas = 0;
    LambdaWeights lambda;
    std::string parent_id;
    std::string child_id;
    bool mutation_noop = false;
    bool failed = false;
    std::string error;
    double score = 0.0;
    double hl_mean = 0.0;
    double cov_mean = 0.0;
    BehaviorCoords coords;
    std::size_t bin_i = 0;
    std::size_t bin_j = 0;
    bool inserted = false;
    std::vector<std::string> tasks;
    bool migrated = false;
    std::optional<double> validation_score;
    double best_score = 0.0;  // best fitness over all islands after this iteration
};

nlohmann::json history_row_to_json(const HistoryRow& row);
HistoryRow history_row_from_json(const nlohmann::json& doc);

struct EvolutionState {
    std::size_t iteration = 0;  // last completed iteration
    WindowState window;
    std::vector<std::string> island_rng_states;
    std::vector<MapElitesArchive> archives;
    std::vector<HistoryRow> history;
    std::optional<HistoryRow> seed_row;
};

nlohmann::json state_to_json(const EvolutionState& state, const EvolutionConfig& config);
EvolutionState state_from_json(const nlohmann::json& doc);

struct EvolutionPaths {
    std::filesystem::path output;  // history.jsonl and checkpoints/ live here
};

inline constexpr int kCheckpointFormatVersion = 1;

std::filesystem::path checkpoint_dir(const std::filesystem::path& output, std::size_t iteration);
/// Reads <dir>/state.json.
EvolutionState load_checkpoint(const std::filesystem::path& dir);
/// Checkpoint directories under <output>/checkpoints ordered by iteration.
std::vector<std::filesystem::path> list_checkpoints(const std::filesystem::path& output);
/// Global best genome recorded in a checkpoint.
GeneratorGenome checkpoint_best(const EvolutionState& state);

struct EvolutionResult {
    EvolutionState state;
    GeneratorGenome best;
    double best_score = 0.0;
};

/// Runs iterations state.iteration+1 .. config.iterations. A fresh start
/// evaluates `seed_genome` first and inserts it into every island.
EvolutionResult run_evolution(const EvolutionConfig& config, const std::vector<TaskSpec>& train_pool,
                              const std::vector<TaskSpec>& validation_tasks, const GeneratorGenome& seed_genome,
                              const EvaluationContext& context, const EvolutionPaths& paths,
                              std::optional<EvolutionState> resume = std::nullopt);

/// Scores one candidate at a persona count; nullopt marks a failed evaluation.
using CandidateScorer = std::function<std::optional<double>(std::size_t candidate, std::size_t n_personas)>;

struct Selection {
    std::size_t index = 0;
    std::vector<double> mean_scores;  // per candidate; NaN for candidates with a failed evaluation
};

/// Argmax of the mean score over the persona counts; ties go to the earliest.
Selection select_checkpoint(std::size_t candidates, const std::vector<std::size_t>& persona_counts,
                            const CandidateScorer& scorer);

}  // namespace ppol
