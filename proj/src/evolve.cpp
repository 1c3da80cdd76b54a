#include "ppol/evolve.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>

#include "ppol/seed_text.hpp"

namespace ppol {

using nlohmann::json;

namespace {

// ceil of a product that should be an integer more often than floating point admits
std::size_t ceil_count(double rate, std::size_t count) {
    return static_cast<std::size_t>(std::ceil(rate * static_cast<double>(count) - 1e-9));
}

std::string fixed(double value, int precision) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, value);
    return buf;
}

std::string excerpt(const std::string& text, std::size_t limit) {
    if (text.size() <= limit)
        return text;
    return text.substr(0, limit) + "...";
}

std::string role_label(Role role) {
    switch (role) {
    case Role::user: return "USER";
    case Role::agent: return "AGENT";
    case Role::tool: return "TOOL";
    case Role::system: return "SYSTEM";
    }
    return "?";
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::pair<std::vector<std::size_t>, WindowState> sample_minibatch(std::size_t pool_size, WindowState state,
                                                                 std::size_t size, std::size_t stride) {
    if (pool_size == 0)
        fail(ErrorCode::invalid_input, "task pool is empty");
    if (size == 0 || size > pool_size)
        fail(ErrorCode::invalid_input, "minibatch size " + std::to_string(size) + " does not fit a pool of " +
                                           std::to_string(pool_size));
    if (stride == 0)
        stride = size;
    std::vector<std::size_t> picked;
    for (std::size_t k = 0; k < size; ++k)
        picked.push_back((state.cursor + k) % pool_size);
    return {picked, WindowState{(state.cursor + stride) % pool_size}};
}

Evaluation evaluate_candidate(const GeneratorGenome& genome, const std::vector<TaskSpec>& tasks,
                              std::size_t n_personas, const EvaluationContext& context) {
    if (!context.gateway || !context.lexicons || !context.reference || !context.human_prob ||
        !context.environments)
        fail(ErrorCode::config, "evaluation context is incomplete");
    if (tasks.empty())
        fail(ErrorCode::invalid_input, "no tasks to evaluate on");
    if (n_personas < 1)
        fail(ErrorCode::invalid_input, "persona count must be >= 1");

    Evaluation eval;
    eval.n_personas = n_personas;
    Gateway& gateway = *context.gateway;

    std::vector<RolloutRequest> requests;
    for (const auto& task : tasks) {
        try {
            auto generated =
                generate_personas(genome, TaskContext{task.task_id, task.user_context}, n_personas, gateway,
                                  context.generation);
            eval.generation_retries += generated.retries;
            for (std::size_t p = 0; p < generated.personas.size(); ++p) {
                const auto& persona = generated.personas[p];
                requests.push_back(RolloutRequest{task, persona.persona_id, persona.expanded_instruction,
                                                  task.task_id + "/" + std::to_string(p + 1) + "_" +
                                                      persona.persona_id});
            }
        } catch (const Error& e) {
            eval.error = "persona generation for task '" + task.task_id + "': " + e.what();
            return eval;
        }
    }

    const auto outcomes =
        run_rollout_batch(requests, gateway, context.environments, context.rollout, gateway.config().max_workers);

    std::map<std::string, std::vector<FeatureVector>> by_task;
    std::vector<double> probabilities;
    std::vector<FeatureVector> all;
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
        if (!outcomes[i].ok() || !is_scorable(*outcomes[i].episode)) {
            ++eval.dropped_episodes;
            continue;
        }
        ScoredEpisode scored;
        scored.episode = *outcomes[i].episode;
        scored.policy = requests[i].policy;
        scored.fingerprint = extract_fingerprint(scored.episode, *context.lexicons, context.features).values;
        scored.p_human = context.human_prob(scored.fingerprint);
        probabilities.push_back(scored.p_human);
        all.push_back(scored.fingerprint);
        by_task[scored.episode.task_id].push_back(scored.fingerprint);
        eval.episodes.push_back(std::move(scored));
    }

    std::vector<std::string> task_ids;
    std::vector<double> coverage;
    for (const auto& task : tasks) {
        auto it = by_task.find(task.task_id);
        if (it == by_task.end()) {
            eval.error = "no scorable episodes for task '" + task.task_id + "'";
            return eval;
        }
        task_ids.push_back(task.task_id);
        coverage.push_back(coverage_score(it->second, *context.reference));
    }
    eval.report = assemble_report(std::move(probabilities), std::move(task_ids), std::move(coverage),
                                  lambda_schedule(n_personas, context.terminal_personas), mean_vector(all),
                                  *context.reference);
    eval.ok = true;
    return eval;
}

BehaviorCoords clamp_coords(double x, double y) {
    auto clamp = [](double v) { return std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0); };
    return {clamp(x), clamp(y)};
}

BehaviorCoords behavior_coords(const FitnessReport& report) { return clamp_coords(report.hl_mean, report.cov_mean); }

std::size_t bin_index(double coord, std::size_t resolution) {
    if (resolution == 0)
        fail(ErrorCode::invalid_input, "grid resolution must be >= 1");
    const double c = std::clamp(coord, 0.0, 1.0);
    return std::min(static_cast<std::size_t>(std::floor(c * static_cast<double>(resolution))), resolution - 1);
}

MapElitesArchive::MapElitesArchive(std::size_t resolution, std::size_t capacity)
    : resolution_(resolution), capacity_(capacity) {
    if (resolution_ == 0)
        fail(ErrorCode::config, "grid resolution must be >= 1");
}

InsertResult MapElitesArchive::insert(ArchiveCell cell) {
    InsertResult result;
    if (std::isnan(cell.fitness))
        return result;
    cell.coords = clamp_coords(cell.coords.x, cell.coords.y);
    cell.i = bin_index(cell.coords.x, resolution_);
    cell.j = bin_index(cell.coords.y, resolution_);
    const auto key = std::make_pair(cell.i, cell.j);
    if (auto it = cells_.find(key); it != cells_.end()) {
        result.incumbent = it->second.fitness;
        if (cell.fitness > it->second.fitness) {
            it->second = std::move(cell);
            result.inserted = true;
        }
        return result;
    }
    if (capacity_ > 0 && cells_.size() >= capacity_) {
        const ArchiveCell* worst = ranked().back();
        result.incumbent = worst->fitness;
        if (!(cell.fitness > worst->fitness))
            return result;
        result.evicted = std::make_pair(worst->i, worst->j);
        cells_.erase(*result.evicted);
    }
    cells_.emplace(key, std::move(cell));
    result.inserted = true;
    return result;
}

InsertResult MapElitesArchive::insert(const GeneratorGenome& genome, BehaviorCoords coords, double fitness,
                                      std::string reflection, std::size_t iteration) {
    ArchiveCell cell;
    cell.genome = genome;
    cell.coords = coords;
    cell.fitness = fitness;
    cell.reflection = std::move(reflection);
    cell.iteration = iteration;
    return insert(std::move(cell));
}

const ArchiveCell* MapElitesArchive::find(std::size_t i, std::size_t j) const {
    auto it = cells_.find({i, j});
    return it == cells_.end() ? nullptr : &it->second;
}

std::vector<const ArchiveCell*> MapElitesArchive::cells() const {
    std::vector<const ArchiveCell*> out;
    for (const auto& [key, cell] : cells_)
        out.push_back(&cell);
    return out;
}

std::vector<const ArchiveCell*> MapElitesArchive::ranked() const {
    auto out = cells();
    std::stable_sort(out.begin(), out.end(),
                     [](const ArchiveCell* a, const ArchiveCell* b) { return a->fitness > b->fitness; });
    return out;
}

const ArchiveCell* MapElitesArchive::best() const {
    if (cells_.empty())
        return nullptr;
    return ranked().front();
}

json MapElitesArchive::to_json() const {
    json cells = json::array();
    for (const auto& [key, cell] : cells_)
        cells.push_back({{"i", cell.i},
                         {"j", cell.j},
                         {"fitness", cell.fitness},
                         {"x", cell.coords.x},
                         {"y", cell.coords.y},
                         {"iteration", cell.iteration},
                         {"reflection", cell.reflection},
                         {"genome", serialize_genome(cell.genome)}});
    return json{{"resolution", resolution_}, {"capacity", capacity_}, {"cells", cells}};
}

MapElitesArchive MapElitesArchive::from_json(const json& doc) {
    try {
        MapElitesArchive archive(doc.at("resolution").get<std::size_t>(), doc.at("capacity").get<std::size_t>());
        for (const auto& c : doc.at("cells")) {
            ArchiveCell cell;
            cell.genome = parse_genome(c.at("genome").get<std::string>());
            cell.fitness = c.at("fitness").get<double>();
            cell.coords = {c.at("x").get<double>(), c.at("y").get<double>()};
            cell.iteration = c.at("iteration").get<std::size_t>();
            cell.reflection = c.at("reflection").get<std::string>();
            cell.i = bin_index(cell.coords.x, archive.resolution_);
            cell.j = bin_index(cell.coords.y, archive.resolution_);
            if (cell.i != c.at("i").get<std::size_t>() || cell.j != c.at("j").get<std::size_t>())
                fail(ErrorCode::format, "archive cell coordinates disagree with its bin");
            if (!archive.cells_.emplace(std::make_pair(cell.i, cell.j), std::move(cell)).second)
                fail(ErrorCode::format, "archive holds two elites for one bin");
        }
        return archive;
    } catch (const json::exception& e) {
        fail(ErrorCode::format, std::string("archive: ") + e.what());
    }
}

const ArchiveCell& select_parent(const MapElitesArchive& archive, double elite_ratio, Rng& rng,
                                 double elite_fraction) {
    if (archive.empty())
        fail(ErrorCode::invalid_input, "cannot select a parent from an empty archive");
    const auto ranked = archive.ranked();
    const std::size_t top = std::clamp<std::size_t>(ceil_count(elite_fraction, ranked.size()), 1, ranked.size());
    if (rng.uniform() < elite_ratio)
        return *ranked[rng.below(top)];
    return *archive.cells()[rng.below(ranked.size())];
}

void migrate(std::vector<MapElitesArchive>& islands, double rate) {
    if (islands.size() < 2)
        fail(ErrorCode::invalid_input, "migration needs at least two islands");
    if (!(rate >= 0.0 && rate <= 1.0))
        fail(ErrorCode::invalid_input, "migration rate must lie in [0, 1]");
    std::vector<std::vector<ArchiveCell>> offers(islands.size());
    for (std::size_t k = 0; k < islands.size(); ++k) {
        const auto ranked = islands[k].ranked();
        const std::size_t count = std::min(ranked.size(), ceil_count(rate, ranked.size()));
        for (std::size_t c = 0; c < count; ++c)
            offers[k].push_back(*ranked[c]);
    }
    for (std::size_t k = 0; k < islands.size(); ++k)
        for (auto& cell : offers[k])
            islands[(k + 1) % islands.size()].insert(std::move(cell));
}

ReflectionReport build_reflection(const FitnessReport& report, std::size_t n_personas,
                                  const std::vector<ScoredEpisode>& episodes, const std::vector<TaskSpec>& tasks,
                                  std::size_t k) {
    if (episodes.size() < 2)
        fail(ErrorCode::invalid_input, "reflection needs at least two scored episodes");
    if (k < 1)
        fail(ErrorCode::invalid_input, "reflection needs k >= 1");
    ReflectionReport out;

    std::vector<std::size_t> order(episodes.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return episodes[a].p_human > episodes[b].p_human; });
    std::size_t n_best = k;
    if (episodes.size() < 2 * k) {
        out.insufficient = true;
        n_best = (episodes.size() + 1) / 2;
    }
    const std::size_t n_worst = std::min(k, episodes.size() - n_best);
    out.best.assign(order.begin(), order.begin() + static_cast<long>(n_best));
    for (std::size_t w = 0; w < n_worst; ++w)
        out.worst.push_back(order[order.size() - 1 - w]);

    out.metrics_block = "Combined score (M): " + fixed(report.score, 4) +
                        "\nMean human-likeness probability: " + fixed(report.hl_mean, 4) +
                        "\nBehavioral coverage: " + fixed(report.cov_mean, 4) +
                        "\nWeights: human " + fixed(report.lambda.human, 2) + ", coverage " +
                        fixed(report.lambda.coverage, 2) + "\nPersonas per task: " + std::to_string(n_personas) +
                        "\nDice alignment (communication style, information disclosure, clarification, error "
                        "reaction): " +
                        fixed(report.dice.dims[0], 3) + ", " + fixed(report.dice.dims[1], 3) + ", " +
                        fixed(report.dice.dims[2], 3) + ", " + fixed(report.dice.dims[3], 3) +
                        "\nMean Dice alignment: " + fixed(report.dice.usi, 3);

    std::set<std::string> in_batch(report.task_ids.begin(), report.task_ids.end());
    for (const auto& task : tasks) {
        if (!in_batch.count(task.task_id))
            continue;
        if (!out.task_context_block.empty())
            out.task_context_block += "\n\n";
        out.task_context_block += "Scenario:\n" + task.user_context;
    }

    auto exemplar = [&](std::size_t idx, const char* heading) {
        const auto& e = episodes[idx];
        std::string block = std::string("## ") + heading + " (p_RF = " + fixed(e.p_human, 3) + ")\n";
        block += "Persona policy:\n" + (e.policy.empty() ? std::string("(none)") : e.policy) + "\n";
        block += "Fingerprint:";
        for (std::size_t f = 0; f < kFeatureCount; ++f)
            block += std::string(f == 0 ? " " : ", ") + kFeatureNames[f] + "=" + fixed(e.fingerprint[f], 3);
        block += "\nDialogue:\n";
        const std::size_t limit = std::min<std::size_t>(e.episode.turns.size(), 16);
        for (std::size_t t = 0; t < limit; ++t)
            block += role_label(e.episode.turns[t].role) + ": " + excerpt(e.episode.turns[t].text, 300) + "\n";
        if (limit < e.episode.turns.size())
            block += "(dialogue continues)\n";
        return block;
    };
    for (auto idx : out.best)
        out.pairs_block += (out.pairs_block.empty() ? "" : "\n") + exemplar(idx, "Higher human likelihood");
    for (auto idx : out.worst)
        out.pairs_block += "\n" + exemplar(idx, "Lower human likelihood");
    while (!out.pairs_block.empty() && out.pairs_block.back() == '\n')
        out.pairs_block.pop_back();

    out.prompt = render_template(seed::reflection_template, {{"metrics_block", out.metrics_block},
                                                             {"task_context_block", out.task_context_block},
                                                             {"pairs_block", out.pairs_block}});
    return out;
}

std::string mutation_prompt(const GeneratorGenome& parent, const std::string& reflection, std::size_t attempt,
                            const std::string& previous_error) {
    std::string prompt =
        "Below is the current persona generator document. It lists behavioral axes (one block per axis with "
        "definition, presence_true and presence_false lines) and the prompts used to create personas.\n"
        "Revise it so the generated users become more human-like and cover more of the range real users show. "
        "Use the reflection as guidance. You may add, remove or rewrite axes and edit any prompt section.\n"
        "Keep every section delimiter line exactly as written. POPULATION_PROMPT must keep the placeholders {N}, "
        "{axes_description} and {task_context}. ROLEPLAY_PROMPT must keep {task_context} and may use "
        "{persona_id}, {description} and {active_traits}. Write literal braces as {{ and }}.\n\n";
    prompt += std::string(kGenomeBegin) + "\n" + serialize_genome(parent) + kGenomeEnd + "\n\n";
    prompt += "Reflection on the latest evaluation:\n" + (reflection.empty() ? std::string("(none)") : reflection);
    prompt += "\n\nRespond with the complete revised document, starting with the line === AXES ===.";
    if (attempt > 1)
        prompt += "\n\nAttempt " + std::to_string(attempt) + ". The previous reply could not be used (" +
                  previous_error + "). Send the full document again.";
    return prompt;
}

MutationResult propose_mutation(const GeneratorGenome& parent, const std::string& reflection, Gateway& gateway,
                                std::size_t max_attempts) {
    MutationResult result;
    for (std::size_t attempt = 1; attempt <= max_attempts; ++attempt) {
        result.attempts = attempt;
        try {
            const auto text = gateway.complete(gateway.make_request(
                RequestTag::mutation,
                {{ChatRole::system, "You revise persona generator documents and reply with one complete document "
                                    "in the same format."},
                 {ChatRole::user, mutation_prompt(parent, reflection, attempt, result.last_error)}}));
            GeneratorGenome child = extract_genome(text);
            child.generation = parent.generation + 1;
            child.parent_id = parent.id();
            result.genome = std::move(child);
            return result;
        } catch (const Error& e) {
            result.last_error = e.what();
        }
    }
    result.genome = parent;
    result.noop = true;
    return result;
}

void EvolutionConfig::validate() const {
    auto positive = [](std::size_t v, const char* name) {
        if (v < 1)
            fail(ErrorCode::config, std::string("evolve.") + name + " must be >= 1");
    };
    positive(iterations, "iterations");
    positive(islands, "islands");
    positive(population_size, "population_size");
    positive(migration_interval, "migration_interval");
    positive(minibatch_size, "minibatch_size");
    positive(validation_interval, "validation_interval");
    positive(grid_resolution, "grid_resolution");
    positive(reflection_exemplars, "reflection_exemplars");
    positive(mutation_attempts, "mutation_attempts");
    for (auto [value, name] : {std::pair{migration_rate, "migration_rate"}, std::pair{elite_ratio, "elite_ratio"},
                               std::pair{elite_fraction, "elite_fraction"}})
        if (!(value > 0.0 && value <= 1.0))
            fail(ErrorCode::config, std::string("evolve.") + name + " must lie in (0, 1]");
    if (curriculum.empty())
        fail(ErrorCode::config, "evolve.curriculum must list at least one persona count");
    for (std::size_t s = 0; s < curriculum.size(); ++s) {
        if (curriculum[s] < 1)
            fail(ErrorCode::config, "evolve.curriculum counts must be >= 1");
        if (s > 0 && curriculum[s] < curriculum[s - 1])
            fail(ErrorCode::config, "evolve.curriculum must be nondecreasing");
    }
}

std::size_t EvolutionConfig::personas_at(std::size_t iteration) const {
    const std::size_t stages = curriculum.size();
    const std::size_t epoch = epoch_length > 0 ? epoch_length : (iterations + stages - 1) / stages;
    const std::size_t stage = std::min((iteration - 1) / std::max<std::size_t>(epoch, 1), stages - 1);
    return curriculum[stage];
}

EvolutionConfig evolution_config_from_json(const json& section) {
    static const std::set<std::string> known{
        "iterations",       "islands",          "population_size",      "migration_interval",
        "migration_rate",   "elite_ratio",      "elite_fraction",       "curriculum",
        "epoch_length",     "minibatch_size",   "stride",               "validation_task_ids",
        "validation_interval", "seed",          "grid_resolution",      "reflection_exemplars",
        "mutation_attempts"};
    if (!section.is_object())
        fail(ErrorCode::config, "evolve section must be an object");
    for (const auto& [key, value] : section.items())
        if (!known.count(key))
            fail(ErrorCode::config, "unknown evolve config key '" + key + "'");
    EvolutionConfig cfg;
    try {
        cfg.iterations = section.value("iterations", cfg.iterations);
        cfg.islands = section.value("islands", cfg.islands);
        cfg.population_size = section.value("population_size", cfg.population_size);
        cfg.migration_interval = section.value("migration_interval", cfg.migration_interval);
        cfg.migration_rate = section.value("migration_rate", cfg.migration_rate);
        cfg.elite_ratio = section.value("elite_ratio", cfg.elite_ratio);
        cfg.elite_fraction = section.value("elite_fraction", cfg.elite_fraction);
        cfg.curriculum = section.value("curriculum", cfg.curriculum);
        cfg.epoch_length = section.value("epoch_length", cfg.epoch_length);
        cfg.minibatch_size = section.value("minibatch_size", cfg.minibatch_size);
        cfg.stride = section.value("stride", cfg.stride);
        cfg.validation_task_ids = section.value("validation_task_ids", cfg.validation_task_ids);
        cfg.validation_interval = section.value("validation_interval", cfg.validation_interval);
        cfg.seed = section.value("seed", cfg.seed);
        cfg.grid_resolution = section.value("grid_resolution", cfg.grid_resolution);
        cfg.reflection_exemplars = section.value("reflection_exemplars", cfg.reflection_exemplars);
        cfg.mutation_attempts = section.value("mutation_attempts", cfg.mutation_attempts);
    } catch (const json::exception& e) {
        fail(ErrorCode::config, std::string("evolve section: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

json evolution_config_to_json(const EvolutionConfig& c) {
    return json{{"iterations", c.iterations},
                {"islands", c.islands},
                {"population_size", c.population_size},
                {"migration_interval", c.migration_interval},
                {"migration_rate", c.migration_rate},
                {"elite_ratio", c.elite_ratio},
                {"elite_fraction", c.elite_fraction},
                {"curriculum", c.curriculum},
                {"epoch_length", c.epoch_length},
                {"minibatch_size", c.minibatch_size},
                {"stride", c.stride},
                {"validation_task_ids", c.validation_task_ids},
                {"validation_interval", c.validation_interval},
                {"seed", c.seed},
                {"grid_resolution", c.grid_resolution},
                {"reflection_exemplars", c.reflection_exemplars},
                {"mutation_attempts", c.mutation_attempts}};
}

json history_row_to_json(const HistoryRow& r) {
    json doc{{"iteration", r.iteration},
             {"island", r.island},
             {"n_personas", r.n_personas},
             {"lambda_human", r.lambda.human},
             {"lambda_coverage", r.lambda.coverage},
             {"parent_id", r.parent_id},
             {"child_id", r.child_id},
             {"mutation_noop", r.mutation_noop},
             {"failed", r.failed},
             {"error", r.error},
             {"tasks", r.tasks},
             {"inserted", r.inserted},
             {"migrated", r.migrated},
             {"validation_score", optional_number(r.validation_score)},
             {"best_score", r.best_score}};
    if (r.failed) {
        for (const char* key : {"score", "hl_mean", "cov_mean", "x", "y", "bin_i", "bin_j"})
            doc[key] = nullptr;
    } else {
        doc["score"] = r.score;
        doc["hl_mean"] = r.hl_mean;
        doc["cov_mean"] = r.cov_mean;
        doc["x"] = r.coords.x;
        doc["y"] = r.coords.y;
        doc["bin_i"] = r.bin_i;
        doc["bin_j"] = r.bin_j;
    }
    return doc;
}

HistoryRow history_row_from_json(const json& doc) {
    HistoryRow r;
    try {
        r.iteration = doc.at("iteration").get<std::size_t>();
        r.island = doc.at("island").get<std::size_t>();
        r.n_personas = doc.at("n_personas").get<std::size_t>();
        r.lambda = {doc.at("lambda_human").get<double>(), doc.at("lambda_coverage").get<double>()};
        r.parent_id = doc.at("parent_id").get<std::string>();
        r.child_id = doc.at("child_id").get<std::string>();
        r.mutation_noop = doc.at("mutation_noop").get<bool>();
        r.failed = doc.at("failed").get<bool>();
        r.error = doc.at("error").get<std::string>();
        r.tasks = doc.at("tasks").get<std::vector<std::string>>();
        r.inserted = doc.at("inserted").get<bool>();
        r.migrated = doc.at("migrated").get<bool>();
        if (!doc.at("validation_score").is_null())
            r.validation_score = doc["validation_score"].get<double>();
        r.best_score = doc.at("best_score").get<double>();
        if (!r.failed) {
            r.score = doc.at("score").get<double>();
            r.hl_mean = doc.at("hl_mean").get<double>();
            r.cov_mean = doc.at("cov_mean").get<double>();
            r.coords = {doc.at("x").get<double>(), doc.at("y").get<double>()};
            r.bin_i = doc.at("bin_i").get<std::size_t>();
            r.bin_j = doc.at("bin_j").get<std::size_t>();
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::format, std::string("history row: ") + e.what());
    }
    return r;
}

json state_to_json(const EvolutionState& state, const EvolutionConfig& config) {
    json archives = json::array();
    for (const auto& a : state.archives)
        archives.push_back(a.to_json());
    json history = json::array();
    for (const auto& row : state.history)
        history.push_back(history_row_to_json(row));
    return json{{"format", "ppol-checkpoint"},
                {"version", kCheckpointFormatVersion},
                {"iteration", state.iteration},
                {"window_cursor", state.window.cursor},
                {"island_rng_states", state.island_rng_states},
                {"archives", archives},
                {"history", history},
                {"seed_row", state.seed_row ? history_row_to_json(*state.seed_row) : json(nullptr)},
                {"config", evolution_config_to_json(config)}};
}

EvolutionState state_from_json(const json& doc) {
    if (doc.value("format", "") != "ppol-checkpoint")
        fail(ErrorCode::format, "not a checkpoint state document");
    if (doc.value("version", 0) != kCheckpointFormatVersion)
        fail(ErrorCode::format, "unsupported checkpoint version " + doc.value("version", json(0)).dump());
    EvolutionState state;
    try {
        state.iteration = doc.at("iteration").get<std::size_t>();
        state.window.cursor = doc.at("window_cursor").get<std::size_t>();
        state.island_rng_states = doc.at("island_rng_states").get<std::vector<std::string>>();
        for (const auto& a : doc.at("archives"))
            state.archives.push_back(MapElitesArchive::from_json(a));
        for (const auto& row : doc.at("history"))
            state.history.push_back(history_row_from_json(row));
        if (!doc.at("seed_row").is_null())
            state.seed_row = history_row_from_json(doc["seed_row"]);
    } catch (const json::exception& e) {
        fail(ErrorCode::format, std::string("checkpoint: ") + e.what());
    }
    if (state.archives.size() != state.island_rng_states.size())
        fail(ErrorCode::format, "checkpoint island count is inconsistent");
    return state;
}

std::filesystem::path checkpoint_dir(const std::filesystem::path& output, std::size_t iteration) {
    return output / "checkpoints" / ("checkpoint_" + std::to_string(iteration));
}

EvolutionState load_checkpoint(const std::filesystem::path& dir) {
    const auto file = dir / "state.json";
    try {
        return state_from_json(json::parse(read_file(file)));
    } catch (const json::exception& e) {
        fail(ErrorCode::format, file.string() + ": " + e.what());
    }
}

std::vector<std::filesystem::path> list_checkpoints(const std::filesystem::path& output) {
    std::vector<std::pair<std::size_t, std::filesystem::path>> found;
    const auto root = output / "checkpoints";
    if (!std::filesystem::is_directory(root))
        return {};
    for (const auto& entry : std::filesystem::directory_iterator(root)) {
        const std::string name = entry.path().filename().string();
        const std::string prefix = "checkpoint_";
        if (!entry.is_directory() || name.rfind(prefix, 0) != 0)
            continue;
        const std::string digits = name.substr(prefix.size());
        if (digits.empty() || !std::all_of(digits.begin(), digits.end(), ::isdigit))
            continue;
        found.emplace_back(std::stoull(digits), entry.path());
    }
    std::sort(found.begin(), found.end());
    std::vector<std::filesystem::path> out;
    for (auto& [k, path] : found)
        out.push_back(path);
    return out;
}

GeneratorGenome checkpoint_best(const EvolutionState& state) {
    const ArchiveCell* best = nullptr;
    for (const auto& archive : state.archives) {
        const auto* cell = archive.best();
        if (cell && (!best || cell->fitness > best->fitness))
            best = cell;
    }
    if (!best)
        fail(ErrorCode::format, "checkpoint holds no elites");
    return best->genome;
}

namespace {

std::string reflect(const Evaluation& eval, const std::vector<TaskSpec>& tasks, std::size_t k, Gateway& gateway) {
    if (eval.episodes.size() < 2)
        return {};
    const auto report = build_reflection(eval.report, eval.n_personas, eval.episodes, tasks, k);
    try {
        return gateway.complete(gateway.make_request(
            RequestTag::reflection,
            {{ChatRole::system, "You analyze simulated customer conversations."}, {ChatRole::user, report.prompt}}));
    } catch (const Error&) {
        return {};
    }
}

double global_best(const std::vector<MapElitesArchive>& archives) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& a : archives)
        if (const auto* cell = a.best())
            best = std::max(best, cell->fitness);
    return best;
}

void write_checkpoint(const EvolutionPaths& paths, const EvolutionState& state, const EvolutionConfig& config) {
    namespace fs = std::filesystem;
    const auto target = checkpoint_dir(paths.output, state.iteration);
    const auto staging = target.parent_path() / (".staging_" + target.filename().string());
    std::error_code ec;
    fs::remove_all(staging, ec);
    fs::create_directories(staging);
    write_file_atomic(staging / "state.json", state_to_json(state, config).dump(1) + "\n");
    write_file_atomic(staging / "best.genome", serialize_genome(checkpoint_best(state)));
    fs::remove_all(target, ec);
    fs::rename(staging, target);
}

void write_history(const EvolutionPaths& paths, const EvolutionState& state) {
    std::string out = json{{"format", "ppol-history"}, {"version", 1}}.dump() + "\n";
    for (const auto& row : state.history)
        out += history_row_to_json(row).dump() + "\n";
    write_file_atomic(paths.output / "history.jsonl", out);
}

}  // namespace

EvolutionResult run_evolution(const EvolutionConfig& config, const std::vector<TaskSpec>& train_pool,
                              const std::vector<TaskSpec>& validation_tasks, const GeneratorGenome& seed_genome,
                              const EvaluationContext& base_context, const EvolutionPaths& paths,
                              std::optional<EvolutionState> resume) {
    config.validate();
    if (train_pool.size() < config.minibatch_size)
        fail(ErrorCode::config, "training pool has " + std::to_string(train_pool.size()) +
                                    " tasks, fewer than the minibatch size");
    if (!base_context.gateway)
        fail(ErrorCode::config, "evaluation context has no gateway");
    EvaluationContext context = base_context;
    context.terminal_personas = config.curriculum.back();
    Gateway& gateway = *context.gateway;
    std::filesystem::create_directories(paths.output / "checkpoints");

    auto tasks_for = [&](const std::vector<std::size_t>& picked) {
        std::vector<TaskSpec> tasks;
        for (auto idx : picked)
            tasks.push_back(train_pool[idx]);
        return tasks;
    };
    auto task_ids = [](const std::vector<TaskSpec>& tasks) {
        std::vector<std::string> ids;
        for (const auto& t : tasks)
            ids.push_back(t.task_id);
        return ids;
    };

    EvolutionState state;
    std::vector<Rng> rngs;
    if (resume) {
        state = std::move(*resume);
        if (state.archives.size() != config.islands)
            fail(ErrorCode::config, "checkpoint has " + std::to_string(state.archives.size()) +
                                        " islands but the config asks for " + std::to_string(config.islands));
        for (const auto& s : state.island_rng_states) {
            rngs.emplace_back();
            rngs.back().restore(s);
        }
    } else {
        for (std::size_t k = 0; k < config.islands; ++k) {
            rngs.emplace_back(fnv1a64("island-" + std::to_string(k), config.seed));
            state.archives.emplace_back(config.grid_resolution, config.population_size);
        }
        const std::size_t n = config.personas_at(1);
        auto [picked, window] =
            sample_minibatch(train_pool.size(), state.window, config.minibatch_size, config.stride);
        state.window = window;
        const auto tasks = tasks_for(picked);
        const auto eval = evaluate_candidate(seed_genome, tasks, n, context);
        if (!eval.ok)
            fail(ErrorCode::dependency, "seed genome evaluation failed: " + eval.error);
        const auto coords = behavior_coords(eval.report);
        const auto reflection = reflect(eval, tasks, config.reflection_exemplars, gateway);
        for (auto& archive : state.archives)
            archive.insert(seed_genome, coords, eval.report.score, reflection, 0);
        HistoryRow row;
        row.n_personas = n;
        row.lambda = eval.report.lambda;
        row.child_id = seed_genome.id();
        row.score = eval.report.score;
        row.hl_mean = eval.report.hl_mean;
        row.cov_mean = eval.report.cov_mean;
        row.coords = coords;
        row.bin_i = bin_index(coords.x, config.grid_resolution);
        row.bin_j = bin_index(coords.y, config.grid_resolution);
        row.inserted = true;
        row.tasks = task_ids(tasks);
        row.best_score = eval.report.score;
        state.seed_row = row;
    }

    for (std::size_t it = state.iteration + 1; it <= config.iterations; ++it) {
        HistoryRow row;
        row.iteration = it;
        row.island = (it - 1) % config.islands;
        row.n_personas = config.personas_at(it);
        row.lambda = lambda_schedule(row.n_personas, context.terminal_personas);
        auto [picked, window] =
            sample_minibatch(train_pool.size(), state.window, config.minibatch_size, config.stride);
        state.window = window;
        const auto tasks = tasks_for(picked);
        row.tasks = task_ids(tasks);

        auto& archive = state.archives[row.island];
        const ArchiveCell& parent = select_parent(archive, config.elite_ratio, rngs[row.island], config.elite_fraction);
        row.parent_id = parent.genome.id();
        const auto mutation = propose_mutation(parent.genome, parent.reflection, gateway, config.mutation_attempts);
        row.mutation_noop = mutation.noop;
        row.child_id = mutation.genome.id();

        const auto eval = evaluate_candidate(mutation.genome, tasks, row.n_personas, context);
        if (eval.ok) {
            row.score = eval.report.score;
            row.hl_mean = eval.report.hl_mean;
            row.cov_mean = eval.report.cov_mean;
            row.coords = behavior_coords(eval.report);
            row.bin_i = bin_index(row.coords.x, config.grid_resolution);
            row.bin_j = bin_index(row.coords.y, config.grid_resolution);
            const auto reflection = reflect(eval, tasks, config.reflection_exemplars, gateway);
            row.inserted = archive.insert(mutation.genome, row.coords, row.score, reflection, it).inserted;
        } else {
            row.failed = true;
            row.error = eval.error;
        }

        if (config.islands >= 2 && it % config.migration_interval == 0) {
            migrate(state.archives, config.migration_rate);
            row.migrated = true;
        }
        if (!validation_tasks.empty() && it % config.validation_interval == 0) {
            GeneratorGenome best;
            double best_fitness = -std::numeric_limits<double>::infinity();
            for (const auto& a : state.archives)
                if (const auto* cell = a.best(); cell && cell->fitness > best_fitness) {
                    best_fitness = cell->fitness;
                    best = cell->genome;
                }
            const auto val = evaluate_candidate(best, validation_tasks, context.terminal_personas, context);
            if (val.ok)
                row.validation_score = val.report.score;
        }
        row.best_score = global_best(state.archives);

        state.history.push_back(row);
        state.iteration = it;
        state.island_rng_states.clear();
        for (const auto& rng : rngs)
            state.island_rng_states.push_back(rng.state());
        write_checkpoint(paths, state, config);
        write_history(paths, state);
    }

    EvolutionResult result;
    result.best = checkpoint_best(state);
    result.best_score = global_best(state.archives);
    result.state = std::move(state);
    return result;
}

Selection select_checkpoint(std::size_t candidates, const std::vector<std::size_t>& persona_counts,
                            const CandidateScorer& scorer) {
    if (candidates == 0)
        fail(ErrorCode::invalid_input, "no checkpoints to select from");
    if (persona_counts.empty())
        fail(ErrorCode::invalid_input, "no persona counts to evaluate");
    Selection selection;
    std::optional<std::size_t> best;
    for (std::size_t c = 0; c < candidates; ++c) {
        double sum = 0.0;
        bool ok = true;
        for (auto n : persona_counts) {
            const auto score = scorer(c, n);
            if (!score) {
                ok = false;
                break;
            }
            sum += *score;
        }
        const double mean = ok ? sum / static_cast<double>(persona_counts.size())
                               : std::numeric_limits<double>::quiet_NaN();
        selection.mean_scores.push_back(mean);
        if (ok && (!best || mean > selection.mean_scores[*best]))
            best = c;
    }
    if (!best)
        fail(ErrorCode::dependency, "no checkpoint could be evaluated");
    selection.index = *best;
    return selection;
}

}  // namespace ppol
