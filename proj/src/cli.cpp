#include "ppol/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "ppol/discriminator.hpp"
#include "ppol/evolve.hpp"
#include "ppol/fingerprint.hpp"
#include "ppol/genome.hpp"
#include "ppol/llm_gateway.hpp"
#include "ppol/metrics.hpp"
#include "ppol/mock_llm.hpp"
#include "ppol/rollout.hpp"
#include "ppol/transcript.hpp"

namespace ppol {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(ErrorCode code) {
    switch (code) {
    case ErrorCode::config:
    case ErrorCode::invalid_input: return 2;
    case ErrorCode::io: return 3;
    case ErrorCode::dependency:
    case ErrorCode::timeout: return 4;
    case ErrorCode::format: return 5;
    case ErrorCode::exhausted:
    case ErrorCode::unscorable: return 1;
    }
    return 1;
}

json RunManifest::to_json() const {
    auto digest = [](const fs::path& p) {
        return fs::is_regular_file(p) ? json(sha256_file(p)) : json(nullptr);
    };
    json doc{{"format", "ppol-manifest"}, {"version", 1}, {"command", command}, {"tool_version", kToolVersion}};
    doc["config"] = config.empty() ? json(nullptr) : json{{"path", config.string()}, {"sha256", digest(config)}};
    doc["inputs"] = json::array();
    for (const auto& p : inputs)
        doc["inputs"].push_back({{"path", p.string()}, {"sha256", digest(p)}});
    doc["seeds"] = seeds;
    doc["outputs"] = json::array();
    for (const auto& p : outputs)
        doc["outputs"].push_back({{"path", p.string()}, {"sha256", digest(p)}});
    doc["skipped"] = skipped;
    doc["warnings"] = warnings;
    return doc;
}

void RunManifest::write(const fs::path& path) const { write_file_atomic(path, to_json().dump(2) + "\n"); }

namespace {

void require_file(const fs::path& path, const std::string& what) {
    if (!fs::is_regular_file(path))
        fail(ErrorCode::io, what + " not found: " + path.string());
}

fs::path manifest_for(const fs::path& out) { return fs::path(out.string() + ".manifest.json"); }

void check_keys(const json& section, const std::set<std::string>& known, const std::string& where) {
    if (!section.is_object())
        fail(ErrorCode::config, where + " must be an object");
    for (const auto& [key, value] : section.items())
        if (!known.count(key))
            fail(ErrorCode::config, "unknown config key '" + where + "." + key + "'");
}

// --- config file ---------------------------------------------------------

struct AppConfig {
    fs::path path;
    json doc = json::object();

    bool has(const std::string& section) const { return doc.contains(section); }
    const json& section(const std::string& name) const {
        static const json empty = json::object();
        return doc.contains(name) ? doc.at(name) : empty;
    }
    /// Data paths resolve against the config file's directory.
    std::optional<fs::path> data_path(const std::string& key) const {
        const auto& data = section("data");
        if (!data.contains(key))
            return std::nullopt;
        fs::path p = data.at(key).get<std::string>();
        return p.is_absolute() ? p : path.parent_path() / p;
    }
    fs::path need_data(const std::string& key) const {
        auto p = data_path(key);
        if (!p)
            fail(ErrorCode::config, "config is missing data." + key);
        return *p;
    }
};

AppConfig load_app_config(const fs::path& path) {
    AppConfig cfg;
    if (path.empty())
        return cfg;
    require_file(path, "config file");
    cfg.path = path;
    try {
        cfg.doc = json::parse(read_file(path));
    } catch (const json::exception& e) {
        fail(ErrorCode::config, path.string() + ": " + e.what());
    }
    check_keys(cfg.doc,
               {"format", "version", "data", "features", "forest", "metrics", "gateway", "rollout", "generation",
                "evolve", "mock", "output"},
               "config");
    if (cfg.doc.value("format", "") != "ppol-config" || cfg.doc.value("version", 0) != 1)
        fail(ErrorCode::config, path.string() + ": expected format ppol-config version 1");
    if (cfg.has("data"))
        check_keys(cfg.doc["data"],
                   {"tasks", "human_train", "human_calibration", "lexicon", "discriminator", "env_dir"}, "data");
    return cfg;
}

FeatureConfig features_from(const AppConfig& app) {
    FeatureConfig cfg;
    const auto& s = app.section("features");
    check_keys(s, {"short_utterance_threshold", "repetition_overlap_threshold", "front_load_turns"}, "features");
    try {
        cfg.short_utterance_threshold = s.value("short_utterance_threshold", cfg.short_utterance_threshold);
        cfg.repetition_overlap_threshold = s.value("repetition_overlap_threshold", cfg.repetition_overlap_threshold);
        cfg.front_load_turns = s.value("front_load_turns", cfg.front_load_turns);
        cfg.validate();
    } catch (const json::exception& e) {
        fail(ErrorCode::config, std::string("features: ") + e.what());
    } catch (const Error& e) {
        fail(ErrorCode::config, e.what());
    }
    return cfg;
}

ForestConfig forest_from(const AppConfig& app) {
    ForestConfig cfg;
    const auto& s = app.section("forest");
    check_keys(s,
               {"n_estimators", "max_depth", "class_weight", "max_features", "bootstrap", "seed", "min_samples_split",
                "threads"},
               "forest");
    try {
        cfg.n_estimators = s.value("n_estimators", cfg.n_estimators);
        cfg.max_depth = s.value("max_depth", cfg.max_depth);
        if (s.contains("class_weight")) {
            const auto w = s["class_weight"].get<std::string>();
            if (w != "balanced" && w != "uniform")
                fail(ErrorCode::config, "forest.class_weight must be balanced or uniform");
            cfg.class_weight = w == "balanced" ? ClassWeighting::balanced : ClassWeighting::uniform;
        }
        cfg.max_features = s.value("max_features", cfg.max_features);
        cfg.bootstrap = s.value("bootstrap", cfg.bootstrap);
        cfg.seed = s.value("seed", cfg.seed);
        cfg.min_samples_split = s.value("min_samples_split", cfg.min_samples_split);
        cfg.threads = s.value("threads", cfg.threads);
    } catch (const json::exception& e) {
        fail(ErrorCode::config, std::string("forest: ") + e.what());
    }
    return cfg;
}

CoverageSpace coverage_space_from(const AppConfig& app, const std::string& flag) {
    const auto& s = app.section("metrics");
    check_keys(s, {"coverage_space"}, "metrics");
    const std::string value = !flag.empty() ? flag : s.value("coverage_space", std::string("raw"));
    if (value == "raw")
        return CoverageSpace::raw;
    if (value == "standardized")
        return CoverageSpace::standardized;
    fail(ErrorCode::config, "coverage space must be raw or standardized, got '" + value + "'");
}

RolloutConfig rollout_from(const AppConfig& app) {
    RolloutConfig cfg;
    const auto& s = app.section("rollout");
    check_keys(s, {"max_turns", "stop_marker", "user_first", "max_tool_calls", "tool_prefix"}, "rollout");
    try {
        cfg.max_turns = s.value("max_turns", cfg.max_turns);
        cfg.stop_marker = s.value("stop_marker", cfg.stop_marker);
        cfg.user_first = s.value("user_first", cfg.user_first);
        cfg.max_tool_calls = s.value("max_tool_calls", cfg.max_tool_calls);
        cfg.tool_prefix = s.value("tool_prefix", cfg.tool_prefix);
    } catch (const json::exception& e) {
        fail(ErrorCode::config, std::string("rollout: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

GenerationOptions generation_from(const AppConfig& app, const GatewayConfig& gateway) {
    GenerationOptions opts;
    const auto& s = app.section("generation");
    check_keys(s, {"max_attempts"}, "generation");
    opts.max_attempts = s.value("max_attempts", opts.max_attempts);
    opts.max_workers = gateway.max_workers;
    if (opts.max_attempts < 1)
        fail(ErrorCode::config, "generation.max_attempts must be >= 1");
    return opts;
}

MockOptions mock_from(const AppConfig& app, const RolloutConfig& rollout) {
    MockOptions opts;
    const auto& s = app.section("mock");
    check_keys(s, {"seed"}, "mock");
    opts.seed = s.value("seed", opts.seed);
    opts.stop_marker = rollout.stop_marker;
    return opts;
}

// --- shared helpers ------------------------------------------------------

std::set<std::string> metadata_values(const Corpus& corpus, const std::string& key) {
    std::set<std::string> values;
    for (const auto& e : corpus.episodes)
        if (auto it = e.metadata.find(key); it != e.metadata.end())
            values.insert(it->second);
    return values;
}

std::string single_value(const std::set<std::string>& values) { return values.size() == 1 ? *values.begin() : ""; }

std::string tsv_header(const std::string& format, const std::vector<std::string>& columns) {
    std::string out = "# " + format + " v1\n";
    for (std::size_t i = 0; i < columns.size(); ++i)
        out += (i ? "\t" : "") + columns[i];
    return out + "\n";
}

std::vector<std::string> feature_columns() { return {kFeatureNames.begin(), kFeatureNames.end()}; }

FingerprintMatrix fingerprint_corpus(const fs::path& path, const LexiconSet& lexicons, const FeatureConfig& features,
                                     RunManifest& manifest, Corpus* keep = nullptr) {
    require_file(path, "transcript file");
    std::vector<MalformedLine> malformed;
    Corpus corpus = load_corpus(path, Split::train, &malformed);
    for (const auto& m : malformed)
        manifest.skipped.push_back(path.string() + ":" + std::to_string(m.line) + ": " + m.message);
    auto matrix = fingerprint_matrix(corpus, lexicons, features);
    for (const auto& id : matrix.skipped)
        manifest.skipped.push_back(path.string() + ": episode " + id + " is not scorable");
    if (keep)
        *keep = std::move(corpus);
    return matrix;
}

LexiconSet lexicons_at(const fs::path& path) {
    require_file(path, "lexicon file");
    return load_lexicons(path);
}

HumanReference reference_from(const fs::path& train, const fs::path& calibration, const LexiconSet& lexicons,
                              const FeatureConfig& features, CoverageSpace space, RunManifest& manifest) {
    const auto train_rows = fingerprint_corpus(train, lexicons, features, manifest).rows;
    const auto cal_rows =
        calibration == train ? train_rows : fingerprint_corpus(calibration, lexicons, features, manifest).rows;
    return build_reference(train_rows, cal_rows, space);
}

// --- fingerprint ---------------------------------------------------------

struct FingerprintArgs {
    std::string transcripts, lexicon, out, config;
};

int cmd_fingerprint(const FingerprintArgs& a, std::ostream& out) {
    const AppConfig app = load_app_config(a.config);
    RunManifest manifest;
    manifest.command = "fingerprint";
    manifest.config = a.config;
    const fs::path lexicon_path = !a.lexicon.empty() ? fs::path(a.lexicon) : app.need_data("lexicon");
    const auto lexicons = lexicons_at(lexicon_path);
    const auto features = features_from(app);
    Corpus corpus;
    const auto matrix = fingerprint_corpus(a.transcripts, lexicons, features, manifest, &corpus);

    std::map<std::string, const Episode*> by_id;
    for (const auto& e : corpus.episodes)
        by_id[e.episode_id] = &e;
    std::vector<std::string> cols{"episode_id", "task_id", "source"};
    for (const auto& f : feature_columns())
        cols.push_back(f);
    std::string table = tsv_header("ppol-fingerprints", cols);
    for (std::size_t r = 0; r < matrix.rows.size(); ++r) {
        const Episode& e = *by_id.at(matrix.episode_ids[r]);
        table += e.episode_id + "\t" + e.task_id + "\t" + to_string(e.source);
        for (double v : matrix.rows[r])
            table += "\t" + format_double(v);
        table += "\n";
    }
    write_file_atomic(a.out, table);
    manifest.inputs = {a.transcripts, lexicon_path};
    manifest.outputs = {a.out};
    manifest.write(manifest_for(a.out));
    out << "wrote " << matrix.rows.size() << " fingerprints to " << a.out;
    if (!matrix.skipped.empty())
        out << " (" << matrix.skipped.size() << " episodes skipped)";
    out << "\n";
    return 0;
}

// --- train-disc ----------------------------------------------------------

struct TrainArgs {
    std::string human, sim, test_human, test_sim, lexicon, out, config, domain, sim_model;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> trees;
};

int cmd_train_disc(const TrainArgs& a, std::ostream& out) {
    const AppConfig app = load_app_config(a.config);
    RunManifest manifest;
    manifest.command = "train-disc";
    manifest.config = a.config;
    const fs::path lexicon_path = !a.lexicon.empty() ? fs::path(a.lexicon) : app.need_data("lexicon");
    const auto lexicons = lexicons_at(lexicon_path);
    const auto features = features_from(app);
    ForestConfig forest = forest_from(app);
    if (a.seed)
        forest.seed = *a.seed;
    if (a.trees)
        forest.n_estimators = *a.trees;
    forest.validate();

    Corpus human_corpus, sim_corpus;
    const auto human = fingerprint_corpus(a.human, lexicons, features, manifest, &human_corpus);
    const auto sim = fingerprint_corpus(a.sim, lexicons, features, manifest, &sim_corpus);
    if (human.rows.empty() || sim.rows.empty())
        fail(ErrorCode::invalid_input, std::string("training needs scorable episodes in both corpora (") +
                                           (human.rows.empty() ? a.human : a.sim) + " has none)");

    const auto human_domains = metadata_values(human_corpus, "domain");
    const auto sim_domains = metadata_values(sim_corpus, "domain");
    if (human_domains != sim_domains) {
        std::string h, s;
        for (const auto& d : human_domains)
            h += (h.empty() ? "" : ",") + d;
        for (const auto& d : sim_domains)
            s += (s.empty() ? "" : ",") + d;
        manifest.warnings.push_back("domain mismatch: human corpus {" + h + "} vs simulator corpus {" + s + "}");
    }
    DiscriminatorTags tags;
    tags.domain = !a.domain.empty() ? a.domain : single_value(human_domains);
    tags.simulator_model = !a.sim_model.empty() ? a.sim_model : single_value(metadata_values(sim_corpus, "model"));

    const auto disc = train_discriminator(human.rows, sim.rows, forest, tags);
    save_discriminator(disc, a.out);
    manifest.inputs = {a.human, a.sim, lexicon_path};
    manifest.outputs = {a.out};
    manifest.seeds["forest"] = forest.seed;

    out << "trained " << forest.n_estimators << " trees on " << human.rows.size() << " human and "
        << sim.rows.size() << " simulator fingerprints\n";
    if (!a.test_human.empty() || !a.test_sim.empty()) {
        if (a.test_human.empty() || a.test_sim.empty())
            fail(ErrorCode::config, "held-out evaluation needs both --test-human and --test-sim");
        const auto th = fingerprint_corpus(a.test_human, lexicons, features, manifest);
        const auto ts = fingerprint_corpus(a.test_sim, lexicons, features, manifest);
        std::vector<FeatureVector> rows = th.rows;
        rows.insert(rows.end(), ts.rows.begin(), ts.rows.end());
        std::vector<int> labels(th.rows.size(), 1);
        labels.resize(rows.size(), 0);
        const auto metrics = evaluate_discriminator(disc, rows, labels);
        const fs::path metrics_path = a.out + ".metrics.json";
        write_file_atomic(metrics_path, json{{"format", "ppol-disc-metrics"},
                                             {"version", 1},
                                             {"roc_auc", metrics.roc_auc},
                                             {"accuracy", metrics.accuracy},
                                             {"f1", metrics.f1},
                                             {"n_human", th.rows.size()},
                                             {"n_simulator", ts.rows.size()}}
                                                .dump(2) +
                                            "\n");
        manifest.inputs.push_back(a.test_human);
        manifest.inputs.push_back(a.test_sim);
        manifest.outputs.push_back(metrics_path);
        char line[160];
        std::snprintf(line, sizeof line, "held-out AUC %.4f  accuracy %.4f  F1 %.4f\n", metrics.roc_auc,
                      metrics.accuracy, metrics.f1);
        out << line;
    }
    for (const auto& w : manifest.warnings)
        out << "warning: " << w << "\n";
    manifest.write(manifest_for(a.out));
    return 0;
}

// --- score ---------------------------------------------------------------

struct ScoreArgs {
    std::vector<std::string> transcripts;
    std::string model, reference, calibration, lexicon, out, config, group_by = "source", domain, space;
    bool allow_mismatch = false;
};

std::string group_key(const Episode& e, const std::string& group_by) {
    if (group_by == "source")
        return to_string(e.source);
    if (group_by == "task")
        return e.task_id;
    if (group_by == "persona")
        return e.persona_id.value_or("(none)");
    if (group_by == "all")
        return "all";
    const std::string prefix = "metadata:";
    if (group_by.rfind(prefix, 0) == 0) {
        auto it = e.metadata.find(group_by.substr(prefix.size()));
        return it == e.metadata.end() ? "(none)" : it->second;
    }
    fail(ErrorCode::config, "unknown --group-by '" + group_by + "' (source, task, persona, all, metadata:KEY)");
}

int cmd_score(const ScoreArgs& a, std::ostream& out) {
    const AppConfig app = load_app_config(a.config);
    RunManifest manifest;
    manifest.command = "score";
    manifest.config = a.config;
    const fs::path lexicon_path = !a.lexicon.empty() ? fs::path(a.lexicon) : app.need_data("lexicon");
    const fs::path model_path = !a.model.empty() ? fs::path(a.model) : app.need_data("discriminator");
    const fs::path reference_path = !a.reference.empty() ? fs::path(a.reference) : app.need_data("human_train");
    const fs::path calibration_path = !a.calibration.empty()                     ? fs::path(a.calibration)
                                      : app.data_path("human_calibration") && a.reference.empty()
                                          ? *app.data_path("human_calibration")
                                          : reference_path;
    const auto lexicons = lexicons_at(lexicon_path);
    const auto features = features_from(app);
    require_file(model_path, "discriminator model");
    const auto disc = load_discriminator(model_path);
    const auto reference =
        reference_from(reference_path, calibration_path, lexicons, features, coverage_space_from(app, a.space),
                       manifest);

    struct Group {
        std::vector<double> probabilities;
        std::vector<FeatureVector> rows;
        std::map<std::string, std::vector<FeatureVector>> by_task;
    };
    std::map<std::string, Group> groups;
    std::set<std::string> domains;
    for (const auto& path : a.transcripts) {
        Corpus corpus;
        const auto matrix = fingerprint_corpus(path, lexicons, features, manifest, &corpus);
        for (const auto& d : metadata_values(corpus, "domain"))
            domains.insert(d);
        std::map<std::string, const Episode*> by_id;
        for (const auto& e : corpus.episodes)
            by_id[e.episode_id] = &e;
        for (std::size_t r = 0; r < matrix.rows.size(); ++r) {
            const Episode& e = *by_id.at(matrix.episode_ids[r]);
            auto& g = groups[group_key(e, a.group_by)];
            g.probabilities.push_back(disc.predict_human_prob(matrix.rows[r]));
            g.rows.push_back(matrix.rows[r]);
            g.by_task[e.task_id].push_back(matrix.rows[r]);
        }
        manifest.inputs.push_back(path);
    }
    DiscriminatorTags expected;
    expected.domain = !a.domain.empty() ? a.domain : single_value(domains);
    check_tags(disc, expected, a.allow_mismatch);
    if (a.allow_mismatch && !expected.domain.empty() && !disc.tags.domain.empty() &&
        expected.domain != disc.tags.domain)
        manifest.warnings.push_back("scored '" + expected.domain + "' episodes with a discriminator trained for '" +
                                    disc.tags.domain + "'");
    if (groups.empty())
        fail(ErrorCode::invalid_input, "no scorable episodes in " + std::to_string(a.transcripts.size()) + " file(s)");

    const LambdaWeights weights = lambda_schedule(1, 1);
    std::string table = tsv_header("ppol-score", {"group", "episodes", "hl", "coverage", "score", "d1", "d2", "d3",
                                                  "d4", "usi"});
    for (const auto& [name, g] : groups) {
        std::vector<std::string> task_ids;
        std::vector<double> coverage;
        for (const auto& [task, rows] : g.by_task) {
            task_ids.push_back(task);
            coverage.push_back(coverage_score(rows, reference));
        }
        const auto report =
            assemble_report(g.probabilities, task_ids, coverage, weights, mean_vector(g.rows), reference);
        table += name + "\t" + std::to_string(g.rows.size()) + "\t" + format_double(report.hl_mean) + "\t" +
                 format_double(report.cov_mean) + "\t" + format_double(report.score);
        for (double d : report.dice.dims)
            table += "\t" + format_double(d);
        table += "\t" + format_double(report.dice.usi) + "\n";
        char line[200];
        std::snprintf(line, sizeof line, "%-16s n=%-5zu HL %6.2f%%  Coverage %6.2f%%  Score %6.2f%%  USI %6.2f%%\n",
                      name.c_str(), g.rows.size(), 100 * report.hl_mean, 100 * report.cov_mean, 100 * report.score,
                      100 * report.dice.usi);
        out << line;
    }
    write_file_atomic(a.out, table);
    manifest.inputs.insert(manifest.inputs.end(), {model_path, reference_path, lexicon_path});
    if (calibration_path != reference_path)
        manifest.inputs.push_back(calibration_path);
    manifest.outputs = {a.out};
    manifest.write(manifest_for(a.out));
    for (const auto& w : manifest.warnings)
        out << "warning: " << w << "\n";
    return 0;
}

// --- evolve / select -----------------------------------------------------

struct Pipeline {
    AppConfig app;
    std::vector<TaskSpec> tasks;
    std::optional<LexiconSet> lexicons;
    FeatureConfig features;
    std::shared_ptr<Discriminator> disc;
    std::shared_ptr<HumanReference> reference;
    GatewayConfig gateway_config;
    std::unique_ptr<Gateway> gateway;
    EvaluationContext context;
    std::vector<fs::path> inputs;
};

std::unique_ptr<Pipeline> build_pipeline(const std::string& config_path, bool mock, RunManifest& manifest) {
    if (config_path.empty())
        fail(ErrorCode::config, "--config is required");
    auto p = std::unique_ptr<Pipeline>(new Pipeline{load_app_config(config_path), {}, {}, {}, {}, {}, {}, {}, {}, {}});
    const AppConfig& app = p->app;
    const auto tasks_path = app.need_data("tasks");
    const auto lexicon_path = app.need_data("lexicon");
    const auto disc_path = app.need_data("discriminator");
    const auto train_path = app.need_data("human_train");
    const auto cal_path = app.data_path("human_calibration").value_or(train_path);
    const auto env_dir = app.need_data("env_dir");
    require_file(tasks_path, "task file");
    require_file(disc_path, "discriminator model");
    p->tasks = load_tasks(tasks_path);
    p->lexicons.emplace(lexicons_at(lexicon_path));
    p->features = features_from(app);
    p->disc = std::make_shared<Discriminator>(load_discriminator(disc_path));
    std::string domain;
    for (const auto& t : p->tasks)
        if (!t.domain.empty())
            domain = t.domain;
    check_tags(*p->disc, DiscriminatorTags{domain, ""}, false);
    p->reference = std::make_shared<HumanReference>(reference_from(
        train_path, cal_path, *p->lexicons, p->features, coverage_space_from(app, ""), manifest));

    p->gateway_config = app.has("gateway") ? gateway_config_from_json(app.section("gateway")) : GatewayConfig{};
    const auto rollout = rollout_from(app);
    std::shared_ptr<LlmClient> client;
    if (mock) {
        const auto opts = mock_from(app, rollout);
        client = make_mock_client(opts);
        manifest.seeds["mock"] = opts.seed;
    } else {
        client = std::make_shared<HttpClient>(p->gateway_config);
    }
    p->gateway = std::make_unique<Gateway>(client, p->gateway_config);

    p->context.gateway = p->gateway.get();
    p->context.lexicons = &*p->lexicons;
    p->context.features = p->features;
    auto disc = p->disc;
    p->context.human_prob = [disc](const FeatureVector& f) { return disc->predict_human_prob(f); };
    p->context.reference = p->reference.get();
    p->context.environments = mock_environment_factory(env_dir);
    p->context.rollout = rollout;
    p->context.generation = generation_from(app, p->gateway_config);
    p->inputs = {tasks_path, lexicon_path, disc_path, train_path};
    if (cal_path != train_path)
        p->inputs.push_back(cal_path);
    return p;
}

std::pair<std::vector<TaskSpec>, std::vector<TaskSpec>> split_pool(const std::vector<TaskSpec>& tasks,
                                                                   const std::vector<std::string>& validation_ids) {
    std::set<std::string> ids(validation_ids.begin(), validation_ids.end());
    std::vector<TaskSpec> train, validation;
    std::set<std::string> found;
    for (const auto& t : tasks) {
        if (ids.count(t.task_id)) {
            validation.push_back(t);
            found.insert(t.task_id);
        } else {
            train.push_back(t);
        }
    }
    for (const auto& id : ids)
        if (!found.count(id))
            fail(ErrorCode::config, "validation task '" + id + "' is not in the task file");
    return {train, validation};
}

struct EvolveArgs {
    std::string config, resume, output;
    bool mock = false;
    std::optional<std::size_t> iterations;
};

int cmd_evolve(const EvolveArgs& a, std::ostream& out) {
    RunManifest manifest;
    manifest.command = "evolve";
    manifest.config = a.config;
    auto p = build_pipeline(a.config, a.mock, manifest);
    EvolutionConfig evo = evolution_config_from_json(p->app.section("evolve"));
    if (a.iterations) {
        evo.iterations = *a.iterations;
        evo.validate();
    }
    fs::path output = a.output;
    if (output.empty()) {
        if (!p->app.doc.contains("output"))
            fail(ErrorCode::config, "no output directory (config 'output' or --output)");
        output = p->app.path.parent_path() / p->app.doc["output"].get<std::string>();
    }
    const auto [train, validation] = split_pool(p->tasks, evo.validation_task_ids);

    std::optional<EvolutionState> resume;
    if (!a.resume.empty()) {
        if (!fs::is_directory(a.resume))
            fail(ErrorCode::io, "checkpoint directory not found: " + a.resume);
        resume = load_checkpoint(a.resume);
        manifest.inputs.push_back(fs::path(a.resume) / "state.json");
        out << "resuming after iteration " << resume->iteration << "\n";
    }
    fs::create_directories(output);
    const auto result = run_evolution(evo, train, validation, initial_genome(), p->context, EvolutionPaths{output},
                                      std::move(resume));

    for (const auto& row : result.state.history) {
        if (row.failed) {
            out << "iter " << row.iteration << " island " << row.island << " failed: " << row.error << "\n";
            continue;
        }
        char line[200];
        std::snprintf(line, sizeof line, "iter %3zu island %zu N=%-2zu score %.4f hl %.4f cov %.4f%s\n",
                      row.iteration, row.island, row.n_personas, row.score, row.hl_mean, row.cov_mean,
                      row.inserted ? " *" : "");
        out << line;
    }
    write_file_atomic(output / "best.genome", serialize_genome(result.best));
    p->gateway->log().write_jsonl(output / "calls.jsonl");
    manifest.inputs.insert(manifest.inputs.end(), p->inputs.begin(), p->inputs.end());
    manifest.seeds["evolve"] = evo.seed;
    manifest.outputs = {output / "history.jsonl", output / "best.genome",
                        checkpoint_dir(output, result.state.iteration) / "state.json"};
    manifest.write(output / "manifest.json");
    out << "best score " << format_double(result.best_score) << "; genome written to "
        << (output / "best.genome").string() << "\n";
    return 0;
}

struct SelectArgs {
    std::string config, checkpoints, out;
    std::vector<std::size_t> counts{5, 8, 10};
    bool mock = false;
};

int cmd_select(const SelectArgs& a, std::ostream& out) {
    RunManifest manifest;
    manifest.command = "select";
    manifest.config = a.config;
    auto p = build_pipeline(a.config, a.mock, manifest);
    const EvolutionConfig evo = evolution_config_from_json(p->app.section("evolve"));
    const auto validation = split_pool(p->tasks, evo.validation_task_ids).second;
    if (validation.empty())
        fail(ErrorCode::config, "select needs evolve.validation_task_ids");

    fs::path root = a.checkpoints;
    auto dirs = list_checkpoints(root);
    if (dirs.empty() && fs::is_regular_file(root / "state.json"))
        dirs = {root};
    if (dirs.empty())
        fail(ErrorCode::io, "no checkpoints under " + root.string());
    std::vector<GeneratorGenome> genomes;
    for (const auto& d : dirs) {
        genomes.push_back(checkpoint_best(load_checkpoint(d)));
        manifest.inputs.push_back(d / "state.json");
    }
    EvaluationContext context = p->context;
    context.terminal_personas = *std::max_element(a.counts.begin(), a.counts.end());
    const auto selection = select_checkpoint(genomes.size(), a.counts, [&](std::size_t c, std::size_t n) {
        const auto eval = evaluate_candidate(genomes[c], validation, n, context);
        return eval.ok ? std::optional<double>(eval.report.score) : std::nullopt;
    });
    json scores = json::array();
    for (std::size_t c = 0; c < dirs.size(); ++c) {
        const double m = selection.mean_scores[c];
        scores.push_back({{"checkpoint", dirs[c].filename().string()},
                          {"mean_validation_score", std::isnan(m) ? json(nullptr) : json(m)}});
    }
    const std::string chosen = dirs[selection.index].filename().string();
    const fs::path out_path = !a.out.empty() ? fs::path(a.out) : root / "selection.json";
    write_file_atomic(out_path, json{{"format", "ppol-selection"},
                                     {"version", 1},
                                     {"selected", chosen},
                                     {"persona_counts", a.counts},
                                     {"candidates", scores},
                                     {"genome", serialize_genome(genomes[selection.index])}}
                                        .dump(2) +
                                    "\n");
    manifest.inputs.insert(manifest.inputs.end(), p->inputs.begin(), p->inputs.end());
    manifest.outputs = {out_path};
    manifest.write(manifest_for(out_path));
    out << chosen << "\n";
    return 0;
}

// --- plot ----------------------------------------------------------------

struct PlotArgs {
    std::string history, lexicon, out, config;
    std::vector<std::string> transcripts;
    bool pca = false;
};

int cmd_plot(const PlotArgs& a, std::ostream& out) {
    RunManifest manifest;
    manifest.command = "plot";
    manifest.config = a.config;
    std::string table;
    if (a.pca) {
        if (a.transcripts.empty())
            fail(ErrorCode::config, "plot --pca needs at least one --transcripts file");
        const AppConfig app = load_app_config(a.config);
        const fs::path lexicon_path = !a.lexicon.empty() ? fs::path(a.lexicon) : app.need_data("lexicon");
        const auto lexicons = lexicons_at(lexicon_path);
        const auto features = features_from(app);
        std::vector<FeatureVector> rows;
        std::vector<std::pair<std::string, std::string>> labels;
        for (const auto& path : a.transcripts) {
            Corpus corpus;
            const auto m = fingerprint_corpus(path, lexicons, features, manifest, &corpus);
            std::map<std::string, const Episode*> by_id;
            for (const auto& e : corpus.episodes)
                by_id[e.episode_id] = &e;
            for (std::size_t r = 0; r < m.rows.size(); ++r) {
                rows.push_back(m.rows[r]);
                labels.emplace_back(m.episode_ids[r], to_string(by_id.at(m.episode_ids[r])->source));
            }
            manifest.inputs.push_back(path);
        }
        manifest.inputs.push_back(lexicon_path);
        const auto pca = pca_project(rows, 2);
        table = tsv_header("ppol-pca", {"episode_id", "source", "pc1", "pc2"});
        for (std::size_t r = 0; r < rows.size(); ++r)
            table += labels[r].first + "\t" + labels[r].second + "\t" + format_double(pca.coords(r, 0)) + "\t" +
                     format_double(pca.coords(r, 1)) + "\n";
        char line[120];
        std::snprintf(line, sizeof line, "explained variance: pc1 %.4f  pc2 %.4f\n", pca.explained_variance[0],
                      pca.explained_variance[1]);
        out << line;
    } else {
        if (a.history.empty())
            fail(ErrorCode::config, "plot needs --history or --pca");
        require_file(a.history, "history file");
        std::istringstream lines(read_file(a.history));
        table = tsv_header("ppol-curves", {"iter", "score", "hl", "coverage"});
        std::size_t rows = 0;
        for (std::string line; std::getline(lines, line);) {
            if (trim(line).empty())
                continue;
            json doc;
            try {
                doc = json::parse(line);
            } catch (const json::exception& e) {
                fail(ErrorCode::format, a.history + ": " + e.what());
            }
            if (doc.contains("format"))
                continue;
            const auto row = history_row_from_json(doc);
            auto cell = [&](double v) { return row.failed ? std::string("NA") : format_double(v); };
            table += std::to_string(row.iteration) + "\t" + cell(row.score) + "\t" + cell(row.hl_mean) + "\t" +
                     cell(row.cov_mean) + "\n";
            ++rows;
        }
        manifest.inputs.push_back(a.history);
        out << "wrote " << rows << " curve rows\n";
    }
    write_file_atomic(a.out, table);
    manifest.outputs = {a.out};
    manifest.write(manifest_for(a.out));
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Persona-policy evolution toolkit", "ppol"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    FingerprintArgs fp;
    auto* fp_cmd = app.add_subcommand("fingerprint", "Compute 19-feature fingerprints for a transcript file");
    fp_cmd->add_option("--transcripts", fp.transcripts, "Line-delimited transcript file")->required();
    fp_cmd->add_option("--lexicon", fp.lexicon, "Lexicon file (default: config data.lexicon)");
    fp_cmd->add_option("--out", fp.out, "Output table")->required();
    fp_cmd->add_option("--config", fp.config, "Config file");

    TrainArgs tr;
    auto* tr_cmd = app.add_subcommand("train-disc", "Train the human-vs-simulator discriminator");
    tr_cmd->add_option("--human", tr.human, "Human transcripts")->required();
    tr_cmd->add_option("--sim", tr.sim, "Simulator transcripts")->required();
    tr_cmd->add_option("--test-human", tr.test_human, "Held-out human transcripts");
    tr_cmd->add_option("--test-sim", tr.test_sim, "Held-out simulator transcripts");
    tr_cmd->add_option("--lexicon", tr.lexicon, "Lexicon file");
    tr_cmd->add_option("--out", tr.out, "Model file")->required();
    tr_cmd->add_option("--config", tr.config, "Config file");
    tr_cmd->add_option("--seed", tr.seed, "Forest seed");
    tr_cmd->add_option("--trees", tr.trees, "Number of trees");
    tr_cmd->add_option("--domain", tr.domain, "Domain tag");
    tr_cmd->add_option("--sim-model", tr.sim_model, "Simulator model tag");

    ScoreArgs sc;
    auto* sc_cmd = app.add_subcommand("score", "Report HL, coverage, score and Dice alignment per group");
    sc_cmd->add_option("--transcripts", sc.transcripts, "Transcript file(s) to score")->required();
    sc_cmd->add_option("--model", sc.model, "Discriminator model");
    sc_cmd->add_option("--reference", sc.reference, "Human reference transcripts (coverage cloud)");
    sc_cmd->add_option("--calibration", sc.calibration, "Human calibration transcripts (Dice mean and bounds)");
    sc_cmd->add_option("--lexicon", sc.lexicon, "Lexicon file");
    sc_cmd->add_option("--group-by", sc.group_by, "source | task | persona | all | metadata:KEY");
    sc_cmd->add_option("--domain", sc.domain, "Expected domain tag");
    sc_cmd->add_option("--space", sc.space, "Coverage space: raw | standardized");
    sc_cmd->add_flag("--allow-tag-mismatch", sc.allow_mismatch, "Score even if the model was trained elsewhere");
    sc_cmd->add_option("--out", sc.out, "Report table")->required();
    sc_cmd->add_option("--config", sc.config, "Config file");

    EvolveArgs ev;
    auto* ev_cmd = app.add_subcommand("evolve", "Run the evolutionary search");
    ev_cmd->add_option("--config", ev.config, "Config file")->required();
    ev_cmd->add_option("--resume", ev.resume, "Checkpoint directory to resume from");
    ev_cmd->add_option("--output", ev.output, "Output directory (default: config output)");
    ev_cmd->add_option("--iterations", ev.iterations, "Override evolve.iterations");
    ev_cmd->add_flag("--mock", ev.mock, "Use the offline mock model for every role");

    SelectArgs se;
    auto* se_cmd = app.add_subcommand("select", "Pick the checkpoint with the best mean validation score");
    se_cmd->add_option("--config", se.config, "Config file")->required();
    se_cmd->add_option("--checkpoints", se.checkpoints, "Evolution output or checkpoint directory")->required();
    se_cmd->add_option("--counts", se.counts, "Persona counts to average over")->delimiter(',');
    se_cmd->add_option("--out", se.out, "Selection file");
    se_cmd->add_flag("--mock", se.mock, "Use the offline mock model");

    PlotArgs pl;
    auto* pl_cmd = app.add_subcommand("plot", "Emit curve or PCA scatter data");
    pl_cmd->add_option("--history", pl.history, "history.jsonl from evolve");
    pl_cmd->add_flag("--pca", pl.pca, "PCA scatter of fingerprints instead of curves");
    pl_cmd->add_option("--transcripts", pl.transcripts, "Transcript file(s) for --pca");
    pl_cmd->add_option("--lexicon", pl.lexicon, "Lexicon file");
    pl_cmd->add_option("--out", pl.out, "Output table")->required();
    pl_cmd->add_option("--config", pl.config, "Config file");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    if (!reversed.empty())
        reversed.pop_back();  // program name
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::CallForVersion&) {
        out << kToolVersion << "\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (fp_cmd->parsed())
            return cmd_fingerprint(fp, out);
        if (tr_cmd->parsed())
            return cmd_train_disc(tr, out);
        if (sc_cmd->parsed())
            return cmd_score(sc, out);
        if (ev_cmd->parsed())
            return cmd_evolve(ev, out);
        if (se_cmd->parsed())
            return cmd_select(se, out);
        if (pl_cmd->parsed())
            return cmd_plot(pl, out);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e.code());
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    return run_cli(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace ppol
