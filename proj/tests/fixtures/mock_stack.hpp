#pragma once

// Fully offline evaluation stack over the demo data: deterministic mock model,
// scripted environments, a small forest and the human reference.

#include <filesystem>
#include <memory>
#include <vector>

#include "ppol/discriminator.hpp"
#include "ppol/evolve.hpp"
#include "ppol/fingerprint.hpp"
#include "ppol/metrics.hpp"
#include "ppol/mock_llm.hpp"
#include "ppol/rollout.hpp"
#include "ppol/transcript.hpp"

namespace fixtures {

struct MockStack {
    std::filesystem::path demo;
    ppol::LexiconSet lexicons;
    ppol::Discriminator disc;
    ppol::HumanReference reference;
    std::unique_ptr<ppol::Gateway> gateway;
    std::vector<ppol::TaskSpec> tasks;

    explicit MockStack(const std::filesystem::path& data_root, std::uint64_t mock_seed = 7)
        : demo(data_root / "demo"), lexicons(ppol::load_lexicons(data_root / "lexicons/default.json")) {
        const auto rows = [&](const char* name) {
            return ppol::fingerprint_matrix(ppol::load_corpus(demo / name, ppol::Split::train), lexicons).rows;
        };
        const auto human = rows("human_train.jsonl");
        const auto sim = rows("base_sim.jsonl");
        ppol::ForestConfig fc;
        fc.n_estimators = 25;
        disc = ppol::train_discriminator(human, sim, fc, {"retail", "demo-sim"});
        reference = ppol::build_reference(human, rows("human_calibration.jsonl"));
        ppol::GatewayConfig gc;
        gc.max_workers = 4;
        gateway = std::make_unique<ppol::Gateway>(ppol::make_mock_client({mock_seed, "###STOP###"}), gc);
        tasks = ppol::load_tasks(demo / "tasks.json");
    }

    ppol::EvaluationContext context() {
        ppol::EvaluationContext ctx;
        ctx.gateway = gateway.get();
        ctx.lexicons = &lexicons;
        ctx.human_prob = [this](const ppol::FeatureVector& f) { return disc.predict_human_prob(f); };
        ctx.reference = &reference;
        ctx.environments = ppol::mock_environment_factory(demo / "envs");
        return ctx;
    }
};

}  // namespace fixtures
