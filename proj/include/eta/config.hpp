#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "eta/harness.hpp"
#include "eta/models.hpp"
#include "eta/scheduler.hpp"
#include "eta/world.hpp"

namespace eta::cli {

struct ScenarioSuiteConfig {
    std::vector<std::string> kinds = {"hard_brake", "lane_change", "red_light", "give_way", "merge"};
    int seeds_per_kind = 10;
    uint64_t seed_base = 0;
};

struct EvalSection {
    bool threaded = false;
    int parallelism = 1;
};

// Merged run configuration: every field has a documented default (the values
// below), unknown keys in the file or overrides are hard errors.
struct RunConfig {
    models::ModelConfig model;
    sched::CostModel costs;
    sched::PipelineConfig pipeline{100.0, 500.0, 0, 16};
    world::CameraModel camera;
    ScenarioSuiteConfig scenarios;
    EvalSection eval;
    // training defaults (overridable per command)
    int train_steps = 2000;
    int train_batch = 16;
    double train_lr = 3e-5;
    int train_restarts = 4;
    losses::LossWeights weights;

    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig from_file(const std::string& path);
    nlohmann::json to_json() const;
    uint64_t hash() const;

    // "section.key=value" override; value parsed as JSON when possible
    void apply_override(const std::string& spec);

    std::vector<world::Scenario> make_suite(uint64_t seed_offset = 0,
                                            const std::vector<std::string>& only_kinds = {}) const;
    harness::TrainConfig train_config() const;
    harness::EvalConfig eval_config() const;
};

}  // namespace eta::cli
