#include "eta/config.hpp"

#include <fstream>
#include <set>

namespace eta::cli {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& section, const std::set<std::string>& known) {
    if (!j.is_object()) throw ConfigError("config: section '" + section + "' must be an object");
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key)) {
            throw ConfigError("config: unknown key '" + section + (section.empty() ? "" : ".") + key + "'");
        }
    }
}

template <typename T>
void get_to(const json& j, const char* key, T& out) {
    if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
    RunConfig cfg;
    check_keys(j, "", {"model", "costs", "schedule", "camera", "scenarios", "eval", "train"});
    if (j.contains("model")) {
        const json& m = j.at("model");
        check_keys(m, "model",
                   {"dim", "heads", "large_depth", "mlp_ratio", "forecast_depth", "decoder_depth"});
        get_to(m, "dim", cfg.model.dim);
        get_to(m, "heads", cfg.model.heads);
        get_to(m, "large_depth", cfg.model.large_depth);
        get_to(m, "mlp_ratio", cfg.model.mlp_ratio);
        get_to(m, "forecast_depth", cfg.model.forecast_depth);
        get_to(m, "decoder_depth", cfg.model.decoder_depth);
        if (cfg.model.dim < 2 || cfg.model.dim % cfg.model.heads != 0) {
            throw ConfigError("config: model.dim must be positive and divisible by model.heads");
        }
    }
    if (j.contains("costs")) {
        const json& c = j.at("costs");
        check_keys(c, "costs", {"large_fixed", "large_marginal", "small", "forecast", "action"});
        get_to(c, "large_fixed", cfg.costs.large_fixed);
        get_to(c, "large_marginal", cfg.costs.large_marginal);
        get_to(c, "small", cfg.costs.small);
        get_to(c, "forecast", cfg.costs.forecast);
        get_to(c, "action", cfg.costs.action);
        if (cfg.costs.large_marginal < 0.0) throw ConfigError("config: costs.large_marginal must be >= 0");
    }
    if (j.contains("schedule")) {
        const json& s = j.at("schedule");
        check_keys(s, "schedule", {"tick_ms", "staleness_ms", "batch", "buffer_capacity"});
        get_to(s, "tick_ms", cfg.pipeline.tick_ms);
        get_to(s, "staleness_ms", cfg.pipeline.staleness_ms);
        get_to(s, "batch", cfg.pipeline.batch);
        get_to(s, "buffer_capacity", cfg.pipeline.buffer_capacity);
        cfg.pipeline.delta_ticks();  // validates Delta as a multiple of T
    }
    if (j.contains("camera")) {
        const json& c = j.at("camera");
        check_keys(c, "camera", {"h_cam", "f_u", "f_v", "c_u", "c_v", "x_min", "x_max"});
        get_to(c, "h_cam", cfg.camera.h_cam);
        get_to(c, "f_u", cfg.camera.f_u);
        get_to(c, "f_v", cfg.camera.f_v);
        get_to(c, "c_u", cfg.camera.c_u);
        get_to(c, "c_v", cfg.camera.c_v);
        get_to(c, "x_min", cfg.camera.x_min);
        get_to(c, "x_max", cfg.camera.x_max);
        if (cfg.camera.f_u <= 0.0 || cfg.camera.f_v <= 0.0 || cfg.camera.x_min <= 0.0) {
            throw ConfigError("config: camera focal scales and x_min must be positive");
        }
    }
    if (j.contains("scenarios")) {
        const json& s = j.at("scenarios");
        check_keys(s, "scenarios", {"kinds", "seeds_per_kind", "seed_base"});
        get_to(s, "kinds", cfg.scenarios.kinds);
        get_to(s, "seeds_per_kind", cfg.scenarios.seeds_per_kind);
        get_to(s, "seed_base", cfg.scenarios.seed_base);
        for (const std::string& k : cfg.scenarios.kinds) world::scenario_kind_from_string(k);
        if (cfg.scenarios.seeds_per_kind < 1) throw ConfigError("config: scenarios.seeds_per_kind must be >= 1");
    }
    if (j.contains("eval")) {
        const json& e = j.at("eval");
        check_keys(e, "eval", {"threaded", "parallelism"});
        get_to(e, "threaded", cfg.eval.threaded);
        get_to(e, "parallelism", cfg.eval.parallelism);
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        check_keys(t, "train", {"steps", "batch", "lr", "restarts", "lambda_mask", "lambda_forecast"});
        get_to(t, "steps", cfg.train_steps);
        get_to(t, "batch", cfg.train_batch);
        get_to(t, "lr", cfg.train_lr);
        get_to(t, "restarts", cfg.train_restarts);
        get_to(t, "lambda_mask", cfg.weights.lambda_mask);
        get_to(t, "lambda_forecast", cfg.weights.lambda_forecast);
        if (cfg.train_steps < 1 || cfg.train_lr <= 0.0) {
            throw ConfigError("config: train.steps must be >= 1 and train.lr positive");
        }
    }
    return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open '" + path + "'");
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config: parse error in '" + path + "': " + e.what());
    }
    return from_json(j);
}

json RunConfig::to_json() const {
    json j;
    j["model"] = {{"dim", model.dim},
                  {"heads", model.heads},
                  {"large_depth", model.large_depth},
                  {"mlp_ratio", model.mlp_ratio},
                  {"forecast_depth", model.forecast_depth},
                  {"decoder_depth", model.decoder_depth}};
    j["costs"] = {{"large_fixed", costs.large_fixed},
                  {"large_marginal", costs.large_marginal},
                  {"small", costs.small},
                  {"forecast", costs.forecast},
                  {"action", costs.action}};
    j["schedule"] = {{"tick_ms", pipeline.tick_ms},
                     {"staleness_ms", pipeline.staleness_ms},
                     {"batch", pipeline.batch},
                     {"buffer_capacity", pipeline.buffer_capacity}};
    j["camera"] = {{"h_cam", camera.h_cam}, {"f_u", camera.f_u}, {"f_v", camera.f_v},
                   {"c_u", camera.c_u},     {"c_v", camera.c_v}, {"x_min", camera.x_min},
                   {"x_max", camera.x_max}};
    j["scenarios"] = {{"kinds", scenarios.kinds},
                      {"seeds_per_kind", scenarios.seeds_per_kind},
                      {"seed_base", scenarios.seed_base}};
    j["eval"] = {{"threaded", eval.threaded}, {"parallelism", eval.parallelism}};
    j["train"] = {{"steps", train_steps},   {"batch", train_batch},
                  {"lr", train_lr},         {"restarts", train_restarts},
                  {"lambda_mask", weights.lambda_mask}, {"lambda_forecast", weights.lambda_forecast}};
    return j;
}

uint64_t RunConfig::hash() const { return fnv1a(to_json().dump()); }

void RunConfig::apply_override(const std::string& spec) {
    const size_t eq = spec.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + spec + "'");
    const std::string path = spec.substr(0, eq);
    const std::string value = spec.substr(eq + 1);
    const size_t dot = path.find('.');
    if (dot == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + spec + "'");
    json j = to_json();
    const std::string section = path.substr(0, dot);
    const std::string key = path.substr(dot + 1);
    if (!j.contains(section) || !j.at(section).contains(key)) {
        throw ConfigError("config: unknown key '" + path + "'");
    }
    json parsed;
    try {
        parsed = json::parse(value);
    } catch (const json::exception&) {
        parsed = value;  // plain string
    }
    j[section][key] = parsed;
    *this = from_json(j);
}

std::vector<world::Scenario> RunConfig::make_suite(uint64_t seed_offset,
                                                   const std::vector<std::string>& only_kinds) const {
    std::vector<std::string> kinds = only_kinds.empty() ? scenarios.kinds : only_kinds;
    std::vector<world::Scenario> suite;
    for (const std::string& kind : kinds) {
        for (int i = 0; i < scenarios.seeds_per_kind; ++i) {
            suite.push_back(world::make_scenario(kind, scenarios.seed_base + seed_offset +
                                                           static_cast<uint64_t>(i)));
        }
    }
    return suite;
}

harness::TrainConfig RunConfig::train_config() const {
    harness::TrainConfig cfg;
    cfg.steps = train_steps;
    cfg.batch = train_batch;
    cfg.lr = train_lr;
    cfg.restarts = train_restarts;
    cfg.weights = weights;
    cfg.model = model;
    return cfg;
}

harness::EvalConfig RunConfig::eval_config() const {
    harness::EvalConfig cfg;
    cfg.costs = costs;
    cfg.pipeline = pipeline;
    cfg.threaded = eval.threaded;
    cfg.parallelism = eval.parallelism;
    cfg.camera = camera;
    return cfg;
}

}  // namespace eta::cli
