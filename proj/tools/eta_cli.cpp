// eta: collect expert data, train base/async models, evaluate closed-loop,
// reproduce the ablation table, and inspect the async schedule.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "eta/config.hpp"
#include "eta/harness.hpp"
#include "eta/models.hpp"
#include "eta/scheduler.hpp"
#include "eta/world.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace eta;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    uint64_t seed = 0;
};

cli::RunConfig load_config(const CommonArgs& args) {
    cli::RunConfig cfg = args.config_path.empty() ? cli::RunConfig{} : cli::RunConfig::from_file(args.config_path);
    for (const std::string& o : args.overrides) cfg.apply_override(o);
    return cfg;
}

json artifact_header(const std::string& command, const cli::RunConfig& cfg, uint64_t seed) {
    char hash[32];
    std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(cfg.hash()));
    json h;
    h["header"] = {{"tool", "eta"}, {"command", command}, {"seed", seed},
                   {"config_hash", std::string(hash)}, {"config", cfg.to_json()}};
    return h;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw Error("cannot open '" + path + "' for writing");
    os << text;
}

std::string metrics_to_json(const harness::Metrics& m) {
    json j;
    j["success_rate"] = m.success_rate;
    j["collision_rate"] = m.collision_rate;
    j["completion_rate"] = m.completion_rate;
    j["mean_route_completion"] = m.mean_route_completion;
    j["reactive_ms"] = m.reactive_ms;
    j["episodes"] = m.episodes;
    j["per_kind_sr"] = m.per_kind_sr;
    return j.dump();
}

std::string checkpoint_path(const std::string& dir, sched::Mode mode, uint64_t seed) {
    return dir + "/mode_" + sched::to_string(mode) + "_s" + std::to_string(seed) + ".ckpt";
}

harness::TrainResult train_mode(const cli::RunConfig& cfg, const harness::Dataset& dataset,
                                sched::Mode mode, uint64_t seed) {
    harness::TrainConfig tc = cfg.train_config();
    tc.seed = seed;
    if (mode == sched::Mode::base) {
        tc.kind = harness::TrainKind::base;
        tc.mode = sched::Mode::full;
    } else {
        tc.kind = harness::TrainKind::async;
        tc.mode = mode;
    }
    return harness::train(dataset, tc);
}

// textual frame: strongest channel per pixel
std::string render_ascii(const world::FrameTensor& f) {
    std::string out;
    for (int v = 0; v < world::kFrameHeight; ++v) {
        for (int u = 0; u < world::kFrameWidth; ++u) {
            char c = ' ';
            if (f.at(world::kChDrivable, v, u) > 0.5) c = '.';
            if (f.at(world::kChRoute, v, u) > 0.5) c = '~';
            if (f.at(world::kChRedLight, v, u) > 0.5) c = 'R';
            if (f.at(world::kChVehicle, v, u) > 0.5) c = 'V';
            out += c;
        }
        out += '\n';
    }
    return out;
}

std::string render_mask_overlay(const ad::Tensor& logits, const world::PatchMask& gt) {
    std::string out = "mask (#: pred&gt, P: pred only, G: gt only)\n";
    for (int r = 0; r < world::kMaskRows; ++r) {
        for (int c = 0; c < world::kMaskCols; ++c) {
            const bool pred = logits.at(r, c) > 0.0;
            const bool g = gt.cells[static_cast<size_t>(r)][static_cast<size_t>(c)];
            out += pred && g ? '#' : (pred ? 'P' : (g ? 'G' : '.'));
        }
        out += '\n';
    }
    return out;
}

int cmd_collect(const CommonArgs& common, const std::string& out_path,
                const std::vector<std::string>& only_kinds, const std::string& log_dir) {
    cli::RunConfig cfg = load_config(common);
    std::vector<world::Scenario> suite = cfg.make_suite(common.seed, only_kinds);
    harness::Dataset dataset =
        harness::collect_dataset(suite, cfg.pipeline.delta_ticks(), cfg.pipeline.tick_ms / 1000.0,
                                 cfg.camera);
    dataset.save(out_path);
    if (!log_dir.empty()) {
        fs::create_directories(log_dir);
        for (const world::Scenario& sc : suite) {
            harness::EpisodeLog log = harness::run_expert_episode(sc, cfg.pipeline.tick_ms / 1000.0);
            write_text(log_dir + "/expert_" + world::to_string(sc.kind) + "_" +
                           std::to_string(sc.seed) + ".jsonl",
                       log.to_jsonl());
        }
    }
    json meta = artifact_header("collect", cfg, common.seed);
    meta["episodes"] = suite.size();
    meta["samples"] = dataset.samples.size();
    write_text(out_path + ".meta.json", meta.dump(2) + "\n");
    std::cout << "collected " << dataset.samples.size() << " samples from " << suite.size()
              << " episodes -> " << out_path << "\n";
    return 0;
}

int cmd_train(const CommonArgs& common, const std::string& data_path, const std::string& kind,
              const std::string& mode_name, const std::string& out_path, int steps_override,
              double lr_override, int batch_override) {
    cli::RunConfig cfg = load_config(common);
    if (steps_override > 0) cfg.train_steps = steps_override;
    if (lr_override > 0.0) cfg.train_lr = lr_override;
    if (batch_override > 0) cfg.train_batch = batch_override;
    harness::Dataset dataset = harness::Dataset::load(data_path);
    harness::TrainConfig tc = cfg.train_config();
    tc.seed = common.seed;
    tc.kind = kind == "base" ? harness::TrainKind::base : harness::TrainKind::async;
    tc.mode = kind == "base" ? sched::Mode::full : sched::mode_from_string(mode_name);
    harness::TrainResult result = harness::train(dataset, tc);
    result.params.save(out_path);

    std::ostringstream curve;
    json header = artifact_header("train", cfg, common.seed);
    header["kind"] = kind;
    header["mode"] = mode_name;
    curve << header.dump() << "\n";
    for (const harness::StepRecord& r : result.curve) {
        json j;
        j["step"] = r.step;
        j["lr"] = r.lr;
        j["action_l"] = r.action_l;
        j["mask_l"] = r.mask_l;
        j["forecast_l"] = r.forecast_l;
        j["total"] = r.total;
        curve << j.dump() << "\n";
    }
    write_text(out_path + ".curve.jsonl", curve.str());
    std::cout << "trained " << kind << "/" << mode_name << " for " << result.curve.size()
              << " steps; final loss " << result.curve.back().total << " -> " << out_path << "\n";
    return 0;
}

int cmd_eval(const CommonArgs& common, const std::string& ckpt_pattern, const std::string& mode_name,
             const std::vector<uint64_t>& seeds, const std::string& out_path,
             const std::string& log_dir) {
    cli::RunConfig cfg = load_config(common);
    const sched::Mode mode = sched::mode_from_string(mode_name);
    std::vector<world::Scenario> suite = cfg.make_suite();
    std::ostringstream out;
    json header = artifact_header("eval", cfg, common.seed);
    header["mode"] = mode_name;
    out << header.dump() << "\n";

    std::vector<double> srs;
    for (uint64_t seed : seeds) {
        std::string path = ckpt_pattern;
        const size_t pos = path.find("{seed}");
        if (pos != std::string::npos) path.replace(pos, 6, std::to_string(seed));
        ad::ParamStore params = ad::ParamStore::load(path);
        harness::Metrics m = harness::evaluate_closed_loop(params, cfg.model, mode, suite,
                                                           cfg.eval_config());
        if (!log_dir.empty()) {
            fs::create_directories(log_dir);
            sched::NetPipelineModel model(params, cfg.model);
            for (const world::Scenario& sc : suite) {
                sched::EpisodeResult res = sched::run_pipeline(sc, model, cfg.costs, cfg.pipeline,
                                                               mode, {.camera = cfg.camera});
                harness::EpisodeLog log = harness::log_from_result(
                    sc, res, cfg.pipeline.tick_ms / 1000.0, mode_name);
                write_text(log_dir + "/" + mode_name + "_s" + std::to_string(seed) + "_" +
                               world::to_string(sc.kind) + "_" + std::to_string(sc.seed) + ".jsonl",
                           log.to_jsonl());
            }
        }
        srs.push_back(m.success_rate);
        json j = json::parse(metrics_to_json(m));
        j["checkpoint_seed"] = seed;
        out << j.dump() << "\n";
        std::printf("seed %llu: SR %.1f%%  collisions %.1f%%  completion %.1f%%\n",
                    static_cast<unsigned long long>(seed), 100.0 * m.success_rate,
                    100.0 * m.collision_rate, 100.0 * m.completion_rate);
    }
    harness::SeedAggregate agg = harness::aggregate(srs);
    std::printf("SR over %zu seeds: %.2f%% +/- %.2f%%\n", srs.size(), 100.0 * agg.mean,
                100.0 * agg.stddev);
    json summary;
    summary["summary"] = {{"sr_mean", agg.mean}, {"sr_std", agg.stddev}, {"seeds", seeds}};
    out << summary.dump() << "\n";
    if (!out_path.empty()) write_text(out_path, out.str());
    return 0;
}

int cmd_ablate(const CommonArgs& common, const std::string& data_path, const std::string& ckpt_dir,
               const std::string& out_path) {
    cli::RunConfig cfg = load_config(common);
    harness::Dataset dataset = harness::Dataset::load(data_path);
    fs::create_directories(ckpt_dir);

    const std::vector<sched::Mode> trainable = {
        sched::Mode::base,      sched::Mode::full,        sched::Mode::no_forecast,
        sched::Mode::no_small,  sched::Mode::no_mask,     sched::Mode::small_only,
        sched::Mode::gt_forecast};
    std::map<sched::Mode, ad::ParamStore> ckpts;
    for (sched::Mode mode : trainable) {
        const std::string path = checkpoint_path(ckpt_dir, mode, common.seed);
        if (fs::exists(path)) {
            ckpts.emplace(mode, ad::ParamStore::load(path));
            continue;
        }
        std::cout << "training " << sched::to_string(mode) << "...\n" << std::flush;
        harness::TrainResult result = train_mode(cfg, dataset, mode, common.seed);
        result.params.save(path);
        ckpts.emplace(mode, std::move(result.params));
    }

    std::vector<world::Scenario> suite = cfg.make_suite();
    std::vector<harness::AblationRow> rows =
        harness::run_ablation_matrix(ckpts, cfg.model, suite, cfg.eval_config());
    const std::string table = harness::format_ablation_table(rows);
    std::cout << table;
    std::ostringstream out;
    out << artifact_header("ablate", cfg, common.seed).dump() << "\n";
    for (const harness::AblationRow& r : rows) {
        json j = json::parse(metrics_to_json(r.metrics));
        j["id"] = r.id;
        j["mode"] = sched::to_string(r.mode);
        j["latency_ms"] = r.latency_ms;
        out << j.dump() << "\n";
    }
    if (!out_path.empty()) {
        write_text(out_path, table);
        write_text(out_path + ".jsonl", out.str());
    }
    return 0;
}

std::string render_timeline(const sched::ScheduleTrace& trace, const sched::PipelineConfig& cfg,
                            double reactive_ms, int ticks_to_show) {
    const double ms_per_col = cfg.tick_ms / 10.0;
    const int cols = static_cast<int>(ticks_to_show * cfg.tick_ms / ms_per_col);
    std::string reactive(cols, ' ');
    std::string worker(cols, ' ');
    for (const sched::TraceEvent& e : trace.events) {
        if (e.kind == sched::TraceEvent::Kind::act_out && e.tick < ticks_to_show) {
            const int c0 = static_cast<int>((e.sim_ms - reactive_ms) / ms_per_col);
            const int c1 = static_cast<int>(e.sim_ms / ms_per_col);
            for (int c = std::max(0, c0); c < std::min(cols, c1); ++c) reactive[static_cast<size_t>(c)] = 'r';
        }
        if (e.kind == sched::TraceEvent::Kind::batch_start) {
            double end = e.sim_ms;
            for (const sched::TraceEvent& e2 : trace.events) {
                if (e2.kind == sched::TraceEvent::Kind::batch_end && e2.batch_id == e.batch_id) {
                    end = e2.sim_ms;
                    break;
                }
            }
            const int c0 = static_cast<int>(e.sim_ms / ms_per_col);
            const int c1 = static_cast<int>(end / ms_per_col);
            const char digit = static_cast<char>('0' + (e.batch_id % 10));
            for (int c = std::max(0, c0); c < std::min(cols, c1); ++c) worker[static_cast<size_t>(c)] = digit;
        }
    }
    std::ostringstream os;
    os << "timeline (first " << ticks_to_show << " ticks, one column = " << ms_per_col << " ms)\n";
    os << "reactive |" << reactive << "|\n";
    os << "worker   |" << worker << "|\n";
    return os.str();
}

int cmd_bench(const CommonArgs& common, const std::string& mode_name, int ticks, bool sweep,
              const std::string& trace_out) {
    cli::RunConfig cfg = load_config(common);
    const sched::Mode mode = sched::mode_from_string(mode_name);

    if (sweep) {
        std::cout << "feasibility frontier (B or '-' = infeasible)\n        Delta(ms):";
        std::vector<double> deltas;
        for (double d = 100.0; d <= 1000.0; d += 100.0) deltas.push_back(d);
        for (double d : deltas) std::printf(" %5.0f", d);
        std::printf("\n");
        for (double tick : {25.0, 50.0, 75.0, 100.0, 125.0}) {
            std::printf("T=%5.0f ms        ", tick);
            for (double d : deltas) {
                if (std::fmod(d, tick) > 1e-9) {
                    std::printf("     x");
                    continue;
                }
                sched::PipelineConfig pc{tick, d, 0, cfg.pipeline.buffer_capacity};
                sched::BatchPlan plan = sched::plan_schedule(cfg.costs, pc);
                if (plan.feasible) {
                    std::printf(" %5d", plan.batch);
                } else {
                    std::printf("     -");
                }
            }
            std::printf("\n");
        }
        return 0;
    }

    const double reactive = sched::reactive_cost_ms(mode, cfg.costs);
    std::printf("mode %s: reactive path %.0f ms, tick %.0f ms, Delta %.0f ms\n", mode_name.c_str(),
                reactive, cfg.pipeline.tick_ms, cfg.pipeline.staleness_ms);
    if (reactive > cfg.pipeline.tick_ms) {
        std::printf("infeasible: reactive path %.0f ms exceeds the tick %.0f ms; binding constraint: throughput\n",
                    reactive, cfg.pipeline.tick_ms);
    }
    if (sched::uses_large_worker(mode)) {
        sched::BatchPlan plan = sched::plan_schedule(cfg.costs, cfg.pipeline);
        std::cout << "plan: " << plan.describe() << "\n";
        for (const auto& c : plan.checks) {
            std::printf("  B=%d: cost %.0f ms, worst wait %.0f ms, throughput %s, staleness %s\n",
                        c.batch, c.cost_ms, c.worst_wait_ms, c.throughput_ok ? "ok" : "VIOLATED",
                        c.staleness_ok ? "ok" : "VIOLATED");
            if (c.batch >= std::max(4, plan.batch + 1)) break;
        }
        if (!plan.feasible) throw sched::InfeasibleError("bench: " + plan.describe());
    }

    sched::StubPipelineModel stub;
    sched::EpisodeResult res =
        sched::run_pipeline_synthetic(ticks, stub, cfg.costs, cfg.pipeline, mode);
    std::printf("%d ticks: %d deadline misses\n", res.ticks, res.deadline_misses);
    std::vector<double> hist = res.trace.staleness_histogram_ms();
    std::map<double, int> bins;
    for (double h : hist) bins[h]++;
    if (!bins.empty()) {
        std::cout << "staleness histogram:";
        for (const auto& [v, n] : bins) std::printf("  %.0fms x%d", v, n);
        std::cout << "\n";
    }
    double busy = 0.0, span = res.ticks * cfg.pipeline.tick_ms;
    std::map<int64_t, double> starts;
    for (const sched::TraceEvent& e : res.trace.events) {
        if (e.kind == sched::TraceEvent::Kind::batch_start) starts[e.batch_id] = e.sim_ms;
        if (e.kind == sched::TraceEvent::Kind::batch_end) busy += e.sim_ms - starts[e.batch_id];
    }
    if (sched::uses_large_worker(mode)) {
        std::printf("worker utilization: %.1f%%\n", 100.0 * busy / span);
    }
    std::cout << render_timeline(res.trace, cfg.pipeline, reactive, std::min(12, res.ticks));
    if (!trace_out.empty()) {
        std::ostringstream out;
        out << artifact_header("bench", cfg, common.seed).dump() << "\n" << res.trace.to_jsonl();
        write_text(trace_out, out.str());
        std::cout << "trace -> " << trace_out << "\n";
    }
    return 0;
}

int cmd_replay(const CommonArgs& common, const std::string& log_path, bool show_mask,
               const std::string& ckpt_path, const std::string& mode_name, int every) {
    cli::RunConfig cfg = load_config(common);
    std::ifstream is(log_path);
    if (!is) throw Error("replay: cannot open '" + log_path + "'");
    std::stringstream buf;
    buf << is.rdbuf();
    harness::EpisodeLog log = harness::EpisodeLog::from_jsonl(buf.str());

    std::string msg;
    if (!harness::replay_matches(log, &msg)) {
        std::cout << "REPLAY MISMATCH: " << msg << "\n";
        return 1;
    }
    std::cout << "replay verified bit-exact: " << log.scenario_kind << "/" << log.scenario_seed
              << " (" << log.ticks.size() << " ticks, policy " << log.policy << ")\n";

    // re-run the pipeline when a predicted-mask overlay is requested
    std::vector<ad::Tensor> masks;
    if (show_mask) {
        if (ckpt_path.empty()) throw ConfigError("replay --show-mask needs --ckpt and --mode");
        ad::ParamStore params = ad::ParamStore::load(ckpt_path);
        sched::NetPipelineModel model(params, cfg.model);
        world::Scenario sc = world::make_scenario(log.scenario_kind, log.scenario_seed,
                                                  {.disable_hazard = log.hazard_disabled});
        sched::EpisodeResult res =
            sched::run_pipeline(sc, model, cfg.costs, cfg.pipeline,
                                sched::mode_from_string(mode_name),
                                {.record_masks = true, .camera = cfg.camera});
        masks = res.mask_logits;
    }

    world::Scenario sc = world::make_scenario(log.scenario_kind, log.scenario_seed,
                                              {.disable_hazard = log.hazard_disabled});
    world::WorldState state = sc.initial;
    for (size_t k = 0; k < log.ticks.size(); ++k) {
        if (k % static_cast<size_t>(every) == 0) {
            std::printf("--- tick %zu (t=%.1fs) ego v=%.2f m/s%s%s ---\n", k, state.sim_time,
                        state.ego.speed, log.ticks[k].collided ? " COLLIDED" : "",
                        log.ticks[k].completed ? " COMPLETED" : "");
            std::cout << render_ascii(world::render_observation(state, cfg.camera));
            const world::ActionPlan plan = world::reconstruct_action(log.ticks[k].action);
            std::cout << render_mask_overlay(
                k < masks.size() ? masks[k] : ad::Tensor({world::kMaskRows, world::kMaskCols}),
                world::action_to_mask(plan, cfg.camera));
        }
        state = world::step_world(state, world::reconstruct_action(log.ticks[k].action),
                                  log.tick_s);
    }
    return 0;
}

int cmd_report(const std::vector<std::string>& metric_files) {
    for (const std::string& path : metric_files) {
        std::ifstream is(path);
        if (!is) throw Error("report: cannot open '" + path + "'");
        std::cout << "== " << path << "\n";
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            json j = json::parse(line);
            if (j.contains("header")) {
                std::cout << "  command: " << j["header"]["command"].get<std::string>()
                          << "  config " << j["header"]["config_hash"].get<std::string>() << "\n";
            } else if (j.contains("summary")) {
                std::printf("  SR %.2f%% +/- %.2f%%\n", 100.0 * j["summary"]["sr_mean"].get<double>(),
                            100.0 * j["summary"]["sr_std"].get<double>());
            } else if (j.contains("success_rate")) {
                std::printf("  %s%s SR %.1f%%  latency %.0f ms\n",
                            j.value("id", std::string()).c_str(),
                            j.value("mode", std::string("(eval)")).c_str(),
                            100.0 * j["success_rate"].get<double>(), j.value("latency_ms", 0.0));
            }
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ETA dual-system driving testbed"};
    app.require_subcommand(1);
    app.fallthrough();

    CommonArgs common;
    app.add_option("--config", common.config_path, "JSON config file");
    app.add_option("--set", common.overrides, "override: section.key=value (repeatable)");
    app.add_option("--seed", common.seed, "seed recorded in every artifact")->default_val(0);

    // collect
    auto* collect = app.add_subcommand("collect", "roll the expert and build a dataset");
    std::string out_path = "dataset.bin";
    std::vector<std::string> only_kinds;
    std::string collect_log_dir;
    collect->add_option("--out", out_path, "output dataset path");
    collect->add_option("--scenarios", only_kinds, "restrict to these scenario kinds");
    collect->add_option("--log-dir", collect_log_dir, "also write expert episode logs here");

    // train
    auto* train = app.add_subcommand("train", "train a model");
    std::string data_path = "dataset.bin", kind = "async", mode_name = "full",
                train_out = "model.ckpt";
    int steps_override = 0, batch_override = 0;
    double lr_override = 0.0;
    train->add_option("--data", data_path, "dataset path");
    train->add_option("--kind", kind, "base | async")->check(CLI::IsMember({"base", "async"}));
    train->add_option("--mode", mode_name, "async wiring variant");
    train->add_option("--out", train_out, "checkpoint path");
    train->add_option("--steps", steps_override, "override train.steps");
    train->add_option("--lr", lr_override, "override train.lr");
    train->add_option("--batch", batch_override, "override train.batch");

    // eval
    auto* eval = app.add_subcommand("eval", "closed-loop evaluation");
    std::string ckpt_pattern = "model.ckpt", eval_mode = "full", eval_out;
    std::vector<uint64_t> eval_seeds = {0};
    eval->add_option("--ckpt", ckpt_pattern, "checkpoint path ({seed} placeholder allowed)");
    eval->add_option("--mode", eval_mode, "pipeline mode");
    eval->add_option("--seeds", eval_seeds, "checkpoint seeds to evaluate")->delimiter(',');
    std::string eval_log_dir;
    eval->add_option("--out", eval_out, "metrics JSONL output");
    eval->add_option("--log-dir", eval_log_dir, "also write per-episode logs here");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "train missing modes and print the ablation table");
    std::string ablate_data = "dataset.bin", ckpt_dir = "checkpoints", ablate_out;
    ablate->add_option("--data", ablate_data, "dataset path");
    ablate->add_option("--ckpt-dir", ckpt_dir, "checkpoint cache directory");
    ablate->add_option("--out", ablate_out, "table output path");

    // bench
    auto* bench = app.add_subcommand("bench", "schedule feasibility and synthetic pipeline run");
    std::string bench_mode = "full", trace_out;
    int bench_ticks = 10000;
    bool sweep = false;
    bench->add_option("--mode", bench_mode, "pipeline mode");
    bench->add_option("--ticks", bench_ticks, "synthetic run length");
    bench->add_flag("--sweep", sweep, "print the T x Delta feasibility frontier");
    bench->add_option("--trace-out", trace_out, "write the schedule trace JSONL here");

    // replay
    auto* replay = app.add_subcommand("replay", "verify and render an episode log");
    std::string log_path, replay_ckpt, replay_mode = "full";
    bool show_mask = false;
    int every = 40;
    replay->add_option("--log", log_path, "episode log (JSONL)")->required();
    replay->add_flag("--show-mask", show_mask, "overlay predicted vs gt mask");
    replay->add_option("--ckpt", replay_ckpt, "checkpoint for --show-mask");
    replay->add_option("--mode", replay_mode, "pipeline mode for --show-mask");
    replay->add_option("--every", every, "print every Nth tick");

    // report
    auto* report = app.add_subcommand("report", "summarize metrics files");
    std::vector<std::string> metric_files;
    report->add_option("files", metric_files, "metrics JSONL files")->required();

    try {
        app.parse(argc, argv);
        if (collect->parsed()) return cmd_collect(common, out_path, only_kinds, collect_log_dir);
        if (train->parsed())
            return cmd_train(common, data_path, kind, mode_name, train_out, steps_override,
                             lr_override, batch_override);
        if (eval->parsed())
            return cmd_eval(common, ckpt_pattern, eval_mode, eval_seeds, eval_out, eval_log_dir);
        if (ablate->parsed()) return cmd_ablate(common, ablate_data, ckpt_dir, ablate_out);
        if (bench->parsed()) return cmd_bench(common, bench_mode, bench_ticks, sweep, trace_out);
        if (replay->parsed())
            return cmd_replay(common, log_path, show_mask, replay_ckpt, replay_mode, every);
        if (report->parsed()) return cmd_report(metric_files);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
