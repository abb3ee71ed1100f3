#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "eta/scheduler.hpp"

using namespace eta;
using namespace eta::ad;
using namespace eta::sched;

namespace {

// Sequential reference: Eqs. 3-6 computed tick by tick with the same Delta,
// no scheduling machinery. Used to pin numerics/scheduling decoupling.
std::vector<Tensor> offline_oracle(const world::Scenario& sc, const ParamStore& store,
                                   const models::ModelConfig& cfg, int d, double dt_s, int max_ticks) {
    world::WorldState state = sc.initial;
    std::vector<world::FrameTensor> frames;
    std::vector<Tensor> conds;
    std::vector<Tensor> actions;
    const Tensor zero_action({14, 2});
    for (int k = 0; k < max_ticks; ++k) {
        frames.push_back(world::render_observation(state, world::CameraModel{}));
        conds.push_back(world::conditioning_of(state).to_tensor());
        const int j = std::max(0, k - d);
        Tape tape;
        BoundParams params(tape, store);
        models::EncoderOut large_prev = models::encode_large(tape, params, frames[j], cfg);
        const Tensor& prev_action = (j == k) ? zero_action : actions[j];
        models::TokenGrid fhat = models::forecast(tape, params, large_prev.pooled, prev_action, conds[j], cfg);
        models::EncoderOut small_cur = models::encode_small(tape, params, frames[k], cfg);
        models::ActionOut out = models::predict_action(tape, params, {fhat, small_cur.pooled}, conds[k],
                                                       small_cur.prepool, models::MaskSource::small_model, cfg);
        actions.push_back(out.residuals.value());
        state = world::step_world(state, models::reconstruct_action(out.residuals.value()), dt_s);
        if (state.collided || state.completed) break;
    }
    return actions;
}

}  // namespace

TEST_CASE("plan_schedule: B=1 fits at T=100, B=2 needed at T=50") {
    CostModel costs;
    CHECK(costs.cost_large(1) == 54.0);

    BatchPlan p100 = plan_schedule(costs, {100.0, 500.0, 0, 8});
    CHECK(p100.feasible);
    CHECK(p100.batch == 1);

    BatchPlan p50 = plan_schedule(costs, {50.0, 500.0, 0, 8});
    CHECK(p50.feasible);
    CHECK(p50.batch == 2);
    // minimality: B-1 violates at least one constraint
    CHECK_FALSE(p50.checks[0].throughput_ok);  // 54 > 50
    CHECK(p50.checks[1].throughput_ok);        // 78 <= 100
    CHECK(p50.checks[1].staleness_ok);         // 50 + 78 <= 500
}

TEST_CASE("plan_schedule: tiny Delta is staleness-bound regardless of T") {
    CostModel costs;
    for (double tick : {10.0, 20.0, 40.0}) {
        PipelineConfig cfg{tick, 40.0, 0, 8};
        BatchPlan plan = plan_schedule(costs, cfg);
        CHECK_FALSE(plan.feasible);
        CHECK(plan.binding_constraint == "staleness");
        CHECK(plan.suggested_min_delta_ms >= 54.0);
    }
    CHECK_THROWS_AS(plan_schedule(costs, {100.0, 250.0, 0, 8}), ConfigError);  // Delta % T != 0
}

TEST_CASE("reactive costs reproduce the latency relationships") {
    CostModel costs;
    CHECK(reactive_cost_ms(Mode::full, costs) == 50.0);
    CHECK(reactive_cost_ms(Mode::no_mask, costs) == 50.0);
    CHECK(reactive_cost_ms(Mode::no_small, costs) == 31.0);
    CHECK(reactive_cost_ms(Mode::base, costs) > 50.0);  // base cannot run at 20 Hz
    CHECK(reactive_cost_ms(Mode::gt_forecast, costs) > reactive_cost_ms(Mode::base, costs));
    // small encoder well under half the large encoder's cost
    CHECK(costs.small < costs.cost_large(1) / 2.0);
}

TEST_CASE("synthetic pipeline: zero misses, exact staleness, conservation") {
    CostModel costs;
    PipelineConfig cfg{50.0, 500.0, 0, 8};
    StubPipelineModel stub;
    EpisodeResult res = run_pipeline_synthetic(2000, stub, costs, cfg, Mode::full);
    CHECK(res.deadline_misses == 0);
    CHECK(res.trace.count(TraceEvent::Kind::deadline_miss) == 0);
    CHECK(res.trace.count(TraceEvent::Kind::fuse) == 2000);
    res.trace.validate(cfg);  // throws on any violated invariant

    const int d = cfg.delta_ticks();
    for (const TraceEvent& e : res.trace.events) {
        if (e.kind == TraceEvent::Kind::fuse) {
            if (e.tick >= d) {
                CHECK(e.staleness_ms == 500.0);
                CHECK(e.frame == e.tick - d);
            } else {
                CHECK(e.frame == 0);
                CHECK(e.staleness_ms < 500.0);
            }
        }
    }
}

TEST_CASE("synthetic pipeline: odd tick count still conserves every frame") {
    CostModel costs;
    PipelineConfig cfg{50.0, 500.0, 0, 8};
    StubPipelineModel stub;
    EpisodeResult res = run_pipeline_synthetic(501, stub, costs, cfg, Mode::full);
    res.trace.validate(cfg);
    CHECK(res.trace.count(TraceEvent::Kind::frame_in) == 501);
}

TEST_CASE("base mode at T=50 misses every tick") {
    CostModel costs;
    PipelineConfig cfg{50.0, 500.0, 0, 8};
    StubPipelineModel stub;
    EpisodeResult res = run_pipeline_synthetic(400, stub, costs, cfg, Mode::base);
    CHECK(res.deadline_misses == 400);
    // and at the world tick of 100 ms it fits
    EpisodeResult ok = run_pipeline_synthetic(400, stub, costs, {100.0, 500.0, 0, 8}, Mode::base);
    CHECK(ok.deadline_misses == 0);
}

TEST_CASE("infeasible schedules are rejected before running") {
    CostModel costs;
    StubPipelineModel stub;
    CHECK_THROWS_AS(run_pipeline_synthetic(10, stub, costs, {50.0, 50.0, 0, 8}, Mode::full),
                    InfeasibleError);
    // forced batch that violates throughput
    CHECK_THROWS_AS(run_pipeline_synthetic(10, stub, costs, {50.0, 500.0, 1, 8}, Mode::full),
                    InfeasibleError);
}

TEST_CASE("async pipeline actions are bit-identical to the sequential oracle") {
    models::ModelConfig mcfg;
    Rng rng(31);
    ParamStore store = models::init_params(mcfg, rng);
    NetPipelineModel model(store, mcfg);
    CostModel costs;
    PipelineConfig cfg{100.0, 500.0, 0, 8};

    world::Scenario sc = world::make_scenario(world::ScenarioKind::give_way, 2);
    EpisodeResult res = run_pipeline(sc, model, costs, cfg, Mode::full, {.max_ticks = 40});
    std::vector<Tensor> oracle = offline_oracle(sc, store, mcfg, cfg.delta_ticks(), 0.1, 40);

    REQUIRE(res.actions.size() == oracle.size());
    for (size_t i = 0; i < oracle.size(); ++i) {
        CHECK(res.actions[i].vec() == oracle[i].vec());
    }
}

TEST_CASE("true-thread worker produces identical actions and trace") {
    models::ModelConfig mcfg;
    Rng rng(33);
    ParamStore store = models::init_params(mcfg, rng);
    NetPipelineModel model(store, mcfg);
    CostModel costs;
    PipelineConfig cfg{100.0, 500.0, 0, 8};
    world::Scenario sc = world::make_scenario(world::ScenarioKind::merge, 5);

    EpisodeResult sim = run_pipeline(sc, model, costs, cfg, Mode::full, {.max_ticks = 35});
    EpisodeResult thr = run_pipeline(sc, model, costs, cfg, Mode::full,
                                     {.threaded = true, .max_ticks = 35});
    REQUIRE(sim.actions.size() == thr.actions.size());
    for (size_t i = 0; i < sim.actions.size(); ++i) {
        CHECK(sim.actions[i].vec() == thr.actions[i].vec());
    }
    REQUIRE(sim.trace.events.size() == thr.trace.events.size());
    for (size_t i = 0; i < sim.trace.events.size(); ++i) {
        CHECK(sim.trace.events[i].kind == thr.trace.events[i].kind);
        CHECK(sim.trace.events[i].sim_ms == thr.trace.events[i].sim_ms);
        CHECK(sim.trace.events[i].frame == thr.trace.events[i].frame);
    }
    thr.trace.validate(cfg);
}

TEST_CASE("feasibility is monotone in Delta at fixed T") {
    CostModel costs;
    for (double tick : {25.0, 50.0, 100.0}) {
        bool was_feasible = false;
        for (double delta = tick; delta <= 20.0 * tick; delta += tick) {
            const bool feasible = plan_schedule(costs, {tick, delta, 0, 16}).feasible;
            if (was_feasible) CHECK(feasible);  // never lost by increasing Delta
            was_feasible = feasible;
        }
    }
}

TEST_CASE("ablation wiring: every mode runs and reports its cost") {
    models::ModelConfig mcfg;
    Rng rng(35);
    ParamStore store = models::init_params(mcfg, rng);
    NetPipelineModel model(store, mcfg);
    CostModel costs;
    PipelineConfig cfg{100.0, 500.0, 0, 8};
    world::Scenario sc = world::make_scenario(world::ScenarioKind::red_light, 1);

    for (Mode mode : {Mode::full, Mode::no_forecast, Mode::no_small, Mode::small_only,
                      Mode::gt_forecast, Mode::gt_forecast_test_only, Mode::no_mask, Mode::base}) {
        EpisodeResult res = run_pipeline(sc, model, costs, cfg, mode, {.max_ticks = 12});
        CHECK(res.ticks == 12);
        CHECK(res.reactive_cost_ms == reactive_cost_ms(mode, costs));
        CHECK(res.deadline_misses == 0);  // all modes fit the 100 ms world tick
    }
    CHECK(mode_from_string("gt_forecast_test_only") == Mode::gt_forecast_test_only);
    CHECK_THROWS_AS(mode_from_string("bogus"), ConfigError);
}
