#pragma once

#include <memory>
#include <string>
#include <vector>

#include "eta/models.hpp"
#include "eta/tensor.hpp"
#include "eta/world.hpp"

namespace eta::sched {

// Schedule infeasible for the requested mode/config (CLI exit code 1).
class InfeasibleError : public Error {
public:
    explicit InfeasibleError(const std::string& msg) : Error(msg) {}
};

// Simulated-latency model, milliseconds. Defaults calibrated so the paper's
// latency relationships hold: reactive path small+forecast+action = 50,
// batched large inference amortizes under the tick at B=2 for T=50.
struct CostModel {
    double large_fixed = 30.0;
    double large_marginal = 24.0;
    double small = 19.0;
    double forecast = 19.0;
    double action = 12.0;

    double cost_large(int batch) const {
        if (batch < 1) throw ContractError("cost_large: batch must be >= 1");
        return large_fixed + large_marginal * static_cast<double>(batch);
    }
};

struct PipelineConfig {
    double tick_ms = 100.0;       // T
    double staleness_ms = 500.0;  // Delta; must be an integer multiple of T
    int batch = 0;                // 0 = pick the minimal feasible B
    int buffer_capacity = 16;

    int delta_ticks() const;
};

enum class Mode {
    base,
    full,
    no_forecast,
    no_small,
    small_only,
    gt_forecast,
    gt_forecast_test_only,
    no_mask,
};

Mode mode_from_string(const std::string& s);
std::string to_string(Mode mode);

// reactive-path simulated cost of one tick for the mode
double reactive_cost_ms(Mode mode, const CostModel& costs);
// whether the mode runs the batched large-model worker
bool uses_large_worker(Mode mode);

struct BatchPlan {
    bool feasible = false;
    int batch = 0;
    std::string binding_constraint;  // "throughput" / "staleness" when infeasible
    double suggested_min_delta_ms = 0.0;  // smallest Delta that would admit some B
    double suggested_min_tick_ms = 0.0;   // smallest T that satisfies throughput
    struct Check {
        int batch;
        double cost_ms;
        double worst_wait_ms;
        bool throughput_ok;
        bool staleness_ok;
    };
    std::vector<Check> checks;
    std::string describe() const;
};

// Minimal B with cost_large(B) <= B*T and (B-1)*T + cost_large(B) <= Delta.
BatchPlan plan_schedule(const CostModel& costs, const PipelineConfig& cfg);

struct TraceEvent {
    enum class Kind { frame_in, bootstrap, batch_start, batch_end, fuse, act_out, deadline_miss };
    Kind kind;
    double sim_ms = 0.0;
    int64_t tick = -1;
    int64_t frame = -1;     // frame consumed / enqueued
    int64_t batch_id = -1;
    std::vector<int64_t> frames;  // batch members
    double staleness_ms = -1.0;   // fuse events
    std::string detail;
};

const char* to_string(TraceEvent::Kind kind);

struct ScheduleTrace {
    std::vector<TraceEvent> events;

    int count(TraceEvent::Kind kind) const;
    // throws Error naming the violated invariant: time order, per-frame
    // batch conservation, staleness exactness after warm-up
    void validate(const PipelineConfig& cfg) const;
    std::string to_jsonl() const;
    std::vector<double> staleness_histogram_ms() const;
};

// Numerics behind the pipeline. Implementations must be pure functions of
// their inputs: the scheduler may evaluate them from a worker thread and
// relies on identical results in either execution mode.
struct LargeFeatures {
    ad::Tensor pooled;   // 8 x D
    ad::Tensor prepool;  // 32 x D
};

struct ActResult {
    ad::Tensor residuals;    // 14 x 2
    ad::Tensor mask_logits;  // 4 x 8
};

class PipelineModel {
public:
    virtual ~PipelineModel() = default;
    virtual LargeFeatures encode_large(const world::FrameTensor& frame) = 0;
    virtual LargeFeatures encode_small(const world::FrameTensor& frame) = 0;
    virtual ad::Tensor forecast(const ad::Tensor& prev_pooled, const ad::Tensor& prev_action,
                                const ad::Tensor& prev_cond) = 0;
    virtual ActResult act(const std::vector<ad::Tensor>& pooled_feats, const ad::Tensor& cond,
                          const ad::Tensor& mask_prepool) = 0;
};

// Production model: the four networks behind the PipelineModel surface.
class NetPipelineModel : public PipelineModel {
public:
    NetPipelineModel(const ad::ParamStore& store, const models::ModelConfig& cfg)
        : store_(&store), cfg_(cfg) {}
    LargeFeatures encode_large(const world::FrameTensor& frame) override;
    LargeFeatures encode_small(const world::FrameTensor& frame) override;
    ad::Tensor forecast(const ad::Tensor& prev_pooled, const ad::Tensor& prev_action,
                        const ad::Tensor& prev_cond) override;
    ActResult act(const std::vector<ad::Tensor>& pooled_feats, const ad::Tensor& cond,
                  const ad::Tensor& mask_prepool) override;

private:
    const ad::ParamStore* store_;
    models::ModelConfig cfg_;
};

// Fixed-output stand-in for schedule-only runs (bench, long trace tests).
class StubPipelineModel : public PipelineModel {
public:
    LargeFeatures encode_large(const world::FrameTensor&) override;
    LargeFeatures encode_small(const world::FrameTensor&) override;
    ad::Tensor forecast(const ad::Tensor& prev_pooled, const ad::Tensor&, const ad::Tensor&) override;
    ActResult act(const std::vector<ad::Tensor>&, const ad::Tensor&, const ad::Tensor&) override;
};

struct PipelineOptions {
    bool record_masks = false;
    bool record_frames = false;  // keep every rendered frame in the result
    bool threaded = false;  // run the large worker on a real thread
    int max_ticks = 0;      // 0 = scenario duration / tick
    world::CameraModel camera{};
};

struct EpisodeResult {
    bool collided = false;
    bool completed = false;
    int ticks = 0;
    int deadline_misses = 0;
    double reactive_cost_ms = 0.0;
    ScheduleTrace trace;
    std::vector<ad::Tensor> actions;       // emitted residuals per tick
    std::vector<world::Pose> ego_poses;    // pose after each tick
    std::vector<ad::Tensor> mask_logits;   // when record_masks
    std::vector<world::FrameTensor> frames;  // when record_frames
    world::WorldState final_state;
};

// Closed-loop episode under the asynchronous pipeline: the large worker runs
// on buffered past frames, the reactive path (per mode) runs every tick, and
// simulated-time accounting checks both deadlines. Numerics are independent
// of scheduling: actions equal the sequential oracle's bit for bit.
EpisodeResult run_pipeline(const world::Scenario& scenario, PipelineModel& model,
                           const CostModel& costs, const PipelineConfig& cfg, Mode mode,
                           const PipelineOptions& opts = {});

// Schedule-only run on a fixed synthetic frame; same trace semantics.
EpisodeResult run_pipeline_synthetic(int ticks, PipelineModel& model, const CostModel& costs,
                                     const PipelineConfig& cfg, Mode mode,
                                     const PipelineOptions& opts = {});

}  // namespace eta::sched
