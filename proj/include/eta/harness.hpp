#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "eta/losses.hpp"
#include "eta/models.hpp"
#include "eta/params.hpp"
#include "eta/scheduler.hpp"
#include "eta/world.hpp"

namespace eta::harness {

// One training sample: the current tick paired with the tick exactly Delta
// earlier, plus everything the losses and bucket predicates consume.
struct Sample {
    std::vector<uint8_t> frame_cur;   // 4*32*64 binary values
    std::vector<uint8_t> frame_prev;
    ad::Tensor cond_cur;              // 1x5
    ad::Tensor cond_prev;
    ad::Tensor expert_cur;            // 14x2 residuals
    ad::Tensor expert_prev;
    world::PatchMask mask_cur;
    world::PatchMask mask_prev;
    std::string scenario_kind;
    uint64_t scenario_seed = 0;
    int tick = 0;

    // collection-time world facts the bucket predicates run on
    double speed = 0.0;
    double accel = 0.0;  // realized longitudinal acceleration, m/s^2
    bool front_hazard = false;
    bool rear_hazard = false;
    bool side_hazard = false;
    bool red_light_near = false;
    std::vector<std::string> hazard_kinds;

    std::vector<int> buckets;  // indices into standard_buckets()

    world::FrameTensor frame(bool current) const;
};

struct Dataset {
    std::vector<Sample> samples;
    int delta_ticks = 5;
    double tick_s = 0.1;

    void save(const std::string& path) const;
    static Dataset load(const std::string& path);
};

struct Bucket {
    std::string name;
    double weight = 1.0;
};

// Acceleration bands (fractions of the tracker's a_max), steering, hazard
// cones, red light, scenario hazard tags, and a catch-all default.
const std::vector<Bucket>& standard_buckets();

// Indices of every bucket the sample belongs to; a sample matching nothing
// special lands in the default bucket.
std::vector<int> assign_buckets(const Sample& sample);

// Roll the expert through each scenario and emit one sample per tick >= Delta.
// An expert collision aborts with the episode id (data-quality failure).
Dataset collect_dataset(const std::vector<world::Scenario>& suite, int delta_ticks, double tick_s,
                        const world::CameraModel& cam = {});

// Two-stage weighted draw: bucket by normalized weight, then uniform within
// the bucket. Empty buckets are excluded (recorded in warnings()).
class WeightedSampler {
public:
    WeightedSampler(const Dataset& dataset, const std::vector<Bucket>& buckets, uint64_t seed);

    struct Draw {
        size_t sample_index;
        int bucket_index;
    };
    Draw next();

    const std::vector<int>& active_buckets() const { return active_; }
    const std::vector<std::string>& warnings() const { return warnings_; }
    double active_weight(int bucket_index) const;

private:
    const Dataset* dataset_;
    std::vector<Bucket> buckets_;
    std::vector<std::vector<size_t>> members_;
    std::vector<int> active_;
    std::vector<double> cumulative_;
    std::vector<std::string> warnings_;
    Rng rng_;
};

// cosine annealing with `restarts` warm restarts over equal segments;
// lr(0) = lr_max exactly, each segment decays toward zero
double cosine_restart_lr(double lr_max, int step, int total_steps, int restarts);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;  // no weight decay
};

class Adam {
public:
    explicit Adam(const AdamConfig& cfg = {}) : cfg_(cfg) {}
    void step(ad::ParamStore& params, const std::map<std::string, ad::Tensor>& grads, double lr);

private:
    AdamConfig cfg_;
    std::map<std::string, ad::Tensor> m_;
    std::map<std::string, ad::Tensor> v_;
    int64_t t_ = 0;
};

enum class TrainKind { base, async };

struct TrainConfig {
    TrainKind kind = TrainKind::async;
    sched::Mode mode = sched::Mode::full;  // async wiring variant to train
    int steps = 2000;
    int batch = 16;
    double lr = 3e-5;
    int restarts = 4;
    uint64_t seed = 0;
    losses::LossWeights weights;
    models::ModelConfig model;
    // drop the ground-truth feature branch and the forecast term entirely
    // (reference wiring for the forecast-weight-zero equivalence check)
    bool detach_forecast_branch = false;
    int log_every = 25;
};

struct StepRecord {
    int step;
    double lr;
    double action_l;
    double mask_l;
    double forecast_l;
    double total;
};

struct TrainResult {
    ad::ParamStore params;
    std::vector<StepRecord> curve;  // one record per step
};

TrainResult train(const Dataset& dataset, const TrainConfig& cfg);

struct EvalConfig {
    sched::CostModel costs;
    sched::PipelineConfig pipeline{100.0, 500.0, 0, 16};
    bool threaded = false;
    int parallelism = 1;
    world::CameraModel camera{};
};

struct EpisodeMetric {
    std::string scenario;
    uint64_t seed = 0;
    bool success = false;
    bool collided = false;
    bool completed = false;
    int deadline_misses = 0;
    int ticks = 0;
    double route_completion = 0.0;  // fraction of route arc covered
};

struct Metrics {
    int episodes = 0;
    double success_rate = 0.0;
    double collision_rate = 0.0;
    double completion_rate = 0.0;
    double mean_route_completion = 0.0;
    double reactive_ms = 0.0;
    std::map<std::string, double> per_kind_sr;
    std::vector<EpisodeMetric> detail;
};

// success = route completed, no collision, no deadline miss
Metrics evaluate_closed_loop(const ad::ParamStore& params, const models::ModelConfig& mcfg,
                             sched::Mode mode, const std::vector<world::Scenario>& suite,
                             const EvalConfig& cfg);

struct SeedAggregate {
    double mean = 0.0;
    double stddev = 0.0;
};
SeedAggregate aggregate(const std::vector<double>& values);

struct AblationRow {
    std::string id;  // "", "A".."F"
    sched::Mode mode;
    double latency_ms = 0.0;
    Metrics metrics;
};

// Rows: base + full + A..F. Mode F (gt forecasting at test time) evaluates
// the full-mode checkpoint under gt wiring. Missing checkpoints raise an
// Error listing the modes that still need training.
std::vector<AblationRow> run_ablation_matrix(const std::map<sched::Mode, ad::ParamStore>& checkpoints,
                                             const models::ModelConfig& mcfg,
                                             const std::vector<world::Scenario>& suite,
                                             const EvalConfig& cfg);

std::string format_ablation_table(const std::vector<AblationRow>& rows);

// upper 1% chi-square quantile (Wilson-Hilferty), for the sampler gate
double chi_square_quantile_99(int dof);

// Replayable per-tick episode record.
struct EpisodeLog {
    std::string scenario_kind;
    uint64_t scenario_seed = 0;
    bool hazard_disabled = false;
    double tick_s = 0.1;
    std::string policy;  // "expert" or a pipeline mode name
    struct Tick {
        int tick = 0;
        double sim_time = 0.0;
        world::Pose ego;
        world::Residuals action{};
        bool collided = false;
        bool completed = false;
    };
    std::vector<Tick> ticks;

    std::string to_jsonl() const;
    static EpisodeLog from_jsonl(const std::string& text);
};

EpisodeLog run_expert_episode(const world::Scenario& scenario, double tick_s);

// per-tick log of a pipeline episode (flags only fire on the final tick,
// which is when the episode stops)
EpisodeLog log_from_result(const world::Scenario& scenario, const sched::EpisodeResult& result,
                           double tick_s, const std::string& policy);

// Re-simulate the logged actions from the scenario's initial state; returns
// false (with a message) on the first divergence from the logged poses.
bool replay_matches(const EpisodeLog& log, std::string* message = nullptr);

}  // namespace eta::harness
