#include "eta/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace eta::sched {

using ad::Tensor;

int PipelineConfig::delta_ticks() const {
    if (tick_ms <= 0.0) throw ConfigError("pipeline: tick period must be positive");
    const double q = staleness_ms / tick_ms;
    const double r = std::fabs(q - std::round(q));
    if (r > 1e-9) {
        throw ConfigError("pipeline: staleness " + std::to_string(staleness_ms) +
                          " ms is not an integer multiple of the tick " + std::to_string(tick_ms) + " ms");
    }
    return static_cast<int>(std::llround(q));
}

Mode mode_from_string(const std::string& s) {
    if (s == "base") return Mode::base;
    if (s == "full") return Mode::full;
    if (s == "no_forecast") return Mode::no_forecast;
    if (s == "no_small") return Mode::no_small;
    if (s == "small_only") return Mode::small_only;
    if (s == "gt_forecast") return Mode::gt_forecast;
    if (s == "gt_forecast_test_only") return Mode::gt_forecast_test_only;
    if (s == "no_mask") return Mode::no_mask;
    throw ConfigError("unknown pipeline mode '" + s + "'");
}

std::string to_string(Mode mode) {
    switch (mode) {
        case Mode::base: return "base";
        case Mode::full: return "full";
        case Mode::no_forecast: return "no_forecast";
        case Mode::no_small: return "no_small";
        case Mode::small_only: return "small_only";
        case Mode::gt_forecast: return "gt_forecast";
        case Mode::gt_forecast_test_only: return "gt_forecast_test_only";
        case Mode::no_mask: return "no_mask";
    }
    throw ConfigError("unknown pipeline mode");
}

double reactive_cost_ms(Mode mode, const CostModel& costs) {
    switch (mode) {
        case Mode::base: return costs.cost_large(1) + costs.action;
        case Mode::full:
        case Mode::no_mask: return costs.small + costs.forecast + costs.action;
        case Mode::no_forecast: return costs.small + costs.action;
        case Mode::no_small: return costs.forecast + costs.action;
        case Mode::small_only: return costs.small + costs.action;
        case Mode::gt_forecast:
        case Mode::gt_forecast_test_only: return costs.cost_large(1) + costs.small + costs.action;
    }
    throw ConfigError("unknown pipeline mode");
}

bool uses_large_worker(Mode mode) {
    switch (mode) {
        case Mode::full:
        case Mode::no_mask:
        case Mode::no_forecast:
        case Mode::no_small: return true;
        default: return false;
    }
}

std::string BatchPlan::describe() const {
    std::ostringstream os;
    if (feasible) {
        os << "feasible with B=" << batch;
        return os.str();
    }
    os << "infeasible, binding constraint: " << binding_constraint;
    if (binding_constraint == "staleness") {
        os << " (minimal Delta that would fit: " << suggested_min_delta_ms << " ms)";
    } else {
        os << " (minimal T that would fit: " << suggested_min_tick_ms << " ms)";
    }
    return os.str();
}

BatchPlan plan_schedule(const CostModel& costs, const PipelineConfig& cfg) {
    if (cfg.buffer_capacity < 1) throw ConfigError("plan_schedule: buffer capacity must be >= 1");
    cfg.delta_ticks();  // validates the Delta/T relationship
    BatchPlan plan;
    double min_delta_over_throughput_ok = 1e18;
    double min_delta_any = 1e18;
    double min_tick = 1e18;
    bool any_throughput = false;
    for (int b = 1; b <= cfg.buffer_capacity; ++b) {
        const double cost = costs.cost_large(b);
        const double wait = (b - 1) * cfg.tick_ms;
        BatchPlan::Check check{b, cost, wait, cost <= b * cfg.tick_ms + 1e-9,
                               wait + cost <= cfg.staleness_ms + 1e-9};
        plan.checks.push_back(check);
        min_tick = std::min(min_tick, cost / b);
        min_delta_any = std::min(min_delta_any, wait + cost);
        if (check.throughput_ok) {
            any_throughput = true;
            min_delta_over_throughput_ok = std::min(min_delta_over_throughput_ok, wait + cost);
        }
        if (check.throughput_ok && check.staleness_ok && !plan.feasible) {
            plan.feasible = true;
            plan.batch = b;
        }
    }
    if (!plan.feasible) {
        const bool staleness_possible =
            std::any_of(plan.checks.begin(), plan.checks.end(), [](const auto& c) { return c.staleness_ok; });
        if (!staleness_possible) {
            plan.binding_constraint = "staleness";
            plan.suggested_min_delta_ms = min_delta_any;
        } else if (!any_throughput) {
            plan.binding_constraint = "throughput";
            plan.suggested_min_tick_ms = min_tick;
        } else {
            plan.binding_constraint = "staleness";
            plan.suggested_min_delta_ms = min_delta_over_throughput_ok;
        }
        plan.suggested_min_tick_ms = min_tick;
        if (plan.suggested_min_delta_ms == 0.0) plan.suggested_min_delta_ms = min_delta_any;
    }
    return plan;
}

const char* to_string(TraceEvent::Kind kind) {
    switch (kind) {
        case TraceEvent::Kind::frame_in: return "frame_in";
        case TraceEvent::Kind::bootstrap: return "bootstrap";
        case TraceEvent::Kind::batch_start: return "batch_start";
        case TraceEvent::Kind::batch_end: return "batch_end";
        case TraceEvent::Kind::fuse: return "fuse";
        case TraceEvent::Kind::act_out: return "act_out";
        case TraceEvent::Kind::deadline_miss: return "deadline_miss";
    }
    return "?";
}

namespace {

TraceEvent make_event(TraceEvent::Kind kind, double sim_ms) {
    TraceEvent e;
    e.kind = kind;
    e.sim_ms = sim_ms;
    return e;
}

int kind_rank(TraceEvent::Kind k) {
    switch (k) {
        case TraceEvent::Kind::bootstrap: return 0;
        case TraceEvent::Kind::frame_in: return 1;
        case TraceEvent::Kind::batch_start: return 2;
        case TraceEvent::Kind::batch_end: return 3;
        case TraceEvent::Kind::deadline_miss: return 4;
        case TraceEvent::Kind::fuse: return 5;
        case TraceEvent::Kind::act_out: return 6;
    }
    return 7;
}

void sort_events(std::vector<TraceEvent>& events) {
    std::stable_sort(events.begin(), events.end(), [](const TraceEvent& a, const TraceEvent& b) {
        if (a.sim_ms != b.sim_ms) return a.sim_ms < b.sim_ms;
        if (kind_rank(a.kind) != kind_rank(b.kind)) return kind_rank(a.kind) < kind_rank(b.kind);
        if (a.tick != b.tick) return a.tick < b.tick;
        return a.frame < b.frame;
    });
}

}  // namespace

int ScheduleTrace::count(TraceEvent::Kind kind) const {
    int n = 0;
    for (const TraceEvent& e : events) n += e.kind == kind ? 1 : 0;
    return n;
}

void ScheduleTrace::validate(const PipelineConfig& cfg) const {
    double last = -1e18;
    for (const TraceEvent& e : events) {
        if (e.sim_ms < last - 1e-9) throw Error("trace: events out of time order");
        last = std::max(last, e.sim_ms);
    }
    // conservation: every enqueued frame appears in exactly one batch
    std::map<int64_t, int> enqueued, batched;
    for (const TraceEvent& e : events) {
        if (e.kind == TraceEvent::Kind::frame_in && e.detail == "enqueued") enqueued[e.frame]++;
        if (e.kind == TraceEvent::Kind::batch_start) {
            for (int64_t f : e.frames) batched[f]++;
        }
    }
    if (!batched.empty()) {
        for (const auto& [f, n] : enqueued) {
            if (n != 1) throw Error("trace: frame " + std::to_string(f) + " enqueued " + std::to_string(n) + " times");
            auto it = batched.find(f);
            if (it == batched.end()) throw Error("trace: frame " + std::to_string(f) + " never batched");
            if (it->second != 1) throw Error("trace: frame " + std::to_string(f) + " batched " + std::to_string(it->second) + " times");
        }
        for (const auto& [f, n] : batched) {
            if (!enqueued.count(f)) throw Error("trace: frame " + std::to_string(f) + " batched but never enqueued");
        }
    }
    // staleness exactness after warm-up
    const int d = cfg.delta_ticks();
    for (const TraceEvent& e : events) {
        if (e.kind == TraceEvent::Kind::fuse && e.tick >= d) {
            if (std::fabs(e.staleness_ms - cfg.staleness_ms) > 1e-9) {
                throw Error("trace: fuse at tick " + std::to_string(e.tick) + " staleness " +
                            std::to_string(e.staleness_ms) + " != Delta");
            }
        }
    }
}

std::string ScheduleTrace::to_jsonl() const {
    std::ostringstream os;
    for (const TraceEvent& e : events) {
        nlohmann::json j;
        j["t_ms"] = e.sim_ms;
        j["kind"] = to_string(e.kind);
        if (e.tick >= 0) j["tick"] = e.tick;
        if (e.frame >= 0) j["frame"] = e.frame;
        if (e.batch_id >= 0) j["batch"] = e.batch_id;
        if (!e.frames.empty()) j["frames"] = e.frames;
        if (e.staleness_ms >= 0.0) j["staleness_ms"] = e.staleness_ms;
        if (!e.detail.empty()) j["detail"] = e.detail;
        os << j.dump() << "\n";
    }
    return os.str();
}

std::vector<double> ScheduleTrace::staleness_histogram_ms() const {
    std::vector<double> out;
    for (const TraceEvent& e : events) {
        if (e.kind == TraceEvent::Kind::fuse) out.push_back(e.staleness_ms);
    }
    return out;
}

LargeFeatures NetPipelineModel::encode_large(const world::FrameTensor& frame) {
    ad::Tape tape;
    ad::BoundParams params(tape, *store_);
    models::EncoderOut out = models::encode_large(tape, params, frame, cfg_);
    return {out.pooled.tokens.value(), out.prepool.tokens.value()};
}

LargeFeatures NetPipelineModel::encode_small(const world::FrameTensor& frame) {
    ad::Tape tape;
    ad::BoundParams params(tape, *store_);
    models::EncoderOut out = models::encode_small(tape, params, frame, cfg_);
    return {out.pooled.tokens.value(), out.prepool.tokens.value()};
}

Tensor NetPipelineModel::forecast(const Tensor& prev_pooled, const Tensor& prev_action,
                                  const Tensor& prev_cond) {
    ad::Tape tape;
    ad::BoundParams params(tape, *store_);
    models::TokenGrid grid{tape.leaf(prev_pooled), models::pooled_token_info(), true};
    return models::forecast(tape, params, grid, prev_action, prev_cond, cfg_).tokens.value();
}

ActResult NetPipelineModel::act(const std::vector<Tensor>& pooled_feats, const Tensor& cond,
                                const Tensor& mask_prepool) {
    ad::Tape tape;
    ad::BoundParams params(tape, *store_);
    std::vector<models::TokenGrid> feats;
    for (const Tensor& t : pooled_feats) {
        feats.push_back({tape.leaf(t), models::pooled_token_info(), true});
    }
    models::TokenGrid mask_tokens{tape.leaf(mask_prepool), models::prepool_token_info(), false};
    models::ActionOut out = models::predict_action(tape, params, feats, cond, mask_tokens,
                                                   models::MaskSource::small_model, cfg_);
    return {out.residuals.value(), out.mask_logits.value()};
}

LargeFeatures StubPipelineModel::encode_large(const world::FrameTensor&) {
    return {Tensor::full({8, 4}, 1.0), Tensor::full({32, 4}, 1.0)};
}
LargeFeatures StubPipelineModel::encode_small(const world::FrameTensor&) {
    return {Tensor::full({8, 4}, 2.0), Tensor::full({32, 4}, 2.0)};
}
Tensor StubPipelineModel::forecast(const Tensor& prev_pooled, const Tensor&, const Tensor&) {
    return prev_pooled;
}
ActResult StubPipelineModel::act(const std::vector<Tensor>&, const Tensor&, const Tensor&) {
    return {Tensor({14, 2}), Tensor({world::kMaskRows, world::kMaskCols})};
}

namespace {

struct LargeEntry {
    LargeFeatures feats;
    double ready_ms = 0.0;
    int64_t batch_id = -1;
};

// Completed-results store: the heavy worker appends, the reactive path reads.
class CompletionStore {
public:
    void put_if_first(int64_t id, LargeEntry entry) {
        std::lock_guard<std::mutex> lock(mu_);
        entries_.emplace(id, std::move(entry));  // emplace keeps the first writer
        cv_.notify_all();
    }
    bool contains(int64_t id) const {
        std::lock_guard<std::mutex> lock(mu_);
        return entries_.count(id) > 0;
    }
    LargeEntry get(int64_t id) const {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = entries_.find(id);
        if (it == entries_.end()) throw ContractError("completion store: missing frame " + std::to_string(id));
        return it->second;
    }
    LargeEntry get_blocking(int64_t id) const {
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [&] { return entries_.count(id) > 0; });
        return entries_.at(id);
    }
    void prune_below(int64_t id) {
        std::lock_guard<std::mutex> lock(mu_);
        entries_.erase(entries_.begin(), entries_.lower_bound(id));
    }

private:
    mutable std::mutex mu_;
    mutable std::condition_variable cv_;
    std::map<int64_t, LargeEntry> entries_;
};

struct QueuedFrame {
    int64_t id;
    double arrival_ms;
    world::FrameTensor frame;
};

class TraceSink {
public:
    void push(TraceEvent e) {
        std::lock_guard<std::mutex> lock(mu_);
        events_.push_back(std::move(e));
    }
    std::vector<TraceEvent> take() {
        std::lock_guard<std::mutex> lock(mu_);
        return std::move(events_);
    }

private:
    std::mutex mu_;
    std::vector<TraceEvent> events_;
};

// Shared batch bookkeeping for both execution modes: timing is simulated,
// so the thread variant produces the identical trace.
class BatchWorker {
public:
    BatchWorker(PipelineModel& model, const CostModel& costs, int batch_size, CompletionStore& store,
                TraceSink& trace)
        : model_(model), costs_(costs), batch_size_(batch_size), store_(store), trace_(trace) {}

    void process_batch(std::vector<QueuedFrame>& pending) {
        if (pending.empty()) return;
        const double collect = pending.back().arrival_ms;
        const double start = std::max(collect, last_end_);
        const double end = start + costs_.cost_large(static_cast<int>(pending.size()));
        last_end_ = end;
        const int64_t bid = next_batch_id_++;
        TraceEvent ev_start = make_event(TraceEvent::Kind::batch_start, start);
        ev_start.batch_id = bid;
        for (const QueuedFrame& q : pending) ev_start.frames.push_back(q.id);
        trace_.push(ev_start);
        for (const QueuedFrame& q : pending) {
            store_.put_if_first(q.id, {model_.encode_large(q.frame), end, bid});
        }
        TraceEvent ev_end = make_event(TraceEvent::Kind::batch_end, end);
        ev_end.batch_id = bid;
        trace_.push(ev_end);
        pending.clear();
    }

    // --- synchronous (simulated-interleaving) mode ---
    void offer(QueuedFrame q) {
        pending_.push_back(std::move(q));
        if (static_cast<int>(pending_.size()) >= batch_size_) process_batch(pending_);
    }
    void flush() { process_batch(pending_); }

    // --- true-thread mode ---
    void start_thread() {
        thread_ = std::thread([this] {
            std::vector<QueuedFrame> batch;
            while (true) {
                std::unique_lock<std::mutex> lock(qmu_);
                qcv_.wait(lock, [&] { return !queue_.empty() || closed_; });
                while (!queue_.empty() && static_cast<int>(batch.size()) < batch_size_) {
                    batch.push_back(std::move(queue_.front()));
                    queue_.pop_front();
                }
                const bool flush_now = closed_ && queue_.empty();
                lock.unlock();
                if (static_cast<int>(batch.size()) >= batch_size_ || (flush_now && !batch.empty())) {
                    process_batch(batch);
                }
                if (flush_now && batch.empty()) return;
            }
        });
    }
    void enqueue_threaded(QueuedFrame q) {
        {
            std::lock_guard<std::mutex> lock(qmu_);
            queue_.push_back(std::move(q));
        }
        qcv_.notify_one();
    }
    void close_and_join() {
        {
            std::lock_guard<std::mutex> lock(qmu_);
            closed_ = true;
        }
        qcv_.notify_all();
        if (thread_.joinable()) thread_.join();
    }

private:
    PipelineModel& model_;
    const CostModel& costs_;
    int batch_size_;
    CompletionStore& store_;
    TraceSink& trace_;
    std::vector<QueuedFrame> pending_;
    double last_end_ = 0.0;
    int64_t next_batch_id_ = 0;

    std::thread thread_;
    std::mutex qmu_;
    std::condition_variable qcv_;
    std::deque<QueuedFrame> queue_;
    bool closed_ = false;
};

struct TickSource {
    virtual ~TickSource() = default;
    virtual world::FrameTensor frame() = 0;
    virtual Tensor cond() = 0;
    virtual void advance(const Tensor& action_residuals, double dt_s) = 0;
    virtual bool finished() const = 0;
    virtual world::Pose pose() const = 0;
    virtual world::WorldState final_state() const = 0;
};

struct WorldSource : TickSource {
    world::WorldState state;
    world::CameraModel camera;
    WorldSource(const world::WorldState& s, const world::CameraModel& cam) : state(s), camera(cam) {}
    world::FrameTensor frame() override { return world::render_observation(state, camera); }
    Tensor cond() override { return world::conditioning_of(state).to_tensor(); }
    void advance(const Tensor& action_residuals, double dt_s) override {
        state = world::step_world(state, models::reconstruct_action(action_residuals), dt_s);
    }
    bool finished() const override { return state.collided || state.completed; }
    world::Pose pose() const override { return state.ego; }
    world::WorldState final_state() const override { return state; }
};

struct SyntheticSource : TickSource {
    world::FrameTensor fixed;
    Tensor zero_cond = Tensor({1, 5});
    world::FrameTensor frame() override { return fixed; }
    Tensor cond() override { return zero_cond; }
    void advance(const Tensor&, double) override {}
    bool finished() const override { return false; }
    world::Pose pose() const override { return {}; }
    world::WorldState final_state() const override { return {}; }
};

EpisodeResult run_pipeline_impl(TickSource& source, int max_ticks, PipelineModel& model,
                                const CostModel& costs, const PipelineConfig& cfg, Mode mode,
                                const PipelineOptions& opts) {
    const int d = cfg.delta_ticks();
    const double tick = cfg.tick_ms;
    const double reactive = reactive_cost_ms(mode, costs);
    const bool worker_mode = uses_large_worker(mode);

    int batch_size = 1;
    if (worker_mode) {
        BatchPlan plan = plan_schedule(costs, cfg);
        if (cfg.batch > 0) {
            if (cfg.batch > static_cast<int>(plan.checks.size()) ||
                !plan.checks[static_cast<size_t>(cfg.batch - 1)].throughput_ok ||
                !plan.checks[static_cast<size_t>(cfg.batch - 1)].staleness_ok) {
                throw InfeasibleError("run_pipeline: forced batch size " + std::to_string(cfg.batch) +
                                      " violates the schedule constraints");
            }
            batch_size = cfg.batch;
        } else {
            if (!plan.feasible) throw InfeasibleError("run_pipeline: " + plan.describe());
            batch_size = plan.batch;
        }
    }

    EpisodeResult result;
    result.reactive_cost_ms = reactive;
    CompletionStore store;
    TraceSink trace;
    BatchWorker worker(model, costs, batch_size, store, trace);
    if (worker_mode && opts.threaded) worker.start_thread();

    std::vector<Tensor> conds;
    conds.reserve(static_cast<size_t>(max_ticks));
    const Tensor zero_action({14, 2});

    for (int64_t k = 0; k < max_ticks; ++k) {
        const double t = static_cast<double>(k) * tick;
        world::FrameTensor frame = source.frame();
        Tensor cond = source.cond();
        conds.push_back(cond);

        TraceEvent ev_in = make_event(TraceEvent::Kind::frame_in, t);
        ev_in.tick = k;
        ev_in.frame = k;
        ev_in.detail = worker_mode ? "enqueued" : "observed";
        trace.push(ev_in);

        if (worker_mode) {
            if (k == 0) {
                // designated bootstrap so warm-up ticks have a completed result
                store.put_if_first(0, {model.encode_large(frame), 0.0, -1});
                TraceEvent ev = make_event(TraceEvent::Kind::bootstrap, 0.0);
                ev.tick = 0;
                ev.frame = 0;
                trace.push(ev);
            }
            QueuedFrame q{k, t, frame};
            if (opts.threaded) {
                worker.enqueue_threaded(std::move(q));
            } else {
                worker.offer(std::move(q));
            }
        }

        // ---- reactive path (numerics independent of the timing model) ----
        Tensor action;
        Tensor mask;
        if (worker_mode) {
            const int64_t j = std::max<int64_t>(0, k - d);
            LargeEntry entry = opts.threaded ? store.get_blocking(j) : store.get(j);
            if (entry.ready_ms > t + 1e-9) {
                TraceEvent ev = make_event(TraceEvent::Kind::deadline_miss, t);
                ev.tick = k;
                ev.frame = j;
                ev.detail = "large result unavailable";
                trace.push(ev);
                ++result.deadline_misses;
            }
            TraceEvent fuse = make_event(TraceEvent::Kind::fuse, t);
            fuse.tick = k;
            fuse.frame = j;
            fuse.staleness_ms = t - static_cast<double>(j) * tick;
            trace.push(fuse);

            const Tensor& prev_cond = (j == k) ? cond : conds[static_cast<size_t>(j)];
            const Tensor& prev_action = (j == k) ? zero_action : result.actions[static_cast<size_t>(j)];
            LargeFeatures small;
            if (mode != Mode::no_small) small = model.encode_small(frame);
            switch (mode) {
                case Mode::full:
                case Mode::no_mask: {
                    Tensor fhat = model.forecast(entry.feats.pooled, prev_action, prev_cond);
                    ActResult a = model.act({fhat, small.pooled}, cond, small.prepool);
                    action = a.residuals;
                    mask = a.mask_logits;
                    break;
                }
                case Mode::no_forecast: {
                    ActResult a = model.act({entry.feats.pooled, small.pooled}, cond, small.prepool);
                    action = a.residuals;
                    mask = a.mask_logits;
                    break;
                }
                case Mode::no_small: {
                    Tensor fhat = model.forecast(entry.feats.pooled, prev_action, prev_cond);
                    ActResult a = model.act({fhat}, cond, entry.feats.prepool);
                    action = a.residuals;
                    mask = a.mask_logits;
                    break;
                }
                default: throw ContractError("run_pipeline: unexpected worker mode");
            }
            store.prune_below(std::max<int64_t>(0, j - 1));
        } else {
            LargeFeatures small;
            switch (mode) {
                case Mode::base: {
                    LargeFeatures big = model.encode_large(frame);
                    ActResult a = model.act({big.pooled}, cond, big.prepool);
                    action = a.residuals;
                    mask = a.mask_logits;
                    break;
                }
                case Mode::small_only: {
                    small = model.encode_small(frame);
                    ActResult a = model.act({small.pooled}, cond, small.prepool);
                    action = a.residuals;
                    mask = a.mask_logits;
                    break;
                }
                case Mode::gt_forecast:
                case Mode::gt_forecast_test_only: {
                    LargeFeatures big = model.encode_large(frame);
                    small = model.encode_small(frame);
                    ActResult a = model.act({big.pooled, small.pooled}, cond, small.prepool);
                    action = a.residuals;
                    mask = a.mask_logits;
                    break;
                }
                default: throw ContractError("run_pipeline: unexpected reactive mode");
            }
        }

        if (reactive > tick + 1e-9) {
            TraceEvent ev = make_event(TraceEvent::Kind::deadline_miss, t);
            ev.tick = k;
            ev.detail = "reactive path exceeds tick budget";
            trace.push(ev);
            ++result.deadline_misses;
        }
        TraceEvent out = make_event(TraceEvent::Kind::act_out, t + reactive);
        out.tick = k;
        trace.push(out);

        result.actions.push_back(action);
        if (opts.record_masks) result.mask_logits.push_back(mask);
        if (opts.record_frames) result.frames.push_back(frame);
        source.advance(action, tick / 1000.0);
        result.ego_poses.push_back(source.pose());
        result.ticks = static_cast<int>(k) + 1;
        if (source.finished()) break;
    }

    if (worker_mode) {
        if (opts.threaded) {
            worker.close_and_join();
        } else {
            worker.flush();
        }
    }
    result.trace.events = trace.take();
    sort_events(result.trace.events);
    world::WorldState final_state = source.final_state();
    result.collided = final_state.collided;
    result.completed = final_state.completed;
    result.final_state = std::move(final_state);
    return result;
}

}  // namespace

EpisodeResult run_pipeline(const world::Scenario& scenario, PipelineModel& model, const CostModel& costs,
                           const PipelineConfig& cfg, Mode mode, const PipelineOptions& opts) {
    WorldSource source(scenario.initial, opts.camera);
    int max_ticks = opts.max_ticks > 0
                        ? opts.max_ticks
                        : static_cast<int>(std::llround(scenario.duration * 1000.0 / cfg.tick_ms));
    return run_pipeline_impl(source, max_ticks, model, costs, cfg, mode, opts);
}

EpisodeResult run_pipeline_synthetic(int ticks, PipelineModel& model, const CostModel& costs,
                                     const PipelineConfig& cfg, Mode mode, const PipelineOptions& opts) {
    SyntheticSource source;
    return run_pipeline_impl(source, ticks, model, costs, cfg, mode, opts);
}

}  // namespace eta::sched
