#include "eta/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace eta::harness {

using ad::BoundParams;
using ad::Gradients;
using ad::ParamStore;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

constexpr int kFrameBytes = world::kFrameChannels * world::kFrameHeight * world::kFrameWidth;
constexpr double kAmax = 8.0;  // WorldParams default the accel bands refer to

std::vector<uint8_t> pack_frame(const world::FrameTensor& f) {
    std::vector<uint8_t> out(kFrameBytes);
    for (int64_t i = 0; i < f.t.numel(); ++i) out[static_cast<size_t>(i)] = f.t[i] > 0.5 ? 1 : 0;
    return out;
}

uint32_t pack_mask(const world::PatchMask& m) {
    uint32_t bits = 0;
    for (int r = 0; r < world::kMaskRows; ++r)
        for (int c = 0; c < world::kMaskCols; ++c)
            if (m.cells[static_cast<size_t>(r)][static_cast<size_t>(c)]) bits |= 1u << (r * world::kMaskCols + c);
    return bits;
}

world::PatchMask unpack_mask(uint32_t bits) {
    world::PatchMask m;
    for (int r = 0; r < world::kMaskRows; ++r)
        for (int c = 0; c < world::kMaskCols; ++c)
            m.cells[static_cast<size_t>(r)][static_cast<size_t>(c)] = bits & (1u << (r * world::kMaskCols + c));
    return m;
}

}  // namespace

world::FrameTensor Sample::frame(bool current) const {
    const std::vector<uint8_t>& src = current ? frame_cur : frame_prev;
    world::FrameTensor f;
    for (int64_t i = 0; i < f.t.numel(); ++i) f.t[i] = src[static_cast<size_t>(i)] ? 1.0 : 0.0;
    return f;
}

const std::vector<Bucket>& standard_buckets() {
    static const std::vector<Bucket> buckets = {
        {"accel_from_scratch", 1.0},  // stationary (speed < 0.05) and pulling away
        {"light_accel", 2.0},         // 0.2 a_max < accel <= 0.5 a_max
        {"medium_accel", 2.0},        // 0.5 a_max < accel <= 0.9 a_max
        {"strong_accel", 1.0},        // accel > 0.9 a_max
        {"braking", 1.0},
        {"steer_left", 3.0},
        {"steer_right", 3.0},
        {"front_vehicle_hazard", 1.0},
        {"rear_vehicle_hazard", 1.0},
        {"side_vehicle_hazard", 1.0},
        {"red_light", 1.0},
        {"swerving", 1.0},   // episodes scripted around an on-route obstacle
        {"crossing", 1.0},   // episodes with crossing traffic
        {"default", 1.0},  // uneventful driving, the paper's coasting case
    };
    return buckets;
}

namespace {

int bucket_index(const std::string& name) {
    const auto& buckets = standard_buckets();
    for (size_t i = 0; i < buckets.size(); ++i) {
        if (buckets[i].name == name) return static_cast<int>(i);
    }
    throw ContractError("unknown bucket '" + name + "'");
}

}  // namespace

std::vector<int> assign_buckets(const Sample& sample) {
    std::vector<int> out;
    auto add = [&](const char* name) { out.push_back(bucket_index(name)); };

    if (sample.speed < 0.05 && sample.accel > 0.2) add("accel_from_scratch");
    if (sample.accel > 0.2 * kAmax && sample.accel <= 0.5 * kAmax) add("light_accel");
    if (sample.accel > 0.5 * kAmax && sample.accel <= 0.9 * kAmax) add("medium_accel");
    if (sample.accel > 0.9 * kAmax) add("strong_accel");
    if (sample.accel < -0.1 * kAmax) add("braking");

    // steering from the expert plan's lateral excursion
    const world::ActionPlan plan =
        world::reconstruct_action(world::residuals_from_tensor(sample.expert_cur));
    const double lateral = plan.path[world::ActionPlan::kPathPoints - 1].y;
    if (lateral > 0.35) add("steer_left");
    if (lateral < -0.35) add("steer_right");

    if (sample.front_hazard) add("front_vehicle_hazard");
    if (sample.rear_hazard) add("rear_vehicle_hazard");
    if (sample.side_hazard) add("side_vehicle_hazard");
    if (sample.red_light_near) add("red_light");
    for (const std::string& kind : sample.hazard_kinds) {
        if (kind == "oncoming" || kind == "slow_merge") add("swerving");
        if (kind == "crossing") add("crossing");
    }

    if (out.empty()) add("default");
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

namespace {

// constant-velocity conflict cones over a 2 s horizon
void hazard_cones(const world::WorldState& state, Sample& sample) {
    const double ch = std::cos(state.ego.heading), sh = std::sin(state.ego.heading);
    for (const world::Npc& npc : state.npcs) {
        const double nvx = npc.pose.speed * std::cos(npc.pose.heading);
        const double nvy = npc.pose.speed * std::sin(npc.pose.heading);
        const double evx = state.ego.speed * ch;
        const double evy = state.ego.speed * sh;
        for (double tau = 0.0; tau <= 2.0; tau += 0.1) {
            const double dx = (npc.pose.x + nvx * tau) - (state.ego.x + evx * tau);
            const double dy = (npc.pose.y + nvy * tau) - (state.ego.y + evy * tau);
            if (std::hypot(dx, dy) < 2.6) {
                const double bearing = std::atan2(-sh * dx + ch * dy, ch * dx + sh * dy);
                const double deg = std::fabs(bearing) * 180.0 / 3.14159265358979323846;
                if (deg < 30.0) {
                    sample.front_hazard = true;
                } else if (deg > 150.0) {
                    sample.rear_hazard = true;
                } else {
                    sample.side_hazard = true;
                }
                break;
            }
        }
    }
}

}  // namespace

Dataset collect_dataset(const std::vector<world::Scenario>& suite, int delta_ticks, double tick_s,
                        const world::CameraModel& cam) {
    if (delta_ticks < 1) throw ConfigError("collect_dataset: delta_ticks must be >= 1");
    Dataset dataset;
    dataset.delta_ticks = delta_ticks;
    dataset.tick_s = tick_s;

    for (const world::Scenario& sc : suite) {
        world::WorldState state = sc.initial;
        const int max_ticks = static_cast<int>(std::llround(sc.duration / tick_s));

        struct TickRec {
            std::vector<uint8_t> frame;
            Tensor cond;
            Tensor expert;
            world::PatchMask mask;
            double speed;
            double accel = 0.0;
            bool front = false, rear = false, side = false, red = false;
        };
        std::vector<TickRec> recs;
        for (int k = 0; k < max_ticks; ++k) {
            world::ActionPlan plan = world::expert_policy(state);
            TickRec rec;
            rec.frame = pack_frame(world::render_observation(state, cam));
            rec.cond = world::conditioning_of(state).to_tensor();
            rec.expert = world::residuals_to_tensor(world::to_residuals(plan));
            rec.mask = world::action_to_mask(plan, cam);
            rec.speed = state.ego.speed;
            Sample probe;
            hazard_cones(state, probe);
            rec.front = probe.front_hazard;
            rec.rear = probe.rear_hazard;
            rec.side = probe.side_hazard;
            if (state.light.present && state.light.red) {
                const double dx = state.light.stop_line.x - state.ego.x;
                rec.red = dx > -1.0 && dx <= 15.0;
            }
            recs.push_back(std::move(rec));

            state = world::step_world(state, plan, tick_s);
            if (state.collided) {
                throw Error("collect_dataset: expert collided in episode " + sc.name);
            }
            recs.back().accel = (state.ego.speed - recs.back().speed) / tick_s;
            if (state.completed) break;
        }

        for (size_t k = static_cast<size_t>(delta_ticks); k < recs.size(); ++k) {
            const TickRec& cur = recs[k];
            const TickRec& prev = recs[k - static_cast<size_t>(delta_ticks)];
            Sample s;
            s.frame_cur = cur.frame;
            s.frame_prev = prev.frame;
            s.cond_cur = cur.cond;
            s.cond_prev = prev.cond;
            s.expert_cur = cur.expert;
            s.expert_prev = prev.expert;
            s.mask_cur = cur.mask;
            s.mask_prev = prev.mask;
            s.scenario_kind = world::to_string(sc.kind);
            s.scenario_seed = sc.seed;
            s.tick = static_cast<int>(k);
            s.speed = cur.speed;
            s.accel = cur.accel;
            s.front_hazard = cur.front;
            s.rear_hazard = cur.rear;
            s.side_hazard = cur.side;
            s.red_light_near = cur.red;
            for (const world::HazardEvent& h : sc.initial.hazards) s.hazard_kinds.push_back(h.kind);
            s.buckets = assign_buckets(s);
            dataset.samples.push_back(std::move(s));
        }
    }
    return dataset;
}

namespace {

constexpr char kDatasetMagic[4] = {'E', 'T', 'A', 'D'};

template <typename T>
void wr(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T rd(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw Error("dataset: truncated file");
    return v;
}
void wr_str(std::ostream& os, const std::string& s) {
    wr(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::string rd_str(std::istream& is) {
    const uint32_t n = rd<uint32_t>(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw Error("dataset: truncated string");
    return s;
}
void wr_tensor(std::ostream& os, const Tensor& t) {
    wr(os, static_cast<uint32_t>(t.rank()));
    for (int64_t e : t.shape()) wr(os, static_cast<uint64_t>(e));
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * 8));
}
Tensor rd_tensor(std::istream& is) {
    const uint32_t rank = rd<uint32_t>(is);
    ad::Shape shape;
    for (uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int64_t>(rd<uint64_t>(is)));
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * 8));
    if (!is) throw Error("dataset: truncated tensor");
    return t;
}

}  // namespace

void Dataset::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("dataset: cannot open '" + path + "' for writing");
    os.write(kDatasetMagic, 4);
    wr<uint32_t>(os, 1);  // version
    wr<uint64_t>(os, samples.size());
    wr<int32_t>(os, delta_ticks);
    wr<double>(os, tick_s);
    for (const Sample& s : samples) {
        std::ostringstream body;
        wr_str(body, s.scenario_kind);
        wr<uint64_t>(body, s.scenario_seed);
        wr<int32_t>(body, s.tick);
        wr<double>(body, s.speed);
        wr<double>(body, s.accel);
        const uint8_t flags = static_cast<uint8_t>((s.front_hazard ? 1 : 0) | (s.rear_hazard ? 2 : 0) |
                                                   (s.side_hazard ? 4 : 0) | (s.red_light_near ? 8 : 0));
        wr<uint8_t>(body, flags);
        wr<uint32_t>(body, static_cast<uint32_t>(s.hazard_kinds.size()));
        for (const std::string& h : s.hazard_kinds) wr_str(body, h);
        body.write(reinterpret_cast<const char*>(s.frame_cur.data()), kFrameBytes);
        body.write(reinterpret_cast<const char*>(s.frame_prev.data()), kFrameBytes);
        wr_tensor(body, s.cond_cur);
        wr_tensor(body, s.cond_prev);
        wr_tensor(body, s.expert_cur);
        wr_tensor(body, s.expert_prev);
        wr<uint32_t>(body, pack_mask(s.mask_cur));
        wr<uint32_t>(body, pack_mask(s.mask_prev));
        const std::string payload = body.str();
        wr<uint64_t>(os, payload.size());
        os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    }
    if (!os) throw Error("dataset: write failed for '" + path + "'");
}

Dataset Dataset::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("dataset: cannot open '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kDatasetMagic, 4) != 0) throw Error("dataset: bad magic");
    const uint32_t version = rd<uint32_t>(is);
    if (version != 1) throw Error("dataset: unsupported version " + std::to_string(version));
    Dataset dataset;
    const uint64_t count = rd<uint64_t>(is);
    dataset.delta_ticks = rd<int32_t>(is);
    dataset.tick_s = rd<double>(is);
    dataset.samples.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        rd<uint64_t>(is);  // record length (layout is self-describing)
        Sample s;
        s.scenario_kind = rd_str(is);
        s.scenario_seed = rd<uint64_t>(is);
        s.tick = rd<int32_t>(is);
        s.speed = rd<double>(is);
        s.accel = rd<double>(is);
        const uint8_t flags = rd<uint8_t>(is);
        s.front_hazard = flags & 1;
        s.rear_hazard = flags & 2;
        s.side_hazard = flags & 4;
        s.red_light_near = flags & 8;
        const uint32_t nh = rd<uint32_t>(is);
        for (uint32_t h = 0; h < nh; ++h) s.hazard_kinds.push_back(rd_str(is));
        s.frame_cur.resize(kFrameBytes);
        is.read(reinterpret_cast<char*>(s.frame_cur.data()), kFrameBytes);
        s.frame_prev.resize(kFrameBytes);
        is.read(reinterpret_cast<char*>(s.frame_prev.data()), kFrameBytes);
        s.cond_cur = rd_tensor(is);
        s.cond_prev = rd_tensor(is);
        s.expert_cur = rd_tensor(is);
        s.expert_prev = rd_tensor(is);
        s.mask_cur = unpack_mask(rd<uint32_t>(is));
        s.mask_prev = unpack_mask(rd<uint32_t>(is));
        if (!is) throw Error("dataset: truncated sample");
        s.buckets = assign_buckets(s);
        dataset.samples.push_back(std::move(s));
    }
    return dataset;
}

WeightedSampler::WeightedSampler(const Dataset& dataset, const std::vector<Bucket>& buckets,
                                 uint64_t seed)
    : dataset_(&dataset), buckets_(buckets), rng_(seed ^ 0xa11ce5eedull) {
    members_.resize(buckets.size());
    for (size_t i = 0; i < dataset.samples.size(); ++i) {
        for (int b : dataset.samples[i].buckets) {
            if (b < 0 || static_cast<size_t>(b) >= buckets.size()) {
                throw ContractError("weighted_sampler: bucket index out of range");
            }
            members_[static_cast<size_t>(b)].push_back(i);
        }
    }
    double acc = 0.0;
    for (size_t b = 0; b < buckets.size(); ++b) {
        if (members_[b].empty()) {
            warnings_.push_back("bucket '" + buckets[b].name + "' is empty; excluded from the draw");
            continue;
        }
        if (buckets[b].weight <= 0.0) throw ConfigError("bucket weight must be positive");
        active_.push_back(static_cast<int>(b));
        acc += buckets[b].weight;
        cumulative_.push_back(acc);
    }
    if (active_.empty()) throw Error("weighted_sampler: dataset populates no buckets");
}

double WeightedSampler::active_weight(int bucket_index) const {
    double total = cumulative_.empty() ? 0.0 : cumulative_.back();
    return buckets_[static_cast<size_t>(bucket_index)].weight / total;
}

WeightedSampler::Draw WeightedSampler::next() {
    const double r = rng_.uniform() * cumulative_.back();
    size_t lo = std::lower_bound(cumulative_.begin(), cumulative_.end(), r) - cumulative_.begin();
    if (lo >= active_.size()) lo = active_.size() - 1;
    const int bucket = active_[lo];
    const std::vector<size_t>& pool = members_[static_cast<size_t>(bucket)];
    const size_t pick = pool[rng_.uniform_int(pool.size())];
    return {pick, bucket};
}

double cosine_restart_lr(double lr_max, int step, int total_steps, int restarts) {
    if (total_steps <= 0 || step < 0 || step >= total_steps) {
        throw ContractError("cosine_restart_lr: step out of range");
    }
    const int segments = restarts + 1;
    const int base_len = total_steps / segments;
    if (base_len < 1) throw ConfigError("cosine_restart_lr: too few steps for the restart count");
    // the final segment absorbs the remainder
    const int seg = std::min(step / base_len, segments - 1);
    const int seg_start = seg * base_len;
    const int seg_len = (seg == segments - 1) ? (total_steps - seg_start) : base_len;
    const double tau = static_cast<double>(step - seg_start) / static_cast<double>(seg_len);
    return lr_max * 0.5 * (1.0 + std::cos(3.14159265358979323846 * tau));
}

void Adam::step(ParamStore& params, const std::map<std::string, Tensor>& grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const auto& [name, g] : grads) {
        Tensor& p = params.at(name);
        if (!p.same_shape(g)) throw DimensionError("adam: gradient shape mismatch for '" + name + "'");
        auto mit = m_.find(name);
        if (mit == m_.end()) {
            mit = m_.emplace(name, Tensor(g.shape())).first;
            v_.emplace(name, Tensor(g.shape()));
        }
        Tensor& m = mit->second;
        Tensor& v = v_.at(name);
        for (int64_t i = 0; i < g.numel(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

namespace {

struct SampleLoss {
    Var total;
    double action_l = 0.0;
    double mask_l = 0.0;
    double forecast_l = 0.0;
};

// one sample's loss graph for the given training wiring
SampleLoss sample_loss(Tape& tape, BoundParams& params, const Sample& s, const TrainConfig& cfg) {
    const models::ModelConfig& mc = cfg.model;
    const losses::LossWeights& w = cfg.weights;
    SampleLoss out;
    Var expert = tape.leaf(s.expert_cur);

    if (cfg.kind == TrainKind::base) {
        models::EncoderOut enc = models::encode_large(tape, params, s.frame(true), mc);
        models::ActionOut act = models::predict_action(tape, params, {enc.pooled}, s.cond_cur,
                                                       enc.prepool, models::MaskSource::large_model, mc);
        Var action_l = losses::action_loss(act.residuals, expert);
        Var mask_l = losses::mask_loss(act.mask_logits, s.mask_cur);
        out.total = losses::total_base(action_l, mask_l, w);
        out.action_l = action_l.value().item();
        out.mask_l = mask_l.value().item();
        return out;
    }

    switch (cfg.mode) {
        case sched::Mode::full:
        case sched::Mode::no_mask: {
            models::EncoderOut large_prev = models::encode_large(tape, params, s.frame(false), mc);
            models::TokenGrid fhat =
                models::forecast(tape, params, large_prev.pooled, s.expert_prev, s.cond_prev, mc);
            models::EncoderOut small_cur = models::encode_small(tape, params, s.frame(true), mc);
            models::ActionOut act =
                models::predict_action(tape, params, {fhat, small_cur.pooled}, s.cond_cur,
                                       small_cur.prepool, models::MaskSource::small_model, mc);
            Var action_l = losses::action_loss(act.residuals, expert);
            Var mask_l = losses::mask_loss(act.mask_logits, s.mask_cur);
            out.action_l = action_l.value().item();
            out.mask_l = mask_l.value().item();
            if (cfg.detach_forecast_branch) {
                out.total = losses::total_base(action_l, mask_l, w);
                return out;
            }
            models::EncoderOut large_cur = models::encode_large(tape, params, s.frame(true), mc);
            Var gt = tape.stop_grad(large_cur.pooled.tokens);
            Var forecast_l = losses::forecast_loss(gt, fhat.tokens);
            out.forecast_l = forecast_l.value().item();
            if (cfg.mode == sched::Mode::no_mask) {
                out.total = ad::add(action_l, ad::scale(forecast_l, w.lambda_forecast));
            } else {
                out.total = losses::total_async(action_l, mask_l, act.mask_source, forecast_l, w);
            }
            return out;
        }
        case sched::Mode::no_forecast: {
            models::EncoderOut large_prev = models::encode_large(tape, params, s.frame(false), mc);
            models::EncoderOut small_cur = models::encode_small(tape, params, s.frame(true), mc);
            models::ActionOut act =
                models::predict_action(tape, params, {large_prev.pooled, small_cur.pooled}, s.cond_cur,
                                       small_cur.prepool, models::MaskSource::small_model, mc);
            Var action_l = losses::action_loss(act.residuals, expert);
            Var mask_l = losses::mask_loss(act.mask_logits, s.mask_cur);
            out.total = losses::total_base(action_l, mask_l, w);
            out.action_l = action_l.value().item();
            out.mask_l = mask_l.value().item();
            return out;
        }
        case sched::Mode::no_small: {
            // without the small model the mask supervision falls back to the
            // stale frame's patch tokens and its own mask target
            models::EncoderOut large_prev = models::encode_large(tape, params, s.frame(false), mc);
            models::TokenGrid fhat =
                models::forecast(tape, params, large_prev.pooled, s.expert_prev, s.cond_prev, mc);
            models::ActionOut act = models::predict_action(tape, params, {fhat}, s.cond_cur,
                                                           large_prev.prepool,
                                                           models::MaskSource::large_model, mc);
            Var action_l = losses::action_loss(act.residuals, expert);
            Var mask_l = losses::mask_loss(act.mask_logits, s.mask_prev);
            models::EncoderOut large_cur = models::encode_large(tape, params, s.frame(true), mc);
            Var gt = tape.stop_grad(large_cur.pooled.tokens);
            Var forecast_l = losses::forecast_loss(gt, fhat.tokens);
            out.total = ad::add(ad::add(action_l, ad::scale(mask_l, w.lambda_mask)),
                                ad::scale(forecast_l, w.lambda_forecast));
            out.action_l = action_l.value().item();
            out.mask_l = mask_l.value().item();
            out.forecast_l = forecast_l.value().item();
            return out;
        }
        case sched::Mode::small_only: {
            models::EncoderOut small_cur = models::encode_small(tape, params, s.frame(true), mc);
            models::ActionOut act =
                models::predict_action(tape, params, {small_cur.pooled}, s.cond_cur, small_cur.prepool,
                                       models::MaskSource::small_model, mc);
            Var action_l = losses::action_loss(act.residuals, expert);
            Var mask_l = losses::mask_loss(act.mask_logits, s.mask_cur);
            out.total = losses::total_base(action_l, mask_l, w);
            out.action_l = action_l.value().item();
            out.mask_l = mask_l.value().item();
            return out;
        }
        case sched::Mode::gt_forecast: {
            models::EncoderOut large_cur = models::encode_large(tape, params, s.frame(true), mc);
            models::EncoderOut small_cur = models::encode_small(tape, params, s.frame(true), mc);
            models::ActionOut act =
                models::predict_action(tape, params, {large_cur.pooled, small_cur.pooled}, s.cond_cur,
                                       small_cur.prepool, models::MaskSource::small_model, mc);
            Var action_l = losses::action_loss(act.residuals, expert);
            Var mask_l = losses::mask_loss(act.mask_logits, s.mask_cur);
            out.total = losses::total_base(action_l, mask_l, w);
            out.action_l = action_l.value().item();
            out.mask_l = mask_l.value().item();
            return out;
        }
        case sched::Mode::gt_forecast_test_only:
            throw ConfigError("train: gt_forecast_test_only reuses the full-mode checkpoint");
        default:
            throw ConfigError("train: mode '" + sched::to_string(cfg.mode) + "' is not trainable");
    }
}

}  // namespace

TrainResult train(const Dataset& dataset, const TrainConfig& cfg) {
    if (dataset.samples.empty()) throw Error("train: empty dataset");
    Rng init_rng(cfg.seed * 7919 + 17);
    TrainResult result{models::init_params(cfg.model, init_rng), {}};
    WeightedSampler sampler(dataset, standard_buckets(), cfg.seed);
    Adam adam;

    for (int step = 0; step < cfg.steps; ++step) {
        const double lr = cosine_restart_lr(cfg.lr, step, cfg.steps, cfg.restarts);
        Tape tape;
        BoundParams params(tape, result.params);
        std::vector<Var> totals;
        StepRecord rec{step, lr, 0.0, 0.0, 0.0, 0.0};
        for (int b = 0; b < cfg.batch; ++b) {
            const Sample& s = dataset.samples[sampler.next().sample_index];
            SampleLoss sl;
            try {
                sl = sample_loss(tape, params, s, cfg);
            } catch (const NumericError& e) {
                throw NumericError("train: non-finite loss at step " + std::to_string(step) + ": " +
                                   e.what());
            }
            totals.push_back(sl.total);
            rec.action_l += sl.action_l / cfg.batch;
            rec.mask_l += sl.mask_l / cfg.batch;
            rec.forecast_l += sl.forecast_l / cfg.batch;
        }
        Var batch_total = totals[0];
        for (size_t i = 1; i < totals.size(); ++i) batch_total = ad::add(batch_total, totals[i]);
        batch_total = ad::scale(batch_total, 1.0 / static_cast<double>(cfg.batch));
        rec.total = batch_total.value().item();
        if (!std::isfinite(rec.total)) {
            throw NumericError("train: non-finite total loss at step " + std::to_string(step) +
                               " (action " + std::to_string(rec.action_l) + ", mask " +
                               std::to_string(rec.mask_l) + ", forecast " +
                               std::to_string(rec.forecast_l) + ")");
        }
        Gradients grads = tape.backward(batch_total);
        std::map<std::string, Tensor> by_name;
        for (const auto& [name, var] : params.bound()) {
            const Tensor* g = grads.raw(var.id());
            if (g && g->numel() > 0) by_name.emplace(name, *g);
        }
        adam.step(result.params, by_name, lr);
        result.curve.push_back(rec);
    }
    return result;
}

Metrics evaluate_closed_loop(const ParamStore& params, const models::ModelConfig& mcfg,
                             sched::Mode mode, const std::vector<world::Scenario>& suite,
                             const EvalConfig& cfg) {
    if (sched::uses_large_worker(mode)) {
        sched::BatchPlan plan = sched::plan_schedule(cfg.costs, cfg.pipeline);
        if (!plan.feasible) {
            throw sched::InfeasibleError("evaluate_closed_loop: " + plan.describe());
        }
    }
    Metrics metrics;
    metrics.episodes = static_cast<int>(suite.size());
    metrics.reactive_ms = sched::reactive_cost_ms(mode, cfg.costs);
    metrics.detail.resize(suite.size());

    const int jobs = std::max(1, cfg.parallelism);
    std::vector<std::thread> pool;
    std::atomic<size_t> cursor{0};
    auto worker = [&]() {
        sched::NetPipelineModel model(params, mcfg);
        while (true) {
            const size_t i = cursor.fetch_add(1);
            if (i >= suite.size()) return;
            const world::Scenario& sc = suite[i];
            sched::EpisodeResult res = sched::run_pipeline(sc, model, cfg.costs, cfg.pipeline, mode,
                                                           {.threaded = cfg.threaded, .camera = cfg.camera});
            EpisodeMetric em;
            em.scenario = sc.name;
            em.seed = sc.seed;
            em.collided = res.collided;
            em.completed = res.completed;
            em.deadline_misses = res.deadline_misses;
            em.ticks = res.ticks;
            em.success = res.completed && !res.collided && res.deadline_misses == 0;
            double route_len = 0.0;
            const auto& route = sc.initial.route;
            for (size_t r = 0; r + 1 < route.size(); ++r) route_len += (route[r + 1] - route[r]).norm();
            double progress = 0.0;
            if (!res.ego_poses.empty()) {
                // arc progress of the closest route point to the final pose
                const world::Pose& fin = res.ego_poses.back();
                double best = 1e18;
                double arc = 0.0, best_arc = 0.0;
                for (size_t r = 0; r + 1 < route.size(); ++r) {
                    const world::Vec2 a = route[r], b = route[r + 1];
                    const world::Vec2 ab = b - a;
                    const double len = ab.norm();
                    const int steps = std::max(1, static_cast<int>(len));
                    for (int q = 0; q <= steps; ++q) {
                        const world::Vec2 p = a + ab * (static_cast<double>(q) / steps);
                        const double dd = std::hypot(p.x - fin.x, p.y - fin.y);
                        if (dd < best) {
                            best = dd;
                            best_arc = arc + len * (static_cast<double>(q) / steps);
                        }
                    }
                    arc += len;
                }
                progress = route_len > 0.0 ? best_arc / route_len : 0.0;
            }
            em.route_completion = res.completed ? 1.0 : std::min(1.0, progress);
            metrics.detail[i] = em;
        }
    };
    if (jobs == 1) {
        worker();
    } else {
        for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }

    std::map<std::string, std::pair<int, int>> per_kind;  // kind -> (successes, total)
    for (const EpisodeMetric& em : metrics.detail) {
        metrics.success_rate += em.success ? 1.0 : 0.0;
        metrics.collision_rate += em.collided ? 1.0 : 0.0;
        metrics.completion_rate += em.completed ? 1.0 : 0.0;
        metrics.mean_route_completion += em.route_completion;
        const std::string kind = em.scenario.substr(0, em.scenario.find('/'));
        per_kind[kind].first += em.success ? 1 : 0;
        per_kind[kind].second += 1;
    }
    const double n = std::max<size_t>(1, suite.size());
    metrics.success_rate /= n;
    metrics.collision_rate /= n;
    metrics.completion_rate /= n;
    metrics.mean_route_completion /= n;
    for (const auto& [kind, sc] : per_kind) {
        metrics.per_kind_sr[kind] = static_cast<double>(sc.first) / std::max(1, sc.second);
    }
    return metrics;
}

SeedAggregate aggregate(const std::vector<double>& values) {
    SeedAggregate out;
    if (values.empty()) return out;
    for (double v : values) out.mean += v;
    out.mean /= static_cast<double>(values.size());
    for (double v : values) out.stddev += (v - out.mean) * (v - out.mean);
    out.stddev = std::sqrt(out.stddev / static_cast<double>(values.size()));
    return out;
}

std::vector<AblationRow> run_ablation_matrix(const std::map<sched::Mode, ParamStore>& checkpoints,
                                             const models::ModelConfig& mcfg,
                                             const std::vector<world::Scenario>& suite,
                                             const EvalConfig& cfg) {
    using sched::Mode;
    const std::vector<std::pair<std::string, Mode>> rows = {
        {"", Mode::base},        {"", Mode::full},        {"A", Mode::no_forecast},
        {"B", Mode::no_small},   {"C", Mode::no_mask},    {"D", Mode::small_only},
        {"E", Mode::gt_forecast}, {"F", Mode::gt_forecast_test_only},
    };
    std::vector<std::string> missing;
    for (const auto& [id, mode] : rows) {
        const Mode ckpt_mode = mode == Mode::gt_forecast_test_only ? Mode::full : mode;
        if (!checkpoints.count(ckpt_mode)) missing.push_back(sched::to_string(ckpt_mode));
    }
    if (!missing.empty()) {
        std::sort(missing.begin(), missing.end());
        missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
        std::string msg = "run_ablation_matrix: modes still to train:";
        for (const std::string& m : missing) msg += " " + m;
        throw Error(msg);
    }
    std::vector<AblationRow> out;
    for (const auto& [id, mode] : rows) {
        const Mode ckpt_mode = mode == Mode::gt_forecast_test_only ? Mode::full : mode;
        AblationRow row;
        row.id = id;
        row.mode = mode;
        row.latency_ms = sched::reactive_cost_ms(mode, cfg.costs);
        row.metrics = evaluate_closed_loop(checkpoints.at(ckpt_mode), mcfg, mode, suite, cfg);
        out.push_back(std::move(row));
    }
    return out;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << "ID  Mode                   SR%    Coll%  Compl%  Route%  Latency(ms)\n";
    for (const AblationRow& r : rows) {
        char line[160];
        std::snprintf(line, sizeof(line), "%-3s %-21s %6.1f %6.1f %7.1f %7.1f %9.0f\n", r.id.c_str(),
                      sched::to_string(r.mode).c_str(), 100.0 * r.metrics.success_rate,
                      100.0 * r.metrics.collision_rate, 100.0 * r.metrics.completion_rate,
                      100.0 * r.metrics.mean_route_completion, r.latency_ms);
        os << line;
    }
    return os.str();
}

double chi_square_quantile_99(int dof) {
    if (dof < 1) throw ContractError("chi_square_quantile_99: dof must be >= 1");
    const double z99 = 2.3263478740408408;
    const double k = static_cast<double>(dof);
    const double a = 2.0 / (9.0 * k);
    const double base = 1.0 - a + z99 * std::sqrt(a);
    return k * base * base * base;
}

std::string EpisodeLog::to_jsonl() const {
    std::ostringstream os;
    nlohmann::json header;
    header["scenario"] = scenario_kind;
    header["seed"] = scenario_seed;
    header["hazard_disabled"] = hazard_disabled;
    header["tick_s"] = tick_s;
    header["policy"] = policy;
    os << header.dump() << "\n";
    for (const Tick& t : ticks) {
        nlohmann::json j;
        j["tick"] = t.tick;
        j["sim_time"] = t.sim_time;
        j["ego"] = {t.ego.x, t.ego.y, t.ego.heading, t.ego.speed};
        std::vector<double> act;
        for (const world::Vec2& v : t.action) {
            act.push_back(v.x);
            act.push_back(v.y);
        }
        j["action"] = act;
        j["collided"] = t.collided;
        j["completed"] = t.completed;
        os << j.dump() << "\n";
    }
    return os.str();
}

EpisodeLog EpisodeLog::from_jsonl(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line)) throw Error("episode log: empty");
    nlohmann::json header = nlohmann::json::parse(line);
    EpisodeLog log;
    log.scenario_kind = header.at("scenario").get<std::string>();
    log.scenario_seed = header.at("seed").get<uint64_t>();
    log.hazard_disabled = header.at("hazard_disabled").get<bool>();
    log.tick_s = header.at("tick_s").get<double>();
    log.policy = header.at("policy").get<std::string>();
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        Tick t;
        t.tick = j.at("tick").get<int>();
        t.sim_time = j.at("sim_time").get<double>();
        const auto& ego = j.at("ego");
        t.ego = {ego[0].get<double>(), ego[1].get<double>(), ego[2].get<double>(), ego[3].get<double>()};
        const auto& act = j.at("action");
        if (act.size() != 28) throw Error("episode log: malformed action");
        for (size_t i = 0; i < 14; ++i) {
            t.action[i] = {act[2 * i].get<double>(), act[2 * i + 1].get<double>()};
        }
        t.collided = j.at("collided").get<bool>();
        t.completed = j.at("completed").get<bool>();
        log.ticks.push_back(t);
    }
    return log;
}

EpisodeLog run_expert_episode(const world::Scenario& scenario, double tick_s) {
    EpisodeLog log;
    log.scenario_kind = world::to_string(scenario.kind);
    log.scenario_seed = scenario.seed;
    log.tick_s = tick_s;
    log.policy = "expert";
    world::WorldState state = scenario.initial;
    const int max_ticks = static_cast<int>(std::llround(scenario.duration / tick_s));
    for (int k = 0; k < max_ticks; ++k) {
        world::ActionPlan plan = world::expert_policy(state);
        state = world::step_world(state, plan, tick_s);
        EpisodeLog::Tick t;
        t.tick = k;
        t.sim_time = state.sim_time;
        t.ego = state.ego;
        t.action = world::to_residuals(plan);
        t.collided = state.collided;
        t.completed = state.completed;
        log.ticks.push_back(t);
        if (state.collided || state.completed) break;
    }
    return log;
}

EpisodeLog log_from_result(const world::Scenario& scenario, const sched::EpisodeResult& result,
                           double tick_s, const std::string& policy) {
    EpisodeLog log;
    log.scenario_kind = world::to_string(scenario.kind);
    log.scenario_seed = scenario.seed;
    log.tick_s = tick_s;
    log.policy = policy;
    for (size_t k = 0; k < result.actions.size(); ++k) {
        EpisodeLog::Tick t;
        t.tick = static_cast<int>(k);
        t.sim_time = (static_cast<double>(k) + 1.0) * tick_s;
        t.ego = result.ego_poses[k];
        t.action = world::residuals_from_tensor(result.actions[k]);
        const bool last = k + 1 == result.actions.size();
        t.collided = last && result.collided;
        t.completed = last && result.completed;
        log.ticks.push_back(t);
    }
    return log;
}

bool replay_matches(const EpisodeLog& log, std::string* message) {
    world::Scenario sc = world::make_scenario(log.scenario_kind, log.scenario_seed,
                                              {.disable_hazard = log.hazard_disabled});
    world::WorldState state = sc.initial;
    for (const EpisodeLog::Tick& t : log.ticks) {
        state = world::step_world(state, world::reconstruct_action(t.action), log.tick_s);
        if (state.ego.x != t.ego.x || state.ego.y != t.ego.y || state.ego.heading != t.ego.heading ||
            state.ego.speed != t.ego.speed || state.collided != t.collided ||
            state.completed != t.completed) {
            if (message) {
                *message = "replay diverged at tick " + std::to_string(t.tick);
            }
            return false;
        }
    }
    return true;
}

}  // namespace eta::harness
