#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "eta/common.hpp"
#include "eta/tensor.hpp"

namespace eta::world {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
    Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    double dot(Vec2 o) const { return x * o.x + y * o.y; }
    double norm() const { return std::sqrt(x * x + y * y); }
};

double dist_point_segment(Vec2 p, Vec2 a, Vec2 b);
double dist_point_polyline(Vec2 p, const std::vector<Vec2>& line);

// 10 equidistant path points (1 m arc spacing) plus 4 waypoints at future
// times {0.5, 1.0, 1.5, 2.0} s, all in the ego frame (x forward, y left).
struct ActionPlan {
    static constexpr int kPathPoints = 10;
    static constexpr int kWaypoints = 4;
    static constexpr double kPathSpacing = 1.0;       // meters
    static constexpr double kWaypointPeriod = 0.5;    // seconds
    std::array<Vec2, kPathPoints> path{};
    std::array<Vec2, kWaypoints> waypoints{};
};

// Residual encoding: first point relative to the origin, each subsequent
// point relative to its predecessor; path and waypoint groups independent.
using Residuals = std::array<Vec2, ActionPlan::kPathPoints + ActionPlan::kWaypoints>;

Residuals to_residuals(const ActionPlan& plan);
ActionPlan reconstruct_action(const Residuals& residuals);
ad::Tensor residuals_to_tensor(const Residuals& r);      // 14x2
Residuals residuals_from_tensor(const ad::Tensor& t);    // validates finiteness

// Pinhole over the ground plane; defaults keep ~30 m of lookahead in frame.
struct CameraModel {
    double h_cam = 1.5;   // meters above ground
    double f_u = 32.0;    // pixels
    double f_v = 32.0;    // pixels
    double c_u = 32.0;    // pixels
    double c_v = 8.0;     // pixels
    double x_min = 1.0;   // meters, forward clip
    double x_max = 60.0;  // meters, far clip used by the renderer
};

constexpr int kFrameChannels = 4;
constexpr int kFrameHeight = 32;
constexpr int kFrameWidth = 64;
constexpr int kPatchSize = 8;
constexpr int kMaskRows = kFrameHeight / kPatchSize;  // 4
constexpr int kMaskCols = kFrameWidth / kPatchSize;   // 8

enum FrameChannel { kChDrivable = 0, kChVehicle = 1, kChRedLight = 2, kChRoute = 3 };

// Per-tick observation: 4 x 32 x 64 grid of values in [0, 1].
struct FrameTensor {
    ad::Tensor t;  // shape {4, 32, 64}
    FrameTensor() : t(ad::Shape{kFrameChannels, kFrameHeight, kFrameWidth}) {}
    double& at(int ch, int v, int u) { return t[(static_cast<int64_t>(ch) * kFrameHeight + v) * kFrameWidth + u]; }
    double at(int ch, int v, int u) const {
        return t[(static_cast<int64_t>(ch) * kFrameHeight + v) * kFrameWidth + u];
    }
    bool operator==(const FrameTensor& o) const { return t.vec() == o.t.vec(); }
};

// Binary per-patch grid, 4 rows x 8 columns.
struct PatchMask {
    std::array<std::array<bool, kMaskCols>, kMaskRows> cells{};
    bool operator==(const PatchMask& o) const { return cells == o.cells; }
    int count() const;
    ad::Tensor to_tensor() const;  // 4x8 of 0/1
};

// (u, v) pixel coordinates of an ego-frame ground point, or nullopt when the
// point is behind the clip plane or outside the image.
std::optional<Vec2> project_point(Vec2 p_ego, const CameraModel& cam);

PatchMask action_to_mask(const ActionPlan& plan, const CameraModel& cam);

struct Pose {
    double x = 0.0;
    double y = 0.0;
    double heading = 0.0;  // radians, 0 = +x
    double speed = 0.0;    // m/s, >= 0
};

enum class NpcBehavior {
    cruise,       // constant speed along heading
    lead_brake,   // cruise, brake hard at trigger_time, resume at resume_time
    cross,        // cruise along heading (crossing traffic), spawned so the
                  // conflict timing is set by the spawn position
};

struct Npc {
    Pose pose;
    NpcBehavior behavior = NpcBehavior::cruise;
    double cruise_speed = 6.0;
    double trigger_time = 1e18;  // lead_brake: when braking starts
    double resume_time = 1e18;   // lead_brake: when it accelerates again
    double decel = 12.0;
    double accel = 3.0;
};

struct TrafficLight {
    bool present = false;
    bool red = false;
    double switch_to_red = 1e18;    // sim_time of green->red
    double switch_to_green = 1e18;  // sim_time of red->green
    Vec2 stop_line{0.0, 0.0};       // center of the stop line band
    double road_half_width = 3.5;
    double band_depth = 3.0;  // rendered depth of the red band, meters
};

struct RoadStrip {
    std::vector<Vec2> centerline;
    double half_width = 3.5;
};

struct HazardEvent {
    double trigger_time = 0.0;
    std::string kind;
};

struct WorldState {
    double sim_time = 0.0;
    Pose ego;
    std::vector<Npc> npcs;
    TrafficLight light;
    std::vector<Vec2> route;  // target polyline in world frame
    std::vector<RoadStrip> roads;
    std::vector<HazardEvent> hazards;
    bool collided = false;
    bool completed = false;
};

// Tracker and collision constants (see config defaults in the CLI).
struct WorldParams {
    double a_max = 8.0;            // m/s^2, ego accel/decel limit
    double kappa_max = 0.6;        // 1/m, steering curvature limit
    double lookahead = 1.8;        // m, pure-pursuit lookahead
    double collision_radius = 1.0; // m per vehicle (collision at 2.0 center distance)
    double completion_radius = 2.0;   // arc distance short of the route end that counts
    double completion_lateral = 3.0;  // lateral corridor for completion
    double vehicle_half_len = 1.1; // rendered footprint
    double vehicle_half_width = 0.7;
    double route_mark_half_width = 0.35;
};

WorldState step_world(const WorldState& state, const ActionPlan& action, double dt,
                      const WorldParams& params = {});

FrameTensor render_observation(const WorldState& state, const CameraModel& cam,
                               const WorldParams& params = {});

// Speed plus K=2 route target points in the ego frame.
struct Conditioning {
    double speed = 0.0;
    std::array<Vec2, 2> targets{};
    ad::Tensor to_tensor() const;  // 1x5
};

Conditioning conditioning_of(const WorldState& state);

// Rule-based expert: follow the route at 6 m/s, brake for red lights within
// 15 m and predicted front collisions within a 2 s horizon.
struct ExpertParams {
    double cruise_speed = 6.0;
    double light_range = 15.0;
    double light_margin = 5.0;  // stop this far before the line; a red light
                                // 5 m out therefore means a near-stop plan
    double comfort_decel = 3.0;
    double hazard_horizon = 2.0;
    double hazard_distance = 2.6;  // predicted center distance that triggers a brake
    // graded following behind on-route traffic: v <= npc speed + gain*(gap - standoff);
    // the 3.8 m standoff keeps a stopped lead inside the camera's view
    double follow_corridor = 1.7;
    double follow_range = 12.0;
    double follow_standoff = 3.8;
    double follow_gain = 1.2;
};

ActionPlan expert_policy(const WorldState& state, const ExpertParams& params = {});

enum class ScenarioKind { hard_brake, lane_change, red_light, give_way, merge };

ScenarioKind scenario_kind_from_string(const std::string& s);
std::string to_string(ScenarioKind kind);

struct Scenario {
    std::string name;
    ScenarioKind kind;
    uint64_t seed = 0;
    WorldState initial;
    double duration = 25.0;   // seconds before timeout
    double t_trigger = -1.0;  // hazard trigger time, if any
    double t_react = -1.0;    // latest time braking still avoids collision
};

struct ScenarioOptions {
    bool disable_hazard = false;  // matched counterfactual episode
};

Scenario make_scenario(ScenarioKind kind, uint64_t seed, const ScenarioOptions& opts = {});
Scenario make_scenario(const std::string& kind, uint64_t seed, const ScenarioOptions& opts = {});

}  // namespace eta::world
