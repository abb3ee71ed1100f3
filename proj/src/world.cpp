#include "eta/world.hpp"

#include <algorithm>
#include <cmath>

namespace eta::world {

namespace {

constexpr double kPi = 3.14159265358979323846;

double clampd(double v, double lo, double hi) { return std::max(lo, std::min(hi, v)); }

Vec2 rotate(Vec2 p, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    return {c * p.x - s * p.y, s * p.x + c * p.y};
}

// world -> ego frame (x forward, y left)
Vec2 to_ego(Vec2 p_world, const Pose& ego) {
    return rotate({p_world.x - ego.x, p_world.y - ego.y}, -ego.heading);
}

struct ArcPoint {
    Vec2 point;
    Vec2 tangent;  // unit
    double arc = 0.0;
};

// closest-point arc position of p on the polyline
double arc_position(const std::vector<Vec2>& line, Vec2 p) {
    double best_d = 1e18, best_arc = 0.0, arc0 = 0.0;
    for (size_t i = 0; i + 1 < line.size(); ++i) {
        const Vec2 a = line[i], b = line[i + 1];
        const Vec2 ab = b - a;
        const double len2 = ab.dot(ab);
        const double t = len2 > 0.0 ? clampd((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
        const Vec2 q = a + ab * t;
        const double d = (p - q).norm();
        if (d < best_d) {
            best_d = d;
            best_arc = arc0 + std::sqrt(len2) * t;
        }
        arc0 += std::sqrt(len2);
    }
    return best_arc;
}

ArcPoint point_at_arc(const std::vector<Vec2>& line, double s) {
    ArcPoint out;
    out.arc = s;
    double remaining = std::max(0.0, s);
    for (size_t i = 0; i + 1 < line.size(); ++i) {
        const Vec2 a = line[i], b = line[i + 1];
        const double len = (b - a).norm();
        if (remaining <= len || i + 2 == line.size()) {
            const Vec2 dir = len > 0.0 ? (b - a) * (1.0 / len) : Vec2{1.0, 0.0};
            out.point = a + dir * remaining;  // extrapolates past the end on the last segment
            out.tangent = dir;
            return out;
        }
        remaining -= len;
    }
    out.point = line.empty() ? Vec2{} : line.back();
    out.tangent = {1.0, 0.0};
    return out;
}

int orientation_sign(Vec2 a, Vec2 b, Vec2 c) {
    const double v = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    return (v > 0.0) - (v < 0.0);
}

bool segments_intersect(Vec2 a, Vec2 b, Vec2 c, Vec2 d) {
    const int o1 = orientation_sign(a, b, c), o2 = orientation_sign(a, b, d);
    const int o3 = orientation_sign(c, d, a), o4 = orientation_sign(c, d, b);
    if (o1 != o2 && o3 != o4) return true;
    auto on = [](Vec2 p, Vec2 q, Vec2 r) {
        return std::min(p.x, q.x) - 1e-12 <= r.x && r.x <= std::max(p.x, q.x) + 1e-12 &&
               std::min(p.y, q.y) - 1e-12 <= r.y && r.y <= std::max(p.y, q.y) + 1e-12;
    };
    if (o1 == 0 && on(a, b, c)) return true;
    if (o2 == 0 && on(a, b, d)) return true;
    if (o3 == 0 && on(c, d, a)) return true;
    if (o4 == 0 && on(c, d, b)) return true;
    return false;
}

// in 2D the distance between non-crossing segments is attained at an endpoint
double seg_seg_dist(Vec2 a, Vec2 b, Vec2 c, Vec2 d) {
    if (segments_intersect(a, b, c, d)) return 0.0;
    return std::min(std::min(dist_point_segment(a, c, d), dist_point_segment(b, c, d)),
                    std::min(dist_point_segment(c, a, b), dist_point_segment(d, a, b)));
}

struct Aabb {
    Vec2 lo, hi;
    bool contains(Vec2 p) const { return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y; }
};

double seg_aabb_dist(Vec2 a, Vec2 b, const Aabb& box) {
    if (box.contains(a) || box.contains(b)) return 0.0;
    const Vec2 c0{box.lo.x, box.lo.y}, c1{box.hi.x, box.lo.y};
    const Vec2 c2{box.hi.x, box.hi.y}, c3{box.lo.x, box.hi.y};
    double d = seg_seg_dist(a, b, c0, c1);
    d = std::min(d, seg_seg_dist(a, b, c1, c2));
    d = std::min(d, seg_seg_dist(a, b, c2, c3));
    d = std::min(d, seg_seg_dist(a, b, c3, c0));
    return d;
}

struct Obb {
    Vec2 center;
    Vec2 axis;  // unit axis of the first extent
    double half_u, half_v;
};

bool obb_aabb_overlap(const Obb& o, const Aabb& box) {
    const Vec2 axis2{-o.axis.y, o.axis.x};
    const Vec2 bc{(box.lo.x + box.hi.x) * 0.5, (box.lo.y + box.hi.y) * 0.5};
    const Vec2 be{(box.hi.x - box.lo.x) * 0.5, (box.hi.y - box.lo.y) * 0.5};
    const Vec2 axes[4] = {{1.0, 0.0}, {0.0, 1.0}, o.axis, axis2};
    for (const Vec2& n : axes) {
        const double ra = be.x * std::fabs(n.x) + be.y * std::fabs(n.y);
        const double rb = o.half_u * std::fabs(o.axis.dot(n)) + o.half_v * std::fabs(axis2.dot(n));
        if (std::fabs((o.center - bc).dot(n)) > ra + rb) return false;
    }
    return true;
}

}  // namespace

double dist_point_segment(Vec2 p, Vec2 a, Vec2 b) {
    const Vec2 ab = b - a;
    const double len2 = ab.dot(ab);
    const double t = len2 > 0.0 ? clampd((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    return (p - (a + ab * t)).norm();
}

double dist_point_polyline(Vec2 p, const std::vector<Vec2>& line) {
    double best = 1e18;
    for (size_t i = 0; i + 1 < line.size(); ++i) {
        best = std::min(best, dist_point_segment(p, line[i], line[i + 1]));
    }
    return best;
}

Residuals to_residuals(const ActionPlan& plan) {
    Residuals r{};
    Vec2 prev{0.0, 0.0};
    for (int i = 0; i < ActionPlan::kPathPoints; ++i) {
        r[static_cast<size_t>(i)] = plan.path[static_cast<size_t>(i)] - prev;
        prev = plan.path[static_cast<size_t>(i)];
    }
    prev = {0.0, 0.0};
    for (int i = 0; i < ActionPlan::kWaypoints; ++i) {
        r[static_cast<size_t>(ActionPlan::kPathPoints + i)] = plan.waypoints[static_cast<size_t>(i)] - prev;
        prev = plan.waypoints[static_cast<size_t>(i)];
    }
    return r;
}

ActionPlan reconstruct_action(const Residuals& residuals) {
    for (const Vec2& v : residuals) {
        if (!std::isfinite(v.x) || !std::isfinite(v.y)) {
            throw NumericError("reconstruct_action: non-finite residual");
        }
    }
    ActionPlan plan;
    Vec2 acc{0.0, 0.0};
    for (int i = 0; i < ActionPlan::kPathPoints; ++i) {
        acc = acc + residuals[static_cast<size_t>(i)];
        plan.path[static_cast<size_t>(i)] = acc;
    }
    acc = {0.0, 0.0};
    for (int i = 0; i < ActionPlan::kWaypoints; ++i) {
        acc = acc + residuals[static_cast<size_t>(ActionPlan::kPathPoints + i)];
        plan.waypoints[static_cast<size_t>(i)] = acc;
    }
    return plan;
}

ad::Tensor residuals_to_tensor(const Residuals& r) {
    ad::Tensor t({14, 2});
    for (int i = 0; i < 14; ++i) {
        t.at(i, 0) = r[static_cast<size_t>(i)].x;
        t.at(i, 1) = r[static_cast<size_t>(i)].y;
    }
    return t;
}

Residuals residuals_from_tensor(const ad::Tensor& t) {
    if (t.shape() != ad::Shape{14, 2}) {
        throw DimensionError("residuals_from_tensor: expected 14x2, got " + ad::shape_str(t.shape()));
    }
    if (!t.all_finite()) throw NumericError("residuals_from_tensor: non-finite residuals");
    Residuals r{};
    for (int i = 0; i < 14; ++i) r[static_cast<size_t>(i)] = {t.at(i, 0), t.at(i, 1)};
    return r;
}

int PatchMask::count() const {
    int n = 0;
    for (const auto& row : cells)
        for (bool b : row) n += b ? 1 : 0;
    return n;
}

ad::Tensor PatchMask::to_tensor() const {
    ad::Tensor t({kMaskRows, kMaskCols});
    for (int r = 0; r < kMaskRows; ++r)
        for (int c = 0; c < kMaskCols; ++c) t.at(r, c) = cells[static_cast<size_t>(r)][static_cast<size_t>(c)] ? 1.0 : 0.0;
    return t;
}

std::optional<Vec2> project_point(Vec2 p_ego, const CameraModel& cam) {
    if (p_ego.x < cam.x_min) return std::nullopt;
    const double u = cam.c_u - cam.f_u * (p_ego.y / p_ego.x);
    const double v = cam.c_v + cam.f_v * (cam.h_cam / p_ego.x);
    if (u < 0.0 || u >= static_cast<double>(kFrameWidth) || v < 0.0 || v >= static_cast<double>(kFrameHeight)) {
        return std::nullopt;
    }
    return Vec2{u, v};
}

PatchMask action_to_mask(const ActionPlan& plan, const CameraModel& cam) {
    PatchMask mask;
    auto mark = [&](Vec2 p) {
        auto px = project_point(p, cam);
        if (!px) return;
        const int col = static_cast<int>(px->x) / kPatchSize;
        const int row = static_cast<int>(px->y) / kPatchSize;
        mask.cells[static_cast<size_t>(row)][static_cast<size_t>(col)] = true;
    };
    for (const Vec2& p : plan.path) mark(p);
    for (const Vec2& p : plan.waypoints) mark(p);
    return mask;
}

WorldState step_world(const WorldState& state, const ActionPlan& action, double dt,
                      const WorldParams& params) {
    if (dt <= 0.0) throw ContractError("step_world: dt must be positive");
    WorldState next = state;

    // -- ego: kinematic bicycle tracker --
    const double v_target = action.waypoints[0].norm() / ActionPlan::kWaypointPeriod;
    // pure-pursuit steering toward the first path point at/after the lookahead
    double kappa = 0.0;
    Vec2 goal{0.0, 0.0};
    bool have_goal = false;
    for (const Vec2& p : action.path) {
        if (p.norm() >= params.lookahead) {
            goal = p;
            have_goal = true;
            break;
        }
    }
    if (!have_goal && action.path.back().norm() > 0.05) {
        goal = action.path.back();
        have_goal = true;
    }
    if (have_goal) {
        const double d = goal.norm();
        const double alpha = std::atan2(goal.y, goal.x);
        kappa = clampd(2.0 * std::sin(alpha) / d, -params.kappa_max, params.kappa_max);
    }
    double v = state.ego.speed;
    v += clampd(v_target - v, -params.a_max * dt, params.a_max * dt);
    v = std::max(0.0, v);
    double heading = state.ego.heading + v * kappa * dt;
    next.ego.x = state.ego.x + v * std::cos(heading) * dt;
    next.ego.y = state.ego.y + v * std::sin(heading) * dt;
    next.ego.heading = heading;
    next.ego.speed = v;

    // -- scripted NPCs --
    for (Npc& npc : next.npcs) {
        double nv = npc.pose.speed;
        switch (npc.behavior) {
            case NpcBehavior::cruise:
            case NpcBehavior::cross:
                nv = npc.cruise_speed;
                break;
            case NpcBehavior::lead_brake: {
                const double t0 = state.sim_time;
                if (t0 >= npc.trigger_time && t0 < npc.resume_time) {
                    nv = std::max(0.0, nv - npc.decel * dt);
                } else if (t0 >= npc.resume_time) {
                    nv = std::min(npc.cruise_speed, nv + npc.accel * dt);
                }
                break;
            }
        }
        npc.pose.x += nv * std::cos(npc.pose.heading) * dt;
        npc.pose.y += nv * std::sin(npc.pose.heading) * dt;
        npc.pose.speed = nv;
    }

    next.sim_time = state.sim_time + dt;

    // -- traffic light --
    if (next.light.present) {
        if (!next.light.red && next.sim_time >= next.light.switch_to_red &&
            next.sim_time < next.light.switch_to_green) {
            next.light.red = true;
        }
        if (next.light.red && next.sim_time >= next.light.switch_to_green) {
            next.light.red = false;
        }
    }

    // -- terminal flags (sticky) --
    for (const Npc& npc : next.npcs) {
        const double d = std::hypot(npc.pose.x - next.ego.x, npc.pose.y - next.ego.y);
        if (d < 2.0 * params.collision_radius) next.collided = true;
    }
    if (!next.route.empty()) {
        const Vec2 ego_pos{next.ego.x, next.ego.y};
        double route_len = 0.0;
        for (size_t i = 0; i + 1 < next.route.size(); ++i) {
            route_len += (next.route[i + 1] - next.route[i]).norm();
        }
        const double progress = arc_position(next.route, ego_pos);
        const double lateral = dist_point_polyline(ego_pos, next.route);
        if (progress >= route_len - params.completion_radius && lateral <= params.completion_lateral) {
            next.completed = true;
        }
    }
    return next;
}

FrameTensor render_observation(const WorldState& state, const CameraModel& cam,
                               const WorldParams& params) {
    FrameTensor frame;

    // rows whose entire ground footprint is beyond the clip range stay zero
    for (int v = 0; v < kFrameHeight; ++v) {
        const double dv_near = static_cast<double>(v + 1) - cam.c_v;
        const double dv_far = static_cast<double>(v) - cam.c_v;
        if (dv_near <= 0.0) continue;  // at or above the horizon
        const double x_near = cam.f_v * cam.h_cam / dv_near;
        const double x_far = dv_far > 0.0 ? cam.f_v * cam.h_cam / dv_far : cam.x_max;
        const double x_lo = std::max(x_near, cam.x_min);
        const double x_hi = std::min(x_far, cam.x_max);
        if (x_lo >= x_hi) continue;
        for (int u = 0; u < kFrameWidth; ++u) {
            // ego-frame footprint of this pixel on the ground plane
            const double yl0 = x_lo * (cam.c_u - static_cast<double>(u + 1)) / cam.f_u;
            const double yl1 = x_lo * (cam.c_u - static_cast<double>(u)) / cam.f_u;
            const double yh0 = x_hi * (cam.c_u - static_cast<double>(u + 1)) / cam.f_u;
            const double yh1 = x_hi * (cam.c_u - static_cast<double>(u)) / cam.f_u;
            Aabb box;
            box.lo = {x_lo, std::min(std::min(yl0, yl1), std::min(yh0, yh1))};
            box.hi = {x_hi, std::max(std::max(yl0, yl1), std::max(yh0, yh1))};

            // drivable area
            for (const RoadStrip& road : state.roads) {
                bool hit = false;
                for (size_t i = 0; i + 1 < road.centerline.size() && !hit; ++i) {
                    const Vec2 a = to_ego(road.centerline[i], state.ego);
                    const Vec2 b = to_ego(road.centerline[i + 1], state.ego);
                    hit = seg_aabb_dist(a, b, box) <= road.half_width;
                }
                if (hit) {
                    frame.at(kChDrivable, v, u) = 1.0;
                    break;
                }
            }
            // vehicles
            for (const Npc& npc : state.npcs) {
                Obb rect;
                rect.center = to_ego({npc.pose.x, npc.pose.y}, state.ego);
                rect.axis = rotate({1.0, 0.0}, npc.pose.heading - state.ego.heading);
                rect.half_u = params.vehicle_half_len;
                rect.half_v = params.vehicle_half_width;
                if (obb_aabb_overlap(rect, box)) {
                    frame.at(kChVehicle, v, u) = 1.0;
                    break;
                }
            }
            // red-light band painted on the road ahead of the stop line
            if (state.light.present && state.light.red) {
                Obb band;
                band.center = to_ego(state.light.stop_line + Vec2{state.light.band_depth * 0.5, 0.0},
                                     state.ego);
                band.axis = rotate({1.0, 0.0}, -state.ego.heading);
                band.half_u = state.light.band_depth * 0.5;
                band.half_v = state.light.road_half_width;
                if (obb_aabb_overlap(band, box)) frame.at(kChRedLight, v, u) = 1.0;
            }
            // route marking
            bool route_hit = false;
            for (size_t i = 0; i + 1 < state.route.size() && !route_hit; ++i) {
                const Vec2 a = to_ego(state.route[i], state.ego);
                const Vec2 b = to_ego(state.route[i + 1], state.ego);
                route_hit = seg_aabb_dist(a, b, box) <= params.route_mark_half_width;
            }
            if (route_hit) frame.at(kChRoute, v, u) = 1.0;
        }
    }
    return frame;
}

ad::Tensor Conditioning::to_tensor() const {
    ad::Tensor t({1, 5});
    t[0] = speed;
    t[1] = targets[0].x;
    t[2] = targets[0].y;
    t[3] = targets[1].x;
    t[4] = targets[1].y;
    return t;
}

Conditioning conditioning_of(const WorldState& state) {
    Conditioning cond;
    cond.speed = state.ego.speed;
    const double s0 = arc_position(state.route, {state.ego.x, state.ego.y});
    const ArcPoint p1 = point_at_arc(state.route, s0 + 5.0);
    const ArcPoint p2 = point_at_arc(state.route, s0 + 10.0);
    cond.targets[0] = to_ego(p1.point, state.ego);
    cond.targets[1] = to_ego(p2.point, state.ego);
    return cond;
}

namespace {

// desired path geometry: route points ahead of the ego with the lateral
// offset blended away over a few meters
Vec2 blended_path_point(const WorldState& state, double s0, double lateral, double ahead) {
    const ArcPoint ap = point_at_arc(state.route, s0 + ahead);
    const Vec2 normal{-ap.tangent.y, ap.tangent.x};
    const double blend = lateral * std::exp(-ahead / 4.0);
    const Vec2 world = ap.point + normal * blend;
    return to_ego(world, state.ego);
}

}  // namespace

ActionPlan expert_policy(const WorldState& state, const ExpertParams& params) {
    ActionPlan plan;
    const Vec2 ego_pos{state.ego.x, state.ego.y};
    const double s0 = arc_position(state.route, ego_pos);
    const ArcPoint at_ego = point_at_arc(state.route, s0);
    const Vec2 normal{-at_ego.tangent.y, at_ego.tangent.x};
    const double lateral = (ego_pos - at_ego.point).dot(normal);

    for (int i = 0; i < ActionPlan::kPathPoints; ++i) {
        plan.path[static_cast<size_t>(i)] =
            blended_path_point(state, s0, lateral, (i + 1) * ActionPlan::kPathSpacing);
    }

    double v_target = params.cruise_speed;

    // red light ahead within range: decelerate to stop at the line
    if (state.light.present && state.light.red) {
        const double s_line = arc_position(state.route, state.light.stop_line);
        const double d_line = s_line - s0;
        if (d_line > -1.0 && d_line <= params.light_range) {
            const double room = std::max(0.0, d_line - params.light_margin);
            v_target = std::min(v_target, std::sqrt(2.0 * params.comfort_decel * room));
        }
    }

    // graded following behind traffic on the route corridor
    for (const Npc& npc : state.npcs) {
        const Vec2 npc_pos{npc.pose.x, npc.pose.y};
        if (dist_point_polyline(npc_pos, state.route) > params.follow_corridor) continue;
        const double ahead = arc_position(state.route, npc_pos) - s0;
        if (ahead < 0.3 || ahead > params.follow_range) continue;
        const double follow_v = npc.pose.speed + params.follow_gain * (ahead - params.follow_standoff);
        v_target = std::min(v_target, std::max(0.0, follow_v));
    }

    // predicted front collision within the horizon at the desired speed
    bool hazard = false;
    for (const Npc& npc : state.npcs) {
        const Vec2 npc_ego = to_ego({npc.pose.x, npc.pose.y}, state.ego);
        if (npc_ego.x < -1.0) continue;  // behind
        const Vec2 npc_vel{npc.pose.speed * std::cos(npc.pose.heading),
                           npc.pose.speed * std::sin(npc.pose.heading)};
        for (double tau = 0.0; tau <= params.hazard_horizon && !hazard; tau += 0.1) {
            const ArcPoint ego_fut = point_at_arc(state.route, s0 + v_target * tau);
            const Vec2 npc_fut = Vec2{npc.pose.x, npc.pose.y} + npc_vel * tau;
            if ((ego_fut.point - npc_fut).norm() < params.hazard_distance) hazard = true;
        }
        if (hazard) break;
    }
    if (hazard) v_target = 0.0;

    // waypoint timing from the tracker's own acceleration law
    WorldParams wp;
    double v_sim = state.ego.speed;
    double arc = 0.0;
    const double sub = 0.1;
    int wp_index = 0;
    for (int k = 1; k <= 20 && wp_index < ActionPlan::kWaypoints; ++k) {
        v_sim += clampd(v_target - v_sim, -wp.a_max * sub, wp.a_max * sub);
        v_sim = std::max(0.0, v_sim);
        arc += v_sim * sub;
        const double t = k * sub;
        const double next_t = (wp_index + 1) * ActionPlan::kWaypointPeriod;
        if (std::fabs(t - next_t) < 1e-9) {
            plan.waypoints[static_cast<size_t>(wp_index)] = blended_path_point(state, s0, lateral, arc);
            ++wp_index;
        }
    }
    return plan;
}

ScenarioKind scenario_kind_from_string(const std::string& s) {
    if (s == "hard_brake") return ScenarioKind::hard_brake;
    if (s == "lane_change") return ScenarioKind::lane_change;
    if (s == "red_light") return ScenarioKind::red_light;
    if (s == "give_way") return ScenarioKind::give_way;
    if (s == "merge") return ScenarioKind::merge;
    throw ConfigError("unknown scenario kind '" + s + "'");
}

std::string to_string(ScenarioKind kind) {
    switch (kind) {
        case ScenarioKind::hard_brake: return "hard_brake";
        case ScenarioKind::lane_change: return "lane_change";
        case ScenarioKind::red_light: return "red_light";
        case ScenarioKind::give_way: return "give_way";
        case ScenarioKind::merge: return "merge";
    }
    throw ConfigError("unknown scenario kind");
}

namespace {

// Latest brake delay after the lead's trigger that still avoids collision,
// for an ego cruising at `v` behind a lead at center distance dc0. Mirrors
// the tracker's speed law on a fine grid.
double reaction_window(double dc0, double v, double lead_decel, double ego_decel) {
    auto collides = [&](double brake_at) {
        const double dt = 0.005;
        double xe = 0.0, ve = v, xl = dc0, vl = v;
        for (double t = 0.0; t < 8.0; t += dt) {
            vl = std::max(0.0, vl - lead_decel * dt);
            const double target = t >= brake_at ? 0.0 : v;
            ve += clampd(target - ve, -ego_decel * dt, ego_decel * dt);
            ve = std::max(0.0, ve);
            xl += vl * dt;
            xe += ve * dt;
            if (xl - xe <= 2.0) return true;
            if (ve == 0.0 && vl == 0.0) break;
        }
        return false;
    };
    double lo = 0.0, hi = 3.0;
    if (collides(lo)) return 0.0;
    if (!collides(hi)) return hi;
    for (int it = 0; it < 48; ++it) {
        const double mid = 0.5 * (lo + hi);
        (collides(mid) ? hi : lo) = mid;
    }
    return lo;
}

// center distance at which the reaction window equals `target` seconds
double solve_follow_distance(double v, double lead_decel, double ego_decel, double target) {
    double lo = 3.0, hi = 14.0;
    for (int it = 0; it < 48; ++it) {
        const double mid = 0.5 * (lo + hi);
        (reaction_window(mid, v, lead_decel, ego_decel) < target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

std::vector<Vec2> straight_route(double x0, double x1, double y) {
    return {{x0, y}, {x1, y}};
}

}  // namespace

Scenario make_scenario(ScenarioKind kind, uint64_t seed, const ScenarioOptions& opts) {
    Rng rng(seed ^ (static_cast<uint64_t>(kind) + 1) * 0x9e3779b97f4a7c15ull);
    Scenario sc;
    sc.kind = kind;
    sc.seed = seed;
    sc.name = to_string(kind) + "/" + std::to_string(seed);
    WorldState& w = sc.initial;
    WorldParams wp;
    // seeded start perturbation, applied after the scenario geometry below;
    // expert rollouts then demonstrate recovery back onto the route
    const double jitter_y = (rng.uniform() - 0.5) * 1.6;
    const double jitter_heading = (rng.uniform() - 0.5) * 0.12;

    switch (kind) {
        case ScenarioKind::hard_brake: {
            // Equal-speed following at the distance where the reaction window
            // is exactly 0.3 s; the lead brakes at t_react - 0.3.
            const double v = 6.0;
            const double lead_decel = 20.0;
            const double dc0 = solve_follow_distance(v, lead_decel, wp.a_max, 0.3);
            const double t_trigger = 2.0 + rng.uniform() * 1.0;
            w.ego = {0.0, 0.0, 0.0, v};
            w.route = straight_route(-5.0, 80.0, 0.0);
            w.roads = {{straight_route(-20.0, 100.0, 0.0), 3.0}};
            Npc lead;
            lead.pose = {dc0, 0.0, 0.0, v};
            lead.cruise_speed = v;
            lead.behavior = NpcBehavior::lead_brake;
            lead.decel = lead_decel;
            lead.accel = 3.0;
            lead.trigger_time = opts.disable_hazard ? 1e18 : t_trigger;
            lead.resume_time = opts.disable_hazard ? 1e18 : t_trigger + 2.5;
            w.npcs.push_back(lead);
            if (!opts.disable_hazard) {
                w.hazards.push_back({t_trigger, "lead_brake"});
                sc.t_trigger = t_trigger;
                sc.t_react = t_trigger + 0.3;
            }
            sc.duration = 25.0;
            break;
        }
        case ScenarioKind::red_light: {
            const double x_line = 25.0 + rng.uniform() * 4.0;
            const double red_duration = 3.0 + rng.uniform() * 2.0;
            const double cross_speed = 5.0 + rng.uniform() * 2.0;
            w.ego = {0.0, 0.0, 0.0, 6.0};
            w.route = straight_route(-5.0, 75.0, 0.0);
            w.roads = {{straight_route(-20.0, 100.0, 0.0), 3.0},
                       {{{x_line + 6.0, -30.0}, {x_line + 6.0, 30.0}}, 3.0}};
            w.light.present = true;
            w.light.red = false;
            // switches to red when the ego, cruising at 6 m/s, is 20 m out
            w.light.switch_to_red = (x_line - 20.0) / 6.0;
            w.light.switch_to_green = w.light.switch_to_red + red_duration;
            w.light.stop_line = {x_line, 0.0};
            w.light.road_half_width = 3.0;
            if (!opts.disable_hazard) {
                // two crossers cover the red phase, so running the light
                // costs a collision over most of the window
                for (double frac : {0.35, 0.75}) {
                    const double t_mid = w.light.switch_to_red + red_duration * frac;
                    Npc cross;
                    cross.behavior = NpcBehavior::cross;
                    cross.cruise_speed = cross_speed;
                    cross.pose = {x_line + 6.0, -cross_speed * t_mid, kPi / 2.0, cross_speed};
                    w.npcs.push_back(cross);
                }
                w.hazards.push_back({w.light.switch_to_red, "red_light"});
                sc.t_trigger = w.light.switch_to_red;
            }
            sc.duration = 28.0;
            break;
        }
        case ScenarioKind::give_way: {
            // crossing NPC with a seed-distinct approach speed in [4, 8]
            const double npc_speed = 4.0 + 4.0 * static_cast<double>(seed % 10) / 9.0;
            const double x_cross = 20.0;
            const double t_conflict = x_cross / 6.0 + (rng.uniform() - 0.5) * 0.4;
            w.ego = {0.0, 0.0, 0.0, 6.0};
            w.route = straight_route(-5.0, 70.0, 0.0);
            w.roads = {{straight_route(-20.0, 90.0, 0.0), 3.0},
                       {{{x_cross, -40.0}, {x_cross, 40.0}}, 3.0}};
            Npc crosser;
            crosser.behavior = NpcBehavior::cross;
            crosser.cruise_speed = npc_speed;
            crosser.pose = {x_cross, -npc_speed * t_conflict, kPi / 2.0, npc_speed};
            if (!opts.disable_hazard) {
                w.npcs.push_back(crosser);
                w.hazards.push_back({0.0, "crossing"});
                sc.t_trigger = 0.0;
            }
            sc.duration = 25.0;
            break;
        }
        case ScenarioKind::lane_change: {
            // static obstacle forces a left-lane excursion; an oncoming NPC
            // sweeps the excursion zone first, so the move is safe only after
            // it has passed the entry
            const double oncoming_speed = 4.0 + rng.uniform() * 4.0;
            const double t_clear = 3.4 + rng.uniform() * 0.9;  // passes the entry then
            w.ego = {0.0, 0.0, 0.0, 6.0};
            w.route = {{-5.0, 0.0}, {12.0, 0.0}, {20.0, 3.5}, {30.0, 3.5}, {38.0, 0.0}, {72.0, 0.0}};
            w.roads = {{straight_route(-20.0, 90.0, 1.75), 3.5 + 1.75}};
            Npc obstacle;
            obstacle.behavior = NpcBehavior::cruise;
            obstacle.cruise_speed = 0.0;
            obstacle.pose = {24.0, 0.0, 0.0, 0.0};
            w.npcs.push_back(obstacle);
            Npc oncoming;
            oncoming.behavior = NpcBehavior::cruise;
            oncoming.cruise_speed = oncoming_speed;
            oncoming.pose = {12.0 + oncoming_speed * t_clear, 3.5, kPi, oncoming_speed};
            if (!opts.disable_hazard) {
                w.npcs.push_back(oncoming);
                w.hazards.push_back({0.0, "oncoming"});
                sc.t_trigger = 0.0;
            }
            sc.duration = 30.0;
            break;
        }
        case ScenarioKind::merge: {
            // ramp merges into the main lane with a slow vehicle ahead
            const double slow_speed = 2.5 + rng.uniform() * 1.5;
            const double x_slow = 26.0 + rng.uniform() * 4.0;
            w.ego = {0.0, -3.5, 0.0, 6.0};
            w.route = {{-5.0, -3.5}, {10.0, -3.5}, {22.0, 0.0}, {75.0, 0.0}};
            w.roads = {{straight_route(-20.0, 95.0, 0.0), 3.0},
                       {straight_route(-20.0, 24.0, -3.5), 2.5}};
            Npc slow;
            slow.behavior = NpcBehavior::cruise;
            slow.cruise_speed = slow_speed;
            slow.pose = {x_slow, 0.0, 0.0, slow_speed};
            if (!opts.disable_hazard) {
                w.npcs.push_back(slow);
                w.hazards.push_back({0.0, "slow_merge"});
                sc.t_trigger = 0.0;
            }
            sc.duration = 34.0;
            break;
        }
    }
    w.ego.y += jitter_y;
    w.ego.heading += jitter_heading;
    return sc;
}

Scenario make_scenario(const std::string& kind, uint64_t seed, const ScenarioOptions& opts) {
    return make_scenario(scenario_kind_from_string(kind), seed, opts);
}

}  // namespace eta::world
