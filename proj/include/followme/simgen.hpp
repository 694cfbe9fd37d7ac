#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "followme/core.hpp"
#include "followme/route.hpp"

namespace followme {

struct DriverParams {
    double idm_desired_gap_s = 1.5;
    double idm_max_accel = 1.5;
    double idm_comfort_decel = 2.0;
    double idm_min_spacing = 2.0;
    double lateral_offset_bias = 0.0;
    double lateral_noise_std = 0.15;
    double reaction_delay_s = 0.4;
};

namespace sim {

inline constexpr double kTurnSpeed = 5.0;
inline constexpr double kLeadAccel = 2.0;
inline constexpr double kLeadStartS = 60.0;
inline constexpr double kDesiredSpeed = 25.0;
inline constexpr double kVehicleLength = 4.5;
inline constexpr double kLaneWidth = 3.6;
inline constexpr double kOuTheta = 0.5;
inline constexpr double kMaxLateralAccel = 3.5;
inline constexpr double kMaxTotalAccel = 4.8;
inline constexpr double kTrafficArcLateralAccel = 2.5;

/// Derives an independent engine from a base seed and a path of indices.
inline std::mt19937_64 make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> path = {}) {
    std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
    for (auto p : path) {
        words.push_back(static_cast<std::uint32_t>(p));
        words.push_back(static_cast<std::uint32_t>(p >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    return std::mt19937_64(seq);
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

/// Trapezoidal speed limit along the route: cruise on lines, `arc_speed(seg)`
/// on arcs, with constant accel/decel ramps into and out of every arc.
template <typename ArcSpeed>
double ramped_speed(const RoutePlan& route, double s, double cruise, double accel, ArcSpeed arc_speed) {
    double v = cruise;
    for (const auto& seg : route.segments) {
        if (!seg.is_arc()) continue;
        const double va = arc_speed(seg);
        if (s < seg.s_begin) {
            v = std::min(v, std::sqrt(va * va + 2.0 * accel * (seg.s_begin - s)));
        } else if (s > seg.s_end()) {
            v = std::min(v, std::sqrt(va * va + 2.0 * accel * (s - seg.s_end())));
        } else {
            v = std::min(v, va);
        }
    }
    return v;
}

inline double lead_speed_at(const RoutePlan& route, double s, double cruise) {
    return ramped_speed(route, s, cruise, kLeadAccel, [](const RouteSegment&) { return kTurnSpeed; });
}

/// Intelligent Driver Model acceleration for net gap `gap` to a leader moving at `v_lead`.
inline double idm_accel(const DriverParams& d, double v, double v_lead, double gap, double v0 = kDesiredSpeed) {
    const double s_star = d.idm_min_spacing +
                          std::max(0.0, v * d.idm_desired_gap_s +
                                            v * (v - v_lead) / (2.0 * std::sqrt(d.idm_max_accel * d.idm_comfort_decel)));
    const double free = 1.0 - std::pow(v / v0, 4);
    if (gap <= 0.1) return -std::numeric_limits<double>::infinity();
    return d.idm_max_accel * (free - (s_star / gap) * (s_star / gap));
}

/// Net gap at which IDM is in equilibrium behind a leader at constant speed v.
inline double idm_equilibrium_gap(const DriverParams& d, double v, double v0 = kDesiredSpeed) {
    const double free = std::max(0.05, 1.0 - std::pow(v / v0, 4));
    return (d.idm_min_spacing + v * d.idm_desired_gap_s) / std::sqrt(free);
}

}  // namespace sim

/// Lays out a drive through five intersections (three straight, one left, one
/// right, in random order). The intersection whose operation matches the
/// scenario is flagged as the evaluated one.
inline RoutePlan build_route(const ScenarioSpec& spec, std::uint64_t rng_seed) {
    auto rng = sim::make_rng(rng_seed, {0x726f757465});
    std::vector<Operation> ops{Operation::Straight, Operation::Straight, Operation::Straight, Operation::LeftTurn,
                               Operation::RightTurn};
    std::shuffle(ops.begin(), ops.end(), rng);
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < ops.size(); ++i)
        if (ops[i] == spec.operation) candidates.push_back(i);
    const std::size_t evaluated =
        candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng)];

    RoutePlan route;
    Vec2 pos{0.0, 0.0};
    double heading = 0.0;
    double s = 0.0;
    auto add = [&](double length, double curvature, double speed) {
        RouteSegment seg{pos, heading, length, curvature, s};
        pos = seg.point(length);
        heading = seg.heading_at(length);
        s += length;
        route.segments.push_back(seg);
        route.segment_speeds.push_back(speed);
    };

    add(250.0, 0.0, spec.lead_speed_mps);
    for (std::size_t i = 0; i < ops.size(); ++i) {
        IntersectionMarker m{ops[i], s, s, i == evaluated};
        if (ops[i] == Operation::Straight) {
            add(24.0, 0.0, spec.lead_speed_mps);
        } else {
            const double radius = sim::uniform(rng, 8.0, 15.0);
            const double sign = ops[i] == Operation::LeftTurn ? 1.0 : -1.0;
            add(radius * std::numbers::pi / 2.0, sign / radius, sim::kTurnSpeed);
        }
        m.s_end = s;
        route.intersections.push_back(m);
        add(i + 1 < ops.size() ? sim::uniform(rng, 250.0, 400.0) : 250.0, 0.0, spec.lead_speed_mps);
    }
    return route;
}

/// Drives the lead along the centerline at the scenario speed, slowing to the
/// turn speed through arcs with +-2 m/s^2 ramps. Stops sampling at the route end.
inline AgentTrack simulate_lead(const RoutePlan& route, const ScenarioSpec& spec, double rate_hz = 60.0) {
    if (!(rate_hz > 0)) throw ConfigError("rate_hz must be positive");
    const double dt = 1.0 / rate_hz;
    auto v = [&](double s) { return sim::lead_speed_at(route, s, spec.lead_speed_mps); };
    AgentTrack track{"lead", AgentClass::Lead, {}};
    double s = sim::kLeadStartS;
    for (std::size_t k = 0; s <= route.length(); ++k) {
        const Vec2 p = route.point_at(s);
        track.points.push_back({double(k) / rate_hz, p.x, p.y});
        const double k1 = v(s);
        const double k2 = v(s + 0.5 * dt * k1);
        const double k3 = v(s + 0.5 * dt * k2);
        const double k4 = v(s + dt * k3);
        s += dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    return track;
}

/// Ego driver: IDM car-following on the perceived (delayed) lead state plus
/// pure-pursuit steering toward the lead's path, offset by the driver's lane
/// bias and an Ornstein-Uhlenbeck wander. Throws SimulationDiverged if the
/// ego closes to within 1 m of the lead.
inline AgentTrack simulate_ego(const AgentTrack& lead, const DriverParams& driver, std::uint64_t rng_seed) {
    const auto& lp = lead.points;
    if (lp.size() < 2) throw MalformedScene("lead track needs at least 2 points");
    const double dt = lp[1].t - lp[0].t;
    if (!(dt > 0)) throw MalformedScene("lead track timestamps must increase");

    std::vector<Vec2> pts;
    pts.reserve(lp.size());
    for (const auto& p : lp) pts.push_back(p.pos());
    const PolylinePath path(pts);
    std::vector<double> lead_v(lp.size());
    for (std::size_t k = 0; k + 1 < lp.size(); ++k) lead_v[k] = (path.s_of(k + 1) - path.s_of(k)) / dt;
    lead_v.back() = lead_v[lead_v.size() - 2];

    auto rng = sim::make_rng(rng_seed, {0x65676f});
    std::normal_distribution<double> gauss(0.0, 1.0);
    const auto delay_frames = static_cast<std::size_t>(std::llround(std::max(0.0, driver.reaction_delay_s) / dt));

    double v = lead_v[0];
    const double start_gap = sim::idm_equilibrium_gap(driver, v) + sim::kVehicleLength;
    Vec2 tan = path.tangent_at(0.0);
    Vec2 pos = path.point_at(-start_gap) + Vec2{-tan.y, tan.x} * driver.lateral_offset_bias;
    double heading = std::atan2(tan.y, tan.x);
    double wander = 0.0;
    double s_ego = -start_gap;

    AgentTrack ego{"ego", AgentClass::Ego, {}};
    ego.points.reserve(lp.size());
    for (std::size_t k = 0; k < lp.size(); ++k) {
        ego.points.push_back({lp[k].t, pos.x, pos.y});
        if ((pos - lp[k].pos()).norm() < 1.0)
            throw SimulationDiverged("ego collided with lead at t=" + std::to_string(lp[k].t));
        if (k + 1 == lp.size()) break;

        s_ego = path.project(pos, s_ego).first;
        const std::size_t j = k >= delay_frames ? k - delay_frames : 0;
        const double gap = path.s_of(j) - s_ego - sim::kVehicleLength;
        if (path.s_of(k) - s_ego < 1.0) throw SimulationDiverged("ego overran the lead");

        // Lateral: pure pursuit toward an offset point ahead on the lead path.
        wander += -sim::kOuTheta * wander * dt +
                  driver.lateral_noise_std * std::sqrt(2.0 * sim::kOuTheta * dt) * gauss(rng);
        const double lookahead = std::max(6.0, 1.0 * v);
        const double s_target = s_ego + lookahead;
        const Vec2 t_dir = path.tangent_at(s_target);
        const Vec2 target = path.point_at(s_target) + Vec2{-t_dir.y, t_dir.x} * (driver.lateral_offset_bias + wander);
        const Vec2 to = target - pos;
        const double alpha = std::atan2(to.y, to.x) - heading;
        double kappa = 2.0 * std::sin(alpha) / std::max(1.0, to.norm());
        if (v > 0.1) kappa = std::clamp(kappa, -sim::kMaxLateralAccel / (v * v), sim::kMaxLateralAccel / (v * v));
        kappa = std::clamp(kappa, -1.0 / 6.0, 1.0 / 6.0);
        const double a_lat = v * v * std::abs(kappa);

        // Longitudinal: IDM on the delayed lead state, limited by a friction circle.
        double a = sim::idm_accel(driver, v, lead_v[j], gap);
        const double a_long_cap = std::sqrt(std::max(0.0, sim::kMaxTotalAccel * sim::kMaxTotalAccel - a_lat * a_lat));
        a = std::clamp(a, -std::min(a_long_cap, 4.0), std::min(a_long_cap, driver.idm_max_accel));
        const double v_next = std::clamp(v + a * dt, 0.0, sim::kDesiredSpeed);

        const double v_mid = 0.5 * (v + v_next);
        const double h_mid = heading + 0.5 * v_mid * kappa * dt;
        pos = pos + Vec2{std::cos(h_mid), std::sin(h_mid)} * (v_mid * dt);
        heading += v_mid * kappa * dt;
        v = v_next;
    }
    return ego;
}

/// Ambient vehicles on lanes parallel to the route: the adjacent same-direction
/// lane (right of the ego lane) and the two opposing lanes (left). Each runs
/// IDM behind the next vehicle in its lane, capped by a ramped speed profile
/// that respects the lane's curve radius. Lanes never cross the ego lane.
inline std::vector<AgentTrack> simulate_traffic(const RoutePlan& route, const ScenarioSpec& spec,
                                                std::uint64_t rng_seed, std::size_t frame_count,
                                                double rate_hz = 60.0) {
    std::vector<AgentTrack> out;
    if (spec.density == TrafficDensity::NoTraffic) return out;
    if (!(rate_hz > 0)) throw ConfigError("rate_hz must be positive");

    auto rng = sim::make_rng(rng_seed, {0x74726166});
    const int count = std::uniform_int_distribution<int>(3, 6)(rng);
    const double length = route.length();
    const double dt = 1.0 / rate_hz;

    struct Vehicle {
        double offset;     // lateral offset from the centerline, positive left
        double direction;  // +1 along the route, -1 against it
        double u;          // centerline arc length
        double v;          // world-frame speed
        double cruise;
    };
    const double lane_offsets[] = {-sim::kLaneWidth, sim::kLaneWidth, 2.0 * sim::kLaneWidth};
    std::vector<Vehicle> vehicles;
    for (int i = 0; i < count; ++i) {
        const int lane = std::uniform_int_distribution<int>(0, 2)(rng);
        const double dir = lane == 0 ? 1.0 : -1.0;
        const double cruise = lane == 0 ? spec.lead_speed_mps * sim::uniform(rng, 0.9, 1.1) : sim::uniform(rng, 11.0, 17.0);
        double u = 0.0;
        for (int attempt = 0; attempt < 100; ++attempt) {
            u = sim::uniform(rng, 0.1 * length, 0.9 * length);
            bool clear = true;
            for (const auto& o : vehicles)
                if (o.offset == lane_offsets[lane] && std::abs(o.u - u) < 40.0) clear = false;
            if (clear) break;
        }
        vehicles.push_back({lane_offsets[lane], dir, u, 0.0, cruise});
    }

    auto stretch = [&](const Vehicle& veh, double u) {
        return std::max(0.05, std::abs(1.0 - route.curvature_at(u) * veh.offset));
    };
    // Moves `dist` meters of world distance along the vehicle's offset lane,
    // crossing segment boundaries exactly. The end lines extend indefinitely.
    auto advance = [&](const Vehicle& veh, double u, double dist) {
        const auto& first = route.segments.front();
        const auto& last = route.segments.back();
        while (dist > 0.0) {
            if (veh.direction > 0 && u >= last.s_begin) return u + dist;
            if (veh.direction < 0 && u <= first.s_end()) return u - dist;
            const std::size_t i = route.segment_index(veh.direction > 0 ? u : u - 1e-9);
            const auto& seg = route.segments[i];
            const double st = stretch(veh, seg.s_begin + 0.5 * seg.length);
            const double room = veh.direction > 0 ? seg.s_end() - u : u - seg.s_begin;
            if (dist < room * st) return u + veh.direction * dist / st;
            u = veh.direction > 0 ? seg.s_end() : seg.s_begin;
            dist -= room * st;
        }
        return u;
    };
    auto speed_cap = [&](const Vehicle& veh, double u) {
        auto arc_speed = [&](const RouteSegment& seg) {
            const double r = std::abs(1.0 / seg.curvature - veh.offset);
            return std::min(sim::kTurnSpeed, std::sqrt(sim::kTrafficArcLateralAccel * r));
        };
        return sim::ramped_speed(route, u, veh.cruise, sim::kLeadAccel, arc_speed);
    };
    for (auto& veh : vehicles) veh.v = speed_cap(veh, veh.u);

    const DriverParams idm{};
    for (std::size_t i = 0; i < vehicles.size(); ++i)
        out.push_back({"other" + std::to_string(i + 1), AgentClass::Other, {}});

    for (std::size_t k = 0; k < frame_count; ++k) {
        for (std::size_t i = 0; i < vehicles.size(); ++i) {
            const auto& veh = vehicles[i];
            const Vec2 p = route.point_at(veh.u) + route.left_normal_at(veh.u) * veh.offset;
            out[i].points.push_back({double(k) / rate_hz, p.x, p.y});
        }
        std::vector<Vehicle> next = vehicles;
        for (std::size_t i = 0; i < vehicles.size(); ++i) {
            const auto& veh = vehicles[i];
            double gap = std::numeric_limits<double>::infinity();
            double v_lead = veh.v;
            for (std::size_t j = 0; j < vehicles.size(); ++j) {
                const auto& o = vehicles[j];
                if (j == i || o.offset != veh.offset) continue;
                const double ahead = (o.u - veh.u) * veh.direction;
                if (ahead > 0 && ahead - sim::kVehicleLength < gap) {
                    gap = ahead - sim::kVehicleLength;
                    v_lead = o.v;
                }
            }
            double a = std::isfinite(gap) ? sim::idm_accel(idm, veh.v, v_lead, gap, veh.cruise)
                                          : idm.idm_max_accel * (1.0 - std::pow(veh.v / veh.cruise, 4));
            a = std::clamp(a, -3.5, idm.idm_max_accel);
            auto& nv = next[i];
            nv.v = std::clamp(veh.v + a * dt, 0.0, speed_cap(veh, veh.u));
            nv.u = advance(veh, veh.u, 0.5 * (veh.v + nv.v) * dt);
        }
        vehicles = std::move(next);
    }
    return out;
}

/// Log-normal perturbation of the default driver, sampled once per driver.
inline DriverParams sample_driver(std::uint64_t rng_seed, std::size_t driver_index) {
    auto rng = sim::make_rng(rng_seed, {0x647276, driver_index});
    std::normal_distribution<double> g(0.0, 1.0);
    const DriverParams base{};
    DriverParams d;
    d.idm_desired_gap_s = base.idm_desired_gap_s * std::exp(0.2 * g(rng));
    d.idm_max_accel = base.idm_max_accel * std::exp(0.15 * g(rng));
    d.idm_comfort_decel = base.idm_comfort_decel * std::exp(0.15 * g(rng));
    d.idm_min_spacing = std::max(2.0, 2.5 * std::exp(0.2 * g(rng)));
    d.lateral_offset_bias = std::clamp(0.3 * g(rng), -0.8, 0.8);
    d.lateral_noise_std = base.lateral_noise_std * std::exp(0.3 * g(rng));
    d.reaction_delay_s = base.reaction_delay_s * std::exp(0.25 * g(rng));
    return d;
}

/// Simulates one complete drive. Collisions are regenerated with fresh seeds.
inline Scene simulate_scene(const ScenarioSpec& spec, const DriverParams& driver, std::uint64_t seed,
                            std::string scene_id, std::string driver_id, double rate_hz = 60.0) {
    const RoutePlan route = build_route(spec, seed);
    AgentTrack lead = simulate_lead(route, spec, rate_hz);
    for (std::uint64_t attempt = 0;; ++attempt) {
        try {
            Scene scene;
            scene.scene_id = scene_id;
            scene.driver_id = driver_id;
            scene.scenario = spec;
            scene.sample_rate_hz = rate_hz;
            scene.tracks.push_back(simulate_ego(lead, driver, seed + 7919 * attempt));
            scene.tracks.push_back(lead);
            for (auto& t : simulate_traffic(route, spec, seed, lead.points.size(), rate_hz))
                scene.tracks.push_back(std::move(t));
            return scene;
        } catch (const SimulationDiverged&) {
            if (attempt >= 16) throw;
        }
    }
}

struct ManifestEntry {
    std::string path;  // relative to the dataset directory
    std::string scene_id;
    std::string driver_id;
    ScenarioSpec scenario;
};

struct Manifest {
    std::vector<ManifestEntry> entries;

    std::vector<std::string> driver_ids() const {
        std::vector<std::string> ids;
        for (const auto& e : entries)
            if (std::find(ids.begin(), ids.end(), e.driver_id) == ids.end()) ids.push_back(e.driver_id);
        return ids;
    }
};

}  // namespace followme
