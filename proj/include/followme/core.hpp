#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "followme/errors.hpp"
#include "followme/tensor.hpp"

namespace followme {

enum class AgentClass { Ego, Lead, Other };

inline std::string_view to_string(AgentClass c) {
    switch (c) {
        case AgentClass::Ego: return "ego";
        case AgentClass::Lead: return "lead";
        case AgentClass::Other: return "other";
    }
    return "other";
}

inline std::optional<AgentClass> parse_agent_class(std::string_view s) {
    if (s == "ego") return AgentClass::Ego;
    if (s == "lead") return AgentClass::Lead;
    if (s == "other") return AgentClass::Other;
    return std::nullopt;
}

enum class TrafficDensity { NoTraffic, WithTraffic };
enum class Operation { Straight, LeftTurn, RightTurn };

inline constexpr double kLeadSpeed30Mph = 13.41;
inline constexpr double kLeadSpeed40Mph = 17.88;

inline std::string_view to_string(TrafficDensity d) {
    return d == TrafficDensity::NoTraffic ? "NO_TRAFFIC" : "WITH_TRAFFIC";
}

inline std::string_view to_string(Operation op) {
    switch (op) {
        case Operation::Straight: return "STRAIGHT";
        case Operation::LeftTurn: return "LEFT_TURN";
        case Operation::RightTurn: return "RIGHT_TURN";
    }
    return "STRAIGHT";
}

inline std::optional<TrafficDensity> parse_density(std::string_view s) {
    if (s == "NO_TRAFFIC") return TrafficDensity::NoTraffic;
    if (s == "WITH_TRAFFIC") return TrafficDensity::WithTraffic;
    return std::nullopt;
}

inline std::optional<Operation> parse_operation(std::string_view s) {
    if (s == "STRAIGHT") return Operation::Straight;
    if (s == "LEFT_TURN") return Operation::LeftTurn;
    if (s == "RIGHT_TURN") return Operation::RightTurn;
    return std::nullopt;
}

/// One cell of the 2 (density) x 2 (lead speed) x 3 (operation) study design.
struct ScenarioSpec {
    TrafficDensity density = TrafficDensity::NoTraffic;
    double lead_speed_mps = kLeadSpeed30Mph;
    Operation operation = Operation::Straight;

    bool is_turn() const { return operation != Operation::Straight; }
    bool operator==(const ScenarioSpec&) const = default;
};

/// The full factorial design, in a fixed order.
inline std::vector<ScenarioSpec> all_scenarios() {
    std::vector<ScenarioSpec> out;
    for (auto d : {TrafficDensity::NoTraffic, TrafficDensity::WithTraffic})
        for (double v : {kLeadSpeed30Mph, kLeadSpeed40Mph})
            for (auto op : {Operation::Straight, Operation::LeftTurn, Operation::RightTurn})
                out.push_back({d, v, op});
    return out;
}

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    double dot(Vec2 o) const { return x * o.x + y * o.y; }
    double norm() const { return std::hypot(x, y); }
    bool operator==(const Vec2&) const = default;
};

struct TrajectoryPoint {
    double t = 0.0;
    double x = 0.0;
    double y = 0.0;

    Vec2 pos() const { return {x, y}; }
};

struct AgentTrack {
    std::string agent_id;
    AgentClass cls = AgentClass::Other;
    std::vector<TrajectoryPoint> points;
};

struct Scene {
    std::string scene_id;
    std::string driver_id;
    ScenarioSpec scenario;
    double sample_rate_hz = 60.0;
    std::vector<AgentTrack> tracks;

    std::size_t frame_count() const { return tracks.empty() ? 0 : tracks.front().points.size(); }
};

inline std::optional<std::size_t> find_unique(const Scene& scene, AgentClass cls) {
    std::optional<std::size_t> found;
    for (std::size_t i = 0; i < scene.tracks.size(); ++i) {
        if (scene.tracks[i].cls != cls) continue;
        if (found) return std::nullopt;
        found = i;
    }
    return found;
}

/// Checks the structural scene invariants; throws MalformedScene on violation.
inline void validate_scene(const Scene& scene) {
    if (!(scene.sample_rate_hz > 0.0)) throw MalformedScene("sample rate must be positive");
    if (!find_unique(scene, AgentClass::Ego)) throw MalformedScene("scene needs exactly one ego track");
    if (!find_unique(scene, AgentClass::Lead)) throw MalformedScene("scene needs exactly one lead track");
    const std::size_t frames = scene.frame_count();
    if (frames < 2) throw MalformedScene("tracks need at least 2 points");
    for (const auto& track : scene.tracks) {
        if (track.points.size() != frames)
            throw MalformedScene("track " + track.agent_id + " does not cover the common span");
        for (std::size_t i = 0; i < track.points.size(); ++i) {
            const auto& p = track.points[i];
            if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.t))
                throw MalformedScene("non-finite coordinate in track " + track.agent_id);
            if (i > 0 && !(p.t > track.points[i - 1].t))
                throw MalformedScene("timestamps not increasing in track " + track.agent_id);
        }
    }
}

/// Feature channel layout of an observation window.
inline constexpr std::size_t kFeatureChannels = 5;
inline constexpr std::size_t kChannelX = 0;
inline constexpr std::size_t kChannelY = 1;
inline constexpr std::size_t kChannelEgo = 2;
inline constexpr std::size_t kChannelLead = 3;
inline constexpr std::size_t kChannelOther = 4;

inline std::size_t class_channel(AgentClass c) {
    switch (c) {
        case AgentClass::Ego: return kChannelEgo;
        case AgentClass::Lead: return kChannelLead;
        case AgentClass::Other: return kChannelOther;
    }
    return kChannelOther;
}

/// Provenance of a window, kept for filtering and diagnostics.
struct WindowSource {
    std::string scene_id;
    std::string driver_id;
    ScenarioSpec scenario;
    std::size_t obs_end_frame = 0;
};

/// Model input: ego-anchored features [5, T_o, N] plus agent validity.
struct ObservationWindow {
    Tensor features;
    std::vector<bool> mask;
    std::vector<AgentClass> classes;  // meaningful where mask is true
    std::size_t ego_index = 0;
    std::size_t lead_index = 1;
    Vec2 origin;
    std::size_t horizon_frames = 0;
    WindowSource source;

    std::size_t t_obs() const { return features.dim(1); }
    std::size_t n_agents() const { return features.dim(2); }
    std::size_t valid_count() const { return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true)); }
};

/// Ground-truth ego future [2, T_p] in the window's normalized frame.
struct EgoTarget {
    Tensor positions;

    std::size_t frames() const { return positions.dim(1); }
};

inline constexpr std::size_t kDefaultObsFrames = 10;
inline constexpr std::size_t kDefaultMaxAgents = 8;

/// Cuts one observation/target pair out of a scene.
///
/// Coordinates are translated so the ego's last observed position is the
/// origin. Slot 0 holds the ego, slot 1 the lead, and the remaining slots hold
/// OTHER agents ordered by distance to the ego at the last observed frame;
/// the farthest are dropped when they do not fit. Unused slots stay zero with
/// mask false.
inline std::pair<ObservationWindow, EgoTarget> normalize_window(const Scene& scene, std::size_t obs_end_frame,
                                                                std::size_t horizon_frames,
                                                                std::size_t n_max = kDefaultMaxAgents,
                                                                std::size_t t_obs = kDefaultObsFrames) {
    if (n_max < 2) throw ConfigError("n_max must be at least 2");
    if (t_obs < 1 || horizon_frames < 1) throw ConfigError("observation and horizon lengths must be positive");
    const auto ego = find_unique(scene, AgentClass::Ego);
    const auto lead = find_unique(scene, AgentClass::Lead);
    if (!ego || !lead) throw MalformedScene("scene " + scene.scene_id + " needs exactly one ego and one lead");

    const std::size_t frames = scene.frame_count();
    for (const auto& tr : scene.tracks)
        if (tr.points.size() != frames) throw MalformedScene("tracks do not share a common span");
    if (obs_end_frame + 1 < t_obs || obs_end_frame + horizon_frames >= frames)
        throw WindowOutOfRange("window ending at frame " + std::to_string(obs_end_frame) + " needs frames [" +
                               std::to_string(static_cast<long long>(obs_end_frame) + 1 - static_cast<long long>(t_obs)) +
                               ", " + std::to_string(obs_end_frame + horizon_frames) + "] but scene has " +
                               std::to_string(frames));
    const std::size_t first = obs_end_frame + 1 - t_obs;
    const Vec2 origin = scene.tracks[*ego].points[obs_end_frame].pos();

    std::vector<std::size_t> others;
    for (std::size_t i = 0; i < scene.tracks.size(); ++i)
        if (scene.tracks[i].cls == AgentClass::Other) others.push_back(i);
    auto dist = [&](std::size_t i) { return (scene.tracks[i].points[obs_end_frame].pos() - origin).norm(); };
    std::stable_sort(others.begin(), others.end(), [&](std::size_t a, std::size_t b) { return dist(a) < dist(b); });
    if (others.size() > n_max - 2) others.resize(n_max - 2);

    std::vector<std::size_t> slots{*ego, *lead};
    slots.insert(slots.end(), others.begin(), others.end());

    ObservationWindow w;
    w.features = Tensor({kFeatureChannels, t_obs, n_max});
    w.mask.assign(n_max, false);
    w.classes.assign(n_max, AgentClass::Other);
    w.ego_index = 0;
    w.lead_index = 1;
    w.origin = origin;
    w.horizon_frames = horizon_frames;
    w.source = {scene.scene_id, scene.driver_id, scene.scenario, obs_end_frame};

    for (std::size_t n = 0; n < slots.size(); ++n) {
        const auto& track = scene.tracks[slots[n]];
        w.mask[n] = true;
        w.classes[n] = track.cls;
        const std::size_t cc = class_channel(track.cls);
        for (std::size_t t = 0; t < t_obs; ++t) {
            const auto& p = track.points[first + t];
            w.features.at(kChannelX, t, n) = p.x - origin.x;
            w.features.at(kChannelY, t, n) = p.y - origin.y;
            w.features.at(cc, t, n) = 1.0;
        }
    }

    EgoTarget target{Tensor({2, horizon_frames})};
    const auto& ego_pts = scene.tracks[*ego].points;
    for (std::size_t t = 0; t < horizon_frames; ++t) {
        const auto& p = ego_pts[obs_end_frame + 1 + t];
        target.positions.at(0, t) = p.x - origin.x;
        target.positions.at(1, t) = p.y - origin.y;
    }
    return {std::move(w), std::move(target)};
}

/// Maps a normalized [2, T_p] trajectory back to world coordinates.
inline Tensor denormalize_prediction(const Tensor& pred, Vec2 origin) {
    if (pred.rank() != 2 || pred.dim(0) != 2)
        throw ShapeError("prediction must be [2, T_p], got " + shape_string(pred.shape()));
    Tensor out = pred;
    for (std::size_t t = 0; t < pred.dim(1); ++t) {
        out.at(0, t) += origin.x;
        out.at(1, t) += origin.y;
    }
    return out;
}

}  // namespace followme
