#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "followme/core.hpp"

namespace followme {

/// A straight line or a constant-curvature arc. Curvature is signed, positive
/// when turning left.
struct RouteSegment {
    Vec2 start;
    double heading = 0.0;
    double length = 0.0;
    double curvature = 0.0;
    double s_begin = 0.0;

    bool is_arc() const { return curvature != 0.0; }
    double s_end() const { return s_begin + length; }

    Vec2 point(double u) const {
        if (!is_arc()) return {start.x + u * std::cos(heading), start.y + u * std::sin(heading)};
        const double th = heading + curvature * u;
        return {start.x + (std::sin(th) - std::sin(heading)) / curvature,
                start.y - (std::cos(th) - std::cos(heading)) / curvature};
    }
    double heading_at(double u) const { return heading + curvature * u; }
};

struct IntersectionMarker {
    Operation operation = Operation::Straight;
    double s_begin = 0.0;
    double s_end = 0.0;
    bool evaluated = false;
};

/// Analytic centerline of one drive plus its intersection labels.
struct RoutePlan {
    std::vector<RouteSegment> segments;
    std::vector<double> segment_speeds;  // lead target speed per segment
    std::vector<IntersectionMarker> intersections;

    double length() const { return segments.empty() ? 0.0 : segments.back().s_end(); }

    std::size_t segment_index(double s) const {
        auto it = std::upper_bound(segments.begin(), segments.end(), s,
                                   [](double v, const RouteSegment& seg) { return v < seg.s_begin; });
        std::size_t i = it == segments.begin() ? 0 : static_cast<std::size_t>(it - segments.begin()) - 1;
        return std::min(i, segments.size() - 1);
    }

    Vec2 point_at(double s) const {
        const auto& seg = segments[segment_index(s)];
        return seg.point(s - seg.s_begin);
    }
    double heading_at(double s) const {
        const auto& seg = segments[segment_index(s)];
        return seg.heading_at(s - seg.s_begin);
    }
    double curvature_at(double s) const { return segments[segment_index(s)].curvature; }
    Vec2 left_normal_at(double s) const {
        const double h = heading_at(s);
        return {-std::sin(h), std::cos(h)};
    }

    /// Polyline sampling of the centerline with roughly `spacing` meters between points.
    std::vector<Vec2> waypoints(double spacing = 1.0) const {
        std::vector<Vec2> out;
        for (const auto& seg : segments) {
            const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(seg.length / spacing)));
            for (std::size_t i = 0; i < n; ++i) out.push_back(seg.point(seg.length * double(i) / double(n)));
        }
        if (!segments.empty()) out.push_back(segments.back().point(segments.back().length));
        return out;
    }
};

/// Dense polyline with cumulative arc length, used to follow a recorded path.
/// Queries before the start extrapolate along the first segment.
class PolylinePath {
public:
    explicit PolylinePath(std::vector<Vec2> pts) : pts_(std::move(pts)) {
        cum_.assign(pts_.size(), 0.0);
        for (std::size_t i = 1; i < pts_.size(); ++i) cum_[i] = cum_[i - 1] + (pts_[i] - pts_[i - 1]).norm();
    }

    double length() const { return cum_.back(); }
    double s_of(std::size_t i) const { return cum_[i]; }

    Vec2 point_at(double s) const {
        const auto [i, u] = locate(s);
        const Vec2 d = pts_[i + 1] - pts_[i];
        const double len = cum_[i + 1] - cum_[i];
        return pts_[i] + d * (len > 0 ? u / len : 0.0);
    }

    Vec2 tangent_at(double s) const {
        const auto i = locate(s).first;
        const Vec2 d = pts_[i + 1] - pts_[i];
        const double n = d.norm();
        return n > 0 ? d * (1.0 / n) : Vec2{1.0, 0.0};
    }

    /// Arc length of the closest point, searching segments within `window`
    /// meters of `s_hint`. Returns (s, signed lateral offset, positive left).
    std::pair<double, double> project(Vec2 p, double s_hint, double window = 30.0) const {
        std::size_t lo = locate(s_hint - window).first;
        std::size_t hi = locate(s_hint + window).first;
        double best_d2 = INFINITY, best_s = s_hint, best_lat = 0.0;
        // Allow extrapolation before the first point.
        if (lo == 0) {
            const Vec2 tan = tangent_at(0.0);
            const double u = std::min(0.0, (p - pts_[0]).dot(tan));
            const Vec2 q = pts_[0] + tan * u;
            const double d2 = (p - q).dot(p - q);
            if (d2 < best_d2) {
                best_d2 = d2;
                best_s = u;
                best_lat = (p - q).dot(Vec2{-tan.y, tan.x});
            }
        }
        for (std::size_t i = lo; i <= hi && i + 1 < pts_.size(); ++i) {
            const Vec2 d = pts_[i + 1] - pts_[i];
            const double len2 = d.dot(d);
            if (len2 <= 0) continue;
            const double u = std::clamp((p - pts_[i]).dot(d) / len2, 0.0, 1.0);
            const Vec2 q = pts_[i] + d * u;
            const double d2 = (p - q).dot(p - q);
            if (d2 < best_d2) {
                best_d2 = d2;
                best_s = cum_[i] + u * std::sqrt(len2);
                const Vec2 tan = d * (1.0 / std::sqrt(len2));
                best_lat = (p - q).dot(Vec2{-tan.y, tan.x});
            }
        }
        return {best_s, best_lat};
    }

private:
    // (segment index, distance along that segment); s is clamped past the end
    // but may be negative before the start.
    std::pair<std::size_t, double> locate(double s) const {
        if (s <= 0) return {0, s};
        if (s >= cum_.back()) return {pts_.size() - 2, cum_.back() - cum_[pts_.size() - 2]};
        auto it = std::upper_bound(cum_.begin(), cum_.end(), s);
        const std::size_t i = static_cast<std::size_t>(it - cum_.begin()) - 1;
        return {std::min(i, pts_.size() - 2), s - cum_[i]};
    }

    std::vector<Vec2> pts_;
    std::vector<double> cum_;
};

}  // namespace followme
