#pragma once

#include <cmath>
#include <vector>

#include "lord/errors.hpp"

namespace lord {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    double dot(Vec2 o) const { return x * o.x + y * o.y; }
    double norm() const { return std::sqrt(x * x + y * y); }
    Vec2 normalized() const {
        const double n = norm();
        return n > 0.0 ? Vec2{x / n, y / n} : Vec2{1.0, 0.0};
    }
    // 90-degree counter-clockwise rotation (left normal of a tangent).
    Vec2 perp() const { return {-y, x}; }
};

// Polyline with arc-length parameterization. Queries beyond either end
// extrapolate along the end tangents, so planner horizons never fall off
// the map.
class LanePath {
public:
    explicit LanePath(std::vector<Vec2> pts);

    double length() const { return cum_.back(); }
    Vec2 point_at(double s) const;
    Vec2 tangent_at(double s) const;  // unit
    Vec2 normal_at(double s) const { return tangent_at(s).perp(); }

    // Closest-point projection: arc position and signed lateral offset
    // (positive to the left of the driving direction).
    void project(Vec2 p, double* s_out, double* lateral_out) const;

    const std::vector<Vec2>& points() const { return pts_; }

private:
    std::vector<Vec2> pts_;
    std::vector<double> cum_;

    int segment_of(double s, double* t_out) const;
};

}  // namespace lord
