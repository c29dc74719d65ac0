#include "lord/geometry.hpp"

#include <algorithm>

namespace lord {

LanePath::LanePath(std::vector<Vec2> pts) : pts_(std::move(pts)) {
    if (pts_.size() < 2) throw DataError("LanePath: need at least 2 points");
    cum_.resize(pts_.size(), 0.0);
    for (std::size_t i = 1; i < pts_.size(); ++i) {
        const double d = (pts_[i] - pts_[i - 1]).norm();
        cum_[i] = cum_[i - 1] + d;
    }
    if (cum_.back() <= 0.0) throw DataError("LanePath: degenerate polyline (zero length)");
}

int LanePath::segment_of(double s, double* t_out) const {
    if (s <= 0.0) {
        *t_out = s / (cum_[1] - cum_[0]);
        return 0;
    }
    if (s >= cum_.back()) {
        const int last = static_cast<int>(pts_.size()) - 2;
        const double seg = cum_[last + 1] - cum_[last];
        *t_out = 1.0 + (s - cum_.back()) / seg;
        return last;
    }
    const auto it = std::upper_bound(cum_.begin(), cum_.end(), s);
    int i = static_cast<int>(it - cum_.begin()) - 1;
    i = std::min(i, static_cast<int>(pts_.size()) - 2);
    const double seg = cum_[i + 1] - cum_[i];
    *t_out = seg > 0.0 ? (s - cum_[i]) / seg : 0.0;
    return i;
}

Vec2 LanePath::point_at(double s) const {
    double t = 0.0;
    const int i = segment_of(s, &t);
    const Vec2 a = pts_[static_cast<std::size_t>(i)];
    const Vec2 b = pts_[static_cast<std::size_t>(i) + 1];
    return a + (b - a) * t;
}

Vec2 LanePath::tangent_at(double s) const {
    double t = 0.0;
    const int i = segment_of(s, &t);
    const Vec2 a = pts_[static_cast<std::size_t>(i)];
    const Vec2 b = pts_[static_cast<std::size_t>(i) + 1];
    return (b - a).normalized();
}

void LanePath::project(Vec2 p, double* s_out, double* lateral_out) const {
    double best_d2 = 1e300;
    double best_s = 0.0;
    double best_lat = 0.0;
    for (std::size_t i = 0; i + 1 < pts_.size(); ++i) {
        const Vec2 a = pts_[i];
        const Vec2 b = pts_[i + 1];
        const Vec2 ab = b - a;
        const double len2 = ab.dot(ab);
        double t = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
        // End segments extrapolate so projections beyond the polyline stay
        // consistent with point_at/tangent_at.
        if (i > 0) t = std::max(t, 0.0);
        if (i + 2 < pts_.size()) t = std::min(t, 1.0);
        const Vec2 q = a + ab * t;
        const Vec2 d = p - q;
        const double d2 = d.dot(d);
        if (d2 < best_d2) {
            best_d2 = d2;
            best_s = cum_[i] + t * std::sqrt(len2);
            const Vec2 n = ab.normalized().perp();
            best_lat = d.dot(n);
        }
    }
    if (s_out) *s_out = best_s;
    if (lateral_out) *lateral_out = best_lat;
}

}  // namespace lord
