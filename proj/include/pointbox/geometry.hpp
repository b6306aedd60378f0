#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "pointbox/error.hpp"

namespace pointbox {

template <typename T>
struct Point {
    T x = 0;
    T y = 0;

    friend bool operator==(const Point&, const Point&) = default;
};

/// Axis-aligned box in center form. Pixel units, sub-pixel precision.
template <typename T>
struct Box {
    T cx = 0;
    T cy = 0;
    T w = 1;
    T h = 1;

    static Box from_corners(T x1, T y1, T x2, T y2) {
        return {(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1};
    }

    T x1() const { return cx - w / 2; }
    T y1() const { return cy - h / 2; }
    T x2() const { return cx + w / 2; }
    T y2() const { return cy + h / 2; }
    T area() const { return w * h; }
    Point<T> center() const { return {cx, cy}; }

    friend bool operator==(const Box&, const Box&) = default;
};

/// Anchor-relative regression offsets: scale-invariant center shift and
/// log-space extent change.
template <typename T>
struct RegDeltas {
    T dx = 0;
    T dy = 0;
    T dw = 0;
    T dh = 0;

    friend bool operator==(const RegDeltas&, const RegDeltas&) = default;
};

using Pointd = Point<double>;
using Boxd = Box<double>;
using RegDeltasd = RegDeltas<double>;

inline constexpr double kDeltaClamp = 4.0;

template <typename T>
T iou(const Box<T>& a, const Box<T>& b) {
    const T iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
    const T ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
    if (iw <= 0 || ih <= 0) {
        return 0;
    }
    const T inter = iw * ih;
    return inter / (a.area() + b.area() - inter);
}

template <typename T>
T clamp_delta(T d) {
    return std::clamp(d, T(-kDeltaClamp), T(kDeltaClamp));
}

template <typename T>
Box<T> decode(const Box<T>& a, const RegDeltas<T>& d) {
    return {a.w * d.dx + a.cx, a.h * d.dy + a.cy,
            a.w * std::exp(clamp_delta(d.dw)), a.h * std::exp(clamp_delta(d.dh))};
}

template <typename T>
RegDeltas<T> encode(const Box<T>& a, const Box<T>& g) {
    return {(g.cx - a.cx) / a.w, (g.cy - a.cy) / a.h,
            std::log(g.w / a.w), std::log(g.h / a.h)};
}

template <typename T>
T distance(const Point<T>& a, const Point<T>& b) {
    return std::hypot(a.x - b.x, a.y - b.y);
}

/// Distance from every point to its nearest other point, in input order.
/// Sweeps over x-sorted points and stops once the x-gap alone exceeds the
/// best distance found so far.
template <typename T>
std::vector<T> nn_distances(std::span<const Point<T>> points) {
    const std::size_t n = points.size();
    if (n < 2) {
        throw FewerThanTwoPoints("nn_distances needs at least two points");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return points[a].x < points[b].x;
    });

    std::vector<T> best(n, std::numeric_limits<T>::infinity());
    for (std::size_t r = 0; r < n; ++r) {
        const auto& p = points[order[r]];
        T& bp = best[order[r]];
        for (std::size_t s = r + 1; s < n; ++s) {
            const auto& q = points[order[s]];
            if (q.x - p.x > bp) {
                break;
            }
            bp = std::min(bp, distance(p, q));
        }
        for (std::size_t s = r; s-- > 0;) {
            const auto& q = points[order[s]];
            if (p.x - q.x > bp) {
                break;
            }
            bp = std::min(bp, distance(p, q));
        }
    }
    return best;
}

template <typename T>
std::vector<T> nn_distances(const std::vector<Point<T>>& points) {
    return nn_distances(std::span<const Point<T>>(points));
}

} // namespace pointbox
