#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>

#include "linalg.hpp"

namespace downscaler {

inline constexpr double kEarthRadiusKm = 6371.0;
inline constexpr double kKmPerDegree = 2.0 * std::numbers::pi * kEarthRadiusKm / 360.0;

struct LonLat {
    double lon = 0.0;
    double lat = 0.0;
};

enum class DistanceMetric { GreatCircle, Chordal };

namespace detail {
inline double deg2rad(double d) { return d * std::numbers::pi / 180.0; }
}  // namespace detail

/// Haversine great-circle distance.
inline double great_circle_km(LonLat a, LonLat b) {
    using detail::deg2rad;
    const double dlat = deg2rad(b.lat - a.lat);
    const double dlon = deg2rad(b.lon - a.lon);
    const double s = std::sin(dlat / 2.0);
    const double t = std::sin(dlon / 2.0);
    double h = s * s + std::cos(deg2rad(a.lat)) * std::cos(deg2rad(b.lat)) * t * t;
    h = std::clamp(h, 0.0, 1.0);
    return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(h));
}

/// Straight-line (3-D Euclidean) distance through the sphere.
inline double chordal_km(LonLat a, LonLat b) {
    using detail::deg2rad;
    auto xyz = [](LonLat p) {
        const double la = deg2rad(p.lat);
        const double lo = deg2rad(p.lon);
        return Eigen::Vector3d(std::cos(la) * std::cos(lo), std::cos(la) * std::sin(lo), std::sin(la));
    };
    return kEarthRadiusKm * (xyz(a) - xyz(b)).norm();
}

inline double distance_km(LonLat a, LonLat b, DistanceMetric metric) {
    return metric == DistanceMetric::GreatCircle ? great_circle_km(a, b) : chordal_km(a, b);
}

inline Mat distance_matrix(std::span<const LonLat> a, std::span<const LonLat> b, DistanceMetric metric) {
    Mat d(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(b.size()));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j)
            d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = distance_km(a[i], b[j], metric);
    return d;
}

inline Mat distance_matrix(std::span<const LonLat> a, DistanceMetric metric) {
    const auto n = static_cast<Eigen::Index>(a.size());
    Mat d = Mat::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) {
            d(i, j) = distance_km(a[static_cast<std::size_t>(i)], a[static_cast<std::size_t>(j)], metric);
            d(j, i) = d(i, j);
        }
    return d;
}

}  // namespace downscaler
