#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "dept/errors.hpp"
#include "dept/grid.hpp"

namespace dept {

// Camera depths at or below this are treated as behind the image plane.
inline constexpr double kMinCameraDepth = 1e-6;

// Pinhole intrinsics. No distortion model; coordinates in pixels.
struct CameraModel {
    double fx = 0.0;
    double fy = 0.0;
    double cx = 0.0;
    double cy = 0.0;
    int image_w = 0;
    int image_h = 0;

    void validate() const {
        if (!(fx > 0.0) || !(fy > 0.0)) throw Error("camera focal lengths must be positive");
        if (image_w <= 0 || image_h <= 0) throw Error("camera image dims must be positive");
        if (!(cx >= 0.0 && cx < image_w) || !(cy >= 0.0 && cy < image_h))
            throw Error("principal point outside image");
    }
};

// Rigid transform p -> R p + t. Rotation must be orthonormal with det +1.
struct RigidTransform {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    static RigidTransform identity() { return RigidTransform{}; }

    RigidTransform inverse() const {
        RigidTransform inv;
        inv.rotation = rotation.transpose();
        inv.translation = -(rotation.transpose() * translation);
        return inv;
    }

    void validate(double tol = 1e-6) const {
        const Eigen::Matrix3d err = rotation.transpose() * rotation - Eigen::Matrix3d::Identity();
        if (err.cwiseAbs().maxCoeff() > tol) throw Error("rotation is not orthonormal");
        if (std::abs(rotation.determinant() - 1.0) > tol) throw Error("rotation determinant != +1");
        if (!translation.allFinite()) throw Error("translation is not finite");
    }
};

// a ∘ b: apply b first, then a.
inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
    RigidTransform out;
    out.rotation = a.rotation * b.rotation;
    out.translation = a.rotation * b.translation + a.translation;
    return out;
}

inline Eigen::Vector3d transform_point(const Eigen::Vector3d& p, const RigidTransform& t) {
    return t.rotation * p + t.translation;
}

// One lidar return in the sensor frame. Matches the 16-byte wire layout.
struct LidarPoint {
    float x = 0.0f;
    float y = 0.0f;
    float z = 0.0f;
    float intensity = 0.0f;
};

struct PixelDepth {
    double u = 0.0;
    double v = 0.0;
    double depth = 0.0;
};

inline std::optional<PixelDepth> try_project_point(const Eigen::Vector3d& p, const CameraModel& cam) {
    if (!(p.z() > kMinCameraDepth)) return std::nullopt;
    PixelDepth out;
    out.u = cam.fx * p.x() / p.z() + cam.cx;
    out.v = cam.fy * p.y() / p.z() + cam.cy;
    out.depth = p.z();
    return out;
}

inline PixelDepth project_point(const Eigen::Vector3d& p, const CameraModel& cam) {
    auto proj = try_project_point(p, cam);
    if (!proj) throw NonPositiveDepth(p.z());
    return *proj;
}

inline Eigen::Vector3d back_project(double u, double v, double depth, const CameraModel& cam) {
    return {(u - cam.cx) * depth / cam.fx, (v - cam.cy) * depth / cam.fy, depth};
}

// Stride-aligned grid of lidar depths. depth == 0 marks an empty cell;
// every present depth is positive camera-frame z in meters.
struct SparseDepthMap {
    int width = 0;
    int height = 0;
    int stride = 1;
    std::vector<double> depth;

    SparseDepthMap() = default;
    SparseDepthMap(int w, int h, int s)
        : width(w), height(h), stride(s), depth(static_cast<size_t>(w) * h, 0.0) {}

    // Grid dims are ceil(image dims / stride).
    static SparseDepthMap sized_for(const CameraModel& cam, int stride) {
        return SparseDepthMap((cam.image_w + stride - 1) / stride,
                              (cam.image_h + stride - 1) / stride, stride);
    }

    int index(int x, int y) const { return y * width + x; }
    bool present(int x, int y) const { return depth[index(x, y)] > 0.0; }
    double at(int x, int y) const { return depth[index(x, y)]; }

    void set(int x, int y, double d) {
        if (!(d > 0.0) || !std::isfinite(d)) throw Error("depth must be positive and finite");
        depth[index(x, y)] = d;
    }
    void clear(int x, int y) { depth[index(x, y)] = 0.0; }

    int present_count() const {
        return static_cast<int>(std::count_if(depth.begin(), depth.end(),
                                              [](double d) { return d > 0.0; }));
    }

    bool operator==(const SparseDepthMap&) const = default;
};

// Project lidar returns into a sparse depth map. Points behind the camera or
// off the image are skipped; image bounds are half-open ([0, w) x [0, h)).
// When several points land in one cell the smallest depth wins, so the result
// does not depend on point order.
inline SparseDepthMap lidar_to_sparse_depth(std::span<const LidarPoint> points,
                                            const RigidTransform& lidar_to_cam,
                                            const CameraModel& cam, int stride) {
    if (stride < 1) throw Error("stride must be >= 1");
    cam.validate();
    SparseDepthMap map = SparseDepthMap::sized_for(cam, stride);
    for (const LidarPoint& pt : points) {
        const Eigen::Vector3d p_cam =
            transform_point(Eigen::Vector3d(pt.x, pt.y, pt.z), lidar_to_cam);
        const auto proj = try_project_point(p_cam, cam);
        if (!proj) continue;
        if (!(proj->u >= 0.0 && proj->u < cam.image_w && proj->v >= 0.0 && proj->v < cam.image_h))
            continue;
        const int cell_x = static_cast<int>(std::floor(proj->u / stride));
        const int cell_y = static_cast<int>(std::floor(proj->v / stride));
        const int idx = map.index(cell_x, cell_y);
        if (map.depth[idx] == 0.0 || proj->depth < map.depth[idx]) map.depth[idx] = proj->depth;
    }
    return map;
}

inline SparseDepthMap lidar_to_sparse_depth(const std::vector<LidarPoint>& points,
                                            const RigidTransform& lidar_to_cam,
                                            const CameraModel& cam, int stride) {
    return lidar_to_sparse_depth(std::span<const LidarPoint>(points), lidar_to_cam, cam, stride);
}

}  // namespace dept
