#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "dept/errors.hpp"
#include "dept/geometry.hpp"

namespace dept {

// Axis-aligned 2D box in image pixels.
struct Box2D {
    int class_id = 0;
    double x_min = 0.0;
    double y_min = 0.0;
    double x_max = 0.0;
    double y_max = 0.0;
    double score = 1.0;

    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    double area() const { return width() * height(); }
    double center_x() const { return 0.5 * (x_min + x_max); }
    double center_y() const { return 0.5 * (y_min + y_max); }

    // Closed on all edges: a point on the boundary counts as inside.
    bool contains(double px, double py) const {
        return px >= x_min && px <= x_max && py >= y_min && py <= y_max;
    }

    void validate() const {
        if (class_id < 0) throw InvalidBox("negative class id");
        if (!(x_min < x_max) || !(y_min < y_max)) throw InvalidBox("non-positive extent");
        if (!(score >= 0.0 && score <= 1.0)) throw InvalidBox("score outside [0,1]");
    }
};

// Per-cell Laplace scale sigma_d on the same grid as the sparse depth map.
struct UncertaintyMap {
    int width = 0;
    int height = 0;
    std::vector<double> sigma;

    UncertaintyMap() = default;
    UncertaintyMap(int w, int h, double fill)
        : width(w), height(h), sigma(static_cast<size_t>(w) * h, fill) {}

    int index(int x, int y) const { return y * width + x; }
    double at(int x, int y) const { return sigma[index(x, y)]; }

    void validate() const {
        for (double s : sigma)
            if (!(s > 0.0) || !std::isfinite(s)) throw Error("sigma must be positive and finite");
    }
};

enum class Provenance : uint8_t { None = 0, Original = 1, Propagated = 2 };

// Semi-dense supervision grid: depth plus how each cell got it and its weight.
struct SemiDenseDepthTarget {
    int width = 0;
    int height = 0;
    int stride = 1;
    std::vector<double> depth;
    std::vector<Provenance> provenance;
    std::vector<double> weight;

    SemiDenseDepthTarget() = default;
    SemiDenseDepthTarget(int w, int h, int s)
        : width(w),
          height(h),
          stride(s),
          depth(static_cast<size_t>(w) * h, 0.0),
          provenance(static_cast<size_t>(w) * h, Provenance::None),
          weight(static_cast<size_t>(w) * h, 0.0) {}

    int index(int x, int y) const { return y * width + x; }
    bool supervised(int x, int y) const { return provenance[index(x, y)] != Provenance::None; }

    int supervised_count() const {
        int n = 0;
        for (Provenance p : provenance) n += (p != Provenance::None);
        return n;
    }
    int count(Provenance kind) const {
        int n = 0;
        for (Provenance p : provenance) n += (p == kind);
        return n;
    }

    bool operator==(const SemiDenseDepthTarget&) const = default;
};

// Uncertainty thresholds and patch sizes for depth propagation. Defaults are
// the method constants: sigma below 0.3 stamps a 5x5 patch, sigma in
// [0.3, 0.7] stamps 3x3, anything above keeps only the seed itself.
struct PropagationParams {
    double sigma_lo = 0.3;
    double sigma_hi = 0.7;
    int patch_lo = 5;
    int patch_hi = 3;
    double propagated_weight = 1.0;

    void validate() const {
        if (!(sigma_lo < sigma_hi)) throw Error("sigma thresholds must be ascending");
        if (patch_lo < 1 || patch_hi < 1 || patch_lo % 2 == 0 || patch_hi % 2 == 0)
            throw Error("patch sizes must be odd and >= 1");
        if (!(propagated_weight >= 0.0)) throw Error("propagated weight must be >= 0");
    }

    int patch_size(double sigma) const {
        if (sigma < sigma_lo) return patch_lo;
        if (sigma <= sigma_hi) return patch_hi;
        return 1;
    }
};

// Keep a cell iff its center pixel lies in at least one box and its depth is
// below max_depth. Cell centers are taken at stride*(i + 0.5) so the filter
// lives on the same grid as the model's output feature map.
inline SparseDepthMap region_filter(const SparseDepthMap& sparse, const std::vector<Box2D>& boxes,
                                    double max_depth = 60.0) {
    SparseDepthMap out(sparse.width, sparse.height, sparse.stride);
    for (int y = 0; y < sparse.height; ++y) {
        for (int x = 0; x < sparse.width; ++x) {
            if (!sparse.present(x, y)) continue;
            const double d = sparse.at(x, y);
            if (!(d < max_depth)) continue;
            const double px = sparse.stride * (x + 0.5);
            const double py = sparse.stride * (y + 0.5);
            for (const Box2D& box : boxes) {
                if (box.contains(px, py)) {
                    out.depth[out.index(x, y)] = d;
                    break;
                }
            }
        }
    }
    return out;
}

// Grow the sparse map into a semi-dense target. Every present cell is a seed;
// its sigma picks the patch stamped around it (clipped at the edges).
// Precedence in a contested cell: Original beats Propagated, then the seed
// with the lowest sigma wins, ties broken by lowest row-major seed index.
inline SemiDenseDepthTarget propagate(const SparseDepthMap& filtered, const UncertaintyMap& sigma,
                                      const PropagationParams& params = {}) {
    require_same_shape(filtered.width, filtered.height, sigma.width, sigma.height,
                       "depth vs sigma grid");
    params.validate();

    SemiDenseDepthTarget out(filtered.width, filtered.height, filtered.stride);

    struct Seed {
        int x, y;
        double depth, sigma;
        int order;  // row-major index, the tiebreak
    };
    std::vector<Seed> seeds;
    for (int y = 0; y < filtered.height; ++y)
        for (int x = 0; x < filtered.width; ++x)
            if (filtered.present(x, y))
                seeds.push_back({x, y, filtered.at(x, y), sigma.at(x, y), filtered.index(x, y)});

    // Seeds stay as-is.
    for (const Seed& s : seeds) {
        const int i = out.index(s.x, s.y);
        out.depth[i] = s.depth;
        out.provenance[i] = Provenance::Original;
        out.weight[i] = 1.0;
    }

    // Best propagated writer per cell, (sigma, order) lexicographic.
    std::vector<double> best_sigma(out.depth.size(), std::numeric_limits<double>::infinity());
    std::vector<int> best_order(out.depth.size(), -1);
    std::vector<double> best_depth(out.depth.size(), 0.0);

    for (const Seed& s : seeds) {
        const int radius = (params.patch_size(s.sigma) - 1) / 2;
        if (radius == 0) continue;
        const int x0 = std::max(0, s.x - radius), x1 = std::min(out.width - 1, s.x + radius);
        const int y0 = std::max(0, s.y - radius), y1 = std::min(out.height - 1, s.y + radius);
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const int i = out.index(x, y);
                if (out.provenance[i] == Provenance::Original) continue;
                if (s.sigma < best_sigma[i] ||
                    (s.sigma == best_sigma[i] && s.order < best_order[i])) {
                    best_sigma[i] = s.sigma;
                    best_order[i] = s.order;
                    best_depth[i] = s.depth;
                }
            }
        }
    }

    for (size_t i = 0; i < out.depth.size(); ++i) {
        if (best_order[i] < 0 || out.provenance[i] == Provenance::Original) continue;
        out.depth[i] = best_depth[i];
        out.provenance[i] = Provenance::Propagated;
        out.weight[i] = params.propagated_weight;
    }
    return out;
}

// Whole per-frame depth path: project, filter, propagate.
inline SemiDenseDepthTarget build_depth_target(std::span<const LidarPoint> points,
                                               const RigidTransform& lidar_to_cam,
                                               const CameraModel& cam,
                                               const std::vector<Box2D>& boxes,
                                               const UncertaintyMap& sigma, int stride,
                                               double max_depth = 60.0,
                                               const PropagationParams& params = {}) {
    const SparseDepthMap sparse = lidar_to_sparse_depth(points, lidar_to_cam, cam, stride);
    return propagate(region_filter(sparse, boxes, max_depth), sigma, params);
}

}  // namespace dept
