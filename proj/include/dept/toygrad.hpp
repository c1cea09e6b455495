#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "dept/depth_targets.hpp"
#include "dept/errors.hpp"
#include "dept/keypoint_targets.hpp"
#include "dept/losses.hpp"

// Desk-scale differentiable model: a per-cell MLP with manual backprop, a
// synthetic scene generator supplying depth and box supervision, and the
// pre-train / fine-tune comparison that the loss stack exists to support.
// Small enough that every gradient is checkable by finite differences.
namespace dept::toy {

enum class TrainMode { depth_only, detection_only, combined };

inline const char* mode_name(TrainMode m) {
    switch (m) {
        case TrainMode::depth_only: return "depth_only";
        case TrainMode::detection_only: return "detection_only";
        default: return "combined";
    }
}

// Two dense layers applied independently to each grid cell's feature vector.
// Outputs per cell: z (depth), s (log sigma), then one logit per heatmap
// channel, squashed by sigmoid. Parameters live in one flat vector so the
// finite-difference check can walk every entry.
struct ToyNet {
    int feature_dim = 8;
    int hidden = 32;
    int heat_channels = 6;  // 4 corner channels + one center channel per class
    std::vector<double> params;

    static constexpr int kDepthOutputs = 2;  // z and s
    int outputs() const { return kDepthOutputs + heat_channels; }

    size_t w1_offset() const { return 0; }
    size_t b1_offset() const { return static_cast<size_t>(hidden) * feature_dim; }
    size_t w2_offset() const { return b1_offset() + hidden; }
    size_t b2_offset() const { return w2_offset() + static_cast<size_t>(outputs()) * hidden; }
    size_t param_count() const { return b2_offset() + outputs(); }

    void init(int f, int h, int c, uint64_t seed, double scale = 0.1) {
        feature_dim = f;
        hidden = h;
        heat_channels = c;
        params.assign(param_count(), 0.0);
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> dist(0.0, scale);
        for (double& p : params) p = dist(rng);
    }

    bool finite() const {
        for (double p : params)
            if (!std::isfinite(p)) return false;
        return true;
    }
};

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMat>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

struct ToyOutputs {
    std::vector<double> z;
    std::vector<double> s;
    HeatmapSet heat;  // corner channels first, then one per class
};

// Features are a dim x (width*height) matrix, one column per cell in
// row-major cell order.
inline ToyOutputs forward(const ToyNet& net, const Eigen::MatrixXd& features, int width,
                          int height) {
    if (features.rows() != net.feature_dim)
        throw DimensionMismatch("feature dim vs net input size");
    if (features.cols() != static_cast<Eigen::Index>(width) * height)
        throw DimensionMismatch("feature count vs grid size");

    ConstMatMap w1(net.params.data() + net.w1_offset(), net.hidden, net.feature_dim);
    ConstVecMap b1(net.params.data() + net.b1_offset(), net.hidden);
    ConstMatMap w2(net.params.data() + net.w2_offset(), net.outputs(), net.hidden);
    ConstVecMap b2(net.params.data() + net.b2_offset(), net.outputs());

    const Eigen::MatrixXd h1 = ((w1 * features).colwise() + b1).array().tanh();
    const Eigen::MatrixXd a2 = (w2 * h1).colwise() + b2;

    ToyOutputs out;
    const int n = width * height;
    out.z.resize(n);
    out.s.resize(n);
    out.heat = HeatmapSet(net.heat_channels, width, height);
    for (int i = 0; i < n; ++i) {
        out.z[i] = a2(0, i);
        out.s[i] = a2(1, i);
        for (int c = 0; c < net.heat_channels; ++c)
            out.heat.values[static_cast<size_t>(c) * n + i] =
                1.0 / (1.0 + std::exp(-a2(2 + c, i)));
    }
    return out;
}

// Random scene: a few non-overlapping rectangles, each with a class and a
// constant metric depth; per-cell features that carry enough signal to learn
// depth (a shading channel proportional to it); and a sparse set of noisy
// depth samples standing in for projected lidar returns.
struct SceneParams {
    int width = 16;
    int height = 16;
    int n_classes = 2;
    int feature_dim = 8;
    int min_rects = 1;
    int max_rects = 3;
    int min_side = 3;
    int max_side = 7;
    double min_depth = 3.0;
    double max_depth = 25.0;
    double sample_prob = 0.35;
    double depth_noise = 0.05;
    double shade_noise = 0.02;
};

struct SyntheticScene {
    int width = 0;
    int height = 0;
    int n_classes = 0;
    std::vector<Box2D> boxes;        // grid coords, stride 1
    std::vector<double> rect_depth;  // parallel to boxes
    Eigen::MatrixXd features;        // feature_dim x (width*height)
    SparseDepthMap samples;          // noisy in-rectangle depth seeds
};

namespace detail {

inline double signed_edge_distance(double cx, double cy, const std::vector<Box2D>& boxes) {
    double best = -8.0;
    bool inside_any = false;
    for (const Box2D& b : boxes) {
        if (b.contains(cx, cy)) {
            const double d = std::min(std::min(cx - b.x_min, b.x_max - cx),
                                      std::min(cy - b.y_min, b.y_max - cy));
            if (!inside_any || d > best) best = d;
            inside_any = true;
        } else if (!inside_any) {
            const double dx = std::max({b.x_min - cx, 0.0, cx - b.x_max});
            const double dy = std::max({b.y_min - cy, 0.0, cy - b.y_max});
            best = std::max(best, -std::hypot(dx, dy));
        }
    }
    return std::clamp(best, -8.0, 8.0) / 8.0;
}

}  // namespace detail

// class_cursor cycles rectangle classes across calls so every class shows up
// in a multi-scene set even when scenes hold a single rectangle.
inline SyntheticScene make_scene(const SceneParams& p, std::mt19937_64& rng, int& class_cursor) {
    SyntheticScene scene;
    scene.width = p.width;
    scene.height = p.height;
    scene.n_classes = p.n_classes;
    scene.samples = SparseDepthMap(p.width, p.height, 1);

    std::uniform_int_distribution<int> n_rects_dist(p.min_rects, p.max_rects);
    std::uniform_int_distribution<int> side_dist(p.min_side, p.max_side);
    std::uniform_real_distribution<double> depth_dist(p.min_depth, p.max_depth);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> shade_noise(0.0, p.shade_noise);
    std::normal_distribution<double> depth_noise(0.0, p.depth_noise);

    const int want = n_rects_dist(rng);
    for (int r = 0; r < want; ++r) {
        bool placed = false;
        for (int attempt = 0; attempt < 50 && !placed; ++attempt) {
            const int w = side_dist(rng);
            const int h = side_dist(rng);
            std::uniform_int_distribution<int> x_dist(0, p.width - w);
            std::uniform_int_distribution<int> y_dist(0, p.height - h);
            Box2D box;
            box.class_id = class_cursor % p.n_classes;
            box.x_min = x_dist(rng);
            box.y_min = y_dist(rng);
            box.x_max = box.x_min + w;
            box.y_max = box.y_min + h;
            bool overlaps = false;
            for (const Box2D& other : scene.boxes)
                if (box.x_min < other.x_max && other.x_min < box.x_max &&
                    box.y_min < other.y_max && other.y_min < box.y_max)
                    overlaps = true;
            if (overlaps) continue;
            scene.boxes.push_back(box);
            scene.rect_depth.push_back(depth_dist(rng));
            ++class_cursor;
            placed = true;
        }
    }

    scene.features.resize(p.feature_dim, static_cast<Eigen::Index>(p.width) * p.height);
    for (int y = 0; y < p.height; ++y) {
        for (int x = 0; x < p.width; ++x) {
            const int i = y * p.width + x;
            const double cx = x + 0.5;
            const double cy = y + 0.5;
            int rect = -1;
            for (size_t b = 0; b < scene.boxes.size(); ++b)
                if (scene.boxes[b].contains(cx, cy)) {
                    rect = static_cast<int>(b);
                    break;
                }
            double canonical[8];
            canonical[0] = cx / p.width;
            canonical[1] = cy / p.height;
            canonical[2] = detail::signed_edge_distance(cx, cy, scene.boxes);
            canonical[3] = rect >= 0 ? 1.0 : 0.0;
            canonical[4] = (rect >= 0 ? scene.rect_depth[rect] / 30.0 : 1.0) + shade_noise(rng);
            canonical[5] = rect >= 0 ? scene.boxes[rect].width() / p.width : 0.0;
            canonical[6] = rect >= 0 ? scene.boxes[rect].height() / p.height : 0.0;
            canonical[7] = 1.0;
            for (int f = 0; f < p.feature_dim; ++f)
                scene.features(f, i) = f < 8 ? canonical[f] : 0.0;

            if (rect >= 0 && unit(rng) < p.sample_prob) {
                const double d = std::max(0.1, scene.rect_depth[rect] + depth_noise(rng));
                scene.samples.set(x, y, d);
            }
        }
    }
    return scene;
}

inline std::vector<SyntheticScene> make_scenes(const SceneParams& p, int n, uint64_t seed) {
    std::mt19937_64 rng(seed);
    int class_cursor = 0;
    std::vector<SyntheticScene> scenes;
    scenes.reserve(n);
    for (int i = 0; i < n; ++i) scenes.push_back(make_scene(p, rng, class_cursor));
    return scenes;
}

// Log-scale clamp applied before exponentiating s into a sigma map, so one
// wild prediction cannot produce inf/0 sigma while building targets.
inline constexpr double kLogSigmaClamp = 10.0;

inline UncertaintyMap sigma_from_log_scale(const std::vector<double>& s, int width, int height) {
    UncertaintyMap sigma(width, height, 1.0);
    for (size_t i = 0; i < s.size(); ++i)
        sigma.sigma[i] = std::exp(std::clamp(s[i], -kLogSigmaClamp, kLogSigmaClamp));
    return sigma;
}

// Box-derived supervision never changes during a run; cache it per scene.
// The depth target does change (it depends on the net's current sigma), so
// only its sigma-independent half (the filtered seed map) is cached.
struct SceneTargets {
    HeatmapSet corners;
    DetectionTargets detection;
    SparseDepthMap filtered;
};

inline SceneTargets static_targets(const SyntheticScene& scene, double max_depth = 60.0) {
    SceneTargets t;
    t.corners = corner_heatmaps(scene.boxes, 1, scene.width, scene.height);
    t.detection = detection_targets(scene.boxes, scene.n_classes, 1, scene.width, scene.height);
    t.filtered = region_filter(scene.samples, scene.boxes, max_depth);
    return t;
}

inline FrameTargets assemble_targets(const SyntheticScene& scene, const SceneTargets& cached,
                                     const std::vector<double>& s_pred,
                                     const PropagationParams& prop) {
    FrameTargets targets;
    targets.depth = propagate(
        cached.filtered, sigma_from_log_scale(s_pred, scene.width, scene.height), prop);
    targets.corners = cached.corners;
    targets.detection = cached.detection;
    targets.boxes = scene.boxes;
    return targets;
}

inline FramePredictions split_predictions(const ToyOutputs& outs, int n_classes) {
    const int n = outs.heat.width * outs.heat.height;
    FramePredictions preds;
    preds.z = outs.z;
    preds.s = outs.s;
    preds.corners = HeatmapSet(kCornerChannels, outs.heat.width, outs.heat.height);
    preds.centers = HeatmapSet(n_classes, outs.heat.width, outs.heat.height);
    std::copy_n(outs.heat.values.begin(), static_cast<size_t>(kCornerChannels) * n,
                preds.corners.values.begin());
    std::copy_n(outs.heat.values.begin() + static_cast<size_t>(kCornerChannels) * n,
                static_cast<size_t>(n_classes) * n, preds.centers.values.begin());
    return preds;
}

// Analytic gradient of combined_loss w.r.t. every net parameter, with the
// supervision targets held fixed (training rebuilds them from the current
// sigma before each step; that dependence is deliberately not differentiated).
inline Eigen::VectorXd scene_gradient(const ToyNet& net, const SyntheticScene& scene,
                                      const FrameTargets& targets, const ClassWeightTable& table,
                                      const Lambdas& lambdas, LossBreakdown* breakdown = nullptr) {
    const int n = scene.width * scene.height;
    ConstMatMap w1(net.params.data() + net.w1_offset(), net.hidden, net.feature_dim);
    ConstVecMap b1(net.params.data() + net.b1_offset(), net.hidden);
    ConstMatMap w2(net.params.data() + net.w2_offset(), net.outputs(), net.hidden);
    ConstVecMap b2(net.params.data() + net.b2_offset(), net.outputs());

    const Eigen::MatrixXd h1 = ((w1 * scene.features).colwise() + b1).array().tanh();
    const Eigen::MatrixXd a2 = (w2 * h1).colwise() + b2;

    ToyOutputs outs;
    outs.z.resize(n);
    outs.s.resize(n);
    outs.heat = HeatmapSet(net.heat_channels, scene.width, scene.height);
    for (int i = 0; i < n; ++i) {
        outs.z[i] = a2(0, i);
        outs.s[i] = a2(1, i);
        for (int c = 0; c < net.heat_channels; ++c)
            outs.heat.values[static_cast<size_t>(c) * n + i] =
                1.0 / (1.0 + std::exp(-a2(2 + c, i)));
    }

    FramePredictions preds = split_predictions(outs, scene.n_classes);
    FrameLossGrads grads;
    LossBreakdown bd = combined_loss(preds, targets, table, lambdas, &grads);
    if (breakdown) *breakdown = bd;

    // d(total)/d(pre-activation), per output row and cell.
    Eigen::MatrixXd da2 = Eigen::MatrixXd::Zero(net.outputs(), n);
    for (int i = 0; i < n; ++i) {
        da2(0, i) = grads.z[i];
        da2(1, i) = grads.s[i];
    }
    for (int c = 0; c < kCornerChannels; ++c)
        for (int i = 0; i < n; ++i) {
            const double p = preds.corners.values[static_cast<size_t>(c) * n + i];
            da2(2 + c, i) = grads.corners.values[static_cast<size_t>(c) * n + i] * p * (1.0 - p);
        }
    for (int c = 0; c < scene.n_classes; ++c)
        for (int i = 0; i < n; ++i) {
            const double p = preds.centers.values[static_cast<size_t>(c) * n + i];
            da2(2 + kCornerChannels + c, i) =
                grads.centers.values[static_cast<size_t>(c) * n + i] * p * (1.0 - p);
        }

    const Eigen::MatrixXd dh1 = w2.transpose() * da2;
    const Eigen::MatrixXd da1 = dh1.array() * (1.0 - h1.array().square());

    Eigen::VectorXd grad = Eigen::VectorXd::Zero(net.param_count());
    Eigen::Map<RowMat>(grad.data() + net.w1_offset(), net.hidden, net.feature_dim) =
        da1 * scene.features.transpose();
    Eigen::Map<Eigen::VectorXd>(grad.data() + net.b1_offset(), net.hidden) = da1.rowwise().sum();
    Eigen::Map<RowMat>(grad.data() + net.w2_offset(), net.outputs(), net.hidden) =
        da2 * h1.transpose();
    Eigen::Map<Eigen::VectorXd>(grad.data() + net.b2_offset(), net.outputs()) =
        da2.rowwise().sum();
    return grad;
}

// Batch gradient = sum of per-frame gradients (duplicating a frame doubles
// its contribution).
inline Eigen::VectorXd batch_gradient(const ToyNet& net,
                                      const std::vector<const SyntheticScene*>& scenes,
                                      const std::vector<const FrameTargets*>& targets,
                                      const ClassWeightTable& table, const Lambdas& lambdas) {
    if (scenes.size() != targets.size())
        throw DimensionMismatch("batch scenes vs targets");
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(net.param_count());
    for (size_t i = 0; i < scenes.size(); ++i)
        grad += scene_gradient(net, *scenes[i], *targets[i], table, lambdas);
    return grad;
}

struct TrainConfig {
    int epochs = 50;
    int pretrain_epochs = 0;  // consumed by transfer_experiment only
    double learning_rate = 0.02;
    double lr_decay = 1.0;  // per-epoch multiplier; 1 = constant rate
    uint64_t seed = 1;
    int batch = 1;
    double propagated_weight = 1.0;
    Lambdas lambdas;
    int hidden = 32;
    double init_scale = 0.1;

    void validate() const {
        if (!(learning_rate > 0.0)) throw Error("learning_rate must be > 0");
        if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw Error("lr_decay must lie in (0,1]");
        if (epochs < 0 || pretrain_epochs < 0) throw Error("epoch counts must be >= 0");
        if (batch < 1) throw Error("batch must be >= 1");
    }
};

inline Lambdas masked_lambdas(const Lambdas& l, TrainMode mode) {
    Lambdas m = l;
    if (mode == TrainMode::depth_only) m.corner = m.center = m.size = m.offset = 0.0;
    if (mode == TrainMode::detection_only) m.depth = 0.0;
    return m;
}

// Weight table over the scene set's box classes. A class no scene uses gets
// the majority count as a stand-in (weight 1); nothing in the run can
// reference it, this just keeps the table total.
inline ClassWeightTable scene_class_weights(const std::vector<SyntheticScene>& scenes) {
    int n_classes = 1;
    for (const SyntheticScene& s : scenes) n_classes = std::max(n_classes, s.n_classes);
    std::vector<long long> counts(n_classes, 0);
    for (const SyntheticScene& s : scenes)
        for (const Box2D& b : s.boxes) ++counts[b.class_id];
    long long top = *std::max_element(counts.begin(), counts.end());
    if (top == 0) return ClassWeightTable::uniform(n_classes);
    for (long long& c : counts)
        if (c == 0) c = top;
    return class_weights(counts);
}

// Plain SGD. Each step rebuilds the depth target from the net's current
// predicted sigma map, so supervision densifies as the net grows confident.
// The reported per-epoch breakdown is the mean over scene visits; its terms
// are raw, its total reflects the mode-masked objective actually descended.
inline std::vector<LossBreakdown> train(ToyNet& net, const std::vector<SyntheticScene>& scenes,
                                        const TrainConfig& cfg, TrainMode mode) {
    cfg.validate();
    if (scenes.empty()) throw Error("train: no scenes");

    std::vector<SceneTargets> cached;
    cached.reserve(scenes.size());
    for (const SyntheticScene& s : scenes) cached.push_back(static_targets(s));

    const ClassWeightTable table = scene_class_weights(scenes);
    const Lambdas active = masked_lambdas(cfg.lambdas, mode);
    PropagationParams prop;
    prop.propagated_weight = cfg.propagated_weight;

    std::mt19937_64 rng(cfg.seed);
    std::vector<int> order(scenes.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    Eigen::Map<Eigen::VectorXd> params(net.params.data(), net.params.size());
    std::vector<LossBreakdown> history;
    history.reserve(cfg.epochs);

    double rate = cfg.learning_rate;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        LossBreakdown mean;
        for (size_t pos = 0; pos < order.size();) {
            Eigen::VectorXd grad = Eigen::VectorXd::Zero(net.param_count());
            const size_t end = std::min(order.size(), pos + cfg.batch);
            for (; pos < end; ++pos) {
                const SyntheticScene& scene = scenes[order[pos]];
                const ToyOutputs outs = forward(net, scene.features, scene.width, scene.height);
                const FrameTargets targets =
                    assemble_targets(scene, cached[order[pos]], outs.s, prop);
                LossBreakdown bd;
                grad += scene_gradient(net, scene, targets, table, active, &bd);
                if (!bd.finite())
                    throw DivergenceDetected("non-finite loss at epoch " +
                                             std::to_string(epoch));
                mean.depth += bd.depth;
                mean.corner_focal += bd.corner_focal;
                mean.center_focal += bd.center_focal;
                mean.size += bd.size;
                mean.offset += bd.offset;
                mean.total += bd.total;
                mean.supervised_depth_cells += bd.supervised_depth_cells;
                mean.positive_center_cells += bd.positive_center_cells;
            }
            params -= rate * grad;
            if (!net.finite())
                throw DivergenceDetected("non-finite parameters at epoch " +
                                         std::to_string(epoch));
        }
        rate *= cfg.lr_decay;
        const double inv = 1.0 / static_cast<double>(scenes.size());
        mean.depth *= inv;
        mean.corner_focal *= inv;
        mean.center_focal *= inv;
        mean.size *= inv;
        mean.offset *= inv;
        mean.total *= inv;
        history.push_back(mean);
    }
    return history;
}

// Depth error against the supervision the net actually sees: mean |z - target|
// over supervised cells of the target built from the current sigma map.
inline double depth_mae(const ToyNet& net, const SyntheticScene& scene,
                        const PropagationParams& prop = {}) {
    const SceneTargets cached = static_targets(scene);
    const ToyOutputs outs = forward(net, scene.features, scene.width, scene.height);
    const FrameTargets targets = assemble_targets(scene, cached, outs.s, prop);
    double sum = 0.0;
    int count = 0;
    for (int i = 0; i < targets.depth.width * targets.depth.height; ++i) {
        if (targets.depth.provenance[i] == Provenance::None) continue;
        sum += std::abs(outs.z[i] - targets.depth.depth[i]);
        ++count;
    }
    return count == 0 ? 0.0 : sum / count;
}

struct TransferResult {
    std::vector<LossBreakdown> pretrained_finetune;
    std::vector<LossBreakdown> scratch_finetune;
    double pretrained_early_depth_mean = 0.0;
    double scratch_early_depth_mean = 0.0;
    bool pretrained_faster = false;
};

inline double early_depth_mean(const std::vector<LossBreakdown>& curve, int span = 5) {
    const int n = std::min<int>(span, static_cast<int>(curve.size()));
    if (n == 0) return 0.0;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += curve[i].depth;
    return sum / n;
}

// One net pre-trains on depth alone, then fine-tunes on the combined
// objective; a twin with the identical initialization fine-tunes from
// scratch. Both fine-tuning runs draw their data order from the same seed,
// so with zero pre-train epochs the two curves are bit-identical.
inline TransferResult transfer_experiment(const std::vector<SyntheticScene>& scenes_pre,
                                          const std::vector<SyntheticScene>& scenes_fine,
                                          const TrainConfig& cfg) {
    if (scenes_pre.empty() || scenes_fine.empty())
        throw Error("transfer_experiment: empty scene set");
    const int feature_dim = static_cast<int>(scenes_fine.front().features.rows());
    const int heat_channels = kCornerChannels + scenes_fine.front().n_classes;

    ToyNet pretrained;
    pretrained.init(feature_dim, cfg.hidden, heat_channels, cfg.seed, cfg.init_scale);
    ToyNet scratch = pretrained;

    TrainConfig pre_cfg = cfg;
    pre_cfg.epochs = cfg.pretrain_epochs;
    train(pretrained, scenes_pre, pre_cfg, TrainMode::depth_only);

    TransferResult result;
    result.pretrained_finetune = train(pretrained, scenes_fine, cfg, TrainMode::combined);
    result.scratch_finetune = train(scratch, scenes_fine, cfg, TrainMode::combined);
    result.pretrained_early_depth_mean = early_depth_mean(result.pretrained_finetune);
    result.scratch_early_depth_mean = early_depth_mean(result.scratch_finetune);
    result.pretrained_faster =
        result.pretrained_early_depth_mean < result.scratch_early_depth_mean;
    return result;
}

}  // namespace dept::toy
