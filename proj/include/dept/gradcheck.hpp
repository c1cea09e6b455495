#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "dept/losses.hpp"
#include "dept/toygrad.hpp"

// Finite-difference verification of every analytic gradient the library
// ships: the depth loss in both arguments, the focal heatmap loss per cell,
// and the toy net parameter blocks. Backs the `gradcheck` CLI command.
namespace dept::gradcheck {

inline constexpr double kStep = 1e-5;
inline constexpr double kTolerance = 1e-4;

// Relative error with an absolute floor, so near-zero gradients compare at
// ~1e-8 absolute instead of blowing up the ratio.
inline double rel_err(double analytic, double numeric) {
    return std::abs(analytic - numeric) /
           std::max({std::abs(analytic), std::abs(numeric), 1e-4});
}

template <typename F>
double central_diff(F&& f, double x, double h = kStep) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

struct BlockResult {
    std::string name;
    int checks = 0;
    double worst = 0.0;
    bool pass = true;

    void absorb(double err) {
        ++checks;
        worst = std::max(worst, err);
        pass = worst <= kTolerance;
    }
};

// `perturb` nudges one analytic value per loss family; the report must then
// fail. It exists as a negative control for the checker itself.
inline std::vector<BlockResult> run_all(uint64_t seed, bool perturb = false) {
    std::vector<BlockResult> results;

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    {
        BlockResult dz{"laplace/dz"}, ds{"laplace/ds"};
        std::uniform_real_distribution<double> depth(1.0, 60.0);
        std::uniform_real_distribution<double> scale(-2.0, 2.0);
        for (int i = 0; i < 100; ++i) {
            const double z_gt = depth(rng);
            // Keep the residual away from the |.| kink.
            double z = depth(rng);
            if (std::abs(z - z_gt) < 1e-3) z += 0.5;
            const double s = scale(rng);
            LaplaceDepthLoss g = laplace_depth_loss({z, s}, z_gt);
            if (perturb && i == 0) g.grad_z += 1e-3;
            const double fd_z = central_diff(
                [&](double v) { return laplace_depth_loss({v, s}, z_gt).loss; }, z);
            const double fd_s = central_diff(
                [&](double v) { return laplace_depth_loss({z, v}, z_gt).loss; }, s);
            dz.absorb(rel_err(g.grad_z, fd_z));
            ds.absorb(rel_err(g.grad_s, fd_s));
        }
        results.push_back(dz);
        results.push_back(ds);
    }

    {
        BlockResult focal{"focal"};
        HeatmapSet target(1, 8, 8), pred(1, 8, 8);
        for (size_t i = 0; i < target.values.size(); ++i) {
            const double r = unit(rng);
            target.values[i] = r > 0.9 ? 1.0 : 0.9 * r;  // a few exact positives
            pred.values[i] = 0.05 + 0.9 * unit(rng);     // clear of the clamp
        }
        FocalHeatmapLoss g = focal_heatmap_loss(pred, target);
        if (perturb) g.grad[0] += 1e-3;
        for (size_t i = 0; i < pred.values.size(); ++i) {
            const double fd = central_diff(
                [&](double v) {
                    HeatmapSet p = pred;
                    p.values[i] = v;
                    return focal_heatmap_loss(p, target).loss;
                },
                pred.values[i]);
            focal.absorb(rel_err(g.grad[i], fd));
        }
        results.push_back(focal);
    }

    {
        toy::SceneParams sp;
        sp.width = 6;
        sp.height = 6;
        sp.feature_dim = 4;
        sp.min_rects = 1;
        sp.max_rects = 2;
        sp.min_side = 2;
        sp.max_side = 3;
        sp.sample_prob = 0.5;
        const auto scenes = toy::make_scenes(sp, 1, seed + 1);
        const toy::SyntheticScene& scene = scenes.front();

        toy::ToyNet net;
        net.init(sp.feature_dim, 6, kCornerChannels + sp.n_classes, seed + 2);

        const auto cached = toy::static_targets(scene);
        const auto outs = toy::forward(net, scene.features, scene.width, scene.height);
        const FrameTargets targets = toy::assemble_targets(scene, cached, outs.s, {});
        const ClassWeightTable table = toy::scene_class_weights(scenes);
        const Lambdas lambdas;

        Eigen::VectorXd grad = toy::scene_gradient(net, scene, targets, table, lambdas);
        if (perturb) grad[0] += 1e-3;

        const auto loss_at = [&](toy::ToyNet probe) {
            LossBreakdown bd;
            toy::scene_gradient(probe, scene, targets, table, lambdas, &bd);
            return bd.total;
        };

        BlockResult blocks[4] = {{"toy/W1"}, {"toy/b1"}, {"toy/W2"}, {"toy/b2"}};
        const size_t bounds[5] = {net.w1_offset(), net.b1_offset(), net.w2_offset(),
                                  net.b2_offset(), net.param_count()};
        for (int b = 0; b < 4; ++b) {
            for (size_t i = bounds[b]; i < bounds[b + 1]; ++i) {
                toy::ToyNet probe = net;
                probe.params[i] += kStep;
                const double up = loss_at(probe);
                probe.params[i] = net.params[i] - kStep;
                const double down = loss_at(probe);
                blocks[b].absorb(rel_err(grad[static_cast<Eigen::Index>(i)],
                                         (up - down) / (2.0 * kStep)));
            }
            results.push_back(blocks[b]);
        }
    }

    return results;
}

inline bool all_pass(const std::vector<BlockResult>& results) {
    return std::all_of(results.begin(), results.end(),
                       [](const BlockResult& r) { return r.pass; });
}

inline std::string render(const std::vector<BlockResult>& results, uint64_t seed) {
    std::string out = "gradcheck (seed " + std::to_string(seed) + ", tol 1e-4, h 1e-5)\n";
    char line[128];
    for (const BlockResult& r : results) {
        std::snprintf(line, sizeof(line), "  %-12s checks %4d   worst %9.3e   %s\n",
                      r.name.c_str(), r.checks, r.worst, r.pass ? "PASS" : "FAIL");
        out += line;
    }
    out += all_pass(results) ? "result: PASS\n" : "result: FAIL\n";
    return out;
}

}  // namespace dept::gradcheck
