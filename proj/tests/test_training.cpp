// Slower end-to-end training checks; the fast per-module tests live in
// test_harness.cpp and the full experiment battery in the acceptance suite.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numeric>

#include "sdc/harness.hpp"

using namespace sdc;

namespace {

double window_mean(const std::vector<double>& v, std::size_t begin, std::size_t count) {
    return std::accumulate(v.begin() + begin, v.begin() + begin + count, 0.0) / count;
}

}  // namespace

TEST_CASE("300 steps at Fixed(0.05) cut the loss to well under 20% of the start") {
    std::vector<double> ratios;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        TrainConfig cfg;
        cfg.task = TaskKind::Depth;
        cfg.inputs = InputConfig::Sd;
        cfg.density = DensitySchedule{DensitySchedule::Kind::Fixed, 0.05, 0.0, 1.0};
        cfg.epochs = 1;
        cfg.steps_per_epoch = 300;
        cfg.batch = 8;
        cfg.scene_height = 48;
        cfg.scene_width = 48;
        cfg.val_interval = 0;
        cfg.seed = seed;

        GeneratedScenes train_src(cfg.seed, 48, 48, 4);
        GeneratedScenes val_src(Rng::mix(cfg.seed, 1), 48, 48, 4);
        const TrainResult r = train_depth(cfg, train_src, val_src);
        REQUIRE(r.loss_curve.size() == 300);
        ratios.push_back(window_mean(r.loss_curve, 290, 10) / window_mean(r.loss_curve, 0, 10));
    }
    std::sort(ratios.begin(), ratios.end());
    CHECK(ratios[1] < 0.2);  // 3-seed median
}

TEST_CASE("density sweep at the training density is consistent with validation") {
    TrainConfig cfg;
    cfg.task = TaskKind::Depth;
    cfg.inputs = InputConfig::Sd;
    cfg.density = DensitySchedule{DensitySchedule::Kind::Fixed, 0.1, 0.0, 1.0};
    cfg.epochs = 1;
    cfg.steps_per_epoch = 150;
    cfg.batch = 8;
    cfg.scene_height = 48;
    cfg.scene_width = 48;
    cfg.eval_scenes = 8;
    cfg.val_interval = 50;
    cfg.seed = 11;

    GeneratedScenes train_src(cfg.seed, 48, 48, 4);
    GeneratedScenes val_src(Rng::mix(cfg.seed, 1), 48, 48, 4);
    const TrainResult r = train_depth(cfg, train_src, val_src);
    REQUIRE(r.best_val_step > 0);

    GeneratedScenes eval_src(777, 48, 48, 4);
    const NamedModel named[] = {{"net", &r.best_model}};
    const double densities[] = {0.1};
    const ExperimentResult sweep = experiment_density_sweep(named, densities, eval_src, 8, 31);
    const double swept = sweep.find("net", 0.1).metrics.imae_1pkm;

    // Different held-out scenes and patterns, same protocol: the two numbers
    // agree up to run-to-run noise, bounded generously here.
    CHECK(swept < 2.0 * r.best_val_metric);
    CHECK(swept > 0.5 * r.best_val_metric);
}
