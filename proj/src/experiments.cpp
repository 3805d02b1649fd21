#include <chrono>
#include <limits>

#include <fmt/core.h>

#include "sdc/harness.hpp"

namespace sdc {

namespace {

ExperimentResult run_sweep(std::span<const NamedModel> nets,
                           std::span<const SparsityPattern> patterns,
                           std::span<const double> conditions, const char* condition_name,
                           const SceneSource& eval_src, int n_scenes,
                           std::uint64_t pattern_seed) {
    const auto t_start = std::chrono::steady_clock::now();
    ExperimentResult result;
    result.condition_name = condition_name;
    result.config_snapshot =
        fmt::format("scenes={}\npattern_seed={}\n", n_scenes, pattern_seed);

    // Fixed held-out scenes, sparsified once per condition and shared by all
    // nets so comparisons are paired.
    std::vector<SyntheticScene> scenes;
    scenes.reserve(n_scenes);
    for (int i = 0; i < n_scenes; ++i) scenes.push_back(eval_src.scene(i));

    for (std::size_t ci = 0; ci < patterns.size(); ++ci) {
        std::vector<DepthMap> sds;
        std::vector<RgbImage> rgbs;
        sds.reserve(n_scenes);
        for (int i = 0; i < n_scenes; ++i) {
            SparsityPattern p = patterns[ci];
            p.seed = Rng::mix(pattern_seed, static_cast<std::uint64_t>(i));
            sds.push_back(apply_pattern(scenes[i].depth, p));
            rgbs.push_back(scenes[i].rgb);
        }
        for (const NamedModel& net : nets) {
            MetricsAccumulator acc;
            for (int i = 0; i < n_scenes; ++i) {
                const std::vector<DepthMap> pred =
                    predict_depth(*net.model, {&sds[i], 1}, {&rgbs[i], 1});
                acc.add(pred[0], scenes[i].depth, all_gt_valid_mask(scenes[i].depth));
            }
            ExperimentRow row;
            row.net_label = net.label;
            row.condition = conditions[ci];
            row.pattern = patterns[ci].to_compact();
            row.pattern_seed = pattern_seed;
            row.metrics = acc.report();
            result.rows.push_back(std::move(row));
        }
    }
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return result;
}

}  // namespace

std::string ExperimentResult::csv() const {
    std::string out = fmt::format("net,{},pattern,pattern_seed,{}\n", condition_name,
                                  MetricsReport::csv_header());
    for (const ExperimentRow& row : rows)
        out += fmt::format("{},{:g},{},{},{}\n", row.net_label, row.condition, row.pattern,
                           row.pattern_seed, row.metrics.csv_row());
    return out;
}

const ExperimentRow& ExperimentResult::find(const std::string& net_label,
                                            double condition) const {
    for (const ExperimentRow& row : rows)
        if (row.net_label == net_label && row.condition == condition) return row;
    throw StateError(fmt::format("no experiment row for net '{}' at condition {}", net_label,
                                 condition));
}

ExperimentResult experiment_density_sweep(std::span<const NamedModel> nets,
                                          std::span<const double> densities,
                                          const SceneSource& eval_src, int n_scenes,
                                          std::uint64_t pattern_seed) {
    std::vector<SparsityPattern> patterns;
    patterns.reserve(densities.size());
    for (double d : densities) patterns.push_back(SparsityPattern::uniform(d, 0));
    return run_sweep(nets, patterns, densities, "density", eval_src, n_scenes, pattern_seed);
}

ExperimentResult experiment_lidar_ablation(std::span<const NamedModel> nets,
                                           std::span<const int> layer_counts,
                                           const SceneSource& eval_src, int n_scenes,
                                           std::uint64_t pattern_seed) {
    std::vector<SparsityPattern> patterns;
    std::vector<double> conditions;
    patterns.reserve(layer_counts.size());
    for (int layers : layer_counts) {
        patterns.push_back(SparsityPattern::lidar_bands(layers, 0));
        conditions.push_back(static_cast<double>(layers));
    }
    return run_sweep(nets, patterns, conditions, "layers", eval_src, n_scenes, pattern_seed);
}

MetricsReport evaluate_model(const TrainedModel& model, const SceneSource& eval_src, int n_scenes,
                             const SparsityPattern& base_pattern, std::uint64_t pattern_seed) {
    MetricsAccumulator acc;
    for (int i = 0; i < n_scenes; ++i) {
        const SyntheticScene scene = eval_src.scene(i);
        SparsityPattern p = base_pattern;
        p.seed = Rng::mix(pattern_seed, static_cast<std::uint64_t>(i));
        const DepthMap sd = apply_pattern(scene.depth, p);
        const std::vector<DepthMap> pred = predict_depth(model, {&sd, 1}, {&scene.rgb, 1});
        acc.add(pred[0], scene.depth, all_gt_valid_mask(scene.depth));
    }
    return acc.report();
}

}  // namespace sdc
