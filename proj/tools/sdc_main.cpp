// sdc - sparse depth completion toolkit CLI.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <fmt/core.h>

#include "sdc/harness.hpp"
#include "sdc/sparse_conv.hpp"

namespace fs = std::filesystem;
using namespace sdc;

namespace {

std::vector<LayerShape> parse_layer_chain(const std::string& text) {
    // "3x3s1,3x3s2" -> [{3,1},{3,2}]
    std::vector<LayerShape> layers;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        int k1 = 0, k2 = 0, s = 0;
        if (std::sscanf(tok.c_str(), "%dx%ds%d", &k1, &k2, &s) != 3 || k1 != k2)
            throw ConfigError(fmt::format("bad layer spec '{}', expected KxKsS", tok));
        layers.push_back({k1, s});
    }
    if (layers.empty()) throw ConfigError("empty layer chain");
    return layers;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* what) {
    std::vector<T> out;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            if constexpr (std::is_same_v<T, double>) out.push_back(std::stod(tok));
            else out.push_back(static_cast<T>(std::stol(tok)));
        } catch (const std::exception&) {
            throw ConfigError(fmt::format("bad {} value '{}'", what, tok));
        }
    }
    if (out.empty()) throw ConfigError(fmt::format("empty {} list", what));
    return out;
}

std::pair<int, int> parse_size(const std::string& text) {
    int h = 0, w = 0;
    if (std::sscanf(text.c_str(), "%dx%d", &h, &w) != 2)
        throw ConfigError(fmt::format("bad size '{}', expected HxW", text));
    return {h, w};
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot open {} for writing", path.string()));
    out << text;
}

struct EvalSceneOpts {
    std::string size = "64x64";
    int classes = 4;
    int scenes = 16;
    std::uint64_t scene_seed = 9000;
    std::uint64_t pattern_seed = 41;

    void attach(CLI::App* cmd) {
        cmd->add_option("--size", size, "held-out scene size HxW")->capture_default_str();
        cmd->add_option("--classes", classes, "scene class count")->capture_default_str();
        cmd->add_option("--scenes", scenes, "number of held-out scenes")->capture_default_str();
        cmd->add_option("--scene-seed", scene_seed, "held-out scene seed")->capture_default_str();
        cmd->add_option("--pattern-seed", pattern_seed, "sparsification seed")
            ->capture_default_str();
    }
    GeneratedScenes source() const {
        const auto [h, w] = parse_size(size);
        return GeneratedScenes(scene_seed, h, w, classes);
    }
};

std::vector<TrainedModel> load_models(const std::string& list) {
    std::vector<TrainedModel> models;
    std::stringstream ss(list);
    std::string tok;
    while (std::getline(ss, tok, ','))
        models.push_back(load_checkpoint(tok));
    if (models.empty()) throw ConfigError("no checkpoints given");
    return models;
}

std::vector<NamedModel> name_models(const std::string& list,
                                    const std::vector<TrainedModel>& models) {
    std::vector<NamedModel> named;
    std::stringstream ss(list);
    std::string tok;
    std::size_t i = 0;
    while (std::getline(ss, tok, ','))
        named.push_back({fs::path(tok).stem().string(), &models[i++]});
    return named;
}

int run(int argc, char** argv) {
    CLI::App app{"sparse depth completion toolkit"};
    app.require_subcommand(1);

    // --- sparsify -------------------------------------------------------------
    auto* sparsify = app.add_subcommand("sparsify", "apply a sparsity pattern to a depth PNG");
    std::string sp_in, sp_out, sp_pattern = "uniform:0.05";
    std::uint64_t sp_seed = 0;
    sparsify->add_option("--in", sp_in, "input 16-bit depth PNG")->required();
    sparsify->add_option("--pattern", sp_pattern, "uniform:D | lidar:L | patches:N:MIN:MAX | "
                                                  "cutout:N:MIN:MAX")
        ->capture_default_str();
    sparsify->add_option("--seed", sp_seed, "pattern seed")->capture_default_str();
    sparsify->add_option("--out", sp_out, "output depth PNG")->required();
    sparsify->callback([&] {
        const DepthMap in = load_depth_png(sp_in);
        const SparsityPattern pattern = SparsityPattern::parse_compact(sp_pattern, sp_seed);
        const DepthMap out = apply_pattern(in, pattern);
        save_depth_png(sp_out, out);
        fmt::print("{} -> {} (pattern {}, density {:.4f} -> {:.4f})\n", sp_in, sp_out,
                   pattern.to_compact(), density(in), density(out));
    });

    // --- mask-analyze ---------------------------------------------------------
    auto* mask_analyze =
        app.add_subcommand("mask-analyze", "validity-mask saturation profile (Monte Carlo)");
    double ma_density = 0.1;
    std::string ma_layers = "3x3s1,3x3s1,3x3s1";
    int ma_trials = 100;
    std::string ma_csv;
    std::string ma_size = "64x64";
    std::uint64_t ma_seed = 7;
    mask_analyze->add_option("--density", ma_density, "input mask density in (0,1]")->required();
    mask_analyze->add_option("--layers", ma_layers, "conv chain, e.g. 3x3s1,3x3s1")
        ->capture_default_str();
    mask_analyze->add_option("--trials", ma_trials, "Monte Carlo trials")->capture_default_str();
    mask_analyze->add_option("--csv", ma_csv, "output CSV path")->required();
    mask_analyze->add_option("--size", ma_size, "mask size HxW")->capture_default_str();
    mask_analyze->add_option("--seed", ma_seed, "RNG seed")->capture_default_str();
    mask_analyze->callback([&] {
        const auto layers = parse_layer_chain(ma_layers);
        const auto [h, w] = parse_size(ma_size);
        const auto stats = saturation_profile(ma_density, layers, ma_trials, h, w, ma_seed);
        write_text(ma_csv, saturation_profile_csv(ma_density, stats));
        for (const auto& s : stats)
            fmt::print("layer {}: saturation {:.4f} (stddev {:.4f})\n", s.layer_index, s.mean,
                       s.stddev);
    });

    // --- gen-scenes -----------------------------------------------------------
    auto* gen = app.add_subcommand("gen-scenes", "generate synthetic scene files");
    int gs_count = 16, gs_classes = 4;
    std::string gs_size = "64x64", gs_out;
    std::uint64_t gs_seed = 1;
    gen->add_option("--count", gs_count, "number of scenes")->capture_default_str();
    gen->add_option("--size", gs_size, "scene size HxW")->capture_default_str();
    gen->add_option("--classes", gs_classes, "class count in [2,16]")->capture_default_str();
    gen->add_option("--seed", gs_seed, "scene seed")->capture_default_str();
    gen->add_option("--out", gs_out, "output directory")->required();
    gen->callback([&] {
        const auto [h, w] = parse_size(gs_size);
        fs::create_directories(gs_out);
        for (int i = 0; i < gs_count; ++i) {
            const SyntheticScene s =
                generate_scene(Rng::mix(gs_seed, static_cast<std::uint64_t>(i)), h, w, gs_classes);
            const std::string stem = fmt::format("{}/scene_{:05d}", gs_out, i);
            save_depth_png(stem + "_depth.png", s.depth);
            save_rgb_png(stem + "_rgb.png", s.rgb);
            save_seg_png(stem + "_labels.png", s.labels);
        }
        fmt::print("wrote {} scenes to {}\n", gs_count, gs_out);
    });

    // --- train ------------------------------------------------------------------
    auto* train = app.add_subcommand("train", "train a completion or segmentation network");
    std::string tr_task, tr_config, tr_out, tr_data;
    train->add_option("--task", tr_task, "depth|seg (overrides the config)");
    train->add_option("--config", tr_config, "key=value config file")->required();
    train->add_option("--out", tr_out, "output checkpoint path")->required();
    train->add_option("--data", tr_data, "scene directory (default: generated scenes)");
    train->callback([&] {
        TrainConfig cfg = TrainConfig::load(tr_config);
        if (!tr_task.empty()) {
            if (tr_task == "depth") cfg.task = TaskKind::Depth;
            else if (tr_task == "seg") cfg.task = TaskKind::Segmentation;
            else throw ConfigError(fmt::format("unknown task '{}'", tr_task));
        }

        std::unique_ptr<SceneSource> train_src, val_src;
        if (tr_data.empty()) {
            train_src = std::make_unique<GeneratedScenes>(cfg.seed, cfg.scene_height,
                                                          cfg.scene_width, cfg.num_classes);
            val_src = std::make_unique<GeneratedScenes>(Rng::mix(cfg.seed, 0xE7a1),
                                                        cfg.scene_height, cfg.scene_width,
                                                        cfg.num_classes);
        } else {
            train_src = std::make_unique<DirectoryScenes>(tr_data, cfg.num_classes);
            val_src = std::make_unique<DirectoryScenes>(tr_data, cfg.num_classes);
        }

        const TrainResult result =
            cfg.task == TaskKind::Depth
                ? train_depth(cfg, *train_src, *val_src, fs::path(tr_out + ".diverged"))
                : train_segmentation(cfg, *train_src, *val_src, fs::path(tr_out + ".diverged"));

        save_checkpoint(tr_out, result.model);
        save_checkpoint(tr_out + ".best", result.best_model);
        std::string curve = "step,loss\n";
        for (std::size_t i = 0; i < result.loss_curve.size(); ++i)
            curve += fmt::format("{},{:.9g}\n", i, result.loss_curve[i]);
        write_text(tr_out + ".loss.csv", curve);

        fmt::print("trained {} steps in {:.1f}s; final loss {:.6g}; best val {:.6g} at step {}\n",
                   result.loss_curve.size(), result.wall_seconds,
                   result.loss_curve.empty() ? 0.0 : result.loss_curve.back(),
                   result.best_val_metric, result.best_val_step);
        fmt::print("checkpoints: {} and {}.best; loss curve: {}.loss.csv\n", tr_out, tr_out,
                   tr_out);
    });

    // --- eval ---------------------------------------------------------------------
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a scene directory");
    std::string ev_ckpt, ev_data, ev_pattern = "uniform:0.05", ev_csv, ev_on = "allgt";
    std::uint64_t ev_seed = 41;
    eval->add_option("--checkpoint", ev_ckpt)->required();
    eval->add_option("--data", ev_data, "scene directory from gen-scenes")->required();
    eval->add_option("--pattern", ev_pattern, "sparsity pattern for the input")
        ->capture_default_str();
    eval->add_option("--seed", ev_seed, "pattern seed")->capture_default_str();
    eval->add_option("--eval-on", ev_on, "allgt|unobserved pixel set")->capture_default_str();
    eval->add_option("--csv", ev_csv, "output CSV path")->required();
    eval->callback([&] {
        const TrainedModel model = load_checkpoint(ev_ckpt);
        const DirectoryScenes scenes(ev_data, model.arch.num_classes);
        const SparsityPattern base = SparsityPattern::parse_compact(ev_pattern);
        if (ev_on != "allgt" && ev_on != "unobserved")
            throw ConfigError(fmt::format("unknown eval set '{}'", ev_on));

        if (model.arch.task == TaskKind::Depth) {
            MetricsAccumulator acc;
            for (long i = 0; i < scenes.count(); ++i) {
                const SyntheticScene s = scenes.scene(i);
                SparsityPattern p = base;
                p.seed = Rng::mix(ev_seed, static_cast<std::uint64_t>(i));
                const DepthMap sd = apply_pattern(s.depth, p);
                const auto pred = predict_depth(model, {&sd, 1}, {&s.rgb, 1});
                acc.add(pred[0], s.depth,
                        ev_on == "allgt" ? all_gt_valid_mask(s.depth)
                                         : unobserved_mask(sd, s.depth));
            }
            const MetricsReport report = acc.report();
            write_text(ev_csv, MetricsReport::csv_header() + "\n" + report.csv_row() + "\n");
            fmt::print("iMAE {:.4f} 1/km, RMSE {:.2f} mm over {} pixels -> {}\n",
                       report.imae_1pkm, report.rmse_mm, report.n_pixels, ev_csv);
        } else {
            // Segmentation: accumulate IoU counts through per-image reports.
            double sum = 0.0;
            long n = 0;
            std::string rows;
            for (long i = 0; i < scenes.count(); ++i) {
                const SyntheticScene s = scenes.scene(i);
                SparsityPattern p = base;
                p.seed = Rng::mix(ev_seed, static_cast<std::uint64_t>(i));
                const DepthMap sd = apply_pattern(s.depth, p);
                const auto pred = predict_labels(model, {&sd, 1}, {&s.rgb, 1});
                const SegReport r = mean_iou(pred[0], s.labels, model.arch.num_classes);
                rows += r.csv_row() + "\n";
                sum += r.mean_iou;
                ++n;
            }
            write_text(ev_csv, SegReport::csv_header(model.arch.num_classes) + "\n" + rows);
            fmt::print("mean IoU {:.4f} over {} scenes -> {}\n", sum / n, n, ev_csv);
        }
    });

    // --- complete --------------------------------------------------------------------
    auto* complete = app.add_subcommand("complete", "densify one sparse depth PNG");
    std::string cp_ckpt, cp_in, cp_rgb, cp_out;
    double cp_dmax = 0.0;
    complete->add_option("--checkpoint", cp_ckpt)->required();
    complete->add_option("--in-depth", cp_in, "sparse 16-bit depth PNG")->required();
    complete->add_option("--in-rgb", cp_rgb, "RGB PNG/PPM (fusion models)");
    complete->add_option("--dmax", cp_dmax, "override d_max meters (default: checkpoint value)");
    complete->add_option("--out", cp_out, "output dense depth PNG")->required();
    complete->callback([&] {
        TrainedModel model = load_checkpoint(cp_ckpt);
        if (model.arch.task != TaskKind::Depth)
            throw ConfigError("complete needs a depth-completion checkpoint");
        if (cp_dmax > 0.0) model.arch.d_max = cp_dmax;
        const DepthMap sd = load_depth_png(cp_in);
        if (sd.height() % 8 != 0 || sd.width() % 8 != 0)
            throw ConfigError(fmt::format(
                "tiny-ed needs dimensions divisible by 8, got {}x{}; crop or pad the input",
                sd.height(), sd.width()));
        RgbImage rgb = cp_rgb.empty() ? RgbImage(sd.height(), sd.width()) : load_rgb(cp_rgb);
        if (model.arch.inputs != InputConfig::Sd && cp_rgb.empty())
            throw ConfigError("this checkpoint needs --in-rgb");
        const auto pred = predict_depth(model, {&sd, 1}, {&rgb, 1});
        save_depth_png(cp_out, pred[0]);
        fmt::print("completed {} ({}x{}, density {:.4f}) -> {}\n", cp_in, sd.height(), sd.width(),
                   density(sd), cp_out);
    });

    // --- sweep-density ------------------------------------------------------------------
    auto* sweep = app.add_subcommand("sweep-density", "evaluate checkpoints across densities");
    std::string sw_ckpts, sw_densities = "0.02,0.05,0.1,0.3,0.5,0.8", sw_csv;
    EvalSceneOpts sw_scenes;
    sweep->add_option("--checkpoints", sw_ckpts, "comma-separated checkpoint list")->required();
    sweep->add_option("--densities", sw_densities)->capture_default_str();
    sweep->add_option("--csv", sw_csv)->required();
    sw_scenes.attach(sweep);
    sweep->callback([&] {
        const auto models = load_models(sw_ckpts);
        const auto named = name_models(sw_ckpts, models);
        const auto densities = parse_list<double>(sw_densities, "density");
        const GeneratedScenes src = sw_scenes.source();
        const ExperimentResult result = experiment_density_sweep(named, densities, src,
                                                                 sw_scenes.scenes,
                                                                 sw_scenes.pattern_seed);
        write_text(sw_csv, result.csv());
        fmt::print("{} rows -> {}\n", result.rows.size(), sw_csv);
    });

    // --- ablate-lidar ----------------------------------------------------------------------
    auto* ablate = app.add_subcommand("ablate-lidar", "evaluate checkpoints on banded patterns");
    std::string ab_ckpts, ab_layers = "8,16,32,64", ab_csv;
    EvalSceneOpts ab_scenes;
    ablate->add_option("--checkpoints", ab_ckpts, "comma-separated checkpoint list")->required();
    ablate->add_option("--layers", ab_layers)->capture_default_str();
    ablate->add_option("--csv", ab_csv)->required();
    ab_scenes.attach(ablate);
    ablate->callback([&] {
        const auto models = load_models(ab_ckpts);
        const auto named = name_models(ab_ckpts, models);
        const auto layers = parse_list<int>(ab_layers, "layer count");
        const GeneratedScenes src = ab_scenes.source();
        const ExperimentResult result = experiment_lidar_ablation(named, layers, src,
                                                                  ab_scenes.scenes,
                                                                  ab_scenes.pattern_seed);
        write_text(ab_csv, result.csv());
        fmt::print("{} rows -> {}\n", result.rows.size(), ab_csv);
    });

    // --- baseline-fill -----------------------------------------------------------------------
    auto* baseline = app.add_subcommand("baseline-fill", "nearest-valid fill of a depth PNG");
    std::string bf_in, bf_out;
    baseline->add_option("--in", bf_in)->required();
    baseline->add_option("--out", bf_out)->required();
    baseline->callback([&] {
        const DepthMap in = load_depth_png(bf_in);
        save_depth_png(bf_out, baseline_fill(in));
        fmt::print("filled {} (density {:.4f}) -> {}\n", bf_in, density(in), bf_out);
    });

    CLI11_PARSE(app, argc, argv);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
