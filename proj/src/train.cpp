#include <chrono>
#include <cmath>
#include <limits>

#include <fmt/core.h>

#include "sdc/harness.hpp"

namespace sdc {

namespace {

// Seed streams, mixed with the run seed so every random decision has its own
// deterministic stream independent of batch composition.
constexpr std::uint64_t kStreamInit = 0x11;
constexpr std::uint64_t kStreamDensity = 0x22;
constexpr std::uint64_t kStreamPattern = 0x33;
constexpr std::uint64_t kStreamCutout = 0x44;
constexpr std::uint64_t kStreamEval = 0x55;

/// Sparsify one training sample: density from the schedule, then optional
/// cut-out rectangles on the sparse depth input only.
DepthMap sparsify_sample(const SyntheticScene& scene, const TrainConfig& cfg, long sample_index) {
    Rng density_rng(Rng::mix(cfg.seed ^ kStreamDensity, static_cast<std::uint64_t>(sample_index)));
    const double d = cfg.density.sample(density_rng);
    SparsityPattern pattern = SparsityPattern::uniform(
        d, Rng::mix(cfg.seed ^ kStreamPattern, static_cast<std::uint64_t>(sample_index)));
    DepthMap sd = apply_pattern(scene.depth, pattern);
    if (!cfg.cutout.empty()) {
        SparsityPattern cutout = SparsityPattern::parse_compact(
            cfg.cutout, Rng::mix(cfg.seed ^ kStreamCutout, static_cast<std::uint64_t>(sample_index)));
        sd = apply_pattern(sd, cutout);
    }
    return sd;
}

void check_gradients_finite(const NetworkGraph& net, long step) {
    for (const Param& p : net.params()) {
        if (!p.trainable) continue;
        for (double g : p.grad)
            if (!std::isfinite(g))
                throw TrainingDiverged(
                    fmt::format("non-finite gradient in '{}' at step {}", p.name, step), step);
    }
}

class Optimizer {
  public:
    Optimizer(NetworkGraph& net, const AdamConfig& cfg) : net_(net), cfg_(cfg) {
        states_.resize(net.params().size());
    }

    void step() {
        ++t_;
        for (std::size_t i = 0; i < net_.params().size(); ++i) {
            Param& p = net_.params()[i];
            if (!p.trainable) continue;
            adam_step(p.value, p.grad, states_[i], t_, cfg_);
        }
    }

  private:
    NetworkGraph& net_;
    AdamConfig cfg_;
    std::vector<AdamState> states_;
    long t_ = 0;
};

struct ValScene {
    SyntheticScene scene;
    DepthMap sd;
};

std::vector<ValScene> make_validation_set(const TrainConfig& cfg, const SceneSource& val_src) {
    std::vector<ValScene> out;
    out.reserve(cfg.eval_scenes);
    for (int i = 0; i < cfg.eval_scenes; ++i) {
        ValScene v{val_src.scene(i), {}};
        Rng density_rng(Rng::mix(cfg.seed ^ kStreamEval, 2 * i));
        const double d = cfg.density.sample(density_rng);
        v.sd = apply_pattern(v.scene.depth,
                             SparsityPattern::uniform(d, Rng::mix(cfg.seed ^ kStreamEval, 2 * i + 1)));
        out.push_back(std::move(v));
    }
    return out;
}

double validate_depth(const TrainedModel& model, const std::vector<ValScene>& val) {
    MetricsAccumulator acc;
    for (const ValScene& v : val) {
        const std::vector<DepthMap> pred =
            predict_depth(model, {&v.sd, 1}, {&v.scene.rgb, 1});
        acc.add(pred[0], v.scene.depth, all_gt_valid_mask(v.scene.depth));
    }
    return acc.report().imae_1pkm;
}

double validate_segmentation(const TrainedModel& model, const std::vector<ValScene>& val,
                             int num_classes) {
    double sum = 0.0;
    for (const ValScene& v : val) {
        const std::vector<SegMap> pred = predict_labels(model, {&v.sd, 1}, {&v.scene.rgb, 1});
        sum += mean_iou(pred[0], v.scene.labels, num_classes).mean_iou;
    }
    return sum / static_cast<double>(val.size());
}

TrainResult train_common(const TrainConfig& cfg, const SceneSource& train_src,
                         const SceneSource& val_src,
                         const std::optional<std::filesystem::path>& abort_checkpoint) {
    cfg.validate();
    const auto t_start = std::chrono::steady_clock::now();

    TrainResult result;
    result.config_snapshot = cfg.serialize();
    result.model.arch = ArchDescriptor::from_config(cfg);
    result.model.net = result.model.arch.build(Rng::mix(cfg.seed, kStreamInit));
    TrainedModel& model = result.model;

    Optimizer opt(model.net, AdamConfig{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps_adam});
    const std::vector<ValScene> val = make_validation_set(cfg, val_src);
    const bool want_depth = cfg.task == TaskKind::Depth;
    const bool lower_is_better = want_depth;
    result.best_val_metric = want_depth ? std::numeric_limits<double>::infinity() : -1.0;

    for (long step = 0; step < cfg.total_steps(); ++step) {
        // Assemble the batch, dropping samples whose evaluation set is empty.
        std::vector<SyntheticScene> scenes;
        std::vector<DepthMap> sds;
        scenes.reserve(cfg.batch);
        for (int i = 0; i < cfg.batch; ++i) {
            const long sample_index = step * cfg.batch + i;
            SyntheticScene scene = train_src.scene(sample_index);
            DepthMap sd = sparsify_sample(scene, cfg, sample_index);
            if (want_depth) {
                const EvalMask mask = unobserved_mask(sd, scene.depth);
                long n = 0;
                for (std::uint8_t m : mask) n += m;
                if (n == 0) continue;  // everything observed: skip the sample
            } else {
                bool any = false;
                for (int r = 0; r < scene.labels.height() && !any; ++r)
                    for (int c = 0; c < scene.labels.width() && !any; ++c)
                        any = !scene.labels.ignored(r, c);
                if (!any) continue;
            }
            scenes.push_back(std::move(scene));
            sds.push_back(std::move(sd));
        }
        if (scenes.empty()) {
            result.skipped_steps.push_back(step);
            continue;
        }

        std::vector<RgbImage> rgb_imgs;
        rgb_imgs.reserve(scenes.size());
        for (const auto& s : scenes) rgb_imgs.push_back(s.rgb);
        const NetInputs inputs = assemble_inputs(model.arch, sds, rgb_imgs);
        const Tensor4 out = model.net.forward(inputs, /*train=*/true);

        double loss_value;
        model.net.zero_grads();
        if (want_depth) {
            const int n = out.n, h = out.h, w = out.w;
            Tensor4 pred_inv_km(n, 1, h, w, 0.0);
            for (std::size_t i = 0; i < out.v.size(); ++i)
                pred_inv_km.v[i] = kInputInverseScale * out.v[i];
            Tensor4 gt_inv_km(n, 1, h, w, 0.0);
            Tensor4 mask(n, 1, h, w, 0.0);
            for (int s = 0; s < n; ++s) {
                const InverseDepthMap gt_inv = to_inverse(scenes[s].depth);
                const EvalMask unobs = unobserved_mask(sds[s], scenes[s].depth);
                for (int r = 0; r < h; ++r)
                    for (int c = 0; c < w; ++c) {
                        gt_inv_km.at(s, 0, r, c) = gt_inv.at(r, c);
                        mask.at(s, 0, r, c) = unobs.at(r, c);
                    }
            }
            BatchLossResult loss = masked_loss(pred_inv_km, gt_inv_km, mask, cfg.loss);
            loss_value = loss.value;
            if (!std::isfinite(loss_value)) {
                if (abort_checkpoint) save_checkpoint(*abort_checkpoint, model);
                throw TrainingDiverged(
                    fmt::format("loss became {} at step {}", loss_value, step), step);
            }
            // d(loss)/d(head output): the head emits inverse depth in 1/m.
            Tensor4 out_grad = loss.grad;
            for (double& g : out_grad.v) g *= kInputInverseScale;
            model.net.backward(out_grad);
        } else {
            std::vector<SegMap> labels;
            labels.reserve(scenes.size());
            for (const auto& s : scenes) labels.push_back(s.labels);
            CrossEntropyResult ce = cross_entropy(out, labels);
            loss_value = ce.value;
            if (!std::isfinite(loss_value)) {
                if (abort_checkpoint) save_checkpoint(*abort_checkpoint, model);
                throw TrainingDiverged(
                    fmt::format("loss became {} at step {}", loss_value, step), step);
            }
            model.net.backward_from_logits(ce.logits_grad);
        }

        check_gradients_finite(model.net, step);
        opt.step();
        result.loss_curve.push_back(loss_value);

        const bool last_step = step + 1 == cfg.total_steps();
        if (cfg.val_interval > 0 && ((step + 1) % cfg.val_interval == 0 || last_step)) {
            const double metric = want_depth
                                      ? validate_depth(model, val)
                                      : validate_segmentation(model, val, cfg.num_classes);
            const bool better = lower_is_better ? metric < result.best_val_metric
                                                : metric > result.best_val_metric;
            if (better) {
                result.best_val_metric = metric;
                result.best_val_step = step + 1;
                result.best_model = model;
            }
        }
    }

    if (result.best_val_step < 0) result.best_model = model;
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return result;
}

}  // namespace

Tensor4 sd_input_tensor(std::span<const DepthMap> sds) {
    if (sds.empty()) throw ShapeError("sd_input_tensor: empty batch");
    const int h = sds[0].height(), w = sds[0].width();
    Tensor4 t(static_cast<int>(sds.size()), 1, h, w, 0.0);
    for (std::size_t n = 0; n < sds.size(); ++n) {
        if (sds[n].height() != h || sds[n].width() != w)
            throw ShapeError("sd_input_tensor: inconsistent sample dimensions");
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                const double d = sds[n].at(r, c);
                t.at(static_cast<int>(n), 0, r, c) = d > 0.0 ? 1.0 / d : 0.0;
            }
    }
    return t;
}

Tensor4 rgb_input_tensor(std::span<const RgbImage> rgbs) {
    if (rgbs.empty()) throw ShapeError("rgb_input_tensor: empty batch");
    const int h = rgbs[0].height(), w = rgbs[0].width();
    Tensor4 t(static_cast<int>(rgbs.size()), 3, h, w, 0.0);
    for (std::size_t n = 0; n < rgbs.size(); ++n) {
        if (rgbs[n].height() != h || rgbs[n].width() != w)
            throw ShapeError("rgb_input_tensor: inconsistent sample dimensions");
        for (int ch = 0; ch < 3; ++ch)
            for (int r = 0; r < h; ++r)
                for (int c = 0; c < w; ++c)
                    t.at(static_cast<int>(n), ch, r, c) = rgbs[n].at(ch, r, c);
    }
    return t;
}

NetInputs assemble_inputs(const ArchDescriptor& arch, std::span<const DepthMap> sds,
                          std::span<const RgbImage> rgbs) {
    NetInputs in;
    const bool need_sd = arch.inputs != InputConfig::Rgb;
    const bool need_rgb = arch.inputs != InputConfig::Sd;
    if (need_sd) in.sparse_depth = sd_input_tensor(sds);
    if (need_rgb) in.rgb = rgb_input_tensor(rgbs);
    return in;
}

std::vector<DepthMap> predict_depth(const TrainedModel& model, std::span<const DepthMap> sds,
                                    std::span<const RgbImage> rgbs) {
    if (model.arch.task != TaskKind::Depth)
        throw StateError("predict_depth on a segmentation model");
    const NetInputs in = assemble_inputs(model.arch, sds, rgbs);
    const Tensor4 out = model.net.infer(in);
    std::vector<DepthMap> result;
    result.reserve(out.n);
    for (int n = 0; n < out.n; ++n) {
        Grid<double> inv(out.h, out.w, 0.0);
        for (int r = 0; r < out.h; ++r)
            for (int c = 0; c < out.w; ++c)
                inv.at(r, c) = kInputInverseScale * out.at(n, 0, r, c);
        result.push_back(from_inverse(InverseDepthMap(std::move(inv)), model.arch.d_max));
    }
    return result;
}

std::vector<SegMap> predict_labels(const TrainedModel& model, std::span<const DepthMap> sds,
                                   std::span<const RgbImage> rgbs) {
    if (model.arch.task != TaskKind::Segmentation)
        throw StateError("predict_labels on a depth model");
    const NetInputs in = assemble_inputs(model.arch, sds, rgbs);
    const Tensor4 probs = model.net.infer(in);
    std::vector<SegMap> result;
    result.reserve(probs.n);
    for (int n = 0; n < probs.n; ++n) result.push_back(argmax_labels(probs, n));
    return result;
}

TrainResult train_depth(const TrainConfig& cfg, const SceneSource& train_src,
                        const SceneSource& val_src,
                        const std::optional<std::filesystem::path>& abort_checkpoint) {
    if (cfg.task != TaskKind::Depth) throw ConfigError("train_depth needs task=depth");
    return train_common(cfg, train_src, val_src, abort_checkpoint);
}

TrainResult train_segmentation(const TrainConfig& cfg, const SceneSource& train_src,
                               const SceneSource& val_src,
                               const std::optional<std::filesystem::path>& abort_checkpoint) {
    if (cfg.task != TaskKind::Segmentation) throw ConfigError("train_segmentation needs task=seg");
    return train_common(cfg, train_src, val_src, abort_checkpoint);
}

}  // namespace sdc
