#include "sdc/objective.hpp"

#include <cmath>
#include <limits>

#include <fmt/core.h>

namespace sdc {

namespace {

void check_same_dims(int h1, int w1, int h2, int w2, const char* what) {
    if (h1 != h2 || w1 != w2)
        throw ShapeError(fmt::format("{}: {}x{} vs {}x{}", what, h1, w1, h2, w2));
}

}  // namespace

EvalMask unobserved_mask(const DepthMap& input_sd, const DepthMap& gt) {
    check_same_dims(input_sd.height(), input_sd.width(), gt.height(), gt.width(),
                    "unobserved_mask");
    EvalMask mask(gt.height(), gt.width(), 0);
    for (int r = 0; r < gt.height(); ++r)
        for (int c = 0; c < gt.width(); ++c)
            mask.at(r, c) = gt.valid(r, c) && !input_sd.valid(r, c) ? 1 : 0;
    return mask;
}

EvalMask all_gt_valid_mask(const DepthMap& gt) {
    EvalMask mask(gt.height(), gt.width(), 0);
    for (int r = 0; r < gt.height(); ++r)
        for (int c = 0; c < gt.width(); ++c)
            mask.at(r, c) = gt.valid(r, c) ? 1 : 0;
    return mask;
}

LossResult masked_loss(const Grid<double>& pred_inv, const Grid<double>& gt_inv,
                       const EvalMask& mask, LossNorm norm) {
    if (!pred_inv.same_shape(gt_inv) || pred_inv.height() != mask.height() ||
        pred_inv.width() != mask.width())
        throw ShapeError("masked_loss: prediction, target and mask must share dimensions");

    long pixels = 0;
    for (std::uint8_t m : mask) pixels += m;
    if (pixels == 0) throw EmptyEvalSet("masked_loss: evaluation mask selects no pixel");

    LossResult out;
    out.pixels = pixels;
    out.grad = Grid<double>(pred_inv.height(), pred_inv.width(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(pixels);
    for (int r = 0; r < pred_inv.height(); ++r) {
        for (int c = 0; c < pred_inv.width(); ++c) {
            if (!mask.at(r, c)) continue;
            const double diff = pred_inv.at(r, c) - gt_inv.at(r, c);
            if (norm == LossNorm::L1) {
                out.value += std::abs(diff) * inv_n;
                out.grad.at(r, c) = (diff > 0.0 ? 1.0 : diff < 0.0 ? -1.0 : 0.0) * inv_n;
            } else {
                out.value += diff * diff * inv_n;
                out.grad.at(r, c) = 2.0 * diff * inv_n;
            }
        }
    }
    return out;
}

BatchLossResult masked_loss(const Tensor4& pred_inv, const Tensor4& gt_inv, const Tensor4& mask,
                            LossNorm norm) {
    if (!pred_inv.same_shape(gt_inv) || !pred_inv.same_shape(mask))
        throw ShapeError("masked_loss: prediction, target and mask must share shape");

    long pixels = 0;
    for (double m : mask.v) {
        if (m != 0.0 && m != 1.0) throw DomainError("masked_loss: mask must be binary");
        pixels += m != 0.0;
    }
    if (pixels == 0) throw EmptyEvalSet("masked_loss: evaluation mask selects no pixel");

    BatchLossResult out;
    out.pixels = pixels;
    out.grad = Tensor4(pred_inv.n, pred_inv.c, pred_inv.h, pred_inv.w, 0.0);
    const double inv_n = 1.0 / static_cast<double>(pixels);
    for (std::size_t i = 0; i < pred_inv.v.size(); ++i) {
        if (mask.v[i] == 0.0) continue;
        const double diff = pred_inv.v[i] - gt_inv.v[i];
        if (norm == LossNorm::L1) {
            out.value += std::abs(diff) * inv_n;
            out.grad.v[i] = (diff > 0.0 ? 1.0 : diff < 0.0 ? -1.0 : 0.0) * inv_n;
        } else {
            out.value += diff * diff * inv_n;
            out.grad.v[i] = 2.0 * diff * inv_n;
        }
    }
    return out;
}

std::string MetricsReport::csv_header() {
    return "mae_mm,rmse_mm,imae_1pkm,irmse_1pkm,delta_1_05,delta_1_10,delta_1_25,delta_1_50,"
           "n_pixels";
}

std::string MetricsReport::csv_row() const {
    return fmt::format("{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{}", mae_mm,
                       rmse_mm, imae_1pkm, irmse_1pkm, delta[0], delta[1], delta[2], delta[3],
                       n_pixels);
}

void MetricsAccumulator::add(const DepthMap& pred, const DepthMap& gt, const EvalMask& mask) {
    check_same_dims(pred.height(), pred.width(), gt.height(), gt.width(), "depth_metrics");
    check_same_dims(pred.height(), pred.width(), mask.height(), mask.width(), "depth_metrics");
    for (int r = 0; r < gt.height(); ++r) {
        for (int c = 0; c < gt.width(); ++c) {
            if (!mask.at(r, c)) continue;
            if (!gt.valid(r, c))
                throw DomainError("depth_metrics: evaluation mask covers an invalid gt pixel");
            const double p = pred.at(r, c);
            const double g = gt.at(r, c);
            if (!(p > 0.0))
                throw DomainError(fmt::format(
                    "depth_metrics: non-positive prediction {} at evaluated pixel ({}, {})", p, r,
                    c));
            const double err_mm = (p - g) * 1000.0;
            const double err_ikm = 1000.0 / p - 1000.0 / g;
            abs_mm_ += std::abs(err_mm);
            sq_mm_ += err_mm * err_mm;
            abs_ikm_ += std::abs(err_ikm);
            sq_ikm_ += err_ikm * err_ikm;
            const double ratio = std::max(p / g, g / p);
            for (std::size_t t = 0; t < kDeltaThresholds.size(); ++t)
                if (ratio < kDeltaThresholds[t]) ++delta_hits_[t];
            ++n_;
        }
    }
}

void MetricsAccumulator::merge(const MetricsAccumulator& other) {
    abs_mm_ += other.abs_mm_;
    sq_mm_ += other.sq_mm_;
    abs_ikm_ += other.abs_ikm_;
    sq_ikm_ += other.sq_ikm_;
    for (std::size_t t = 0; t < delta_hits_.size(); ++t) delta_hits_[t] += other.delta_hits_[t];
    n_ += other.n_;
}

MetricsReport MetricsAccumulator::report() const {
    if (n_ == 0) throw EmptyEvalSet("depth_metrics: no pixel was evaluated");
    MetricsReport r;
    const double n = static_cast<double>(n_);
    r.mae_mm = abs_mm_ / n;
    r.rmse_mm = std::sqrt(sq_mm_ / n);
    r.imae_1pkm = abs_ikm_ / n;
    r.irmse_1pkm = std::sqrt(sq_ikm_ / n);
    for (std::size_t t = 0; t < delta_hits_.size(); ++t)
        r.delta[t] = static_cast<double>(delta_hits_[t]) / n;
    r.n_pixels = n_;
    return r;
}

MetricsReport depth_metrics(const DepthMap& pred, const DepthMap& gt, EvalOn eval_on,
                            const DepthMap* input_sd) {
    EvalMask mask;
    if (eval_on == EvalOn::AllGtValid) {
        mask = all_gt_valid_mask(gt);
    } else {
        if (!input_sd)
            throw DomainError("depth_metrics: Unobserved evaluation needs the sparse input");
        mask = unobserved_mask(*input_sd, gt);
    }
    MetricsAccumulator acc;
    acc.add(pred, gt, mask);
    return acc.report();
}

std::vector<double> delta_metric(const DepthMap& pred, const DepthMap& gt, const EvalMask& mask,
                                 std::span<const double> thresholds) {
    check_same_dims(pred.height(), pred.width(), gt.height(), gt.width(), "delta_metric");
    std::vector<long> hits(thresholds.size(), 0);
    long n = 0;
    for (int r = 0; r < gt.height(); ++r) {
        for (int c = 0; c < gt.width(); ++c) {
            if (!mask.at(r, c)) continue;
            const double p = pred.at(r, c);
            const double g = gt.at(r, c);
            if (!(p > 0.0))
                throw DomainError(fmt::format(
                    "delta_metric: non-positive prediction {} at evaluated pixel ({}, {})", p, r,
                    c));
            const double ratio = std::max(p / g, g / p);
            for (std::size_t t = 0; t < thresholds.size(); ++t)
                if (ratio < thresholds[t]) ++hits[t];  // strict, as defined
            ++n;
        }
    }
    if (n == 0) throw EmptyEvalSet("delta_metric: no pixel was evaluated");
    std::vector<double> out(thresholds.size());
    for (std::size_t t = 0; t < thresholds.size(); ++t)
        out[t] = static_cast<double>(hits[t]) / static_cast<double>(n);
    return out;
}

CrossEntropyResult cross_entropy(const Tensor4& probs, const std::vector<SegMap>& gt) {
    if (static_cast<int>(gt.size()) != probs.n)
        throw ShapeError(fmt::format("cross_entropy: {} label maps for batch of {}", gt.size(),
                                     probs.n));
    for (const SegMap& g : gt)
        check_same_dims(g.height(), g.width(), probs.h, probs.w, "cross_entropy");

    long pixels = 0;
    for (int n = 0; n < probs.n; ++n)
        for (int y = 0; y < probs.h; ++y)
            for (int x = 0; x < probs.w; ++x)
                if (!gt[n].ignored(y, x)) ++pixels;
    if (pixels == 0) throw EmptyEvalSet("cross_entropy: all pixels carry the IGNORE label");

    CrossEntropyResult out;
    out.pixels = pixels;
    out.logits_grad = Tensor4(probs.n, probs.c, probs.h, probs.w, 0.0);
    const double inv_n = 1.0 / static_cast<double>(pixels);
    constexpr double tiny = 1e-300;  // guards the log, not the gradient

    for (int n = 0; n < probs.n; ++n) {
        for (int y = 0; y < probs.h; ++y) {
            for (int x = 0; x < probs.w; ++x) {
                if (gt[n].ignored(y, x)) continue;
                const int cls = gt[n].at(y, x);
                if (cls >= probs.c)
                    throw DomainError(fmt::format(
                        "cross_entropy: label {} out of range for {} classes", cls, probs.c));
                double sum = 0.0;
                for (int c = 0; c < probs.c; ++c) sum += probs.at(n, c, y, x);
                if (std::abs(sum - 1.0) > 1e-6)
                    throw DomainError(fmt::format(
                        "cross_entropy: class distribution sums to {} at ({}, {}, {})", sum, n, y,
                        x));
                out.value -= std::log(std::max(probs.at(n, cls, y, x), tiny)) * inv_n;
                for (int c = 0; c < probs.c; ++c) {
                    const double onehot = c == cls ? 1.0 : 0.0;
                    out.logits_grad.at(n, c, y, x) = (probs.at(n, c, y, x) - onehot) * inv_n;
                }
            }
        }
    }
    return out;
}

SegMap argmax_labels(const Tensor4& probs, int sample) {
    SegMap labels(probs.h, probs.w);
    for (int y = 0; y < probs.h; ++y)
        for (int x = 0; x < probs.w; ++x) {
            int best = 0;
            for (int c = 1; c < probs.c; ++c)
                if (probs.at(sample, c, y, x) > probs.at(sample, best, y, x)) best = c;
            labels.set(y, x, static_cast<std::uint8_t>(best));
        }
    return labels;
}

std::string SegReport::csv_header(int num_classes) {
    std::string h = "mean_iou";
    for (int c = 0; c < num_classes; ++c) h += fmt::format(",iou_class_{}", c);
    return h;
}

std::string SegReport::csv_row() const {
    std::string row = fmt::format("{:.9g}", mean_iou);
    for (double v : per_class_iou)
        row += std::isnan(v) ? "," : fmt::format(",{:.9g}", v);
    return row;
}

SegReport mean_iou(const SegMap& pred, const SegMap& gt, int num_classes) {
    check_same_dims(pred.height(), pred.width(), gt.height(), gt.width(), "mean_iou");
    if (num_classes < 1) throw ConfigError("mean_iou: num_classes must be >= 1");

    std::vector<long> inter(num_classes, 0), uni(num_classes, 0);
    for (int r = 0; r < gt.height(); ++r) {
        for (int c = 0; c < gt.width(); ++c) {
            if (gt.ignored(r, c)) continue;
            const int g = gt.at(r, c);
            const int p = pred.at(r, c);
            if (g >= num_classes)
                throw DomainError(fmt::format("mean_iou: gt label {} out of range", g));
            if (p >= num_classes)
                throw DomainError(fmt::format("mean_iou: predicted label {} out of range", p));
            if (g == p) {
                ++inter[g];
                ++uni[g];
            } else {
                ++uni[g];
                ++uni[p];
            }
        }
    }

    SegReport out;
    out.per_class_iou.assign(num_classes, std::numeric_limits<double>::quiet_NaN());
    double sum = 0.0;
    int counted = 0;
    for (int c = 0; c < num_classes; ++c) {
        if (uni[c] == 0) continue;  // absent from both pred and gt
        out.per_class_iou[c] = static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
        sum += out.per_class_iou[c];
        ++counted;
    }
    out.mean_iou = counted > 0 ? sum / counted : 0.0;
    return out;
}

}  // namespace sdc
