#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "sdc/depth_grid.hpp"
#include "sdc/grid.hpp"
#include "sdc/tensor.hpp"

namespace sdc {

/// Binary grid marking where a loss/metric is computed. Always a subset of
/// the ground-truth-valid pixels.
using EvalMask = MaskGrid;

/// Pixels valid in the ground truth but missing in the sparse input: the
/// training-loss support.
EvalMask unobserved_mask(const DepthMap& input_sd, const DepthMap& gt);

/// Every ground-truth-valid pixel (Kitti benchmark convention).
EvalMask all_gt_valid_mask(const DepthMap& gt);

enum class LossNorm { L1, L2 };

struct LossResult {
    double value = 0.0;
    Grid<double> grad;  // d(loss)/d(pred), exactly 0 outside the mask
    long pixels = 0;
};

/// Mean |pred - gt| or mean (pred - gt)^2 over masked pixels only. Values are
/// inverse depths in 1/km, so the L1 form is numerically an iMAE.
/// Throws EmptyEvalSet when the mask selects nothing.
LossResult masked_loss(const Grid<double>& pred_inv, const Grid<double>& gt_inv,
                       const EvalMask& mask, LossNorm norm);

struct BatchLossResult {
    double value = 0.0;
    Tensor4 grad;
    long pixels = 0;
};

/// Batched variant: one mean over all masked pixels of the batch; tensors are
/// (N,1,H,W) with a {0,1}-valued mask.
BatchLossResult masked_loss(const Tensor4& pred_inv, const Tensor4& gt_inv, const Tensor4& mask,
                            LossNorm norm);

inline constexpr std::array<double, 4> kDeltaThresholds = {1.05, 1.10, 1.25, 1.50};

/// Depth completion metric suite. MAE/RMSE in mm, iMAE/iRMSE in 1/km, delta
/// fractions at the standard thresholds, all averaged over the evaluated
/// pixel count.
struct MetricsReport {
    double mae_mm = 0.0;
    double rmse_mm = 0.0;
    double imae_1pkm = 0.0;
    double irmse_1pkm = 0.0;
    std::array<double, 4> delta = {0.0, 0.0, 0.0, 0.0};
    long n_pixels = 0;

    static std::string csv_header();
    std::string csv_row() const;
};

enum class EvalOn { AllGtValid, Unobserved };

/// Metrics of a dense prediction against (possibly sparse) ground truth over
/// the selected pixel set. `input_sd` is only consulted for
/// EvalOn::Unobserved. Throws EmptyEvalSet when no pixel qualifies.
MetricsReport depth_metrics(const DepthMap& pred, const DepthMap& gt, EvalOn eval_on,
                            const DepthMap* input_sd = nullptr);

/// Fractions of pixels with max(pred/gt, gt/pred) strictly below each
/// threshold. Predictions must be positive on evaluated pixels.
std::vector<double> delta_metric(const DepthMap& pred, const DepthMap& gt, const EvalMask& mask,
                                 std::span<const double> thresholds);

/// Order-insensitive accumulator for dataset-level metrics; merging weights
/// images by their evaluated pixel count (global mean over all pixels).
class MetricsAccumulator {
  public:
    void add(const DepthMap& pred, const DepthMap& gt, const EvalMask& mask);
    void merge(const MetricsAccumulator& other);
    bool empty() const { return n_ == 0; }
    MetricsReport report() const;

  private:
    double abs_mm_ = 0.0, sq_mm_ = 0.0;
    double abs_ikm_ = 0.0, sq_ikm_ = 0.0;
    std::array<long, 4> delta_hits_ = {0, 0, 0, 0};
    long n_ = 0;
};

struct CrossEntropyResult {
    double value = 0.0;
    /// Gradient with respect to the pre-softmax logits (fused softmax-CE
    /// form, (p - onehot)/N), which is what training injects below the head.
    Tensor4 logits_grad;
    long pixels = 0;
};

/// Mean -log p[gt class] over non-IGNORE pixels of the batch. `probs` holds
/// per-pixel class distributions (each summing to 1 within 1e-6).
CrossEntropyResult cross_entropy(const Tensor4& probs, const std::vector<SegMap>& gt);

/// Argmax over the class dimension of one sample.
SegMap argmax_labels(const Tensor4& probs, int sample);

struct SegReport {
    std::vector<double> per_class_iou;  // NaN for classes absent from pred and gt
    double mean_iou = 0.0;

    static std::string csv_header(int num_classes);
    std::string csv_row() const;
};

/// Per-class intersection-over-union, ignoring IGNORE pixels; the mean runs
/// over classes present in prediction or ground truth (classes absent from
/// both are skipped).
SegReport mean_iou(const SegMap& pred, const SegMap& gt, int num_classes);

}  // namespace sdc
