#pragma once

#include <filesystem>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sdc/net.hpp"
#include "sdc/objective.hpp"
#include "sdc/rng.hpp"
#include "sdc/sparsifier.hpp"

namespace sdc {

// --- Optimizer ------------------------------------------------------------------

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<double> m, v;
};

/// One bias-corrected Adam update, t >= 1. State is created lazily on the
/// first call. Throws DomainError on non-finite gradients.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, long t,
               const AdamConfig& cfg);

// --- Train configuration ---------------------------------------------------------

/// Per-image input density: fixed, or drawn uniformly from (low, high].
struct DensitySchedule {
    enum class Kind { Fixed, UniformRandom };
    Kind kind = Kind::Fixed;
    double fixed = 0.05;
    double low = 0.0, high = 1.0;

    void validate() const;
    double sample(Rng& rng) const;
    static DensitySchedule parse(const std::string& text);  // "fixed:0.05" | "uniform:0:1"
    std::string serialize() const;
};

enum class InputConfig { Sd, Rgb, EarlyFusion, LateFusion };
enum class TaskKind { Depth, Segmentation };

const char* to_string(InputConfig);
const char* to_string(TaskKind);
const char* to_string(FirstLayer);

/// Everything a training run depends on. Serializes to key=value lines;
/// unknown keys are rejected on parse.
struct TrainConfig {
    std::string arch = "tiny-ed";
    TaskKind task = TaskKind::Depth;
    InputConfig inputs = InputConfig::Sd;
    FirstLayer first_layer = FirstLayer::SparseConv;
    LossNorm loss = LossNorm::L1;
    DensitySchedule density;
    std::string cutout;  // empty = off, else "cutout:N:MIN:MAX"
    int epochs = 4;
    int steps_per_epoch = 100;
    int batch = 8;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_adam = 1e-8;
    std::uint64_t seed = 1;
    double d_max = kDefaultMaxDepthMeters;
    bool batchnorm = false;
    // Synthetic data source.
    int scene_height = 64;
    int scene_width = 64;
    int num_classes = 4;
    int eval_scenes = 8;
    int val_interval = 100;  // steps between validation passes; 0 disables

    long total_steps() const { return static_cast<long>(epochs) * steps_per_epoch; }
    void validate() const;
    static TrainConfig parse(std::istream& in);
    static TrainConfig load(const std::filesystem::path& path);
    std::string serialize() const;
};

// --- Scene streams ----------------------------------------------------------------

/// Deterministic random-access stream: scene(i) depends only on the source
/// configuration and i, which keeps training reproducible under any
/// consumer-side parallelism.
class SceneSource {
  public:
    virtual ~SceneSource() = default;
    virtual SyntheticScene scene(long index) const = 0;
    /// Number of distinct scenes, or 0 for unbounded generators.
    virtual long count() const { return 0; }
};

class GeneratedScenes final : public SceneSource {
  public:
    GeneratedScenes(std::uint64_t seed, int height, int width, int num_classes)
        : seed_(seed), height_(height), width_(width), num_classes_(num_classes) {}
    SyntheticScene scene(long index) const override;

  private:
    std::uint64_t seed_;
    int height_, width_, num_classes_;
};

/// Scenes stored as file triplets `<stem>_depth.png` (16-bit), `<stem>_rgb.png`
/// and optionally `<stem>_labels.png`, as written by the gen-scenes command.
/// Indexing wraps around, so the directory acts as an endless stream.
class DirectoryScenes final : public SceneSource {
  public:
    explicit DirectoryScenes(const std::filesystem::path& dir, int num_classes = 0);
    SyntheticScene scene(long index) const override;
    long count() const override { return static_cast<long>(stems_.size()); }

  private:
    std::vector<std::filesystem::path> stems_;
    int num_classes_;
};

// --- Trained models and checkpoints ------------------------------------------------

/// Plain-text architecture descriptor embedded in every checkpoint so a
/// checkpoint file is self-describing.
struct ArchDescriptor {
    std::string arch = "tiny-ed";
    TaskKind task = TaskKind::Depth;
    InputConfig inputs = InputConfig::Sd;
    FirstLayer first_layer = FirstLayer::SparseConv;
    std::array<int, 3> channels = {16, 32, 64};
    bool batchnorm = false;
    int num_classes = 4;
    double d_max = kDefaultMaxDepthMeters;

    static ArchDescriptor from_config(const TrainConfig& cfg);
    NetworkGraph build(std::uint64_t init_seed) const;
    std::string serialize() const;
    static ArchDescriptor parse(const std::string& text);
};

struct TrainedModel {
    ArchDescriptor arch;
    NetworkGraph net;
};

/// Versioned binary container: named parameter grids with shape headers and a
/// little-endian float64 payload, preceded by the plain-text architecture
/// descriptor. Identical models serialize to identical bytes.
void save_checkpoint(const std::filesystem::path& path, const TrainedModel& model);
TrainedModel load_checkpoint(const std::filesystem::path& path);

// --- Input assembly and prediction ---------------------------------------------------

/// Sparse depth enters the network as inverse depth in 1/m (0 = missing), so
/// features, being at most 1/min-depth, stay O(1); losses and metrics remain
/// in the 1/km convention and the harness bridges the factor of 1000.
inline constexpr double kInputInverseScale = 1000.0;

Tensor4 sd_input_tensor(std::span<const DepthMap> sds);
Tensor4 rgb_input_tensor(std::span<const RgbImage> rgbs);
NetInputs assemble_inputs(const ArchDescriptor& arch, std::span<const DepthMap> sds,
                          std::span<const RgbImage> rgbs);

/// Eval-mode depth completion: network output -> inverse depth in 1/km ->
/// Eq.-style output mapping (non-activation 0 maps to d_max). Always dense.
std::vector<DepthMap> predict_depth(const TrainedModel& model, std::span<const DepthMap> sds,
                                    std::span<const RgbImage> rgbs);
std::vector<SegMap> predict_labels(const TrainedModel& model, std::span<const DepthMap> sds,
                                   std::span<const RgbImage> rgbs);

// --- Training loops ------------------------------------------------------------------

struct TrainResult {
    TrainedModel model;       // final parameters
    TrainedModel best_model;  // best validation metric seen
    double best_val_metric = 0.0;
    long best_val_step = -1;
    std::vector<double> loss_curve;  // one entry per optimizer step
    std::vector<long> skipped_steps;
    std::string config_snapshot;
    double wall_seconds = 0.0;
};

/// Depth completion training: per step sample a density per image, sparsify,
/// forward, masked L1/L2 on unobserved pixels in inverse depth, backward,
/// Adam. Samples with an empty evaluation set are skipped. On a NaN loss the
/// last parameters are saved to `abort_checkpoint` (when given) before
/// TrainingDiverged is thrown.
TrainResult train_depth(const TrainConfig& cfg, const SceneSource& train_src,
                        const SceneSource& val_src,
                        const std::optional<std::filesystem::path>& abort_checkpoint = {});

/// Same loop with a softmax head and cross-entropy over non-IGNORE pixels;
/// validation tracks mean IoU.
TrainResult train_segmentation(const TrainConfig& cfg, const SceneSource& train_src,
                               const SceneSource& val_src,
                               const std::optional<std::filesystem::path>& abort_checkpoint = {});

// --- Classical baseline ----------------------------------------------------------------

/// Every missing pixel takes the value of its nearest valid pixel (Euclidean;
/// ties prefer the smaller row, then the smaller column). Fully dense output.
DepthMap baseline_fill(const DepthMap& sd);

// --- Experiments --------------------------------------------------------------------------

struct ExperimentRow {
    std::string net_label;
    double condition = 0.0;  // density, or layer count
    std::string pattern;     // compact pattern spec
    std::uint64_t pattern_seed = 0;
    MetricsReport metrics;
};

struct ExperimentResult {
    std::string condition_name;  // "density" or "layers"
    std::vector<ExperimentRow> rows;
    std::string config_snapshot;
    double wall_seconds = 0.0;

    std::string csv() const;
    const ExperimentRow& find(const std::string& net_label, double condition) const;
};

struct NamedModel {
    std::string label;
    const TrainedModel* model;
};

/// Evaluate each net on one fixed held-out scene set sparsified at each
/// density. Per-scene pattern seeds derive from `pattern_seed` and the scene
/// index, identically across nets, so comparisons are paired.
ExperimentResult experiment_density_sweep(std::span<const NamedModel> nets,
                                          std::span<const double> densities,
                                          const SceneSource& eval_src, int n_scenes,
                                          std::uint64_t pattern_seed);

/// Same protocol with LidarBands(L) for each simulated layer count.
ExperimentResult experiment_lidar_ablation(std::span<const NamedModel> nets,
                                           std::span<const int> layer_counts,
                                           const SceneSource& eval_src, int n_scenes,
                                           std::uint64_t pattern_seed);

/// iMAE (AllGtValid) of a model over a held-out set under one pattern family;
/// shared by the experiments and the acceptance suite.
MetricsReport evaluate_model(const TrainedModel& model, const SceneSource& eval_src, int n_scenes,
                             const SparsityPattern& base_pattern, std::uint64_t pattern_seed);

}  // namespace sdc
