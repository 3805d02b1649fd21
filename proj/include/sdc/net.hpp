#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "sdc/tensor.hpp"

namespace sdc {

// --- Free differentiable operators -------------------------------------------
//
// All convolutions use "same" zero padding with odd kernels; spatial output
// extent is ceil(input / stride).

struct ConvGrads {
    Tensor4 input;
    Tensor4 weights;
    std::vector<double> bias;
};

/// Standard cross-correlation. Weights [out_ch][in_ch][k][k].
Tensor4 dense_conv2d(const Tensor4& x, const Tensor4& weights, std::span<const double> bias,
                     int stride);
ConvGrads dense_conv2d_backward(const Tensor4& x, const Tensor4& weights, int stride,
                                const Tensor4& upstream);

/// Adjoint of dense_conv2d: forward of the transposed convolution equals the
/// backward-input pass of a dense convolution with the same kernel, so the
/// output spatial extent is exactly input * stride. Weights [in_ch][out_ch][k][k].
Tensor4 transposed_conv2d(const Tensor4& x, const Tensor4& weights, std::span<const double> bias,
                          int stride);
ConvGrads transposed_conv2d_backward(const Tensor4& x, const Tensor4& weights, int stride,
                                     const Tensor4& upstream);

struct BatchNormRunning {
    std::vector<double> mean;
    std::vector<double> var;
};

struct BatchNormCache {
    std::vector<double> mean;
    std::vector<double> inv_std;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Per-channel batch normalization. Train mode normalizes by batch statistics
/// (biased variance) and updates the running estimates; Eval mode uses the
/// running estimates. `cache` must be non-null in Train mode when a backward
/// pass will follow.
Tensor4 batchnorm(const Tensor4& x, std::span<const double> gamma, std::span<const double> beta,
                  BatchNormRunning& running, bool train, BatchNormCache* cache);

struct BatchNormGrads {
    Tensor4 input;
    std::vector<double> gamma;
    std::vector<double> beta;
};

BatchNormGrads batchnorm_backward(const Tensor4& x, std::span<const double> gamma,
                                  const BatchNormCache& cache, const Tensor4& upstream);

/// Max pooling with windows clipped at borders (no padding value participates).
Tensor4 maxpool2d(const Tensor4& x, int k, int stride, std::vector<int>* argmax);
Tensor4 maxpool2d_backward(const Tensor4& x, int k, int stride, std::span<const int> argmax,
                           const Tensor4& upstream);

Tensor4 relu(const Tensor4& x);
Tensor4 relu_backward(const Tensor4& x, const Tensor4& upstream);

/// Channel-wise softmax per pixel.
Tensor4 softmax_channels(const Tensor4& logits);
/// Exact Jacobian-vector product of softmax_channels given probabilities.
Tensor4 softmax_channels_backward(const Tensor4& probs, const Tensor4& upstream);

// --- Layer specs --------------------------------------------------------------

struct DenseConvSpec {
    int k, s, out_ch;
};
struct SparseConvSpec {
    int k, s, out_ch;
};
struct TransposedConvSpec {
    int k, s, out_ch;
};
struct MaxPoolSpec {
    int k, s;
};
struct ReluSpec {};
struct BatchNormSpec {
    bool enabled = true;
};
/// Channel concatenation of every node input; all inputs must share spatial
/// resolution.
struct ConcatSpec {};
/// 1x1 convolution to num_classes channels followed by a per-pixel softmax.
struct SoftmaxHeadSpec {
    int num_classes;
};
/// 1x1 convolution to one channel, clamped >= 0 (inverse-depth regression;
/// an output of exactly 0 is the non-activation value).
struct RegressionHeadSpec {};

using LayerSpec = std::variant<DenseConvSpec, SparseConvSpec, TransposedConvSpec, MaxPoolSpec,
                               ReluSpec, BatchNormSpec, ConcatSpec, SoftmaxHeadSpec,
                               RegressionHeadSpec>;

enum class Slot { SparseDepth, Rgb };

struct Param {
    std::string name;
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool trainable = true;

    std::size_t numel() const { return value.size(); }
};

/// Feature tensor plus optional per-sample validity mask (N,1,H,W).
struct Activation {
    Tensor4 features;
    Tensor4 mask;
    bool has_mask() const { return !mask.empty(); }
};

/// Network inputs. Sparse depth may carry an explicit mask; when absent the
/// mask is derived as value != 0. Both tensors, when present, must agree on
/// batch and spatial dimensions.
struct NetInputs {
    std::optional<Tensor4> sparse_depth;
    std::optional<Tensor4> sparse_depth_mask;
    std::optional<Tensor4> rgb;
};

/// Declarative layer DAG with parameter and gradient stores.
///
/// Build with add_input/add, then finalize(seed) to validate the graph and
/// initialize parameters. Training: forward(inputs, true) retains
/// activations, backward(grad) accumulates parameter gradients. infer() is a
/// const, trace-free forward for shared read-only use.
class NetworkGraph {
  public:
    /// `mask_as_channel` realizes the channel-wise mask-concatenation variant:
    /// the sparse-depth slot then emits 2 dense channels [values, mask] and no
    /// validity mask propagates downstream.
    int add_input(Slot slot, bool mask_as_channel = false, const std::string& name = {});
    int add(LayerSpec spec, std::vector<int> inputs, const std::string& name = {});
    void set_output(int node_id);

    /// Validates the DAG (channel/resolution bookkeeping, the
    /// batchnorm-after-first-strided-sparse-conv rule) and initializes
    /// parameters. Throws GraphError on structural violations.
    void finalize(std::uint64_t init_seed);
    bool finalized() const { return finalized_; }

    Tensor4 forward(const NetInputs& inputs, bool train);
    Tensor4 infer(const NetInputs& inputs) const;

    /// Reverse pass from the retained forward trace. `output_grad` is the
    /// loss gradient with respect to the network output.
    void backward(const Tensor4& output_grad);

    /// Reverse pass that injects the gradient below the SoftmaxHead, i.e.
    /// with respect to the head's logits. Pairs with the fused
    /// softmax-cross-entropy gradient in the objective module.
    void backward_from_logits(const Tensor4& logits_grad);

    void zero_grads();

    std::vector<Param>& params() { return params_; }
    const std::vector<Param>& params() const { return params_; }
    Param& param(const std::string& name);
    const Param* find_param(const std::string& name) const;

    int output_node() const { return output_; }
    int node_count() const { return static_cast<int>(nodes_.size()); }
    const LayerSpec* node_spec(int id) const;
    const std::string& node_name(int id) const;
    int node_out_channels(int id) const;
    std::size_t parameter_count(bool trainable_only = true) const;

    std::vector<Slot> input_slots() const;

  private:
    struct Node {
        std::string name;
        std::variant<Slot, LayerSpec> op;
        std::vector<int> inputs;
        int out_channels = 0;
        // Resolution relative to the network input as a rational downscale
        // factor num/den, used for construction-time Concat validation.
        long scale_num = 1, scale_den = 1;
        // Parameter indices (-1 when absent).
        int p_weight = -1, p_bias = -1, p_gamma = -1, p_beta = -1;
        int p_run_mean = -1, p_run_var = -1;
    };

    struct Trace {
        std::vector<Activation> acts;
        std::vector<BatchNormCache> bn;
        std::vector<std::vector<int>> argmax;
        std::vector<Tensor4> head_pre;  // pre-softmax logits / pre-clamp regression
        bool valid = false;
    };

    void check_node_id(int id) const;
    int add_param(const std::string& name, std::vector<int> shape, bool trainable);
    Tensor4 as_tensor(int param_idx) const;
    Tensor4 run(const NetInputs& inputs, bool train, Trace* trace,
                std::vector<Param>* mut_params) const;
    void sparse_conv_node_forward(const Node& node, const Activation& in, Activation& out) const;
    void sparse_conv_node_backward(const Node& node, const Activation& in, const Tensor4& up,
                                   Tensor4& grad_in);
    void add_param_grad(int param_idx, std::span<const double> g);
    void backward_impl(const Tensor4& seed_grad, bool wrt_logits);

    std::vector<Node> nodes_;
    std::vector<Param> params_;
    int output_ = -1;
    bool finalized_ = false;
    Trace trace_;
};

// --- Architecture templates ----------------------------------------------------

enum class FirstLayer {
    SparseConv,       // sparsity-invariant conv with mask propagation
    DenseConv,        // plain conv straight on the sparse values
    DenseWithMask,    // plain conv on [values, mask] stacked channel-wise
};

enum class HeadKind { Regression, Softmax };

struct Head {
    HeadKind kind = HeadKind::Regression;
    int num_classes = 0;
};

/// Encoder recipe: 3 stages of [conv k3 s2, ReLU, conv k3 s1, ReLU].
struct BranchSpec {
    std::array<int, 3> stage_channels = {16, 32, 64};
    FirstLayer first_layer = FirstLayer::SparseConv;  // only honored on the depth branch
    bool batchnorm = false;
};

struct SingleBranch {
    Slot input = Slot::SparseDepth;
    BranchSpec encoder;
};

enum class FusionMode { Early, Late };

/// Early: channel-concat RGB and sparse depth at the input of one
/// encoder-decoder. Late: one encoder per modality, joined by channel
/// concatenation plus a convolution, then a shared decoder.
struct FusionTemplate {
    FusionMode mode = FusionMode::Late;
    BranchSpec rgb_branch;
    BranchSpec depth_branch;
    int join_out_channels = 64;  // Late only
};

NetworkGraph build_network(const SingleBranch& spec, const Head& head, std::uint64_t init_seed);
NetworkGraph build_network(const FusionTemplate& spec, const Head& head, std::uint64_t init_seed);

}  // namespace sdc
