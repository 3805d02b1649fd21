#include "sdc/net.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/core.h>

#include "sdc/rng.hpp"
#include "sdc/sparse_conv.hpp"

namespace sdc {

namespace {

const char* spec_kind(const LayerSpec& spec) {
    return std::visit(
        [](const auto& s) -> const char* {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, DenseConvSpec>) return "conv";
            else if constexpr (std::is_same_v<T, SparseConvSpec>) return "sparseconv";
            else if constexpr (std::is_same_v<T, TransposedConvSpec>) return "tconv";
            else if constexpr (std::is_same_v<T, MaxPoolSpec>) return "maxpool";
            else if constexpr (std::is_same_v<T, ReluSpec>) return "relu";
            else if constexpr (std::is_same_v<T, BatchNormSpec>) return "batchnorm";
            else if constexpr (std::is_same_v<T, ConcatSpec>) return "concat";
            else if constexpr (std::is_same_v<T, SoftmaxHeadSpec>) return "softmax_head";
            else return "regression_head";
        },
        spec);
}

void accumulate(Tensor4& dst, const Tensor4& src) {
    if (dst.empty()) {
        dst = src;
        return;
    }
    if (!dst.same_shape(src)) throw ShapeError("gradient accumulation shape mismatch");
    for (std::size_t i = 0; i < dst.v.size(); ++i) dst.v[i] += src.v[i];
}

long gcd_long(long a, long b) { return std::gcd(a, b); }

}  // namespace

int NetworkGraph::add_input(Slot slot, bool mask_as_channel, const std::string& name) {
    if (finalized_) throw StateError("add_input after finalize");
    if (mask_as_channel && slot != Slot::SparseDepth)
        throw GraphError("mask_as_channel only applies to the sparse-depth slot");
    for (const auto& node : nodes_)
        if (const Slot* s = std::get_if<Slot>(&node.op); s && *s == slot)
            throw GraphError("input slot added twice");
    Node node;
    node.op = slot;
    node.name = !name.empty()           ? name
                : slot == Slot::Rgb     ? "in_rgb"
                : mask_as_channel       ? "in_sd_maskch"
                                        : "in_sd";
    node.out_channels = slot == Slot::Rgb ? 3 : (mask_as_channel ? 2 : 1);
    nodes_.push_back(std::move(node));
    return static_cast<int>(nodes_.size()) - 1;
}

int NetworkGraph::add(LayerSpec spec, std::vector<int> inputs, const std::string& name) {
    if (finalized_) throw StateError("add after finalize");
    const int id = static_cast<int>(nodes_.size());
    if (inputs.empty()) throw GraphError("layer node needs at least one input");
    for (int in : inputs)
        if (in < 0 || in >= id)
            throw GraphError(fmt::format("node {} references nonexistent/later node {}", id, in));
    if (!std::holds_alternative<ConcatSpec>(spec) && inputs.size() != 1)
        throw GraphError(fmt::format("{} takes exactly one input", spec_kind(spec)));
    if (std::holds_alternative<ConcatSpec>(spec) && inputs.size() < 2)
        throw GraphError("concat needs at least two inputs");

    Node node;
    node.op = std::move(spec);
    node.inputs = std::move(inputs);
    node.name = name.empty() ? fmt::format("l{}_{}", id, spec_kind(std::get<LayerSpec>(node.op)))
                             : name;
    nodes_.push_back(std::move(node));
    return id;
}

void NetworkGraph::set_output(int node_id) {
    check_node_id(node_id);
    output_ = node_id;
}

void NetworkGraph::check_node_id(int id) const {
    if (id < 0 || id >= static_cast<int>(nodes_.size()))
        throw GraphError(fmt::format("node id {} out of range", id));
}

int NetworkGraph::add_param(const std::string& name, std::vector<int> shape, bool trainable) {
    std::size_t numel = 1;
    for (int d : shape) numel *= static_cast<std::size_t>(d);
    Param p;
    p.name = name;
    p.shape = std::move(shape);
    p.value.assign(numel, 0.0);
    p.grad.assign(numel, 0.0);
    p.trainable = trainable;
    params_.push_back(std::move(p));
    return static_cast<int>(params_.size()) - 1;
}

void NetworkGraph::finalize(std::uint64_t init_seed) {
    if (finalized_) throw StateError("finalize called twice");
    if (output_ < 0) throw GraphError("no output node set");

    // Static mask availability, used to reject sparse convs on dense inputs.
    std::vector<bool> has_mask(nodes_.size(), false);

    for (std::size_t id = 0; id < nodes_.size(); ++id) {
        Node& node = nodes_[id];
        if (const Slot* slot = std::get_if<Slot>(&node.op)) {
            has_mask[id] = *slot == Slot::SparseDepth && node.out_channels == 1;
            continue;
        }
        const LayerSpec& spec = std::get<LayerSpec>(node.op);
        const Node& in0 = nodes_[node.inputs[0]];
        node.scale_num = in0.scale_num;
        node.scale_den = in0.scale_den;

        std::visit(
            [&](const auto& s) {
                using T = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<T, DenseConvSpec> ||
                              std::is_same_v<T, SparseConvSpec>) {
                    if (s.k < 1 || s.k % 2 == 0)
                        throw GraphError(fmt::format("{}: kernel size must be odd", node.name));
                    if (s.s < 1 || s.out_ch < 1)
                        throw GraphError(fmt::format("{}: invalid stride/channels", node.name));
                    if constexpr (std::is_same_v<T, SparseConvSpec>) {
                        if (!has_mask[node.inputs[0]])
                            throw GraphError(fmt::format(
                                "{}: sparse conv requires a masked input, but '{}' is dense",
                                node.name, in0.name));
                        has_mask[id] = true;
                    }
                    node.out_channels = s.out_ch;
                    node.scale_num *= s.s;
                    node.p_weight = add_param(node.name + ".weight",
                                              {s.out_ch, in0.out_channels, s.k, s.k}, true);
                    node.p_bias = add_param(node.name + ".bias", {s.out_ch}, true);
                } else if constexpr (std::is_same_v<T, TransposedConvSpec>) {
                    if (s.k < 1 || s.k % 2 == 0)
                        throw GraphError(fmt::format("{}: kernel size must be odd", node.name));
                    if (s.s < 1 || s.out_ch < 1)
                        throw GraphError(fmt::format("{}: invalid stride/channels", node.name));
                    node.out_channels = s.out_ch;
                    node.scale_den *= s.s;
                    node.p_weight = add_param(node.name + ".weight",
                                              {in0.out_channels, s.out_ch, s.k, s.k}, true);
                    node.p_bias = add_param(node.name + ".bias", {s.out_ch}, true);
                } else if constexpr (std::is_same_v<T, MaxPoolSpec>) {
                    node.out_channels = in0.out_channels;
                    node.scale_num *= s.s;
                    has_mask[id] = has_mask[node.inputs[0]];
                } else if constexpr (std::is_same_v<T, ReluSpec>) {
                    node.out_channels = in0.out_channels;
                    has_mask[id] = has_mask[node.inputs[0]];
                } else if constexpr (std::is_same_v<T, BatchNormSpec>) {
                    node.out_channels = in0.out_channels;
                    if (s.enabled) {
                        node.p_gamma = add_param(node.name + ".gamma", {in0.out_channels}, true);
                        node.p_beta = add_param(node.name + ".beta", {in0.out_channels}, true);
                        node.p_run_mean =
                            add_param(node.name + ".running_mean", {in0.out_channels}, false);
                        node.p_run_var =
                            add_param(node.name + ".running_var", {in0.out_channels}, false);
                    } else {
                        has_mask[id] = has_mask[node.inputs[0]];
                    }
                } else if constexpr (std::is_same_v<T, ConcatSpec>) {
                    int ch = 0;
                    for (int in : node.inputs) {
                        const Node& src = nodes_[in];
                        ch += src.out_channels;
                        if (src.scale_num * in0.scale_den != in0.scale_num * src.scale_den)
                            throw GraphError(fmt::format(
                                "concat '{}': resolution mismatch between '{}' ({}I/{}) and "
                                "'{}' ({}I/{})",
                                node.name, in0.name, in0.scale_den, in0.scale_num, src.name,
                                src.scale_den, src.scale_num));
                    }
                    node.out_channels = ch;
                } else if constexpr (std::is_same_v<T, SoftmaxHeadSpec>) {
                    if (s.num_classes < 2)
                        throw GraphError(fmt::format("{}: softmax head needs >= 2 classes",
                                                     node.name));
                    node.out_channels = s.num_classes;
                    node.p_weight = add_param(node.name + ".weight",
                                              {s.num_classes, in0.out_channels, 1, 1}, true);
                    node.p_bias = add_param(node.name + ".bias", {s.num_classes}, true);
                } else {  // RegressionHeadSpec
                    node.out_channels = 1;
                    node.p_weight =
                        add_param(node.name + ".weight", {1, in0.out_channels, 1, 1}, true);
                    node.p_bias = add_param(node.name + ".bias", {1}, true);
                }
            },
            spec);

        const long g = gcd_long(node.scale_num, node.scale_den);
        node.scale_num /= g;
        node.scale_den /= g;
    }

    // Batchnorm directly after the first strided convolution on the sparse
    // input falsifies channel statistics (zeros of missing pixels); reject
    // such graphs outright rather than warn.
    for (const Node& node : nodes_) {
        const LayerSpec* spec = std::get_if<LayerSpec>(&node.op);
        if (!spec) continue;
        const BatchNormSpec* bn = std::get_if<BatchNormSpec>(spec);
        if (!bn || !bn->enabled) continue;
        const Node& prev = nodes_[node.inputs[0]];
        const LayerSpec* prev_spec = std::get_if<LayerSpec>(&prev.op);
        if (!prev_spec) continue;
        int stride = 0;
        if (const auto* dense = std::get_if<DenseConvSpec>(prev_spec)) stride = dense->s;
        if (const auto* sparse = std::get_if<SparseConvSpec>(prev_spec)) stride = sparse->s;
        if (stride <= 1) continue;
        const Node& prev_in = nodes_[prev.inputs[0]];
        const Slot* slot = std::get_if<Slot>(&prev_in.op);
        if (slot && *slot == Slot::SparseDepth)
            throw GraphError(fmt::format(
                "'{}': batchnorm must be disabled directly after '{}', the first strided "
                "convolution on the sparse-depth input",
                node.name, prev.name));
    }

    // Parameter init: He-style fan-in scaling for conv weights, zero biases,
    // identity batchnorm. One generator seeded once, consumed in node order,
    // so identical (arch, seed) produce identical networks.
    Rng rng(init_seed);
    for (Node& node : nodes_) {
        if (node.p_weight >= 0) {
            Param& w = params_[node.p_weight];
            const long fan_in = static_cast<long>(w.shape[1]) * w.shape[2] * w.shape[3];
            // Transposed conv weights are [in][out][k][k]: fan-in is shape[0].
            const bool transposed =
                std::holds_alternative<TransposedConvSpec>(std::get<LayerSpec>(node.op));
            const long fi = transposed ? static_cast<long>(w.shape[0]) * w.shape[2] * w.shape[3]
                                       : fan_in;
            const double std = std::sqrt(2.0 / static_cast<double>(fi));
            for (double& v : w.value) v = rng.normal(0.0, std);
        }
        if (node.p_gamma >= 0) {
            std::fill(params_[node.p_gamma].value.begin(), params_[node.p_gamma].value.end(), 1.0);
            std::fill(params_[node.p_run_var].value.begin(), params_[node.p_run_var].value.end(),
                      1.0);
        }
    }

    finalized_ = true;
}

Param& NetworkGraph::param(const std::string& name) {
    for (Param& p : params_)
        if (p.name == name) return p;
    throw StateError(fmt::format("no parameter named '{}'", name));
}

const Param* NetworkGraph::find_param(const std::string& name) const {
    for (const Param& p : params_)
        if (p.name == name) return &p;
    return nullptr;
}

const LayerSpec* NetworkGraph::node_spec(int id) const {
    check_node_id(id);
    return std::get_if<LayerSpec>(&nodes_[id].op);
}

const std::string& NetworkGraph::node_name(int id) const {
    check_node_id(id);
    return nodes_[id].name;
}

int NetworkGraph::node_out_channels(int id) const {
    check_node_id(id);
    return nodes_[id].out_channels;
}

std::size_t NetworkGraph::parameter_count(bool trainable_only) const {
    std::size_t count = 0;
    for (const Param& p : params_)
        if (!trainable_only || p.trainable) count += p.numel();
    return count;
}

std::vector<Slot> NetworkGraph::input_slots() const {
    std::vector<Slot> slots;
    for (const Node& node : nodes_)
        if (const Slot* s = std::get_if<Slot>(&node.op)) slots.push_back(*s);
    return slots;
}

Tensor4 NetworkGraph::run(const NetInputs& inputs, bool train, Trace* trace,
                          std::vector<Param>* mut_params) const {
    if (!finalized_) throw StateError("forward before finalize");
    std::vector<Activation> acts(nodes_.size());
    if (trace) {
        trace->valid = false;
        trace->bn.assign(nodes_.size(), {});
        trace->argmax.assign(nodes_.size(), {});
        trace->head_pre.assign(nodes_.size(), {});
    }

    for (std::size_t id = 0; id < nodes_.size(); ++id) {
        const Node& node = nodes_[id];
        Activation& out = acts[id];

        if (const Slot* slot = std::get_if<Slot>(&node.op)) {
            if (*slot == Slot::Rgb) {
                if (!inputs.rgb) throw GraphError("forward: missing RGB input");
                if (inputs.rgb->c != 3) throw ShapeError("RGB input must have 3 channels");
                out.features = *inputs.rgb;
            } else {
                if (!inputs.sparse_depth)
                    throw GraphError("forward: missing sparse-depth input");
                const Tensor4& sd = *inputs.sparse_depth;
                if (sd.c != 1) throw ShapeError("sparse-depth input must have 1 channel");
                Tensor4 mask;
                if (inputs.sparse_depth_mask) {
                    mask = *inputs.sparse_depth_mask;
                    if (!mask.same_shape(sd))
                        throw ShapeError("sparse-depth mask shape mismatch");
                    for (double m : mask.v)
                        if (m != 0.0 && m != 1.0)
                            throw DomainError("sparse-depth mask must be binary");
                } else {
                    mask = Tensor4(sd.n, 1, sd.h, sd.w, 0.0);
                    for (std::size_t i = 0; i < sd.v.size(); ++i)
                        mask.v[i] = sd.v[i] != 0.0 ? 1.0 : 0.0;
                }
                if (node.out_channels == 2) {
                    // Mask-as-channel variant: stack [values, mask], no mask
                    // propagation downstream.
                    Tensor4 stacked(sd.n, 2, sd.h, sd.w, 0.0);
                    for (int n = 0; n < sd.n; ++n)
                        for (int y = 0; y < sd.h; ++y)
                            for (int x = 0; x < sd.w; ++x) {
                                stacked.at(n, 0, y, x) = sd.at(n, 0, y, x);
                                stacked.at(n, 1, y, x) = mask.at(n, 0, y, x);
                            }
                    out.features = std::move(stacked);
                } else {
                    out.features = sd;
                    out.mask = std::move(mask);
                }
            }
            continue;
        }

        const LayerSpec& spec = std::get<LayerSpec>(node.op);
        const Activation& in = acts[node.inputs[0]];

        std::visit(
            [&](const auto& s) {
                using T = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<T, DenseConvSpec>) {
                    out.features = dense_conv2d(in.features, as_tensor(node.p_weight),
                                                params_[node.p_bias].value, s.s);
                } else if constexpr (std::is_same_v<T, SparseConvSpec>) {
                    out.features = Tensor4(in.features.n, s.out_ch,
                                           (in.features.h + s.s - 1) / s.s,
                                           (in.features.w + s.s - 1) / s.s, 0.0);
                    out.mask = Tensor4(in.features.n, 1, out.features.h, out.features.w, 0.0);
                    sparse_conv_node_forward(node, in, out);
                } else if constexpr (std::is_same_v<T, TransposedConvSpec>) {
                    out.features = transposed_conv2d(in.features, as_tensor(node.p_weight),
                                                     params_[node.p_bias].value, s.s);
                } else if constexpr (std::is_same_v<T, MaxPoolSpec>) {
                    std::vector<int> argmax;
                    out.features =
                        maxpool2d(in.features, s.k, s.s, trace ? &argmax : nullptr);
                    if (trace) trace->argmax[id] = std::move(argmax);
                    if (in.has_mask()) out.mask = maxpool2d(in.mask, s.k, s.s, nullptr);
                } else if constexpr (std::is_same_v<T, ReluSpec>) {
                    out.features = relu(in.features);
                    if (in.has_mask()) out.mask = in.mask;
                } else if constexpr (std::is_same_v<T, BatchNormSpec>) {
                    if (!s.enabled) {
                        out.features = in.features;
                        if (in.has_mask()) out.mask = in.mask;
                        return;
                    }
                    BatchNormRunning running{params_[node.p_run_mean].value,
                                             params_[node.p_run_var].value};
                    BatchNormCache cache;
                    out.features = batchnorm(in.features, params_[node.p_gamma].value,
                                             params_[node.p_beta].value, running, train,
                                             trace ? &cache : nullptr);
                    if (train && mut_params) {
                        (*mut_params)[node.p_run_mean].value = std::move(running.mean);
                        (*mut_params)[node.p_run_var].value = std::move(running.var);
                    }
                    if (trace) trace->bn[id] = std::move(cache);
                } else if constexpr (std::is_same_v<T, ConcatSpec>) {
                    const Tensor4& first = acts[node.inputs[0]].features;
                    for (int src : node.inputs) {
                        const Tensor4& f = acts[src].features;
                        if (f.n != first.n || f.h != first.h || f.w != first.w)
                            throw GraphError(fmt::format(
                                "concat '{}': resolution mismatch between '{}' ({}x{}) and "
                                "'{}' ({}x{})",
                                node.name, nodes_[node.inputs[0]].name, first.h, first.w,
                                nodes_[src].name, f.h, f.w));
                    }
                    out.features = Tensor4(first.n, node.out_channels, first.h, first.w, 0.0);
                    int ch = 0;
                    for (int src : node.inputs) {
                        const Tensor4& f = acts[src].features;
                        for (int n = 0; n < f.n; ++n)
                            for (int c = 0; c < f.c; ++c)
                                std::copy(f.row(n, c, 0), f.row(n, c, 0) + f.h * f.w,
                                          out.features.row(n, ch + c, 0));
                        ch += f.c;
                    }
                } else if constexpr (std::is_same_v<T, SoftmaxHeadSpec>) {
                    Tensor4 logits = dense_conv2d(in.features, as_tensor(node.p_weight),
                                                  params_[node.p_bias].value, 1);
                    out.features = softmax_channels(logits);
                    if (trace) trace->head_pre[id] = std::move(logits);
                } else {  // RegressionHeadSpec
                    Tensor4 pre = dense_conv2d(in.features, as_tensor(node.p_weight),
                                               params_[node.p_bias].value, 1);
                    out.features = relu(pre);
                    if (trace) trace->head_pre[id] = std::move(pre);
                }
            },
            spec);
    }

    Tensor4 result = acts[output_].features;
    if (trace) {
        trace->acts = std::move(acts);
        trace->valid = true;
    }
    return result;
}

Tensor4 NetworkGraph::as_tensor(int param_idx) const {
    const Param& p = params_[param_idx];
    Tensor4 t(p.shape[0], p.shape[1], p.shape[2], p.shape[3]);
    t.v = p.value;
    return t;
}

void NetworkGraph::sparse_conv_node_forward(const Node& node, const Activation& in,
                                            Activation& out) const {
    const auto& s = std::get<SparseConvSpec>(std::get<LayerSpec>(node.op));
    SparseConvKernel kern(s.out_ch, in.features.c, s.k, s.s);
    kern.weights = params_[node.p_weight].value;
    kern.bias = params_[node.p_bias].value;
    const Tensor4& f = in.features;

#pragma omp parallel for schedule(static)
    for (int n = 0; n < f.n; ++n) {
        MaskGrid mask(f.h, f.w, 0);
        for (int y = 0; y < f.h; ++y)
            for (int x = 0; x < f.w; ++x)
                mask.at(y, x) = in.mask.at(n, 0, y, x) != 0.0 ? 1 : 0;
        std::vector<double> feats(static_cast<std::size_t>(f.c) * f.h * f.w);
        for (int c = 0; c < f.c; ++c)
            std::copy(f.row(n, c, 0), f.row(n, c, 0) + f.h * f.w,
                      feats.begin() + static_cast<std::size_t>(c) * f.h * f.w);
        MaskedTensor x = MaskedTensor::canonicalize(f.c, std::move(feats), std::move(mask));
        MaskedTensor y = sparse_conv2d(x, kern);
        for (int c = 0; c < y.channels; ++c)
            std::copy(y.features.begin() + static_cast<std::size_t>(c) * y.height * y.width,
                      y.features.begin() + static_cast<std::size_t>(c + 1) * y.height * y.width,
                      out.features.row(n, c, 0));
        for (int yy = 0; yy < y.height; ++yy)
            for (int xx = 0; xx < y.width; ++xx)
                out.mask.at(n, 0, yy, xx) = y.mask.at(yy, xx);
    }
}

Tensor4 NetworkGraph::forward(const NetInputs& inputs, bool train) {
    return run(inputs, train, &trace_, &params_);
}

Tensor4 NetworkGraph::infer(const NetInputs& inputs) const {
    return run(inputs, false, nullptr, nullptr);
}

void NetworkGraph::backward(const Tensor4& output_grad) { backward_impl(output_grad, false); }

void NetworkGraph::backward_from_logits(const Tensor4& logits_grad) {
    const LayerSpec* spec = node_spec(output_);
    if (!spec || !std::holds_alternative<SoftmaxHeadSpec>(*spec))
        throw StateError("backward_from_logits requires a SoftmaxHead output");
    backward_impl(logits_grad, true);
}

void NetworkGraph::backward_impl(const Tensor4& seed_grad, bool wrt_logits) {
    if (!trace_.valid) throw StateError("backward before forward");
    if (!seed_grad.same_shape(trace_.acts[output_].features))
        throw ShapeError("backward: loss gradient does not match the network output shape");

    std::vector<Tensor4> grads(nodes_.size());
    grads[output_] = seed_grad;

    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
        const Node& node = nodes_[id];
        if (grads[id].empty()) continue;
        const LayerSpec* spec = std::get_if<LayerSpec>(&node.op);
        if (!spec) continue;  // input leaves
        const Tensor4& up = grads[id];
        const Activation& in = trace_.acts[node.inputs[0]];

        std::visit(
            [&](const auto& s) {
                using T = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<T, DenseConvSpec>) {
                    ConvGrads g = dense_conv2d_backward(in.features, as_tensor(node.p_weight),
                                                        s.s, up);
                    add_param_grad(node.p_weight, g.weights.v);
                    add_param_grad(node.p_bias, g.bias);
                    accumulate(grads[node.inputs[0]], g.input);
                } else if constexpr (std::is_same_v<T, SparseConvSpec>) {
                    sparse_conv_node_backward(node, in, up, grads[node.inputs[0]]);
                } else if constexpr (std::is_same_v<T, TransposedConvSpec>) {
                    ConvGrads g = transposed_conv2d_backward(in.features,
                                                             as_tensor(node.p_weight), s.s, up);
                    add_param_grad(node.p_weight, g.weights.v);
                    add_param_grad(node.p_bias, g.bias);
                    accumulate(grads[node.inputs[0]], g.input);
                } else if constexpr (std::is_same_v<T, MaxPoolSpec>) {
                    accumulate(grads[node.inputs[0]],
                               maxpool2d_backward(in.features, s.k, s.s, trace_.argmax[id], up));
                } else if constexpr (std::is_same_v<T, ReluSpec>) {
                    accumulate(grads[node.inputs[0]], relu_backward(in.features, up));
                } else if constexpr (std::is_same_v<T, BatchNormSpec>) {
                    if (!s.enabled) {
                        accumulate(grads[node.inputs[0]], up);
                        return;
                    }
                    BatchNormGrads g = batchnorm_backward(in.features,
                                                          params_[node.p_gamma].value,
                                                          trace_.bn[id], up);
                    add_param_grad(node.p_gamma, g.gamma);
                    add_param_grad(node.p_beta, g.beta);
                    accumulate(grads[node.inputs[0]], g.input);
                } else if constexpr (std::is_same_v<T, ConcatSpec>) {
                    int ch = 0;
                    for (int src : node.inputs) {
                        const Tensor4& f = trace_.acts[src].features;
                        Tensor4 part(f.n, f.c, f.h, f.w, 0.0);
                        for (int n = 0; n < f.n; ++n)
                            for (int c = 0; c < f.c; ++c)
                                std::copy(up.row(n, ch + c, 0), up.row(n, ch + c, 0) + f.h * f.w,
                                          part.row(n, c, 0));
                        ch += f.c;
                        accumulate(grads[src], part);
                    }
                } else if constexpr (std::is_same_v<T, SoftmaxHeadSpec>) {
                    const Tensor4 glogits =
                        wrt_logits && id == output_
                            ? up
                            : softmax_channels_backward(trace_.acts[id].features, up);
                    ConvGrads g =
                        dense_conv2d_backward(in.features, as_tensor(node.p_weight), 1, glogits);
                    add_param_grad(node.p_weight, g.weights.v);
                    add_param_grad(node.p_bias, g.bias);
                    accumulate(grads[node.inputs[0]], g.input);
                } else {  // RegressionHeadSpec
                    Tensor4 gpre = relu_backward(trace_.head_pre[id], up);
                    ConvGrads g =
                        dense_conv2d_backward(in.features, as_tensor(node.p_weight), 1, gpre);
                    add_param_grad(node.p_weight, g.weights.v);
                    add_param_grad(node.p_bias, g.bias);
                    accumulate(grads[node.inputs[0]], g.input);
                }
            },
            *spec);
    }
}

void NetworkGraph::sparse_conv_node_backward(const Node& node, const Activation& in,
                                             const Tensor4& up, Tensor4& grad_in) {
    const auto& s = std::get<SparseConvSpec>(std::get<LayerSpec>(node.op));
    SparseConvKernel kern(s.out_ch, in.features.c, s.k, s.s);
    kern.weights = params_[node.p_weight].value;
    kern.bias = params_[node.p_bias].value;
    const Tensor4& f = in.features;

    if (grad_in.empty()) grad_in = Tensor4(f.n, f.c, f.h, f.w, 0.0);
    std::vector<SparseConvGrads> per_sample(f.n);

#pragma omp parallel for schedule(static)
    for (int n = 0; n < f.n; ++n) {
        MaskGrid mask(f.h, f.w, 0);
        for (int y = 0; y < f.h; ++y)
            for (int x = 0; x < f.w; ++x)
                mask.at(y, x) = in.mask.at(n, 0, y, x) != 0.0 ? 1 : 0;
        std::vector<double> feats(static_cast<std::size_t>(f.c) * f.h * f.w);
        for (int c = 0; c < f.c; ++c)
            std::copy(f.row(n, c, 0), f.row(n, c, 0) + f.h * f.w,
                      feats.begin() + static_cast<std::size_t>(c) * f.h * f.w);
        MaskedTensor x = MaskedTensor::canonicalize(f.c, std::move(feats), std::move(mask));
        std::vector<double> upstream(static_cast<std::size_t>(up.c) * up.h * up.w);
        for (int c = 0; c < up.c; ++c)
            std::copy(up.row(n, c, 0), up.row(n, c, 0) + up.h * up.w,
                      upstream.begin() + static_cast<std::size_t>(c) * up.h * up.w);
        per_sample[n] = sparse_conv2d_backward(x, kern, upstream);
        for (int c = 0; c < f.c; ++c)
            for (int y = 0; y < f.h; ++y)
                for (int x2 = 0; x2 < f.w; ++x2)
                    grad_in.at(n, c, y, x2) +=
                        per_sample[n].input[(static_cast<std::size_t>(c) * f.h + y) * f.w + x2];
    }

    // Weight/bias contributions reduced in sample order for determinism.
    for (int n = 0; n < f.n; ++n) {
        add_param_grad(node.p_weight, per_sample[n].weights);
        add_param_grad(node.p_bias, per_sample[n].bias);
    }
}

void NetworkGraph::add_param_grad(int param_idx, std::span<const double> g) {
    Param& p = params_[param_idx];
    if (g.size() != p.grad.size())
        throw ShapeError(fmt::format("gradient size mismatch for '{}'", p.name));
    for (std::size_t i = 0; i < g.size(); ++i) p.grad[i] += g[i];
}

void NetworkGraph::zero_grads() {
    for (Param& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

// --- Templates ----------------------------------------------------------------

namespace {

struct EncoderTaps {
    std::array<int, 2> skips;  // after stage 1 and 2
    int bottleneck;
};

EncoderTaps add_encoder(NetworkGraph& g, int input, const BranchSpec& spec, bool depth_branch,
                        const std::string& prefix) {
    EncoderTaps taps{};
    int cur = input;
    for (int stage = 0; stage < 3; ++stage) {
        const int ch = spec.stage_channels[stage];
        const bool sparse_first =
            depth_branch && stage == 0 && spec.first_layer == FirstLayer::SparseConv;
        const std::string sn = fmt::format("{}e{}", prefix, stage + 1);

        if (sparse_first)
            cur = g.add(SparseConvSpec{3, 2, ch}, {cur}, sn + "_sconv");
        else
            cur = g.add(DenseConvSpec{3, 2, ch}, {cur}, sn + "_conv_s2");
        // No batchnorm here when this is the first strided conv on sparse
        // input; elsewhere insert it when the branch asks for it.
        if (spec.batchnorm && !(depth_branch && stage == 0))
            cur = g.add(BatchNormSpec{true}, {cur}, sn + "_bn1");
        cur = g.add(ReluSpec{}, {cur}, sn + "_relu1");
        cur = g.add(DenseConvSpec{3, 1, ch}, {cur}, sn + "_conv_s1");
        if (spec.batchnorm) cur = g.add(BatchNormSpec{true}, {cur}, sn + "_bn2");
        cur = g.add(ReluSpec{}, {cur}, sn + "_relu2");
        if (stage < 2) taps.skips[stage] = cur;
    }
    taps.bottleneck = cur;
    return taps;
}

int add_decoder(NetworkGraph& g, int bottleneck, const std::array<int, 3>& ch,
                const std::vector<std::vector<int>>& skips, const std::string& prefix) {
    // skips[i] lists the encoder taps at stage i+1 resolution (may be empty).
    int cur = bottleneck;
    for (int stage = 1; stage >= 0; --stage) {
        const std::string sn = fmt::format("{}d{}", prefix, stage + 1);
        cur = g.add(TransposedConvSpec{3, 2, ch[stage]}, {cur}, sn + "_tconv");
        cur = g.add(ReluSpec{}, {cur}, sn + "_relu1");
        if (!skips[stage].empty()) {
            std::vector<int> cat_inputs{cur};
            cat_inputs.insert(cat_inputs.end(), skips[stage].begin(), skips[stage].end());
            cur = g.add(ConcatSpec{}, cat_inputs, sn + "_skip");
        }
        cur = g.add(DenseConvSpec{3, 1, ch[stage]}, {cur}, sn + "_conv");
        cur = g.add(ReluSpec{}, {cur}, sn + "_relu2");
    }
    // Final stage back to full resolution. It has no encoder counterpart to
    // mirror (stage 1 already runs at half resolution), so it gets half the
    // first-stage width.
    const std::string sn = prefix + "d0";
    const int ch0 = std::max(4, ch[0] / 2);
    cur = g.add(TransposedConvSpec{3, 2, ch0}, {cur}, sn + "_tconv");
    cur = g.add(ReluSpec{}, {cur}, sn + "_relu1");
    cur = g.add(DenseConvSpec{3, 1, ch0}, {cur}, sn + "_conv");
    cur = g.add(ReluSpec{}, {cur}, sn + "_relu2");
    return cur;
}

int add_head(NetworkGraph& g, int cur, const Head& head) {
    if (head.kind == HeadKind::Softmax)
        return g.add(SoftmaxHeadSpec{head.num_classes}, {cur}, "head_softmax");
    return g.add(RegressionHeadSpec{}, {cur}, "head_regression");
}

int add_depth_input(NetworkGraph& g, const BranchSpec& spec) {
    return g.add_input(Slot::SparseDepth, spec.first_layer == FirstLayer::DenseWithMask);
}

}  // namespace

NetworkGraph build_network(const SingleBranch& spec, const Head& head, std::uint64_t init_seed) {
    NetworkGraph g;
    const int input = spec.input == Slot::Rgb ? g.add_input(Slot::Rgb)
                                              : add_depth_input(g, spec.encoder);
    const EncoderTaps taps = add_encoder(g, input, spec.encoder, spec.input == Slot::SparseDepth,
                                         "");
    const int trunk = add_decoder(g, taps.bottleneck, spec.encoder.stage_channels,
                                  {{taps.skips[0]}, {taps.skips[1]}}, "");
    g.set_output(add_head(g, trunk, head));
    g.finalize(init_seed);
    return g;
}

NetworkGraph build_network(const FusionTemplate& spec, const Head& head,
                           std::uint64_t init_seed) {
    NetworkGraph g;
    if (spec.mode == FusionMode::Early) {
        // Channel-concatenated modalities into a single encoder-decoder:
        // 3 (RGB) + 1 (sparse depth) = 4 input channels.
        const int rgb = g.add_input(Slot::Rgb);
        const int sd = g.add_input(Slot::SparseDepth);
        const int cat = g.add(ConcatSpec{}, {rgb, sd}, "early_concat");
        BranchSpec enc = spec.depth_branch;
        enc.first_layer = FirstLayer::DenseConv;
        const EncoderTaps taps = add_encoder(g, cat, enc, false, "");
        const int trunk = add_decoder(g, taps.bottleneck, enc.stage_channels,
                                      {{taps.skips[0]}, {taps.skips[1]}}, "");
        g.set_output(add_head(g, trunk, head));
        g.finalize(init_seed);
        return g;
    }

    // Late fusion: one encoder per modality, channel concat plus a following
    // convolution at the bottleneck, one shared decoder fed by both
    // branches' skips.
    const int rgb = g.add_input(Slot::Rgb);
    const int sd = add_depth_input(g, spec.depth_branch);
    const EncoderTaps rgb_taps = add_encoder(g, rgb, spec.rgb_branch, false, "rgb_");
    const EncoderTaps sd_taps = add_encoder(g, sd, spec.depth_branch, true, "sd_");
    const int join_cat = g.add(ConcatSpec{}, {sd_taps.bottleneck, rgb_taps.bottleneck},
                               "join_concat");
    int join = g.add(DenseConvSpec{3, 1, spec.join_out_channels}, {join_cat}, "join_conv");
    join = g.add(ReluSpec{}, {join}, "join_relu");
    const std::array<int, 3> ch = spec.depth_branch.stage_channels;
    const int trunk = add_decoder(g, join, ch,
                                  {{sd_taps.skips[0], rgb_taps.skips[0]},
                                   {sd_taps.skips[1], rgb_taps.skips[1]}},
                                  "");
    g.set_output(add_head(g, trunk, head));
    g.finalize(init_seed);
    return g;
}

}  // namespace sdc
