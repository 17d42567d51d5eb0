#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "coda/binio.hpp"
#include "coda/errors.hpp"
#include "coda/tensor.hpp"

namespace coda {

// ---------------------------------------------------------------------------
// Layer specifications. Input channel counts are inferred, never stored.

struct ConvSpec {
    int out_channels = 0;
    int kernel = 0;
    int stride = 1;
    int pad = 0;
    bool has_bias = true;
};
struct BatchNormSpec {
    float eps = 1e-5f;
    float momentum = 0.1f;
};
struct ReluSpec {};
struct MaxPoolSpec {
    int kernel = 0;
    int stride = 1;
    int pad = 0;
};
struct FlattenSpec {};
struct FcSpec {
    int out_features = 0;
};

using LayerSpec =
    std::variant<ConvSpec, BatchNormSpec, ReluSpec, MaxPoolSpec, FlattenSpec, FcSpec>;

inline const char* layer_kind_name(const LayerSpec& s) {
    struct V {
        const char* operator()(const ConvSpec&) { return "conv"; }
        const char* operator()(const BatchNormSpec&) { return "batchnorm"; }
        const char* operator()(const ReluSpec&) { return "relu"; }
        const char* operator()(const MaxPoolSpec&) { return "maxpool"; }
        const char* operator()(const FlattenSpec&) { return "flatten"; }
        const char* operator()(const FcSpec&) { return "fc"; }
    };
    return std::visit(V{}, s);
}

// Identifies an output channel of a Conv or FC layer.
struct ChannelId {
    int layer = 0;
    int channel = 0;
    friend bool operator==(const ChannelId&, const ChannelId&) = default;
    friend bool operator<(const ChannelId& a, const ChannelId& b) {
        return a.layer != b.layer ? a.layer < b.layer : a.channel < b.channel;
    }
};

// Parameter tensors of one layer.
//   conv / fc : { weight, bias }          (bias empty when has_bias is false)
//   batchnorm : { gamma, beta, running_mean, running_var }
//   others    : {}
struct LayerParams {
    std::vector<Tensor> tensors;
};

// Per-layer input/output extents. Feature maps carry (c, h, w); after the
// flatten boundary only `len` is meaningful.
struct Dims {
    int c = 0, h = 0, w = 0;
    bool flat = false;
    int64_t len() const { return flat ? int64_t(c) : int64_t(c) * h * w; }
};
struct LayerIO {
    Dims in, out;
};

// ---------------------------------------------------------------------------

struct ModelGraph {
    std::string name;
    int in_c = 1, in_h = 0, in_w = 0;
    int classes = 0;
    uint64_t seed = 0;
    std::vector<LayerSpec> layers;
    std::vector<LayerParams> params;
    bool trained = false;

    int layer_count() const { return int(layers.size()); }

    const ConvSpec* as_conv(int l) const { return std::get_if<ConvSpec>(&layers[size_t(l)]); }
    const FcSpec* as_fc(int l) const { return std::get_if<FcSpec>(&layers[size_t(l)]); }
    bool is_parametric(int l) const { return as_conv(l) || as_fc(l); }

    Tensor& weight(int l) { return params[size_t(l)].tensors[0]; }
    const Tensor& weight(int l) const { return params[size_t(l)].tensors[0]; }
    Tensor& bias(int l) { return params[size_t(l)].tensors[1]; }
    const Tensor& bias(int l) const { return params[size_t(l)].tensors[1]; }

    Tensor& bn_gamma(int l) { return params[size_t(l)].tensors[0]; }
    Tensor& bn_beta(int l) { return params[size_t(l)].tensors[1]; }
    BatchNormStats bn_stats(int l) const {
        return {params[size_t(l)].tensors[2], params[size_t(l)].tensors[3]};
    }
    void set_bn_stats(int l, const BatchNormStats& s) {
        params[size_t(l)].tensors[2] = s.mean;
        params[size_t(l)].tensors[3] = s.var;
    }

    // Output channel count of a Conv/FC layer as currently parameterized.
    int out_channels(int l) const {
        if (const auto* c = as_conv(l)) return c->out_channels;
        if (const auto* f = as_fc(l)) return f->out_features;
        throw ValidationError("layer " + std::to_string(l) + " has no channels");
    }
};

// ---------------------------------------------------------------------------
// Shape inference and structural validation.

inline std::vector<LayerIO> shape_inference(const ModelGraph& g) {
    if (g.layers.empty()) throw ValidationError("model has no layers");
    std::vector<LayerIO> io(g.layers.size());
    Dims cur{g.in_c, g.in_h, g.in_w, false};
    bool seen_flatten = false;
    bool seen_fc = false;
    for (size_t l = 0; l < g.layers.size(); ++l) {
        io[l].in = cur;
        const LayerSpec& spec = g.layers[l];
        const std::string where = "layer " + std::to_string(l) + " (" +
                                  layer_kind_name(spec) + ")";
        if (const auto* c = std::get_if<ConvSpec>(&spec)) {
            if (l == 0 && cur.c != g.in_c)
                throw ValidationError(where + ": first layer input mismatch");
            if (cur.flat) throw ValidationError(where + ": conv after flatten");
            if (c->kernel > cur.h + 2 * c->pad || c->kernel > cur.w + 2 * c->pad)
                throw ValidationError(where + ": kernel " + std::to_string(c->kernel) +
                                      " exceeds padded input " +
                                      std::to_string(cur.h) + "x" + std::to_string(cur.w));
            cur = {c->out_channels, conv_out_dim(cur.h, c->kernel, c->stride, c->pad),
                   conv_out_dim(cur.w, c->kernel, c->stride, c->pad), false};
        } else if (std::holds_alternative<BatchNormSpec>(spec)) {
            if (cur.flat) throw ValidationError(where + ": batchnorm after flatten");
        } else if (std::holds_alternative<ReluSpec>(spec)) {
            // shape preserved
        } else if (const auto* m = std::get_if<MaxPoolSpec>(&spec)) {
            if (cur.flat) throw ValidationError(where + ": maxpool after flatten");
            if (m->kernel > cur.h + 2 * m->pad || m->kernel > cur.w + 2 * m->pad)
                throw ValidationError(where + ": window exceeds padded input");
            cur = {cur.c, conv_out_dim(cur.h, m->kernel, m->stride, m->pad),
                   conv_out_dim(cur.w, m->kernel, m->stride, m->pad), false};
        } else if (std::holds_alternative<FlattenSpec>(spec)) {
            if (cur.flat) throw ValidationError(where + ": duplicate flatten");
            if (seen_flatten) throw ValidationError(where + ": second flatten");
            seen_flatten = true;
            cur = {int(cur.len()), 1, 1, true};
        } else if (const auto* f = std::get_if<FcSpec>(&spec)) {
            if (!cur.flat) throw ValidationError(where + ": fc before flatten");
            seen_fc = true;
            cur = {f->out_features, 1, 1, true};
        }
        io[l].out = cur;
    }
    if (!std::holds_alternative<ConvSpec>(g.layers.front()))
        throw ValidationError("first layer must be conv");
    if (!std::holds_alternative<FcSpec>(g.layers.back()))
        throw ValidationError("last layer must be fc");
    if (!seen_flatten || !seen_fc)
        throw ValidationError("model needs a flatten followed by at least one fc");
    if (std::get<FcSpec>(g.layers.back()).out_features != g.classes)
        throw ValidationError("final fc emits " +
                              std::to_string(std::get<FcSpec>(g.layers.back()).out_features) +
                              " features, expected " + std::to_string(g.classes) +
                              " classes");
    return io;
}

inline void validate(const ModelGraph& g) { shape_inference(g); }

// ---------------------------------------------------------------------------
// Parameter construction.

inline void init_params(ModelGraph& g, uint64_t seed) {
    const auto io = shape_inference(g);
    g.seed = seed;
    g.params.assign(g.layers.size(), LayerParams{});
    Rng rng(mix_seed(seed, 0x70617261));
    for (size_t l = 0; l < g.layers.size(); ++l) {
        if (const auto* c = std::get_if<ConvSpec>(&g.layers[l])) {
            const int ci = io[l].in.c;
            Tensor w = Tensor::zeros({c->out_channels, ci, c->kernel, c->kernel});
            const float std = std::sqrt(2.0f / float(ci * c->kernel * c->kernel));
            for (float& v : w.data) v = std * rng.normal();
            Tensor b = c->has_bias ? Tensor::zeros({c->out_channels}) : Tensor{};
            g.params[l].tensors = {std::move(w), std::move(b)};
        } else if (std::holds_alternative<BatchNormSpec>(g.layers[l])) {
            const int ch = io[l].in.c;
            g.params[l].tensors = {Tensor::full({ch}, 1.0f), Tensor::zeros({ch}),
                                   Tensor::zeros({ch}), Tensor::full({ch}, 1.0f)};
        } else if (const auto* f = std::get_if<FcSpec>(&g.layers[l])) {
            const int in = int(io[l].in.len());
            Tensor w = Tensor::zeros({f->out_features, in});
            const float std = std::sqrt(2.0f / float(in));
            for (float& v : w.data) v = std * rng.normal();
            g.params[l].tensors = {std::move(w), Tensor::zeros({f->out_features})};
        }
    }
    g.trained = false;
}

// ---------------------------------------------------------------------------
// Forward / backward.

struct LayerCache {
    Tensor image;
    std::vector<Tensor> outputs;               // one per layer
    std::vector<std::vector<int>> pool_argmax; // empty unless maxpool
    std::vector<BatchNormStats> bn_used;       // stats applied by each bn layer
};

namespace detail {

inline Tensor forward_impl(const ModelGraph& g, ModelGraph* mutable_g,
                           const Tensor& image, LayerCache* cache) {
    if (g.params.size() != g.layers.size())
        throw ValidationError("model has no parameters (untrained graph)");
    if (image.shape != std::vector<int>{g.in_c, g.in_h, g.in_w})
        throw ValidationError("input shape " + shape_str(image.shape) +
                              " != model input " +
                              shape_str({g.in_c, g.in_h, g.in_w}));
    if (cache) {
        cache->image = image;
        cache->outputs.clear();
        cache->pool_argmax.assign(g.layers.size(), {});
        cache->bn_used.assign(g.layers.size(), {});
    }
    Tensor cur = image;
    for (size_t l = 0; l < g.layers.size(); ++l) {
        const LayerSpec& spec = g.layers[l];
        if (const auto* c = std::get_if<ConvSpec>(&spec)) {
            cur = conv2d_fwd(cur, g.weight(int(l)), g.bias(int(l)), c->stride, c->pad);
        } else if (const auto* bn = std::get_if<BatchNormSpec>(&spec)) {
            BatchNormStats stats = g.bn_stats(int(l));
            if (mutable_g) {
                BatchNormStats running = stats;
                batchnorm_update_running(running, batchnorm_observe(cur), bn->momentum);
                mutable_g->set_bn_stats(int(l), running);
            }
            cur = batchnorm_fwd(cur, g.params[l].tensors[0], g.params[l].tensors[1],
                                stats, bn->eps);
            if (cache) cache->bn_used[l] = stats;
        } else if (std::holds_alternative<ReluSpec>(spec)) {
            cur = relu_fwd(cur);
        } else if (const auto* m = std::get_if<MaxPoolSpec>(&spec)) {
            MaxPoolOut p = maxpool_fwd(cur, m->kernel, m->stride, m->pad);
            if (cache) cache->pool_argmax[l] = std::move(p.argmax);
            cur = std::move(p.output);
        } else if (std::holds_alternative<FlattenSpec>(spec)) {
            cur = Tensor({int(cur.size())}, cur.data);
        } else {
            cur = fc_fwd(cur, g.weight(int(l)), g.bias(int(l)));
        }
        if (!cur.all_finite())
            throw NumericError("non-finite output at layer " + std::to_string(l) +
                               " (" + layer_kind_name(spec) + ")");
        if (cache) cache->outputs.push_back(cur);
    }
    return cur;
}

} // namespace detail

// Evaluation-mode forward pass; running statistics are left untouched.
inline Tensor forward(const ModelGraph& g, const Tensor& image,
                      LayerCache* cache = nullptr) {
    return detail::forward_impl(g, nullptr, image, cache);
}

// Training-mode forward pass; batchnorm running statistics advance.
inline Tensor forward_train(ModelGraph& g, const Tensor& image, LayerCache& cache) {
    return detail::forward_impl(g, &g, image, &cache);
}

struct Gradients {
    std::vector<LayerParams> params; // same layout as ModelGraph::params
    Tensor input;
    std::vector<Tensor> outputs;     // dL/d(layer output), one per layer
};

inline Gradients backward(const ModelGraph& g, const LayerCache& cache,
                          const Tensor& grad_logits) {
    if (cache.outputs.size() != g.layers.size())
        throw ValidationError("backward: cache does not match graph");
    Gradients out;
    out.params.assign(g.layers.size(), LayerParams{});
    out.outputs.assign(g.layers.size(), Tensor{});
    Tensor grad = grad_logits;
    for (int l = g.layer_count() - 1; l >= 0; --l) {
        out.outputs[size_t(l)] = grad;
        const Tensor& input = l == 0 ? cache.image : cache.outputs[size_t(l) - 1];
        const LayerSpec& spec = g.layers[size_t(l)];
        if (const auto* c = std::get_if<ConvSpec>(&spec)) {
            Conv2dGrads gr =
                conv2d_bwd(input, g.weight(l), c->stride, c->pad, grad);
            if (!c->has_bias) gr.bias = Tensor{};
            out.params[size_t(l)].tensors = {std::move(gr.weight), std::move(gr.bias)};
            grad = std::move(gr.input);
        } else if (const auto* bn = std::get_if<BatchNormSpec>(&spec)) {
            BatchNormGrads gr = batchnorm_bwd(input, g.params[size_t(l)].tensors[0],
                                              cache.bn_used[size_t(l)], bn->eps, grad);
            out.params[size_t(l)].tensors = {std::move(gr.gamma), std::move(gr.beta)};
            grad = std::move(gr.input);
        } else if (std::holds_alternative<ReluSpec>(spec)) {
            grad = relu_bwd(input, grad);
        } else if (std::holds_alternative<MaxPoolSpec>(spec)) {
            grad = maxpool_bwd(cache.pool_argmax[size_t(l)], grad, input.shape);
        } else if (std::holds_alternative<FlattenSpec>(spec)) {
            grad = Tensor(input.shape, grad.data);
        } else {
            FcGrads gr = fc_bwd(input, g.weight(l), grad);
            out.params[size_t(l)].tensors = {std::move(gr.weight), std::move(gr.bias)};
            grad = std::move(gr.input);
        }
        if (!grad.all_finite())
            throw NumericError("non-finite gradient at layer " + std::to_string(l));
    }
    out.input = std::move(grad);
    return out;
}

// Gradient of the loss with respect to the network input only.
inline Tensor backward_input(const ModelGraph& g, const LayerCache& cache,
                             const Tensor& grad_logits) {
    Tensor grad = grad_logits;
    for (int l = g.layer_count() - 1; l >= 0; --l) {
        const Tensor& input = l == 0 ? cache.image : cache.outputs[size_t(l) - 1];
        const LayerSpec& spec = g.layers[size_t(l)];
        if (const auto* c = std::get_if<ConvSpec>(&spec)) {
            grad = conv2d_bwd_input(g.weight(l), c->stride, c->pad, grad, input.shape);
        } else if (const auto* bn = std::get_if<BatchNormSpec>(&spec)) {
            const BatchNormStats& stats = cache.bn_used[size_t(l)];
            Tensor next = grad;
            const int ch = input.dim(0), n = input.dim(1) * input.dim(2);
            for (int cc = 0; cc < ch; ++cc) {
                const float scale = g.params[size_t(l)].tensors[0].data[size_t(cc)] /
                                    std::sqrt(stats.var.data[size_t(cc)] + bn->eps);
                for (int i = 0; i < n; ++i) next.data[size_t(cc * n + i)] *= scale;
            }
            grad = std::move(next);
        } else if (std::holds_alternative<ReluSpec>(spec)) {
            grad = relu_bwd(input, grad);
        } else if (std::holds_alternative<MaxPoolSpec>(spec)) {
            grad = maxpool_bwd(cache.pool_argmax[size_t(l)], grad, input.shape);
        } else if (std::holds_alternative<FlattenSpec>(spec)) {
            grad = Tensor(input.shape, grad.data);
        } else {
            const Tensor& w = g.weight(l);
            Tensor next = Tensor::zeros({w.dim(1)});
            for (int o = 0; o < w.dim(0); ++o) {
                const float go = grad.data[size_t(o)];
                if (go == 0.0f) continue;
                for (int i = 0; i < w.dim(1); ++i)
                    next.data[size_t(i)] += go * w.at2(o, i);
            }
            grad = std::move(next);
        }
    }
    return grad;
}

// ---------------------------------------------------------------------------
// Structured channel removal.

// Prunable channels: every conv layer, every fc layer except the final
// classifier, as long as at least two channels remain.
inline bool is_prunable_layer(const ModelGraph& g, int l) {
    if (g.as_conv(l)) return true;
    if (g.as_fc(l)) return l != g.layer_count() - 1;
    return false;
}

namespace detail {

inline Tensor drop_conv_out_channel(const Tensor& w, int c) {
    const int o = w.dim(0);
    const int64_t per = w.size() / o;
    Tensor r = Tensor::zeros({o - 1, w.dim(1), w.dim(2), w.dim(3)});
    int64_t dst = 0;
    for (int i = 0; i < o; ++i) {
        if (i == c) continue;
        std::copy_n(w.data.begin() + i * per, per, r.data.begin() + dst);
        dst += per;
    }
    return r;
}

inline Tensor drop_conv_in_channel(const Tensor& w, int c) {
    const int o = w.dim(0), i = w.dim(1), k = w.dim(2);
    const int64_t per = int64_t(k) * k;
    Tensor r = Tensor::zeros({o, i - 1, k, k});
    int64_t dst = 0;
    for (int oc = 0; oc < o; ++oc)
        for (int ic = 0; ic < i; ++ic) {
            if (ic == c) continue;
            std::copy_n(w.data.begin() + (int64_t(oc) * i + ic) * per, per,
                        r.data.begin() + dst);
            dst += per;
        }
    return r;
}

inline Tensor drop_entry(const Tensor& v, int c) {
    Tensor r = Tensor::zeros({int(v.size()) - 1});
    int dst = 0;
    for (int i = 0; i < int(v.size()); ++i)
        if (i != c) r.data[size_t(dst++)] = v.data[size_t(i)];
    return r;
}

inline Tensor drop_fc_columns(const Tensor& w, int first, int count) {
    const int out = w.dim(0), in = w.dim(1);
    Tensor r = Tensor::zeros({out, in - count});
    for (int o = 0; o < out; ++o) {
        int dst = 0;
        for (int i = 0; i < in; ++i) {
            if (i >= first && i < first + count) continue;
            r.at2(o, dst++) = w.at2(o, i);
        }
    }
    return r;
}

inline Tensor drop_fc_row(const Tensor& w, int c) {
    const int out = w.dim(0), in = w.dim(1);
    Tensor r = Tensor::zeros({out - 1, in});
    int dst = 0;
    for (int o = 0; o < out; ++o) {
        if (o == c) continue;
        std::copy_n(w.data.begin() + int64_t(o) * in, in,
                    r.data.begin() + int64_t(dst) * in);
        ++dst;
    }
    return r;
}

} // namespace detail

// Removes output channel `id.channel` of layer `id.layer` and the matching
// input slice of the next parametric consumer. Interleaving relu / maxpool /
// batchnorm layers are transparent to channel indices; batchnorm parameters
// for the removed channel are dropped as well. Returns a new graph.
inline ModelGraph prune_channel(const ModelGraph& g, ChannelId id) {
    const int l = id.layer, c = id.channel;
    if (l < 0 || l >= g.layer_count())
        throw ValidationError("prune: layer index " + std::to_string(l) +
                              " out of range");
    if (!g.is_parametric(l))
        throw ValidationError("prune: layer " + std::to_string(l) +
                              " is not conv or fc");
    if (g.as_fc(l) && l == g.layer_count() - 1)
        throw ValidationError("prune: the final fc layer is not prunable");
    const int ch = g.out_channels(l);
    if (c < 0 || c >= ch)
        throw ValidationError("prune: channel " + std::to_string(c) +
                              " out of range for layer with " + std::to_string(ch) +
                              " channels");
    if (ch < 2)
        throw ValidationError("prune: layer " + std::to_string(l) +
                              " has only one channel left");

    const auto io = shape_inference(g);
    ModelGraph out = g;

    // Remove the producer's output channel.
    if (const auto* cs = g.as_conv(l)) {
        out.weight(l) = detail::drop_conv_out_channel(g.weight(l), c);
        if (cs->has_bias) out.bias(l) = detail::drop_entry(g.bias(l), c);
        std::get<ConvSpec>(out.layers[size_t(l)]).out_channels = cs->out_channels - 1;
    } else {
        out.weight(l) = detail::drop_fc_row(g.weight(l), c);
        out.bias(l) = detail::drop_entry(g.bias(l), c);
        std::get<FcSpec>(out.layers[size_t(l)]).out_features = ch - 1;
    }

    // Walk to the next parametric consumer, fixing batchnorm parameters and
    // remembering whether a flatten sits in between.
    int consumer = -1;
    int flatten_at = -1;
    for (int j = l + 1; j < g.layer_count(); ++j) {
        if (std::holds_alternative<BatchNormSpec>(g.layers[size_t(j)])) {
            for (Tensor& t : out.params[size_t(j)].tensors)
                t = detail::drop_entry(t, c);
            continue;
        }
        if (std::holds_alternative<FlattenSpec>(g.layers[size_t(j)])) {
            flatten_at = j;
            continue;
        }
        if (g.is_parametric(j)) {
            consumer = j;
            break;
        }
    }
    if (consumer < 0)
        throw ValidationError("prune: no downstream consumer for layer " +
                              std::to_string(l));

    if (g.as_conv(consumer)) {
        out.weight(consumer) = detail::drop_conv_in_channel(g.weight(consumer), c);
    } else if (flatten_at >= 0) {
        // Channel-major flatten: channel c owns a contiguous block of h*w columns.
        const int block = io[size_t(flatten_at)].in.h * io[size_t(flatten_at)].in.w;
        out.weight(consumer) =
            detail::drop_fc_columns(g.weight(consumer), c * block, block);
    } else {
        out.weight(consumer) = detail::drop_fc_columns(g.weight(consumer), c, 1);
    }

    validate(out);
    return out;
}

// ---------------------------------------------------------------------------
// MAC accounting.

struct MacReport {
    std::vector<int64_t> per_layer;
    int64_t total = 0;
};

inline MacReport count_macs(const ModelGraph& g) {
    const auto io = shape_inference(g);
    MacReport r;
    r.per_layer.assign(g.layers.size(), 0);
    for (size_t l = 0; l < g.layers.size(); ++l) {
        if (const auto* c = std::get_if<ConvSpec>(&g.layers[l])) {
            r.per_layer[l] = int64_t(io[l].in.c) * c->out_channels * c->kernel *
                             c->kernel * io[l].out.h * io[l].out.w;
        } else if (const auto* f = std::get_if<FcSpec>(&g.layers[l])) {
            r.per_layer[l] = io[l].in.len() * f->out_features;
        }
        r.total += r.per_layer[l];
    }
    return r;
}

// ---------------------------------------------------------------------------
// Binary serialization ("CMOD" container). Floats round-trip bit-exactly.

namespace detail {

inline void write_tensor(ByteWriter& w, const Tensor& t) {
    w.u8(uint8_t(t.rank()));
    for (int d : t.shape) w.u32(uint32_t(d));
    for (float v : t.data) w.f32(v);
}

inline Tensor read_tensor(ByteReader& r) {
    const int rank = r.u8();
    std::vector<int> shape(size_t(rank), 0);
    for (int& d : shape) d = int(r.u32());
    Tensor t = Tensor::zeros(shape);
    for (float& v : t.data) v = r.f32();
    return t;
}

} // namespace detail

inline std::vector<uint8_t> serialize(const ModelGraph& g) {
    ByteWriter w;
    w.magic("CMOD");
    w.u32(1);
    w.str(g.name);
    w.u32(uint32_t(g.in_c));
    w.u32(uint32_t(g.in_h));
    w.u32(uint32_t(g.in_w));
    w.u32(uint32_t(g.classes));
    w.u64(g.seed);
    w.u8(g.trained ? 1 : 0);
    w.u32(uint32_t(g.layers.size()));
    for (const LayerSpec& s : g.layers) {
        if (const auto* c = std::get_if<ConvSpec>(&s)) {
            w.u8(0);
            w.i32(c->out_channels);
            w.i32(c->kernel);
            w.i32(c->stride);
            w.i32(c->pad);
            w.u8(c->has_bias ? 1 : 0);
        } else if (const auto* bn = std::get_if<BatchNormSpec>(&s)) {
            w.u8(1);
            w.f32(bn->eps);
            w.f32(bn->momentum);
        } else if (std::holds_alternative<ReluSpec>(s)) {
            w.u8(2);
        } else if (const auto* m = std::get_if<MaxPoolSpec>(&s)) {
            w.u8(3);
            w.i32(m->kernel);
            w.i32(m->stride);
            w.i32(m->pad);
        } else if (std::holds_alternative<FlattenSpec>(s)) {
            w.u8(4);
        } else {
            w.u8(5);
            w.i32(std::get<FcSpec>(s).out_features);
        }
    }
    w.u32(uint32_t(g.params.size()));
    for (const LayerParams& p : g.params) {
        w.u32(uint32_t(p.tensors.size()));
        for (const Tensor& t : p.tensors) detail::write_tensor(w, t);
    }
    return w.data();
}

inline ModelGraph deserialize(std::vector<uint8_t> bytes) {
    ByteReader r(std::move(bytes));
    r.expect_magic("CMOD", "model");
    const uint32_t version = r.u32();
    if (version != 1)
        throw ValidationError("unsupported model version " + std::to_string(version));
    ModelGraph g;
    g.name = r.str();
    g.in_c = int(r.u32());
    g.in_h = int(r.u32());
    g.in_w = int(r.u32());
    g.classes = int(r.u32());
    g.seed = r.u64();
    g.trained = r.u8() != 0;
    const uint32_t n = r.u32();
    for (uint32_t i = 0; i < n; ++i) {
        switch (r.u8()) {
            case 0: {
                ConvSpec c;
                c.out_channels = r.i32();
                c.kernel = r.i32();
                c.stride = r.i32();
                c.pad = r.i32();
                c.has_bias = r.u8() != 0;
                g.layers.emplace_back(c);
                break;
            }
            case 1: {
                BatchNormSpec bn;
                bn.eps = r.f32();
                bn.momentum = r.f32();
                g.layers.emplace_back(bn);
                break;
            }
            case 2:
                g.layers.emplace_back(ReluSpec{});
                break;
            case 3: {
                MaxPoolSpec m;
                m.kernel = r.i32();
                m.stride = r.i32();
                m.pad = r.i32();
                g.layers.emplace_back(m);
                break;
            }
            case 4:
                g.layers.emplace_back(FlattenSpec{});
                break;
            case 5: {
                FcSpec f;
                f.out_features = r.i32();
                g.layers.emplace_back(f);
                break;
            }
            default:
                throw ValidationError("unknown layer tag in model file");
        }
    }
    const uint32_t np = r.u32();
    for (uint32_t i = 0; i < np; ++i) {
        LayerParams p;
        const uint32_t nt = r.u32();
        for (uint32_t t = 0; t < nt; ++t) p.tensors.push_back(detail::read_tensor(r));
        g.params.push_back(std::move(p));
    }
    validate(g);
    return g;
}

inline void save_model(const ModelGraph& g, const std::string& path) {
    ByteWriter w;
    auto bytes = serialize(g);
    w.bytes(bytes.data(), bytes.size());
    w.write_file(path);
}

inline ModelGraph load_model(const std::string& path) {
    ByteReader r = ByteReader::from_file(path);
    std::vector<uint8_t> bytes(r.remaining());
    r.bytes(bytes.data(), bytes.size());
    return deserialize(std::move(bytes));
}

} // namespace coda
