#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "coda/binio.hpp"
#include "coda/dataset.hpp"
#include "coda/model.hpp"

namespace coda {

// ---------------------------------------------------------------------------
// Rounding. Half-even everywhere: the integer path must be bit-reproducible
// across platforms, and ties-to-even is the one rule that both the reference
// and the simulator can share without drift.

inline double round_half_even(double x) {
    const double fl = std::floor(x);
    const double diff = x - fl;
    if (diff > 0.5) return fl + 1.0;
    if (diff < 0.5) return fl;
    return std::fmod(fl, 2.0) == 0.0 ? fl : fl + 1.0;
}

inline int32_t rhe_i32(double x) {
    const double r = round_half_even(x);
    if (r >= 2147483647.0) return 2147483647;
    if (r <= -2147483648.0) return -2147483648;
    return int32_t(r);
}

inline int8_t clamp_i8(int32_t v, int32_t lo = -128, int32_t hi = 127) {
    return int8_t(std::clamp(v, lo, hi));
}

// ---------------------------------------------------------------------------
// Quantization parameters.

struct QuantParams {
    float scale = 1.0f;
    int32_t zero_point = 0;
};

// Symmetric per-tensor weights: scale = max|w| / 127, range [-127, 127].
struct QuantizedWeights {
    std::vector<int8_t> data;
    float scale = 1.0f;
};

inline QuantizedWeights quantize_weights(const Tensor& w) {
    QuantizedWeights q;
    float mx = 0.0f;
    for (float v : w.data) mx = std::max(mx, std::abs(v));
    q.scale = mx > 0.0f ? mx / 127.0f : 1.0f;
    q.data.reserve(w.data.size());
    for (float v : w.data)
        q.data.push_back(clamp_i8(rhe_i32(double(v) / double(q.scale)), -127, 127));
    return q;
}

// Asymmetric activations: scale = (max - min) / 255, zero_point maps the range
// onto [-128, 127]. A degenerate range falls back to scale 1. The zero point
// divides through the exact ratio rather than the float32 scale so half-way
// cases land where the closed form says.
inline QuantParams activation_params(float lo, float hi) {
    QuantParams p;
    if (hi > lo) {
        p.scale = (hi - lo) / 255.0f;
        p.zero_point = std::clamp(
            rhe_i32(-128.0 - double(lo) * 255.0 / (double(hi) - double(lo))), -128,
            127);
    } else {
        p.scale = 1.0f;
        p.zero_point = std::clamp(rhe_i32(-128.0 - double(lo)), -128, 127);
    }
    return p;
}

inline int8_t quantize_value(float x, const QuantParams& p) {
    return clamp_i8(rhe_i32(double(x) / double(p.scale)) + p.zero_point);
}

// Requantization: one double multiply, half-even round, clamp.
inline int8_t requantize(int32_t acc, double mult, int32_t zp_out) {
    return clamp_i8(rhe_i32(double(acc) * mult) + zp_out);
}

// ---------------------------------------------------------------------------
// Fused-graph construction: eval-mode batchnorm folds into the convolution it
// directly follows. Quantization always operates on the fused graph.

inline ModelGraph fuse_graph(const ModelGraph& g) {
    ModelGraph out;
    out.name = g.name;
    out.in_c = g.in_c;
    out.in_h = g.in_h;
    out.in_w = g.in_w;
    out.classes = g.classes;
    out.seed = g.seed;
    out.trained = g.trained;
    for (size_t l = 0; l < g.layers.size(); ++l) {
        if (const auto* bn = std::get_if<BatchNormSpec>(&g.layers[l])) {
            if (out.layers.empty() || !std::holds_alternative<ConvSpec>(out.layers.back()))
                throw ValidationError(
                    "fuse: batchnorm at layer " + std::to_string(l) +
                    " does not directly follow a convolution");
            const size_t prev = out.layers.size() - 1;
            Tensor& w = out.params[prev].tensors[0];
            Tensor& b = out.params[prev].tensors[1];
            fuse_batchnorm(w, b, g.params[l].tensors[0], g.params[l].tensors[1],
                           g.bn_stats(int(l)), bn->eps);
            std::get<ConvSpec>(out.layers[prev]).has_bias = true;
            continue;
        }
        out.layers.push_back(g.layers[l]);
        out.params.push_back(g.params[l]);
    }
    validate(out);
    return out;
}

// ---------------------------------------------------------------------------
// Quantized model: one station per conv/fc layer, carrying the integer
// parameters plus the transparent ops (relu / maxpool / flatten) that run
// before its requantization point. Pooling that follows a convolution pools
// the 32-bit accumulators; requantization is applied after it.

struct QuantPostOp {
    enum Kind { Relu, Pool, Flatten } kind = Relu;
    MaxPoolSpec pool; // Pool only
};

struct QuantStation {
    bool is_conv = true;
    ConvSpec conv;                  // conv geometry
    int in_c = 0, in_h = 0, in_w = 0; // conv input extents
    int fc_in = 0, fc_out = 0;      // fc geometry
    std::vector<int8_t> weight;     // conv: [oc][ic][k][k]; fc: [out][in]
    std::vector<int32_t> bias;      // per output channel
    float weight_scale = 1.0f;
    QuantParams in_q, out_q;
    double requant_mult = 1.0;      // in_scale * weight_scale / out_scale
    std::vector<QuantPostOp> post_ops;
    bool final_station = false;     // dequantize instead of requantize

    int out_channels() const { return is_conv ? conv.out_channels : fc_out; }
};

struct QuantModel {
    std::string name;
    int in_c = 1, in_h = 0, in_w = 0;
    int classes = 0;
    QuantParams input_q;
    std::vector<QuantStation> stations;
};

namespace detail {

// Maps each station to [first layer, last layer] of the fused graph.
struct StationSpan {
    int param_layer = 0;
    int last_layer = 0;
};

inline std::vector<StationSpan> station_spans(const ModelGraph& fused) {
    std::vector<StationSpan> spans;
    for (int l = 0; l < fused.layer_count(); ++l) {
        if (fused.is_parametric(l)) {
            spans.push_back({l, l});
        } else {
            if (spans.empty())
                throw ValidationError("quantize: model must start with conv");
            spans.back().last_layer = l;
        }
    }
    return spans;
}

} // namespace detail

// Per-station activation ranges observed on the fused float graph; station
// outputs are taken after the trailing relu/pool/flatten ops.
inline std::vector<QuantParams> calibrate_activations(const ModelGraph& fused,
                                                      const Dataset& calib) {
    if (calib.size() == 0) throw ValidationError("calibrate: empty calibration set");
    const auto spans = detail::station_spans(fused);
    std::vector<float> lo(spans.size(), std::numeric_limits<float>::infinity());
    std::vector<float> hi(spans.size(), -std::numeric_limits<float>::infinity());
    for (const Tensor& img : calib.images) {
        LayerCache cache;
        forward(fused, img, &cache);
        for (size_t s = 0; s < spans.size(); ++s) {
            const Tensor& out = cache.outputs[size_t(spans[s].last_layer)];
            for (float v : out.data) {
                lo[s] = std::min(lo[s], v);
                hi[s] = std::max(hi[s], v);
            }
        }
    }
    std::vector<QuantParams> params(spans.size());
    for (size_t s = 0; s < spans.size(); ++s) params[s] = activation_params(lo[s], hi[s]);
    return params;
}

inline QuantModel quantize_model(const ModelGraph& g, const Dataset& calib) {
    if (!g.trained)
        throw ValidationError("quantize: graph is untrained");
    if (calib.size() == 0) throw ValidationError("quantize: empty calibration set");
    ModelGraph fused = fuse_graph(g);
    const auto io = shape_inference(fused);
    const auto spans = detail::station_spans(fused);
    const auto act = calibrate_activations(fused, calib);

    QuantModel qm;
    qm.name = g.name;
    qm.in_c = g.in_c;
    qm.in_h = g.in_h;
    qm.in_w = g.in_w;
    qm.classes = g.classes;

    float in_lo = std::numeric_limits<float>::infinity();
    float in_hi = -std::numeric_limits<float>::infinity();
    for (const Tensor& img : calib.images)
        for (float v : img.data) {
            in_lo = std::min(in_lo, v);
            in_hi = std::max(in_hi, v);
        }
    qm.input_q = activation_params(in_lo, in_hi);

    QuantParams upstream = qm.input_q;
    for (size_t s = 0; s < spans.size(); ++s) {
        const int l = spans[s].param_layer;
        QuantStation st;
        st.is_conv = fused.as_conv(l) != nullptr;
        if (st.is_conv) {
            st.conv = *fused.as_conv(l);
            st.in_c = io[size_t(l)].in.c;
            st.in_h = io[size_t(l)].in.h;
            st.in_w = io[size_t(l)].in.w;
            if (int64_t(st.in_c) * st.conv.kernel * st.conv.kernel > 32768)
                throw ValidationError("quantize: conv reduction too wide for 32-bit "
                                      "accumulation");
        } else {
            st.fc_in = int(io[size_t(l)].in.len());
            st.fc_out = fused.as_fc(l)->out_features;
            if (st.fc_in > 32768)
                throw ValidationError("quantize: fc reduction too wide for 32-bit "
                                      "accumulation");
        }
        for (int j = l + 1; j <= spans[s].last_layer; ++j) {
            if (std::holds_alternative<ReluSpec>(fused.layers[size_t(j)]))
                st.post_ops.push_back({QuantPostOp::Relu, {}});
            else if (const auto* m = std::get_if<MaxPoolSpec>(&fused.layers[size_t(j)]))
                st.post_ops.push_back({QuantPostOp::Pool, *m});
            else if (std::holds_alternative<FlattenSpec>(fused.layers[size_t(j)]))
                st.post_ops.push_back({QuantPostOp::Flatten, {}});
            else
                throw ValidationError("quantize: unsupported layer inside station");
        }
        QuantizedWeights qw = quantize_weights(fused.weight(l));
        st.weight = std::move(qw.data);
        st.weight_scale = qw.scale;
        st.in_q = upstream;
        st.final_station = s + 1 == spans.size();
        st.out_q = st.final_station ? QuantParams{} : act[s];
        const double in_w_scale = double(st.in_q.scale) * double(st.weight_scale);
        const int oc = st.out_channels();
        st.bias.assign(size_t(oc), 0);
        const Tensor& b = fused.bias(l);
        for (int o = 0; o < oc && !b.data.empty(); ++o)
            st.bias[size_t(o)] = rhe_i32(double(b.data[size_t(o)]) / in_w_scale);
        st.requant_mult =
            st.final_station ? in_w_scale : in_w_scale / double(st.out_q.scale);
        upstream = st.out_q;
        qm.stations.push_back(std::move(st));
    }
    return qm;
}

// ---------------------------------------------------------------------------
// Reference integer inference. Plain nested loops; the accelerator simulator
// must reproduce these values bit-for-bit through its own dataflow.

struct IntTensor {
    std::vector<int32_t> data;
    int c = 0, h = 0, w = 0; // h = w = 1 once flattened
};

namespace detail {

inline IntTensor station_accumulate(const QuantStation& st,
                                    const std::vector<int8_t>& in) {
    IntTensor acc;
    if (st.is_conv) {
        if (in.size() != size_t(st.in_c) * st.in_h * st.in_w)
            throw ValidationError("quant conv: input size mismatch");
        const int ci = st.in_c, ih = st.in_h, iw = st.in_w;
        const int k = st.conv.kernel, sdr = st.conv.stride, pad = st.conv.pad;
        const int oh = conv_out_dim(ih, k, sdr, pad);
        const int ow = conv_out_dim(iw, k, sdr, pad);
        acc.c = st.conv.out_channels;
        acc.h = oh;
        acc.w = ow;
        acc.data.assign(size_t(acc.c) * oh * ow, 0);
        const int32_t zp = st.in_q.zero_point;
        for (int o = 0; o < acc.c; ++o)
            for (int y = 0; y < oh; ++y)
                for (int x = 0; x < ow; ++x) {
                    int32_t sum = st.bias[size_t(o)];
                    for (int c = 0; c < ci; ++c)
                        for (int kh = 0; kh < k; ++kh) {
                            const int iy = y * sdr - pad + kh;
                            if (iy < 0 || iy >= ih) continue;
                            for (int kw = 0; kw < k; ++kw) {
                                const int ix = x * sdr - pad + kw;
                                if (ix < 0 || ix >= iw) continue;
                                const int32_t wv =
                                    st.weight[size_t(((o * ci + c) * k + kh) * k + kw)];
                                const int32_t xv =
                                    int32_t(in[size_t((c * ih + iy) * iw + ix)]) - zp;
                                sum += wv * xv;
                            }
                        }
                    acc.data[size_t((o * oh + y) * ow + x)] = sum;
                }
    } else {
        if (int(in.size()) != st.fc_in)
            throw ValidationError("quant fc: input length mismatch");
        acc.c = st.fc_out;
        acc.h = acc.w = 1;
        acc.data.assign(size_t(st.fc_out), 0);
        const int32_t zp = st.in_q.zero_point;
        for (int o = 0; o < st.fc_out; ++o) {
            int32_t sum = st.bias[size_t(o)];
            for (int i = 0; i < st.fc_in; ++i)
                sum += int32_t(st.weight[size_t(o * st.fc_in + i)]) *
                       (int32_t(in[size_t(i)]) - zp);
            acc.data[size_t(o)] = sum;
        }
    }
    return acc;
}

inline void station_post_ops(const QuantStation& st, IntTensor& acc) {
    for (const QuantPostOp& op : st.post_ops) {
        if (op.kind == QuantPostOp::Relu) {
            for (int32_t& v : acc.data) v = std::max(v, 0);
        } else if (op.kind == QuantPostOp::Pool) {
            const int k = op.pool.kernel, sdr = op.pool.stride, pad = op.pool.pad;
            const int oh = conv_out_dim(acc.h, k, sdr, pad);
            const int ow = conv_out_dim(acc.w, k, sdr, pad);
            IntTensor pooled;
            pooled.c = acc.c;
            pooled.h = oh;
            pooled.w = ow;
            pooled.data.assign(size_t(acc.c) * oh * ow, 0);
            for (int c = 0; c < acc.c; ++c)
                for (int y = 0; y < oh; ++y)
                    for (int x = 0; x < ow; ++x) {
                        int32_t best = std::numeric_limits<int32_t>::min();
                        for (int kh = 0; kh < k; ++kh) {
                            const int iy = y * sdr - pad + kh;
                            if (iy < 0 || iy >= acc.h) continue;
                            for (int kw = 0; kw < k; ++kw) {
                                const int ix = x * sdr - pad + kw;
                                if (ix < 0 || ix >= acc.w) continue;
                                best = std::max(
                                    best, acc.data[size_t((c * acc.h + iy) * acc.w + ix)]);
                            }
                        }
                        pooled.data[size_t((c * oh + y) * ow + x)] = best;
                    }
            acc = std::move(pooled);
        } else {
            acc.c = int(acc.data.size());
            acc.h = acc.w = 1;
        }
    }
}

} // namespace detail

// Runs one station on int8 input: accumulate, transparent ops, requantize.
// Exposed for unit-level checks.
inline std::vector<int8_t> quant_station_forward(const QuantStation& st,
                                                 const std::vector<int8_t>& in) {
    IntTensor acc = detail::station_accumulate(st, in);
    detail::station_post_ops(st, acc);
    std::vector<int8_t> out(acc.data.size());
    for (size_t i = 0; i < acc.data.size(); ++i)
        out[i] = requantize(acc.data[i], st.requant_mult, st.out_q.zero_point);
    return out;
}

inline std::vector<int8_t> quantize_image(const Tensor& img, const QuantParams& q) {
    std::vector<int8_t> out(img.data.size());
    for (size_t i = 0; i < img.data.size(); ++i) out[i] = quantize_value(img.data[i], q);
    return out;
}

inline Tensor quant_infer(const QuantModel& qm, const Tensor& image) {
    if (image.shape != std::vector<int>{qm.in_c, qm.in_h, qm.in_w})
        throw ValidationError("quant_infer: input shape mismatch");
    std::vector<int8_t> cur = quantize_image(image, qm.input_q);
    for (const QuantStation& st : qm.stations) {
        if (st.final_station) {
            IntTensor acc = detail::station_accumulate(st, cur);
            detail::station_post_ops(st, acc);
            Tensor logits = Tensor::zeros({int(acc.data.size())});
            for (size_t i = 0; i < acc.data.size(); ++i)
                logits.data[i] = float(double(acc.data[i]) * st.requant_mult);
            return logits;
        }
        cur = quant_station_forward(st, cur);
    }
    throw ValidationError("quant_infer: model has no final station");
}

// ---------------------------------------------------------------------------
// Container ("CQNT").

inline std::vector<uint8_t> serialize_qmodel(const QuantModel& qm) {
    ByteWriter w;
    w.magic("CQNT");
    w.u32(1);
    w.str(qm.name);
    w.u32(uint32_t(qm.in_c));
    w.u32(uint32_t(qm.in_h));
    w.u32(uint32_t(qm.in_w));
    w.u32(uint32_t(qm.classes));
    w.f32(qm.input_q.scale);
    w.i32(qm.input_q.zero_point);
    w.u32(uint32_t(qm.stations.size()));
    for (const QuantStation& st : qm.stations) {
        w.u8(st.is_conv ? 1 : 0);
        w.i32(st.conv.out_channels);
        w.i32(st.conv.kernel);
        w.i32(st.conv.stride);
        w.i32(st.conv.pad);
        w.i32(st.in_c);
        w.i32(st.in_h);
        w.i32(st.in_w);
        w.i32(st.fc_in);
        w.i32(st.fc_out);
        w.u32(uint32_t(st.weight.size()));
        w.bytes(st.weight.data(), st.weight.size());
        w.u32(uint32_t(st.bias.size()));
        for (int32_t b : st.bias) w.i32(b);
        w.f32(st.weight_scale);
        w.f32(st.in_q.scale);
        w.i32(st.in_q.zero_point);
        w.f32(st.out_q.scale);
        w.i32(st.out_q.zero_point);
        w.f64(st.requant_mult);
        w.u8(st.final_station ? 1 : 0);
        w.u32(uint32_t(st.post_ops.size()));
        for (const QuantPostOp& op : st.post_ops) {
            w.u8(uint8_t(op.kind));
            w.i32(op.pool.kernel);
            w.i32(op.pool.stride);
            w.i32(op.pool.pad);
        }
    }
    return w.data();
}

inline QuantModel deserialize_qmodel(std::vector<uint8_t> bytes) {
    ByteReader r(std::move(bytes));
    r.expect_magic("CQNT", "quantized model");
    if (r.u32() != 1) throw ValidationError("unsupported quantized model version");
    QuantModel qm;
    qm.name = r.str();
    qm.in_c = int(r.u32());
    qm.in_h = int(r.u32());
    qm.in_w = int(r.u32());
    qm.classes = int(r.u32());
    qm.input_q.scale = r.f32();
    qm.input_q.zero_point = r.i32();
    const uint32_t n = r.u32();
    for (uint32_t s = 0; s < n; ++s) {
        QuantStation st;
        st.is_conv = r.u8() != 0;
        st.conv.out_channels = r.i32();
        st.conv.kernel = r.i32();
        st.conv.stride = r.i32();
        st.conv.pad = r.i32();
        st.in_c = r.i32();
        st.in_h = r.i32();
        st.in_w = r.i32();
        st.fc_in = r.i32();
        st.fc_out = r.i32();
        st.weight.resize(r.u32());
        r.bytes(st.weight.data(), st.weight.size());
        st.bias.resize(r.u32());
        for (int32_t& b : st.bias) b = r.i32();
        st.weight_scale = r.f32();
        st.in_q.scale = r.f32();
        st.in_q.zero_point = r.i32();
        st.out_q.scale = r.f32();
        st.out_q.zero_point = r.i32();
        st.requant_mult = r.f64();
        st.final_station = r.u8() != 0;
        const uint32_t nops = r.u32();
        for (uint32_t i = 0; i < nops; ++i) {
            QuantPostOp op;
            op.kind = QuantPostOp::Kind(r.u8());
            op.pool.kernel = r.i32();
            op.pool.stride = r.i32();
            op.pool.pad = r.i32();
            st.post_ops.push_back(op);
        }
        qm.stations.push_back(std::move(st));
    }
    return qm;
}

inline void save_qmodel(const QuantModel& qm, const std::string& path) {
    ByteWriter w;
    auto bytes = serialize_qmodel(qm);
    w.bytes(bytes.data(), bytes.size());
    w.write_file(path);
}

inline QuantModel load_qmodel(const std::string& path) {
    ByteReader r = ByteReader::from_file(path);
    std::vector<uint8_t> bytes(r.remaining());
    r.bytes(bytes.data(), bytes.size());
    return deserialize_qmodel(std::move(bytes));
}

} // namespace coda
