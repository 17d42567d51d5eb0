#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "coda/errors.hpp"
#include "coda/model.hpp"

namespace coda {

// ---------------------------------------------------------------------------
// Calibrated pipeline constants of the accelerator. Defaults reproduce the
// reference design at 300 MHz; all of them can be overridden from a config
// file's hw_constants section.

struct HwConstants {
    int ii_input = 1;        // initiation interval of the input-load loop
    int ii_conv = 1;         // initiation interval of the conv inner loop
    int ii_buffer = 1;       // initiation interval of the line-buffer update
    int depth_input = 3;     // pipeline depth of the input-load loop
    int depth_buffer = 3;    // pipeline depth of the line-buffer update
    int depth_conv = 7;      // pipeline depth of the conv inner loop
    int pixel_overhead = 7;  // per-pixel memory/control overhead
    int ii_maxpool = 6;      // pooling initiation interval under BRAM banking
    int depth_maxpool = 50;  // pooling pipeline depth
    double dsp_pack_conv = 1.56;  // multiplier packing factor, conv engine
    double dsp_pack_pool = 1.6;   // multiplier packing factor, pooling engine
    int dsp_overhead_pool = 4;    // fixed DSPs for requantization etc.
    double clock_hz = 300e6;

    void check() const {
        if (ii_input <= 0 || ii_conv <= 0 || ii_buffer <= 0 || depth_input <= 0 ||
            depth_buffer <= 0 || depth_conv <= 0 || pixel_overhead < 0 ||
            ii_maxpool <= 0 || depth_maxpool <= 0 || dsp_pack_conv <= 0 ||
            dsp_pack_pool <= 0 || dsp_overhead_pool < 0 || clock_hz <= 0)
            throw ValidationError("hw_constants: all values must be positive");
    }
};

// Resource estimates never under-report: fractional DSP packing rounds up.
// The small slack absorbs binary representation noise in the packing factors.
inline int64_t ceil_packed(double x) { return int64_t(std::ceil(x - 1e-9)); }

inline int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }

// ---------------------------------------------------------------------------
// Engine allocation policy.

enum class EngineMode { Streaming, Temporal };

struct PEPolicy {
    EngineMode mode = EngineMode::Streaming;
    int pe_max = 16; // one of 8, 16, 32, 64

    void check() const {
        if (pe_max != 8 && pe_max != 16 && pe_max != 32 && pe_max != 64)
            throw ValidationError("pe_max must be one of 8, 16, 32, 64");
    }

    // Streaming instantiates one engine per layer sized to its channels;
    // temporal reuses a single engine synthesized at pe_max.
    int pe_for(int channels) const {
        return mode == EngineMode::Streaming ? std::min(channels, pe_max) : pe_max;
    }
};

inline EngineMode parse_mode(const std::string& s) {
    if (s == "streaming") return EngineMode::Streaming;
    if (s == "temporal") return EngineMode::Temporal;
    throw ValidationError("unknown mode '" + s + "' (streaming|temporal)");
}

inline const char* mode_name(EngineMode m) {
    return m == EngineMode::Streaming ? "streaming" : "temporal";
}

// ---------------------------------------------------------------------------
// Closed-form latency of the convolution engine.
//
//   input load : K rows of the line buffer, K*W_in cycles at II=1 plus depth.
//                The first layer is partitioned along the input width, which
//                removes the W_in factor.
//   compute    : per output pixel, an input-channel loop of C_in iterations
//                at II=1 plus pipeline depth and per-pixel overhead; after
//                each output row but the last, a buffer update of S*W_in
//                cycles at II=1 plus depth.
//   folding    : output channels beyond N_pe are processed in
//                ceil(C_out/N_pe) sequential passes.

struct ConvDims {
    int c_in = 0;
    int c_out = 0;
    int kernel = 0;
    int stride = 1;
    int w_in = 0;
    int h_out = 0;
    int w_out = 0;
};

inline int64_t conv_latency(const ConvDims& d, int n_pe, const HwConstants& hw,
                            bool first_layer) {
    if (d.c_in <= 0 || d.c_out <= 0 || d.kernel <= 0 || d.stride <= 0 ||
        d.w_in <= 0 || d.h_out <= 0 || d.w_out <= 0 || n_pe <= 0)
        throw ValidationError("conv_latency: dimensions must be positive");
    const int64_t input_load =
        first_layer ? int64_t(d.kernel) * hw.ii_input + hw.depth_input
                    : int64_t(d.kernel) * d.w_in * hw.ii_input + hw.depth_input;
    const int64_t loop = int64_t(d.c_in) * hw.ii_conv + hw.depth_conv;
    const int64_t buffer = int64_t(d.stride) * d.w_in * hw.ii_buffer + hw.depth_buffer;
    const int64_t folds = ceil_div(d.c_out, n_pe);
    const int64_t compute =
        folds * (int64_t(d.h_out) * d.w_out * (loop + hw.pixel_overhead) +
                 int64_t(d.h_out - 1) * buffer);
    return input_load + compute;
}

// Pooling engine latency. The (H_in + 2P) x (W_out + 2P) trip count follows
// the engine's loop structure as built.
struct PoolDims {
    int channels = 0;
    int h_in = 0;
    int w_out = 0;
    int pad = 0;
};

inline int64_t maxpool_latency(const PoolDims& d, int n_pe, const HwConstants& hw) {
    if (d.channels <= 0 || d.h_in <= 0 || d.w_out <= 0 || d.pad < 0 || n_pe <= 0)
        throw ValidationError("maxpool_latency: dimensions must be positive");
    return ceil_div(d.channels, n_pe) * int64_t(d.h_in + 2 * d.pad) *
               (d.w_out + 2 * d.pad) * hw.ii_maxpool +
           hw.depth_maxpool;
}

// ---------------------------------------------------------------------------
// Resource estimates.

struct Resources {
    int64_t dsp = 0;
    int64_t bram = 0;
};

inline Resources conv_resources(int kernel, int c_in, int n_pe,
                                const HwConstants& hw) {
    Resources r;
    r.dsp = ceil_packed(double(n_pe) * kernel * kernel / hw.dsp_pack_conv);
    r.bram = int64_t(c_in) * kernel;
    return r;
}

inline Resources maxpool_resources(int n_pe, const HwConstants& hw) {
    Resources r;
    r.dsp = ceil_packed(double(n_pe) / hw.dsp_pack_pool) + hw.dsp_overhead_pool;
    r.bram = n_pe;
    return r;
}

// ---------------------------------------------------------------------------
// Whole-model cost aggregation.

enum class Objective { Macs, Latency, Dsp, Bram };

inline Objective parse_objective(const std::string& s) {
    if (s == "macs") return Objective::Macs;
    if (s == "latency") return Objective::Latency;
    if (s == "dsp") return Objective::Dsp;
    if (s == "bram") return Objective::Bram;
    throw ValidationError("unknown objective '" + s + "' (macs|latency|dsp|bram)");
}

inline const char* objective_name(Objective o) {
    switch (o) {
        case Objective::Macs: return "macs";
        case Objective::Latency: return "latency";
        case Objective::Dsp: return "dsp";
        default: return "bram";
    }
}

// Dimension-only view of one layer; everything channel_gain needs without
// copying parameters.
struct LayerDesc {
    enum Kind { Conv, Pool, Fc, Other } kind = Other;
    ConvDims conv;       // Conv
    PoolDims pool;       // Pool
    int pool_kernel = 0; // Pool
    int64_t fc_in = 0, fc_out = 0; // Fc
    int flat_block = 0;  // Conv: h*w at the flatten boundary it feeds, else 0
};

inline std::vector<LayerDesc> layer_descs(const ModelGraph& g) {
    const auto io = shape_inference(g);
    std::vector<LayerDesc> descs(g.layers.size());
    for (size_t l = 0; l < g.layers.size(); ++l) {
        LayerDesc& d = descs[l];
        if (const auto* c = std::get_if<ConvSpec>(&g.layers[l])) {
            d.kind = LayerDesc::Conv;
            d.conv = {io[l].in.c, c->out_channels, c->kernel, c->stride,
                      io[l].in.w, io[l].out.h, io[l].out.w};
        } else if (const auto* m = std::get_if<MaxPoolSpec>(&g.layers[l])) {
            d.kind = LayerDesc::Pool;
            d.pool = {io[l].in.c, io[l].in.h, io[l].out.w, m->pad};
            d.pool_kernel = m->kernel;
        } else if (const auto* f = std::get_if<FcSpec>(&g.layers[l])) {
            d.kind = LayerDesc::Fc;
            d.fc_in = io[l].in.len();
            d.fc_out = f->out_features;
        } else if (std::holds_alternative<FlattenSpec>(g.layers[l])) {
            // Record the spatial block each upstream channel contributes.
            const int block = io[l].in.h * io[l].in.w;
            for (int j = int(l) - 1; j >= 0; --j)
                if (descs[size_t(j)].kind == LayerDesc::Conv) {
                    descs[size_t(j)].flat_block = block;
                    break;
                }
        }
    }
    return descs;
}

struct LayerCost {
    int layer = 0;
    std::string kind;
    int64_t cycles = 0;
    int64_t dsp = 0;
    int64_t bram = 0;
    int64_t macs = 0;
    int n_pe = 0;
    int64_t folds = 0;
};

struct CostReport {
    std::vector<LayerCost> layers;
    int64_t total_cycles = 0; // sum of conv + pool engine cycles
    int64_t total_dsp = 0;    // streaming: sum; temporal: engine maxima
    int64_t total_bram = 0;
    int64_t total_macs = 0;   // includes fc layers
    double latency_seconds = 0.0;
    EngineMode mode = EngineMode::Streaming;

    int64_t objective(Objective o) const {
        switch (o) {
            case Objective::Macs: return total_macs;
            case Objective::Latency: return total_cycles;
            case Objective::Dsp: return total_dsp;
            default: return total_bram;
        }
    }
};

// Latency and resources cover the conv and pooling engines; fully connected
// layers run on the GEMM engine, which sits outside the analytical model and
// contributes MACs only.
inline CostReport cost_from_descs(const std::vector<LayerDesc>& descs,
                                  const PEPolicy& policy, const HwConstants& hw) {
    policy.check();
    hw.check();
    CostReport rep;
    rep.mode = policy.mode;
    int64_t max_conv_dsp = 0, max_conv_bram = 0, max_pool_dsp = 0, max_pool_bram = 0;
    bool first_conv = true;
    for (size_t l = 0; l < descs.size(); ++l) {
        const LayerDesc& d = descs[l];
        LayerCost c;
        c.layer = int(l);
        switch (d.kind) {
            case LayerDesc::Conv: {
                c.kind = "conv";
                c.n_pe = policy.pe_for(d.conv.c_out);
                c.folds = ceil_div(d.conv.c_out, c.n_pe);
                c.cycles = conv_latency(d.conv, c.n_pe, hw, first_conv);
                first_conv = false;
                Resources r = conv_resources(d.conv.kernel, d.conv.c_in, c.n_pe, hw);
                c.dsp = r.dsp;
                c.bram = r.bram;
                c.macs = int64_t(d.conv.c_in) * d.conv.c_out * d.conv.kernel *
                         d.conv.kernel * d.conv.h_out * d.conv.w_out;
                max_conv_dsp = std::max(max_conv_dsp, c.dsp);
                max_conv_bram = std::max(max_conv_bram, c.bram);
                break;
            }
            case LayerDesc::Pool: {
                c.kind = "maxpool";
                c.n_pe = policy.pe_for(d.pool.channels);
                c.folds = ceil_div(d.pool.channels, c.n_pe);
                c.cycles = maxpool_latency(d.pool, c.n_pe, hw);
                Resources r = maxpool_resources(c.n_pe, hw);
                c.dsp = r.dsp;
                c.bram = r.bram;
                max_pool_dsp = std::max(max_pool_dsp, c.dsp);
                max_pool_bram = std::max(max_pool_bram, c.bram);
                break;
            }
            case LayerDesc::Fc:
                c.kind = "fc";
                c.macs = d.fc_in * d.fc_out;
                break;
            default:
                c.kind = "passthrough";
                break;
        }
        rep.total_cycles += c.cycles;
        rep.total_macs += c.macs;
        rep.layers.push_back(std::move(c));
    }
    if (policy.mode == EngineMode::Streaming) {
        for (const LayerCost& c : rep.layers) {
            rep.total_dsp += c.dsp;
            rep.total_bram += c.bram;
        }
    } else {
        // One conv engine and one pooling engine, each sized by its widest use.
        rep.total_dsp = max_conv_dsp + max_pool_dsp;
        rep.total_bram = max_conv_bram + max_pool_bram;
    }
    rep.latency_seconds = double(rep.total_cycles) / hw.clock_hz;
    return rep;
}

inline CostReport model_cost(const ModelGraph& g, const PEPolicy& policy,
                             const HwConstants& hw) {
    return cost_from_descs(layer_descs(g), policy, hw);
}

// Applies the dimensional effect of removing one output channel of layer l:
// the producer loses a channel, transparent pool stages narrow with it, and
// the next parametric consumer loses the matching input slice.
inline std::vector<LayerDesc> descs_after_prune(std::vector<LayerDesc> descs, int l) {
    LayerDesc& d = descs[size_t(l)];
    if (d.kind == LayerDesc::Conv) {
        d.conv.c_out -= 1;
        for (size_t j = size_t(l) + 1; j < descs.size(); ++j) {
            LayerDesc& n = descs[j];
            if (n.kind == LayerDesc::Pool) {
                n.pool.channels -= 1;
                continue;
            }
            if (n.kind == LayerDesc::Conv) {
                n.conv.c_in -= 1;
                break;
            }
            if (n.kind == LayerDesc::Fc) {
                n.fc_in -= d.flat_block;
                break;
            }
        }
    } else if (d.kind == LayerDesc::Fc) {
        d.fc_out -= 1;
        for (size_t j = size_t(l) + 1; j < descs.size(); ++j) {
            if (descs[j].kind == LayerDesc::Fc) {
                descs[j].fc_in -= 1;
                break;
            }
        }
    } else {
        throw ValidationError("channel gain: layer " + std::to_string(l) +
                              " has no channels");
    }
    return descs;
}

// Predicted cost reduction from removing one channel. Dimension-only: no
// parameters are copied.
inline int64_t channel_gain_descs(const std::vector<LayerDesc>& descs, int l,
                                  Objective objective, const PEPolicy& policy,
                                  const HwConstants& hw) {
    const int64_t before = cost_from_descs(descs, policy, hw).objective(objective);
    const int64_t after =
        cost_from_descs(descs_after_prune(descs, l), policy, hw).objective(objective);
    return before - after;
}

inline int64_t channel_gain(const ModelGraph& g, ChannelId id, Objective objective,
                            const PEPolicy& policy, const HwConstants& hw) {
    if (!g.is_parametric(id.layer))
        throw ValidationError("channel gain: layer is not conv or fc");
    if (id.channel < 0 || id.channel >= g.out_channels(id.layer))
        throw ValidationError("channel gain: channel out of range");
    return channel_gain_descs(layer_descs(g), id.layer, objective, policy, hw);
}

// ---------------------------------------------------------------------------
// CSV export: layer, cycles, dsp, bram, macs.

inline std::string cost_report_csv(const CostReport& rep) {
    std::string out = "layer,cycles,dsp,bram,macs\n";
    for (const LayerCost& c : rep.layers) {
        out += std::to_string(c.layer) + "," + std::to_string(c.cycles) + "," +
               std::to_string(c.dsp) + "," + std::to_string(c.bram) + "," +
               std::to_string(c.macs) + "\n";
    }
    out += "total," + std::to_string(rep.total_cycles) + "," +
           std::to_string(rep.total_dsp) + "," + std::to_string(rep.total_bram) +
           "," + std::to_string(rep.total_macs) + "\n";
    return out;
}

} // namespace coda
