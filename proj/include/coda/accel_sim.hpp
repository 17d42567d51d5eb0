#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "coda/perf_model.hpp"
#include "coda/quantization.hpp"

namespace coda {

// Functional, stage-accurate simulator of the accelerator: the convolution
// engine (K-row circular line buffer, N_pe parallel PEs with adder trees,
// channel folding), the pooling engine (comparator trees plus inline
// requantization), and the GEMM engine. Cycle counts accumulate from loop
// trip counts, initiation intervals, and pipeline depths, which makes them
// identical to the closed-form latency model; functional outputs must match
// the integer reference bit-for-bit.

// ---------------------------------------------------------------------------
// Fold-order streams. Engines emit output channels group by group
// ([fold][pixel][lane]); the repacking stage restores the planar layout the
// next engine expects. The final fold may have fewer active lanes.

template <typename T>
std::vector<T> pack_fold_order(const std::vector<T>& planar, int channels,
                               int pixels, int n_pe) {
    std::vector<T> stream;
    stream.reserve(planar.size());
    const int folds = int(ceil_div(channels, n_pe));
    for (int f = 0; f < folds; ++f) {
        const int active = std::min(n_pe, channels - f * n_pe);
        for (int p = 0; p < pixels; ++p)
            for (int lane = 0; lane < active; ++lane)
                stream.push_back(planar[size_t((f * n_pe + lane) * pixels + p)]);
    }
    return stream;
}

template <typename T>
std::vector<T> repack_to_planar(const std::vector<T>& stream, int channels,
                                int pixels, int n_pe) {
    if (stream.size() != size_t(channels) * size_t(pixels))
        throw ValidationError("repack: stream size mismatch");
    std::vector<T> planar(stream.size());
    size_t pos = 0;
    const int folds = int(ceil_div(channels, n_pe));
    for (int f = 0; f < folds; ++f) {
        const int active = std::min(n_pe, channels - f * n_pe);
        for (int p = 0; p < pixels; ++p)
            for (int lane = 0; lane < active; ++lane)
                planar[size_t((f * n_pe + lane) * pixels + p)] = stream[pos++];
    }
    return planar;
}

// ---------------------------------------------------------------------------
// Convolution compute engine.

struct EngineConfig {
    // Template geometry: IH IW OH OW IC OC K S P PE.
    int ih = 0, iw = 0, oh = 0, ow = 0;
    int ic = 0, oc = 0;
    int kernel = 0, stride = 1, pad = 0;
    int n_pe = 1;
    bool first_layer = false;

    int32_t zp_in = 0;
    std::vector<int8_t> weight; // planar [oc][ic][k][k]
    std::vector<int32_t> bias;  // per channel

    bool relu = false;          // activation stage at emission
    bool requant_output = true; // false: stream raw accumulators to the MCE
    double requant_mult = 1.0;
    int32_t zp_out = 0;

    void check() const {
        if (ih <= 0 || iw <= 0 || oh <= 0 || ow <= 0 || ic <= 0 || oc <= 0 ||
            kernel <= 0 || stride <= 0 || pad < 0 || n_pe <= 0)
            throw ValidationError("cce: dimensions must be positive");
        if (conv_out_dim(ih, kernel, stride, pad) != oh ||
            conv_out_dim(iw, kernel, stride, pad) != ow)
            throw ValidationError("cce: output extents do not match geometry");
        if (weight.size() != size_t(oc) * ic * kernel * kernel)
            throw ValidationError("cce: weight buffer size mismatch");
        if (bias.size() != size_t(oc))
            throw ValidationError("cce: bias buffer size mismatch");
    }
};

struct CceOutput {
    std::vector<int8_t> stream;      // fold order, when requantized
    std::vector<int32_t> acc_stream; // fold order, when streaming accumulators
    int64_t folds = 0;
    int64_t input_load_cycles = 0;
    int64_t compute_cycles = 0;
    int64_t buffer_cycles = 0;
    int64_t cycles = 0;
    std::vector<int64_t> fold_cycles; // per-fold compute+buffer breakdown
};

inline CceOutput simulate_cce(const EngineConfig& cfg,
                              const std::vector<int8_t>& planar_input,
                              const HwConstants& hw) {
    cfg.check();
    if (planar_input.size() != size_t(cfg.ic) * cfg.ih * cfg.iw)
        throw ValidationError("cce: input size " + std::to_string(planar_input.size()) +
                              " != " + std::to_string(size_t(cfg.ic) * cfg.ih * cfg.iw));
    const int k = cfg.kernel, s = cfg.stride, p = cfg.pad;
    const int iwp = cfg.iw + 2 * p;

    // Padding cells carry the input zero point, the integer encoding of a
    // real zero, so they contribute nothing after zero-point subtraction.
    auto padded_row = [&](int c, int y, std::vector<int8_t>& row) {
        for (int x = 0; x < iwp; ++x) {
            const int sy = y - p, sx = x - p;
            row[size_t(x)] = (sy < 0 || sy >= cfg.ih || sx < 0 || sx >= cfg.iw)
                                 ? int8_t(cfg.zp_in)
                                 : planar_input[size_t((c * cfg.ih + sy) * cfg.iw + sx)];
        }
    };

    CceOutput out;
    out.folds = ceil_div(cfg.oc, cfg.n_pe);
    const int64_t t_loop = int64_t(cfg.ic) * hw.ii_conv + hw.depth_conv;
    const int64_t t_buffer = int64_t(s) * cfg.iw * hw.ii_buffer + hw.depth_buffer;
    out.input_load_cycles = cfg.first_layer
                                ? int64_t(k) * hw.ii_input + hw.depth_input
                                : int64_t(k) * cfg.iw * hw.ii_input + hw.depth_input;

    // K-row circular line buffer: lb[c][slot][x]; `head` rotates by `stride`
    // rows after each output row, overwriting exactly the rows that leave the
    // sliding window.
    std::vector<std::vector<std::vector<int8_t>>> lb(
        size_t(cfg.ic), std::vector<std::vector<int8_t>>(
                            size_t(k), std::vector<int8_t>(size_t(iwp), 0)));

    for (int64_t f = 0; f < out.folds; ++f) {
        const int active = std::min(cfg.n_pe, cfg.oc - int(f) * cfg.n_pe);
        int head = 0;
        for (int c = 0; c < cfg.ic; ++c)
            for (int r = 0; r < k; ++r) padded_row(c, r, lb[size_t(c)][size_t(r)]);

        int64_t fold_cycles = 0;
        std::vector<int32_t> lane_sum(size_t(cfg.n_pe), 0);
        for (int y = 0; y < cfg.oh; ++y) {
            for (int x = 0; x < cfg.ow; ++x) {
                for (int lane = 0; lane < active; ++lane)
                    lane_sum[size_t(lane)] =
                        cfg.bias[size_t(f * cfg.n_pe + lane)];
                // Channel loop pipelined at II=1; the K*K*PE multiplies per
                // iteration are fully unrolled adder-tree work.
                for (int c = 0; c < cfg.ic; ++c) {
                    for (int kh = 0; kh < k; ++kh) {
                        const int slot = (head + kh) % k;
                        const std::vector<int8_t>& row = lb[size_t(c)][size_t(slot)];
                        for (int kw = 0; kw < k; ++kw) {
                            const int32_t xv =
                                int32_t(row[size_t(x * s + kw)]) - cfg.zp_in;
                            for (int lane = 0; lane < active; ++lane) {
                                const int o = int(f) * cfg.n_pe + lane;
                                const int32_t wv = cfg.weight[size_t(
                                    ((o * cfg.ic + c) * k + kh) * k + kw)];
                                lane_sum[size_t(lane)] += wv * xv;
                            }
                        }
                    }
                }
                fold_cycles += t_loop + hw.pixel_overhead;
                for (int lane = 0; lane < active; ++lane) {
                    int32_t v = lane_sum[size_t(lane)];
                    if (cfg.relu) v = std::max(v, 0);
                    if (cfg.requant_output)
                        out.stream.push_back(requantize(v, cfg.requant_mult, cfg.zp_out));
                    else
                        out.acc_stream.push_back(v);
                }
            }
            if (y + 1 < cfg.oh) {
                // Rotate in `stride` fresh rows.
                for (int c = 0; c < cfg.ic; ++c)
                    for (int r = 0; r < s; ++r)
                        padded_row(c, y * s + k + r,
                                   lb[size_t(c)][size_t((head + r) % k)]);
                head = (head + s) % k;
                fold_cycles += t_buffer;
            }
        }
        out.compute_cycles += int64_t(cfg.oh) * cfg.ow * (t_loop + hw.pixel_overhead);
        out.buffer_cycles += int64_t(cfg.oh - 1) * t_buffer;
        out.fold_cycles.push_back(fold_cycles);
    }
    out.cycles = out.input_load_cycles + out.compute_cycles + out.buffer_cycles;
    return out;
}

// ---------------------------------------------------------------------------
// Max-pooling compute engine: N_pe comparator trees over the convolution
// engine's fold-order accumulator stream, with inline requantization on the
// way out.

struct MceConfig {
    int channels = 0;
    int ih = 0, iw = 0; // extent of the incoming feature map
    int kernel = 0, stride = 1, pad = 0;
    int n_pe = 1;
    bool requant_output = true;
    double requant_mult = 1.0;
    int32_t zp_out = 0;

    void check() const {
        if (channels <= 0 || ih <= 0 || iw <= 0 || kernel <= 0 || stride <= 0 ||
            pad < 0 || n_pe <= 0)
            throw ValidationError("mce: dimensions must be positive");
        if (pad >= kernel)
            throw ValidationError("mce: padding must be smaller than the window");
    }
};

struct MceOutput {
    std::vector<int8_t> stream;      // fold order
    std::vector<int32_t> acc_stream; // fold order, when not requantizing
    int oh = 0, ow = 0;
    int64_t folds = 0;
    int64_t cycles = 0;
};

inline MceOutput simulate_mce(const MceConfig& cfg,
                              const std::vector<int32_t>& acc_fold_stream,
                              const HwConstants& hw) {
    cfg.check();
    if (acc_fold_stream.size() != size_t(cfg.channels) * cfg.ih * cfg.iw)
        throw ValidationError("mce: stream size mismatch");
    MceOutput out;
    out.oh = conv_out_dim(cfg.ih, cfg.kernel, cfg.stride, cfg.pad);
    out.ow = conv_out_dim(cfg.iw, cfg.kernel, cfg.stride, cfg.pad);
    out.folds = ceil_div(cfg.channels, cfg.n_pe);

    const int pixels_in = cfg.ih * cfg.iw;
    size_t pos = 0;
    for (int64_t f = 0; f < out.folds; ++f) {
        const int active = std::min(cfg.n_pe, cfg.channels - int(f) * cfg.n_pe);
        // Buffer this fold's channel group back into planar maps.
        std::vector<int32_t> group(size_t(active) * pixels_in);
        for (int p = 0; p < pixels_in; ++p)
            for (int lane = 0; lane < active; ++lane)
                group[size_t(lane * pixels_in + p)] = acc_fold_stream[pos++];
        // Comparator trees: one output per lane per window position.
        for (int y = 0; y < out.oh; ++y)
            for (int x = 0; x < out.ow; ++x)
                for (int lane = 0; lane < active; ++lane) {
                    int32_t best = std::numeric_limits<int32_t>::min();
                    for (int kh = 0; kh < cfg.kernel; ++kh) {
                        const int iy = y * cfg.stride - cfg.pad + kh;
                        if (iy < 0 || iy >= cfg.ih) continue;
                        for (int kw = 0; kw < cfg.kernel; ++kw) {
                            const int ix = x * cfg.stride - cfg.pad + kw;
                            if (ix < 0 || ix >= cfg.iw) continue;
                            best = std::max(best,
                                            group[size_t(lane * pixels_in +
                                                         iy * cfg.iw + ix)]);
                        }
                    }
                    if (cfg.requant_output)
                        out.stream.push_back(
                            requantize(best, cfg.requant_mult, cfg.zp_out));
                    else
                        out.acc_stream.push_back(best);
                }
        // Banked scan over the padded extent at II cycles per position.
        out.cycles += int64_t(cfg.ih + 2 * cfg.pad) * (out.ow + 2 * cfg.pad) *
                      hw.ii_maxpool;
    }
    out.cycles += hw.depth_maxpool;
    return out;
}

// int8 convenience entry: values pass through the comparator trees unscaled.
inline MceOutput simulate_mce_int8(const MceConfig& cfg,
                                   const std::vector<int8_t>& stream,
                                   const HwConstants& hw) {
    std::vector<int32_t> widened(stream.begin(), stream.end());
    MceConfig c = cfg;
    c.requant_output = true;
    c.requant_mult = 1.0;
    c.zp_out = 0;
    return simulate_mce(c, widened, hw);
}

// ---------------------------------------------------------------------------
// GEMM compute engine: systolic matrix-vector product. The cycle model is
// artifact plumbing outside the calibrated analytical model and is labeled
// as such in reports.

struct GceConfig {
    int in_features = 0;
    int out_features = 0;
    int32_t zp_in = 0;
    std::vector<int8_t> weight; // [out][in]
    std::vector<int32_t> bias;
    bool dequant_output = false; // final classifier emits float logits
    double requant_mult = 1.0;
    int32_t zp_out = 0;
};

struct GceOutput {
    std::vector<int8_t> stream;
    std::vector<float> logits;
    int64_t cycles = 0;
};

inline GceOutput simulate_gce(const GceConfig& cfg, const std::vector<int8_t>& in) {
    if (int(in.size()) != cfg.in_features)
        throw ValidationError("gce: input length mismatch");
    if (cfg.weight.size() != size_t(cfg.in_features) * cfg.out_features)
        throw ValidationError("gce: weight size mismatch");
    GceOutput out;
    for (int o = 0; o < cfg.out_features; ++o) {
        int32_t sum = cfg.bias[size_t(o)];
        for (int i = 0; i < cfg.in_features; ++i)
            sum += int32_t(cfg.weight[size_t(o * cfg.in_features + i)]) *
                   (int32_t(in[size_t(i)]) - cfg.zp_in);
        if (cfg.dequant_output)
            out.logits.push_back(float(double(sum) * cfg.requant_mult));
        else
            out.stream.push_back(requantize(sum, cfg.requant_mult, cfg.zp_out));
    }
    // One row-column pair initiated per cycle, plus array fill and drain.
    out.cycles = int64_t(cfg.out_features) * cfg.in_features + cfg.out_features +
                 cfg.in_features;
    return out;
}

// ---------------------------------------------------------------------------
// Whole-model simulation.

struct EngineReport {
    int station = 0;
    std::string engine; // cce | mce | gce
    int64_t cycles = 0;
    int64_t input_load_cycles = 0;
    int64_t compute_cycles = 0;
    int64_t buffer_cycles = 0;
    int64_t folds = 1;
    int n_pe = 1;
    bool analytical = true; // gce cycles are plumbing, flagged false
    std::vector<int64_t> fold_cycles;
};

struct SimReport {
    std::vector<EngineReport> engines;
    EngineMode mode = EngineMode::Streaming;
    // Temporal: engine invocations run back to back.
    // Streaming: the sum is the fill-dominated single-image bound, the max is
    // the steady-state throughput bound; both are reported.
    int64_t total_cycles = 0;
    int64_t stage_sum_cycles = 0;
    int64_t stage_max_cycles = 0;
    Tensor logits;
};

inline SimReport simulate_model(const QuantModel& qm, const Tensor& image,
                                const PEPolicy& policy, const HwConstants& hw) {
    policy.check();
    hw.check();
    SimReport rep;
    rep.mode = policy.mode;

    std::vector<int8_t> cur = quantize_image(image, qm.input_q);
    int cur_c = qm.in_c, cur_h = qm.in_h, cur_w = qm.in_w;
    bool first_conv = true;

    for (size_t s = 0; s < qm.stations.size(); ++s) {
        const QuantStation& st = qm.stations[s];
        const int n_pe = policy.pe_for(st.out_channels());

        if (!st.is_conv) {
            GceConfig gc;
            gc.in_features = st.fc_in;
            gc.out_features = st.fc_out;
            gc.zp_in = st.in_q.zero_point;
            gc.weight = st.weight;
            gc.bias = st.bias;
            gc.dequant_output = st.final_station;
            gc.requant_mult = st.requant_mult;
            gc.zp_out = st.out_q.zero_point;
            GceOutput go = simulate_gce(gc, cur);
            EngineReport er;
            er.station = int(s);
            er.engine = "gce";
            er.cycles = go.cycles;
            er.n_pe = n_pe;
            er.analytical = false;
            rep.engines.push_back(er);
            if (st.final_station) {
                rep.logits = Tensor::zeros({int(go.logits.size())});
                rep.logits.data = go.logits;
            } else {
                bool relu = false;
                for (const QuantPostOp& op : st.post_ops)
                    if (op.kind == QuantPostOp::Relu) relu = true;
                if (relu)
                    for (int8_t& v : go.stream)
                        v = std::max(v, int8_t(st.out_q.zero_point));
                cur = std::move(go.stream);
                cur_c = st.fc_out;
                cur_h = cur_w = 1;
            }
            continue;
        }

        // Convolution stage. Any pooling in the station consumes the raw
        // accumulator stream; requantization happens in the last engine.
        std::vector<const QuantPostOp*> pools;
        bool relu = false, flatten = false;
        for (const QuantPostOp& op : st.post_ops) {
            if (op.kind == QuantPostOp::Pool) pools.push_back(&op);
            if (op.kind == QuantPostOp::Relu) relu = true;
            if (op.kind == QuantPostOp::Flatten) flatten = true;
        }

        EngineConfig ec;
        ec.ih = cur_h;
        ec.iw = cur_w;
        ec.oh = conv_out_dim(cur_h, st.conv.kernel, st.conv.stride, st.conv.pad);
        ec.ow = conv_out_dim(cur_w, st.conv.kernel, st.conv.stride, st.conv.pad);
        ec.ic = cur_c;
        ec.oc = st.conv.out_channels;
        ec.kernel = st.conv.kernel;
        ec.stride = st.conv.stride;
        ec.pad = st.conv.pad;
        ec.n_pe = n_pe;
        ec.first_layer = first_conv;
        first_conv = false;
        ec.zp_in = st.in_q.zero_point;
        ec.weight = st.weight;
        ec.bias = st.bias;
        ec.relu = relu; // commutes with max pooling, applied at emission
        ec.requant_output = pools.empty();
        ec.requant_mult = st.requant_mult;
        ec.zp_out = st.out_q.zero_point;
        CceOutput co = simulate_cce(ec, cur, hw);

        EngineReport er;
        er.station = int(s);
        er.engine = "cce";
        er.cycles = co.cycles;
        er.input_load_cycles = co.input_load_cycles;
        er.compute_cycles = co.compute_cycles;
        er.buffer_cycles = co.buffer_cycles;
        er.folds = co.folds;
        er.n_pe = n_pe;
        er.fold_cycles = co.fold_cycles;
        rep.engines.push_back(er);

        int map_c = ec.oc, map_h = ec.oh, map_w = ec.ow;
        std::vector<int32_t> acc = std::move(co.acc_stream);
        std::vector<int8_t> bytes = std::move(co.stream);
        for (size_t pi = 0; pi < pools.size(); ++pi) {
            MceConfig mc;
            mc.channels = map_c;
            mc.ih = map_h;
            mc.iw = map_w;
            mc.kernel = pools[pi]->pool.kernel;
            mc.stride = pools[pi]->pool.stride;
            mc.pad = pools[pi]->pool.pad;
            mc.n_pe = n_pe;
            mc.requant_output = pi + 1 == pools.size();
            mc.requant_mult = st.requant_mult;
            mc.zp_out = st.out_q.zero_point;
            MceOutput mo = simulate_mce(mc, acc, hw);
            EngineReport mr;
            mr.station = int(s);
            mr.engine = "mce";
            mr.cycles = mo.cycles;
            mr.folds = mo.folds;
            mr.n_pe = n_pe;
            rep.engines.push_back(mr);
            map_h = mo.oh;
            map_w = mo.ow;
            acc = std::move(mo.acc_stream);
            bytes = std::move(mo.stream);
        }

        cur = repack_to_planar(bytes, map_c, map_h * map_w, n_pe);
        cur_c = map_c;
        cur_h = map_h;
        cur_w = map_w;
        if (flatten) {
            cur_c = map_c * map_h * map_w;
            cur_h = cur_w = 1;
        }
    }

    for (const EngineReport& er : rep.engines) {
        rep.stage_sum_cycles += er.cycles;
        rep.stage_max_cycles = std::max(rep.stage_max_cycles, er.cycles);
    }
    rep.total_cycles = rep.stage_sum_cycles;
    return rep;
}

// ---------------------------------------------------------------------------
// Report rendering.

inline std::string sim_report_csv(const SimReport& rep) {
    std::string out = "station,engine,n_pe,folds,input_load,compute,buffer,cycles,model\n";
    for (const EngineReport& e : rep.engines)
        out += std::to_string(e.station) + "," + e.engine + "," +
               std::to_string(e.n_pe) + "," + std::to_string(e.folds) + "," +
               std::to_string(e.input_load_cycles) + "," +
               std::to_string(e.compute_cycles) + "," +
               std::to_string(e.buffer_cycles) + "," + std::to_string(e.cycles) +
               "," + (e.analytical ? "analytical" : "plumbing") + "\n";
    out += "total,,,,,,," + std::to_string(rep.total_cycles) + ",\n";
    return out;
}

inline std::string sim_report_table(const SimReport& rep, bool trace = false) {
    char buf[160];
    std::string out;
    std::snprintf(buf, sizeof(buf), "%-8s %-5s %5s %6s %12s %12s %10s %12s\n",
                  "station", "eng", "n_pe", "folds", "input_load", "compute",
                  "buffer", "cycles");
    out += buf;
    for (const EngineReport& e : rep.engines) {
        std::snprintf(buf, sizeof(buf), "%-8d %-5s %5d %6lld %12lld %12lld %10lld %12lld%s\n",
                      e.station, e.engine.c_str(), e.n_pe, (long long)e.folds,
                      (long long)e.input_load_cycles, (long long)e.compute_cycles,
                      (long long)e.buffer_cycles, (long long)e.cycles,
                      e.analytical ? "" : "  (plumbing)");
        out += buf;
        if (trace)
            for (size_t f = 0; f < e.fold_cycles.size(); ++f) {
                std::snprintf(buf, sizeof(buf), "  fold %-3zu %lld cycles\n", f,
                              (long long)e.fold_cycles[f]);
                out += buf;
            }
    }
    std::snprintf(buf, sizeof(buf), "%s: stage sum %lld, stage max %lld\n",
                  mode_name(rep.mode), (long long)rep.stage_sum_cycles,
                  (long long)rep.stage_max_cycles);
    out += buf;
    return out;
}

} // namespace coda
