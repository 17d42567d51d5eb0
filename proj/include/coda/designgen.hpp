#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "coda/accel_sim.hpp"
#include "coda/pruning.hpp"
#include "coda/quantization.hpp"

namespace coda {

// Automated design generation: derives per-layer template parameters from a
// quantized model, packs weights and quantization data into the accelerator's
// memory layout, and emits the instantiation text handed to the HLS flow.

// ---------------------------------------------------------------------------
// Stage one: template parameters.

struct LayerParamRecord {
    enum Kind { Cce, Mce, Gce } kind = Cce;
    int station = 0;
    // The ten template parameters: IH IW OH OW IC OC K S P PE.
    int ih = 1, iw = 1, oh = 1, ow = 1;
    int ic = 0, oc = 0;
    int k = 1, s = 1, p = 0;
    int pe = 1;

    int folds() const { return int(ceil_div(oc, pe)); }
};

inline std::vector<LayerParamRecord> derive_layer_params(const QuantModel& qm,
                                                         const PEPolicy& policy) {
    policy.check();
    std::vector<LayerParamRecord> records;
    int cur_c = qm.in_c, cur_h = qm.in_h, cur_w = qm.in_w;
    for (size_t s = 0; s < qm.stations.size(); ++s) {
        const QuantStation& st = qm.stations[s];
        if (st.is_conv) {
            LayerParamRecord r;
            r.kind = LayerParamRecord::Cce;
            r.station = int(s);
            r.ih = cur_h;
            r.iw = cur_w;
            r.oh = conv_out_dim(cur_h, st.conv.kernel, st.conv.stride, st.conv.pad);
            r.ow = conv_out_dim(cur_w, st.conv.kernel, st.conv.stride, st.conv.pad);
            r.ic = cur_c;
            r.oc = st.conv.out_channels;
            r.k = st.conv.kernel;
            r.s = st.conv.stride;
            r.p = st.conv.pad;
            r.pe = policy.pe_for(st.conv.out_channels);
            records.push_back(r);
            cur_c = r.oc;
            cur_h = r.oh;
            cur_w = r.ow;
            for (const QuantPostOp& op : st.post_ops) {
                if (op.kind != QuantPostOp::Pool) continue;
                LayerParamRecord m;
                m.kind = LayerParamRecord::Mce;
                m.station = int(s);
                m.ih = cur_h;
                m.iw = cur_w;
                m.oh = conv_out_dim(cur_h, op.pool.kernel, op.pool.stride, op.pool.pad);
                m.ow = conv_out_dim(cur_w, op.pool.kernel, op.pool.stride, op.pool.pad);
                m.ic = m.oc = cur_c;
                m.k = op.pool.kernel;
                m.s = op.pool.stride;
                m.p = op.pool.pad;
                m.pe = r.pe;
                records.push_back(m);
                cur_h = m.oh;
                cur_w = m.ow;
            }
        } else {
            LayerParamRecord r;
            r.kind = LayerParamRecord::Gce;
            r.station = int(s);
            r.ic = st.fc_in;
            r.oc = st.fc_out;
            r.pe = policy.pe_for(st.fc_out);
            records.push_back(r);
            cur_c = st.fc_out;
            cur_h = cur_w = 1;
        }
    }
    return records;
}

// Analytical cost straight from derived records; mirrors model_cost on the
// float graph by construction.
inline CostReport records_cost(const std::vector<LayerParamRecord>& records,
                               const PEPolicy& policy, const HwConstants& hw) {
    std::vector<LayerDesc> descs;
    for (const LayerParamRecord& r : records) {
        LayerDesc d;
        if (r.kind == LayerParamRecord::Cce) {
            d.kind = LayerDesc::Conv;
            d.conv = {r.ic, r.oc, r.k, r.s, r.iw, r.oh, r.ow};
        } else if (r.kind == LayerParamRecord::Mce) {
            d.kind = LayerDesc::Pool;
            d.pool = {r.oc, r.ih, r.ow, r.p};
            d.pool_kernel = r.k;
        } else {
            d.kind = LayerDesc::Fc;
            d.fc_in = r.ic;
            d.fc_out = r.oc;
        }
        descs.push_back(d);
    }
    return cost_from_descs(descs, policy, hw);
}

inline std::string layer_params_csv(const std::vector<LayerParamRecord>& records) {
    std::string out = "station,engine,ih,iw,oh,ow,ic,oc,k,s,p,pe,folds\n";
    char buf[160];
    for (const LayerParamRecord& r : records) {
        const char* eng = r.kind == LayerParamRecord::Cce
                              ? "cce"
                              : (r.kind == LayerParamRecord::Mce ? "mce" : "gce");
        std::snprintf(buf, sizeof(buf), "%d,%s,%d,%d,%d,%d,%d,%d,%d,%d,%d,%d,%d\n",
                      r.station, eng, r.ih, r.iw, r.oh, r.ow, r.ic, r.oc, r.k, r.s,
                      r.p, r.pe, r.folds());
        out += buf;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stage two: the weight blob. Little-endian, magic "ARMR", u32 version=1,
// u32 record count; each record is name (u32 length + bytes), u8 dtype tag
// (0 = int8, 1 = int32, 2 = f32), u8 rank, u32 dims, raw data. Convolution
// weights are laid out fold-major [FOLD][PE][IC][K][K]; rows of inactive PEs
// in the final fold are zero so partial folds stay functionally inert.

struct BlobRecord {
    std::string name;
    uint8_t dtype = 0; // 0 int8, 1 int32, 2 f32
    std::vector<uint32_t> dims;
    std::vector<uint8_t> raw;

    size_t elem_count() const {
        size_t n = 1;
        for (uint32_t d : dims) n *= d;
        return n;
    }
};

namespace detail {

inline void blob_record(ByteWriter& w, const std::string& name, uint8_t dtype,
                        const std::vector<uint32_t>& dims, const void* data,
                        size_t bytes) {
    w.str(name);
    w.u8(dtype);
    w.u8(uint8_t(dims.size()));
    for (uint32_t d : dims) w.u32(d);
    w.bytes(data, bytes);
}

inline void blob_f32(ByteWriter& w, const std::string& name, float v) {
    blob_record(w, name, 2, {1}, nullptr, 0);
    w.f32(v);
}

inline void blob_i32(ByteWriter& w, const std::string& name, int32_t v) {
    blob_record(w, name, 1, {1}, nullptr, 0);
    w.i32(v);
}

} // namespace detail

inline std::vector<uint8_t> export_weight_blob(
    const QuantModel& qm, const std::vector<LayerParamRecord>& records) {
    // PE width per station comes from that station's compute-engine record.
    std::vector<int> pe_of(qm.stations.size(), 1);
    for (const LayerParamRecord& r : records)
        if (r.kind != LayerParamRecord::Mce) pe_of[size_t(r.station)] = r.pe;

    ByteWriter w;
    w.magic("ARMR");
    w.u32(1);

    uint32_t count = 0;
    ByteWriter body;

    if (!qm.stations.empty()) {
        detail::blob_f32(body, "input.scale", qm.input_q.scale);
        ++count;
        detail::blob_i32(body, "input.zero_point", qm.input_q.zero_point);
        ++count;
    }

    for (size_t s = 0; s < qm.stations.size(); ++s) {
        const QuantStation& st = qm.stations[s];
        const std::string prefix = "station" + std::to_string(s) + ".";
        const int pe = pe_of[s];
        const int oc = st.out_channels();
        const int folds = int(ceil_div(oc, pe));
        if (st.is_conv) {
            const int ic = st.in_c, k = st.conv.kernel;
            std::vector<int8_t> packed(size_t(folds) * pe * ic * k * k, 0);
            std::vector<int32_t> bias(size_t(folds) * pe, 0);
            const size_t per_ch = size_t(ic) * k * k;
            for (int f = 0; f < folds; ++f)
                for (int lane = 0; lane < pe; ++lane) {
                    const int ch = f * pe + lane;
                    if (ch >= oc) continue; // zero rows for inactive PEs
                    std::copy_n(st.weight.begin() + long(ch * per_ch), per_ch,
                                packed.begin() + long((size_t(f) * pe + lane) * per_ch));
                    bias[size_t(f) * pe + lane] = st.bias[size_t(ch)];
                }
            detail::blob_record(body, prefix + "weights", 0,
                                {uint32_t(folds), uint32_t(pe), uint32_t(ic),
                                 uint32_t(k), uint32_t(k)},
                                packed.data(), packed.size());
            ++count;
            detail::blob_record(body, prefix + "bias", 1,
                                {uint32_t(folds), uint32_t(pe)}, nullptr, 0);
            for (int32_t b : bias) body.i32(b);
            ++count;
        } else {
            detail::blob_record(body, prefix + "weights", 0,
                                {uint32_t(st.fc_out), uint32_t(st.fc_in)},
                                st.weight.data(), st.weight.size());
            ++count;
            detail::blob_record(body, prefix + "bias", 1, {uint32_t(st.fc_out)},
                                nullptr, 0);
            for (int32_t b : st.bias) body.i32(b);
            ++count;
        }
        detail::blob_f32(body, prefix + "weight_scale", st.weight_scale);
        ++count;
        detail::blob_f32(body, prefix + "in_scale", st.in_q.scale);
        ++count;
        detail::blob_i32(body, prefix + "in_zero_point", st.in_q.zero_point);
        ++count;
        detail::blob_f32(body, prefix + "out_scale", st.out_q.scale);
        ++count;
        detail::blob_i32(body, prefix + "out_zero_point", st.out_q.zero_point);
        ++count;
        detail::blob_f32(body, prefix + "requant_mult", float(st.requant_mult));
        ++count;
    }
    w.u32(count);
    w.bytes(body.data().data(), body.data().size());
    return w.data();
}

inline std::vector<BlobRecord> import_weight_blob(std::vector<uint8_t> bytes) {
    ByteReader r(std::move(bytes));
    r.expect_magic("ARMR", "weight blob");
    if (r.u32() != 1) throw ValidationError("unsupported weight blob version");
    const uint32_t count = r.u32();
    std::vector<BlobRecord> records;
    for (uint32_t i = 0; i < count; ++i) {
        BlobRecord rec;
        rec.name = r.str();
        rec.dtype = r.u8();
        if (rec.dtype > 2) throw ValidationError("weight blob: unknown dtype tag");
        const uint8_t rank = r.u8();
        for (uint8_t d = 0; d < rank; ++d) rec.dims.push_back(r.u32());
        const size_t elem = rec.elem_count();
        const size_t bytes_per = rec.dtype == 0 ? 1 : 4;
        rec.raw.resize(elem * bytes_per);
        r.bytes(rec.raw.data(), rec.raw.size());
        records.push_back(std::move(rec));
    }
    if (!r.at_end()) throw ValidationError("weight blob: trailing bytes");
    return records;
}

// ---------------------------------------------------------------------------
// Instantiation text: one line per engine with the ten template parameters.
// The emitted text is an opaque artifact for the downstream HLS flow; it is
// golden-file tested, never compiled here.

inline std::string emit_template_text(const std::vector<LayerParamRecord>& records) {
    std::string out = "// auto-generated accelerator instantiation\n";
    char buf[256];
    int stream = 0;
    for (const LayerParamRecord& r : records) {
        const char* fn = r.kind == LayerParamRecord::Cce
                             ? "cnn_layer"
                             : (r.kind == LayerParamRecord::Mce ? "maxpool_layer"
                                                                : "gemm_layer");
        if (r.kind == LayerParamRecord::Cce) {
            std::snprintf(buf, sizeof(buf),
                          "%s<%d, %d, %d, %d, %d, %d, %d, %d, %d, %d>"
                          "(s%d, s%d, W%d, B%d);\n",
                          fn, r.ih, r.iw, r.oh, r.ow, r.ic, r.oc, r.k, r.s, r.p,
                          r.pe, stream, stream + 1, r.station, r.station);
        } else if (r.kind == LayerParamRecord::Mce) {
            std::snprintf(buf, sizeof(buf),
                          "%s<%d, %d, %d, %d, %d, %d, %d, %d, %d, %d>(s%d, s%d);\n",
                          fn, r.ih, r.iw, r.oh, r.ow, r.ic, r.oc, r.k, r.s, r.p,
                          r.pe, stream, stream + 1);
        } else {
            std::snprintf(buf, sizeof(buf),
                          "%s<%d, %d, %d, %d, %d, %d, %d, %d, %d, %d>"
                          "(s%d, s%d, W%d, B%d);\n",
                          fn, r.ih, r.iw, r.oh, r.ow, r.ic, r.oc, r.k, r.s, r.p,
                          r.pe, stream, stream + 1, r.station, r.station);
        }
        out += buf;
        ++stream;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Candidate manifest: candidate_id, step, clean_acc, robustness, macs,
// cycles, dsp, bram, pareto. Column order is part of the format.

inline std::string emit_candidate_manifest(const std::vector<Candidate>& cands) {
    const auto flags = pareto_flags(cands);
    std::string out =
        "candidate_id,step,clean_acc,robustness,macs,cycles,dsp,bram,pareto\n";
    char buf[256];
    for (size_t i = 0; i < cands.size(); ++i) {
        const Candidate& c = cands[i];
        std::snprintf(buf, sizeof(buf), "%zu,%d,%.6f,%.6f,%lld,%lld,%lld,%lld,%d\n",
                      i, c.step, double(c.clean_acc), double(c.robustness),
                      (long long)c.macs, (long long)c.cycles, (long long)c.dsp,
                      (long long)c.bram, flags[i] ? 1 : 0);
        out += buf;
    }
    return out;
}

} // namespace coda
