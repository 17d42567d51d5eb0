#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "coda/binio.hpp"
#include "coda/rng.hpp"
#include "coda/tensor.hpp"

namespace coda {

// Single-channel intensity images with pixel values in [0, 1].
struct Dataset {
    std::vector<Tensor> images; // each 1 x H x W
    std::vector<int> labels;
    int classes = 0;
    int height = 0, width = 0;
    std::string split = "";
    uint64_t seed = 0;

    size_t size() const { return images.size(); }
};

// ---------------------------------------------------------------------------
// Synthetic radar-like imagery. Each class is an oriented bright-bar template
// (distinct angle and aspect per class) over faint clutter, multiplied by
// unit-mean exponential speckle and clamped to [0, 1]. Samples get a small
// seeded position jitter so classes are not trivially template-matched.

inline Dataset generate_synthetic(int classes, int per_class, int side,
                                  uint64_t seed, const std::string& split = "train") {
    if (classes < 1) throw ValidationError("generate_synthetic: classes must be >= 1");
    if (per_class < 0) throw ValidationError("generate_synthetic: per_class < 0");
    if (side < 4) throw ValidationError("generate_synthetic: side must be >= 4");
    Dataset d;
    d.classes = classes;
    d.height = d.width = side;
    d.split = split;
    d.seed = seed;
    const uint64_t split_tag = std::hash<std::string>{}(split);
    for (int k = 0; k < classes; ++k) {
        const float angle = 3.14159265358979323846f * float(k) / float(classes);
        const float ca = std::cos(angle), sa = std::sin(angle);
        // Alternate between a long thin bar and a fatter blob so neighboring
        // angles stay distinguishable under speckle.
        const float major = side * (k % 2 == 0 ? 0.30f : 0.22f);
        const float minor = side * (k % 2 == 0 ? 0.06f : 0.11f);
        for (int i = 0; i < per_class; ++i) {
            Rng rng(mix_seed(seed, split_tag ^ (uint64_t(k) << 32 | uint64_t(i))));
            const float cx = side * 0.5f + rng.uniform(-2.0f, 2.0f);
            const float cy = side * 0.5f + rng.uniform(-2.0f, 2.0f);
            const float amp = rng.uniform(0.75f, 1.0f);
            Tensor img = Tensor::zeros({1, side, side});
            for (int y = 0; y < side; ++y) {
                for (int x = 0; x < side; ++x) {
                    const float dx = float(x) - cx;
                    const float dy = float(y) - cy;
                    const float u = ca * dx + sa * dy;
                    const float v = -sa * dx + ca * dy;
                    const float shape = std::exp(-0.5f * (u * u / (major * major) +
                                                          v * v / (minor * minor)));
                    const float mean = 0.06f + amp * shape;
                    const float speckle = rng.exponential();
                    img.at3(0, y, x) = std::clamp(mean * speckle, 0.0f, 1.0f);
                }
            }
            d.images.push_back(std::move(img));
            d.labels.push_back(k);
        }
    }
    return d;
}

// ---------------------------------------------------------------------------
// Binary container: magic "ARDS", u32 version=1, u32 count, u32 classes,
// u32 H, u32 W, then per record a u32 label followed by H*W float32 pixels.
// All fields little-endian.

inline void save_dataset(const Dataset& d, const std::string& path) {
    ByteWriter w;
    w.magic("ARDS");
    w.u32(1);
    w.u32(uint32_t(d.images.size()));
    w.u32(uint32_t(d.classes));
    w.u32(uint32_t(d.height));
    w.u32(uint32_t(d.width));
    for (size_t i = 0; i < d.images.size(); ++i) {
        w.u32(uint32_t(d.labels[i]));
        for (float v : d.images[i].data) w.f32(v);
    }
    w.write_file(path);
}

inline Dataset load_dataset(const std::string& path) {
    ByteReader r = ByteReader::from_file(path);
    r.expect_magic("ARDS", "dataset");
    const uint32_t version = r.u32();
    if (version != 1)
        throw ValidationError("unsupported dataset version " + std::to_string(version));
    Dataset d;
    const uint32_t count = r.u32();
    d.classes = int(r.u32());
    d.height = int(r.u32());
    d.width = int(r.u32());
    d.split = "loaded";
    for (uint32_t i = 0; i < count; ++i) {
        const int label = int(r.u32());
        if (label >= d.classes)
            throw ValidationError("dataset record " + std::to_string(i) +
                                  ": label " + std::to_string(label) +
                                  " >= classes " + std::to_string(d.classes));
        Tensor img = Tensor::zeros({1, d.height, d.width});
        for (float& v : img.data) v = r.f32();
        d.images.push_back(std::move(img));
        d.labels.push_back(label);
    }
    if (!r.at_end()) throw ValidationError("trailing bytes in dataset file");
    return d;
}

} // namespace coda
