#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "coda/dataset.hpp"
#include "coda/model.hpp"
#include "coda/parallel.hpp"
#include "coda/rng.hpp"

namespace coda {

// ---------------------------------------------------------------------------
// Projected gradient descent under an l-inf budget, pixels in [0, 1].

struct AttackConfig {
    float epsilon = 8.0f / 255.0f; // l-inf budget in pixel units
    float step = 2.0f / 255.0f;    // per-iteration step in pixel units
    int iters = 10;                // 10 for training, 20 for evaluation
    bool random_start = false;
    uint64_t seed = 0;

    void check() const {
        if (!(epsilon >= 0.0f && epsilon <= 1.0f))
            throw ValidationError("attack: epsilon must be in [0, 1]");
        if (!(step >= 0.0f && step <= epsilon) && !(epsilon == 0.0f && step == 0.0f))
            throw ValidationError("attack: require 0 <= step <= epsilon");
        if (iters < 0) throw ValidationError("attack: iters must be >= 0");
    }

    AttackConfig with_iters(int n) const {
        AttackConfig c = *this;
        c.iters = n;
        return c;
    }
};

namespace detail {

// x + delta, projected onto the valid pixel box. The epsilon ball is enforced
// in delta space; the trailing nextafter steps keep the float-evaluated
// difference inside the budget so the constraint holds exactly, not just up
// to rounding.
inline Tensor apply_perturbation(const Tensor& x, const std::vector<float>& delta,
                                 float epsilon) {
    Tensor out = x;
    for (size_t i = 0; i < out.data.size(); ++i) {
        float v = std::clamp(x.data[i] + delta[i], 0.0f, 1.0f);
        while (v - x.data[i] > epsilon) v = std::nextafter(v, x.data[i]);
        while (x.data[i] - v > epsilon) v = std::nextafter(v, x.data[i]);
        out.data[i] = v;
    }
    return out;
}

} // namespace detail

// Core PGD loop over an arbitrary input-gradient callback. The perturbation
// is clamped to the epsilon ball first and the pixel box second; both are box
// constraints, so the composed clamp is the exact joint projection.
inline Tensor pgd_attack_with_grad(
    const Tensor& x, const AttackConfig& cfg,
    const std::function<Tensor(const Tensor&)>& loss_grad) {
    cfg.check();
    std::vector<float> delta(x.data.size(), 0.0f);
    if (cfg.random_start) {
        Rng rng(mix_seed(cfg.seed, 0xad7e5a41));
        for (float& d : delta) d = rng.uniform(-cfg.epsilon, cfg.epsilon);
    }
    Tensor adv = detail::apply_perturbation(x, delta, cfg.epsilon);
    for (int t = 0; t < cfg.iters; ++t) {
        Tensor grad = loss_grad(adv);
        for (size_t i = 0; i < delta.size(); ++i) {
            const float gv = grad.data[i];
            const float sgn = gv > 0.0f ? 1.0f : (gv < 0.0f ? -1.0f : 0.0f);
            delta[i] = std::clamp(delta[i] + cfg.step * sgn, -cfg.epsilon, cfg.epsilon);
        }
        adv = detail::apply_perturbation(x, delta, cfg.epsilon);
    }
    return adv;
}

inline Tensor pgd_attack(const ModelGraph& g, const Tensor& x, int label,
                         const AttackConfig& cfg) {
    return pgd_attack_with_grad(x, cfg, [&](const Tensor& cur) {
        LayerCache cache;
        Tensor logits = forward(g, cur, &cache);
        SoftmaxXent sx = softmax_xent(logits, label);
        return backward_input(g, cache, sx.grad_logits);
    });
}

// ---------------------------------------------------------------------------
// Evaluation

inline int predict(const ModelGraph& g, const Tensor& x) {
    Tensor logits = forward(g, x);
    int best = 0;
    for (int i = 1; i < int(logits.size()); ++i)
        if (logits.data[size_t(i)] > logits.data[size_t(best)]) best = i;
    return best;
}

inline float eval_clean(const ModelGraph& g, const Dataset& d) {
    if (d.size() == 0) throw ValidationError("eval: empty dataset");
    std::vector<uint8_t> correct(d.size(), 0);
    parallel_for(d.size(), [&](size_t i) {
        correct[i] = predict(g, d.images[i]) == d.labels[i] ? 1 : 0;
    });
    size_t n = 0;
    for (uint8_t c : correct) n += c;
    return float(n) / float(d.size());
}

// Accuracy under PGD. Per-sample attacks are seeded by index, so the result
// is identical for any worker count.
inline float eval_robust(const ModelGraph& g, const Dataset& d,
                         const AttackConfig& cfg) {
    if (d.size() == 0) throw ValidationError("eval: empty dataset");
    cfg.check();
    std::vector<uint8_t> correct(d.size(), 0);
    parallel_for(d.size(), [&](size_t i) {
        AttackConfig per = cfg;
        per.seed = mix_seed(cfg.seed, i);
        Tensor adv = pgd_attack(g, d.images[i], d.labels[i], per);
        correct[i] = predict(g, adv) == d.labels[i] ? 1 : 0;
    });
    size_t n = 0;
    for (uint8_t c : correct) n += c;
    return float(n) / float(d.size());
}

inline float mean_clean_loss(const ModelGraph& g, const Dataset& d) {
    std::vector<float> loss(d.size(), 0.0f);
    parallel_for(d.size(), [&](size_t i) {
        loss[i] = softmax_xent(forward(g, d.images[i]), d.labels[i]).loss;
    });
    double sum = 0.0;
    for (float v : loss) sum += v;
    return float(sum / double(d.size()));
}

inline float mean_adv_loss(const ModelGraph& g, const Dataset& d,
                           const AttackConfig& cfg) {
    std::vector<float> loss(d.size(), 0.0f);
    parallel_for(d.size(), [&](size_t i) {
        AttackConfig per = cfg;
        per.seed = mix_seed(cfg.seed, i);
        Tensor adv = pgd_attack(g, d.images[i], d.labels[i], per);
        loss[i] = softmax_xent(forward(g, adv), d.labels[i]).loss;
    });
    double sum = 0.0;
    for (float v : loss) sum += v;
    return float(sum / double(d.size()));
}

// ---------------------------------------------------------------------------
// Adversarial training: SGD with momentum on PGD examples generated on the
// fly. Deterministic given the seed; adversarial example generation within a
// batch is parallel, gradient accumulation stays in sample order.

struct TrainConfig {
    int epochs = 20;
    int batch = 16;
    float lr = 0.05f;
    float momentum = 0.9f;
    AttackConfig attack;
    uint64_t seed = 1;
};

struct EpochMetrics {
    int epoch = 0;
    float adv_loss = 0.0f;
    float adv_acc = 0.0f;
};

inline std::vector<EpochMetrics> adv_train(ModelGraph& g, const Dataset& train,
                                           const TrainConfig& cfg) {
    if (train.size() == 0) throw ValidationError("train: empty dataset");
    if (g.params.size() != g.layers.size())
        throw ValidationError("train: graph has no parameters");
    cfg.attack.check();

    // Momentum buffers mirror the parameter layout (including empty bias slots).
    auto zero_like = [](const Tensor& t) {
        Tensor r;
        r.shape = t.shape;
        r.data.assign(t.data.size(), 0.0f);
        return r;
    };
    std::vector<LayerParams> velocity(g.params.size());
    for (size_t l = 0; l < g.params.size(); ++l)
        for (const Tensor& t : g.params[l].tensors)
            velocity[l].tensors.push_back(zero_like(t));

    std::vector<size_t> order(train.size());
    std::vector<EpochMetrics> metrics;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(mix_seed(cfg.seed, 0x5f0000 + uint64_t(epoch)));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        size_t correct = 0;
        for (size_t start = 0; start < order.size(); start += size_t(cfg.batch)) {
            const size_t end = std::min(order.size(), start + size_t(cfg.batch));
            const size_t bn = end - start;

            std::vector<Tensor> adv(bn);
            parallel_for(bn, [&](size_t b) {
                const size_t idx = order[start + b];
                AttackConfig per = cfg.attack;
                per.seed = mix_seed(cfg.seed, (uint64_t(epoch) << 32) | idx);
                adv[b] = pgd_attack(g, train.images[idx], train.labels[idx], per);
            });

            std::vector<LayerParams> acc(g.params.size());
            for (size_t l = 0; l < g.params.size(); ++l)
                for (const Tensor& t : g.params[l].tensors)
                    acc[l].tensors.push_back(zero_like(t));

            for (size_t b = 0; b < bn; ++b) {
                const size_t idx = order[start + b];
                LayerCache cache;
                Tensor logits = forward_train(g, adv[b], cache);
                SoftmaxXent sx = softmax_xent(logits, train.labels[idx]);
                loss_sum += sx.loss;
                int pred = 0;
                for (int i = 1; i < int(logits.size()); ++i)
                    if (logits.data[size_t(i)] > logits.data[size_t(pred)]) pred = i;
                if (pred == train.labels[idx]) ++correct;
                Gradients grads = backward(g, cache, sx.grad_logits);
                // Batchnorm gradients cover slots 0..1 only; running stats
                // have no gradient.
                for (size_t l = 0; l < acc.size(); ++l)
                    for (size_t t = 0; t < grads.params[l].tensors.size(); ++t)
                        for (size_t i = 0; i < grads.params[l].tensors[t].data.size(); ++i)
                            acc[l].tensors[t].data[i] +=
                                grads.params[l].tensors[t].data[i];
            }

            const float scale = 1.0f / float(bn);
            for (size_t l = 0; l < g.params.size(); ++l) {
                for (size_t t = 0; t < g.params[l].tensors.size(); ++t) {
                    // Batchnorm running stats (slots 2, 3) are not optimized.
                    if (std::holds_alternative<BatchNormSpec>(g.layers[l]) && t >= 2)
                        continue;
                    auto& theta = g.params[l].tensors[t].data;
                    auto& vel = velocity[l].tensors[t].data;
                    const auto& gsum = acc[l].tensors[t].data;
                    for (size_t i = 0; i < theta.size(); ++i) {
                        vel[i] = cfg.momentum * vel[i] + gsum[i] * scale;
                        theta[i] -= cfg.lr * vel[i];
                    }
                }
            }
        }
        metrics.push_back({epoch, float(loss_sum / double(train.size())),
                           float(correct) / float(train.size())});
    }
    g.trained = true;
    return metrics;
}

} // namespace coda
