#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "coda/adversarial.hpp"
#include "coda/perf_model.hpp"

namespace coda {

// ---------------------------------------------------------------------------
// Channel saliency.

enum class SaliencyKind { L1, L2, ActMean, Taylor, Random };

inline SaliencyKind parse_saliency(const std::string& s) {
    if (s == "l1") return SaliencyKind::L1;
    if (s == "l2") return SaliencyKind::L2;
    if (s == "actmean") return SaliencyKind::ActMean;
    if (s == "taylor") return SaliencyKind::Taylor;
    if (s == "random") return SaliencyKind::Random;
    throw ValidationError("unknown saliency '" + s +
                          "' (l1|l2|actmean|taylor|random)");
}

inline const char* saliency_name(SaliencyKind k) {
    switch (k) {
        case SaliencyKind::L1: return "l1";
        case SaliencyKind::L2: return "l2";
        case SaliencyKind::ActMean: return "actmean";
        case SaliencyKind::Taylor: return "taylor";
        default: return "random";
    }
}

// Per-channel importance of every prunable channel.
//   L1 / L2   : norm of the channel's weight slice.
//   ActMean   : mean absolute activation of the channel over the batch.
//   Taylor    : |E[ sum_spatial dL/dz * z ]|, the first-order estimate of the
//               loss change if the channel were removed. Spatial positions
//               are summed per sample before the batch average.
//   Random    : seeded uniform scores.
inline std::map<ChannelId, double> saliency_scores(
    const ModelGraph& g, const Dataset& data, const std::vector<size_t>& batch,
    SaliencyKind kind, uint64_t seed) {
    std::map<ChannelId, double> scores;
    std::vector<int> prunable;
    for (int l = 0; l < g.layer_count(); ++l)
        if (is_prunable_layer(g, l)) prunable.push_back(l);

    switch (kind) {
        case SaliencyKind::L1:
        case SaliencyKind::L2: {
            const bool l2 = kind == SaliencyKind::L2;
            for (int l : prunable) {
                const Tensor& w = g.weight(l);
                const int oc = w.dim(0);
                const int64_t per = w.size() / oc;
                for (int c = 0; c < oc; ++c) {
                    double acc = 0.0;
                    for (int64_t i = 0; i < per; ++i) {
                        const double v = w.data[size_t(c * per + i)];
                        acc += l2 ? v * v : std::abs(v);
                    }
                    scores[{l, c}] = l2 ? std::sqrt(acc) : acc;
                }
            }
            return scores;
        }
        case SaliencyKind::Random: {
            Rng rng(mix_seed(seed, 0x72616e64));
            for (int l : prunable)
                for (int c = 0; c < g.out_channels(l); ++c)
                    scores[{l, c}] = rng.next_double();
            return scores;
        }
        case SaliencyKind::ActMean:
        case SaliencyKind::Taylor:
            break;
    }

    if (batch.empty())
        throw ValidationError("saliency: activation-based scores need a batch");
    for (int l : prunable)
        for (int c = 0; c < g.out_channels(l); ++c) scores[{l, c}] = 0.0;

    for (size_t idx : batch) {
        LayerCache cache;
        Tensor logits = forward(g, data.images[idx], &cache);
        Gradients grads;
        if (kind == SaliencyKind::Taylor) {
            SoftmaxXent sx = softmax_xent(logits, data.labels[idx]);
            grads = backward(g, cache, sx.grad_logits);
        }
        for (int l : prunable) {
            const Tensor& z = cache.outputs[size_t(l)];
            const int oc = g.out_channels(l);
            const int64_t per = z.size() / oc;
            for (int c = 0; c < oc; ++c) {
                double acc = 0.0;
                if (kind == SaliencyKind::ActMean) {
                    for (int64_t i = 0; i < per; ++i)
                        acc += std::abs(double(z.data[size_t(c * per + i)]));
                    acc /= double(per);
                } else {
                    const Tensor& dz = grads.outputs[size_t(l)];
                    for (int64_t i = 0; i < per; ++i)
                        acc += double(dz.data[size_t(c * per + i)]) *
                               double(z.data[size_t(c * per + i)]);
                }
                scores[{l, c}] += acc;
            }
        }
    }
    for (auto& [id, v] : scores) v /= double(batch.size());
    if (kind == SaliencyKind::Taylor)
        for (auto& [id, v] : scores) v = std::abs(v);
    return scores;
}

// Priority: hardware gain over saliency. The stability constant keeps
// zero-saliency channels finite.
inline std::map<ChannelId, double> priority_scores(
    const std::map<ChannelId, double>& gains,
    const std::map<ChannelId, double>& saliencies, double stability_eps) {
    std::map<ChannelId, double> p;
    for (const auto& [id, g] : gains) {
        auto it = saliencies.find(id);
        if (it == saliencies.end())
            throw ValidationError("priority: missing saliency for a channel");
        p[id] = g / (it->second + stability_eps);
    }
    return p;
}

// Ties break toward the lower (layer, channel); map order makes the first
// strictly-greater scan deterministic.
inline ChannelId argmax_priority(const std::map<ChannelId, double>& p) {
    if (p.empty()) throw ValidationError("priority: no channels");
    ChannelId best = p.begin()->first;
    double bestv = p.begin()->second;
    for (const auto& [id, v] : p)
        if (v > bestv) {
            best = id;
            bestv = v;
        }
    return best;
}

// ---------------------------------------------------------------------------
// The pruning loop.

struct PruneConfig {
    Objective objective = Objective::Latency;
    SaliencyKind saliency = SaliencyKind::Taylor;
    float tolerance = 0.05f;       // allowed robustness drop, fraction of base
    float checkpoint_decay = 0.8f; // cost factor between saved candidates
    double stability_eps = 1e-8;
    AttackConfig attack;           // robustness re-evaluation attack (PGD-20)
    int saliency_batch = 32;
    int eval_samples = 128;
    uint64_t seed = 0;
    PEPolicy policy;
    HwConstants hw;
    bool use_hw_gain = true;       // false: saliency-only ablation, gain = 1

    PruneConfig() { attack.iters = 20; }

    void check() const {
        // Zero tolerance is the degenerate stop-on-first-drop configuration.
        if (!(tolerance >= 0.0f && tolerance < 1.0f))
            throw ValidationError("prune: tolerance must be in [0, 1)");
        if (!(checkpoint_decay > 0.0f && checkpoint_decay < 1.0f))
            throw ValidationError("prune: checkpoint decay must be in (0, 1)");
        if (!(stability_eps > 0.0))
            throw ValidationError("prune: stability constant must be positive");
        if (saliency_batch <= 0 || eval_samples <= 0)
            throw ValidationError("prune: batch and eval sizes must be positive");
        attack.check();
        policy.check();
        hw.check();
    }
};

struct Candidate {
    ModelGraph model;
    float robustness = 0.0f; // evaluated before fine-tuning
    float clean_acc = 0.0f;
    int64_t cost = 0;        // objective value
    int step = 0;
    int channels_removed = 0;
    std::vector<ChannelId> removed_log;
    int64_t macs = 0, cycles = 0, dsp = 0, bram = 0;
    bool fine_tuned = false;
    float ft_robustness = 0.0f, ft_clean_acc = 0.0f;
};

struct StepRecord {
    int step = 0;
    ChannelId pruned;
    float robustness = 0.0f;
    float clean_acc = 0.0f;
    int64_t cost = 0;
    int64_t macs = 0, cycles = 0, dsp = 0, bram = 0;
    bool saved = false;
};

struct PruneResult {
    std::vector<Candidate> candidates; // baseline first, costs strictly decreasing
    std::vector<StepRecord> steps;
    float base_robustness = 0.0f;
    int64_t base_cost = 0;
    std::string stop_reason;
};

namespace detail {

inline Dataset subset(const Dataset& d, const std::vector<size_t>& idx) {
    Dataset s;
    s.classes = d.classes;
    s.height = d.height;
    s.width = d.width;
    s.split = d.split;
    s.seed = d.seed;
    for (size_t i : idx) {
        s.images.push_back(d.images[i]);
        s.labels.push_back(d.labels[i]);
    }
    return s;
}

inline std::vector<size_t> seeded_pick(size_t n, size_t count, uint64_t seed) {
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(seed);
    rng.shuffle(idx);
    idx.resize(std::min(count, n));
    return idx;
}

} // namespace detail

// Deterministic per-step saliency batch and score seed; exposed so an
// independent checker can reproduce each step's inputs.
inline std::vector<size_t> saliency_batch_indices(const PruneConfig& cfg,
                                                  size_t dataset_size, int step) {
    return detail::seeded_pick(dataset_size, size_t(cfg.saliency_batch),
                               mix_seed(cfg.seed, 0xba7c0000u + uint64_t(step)));
}

inline uint64_t saliency_step_seed(const PruneConfig& cfg, int step) {
    return mix_seed(cfg.seed, 0x5a110000u + uint64_t(step));
}

inline std::vector<size_t> robustness_eval_indices(const PruneConfig& cfg,
                                                   size_t dataset_size) {
    return detail::seeded_pick(dataset_size, size_t(cfg.eval_samples),
                               mix_seed(cfg.seed, 0xe7a10000u));
}

// Gains of every prunable channel. Dimension-only, so the gain is shared by
// all channels of a layer; the saliency term differentiates within a layer.
inline std::map<ChannelId, double> channel_gains(const ModelGraph& g,
                                                 const PruneConfig& cfg) {
    std::map<ChannelId, double> gains;
    const auto descs = layer_descs(g);
    for (int l = 0; l < g.layer_count(); ++l) {
        if (!is_prunable_layer(g, l) || g.out_channels(l) < 2) continue;
        const double gain =
            cfg.use_hw_gain
                ? double(channel_gain_descs(descs, l, cfg.objective, cfg.policy, cfg.hw))
                : 1.0;
        for (int c = 0; c < g.out_channels(l); ++c) gains[{l, c}] = gain;
    }
    return gains;
}

// One pruning iteration: score, pick, prune. Returns the pruned graph and
// fills `picked`.
inline ModelGraph prune_step(const ModelGraph& g, const Dataset& data,
                             const PruneConfig& cfg, int step, ChannelId& picked) {
    const auto gains = channel_gains(g, cfg);
    if (gains.empty()) throw ValidationError("prune: no prunable channels remain");
    const auto batch = saliency_batch_indices(cfg, data.size(), step);
    const auto sal =
        saliency_scores(g, data, batch, cfg.saliency, saliency_step_seed(cfg, step));
    std::map<ChannelId, double> sal_prunable;
    for (const auto& [id, gain] : gains) {
        (void)gain;
        sal_prunable[id] = sal.at(id);
    }
    picked = argmax_priority(priority_scores(gains, sal_prunable, cfg.stability_eps));
    return prune_channel(g, picked);
}

// Robustness-bounded, hardware-guided structured pruning. Each iteration
// removes the argmax-priority channel, re-evaluates robustness with PGD on a
// fixed held-out subset, and saves a candidate whenever the cost drops below
// the decayed checkpoint threshold. Stops when the robustness drop exceeds
// the tolerance or no prunable channel remains. The baseline model is always
// the first candidate.
inline PruneResult run_pruning(const ModelGraph& initial, const Dataset& data,
                               const PruneConfig& cfg) {
    cfg.check();
    if (!initial.trained)
        throw ValidationError("prune: graph is untrained (train first)");
    if (data.size() == 0) throw ValidationError("prune: empty dataset");

    const Dataset eval_set =
        detail::subset(data, robustness_eval_indices(cfg, data.size()));

    PruneResult res;
    ModelGraph g = initial;
    const float r_base = eval_robust(g, eval_set, cfg.attack);
    CostReport base_cost = model_cost(g, cfg.policy, cfg.hw);
    res.base_robustness = r_base;
    res.base_cost = base_cost.objective(cfg.objective);

    Candidate base;
    base.model = g;
    base.robustness = r_base;
    base.clean_acc = eval_clean(g, eval_set);
    base.cost = res.base_cost;
    base.macs = base_cost.total_macs;
    base.cycles = base_cost.total_cycles;
    base.dsp = base_cost.total_dsp;
    base.bram = base_cost.total_bram;
    res.candidates.push_back(base);

    double next_checkpoint = double(cfg.checkpoint_decay) * double(res.base_cost);
    std::vector<ChannelId> removed;
    for (int step = 1;; ++step) {
        bool any = false;
        for (int l = 0; l < g.layer_count(); ++l)
            if (is_prunable_layer(g, l) && g.out_channels(l) >= 2) any = true;
        if (!any) {
            res.stop_reason = "no prunable channels remain";
            break;
        }
        ChannelId picked;
        g = prune_step(g, data, cfg, step, picked);
        removed.push_back(picked);

        const float r_cur = eval_robust(g, eval_set, cfg.attack);
        const float clean_cur = eval_clean(g, eval_set);
        const CostReport cost = model_cost(g, cfg.policy, cfg.hw);
        const int64_t o_cur = cost.objective(cfg.objective);

        StepRecord rec;
        rec.step = step;
        rec.pruned = picked;
        rec.robustness = r_cur;
        rec.clean_acc = clean_cur;
        rec.cost = o_cur;
        rec.macs = cost.total_macs;
        rec.cycles = cost.total_cycles;
        rec.dsp = cost.total_dsp;
        rec.bram = cost.total_bram;

        if (r_base - r_cur > cfg.tolerance * r_base) {
            res.steps.push_back(rec);
            res.stop_reason = "robustness tolerance exceeded";
            break;
        }
        if (double(o_cur) <= next_checkpoint) {
            Candidate cand;
            cand.model = g;
            cand.robustness = r_cur;
            cand.clean_acc = clean_cur;
            cand.cost = o_cur;
            cand.step = step;
            cand.channels_removed = int(removed.size());
            cand.removed_log = removed;
            cand.macs = cost.total_macs;
            cand.cycles = cost.total_cycles;
            cand.dsp = cost.total_dsp;
            cand.bram = cost.total_bram;
            res.candidates.push_back(std::move(cand));
            next_checkpoint = double(cfg.checkpoint_decay) * double(o_cur);
            rec.saved = true;
        }
        res.steps.push_back(rec);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Fine-tuning: a few epochs of the same adversarial training at a tenth of
// the base learning rate. Pre-fine-tune metrics stay on the candidate; the
// refreshed ones land in the ft_ fields.
inline Candidate fine_tune(const Candidate& cand, const Dataset& train,
                           const Dataset& eval_set, const TrainConfig& base_cfg,
                           int epochs = 10) {
    Candidate out = cand;
    TrainConfig ft = base_cfg;
    ft.epochs = epochs;
    ft.lr = base_cfg.lr / 10.0f;
    adv_train(out.model, train, ft);
    out.fine_tuned = true;
    out.ft_robustness = eval_robust(out.model, eval_set, base_cfg.attack.with_iters(20));
    out.ft_clean_acc = eval_clean(out.model, eval_set);
    return out;
}

// ---------------------------------------------------------------------------
// Pareto filtering over (robustness up, cost down).

inline bool dominates(const Candidate& a, const Candidate& b) {
    return a.robustness >= b.robustness && a.cost <= b.cost &&
           (a.robustness > b.robustness || a.cost < b.cost);
}

inline std::vector<Candidate> pareto_filter(const std::vector<Candidate>& cands) {
    std::vector<Candidate> out;
    for (size_t i = 0; i < cands.size(); ++i) {
        bool dominated = false;
        for (size_t j = 0; j < cands.size(); ++j)
            if (j != i && dominates(cands[j], cands[i])) dominated = true;
        if (!dominated) out.push_back(cands[i]);
    }
    return out;
}

inline std::vector<bool> pareto_flags(const std::vector<Candidate>& cands) {
    std::vector<bool> flags(cands.size(), true);
    for (size_t i = 0; i < cands.size(); ++i)
        for (size_t j = 0; j < cands.size(); ++j)
            if (j != i && dominates(cands[j], cands[i])) flags[i] = false;
    return flags;
}

// ---------------------------------------------------------------------------
// Candidate manifest: step, channels_removed, clean_acc, robustness, macs,
// est_cycles, est_dsp, est_bram, pareto_flag.

inline std::string prune_manifest_csv(const PruneResult& res) {
    const auto flags = pareto_flags(res.candidates);
    std::string out =
        "step,channels_removed,clean_acc,robustness,macs,est_cycles,est_dsp,"
        "est_bram,pareto_flag\n";
    char buf[256];
    for (size_t i = 0; i < res.candidates.size(); ++i) {
        const Candidate& c = res.candidates[i];
        std::snprintf(buf, sizeof(buf), "%d,%d,%.6f,%.6f,%lld,%lld,%lld,%lld,%d\n",
                      c.step, c.channels_removed, double(c.clean_acc),
                      double(c.robustness), (long long)c.macs, (long long)c.cycles,
                      (long long)c.dsp, (long long)c.bram, flags[i] ? 1 : 0);
        out += buf;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Hardware-guided vs saliency-only ablation. Both runs share the seed and
// configuration; the unguided run scores priority with a unit gain. Curves
// are compared at matched cost checkpoints.

struct AblationCheckpoint {
    double cost_fraction = 0.0;
    float guided_r = 0.0f;
    float unguided_r = 0.0f;
};

struct AblationResult {
    PruneResult guided;
    PruneResult unguided;
    std::vector<AblationCheckpoint> checkpoints;
    int guided_wins = 0; // checkpoints where guided robustness >= unguided
};

namespace detail {

// Robustness at the first step whose cost is at or below the target; the
// baseline counts as step 0.
inline bool robustness_at_cost(const PruneResult& res, double target, float& r) {
    if (double(res.base_cost) <= target) {
        r = res.base_robustness;
        return true;
    }
    for (const StepRecord& s : res.steps)
        if (double(s.cost) <= target) {
            r = s.robustness;
            return true;
        }
    return false;
}

} // namespace detail

inline AblationResult ablate_guided_vs_saliency(const ModelGraph& g,
                                                const Dataset& data,
                                                PruneConfig cfg) {
    AblationResult res;
    cfg.use_hw_gain = true;
    res.guided = run_pruning(g, data, cfg);
    cfg.use_hw_gain = false;
    res.unguided = run_pruning(g, data, cfg);

    const double base = double(res.guided.base_cost);
    for (double frac = 0.95; frac >= 0.05; frac -= 0.05) {
        float rg = 0.0f, ru = 0.0f;
        if (!detail::robustness_at_cost(res.guided, frac * base, rg)) continue;
        if (!detail::robustness_at_cost(res.unguided, frac * base, ru)) continue;
        if (frac >= 0.95 - 1e-9) continue; // both at baseline, uninformative
        res.checkpoints.push_back({frac, rg, ru});
        if (rg >= ru) ++res.guided_wins;
    }
    return res;
}

inline std::string ablation_csv(const AblationResult& res) {
    std::string out = "run,step,channels_removed,cost,robustness,clean_acc\n";
    char buf[192];
    auto emit = [&](const char* tag, const PruneResult& pr) {
        std::snprintf(buf, sizeof(buf), "%s,0,0,%lld,%.6f,%.6f\n", tag,
                      (long long)pr.base_cost, double(pr.base_robustness),
                      double(pr.candidates.front().clean_acc));
        out += buf;
        for (const StepRecord& s : pr.steps) {
            std::snprintf(buf, sizeof(buf), "%s,%d,%d,%lld,%.6f,%.6f\n", tag, s.step,
                          s.step, (long long)s.cost, double(s.robustness),
                          double(s.clean_acc));
            out += buf;
        }
    };
    emit("guided", res.guided);
    emit("saliency_only", res.unguided);
    return out;
}

} // namespace coda
