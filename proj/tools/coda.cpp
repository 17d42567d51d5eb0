// coda: train, prune, quantize, estimate, simulate, and generate accelerator
// designs for small robust CNN classifiers.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "coda/accel_sim.hpp"
#include "coda/adversarial.hpp"
#include "coda/dataset.hpp"
#include "coda/designgen.hpp"
#include "coda/model_text.hpp"
#include "coda/parallel.hpp"
#include "coda/perf_model.hpp"
#include "coda/pruning.hpp"
#include "coda/quantization.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int log_level() {
    const char* env = std::getenv("CODA_LOG");
    if (!env) return 1;
    const std::string v = env;
    if (v == "quiet") return 0;
    if (v == "debug") return 2;
    return 1;
}

void info(const std::string& msg) {
    if (log_level() >= 1) std::cout << msg << "\n";
}

// "a/b" fraction syntax for perturbation budgets, plain decimals accepted.
float parse_fraction(const std::string& s) {
    const auto slash = s.find('/');
    try {
        if (slash == std::string::npos) return std::stof(s);
        const float num = std::stof(s.substr(0, slash));
        const float den = std::stof(s.substr(slash + 1));
        if (den == 0.0f) throw coda::ValidationError("fraction with zero denominator");
        return num / den;
    } catch (const std::invalid_argument&) {
        throw coda::ValidationError("cannot parse number '" + s + "'");
    }
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw coda::ValidationError("cannot open for writing: " + path);
    f << content;
}

coda::HwConstants hw_from_config(const json& cfg) {
    coda::HwConstants hw;
    if (!cfg.contains("hw_constants")) return hw;
    const json& h = cfg.at("hw_constants");
    auto get_i = [&](const char* k, int& v) { if (h.contains(k)) v = h.at(k).get<int>(); };
    auto get_d = [&](const char* k, double& v) { if (h.contains(k)) v = h.at(k).get<double>(); };
    get_i("ii_input", hw.ii_input);
    get_i("ii_conv", hw.ii_conv);
    get_i("ii_buffer", hw.ii_buffer);
    get_i("depth_input", hw.depth_input);
    get_i("depth_buffer", hw.depth_buffer);
    get_i("depth_conv", hw.depth_conv);
    get_i("pixel_overhead", hw.pixel_overhead);
    get_i("ii_maxpool", hw.ii_maxpool);
    get_i("depth_maxpool", hw.depth_maxpool);
    get_d("dsp_pack_conv", hw.dsp_pack_conv);
    get_d("dsp_pack_pool", hw.dsp_pack_pool);
    get_i("dsp_overhead_pool", hw.dsp_overhead_pool);
    get_d("clock_hz", hw.clock_hz);
    for (auto it = h.begin(); it != h.end(); ++it) {
        static const std::set<std::string> known{
            "ii_input", "ii_conv", "ii_buffer", "depth_input", "depth_buffer",
            "depth_conv", "pixel_overhead", "ii_maxpool", "depth_maxpool",
            "dsp_pack_conv", "dsp_pack_pool", "dsp_overhead_pool", "clock_hz"};
        if (!known.count(it.key()))
            throw coda::ValidationError("config: unknown hw_constants field '" +
                                        it.key() + "'");
    }
    hw.check();
    return hw;
}

// Flags override config file values: config entries are appended as extra
// tokens only when the flag is absent from the command line.
std::vector<std::string> merge_config_args(const std::vector<std::string>& args,
                                           const json& cfg, const CLI::App* root,
                                           const CLI::App* sub) {
    std::vector<std::string> merged = args;
    if (cfg.is_null()) return merged;
    for (auto it = cfg.begin(); it != cfg.end(); ++it) {
        if (it.key() == "hw_constants") continue;
        const std::string flag = "--" + it.key();
        bool has_option = false;
        for (const CLI::App* scope : {root, sub}) {
            if (!scope) continue;
            for (const CLI::Option* opt : scope->get_options())
                for (const std::string& n : opt->get_lnames())
                    if ("--" + n == flag) has_option = true;
        }
        if (!has_option) continue;
        bool present = false;
        for (const std::string& a : args)
            if (a == flag || a.rfind(flag + "=", 0) == 0) present = true;
        if (present) continue;
        if (it.value().is_boolean()) {
            if (it.value().get<bool>()) merged.push_back(flag);
        } else if (it.value().is_string()) {
            merged.push_back(flag);
            merged.push_back(it.value().get<std::string>());
        } else {
            merged.push_back(flag);
            merged.push_back(it.value().dump());
        }
    }
    return merged;
}

coda::ModelGraph load_trained(const std::string& path) {
    coda::ModelGraph g = coda::load_model(path);
    if (!g.trained)
        throw coda::ValidationError(path + ": model has no trained parameters");
    return g;
}

std::string candidate_path(const std::string& dir, int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "candidate_%03d.cmod", index);
    return (fs::path(dir) / buf).string();
}

} // namespace

int main(int argc, char** argv) {
    std::vector<std::string> raw_args(argv + 1, argv + argc);

    CLI::App app{"model-hardware co-design toolkit for robust CNN inference"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path,
                   "JSON config file; flags override file values")
        ->envname("CODA_CONFIG");
    int threads = 1;
    app.add_option("--threads", threads, "worker cap for attack/eval parallelism");

    // ---- dataset gen ----
    CLI::App* dataset = app.add_subcommand("dataset", "dataset utilities");
    dataset->require_subcommand(1);
    CLI::App* gen = dataset->add_subcommand("gen", "generate a synthetic dataset");
    int g_classes = 4, g_per_class = 64, g_side = 16;
    uint64_t g_seed = 0;
    std::string g_out;
    gen->add_option("--classes", g_classes, "number of classes")->check(CLI::PositiveNumber);
    gen->add_option("--per-class", g_per_class, "images per class");
    gen->add_option("--side", g_side, "image side length");
    gen->add_option("--seed", g_seed, "generation seed");
    gen->add_option("--out", g_out, "output dataset path")->required();

    // ---- train ----
    CLI::App* train = app.add_subcommand("train", "adversarially train a model");
    std::string t_model, t_data, t_out, t_eps = "8/255", t_step = "2/255";
    int t_epochs = 20, t_pgd_steps = 10, t_batch = 16;
    double t_lr = 0.05, t_momentum = 0.9;
    uint64_t t_seed = 1;
    train->add_option("--model", t_model, "model spec (text) or model file")->required();
    train->add_option("--data", t_data, "training dataset")->required();
    train->add_option("--epochs", t_epochs, "training epochs");
    train->add_option("--eps", t_eps, "l-inf budget, fraction syntax a/b allowed");
    train->add_option("--step", t_step, "attack step size");
    train->add_option("--pgd-steps", t_pgd_steps, "attack iterations during training");
    train->add_option("--batch", t_batch, "batch size");
    train->add_option("--lr", t_lr, "learning rate");
    train->add_option("--momentum", t_momentum, "SGD momentum");
    train->add_option("--seed", t_seed, "training seed");
    train->add_option("--out", t_out, "output model path")->required();

    // ---- eval ----
    CLI::App* eval = app.add_subcommand("eval", "evaluate clean and robust accuracy");
    std::string e_model, e_data, e_attack = "pgd20", e_eps = "8/255", e_step = "2/255";
    uint64_t e_seed = 0;
    eval->add_option("--model", e_model)->required();
    eval->add_option("--data", e_data)->required();
    eval->add_option("--attack", e_attack, "pgd20 | pgd10 | none");
    eval->add_option("--eps", e_eps, "l-inf budget");
    eval->add_option("--step", e_step, "attack step size");
    eval->add_option("--seed", e_seed, "attack seed");

    // ---- prune ----
    CLI::App* prune = app.add_subcommand("prune", "hardware-guided structured pruning");
    std::string p_model, p_data, p_objective = "latency", p_saliency = "taylor";
    std::string p_mode = "streaming", p_out, p_eps = "8/255", p_step = "2/255";
    double p_tau = 0.05, p_rho = 0.8;
    int p_pe_max = 16, p_eval_samples = 128, p_saliency_batch = 32;
    uint64_t p_seed = 0;
    prune->add_option("--model", p_model)->required();
    prune->add_option("--data", p_data)->required();
    prune->add_option("--objective", p_objective, "macs | latency | dsp | bram");
    prune->add_option("--saliency", p_saliency, "l1 | l2 | actmean | taylor | random");
    prune->add_option("--tau", p_tau, "robustness drop tolerance");
    prune->add_option("--rho", p_rho, "checkpoint decay factor");
    prune->add_option("--mode", p_mode, "streaming | temporal");
    prune->add_option("--pe-max", p_pe_max, "PE budget: 8|16|32|64");
    prune->add_option("--eval-samples", p_eval_samples, "robustness eval subset size");
    prune->add_option("--saliency-batch", p_saliency_batch, "saliency batch size");
    prune->add_option("--eps", p_eps, "attack budget for robustness eval");
    prune->add_option("--step", p_step, "attack step size");
    prune->add_option("--seed", p_seed, "pruning seed");
    prune->add_option("--out", p_out, "output directory")->required();

    // ---- finetune ----
    CLI::App* finetune = app.add_subcommand("finetune", "adversarially fine-tune a candidate");
    std::string f_candidate, f_data, f_out, f_eps = "8/255", f_step = "2/255";
    int f_epochs = 10, f_batch = 16, f_pgd_steps = 10;
    double f_lr = 0.05;
    uint64_t f_seed = 1;
    finetune->add_option("--candidate", f_candidate, "candidate model file")->required();
    finetune->add_option("--data", f_data)->required();
    finetune->add_option("--epochs", f_epochs);
    finetune->add_option("--lr", f_lr, "base learning rate (fine-tuning uses a tenth)");
    finetune->add_option("--batch", f_batch);
    finetune->add_option("--eps", f_eps);
    finetune->add_option("--step", f_step);
    finetune->add_option("--pgd-steps", f_pgd_steps);
    finetune->add_option("--seed", f_seed);
    finetune->add_option("--out", f_out, "output path (default: overwrite input)");

    // ---- quantize ----
    CLI::App* quantize = app.add_subcommand("quantize", "post-training INT8 quantization");
    std::string q_model, q_calib, q_out;
    quantize->add_option("--model", q_model)->required();
    quantize->add_option("--calib", q_calib, "calibration dataset")->required();
    quantize->add_option("--out", q_out, "output quantized model path")->required();

    // ---- estimate ----
    CLI::App* estimate = app.add_subcommand("estimate", "analytical cost report");
    std::string s_model, s_mode = "streaming", s_csv;
    int s_pe_max = 16;
    estimate->add_option("--model", s_model, "model file or text spec")->required();
    estimate->add_option("--mode", s_mode, "streaming | temporal");
    estimate->add_option("--pe-max", s_pe_max, "PE budget: 8|16|32|64");
    estimate->add_option("--csv", s_csv, "also write the report as CSV");

    // ---- simulate ----
    CLI::App* simulate = app.add_subcommand("simulate", "cycle-level accelerator simulation");
    std::string m_qmodel, m_data, m_mode = "streaming", m_csv;
    int m_index = 0, m_pe_max = 16;
    bool m_check = false, m_trace = false;
    simulate->add_option("--qmodel", m_qmodel)->required();
    simulate->add_option("--data", m_data)->required();
    simulate->add_option("--image-index", m_index);
    simulate->add_option("--mode", m_mode, "streaming | temporal");
    simulate->add_option("--pe-max", m_pe_max, "PE budget: 8|16|32|64");
    simulate->add_flag("--check", m_check,
                       "assert bit-equality with the integer reference and "
                       "cycle-equality with the analytical model");
    simulate->add_flag("--trace", m_trace, "dump per-fold cycle breakdowns");
    simulate->add_option("--csv", m_csv, "also write the report as CSV");

    // ---- generate ----
    CLI::App* generate = app.add_subcommand("generate", "emit accelerator design artifacts");
    std::string d_qmodel, d_out, d_mode = "streaming", d_data;
    int d_pe_max = 16;
    generate->add_option("--qmodel", d_qmodel)->required();
    generate->add_option("--mode", d_mode, "streaming | temporal");
    generate->add_option("--pe-max", d_pe_max, "PE budget: 8|16|32|64");
    generate->add_option("--data", d_data, "optional dataset for INT8 accuracy in the manifest");
    generate->add_option("--out", d_out, "output directory")->required();

    // ---- ablate ----
    CLI::App* ablate = app.add_subcommand("ablate", "ablation studies");
    ablate->require_subcommand(1);
    CLI::App* gvs = ablate->add_subcommand(
        "guided-vs-saliency", "hardware-guided vs saliency-only pruning");
    std::string a_model, a_data, a_out, a_saliency = "taylor", a_mode = "streaming";
    std::string a_eps = "8/255", a_step = "2/255";
    double a_tau = 0.6, a_rho = 0.8;
    int a_pe_max = 16, a_eval_samples = 128, a_saliency_batch = 32;
    uint64_t a_seed = 0;
    gvs->add_option("--model", a_model)->required();
    gvs->add_option("--data", a_data)->required();
    gvs->add_option("--saliency", a_saliency);
    gvs->add_option("--tau", a_tau, "tolerance (deep sweeps need a loose bound)");
    gvs->add_option("--rho", a_rho);
    gvs->add_option("--mode", a_mode);
    gvs->add_option("--pe-max", a_pe_max);
    gvs->add_option("--eval-samples", a_eval_samples);
    gvs->add_option("--saliency-batch", a_saliency_batch);
    gvs->add_option("--eps", a_eps);
    gvs->add_option("--step", a_step);
    gvs->add_option("--seed", a_seed);
    gvs->add_option("--out", a_out, "output CSV path")->required();

    // Load the config file (if any) and merge its values as defaults for the
    // requested subcommand.
    json cfg;
    try {
        for (size_t i = 0; i < raw_args.size(); ++i) {
            if (raw_args[i] == "--config" && i + 1 < raw_args.size())
                config_path = raw_args[i + 1];
            else if (raw_args[i].rfind("--config=", 0) == 0)
                config_path = raw_args[i].substr(9);
        }
        if (!config_path.empty()) {
            std::ifstream f(config_path);
            if (!f) throw coda::ValidationError("cannot open config: " + config_path);
            cfg = json::parse(f);
        }
        const CLI::App* target = nullptr;
        for (const std::string& a : raw_args) {
            if (a.rfind("--", 0) == 0) continue;
            for (CLI::App* sub : app.get_subcommands({})) {
                if (sub->get_name() == a) target = sub;
                if (target)
                    for (CLI::App* nested : sub->get_subcommands({}))
                        for (const std::string& b : raw_args)
                            if (nested->get_name() == b) target = nested;
            }
            if (target) break;
        }
        raw_args = merge_config_args(raw_args, cfg, &app, target);

        std::vector<const char*> argv2;
        argv2.push_back(argv[0]);
        for (const std::string& a : raw_args) argv2.push_back(a.c_str());
        app.parse(int(argv2.size()), argv2.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const coda::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const json::exception& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return 2;
    }

    try {
        coda::set_max_threads(threads);
        const coda::HwConstants hw = hw_from_config(cfg);

        if (gen->parsed()) {
            coda::Dataset d = coda::generate_synthetic(g_classes, g_per_class, g_side,
                                                       g_seed);
            coda::save_dataset(d, g_out);
            info("wrote " + std::to_string(d.size()) + " images (" +
                 std::to_string(g_classes) + " classes, " + std::to_string(g_side) +
                 "x" + std::to_string(g_side) + ") to " + g_out);
        } else if (train->parsed()) {
            coda::ModelGraph g = coda::load_model_any(t_model, t_seed);
            coda::Dataset d = coda::load_dataset(t_data);
            coda::TrainConfig tc;
            tc.epochs = t_epochs;
            tc.batch = t_batch;
            tc.lr = float(t_lr);
            tc.momentum = float(t_momentum);
            tc.seed = t_seed;
            tc.attack.epsilon = parse_fraction(t_eps);
            tc.attack.step = std::min(parse_fraction(t_step), tc.attack.epsilon);
            tc.attack.iters = t_pgd_steps;
            auto metrics = coda::adv_train(g, d, tc);
            for (const auto& m : metrics) {
                char line[96];
                std::snprintf(line, sizeof(line),
                              "epoch %3d  adv_loss %.4f  adv_acc %.4f", m.epoch,
                              double(m.adv_loss), double(m.adv_acc));
                info(line);
            }
            coda::save_model(g, t_out);
            info("wrote trained model to " + t_out);
        } else if (eval->parsed()) {
            coda::ModelGraph g = load_trained(e_model);
            coda::Dataset d = coda::load_dataset(e_data);
            const float clean = coda::eval_clean(g, d);
            std::printf("clean_accuracy %.6f\n", double(clean));
            if (e_attack != "none") {
                coda::AttackConfig ac;
                ac.epsilon = parse_fraction(e_eps);
                ac.step = std::min(parse_fraction(e_step), ac.epsilon);
                ac.iters = e_attack == "pgd10" ? 10 : 20;
                ac.seed = e_seed;
                if (e_attack != "pgd10" && e_attack != "pgd20")
                    throw coda::ValidationError("unknown attack '" + e_attack + "'");
                std::printf("robust_accuracy %.6f\n",
                            double(coda::eval_robust(g, d, ac)));
            }
        } else if (prune->parsed()) {
            coda::ModelGraph g = load_trained(p_model);
            coda::Dataset d = coda::load_dataset(p_data);
            coda::PruneConfig pc;
            pc.objective = coda::parse_objective(p_objective);
            pc.saliency = coda::parse_saliency(p_saliency);
            pc.tolerance = float(p_tau);
            pc.checkpoint_decay = float(p_rho);
            pc.attack.epsilon = parse_fraction(p_eps);
            pc.attack.step = std::min(parse_fraction(p_step), pc.attack.epsilon);
            pc.attack.iters = 20;
            pc.eval_samples = p_eval_samples;
            pc.saliency_batch = p_saliency_batch;
            pc.seed = p_seed;
            pc.policy = {coda::parse_mode(p_mode), p_pe_max};
            pc.hw = hw;
            fs::create_directories(p_out);
            coda::PruneResult res = coda::run_pruning(g, d, pc);
            write_text((fs::path(p_out) / "candidates.csv").string(),
                       coda::prune_manifest_csv(res));
            for (size_t i = 0; i < res.candidates.size(); ++i)
                coda::save_model(res.candidates[i].model,
                                 candidate_path(p_out, int(i)));
            info("pruning stopped: " + res.stop_reason);
            info("saved " + std::to_string(res.candidates.size()) +
                 " candidates (baseline included) to " + p_out);
        } else if (finetune->parsed()) {
            coda::ModelGraph g = load_trained(f_candidate);
            coda::Dataset d = coda::load_dataset(f_data);
            coda::TrainConfig tc;
            tc.epochs = f_epochs;
            tc.batch = f_batch;
            tc.lr = float(f_lr);
            tc.seed = f_seed;
            tc.attack.epsilon = parse_fraction(f_eps);
            tc.attack.step = std::min(parse_fraction(f_step), tc.attack.epsilon);
            tc.attack.iters = f_pgd_steps;
            coda::Candidate cand;
            cand.model = g;
            cand.robustness = coda::eval_robust(g, d, tc.attack.with_iters(20));
            cand.clean_acc = coda::eval_clean(g, d);
            coda::Candidate tuned = coda::fine_tune(cand, d, d, tc, f_epochs);
            std::printf("before: clean %.6f robust %.6f\n", double(cand.clean_acc),
                        double(cand.robustness));
            std::printf("after:  clean %.6f robust %.6f\n", double(tuned.ft_clean_acc),
                        double(tuned.ft_robustness));
            const std::string out = f_out.empty() ? f_candidate : f_out;
            coda::save_model(tuned.model, out);
            info("wrote fine-tuned model to " + out);
        } else if (quantize->parsed()) {
            coda::ModelGraph g = load_trained(q_model);
            coda::Dataset calib = coda::load_dataset(q_calib);
            coda::QuantModel qm = coda::quantize_model(g, calib);
            coda::save_qmodel(qm, q_out);
            info("wrote quantized model (" + std::to_string(qm.stations.size()) +
                 " stations) to " + q_out);
        } else if (estimate->parsed()) {
            coda::ModelGraph g = coda::load_model_any(s_model, 0);
            coda::PEPolicy pol{coda::parse_mode(s_mode), s_pe_max};
            coda::CostReport rep = coda::model_cost(g, pol, hw);
            std::printf("%-6s %-12s %12s %8s %8s %14s\n", "layer", "kind", "cycles",
                        "dsp", "bram", "macs");
            for (const coda::LayerCost& c : rep.layers)
                std::printf("%-6d %-12s %12lld %8lld %8lld %14lld\n", c.layer,
                            c.kind.c_str(), (long long)c.cycles, (long long)c.dsp,
                            (long long)c.bram, (long long)c.macs);
            std::printf("%-6s %-12s %12lld %8lld %8lld %14lld\n", "total", "",
                        (long long)rep.total_cycles, (long long)rep.total_dsp,
                        (long long)rep.total_bram, (long long)rep.total_macs);
            std::printf("latency %.6f ms at %.0f MHz (%s)\n",
                        rep.latency_seconds * 1e3, hw.clock_hz / 1e6,
                        coda::mode_name(pol.mode));
            if (!s_csv.empty()) write_text(s_csv, coda::cost_report_csv(rep));
        } else if (simulate->parsed()) {
            coda::QuantModel qm = coda::load_qmodel(m_qmodel);
            coda::Dataset d = coda::load_dataset(m_data);
            if (m_index < 0 || size_t(m_index) >= d.size())
                throw coda::ValidationError("--image-index out of range");
            coda::PEPolicy pol{coda::parse_mode(m_mode), m_pe_max};
            coda::SimReport rep =
                coda::simulate_model(qm, d.images[size_t(m_index)], pol, hw);
            std::printf("logits:");
            for (float v : rep.logits.data) std::printf(" %.6f", double(v));
            std::printf("\n%s", coda::sim_report_table(rep, m_trace).c_str());
            if (!m_csv.empty()) write_text(m_csv, coda::sim_report_csv(rep));
            if (m_check) {
                coda::Tensor want = coda::quant_infer(qm, d.images[size_t(m_index)]);
                for (size_t i = 0; i < want.data.size(); ++i)
                    if (rep.logits.data[i] != want.data[i])
                        throw coda::NumericError(
                            "simulated logits differ from the integer reference");
                auto records = coda::derive_layer_params(qm, pol);
                coda::CostReport cost = coda::records_cost(records, pol, hw);
                std::vector<int64_t> analytic;
                for (const coda::LayerCost& c : cost.layers)
                    if (c.kind == "conv" || c.kind == "maxpool")
                        analytic.push_back(c.cycles);
                std::vector<int64_t> simulated;
                for (const coda::EngineReport& e : rep.engines)
                    if (e.engine == "cce" || e.engine == "mce")
                        simulated.push_back(e.cycles);
                if (analytic != simulated)
                    throw coda::NumericError(
                        "simulated cycles differ from the analytical model");
                info("check passed: logits bit-exact, cycles match the "
                     "analytical model");
            }
        } else if (generate->parsed()) {
            coda::QuantModel qm = coda::load_qmodel(d_qmodel);
            coda::PEPolicy pol{coda::parse_mode(d_mode), d_pe_max};
            fs::create_directories(d_out);
            auto records = coda::derive_layer_params(qm, pol);
            write_text((fs::path(d_out) / "layer_params.csv").string(),
                       coda::layer_params_csv(records));
            auto blob = coda::export_weight_blob(qm, records);
            coda::ByteWriter bw;
            bw.bytes(blob.data(), blob.size());
            bw.write_file((fs::path(d_out) / "weights.armr").string());
            write_text((fs::path(d_out) / "template.txt").string(),
                       coda::emit_template_text(records));
            coda::CostReport cost = coda::records_cost(records, pol, hw);
            coda::Candidate row;
            row.macs = cost.total_macs;
            row.cycles = cost.total_cycles;
            row.dsp = cost.total_dsp;
            row.bram = cost.total_bram;
            if (!d_data.empty()) {
                coda::Dataset d = coda::load_dataset(d_data);
                size_t agree = 0;
                for (size_t i = 0; i < d.size(); ++i) {
                    coda::Tensor logits = coda::quant_infer(qm, d.images[i]);
                    int best = 0;
                    for (int k = 1; k < int(logits.size()); ++k)
                        if (logits.data[size_t(k)] > logits.data[size_t(best)])
                            best = k;
                    if (best == d.labels[i]) ++agree;
                }
                row.clean_acc = float(agree) / float(d.size());
            }
            write_text((fs::path(d_out) / "manifest.csv").string(),
                       coda::emit_candidate_manifest({row}));
            info("wrote layer_params.csv, weights.armr, template.txt, manifest.csv to " +
                 d_out);
        } else if (gvs->parsed()) {
            coda::ModelGraph g = load_trained(a_model);
            coda::Dataset d = coda::load_dataset(a_data);
            coda::PruneConfig pc;
            pc.objective = coda::Objective::Latency;
            pc.saliency = coda::parse_saliency(a_saliency);
            pc.tolerance = float(a_tau);
            pc.checkpoint_decay = float(a_rho);
            pc.attack.epsilon = parse_fraction(a_eps);
            pc.attack.step = std::min(parse_fraction(a_step), pc.attack.epsilon);
            pc.attack.iters = 20;
            pc.eval_samples = a_eval_samples;
            pc.saliency_batch = a_saliency_batch;
            pc.seed = a_seed;
            pc.policy = {coda::parse_mode(a_mode), a_pe_max};
            pc.hw = hw;
            coda::AblationResult ab = coda::ablate_guided_vs_saliency(g, d, pc);
            write_text(a_out, coda::ablation_csv(ab));
            std::printf("checkpoints %zu, guided wins %d\n", ab.checkpoints.size(),
                        ab.guided_wins);
            info("wrote curves to " + a_out);
        }
        return 0;
    } catch (const coda::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const coda::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
