// SPDX-License-Identifier: Apache-2.0
// moec: synthesize, calibrate, compress, evaluate, sweep, report.
#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "moec/calibration.hpp"
#include "moec/container.hpp"
#include "moec/error.hpp"
#include "moec/evaluation.hpp"
#include "moec/merging.hpp"
#include "moec/model.hpp"
#include "moec/pipeline.hpp"

namespace {

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw moec::IoError("cannot open '" + path + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::string format_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fidelity_report_text(const moec::ModelSpec& original, const moec::ModelSpec& compressed,
                                 std::size_t eval_tokens, std::uint64_t seed,
                                 const moec::ForwardOptions& opts) {
    const std::vector<moec::Vector> mc = moec::mc_eval_tokens(original.d_model, eval_tokens, seed);
    const std::vector<moec::Vector> gen =
        moec::gen_eval_tokens(original.d_model, eval_tokens, seed);
    const moec::FidelityReport fm = moec::fidelity(original, compressed, mc, opts);
    const moec::FidelityReport fg = moec::fidelity(original, compressed, gen, opts);

    std::vector<moec::Vector> all = mc;
    all.insert(all.end(), gen.begin(), gen.end());
    const double rank_orig = moec::numerical_rank(moec::prelogit_matrix(original, all, opts));
    const double rank_comp = moec::numerical_rank(moec::prelogit_matrix(compressed, all, opts));

    std::ostringstream os;
    os << "moec fidelity report\n";
    os << "eval_tokens " << eval_tokens << " seed " << seed << "\n";
    os << "mc pre_logit_mse " << format_g(fm.pre_logit_mse) << " db "
       << format_g(moec::fidelity_db(fm.pre_logit_mse)) << " cosine "
       << format_g(fm.pre_logit_cosine) << "\n";
    os << "gen pre_logit_mse " << format_g(fg.pre_logit_mse) << " db "
       << format_g(moec::fidelity_db(fg.pre_logit_mse)) << " cosine "
       << format_g(fg.pre_logit_cosine) << "\n";
    os << "pre_logit_rank original " << format_g(rank_orig) << " compressed "
       << format_g(rank_comp) << "\n";
    for (const char* tag : {"mc", "gen"}) {
        const moec::FidelityReport& f = tag[0] == 'm' ? fm : fg;
        os << tag << " per_layer_mse";
        for (double v : f.per_layer_mse) os << ' ' << format_g(v);
        os << "\n" << tag << " per_layer_cosine";
        for (double v : f.per_layer_cosine) os << ' ' << format_g(v);
        os << "\n";
    }
    return os.str();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"mixture-of-experts expert-compression toolkit"};
    app.require_subcommand(1);

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "generate a synthetic MoE model");
    std::string synth_out;
    std::size_t s_dmodel = 32, s_dff = 64, s_layers = 2, s_experts = 16, s_topk = 2;
    std::uint64_t s_seed = 1;
    double s_router_scale = 2.0;
    std::size_t s_bases = 0, s_clones = 1;
    double s_noise = 0.0, s_depress = 0.0, s_jitter = 0.0;
    bool s_permute = false, s_specialist = false;
    double s_gain = 2.0, s_row_noise = 0.5;
    std::string s_router_mode = "independent";
    synth->add_option("--out", synth_out, "output model path")->required();
    synth->add_option("--d-model", s_dmodel, "embedding width");
    synth->add_option("--d-ff", s_dff, "expert hidden width");
    synth->add_option("--layers", s_layers, "number of MoE layers");
    synth->add_option("--experts", s_experts, "experts per layer");
    synth->add_option("--top-k", s_topk, "active experts per token");
    synth->add_option("--seed", s_seed, "generator seed");
    synth->add_option("--router-scale", s_router_scale, "router row scale");
    synth->add_option("--bases", s_bases, "base experts for redundancy (0 = none)");
    synth->add_option("--clones", s_clones, "replicas per base (incl. the base)");
    synth->add_option("--noise", s_noise, "clone weight noise scale");
    synth->add_option("--router-mode", s_router_mode, "independent|cold|warm clone routing");
    synth->add_option("--gate-depress", s_depress, "clone gate depression magnitude");
    synth->add_option("--gate-jitter", s_jitter, "clone gate jitter scale");
    synth->add_flag("--permute-hidden", s_permute, "randomly permute clone hidden neurons");
    synth->add_flag("--specialist", s_specialist, "domain-specialist router fixture");
    synth->add_option("--gain", s_gain, "specialist router gain");
    synth->add_option("--row-noise", s_row_noise, "specialist router row noise");

    // ---- calibrate ----
    auto* calibrate = app.add_subcommand("calibrate", "write a calibration mixture spec");
    std::string cal_ratio = "1:1:1", cal_out;
    std::size_t cal_tokens = 256;
    std::uint64_t cal_seed = 1;
    calibrate->add_option("--ratio", cal_ratio, "c4:math:code mixture ratio");
    calibrate->add_option("--num-tokens", cal_tokens, "calibration tokens");
    calibrate->add_option("--seed", cal_seed, "token stream seed");
    calibrate->add_option("--out", cal_out, "output spec path")->required();

    // ---- shared compression flags ----
    struct CompressFlags {
        std::string model, out, mixture, ratio, manifest, report;
        double keep = -1.0;
        std::size_t n_keep = 0, capacity = 0, calib_tokens = 256, eval_tokens = 256;
        std::uint64_t seed = 1;
        std::string method = "ream", merge_weights = "reap", align = "combined",
                    saliency = "reap";
        bool no_sequential = false, dense_capture = false, renormalize = false;
        bool no_gate_sim = false, no_gated_outputs = false, no_pseudo_prune = false;
        CLI::Option* merge_opt = nullptr;
        CLI::Option* align_opt = nullptr;
    };
    auto add_compression_flags = [](CLI::App* cmd, CompressFlags& f) {
        cmd->add_option("--keep", f.keep, "fraction of experts to keep (0,1]");
        cmd->add_option("--n-keep", f.n_keep, "experts to keep per layer");
        cmd->add_option("--capacity", f.capacity, "group capacity (0 = auto)");
        cmd->add_option("--method", f.method, "ream|reap|freq|hcsmoe");
        f.merge_opt = cmd->add_option("--merge-weights", f.merge_weights, "reap|freq|uniform");
        f.align_opt = cmd->add_option("--align", f.align, "none|wt|act|combined");
        cmd->add_option("--saliency", f.saliency, "reap|freq centroid saliency");
        cmd->add_flag("--no-sequential", f.no_sequential, "measure all layers on the original");
        cmd->add_flag("--dense-capture", f.dense_capture, "capture every expert on every token");
        cmd->add_flag("--renormalize-topk", f.renormalize, "renormalize routed weights to sum 1");
        cmd->add_flag("--no-gate-sim", f.no_gate_sim, "drop router-logit similarity");
        cmd->add_flag("--no-gated-outputs", f.no_gated_outputs, "raw output similarity");
        cmd->add_flag("--no-pseudo-prune", f.no_pseudo_prune, "nearest-centroid grouping");
    };
    auto resolve_config = [](const CompressFlags& f, std::size_t num_experts) {
        moec::CompressionConfig base;
        if (f.keep >= 0.0 && f.n_keep > 0)
            throw moec::ArgumentError("use --keep or --n-keep, not both");
        if (f.keep >= 0.0) {
            if (f.keep <= 0.0 || f.keep > 1.0)
                throw moec::ArgumentError("--keep must be in (0, 1]");
            base.n_keep = static_cast<std::size_t>(std::llround(f.keep * double(num_experts)));
            if (base.n_keep < 1) base.n_keep = 1;
            if (base.n_keep > num_experts) base.n_keep = num_experts;
        } else if (f.n_keep > 0) {
            base.n_keep = f.n_keep;
        } else {
            throw moec::ArgumentError("missing --keep or --n-keep");
        }
        base.capacity = f.capacity;
        base.merge_weights = moec::parse_merge_weights(f.merge_weights);
        base.alignment = moec::parse_alignment(f.align);
        base.saliency = f.saliency == "freq" ? moec::SaliencyKind::freq
                                             : (f.saliency == "reap"
                                                    ? moec::SaliencyKind::reap
                                                    : throw moec::ArgumentError(
                                                          "unknown saliency '" + f.saliency + "'"));
        base.sequential = !f.no_sequential;
        base.dense_capture = f.dense_capture;
        base.renormalize_topk = f.renormalize;
        base.use_gate_sim = !f.no_gate_sim;
        base.use_gated_outputs = !f.no_gated_outputs;
        base.pseudo_prune_grouping = !f.no_pseudo_prune;
        // Method defaults apply only where the user did not choose explicitly.
        moec::CompressionConfig cfg = moec::method_defaults(base, moec::parse_method(f.method));
        if (f.merge_opt && f.merge_opt->count() > 0) cfg.merge_weights = base.merge_weights;
        if (f.align_opt && f.align_opt->count() > 0) cfg.alignment = base.alignment;
        return cfg;
    };

    // ---- compress ----
    auto* compress = app.add_subcommand("compress", "compress a model's experts");
    CompressFlags cf;
    compress->add_option("--model", cf.model, "input model path")->required();
    compress->add_option("--out", cf.out, "output model path")->required();
    compress->add_option("--mixture", cf.mixture, "calibration mixture spec file");
    compress->add_option("--ratio", cf.ratio, "inline c4:math:code calibration ratio");
    compress->add_option("--calib-tokens", cf.calib_tokens, "calibration tokens (with --ratio)");
    compress->add_option("--seed", cf.seed, "calibration/eval seed (with --ratio)");
    compress->add_option("--eval-tokens", cf.eval_tokens, "held-out tokens for the report");
    compress->add_option("--manifest", cf.manifest, "provenance manifest path");
    compress->add_option("--report", cf.report, "fidelity report path");
    add_compression_flags(compress, cf);

    // ---- evaluate ----
    auto* evaluate = app.add_subcommand("evaluate", "fidelity of a compressed model");
    std::string ev_model, ev_compressed, ev_out;
    std::size_t ev_tokens = 256;
    std::uint64_t ev_seed = 1;
    bool ev_renorm = false;
    evaluate->add_option("--model", ev_model, "original model path")->required();
    evaluate->add_option("--compressed", ev_compressed, "compressed model path")->required();
    evaluate->add_option("--out", ev_out, "report path (default: stdout)");
    evaluate->add_option("--eval-tokens", ev_tokens, "held-out tokens per domain set");
    evaluate->add_option("--seed", ev_seed, "eval token seed");
    evaluate->add_flag("--renormalize-topk", ev_renorm, "renormalize routed weights to sum 1");

    // ---- sweep ----
    auto* sweep = app.add_subcommand("sweep", "score methods across calibration mixtures");
    CompressFlags sf;
    std::string sw_model, sw_out, sw_methods = "ream";
    std::vector<std::string> sw_extra_ratios;
    bool sw_standard = true;
    sweep->add_option("--model", sw_model, "input model path")->required();
    sweep->add_option("--out", sw_out, "score table path")->required();
    sweep->add_option("--methods", sw_methods, "comma list: ream,reap,freq,hcsmoe");
    sweep->add_option("--add-ratio", sw_extra_ratios, "extra mixture ratios")->expected(-1);
    sweep->add_flag("!--no-standard-ratios", sw_standard, "drop the ten standard mixtures");
    sweep->add_option("--calib-tokens", sf.calib_tokens, "calibration tokens per run");
    sweep->add_option("--eval-tokens", sf.eval_tokens, "held-out tokens per domain set");
    sweep->add_option("--seed", sf.seed, "sweep seed");
    add_compression_flags(sweep, sf);

    // ---- report ----
    auto* report = app.add_subcommand("report", "Pareto/hypervolume/correlations of a table");
    std::string rp_scores, rp_out;
    report->add_option("--scores", rp_scores, "score table path")->required();
    report->add_option("--out", rp_out, "report path (default: stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            moec::ModelSpec model;
            if (s_specialist) {
                const std::array<moec::Vector, moec::kNumDomains> dirs =
                    moec::domain_directions(s_dmodel);
                model = moec::synth_specialist_model(
                    s_dmodel, s_dff, s_layers, s_experts, s_topk,
                    {dirs.begin(), dirs.end()}, s_gain, s_seed, s_row_noise);
            } else {
                moec::RedundancyPlan plan;
                plan.base_experts = s_bases;
                plan.clones_per_base = s_clones;
                plan.noise_scale = s_noise;
                plan.permute_hidden = s_permute;
                plan.gate_depress = s_depress;
                plan.gate_jitter = s_jitter;
                if (s_router_mode == "independent")
                    plan.router_mode = moec::RouterMode::independent;
                else if (s_router_mode == "cold")
                    plan.router_mode = moec::RouterMode::cold_clone;
                else if (s_router_mode == "warm")
                    plan.router_mode = moec::RouterMode::warm_clone;
                else
                    throw moec::ArgumentError("unknown router mode '" + s_router_mode + "'");
                model = moec::synth_model(s_dmodel, s_dff, s_layers, s_experts, s_topk, plan,
                                          s_seed, s_router_scale);
            }
            moec::save_model(model, synth_out);
            std::cout << "wrote " << synth_out << " (" << model.num_layers << " layers, "
                      << model.num_experts() << " experts)\n";
        } else if (calibrate->parsed()) {
            moec::MixtureSpec spec;
            spec.ratio = moec::parse_ratio(cal_ratio);
            spec.num_tokens = cal_tokens;
            spec.seed = cal_seed;
            moec::atomic_write_text(cal_out, moec::write_mixture_spec(spec));
            std::cout << "wrote " << cal_out << "\n";
        } else if (compress->parsed()) {
            const moec::ModelSpec model = moec::load_model(cf.model);
            moec::MixtureSpec spec;
            if (!cf.mixture.empty() && !cf.ratio.empty())
                throw moec::ArgumentError("use --mixture or --ratio, not both");
            if (!cf.mixture.empty()) {
                spec = moec::parse_mixture_spec(read_text(cf.mixture));
            } else if (!cf.ratio.empty()) {
                spec.ratio = moec::parse_ratio(cf.ratio);
                spec.num_tokens = cf.calib_tokens;
                spec.seed = cf.seed;
            } else {
                throw moec::ArgumentError("missing --mixture or --ratio");
            }
            const moec::CompressionConfig cfg = resolve_config(cf, model.num_experts());
            const moec::CalibrationSet calib =
                moec::build_mixture(spec.ratio, model.d_model, spec.num_tokens, spec.seed);
            moec::CompressionProvenance prov;
            const moec::ModelSpec compressed =
                moec::compress_model(model, calib.tokens, cfg, &prov);
            moec::save_model(compressed, cf.out);
            const std::string manifest_path =
                cf.manifest.empty() ? cf.out + ".manifest.txt" : cf.manifest;
            moec::atomic_write_text(manifest_path, moec::write_manifest(prov));
            const std::string report_path = cf.report.empty() ? cf.out + ".report.txt" : cf.report;
            const moec::ForwardOptions opts{cfg.renormalize_topk};
            moec::atomic_write_text(report_path, fidelity_report_text(model, compressed,
                                                                      cf.eval_tokens, spec.seed,
                                                                      opts));
            std::cout << "wrote " << cf.out << " (" << compressed.num_experts() << "/"
                      << model.num_experts() << " experts), " << manifest_path << ", "
                      << report_path << "\n";
        } else if (evaluate->parsed()) {
            const moec::ModelSpec original = moec::load_model(ev_model);
            const moec::ModelSpec compressed = moec::load_model(ev_compressed);
            const moec::ForwardOptions opts{ev_renorm};
            const std::string text =
                fidelity_report_text(original, compressed, ev_tokens, ev_seed, opts);
            if (ev_out.empty())
                std::cout << text;
            else {
                moec::atomic_write_text(ev_out, text);
                std::cout << "wrote " << ev_out << "\n";
            }
        } else if (sweep->parsed()) {
            const moec::ModelSpec model = moec::load_model(sw_model);
            moec::SweepOptions opts;
            std::string token;
            std::istringstream ms(sw_methods);
            while (std::getline(ms, token, ','))
                if (!token.empty()) opts.methods.push_back(moec::parse_method(token));
            if (sw_standard) opts.ratios = moec::standard_ratios();
            for (const std::string& r : sw_extra_ratios)
                opts.ratios.push_back(moec::parse_ratio(r));
            opts.calib_tokens = sf.calib_tokens;
            opts.eval_tokens = sf.eval_tokens;
            opts.seed = sf.seed;
            opts.base = resolve_config(sf, model.num_experts());
            const std::vector<moec::ScoreRow> rows = moec::run_sweep(model, opts);
            moec::atomic_write_text(sw_out, moec::write_score_csv(rows));
            std::cout << "wrote " << sw_out << " (" << rows.size() << " rows)\n";
        } else if (report->parsed()) {
            const std::vector<moec::ScoreRow> rows =
                moec::parse_score_csv(read_text(rp_scores));
            const std::string text = moec::write_report(rows);
            if (rp_out.empty())
                std::cout << text;
            else {
                moec::atomic_write_text(rp_out, text);
                std::cout << "wrote " << rp_out << "\n";
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
