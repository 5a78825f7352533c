// SPDX-License-Identifier: Apache-2.0
#include "moec/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "moec/error.hpp"
#include "moec/rng.hpp"

namespace moec {

namespace {

constexpr std::uint64_t kSaltEvalMc = 0x65766d63ULL;  // general-domain eval stream
constexpr std::uint64_t kSaltEvalGen = 0x6576676eULL; // code-domain eval stream

double parse_number(const std::string& token, const char* what) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(token, &pos);
    } catch (const std::exception&) {
        throw ArgumentError(std::string(what) + ": cannot parse '" + token + "'");
    }
    if (pos != token.size())
        throw ArgumentError(std::string(what) + ": trailing characters in '" + token + "'");
    return v;
}

std::string format_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

MixtureRatio parse_ratio(const std::string& text) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : text) {
        if (c == ':') {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    parts.push_back(cur);
    if (parts.size() != 3)
        throw ArgumentError("ratio '" + text + "': expected three ':'-separated numbers");
    const double c4 = parse_number(parts[0], "ratio c4");
    const double math = parse_number(parts[1], "ratio math");
    const double code = parse_number(parts[2], "ratio code");
    return make_ratio(c4, math, code);
}

std::string format_ratio(const MixtureRatio& ratio) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g:%.6g:%.6g", ratio.c4, ratio.math, ratio.code);
    return buf;
}

std::vector<MixtureRatio> standard_ratios() {
    static const double table[10][3] = {
        {0.3, 0.3, 0.3},  {0.5, 0.5, 0.0}, {0.5, 0.0, 0.5},  {0.0, 0.5, 0.5}, {0.2, 0.5, 0.3},
        {0.1, 0.8, 0.1},  {0.0, 0.7, 0.3}, {0.2, 0.25, 0.55}, {0.1, 0.1, 0.8}, {0.0, 0.3, 0.7},
    };
    std::vector<MixtureRatio> out;
    out.reserve(10);
    for (const double* r : table) out.push_back(make_ratio(r[0], r[1], r[2]));
    return out;
}

std::string write_mixture_spec(const MixtureSpec& spec) {
    std::ostringstream os;
    os << "c4=" << format_number(spec.ratio.c4) << "\n";
    os << "math=" << format_number(spec.ratio.math) << "\n";
    os << "code=" << format_number(spec.ratio.code) << "\n";
    os << "num_tokens=" << spec.num_tokens << "\n";
    os << "seed=" << spec.seed << "\n";
    return os.str();
}

MixtureSpec parse_mixture_spec(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ArgumentError("mixture spec: malformed line '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    for (const char* key : {"c4", "math", "code", "num_tokens", "seed"})
        if (!kv.count(key))
            throw ArgumentError(std::string("mixture spec: missing key '") + key + "'");
    MixtureSpec spec;
    spec.ratio = make_ratio(parse_number(kv["c4"], "c4"), parse_number(kv["math"], "math"),
                            parse_number(kv["code"], "code"));
    spec.num_tokens = static_cast<std::size_t>(std::stoull(kv["num_tokens"]));
    spec.seed = std::stoull(kv["seed"]);
    return spec;
}

double fidelity_db(double mse) { return -10.0 * std::log10(std::max(mse, 1e-30)); }

std::vector<Vector> mc_eval_tokens(std::size_t d_model, std::size_t num_tokens,
                                   std::uint64_t seed) {
    return build_mixture(make_ratio(1, 0, 0), d_model, num_tokens, derive_seed(seed, kSaltEvalMc))
        .tokens;
}

std::vector<Vector> gen_eval_tokens(std::size_t d_model, std::size_t num_tokens,
                                    std::uint64_t seed) {
    return build_mixture(make_ratio(0, 0, 1), d_model, num_tokens, derive_seed(seed, kSaltEvalGen))
        .tokens;
}

ScoreRow score_model(const ModelSpec& original, const ModelSpec& compressed,
                     const std::vector<Vector>& mc_tokens, const std::vector<Vector>& gen_tokens,
                     const std::string& method, const std::string& label,
                     const ForwardOptions& opts) {
    const FidelityReport fm = fidelity(original, compressed, mc_tokens, opts);
    const FidelityReport fg = fidelity(original, compressed, gen_tokens, opts);
    ScoreRow row;
    row.method = method;
    row.label = label;
    row.mc = fidelity_db(fm.pre_logit_mse);
    row.gen = fidelity_db(fg.pre_logit_mse);
    row.mc_layer_mse = fm.per_layer_mse;
    row.gen_layer_mse = fg.per_layer_mse;
    return row;
}

void mark_frontiers(std::vector<ScoreRow>& rows) {
    std::map<std::string, std::vector<std::size_t>> by_method;
    for (std::size_t i = 0; i < rows.size(); ++i) by_method[rows[i].method].push_back(i);
    for (auto& [method, idx] : by_method) {
        std::vector<ScorePoint> pts;
        pts.reserve(idx.size());
        for (std::size_t i : idx) pts.push_back({rows[i].mc, rows[i].gen, rows[i].label});
        for (std::size_t i : idx) rows[i].on_frontier = false;
        for (std::size_t f : pareto_frontier(pts)) rows[idx[f]].on_frontier = true;
    }
}

std::string write_score_csv(const std::vector<ScoreRow>& rows) {
    const std::size_t layers = rows.empty() ? 0 : rows[0].mc_layer_mse.size();
    std::ostringstream os;
    os << "method,label,mc,gen,on_frontier";
    for (std::size_t l = 0; l < layers; ++l) os << ",mc_mse_layer" << l;
    for (std::size_t l = 0; l < layers; ++l) os << ",gen_mse_layer" << l;
    os << "\n";
    for (const ScoreRow& r : rows) {
        if (r.mc_layer_mse.size() != layers || r.gen_layer_mse.size() != layers)
            throw ArgumentError("score csv: inconsistent per-layer column counts");
        os << r.method << ',' << r.label << ',' << format_number(r.mc) << ','
           << format_number(r.gen) << ',' << (r.on_frontier ? 1 : 0);
        for (double v : r.mc_layer_mse) os << ',' << format_number(v);
        for (double v : r.gen_layer_mse) os << ',' << format_number(v);
        os << "\n";
    }
    return os.str();
}

std::vector<ScoreRow> parse_score_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line)) throw ArgumentError("score csv: empty input");
    std::vector<std::string> header;
    {
        std::istringstream hs(line);
        std::string cell;
        while (std::getline(hs, cell, ',')) header.push_back(cell);
    }
    if (header.size() < 5 || header[0] != "method" || header[1] != "label" || header[2] != "mc" ||
        header[3] != "gen" || header[4] != "on_frontier")
        throw ArgumentError("score csv: unexpected header");
    if ((header.size() - 5) % 2 != 0) throw ArgumentError("score csv: odd per-layer column count");
    const std::size_t layers = (header.size() - 5) / 2;

    std::vector<ScoreRow> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (cells.size() != header.size())
            throw ArgumentError("score csv: row has " + std::to_string(cells.size()) +
                                " cells, expected " + std::to_string(header.size()));
        ScoreRow r;
        r.method = cells[0];
        r.label = cells[1];
        r.mc = parse_number(cells[2], "mc");
        r.gen = parse_number(cells[3], "gen");
        r.on_frontier = cells[4] == "1";
        for (std::size_t l = 0; l < layers; ++l)
            r.mc_layer_mse.push_back(parse_number(cells[5 + l], "mc layer mse"));
        for (std::size_t l = 0; l < layers; ++l)
            r.gen_layer_mse.push_back(parse_number(cells[5 + layers + l], "gen layer mse"));
        rows.push_back(std::move(r));
    }
    return rows;
}

CompressionConfig method_defaults(CompressionConfig base, CompressMethod method) {
    base.method = method;
    if (method == CompressMethod::cluster) {
        base.merge_weights = MergeWeightKind::freq;
        base.alignment = AlignmentMode::act;
    }
    return base;
}

std::vector<ScoreRow> run_sweep(const ModelSpec& model, const SweepOptions& opts) {
    if (opts.methods.empty()) throw ArgumentError("sweep: no methods");
    if (opts.ratios.empty()) throw ArgumentError("sweep: no ratios");
    const std::vector<Vector> mc_tokens = mc_eval_tokens(model.d_model, opts.eval_tokens, opts.seed);
    const std::vector<Vector> gen_tokens =
        gen_eval_tokens(model.d_model, opts.eval_tokens, opts.seed);
    const ForwardOptions fopts{opts.base.renormalize_topk};

    std::vector<ScoreRow> rows;
    for (CompressMethod method : opts.methods) {
        const CompressionConfig cfg = method_defaults(opts.base, method);
        for (const MixtureRatio& ratio : opts.ratios) {
            const CalibrationSet calib =
                build_mixture(ratio, model.d_model, opts.calib_tokens, opts.seed);
            const ModelSpec compressed = compress_model(model, calib.tokens, cfg);
            rows.push_back(score_model(model, compressed, mc_tokens, gen_tokens,
                                       method_name(method), format_ratio(ratio), fopts));
        }
    }
    mark_frontiers(rows);
    return rows;
}

std::string write_report(const std::vector<ScoreRow>& rows) {
    if (rows.empty()) throw ArgumentError("report: no rows");
    std::vector<ScorePoint> all;
    all.reserve(rows.size());
    for (const ScoreRow& r : rows) all.push_back({r.mc, r.gen, r.label});
    const auto [ref_x, ref_y] = default_reference(all);

    // Group by method, preserving first-appearance order.
    std::vector<std::string> order;
    std::map<std::string, std::vector<std::size_t>> by_method;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (!by_method.count(rows[i].method)) order.push_back(rows[i].method);
        by_method[rows[i].method].push_back(i);
    }

    std::ostringstream os;
    os << "reference " << format_number(ref_x) << " " << format_number(ref_y) << "\n";
    for (const std::string& method : order) {
        const std::vector<std::size_t>& idx = by_method[method];
        std::vector<ScorePoint> pts;
        std::vector<MixtureRatio> mixtures;
        pts.reserve(idx.size());
        for (std::size_t i : idx) {
            pts.push_back({rows[i].mc, rows[i].gen, rows[i].label});
            mixtures.push_back(parse_ratio(rows[i].label));
        }
        const std::vector<std::size_t> front = pareto_frontier(pts);
        os << "method " << method << "\n";
        os << "  hypervolume " << format_number(hypervolume(pts, ref_x, ref_y)) << "\n";
        os << "  frontier " << front.size() << "/" << pts.size();
        for (std::size_t f : front) os << " " << pts[f].label;
        os << "\n";
        if (pts.size() >= 3) {
            const CorrelationTable table = correlation_table(mixtures, pts);
            os << "  corr";
            for (std::size_t d = 0; d < kNumDomains; ++d)
                for (std::size_t a = 0; a < 2; ++a) {
                    const CorrelationCell& cell = table.domain_vs_score[d][a];
                    os << " " << kDomainNames[d] << (a == 0 ? ":mc=" : ":gen=");
                    if (cell.defined)
                        os << format_number(cell.r);
                    else
                        os << "undef";
                }
            os << " mc:gen=";
            if (table.mc_vs_gen.defined)
                os << format_number(table.mc_vs_gen.r);
            else
                os << "undef";
            os << "\n";
        } else {
            os << "  corr skipped (need >= 3 rows)\n";
        }
    }
    return os.str();
}

} // namespace moec
